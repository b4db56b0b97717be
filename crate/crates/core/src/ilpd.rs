//! Inexact linearized primal-dual method (ILPD) for `min f1(x) + f2(x)`
//! subject to `Ax = b`, with `f2` smooth and constant scaling `β`.
//!
//! Iteration `k` forms two extrapolations
//!
//! ```text
//! x̄_k = x_k + ((k−2)/(k+α−2))(x_k − x_{k−1})
//! x̂_k = x_k + ((k−2)/(k+1/δ−1))(x_k − x_{k−1})
//! ```
//!
//! and solves
//!
//! ```text
//! f1(x) + ((k+α−2)/(2βk))‖x − x̄_k‖²_M + (ϑ_k/2)‖Ax − η_k‖² + ⟨Aᵀλ_k + ∇f2(x̂_k), x⟩
//! ϑ_k = βk(δk − δ + 1),   η_k = (δ(k−1)Ax_k + b)/(δk − δ + 1)
//! ```
//!
//! so `f2` is only ever seen through one gradient per outer iteration.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::inner::{InnerConfig, InnerEngine};
use crate::metric::Metric;
use crate::problem::{lagrangian_unchecked, ProblemSpec, SaddleCertificate, SmoothOracle};
use crate::trace::{drive, IterateState, LoopControl, RunResult, TraceRecord};

#[derive(Debug, Clone, PartialEq)]
pub struct IlpdConfig {
    pub alpha: f64,
    pub delta: f64,
    pub beta: f64,
    pub metric: Metric,
    pub inner: InnerConfig,
    pub control: LoopControl,
    /// Refuse to run unless `λ_min(M) ≥ βL`.
    pub strict: bool,
}

impl Default for IlpdConfig {
    fn default() -> Self {
        Self {
            alpha: 4.0,
            delta: 0.5,
            beta: 1.0,
            metric: Metric::Identity,
            inner: InnerConfig::default(),
            control: LoopControl::default(),
            strict: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IlpdHypotheses {
    /// `2 ≤ 1/δ ≤ α − 1`.
    pub parameters: bool,
    /// `λ_min(M) ≥ βL`.
    pub metric: bool,
}

impl IlpdConfig {
    pub fn validate(&self, p: &ProblemSpec) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("delta", self.delta), ("beta", self.beta)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(name, "must be positive and finite"));
            }
        }
        self.metric.validate(p.dim())?;
        self.inner.validate()?;
        self.control.validate()?;
        if self.strict {
            let lambda_min = self.metric.lambda_min();
            let required = self.beta * p.smooth_lipschitz();
            if lambda_min < required {
                return Err(Error::MetricTooSmall { lambda_min, required });
            }
        }
        Ok(())
    }

    pub fn hypotheses(&self, p: &ProblemSpec) -> IlpdHypotheses {
        let inv = 1.0 / self.delta;
        IlpdHypotheses {
            parameters: 2.0 <= inv && inv <= self.alpha - 1.0,
            metric: self.metric.lambda_min() >= self.beta * p.smooth_lipschitz(),
        }
    }
}

/// `(x̄_k, x̂_k)`; both coefficients are clamped to 0 for `k < 2`.
pub fn extrapolate_pair(s: &IterateState, cfg: &IlpdConfig) -> (DVector<f64>, DVector<f64>) {
    let k = s.k as f64;
    let d = &s.x - &s.x_prev;
    if k <= 2.0 {
        return (s.x.clone(), s.x.clone());
    }
    let bar = (k - 2.0) / (k + cfg.alpha - 2.0);
    let hat = (k - 2.0) / (k + 1.0 / cfg.delta - 1.0);
    (&s.x + &d * bar, &s.x + d * hat)
}

fn smooth_gradient(p: &ProblemSpec, x: &DVector<f64>) -> DVector<f64> {
    match p.smooth_part() {
        Some(q) => q.gradient(x),
        None => DVector::zeros(p.dim()),
    }
}

pub struct Ilpd<'a> {
    problem: &'a ProblemSpec,
    cfg: &'a IlpdConfig,
    engine: InnerEngine,
}

impl<'a> Ilpd<'a> {
    /// A prox-only objective is accepted and treated as `f2 = 0`.
    pub fn new(problem: &'a ProblemSpec, cfg: &'a IlpdConfig) -> Result<Self> {
        cfg.validate(problem)?;
        let engine = InnerEngine::new(problem, cfg.inner, false)?;
        if !engine.is_exact() && cfg.inner.tol0 > 0.0 && !(cfg.metric.lambda_min() > 0.0) {
            return Err(Error::invalid(
                "metric",
                "an inexact inner solve needs a positive definite metric",
            ));
        }
        Ok(Self { problem, cfg, engine })
    }

    pub fn initial_state(&self, x0: DVector<f64>, lam0: DVector<f64>) -> IterateState {
        IterateState::initial(x0, lam0, self.cfg.beta)
    }

    pub fn step(&self, s: &IterateState) -> Result<(IterateState, TraceRecord)> {
        let p = self.problem;
        let cfg = self.cfg;
        let c = p.constraint();
        c.check_primal(&s.x)?;
        c.check_dual(&s.lam)?;
        let kf = s.k as f64;
        let beta = cfg.beta;
        let (x_bar, x_hat) = extrapolate_pair(s, cfg);
        let lead = cfg.delta * (kf - 1.0);
        let scale = 1.0 + lead;
        let vartheta = beta * kf * scale;
        let eta = (c.a() * &s.x * lead + c.b()) / scale;
        let c1 = (kf + cfg.alpha - 2.0) / (beta * kf);
        let g = c.a().tr_mul(&s.lam) + smooth_gradient(p, &x_hat);
        let report = self
            .engine
            .solve(p, &cfg.metric, c1, x_bar.clone(), vartheta, eta, g, &x_bar, s.k)?;
        let x_next = report.x_out;
        let r = c.residual(&x_next) + c.a() * (&x_next - &s.x) * lead;
        let lam = &s.lam + r * (beta * kf);
        let next = IterateState {
            k: s.k + 1,
            x_prev: s.x.clone(),
            x: x_next,
            lam,
            beta,
        };
        let record = TraceRecord::describe(p, s, &next, report.iterations, report.eps_bound);
        Ok((next, record))
    }
}

pub fn ilpd_step(s: &IterateState, p: &ProblemSpec, cfg: &IlpdConfig) -> Result<(IterateState, TraceRecord)> {
    Ilpd::new(p, cfg)?.step(s)
}

pub fn ilpd_run(p: &ProblemSpec, cfg: &IlpdConfig, x0: DVector<f64>, lam0: DVector<f64>) -> Result<RunResult> {
    ilpd_run_observed(p, cfg, x0, lam0, None, &mut |_| {})
}

pub fn ilpd_run_observed(
    p: &ProblemSpec,
    cfg: &IlpdConfig,
    x0: DVector<f64>,
    lam0: DVector<f64>,
    certificate: Option<&SaddleCertificate>,
    observer: &mut dyn FnMut(&IterateState),
) -> Result<RunResult> {
    let solver = Ilpd::new(p, cfg)?;
    let initial = solver.initial_state(x0, lam0);
    drive(p, cfg.control, initial, certificate, observer, |s| solver.step(s))
}

/// ```text
/// E_k = βk(k−1)(L(x_k,λ*) − L(x*,λ*)) + ½‖u_k‖²_M
///       + ((αδ−δ−1)/(2δ²))‖x_k − x*‖²_M + (1/(2δ))‖λ_k − λ*‖²
/// u_k = (1/δ)(x_k − x*) + (k−2)(x_k − x_{k−1})
/// ```
pub fn ilpd_energy(s: &IterateState, cert: &SaddleCertificate, cfg: &IlpdConfig, p: &ProblemSpec) -> f64 {
    let kf = s.k as f64;
    let (alpha, delta) = (cfg.alpha, cfg.delta);
    let gap = lagrangian_unchecked(p, &s.x, &cert.lambda_star) - lagrangian_unchecked(p, &cert.x_star, &cert.lambda_star);
    let dx = &s.x - &cert.x_star;
    let u = &dx / delta + (&s.x - &s.x_prev) * (kf - 2.0);
    cfg.beta * kf * (kf - 1.0) * gap
        + 0.5 * cfg.metric.norm_sq(&u)
        + (alpha * delta - delta - 1.0) / (2.0 * delta * delta) * cfg.metric.norm_sq(&dx)
        + (&s.lam - &cert.lambda_star).norm_squared() / (2.0 * delta)
}

/// Residual of the difference inclusion for a differentiable `f1`:
///
/// ```text
/// M(x_{k+1} − 2x_k + x_{k−1} + ((α−2)/k)(x_{k+1} − x_k) + (2/k)(x_k − x_{k−1}))
///   + β(∇f1(x_{k+1}) + ∇f2(x̂_k) + Aᵀλ_{k+1})
/// ```
///
/// Valid for `k ≥ 2`, where the extrapolation is not clamped.
pub fn inclusion_residual(prev: &IterateState, next: &IterateState, p: &ProblemSpec, cfg: &IlpdConfig) -> Result<f64> {
    let kf = prev.k as f64;
    let second = &next.x - &prev.x * 2.0 + &prev.x_prev
        + (&next.x - &prev.x) * ((cfg.alpha - 2.0) / kf)
        + (&prev.x - &prev.x_prev) * (2.0 / kf);
    let (_, x_hat) = extrapolate_pair(prev, cfg);
    let g1 = p
        .nonsmooth_part()
        .gradient(&next.x)
        .ok_or(Error::Nonsmooth("f1 has no gradient"))?;
    let grad = g1 + smooth_gradient(p, &x_hat) + p.constraint().a().tr_mul(&next.lam);
    Ok((cfg.metric.apply(&second) + grad * cfg.beta).norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fipd::{self, FipdConfig};
    use crate::problem::{LinearConstraint, Objective, Quadratic};
    use crate::prox::SeparableProx;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn state(k: usize, x: &[f64], x_prev: &[f64]) -> IterateState {
        IterateState {
            k,
            x: DVector::from_row_slice(x),
            x_prev: DVector::from_row_slice(x_prev),
            lam: DVector::zeros(1),
            beta: 1.0,
        }
    }

    fn random_qp(seed: u64, m: usize, n: usize, nonsmooth: SeparableProx) -> ProblemSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0));
        let b = DVector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0));
        let h = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let q = h.transpose() * &h + DMatrix::identity(n, n) * 0.5;
        let qv = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        ProblemSpec::new(
            LinearConstraint::new(a, b).unwrap(),
            Objective::Composite {
                nonsmooth,
                smooth: Quadratic::new(q, qv, 0.0).unwrap(),
            },
        )
        .unwrap()
    }

    fn qp_cfg(p: &ProblemSpec) -> IlpdConfig {
        let l = p.smooth_lipschitz();
        let beta = l;
        IlpdConfig {
            alpha: 4.0,
            delta: 0.5,
            beta,
            metric: Metric::ScaledIdentity(beta * l),
            strict: true,
            ..IlpdConfig::default()
        }
    }

    #[test]
    fn extrapolation_examples() {
        let cfg = IlpdConfig::default();
        let s = state(2, &[1.0, 2.0], &[0.0, 5.0]);
        let (bar, hat) = extrapolate_pair(&s, &cfg);
        assert_eq!((bar, hat), (s.x.clone(), s.x.clone()));
        let s = state(1, &[1.0], &[3.0]);
        assert_eq!(extrapolate_pair(&s, &cfg).0, s.x);

        let s = state(4, &[1.0], &[0.0]);
        let (bar, hat) = extrapolate_pair(&s, &cfg);
        assert!((bar[0] - (1.0 + 2.0 / 6.0)).abs() < 1e-15);
        assert!((hat[0] - (1.0 + 2.0 / 5.0)).abs() < 1e-15);

        let eq = IlpdConfig {
            alpha: 5.0,
            delta: 0.25,
            ..IlpdConfig::default()
        };
        for k in 1..30 {
            let s = state(k, &[0.3, -1.0], &[2.0, 1.0]);
            let (bar, hat) = extrapolate_pair(&s, &eq);
            assert!((bar - hat).norm() < 1e-15);
        }
    }

    #[test]
    fn reduces_to_fipd_without_smooth_part() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (m, n) = (2, 4);
        let a = DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0));
        let b = DVector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0));
        let p = ProblemSpec::new(
            LinearConstraint::new(a, b).unwrap(),
            Objective::Composite {
                nonsmooth: SeparableProx::ElasticNet { tau: 0.5 },
                smooth: Quadratic::zero(n),
            },
        )
        .unwrap();
        let metric = Metric::ScaledIdentity(2.0);
        let ic = IlpdConfig {
            alpha: 4.0,
            delta: 0.5,
            beta: 0.8,
            metric: metric.clone(),
            ..IlpdConfig::default()
        };
        let fc = FipdConfig {
            alpha: 4.0,
            delta: 0.5,
            theta: 2.0,
            beta0: 0.8,
            schedule: fipd::BetaSchedule::Constant,
            metric,
            ..FipdConfig::default()
        };
        let ilpd = Ilpd::new(&p, &ic).unwrap();
        let fipd = fipd::Fipd::new(&p, &fc).unwrap();
        let x0 = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let mut si = ilpd.initial_state(x0.clone(), DVector::zeros(m));
        let mut sf = fipd.initial_state(x0, DVector::zeros(m));
        for _ in 0..30 {
            si = ilpd.step(&si).unwrap().0;
            sf = fipd.step(&sf).unwrap().0;
            assert!((&si.x - &sf.x).norm() <= 1e-10);
            assert!((&si.lam - &sf.lam).norm() <= 1e-10);
        }
    }

    #[test]
    fn saddle_point_is_fixed() {
        // min ½‖x‖² + ridge(1)/2... on x1 + x2 = 2: f = ‖x‖², x* = (1,1), λ* = −2
        let c = LinearConstraint::new(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), DVector::from_vec(vec![2.0])).unwrap();
        let p = ProblemSpec::new(
            c,
            Objective::Composite {
                nonsmooth: SeparableProx::Ridge { tau: 1.0 },
                smooth: Quadratic::distance_to(&DVector::zeros(2)),
            },
        )
        .unwrap();
        let cfg = qp_cfg(&p);
        let x = DVector::from_vec(vec![1.0, 1.0]);
        let lam = DVector::from_vec(vec![-2.0]);
        let s = IterateState {
            k: 6,
            x: x.clone(),
            x_prev: x.clone(),
            lam: lam.clone(),
            beta: cfg.beta,
        };
        let (next, _) = ilpd_step(&s, &p, &cfg).unwrap();
        assert!((next.x - x).norm() < 1e-12);
        assert!((next.lam - lam).norm() < 1e-12);
    }

    #[test]
    fn tiny_qp_reaches_kkt_solution() {
        let p = random_qp(9, 3, 6, SeparableProx::Zero);
        // dense KKT reference
        let q = p.smooth_part().unwrap();
        let a = p.constraint().a();
        let (m, n) = (3, 6);
        let mut k = DMatrix::zeros(n + m, n + m);
        k.view_mut((0, 0), (n, n)).copy_from(q.q_mat());
        k.view_mut((0, n), (n, m)).copy_from(&a.transpose());
        k.view_mut((n, 0), (m, n)).copy_from(a);
        let mut rhs = DVector::zeros(n + m);
        rhs.rows_mut(0, n).copy_from(&(-q.q_vec()));
        rhs.rows_mut(n, m).copy_from(p.constraint().b());
        let sol = k.lu().solve(&rhs).unwrap();
        let x_ref = sol.rows(0, n).into_owned();

        let mut cfg = qp_cfg(&p);
        cfg.control = LoopControl {
            max_outer: 2000,
            stop_res: f64::INFINITY,
            record_time: false,
        };
        let res = ilpd_run(&p, &cfg, DVector::zeros(n), DVector::zeros(m)).unwrap();
        assert_eq!(res.trace.len(), 2000);
        assert!(res.trace.last().unwrap().feasibility <= 1e-6);
        assert!((res.final_state.x - x_ref).norm() <= 1e-3);
    }

    #[test]
    fn inclusion_holds_with_exact_solves() {
        let p = random_qp(3, 2, 5, SeparableProx::Ridge { tau: 0.3 });
        let cfg = qp_cfg(&p);
        let solver = Ilpd::new(&p, &cfg).unwrap();
        let mut s = solver.initial_state(DVector::from_element(5, 0.5), DVector::zeros(2));
        for _ in 0..40 {
            let (next, _) = solver.step(&s).unwrap();
            if s.k >= 2 {
                assert!(inclusion_residual(&s, &next, &p, &cfg).unwrap() <= 1e-6);
            }
            s = next;
        }
    }

    #[test]
    fn strict_mode_checks_metric() {
        let p = random_qp(1, 2, 4, SeparableProx::Zero);
        let mut cfg = qp_cfg(&p);
        cfg.metric = Metric::ScaledIdentity(0.5);
        match Ilpd::new(&p, &cfg) {
            Err(Error::MetricTooSmall { lambda_min, required }) => {
                assert_eq!(lambda_min, 0.5);
                let l = p.smooth_lipschitz();
                assert!((required - l * l).abs() < 1e-9 * l * l);
            }
            _ => panic!("expected MetricTooSmall"),
        }
        cfg.strict = false;
        assert!(Ilpd::new(&p, &cfg).is_ok());
        assert!(!cfg.hypotheses(&p).metric);
    }

    #[test]
    fn energy_term_by_term() {
        let p = random_qp(4, 2, 3, SeparableProx::Zero);
        let cert = SaddleCertificate {
            x_star: DVector::from_vec(vec![0.1, -0.2, 0.3]),
            lambda_star: DVector::from_vec(vec![0.5, -1.0]),
        };
        let cfg = IlpdConfig {
            alpha: 5.0,
            delta: 0.4,
            beta: 0.7,
            metric: Metric::Diagonal(DVector::from_vec(vec![1.0, 2.0, 3.0])),
            ..IlpdConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let q = p.smooth_part().unwrap();
        let a = p.constraint().a();
        let b = p.constraint().b();
        for _ in 0..20 {
            let s = IterateState {
                k: rng.gen_range(1..50),
                x: DVector::from_fn(3, |_, _| rng.gen_range(-2.0..2.0)),
                x_prev: DVector::from_fn(3, |_, _| rng.gen_range(-2.0..2.0)),
                lam: DVector::from_fn(2, |_, _| rng.gen_range(-2.0..2.0)),
                beta: 0.7,
            };
            let lag = |x: &DVector<f64>| {
                let mut f = 0.0;
                for i in 0..3 {
                    f += q.q_vec()[i] * x[i];
                    for j in 0..3 {
                        f += 0.5 * x[i] * q.q_mat()[(i, j)] * x[j];
                    }
                }
                for r in 0..2 {
                    let mut ax = -b[r];
                    for j in 0..3 {
                        ax += a[(r, j)] * x[j];
                    }
                    f += cert.lambda_star[r] * ax;
                }
                f
            };
            let k = s.k as f64;
            let w = [1.0, 2.0, 3.0];
            let (mut um, mut dm) = (0.0, 0.0);
            for i in 0..3 {
                let d = s.x[i] - cert.x_star[i];
                let u = d / 0.4 + (k - 2.0) * (s.x[i] - s.x_prev[i]);
                um += w[i] * u * u;
                dm += w[i] * d * d;
            }
            let dl: f64 = (0..2).map(|r| (s.lam[r] - cert.lambda_star[r]).powi(2)).sum();
            let oracle = 0.7 * k * (k - 1.0) * (lag(&s.x) - lag(&cert.x_star))
                + 0.5 * um
                + (5.0 * 0.4 - 0.4 - 1.0) / (2.0 * 0.16) * dm
                + dl / 0.8;
            let got = ilpd_energy(&s, &cert, &cfg, &p);
            assert!((got - oracle).abs() <= 1e-10 * oracle.abs().max(1.0));
        }
        let at_saddle = IterateState {
            k: 7,
            x: cert.x_star.clone(),
            x_prev: cert.x_star.clone(),
            lam: cert.lambda_star.clone(),
            beta: 0.7,
        };
        assert_eq!(ilpd_energy(&at_saddle, &cert, &cfg, &p), 0.0);
    }

    #[test]
    fn cap_binding_run_emits_all_records() {
        let p = random_qp(2, 2, 4, SeparableProx::NonnegIndicator);
        let mut cfg = qp_cfg(&p);
        cfg.control = LoopControl {
            max_outer: 37,
            stop_res: f64::INFINITY,
            record_time: false,
        };
        let a = ilpd_run(&p, &cfg, DVector::zeros(4), DVector::zeros(2)).unwrap();
        let b = ilpd_run(&p, &cfg, DVector::zeros(4), DVector::zeros(2)).unwrap();
        assert_eq!(a.trace.len(), 37);
        assert_eq!(a.trace, b.trace);
    }
}
