//! Classical augmented Lagrangian method and its linearized variant.
//!
//! ALM:
//!
//! ```text
//! x_{k+1} ∈ argmin f(x) + ⟨λ_k, Ax − b⟩ + (σ/2)‖Ax − b‖²
//! λ_{k+1} = λ_k + σ(Ax_{k+1} − b)
//! ```
//!
//! Linearized ALM for `f1 + f2` replaces `f2` by its gradient at `x_k` and adds
//! `½‖x − x_k‖²_P`.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::inner::{InnerConfig, InnerEngine, InnerReport};
use crate::metric::Metric;
use crate::problem::{ProblemSpec, SaddleCertificate, SmoothOracle};
use crate::trace::{drive, IterateState, LoopControl, RunResult, TraceRecord};

#[derive(Debug, Clone, PartialEq)]
pub struct AlmConfig {
    pub sigma: f64,
    pub inner: InnerConfig,
    pub control: LoopControl,
}

impl Default for AlmConfig {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            inner: InnerConfig::default(),
            control: LoopControl::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinAlmConfig {
    pub sigma: f64,
    pub p_metric: Metric,
    pub inner: InnerConfig,
    pub control: LoopControl,
}

impl Default for LinAlmConfig {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            p_metric: Metric::Identity,
            inner: InnerConfig::default(),
            control: LoopControl::default(),
        }
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::invalid("sigma", "must be positive and finite"));
    }
    Ok(())
}

fn dual_step(p: &ProblemSpec, s: &IterateState, x: DVector<f64>, sigma: f64, inner: InnerReport) -> (IterateState, TraceRecord) {
    let lam = &s.lam + p.constraint().residual(&x) * sigma;
    let next = IterateState {
        k: s.k + 1,
        x_prev: s.x.clone(),
        x,
        lam,
        beta: sigma,
    };
    let record = TraceRecord::describe(p, s, &next, inner.iterations, inner.eps_bound);
    (next, record)
}

pub struct Alm<'a> {
    problem: &'a ProblemSpec,
    cfg: &'a AlmConfig,
    engine: InnerEngine,
}

impl<'a> Alm<'a> {
    pub fn new(problem: &'a ProblemSpec, cfg: &'a AlmConfig) -> Result<Self> {
        check_sigma(cfg.sigma)?;
        cfg.control.validate()?;
        let engine = InnerEngine::new(problem, cfg.inner, true)?;
        Ok(Self { problem, cfg, engine })
    }

    pub fn step(&self, s: &IterateState) -> Result<(IterateState, TraceRecord)> {
        let p = self.problem;
        let c = p.constraint();
        c.check_primal(&s.x)?;
        c.check_dual(&s.lam)?;
        let g = c.a().tr_mul(&s.lam);
        let report = self.engine.solve(
            p,
            &Metric::Identity,
            0.0,
            s.x.clone(),
            self.cfg.sigma,
            c.b().clone(),
            g,
            &s.x,
            s.k,
        )?;
        let x = report.x_out.clone();
        Ok(dual_step(p, s, x, self.cfg.sigma, report))
    }
}

pub struct LinAlm<'a> {
    problem: &'a ProblemSpec,
    cfg: &'a LinAlmConfig,
    engine: InnerEngine,
}

impl<'a> LinAlm<'a> {
    /// A prox-only objective is treated as `f2 = 0`.
    pub fn new(problem: &'a ProblemSpec, cfg: &'a LinAlmConfig) -> Result<Self> {
        check_sigma(cfg.sigma)?;
        cfg.p_metric.validate(problem.dim())?;
        cfg.control.validate()?;
        let engine = InnerEngine::new(problem, cfg.inner, false)?;
        Ok(Self { problem, cfg, engine })
    }

    pub fn step(&self, s: &IterateState) -> Result<(IterateState, TraceRecord)> {
        let p = self.problem;
        let c = p.constraint();
        c.check_primal(&s.x)?;
        c.check_dual(&s.lam)?;
        let mut g = c.a().tr_mul(&s.lam);
        if let Some(q) = p.smooth_part() {
            g += q.gradient(&s.x);
        }
        let report = self.engine.solve(
            p,
            &self.cfg.p_metric,
            1.0,
            s.x.clone(),
            self.cfg.sigma,
            c.b().clone(),
            g,
            &s.x,
            s.k,
        )?;
        let x = report.x_out.clone();
        Ok(dual_step(p, s, x, self.cfg.sigma, report))
    }
}

pub fn alm_step(s: &IterateState, p: &ProblemSpec, cfg: &AlmConfig) -> Result<(IterateState, TraceRecord)> {
    Alm::new(p, cfg)?.step(s)
}

pub fn linearized_alm_step(s: &IterateState, p: &ProblemSpec, cfg: &LinAlmConfig) -> Result<(IterateState, TraceRecord)> {
    LinAlm::new(p, cfg)?.step(s)
}

pub fn alm_run(p: &ProblemSpec, cfg: &AlmConfig, x0: DVector<f64>, lam0: DVector<f64>) -> Result<RunResult> {
    alm_run_observed(p, cfg, x0, lam0, None, &mut |_| {})
}

pub fn alm_run_observed(
    p: &ProblemSpec,
    cfg: &AlmConfig,
    x0: DVector<f64>,
    lam0: DVector<f64>,
    certificate: Option<&SaddleCertificate>,
    observer: &mut dyn FnMut(&IterateState),
) -> Result<RunResult> {
    let solver = Alm::new(p, cfg)?;
    let initial = IterateState::initial(x0, lam0, cfg.sigma);
    drive(p, cfg.control, initial, certificate, observer, |s| solver.step(s))
}

pub fn linearized_alm_run(p: &ProblemSpec, cfg: &LinAlmConfig, x0: DVector<f64>, lam0: DVector<f64>) -> Result<RunResult> {
    linearized_alm_run_observed(p, cfg, x0, lam0, None, &mut |_| {})
}

pub fn linearized_alm_run_observed(
    p: &ProblemSpec,
    cfg: &LinAlmConfig,
    x0: DVector<f64>,
    lam0: DVector<f64>,
    certificate: Option<&SaddleCertificate>,
    observer: &mut dyn FnMut(&IterateState),
) -> Result<RunResult> {
    let solver = LinAlm::new(p, cfg)?;
    let initial = IterateState::initial(x0, lam0, cfg.sigma);
    drive(p, cfg.control, initial, certificate, observer, |s| solver.step(s))
}

/// Running average `(1/k)Σ_{j≤k} x_{j+1}` of the iterates produced after the
/// initial point.
#[derive(Debug, Clone, Default)]
pub struct ErgodicAverage {
    sum: Option<DVector<f64>>,
    count: usize,
}

impl ErgodicAverage {
    pub fn push(&mut self, x: &DVector<f64>) {
        match &mut self.sum {
            Some(s) => *s += x,
            None => self.sum = Some(x.clone()),
        }
        self.count += 1;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> Option<DVector<f64>> {
        self.sum.as_ref().map(|s| s / self.count as f64)
    }
}

/// `‖A x̃_k − b‖` for the ergodic average `x̃_k` after each of `iters`
/// linearized ALM iterations.
pub fn linearized_alm_ergodic_feasibility(
    p: &ProblemSpec,
    cfg: &LinAlmConfig,
    x0: DVector<f64>,
    lam0: DVector<f64>,
) -> Result<Vec<f64>> {
    let mut avg = ErgodicAverage::default();
    let mut out = Vec::with_capacity(cfg.control.max_outer);
    let mut first = true;
    linearized_alm_run_observed(p, cfg, x0, lam0, None, &mut |s| {
        if first {
            first = false;
            return;
        }
        avg.push(&s.x);
        out.push(p.constraint().violation(&avg.mean().unwrap()));
    })?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{LinearConstraint, Objective, Quadratic};
    use crate::prox::SeparableProx;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn distance_problem(seed: u64, m: usize, n: usize) -> (ProblemSpec, DVector<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0));
        let b = DVector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0));
        let c = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let p = ProblemSpec::new(
            LinearConstraint::new(a, b).unwrap(),
            Objective::Composite {
                nonsmooth: SeparableProx::Zero,
                smooth: Quadratic::distance_to(&c),
            },
        )
        .unwrap();
        (p, c)
    }

    fn random_state(rng: &mut ChaCha8Rng, k: usize, m: usize, n: usize) -> IterateState {
        IterateState {
            k,
            x: DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0)),
            x_prev: DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0)),
            lam: DVector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0)),
            beta: 1.0,
        }
    }

    #[test]
    fn alm_step_matches_dense_solve() {
        let (p, c) = distance_problem(1, 3, 6);
        let cfg = AlmConfig {
            sigma: 2.5,
            ..AlmConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = random_state(&mut rng, 3, 3, 6);
        let (next, _) = alm_step(&s, &p, &cfg).unwrap();
        let a = p.constraint().a();
        let b = p.constraint().b();
        let mat = DMatrix::identity(6, 6) + a.transpose() * a * 2.5;
        let rhs = &c - a.transpose() * &s.lam + a.transpose() * b * 2.5;
        let expect = mat.lu().solve(&rhs).unwrap();
        assert!((&next.x - &expect).norm() <= 1e-10);
        let lam = &s.lam + (a * &expect - b) * 2.5;
        assert!((next.lam - lam).norm() <= 1e-10);
    }

    #[test]
    fn alm_saddle_is_fixed() {
        let c = LinearConstraint::new(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), DVector::from_vec(vec![2.0])).unwrap();
        let p = ProblemSpec::new(
            c,
            Objective::Composite {
                nonsmooth: SeparableProx::Zero,
                smooth: Quadratic::new(DMatrix::identity(2, 2), DVector::zeros(2), 0.0).unwrap(),
            },
        )
        .unwrap();
        let s = IterateState::initial(DVector::from_vec(vec![1.0, 1.0]), DVector::from_vec(vec![-1.0]), 1.0);
        let (next, _) = alm_step(&s, &p, &AlmConfig::default()).unwrap();
        assert!((&next.x - &s.x).norm() < 1e-12);
        assert!((&next.lam - &s.lam).norm() < 1e-12);
        let (next, _) = linearized_alm_step(&s, &p, &LinAlmConfig::default()).unwrap();
        assert!((&next.x - &s.x).norm() < 1e-12);
        assert!((&next.lam - &s.lam).norm() < 1e-12);
    }

    #[test]
    fn alm_feasibility_nonincreasing_after_burn_in() {
        let (p, _) = distance_problem(7, 4, 9);
        let cfg = AlmConfig {
            sigma: 1.0,
            control: LoopControl {
                max_outer: 60,
                stop_res: f64::INFINITY,
                record_time: false,
            },
            ..AlmConfig::default()
        };
        let res = alm_run(&p, &cfg, DVector::zeros(9), DVector::zeros(4)).unwrap();
        for w in res.trace.windows(2).filter(|w| w[0].k >= 5) {
            assert!(w[1].feasibility <= w[0].feasibility + 1e-12);
        }
    }

    #[test]
    fn linearized_step_matches_dense_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (m, n) = (2, 5);
        let a = DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0));
        let b = DVector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0));
        let h = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let q = h.transpose() * &h;
        let qv = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let tau = 0.4;
        let p = ProblemSpec::new(
            LinearConstraint::new(a.clone(), b.clone()).unwrap(),
            Objective::Composite {
                nonsmooth: SeparableProx::Ridge { tau },
                smooth: Quadratic::new(q.clone(), qv.clone(), 0.0).unwrap(),
            },
        )
        .unwrap();
        let pd = DVector::from_fn(n, |_, _| rng.gen_range(1.0..3.0));
        let cfg = LinAlmConfig {
            sigma: 1.7,
            p_metric: Metric::Diagonal(pd.clone()),
            ..LinAlmConfig::default()
        };
        let s = random_state(&mut rng, 4, m, n);
        let (next, _) = linearized_alm_step(&s, &p, &cfg).unwrap();
        // (τI + σAᵀA + P)x = −(Qx_k + q) − Aᵀλ + σAᵀb + P x_k
        let pm = DMatrix::from_diagonal(&pd);
        let mat = DMatrix::identity(n, n) * tau + a.transpose() * &a * 1.7 + &pm;
        let rhs = -(&q * &s.x + &qv) - a.transpose() * &s.lam + a.transpose() * &b * 1.7 + &pm * &s.x;
        let expect = mat.lu().solve(&rhs).unwrap();
        assert!((next.x - expect).norm() <= 1e-10);
    }

    #[test]
    fn linearized_reduces_to_alm_without_smooth_part() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (m, n) = (2, 4);
        let a = DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0));
        let b = DVector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0));
        let p = ProblemSpec::new(
            LinearConstraint::new(a, b).unwrap(),
            Objective::Composite {
                nonsmooth: SeparableProx::Ridge { tau: 0.9 },
                smooth: Quadratic::zero(n),
            },
        )
        .unwrap();
        let s = random_state(&mut rng, 2, m, n);
        let lin = LinAlmConfig {
            sigma: 1.3,
            p_metric: Metric::ScaledIdentity(0.0),
            ..LinAlmConfig::default()
        };
        let alm = AlmConfig {
            sigma: 1.3,
            ..AlmConfig::default()
        };
        let (a1, _) = linearized_alm_step(&s, &p, &lin).unwrap();
        let (a2, _) = alm_step(&s, &p, &alm).unwrap();
        assert!((a1.x - a2.x).norm() <= 1e-10);
        assert!((a1.lam - a2.lam).norm() <= 1e-10);
    }

    #[test]
    fn ergodic_average_is_running_mean() {
        let mut e = ErgodicAverage::default();
        assert!(e.mean().is_none());
        e.push(&DVector::from_vec(vec![1.0, 0.0]));
        e.push(&DVector::from_vec(vec![3.0, 2.0]));
        assert_eq!(e.mean().unwrap(), DVector::from_vec(vec![2.0, 1.0]));
        assert_eq!(e.count(), 2);
    }

    #[test]
    fn invalid_sigma_rejected() {
        let (p, _) = distance_problem(1, 2, 3);
        let cfg = AlmConfig {
            sigma: 0.0,
            ..AlmConfig::default()
        };
        assert!(alm_run(&p, &cfg, DVector::zeros(3), DVector::zeros(2)).is_err());
    }

    #[test]
    fn ergodic_feasibility_decays_like_one_over_k_on_desk_qp() {
        use crate::experiments::{gen_qp, rate_slope, QpSpec, Scale};
        let (p, _) = gen_qp(&QpSpec::at_scale(Scale::Desk, 0)).unwrap();
        let cfg = LinAlmConfig {
            sigma: 1.0,
            p_metric: Metric::ScaledIdentity(p.smooth_lipschitz()),
            control: LoopControl {
                max_outer: 10_000,
                stop_res: f64::INFINITY,
                record_time: false,
            },
            ..LinAlmConfig::default()
        };
        let f = linearized_alm_ergodic_feasibility(&p, &cfg, DVector::zeros(100), DVector::zeros(50)).unwrap();
        let ks: Vec<f64> = (1..=f.len()).map(|k| k as f64).collect();
        let fit = rate_slope(&ks, &f, 100.0, 10_000.0).unwrap();
        assert!(fit.slope <= -0.8, "slope {}", fit.slope);
    }
}
