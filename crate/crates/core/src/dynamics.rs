//! Numerical integration of the inertial primal-dual dynamic
//!
//! ```text
//! ẍ + (α/t)ẋ = −β(t)(∇f(x) + Aᵀλ) + ε(t)
//! λ̇ = tβ(t)(A(x + δtẋ) − b)
//! ```
//!
//! written as a first-order system in `(x, v = ẋ, λ)` and advanced with the
//! classical fourth-order Runge–Kutta scheme, either at a fixed step or with
//! step-doubling error control.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::problem::{lagrangian_unchecked, ProblemSpec, SaddleCertificate};

const BLOW_UP: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicState {
    pub t: f64,
    pub x: DVector<f64>,
    /// `ẋ(t)`.
    pub v: DVector<f64>,
    pub lam: DVector<f64>,
}

impl DynamicState {
    pub fn at_rest(t: f64, x: DVector<f64>, lam: DVector<f64>) -> Self {
        let n = x.len();
        Self {
            t,
            x,
            v: DVector::zeros(n),
            lam,
        }
    }

    fn pack(&self) -> DVector<f64> {
        let (n, m) = (self.x.len(), self.lam.len());
        let mut y = DVector::zeros(2 * n + m);
        y.rows_mut(0, n).copy_from(&self.x);
        y.rows_mut(n, n).copy_from(&self.v);
        y.rows_mut(2 * n, m).copy_from(&self.lam);
        y
    }

    fn unpack(t: f64, y: &DVector<f64>, n: usize, m: usize) -> Self {
        Self {
            t,
            x: y.rows(0, n).into_owned(),
            v: y.rows(n, n).into_owned(),
            lam: y.rows(2 * n, m).into_owned(),
        }
    }
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
type VectorFn = Arc<dyn Fn(f64) -> DVector<f64> + Send + Sync>;

#[derive(Clone)]
pub enum BetaFn {
    /// `β(t) = μt^η`.
    PowerLaw { mu: f64, eta: f64 },
    /// `β(t)` and its derivative.
    Custom { beta: ScalarFn, dbeta: ScalarFn },
}

impl BetaFn {
    pub fn value(&self, t: f64) -> f64 {
        match self {
            BetaFn::PowerLaw { mu, eta } => mu * t.powf(*eta),
            BetaFn::Custom { beta, .. } => beta(t),
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        match self {
            BetaFn::PowerLaw { mu, eta } => {
                if *eta == 0.0 {
                    0.0
                } else {
                    mu * eta * t.powf(eta - 1.0)
                }
            }
            BetaFn::Custom { dbeta, .. } => dbeta(t),
        }
    }
}

impl fmt::Debug for BetaFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BetaFn::PowerLaw { mu, eta } => write!(f, "PowerLaw {{ mu: {mu}, eta: {eta} }}"),
            BetaFn::Custom { .. } => write!(f, "Custom"),
        }
    }
}

#[derive(Clone, Default)]
pub enum Perturbation {
    #[default]
    Zero,
    /// `ε(t) = c / t^p`. With `p > 2`, `∫ t‖ε(t)‖ dt` is finite.
    InversePower { c: DVector<f64>, p: f64 },
    Custom(VectorFn),
}

impl Perturbation {
    fn add_to(&self, dv: &mut DVector<f64>, t: f64) {
        match self {
            Perturbation::Zero => {}
            Perturbation::InversePower { c, p } => *dv += c / t.powf(*p),
            Perturbation::Custom(f) => *dv += f(t),
        }
    }
}

impl fmt::Debug for Perturbation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Perturbation::Zero => write!(f, "Zero"),
            Perturbation::InversePower { c, p } => write!(f, "InversePower {{ c: {:?}, p: {p} }}", c.as_slice()),
            Perturbation::Custom(_) => write!(f, "Custom"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Stepping {
    /// Fixed step; `None` picks `min(1e−3, t0/100)`.
    Fixed(Option<f64>),
    /// Step doubling with a local error tolerance relative to `max(1, ‖y‖)`.
    Adaptive { tol: f64 },
}

#[derive(Debug, Clone)]
pub struct DynamicConfig {
    pub alpha: f64,
    pub delta: f64,
    pub beta: BetaFn,
    pub perturbation: Perturbation,
    pub t0: f64,
    pub t_end: f64,
    pub stepping: Stepping,
    /// Number of geometrically spaced sample times in `[t0, t_end]`.
    pub samples: usize,
}

impl Default for DynamicConfig {
    fn default() -> Self {
        Self {
            alpha: 3.0,
            delta: 0.5,
            beta: BetaFn::PowerLaw { mu: 1.0, eta: 0.0 },
            perturbation: Perturbation::Zero,
            t0: 1.0,
            t_end: 100.0,
            stepping: Stepping::Fixed(None),
            samples: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DynamicHypotheses {
    /// `1/δ ≤ α − 1` and `tβ̇(t) ≤ (1/δ − 2)β(t)` on the sample grid.
    pub energy_decay: bool,
    /// Power law with `0 ≤ η ≤ 1/δ − 2 ≤ α − 3`.
    pub power_rate: bool,
}

impl DynamicConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t0 > 0.0) || !self.t0.is_finite() {
            return Err(Error::invalid("t0", "must be positive"));
        }
        if !(self.t_end >= self.t0) || !self.t_end.is_finite() {
            return Err(Error::invalid("t_end", "must be finite and >= t0"));
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::invalid("alpha", "must be positive"));
        }
        if !(self.delta > 0.0) || !self.delta.is_finite() {
            return Err(Error::invalid("delta", "must be positive"));
        }
        if let BetaFn::PowerLaw { mu, eta } = self.beta {
            if !(mu > 0.0) {
                return Err(Error::invalid("mu", "must be positive"));
            }
            if !(eta >= 0.0) {
                return Err(Error::invalid("eta", "must be >= 0"));
            }
        }
        match self.stepping {
            Stepping::Fixed(Some(dt)) if !(dt > 0.0) => return Err(Error::invalid("dt", "must be positive")),
            Stepping::Adaptive { tol } if !(tol > 0.0) => return Err(Error::invalid("tol", "must be positive")),
            _ => {}
        }
        if self.samples < 2 {
            return Err(Error::invalid("samples", "need at least 2"));
        }
        Ok(())
    }

    pub fn default_step(&self) -> f64 {
        (1e-3f64).min(self.t0 / 100.0)
    }

    /// Geometric grid `t0·(t_end/t0)^{i/(N−1)}`.
    pub fn sample_times(&self) -> Vec<f64> {
        let ratio = self.t_end / self.t0;
        let last = self.samples - 1;
        (0..self.samples)
            .map(|i| {
                if i == last {
                    self.t_end
                } else {
                    self.t0 * ratio.powf(i as f64 / last as f64)
                }
            })
            .collect()
    }

    pub fn hypotheses(&self) -> DynamicHypotheses {
        let inv = 1.0 / self.delta;
        let grid_ok = self
            .sample_times()
            .iter()
            .all(|&t| t * self.beta.derivative(t) <= (inv - 2.0) * self.beta.value(t) * (1.0 + 1e-12) + 1e-300);
        let power_rate = match self.beta {
            BetaFn::PowerLaw { eta, .. } => 0.0 <= eta && eta <= inv - 2.0 + 1e-12 && inv - 2.0 <= self.alpha - 3.0 + 1e-12,
            _ => false,
        };
        DynamicHypotheses {
            energy_decay: inv <= self.alpha - 1.0 + 1e-12 && grid_ok,
            power_rate,
        }
    }
}

/// `(ẋ, v̇, λ̇)` at `s`.
pub fn rhs(s: &DynamicState, p: &ProblemSpec, cfg: &DynamicConfig) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>)> {
    if !(s.t > 0.0) {
        return Err(Error::invalid("t", "the dynamic is defined for t > 0"));
    }
    let c = p.constraint();
    c.check_primal(&s.x)?;
    c.check_primal(&s.v)?;
    c.check_dual(&s.lam)?;
    field(s.t, &s.x, &s.v, &s.lam, p, cfg)
}

fn field(
    t: f64,
    x: &DVector<f64>,
    v: &DVector<f64>,
    lam: &DVector<f64>,
    p: &ProblemSpec,
    cfg: &DynamicConfig,
) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>)> {
    let a = p.constraint().a();
    let beta = cfg.beta.value(t);
    let grad = p.gradient(x)? + a.tr_mul(lam);
    let mut dv = v * (-cfg.alpha / t) - grad * beta;
    cfg.perturbation.add_to(&mut dv, t);
    let dlam = (a * (x + v * (cfg.delta * t)) - p.constraint().b()) * (t * beta);
    Ok((v.clone(), dv, dlam))
}

fn packed_field(t: f64, y: &DVector<f64>, n: usize, m: usize, p: &ProblemSpec, cfg: &DynamicConfig) -> Result<DVector<f64>> {
    let x = y.rows(0, n).into_owned();
    let v = y.rows(n, n).into_owned();
    let lam = y.rows(2 * n, m).into_owned();
    let (dx, dv, dl) = field(t, &x, &v, &lam, p, cfg)?;
    let mut out = DVector::zeros(2 * n + m);
    out.rows_mut(0, n).copy_from(&dx);
    out.rows_mut(n, n).copy_from(&dv);
    out.rows_mut(2 * n, m).copy_from(&dl);
    Ok(out)
}

fn rk4(t: f64, y: &DVector<f64>, h: f64, n: usize, m: usize, p: &ProblemSpec, cfg: &DynamicConfig) -> Result<DVector<f64>> {
    let k1 = packed_field(t, y, n, m, p, cfg)?;
    let k2 = packed_field(t + 0.5 * h, &(y + &k1 * (0.5 * h)), n, m, p, cfg)?;
    let k3 = packed_field(t + 0.5 * h, &(y + &k2 * (0.5 * h)), n, m, p, cfg)?;
    let k4 = packed_field(t + h, &(y + &k3 * h), n, m, p, cfg)?;
    Ok(y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub objective: f64,
    pub feasibility: f64,
    /// `L(x, λ*) − L*`, with a certificate.
    pub gap: Option<f64>,
    pub t_xdot_norm: f64,
    pub energy: Option<f64>,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub state: DynamicState,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    /// Accepted integration steps.
    pub steps: usize,
    /// Rejected trial steps (adaptive stepping only).
    pub rejected: usize,
}

pub const TRAJECTORY_HEADER: &str = "t,objective,feasibility,gap,t_xdot_norm,energy,beta";

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.state.t).collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{TRAJECTORY_HEADER}")?;
        for s in &self.samples {
            let d = &s.diagnostics;
            let opt = |v: Option<f64>| v.map(|g| format!("{g:e}")).unwrap_or_default();
            writeln!(
                w,
                "{:e},{:e},{:e},{},{:e},{},{:e}",
                s.state.t,
                d.objective,
                d.feasibility,
                opt(d.gap),
                d.t_xdot_norm,
                opt(d.energy),
                d.beta
            )?;
        }
        Ok(())
    }
}

fn diagnose(s: &DynamicState, p: &ProblemSpec, cfg: &DynamicConfig, cert: Option<&SaddleCertificate>) -> Diagnostics {
    Diagnostics {
        objective: p.objective_value(&s.x),
        feasibility: p.constraint().violation(&s.x),
        gap: cert.map(|c| c.lagrangian_gap(p, &s.x)),
        t_xdot_norm: s.t * s.v.norm(),
        energy: cert.map(|c| dynamic_energy(s, c, cfg, p)),
        beta: cfg.beta.value(s.t),
    }
}

fn blown_up(y: &DVector<f64>, n: usize, m: usize) -> bool {
    let parts = [y.rows(0, n).norm(), y.rows(n, n).norm(), y.rows(2 * n, m).norm()];
    parts.iter().any(|v| !v.is_finite() || *v > BLOW_UP)
}

/// Integrates from `init` (which must sit at `t0`) and records diagnostics at
/// the geometric sample grid.
pub fn integrate(
    p: &ProblemSpec,
    cfg: &DynamicConfig,
    init: DynamicState,
    cert: Option<&SaddleCertificate>,
) -> Result<Trajectory> {
    cfg.validate()?;
    if !p.is_smooth() {
        return Err(Error::Nonsmooth("the dynamic needs a differentiable objective"));
    }
    if init.t != cfg.t0 {
        return Err(Error::invalid("init", format!("initial time {} differs from t0 = {}", init.t, cfg.t0)));
    }
    let c = p.constraint();
    c.check_primal(&init.x)?;
    c.check_primal(&init.v)?;
    c.check_dual(&init.lam)?;
    let (n, m) = (p.dim(), p.n_constraints());
    let times = cfg.sample_times();
    let mut samples = Vec::with_capacity(times.len());
    samples.push(Sample {
        diagnostics: diagnose(&init, p, cfg, cert),
        state: init.clone(),
    });
    let mut t = cfg.t0;
    let mut y = init.pack();
    let mut steps = 0;
    let mut rejected = 0;
    let mut h = match cfg.stepping {
        Stepping::Fixed(dt) => dt.unwrap_or_else(|| cfg.default_step()),
        Stepping::Adaptive { .. } => cfg.default_step(),
    };
    let blow = |t: f64, y: &DVector<f64>| Error::BlowUp {
        last_valid: Box::new(DynamicState::unpack(t, y, n, m)),
    };
    for &target in &times[1..] {
        while t < target {
            let remaining = target - t;
            // avoid a sliver step just short of the target
            let last = remaining <= h * (1.0 + 1e-9);
            let step = if last { remaining } else { h };
            let next = match cfg.stepping {
                Stepping::Fixed(_) => rk4(t, &y, step, n, m, p, cfg)?,
                Stepping::Adaptive { tol } => {
                    let full = rk4(t, &y, step, n, m, p, cfg)?;
                    let half = rk4(t, &y, 0.5 * step, n, m, p, cfg)?;
                    let two = rk4(t + 0.5 * step, &half, 0.5 * step, n, m, p, cfg)?;
                    let err = (&two - &full).norm() / 15.0;
                    let scale = tol * two.norm().max(1.0);
                    let factor = if err == 0.0 { 4.0 } else { (0.9 * (scale / err).powf(0.2)).clamp(0.2, 4.0) };
                    if !err.is_finite() || err > scale {
                        rejected += 1;
                        h = step * factor.min(0.5);
                        if h < 1e-14 * t.max(1.0) {
                            return Err(blow(t, &y));
                        }
                        continue;
                    }
                    if !last {
                        h = step * factor;
                    }
                    &two + (&two - &full) / 15.0
                }
            };
            if blown_up(&next, n, m) {
                return Err(blow(t, &y));
            }
            t = if last { target } else { t + step };
            y = next;
            steps += 1;
        }
        let state = DynamicState::unpack(t, &y, n, m);
        samples.push(Sample {
            diagnostics: diagnose(&state, p, cfg, cert),
            state,
        });
    }
    Ok(Trajectory { samples, steps, rejected })
}

/// ```text
/// E(t) = t²β(t)(L(x,λ*) − L*) + ½‖(1/δ)(x − x*) + tẋ‖²
///        + ((αδ−δ−1)/(2δ²))‖x − x*‖² + (1/(2δ))‖λ − λ*‖²
/// ```
pub fn dynamic_energy(s: &DynamicState, cert: &SaddleCertificate, cfg: &DynamicConfig, p: &ProblemSpec) -> f64 {
    let (alpha, delta, t) = (cfg.alpha, cfg.delta, s.t);
    let gap = lagrangian_unchecked(p, &s.x, &cert.lambda_star) - lagrangian_unchecked(p, &cert.x_star, &cert.lambda_star);
    let dx = &s.x - &cert.x_star;
    let u = &dx / delta + &s.v * t;
    t * t * cfg.beta.value(t) * gap
        + 0.5 * u.norm_squared()
        + (alpha * delta - delta - 1.0) / (2.0 * delta * delta) * dx.norm_squared()
        + (&s.lam - &cert.lambda_star).norm_squared() / (2.0 * delta)
}

/// Outcome of checking the boundedness bound for `g(t) = x(t) − x*` with
/// `a = 1/δ`: if `‖a g + tġ‖ ≤ b` on the samples then
/// `‖tġ‖ ≤ 2b + max(0, a‖g(t0)‖ − b)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundednessCheck {
    /// `b = sup ‖a g(t) + t ġ(t)‖`.
    pub hypothesis: f64,
    pub sup_t_gdot: f64,
    pub bound: f64,
    pub holds: bool,
}

pub fn boundedness_check(traj: &Trajectory, x_star: &DVector<f64>, cfg: &DynamicConfig) -> BoundednessCheck {
    let a = 1.0 / cfg.delta;
    let mut b = 0.0f64;
    let mut sup = 0.0f64;
    for s in &traj.samples {
        let g = &s.state.x - x_star;
        let tg = &s.state.v * s.state.t;
        b = b.max((&g * a + &tg).norm());
        sup = sup.max(tg.norm());
    }
    let g0 = traj.samples.first().map_or(0.0, |s| (&s.state.x - x_star).norm());
    let bound = 2.0 * b + (a * g0 - b).max(0.0);
    BoundednessCheck {
        hypothesis: b,
        sup_t_gdot: sup,
        bound,
        holds: sup <= bound * (1.0 + 1e-9),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{LinearConstraint, Objective, Quadratic};
    use crate::prox::SeparableProx;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// `½‖x − c‖²` subject to `Ax = b`, with its exact saddle point.
    fn quad(seed: u64, m: usize, n: usize) -> (ProblemSpec, SaddleCertificate) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0));
        let b = DVector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0));
        let c = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        // x* = c − Aᵀλ*, A x* = b  ⇒  AAᵀλ* = Ac − b
        let lam = (&a * a.transpose()).lu().solve(&(&a * &c - &b)).unwrap();
        let x = &c - a.transpose() * &lam;
        let p = ProblemSpec::new(
            LinearConstraint::new(a, b).unwrap(),
            Objective::Composite {
                nonsmooth: SeparableProx::Zero,
                smooth: Quadratic::distance_to(&c),
            },
        )
        .unwrap();
        (
            p,
            SaddleCertificate {
                x_star: x,
                lambda_star: lam,
            },
        )
    }

    #[test]
    fn saddle_is_equilibrium() {
        let (p, cert) = quad(1, 2, 4);
        let cfg = DynamicConfig::default();
        let s = DynamicState::at_rest(1.0, cert.x_star.clone(), cert.lambda_star.clone());
        let (dx, dv, dl) = rhs(&s, &p, &cfg).unwrap();
        assert!(dx.norm() == 0.0 && dv.norm() < 1e-14 && dl.norm() < 1e-14);

        let cfg = DynamicConfig {
            t0: 0.5,
            t_end: 50.0,
            ..DynamicConfig::default()
        };
        let init = DynamicState::at_rest(0.5, cert.x_star.clone(), cert.lambda_star.clone());
        let traj = integrate(&p, &cfg, init, Some(&cert)).unwrap();
        for s in &traj.samples {
            assert!((&s.state.x - &cert.x_star).norm() < 1e-10);
            assert!((&s.state.lam - &cert.lambda_star).norm() < 1e-10);
            assert!(s.diagnostics.energy.unwrap().abs() < 1e-10);
        }
    }

    #[test]
    fn rhs_rejects_nonpositive_time() {
        let (p, cert) = quad(1, 2, 4);
        let s = DynamicState::at_rest(0.0, cert.x_star.clone(), cert.lambda_star.clone());
        assert!(rhs(&s, &p, &DynamicConfig::default()).is_err());
    }

    #[test]
    fn nonsmooth_objective_rejected() {
        let c = LinearConstraint::new(DMatrix::identity(2, 2), DVector::zeros(2)).unwrap();
        let p = ProblemSpec::new(c, Objective::Prox(SeparableProx::L1)).unwrap();
        let init = DynamicState::at_rest(1.0, DVector::zeros(2), DVector::zeros(2));
        assert!(matches!(
            integrate(&p, &DynamicConfig::default(), init, None),
            Err(Error::Nonsmooth(_))
        ));
    }

    #[test]
    fn rhs_matches_finite_difference_of_trajectory() {
        let (p, _) = quad(3, 2, 5);
        let cfg = DynamicConfig {
            alpha: 4.0,
            delta: 0.3,
            beta: BetaFn::PowerLaw { mu: 0.7, eta: 1.0 },
            ..DynamicConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = DynamicState {
            t: 1.3,
            x: DVector::from_fn(5, |_, _| rng.gen_range(-1.0..1.0)),
            v: DVector::from_fn(5, |_, _| rng.gen_range(-1.0..1.0)),
            lam: DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0)),
        };
        let (_, dv, dl) = rhs(&s, &p, &cfg).unwrap();
        let y = s.pack();
        let mut errs = Vec::new();
        for h in [1e-2, 5e-3] {
            let fwd = rk4(s.t, &y, h, 5, 2, &p, &cfg).unwrap();
            let bwd = rk4(s.t, &y, -h, 5, 2, &p, &cfg).unwrap();
            let fwd = DynamicState::unpack(s.t + h, &fwd, 5, 2);
            let bwd = DynamicState::unpack(s.t - h, &bwd, 5, 2);
            let dv_fd = (&fwd.v - &bwd.v) / (2.0 * h);
            let dl_fd = (&fwd.lam - &bwd.lam) / (2.0 * h);
            errs.push((dv_fd - &dv).norm() + (dl_fd - &dl).norm());
        }
        // central differences are second order
        // central differences are second order
        let ratio = errs[0] / errs[1];
        assert!(ratio > 3.0 && ratio < 5.0, "ratio {ratio}");
    }

    #[test]
    fn unconstrained_field_is_damped_oscillator() {
        // with A = 0 (and b = 0) the λ line is inert and v̇ = −(α/t)v − βx
        let c = LinearConstraint::new(DMatrix::zeros(1, 3), DVector::zeros(1)).unwrap();
        let p = ProblemSpec::new(
            c,
            Objective::Composite {
                nonsmooth: SeparableProx::Zero,
                smooth: Quadratic::distance_to(&DVector::zeros(3)),
            },
        )
        .unwrap();
        let cfg = DynamicConfig::default();
        let s = DynamicState {
            t: 2.0,
            x: DVector::from_vec(vec![1.0, -2.0, 0.5]),
            v: DVector::from_vec(vec![0.1, 0.2, 0.3]),
            lam: DVector::from_vec(vec![7.0]),
        };
        let (_, dv, dl) = rhs(&s, &p, &cfg).unwrap();
        let expect = &s.v * (-3.0 / 2.0) - &s.x;
        assert!((dv - expect).norm() < 1e-15);
        assert_eq!(dl[0], 0.0);
    }

    #[test]
    fn fixed_step_is_fourth_order() {
        let c = LinearConstraint::new(DMatrix::zeros(1, 2), DVector::zeros(1)).unwrap();
        let p = ProblemSpec::new(
            c,
            Objective::Composite {
                nonsmooth: SeparableProx::Zero,
                smooth: Quadratic::distance_to(&DVector::zeros(2)),
            },
        )
        .unwrap();
        let init = DynamicState {
            t: 1.0,
            x: DVector::from_vec(vec![1.0, -0.5]),
            v: DVector::from_vec(vec![0.0, 1.0]),
            lam: DVector::zeros(1),
        };
        let run = |dt: f64| {
            let cfg = DynamicConfig {
                t0: 1.0,
                t_end: 5.0,
                stepping: Stepping::Fixed(Some(dt)),
                samples: 2,
                ..DynamicConfig::default()
            };
            integrate(&p, &cfg, init.clone(), None).unwrap().samples.last().unwrap().state.x.clone()
        };
        let reference = run(0.1 / 40.0);
        let e1 = (run(0.1) - &reference).norm();
        let e2 = (run(0.05) - &reference).norm();
        assert!(e1 < 1e-5);
        let order = (e1 / e2).log2();
        assert!(order > 3.7 && order < 4.3, "order {order}");
    }

    #[test]
    fn adaptive_matches_fine_fixed_step() {
        let (p, cert) = quad(2, 2, 4);
        let init = DynamicState::at_rest(1.0, DVector::zeros(4), DVector::zeros(2));
        let base = DynamicConfig {
            t0: 1.0,
            t_end: 20.0,
            samples: 20,
            ..DynamicConfig::default()
        };
        let fine = integrate(&p, &DynamicConfig { stepping: Stepping::Fixed(Some(1e-3)), ..base.clone() }, init.clone(), Some(&cert)).unwrap();
        let adaptive = integrate(&p, &DynamicConfig { stepping: Stepping::Adaptive { tol: 1e-9 }, ..base }, init, Some(&cert)).unwrap();
        assert!(adaptive.steps < fine.steps);
        for (a, b) in adaptive.samples.iter().zip(&fine.samples) {
            assert_eq!(a.state.t, b.state.t);
            assert!((&a.state.x - &b.state.x).norm() < 1e-6);
        }
    }

    #[test]
    fn energy_matches_term_by_term() {
        let (p, cert) = quad(4, 2, 3);
        let cfg = DynamicConfig {
            alpha: 5.0,
            delta: 0.3,
            beta: BetaFn::PowerLaw { mu: 2.0, eta: 0.5 },
            ..DynamicConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let q = p.smooth_part().unwrap();
        let a = p.constraint().a().clone();
        let b = p.constraint().b().clone();
        for _ in 0..20 {
            let s = DynamicState {
                t: rng.gen_range(0.1..10.0),
                x: DVector::from_fn(3, |_, _| rng.gen_range(-2.0..2.0)),
                v: DVector::from_fn(3, |_, _| rng.gen_range(-2.0..2.0)),
                lam: DVector::from_fn(2, |_, _| rng.gen_range(-2.0..2.0)),
            };
            let lag = |x: &DVector<f64>| {
                let mut f = q.constant();
                for i in 0..3 {
                    f += q.q_vec()[i] * x[i] + 0.5 * q.q_mat()[(i, i)] * x[i] * x[i];
                }
                for r in 0..2 {
                    let ax: f64 = (0..3).map(|j| a[(r, j)] * x[j]).sum::<f64>() - b[r];
                    f += cert.lambda_star[r] * ax;
                }
                f
            };
            let (t, de) = (s.t, 0.3);
            let beta = 2.0 * t.sqrt();
            let mut u2 = 0.0;
            let mut d2 = 0.0;
            for i in 0..3 {
                let d = s.x[i] - cert.x_star[i];
                let u = d / de + t * s.v[i];
                u2 += u * u;
                d2 += d * d;
            }
            let l2: f64 = (0..2).map(|r| (s.lam[r] - cert.lambda_star[r]).powi(2)).sum();
            let oracle = t * t * beta * (lag(&s.x) - lag(&cert.x_star))
                + 0.5 * u2
                + (5.0 * de - de - 1.0) / (2.0 * de * de) * d2
                + l2 / (2.0 * de);
            let got = dynamic_energy(&s, &cert, &cfg, &p);
            assert!((got - oracle).abs() <= 1e-10 * oracle.abs().max(1.0));
        }
    }

    #[test]
    fn energy_nonincreasing_under_hypotheses() {
        let (p, cert) = quad(6, 3, 6);
        let tol = 1e-10;
        let cfg = DynamicConfig {
            alpha: 3.0,
            delta: 0.5,
            beta: BetaFn::PowerLaw { mu: 1.0, eta: 0.0 },
            t0: 1.0,
            t_end: 100.0,
            stepping: Stepping::Adaptive { tol },
            samples: 100,
            ..DynamicConfig::default()
        };
        assert!(cfg.hypotheses().energy_decay && cfg.hypotheses().power_rate);
        let init = DynamicState::at_rest(1.0, DVector::zeros(6), DVector::zeros(3));
        let traj = integrate(&p, &cfg, init, Some(&cert)).unwrap();
        let e0 = traj.samples[0].diagnostics.energy.unwrap();
        for w in traj.samples.windows(2) {
            let (a, b) = (w[0].diagnostics.energy.unwrap(), w[1].diagnostics.energy.unwrap());
            assert!(b <= a + 10.0 * tol * e0.max(1.0), "{a} -> {b}");
        }
        assert!(boundedness_check(&traj, &cert.x_star, &cfg).holds);
    }

    #[test]
    fn hypothesis_flags() {
        let cfg = DynamicConfig {
            alpha: 6.0,
            delta: 0.25,
            beta: BetaFn::PowerLaw { mu: 1.0, eta: 1.0 },
            ..DynamicConfig::default()
        };
        let h = cfg.hypotheses();
        assert!(h.energy_decay && h.power_rate);
        let cfg = DynamicConfig {
            beta: BetaFn::PowerLaw { mu: 1.0, eta: 3.0 },
            ..cfg
        };
        let h = cfg.hypotheses();
        assert!(!h.energy_decay && !h.power_rate);
    }

    #[test]
    fn invalid_horizon_rejected() {
        let (p, cert) = quad(1, 2, 4);
        let cfg = DynamicConfig {
            t0: 2.0,
            t_end: 1.0,
            ..DynamicConfig::default()
        };
        let init = DynamicState::at_rest(2.0, cert.x_star.clone(), cert.lambda_star.clone());
        assert!(integrate(&p, &cfg, init, None).is_err());
    }

    #[test]
    fn blow_up_reports_last_valid_state() {
        let (p, _) = quad(1, 2, 4);
        // a huge step destabilizes RK4
        let cfg = DynamicConfig {
            beta: BetaFn::PowerLaw { mu: 1e4, eta: 0.0 },
            t0: 1.0,
            t_end: 1e3,
            stepping: Stepping::Fixed(Some(0.5)),
            ..DynamicConfig::default()
        };
        let init = DynamicState::at_rest(1.0, DVector::from_element(4, 1.0), DVector::zeros(2));
        match integrate(&p, &cfg, init, None) {
            Err(Error::BlowUp { last_valid }) => assert!(last_valid.t >= 1.0 && last_valid.x.norm() <= BLOW_UP),
            other => panic!("expected blow-up, got {other:?}"),
        }
    }

    #[test]
    fn sample_grid_is_geometric() {
        let cfg = DynamicConfig {
            t0: 0.01,
            t_end: 10.0,
            samples: 4,
            ..DynamicConfig::default()
        };
        let ts = cfg.sample_times();
        assert_eq!(ts[0], 0.01);
        assert_eq!(ts[3], 10.0);
        assert!((ts[1] - 0.1).abs() < 1e-15 && (ts[2] - 1.0).abs() < 1e-14);
        assert_eq!(cfg.default_step(), 1e-4);
    }
}
