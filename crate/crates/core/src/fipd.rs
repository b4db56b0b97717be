//! Fast inexact primal-dual method (FIPD).
//!
//! Each outer iteration extrapolates `x̄_k = x_k + ((k−θ)/(k+α−θ))(x_k − x_{k−1})`,
//! minimizes
//!
//! ```text
//! f(x) + ((k+α−θ)/(2kβ_k))‖x − x̄_k‖²_M + (ϑ_k/2)‖Ax − η_k‖² + ⟨Aᵀλ_k, x⟩
//! ϑ_k = kβ_k(1 + δ(k+1−θ)),   η_k = (δ(k+1−θ)Ax_k + b) / (1 + δ(k+1−θ))
//! ```
//!
//! and then moves the multiplier by
//! `λ_{k+1} = λ_k + kβ_k(Ax_{k+1} − b + δ(k+1−θ)A(x_{k+1} − x_k))`.
//! Inexactness enters only through the inner solver's tolerance.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::inner::{InnerConfig, InnerEngine};
use crate::metric::Metric;
use crate::problem::{lagrangian_unchecked, LinearConstraint, ProblemSpec, SaddleCertificate};
use crate::trace::{drive, IterateState, LoopControl, RunResult, TraceRecord};

/// How `β_k` evolves.
#[derive(Debug, Clone, PartialEq)]
pub enum BetaSchedule {
    /// `β_{k+1} = β_k` for `k ≤ θ−2`, `β_{k+1} = k/(k+2−θ)·β_k` afterwards.
    Recurrence,
    /// User-supplied `β_1, β_2, …`, checked against the decay condition
    /// `β_{k+1} ≤ k(k+1−θ+1/δ)/((k+1)(k+2−θ))·β_k` for `k ≥ max(θ−1, 1)`.
    InequalityChecked(Vec<f64>),
    Constant,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FipdConfig {
    pub alpha: f64,
    pub delta: f64,
    pub theta: f64,
    pub beta0: f64,
    pub schedule: BetaSchedule,
    pub metric: Metric,
    pub inner: InnerConfig,
    pub control: LoopControl,
}

impl Default for FipdConfig {
    fn default() -> Self {
        Self {
            alpha: 3.0,
            delta: 0.5,
            theta: 2.0,
            beta0: 1.0,
            schedule: BetaSchedule::Recurrence,
            metric: Metric::Identity,
            inner: InnerConfig::default(),
            control: LoopControl::default(),
        }
    }
}

/// Which rate hypotheses a configuration satisfies. Violations are reported,
/// not rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FipdHypotheses {
    /// `1/δ ≤ α − 1`.
    pub bounded_energy: bool,
    /// `1/δ < α − 1`, needed for primal boundedness and step decay.
    pub strict_energy: bool,
    /// `θ ≤ 1/δ ≤ α − 1` together with the recurrence schedule.
    pub improved_rate: bool,
}

impl FipdConfig {
    /// `θ = 2, α = 3, δ = 1/2, β0 = 5`: constant scaling, `O(1/k²)` rates.
    pub fn theta2_preset() -> Self {
        Self {
            beta0: 5.0,
            ..Self::default()
        }
    }

    /// `θ = 3, α = 4, δ = 1/3, β0 = 5`: growing scaling, within
    /// `θ ≤ 1/δ ≤ α − 1`.
    pub fn theta3_preset() -> Self {
        Self {
            alpha: 4.0,
            delta: 1.0 / 3.0,
            theta: 3.0,
            beta0: 5.0,
            ..Self::default()
        }
    }

    /// `α = m, δ = 1/(m−2), M = (1/n)·Id, β0 = 0.05` for an `m × n` instance,
    /// with `θ` of 2 or 3. Sits on the edge `1/δ = α − 2` of the admissible
    /// region; kept for comparison runs, not as a default. Needs `m > 2`.
    pub fn large_alpha_preset(theta: f64, m: usize, n: usize) -> Self {
        Self {
            alpha: m as f64,
            delta: 1.0 / (m as f64 - 2.0),
            theta,
            beta0: 0.05,
            metric: Metric::ScaledIdentity(1.0 / n as f64),
            ..Self::default()
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::invalid("alpha", "must be positive"));
        }
        if !(self.delta > 0.0) || !self.delta.is_finite() {
            return Err(Error::invalid("delta", "must be positive"));
        }
        if !self.theta.is_finite() {
            return Err(Error::invalid("theta", "must be finite"));
        }
        if !(self.beta0 > 0.0) || !self.beta0.is_finite() {
            return Err(Error::invalid("beta0", "must be positive"));
        }
        if matches!(self.schedule, BetaSchedule::Recurrence) && self.theta < 2.0 {
            return Err(Error::invalid("theta", "the recurrence schedule requires theta >= 2"));
        }
        if let BetaSchedule::InequalityChecked(seq) = &self.schedule {
            validate_sequence(seq, self)?;
        }
        self.metric.validate(n)?;
        self.inner.validate()?;
        self.control.validate()?;
        Ok(())
    }

    pub fn hypotheses(&self) -> FipdHypotheses {
        let inv = 1.0 / self.delta;
        let bounded = inv <= self.alpha - 1.0;
        FipdHypotheses {
            bounded_energy: bounded,
            strict_energy: inv < self.alpha - 1.0,
            improved_rate: bounded && self.theta <= inv && matches!(self.schedule, BetaSchedule::Recurrence),
        }
    }

    /// First index where the energy analysis applies, `max(θ−1, 1)`.
    pub fn first_energy_index(&self) -> usize {
        ((self.theta - 1.0).ceil().max(1.0)) as usize
    }
}

fn decay_bound(k: usize, beta: f64, theta: f64, delta: f64) -> f64 {
    let kf = k as f64;
    kf * (kf + 1.0 - theta + 1.0 / delta) / ((kf + 1.0) * (kf + 2.0 - theta)) * beta
}

fn validate_sequence(seq: &[f64], cfg: &FipdConfig) -> Result<()> {
    if seq.is_empty() {
        return Err(Error::invalid("schedule", "user beta sequence is empty"));
    }
    if seq.iter().any(|b| !(*b > 0.0) || !b.is_finite()) {
        return Err(Error::invalid("schedule", "user beta values must be positive and finite"));
    }
    let k1 = cfg.first_energy_index();
    for k in k1..seq.len() {
        let bound = decay_bound(k, seq[k - 1], cfg.theta, cfg.delta);
        let next = seq[k];
        if next > bound * (1.0 + 1e-12) {
            return Err(Error::ScheduleViolation { k, next, bound });
        }
    }
    Ok(())
}

/// `x̄_k`; the coefficient is clamped to 0 while `k < θ`.
pub fn extrapolate(s: &IterateState, cfg: &FipdConfig) -> Result<DVector<f64>> {
    let k = s.k as f64;
    let denom = k + cfg.alpha - cfg.theta;
    if denom == 0.0 {
        return Err(Error::ZeroDenominator { k: s.k });
    }
    let coeff = if k < cfg.theta { 0.0 } else { (k - cfg.theta) / denom };
    Ok(&s.x + (&s.x - &s.x_prev) * coeff)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubproblemCoeffs {
    pub theta_k: f64,
    pub eta_k: DVector<f64>,
    /// Weight `(k+α−θ)/(kβ_k)` on `½‖x − x̄_k‖²_M`.
    pub c1: f64,
}

pub fn subproblem_coeffs(
    k: usize,
    beta: f64,
    cfg: &FipdConfig,
    constraint: &LinearConstraint,
    x: &DVector<f64>,
) -> Result<SubproblemCoeffs> {
    constraint.check_primal(x)?;
    let kf = k as f64;
    let lead = cfg.delta * (kf + 1.0 - cfg.theta);
    let scale = 1.0 + lead;
    if !(scale > 0.0) {
        return Err(Error::NonPositiveScale { k, value: scale });
    }
    let c1 = (kf + cfg.alpha - cfg.theta) / (kf * beta);
    if !(c1 > 0.0) {
        return Err(Error::invalid("alpha", format!("k + alpha - theta must be positive at k = {k}")));
    }
    let eta_k = (constraint.a() * x * lead + constraint.b()) / scale;
    Ok(SubproblemCoeffs {
        theta_k: kf * beta * scale,
        eta_k,
        c1,
    })
}

pub fn dual_update(
    s: &IterateState,
    x_next: &DVector<f64>,
    cfg: &FipdConfig,
    constraint: &LinearConstraint,
) -> Result<DVector<f64>> {
    constraint.check_primal(x_next)?;
    constraint.check_dual(&s.lam)?;
    let kf = s.k as f64;
    let a = constraint.a();
    let r = constraint.residual(x_next) + a * (x_next - &s.x) * (cfg.delta * (kf + 1.0 - cfg.theta));
    Ok(&s.lam + r * (kf * s.beta))
}

/// `β_{k+1}` from `β_k`.
pub fn update_beta(k: usize, beta: f64, cfg: &FipdConfig) -> Result<f64> {
    if k == 0 {
        return Err(Error::invalid("k", "iteration index starts at 1"));
    }
    match &cfg.schedule {
        BetaSchedule::Constant => Ok(beta),
        BetaSchedule::Recurrence => {
            if cfg.theta < 2.0 {
                return Err(Error::invalid("theta", "the recurrence schedule requires theta >= 2"));
            }
            let kf = k as f64;
            if kf <= cfg.theta - 2.0 {
                Ok(beta)
            } else {
                Ok(kf / (kf + 2.0 - cfg.theta) * beta)
            }
        }
        BetaSchedule::InequalityChecked(seq) => {
            let next = *seq.get(k).ok_or_else(|| {
                Error::invalid("schedule", format!("user beta sequence has no entry for k = {}", k + 1))
            })?;
            if k >= cfg.first_energy_index() {
                let bound = decay_bound(k, beta, cfg.theta, cfg.delta);
                if next > bound * (1.0 + 1e-12) {
                    return Err(Error::ScheduleViolation { k, next, bound });
                }
            }
            Ok(next)
        }
    }
}

fn initial_beta(cfg: &FipdConfig) -> f64 {
    match &cfg.schedule {
        BetaSchedule::InequalityChecked(seq) => seq[0],
        _ => cfg.beta0,
    }
}

/// A configured FIPD solver bound to one problem.
pub struct Fipd<'a> {
    problem: &'a ProblemSpec,
    cfg: &'a FipdConfig,
    engine: InnerEngine,
}

impl<'a> Fipd<'a> {
    pub fn new(problem: &'a ProblemSpec, cfg: &'a FipdConfig) -> Result<Self> {
        cfg.validate(problem.dim())?;
        let engine = InnerEngine::new(problem, cfg.inner, true)?;
        if !engine.is_exact() && cfg.inner.tol0 > 0.0 && !(cfg.metric.lambda_min() > 0.0) {
            return Err(Error::invalid(
                "metric",
                "an inexact inner solve needs a positive definite metric (kappa > 0)",
            ));
        }
        Ok(Self { problem, cfg, engine })
    }

    pub fn initial_state(&self, x0: DVector<f64>, lam0: DVector<f64>) -> IterateState {
        IterateState::initial(x0, lam0, initial_beta(self.cfg))
    }

    /// One outer iteration (steps 1–3) from `s`.
    pub fn step(&self, s: &IterateState) -> Result<(IterateState, TraceRecord)> {
        let p = self.problem;
        let cfg = self.cfg;
        let constraint = p.constraint();
        let x_bar = extrapolate(s, cfg)?;
        let coeffs = subproblem_coeffs(s.k, s.beta, cfg, constraint, &s.x)?;
        let g = constraint.a().tr_mul(&s.lam);
        let report = self.engine.solve(
            p,
            &cfg.metric,
            coeffs.c1,
            x_bar.clone(),
            coeffs.theta_k,
            coeffs.eta_k,
            g,
            &x_bar,
            s.k,
        )?;
        let lam = dual_update(s, &report.x_out, cfg, constraint)?;
        let beta = update_beta(s.k, s.beta, cfg)?;
        let next = IterateState {
            k: s.k + 1,
            x_prev: s.x.clone(),
            x: report.x_out,
            lam,
            beta,
        };
        let record = TraceRecord::describe(p, s, &next, report.iterations, report.eps_bound);
        Ok((next, record))
    }
}

pub fn step(s: &IterateState, p: &ProblemSpec, cfg: &FipdConfig) -> Result<(IterateState, TraceRecord)> {
    Fipd::new(p, cfg)?.step(s)
}

pub fn run(p: &ProblemSpec, cfg: &FipdConfig, x0: DVector<f64>, lam0: DVector<f64>) -> Result<RunResult> {
    run_observed(p, cfg, x0, lam0, None, &mut |_| {})
}

/// [`run`] with an optional certificate (fills the `gap` column) and a
/// callback invoked on every iterate state, starting with `(x_1, λ_1)`.
pub fn run_observed(
    p: &ProblemSpec,
    cfg: &FipdConfig,
    x0: DVector<f64>,
    lam0: DVector<f64>,
    certificate: Option<&SaddleCertificate>,
    observer: &mut dyn FnMut(&IterateState),
) -> Result<RunResult> {
    let solver = Fipd::new(p, cfg)?;
    let initial = solver.initial_state(x0, lam0);
    drive(p, cfg.control, initial, certificate, observer, |s| solver.step(s))
}

/// Lyapunov energy
///
/// ```text
/// E_k = k(k+1−θ)β_k(L(x_k,λ*) − L(x*,λ*)) + ½‖u_k‖²_M
///       + ((αδ−δ−1)/(2δ²))‖x_k − x*‖²_M + (1/(2δ))‖λ_k − λ*‖²
/// u_k = (1/δ)(x_k − x*) + (k−θ)(x_k − x_{k−1})
/// ```
///
/// defined for `k ≥ max(θ−1, 1)`.
pub fn energy(s: &IterateState, cert: &SaddleCertificate, cfg: &FipdConfig, p: &ProblemSpec) -> Result<f64> {
    if s.k < cfg.first_energy_index() {
        return Err(Error::invalid(
            "k",
            format!("energy is defined for k >= max(theta-1, 1) = {}", cfg.first_energy_index()),
        ));
    }
    let kf = s.k as f64;
    let (alpha, delta, theta) = (cfg.alpha, cfg.delta, cfg.theta);
    let gap = lagrangian_unchecked(p, &s.x, &cert.lambda_star) - lagrangian_unchecked(p, &cert.x_star, &cert.lambda_star);
    let dx = &s.x - &cert.x_star;
    let u = &dx / delta + (&s.x - &s.x_prev) * (kf - theta);
    Ok(kf * (kf + 1.0 - theta) * s.beta * gap
        + 0.5 * cfg.metric.norm_sq(&u)
        + (alpha * delta - delta - 1.0) / (2.0 * delta * delta) * cfg.metric.norm_sq(&dx)
        + (&s.lam - &cert.lambda_star).norm_squared() / (2.0 * delta))
}

/// Norm of the residual of the second-order difference inclusion satisfied
/// by consecutive iterates when `f` is differentiable:
///
/// ```text
/// M(x_{k+1} − 2x_k + x_{k−1} + ((α−θ)/k)(x_{k+1} − x_k) + (θ/k)(x_k − x_{k−1}))
///   + β_k(∇f(x_{k+1}) + Aᵀλ_{k+1})
/// ```
///
/// `prev` holds `(x_k, x_{k−1}, λ_k, β_k)`, `next` holds `x_{k+1}, λ_{k+1}`.
pub fn discretization_residual(prev: &IterateState, next: &IterateState, p: &ProblemSpec, cfg: &FipdConfig) -> Result<f64> {
    let kf = prev.k as f64;
    let (alpha, theta) = (cfg.alpha, cfg.theta);
    let second = &next.x - &prev.x * 2.0 + &prev.x_prev
        + (&next.x - &prev.x) * ((alpha - theta) / kf)
        + (&prev.x - &prev.x_prev) * (theta / kf);
    let grad = p.gradient(&next.x)? + p.constraint().a().tr_mul(&next.lam);
    Ok((cfg.metric.apply(&second) + grad * prev.beta).norm())
}
