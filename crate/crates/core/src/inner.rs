//! Inner solver for the primal subproblems
//!
//! ```text
//! F(x) = f(x) + (c1/2)‖x − x̄‖²_M + (c2/2)‖Ax − η‖² + ⟨g, x⟩ [+ f2(x)]
//! ```
//!
//! solved by FISTA with a relative-change stopping rule, by a dense
//! factorization when `f` is an explicit quadratic, or, for separable `f`
//! with a diagonal metric, by a semismooth Newton method on the
//! `m`-dimensional dual.

use std::cell::RefCell;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::metric::Metric;
use crate::problem::{ProblemSpec, ProxOracle, SmoothOracle};
use crate::prox::SeparableProx;

/// Power-iteration estimate of `‖A‖₂` to relative tolerance `tol`, started
/// from the normalized all-ones vector.
pub fn spectral_norm(a: &DMatrix<f64>, tol: f64) -> f64 {
    let n = a.ncols();
    if n == 0 || a.nrows() == 0 {
        return 0.0;
    }
    let starts = [
        DVector::from_element(n, 1.0),
        DVector::from_fn(n, |i, _| (i + 1) as f64),
        DVector::from_fn(n, |i, _| if i % 2 == 0 { 1.0 } else { -0.5 }),
    ];
    let mut best = 0.0f64;
    for start in starts {
        let mut v = start.normalize();
        let mut estimate = 0.0;
        for _ in 0..100_000 {
            let av = a * &v;
            let w = a.tr_mul(&av);
            let next = av.norm_squared();
            let wn = w.norm();
            if wn == 0.0 {
                estimate = 0.0;
                break;
            }
            v = w / wn;
            let done = (next - estimate).abs() <= tol * next;
            estimate = next;
            if done {
                break;
            }
        }
        best = best.max(estimate.sqrt());
        if best > 0.0 {
            break;
        }
    }
    best
}

/// One primal subproblem; see the module docs for the objective.
pub struct CompositeSubproblem<'a> {
    pub prox_part: &'a dyn ProxOracle,
    /// Smooth function kept exactly inside the subproblem.
    pub smooth_part: Option<&'a dyn SmoothOracle>,
    pub metric: &'a Metric,
    pub c1: f64,
    pub x_bar: DVector<f64>,
    pub c2: f64,
    pub eta: DVector<f64>,
    pub g: DVector<f64>,
    pub a: &'a DMatrix<f64>,
    /// `‖A‖²`, cached by the caller.
    pub a_norm_sq: f64,
}

impl CompositeSubproblem<'_> {
    /// Lipschitz bound of the smooth part: `c1·λmax(M) + c2·‖A‖² (+ L_f2)`.
    pub fn lipschitz(&self) -> f64 {
        let mut l = self.c1 * self.metric.lambda_max() + self.c2 * self.a_norm_sq;
        if let Some(s) = self.smooth_part {
            l += s.lipschitz();
        }
        l
    }

    fn smooth_value(&self, x: &DVector<f64>, ax: &DVector<f64>) -> f64 {
        let mut v = 0.5 * self.c1 * self.metric.norm_sq(&(x - &self.x_bar))
            + 0.5 * self.c2 * (ax - &self.eta).norm_squared()
            + self.g.dot(x);
        if let Some(s) = self.smooth_part {
            v += s.value(x);
        }
        v
    }

    fn smooth_gradient(&self, x: &DVector<f64>, ax: &DVector<f64>) -> DVector<f64> {
        let mut grad = &self.g + self.metric.apply(&(x - &self.x_bar)) * self.c1;
        if self.c2 != 0.0 {
            grad += self.a.tr_mul(&(ax - &self.eta)) * self.c2;
        }
        if let Some(s) = self.smooth_part {
            grad += s.gradient(x);
        }
        grad
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        let ax = self.a * x;
        self.prox_part.value(x) + self.smooth_value(x, &ax)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerStop {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for InnerStop {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 100 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InnerReport {
    pub x_out: DVector<f64>,
    pub iterations: usize,
    /// Last value of `‖x_j − x_{j−1}‖² / max(‖x_{j−1}‖, 1)`.
    pub rel_change: f64,
    /// Bound on `dist(0, ∂F(x_out))`.
    pub eps_bound: f64,
    pub objective: f64,
    pub converged: bool,
}

struct Candidate {
    x: DVector<f64>,
    ax: DVector<f64>,
    y: DVector<f64>,
    grad_y: DVector<f64>,
    value: f64,
}

/// FISTA with step `1/L_sub` and momentum `t_{j+1} = (1 + √(1 + 4t_j²))/2`.
///
/// Returns the best-objective iterate seen; `eps_bound` is taken from the prox
/// step that produced it, `‖L(y − x) + ∇q(x) − ∇q(y)‖`.
pub fn fista(sub: &CompositeSubproblem<'_>, x0: &DVector<f64>, stop: InnerStop) -> Result<InnerReport> {
    if !(stop.tol >= 0.0) {
        return Err(Error::invalid("tol", "inner tolerance must be >= 0"));
    }
    if stop.max_iter == 0 {
        return Err(Error::invalid("max_iter", "inner iteration cap must be >= 1"));
    }
    let lip = sub.lipschitz();
    if !(lip > 0.0) || !lip.is_finite() {
        return Err(Error::invalid("L_sub", format!("subproblem Lipschitz bound {lip} must be positive and finite")));
    }
    let step = 1.0 / lip;

    let mut x_prev = x0.clone();
    let mut ax_prev = sub.a * x0;
    let mut y = x0.clone();
    let mut ay = ax_prev.clone();
    let mut t = 1.0f64;
    let mut best: Option<Candidate> = None;
    let mut rel_change = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;

    for j in 1..=stop.max_iter {
        iterations = j;
        let grad_y = sub.smooth_gradient(&y, &ay);
        let x = sub.prox_part.prox(&(&y - &grad_y * step), step);
        let ax = sub.a * &x;
        let value = sub.prox_part.value(&x) + sub.smooth_value(&x, &ax);
        if !value.is_finite() {
            return Err(Error::InnerNonFinite { iteration: j });
        }
        if best.as_ref().map_or(true, |b| value < b.value) {
            best = Some(Candidate {
                x: x.clone(),
                ax: ax.clone(),
                y: y.clone(),
                grad_y,
                value,
            });
        }
        rel_change = (&x - &x_prev).norm_squared() / x_prev.norm().max(1.0);
        if rel_change <= stop.tol {
            converged = true;
            break;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let momentum = (t - 1.0) / t_next;
        y = &x + (&x - &x_prev) * momentum;
        ay = &ax + (&ax - &ax_prev) * momentum;
        x_prev = x;
        ax_prev = ax;
        t = t_next;
    }

    let best = best.expect("at least one FISTA iteration");
    let grad_x = sub.smooth_gradient(&best.x, &best.ax);
    let eps_bound = ((&best.y - &best.x) * lip + grad_x - &best.grad_y).norm();
    Ok(InnerReport {
        x_out: best.x,
        iterations,
        rel_change,
        eps_bound,
        objective: best.value,
        converged,
    })
}

/// Exact solver for subproblems whose `f` is the quadratic `½xᵀHx + hᵀx`.
/// `AᵀA` is formed once and reused across calls.
#[derive(Debug, Clone)]
pub struct QuadraticSolver {
    hessian: DMatrix<f64>,
    linear: DVector<f64>,
    ata: DMatrix<f64>,
}

impl QuadraticSolver {
    pub fn new(hessian: DMatrix<f64>, linear: DVector<f64>, a: &DMatrix<f64>) -> Self {
        Self {
            hessian,
            linear,
            ata: a.tr_mul(a),
        }
    }

    /// Solves `(H + c1 M + c2 AᵀA) x = c1 M x̄ + c2 Aᵀη − g − h`. Any smooth part
    /// attached to `sub` is assumed to be already folded into `H`, `h`.
    pub fn solve(&self, sub: &CompositeSubproblem<'_>) -> Result<InnerReport> {
        let mut mat = &self.hessian + &self.ata * sub.c2;
        sub.metric.add_scaled_to(&mut mat, sub.c1);
        let mut rhs = sub.metric.apply(&sub.x_bar) * sub.c1 - &sub.g - &self.linear;
        if sub.c2 != 0.0 {
            rhs += sub.a.tr_mul(&sub.eta) * sub.c2;
        }
        let x = match mat.clone().cholesky() {
            Some(chol) => chol.solve(&rhs),
            None => mat.clone().lu().solve(&rhs).ok_or(Error::SingularSystem)?,
        };
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularSystem);
        }
        let eps_bound = (&mat * &x - &rhs).norm();
        let objective = 0.5 * x.dot(&(&mat * &x)) - rhs.dot(&x);
        Ok(InnerReport {
            x_out: x,
            iterations: 1,
            rel_change: 0.0,
            eps_bound,
            objective,
            converged: true,
        })
    }
}

/// Semismooth Newton method on the dual of a separable subproblem.
///
/// With `d = c1·diag(M)`, the inner minimization over `x` for a fixed dual
/// variable `u` is the closed-form prox
/// `x(u) = prox_{f/d}(x̄ − (g + Aᵀu)/d)`, and the subproblem optimum is
/// recovered from the root of `F(u) = Ax(u) − η − u/c2`. Each step solves
/// `(A diag(P′/d) Aᵀ + I/c2) Δ = F(u)` and backtracks on the concave dual
/// objective. At `x(u)` the subproblem residual is `c2‖AᵀF(u)‖`, reported
/// as `eps_bound` and compared against `stop.tol`.
///
/// Returns the report together with the final dual variable.
pub fn dual_newton(
    sub: &CompositeSubproblem<'_>,
    kind: &SeparableProx,
    u0: &DVector<f64>,
    stop: InnerStop,
) -> Result<(InnerReport, DVector<f64>)> {
    let n = sub.x_bar.len();
    let m = sub.eta.len();
    let d = sub
        .metric
        .diagonal(n)
        .ok_or(Error::invalid("metric", "dual Newton needs a diagonal metric"))?
        * sub.c1;
    if d.iter().any(|v| !(*v > 0.0)) || !(sub.c2 > 0.0) {
        return Err(Error::invalid("subproblem", "dual Newton needs c1·M > 0 and c2 > 0"));
    }
    if sub.smooth_part.is_some() {
        return Err(Error::invalid("subproblem", "dual Newton cannot keep a smooth part"));
    }
    let a = sub.a;
    let inv_c2 = 1.0 / sub.c2;
    // x(u), the prox arguments, and the dual objective value
    let eval = |u: &DVector<f64>| {
        let w = &sub.g + a.tr_mul(u);
        let v = DVector::from_fn(n, |i, _| sub.x_bar[i] - w[i] / d[i]);
        let x = DVector::from_fn(n, |i, _| kind.prox_scalar(v[i], 1.0 / d[i]));
        let mut value = w.dot(&x) - u.dot(&sub.eta) - 0.5 * inv_c2 * u.norm_squared();
        for i in 0..n {
            let dx = x[i] - sub.x_bar[i];
            value += kind.value_scalar(x[i]) + 0.5 * d[i] * dx * dx;
        }
        let f = a * &x - &sub.eta - u * inv_c2;
        (x, v, value, f)
    };
    let mut u = u0.clone();
    let (mut x, mut v, mut value, mut f) = eval(&u);
    let mut iterations = 0;
    let mut converged = false;
    let mut eps = sub.c2 * a.tr_mul(&f).norm();
    loop {
        if !value.is_finite() || eps.is_nan() {
            return Err(Error::InnerNonFinite { iteration: iterations });
        }
        let floor = 1e-15 * ((a * &x).norm() + sub.eta.norm() + u.norm() * inv_c2 + 1.0);
        if eps <= stop.tol || f.norm() <= floor {
            converged = true;
            break;
        }
        if iterations >= stop.max_iter {
            break;
        }
        iterations += 1;
        let active: Vec<(usize, f64)> = (0..n)
            .filter_map(|i| {
                let w = kind.prox_derivative_scalar(v[i], 1.0 / d[i]) / d[i];
                (w > 0.0).then_some((i, w.sqrt()))
            })
            .collect();
        let scaled = DMatrix::from_fn(m, active.len(), |r, c| a[(r, active[c].0)] * active[c].1);
        let mut jac = &scaled * scaled.transpose();
        for i in 0..m {
            jac[(i, i)] += inv_c2;
        }
        let dir = jac.cholesky().ok_or(Error::SingularSystem)?.solve(&f);
        let slope = f.dot(&dir);
        let mut s = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial = &u + &dir * s;
            let out = eval(&trial);
            if out.2 >= value + 1e-4 * s * slope || out.3.norm() < f.norm() {
                accepted = Some((trial, out));
                break;
            }
            s *= 0.5;
        }
        let Some((trial, out)) = accepted else {
            break;
        };
        u = trial;
        (x, v, value, f) = out;
        eps = sub.c2 * a.tr_mul(&f).norm();
    }
    let objective = sub.objective(&x);
    if !objective.is_finite() {
        return Err(Error::InnerNonFinite { iteration: iterations });
    }
    Ok((
        InnerReport {
            x_out: x,
            iterations,
            rel_change: 0.0,
            eps_bound: eps,
            objective,
            converged,
        },
        u,
    ))
}

/// Inner tolerance for outer iteration `k`: `tol0 / k^exponent`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerConfig {
    pub tol0: f64,
    pub exponent: f64,
    pub max_iter: usize,
    /// Use the dense factorization when the objective is an explicit quadratic.
    pub exact_quadratic: bool,
    /// Use the dual Newton solver when the subproblem is separable.
    pub dual_newton: bool,
}

impl Default for InnerConfig {
    fn default() -> Self {
        Self {
            tol0: 1e-8,
            exponent: 2.1,
            max_iter: 100,
            exact_quadratic: true,
            dual_newton: true,
        }
    }
}

impl InnerConfig {
    pub fn stop_at(&self, k: usize) -> InnerStop {
        InnerStop {
            tol: self.tol0 / (k.max(1) as f64).powf(self.exponent),
            max_iter: self.max_iter,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol0 >= 0.0) || !self.tol0.is_finite() {
            return Err(Error::invalid("inner.tol0", "must be finite and >= 0"));
        }
        if self.max_iter == 0 {
            return Err(Error::invalid("inner.max_iter", "must be >= 1"));
        }
        Ok(())
    }
}

/// Per-run inner solve machinery: cached `‖A‖²`, the dense fast path when the
/// subproblem objective is quadratic, and the tolerance schedule.
pub(crate) struct InnerEngine {
    a_norm_sq: f64,
    quadratic: Option<QuadraticSolver>,
    config: InnerConfig,
    /// Whether the smooth part of a composite objective stays inside the
    /// subproblem (as opposed to being linearized by the caller).
    keep_smooth: bool,
    newton: bool,
    /// Last dual variable of the Newton path, used as the next warm start.
    warm: RefCell<Option<DVector<f64>>>,
}

impl InnerEngine {
    pub(crate) fn new(p: &ProblemSpec, config: InnerConfig, keep_smooth: bool) -> Result<Self> {
        config.validate()?;
        let a = p.constraint().a();
        let quadratic = if config.exact_quadratic {
            if keep_smooth {
                p.as_quadratic().map(|(h, lin)| QuadraticSolver::new(h, lin, a))
            } else {
                p.nonsmooth_part().quadratic_curvature().map(|c| {
                    let n = p.dim();
                    QuadraticSolver::new(DMatrix::identity(n, n) * c, DVector::zeros(n), a)
                })
            }
        } else {
            None
        };
        // an identically zero f2 is dropped from the subproblem
        let keep_smooth = keep_smooth && p.smooth_part().is_some_and(|q| !q.is_zero());
        let newton = config.dual_newton && quadratic.is_none() && !keep_smooth;
        Ok(Self {
            a_norm_sq: spectral_norm(a, 1e-12).powi(2),
            quadratic,
            config,
            keep_smooth,
            newton,
            warm: RefCell::new(None),
        })
    }

    pub(crate) fn is_exact(&self) -> bool {
        self.quadratic.is_some()
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn solve(
        &self,
        p: &ProblemSpec,
        metric: &Metric,
        c1: f64,
        x_bar: DVector<f64>,
        c2: f64,
        eta: DVector<f64>,
        g: DVector<f64>,
        x0: &DVector<f64>,
        k: usize,
    ) -> Result<InnerReport> {
        let smooth = if self.keep_smooth {
            p.smooth_part().map(|s| s as &dyn SmoothOracle)
        } else {
            None
        };
        let sub = CompositeSubproblem {
            prox_part: p.nonsmooth_part(),
            smooth_part: smooth,
            metric,
            c1,
            x_bar,
            c2,
            eta,
            g,
            a: p.constraint().a(),
            a_norm_sq: self.a_norm_sq,
        };
        if let Some(q) = &self.quadratic {
            return q.solve(&sub);
        }
        let stop = self.config.stop_at(k);
        if self.newton && sub.c1 > 0.0 && metric.diagonal(x0.len()).is_some_and(|d| d.iter().all(|v| *v > 0.0)) {
            let u0 = self.warm.borrow_mut().take().unwrap_or_else(|| DVector::zeros(sub.eta.len()));
            let (report, u) = dual_newton(&sub, p.nonsmooth_part(), &u0, stop)?;
            *self.warm.borrow_mut() = Some(u);
            return Ok(report);
        }
        fista(&sub, x0, stop)
    }
}
