//! Linearly constrained convex programs `min f(x) s.t. Ax = b`, where `f` is
//! either a prox-friendly function or a composite `f1 + f2` with `f2` smooth.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::inner::spectral_norm;
use crate::prox::SeparableProx;

/// A convex function known through its value and proximal map.
pub trait ProxOracle: Send + Sync {
    /// Extended-real value; `+∞` outside the domain.
    fn value(&self, x: &DVector<f64>) -> f64;
    /// `argmin_u f(u) + ‖u − x‖²/(2γ)`.
    fn prox(&self, x: &DVector<f64>, gamma: f64) -> DVector<f64>;
}

/// A convex function with an `L`-Lipschitz gradient.
pub trait SmoothOracle: Send + Sync {
    fn value(&self, x: &DVector<f64>) -> f64;
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;
    fn lipschitz(&self) -> f64;
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    a: DMatrix<f64>,
    b: DVector<f64>,
}

impl LinearConstraint {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        if a.nrows() == 0 || a.ncols() == 0 {
            return Err(Error::invalid("A", "constraint matrix must have m >= 1 and n >= 1"));
        }
        if b.len() != a.nrows() {
            return Err(Error::DimensionMismatch {
                operand: "b",
                expected: a.nrows(),
                found: b.len(),
            });
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("constraint data"));
        }
        Ok(Self { a, b })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn rows(&self) -> usize {
        self.a.nrows()
    }

    pub fn cols(&self) -> usize {
        self.a.ncols()
    }

    /// `Ax − b`.
    pub fn residual(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a * x - &self.b
    }

    pub fn violation(&self, x: &DVector<f64>) -> f64 {
        self.residual(x).norm()
    }

    pub(crate) fn check_primal(&self, x: &DVector<f64>) -> Result<()> {
        check_len("x", self.cols(), x.len())
    }

    pub(crate) fn check_dual(&self, lam: &DVector<f64>) -> Result<()> {
        check_len("lambda", self.rows(), lam.len())
    }
}

pub(crate) fn check_len(operand: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch {
            operand,
            expected,
            found,
        });
    }
    Ok(())
}

/// `½xᵀQx + qᵀx + c` with symmetric positive semidefinite `Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadratic {
    q_mat: DMatrix<f64>,
    q_vec: DVector<f64>,
    constant: f64,
    lipschitz: f64,
}

impl Quadratic {
    pub fn new(q_mat: DMatrix<f64>, q_vec: DVector<f64>, constant: f64) -> Result<Self> {
        let n = q_vec.len();
        if q_mat.nrows() != n || q_mat.ncols() != n {
            return Err(Error::DimensionMismatch {
                operand: "Q",
                expected: n,
                found: q_mat.nrows(),
            });
        }
        if q_mat.iter().chain(q_vec.iter()).any(|v| !v.is_finite()) || !constant.is_finite() {
            return Err(Error::NonFinite("quadratic data"));
        }
        let scale = q_mat.abs().max().max(1.0);
        if (&q_mat - q_mat.transpose()).abs().max() > 1e-12 * scale {
            return Err(Error::invalid("Q", "must be symmetric"));
        }
        let lipschitz = spectral_norm(&q_mat, 1e-12);
        Ok(Self {
            q_mat,
            q_vec,
            constant,
            lipschitz,
        })
    }

    pub fn zero(n: usize) -> Self {
        Self {
            q_mat: DMatrix::zeros(n, n),
            q_vec: DVector::zeros(n),
            constant: 0.0,
            lipschitz: 0.0,
        }
    }

    /// `½‖x − c‖²`.
    pub fn distance_to(c: &DVector<f64>) -> Self {
        let n = c.len();
        Self {
            q_mat: DMatrix::identity(n, n),
            q_vec: -c,
            constant: 0.5 * c.norm_squared(),
            lipschitz: 1.0,
        }
    }

    pub fn q_mat(&self) -> &DMatrix<f64> {
        &self.q_mat
    }

    pub fn q_vec(&self) -> &DVector<f64> {
        &self.q_vec
    }

    pub fn constant(&self) -> f64 {
        self.constant
    }

    pub fn is_zero(&self) -> bool {
        self.constant == 0.0 && self.q_mat.iter().all(|v| *v == 0.0) && self.q_vec.iter().all(|v| *v == 0.0)
    }

    pub fn dim(&self) -> usize {
        self.q_vec.len()
    }
}

impl SmoothOracle for Quadratic {
    fn value(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.q_mat * x)) + self.q_vec.dot(x) + self.constant
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.q_mat * x + &self.q_vec
    }

    fn lipschitz(&self) -> f64 {
        self.lipschitz
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Objective {
    Prox(SeparableProx),
    Composite {
        nonsmooth: SeparableProx,
        smooth: Quadratic,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    constraint: LinearConstraint,
    objective: Objective,
}

impl ProblemSpec {
    pub fn new(constraint: LinearConstraint, objective: Objective) -> Result<Self> {
        if let Objective::Composite { smooth, .. } = &objective {
            check_len("f2", constraint.cols(), smooth.dim())?;
        }
        Ok(Self {
            constraint,
            objective,
        })
    }

    pub fn constraint(&self) -> &LinearConstraint {
        &self.constraint
    }

    pub fn objective(&self) -> &Objective {
        &self.objective
    }

    pub fn dim(&self) -> usize {
        self.constraint.cols()
    }

    pub fn n_constraints(&self) -> usize {
        self.constraint.rows()
    }

    pub fn nonsmooth_part(&self) -> &SeparableProx {
        match &self.objective {
            Objective::Prox(p) => p,
            Objective::Composite { nonsmooth, .. } => nonsmooth,
        }
    }

    pub fn smooth_part(&self) -> Option<&Quadratic> {
        match &self.objective {
            Objective::Prox(_) => None,
            Objective::Composite { smooth, .. } => Some(smooth),
        }
    }

    /// `f(x)`, `f1(x) + f2(x)` for composite objectives.
    pub fn objective_value(&self, x: &DVector<f64>) -> f64 {
        let mut v = self.nonsmooth_part().value(x);
        if let Some(s) = self.smooth_part() {
            v += s.value(x);
        }
        v
    }

    /// True when the whole objective is differentiable.
    pub fn is_smooth(&self) -> bool {
        self.nonsmooth_part().is_differentiable()
    }

    /// `∇f(x)` for a differentiable objective.
    pub fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let mut g = self
            .nonsmooth_part()
            .gradient(x)
            .ok_or(Error::Nonsmooth("the nonsmooth part has no gradient"))?;
        if let Some(s) = self.smooth_part() {
            g += s.gradient(x);
        }
        Ok(g)
    }

    /// When `f` is an explicit quadratic, returns its Hessian and linear term.
    pub fn as_quadratic(&self) -> Option<(DMatrix<f64>, DVector<f64>)> {
        let curvature = self.nonsmooth_part().quadratic_curvature()?;
        let n = self.dim();
        let (mut h, lin) = match self.smooth_part() {
            Some(s) => (s.q_mat().clone(), s.q_vec().clone()),
            None => (DMatrix::zeros(n, n), DVector::zeros(n)),
        };
        for i in 0..n {
            h[(i, i)] += curvature;
        }
        Some((h, lin))
    }

    /// Lipschitz constant of the smooth part (0 without one).
    pub fn smooth_lipschitz(&self) -> f64 {
        self.smooth_part().map_or(0.0, |s| s.lipschitz())
    }
}

/// A primal-dual pair claimed to satisfy `−Aᵀλ* ∈ ∂f(x*)`, `Ax* = b`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaddleCertificate {
    pub x_star: DVector<f64>,
    pub lambda_star: DVector<f64>,
}

impl SaddleCertificate {
    /// Verifies the pair against `tol` in both KKT residuals (probe step 1).
    pub fn verify(p: &ProblemSpec, x_star: DVector<f64>, lambda_star: DVector<f64>, tol: f64) -> Result<Self> {
        let res = kkt_residual(p, &x_star, &lambda_star, 1.0)?;
        if res.primal > tol || res.dual > tol {
            return Err(Error::invalid(
                "certificate",
                format!("KKT residuals ({:e}, {:e}) exceed {tol:e}", res.primal, res.dual),
            ));
        }
        Ok(Self { x_star, lambda_star })
    }

    /// `L(x*, λ*) = f(x*)` up to the (vanishing) constraint term.
    pub fn optimal_value(&self, p: &ProblemSpec) -> f64 {
        lagrangian_unchecked(p, &self.x_star, &self.lambda_star)
    }

    /// `L(x, λ*) − L(x*, λ*)`.
    pub fn lagrangian_gap(&self, p: &ProblemSpec, x: &DVector<f64>) -> f64 {
        lagrangian_unchecked(p, x, &self.lambda_star) - self.optimal_value(p)
    }
}

/// `L(x, λ) = f(x) + ⟨λ, Ax − b⟩`.
pub fn lagrangian(p: &ProblemSpec, x: &DVector<f64>, lam: &DVector<f64>) -> Result<f64> {
    p.constraint.check_primal(x)?;
    p.constraint.check_dual(lam)?;
    Ok(lagrangian_unchecked(p, x, lam))
}

pub(crate) fn lagrangian_unchecked(p: &ProblemSpec, x: &DVector<f64>, lam: &DVector<f64>) -> f64 {
    let f = p.objective_value(x);
    if f == f64::INFINITY {
        return f;
    }
    f + lam.dot(&p.constraint.residual(x))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResidual {
    pub primal: f64,
    pub dual: f64,
}

/// Primal residual `‖Ax − b‖` and the prox gradient-mapping norm
/// `(1/γ)‖x − prox_{γf1}(x − γ(∇f2(x) + Aᵀλ))‖`, which vanishes exactly when
/// `−Aᵀλ ∈ ∂f(x)`.
pub fn kkt_residual(p: &ProblemSpec, x: &DVector<f64>, lam: &DVector<f64>, gamma_probe: f64) -> Result<KktResidual> {
    p.constraint.check_primal(x)?;
    p.constraint.check_dual(lam)?;
    if !(gamma_probe > 0.0) || !gamma_probe.is_finite() {
        return Err(Error::invalid("gamma_probe", "must be positive and finite"));
    }
    if x.iter().chain(lam.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("kkt_residual input"));
    }
    let primal = p.constraint.violation(x);
    let mut direction = p.constraint.a().tr_mul(lam);
    if let Some(s) = p.smooth_part() {
        direction += s.gradient(x);
    }
    let probe = x - direction * gamma_probe;
    let mapped = p.nonsmooth_part().prox(&probe, gamma_probe);
    let dual = (x - mapped).norm() / gamma_probe;
    Ok(KktResidual { primal, dual })
}
