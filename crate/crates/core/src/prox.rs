//! Closed-form proximal operators for the separable functions used by the
//! experiments: `‖x‖₁`, the elastic net `‖x‖₁ + (τ/2)‖x‖²`, a ridge term
//! `(τ/2)‖x‖²`, the indicator of the nonnegative orthant, and zero.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::problem::ProxOracle;

/// Componentwise `sign(xᵢ)·max(|xᵢ|−γ, 0)`.
pub fn soft_threshold(x: &DVector<f64>, gamma: f64) -> Result<DVector<f64>> {
    check_nonneg("gamma", gamma)?;
    Ok(x.map(|v| shrink(v, gamma)))
}

/// Prox of `γ(‖·‖₁ + (τ/2)‖·‖²)`: threshold then shrink by `1/(1+γτ)`.
pub fn prox_elastic_net(x: &DVector<f64>, gamma: f64, tau: f64) -> Result<DVector<f64>> {
    check_nonneg("gamma", gamma)?;
    check_nonneg("tau", tau)?;
    let scale = 1.0 / (1.0 + gamma * tau);
    Ok(x.map(|v| shrink(v, gamma) * scale))
}

pub fn project_nonneg(x: &DVector<f64>) -> DVector<f64> {
    x.map(|v| v.max(0.0))
}

#[inline]
fn shrink(v: f64, gamma: f64) -> f64 {
    if v > gamma {
        v - gamma
    } else if v < -gamma {
        v + gamma
    } else {
        0.0
    }
}

fn check_nonneg(name: &'static str, value: f64) -> Result<()> {
    if value.is_nan() || value < 0.0 {
        return Err(Error::invalid(name, format!("must be >= 0, got {value}")));
    }
    Ok(())
}

/// A separable convex function with a closed-form prox.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SeparableProx {
    Zero,
    L1,
    ElasticNet { tau: f64 },
    /// `(τ/2)‖x‖²`.
    Ridge { tau: f64 },
    NonnegIndicator,
}

impl SeparableProx {
    pub fn elastic_net(tau: f64) -> Result<Self> {
        check_nonneg("tau", tau)?;
        Ok(SeparableProx::ElasticNet { tau })
    }

    pub fn ridge(tau: f64) -> Result<Self> {
        check_nonneg("tau", tau)?;
        Ok(SeparableProx::Ridge { tau })
    }

    /// Curvature of the function when it is a pure quadratic `(c/2)‖x‖²`
    /// (including `c = 0`), `None` otherwise.
    pub fn quadratic_curvature(&self) -> Option<f64> {
        match self {
            SeparableProx::Zero => Some(0.0),
            SeparableProx::Ridge { tau } => Some(*tau),
            _ => None,
        }
    }

    pub fn is_differentiable(&self) -> bool {
        self.quadratic_curvature().is_some()
    }

    /// Gradient, defined only for the differentiable kinds.
    pub fn gradient(&self, x: &DVector<f64>) -> Option<DVector<f64>> {
        self.quadratic_curvature().map(|c| x * c)
    }

    /// Scalar prox for one coordinate.
    #[inline]
    pub fn prox_scalar(&self, v: f64, gamma: f64) -> f64 {
        match *self {
            SeparableProx::Zero => v,
            SeparableProx::L1 => shrink(v, gamma),
            SeparableProx::ElasticNet { tau } => shrink(v, gamma) / (1.0 + gamma * tau),
            SeparableProx::Ridge { tau } => v / (1.0 + gamma * tau),
            SeparableProx::NonnegIndicator => v.max(0.0),
        }
    }

    /// Derivative of `v ↦ prox_scalar(v, γ)` (an element of the Clarke
    /// Jacobian at the kinks).
    #[inline]
    pub fn prox_derivative_scalar(&self, v: f64, gamma: f64) -> f64 {
        match *self {
            SeparableProx::Zero => 1.0,
            SeparableProx::L1 => f64::from(u8::from(v.abs() > gamma)),
            SeparableProx::ElasticNet { tau } => {
                if v.abs() > gamma {
                    1.0 / (1.0 + gamma * tau)
                } else {
                    0.0
                }
            }
            SeparableProx::Ridge { tau } => 1.0 / (1.0 + gamma * tau),
            SeparableProx::NonnegIndicator => f64::from(u8::from(v > 0.0)),
        }
    }

    #[inline]
    pub fn value_scalar(&self, v: f64) -> f64 {
        match *self {
            SeparableProx::Zero => 0.0,
            SeparableProx::L1 => v.abs(),
            SeparableProx::ElasticNet { tau } => v.abs() + 0.5 * tau * v * v,
            SeparableProx::Ridge { tau } => 0.5 * tau * v * v,
            SeparableProx::NonnegIndicator => {
                if v >= 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    /// Distance from `-g` to the subdifferential at the scalar `p`, i.e. how far
    /// `0 ∈ ∂h(p) + g` is from holding for this coordinate.
    pub fn subgradient_gap(&self, p: f64, g: f64) -> f64 {
        let interval = |lo: f64, hi: f64| {
            let t = -g;
            if t < lo {
                lo - t
            } else if t > hi {
                t - hi
            } else {
                0.0
            }
        };
        match *self {
            SeparableProx::Zero => g.abs(),
            SeparableProx::Ridge { tau } => (tau * p + g).abs(),
            SeparableProx::L1 | SeparableProx::ElasticNet { .. } => {
                let tau = match *self {
                    SeparableProx::ElasticNet { tau } => tau,
                    _ => 0.0,
                };
                let g = g + tau * p;
                if p > 0.0 {
                    (1.0 + g).abs()
                } else if p < 0.0 {
                    (g - 1.0).abs()
                } else {
                    let t = -g;
                    (t.abs() - 1.0).max(0.0)
                }
            }
            SeparableProx::NonnegIndicator => {
                if p > 0.0 {
                    g.abs()
                } else if p == 0.0 {
                    interval(f64::NEG_INFINITY, 0.0)
                } else {
                    f64::INFINITY
                }
            }
        }
    }
}

impl ProxOracle for SeparableProx {
    fn value(&self, x: &DVector<f64>) -> f64 {
        x.iter().map(|&v| self.value_scalar(v)).sum()
    }

    fn prox(&self, x: &DVector<f64>, gamma: f64) -> DVector<f64> {
        x.map(|v| self.prox_scalar(v, gamma))
    }
}
