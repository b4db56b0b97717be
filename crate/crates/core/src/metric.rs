//! Positive semidefinite metrics `‖x‖²_M = xᵀMx` used in the proximal terms.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Metric {
    Identity,
    ScaledIdentity(f64),
    Diagonal(DVector<f64>),
    DenseSpd(DMatrix<f64>),
}

impl Default for Metric {
    fn default() -> Self {
        Metric::Identity
    }
}

impl Metric {
    pub fn validate(&self, n: usize) -> Result<()> {
        match self {
            Metric::Identity => Ok(()),
            Metric::ScaledIdentity(k) => {
                if !k.is_finite() || *k < 0.0 {
                    return Err(Error::invalid("metric", format!("scale {k} must be finite and >= 0")));
                }
                Ok(())
            }
            Metric::Diagonal(d) => {
                if d.len() != n {
                    return Err(Error::DimensionMismatch {
                        operand: "metric diagonal",
                        expected: n,
                        found: d.len(),
                    });
                }
                if d.iter().any(|v| !v.is_finite() || *v < 0.0) {
                    return Err(Error::invalid("metric", "diagonal entries must be finite and >= 0"));
                }
                Ok(())
            }
            Metric::DenseSpd(m) => {
                if m.nrows() != n || m.ncols() != n {
                    return Err(Error::DimensionMismatch {
                        operand: "metric matrix",
                        expected: n,
                        found: m.nrows(),
                    });
                }
                let asym = (m - m.transpose()).abs().max();
                if asym > 1e-12 * m.abs().max().max(1.0) {
                    return Err(Error::invalid("metric", "dense metric must be symmetric"));
                }
                if self.lambda_min() < -1e-10 * self.lambda_max().max(1.0) {
                    return Err(Error::invalid("metric", "dense metric must be positive semidefinite"));
                }
                Ok(())
            }
        }
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            Metric::Identity => v.clone(),
            Metric::ScaledIdentity(k) => v * *k,
            Metric::Diagonal(d) => v.component_mul(d),
            Metric::DenseSpd(m) => m * v,
        }
    }

    /// `vᵀ M v`.
    pub fn norm_sq(&self, v: &DVector<f64>) -> f64 {
        match self {
            Metric::Identity => v.norm_squared(),
            Metric::ScaledIdentity(k) => k * v.norm_squared(),
            Metric::Diagonal(d) => v.iter().zip(d.iter()).map(|(x, w)| w * x * x).sum(),
            Metric::DenseSpd(m) => v.dot(&(m * v)),
        }
    }

    pub fn lambda_max(&self) -> f64 {
        match self {
            Metric::Identity => 1.0,
            Metric::ScaledIdentity(k) => *k,
            Metric::Diagonal(d) => d.max(),
            Metric::DenseSpd(m) => m.clone().symmetric_eigen().eigenvalues.max(),
        }
    }

    /// Smallest eigenvalue.
    pub fn lambda_min(&self) -> f64 {
        match self {
            Metric::Identity => 1.0,
            Metric::ScaledIdentity(k) => *k,
            Metric::Diagonal(d) => d.min(),
            Metric::DenseSpd(m) => dense_lambda_min(m),
        }
    }

    /// Diagonal of `M` when the metric is diagonal.
    pub fn diagonal(&self, n: usize) -> Option<DVector<f64>> {
        match self {
            Metric::Identity => Some(DVector::from_element(n, 1.0)),
            Metric::ScaledIdentity(k) => Some(DVector::from_element(n, *k)),
            Metric::Diagonal(d) => Some(d.clone()),
            Metric::DenseSpd(_) => None,
        }
    }

    /// Adds `scale * M` to `mat` in place.
    pub fn add_scaled_to(&self, mat: &mut DMatrix<f64>, scale: f64) {
        let n = mat.nrows();
        match self {
            Metric::Identity => {
                for i in 0..n {
                    mat[(i, i)] += scale;
                }
            }
            Metric::ScaledIdentity(k) => {
                for i in 0..n {
                    mat[(i, i)] += scale * k;
                }
            }
            Metric::Diagonal(d) => {
                for i in 0..n {
                    mat[(i, i)] += scale * d[i];
                }
            }
            Metric::DenseSpd(m) => {
                *mat += m * scale;
            }
        }
    }

    pub fn to_dense(&self, n: usize) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(n, n);
        self.add_scaled_to(&mut out, 1.0);
        out
    }
}

fn dense_lambda_min(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigen().eigenvalues.min()
}
