//! Fast primal-dual solvers for linearly constrained convex optimization
//!
//! ```text
//! min f(x)  s.t.  Ax = b          or          min f1(x) + f2(x)  s.t.  Ax = b
//! ```
//!
//! built from the time discretization of the inertial primal-dual dynamic
//!
//! ```text
//! ẍ + (α/t)ẋ = −β(t)(∇f(x) + Aᵀλ) + ε(t)
//! λ̇ = tβ(t)(A(x + δtẋ) − b)
//! ```
//!
//! The crate contains the accelerated primal-dual method with time-varying
//! scaling ([`fipd`]), its linearized variant for composite objectives
//! ([`ilpd`]), the classical and linearized augmented Lagrangian methods
//! ([`baselines`]), a numerical integrator for the dynamic ([`dynamics`]),
//! and seeded instance generators and rate-fitting utilities
//! ([`experiments`]). Every solver reports per-iteration [`TraceRecord`]s and
//! can expose the Lyapunov energy that certifies its convergence rate.

pub mod baselines;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod fipd;
pub mod format;
pub mod ilpd;
pub mod inner;
pub mod metric;
pub mod problem;
pub mod prox;
pub mod trace;

pub use error::{Error, Result};
pub use metric::Metric;
pub use problem::{kkt_residual, lagrangian, LinearConstraint, Objective, ProblemSpec, Quadratic, SaddleCertificate};
pub use prox::SeparableProx;
pub use trace::{IterateState, LoopControl, RunResult, RunStatus, TraceRecord};

pub use nalgebra::{DMatrix, DVector};
