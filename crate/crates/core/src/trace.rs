//! Iterate state, per-iteration trace records, and the shared outer loop.

use std::io::Write;
use std::time::Instant;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::problem::{ProblemSpec, SaddleCertificate};

/// `(k, x_k, x_{k−1}, λ_k, β_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct IterateState {
    pub k: usize,
    pub x: DVector<f64>,
    pub x_prev: DVector<f64>,
    pub lam: DVector<f64>,
    pub beta: f64,
}

impl IterateState {
    /// `x_1 = x_0`, `λ_1 = λ_0`.
    pub fn initial(x0: DVector<f64>, lam0: DVector<f64>, beta: f64) -> Self {
        Self {
            k: 1,
            x_prev: x0.clone(),
            x: x0,
            lam: lam0,
            beta,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    /// Index of the iterate this record describes.
    pub k: usize,
    pub objective: f64,
    pub feasibility: f64,
    /// `L(x_k, λ*) − L(x*, λ*)` when a certificate is supplied.
    pub gap: Option<f64>,
    pub step_norm: f64,
    pub dual_step: f64,
    pub beta: f64,
    pub inner_iters: usize,
    pub eps_bound: f64,
    pub elapsed_s: f64,
}

pub const TRACE_HEADER: &str = "k,objective,feasibility,gap,step_norm,dual_step,beta,inner_iters,eps_bound,elapsed_s";

impl TraceRecord {
    pub(crate) fn describe(
        p: &ProblemSpec,
        prev: &IterateState,
        next: &IterateState,
        inner_iters: usize,
        eps_bound: f64,
    ) -> Self {
        Self {
            k: next.k,
            objective: p.objective_value(&next.x),
            feasibility: p.constraint().violation(&next.x),
            gap: None,
            step_norm: (&next.x - &prev.x).norm(),
            dual_step: (&next.lam - &prev.lam).norm(),
            beta: prev.beta,
            inner_iters,
            eps_bound,
            elapsed_s: 0.0,
        }
    }

    pub fn csv_row(&self) -> String {
        let gap = self.gap.map(|g| format!("{g:e}")).unwrap_or_default();
        format!(
            "{},{:e},{:e},{},{:e},{:e},{:e},{},{:e},{:e}",
            self.k,
            self.objective,
            self.feasibility,
            gap,
            self.step_norm,
            self.dual_step,
            self.beta,
            self.inner_iters,
            self.eps_bound,
            self.elapsed_s
        )
    }
}

pub fn write_trace_csv<W: Write>(mut w: W, trace: &[TraceRecord]) -> std::io::Result<()> {
    writeln!(w, "{TRACE_HEADER}")?;
    for r in trace {
        writeln!(w, "{}", r.csv_row())?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Converged,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    /// Final iterate on convergence, otherwise the most feasible iterate seen.
    pub x: DVector<f64>,
    pub lam: DVector<f64>,
    pub status: RunStatus,
    pub final_state: IterateState,
    pub trace: Vec<TraceRecord>,
}

impl RunResult {
    pub fn iterations(&self) -> usize {
        self.trace.len()
    }
}

/// Stopping and bookkeeping options shared by every outer loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopControl {
    pub max_outer: usize,
    /// Stop once `‖Ax_k − b‖ ≤ stop_res`; `+∞` (or NaN) disables the test so
    /// the iteration cap always binds.
    pub stop_res: f64,
    /// Fill `elapsed_s` with wall-clock time. Off by default so traces are
    /// bit-reproducible.
    pub record_time: bool,
}

impl Default for LoopControl {
    fn default() -> Self {
        Self {
            max_outer: 1000,
            stop_res: 1e-4,
            record_time: false,
        }
    }
}

impl LoopControl {
    pub fn validate(&self) -> Result<()> {
        if self.max_outer == 0 {
            return Err(Error::invalid("max_outer", "must be >= 1"));
        }
        Ok(())
    }

    fn should_stop(&self, feasibility: f64) -> bool {
        self.stop_res.is_finite() && feasibility <= self.stop_res
    }
}

/// Drives `step` from `x_1 = x_0, λ_1 = λ_0`, calling `observer` on every state
/// (including the initial one).
pub(crate) fn drive<S>(
    p: &ProblemSpec,
    control: LoopControl,
    initial: IterateState,
    certificate: Option<&SaddleCertificate>,
    observer: &mut dyn FnMut(&IterateState),
    mut step: S,
) -> Result<RunResult>
where
    S: FnMut(&IterateState) -> Result<(IterateState, TraceRecord)>,
{
    control.validate()?;
    p.constraint().check_primal(&initial.x)?;
    p.constraint().check_dual(&initial.lam)?;
    let start = Instant::now();
    let mut state = initial;
    observer(&state);
    let mut trace = Vec::with_capacity(control.max_outer.min(100_000));
    let mut best = (p.constraint().violation(&state.x), state.x.clone(), state.lam.clone());
    let mut status = RunStatus::MaxIterations;
    for _ in 0..control.max_outer {
        let k = state.k;
        let (next, mut record) = step(&state).map_err(|e| e.at_outer(k))?;
        if let Some(cert) = certificate {
            record.gap = Some(cert.lagrangian_gap(p, &next.x));
        }
        if control.record_time {
            record.elapsed_s = start.elapsed().as_secs_f64();
        }
        observer(&next);
        if record.feasibility < best.0 {
            best = (record.feasibility, next.x.clone(), next.lam.clone());
        }
        let stop = control.should_stop(record.feasibility);
        trace.push(record);
        state = next;
        if stop {
            status = RunStatus::Converged;
            break;
        }
    }
    let (x, lam) = match status {
        RunStatus::Converged => (state.x.clone(), state.lam.clone()),
        RunStatus::MaxIterations => (best.1, best.2),
    };
    Ok(RunResult {
        x,
        lam,
        status,
        final_state: state,
        trace,
    })
}
