//! Seeded instance generators, accuracy metrics, rate fits and high-accuracy
//! reference solutions for the benchmark families.
//!
//! Randomness comes from `ChaCha8Rng` seeded with the instance seed; each
//! independent draw (matrix, support, values, noise, ...) uses its own stream
//! via `set_stream`, so changing one part of a generator never shifts another.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::problem::{kkt_residual, LinearConstraint, Objective, ProblemSpec, Quadratic, SaddleCertificate};
use crate::prox::SeparableProx;

/// Regularization weights of the l1/l2 benchmark grid.
pub const TAU_GRID: [f64; 4] = [0.1, 0.5, 1.0, 1.2];

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn gaussian_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    // column-major fill, matching nalgebra's storage order
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(r))
}

fn gaussian_vector(r: &mut ChaCha8Rng, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |_, _| StandardNormal.sample(r))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Desk,
    Full,
}

impl Scale {
    /// `(m, n)` of the l1/l2 family.
    pub fn l1l2_dims(self) -> (usize, usize) {
        match self {
            Scale::Desk => (150, 300),
            Scale::Full => (1500, 3000),
        }
    }

    /// `(m, n)` of the QP family.
    pub fn qp_dims(self) -> (usize, usize) {
        match self {
            Scale::Desk => (50, 100),
            Scale::Full => (500, 1000),
        }
    }
}

/// `min ‖x‖₁ + (τ/2)‖x‖²  s.t.  Ax = b` with a planted dense signal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct L1L2Spec {
    pub m: usize,
    pub n: usize,
    pub tau: f64,
    pub nonzero_fraction: f64,
    pub noise_norm: f64,
    pub seed: u64,
}

impl L1L2Spec {
    pub fn new(m: usize, n: usize, tau: f64, seed: u64) -> Self {
        Self {
            m,
            n,
            tau,
            nonzero_fraction: 0.9,
            noise_norm: 1e-5,
            seed,
        }
    }

    pub fn at_scale(scale: Scale, tau: f64, seed: u64) -> Self {
        let (m, n) = scale.l1l2_dims();
        Self::new(m, n, tau, seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 || self.m > self.n {
            return Err(Error::invalid("m", "need 1 <= m <= n"));
        }
        if !(self.tau >= 0.0) || !self.tau.is_finite() {
            return Err(Error::invalid("tau", "must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.nonzero_fraction) {
            return Err(Error::invalid("nonzero_fraction", "must lie in [0, 1]"));
        }
        if !(self.noise_norm >= 0.0) || !self.noise_norm.is_finite() {
            return Err(Error::invalid("noise_norm", "must be >= 0"));
        }
        Ok(())
    }

    pub fn nonzeros(&self) -> usize {
        (self.nonzero_fraction * self.n as f64).round() as usize
    }
}

/// Returns the problem and the planted signal `x*`.
pub fn gen_l1l2(spec: &L1L2Spec) -> Result<(ProblemSpec, DVector<f64>)> {
    spec.validate()?;
    let (m, n) = (spec.m, spec.n);
    let a = gaussian_matrix(&mut rng(spec.seed, 0), m, n);
    let support = sample(&mut rng(spec.seed, 1), n, spec.nonzeros());
    let mut values = rng(spec.seed, 2);
    let mut x = DVector::zeros(n);
    let mut idx = support.into_vec();
    idx.sort_unstable();
    for i in idx {
        let z: f64 = StandardNormal.sample(&mut values);
        // N(0, 4)
        x[i] = 2.0 * z;
    }
    let mut b = &a * &x;
    if spec.noise_norm > 0.0 {
        let w = gaussian_vector(&mut rng(spec.seed, 3), m);
        let norm = w.norm();
        if norm > 0.0 {
            b += w * (spec.noise_norm / norm);
        }
    }
    let p = ProblemSpec::new(
        LinearConstraint::new(a, b)?,
        Objective::Prox(SeparableProx::elastic_net(spec.tau)?),
    )?;
    Ok((p, x))
}

/// Nonnegative QP `min ½xᵀQx + qᵀx  s.t.  Ax = b, x ≥ 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QpSpec {
    pub m: usize,
    pub n: usize,
    pub seed: u64,
}

impl QpSpec {
    pub fn at_scale(scale: Scale, seed: u64) -> Self {
        let (m, n) = scale.qp_dims();
        Self { m, n, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n <= self.m {
            return Err(Error::invalid("n", "need n > m >= 1"));
        }
        Ok(())
    }
}

/// Returns the problem and the nonnegative point `z` with `Az = b` used to
/// build `b`.
pub fn gen_qp(spec: &QpSpec) -> Result<(ProblemSpec, DVector<f64>)> {
    spec.validate()?;
    let (m, n) = (spec.m, spec.n);
    let h = gaussian_matrix(&mut rng(spec.seed, 0), n, n);
    let mut q = h.tr_mul(&h) * 2.0;
    // exact symmetry regardless of summation order
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (q[(i, j)] + q[(j, i)]);
            q[(i, j)] = v;
            q[(j, i)] = v;
        }
    }
    let q_vec = gaussian_vector(&mut rng(spec.seed, 1), n);
    let bmat = gaussian_matrix(&mut rng(spec.seed, 2), m, n - m);
    let mut a = DMatrix::zeros(m, n);
    a.view_mut((0, 0), (m, n - m)).copy_from(&bmat);
    for i in 0..m {
        a[(i, n - m + i)] = 1.0;
    }
    let z = gaussian_vector(&mut rng(spec.seed, 3), n).abs();
    let b = &a * &z;
    let p = ProblemSpec::new(
        LinearConstraint::new(a, b)?,
        Objective::Composite {
            nonsmooth: SeparableProx::NonnegIndicator,
            smooth: Quadratic::new(q, q_vec, 0.0)?,
        },
    )?;
    Ok((p, z))
}

/// Smooth test instance `½‖x − c‖²` subject to `Ax = b`, with `A` Gaussian
/// scaled by `1/√n`, returned with its exact saddle point.
pub fn gen_least_distance(m: usize, n: usize, seed: u64) -> Result<(ProblemSpec, SaddleCertificate)> {
    if m == 0 || m > n {
        return Err(Error::invalid("m", "need 1 <= m <= n"));
    }
    let a = gaussian_matrix(&mut rng(seed, 0), m, n) / (n as f64).sqrt();
    let b = gaussian_vector(&mut rng(seed, 1), m);
    let c = gaussian_vector(&mut rng(seed, 2), n);
    // x* = c − Aᵀλ*, Ax* = b  ⇒  AAᵀλ* = Ac − b
    let lambda_star = (&a * a.transpose())
        .cholesky()
        .ok_or(Error::invalid("A", "rows are linearly dependent"))?
        .solve(&(&a * &c - &b));
    let x_star = &c - a.transpose() * &lambda_star;
    let p = ProblemSpec::new(
        LinearConstraint::new(a, b)?,
        Objective::Composite {
            nonsmooth: SeparableProx::Zero,
            smooth: Quadratic::distance_to(&c),
        },
    )?;
    Ok((p, SaddleCertificate { x_star, lambda_star }))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    /// `‖x − x*‖/‖x*‖`.
    pub rel: f64,
    /// `‖Ax − b‖`.
    pub res: f64,
    /// `log10(‖x* − mean(x*)‖² / ‖x − x*‖²)`; `+∞` when `x = x*`.
    pub snr: f64,
    pub snr_saturated: bool,
    pub iterations: usize,
    pub time_s: f64,
}

pub fn compute_metrics(x: &DVector<f64>, truth: &DVector<f64>, constraint: &LinearConstraint) -> Result<MetricsReport> {
    constraint.check_primal(x)?;
    constraint.check_primal(truth)?;
    let norm = truth.norm();
    if norm == 0.0 {
        return Err(Error::invalid("ground truth", "has zero norm"));
    }
    let err = (x - truth).norm();
    let centered = truth.add_scalar(-truth.mean()).norm_squared();
    let snr = (centered / (err * err)).log10();
    Ok(MetricsReport {
        rel: err / norm,
        res: constraint.violation(x),
        snr,
        snr_saturated: snr == f64::INFINITY,
        iterations: 0,
        time_s: 0.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub used: usize,
    /// Points in range dropped because the quantity was not positive.
    pub dropped: usize,
}

/// Least-squares slope of `log q` against `log k` over `k ∈ [k_min, k_max]`.
pub fn rate_slope(ks: &[f64], values: &[f64], k_min: f64, k_max: f64) -> Result<SlopeFit> {
    if ks.len() != values.len() {
        return Err(Error::DimensionMismatch {
            operand: "values",
            expected: ks.len(),
            found: values.len(),
        });
    }
    if !(k_min >= 1.0 && k_max > k_min) {
        return Err(Error::invalid("k_min", "need 1 <= k_min < k_max"));
    }
    let mut pts = Vec::new();
    let mut dropped = 0;
    for (&k, &v) in ks.iter().zip(values) {
        if k < k_min || k > k_max {
            continue;
        }
        if v > 0.0 && v.is_finite() {
            pts.push((k.ln(), v.ln()));
        } else {
            dropped += 1;
        }
    }
    if pts.len() < 10 {
        return Err(Error::TooFewPoints { usable: pts.len() });
    }
    let nf = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let slope = sxy / sxx;
    Ok(SlopeFit {
        slope,
        intercept: my - slope * mx,
        used: pts.len(),
        dropped,
    })
}

/// `max / median` of a series, the boundedness statistic used for scaled
/// error traces. NaN for an empty series.
pub fn spread_ratio(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let mid = v.len() / 2;
    let median = if v.len() % 2 == 0 { 0.5 * (v[mid - 1] + v[mid]) } else { v[mid] };
    v[v.len() - 1] / median
}

/// Solves the square KKT system `[[H, Bᵀ], [B, 0]] [x; λ] = [r; b]`.
fn kkt_solve(h: &DMatrix<f64>, bmat: &DMatrix<f64>, r: &DVector<f64>, b: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
    let (k, m) = (h.nrows(), bmat.nrows());
    let mut sys = DMatrix::zeros(k + m, k + m);
    sys.view_mut((0, 0), (k, k)).copy_from(h);
    sys.view_mut((0, k), (k, m)).copy_from(&bmat.transpose());
    sys.view_mut((k, 0), (m, k)).copy_from(bmat);
    let mut rhs = DVector::zeros(k + m);
    rhs.rows_mut(0, k).copy_from(r);
    rhs.rows_mut(k, m).copy_from(b);
    let sol = sys.lu().solve(&rhs).ok_or(Error::SingularSystem)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem);
    }
    Ok((sol.rows(0, k).into_owned(), sol.rows(k, m).into_owned()))
}

fn columns(a: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), idx.len(), |r, c| a[(r, idx[c])])
}

/// Turns an approximate elastic-net solution into an exact KKT pair by
/// solving the linear system on the identified support and sign pattern,
/// then repairing the active set until the optimality conditions hold.
pub fn polish_l1l2(p: &ProblemSpec, x_approx: &DVector<f64>, tol: f64) -> Result<SaddleCertificate> {
    let tau = match p.nonsmooth_part() {
        SeparableProx::ElasticNet { tau } => *tau,
        SeparableProx::L1 => 0.0,
        _ => return Err(Error::invalid("objective", "expected an l1 or elastic-net objective")),
    };
    if p.smooth_part().is_some() {
        return Err(Error::invalid("objective", "expected a prox-only objective"));
    }
    let a = p.constraint().a();
    let n = p.dim();
    let scale = x_approx.amax().max(1.0);
    let mut sign: Vec<f64> = x_approx
        .iter()
        .map(|&v| if v.abs() > 1e-8 * scale { v.signum() } else { 0.0 })
        .collect();
    for _ in 0..4 * n {
        let support: Vec<usize> = (0..n).filter(|&i| sign[i] != 0.0).collect();
        let a_s = columns(a, &support);
        let h = DMatrix::identity(support.len(), support.len()) * tau;
        let r = DVector::from_iterator(support.len(), support.iter().map(|&i| -sign[i]));
        let (xs, lam) = kkt_solve(&h, &a_s, &r, p.constraint().b())?;
        // sign consistency on the support
        let flipped = support
            .iter()
            .zip(xs.iter())
            .filter(|(&i, &v)| v * sign[i] <= 0.0)
            .map(|(&i, &v)| (i, v.abs()))
            .max_by(|a, b| a.1.total_cmp(&b.1));
        if let Some((i, _)) = flipped {
            sign[i] = 0.0;
            continue;
        }
        let corr = a.tr_mul(&lam);
        let worst = (0..n)
            .filter(|&j| sign[j] == 0.0)
            .map(|j| (j, corr[j].abs()))
            .filter(|&(_, c)| c > 1.0 + tol)
            .max_by(|a, b| a.1.total_cmp(&b.1));
        if let Some((j, _)) = worst {
            sign[j] = -corr[j].signum();
            continue;
        }
        let mut x = DVector::zeros(n);
        for (&i, &v) in support.iter().zip(xs.iter()) {
            x[i] = v;
        }
        return SaddleCertificate::verify(p, x, lam, tol.max(1e-9) * (1.0 + scale));
    }
    Err(Error::invalid("polish", "active-set repair did not settle"))
}

/// Exact KKT pair for the nonnegative QP from an approximate solution, by
/// the same active-set strategy on the free variables.
pub fn polish_qp(p: &ProblemSpec, x_approx: &DVector<f64>, tol: f64) -> Result<SaddleCertificate> {
    if *p.nonsmooth_part() != SeparableProx::NonnegIndicator {
        return Err(Error::invalid("objective", "expected a nonnegativity constraint"));
    }
    let quad = p
        .smooth_part()
        .ok_or(Error::invalid("objective", "expected a quadratic smooth part"))?;
    let (q, qv) = (quad.q_mat(), quad.q_vec());
    let a = p.constraint().a();
    let n = p.dim();
    let scale = x_approx.amax().max(1.0);
    let mut free: Vec<bool> = x_approx.iter().map(|&v| v > 1e-8 * scale).collect();
    for _ in 0..4 * n {
        let idx: Vec<usize> = (0..n).filter(|&i| free[i]).collect();
        let h = DMatrix::from_fn(idx.len(), idx.len(), |r, c| q[(idx[r], idx[c])]);
        let a_f = columns(a, &idx);
        let r = DVector::from_iterator(idx.len(), idx.iter().map(|&i| -qv[i]));
        let (xf, lam) = kkt_solve(&h, &a_f, &r, p.constraint().b())?;
        let negative = idx
            .iter()
            .zip(xf.iter())
            .filter(|(_, &v)| v < 0.0)
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(&i, _)| i);
        if let Some(i) = negative {
            free[i] = false;
            continue;
        }
        let mut x = DVector::zeros(n);
        for (&i, &v) in idx.iter().zip(xf.iter()) {
            x[i] = v;
        }
        let s = q * &x + qv + a.tr_mul(&lam);
        let worst = (0..n)
            .filter(|&j| !free[j] && s[j] < -tol)
            .min_by(|&i, &j| s[i].total_cmp(&s[j]));
        if let Some(j) = worst {
            free[j] = true;
            continue;
        }
        return SaddleCertificate::verify(p, x, lam, tol.max(1e-9) * (1.0 + scale));
    }
    Err(Error::invalid("polish", "active-set repair did not settle"))
}

/// Saddle point of an explicit quadratic objective from the KKT system
/// `[H Aᵀ; A 0][x; λ] = [−c; b]`.
pub fn quadratic_saddle(p: &ProblemSpec) -> Result<SaddleCertificate> {
    let (h, c) = p
        .as_quadratic()
        .ok_or(Error::invalid("objective", "not an explicit quadratic"))?;
    let (n, m) = (p.dim(), p.n_constraints());
    let a = p.constraint().a();
    let mut kkt = DMatrix::zeros(n + m, n + m);
    kkt.view_mut((0, 0), (n, n)).copy_from(&h);
    kkt.view_mut((0, n), (n, m)).copy_from(&a.transpose());
    kkt.view_mut((n, 0), (m, n)).copy_from(a);
    let mut rhs = DVector::zeros(n + m);
    rhs.rows_mut(0, n).copy_from(&(-c));
    rhs.rows_mut(n, m).copy_from(p.constraint().b());
    let sol = kkt
        .lu()
        .solve(&rhs)
        .ok_or(Error::invalid("objective", "KKT system is singular"))?;
    let scale = 1.0 + h.amax() + a.amax() + rhs.amax();
    SaddleCertificate::verify(p, sol.rows(0, n).into_owned(), sol.rows(n, m).into_owned(), 1e-8 * scale)
}

/// Largest KKT residual of a pair (probe step 1).
pub fn kkt_error(p: &ProblemSpec, cert: &SaddleCertificate) -> Result<f64> {
    let r = kkt_residual(p, &cert.x_star, &cert.lambda_star, 1.0)?;
    Ok(r.primal.max(r.dual))
}
