//! TOML run configuration.
//!
//! ```toml
//! [run]
//! max_iter = 1000
//! stop_res = 1e-4
//!
//! [inner]
//! tol0 = 1e-8
//! exponent = 2.1
//!
//! [fipd]
//! alpha = 3
//! delta = 0.5
//! theta = 2
//! beta0 = 5
//! schedule = "recurrence"   # or "constant", "checked" (with betas = [...])
//! metric = "identity"       # or "scaled" (metric_scale), "diagonal" (metric_diag), "lipschitz"
//!
//! [dynamics]
//! alpha = 3
//! delta = 0.5
//! mu = 1
//! eta = 0
//! t0 = 1
//! t_end = 1000
//! tol = 1e-8                # adaptive stepping; omit for fixed steps (dt)
//! ```
//!
//! Every key is optional. Unknown keys are rejected, and errors carry the
//! line they refer to.

use anyhow::{anyhow, bail, Result};
use serde::Deserialize;

use pdflow::baselines::{AlmConfig, LinAlmConfig};
use pdflow::dynamics::{BetaFn, DynamicConfig, Perturbation, Stepping};
use pdflow::fipd::{BetaSchedule, FipdConfig};
use pdflow::ilpd::IlpdConfig;
use pdflow::inner::InnerConfig;
use pdflow::{DVector, LoopControl, Metric, ProblemSpec};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub max_iter: Option<usize>,
    pub stop_res: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InnerSection {
    pub tol0: Option<f64>,
    pub exponent: Option<f64>,
    pub max_iter: Option<usize>,
    pub exact_quadratic: Option<bool>,
    pub dual_newton: Option<bool>,
}

/// The `metric`, `metric_scale` and `metric_diag` keys of a solver section.
pub struct MetricKeys<'a> {
    pub metric: Option<&'a str>,
    pub metric_scale: Option<f64>,
    pub metric_diag: Option<&'a [f64]>,
}

macro_rules! metric_keys {
    ($s:expr) => {
        MetricKeys {
            metric: $s.metric.as_deref(),
            metric_scale: $s.metric_scale,
            metric_diag: $s.metric_diag.as_deref(),
        }
    };
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FipdSection {
    pub alpha: Option<f64>,
    pub delta: Option<f64>,
    pub theta: Option<f64>,
    pub beta0: Option<f64>,
    pub schedule: Option<String>,
    pub betas: Option<Vec<f64>>,
    pub metric: Option<String>,
    pub metric_scale: Option<f64>,
    pub metric_diag: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IlpdSection {
    pub alpha: Option<f64>,
    pub delta: Option<f64>,
    pub beta: Option<f64>,
    pub strict: Option<bool>,
    pub metric: Option<String>,
    pub metric_scale: Option<f64>,
    pub metric_diag: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlmSection {
    pub sigma: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinAlmSection {
    pub sigma: Option<f64>,
    pub metric: Option<String>,
    pub metric_scale: Option<f64>,
    pub metric_diag: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsSection {
    pub alpha: Option<f64>,
    pub delta: Option<f64>,
    pub mu: Option<f64>,
    pub eta: Option<f64>,
    pub t0: Option<f64>,
    pub t_end: Option<f64>,
    pub dt: Option<f64>,
    pub tol: Option<f64>,
    pub samples: Option<usize>,
    /// `ε(t) = c·1 / t^p`.
    pub perturbation_c: Option<f64>,
    pub perturbation_p: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub inner: InnerSection,
    #[serde(default)]
    pub fipd: FipdSection,
    #[serde(default)]
    pub ilpd: IlpdSection,
    #[serde(default)]
    pub alm: AlmSection,
    #[serde(default)]
    pub lin_alm: LinAlmSection,
    #[serde(default)]
    pub dynamics: DynamicsSection,
}

/// Parsed configuration plus the source text, kept for error locations.
#[derive(Debug, Default)]
pub struct Config {
    pub file: ConfigFile,
    pub text: String,
    pub name: String,
}

/// Loop settings after command-line overrides.
#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    pub max_iter: Option<usize>,
    pub stop_res: Option<f64>,
    pub timing: bool,
}

impl Config {
    pub fn parse(text: &str, name: &str) -> Result<Self> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| line_of_offset(text, s.start));
            match line {
                Some(l) => anyhow!("{name}:{l}: {}", e.message()),
                None => anyhow!("{name}: {}", e.message()),
            }
        })?;
        Ok(Self {
            file,
            text: text.to_string(),
            name: name.to_string(),
        })
    }

    /// 1-based line of `key` inside `[section]`, falling back to the section
    /// header, then to line 1.
    pub fn line_of(&self, section: &str, key: &str) -> usize {
        let mut current = String::new();
        let mut header = None;
        for (i, raw) in self.text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                current = name.trim().to_string();
                if current == section {
                    header = Some(i + 1);
                }
                continue;
            }
            if current == section {
                if let Some((k, _)) = line.split_once('=') {
                    if k.trim() == key {
                        return i + 1;
                    }
                }
            }
        }
        header.unwrap_or(1)
    }

    fn fail(&self, section: &str, key: &str, message: impl std::fmt::Display) -> anyhow::Error {
        anyhow!("{}:{}: [{section}] {key}: {message}", self.name, self.line_of(section, key))
    }

    /// Turns a library validation error into a located config error.
    fn locate(&self, section: &str, err: pdflow::Error) -> anyhow::Error {
        match &err {
            pdflow::Error::InvalidParameter { name, reason } => {
                let (sec, key) = match *name {
                    "max_outer" => ("run", "max_iter"),
                    n if n.starts_with("inner.") => ("inner", &n[6..]),
                    "M" | "metric" => (section, "metric"),
                    "schedule" => (section, "betas"),
                    n => (section, n),
                };
                self.fail(sec, key, reason)
            }
            pdflow::Error::ScheduleViolation { .. } => self.fail(section, "betas", &err),
            pdflow::Error::MetricTooSmall { .. } => self.fail(section, "metric", &err),
            pdflow::Error::DimensionMismatch { operand: "metric diagonal", .. } => self.fail(section, "metric_diag", &err),
            _ => anyhow!("{}: [{section}]: {err}", self.name),
        }
    }

    fn control(&self, opts: &RunOptions) -> LoopControl {
        let d = LoopControl::default();
        LoopControl {
            max_outer: opts.max_iter.or(self.file.run.max_iter).unwrap_or(d.max_outer),
            stop_res: opts.stop_res.or(self.file.run.stop_res).unwrap_or(d.stop_res),
            record_time: opts.timing,
        }
    }

    fn inner(&self) -> InnerConfig {
        let s = &self.file.inner;
        let d = InnerConfig::default();
        InnerConfig {
            tol0: s.tol0.unwrap_or(d.tol0),
            exponent: s.exponent.unwrap_or(d.exponent),
            max_iter: s.max_iter.unwrap_or(d.max_iter),
            exact_quadratic: s.exact_quadratic.unwrap_or(d.exact_quadratic),
            dual_newton: s.dual_newton.unwrap_or(d.dual_newton),
        }
    }

    /// `lipschitz` means `scale·L·Id` with `L` the smooth part's constant
    /// (identity when there is no smooth part).
    fn metric(&self, section: &str, keys: MetricKeys<'_>, default: &str, lipschitz_scale: f64, p: &ProblemSpec) -> Result<Metric> {
        let kind = keys.metric.unwrap_or(default);
        Ok(match kind {
            "identity" => Metric::Identity,
            "scaled" => Metric::ScaledIdentity(
                keys.metric_scale
                    .ok_or_else(|| self.fail(section, "metric", "'scaled' needs metric_scale"))?,
            ),
            "diagonal" => Metric::Diagonal(DVector::from_vec(
                keys.metric_diag
                    .map(<[f64]>::to_vec)
                    .ok_or_else(|| self.fail(section, "metric", "'diagonal' needs metric_diag"))?,
            )),
            "lipschitz" => {
                let l = p.smooth_lipschitz() * lipschitz_scale;
                if l > 0.0 {
                    Metric::ScaledIdentity(l)
                } else {
                    Metric::Identity
                }
            }
            other => return Err(self.fail(section, "metric", format!("unknown metric '{other}'"))),
        })
    }

    pub fn fipd(&self, p: &ProblemSpec, opts: &RunOptions) -> Result<FipdConfig> {
        let s = &self.file.fipd;
        let d = FipdConfig::theta2_preset();
        let schedule = match s.schedule.as_deref().unwrap_or("recurrence") {
            "recurrence" => BetaSchedule::Recurrence,
            "constant" => BetaSchedule::Constant,
            "checked" => BetaSchedule::InequalityChecked(
                s.betas
                    .clone()
                    .ok_or_else(|| self.fail("fipd", "schedule", "'checked' needs betas = [...]"))?,
            ),
            other => return Err(self.fail("fipd", "schedule", format!("unknown schedule '{other}'"))),
        };
        let cfg = FipdConfig {
            alpha: s.alpha.unwrap_or(d.alpha),
            delta: s.delta.unwrap_or(d.delta),
            theta: s.theta.unwrap_or(d.theta),
            beta0: s.beta0.unwrap_or(d.beta0),
            schedule,
            metric: self.metric("fipd", metric_keys!(s), "identity", 1.0, p)?,
            inner: self.inner(),
            control: self.control(opts),
        };
        cfg.validate(p.dim()).map_err(|e| self.locate("fipd", e))?;
        Ok(cfg)
    }

    pub fn ilpd(&self, p: &ProblemSpec, opts: &RunOptions) -> Result<IlpdConfig> {
        let s = &self.file.ilpd;
        let d = IlpdConfig::default();
        let beta = s.beta.unwrap_or(d.beta);
        let cfg = IlpdConfig {
            alpha: s.alpha.unwrap_or(d.alpha),
            delta: s.delta.unwrap_or(d.delta),
            beta,
            metric: self.metric("ilpd", metric_keys!(s), "lipschitz", beta, p)?,
            inner: self.inner(),
            control: self.control(opts),
            strict: s.strict.unwrap_or(d.strict),
        };
        cfg.validate(p).map_err(|e| self.locate("ilpd", e))?;
        Ok(cfg)
    }

    pub fn alm(&self, opts: &RunOptions) -> Result<AlmConfig> {
        let d = AlmConfig::default();
        let sigma = self.file.alm.sigma.unwrap_or(d.sigma);
        if !(sigma > 0.0) {
            return Err(self.fail("alm", "sigma", "must be positive"));
        }
        Ok(AlmConfig {
            sigma,
            inner: self.inner(),
            control: self.control(opts),
        })
    }

    pub fn lin_alm(&self, p: &ProblemSpec, opts: &RunOptions) -> Result<LinAlmConfig> {
        let s = &self.file.lin_alm;
        let d = LinAlmConfig::default();
        let sigma = s.sigma.unwrap_or(d.sigma);
        if !(sigma > 0.0) {
            return Err(self.fail("lin_alm", "sigma", "must be positive"));
        }
        let p_metric = self.metric("lin_alm", metric_keys!(s), "lipschitz", 1.0, p)?;
        p_metric.validate(p.dim()).map_err(|e| self.locate("lin_alm", e))?;
        Ok(LinAlmConfig {
            sigma,
            p_metric,
            inner: self.inner(),
            control: self.control(opts),
        })
    }

    pub fn dynamics(&self, n: usize) -> Result<DynamicConfig> {
        let s = &self.file.dynamics;
        let d = DynamicConfig::default();
        let (mu, eta) = match d.beta {
            BetaFn::PowerLaw { mu, eta } => (s.mu.unwrap_or(mu), s.eta.unwrap_or(eta)),
            _ => unreachable!("default scaling is a power law"),
        };
        let stepping = match (s.dt, s.tol) {
            (Some(_), Some(_)) => bail!(self.fail("dynamics", "tol", "set either dt or tol, not both")),
            (Some(dt), None) => Stepping::Fixed(Some(dt)),
            (None, Some(tol)) => Stepping::Adaptive { tol },
            (None, None) => Stepping::Fixed(None),
        };
        let perturbation = match (s.perturbation_c, s.perturbation_p) {
            (None, None) => Perturbation::Zero,
            (Some(c), Some(p)) => Perturbation::InversePower {
                c: DVector::from_element(n, c),
                p,
            },
            _ => bail!(self.fail("dynamics", "perturbation_c", "needs both perturbation_c and perturbation_p")),
        };
        let cfg = DynamicConfig {
            alpha: s.alpha.unwrap_or(d.alpha),
            delta: s.delta.unwrap_or(d.delta),
            beta: BetaFn::PowerLaw { mu, eta },
            perturbation,
            t0: s.t0.unwrap_or(d.t0),
            t_end: s.t_end.unwrap_or(d.t_end),
            stepping,
            samples: s.samples.unwrap_or(d.samples),
        };
        cfg.validate().map_err(|e| self.locate("dynamics", e))?;
        Ok(cfg)
    }
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}
