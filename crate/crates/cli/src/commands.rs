use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::Parser;
use rayon::prelude::*;
use serde::Serialize;

use pdflow::baselines::{alm_run, linearized_alm_run};
use pdflow::dynamics::{integrate, BetaFn, DynamicState};
use pdflow::experiments::{
    compute_metrics, gen_l1l2, gen_least_distance, gen_qp, quadratic_saddle, rate_slope, L1L2Spec, QpSpec, Scale,
    TAU_GRID,
};
use pdflow::fipd;
use pdflow::format::{read_problem, write_problem, write_vector};
use pdflow::ilpd::ilpd_run;
use pdflow::trace::write_trace_csv;
use pdflow::{DVector, ProblemSpec, RunResult, RunStatus};

use crate::config::{Config, RunOptions};
use crate::manifest::RunManifest;
use crate::{Cli, Command, Common, Family, GenFamily, ScaleArg, SolverName};

pub const EXIT_OK: u8 = 0;
pub const EXIT_CAP: u8 = 2;

/// Overrides applied when repeating a manifest.
pub struct Replay {
    pub config: Option<String>,
    pub out: PathBuf,
}

pub fn execute(cli: Cli, args: Vec<String>, replay: Option<Replay>) -> Result<u8> {
    match cli.command {
        Command::Rerun { manifest, out } => {
            let m = RunManifest::read(&manifest)?;
            let mut argv = vec!["pdflow".to_string()];
            argv.extend(m.args.iter().cloned());
            let cli = Cli::try_parse_from(&argv).with_context(|| format!("{}: recorded arguments", manifest.display()))?;
            if matches!(cli.command, Command::Rerun { .. }) {
                bail!("{}: manifest records another rerun", manifest.display());
            }
            let replay = Replay {
                config: m.config,
                out: out.unwrap_or_else(|| PathBuf::from(&m.out)),
            };
            execute(cli, m.args, Some(replay))
        }
        Command::Solve { problem, solver, mut common } => {
            let config = load_config(&mut common, replay)?;
            solve(&problem, solver, &common, &config, args)
        }
        Command::Bench {
            family,
            scale,
            solvers,
            mut common,
        } => {
            let config = load_config(&mut common, replay)?;
            bench(family, scale, &solvers, &common, &config, args)
        }
        Command::Dynamics { problem, mut common } => {
            let config = load_config(&mut common, replay)?;
            dynamics(&problem, &common, &config, args)
        }
        Command::Generate {
            family,
            scale,
            tau,
            m,
            n,
            seed,
            out,
            truth,
        } => {
            generate(family, scale, tau, m, n, seed, &out, truth.as_deref())?;
            Ok(EXIT_OK)
        }
    }
}

fn load_config(common: &mut Common, replay: Option<Replay>) -> Result<Config> {
    let (text, name) = match replay {
        Some(r) => {
            common.out = r.out;
            let name = common
                .config
                .as_ref()
                .map_or_else(|| "manifest config".to_string(), |p| p.display().to_string());
            (r.config, name)
        }
        None => match &common.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
                (Some(text), path.display().to_string())
            }
            None => (None, String::new()),
        },
    };
    match text {
        Some(t) => Config::parse(&t, &name),
        None => Ok(Config::default()),
    }
}

fn options(common: &Common) -> RunOptions {
    RunOptions {
        max_iter: common.max_iter,
        stop_res: common.stop_res,
        timing: common.timing,
    }
}

fn manifest(command: &str, args: Vec<String>, common: &Common, config: &Config) -> RunManifest {
    let text = (!config.text.is_empty() || common.config.is_some()).then_some(config.text.as_str());
    RunManifest::new(command, args, common.config.as_deref(), text, common.seed, &common.out)
}

fn read(problem: &Path) -> Result<ProblemSpec> {
    read_problem(problem).map_err(|e| match e {
        pdflow::Error::Parse { line, message } => anyhow::anyhow!("{}:{line}: {message}", problem.display()),
        e => anyhow::Error::new(e).context("reading problem file"),
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_trace(path: &Path, res: &RunResult) -> Result<()> {
    let f = File::create(path).with_context(|| format!("writing {}", path.display()))?;
    write_trace_csv(BufWriter::new(f), &res.trace).with_context(|| format!("writing {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Runs one solver from the origin.
pub fn run_solver(p: &ProblemSpec, solver: SolverName, config: &Config, opts: &RunOptions) -> Result<RunResult> {
    let x0 = DVector::zeros(p.dim());
    let lam0 = DVector::zeros(p.n_constraints());
    let res = match solver {
        SolverName::Fipd => fipd::run(p, &config.fipd(p, opts)?, x0, lam0),
        SolverName::Ilpd => ilpd_run(p, &config.ilpd(p, opts)?, x0, lam0),
        SolverName::Alm => alm_run(p, &config.alm(opts)?, x0, lam0),
        SolverName::LinAlm => linearized_alm_run(p, &config.lin_alm(p, opts)?, x0, lam0),
    };
    Ok(res?)
}

fn exit_for(status: RunStatus) -> u8 {
    match status {
        RunStatus::Converged => EXIT_OK,
        RunStatus::MaxIterations => EXIT_CAP,
    }
}

fn solve(problem: &Path, solver: SolverName, common: &Common, config: &Config, args: Vec<String>) -> Result<u8> {
    let p = read(problem)?;
    let opts = options(common);
    let res = run_solver(&p, solver, config, &opts)?;
    let out = &common.out;
    create_dir(out)?;
    write_trace(&out.join("trace.csv"), &res)?;
    write_text(&out.join("solution.txt"), &write_vector(&res.x))?;
    write_text(&out.join("multiplier.txt"), &write_vector(&res.lam))?;
    manifest("solve", args, common, config).write(out)?;
    let status = match res.status {
        RunStatus::Converged => "converged",
        RunStatus::MaxIterations => "iteration cap reached",
    };
    println!(
        "{}: {status} after {} iterations, res {:e}, objective {:e}",
        solver.label(),
        res.iterations(),
        p.constraint().violation(&res.x),
        p.objective_value(&res.x)
    );
    Ok(exit_for(res.status))
}

fn scale(s: ScaleArg) -> Scale {
    match s {
        ScaleArg::Desk => Scale::Desk,
        ScaleArg::Full => Scale::Full,
    }
}

struct CellOutcome {
    status: RunStatus,
    iterations: usize,
    time_s: f64,
    res: f64,
    rel: Option<f64>,
    snr: Option<f64>,
    result: RunResult,
}

fn run_cell(
    family: Family,
    sc: Scale,
    tau: Option<f64>,
    solver: SolverName,
    seed: u64,
    config: &Config,
    opts: &RunOptions,
) -> Result<CellOutcome> {
    let (p, truth) = match family {
        Family::L1l2 => {
            let (p, x) = gen_l1l2(&L1L2Spec::at_scale(sc, tau.unwrap_or(0.0), seed))?;
            (p, Some(x))
        }
        Family::Qp => (gen_qp(&QpSpec::at_scale(sc, seed))?.0, None),
    };
    let start = Instant::now();
    let result = run_solver(&p, solver, config, opts)?;
    let time_s = if opts.timing { start.elapsed().as_secs_f64() } else { 0.0 };
    let res = p.constraint().violation(&result.x);
    let (rel, snr) = match &truth {
        Some(t) => {
            let m = compute_metrics(&result.x, t, p.constraint())?;
            (Some(m.rel), Some(m.snr))
        }
        None => (None, None),
    };
    Ok(CellOutcome {
        status: result.status,
        iterations: result.iterations(),
        time_s,
        res,
        rel,
        snr,
        result,
    })
}

pub const SUMMARY_HEADER: &str = "solver,tau,iter,time_s,res,rel,snr";

fn bench(family: Family, sc: ScaleArg, solvers: &[SolverName], common: &Common, config: &Config, args: Vec<String>) -> Result<u8> {
    if solvers.is_empty() {
        bail!("no solver given; pass --solver at least once (fipd, ilpd, alm, lin-alm)");
    }
    let sc = scale(sc);
    let opts = options(common);
    let taus: Vec<Option<f64>> = match family {
        Family::L1l2 => TAU_GRID.iter().map(|t| Some(*t)).collect(),
        Family::Qp => vec![None],
    };
    let cells: Vec<(SolverName, Option<f64>)> = solvers
        .iter()
        .flat_map(|s| taus.iter().map(move |t| (*s, *t)))
        .collect();
    let outcomes: Vec<Result<CellOutcome>> = cells
        .par_iter()
        .map(|(s, t)| run_cell(family, sc, *t, *s, common.seed, config, &opts))
        .collect();

    let out = &common.out;
    let traces = out.join("traces");
    create_dir(&traces)?;
    let mut summary = format!("{SUMMARY_HEADER}\n");
    let mut errors = String::new();
    let mut code = EXIT_OK;
    for ((solver, tau), outcome) in cells.iter().zip(outcomes) {
        let tau_text = tau.map(|t| t.to_string()).unwrap_or_default();
        match outcome {
            Ok(c) => {
                let name = match tau {
                    Some(t) => format!("{}_tau{t}.csv", solver.label()),
                    None => format!("{}.csv", solver.label()),
                };
                write_trace(&traces.join(name), &c.result)?;
                let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
                summary.push_str(&format!(
                    "{},{tau_text},{},{:e},{:e},{},{}\n",
                    solver.label(),
                    c.iterations,
                    c.time_s,
                    c.res,
                    opt(c.rel),
                    opt(c.snr)
                ));
                if c.status == RunStatus::MaxIterations && code == EXIT_OK {
                    code = EXIT_CAP;
                }
            }
            Err(e) => {
                summary.push_str(&format!("{},{tau_text},,,,,\n", solver.label()));
                errors.push_str(&format!("{} tau={tau_text}: {e:#}\n", solver.label()));
            }
        }
    }
    write_text(&out.join("summary.csv"), &summary)?;
    manifest("bench", args, common, config).write(out)?;
    print!("{summary}");
    if !errors.is_empty() {
        write_text(&out.join("errors.txt"), &errors)?;
        eprint!("{errors}");
        bail!("{} benchmark cell(s) failed; see errors.txt", errors.lines().count());
    }
    Ok(code)
}

#[derive(Debug, Serialize)]
struct SlopeReport {
    fit_t_min: f64,
    fit_t_max: f64,
    feasibility_slope: Option<f64>,
    expected_feasibility_slope: Option<f64>,
    gap_slope: Option<f64>,
    power_rate_hypothesis: bool,
    energy_decay_hypothesis: bool,
    steps: usize,
    rejected: usize,
}

fn dynamics(problem: &Path, common: &Common, config: &Config, args: Vec<String>) -> Result<u8> {
    let p = read(problem)?;
    if !p.is_smooth() {
        bail!(
            "{}: the dynamic needs a differentiable objective, but the nonsmooth part is {:?}",
            problem.display(),
            p.nonsmooth_part()
        );
    }
    let cfg = config.dynamics(p.dim())?;
    let cert = quadratic_saddle(&p).ok();
    let init = DynamicState::at_rest(cfg.t0, DVector::zeros(p.dim()), DVector::zeros(p.n_constraints()));
    let traj = integrate(&p, &cfg, init, cert.as_ref())?;

    let out = &common.out;
    create_dir(out)?;
    let path = out.join("trajectory.csv");
    let f = File::create(&path).with_context(|| format!("writing {}", path.display()))?;
    traj.write_csv(BufWriter::new(f)).with_context(|| format!("writing {}", path.display()))?;

    // fit in t/t0, which leaves slopes unchanged
    let rel_t: Vec<f64> = traj.times().iter().map(|t| t / cfg.t0).collect();
    let (lo, hi) = (10.0, cfg.t_end / cfg.t0);
    let fit = |values: Vec<f64>| rate_slope(&rel_t, &values, lo, hi).ok().map(|f| f.slope);
    let feas = fit(traj.samples.iter().map(|s| s.diagnostics.feasibility).collect());
    let gap = cert
        .as_ref()
        .and_then(|_| fit(traj.samples.iter().map(|s| s.diagnostics.gap.unwrap_or(0.0).abs()).collect()));
    let hyp = cfg.hypotheses();
    let expected = match cfg.beta {
        BetaFn::PowerLaw { eta, .. } if hyp.power_rate => Some(-(eta + 2.0)),
        _ => None,
    };
    let report = SlopeReport {
        fit_t_min: lo * cfg.t0,
        fit_t_max: cfg.t_end,
        feasibility_slope: feas,
        expected_feasibility_slope: expected,
        gap_slope: gap,
        power_rate_hypothesis: hyp.power_rate,
        energy_decay_hypothesis: hyp.energy_decay,
        steps: traj.steps,
        rejected: traj.rejected,
    };
    let text = toml::to_string(&report).context("serializing slope report")?;
    write_text(&out.join("slopes.toml"), &text)?;
    manifest("dynamics", args, common, config).write(out)?;
    print!("{text}");
    Ok(EXIT_OK)
}

#[allow(clippy::too_many_arguments)]
fn generate(family: GenFamily, sc: ScaleArg, tau: f64, m: usize, n: usize, seed: u64, out: &Path, truth: Option<&Path>) -> Result<()> {
    let (p, x) = match family {
        GenFamily::L1l2 => gen_l1l2(&L1L2Spec::at_scale(scale(sc), tau, seed))?,
        GenFamily::Qp => gen_qp(&QpSpec::at_scale(scale(sc), seed))?,
        GenFamily::Quadratic => {
            let (p, cert) = gen_least_distance(m, n, seed)?;
            (p, cert.x_star)
        }
    };
    write_text(out, &write_problem(&p))?;
    if let Some(path) = truth {
        write_text(path, &write_vector(&x))?;
    }
    Ok(())
}
