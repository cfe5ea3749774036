use std::collections::BTreeSet;
use std::path::PathBuf;

use serde::Serialize;
use serde_json::{json, Value};
use thermofew::dynamics::stream_rng;
use thermofew::{
    compare_histogram, first_law_residual, pushforward_invariance, run_ensemble, run_trajectory_streaming,
    stationarity_residual, ConstrainedSystem, DensityModel, Error, PhaseState, ThermoPoint,
};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult, EXIT_NUMERICAL, EXIT_OK, EXIT_VERIFICATION};
use crate::output::{
    fmt_f64, trajectory_header, trajectory_row, write_json, PendingFile, ENSEMBLE_JSON, ENSEMBLE_JSONL, REPORT_JSON,
    SUMMARY_JSON, THERMO_CSV, THERMO_JSON, TRAJECTORY_CSV,
};

/// Attempts allowed per requested on-surface state.
const DRAW_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Verify,
    Thermo,
    Sweep,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Verify => "verify",
            Command::Thermo => "thermo",
            Command::Sweep => "sweep",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Outcome {
    pub command: &'static str,
    pub exit_code: i32,
    pub outputs: Vec<PathBuf>,
    pub summary: Value,
}

pub fn run(command: Command, cfg: &RunConfig) -> CliResult<Outcome> {
    match command {
        Command::Simulate => simulate(cfg),
        Command::Verify => verify(cfg),
        Command::Thermo => thermo(cfg),
        Command::Sweep => sweep(cfg),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulateSummary {
    pub seed: u64,
    pub steps: usize,
    pub samples: usize,
    pub initial_constraint: f64,
    pub final_constraint: f64,
    pub max_constraint_drift: f64,
    pub projections: usize,
    pub mean_energy: f64,
    pub min_energy: f64,
    pub max_energy: f64,
}

pub fn simulate(cfg: &RunConfig) -> CliResult<Outcome> {
    let seed = cfg.seed("simulate")?;
    let sys = cfg.system()?;
    let s0 = cfg.ensemble.sampler.draw(&sys, &mut stream_rng(seed, 0))?;
    let initial_constraint = sys.constraint_value(&s0)?;
    let mut csv = PendingFile::create(&cfg.output.dir, TRAJECTORY_CSV)?;
    csv.write_line(&trajectory_header(sys.model().n_dof()))?;
    let mut io_err = None;
    let (mut sum, mut n, mut lo, mut hi) = (0.0, 0usize, f64::INFINITY, f64::NEG_INFINITY);
    let stats = run_trajectory_streaming(&sys, &s0, &cfg.integrator, |smp| {
        if io_err.is_none() {
            io_err = csv.write_line(&trajectory_row(smp)).err();
        }
        sum += smp.energy;
        n += 1;
        lo = lo.min(smp.energy);
        hi = hi.max(smp.energy);
    })?;
    if let Some(e) = io_err {
        return Err(e);
    }
    let traj = csv.commit()?;
    let summary = SimulateSummary {
        seed,
        steps: stats.steps,
        samples: n,
        initial_constraint,
        final_constraint: stats.final_constraint,
        max_constraint_drift: stats.max_drift,
        projections: stats.projections,
        mean_energy: sum / n as f64,
        min_energy: lo,
        max_energy: hi,
    };
    let json_path = write_json(&cfg.output.dir, SUMMARY_JSON, &summary)?;
    Ok(Outcome {
        command: "simulate",
        exit_code: EXIT_OK,
        outputs: vec![traj, json_path],
        summary: json!(summary),
    })
}

/// Ensemble run: `n_traj` trajectories, one summary line each.
pub fn sweep(cfg: &RunConfig) -> CliResult<Outcome> {
    let seed = cfg.seed("sweep")?;
    let sys = cfg.system()?;
    let mut ens = run_ensemble(&sys, &cfg.ensemble.sampler, &cfg.integrator, cfg.ensemble.n_traj, seed)?;
    ens.summaries.sort_by_key(|s| s.index);
    ens.failures.sort_by_key(|f| f.0);
    let mut lines = PendingFile::create(&cfg.output.dir, ENSEMBLE_JSONL)?;
    for s in &ens.summaries {
        let line = json!({
            "index": s.index,
            "mean_energy": s.mean_energy,
            "steps": s.stats.steps,
            "max_constraint_drift": s.stats.max_drift,
            "projections": s.stats.projections,
            "final_constraint": s.stats.final_constraint,
            "q0": s.initial.q,
            "p0": s.initial.p,
        });
        lines.write_line(&line.to_string())?;
    }
    for (index, err) in &ens.failures {
        lines.write_line(&json!({ "index": index, "error": err.to_string() }).to_string())?;
    }
    let jsonl = lines.commit()?;
    let done = ens.summaries.len();
    let summary = json!({
        "seed": seed,
        "n_traj": cfg.ensemble.n_traj,
        "completed": done,
        "failed": ens.failures.len(),
        "mean_energy": if done > 0 {
            ens.summaries.iter().map(|s| s.mean_energy).sum::<f64>() / done as f64
        } else {
            f64::NAN
        },
        "max_constraint_drift": ens.summaries.iter().map(|s| s.stats.max_drift).fold(0.0, f64::max),
    });
    let json_path = write_json(&cfg.output.dir, ENSEMBLE_JSON, &summary)?;
    Ok(Outcome {
        command: "sweep",
        exit_code: if ens.failures.is_empty() { EXIT_OK } else { EXIT_NUMERICAL },
        outputs: vec![jsonl, json_path],
        summary,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub measured: Option<f64>,
    pub tolerance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Check {
    fn below(name: &'static str, measured: f64, tolerance: f64) -> Self {
        Self {
            name,
            passed: measured < tolerance,
            measured: Some(measured),
            tolerance: Some(tolerance),
            detail: None,
            error: None,
        }
    }

    fn failed(name: &'static str, err: impl ToString) -> Self {
        Self {
            name,
            passed: false,
            measured: None,
            tolerance: None,
            detail: None,
            error: Some(err.to_string()),
        }
    }

    fn from_result(name: &'static str, r: thermofew::Result<Check>) -> Self {
        r.unwrap_or_else(|e| Check::failed(name, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub seed: Option<u64>,
    pub passed: bool,
    pub checks: Vec<Check>,
}

/// Draws `n` states on the constraint surface (and inside the window, if
/// any) from consecutive streams of `seed`.
pub fn surface_states(cfg: &RunConfig, sys: &ConstrainedSystem, n: usize, seed: u64) -> thermofew::Result<Vec<PhaseState>> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n * DRAW_ATTEMPTS {
        let s = match cfg.ensemble.sampler.draw(sys, &mut stream_rng(seed, i as u64)) {
            Ok(s) => s,
            Err(e) if e.is_numerical() => continue,
            Err(e) => return Err(e),
        };
        let h = sys.model().hamiltonian(&s)?;
        if cfg.window.is_some_and(|w| !w.contains(h)) {
            continue;
        }
        out.push(s);
        if out.len() == n {
            return Ok(out);
        }
    }
    Err(Error::Contract(format!(
        "only {} of {n} on-surface states found in {} draws",
        out.len(),
        n * DRAW_ATTEMPTS
    )))
}

pub fn closure_check(sys: &ConstrainedSystem, states: &[PhaseState], tolerance: f64) -> thermofew::Result<Check> {
    let mut worst: f64 = 0.0;
    for s in states {
        let (r, bp) = sys.closure_residual(s)?;
        worst = worst.max(r.abs() / (bp.abs() + 1.0));
    }
    Ok(Check::below("closure", worst, tolerance))
}

pub fn stationarity_check(
    dm: &DensityModel,
    sys: &ConstrainedSystem,
    states: &[PhaseState],
    tolerance: f64,
) -> thermofew::Result<Check> {
    let mut worst: f64 = 0.0;
    for s in states {
        worst = worst.max(stationarity_residual(dm, sys, s)?.normalized);
    }
    Ok(Check::below("stationarity", worst, tolerance))
}

fn thermo_points(cfg: &RunConfig) -> CliResult<(Vec<thermofew::Result<ThermoPoint>>, Option<thermofew::Result<thermofew::LawResiduals>>)> {
    let sweep = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::config("sweep", "required by `thermo`"))?;
    let setup = cfg.thermo_setup(cfg.model.build()?);
    let points = setup.sweep(&sweep.points);
    let residuals = if points.len() >= 3 {
        let ok: Option<Vec<ThermoPoint>> = points.iter().map(|p| p.as_ref().ok().cloned()).collect();
        ok.map(|pts| first_law_residual(&setup, &pts))
    } else {
        None
    };
    Ok((points, residuals))
}

pub fn verify(cfg: &RunConfig) -> CliResult<Outcome> {
    let v = &cfg.verify;
    let seed = if v.any_stochastic() { Some(cfg.seed("verify")?) } else { None };
    let sys = cfg.system()?;
    let mut checks = Vec::new();
    if v.closure || v.stationarity {
        let seed = seed.expect("stochastic checks have a seed");
        match surface_states(cfg, &sys, v.n_states, seed) {
            Ok(states) => {
                if v.closure {
                    checks.push(Check::from_result("closure", closure_check(&sys, &states, v.closure_tolerance)));
                }
                if v.stationarity {
                    let family = v.density.clone().unwrap_or_else(|| cfg.beta.clone());
                    let r = DensityModel::new(sys.model().clone(), family, cfg.window)
                        .and_then(|dm| stationarity_check(&dm, &sys, &states, v.stationarity_tolerance));
                    checks.push(Check::from_result("stationarity", r));
                }
            }
            Err(e) => {
                for (on, name) in [(v.closure, "closure"), (v.stationarity, "stationarity")] {
                    if on {
                        checks.push(Check::failed(name, &e));
                    }
                }
            }
        }
    }
    let dm = || DensityModel::new(sys.model().clone(), cfg.beta.clone(), cfg.window);
    if v.pushforward {
        let r = dm().and_then(|dm| {
            let rep = pushforward_invariance(
                &dm,
                &sys,
                &cfg.integrator,
                v.pushforward_samples,
                v.pushforward_steps,
                seed.expect("stochastic checks have a seed"),
            )?;
            Ok(Check {
                name: "pushforward",
                passed: rep.passed(),
                measured: Some(rep.ks_two_sample),
                tolerance: Some(rep.ks_two_sample_critical),
                detail: Some(json!({
                    "horizon_steps": rep.horizon_steps,
                    "before_ks": rep.before.ks_statistic,
                    "after_ks": rep.after.ks_statistic,
                    "after_chi_square": rep.after.chi_square,
                    "chi_square_critical": rep.after.chi_square_critical,
                })),
                error: None,
            })
        });
        checks.push(Check::from_result("pushforward", r));
    }
    if v.histogram {
        let r = dm().and_then(|dm| {
            let ens = run_ensemble(
                &sys,
                &cfg.ensemble.sampler,
                &cfg.integrator,
                cfg.ensemble.n_traj,
                seed.expect("stochastic checks have a seed"),
            )?;
            let cmp = compare_histogram(&dm, &ens.pooled_energies(), v.bins)?;
            Ok(Check {
                name: "histogram",
                passed: cmp.passed() && ens.failures.is_empty(),
                measured: Some(cmp.ks_statistic),
                tolerance: Some(cmp.ks_critical),
                detail: Some(json!({
                    "n_samples": cmp.n_samples,
                    "chi_square": cmp.chi_square,
                    "dof": cmp.dof,
                    "chi_square_critical": cmp.chi_square_critical,
                    "failed_trajectories": ens.failures.len(),
                })),
                error: None,
            })
        });
        checks.push(Check::from_result("histogram", r));
    }
    if v.thermo {
        let (points, residuals) = thermo_points(cfg)?;
        let check = match (points.iter().find_map(|p| p.as_ref().err()), residuals) {
            (Some(e), _) => Check::failed("thermo", e),
            (None, Some(Ok(res))) => {
                let worst = res.first_law.iter().copied().fold(0.0, f64::max);
                Check::below("thermo", worst, v.first_law_tolerance)
            }
            (None, Some(Err(e))) => Check::failed("thermo", e),
            (None, None) => Check::failed("thermo", "first-law residuals need at least 3 sweep points"),
        };
        checks.push(check);
    }
    let report = VerifyReport {
        seed,
        passed: checks.iter().all(|c| c.passed),
        checks,
    };
    let path = write_json(&cfg.output.dir, REPORT_JSON, &report)?;
    Ok(Outcome {
        command: "verify",
        exit_code: if report.passed { EXIT_OK } else { EXIT_VERIFICATION },
        outputs: vec![path],
        summary: json!(report),
    })
}

pub fn thermo(cfg: &RunConfig) -> CliResult<Outcome> {
    let (points, residuals) = thermo_points(cfg)?;
    let keys: BTreeSet<String> = points
        .iter()
        .flatten()
        .flat_map(|p| p.x.keys().cloned())
        .collect();
    let forces: Vec<String> = cfg.model.build()?.param_names();
    let mut csv = PendingFile::create(&cfg.output.dir, THERMO_CSV)?;
    let mut header: Vec<String> = keys.iter().map(|k| format!("x_{k}")).collect();
    header.extend(["T", "U", "S", "Z", "lnZ"].map(String::from));
    header.extend(forces.iter().map(|k| format!("X_{k}")));
    csv.write_line(&header.join(","))?;
    for p in points.iter().flatten() {
        let mut row: Vec<f64> = keys.iter().map(|k| p.x.get(k).copied().unwrap_or(f64::NAN)).collect();
        row.extend([
            p.temperature,
            p.internal_energy,
            p.entropy,
            p.partition_function,
            p.ln_partition_function,
        ]);
        row.extend(forces.iter().map(|k| p.forces.get(k).copied().unwrap_or(f64::NAN)));
        csv.write_line(&row.into_iter().map(fmt_f64).collect::<Vec<_>>().join(","))?;
    }
    let csv_path = csv.commit()?;
    let failed = points.iter().filter(|p| p.is_err()).count();
    let entries: Vec<Value> = points
        .iter()
        .enumerate()
        .map(|(i, p)| match p {
            Ok(p) => json!({ "index": i, "point": p }),
            Err(e) => json!({ "index": i, "error": e.to_string() }),
        })
        .collect();
    let (res_value, res_error) = match residuals {
        Some(Ok(r)) => (json!(r), None),
        Some(Err(e)) => (Value::Null, Some(e.to_string())),
        None => (Value::Null, None),
    };
    let report = json!({
        "points": entries,
        "residuals": res_value,
        "residual_error": res_error,
        "failed_points": failed,
    });
    let json_path = write_json(&cfg.output.dir, THERMO_JSON, &report)?;
    Ok(Outcome {
        command: "thermo",
        exit_code: if failed == 0 && res_error.is_none() { EXIT_OK } else { EXIT_NUMERICAL },
        outputs: vec![csv_path, json_path],
        summary: report,
    })
}
