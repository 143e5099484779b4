//! Command-line front end for the closed-loop simulation.
//!
//! Three subcommands:
//!
//! - `run`: integrate one scenario and write `trajectory.csv`,
//!   `summary.json`, and a `scenario.toml` echo of the configuration.
//! - `verify`: run the four controller/filter variants plus the
//!   randomized oracle suites, print one line per check, and write
//!   `verify_report.json`.
//! - `sweep`: re-run a scenario across several values of one scalar
//!   parameter (concurrently, one output subdirectory each) and tabulate
//!   the results in `sweep_summary.csv`.
//!
//! Exit codes: 0 success, 1 check failure, 2 configuration or output-path
//! error, 3 integration abort.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use gfm_core::analysis::settle_time_into_band;
use gfm_core::sim::{csv_document, integrate, set_param, CtrlState, ScenarioConfig, SimOutput};
use gfm_core::verify::{run_verification, BAND_SLACK};
use gfm_core::{SimError, SimResult};

const EXIT_CHECK_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_ABORT: u8 = 3;

#[derive(Parser)]
#[command(
    name = "gfm",
    version,
    about = "Grid-forming inverter closed-loop simulation and verification"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Integrate one scenario and write its trajectory and summary.
    Run(RunArgs),
    /// Run every controller/filter variant and the oracle suites, then
    /// report each trajectory check.
    Verify(VerifyArgs),
    /// Integrate the scenario once per value of one scalar parameter.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario TOML; built-in defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    /// Scenario TOML; built-in defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Seed for the randomized oracle suites.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SweepArgs {
    /// Scenario TOML; built-in defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Dotted key of the parameter to sweep (e.g. controller.dads.gamma).
    #[arg(long)]
    param: String,
    /// Comma-separated list of values to sweep over.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Run(args) => cmd_run(&args),
        Cmd::Verify(args) => cmd_verify(&args),
        Cmd::Sweep(args) => cmd_sweep(&args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

/// Configuration problems (including unreadable inputs and unwritable
/// outputs) are usage errors; everything else is a mid-run abort.
fn exit_code_for(err: &SimError) -> u8 {
    match err {
        SimError::Config(_) | SimError::Io(_) => EXIT_CONFIG,
        _ => EXIT_ABORT,
    }
}

fn load_config(path: Option<&Path>) -> SimResult<ScenarioConfig> {
    let cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            ScenarioConfig::from_toml_str(&text)?
        }
        None => ScenarioConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn ensure_dir(dir: &Path) -> SimResult<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

/// JSON value for a float, with non-finite values made explicit instead
/// of JSON's silent null.
fn json_float(x: f64) -> serde_json::Value {
    if x.is_finite() {
        serde_json::json!(x)
    } else {
        serde_json::json!(x.to_string())
    }
}

fn controller_state_json(ctrl: &CtrlState) -> serde_json::Value {
    match ctrl {
        CtrlState::Dads(a) => serde_json::json!({ "z_d": a.z_d, "z_q": a.z_q }),
        CtrlState::Pi(p) => serde_json::json!({
            "gamma_d": p.gamma_d,
            "gamma_q": p.gamma_q,
            "beta_d": p.beta_d,
            "beta_q": p.beta_q,
        }),
    }
}

/// Writes the three per-run artifacts and returns the summary document.
fn write_run_artifacts(
    dir: &Path,
    cfg: &ScenarioConfig,
    out: &SimOutput,
    wall_seconds: f64,
) -> SimResult<serde_json::Value> {
    ensure_dir(dir)?;
    std::fs::write(dir.join("scenario.toml"), cfg.to_toml_string()?)?;
    std::fs::write(
        dir.join("trajectory.csv"),
        csv_document(cfg.controller.kind, &out.records),
    )?;

    let f = &out.final_state;
    let m = &out.metrics;
    let s = &out.stats;
    let summary = serde_json::json!({
        "final_time": out.final_time(),
        "wall_seconds": wall_seconds,
        "steps": {
            "accepted": s.accepted,
            "rejected": s.rejected,
            "rhs_evals": s.rhs_evals,
            "min_accepted_step": json_float(s.min_accepted_step),
            "max_accepted_step": json_float(s.max_accepted_step),
        },
        "max_i_t_norm": m.max_i_t_norm,
        "t_at_max_i_t": m.t_at_max_i_t,
        "h_initial": m.h_initial,
        "min_h_floor_margin": json_float(m.min_h_floor_margin),
        "t_at_min_h_floor_margin": m.t_at_min_h_floor_margin,
        "n_eta": out.events.n_eta(),
        "t_eta": out.events.t_eta(),
        "final_state": {
            "v_c": [f.elec.v_c.d, f.elec.v_c.q],
            "i_t": [f.elec.i_t.d, f.elec.i_t.q],
            "i_g": [f.elec.i_g.d, f.elec.i_g.q],
            "power_filters": [f.q1, f.q2, f.p1, f.p2],
            "theta": f.theta,
            "controller": controller_state_json(&f.ctrl),
        },
    });
    let mut text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    text.push('\n');
    std::fs::write(dir.join("summary.json"), text)?;
    Ok(summary)
}

fn cmd_run(args: &RunArgs) -> SimResult<u8> {
    let cfg = load_config(args.config.as_deref())?;
    let started = Instant::now();
    let out = integrate(&cfg)?;
    let wall = started.elapsed().as_secs_f64();
    write_run_artifacts(&args.out, &cfg, &out, wall)?;
    println!(
        "run complete: t = {:.6} s, {} records, {} accepted steps ({} rejected), wall {:.2} s",
        out.final_time(),
        out.records.len(),
        out.stats.accepted,
        out.stats.rejected,
        wall
    );
    println!(
        "max |i_t| = {:.6} at t = {:.4} s; limiter episodes: {} totalling {:.4} s",
        out.metrics.max_i_t_norm,
        out.metrics.t_at_max_i_t,
        out.events.n_eta(),
        out.events.t_eta()
    );
    println!("artifacts in {}", args.out.display());
    Ok(0)
}

fn cmd_verify(args: &VerifyArgs) -> SimResult<u8> {
    let cfg = load_config(args.config.as_deref())?;
    ensure_dir(&args.out)?;
    let report = run_verification(&cfg, args.seed)?;
    for check in &report.checks {
        println!("{}", check.line());
    }
    let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
    text.push('\n');
    std::fs::write(args.out.join("verify_report.json"), text)?;
    let failed = report.checks.iter().filter(|c| !c.pass).count();
    println!(
        "verify: {}/{} checks passed; report in {}",
        report.checks.len() - failed,
        report.checks.len(),
        args.out.display()
    );
    Ok(if report.pass { 0 } else { EXIT_CHECK_FAILURE })
}

/// One row of the sweep summary.
struct SweepRow {
    value: f64,
    settle_time: f64,
    max_i_t_norm: f64,
    final_z: [f64; 2],
    n_eta: usize,
    t_eta: f64,
}

fn sweep_row(cfg: &ScenarioConfig, value: f64, out: &SimOutput) -> SweepRow {
    let final_z = match out.final_state.ctrl {
        CtrlState::Dads(a) => [a.z_d, a.z_q],
        CtrlState::Pi(_) => [f64::NAN, f64::NAN],
    };
    SweepRow {
        value,
        settle_time: settle_time_into_band(&out.records, cfg.controller.dads.epsilon, BAND_SLACK),
        max_i_t_norm: out.metrics.max_i_t_norm,
        final_z,
        n_eta: out.events.n_eta(),
        t_eta: out.events.t_eta(),
    }
}

fn cmd_sweep(args: &SweepArgs) -> SimResult<u8> {
    let base = load_config(args.config.as_deref())?;
    if args.values.is_empty() {
        return Err(SimError::Config("sweep requires at least one value".into()));
    }

    // Resolve every run's configuration up front so an unknown key or an
    // out-of-domain value is rejected before any integration starts.
    let mut runs = Vec::with_capacity(args.values.len());
    for &value in &args.values {
        let mut cfg = base.clone();
        set_param(&mut cfg, &args.param, value)?;
        cfg.validate()?;
        runs.push((value, cfg));
    }
    ensure_dir(&args.out)?;

    let mut results: Vec<Option<SimResult<SweepRow>>> = Vec::new();
    results.resize_with(runs.len(), || None);
    std::thread::scope(|scope| {
        for (slot, (idx, (value, cfg))) in results.iter_mut().zip(runs.iter().enumerate()) {
            let dir = args.out.join(format!("run_{idx:02}"));
            scope.spawn(move || {
                let started = Instant::now();
                *slot = Some(integrate(cfg).and_then(|out| {
                    let wall = started.elapsed().as_secs_f64();
                    write_run_artifacts(&dir, cfg, &out, wall)?;
                    Ok(sweep_row(cfg, *value, &out))
                }));
            });
        }
    });

    let mut rows = Vec::with_capacity(runs.len());
    for (idx, slot) in results.into_iter().enumerate() {
        match slot.expect("every sweep run reports") {
            Ok(row) => rows.push(row),
            Err(err) => {
                eprintln!("error: sweep run {idx:02} ({} = {}): {err}", args.param, runs[idx].0);
                return Ok(exit_code_for(&err));
            }
        }
    }

    let mut csv = String::from("value,settle_time,max_i_t_norm,final_z_d,final_z_q,n_eta,t_eta\n");
    println!(
        "{:>14} {:>12} {:>12} {:>10} {:>10} {:>6} {:>10}",
        args.param, "settle_time", "max_i_t", "final_z_d", "final_z_q", "n_eta", "t_eta"
    );
    for r in &rows {
        csv.push_str(&format!(
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{:.16e}\n",
            r.value, r.settle_time, r.max_i_t_norm, r.final_z[0], r.final_z[1], r.n_eta, r.t_eta
        ));
        println!(
            "{:>14.6e} {:>12.4} {:>12.6} {:>10.4} {:>10.4} {:>6} {:>10.4}",
            r.value, r.settle_time, r.max_i_t_norm, r.final_z[0], r.final_z[1], r.n_eta, r.t_eta
        );
    }
    std::fs::write(args.out.join("sweep_summary.csv"), csv)?;
    println!("sweep artifacts in {}", args.out.display());
    Ok(0)
}
