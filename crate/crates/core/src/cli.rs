//! Command-line front end.
//!
//! Exit codes: 0 when every executed check holds, 1 when a check fails or
//! a batch is rejected, 2 for configuration, usage and I/O errors.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::checks::{khintchine_check, lemma_suite, plan_needs_batch, run_plan, CheckResult};
use crate::config::{parse_config_with, parse_override};
use crate::error::{Error, Result};
use crate::integrands::{validate_spec, Family};
use crate::matrix::{spectral_norm, sym_eigenvalues};
use crate::montecarlo::{derive_path_seed, run_batch, ExperimentConfig, SweepParam, Tolerances};
use crate::parallel::Execution;
use crate::report::{checks_csv, emit_report, ensure_dir, write_file, Format, Report};
use crate::simulate::{simulate_path, supermartingale_series, TimeGrid};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "mmlab",
    version,
    about = "Monte Carlo checks of matrix martingale inequalities"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Experiment configuration file.
    #[arg(long, global = true, env = "MMLAB_CONFIG")]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, env = "MMLAB_OUT", default_value = "out")]
    pub out: PathBuf,
    #[arg(
        long,
        global = true,
        env = "MMLAB_FORMAT",
        value_enum,
        default_value = "both"
    )]
    pub format: Format,
    /// Master seed, overriding the config.
    #[arg(long, global = true, env = "MMLAB_SEED")]
    pub seed: Option<u64>,
    /// Worker threads for path simulation.
    #[arg(long, global = true, env = "MMLAB_WORKERS")]
    pub workers: Option<usize>,
    /// Config override, `key=value`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Run every configured inequality check.
    Verify,
    /// Dump individual trajectories as CSV.
    Simulate,
    /// Khintchine ratio for a constant family.
    Khintchine,
    /// Repeat `verify` over one varied parameter.
    Sweep,
    /// Random instances of the two trace lemmas.
    Lemmas,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Verify => "verify",
            Command::Simulate => "simulate",
            Command::Khintchine => "khintchine",
            Command::Sweep => "sweep",
            Command::Lemmas => "lemmas",
        }
    }
}

/// Parses arguments and runs; never panics on user errors.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    run_subcommand(&cli)
}

fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Config { .. } | Error::Io(_) | Error::Validation(_) => EXIT_CONFIG,
        _ => EXIT_CHECK_FAILED,
    }
}

/// Runs a parsed invocation and returns its exit code.
pub fn run_subcommand(cli: &Cli) -> i32 {
    let started = Instant::now();
    let result = dispatch(cli);
    let elapsed = started.elapsed().as_secs_f64();
    match result {
        Ok(code) => {
            eprintln!("{}: done in {elapsed:.2} s", cli.command.name());
            code
        }
        Err(e) => {
            eprintln!("mmlab {}: {e}", cli.command.name());
            exit_code_for(&e)
        }
    }
}

fn execution(common: &CommonArgs) -> Execution {
    common
        .workers
        .map_or_else(Execution::default, Execution::with_workers)
}

fn overrides(common: &CommonArgs) -> Result<Vec<(String, String)>> {
    let mut out = common
        .set
        .iter()
        .map(|s| parse_override(s))
        .collect::<Result<Vec<_>>>()?;
    if let Some(seed) = common.seed {
        out.push(("seed".into(), seed.to_string()));
    }
    Ok(out)
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn load_config(common: &CommonArgs) -> Result<ExperimentConfig> {
    let path = common.config.as_ref().ok_or_else(|| Error::Config {
        key: "--config".into(),
        location: "command line".into(),
        message: "a configuration file is required".into(),
    })?;
    let text = read_text(path)?;
    parse_config_with(&text, &overrides(common)?).map_err(|e| match e {
        Error::Config {
            key,
            location,
            message,
        } => Error::Config {
            key,
            location: format!("{}:{location}", path.display()),
            message,
        },
        other => other,
    })
}

fn dispatch(cli: &Cli) -> Result<i32> {
    let common = &cli.common;
    match cli.command {
        Command::Verify => verify(common),
        Command::Simulate => simulate(common),
        Command::Khintchine => khintchine(common),
        Command::Sweep => sweep(common),
        Command::Lemmas => lemmas(common),
    }
}

fn summarize(report: &Report) -> i32 {
    let failed: Vec<&CheckResult> = report.checks.iter().filter(|c| !c.holds).collect();
    eprintln!(
        "{}: {} checks, {} failed, {} paths, {} excluded",
        report.subcommand,
        report.checks.len(),
        failed.len(),
        report.paths,
        report.excluded
    );
    for c in &failed {
        eprintln!(
            "  FAIL {} lhs={} rhs={} ratio={}",
            c.name,
            c.lhs.point,
            c.rhs.point,
            c.ratio.map_or_else(|| "-".into(), |r| r.to_string())
        );
    }
    if let Some(e) = &report.error {
        eprintln!("  stopped: {e}");
    }
    if report.all_hold() {
        EXIT_OK
    } else {
        EXIT_CHECK_FAILED
    }
}

/// Runs the configured checks; runtime failures become a failed report.
fn evaluate(subcommand: &str, cfg: &ExperimentConfig, exec: Execution) -> Result<Report> {
    let batch = if plan_needs_batch(cfg) {
        match run_batch(cfg, exec) {
            Ok(b) => Some(b),
            Err(e) if exit_code_for(&e) == EXIT_CONFIG => return Err(e),
            Err(e) => return Ok(Report::aborted(subcommand, Some(cfg), Vec::new(), &e)),
        }
    } else {
        None
    };
    let excluded = batch.as_ref().map_or(0, |b| b.excluded);
    match run_plan(cfg, batch.as_ref()) {
        Ok(checks) => Ok(Report::new(subcommand, Some(cfg), checks, excluded)),
        Err(e) if exit_code_for(&e) == EXIT_CONFIG => Err(e),
        Err(e) => Ok(Report::aborted(subcommand, Some(cfg), Vec::new(), &e)),
    }
}

fn verify(common: &CommonArgs) -> Result<i32> {
    let cfg = load_config(common)?;
    let report = evaluate("verify", &cfg, execution(common))?;
    emit_report(&report, common.format, &common.out, "report")?;
    Ok(summarize(&report))
}

fn khintchine(common: &CommonArgs) -> Result<i32> {
    let cfg = load_config(common)?;
    let check = khintchine_check(
        &cfg.integrand,
        cfg.khintchine_samples,
        cfg.master_seed,
        &cfg.settings(),
    )
    .map_err(|e| Error::Config {
        key: "integrand.family".into(),
        location: "config".into(),
        message: e.to_string(),
    })?;
    let report = Report::new("khintchine", Some(&cfg), vec![check], 0);
    emit_report(&report, common.format, &common.out, "khintchine")?;
    Ok(summarize(&report))
}

fn lemmas(common: &CommonArgs) -> Result<i32> {
    let (cfg, seed, instances, tol) = match &common.config {
        Some(_) => {
            let cfg = load_config(common)?;
            let (s, i, t) = (cfg.master_seed, cfg.lemma_instances, cfg.tolerances);
            (Some(cfg), s, i, t)
        }
        None => {
            let seed = common.seed.ok_or_else(|| Error::Config {
                key: "--seed".into(),
                location: "command line".into(),
                message: "lemmas needs --seed or --config".into(),
            })?;
            if !common.set.is_empty() {
                return Err(Error::Config {
                    key: "--set".into(),
                    location: "command line".into(),
                    message: "overrides need --config".into(),
                });
            }
            (None, seed, 10_000, Tolerances::default())
        }
    };
    let report = match lemma_suite(seed, instances, &tol) {
        Ok(checks) => Report::new("lemmas", cfg.as_ref(), checks, 0),
        Err(e) => Report::aborted("lemmas", cfg.as_ref(), Vec::new(), &e),
    };
    emit_report(&report, common.format, &common.out, "lemmas")?;
    Ok(summarize(&report))
}

fn simulate(common: &CommonArgs) -> Result<i32> {
    let cfg = load_config(common)?;
    ensure_dir(&common.out)?;
    for &i in &cfg.dump.paths {
        let seed = derive_path_seed(cfg.master_seed, i as u64);
        let traj = simulate_path(&cfg.integrand, &cfg.grid, seed)?;
        let series = cfg
            .dump
            .betas
            .iter()
            .map(|&b| supermartingale_series(&traj, b))
            .collect::<Result<Vec<_>>>()?;
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec![
            "step".to_string(),
            "time".into(),
            "lambda_max".into(),
            "spectral_norm".into(),
            "qv_norm".into(),
        ];
        header.extend(cfg.dump.betas.iter().map(|b| format!("supermart_beta{b}")));
        let csv_err = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(&header).map_err(csv_err)?;
        for k in 0..traj.x.len() {
            let vals = sym_eigenvalues(&traj.x[k])?;
            let mut row = vec![
                k.to_string(),
                traj.times[k].to_string(),
                vals[0].to_string(),
                vals[0].abs().max(vals[vals.len() - 1].abs()).to_string(),
                spectral_norm(&traj.qv[k])?.to_string(),
            ];
            row.extend(series.iter().map(|s| s[k].to_string()));
            w.write_record(&row).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        write_file(&common.out.join(format!("trajectory_{i}.csv")), &bytes)?;
    }
    eprintln!("simulate: wrote {} trajectories", cfg.dump.paths.len());
    Ok(EXIT_OK)
}

fn sweep_err(message: impl Into<String>) -> Error {
    Error::Config {
        key: "sweep.values".into(),
        location: "config".into(),
        message: message.into(),
    }
}

fn as_positive_integer(v: f64) -> Result<usize> {
    if v >= 1.0 && v.fract() == 0.0 && v <= usize::MAX as f64 {
        Ok(v as usize)
    } else {
        Err(sweep_err(format!("expected a positive integer, got {v}")))
    }
}

/// `base` with one parameter replaced.
pub fn apply_sweep(
    base: &ExperimentConfig,
    param: SweepParam,
    value: f64,
) -> Result<ExperimentConfig> {
    let mut cfg = base.clone();
    match param {
        SweepParam::N => {
            let n = as_positive_integer(value)?;
            let mut spec = base.integrand.spec().clone();
            match spec.family {
                Family::DiagBasis => {
                    spec.n = n;
                    spec.drivers = n;
                }
                Family::GoeLike { .. } => spec.n = n,
                _ => {
                    return Err(sweep_err(
                        "sweeping n needs the diag_basis or goe_like family",
                    ))
                }
            }
            cfg.integrand = validate_spec(spec)?;
        }
        SweepParam::P => {
            let p = as_positive_integer(value)? as u32;
            let c = &mut cfg.checks;
            let mut touched = false;
            for list in [&mut c.bdg_p, &mut c.schatten_p, &mut c.schatten_rect_p] {
                if !list.is_empty() {
                    *list = vec![p];
                    touched = true;
                }
            }
            if !touched {
                c.bdg_p = vec![p];
            }
        }
        SweepParam::U => {
            let c = &mut cfg.checks;
            if c.freedman_u.is_empty() && c.good_lambda_u.is_empty() {
                return Err(sweep_err(
                    "sweeping u needs check.freedman.u or check.good_lambda.u",
                ));
            }
            for list in [&mut c.freedman_u, &mut c.good_lambda_u] {
                if !list.is_empty() {
                    *list = vec![value];
                }
            }
        }
        SweepParam::K => {
            cfg.grid = TimeGrid::new(base.grid.horizon(), as_positive_integer(value)?)?;
        }
    }
    cfg.check_constraints()
        .map_err(|(key, message)| Error::Config {
            key: key.into(),
            location: format!("sweep value {value}"),
            message,
        })?;
    Ok(cfg)
}

#[derive(serde::Serialize)]
struct SweepPoint<'a> {
    value: f64,
    report: &'a Report,
}

#[derive(serde::Serialize)]
struct SweepReport<'a> {
    schema_version: u32,
    param: &'static str,
    points: Vec<SweepPoint<'a>>,
}

fn sweep(common: &CommonArgs) -> Result<i32> {
    let base = load_config(common)?;
    let plan = base.sweep.clone().ok_or_else(|| Error::Config {
        key: "sweep.param".into(),
        location: "config".into(),
        message: "sweep needs sweep.param and sweep.values".into(),
    })?;
    let exec = execution(common);
    let mut reports = Vec::with_capacity(plan.values.len());
    for &v in &plan.values {
        let cfg = apply_sweep(&base, plan.param, v)?;
        reports.push(evaluate("sweep", &cfg, exec)?);
    }
    ensure_dir(&common.out)?;
    let name = plan.param.name();
    if matches!(common.format, Format::Csv | Format::Both) {
        let mut checks = Vec::new();
        let mut values = Vec::new();
        for (r, v) in reports.iter().zip(&plan.values) {
            checks.extend(r.checks.iter().cloned());
            values.extend(std::iter::repeat_n(v.to_string(), r.checks.len()));
        }
        let params = vec![name.to_string(); checks.len()];
        let bytes = checks_csv(&checks, &[("sweep_param", params), ("sweep_value", values)])?;
        write_file(&common.out.join("sweep.csv"), &bytes)?;
    }
    if matches!(common.format, Format::Json | Format::Both) {
        let doc = SweepReport {
            schema_version: crate::report::SCHEMA_VERSION,
            param: name,
            points: reports
                .iter()
                .zip(&plan.values)
                .map(|(report, &value)| SweepPoint { value, report })
                .collect(),
        };
        let mut bytes = serde_json::to_vec_pretty(&doc).map_err(|e| Error::Io(e.to_string()))?;
        bytes.push(b'\n');
        write_file(&common.out.join("sweep.json"), &bytes)?;
    }
    let codes: Vec<i32> = reports.iter().map(summarize).collect();
    Ok(codes.into_iter().max().unwrap_or(EXIT_OK))
}
