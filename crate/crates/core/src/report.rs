//! Report assembly and CSV / JSON emission.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checks::CheckResult;
use crate::error::{Error, Result};
use crate::montecarlo::ExperimentConfig;

/// Bumped on any incompatible change to the JSON layout or CSV columns.
pub const SCHEMA_VERSION: u32 = 1;

/// Fixed CSV column order.
pub const CSV_COLUMNS: [&str; 16] = [
    "name", "n", "N", "family", "p", "u", "sigma2", "t", "lhs", "lhs_ci", "rhs", "rhs_ci", "ratio",
    "holds", "paths", "seed",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
    Both,
}

impl Format {
    fn csv(self) -> bool {
        matches!(self, Format::Csv | Format::Both)
    }

    fn json(self) -> bool {
        matches!(self, Format::Json | Format::Both)
    }
}

/// Everything a run emits. Contains no timing or host data, so identical
/// inputs give identical bytes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub version: String,
    pub subcommand: String,
    pub config: Option<ExperimentConfig>,
    pub checks: Vec<CheckResult>,
    pub paths: usize,
    pub excluded: usize,
    /// True if any check failed or the run stopped early.
    pub failed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Report {
    pub fn new(
        subcommand: &str,
        config: Option<&ExperimentConfig>,
        checks: Vec<CheckResult>,
        excluded: usize,
    ) -> Self {
        let failed = checks.iter().any(|c| !c.holds);
        Self {
            schema_version: SCHEMA_VERSION,
            version: env!("CARGO_PKG_VERSION").to_string(),
            subcommand: subcommand.to_string(),
            config: config.cloned(),
            paths: config.map_or(0, |c| c.paths),
            excluded,
            failed,
            checks,
            error: None,
        }
    }

    /// A report marking a run that stopped with `err`.
    pub fn aborted(
        subcommand: &str,
        config: Option<&ExperimentConfig>,
        checks: Vec<CheckResult>,
        err: &Error,
    ) -> Self {
        let mut out = Self::new(subcommand, config, checks, 0);
        out.failed = true;
        out.error = Some(err.to_string());
        out
    }

    pub fn all_hold(&self) -> bool {
        !self.failed && self.checks.iter().all(|c| c.holds)
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One CSV row in [`CSV_COLUMNS`] order.
pub fn csv_row(c: &CheckResult) -> Vec<String> {
    let p = &c.params;
    vec![
        c.name.clone(),
        p.n.to_string(),
        p.drivers.to_string(),
        p.family.clone(),
        opt(p.p),
        opt(p.u),
        opt(p.sigma2),
        opt(p.t),
        c.lhs.point.to_string(),
        c.lhs_ci().to_string(),
        c.rhs.point.to_string(),
        c.rhs_ci().to_string(),
        opt(c.ratio),
        c.holds.to_string(),
        c.paths.to_string(),
        opt(c.seed),
    ]
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io(format!("{}: {e}", path.display()))
}

/// CSV text for `checks`, optionally prefixed by extra leading columns
/// (used by sweeps).
pub fn checks_csv(checks: &[CheckResult], leading: &[(&str, Vec<String>)]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let header: Vec<&str> = leading.iter().map(|(h, _)| *h).chain(CSV_COLUMNS).collect();
    let csv_err = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(&header).map_err(csv_err)?;
    for (i, c) in checks.iter().enumerate() {
        let row: Vec<String> = leading
            .iter()
            .map(|(_, values)| values[i].clone())
            .chain(csv_row(c))
            .collect();
        w.write_record(&row).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.to_string()))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| io_err(path, e))?;
    f.write_all(bytes).map_err(|e| io_err(path, e))
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

pub fn report_json(report: &Report) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(report).map_err(|e| Error::Io(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn read_report(path: &Path) -> Result<Report> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| io_err(path, e))
}

/// Writes `{stem}.csv` and/or `{stem}.json` into `dir`.
pub fn emit_report(
    report: &Report,
    format: Format,
    dir: &Path,
    stem: &str,
) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let mut written = Vec::new();
    if format.csv() {
        let path = dir.join(format!("{stem}.csv"));
        write_file(&path, &checks_csv(&report.checks, &[])?)?;
        written.push(path);
    }
    if format.json() {
        let path = dir.join(format!("{stem}.json"));
        write_file(&path, &report_json(report)?)?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrands::{validate_spec, IntegrandSpec};
    use crate::matrix::SymMatrix;
    use crate::montecarlo::run_batch;
    use crate::parallel::Execution;
    use crate::simulate::TimeGrid;

    fn config() -> ExperimentConfig {
        let integrand =
            validate_spec(IntegrandSpec::constant(vec![SymMatrix::identity(1)])).unwrap();
        let mut cfg = ExperimentConfig::new(integrand, TimeGrid::new(1.0, 32).unwrap(), 300, 42);
        cfg.checks.freedman_u = vec![2.0];
        cfg.checks.freedman_sigma2 = vec![1.0];
        cfg
    }

    #[test]
    fn empty_report_is_header_only() {
        let bytes = checks_csv(&[], &[]).unwrap();
        assert_eq!(
            String::from_utf8(bytes).unwrap(),
            "name,n,N,family,p,u,sigma2,t,lhs,lhs_ci,rhs,rhs_ci,ratio,holds,paths,seed\n"
        );
    }

    #[test]
    fn freedman_row_round_trips_through_json() {
        let cfg = config();
        let batch = run_batch(&cfg, Execution::Sequential).unwrap();
        let checks = crate::checks::run_plan(&cfg, Some(&batch)).unwrap();
        let report = Report::new("verify", Some(&cfg), checks, batch.excluded);
        let dir = tempfile::tempdir().unwrap();
        let files = emit_report(&report, Format::Both, dir.path(), "report").unwrap();
        assert_eq!(files.len(), 2);
        let back = read_report(&dir.path().join("report.json")).unwrap();
        assert_eq!(back, report);
        let csv = fs::read_to_string(dir.path().join("report.csv")).unwrap();
        let row = csv.lines().nth(1).unwrap();
        assert!(row.starts_with("freedman,1,1,constant,,2,1,1,"), "{row}");
        assert!((report.checks[0].rhs.point - (-2f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn leading_columns_for_sweeps() {
        let cfg = config();
        let batch = run_batch(&cfg, Execution::Sequential).unwrap();
        let checks = crate::checks::run_plan(&cfg, Some(&batch)).unwrap();
        let bytes = checks_csv(
            &checks,
            &[
                ("sweep_param", vec!["u".into()]),
                ("sweep_value", vec!["2".into()]),
            ],
        )
        .unwrap();
        let text = String::from_utf8(bytes).unwrap();
        assert!(text.starts_with("sweep_param,sweep_value,name,"));
        assert!(text.lines().nth(1).unwrap().starts_with("u,2,freedman,"));
    }
}
