//! Flat `key = value` experiment configuration.
//!
//! ```text
//! # comments run to the end of the line
//! integrand.family = constant
//! integrand.n = 2
//! integrand.N = 1
//! integrand.H1 = 1, 0; 0, 1
//! grid.T = 1
//! grid.K = 256
//! paths = 1000
//! seed = 42
//! check.freedman.u = 1, 2
//! check.freedman.sigma2 = 1
//! ```
//!
//! Matrices are written row-major with `;` between rows. Lists are
//! comma-separated. Unknown or duplicate keys are errors, and every error
//! names the offending key and where it came from.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::integrands::{validate_spec, Family, IntegrandSpec};
use crate::matrix::RectMatrix;
use crate::montecarlo::{ExperimentConfig, SweepParam, SweepPlan};
use crate::simulate::TimeGrid;

#[derive(Clone, Debug)]
struct Entry {
    value: String,
    location: String,
}

struct Entries {
    map: BTreeMap<String, Entry>,
}

fn config_err(key: &str, location: &str, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        location: location.to_string(),
        message: message.into(),
    }
}

const SCALAR_KEYS: &[&str] = &[
    "integrand.family",
    "integrand.n",
    "integrand.N",
    "integrand.gamma",
    "integrand.seed",
    "integrand.scale",
    "grid.T",
    "grid.K",
    "paths",
    "seed",
    "bootstrap_resamples",
    "confidence",
    "slack",
    "check.freedman.u",
    "check.freedman.sigma2",
    "check.good_lambda.u",
    "check.good_lambda.sigma2",
    "check.bdg.p",
    "check.schatten.p",
    "check.schatten_rect.p",
    "check.biane_speicher",
    "check.supermartingale.beta",
    "check.supermartingale.checkpoints",
    "check.khintchine",
    "khintchine.samples",
    "lemmas.instances",
    "simulate.paths",
    "simulate.beta",
    "sweep.param",
    "sweep.values",
    "debug.rhs_multiplier",
    "tol.psd",
    "tol.trace_lemma",
    "tol.hessian_lemma",
    "tol.hessian_step",
];

/// `integrand.H3` → `Some(('H', 3))`.
fn payload_key(key: &str) -> Option<(char, usize)> {
    let rest = key.strip_prefix("integrand.")?;
    let mut chars = rest.chars();
    let letter = chars.next().filter(|c| matches!(c, 'H' | 'A' | 'B'))?;
    let digits = chars.as_str();
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) || digits.starts_with('0') {
        return None;
    }
    Some((letter, digits.parse().ok()?))
}

fn is_known(key: &str) -> bool {
    SCALAR_KEYS.contains(&key) || payload_key(key).is_some()
}

impl Entries {
    fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let location = format!("line {}", i + 1);
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| config_err(line, &location, "expected `key = value`"))?;
            let key = key.trim();
            if !is_known(key) {
                return Err(config_err(key, &location, "unknown key"));
            }
            let entry = Entry {
                value: value.trim().to_string(),
                location: location.clone(),
            };
            if let Some(prev) = map.insert(key.to_string(), entry) {
                return Err(config_err(
                    key,
                    &location,
                    format!("duplicate key, first set at {}", prev.location),
                ));
            }
        }
        Ok(Self { map })
    }

    fn apply_override(&mut self, key: &str, value: &str) -> Result<()> {
        if !is_known(key) {
            return Err(config_err(key, "--set", "unknown key"));
        }
        self.map.insert(
            key.to_string(),
            Entry {
                value: value.trim().to_string(),
                location: "--set".into(),
            },
        );
        Ok(())
    }

    fn location(&self, key: &str) -> String {
        self.map
            .get(key)
            .map_or_else(|| "config".to_string(), |e| e.location.clone())
    }

    fn raw(&self, key: &str) -> Option<&Entry> {
        self.map.get(key)
    }

    fn required(&self, key: &str) -> Result<&Entry> {
        self.raw(key)
            .ok_or_else(|| config_err(key, "config", "missing required key"))
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str, what: &str) -> Result<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some(e) => e.value.parse().map(Some).map_err(|_| {
                config_err(
                    key,
                    &e.location,
                    format!("expected {what}, got `{}`", e.value),
                )
            }),
        }
    }

    fn real(&self, key: &str) -> Result<Option<f64>> {
        let v: Option<f64> = self.parsed(key, "a real number")?;
        match v {
            Some(x) if !x.is_finite() => {
                Err(config_err(key, &self.location(key), "must be finite"))
            }
            other => Ok(other),
        }
    }

    fn count(&self, key: &str) -> Result<Option<usize>> {
        self.parsed(key, "a non-negative integer")
    }

    fn flag(&self, key: &str) -> Result<bool> {
        Ok(self.parsed(key, "true or false")?.unwrap_or(false))
    }

    fn list<T: std::str::FromStr>(&self, key: &str, what: &str) -> Result<Vec<T>> {
        let Some(e) = self.raw(key) else {
            return Ok(Vec::new());
        };
        e.value
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse().map_err(|_| {
                    config_err(
                        key,
                        &e.location,
                        format!("expected a list of {what}, got `{s}`"),
                    )
                })
            })
            .collect()
    }

    fn reals(&self, key: &str) -> Result<Vec<f64>> {
        let v: Vec<f64> = self.list(key, "real numbers")?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(config_err(
                key,
                &self.location(key),
                "values must be finite",
            ));
        }
        Ok(v)
    }

    fn matrix(&self, key: &str) -> Result<RectMatrix> {
        let e = self.required(key)?;
        parse_matrix(&e.value).map_err(|m| config_err(key, &e.location, m))
    }
}

/// `"1, 0; 0, 1"` → 2×2 matrix.
pub fn parse_matrix(text: &str) -> std::result::Result<RectMatrix, String> {
    let rows = text
        .split(';')
        .map(|row| {
            row.split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|_| format!("bad matrix entry `{s}`"))
                })
                .collect::<std::result::Result<Vec<_>, _>>()
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    RectMatrix::from_rows(&rows).map_err(|e| match e {
        Error::InputDomain(m) => m,
        other => other.to_string(),
    })
}

/// Splits a `key=value` override.
pub fn parse_override(text: &str) -> Result<(String, String)> {
    let (k, v) = text
        .split_once('=')
        .ok_or_else(|| config_err(text, "--set", "expected key=value"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

/// Parses and validates a configuration.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    parse_config_with(text, &[])
}

/// As [`parse_config`], with `--set` overrides applied last.
pub fn parse_config_with(text: &str, overrides: &[(String, String)]) -> Result<ExperimentConfig> {
    let mut entries = Entries::parse(text)?;
    for (k, v) in overrides {
        entries.apply_override(k, v)?;
    }
    build(&entries)
}

fn payloads(entries: &Entries, letter: char, drivers: usize) -> Result<Vec<RectMatrix>> {
    (1..=drivers)
        .map(|i| entries.matrix(&format!("integrand.{letter}{i}")))
        .collect()
}

fn integrand_spec(e: &Entries) -> Result<IntegrandSpec> {
    let family_entry = e.required("integrand.family")?;
    let family_name = family_entry.value.as_str();
    let n_key = "integrand.n";
    let n_opt = e.count(n_key)?;
    let n_req = || n_opt.ok_or_else(|| config_err(n_key, "config", "missing required key"));
    let drivers_opt = e.count("integrand.N")?;
    let drivers_req =
        || drivers_opt.ok_or_else(|| config_err("integrand.N", "config", "missing required key"));

    let letters: &[char] = match family_name {
        "constant" | "rect_constant" => &['H'],
        "time_poly" => &['A', 'B'],
        "path_feedback" => &['A'],
        _ => &[],
    };
    for key in e.map.keys() {
        if let Some((letter, i)) = payload_key(key) {
            if !letters.contains(&letter) {
                return Err(config_err(
                    key,
                    &e.location(key),
                    format!("not used by family {family_name}"),
                ));
            }
            if drivers_opt.is_some_and(|d| i > d) {
                return Err(config_err(
                    key,
                    &e.location(key),
                    "index exceeds integrand.N",
                ));
            }
        }
    }
    let only_for = |key: &str, fam: &str| -> Result<()> {
        if e.raw(key).is_some() && family_name != fam {
            return Err(config_err(
                key,
                &e.location(key),
                format!("only valid for family {fam}"),
            ));
        }
        Ok(())
    };
    only_for("integrand.gamma", "path_feedback")?;
    let goe_only = ["integrand.seed", "integrand.scale"];
    for key in goe_only {
        only_for(key, "goe_like")?;
    }

    let family = match family_name {
        "constant" => Family::Constant {
            matrices: payloads(e, 'H', drivers_req()?)?,
        },
        "time_poly" => {
            let d = drivers_req()?;
            Family::TimePoly {
                intercepts: payloads(e, 'A', d)?,
                slopes: payloads(e, 'B', d)?,
            }
        }
        "path_feedback" => Family::PathFeedback {
            base: payloads(e, 'A', drivers_req()?)?,
            gamma: e
                .real("integrand.gamma")?
                .ok_or_else(|| config_err("integrand.gamma", "config", "missing required key"))?,
        },
        "diag_basis" => {
            let n = n_req()?;
            if let Some(d) = drivers_opt.filter(|&d| d != n) {
                return Err(config_err(
                    "integrand.N",
                    &e.location("integrand.N"),
                    format!("diag_basis needs N = n = {n}, got {d}"),
                ));
            }
            Family::DiagBasis
        }
        "goe_like" => {
            drivers_req()?;
            Family::GoeLike {
                seed: e
                    .parsed("integrand.seed", "an unsigned integer")?
                    .unwrap_or(0),
                scale: e.real("integrand.scale")?.unwrap_or(1.0),
            }
        }
        "rect_constant" => Family::RectConstant {
            payloads: payloads(e, 'H', drivers_req()?)?,
        },
        other => {
            return Err(config_err(
                "integrand.family",
                &family_entry.location,
                format!("unknown family `{other}`"),
            ))
        }
    };
    let n = match &family {
        Family::RectConstant { payloads } => {
            let implied = payloads[0].rows() + payloads[0].cols();
            if let Some(n) = n_opt.filter(|&n| n != implied) {
                return Err(config_err(
                    n_key,
                    &e.location(n_key),
                    format!("rect_constant payloads dilate to n = {implied}, got {n}"),
                ));
            }
            implied
        }
        _ => n_req()?,
    };
    let drivers = match family {
        Family::DiagBasis => n,
        _ => drivers_req()?,
    };
    Ok(IntegrandSpec { n, drivers, family })
}

/// Maps a validation message like `H2: not symmetric` to its config key.
fn validation_key(message: &str) -> Option<String> {
    let prefix = message.split(':').next()?.trim();
    let key = format!("integrand.{prefix}");
    payload_key(&key).map(|_| key)
}

fn build(e: &Entries) -> Result<ExperimentConfig> {
    let spec = integrand_spec(e)?;
    let integrand = validate_spec(spec).map_err(|err| {
        let message = match &err {
            Error::Validation(m) | Error::InputDomain(m) => m.clone(),
            other => other.to_string(),
        };
        let key = validation_key(&message).unwrap_or_else(|| "integrand".to_string());
        let location = if key == "integrand" {
            e.location("integrand.family")
        } else {
            e.location(&key)
        };
        config_err(&key, &location, message)
    })?;

    let horizon = e.real("grid.T")?.unwrap_or(1.0);
    let steps = e.count("grid.K")?.unwrap_or(256);
    let grid = TimeGrid::new(horizon, steps).map_err(|err| {
        let key = if steps == 0 { "grid.K" } else { "grid.T" };
        config_err(key, &e.location(key), err.to_string())
    })?;
    let paths = e
        .count("paths")?
        .ok_or_else(|| config_err("paths", "config", "missing required key"))?;
    let seed: u64 = e
        .parsed("seed", "an unsigned 64-bit integer")?
        .ok_or_else(|| config_err("seed", "config", "missing required key"))?;

    let mut cfg = ExperimentConfig::new(integrand, grid, paths, seed);
    if let Some(v) = e.count("bootstrap_resamples")? {
        cfg.bootstrap_resamples = v;
    }
    if let Some(v) = e.real("confidence")? {
        cfg.confidence = v;
    }
    if let Some(v) = e.real("slack")? {
        cfg.slack = v;
    }
    if let Some(v) = e.real("debug.rhs_multiplier")? {
        cfg.rhs_multiplier = v;
    }
    if let Some(v) = e.count("khintchine.samples")? {
        cfg.khintchine_samples = v;
    }
    if let Some(v) = e.count("lemmas.instances")? {
        cfg.lemma_instances = v;
    }
    let tol = &mut cfg.tolerances;
    for (key, slot) in [
        ("tol.psd", &mut tol.psd),
        ("tol.trace_lemma", &mut tol.trace_lemma),
        ("tol.hessian_lemma", &mut tol.hessian_lemma),
        ("tol.hessian_step", &mut tol.hessian_step),
    ] {
        if let Some(v) = e.real(key)? {
            if v <= 0.0 {
                return Err(config_err(
                    key,
                    &e.location(key),
                    "tolerance must be positive",
                ));
            }
            *slot = v;
        }
    }

    let c = &mut cfg.checks;
    c.freedman_u = e.reals("check.freedman.u")?;
    c.freedman_sigma2 = e.reals("check.freedman.sigma2")?;
    c.good_lambda_u = e.reals("check.good_lambda.u")?;
    c.good_lambda_sigma2 = e.reals("check.good_lambda.sigma2")?;
    c.bdg_p = e.list("check.bdg.p", "positive integers")?;
    c.schatten_p = e.list("check.schatten.p", "positive integers")?;
    c.schatten_rect_p = e.list("check.schatten_rect.p", "positive integers")?;
    c.biane_speicher = e.flag("check.biane_speicher")?;
    c.supermartingale_beta = e.reals("check.supermartingale.beta")?;
    if let Some(v) = e.count("check.supermartingale.checkpoints")? {
        c.supermartingale_checkpoints = v;
    }
    c.khintchine = e.flag("check.khintchine")?;

    match (e.raw("sweep.param"), e.raw("sweep.values")) {
        (None, None) => {}
        (Some(p), Some(_)) => {
            let param = match p.value.as_str() {
                "n" => SweepParam::N,
                "p" => SweepParam::P,
                "u" => SweepParam::U,
                "K" => SweepParam::K,
                other => {
                    return Err(config_err(
                        "sweep.param",
                        &p.location,
                        format!("expected one of n, p, u, K, got `{other}`"),
                    ))
                }
            };
            let values = e.reals("sweep.values")?;
            if values.is_empty() {
                return Err(config_err(
                    "sweep.values",
                    &e.location("sweep.values"),
                    "empty list",
                ));
            }
            cfg.sweep = Some(SweepPlan { param, values });
        }
        (Some(_), None) => {
            return Err(config_err("sweep.values", "config", "missing required key"))
        }
        (None, Some(v)) => {
            return Err(config_err(
                "sweep.param",
                &v.location,
                "missing required key",
            ))
        }
    }

    cfg.check_constraints()
        .map_err(|(key, message)| config_err(key, &e.location(key), message))?;
    cfg.dump.paths = e.list("simulate.paths", "path indices")?;
    if e.raw("simulate.paths").is_none() {
        cfg.dump.paths = vec![0];
    }
    if let Some(&bad) = cfg.dump.paths.iter().find(|&&i| i >= paths) {
        return Err(config_err(
            "simulate.paths",
            &e.location("simulate.paths"),
            format!("path index {bad} is not below paths = {paths}"),
        ));
    }
    cfg.dump.betas = e.reals("simulate.beta")?;
    Ok(cfg)
}
