//! Reproducible batch execution and interval estimation.

mod batch;
mod seed;
pub mod stats;

pub use batch::{run_batch, BatchStats, CheckSettings, Observables, PathRecord};
pub use seed::{derive_path_seed, derive_stream_seed, mix64};
pub use stats::{bootstrap_ci, wilson_interval, CiMethod, EstimateCI, Statistic};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrands::Integrand;
use crate::simulate::TimeGrid;

/// Minimum number of paths for any check with a confidence interval.
pub const MIN_PROBABILISTIC_PATHS: usize = 100;

/// Inequality checks requested by an experiment.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckPlan {
    /// Freedman lattice: every `(u, σ²)` pair in the cross product.
    pub freedman_u: Vec<f64>,
    pub freedman_sigma2: Vec<f64>,
    pub good_lambda_u: Vec<f64>,
    pub good_lambda_sigma2: Vec<f64>,
    pub bdg_p: Vec<u32>,
    pub schatten_p: Vec<u32>,
    pub schatten_rect_p: Vec<u32>,
    pub biane_speicher: bool,
    pub supermartingale_beta: Vec<f64>,
    pub supermartingale_checkpoints: usize,
    pub khintchine: bool,
}

impl CheckPlan {
    /// True if any check is estimated from simulated paths.
    pub fn is_probabilistic(&self) -> bool {
        !(self.freedman_u.is_empty()
            && self.good_lambda_u.is_empty()
            && self.bdg_p.is_empty()
            && self.schatten_p.is_empty()
            && self.schatten_rect_p.is_empty()
            && !self.biane_speicher
            && self.supermartingale_beta.is_empty()
            && !self.khintchine)
    }

    pub fn is_empty(&self) -> bool {
        !self.is_probabilistic()
    }

    /// Per-path quantities the checks will read.
    pub fn observables(&self, grid: &TimeGrid) -> Observables {
        let mut levels: Vec<f64> = self
            .freedman_sigma2
            .iter()
            .chain(&self.good_lambda_sigma2)
            .copied()
            .collect();
        levels.sort_by(f64::total_cmp);
        levels.dedup();
        let mut ps = self.schatten_p.clone();
        ps.sort_unstable();
        ps.dedup();
        let mut rect = self.schatten_rect_p.clone();
        rect.sort_unstable();
        rect.dedup();
        let checkpoints = if self.supermartingale_beta.is_empty() {
            Vec::new()
        } else {
            Observables::evenly_spaced(grid.steps(), self.supermartingale_checkpoints.max(2))
        };
        Observables {
            sigma2_levels: levels,
            schatten_ps: ps,
            rect_ps: rect,
            betas: self.supermartingale_beta.clone(),
            checkpoints,
            biane_speicher: self.biane_speicher,
        }
    }
}

/// Numerical tolerances of the deterministic checks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub psd: f64,
    pub trace_lemma: f64,
    pub hessian_lemma: f64,
    pub hessian_step: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            psd: crate::matrix::DEFAULT_PSD_TOL,
            trace_lemma: 1e-9,
            hessian_lemma: 1e-5,
            hessian_step: 1e-4,
        }
    }
}

/// Paths to dump as CSV by the `simulate` subcommand.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DumpPlan {
    pub paths: Vec<usize>,
    pub betas: Vec<f64>,
}

/// Parameter varied by the `sweep` subcommand.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    N,
    P,
    U,
    K,
}

impl SweepParam {
    pub fn name(&self) -> &'static str {
        match self {
            SweepParam::N => "n",
            SweepParam::P => "p",
            SweepParam::U => "u",
            SweepParam::K => "K",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPlan {
    pub param: SweepParam,
    pub values: Vec<f64>,
}

/// A complete, validated batch description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub integrand: Integrand,
    pub grid: TimeGrid,
    pub paths: usize,
    pub master_seed: u64,
    pub checks: CheckPlan,
    pub bootstrap_resamples: usize,
    pub confidence: f64,
    pub slack: f64,
    /// Multiplies every right-hand side; 1 except in failure-path tests.
    pub rhs_multiplier: f64,
    pub tolerances: Tolerances,
    pub dump: DumpPlan,
    pub khintchine_samples: usize,
    pub lemma_instances: usize,
    pub sweep: Option<SweepPlan>,
}

impl ExperimentConfig {
    /// Defaults for everything except the integrand.
    pub fn new(integrand: Integrand, grid: TimeGrid, paths: usize, master_seed: u64) -> Self {
        Self {
            integrand,
            grid,
            paths,
            master_seed,
            checks: CheckPlan {
                supermartingale_checkpoints: 8,
                ..CheckPlan::default()
            },
            bootstrap_resamples: 1000,
            confidence: 0.99,
            slack: 3.0,
            rhs_multiplier: 1.0,
            tolerances: Tolerances::default(),
            dump: DumpPlan::default(),
            khintchine_samples: paths,
            lemma_instances: 10_000,
            sweep: None,
        }
    }

    pub fn settings(&self) -> CheckSettings {
        CheckSettings {
            confidence: self.confidence,
            bootstrap_resamples: self.bootstrap_resamples,
            slack: self.slack,
            bound_factor: self.rhs_multiplier,
        }
    }

    /// Cross-field constraints. Returns `(key, message)` on failure.
    pub fn check_constraints(&self) -> std::result::Result<(), (&'static str, String)> {
        if self.paths == 0
            || (self.checks.is_probabilistic() && self.paths < MIN_PROBABILISTIC_PATHS)
        {
            return Err((
                "paths",
                format!("paths must be ≥ {MIN_PROBABILISTIC_PATHS} for probabilistic checks"),
            ));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(("confidence", "confidence must lie in (0,1)".into()));
        }
        if self.bootstrap_resamples == 0 {
            return Err(("bootstrap_resamples", "must be at least 1".into()));
        }
        if !(self.slack.is_finite() && self.slack >= 0.0) {
            return Err(("slack", "slack must be a non-negative real".into()));
        }
        if !(self.rhs_multiplier.is_finite() && self.rhs_multiplier >= 0.0) {
            return Err(("debug.rhs_multiplier", "must be a non-negative real".into()));
        }
        let c = &self.checks;
        if c.freedman_u.iter().any(|&u| !(u > 0.0 && u.is_finite())) {
            return Err(("check.freedman.u", "levels must be positive".into()));
        }
        if c.good_lambda_u
            .iter()
            .any(|&u| !(u >= 0.0 && u.is_finite()))
        {
            return Err(("check.good_lambda.u", "levels must be non-negative".into()));
        }
        for (key, levels) in [
            ("check.freedman.sigma2", &c.freedman_sigma2),
            ("check.good_lambda.sigma2", &c.good_lambda_sigma2),
        ] {
            if levels.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
                return Err((key, "variance levels must be positive".into()));
            }
        }
        if c.freedman_u.is_empty() != c.freedman_sigma2.is_empty() {
            return Err(("check.freedman", "both u and sigma2 must be given".into()));
        }
        if c.good_lambda_u.is_empty() != c.good_lambda_sigma2.is_empty() {
            return Err((
                "check.good_lambda",
                "both u and sigma2 must be given".into(),
            ));
        }
        for (key, ps) in [
            ("check.bdg.p", &c.bdg_p),
            ("check.schatten.p", &c.schatten_p),
            ("check.schatten_rect.p", &c.schatten_rect_p),
        ] {
            if ps.contains(&0) {
                return Err((key, "exponents must be positive integers".into()));
            }
        }
        if !c.schatten_rect_p.is_empty() && self.integrand.rect_shape().is_none() {
            return Err((
                "check.schatten_rect.p",
                "needs the rect_constant family".into(),
            ));
        }
        if c.khintchine && !self.integrand.is_constant() {
            return Err((
                "check.khintchine",
                "needs a constant integrand family".into(),
            ));
        }
        if c.supermartingale_beta.iter().any(|b| !b.is_finite()) {
            return Err(("check.supermartingale.beta", "must be finite".into()));
        }
        if !c.supermartingale_beta.is_empty() && c.supermartingale_checkpoints < 2 {
            return Err((
                "check.supermartingale.checkpoints",
                "need at least 2".into(),
            ));
        }
        if c.khintchine && self.khintchine_samples < MIN_PROBABILISTIC_PATHS {
            return Err(("khintchine.samples", "need at least 100 samples".into()));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.check_constraints()
            .map_err(|(key, message)| Error::Config {
                key: key.into(),
                location: "config".into(),
                message,
            })
    }
}
