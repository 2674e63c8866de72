//! Batch simulation with an index-ordered reduction.

use serde::{Deserialize, Serialize};

use super::{derive_path_seed, ExperimentConfig};
use crate::error::{Error, Result};
use crate::integrands::{EvalContext, Integrand};
use crate::matrix::{schatten_norm_rect, schatten_of_eigenvalues, sym_eigenvalues, SymMatrix};
use crate::parallel::{map_indexed, Execution};
use crate::simulate::{
    deterministic_qv_series, drive_path, sum_of_squares, supermartingale_value, undilate,
    DriveOptions, Noise, TimeGrid,
};

/// Largest tolerated fraction of excluded paths.
pub const MAX_EXCLUSION_RATE: f64 = 1e-3;

/// Knobs shared by every probabilistic verdict.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckSettings {
    pub confidence: f64,
    pub bootstrap_resamples: usize,
    pub slack: f64,
    pub bound_factor: f64,
}

impl Default for CheckSettings {
    fn default() -> Self {
        Self {
            confidence: 0.99,
            bootstrap_resamples: 1000,
            slack: 3.0,
            bound_factor: 1.0,
        }
    }
}

/// What to record per path beyond the always-present summaries.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Observables {
    /// Variance levels σ² for the restricted running maximum.
    pub sigma2_levels: Vec<f64>,
    /// `p` values for `‖x_K‖_{2p}` and the `‖Σ H²‖_p` quadrature.
    pub schatten_ps: Vec<u32>,
    /// `p` values for the rectangular terminal norm.
    pub rect_ps: Vec<u32>,
    pub betas: Vec<f64>,
    /// Grid indices where the exponential trace process is sampled.
    pub checkpoints: Vec<usize>,
    pub biane_speicher: bool,
}

impl Observables {
    /// `count` grid indices `round(j·K/(count−1))`, deduplicated.
    pub fn evenly_spaced(steps: usize, count: usize) -> Vec<usize> {
        let last = count.max(2) - 1;
        let mut out: Vec<usize> = (0..=last)
            .map(|j| ((j * steps) as f64 / last as f64).round() as usize)
            .collect();
        out.dedup();
        out
    }

    fn needs_quadrature(&self) -> bool {
        !self.schatten_ps.is_empty() || self.biane_speicher
    }
}

/// Scalar summaries of one path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub index: usize,
    pub seed: u64,
    /// `max_k ‖x[k]‖`.
    pub sup_spectral: f64,
    /// `max_k λ_max(x[k])`.
    pub sup_lambda_max: f64,
    pub terminal_spectral: f64,
    pub terminal_qv_norm: f64,
    /// `Tr x[K]²`.
    pub terminal_trace_sq: f64,
    pub terminal_qv_trace: f64,
    /// Per σ² level: `max λ_max(x[k])` over `k` with `‖qv[k]‖ ≤ σ²`.
    pub lambda_max_within: Vec<f64>,
    /// Per Schatten `p`: `‖x[K]‖_{2p}`.
    pub schatten_terminal: Vec<f64>,
    /// Per Schatten `p`: `Σ_k ‖Σ_i H_i(t_k)²‖_p · dt`.
    pub schatten_quadrature: Vec<f64>,
    /// Per rectangular `p`: `‖x[K]‖_{2p}` of the undilated block.
    pub rect_schatten_terminal: Vec<f64>,
    /// `(Σ_k ‖Σ_i H_i(t_k)‖² · dt)^{1/2}`.
    pub bs_quadrature: f64,
    /// `supermartingale[b][c]` at `betas[b]`, `checkpoints[c]`.
    pub supermartingale: Vec<Vec<f64>>,
}

/// All paths of one batch, in index order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchStats {
    pub integrand: Integrand,
    pub grid: TimeGrid,
    pub master_seed: u64,
    pub requested: usize,
    pub excluded: usize,
    pub observables: Observables,
    pub settings: CheckSettings,
    pub records: Vec<PathRecord>,
}

impl BatchStats {
    pub fn path_count(&self) -> usize {
        self.records.len()
    }

    pub fn n(&self) -> usize {
        self.integrand.n()
    }

    pub fn horizon(&self) -> f64 {
        self.grid.horizon()
    }

    pub fn count(&self, pred: impl Fn(&PathRecord) -> bool) -> u64 {
        self.records.iter().filter(|r| pred(r)).count() as u64
    }

    pub fn values(&self, f: impl Fn(&PathRecord) -> f64) -> Vec<f64> {
        self.records.iter().map(f).collect()
    }

    pub(crate) fn require_paths(&self) -> Result<()> {
        if self.records.is_empty() {
            Err(Error::domain("batch has no paths"))
        } else {
            Ok(())
        }
    }
}

/// Precomputed series of a state-independent integrand.
struct SharedPath {
    qv: Vec<SymMatrix>,
    qv_norms: Vec<f64>,
    schatten_quadrature: Vec<f64>,
    bs_quadrature: f64,
}

fn spectral_of(values: &[f64]) -> f64 {
    values
        .first()
        .map_or(0.0, |&top| top.abs().max(values[values.len() - 1].abs()))
}

/// Quadrature terms at one grid step.
struct StepQuadrature {
    schatten: Vec<f64>,
    bs: f64,
}

fn step_quadrature(n: usize, hs: &[SymMatrix], obs: &Observables) -> Result<StepQuadrature> {
    let mut schatten = Vec::with_capacity(obs.schatten_ps.len());
    if !obs.schatten_ps.is_empty() {
        let vals = sym_eigenvalues(&sum_of_squares(n, hs))?;
        for &p in &obs.schatten_ps {
            schatten.push(schatten_of_eigenvalues(&vals, f64::from(p))?);
        }
    }
    let bs = if obs.biane_speicher {
        let mut sum = SymMatrix::zeros(n);
        for h in hs {
            sum.add_scaled(1.0, h);
        }
        spectral_of(&sym_eigenvalues(&sum)?).powi(2)
    } else {
        0.0
    };
    Ok(StepQuadrature { schatten, bs })
}

impl SharedPath {
    fn new(integrand: &Integrand, grid: &TimeGrid, obs: &Observables) -> Result<Self> {
        let n = integrand.n();
        let qv = deterministic_qv_series(integrand, grid)?;
        let qv_norms = qv
            .iter()
            .map(|q| sym_eigenvalues(q).map(|v| spectral_of(&v)))
            .collect::<Result<Vec<_>>>()?;
        let dt = grid.dt();
        let mut schatten_quadrature = vec![0.0; obs.schatten_ps.len()];
        let mut bs = 0.0;
        if obs.needs_quadrature() {
            let zero = SymMatrix::zeros(n);
            let constant = integrand.is_constant().then(|| {
                integrand.evaluate(&EvalContext {
                    time: 0.0,
                    x_current: &zero,
                    qv_current: &zero,
                })
            });
            let constant = match constant {
                Some(hs) => Some(step_quadrature(n, &hs?, obs)?),
                None => None,
            };
            for k in 0..grid.steps() {
                let owned;
                let q = match &constant {
                    Some(q) => q,
                    None => {
                        let hs = integrand.evaluate(&EvalContext {
                            time: grid.time(k),
                            x_current: &zero,
                            qv_current: &zero,
                        })?;
                        owned = step_quadrature(n, &hs, obs)?;
                        &owned
                    }
                };
                for (acc, v) in schatten_quadrature.iter_mut().zip(&q.schatten) {
                    *acc += v * dt;
                }
                bs += q.bs * dt;
            }
        }
        Ok(Self {
            qv,
            qv_norms,
            schatten_quadrature,
            bs_quadrature: bs.sqrt(),
        })
    }
}

fn simulate_record(
    integrand: &Integrand,
    grid: &TimeGrid,
    obs: &Observables,
    shared: Option<&SharedPath>,
    index: usize,
    seed: u64,
) -> Result<PathRecord> {
    let n = integrand.n();
    let steps = grid.steps();
    let dt = grid.dt();
    let need_step_qv_norm = shared.is_none() && !obs.sigma2_levels.is_empty();
    let opts = DriveOptions {
        track_qv: shared.is_none(),
        want_integrands: shared.is_none() && obs.needs_quadrature(),
    };
    let mut rec = PathRecord {
        index,
        seed,
        sup_spectral: 0.0,
        sup_lambda_max: f64::NEG_INFINITY,
        terminal_spectral: 0.0,
        terminal_qv_norm: 0.0,
        terminal_trace_sq: 0.0,
        terminal_qv_trace: 0.0,
        lambda_max_within: vec![f64::NEG_INFINITY; obs.sigma2_levels.len()],
        schatten_terminal: Vec::new(),
        schatten_quadrature: vec![0.0; obs.schatten_ps.len()],
        rect_schatten_terminal: Vec::new(),
        bs_quadrature: 0.0,
        supermartingale: vec![Vec::with_capacity(obs.checkpoints.len()); obs.betas.len()],
    };
    let mut bs_acc = 0.0;
    let mut next_checkpoint = 0;
    let mut noise = Noise::seeded(seed);
    drive_path(integrand, grid, &mut noise, &opts, |view| {
        let k = view.k;
        let vals = sym_eigenvalues(view.x)?;
        let top = vals[0];
        let spec = spectral_of(&vals);
        rec.sup_lambda_max = rec.sup_lambda_max.max(top);
        rec.sup_spectral = rec.sup_spectral.max(spec);

        let qv = match shared {
            Some(s) => &s.qv[k],
            None => view.qv.expect("qv tracked without shared series"),
        };
        if !obs.sigma2_levels.is_empty() {
            let qn = match shared {
                Some(s) => s.qv_norms[k],
                None if need_step_qv_norm => spectral_of(&sym_eigenvalues(qv)?),
                None => unreachable!(),
            };
            for (slot, &level) in rec.lambda_max_within.iter_mut().zip(&obs.sigma2_levels) {
                if qn <= level {
                    *slot = slot.max(top);
                }
            }
        }
        if obs.checkpoints.get(next_checkpoint) == Some(&k) {
            for (series, &beta) in rec.supermartingale.iter_mut().zip(&obs.betas) {
                series.push(supermartingale_value(view.x, qv, beta)?);
            }
            next_checkpoint += 1;
        }
        if let Some(hs) = view.integrands {
            let q = step_quadrature(n, hs, obs)?;
            for (acc, v) in rec.schatten_quadrature.iter_mut().zip(&q.schatten) {
                *acc += v * dt;
            }
            bs_acc += q.bs * dt;
        }
        if k == steps {
            rec.terminal_spectral = spec;
            rec.terminal_trace_sq = vals.iter().map(|v| v * v).sum();
            rec.terminal_qv_trace = qv.trace();
            rec.terminal_qv_norm = match shared {
                Some(s) => s.qv_norms[k],
                None => spectral_of(&sym_eigenvalues(qv)?),
            };
            for &p in &obs.schatten_ps {
                rec.schatten_terminal
                    .push(schatten_of_eigenvalues(&vals, 2.0 * f64::from(p))?);
            }
            if let (Some((rows, cols)), false) = (integrand.rect_shape(), obs.rect_ps.is_empty()) {
                let block = undilate(view.x, rows, cols);
                for &p in &obs.rect_ps {
                    rec.rect_schatten_terminal
                        .push(schatten_norm_rect(&block, 2.0 * f64::from(p))?);
                }
            }
        }
        Ok(())
    })?;
    match shared {
        Some(s) => {
            rec.schatten_quadrature.clone_from(&s.schatten_quadrature);
            rec.bs_quadrature = s.bs_quadrature;
        }
        None => rec.bs_quadrature = bs_acc.sqrt(),
    }
    Ok(rec)
}

fn is_exclusion(err: &Error) -> bool {
    matches!(
        err,
        Error::PathBlowUp { .. } | Error::Overflow(_) | Error::Numeric { .. }
    )
}

/// Simulates `config.paths` paths, path `i` seeded by
/// `derive_path_seed(master_seed, i)`.
///
/// Paths that blow up are excluded; more than 0.1% exclusions is an error.
/// The result does not depend on `exec`.
pub fn run_batch(config: &ExperimentConfig, exec: Execution) -> Result<BatchStats> {
    let obs = config.checks.observables(&config.grid);
    run_batch_with(config, &obs, exec)
}

pub(crate) fn run_batch_with(
    config: &ExperimentConfig,
    obs: &Observables,
    exec: Execution,
) -> Result<BatchStats> {
    if config.paths == 0 {
        return Err(Error::domain("batch needs at least one path"));
    }
    let integrand = &config.integrand;
    let grid = &config.grid;
    let shared = if integrand.is_state_independent() {
        Some(SharedPath::new(integrand, grid, obs)?)
    } else {
        None
    };
    let outcomes = map_indexed(config.paths, exec, |i| {
        let seed = derive_path_seed(config.master_seed, i as u64);
        simulate_record(integrand, grid, obs, shared.as_ref(), i, seed)
    });
    let mut records = Vec::with_capacity(config.paths);
    let mut excluded = 0;
    for outcome in outcomes {
        match outcome {
            Ok(r) => records.push(r),
            Err(e) if is_exclusion(&e) => excluded += 1,
            Err(e) => return Err(e),
        }
    }
    if excluded as f64 > MAX_EXCLUSION_RATE * config.paths as f64 {
        return Err(Error::Batch(format!(
            "{excluded} of {} paths excluded (limit {:.1}%)",
            config.paths,
            MAX_EXCLUSION_RATE * 100.0
        )));
    }
    Ok(BatchStats {
        integrand: integrand.clone(),
        grid: *grid,
        master_seed: config.master_seed,
        requested: config.paths,
        excluded,
        observables: obs.clone(),
        settings: config.settings(),
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrands::{validate_spec, IntegrandSpec};
    use crate::matrix::{schatten_norm, spectral_norm};
    use crate::simulate::{simulate_path, PathSummary};

    fn observables(grid: &TimeGrid) -> Observables {
        Observables {
            sigma2_levels: vec![0.25, 1.0],
            schatten_ps: vec![1, 2],
            rect_ps: vec![],
            betas: vec![0.5, 1.0],
            checkpoints: Observables::evenly_spaced(grid.steps(), 8),
            biane_speicher: true,
        }
    }

    fn config(spec: IntegrandSpec, steps: usize, paths: usize) -> ExperimentConfig {
        let integrand = validate_spec(spec).unwrap();
        ExperimentConfig::new(integrand, TimeGrid::new(1.0, steps).unwrap(), paths, 42)
    }

    #[test]
    fn checkpoints_cover_the_grid() {
        assert_eq!(
            Observables::evenly_spaced(256, 8),
            vec![0, 37, 73, 110, 146, 183, 219, 256]
        );
        assert_eq!(Observables::evenly_spaced(3, 8), vec![0, 1, 2, 3]);
    }

    /// The streaming record must agree with a record rebuilt from the
    /// stored trajectory of the same seed.
    fn rebuild(cfg: &ExperimentConfig, obs: &Observables, seed: u64) -> PathRecord {
        let traj = simulate_path(&cfg.integrand, &cfg.grid, seed).unwrap();
        let summary = PathSummary::from_trajectory(&traj).unwrap();
        let dt = cfg.grid.dt();
        let n = cfg.integrand.n();
        let mut sq = vec![0.0; obs.schatten_ps.len()];
        let mut bs = 0.0;
        for k in 0..cfg.grid.steps() {
            let hs = cfg
                .integrand
                .evaluate(&EvalContext {
                    time: cfg.grid.time(k),
                    x_current: &traj.x[k],
                    qv_current: &traj.qv[k],
                })
                .unwrap();
            let s2 = sum_of_squares(n, &hs);
            for (acc, &p) in sq.iter_mut().zip(&obs.schatten_ps) {
                *acc += schatten_norm(&s2, f64::from(p)).unwrap() * dt;
            }
            let mut s = SymMatrix::zeros(n);
            for h in &hs {
                s.add_scaled(1.0, h);
            }
            bs += spectral_norm(&s).unwrap().powi(2) * dt;
        }
        let within = obs
            .sigma2_levels
            .iter()
            .map(|&l| {
                (0..traj.x.len())
                    .filter(|&k| summary.qv_norm_series[k] <= l)
                    .map(|k| summary.lambda_max_series[k])
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        let xk = &summary.terminal_x;
        PathRecord {
            index: 0,
            seed,
            sup_spectral: summary.sup_spectral,
            sup_lambda_max: summary.sup_lambda_max,
            terminal_spectral: spectral_norm(xk).unwrap(),
            terminal_qv_norm: *summary.qv_norm_series.last().unwrap(),
            terminal_trace_sq: xk.square().trace(),
            terminal_qv_trace: summary.terminal_qv.trace(),
            lambda_max_within: within,
            schatten_terminal: obs
                .schatten_ps
                .iter()
                .map(|&p| summary.schatten_terminal(2.0 * f64::from(p)).unwrap())
                .collect(),
            schatten_quadrature: sq,
            rect_schatten_terminal: vec![],
            bs_quadrature: bs.sqrt(),
            supermartingale: obs
                .betas
                .iter()
                .map(|&b| {
                    obs.checkpoints
                        .iter()
                        .map(|&c| supermartingale_value(&traj.x[c], &traj.qv[c], b).unwrap())
                        .collect()
                })
                .collect(),
        }
    }

    fn assert_close(a: &PathRecord, b: &PathRecord) {
        let close = |x: f64, y: f64| (x - y).abs() <= 1e-10 * (1.0 + x.abs().max(y.abs()));
        assert!(close(a.sup_spectral, b.sup_spectral));
        assert!(close(a.sup_lambda_max, b.sup_lambda_max));
        assert!(close(a.terminal_spectral, b.terminal_spectral));
        assert!(close(a.terminal_qv_norm, b.terminal_qv_norm));
        assert!(close(a.terminal_trace_sq, b.terminal_trace_sq));
        assert!(close(a.terminal_qv_trace, b.terminal_qv_trace));
        assert!(
            close(a.bs_quadrature, b.bs_quadrature),
            "{} {}",
            a.bs_quadrature,
            b.bs_quadrature
        );
        let pairs = [
            (&a.lambda_max_within, &b.lambda_max_within),
            (&a.schatten_terminal, &b.schatten_terminal),
            (&a.schatten_quadrature, &b.schatten_quadrature),
        ];
        for (u, v) in pairs {
            assert_eq!(u.len(), v.len());
            assert!(
                u.iter().zip(v).all(|(&x, &y)| close(x, y)),
                "{u:?} vs {v:?}"
            );
        }
        for (u, v) in a.supermartingale.iter().zip(&b.supermartingale) {
            assert!(
                u.iter().zip(v).all(|(&x, &y)| close(x, y)),
                "{u:?} vs {v:?}"
            );
        }
    }

    #[test]
    fn single_path_batch_matches_simulate_path() {
        let base = vec![
            SymMatrix::from_rows(&[vec![1.0, 0.4], vec![0.4, -0.3]]).unwrap(),
            SymMatrix::diag(&[0.2, 0.7]),
        ];
        let specs = [
            IntegrandSpec::constant(base.clone()),
            IntegrandSpec::time_poly(base.clone(), vec![SymMatrix::identity(2); 2]),
            IntegrandSpec::path_feedback(base, 0.5),
        ];
        for spec in specs {
            let cfg = config(spec, 40, 1);
            let obs = observables(&cfg.grid);
            let batch = run_batch_with(&cfg, &obs, Execution::Sequential).unwrap();
            assert_eq!(batch.path_count(), 1);
            let seed = derive_path_seed(42, 0);
            assert_close(&batch.records[0], &rebuild(&cfg, &obs, seed));
        }
    }

    #[test]
    fn worker_count_does_not_change_the_bytes() {
        let cfg = config(
            IntegrandSpec::path_feedback(vec![SymMatrix::identity(3)], 0.2),
            32,
            200,
        );
        let obs = observables(&cfg.grid);
        let a = run_batch_with(&cfg, &obs, Execution::Sequential).unwrap();
        let b = run_batch_with(&cfg, &obs, Execution::Parallel { workers: 4 }).unwrap();
        assert_eq!(
            serde_json::to_vec(&a).unwrap(),
            serde_json::to_vec(&b).unwrap()
        );
    }

    #[test]
    fn scalar_brownian_records() {
        let cfg = config(
            IntegrandSpec::constant(vec![SymMatrix::identity(1)]),
            16,
            50,
        );
        let obs = observables(&cfg.grid);
        let batch = run_batch_with(&cfg, &obs, Execution::default()).unwrap();
        for r in &batch.records {
            assert_eq!(r.terminal_qv_norm, 1.0);
            assert_eq!(r.terminal_qv_trace, 1.0);
            assert!((r.schatten_quadrature[0] - 1.0).abs() < 1e-15);
            assert!((r.bs_quadrature - 1.0).abs() < 1e-15);
            assert!(r.sup_lambda_max >= 0.0);
            assert_eq!(r.supermartingale[0][0], 1.0);
            assert!(r.lambda_max_within[0] <= r.lambda_max_within[1]);
        }
    }

    #[test]
    fn blow_ups_fail_the_batch() {
        let cfg = config(
            IntegrandSpec::path_feedback(vec![SymMatrix::identity(1)], 1e300),
            50,
            10,
        );
        assert!(matches!(
            run_batch(&cfg, Execution::Sequential),
            Err(Error::Batch(_))
        ));
    }

    #[test]
    fn rect_terminal_norm_matches_block() {
        let a = crate::matrix::RectMatrix::from_rows(&[vec![1.0, 0.0, 2.0]]).unwrap();
        let cfg = config(IntegrandSpec::rect_constant(vec![a]), 8, 3);
        let obs = Observables {
            rect_ps: vec![1, 2],
            ..Observables::default()
        };
        let batch = run_batch_with(&cfg, &obs, Execution::Sequential).unwrap();
        for r in &batch.records {
            // rank one: every Schatten norm equals the spectral norm of the dilation
            let s = r.terminal_spectral;
            assert!((r.rect_schatten_terminal[0] - s).abs() < 1e-12);
            assert!((r.rect_schatten_terminal[1] - s).abs() < 1e-12);
        }
    }
}
