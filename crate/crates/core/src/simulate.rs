//! Euler–Maruyama construction of `X_t = ∫ Σ H_{i,s} dB^i_s` and its
//! quadratic variation on a uniform grid.
//!
//! The scheme is
//!
//! ```text
//! x[k+1]  = x[k]  + Σ_i H_i(t_k, state_k) ΔB^i_k
//! qv[k+1] = qv[k] + dt · Σ_i H_i(t_k, state_k)²
//! ```
//!
//! with `x[0] = qv[0] = 0`. Gaussian increments are drawn step-major,
//! driver-minor from a ChaCha8 stream seeded per path.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrands::{EvalContext, Integrand, SparseSym};
use crate::matrix::{schatten_norm, sym_eigenvalues, trace_exp, RectMatrix, SymMatrix};

/// Uniform grid `t_k = T·k/K` on `[0, T]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridRepr", into = "GridRepr")]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

#[derive(Serialize, Deserialize)]
struct GridRepr {
    horizon: f64,
    steps: usize,
}

impl TryFrom<GridRepr> for TimeGrid {
    type Error = Error;

    fn try_from(r: GridRepr) -> Result<Self> {
        TimeGrid::new(r.horizon, r.steps)
    }
}

impl From<TimeGrid> for GridRepr {
    fn from(g: TimeGrid) -> Self {
        GridRepr {
            horizon: g.horizon,
            steps: g.steps,
        }
    }
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::domain(format!(
                "horizon must be a positive real, got {horizon}"
            )));
        }
        if steps == 0 {
            return Err(Error::domain("grid needs at least one step"));
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// Grid time `t_k`; `time(K)` is exactly the horizon.
    pub fn time(&self, k: usize) -> f64 {
        if k == self.steps {
            self.horizon
        } else {
            self.horizon * k as f64 / self.steps as f64
        }
    }
}

/// `K × N` Brownian increments, row `k` holding `ΔB_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct Increments {
    steps: usize,
    drivers: usize,
    data: Vec<f64>,
}

impl Increments {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let drivers = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || drivers == 0 || rows.iter().any(|r| r.len() != drivers) {
            return Err(Error::domain(
                "increments must be a non-empty rectangular array",
            ));
        }
        Ok(Self {
            steps: rows.len(),
            drivers,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn drivers(&self) -> usize {
        self.drivers
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.drivers..(k + 1) * self.drivers]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Sums consecutive blocks of `factor` rows, giving the increments of
    /// the same Brownian path on a grid `factor` times coarser.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.steps.is_multiple_of(factor) {
            return Err(Error::domain(format!(
                "cannot coarsen {} steps by {factor}",
                self.steps
            )));
        }
        let steps = self.steps / factor;
        let mut data = vec![0.0; steps * self.drivers];
        for k in 0..self.steps {
            let dst = k / factor;
            for i in 0..self.drivers {
                data[dst * self.drivers + i] += self.data[k * self.drivers + i];
            }
        }
        Ok(Self {
            steps,
            drivers: self.drivers,
            data,
        })
    }
}

fn fill_gaussian(rng: &mut ChaCha8Rng, scale: f64, out: &mut [f64]) {
    for v in out {
        let z: f64 = rng.sample(StandardNormal);
        *v = scale * z;
    }
}

/// Independent `N(0, dt)` increments, deterministic in `seed`.
pub fn brownian_increments(grid: &TimeGrid, drivers: usize, seed: u64) -> Result<Increments> {
    if drivers == 0 {
        return Err(Error::domain("need at least one driver"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = vec![0.0; grid.steps() * drivers];
    let sd = grid.dt().sqrt();
    for row in data.chunks_mut(drivers) {
        fill_gaussian(&mut rng, sd, row);
    }
    Ok(Increments {
        steps: grid.steps(),
        drivers,
        data,
    })
}

/// One simulated path on the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub x: Vec<SymMatrix>,
    pub qv: Vec<SymMatrix>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.x.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.x[0].dim()
    }
}

/// Where the increments of a path come from.
pub(crate) enum Noise<'a> {
    Seeded(Box<ChaCha8Rng>),
    Given(&'a Increments),
}

impl Noise<'_> {
    pub(crate) fn seeded(seed: u64) -> Self {
        Noise::Seeded(Box::new(ChaCha8Rng::seed_from_u64(seed)))
    }

    fn fill(&mut self, k: usize, sd: f64, out: &mut [f64]) {
        match self {
            Noise::Seeded(rng) => fill_gaussian(rng, sd, out),
            Noise::Given(inc) => out.copy_from_slice(inc.row(k)),
        }
    }
}

/// State handed to a path visitor at grid index `k`.
pub(crate) struct StepView<'a> {
    pub k: usize,
    pub x: &'a SymMatrix,
    pub qv: Option<&'a SymMatrix>,
    /// Integrand values driving the step `k → k+1`; `None` at `k = K` and
    /// whenever they were not requested for a constant family.
    pub integrands: Option<&'a [SymMatrix]>,
}

/// `Σ_i H_i²`, the quadratic-variation density.
pub(crate) fn sum_of_squares(n: usize, hs: &[SymMatrix]) -> SymMatrix {
    let mut acc = SymMatrix::zeros(n);
    for h in hs {
        acc.add_scaled(1.0, &h.square());
    }
    acc
}

pub(crate) struct DriveOptions {
    pub track_qv: bool,
    pub want_integrands: bool,
}

/// Runs the scheme for one path, calling `visit` at every grid index
/// `0..=K` before stepping.
pub(crate) fn drive_path(
    integrand: &Integrand,
    grid: &TimeGrid,
    noise: &mut Noise<'_>,
    opts: &DriveOptions,
    mut visit: impl FnMut(&StepView<'_>) -> Result<()>,
) -> Result<()> {
    let n = integrand.n();
    let drivers = integrand.drivers();
    if let Noise::Given(inc) = noise {
        if inc.steps() != grid.steps() || inc.drivers() != drivers {
            return Err(Error::domain(format!(
                "increments are {}x{}, grid needs {}x{drivers}",
                inc.steps(),
                inc.drivers(),
                grid.steps()
            )));
        }
    }
    let dt = grid.dt();
    let sd = dt.sqrt();
    let terms: Option<Vec<SparseSym>> = integrand.constant_terms();
    let constant_dense: Option<Vec<SymMatrix>> = match &terms {
        Some(ts) if opts.want_integrands || opts.track_qv => {
            Some(ts.iter().map(SparseSym::to_dense).collect())
        }
        _ => None,
    };
    let constant_sq = match (&constant_dense, opts.track_qv) {
        (Some(hs), true) => Some(sum_of_squares(n, hs)),
        _ => None,
    };

    let mut x = SymMatrix::zeros(n);
    let mut qv = SymMatrix::zeros(n);
    let mut db = vec![0.0; drivers];
    for k in 0..grid.steps() {
        let evaluated = if terms.is_some() {
            None
        } else {
            Some(integrand.evaluate(&EvalContext {
                time: grid.time(k),
                x_current: &x,
                qv_current: &qv,
            })?)
        };
        let hs: Option<&[SymMatrix]> = evaluated.as_deref().or(if opts.want_integrands {
            constant_dense.as_deref()
        } else {
            None
        });
        visit(&StepView {
            k,
            x: &x,
            qv: opts.track_qv.then_some(&qv),
            integrands: hs,
        })?;

        noise.fill(k, sd, &mut db);
        if opts.track_qv {
            match (&constant_sq, &evaluated) {
                (Some(sq), _) => qv.add_scaled(dt, sq),
                (None, Some(hs)) => qv.add_scaled(dt, &sum_of_squares(n, hs)),
                (None, None) => unreachable!("constant families carry their square"),
            }
        }
        match (&terms, &evaluated) {
            (Some(ts), _) => {
                let data = x.data_mut();
                for (t, &b) in ts.iter().zip(&db) {
                    t.accumulate_into(b, data);
                }
            }
            (None, Some(hs)) => {
                for (h, &b) in hs.iter().zip(&db) {
                    x.add_scaled(b, h);
                }
            }
            (None, None) => unreachable!(),
        }
        if !x.is_finite() || !qv.is_finite() {
            return Err(Error::PathBlowUp {
                step: k + 1,
                reason: "non-finite state".into(),
            });
        }
    }
    visit(&StepView {
        k: grid.steps(),
        x: &x,
        qv: opts.track_qv.then_some(&qv),
        integrands: None,
    })
}

/// Quadratic variation series of a state-independent integrand, computed
/// with the same recurrence as [`drive_path`].
pub(crate) fn deterministic_qv_series(
    integrand: &Integrand,
    grid: &TimeGrid,
) -> Result<Vec<SymMatrix>> {
    debug_assert!(integrand.is_state_independent());
    let n = integrand.n();
    let dt = grid.dt();
    let zero = SymMatrix::zeros(n);
    let mut out = Vec::with_capacity(grid.steps() + 1);
    let mut qv = SymMatrix::zeros(n);
    out.push(qv.clone());
    let constant_sq = integrand.constant_terms().map(|ts| {
        let dense: Vec<SymMatrix> = ts.iter().map(SparseSym::to_dense).collect();
        sum_of_squares(n, &dense)
    });
    for k in 0..grid.steps() {
        match &constant_sq {
            Some(sq) => qv.add_scaled(dt, sq),
            None => {
                let hs = integrand.evaluate(&EvalContext {
                    time: grid.time(k),
                    x_current: &zero,
                    qv_current: &zero,
                })?;
                qv.add_scaled(dt, &sum_of_squares(n, &hs));
            }
        }
        out.push(qv.clone());
    }
    Ok(out)
}

fn record_trajectory(
    integrand: &Integrand,
    grid: &TimeGrid,
    mut noise: Noise<'_>,
) -> Result<Trajectory> {
    let cap = grid.steps() + 1;
    let mut traj = Trajectory {
        times: (0..cap).map(|k| grid.time(k)).collect(),
        x: Vec::with_capacity(cap),
        qv: Vec::with_capacity(cap),
    };
    let opts = DriveOptions {
        track_qv: true,
        want_integrands: false,
    };
    drive_path(integrand, grid, &mut noise, &opts, |view| {
        traj.x.push(view.x.clone());
        traj.qv.push(view.qv.expect("qv tracked").clone());
        Ok(())
    })?;
    Ok(traj)
}

/// Simulates one full trajectory from a per-path seed.
pub fn simulate_path(integrand: &Integrand, grid: &TimeGrid, seed: u64) -> Result<Trajectory> {
    record_trajectory(integrand, grid, Noise::seeded(seed))
}

/// Simulates one trajectory driven by explicit increments.
pub fn simulate_with_increments(
    integrand: &Integrand,
    grid: &TimeGrid,
    increments: &Increments,
) -> Result<Trajectory> {
    record_trajectory(integrand, grid, Noise::Given(increments))
}

/// `Tr exp(β·x[k] − (β²/2)·qv[k])` along a trajectory.
pub fn supermartingale_series(traj: &Trajectory, beta: f64) -> Result<Vec<f64>> {
    traj.x
        .iter()
        .zip(&traj.qv)
        .map(|(x, qv)| supermartingale_value(x, qv, beta))
        .collect()
}

pub(crate) fn supermartingale_value(x: &SymMatrix, qv: &SymMatrix, beta: f64) -> Result<f64> {
    let mut m = x.scaled(beta);
    m.add_scaled(-0.5 * beta * beta, qv);
    trace_exp(&m, 1.0)
}

/// First grid index with `λ_max(x[k]) ≥ u`.
pub fn first_hitting_index(traj: &Trajectory, u: f64) -> Result<Option<usize>> {
    if !u.is_finite() {
        return Err(Error::domain("hitting level must be finite"));
    }
    for (k, x) in traj.x.iter().enumerate() {
        let top = sym_eigenvalues(x)?.first().copied().unwrap_or(0.0);
        if top >= u {
            return Ok(Some(k));
        }
    }
    Ok(None)
}

/// Derived series of one trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct PathSummary {
    pub sup_spectral: f64,
    pub sup_lambda_max: f64,
    pub terminal_x: SymMatrix,
    pub terminal_qv: SymMatrix,
    pub lambda_max_series: Vec<f64>,
    pub spectral_series: Vec<f64>,
    pub qv_norm_series: Vec<f64>,
}

impl PathSummary {
    pub fn from_trajectory(traj: &Trajectory) -> Result<Self> {
        let mut lambda_max_series = Vec::with_capacity(traj.x.len());
        let mut spectral_series = Vec::with_capacity(traj.x.len());
        for x in &traj.x {
            let vals = sym_eigenvalues(x)?;
            lambda_max_series.push(vals[0]);
            spectral_series.push(vals[0].abs().max(vals[vals.len() - 1].abs()));
        }
        let qv_norm_series = traj
            .qv
            .iter()
            .map(|q| sym_eigenvalues(q).map(|v| v[0].abs().max(v[v.len() - 1].abs())))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            sup_spectral: spectral_series.iter().copied().fold(0.0, f64::max),
            sup_lambda_max: lambda_max_series
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max),
            terminal_x: traj.x.last().expect("non-empty").clone(),
            terminal_qv: traj.qv.last().expect("non-empty").clone(),
            lambda_max_series,
            spectral_series,
            qv_norm_series,
        })
    }

    pub fn hit_index(&self, u: f64) -> Option<usize> {
        self.lambda_max_series.iter().position(|&l| l >= u)
    }

    pub fn schatten_terminal(&self, p: f64) -> Result<f64> {
        schatten_norm(&self.terminal_x, p)
    }
}

/// Exact law of `X_t = Σ_i H_i B^i_t` for constant integrands.
#[derive(Clone, Debug)]
pub struct ConstantLaw {
    dim: usize,
    terms: Vec<SparseSym>,
    diagonal: bool,
}

impl ConstantLaw {
    pub fn new(matrices: &[SymMatrix]) -> Result<Self> {
        let dim = matrices
            .first()
            .map(SymMatrix::dim)
            .ok_or_else(|| Error::domain("need at least one matrix"))?;
        if matrices.iter().any(|m| m.dim() != dim) {
            return Err(Error::domain("matrices must share a dimension"));
        }
        if matrices.iter().any(|m| !m.is_finite()) {
            return Err(Error::domain("matrices must be finite"));
        }
        Ok(Self::from_terms(
            dim,
            matrices.iter().map(SparseSym::from_dense).collect(),
        ))
    }

    /// Law of a constant-family integrand at time `t`.
    pub fn from_integrand(integrand: &Integrand) -> Result<Self> {
        let terms = integrand.constant_terms().ok_or_else(|| {
            Error::domain(format!(
                "exact sampling needs a constant family, got {}",
                integrand.family_name()
            ))
        })?;
        Ok(Self::from_terms(integrand.n(), terms))
    }

    fn from_terms(dim: usize, terms: Vec<SparseSym>) -> Self {
        let diagonal = terms
            .iter()
            .all(|t| t.entries.iter().all(|&(k, _)| k / dim == k % dim));
        Self {
            dim,
            terms,
            diagonal,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn drivers(&self) -> usize {
        self.terms.len()
    }

    /// One draw of `X_t`.
    pub fn sample(&self, t: f64, rng: &mut impl Rng) -> SymMatrix {
        let sd = t.sqrt();
        let mut x = SymMatrix::zeros(self.dim);
        let data = x.data_mut();
        for term in &self.terms {
            let z: f64 = rng.sample(StandardNormal);
            term.accumulate_into(sd * z, data);
        }
        x
    }

    /// `‖X_t‖` of one draw; diagonal payloads skip the dense matrix.
    pub fn sample_spectral_norm(&self, t: f64, rng: &mut impl Rng) -> Result<f64> {
        if self.diagonal {
            let sd = t.sqrt();
            let mut diag = vec![0.0; self.dim];
            for term in &self.terms {
                let z: f64 = rng.sample(StandardNormal);
                for &(k, v) in &term.entries {
                    diag[k / self.dim] += sd * z * v;
                }
            }
            return Ok(diag.iter().fold(0.0, |m, v| m.max(v.abs())));
        }
        crate::matrix::spectral_norm(&self.sample(t, rng))
    }

    /// `‖Σ_i H_i²‖`.
    pub fn qv_density_norm(&self) -> Result<f64> {
        if self.diagonal {
            let mut diag = vec![0.0; self.dim];
            for term in &self.terms {
                for &(k, v) in &term.entries {
                    diag[k / self.dim] += v * v;
                }
            }
            return Ok(diag.iter().fold(0.0, |m, v| m.max(v.abs())));
        }
        let dense: Vec<SymMatrix> = self.terms.iter().map(SparseSym::to_dense).collect();
        crate::matrix::spectral_norm(&sum_of_squares(self.dim, &dense))
    }
}

/// One exact sample of `Σ_i H_i B^i_t`.
pub fn exact_constant_path(matrices: &[SymMatrix], t: f64, seed: u64) -> Result<SymMatrix> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::domain("time must be finite and non-negative"));
    }
    let law = ConstantLaw::new(matrices)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(law.sample(t, &mut rng))
}

/// Upper-left `rows × cols` off-diagonal block of a dilated state.
pub(crate) fn undilate(x: &SymMatrix, rows: usize, cols: usize) -> RectMatrix {
    RectMatrix::from_fn(rows, cols, |i, j| x.get(i, rows + j))
}
