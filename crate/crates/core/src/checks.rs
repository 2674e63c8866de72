//! Left- and right-hand sides of the inequalities, with verdicts.
//!
//! Every check produces a [`CheckResult`]. The verdict is
//!
//! ```text
//! lhs ≤ f·rhs + slack·(hw(lhs) + f·hw(rhs)) + tolerance
//! ```
//!
//! where `hw` is an interval half-width and `f` the bound factor (1 unless
//! the inequality carries a universal constant the right side omits).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrands::Integrand;
use crate::matrix::{schatten_norm, spectral_map, trace_exp, RectMatrix, SymMatrix};
use crate::montecarlo::stats::{bootstrap_ci, wilson_interval, EstimateCI, Statistic};
use crate::montecarlo::{
    derive_stream_seed, BatchStats, CheckSettings, ExperimentConfig, Tolerances,
};
use crate::simulate::ConstantLaw;

/// `12·√(2 ln 2)`, the constant of the spectral BDG inequality.
pub fn bdg_constant() -> f64 {
    12.0 * (2.0 * std::f64::consts::LN_2).sqrt()
}

/// Default tolerance of the trace lemma, relative to `1 + |rhs|`.
pub const TRACE_LEMMA_TOL: f64 = 1e-9;
/// Default tolerance of the Hessian lemma, relative to `1 + |rhs|`.
pub const HESSIAN_LEMMA_TOL: f64 = 1e-5;

/// Parameter echo of a check.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckParams {
    pub n: usize,
    pub drivers: usize,
    pub family: String,
    pub p: Option<f64>,
    pub u: Option<f64>,
    pub sigma2: Option<f64>,
    pub t: Option<f64>,
    pub beta: Option<f64>,
    pub q: Option<u32>,
    pub r: Option<u32>,
    /// Grid indices `(from, to)` for supermartingale rows.
    pub checkpoints: Option<(usize, usize)>,
}

impl CheckParams {
    fn of(integrand: &Integrand) -> Self {
        Self {
            n: integrand.n(),
            drivers: integrand.drivers(),
            family: integrand.family_name().to_string(),
            ..Self::default()
        }
    }

    fn deterministic(n: usize) -> Self {
        Self {
            n,
            family: "deterministic".into(),
            ..Self::default()
        }
    }
}

/// One inequality instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub params: CheckParams,
    pub lhs: EstimateCI,
    pub rhs: EstimateCI,
    pub bound_factor: f64,
    pub slack: f64,
    pub tolerance: f64,
    /// `lhs / rhs`, or the check-specific normalisation; absent when the
    /// denominator is zero.
    pub ratio: Option<f64>,
    pub skipped: bool,
    pub holds: bool,
    pub paths: usize,
    pub seed: Option<u64>,
    pub notes: Vec<String>,
}

impl CheckResult {
    #[allow(clippy::too_many_arguments)]
    fn new(
        name: &str,
        params: CheckParams,
        lhs: EstimateCI,
        rhs: EstimateCI,
        bound_factor: f64,
        slack: f64,
        tolerance: f64,
        paths: usize,
        seed: Option<u64>,
    ) -> Self {
        let mut out = Self {
            name: name.to_string(),
            params,
            lhs,
            rhs,
            bound_factor,
            slack,
            tolerance,
            ratio: (rhs.point != 0.0).then(|| lhs.point / rhs.point),
            skipped: false,
            holds: false,
            paths,
            seed,
            notes: Vec::new(),
        };
        out.holds = out.recompute_holds();
        out
    }

    pub fn lhs_ci(&self) -> f64 {
        self.lhs.half_width()
    }

    pub fn rhs_ci(&self) -> f64 {
        self.rhs.half_width()
    }

    /// The verdict from the stored fields.
    pub fn recompute_holds(&self) -> bool {
        if self.skipped {
            return true;
        }
        let f = self.bound_factor;
        let allowance = self.slack * (self.lhs_ci() + f * self.rhs_ci()) + self.tolerance;
        self.lhs.point <= f * self.rhs.point + allowance
    }

    fn with_note(mut self, note: impl Into<String>) -> Self {
        self.notes.push(note.into());
        self
    }
}

fn dense_power(a: &SymMatrix, k: u32) -> RectMatrix {
    let base = RectMatrix::from(a);
    let mut acc = RectMatrix::from(&SymMatrix::identity(a.dim()));
    for _ in 0..k {
        acc = acc.matmul(&base);
    }
    acc
}

fn same_dim(a: &SymMatrix, b: &SymMatrix) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::domain(format!(
            "dimension mismatch: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// `Tr(H A^q H A^{r−q}) ≤ Tr(H² |A|^r)` by dense arithmetic.
pub fn check_trace_lemma(h: &SymMatrix, a: &SymMatrix, q: u32, r: u32) -> Result<CheckResult> {
    check_trace_lemma_with(h, a, q, r, TRACE_LEMMA_TOL)
}

pub fn check_trace_lemma_with(
    h: &SymMatrix,
    a: &SymMatrix,
    q: u32,
    r: u32,
    tol: f64,
) -> Result<CheckResult> {
    if q > r {
        return Err(Error::domain(format!("need 0 ≤ q ≤ r, got q={q}, r={r}")));
    }
    same_dim(h, a)?;
    if !h.is_finite() || !a.is_finite() {
        return Err(Error::domain("matrices must be finite"));
    }
    let hm = RectMatrix::from(h);
    let lhs = hm
        .matmul(&dense_power(a, q))
        .matmul(&hm)
        .matmul(&dense_power(a, r - q))
        .trace();
    let abs_r = spectral_map(a, |l| l.abs().powi(r as i32))?;
    let rhs = RectMatrix::from(&h.square())
        .matmul(&RectMatrix::from(&abs_r))
        .trace();
    let params = CheckParams {
        q: Some(q),
        r: Some(r),
        ..CheckParams::deterministic(h.dim())
    };
    Ok(CheckResult::new(
        "trace_lemma",
        params,
        EstimateCI::exact(lhs),
        EstimateCI::exact(rhs),
        1.0,
        0.0,
        tol * (1.0 + rhs.abs()),
        0,
        None,
    ))
}

const HESSIAN_STEP_RANGE: (f64, f64) = (1e-6, 1e-2);

/// Central second difference of `Tr exp` along `H` against `Tr(e^M H²)`.
pub fn check_hessian_lemma(m: &SymMatrix, h: &SymMatrix, step: f64) -> Result<CheckResult> {
    check_hessian_lemma_with(m, h, step, HESSIAN_LEMMA_TOL)
}

pub fn check_hessian_lemma_with(
    m: &SymMatrix,
    h: &SymMatrix,
    step: f64,
    tol: f64,
) -> Result<CheckResult> {
    let (lo, hi) = HESSIAN_STEP_RANGE;
    if !(lo..=hi).contains(&step) {
        return Err(Error::domain(format!(
            "step must lie in [{lo:e}, {hi:e}], got {step:e}"
        )));
    }
    same_dim(m, h)?;
    let f = |s: f64| -> Result<f64> {
        let mut shifted = m.clone();
        shifted.add_scaled(s, h);
        trace_exp(&shifted, 1.0)
    };
    let lhs = (f(step)? - 2.0 * f(0.0)? + f(-step)?) / (step * step);
    let exp_m = spectral_map(m, f64::exp)?;
    if !exp_m.is_finite() {
        return Err(Error::Overflow("exp(M) is not representable".into()));
    }
    let rhs = RectMatrix::from(&exp_m)
        .matmul(&RectMatrix::from(&h.square()))
        .trace();
    Ok(CheckResult::new(
        "hessian_lemma",
        CheckParams::deterministic(m.dim()),
        EstimateCI::exact(lhs),
        EstimateCI::exact(rhs),
        1.0,
        0.0,
        tol * (1.0 + rhs.abs()),
        0,
        None,
    ))
}

/// Random instances of both trace lemmas, `instances` of each.
pub fn lemma_suite(seed: u64, instances: usize, tol: &Tolerances) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_stream_seed(seed, "lemmas"));
    let mut out = Vec::with_capacity(2 * instances);
    let gaussian_sym = |rng: &mut ChaCha8Rng, n: usize| {
        SymMatrix::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
    };
    for _ in 0..instances {
        let n = rng.random_range(1..=6);
        let r = rng.random_range(0..=8u32);
        let q = rng.random_range(0..=r);
        let h = gaussian_sym(&mut rng, n);
        let a = gaussian_sym(&mut rng, n);
        out.push(check_trace_lemma_with(&h, &a, q, r, tol.trace_lemma)?);
    }
    for _ in 0..instances {
        let n = rng.random_range(1..=5);
        let m = gaussian_sym(&mut rng, n);
        let h = gaussian_sym(&mut rng, n);
        out.push(check_hessian_lemma_with(
            &m,
            &h,
            tol.hessian_step,
            tol.hessian_lemma,
        )?);
    }
    Ok(out)
}

fn sigma2_slot(batch: &BatchStats, sigma2: f64) -> Result<usize> {
    batch
        .observables
        .sigma2_levels
        .iter()
        .position(|&l| l == sigma2)
        .ok_or_else(|| Error::domain(format!("batch did not record variance level {sigma2}")))
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("{name} must be positive, got {v}")))
    }
}

fn freedman_bound(n: usize, u: f64, sigma2: f64) -> f64 {
    n as f64 * (-u * u / (2.0 * sigma2)).exp()
}

fn paths_u64(batch: &BatchStats) -> u64 {
    batch.path_count() as u64
}

/// `P(∃k: λ_max(x[k]) ≥ u, ‖qv[k]‖ ≤ σ²)` against `n·e^{−u²/(2σ²)}`.
pub fn freedman_check(batch: &BatchStats, u: f64, sigma2: f64) -> Result<CheckResult> {
    batch.require_paths()?;
    check_positive("u", u)?;
    check_positive("sigma2", sigma2)?;
    let slot = sigma2_slot(batch, sigma2)?;
    let s = &batch.settings;
    let hits = batch.count(|r| r.lambda_max_within[slot] >= u);
    let lhs = wilson_interval(hits, paths_u64(batch), s.confidence)?;
    let rhs = EstimateCI::exact(s.bound_factor * freedman_bound(batch.n(), u, sigma2));
    let params = CheckParams {
        u: Some(u),
        sigma2: Some(sigma2),
        t: Some(batch.horizon()),
        ..CheckParams::of(&batch.integrand)
    };
    Ok(CheckResult::new(
        "freedman",
        params,
        lhs,
        rhs,
        1.0,
        s.slack,
        0.0,
        batch.path_count(),
        Some(batch.master_seed),
    ))
}

/// `P(λ_max ≥ 2u, ‖qv‖ ≤ σ²)` against `n·e^{−u²/(2σ²)}·P(sup λ_max ≥ u)`.
pub fn good_lambda_check(batch: &BatchStats, u: f64, sigma2: f64) -> Result<CheckResult> {
    batch.require_paths()?;
    if !(u >= 0.0 && u.is_finite()) {
        return Err(Error::domain(format!("u must be non-negative, got {u}")));
    }
    check_positive("sigma2", sigma2)?;
    let slot = sigma2_slot(batch, sigma2)?;
    let s = &batch.settings;
    let m = paths_u64(batch);
    let high = batch.count(|r| r.lambda_max_within[slot] >= 2.0 * u);
    let low = batch.count(|r| r.sup_lambda_max >= u);
    let lhs = wilson_interval(high, m, s.confidence)?;
    let factor = s.bound_factor * freedman_bound(batch.n(), u, sigma2);
    let rhs = wilson_interval(low, m, s.confidence)?.scale(factor);
    let params = CheckParams {
        u: Some(u),
        sigma2: Some(sigma2),
        t: Some(batch.horizon()),
        ..CheckParams::of(&batch.integrand)
    };
    Ok(CheckResult::new(
        "good_lambda",
        params,
        lhs,
        rhs,
        1.0,
        s.slack,
        0.0,
        m as usize,
        Some(batch.master_seed),
    ))
}

fn check_horizon(batch: &BatchStats, t: f64) -> Result<()> {
    let horizon = batch.horizon();
    if (t - horizon).abs() > 1e-12 * horizon {
        return Err(Error::domain(format!(
            "t = {t} does not match the batch horizon {horizon}"
        )));
    }
    Ok(())
}

fn check_exponent(p: u32) -> Result<f64> {
    if p == 0 {
        Err(Error::domain("exponent p must be a positive integer"))
    } else {
        Ok(f64::from(p))
    }
}

fn boot(
    batch: &BatchStats,
    values: &[f64],
    statistic: Statistic,
    label: &str,
) -> Result<EstimateCI> {
    let s = &batch.settings;
    let seed = derive_stream_seed(batch.master_seed, label);
    if values.len() < crate::montecarlo::stats::MIN_BOOTSTRAP_SAMPLES {
        return Err(Error::domain(format!(
            "{label}: bootstrap needs at least {} paths, batch has {}",
            crate::montecarlo::stats::MIN_BOOTSTRAP_SAMPLES,
            values.len()
        )));
    }
    bootstrap_ci(values, statistic, s.bootstrap_resamples, s.confidence, seed)
}

/// Relative half-width above which a high moment is flagged.
const HEAVY_TAIL_REL_WIDTH: f64 = 0.25;

/// `(E sup‖X‖^p)^{1/p}` against `C·√(p + ln n)·(E‖⟨X⟩_t‖^{p/2})^{1/p}`.
pub fn bdg_check(batch: &BatchStats, p: u32, t: f64) -> Result<CheckResult> {
    batch.require_paths()?;
    check_horizon(batch, t)?;
    let pf = check_exponent(p)?;
    let s = &batch.settings;
    let sup_p = batch.values(|r| r.sup_spectral.powf(pf));
    let qv_p = batch.values(|r| r.terminal_qv_norm.powf(pf / 2.0));
    let lhs = boot(
        batch,
        &sup_p,
        Statistic::MeanRoot(pf),
        &format!("bdg/{p}/lhs"),
    )?;
    let qv = boot(
        batch,
        &qv_p,
        Statistic::MeanRoot(pf),
        &format!("bdg/{p}/rhs"),
    )?;
    let n = batch.n() as f64;
    let rhs = qv.scale(s.bound_factor * bdg_constant() * (pf + n.ln()).sqrt());
    let params = CheckParams {
        p: Some(pf),
        t: Some(t),
        ..CheckParams::of(&batch.integrand)
    };
    let mut out = CheckResult::new(
        "bdg",
        params,
        lhs,
        rhs,
        1.0,
        s.slack,
        0.0,
        batch.path_count(),
        Some(batch.master_seed),
    );
    if p >= 4 && lhs.half_width() > HEAVY_TAIL_REL_WIDTH * lhs.point {
        out = out.with_note("heavy-tailed moment: interval wider than 25% of estimate");
    }
    Ok(out)
}

fn schatten_slot(batch: &BatchStats, p: u32) -> Result<usize> {
    batch
        .observables
        .schatten_ps
        .iter()
        .position(|&q| q == p)
        .ok_or_else(|| Error::domain(format!("batch did not record Schatten p = {p}")))
}

/// `E‖X_t‖²_{2p}` against `(2p−1)·E Σ_k ‖Σ_i H_i²‖_p·dt`.
pub fn schatten_check(batch: &BatchStats, p: u32, t: f64) -> Result<CheckResult> {
    batch.require_paths()?;
    check_horizon(batch, t)?;
    let pf = check_exponent(p)?;
    let slot = schatten_slot(batch, p)?;
    let s = &batch.settings;
    let norms = batch.values(|r| r.schatten_terminal[slot].powi(2));
    let quad = batch.values(|r| r.schatten_quadrature[slot]);
    let lhs = boot(batch, &norms, Statistic::Mean, &format!("schatten/{p}/lhs"))?;
    let rhs = boot(batch, &quad, Statistic::Mean, &format!("schatten/{p}/rhs"))?
        .scale(s.bound_factor * (2.0 * pf - 1.0));
    let params = CheckParams {
        p: Some(pf),
        t: Some(t),
        ..CheckParams::of(&batch.integrand)
    };
    Ok(CheckResult::new(
        "schatten",
        params,
        lhs,
        rhs,
        1.0,
        s.slack,
        0.0,
        batch.path_count(),
        Some(batch.master_seed),
    ))
}

/// `(‖Σ HHᵀ‖_p^p + ‖Σ HᵀH‖_p^p)^{1/p}` of constant rectangular payloads.
pub fn rect_density(payloads: &[RectMatrix], p: f64) -> Result<f64> {
    let (rows, cols) = payloads
        .first()
        .map(|a| (a.rows(), a.cols()))
        .ok_or_else(|| Error::domain("need at least one payload"))?;
    let mut left = SymMatrix::zeros(rows);
    let mut right = SymMatrix::zeros(cols);
    for a in payloads {
        left.add_scaled(1.0, &a.cogram());
        right.add_scaled(1.0, &a.gram());
    }
    let l = schatten_norm(&left, p)?;
    let r = schatten_norm(&right, p)?;
    if l == 0.0 && r == 0.0 {
        return Ok(0.0);
    }
    // Scale before raising to the p-th power.
    let m = l.max(r);
    Ok(m * ((l / m).powf(p) + (r / m).powf(p)).powf(1.0 / p))
}

/// Rectangular Schatten bound, reported under two factors:
/// `(2p−1)·2^{−1/p}` (`schatten_rect`) and `√(2p−1)·2^{−1/p}`
/// (`schatten_rect_printed`).
pub fn schatten_rect_check(batch: &BatchStats, p: u32, t: f64) -> Result<Vec<CheckResult>> {
    batch.require_paths()?;
    check_horizon(batch, t)?;
    let pf = check_exponent(p)?;
    let payloads = batch
        .integrand
        .rect_payloads()
        .ok_or_else(|| Error::domain("rectangular check needs the rect_constant family"))?;
    let slot = batch
        .observables
        .rect_ps
        .iter()
        .position(|&q| q == p)
        .ok_or_else(|| Error::domain(format!("batch did not record rectangular p = {p}")))?;
    let s = &batch.settings;
    let norms = batch.values(|r| r.rect_schatten_terminal[slot].powi(2));
    let lhs = boot(
        batch,
        &norms,
        Statistic::Mean,
        &format!("schatten_rect/{p}/lhs"),
    )?;
    let integral = rect_density(payloads, pf)? * t;
    let shrink = 2f64.powf(-1.0 / pf);
    let params = CheckParams {
        p: Some(pf),
        t: Some(t),
        ..CheckParams::of(&batch.integrand)
    };
    let make = |name: &str, factor: f64| {
        CheckResult::new(
            name,
            params.clone(),
            lhs,
            EstimateCI::exact(s.bound_factor * factor * shrink * integral),
            1.0,
            s.slack,
            0.0,
            batch.path_count(),
            Some(batch.master_seed),
        )
    };
    Ok(vec![
        make("schatten_rect", 2.0 * pf - 1.0),
        make("schatten_rect_printed", (2.0 * pf - 1.0).sqrt()),
    ])
}

/// `E‖X_t‖` against `2√2·E(Σ_k ‖Σ_i H_i‖²·dt)^{1/2}`.
pub fn biane_speicher_check(batch: &BatchStats, t: f64) -> Result<CheckResult> {
    batch.require_paths()?;
    check_horizon(batch, t)?;
    if !batch.observables.biane_speicher {
        return Err(Error::domain(
            "batch did not record the Biane–Speicher quadrature",
        ));
    }
    let s = &batch.settings;
    let lhs = boot(
        batch,
        &batch.values(|r| r.terminal_spectral),
        Statistic::Mean,
        "bs/lhs",
    )?;
    let rhs = boot(
        batch,
        &batch.values(|r| r.bs_quadrature),
        Statistic::Mean,
        "bs/rhs",
    )?
    .scale(s.bound_factor * 2.0 * std::f64::consts::SQRT_2);
    let params = CheckParams {
        t: Some(t),
        ..CheckParams::of(&batch.integrand)
    };
    Ok(CheckResult::new(
        "biane_speicher",
        params,
        lhs,
        rhs,
        1.0,
        s.slack,
        0.0,
        batch.path_count(),
        Some(batch.master_seed),
    ))
}

/// Mean of `Tr exp(βX − (β²/2)⟨X⟩)` at consecutive checkpoints: one row
/// per pair, `lhs` the later mean and `rhs` the earlier one.
pub fn supermartingale_check(batch: &BatchStats, beta: f64) -> Result<Vec<CheckResult>> {
    batch.require_paths()?;
    let slot = batch
        .observables
        .betas
        .iter()
        .position(|&b| b == beta)
        .ok_or_else(|| Error::domain(format!("batch did not record β = {beta}")))?;
    let s = &batch.settings;
    let cps = &batch.observables.checkpoints;
    let means = (0..cps.len())
        .map(|c| {
            let v = batch.values(|r| r.supermartingale[slot][c]);
            boot(
                batch,
                &v,
                Statistic::Mean,
                &format!("supermartingale/{beta}/{c}"),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(cps
        .windows(2)
        .zip(means.windows(2))
        .map(|(k, m)| {
            let params = CheckParams {
                beta: Some(beta),
                t: Some(batch.grid.time(k[1])),
                checkpoints: Some((k[0], k[1])),
                ..CheckParams::of(&batch.integrand)
            };
            CheckResult::new(
                "supermartingale",
                params,
                m[1],
                m[0].scale(s.bound_factor),
                1.0,
                s.slack,
                0.0,
                batch.path_count(),
                Some(batch.master_seed),
            )
        })
        .collect())
}

/// Draws of `‖Σ_i γ_i H_i‖` for a constant family at `t = 1`.
pub fn khintchine_samples(integrand: &Integrand, samples: usize, seed: u64) -> Result<Vec<f64>> {
    let law = ConstantLaw::from_integrand(integrand)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_stream_seed(seed, "khintchine"));
    (0..samples)
        .map(|_| law.sample_spectral_norm(1.0, &mut rng))
        .collect()
}

/// `E‖Σ_i γ_i H_i‖` against `√(ln n)·‖Σ_i H_i²‖^{1/2}`.
///
/// The ratio is `lhs / ‖Σ H²‖^{1/2}`. The verdict uses the bound implied by
/// the BDG inequality at `p = 1`, `C·√(1 + ln n)·‖Σ H²‖^{1/2}`, folded into
/// the bound factor. At `n = 1` the verdict is skipped.
pub fn khintchine_check(
    integrand: &Integrand,
    samples: usize,
    seed: u64,
    settings: &CheckSettings,
) -> Result<CheckResult> {
    let draws = khintchine_samples(integrand, samples, seed)?;
    let law = ConstantLaw::from_integrand(integrand)?;
    let sigma = law.qv_density_norm()?.sqrt();
    let n = integrand.n() as f64;
    let lhs = bootstrap_ci(
        &draws,
        Statistic::Mean,
        settings.bootstrap_resamples,
        settings.confidence,
        derive_stream_seed(seed, "khintchine/boot"),
    )?;
    let rhs = EstimateCI::exact(settings.bound_factor * n.ln().sqrt() * sigma);
    let factor = if n > 1.0 {
        bdg_constant() * ((1.0 + n.ln()) / n.ln()).sqrt()
    } else {
        1.0
    };
    let params = CheckParams {
        t: Some(1.0),
        ..CheckParams::of(integrand)
    };
    let mut out = CheckResult::new(
        "khintchine",
        params,
        lhs,
        rhs,
        factor,
        settings.slack,
        0.0,
        samples,
        Some(seed),
    );
    out.ratio = (sigma > 0.0).then(|| lhs.point / sigma);
    if integrand.n() == 1 {
        out.skipped = true;
        out.holds = true;
        out = out.with_note("n = 1: log n = 0, verdict skipped");
    }
    Ok(out)
}

/// Every check requested by `config`, in a fixed order. `batch` must have
/// been produced from the same config.
pub fn run_plan(config: &ExperimentConfig, batch: Option<&BatchStats>) -> Result<Vec<CheckResult>> {
    let plan = &config.checks;
    let t = config.grid.horizon();
    let mut out = Vec::new();
    if plan_needs_batch(config) {
        let batch = batch.ok_or_else(|| Error::Batch("checks need a simulated batch".into()))?;
        for &u in &plan.freedman_u {
            for &s2 in &plan.freedman_sigma2 {
                out.push(freedman_check(batch, u, s2)?);
            }
        }
        for &u in &plan.good_lambda_u {
            for &s2 in &plan.good_lambda_sigma2 {
                out.push(good_lambda_check(batch, u, s2)?);
            }
        }
        for &p in &plan.bdg_p {
            out.push(bdg_check(batch, p, t)?);
        }
        for &p in &plan.schatten_p {
            out.push(schatten_check(batch, p, t)?);
        }
        for &p in &plan.schatten_rect_p {
            out.extend(schatten_rect_check(batch, p, t)?);
        }
        if plan.biane_speicher {
            out.push(biane_speicher_check(batch, t)?);
        }
        for &beta in &plan.supermartingale_beta {
            out.extend(supermartingale_check(batch, beta)?);
        }
    }
    if plan.khintchine {
        out.push(khintchine_check(
            &config.integrand,
            config.khintchine_samples,
            config.master_seed,
            &config.settings(),
        )?);
    }
    Ok(out)
}

/// True if the plan needs simulated paths (everything except Khintchine).
pub fn plan_needs_batch(config: &ExperimentConfig) -> bool {
    let p = &config.checks;
    !(p.freedman_u.is_empty()
        && p.good_lambda_u.is_empty()
        && p.bdg_p.is_empty()
        && p.schatten_p.is_empty()
        && p.schatten_rect_p.is_empty()
        && !p.biane_speicher
        && p.supermartingale_beta.is_empty())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrands::{validate_spec, IntegrandSpec};
    use crate::montecarlo::{run_batch, ExperimentConfig};
    use crate::parallel::Execution;
    use crate::simulate::TimeGrid;

    fn sym(rows: &[&[f64]]) -> SymMatrix {
        SymMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn bdg_constant_value() {
        assert!(
            (bdg_constant() - 14.128_9).abs() < 1e-4,
            "{}",
            bdg_constant()
        );
    }

    #[test]
    fn trace_lemma_examples() {
        let r = check_trace_lemma(
            &SymMatrix::identity(2),
            &SymMatrix::diag(&[1.0, -1.0]),
            0,
            3,
        )
        .unwrap();
        assert_eq!((r.lhs.point, r.rhs.point), (0.0, 2.0));
        assert!(r.holds);

        let a = sym(&[&[2.0, 0.5], &[0.5, 1.0]]);
        for q in 0..=4 {
            let r = check_trace_lemma(&SymMatrix::identity(2), &a, q, 4).unwrap();
            assert!((r.lhs.point - r.rhs.point).abs() < 1e-12 * r.rhs.point);
        }

        let h = sym(&[&[1.0, 1.0], &[1.0, 1.0]]);
        let r = check_trace_lemma(&h, &SymMatrix::diag(&[2.0, -1.0]), 1, 2).unwrap();
        assert!((r.lhs.point - 1.0).abs() < 1e-12, "{}", r.lhs.point);
        assert!((r.rhs.point - 10.0).abs() < 1e-12);
        assert!(r.holds);

        assert!(check_trace_lemma(&h, &h, 3, 2).is_err());
        assert!(check_trace_lemma(&h, &SymMatrix::identity(3), 0, 1).is_err());
    }

    #[test]
    fn hessian_lemma_examples() {
        let r = check_hessian_lemma(&SymMatrix::zeros(3), &SymMatrix::identity(3), 1e-4).unwrap();
        assert!((r.lhs.point - 3.0).abs() < 1e-6 && r.rhs.point == 3.0 && r.holds);

        let h = sym(&[&[0.3, -1.0], &[-1.0, 2.0]]);
        let r = check_hessian_lemma(&SymMatrix::zeros(2), &h, 1e-4).unwrap();
        assert!((r.lhs.point - h.square().trace()).abs() < 1e-5);

        let m = SymMatrix::diag(&[1.0, -1.0]);
        let x = sym(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let r = check_hessian_lemma(&m, &x, 1e-4).unwrap();
        assert!(
            (r.lhs.point - 2.0 * 1f64.sinh()).abs() < 1e-5,
            "{}",
            r.lhs.point
        );
        assert!((r.rhs.point - 2.0 * 1f64.cosh()).abs() < 1e-12);
        assert!(r.holds);

        assert!(check_hessian_lemma(&m, &x, 0.1).is_err());
        assert!(check_hessian_lemma(
            &SymMatrix::identity(1).scaled(800.0),
            &SymMatrix::identity(1),
            1e-4
        )
        .is_err());
    }

    #[test]
    fn lemma_suite_is_deterministic() {
        let tol = Tolerances::default();
        let a = lemma_suite(42, 200, &tol).unwrap();
        assert_eq!(a.len(), 400);
        assert_eq!(a, lemma_suite(42, 200, &tol).unwrap());
        assert!(a.iter().all(|r| r.holds));
    }

    fn batch_for(
        spec: IntegrandSpec,
        steps: usize,
        paths: usize,
        plan: impl FnOnce(&mut ExperimentConfig),
    ) -> BatchStats {
        let integrand = validate_spec(spec).unwrap();
        let mut cfg =
            ExperimentConfig::new(integrand, TimeGrid::new(1.0, steps).unwrap(), paths, 9);
        plan(&mut cfg);
        run_batch(&cfg, Execution::default()).unwrap()
    }

    #[test]
    fn zero_integrand_checks_are_trivially_equal() {
        let batch = batch_for(
            IntegrandSpec::constant(vec![SymMatrix::zeros(2)]),
            16,
            200,
            |c| {
                c.checks.freedman_u = vec![0.5];
                c.checks.freedman_sigma2 = vec![1.0];
                c.checks.good_lambda_u = vec![0.5];
                c.checks.good_lambda_sigma2 = vec![1.0];
                c.checks.bdg_p = vec![1, 2];
                c.checks.schatten_p = vec![1];
                c.checks.biane_speicher = true;
            },
        );
        let f = freedman_check(&batch, 0.5, 1.0).unwrap();
        assert_eq!(f.lhs.point, 0.0);
        let g = good_lambda_check(&batch, 0.5, 1.0).unwrap();
        assert_eq!((g.lhs.point, g.rhs.point), (0.0, 0.0));
        for p in [1, 2] {
            let b = bdg_check(&batch, p, 1.0).unwrap();
            assert_eq!((b.lhs.point, b.rhs.point, b.ratio), (0.0, 0.0, None));
            assert!(b.holds);
        }
        let s = schatten_check(&batch, 1, 1.0).unwrap();
        assert_eq!((s.lhs.point, s.rhs.point), (0.0, 0.0));
        let bs = biane_speicher_check(&batch, 1.0).unwrap();
        assert!(bs.holds && bs.lhs.point == 0.0);
        assert!(bdg_check(&batch, 1, 2.0).is_err());
        assert!(freedman_check(&batch, 0.5, 2.0).is_err());
        assert!(freedman_check(&batch, 0.0, 1.0).is_err());
    }

    #[test]
    fn vacuous_good_lambda_at_zero() {
        let batch = batch_for(
            IntegrandSpec::constant(vec![SymMatrix::identity(3)]),
            16,
            200,
            |c| {
                c.checks.good_lambda_u = vec![0.0];
                c.checks.good_lambda_sigma2 = vec![1.0];
            },
        );
        let g = good_lambda_check(&batch, 0.0, 1.0).unwrap();
        assert_eq!(g.rhs.point, 3.0);
        assert_eq!(g.lhs.point, 1.0);
        assert!(g.holds);
    }

    #[test]
    fn freedman_lattice_is_monotone() {
        let batch = batch_for(IntegrandSpec::goe_like(3, 2, 5), 32, 500, |c| {
            c.checks.freedman_u = vec![0.5];
            c.checks.freedman_sigma2 = vec![0.5, 1.0, 2.0];
        });
        let mut last = 0.0;
        for s2 in [0.5, 1.0, 2.0] {
            let mut prev_u = f64::INFINITY;
            for u in [0.25, 0.5, 1.0, 2.0] {
                let v = freedman_check(&batch, u, s2).unwrap().lhs.point;
                assert!(v <= prev_u);
                prev_u = v;
            }
            let v = freedman_check(&batch, 0.5, s2).unwrap().lhs.point;
            assert!(v >= last);
            last = v;
        }
    }

    #[test]
    fn rect_density_scalar_reduction() {
        let a = RectMatrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        for p in [1.0, 2.0, 3.0] {
            assert!((rect_density(std::slice::from_ref(&a), p).unwrap() - 2f64.powf(1.0 / p)).abs() < 1e-14);
        }
        let z = RectMatrix::zeros(2, 3);
        assert_eq!(rect_density(&[z], 2.0).unwrap(), 0.0);
    }

    #[test]
    fn khintchine_identity_case() {
        let integrand =
            validate_spec(IntegrandSpec::constant(vec![SymMatrix::identity(4)])).unwrap();
        let r = khintchine_check(&integrand, 20_000, 3, &CheckSettings::default()).unwrap();
        let folded = (2.0 / std::f64::consts::PI).sqrt();
        assert!((r.ratio.unwrap() - folded).abs() < 0.02, "{:?}", r.ratio);
        assert!(r.holds && !r.skipped);

        let one = validate_spec(IntegrandSpec::constant(vec![SymMatrix::identity(1)])).unwrap();
        let r = khintchine_check(&one, 1000, 3, &CheckSettings::default()).unwrap();
        assert!(r.skipped && r.holds && r.rhs.point == 0.0);
    }

    #[test]
    fn falsified_multiplier_fails() {
        let batch = batch_for(
            IntegrandSpec::constant(vec![SymMatrix::identity(1)]),
            32,
            400,
            |c| {
                c.checks.bdg_p = vec![1];
                c.rhs_multiplier = 0.0;
            },
        );
        let b = bdg_check(&batch, 1, 1.0).unwrap();
        assert!(!b.holds && b.rhs.point == 0.0);
        assert_eq!(b.holds, b.recompute_holds());
    }
}
