//! Interval estimators and small statistical utilities.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiMethod {
    Wilson,
    Bootstrap,
    Exact,
}

/// Point estimate with an interval, `lo ≤ point ≤ hi`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateCI {
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
    pub method: CiMethod,
}

impl EstimateCI {
    pub fn exact(value: f64) -> Self {
        Self {
            point: value,
            lo: value,
            hi: value,
            method: CiMethod::Exact,
        }
    }

    /// Larger of the two one-sided widths.
    pub fn half_width(&self) -> f64 {
        (self.point - self.lo).max(self.hi - self.point).max(0.0)
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    /// Image under a nondecreasing map.
    pub fn map_monotone(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            point: f(self.point),
            lo: f(self.lo),
            hi: f(self.hi),
            method: self.method,
        }
    }

    /// Multiplication by a non-negative constant.
    pub fn scale(&self, s: f64) -> Self {
        debug_assert!(s >= 0.0);
        self.map_monotone(|v| v * s)
    }
}

/// Two-sided standard normal quantile for `confidence`.
pub fn z_value(confidence: f64) -> Result<f64> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::domain(format!(
            "confidence must lie in (0,1), got {confidence}"
        )));
    }
    let normal = Normal::standard();
    Ok(normal.inverse_cdf(0.5 + confidence / 2.0))
}

pub fn normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

/// Wilson score interval for a binomial proportion.
pub fn wilson_interval(successes: u64, trials: u64, confidence: f64) -> Result<EstimateCI> {
    if trials == 0 {
        return Err(Error::domain("Wilson interval needs at least one trial"));
    }
    if successes > trials {
        return Err(Error::domain(format!(
            "successes ({successes}) exceed trials ({trials})"
        )));
    }
    let z = z_value(confidence)?;
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    let mut lo = (centre - half).max(0.0).min(p);
    let mut hi = (centre + half).min(1.0).max(p);
    if successes == 0 {
        lo = 0.0;
    }
    if successes == trials {
        hi = 1.0;
    }
    Ok(EstimateCI {
        point: p,
        lo,
        hi,
        method: CiMethod::Wilson,
    })
}

/// Neumaier-compensated sum.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Mean computed around the first sample; exact for constant samples.
pub fn shifted_mean(values: &[f64]) -> f64 {
    match values.first() {
        None => f64::NAN,
        Some(&x0) => x0 + compensated_sum(values.iter().map(|v| v - x0)) / values.len() as f64,
    }
}

/// Statistic bootstrapped by [`bootstrap_ci`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Statistic {
    /// Sample mean.
    Mean,
    /// `(mean)^{1/q}` of non-negative values.
    MeanRoot(f64),
}

impl Statistic {
    fn finish(&self, mean: f64) -> f64 {
        match *self {
            Statistic::Mean => mean,
            Statistic::MeanRoot(q) => mean.max(0.0).powf(1.0 / q),
        }
    }
}

pub const MIN_BOOTSTRAP_SAMPLES: usize = 100;

/// Percentile bootstrap interval. Deterministic in `seed`.
pub fn bootstrap_ci(
    values: &[f64],
    statistic: Statistic,
    resamples: usize,
    confidence: f64,
    seed: u64,
) -> Result<EstimateCI> {
    if values.len() < MIN_BOOTSTRAP_SAMPLES {
        return Err(Error::domain(format!(
            "bootstrap needs at least {MIN_BOOTSTRAP_SAMPLES} samples, got {}",
            values.len()
        )));
    }
    if resamples == 0 {
        return Err(Error::domain("bootstrap needs at least one resample"));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::domain(format!(
            "confidence must lie in (0,1), got {confidence}"
        )));
    }
    let point = statistic.finish(shifted_mean(values));
    let x0 = values[0];
    if values.iter().all(|&v| v == x0) {
        return Ok(EstimateCI {
            point,
            lo: point,
            hi: point,
            method: CiMethod::Bootstrap,
        });
    }
    let m = values.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reps: Vec<f64> = (0..resamples)
        .map(|_| {
            let mut acc = 0.0;
            for _ in 0..m {
                acc += values[rng.random_range(0..m)] - x0;
            }
            statistic.finish(x0 + acc / m as f64)
        })
        .collect();
    reps.sort_by(f64::total_cmp);
    let alpha = 1.0 - confidence;
    let lo = percentile_sorted(&reps, alpha / 2.0);
    let hi = percentile_sorted(&reps, 1.0 - alpha / 2.0);
    Ok(EstimateCI {
        point,
        lo: lo.min(point),
        hi: hi.max(point),
        method: CiMethod::Bootstrap,
    })
}

/// Linear-interpolation percentile of sorted data, `q ∈ [0,1]`.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let last = sorted.len() - 1;
    let pos = q.clamp(0.0, 1.0) * last as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i >= last {
        sorted[last]
    } else {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    }
}

/// Two-sample Kolmogorov–Smirnov statistic `sup |F_a − F_b|`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Asymptotic two-sample KS rejection threshold at level `alpha`.
pub fn ks_critical(alpha: f64, na: usize, nb: usize) -> f64 {
    let c = (-(alpha / 2.0).ln() / 2.0).sqrt();
    c * ((na + nb) as f64 / (na as f64 * nb as f64)).sqrt()
}
