//! Adapted matrix integrands `H_{i,t}`.
//!
//! An [`IntegrandSpec`] is the raw, serialisable description read from a
//! config file. [`validate_spec`] checks it and produces an [`Integrand`],
//! which is immutable and cheap to share across path workers. Evaluation
//! always happens at the left end of a grid interval, so the value at `t_k`
//! only sees the state at `t_k`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{hermitian_dilation, RectMatrix, SymMatrix};

/// Family-specific payload of an integrand description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    /// `H_i(t) = H_i`.
    Constant { matrices: Vec<RectMatrix> },
    /// `H_i(t) = A_i + t·B_i`.
    TimePoly {
        intercepts: Vec<RectMatrix>,
        slopes: Vec<RectMatrix>,
    },
    /// `H_i(t) = A_i + γ·X_t`, with `X_t` the left-endpoint state.
    PathFeedback { base: Vec<RectMatrix>, gamma: f64 },
    /// `H_i = e_i e_iᵀ`, one driver per coordinate.
    DiagBasis,
    /// Frozen draws from a symmetric Gaussian ensemble: off-diagonal
    /// variance `scale²/n`, diagonal variance `2·scale²/n`.
    GoeLike { seed: u64, scale: f64 },
    /// Constant rectangular payloads, simulated through their dilations.
    RectConstant { payloads: Vec<RectMatrix> },
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Constant { .. } => "constant",
            Family::TimePoly { .. } => "time_poly",
            Family::PathFeedback { .. } => "path_feedback",
            Family::DiagBasis => "diag_basis",
            Family::GoeLike { .. } => "goe_like",
            Family::RectConstant { .. } => "rect_constant",
        }
    }
}

/// Raw integrand description: state dimension `n`, number of Brownian
/// drivers, and the family payload.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegrandSpec {
    pub n: usize,
    pub drivers: usize,
    #[serde(flatten)]
    pub family: Family,
}

impl IntegrandSpec {
    pub fn constant(matrices: Vec<SymMatrix>) -> Self {
        let n = matrices.first().map_or(0, SymMatrix::dim);
        Self {
            n,
            drivers: matrices.len(),
            family: Family::Constant {
                matrices: matrices.iter().map(RectMatrix::from).collect(),
            },
        }
    }

    pub fn time_poly(intercepts: Vec<SymMatrix>, slopes: Vec<SymMatrix>) -> Self {
        let n = intercepts.first().map_or(0, SymMatrix::dim);
        Self {
            n,
            drivers: intercepts.len(),
            family: Family::TimePoly {
                intercepts: intercepts.iter().map(RectMatrix::from).collect(),
                slopes: slopes.iter().map(RectMatrix::from).collect(),
            },
        }
    }

    pub fn path_feedback(base: Vec<SymMatrix>, gamma: f64) -> Self {
        let n = base.first().map_or(0, SymMatrix::dim);
        Self {
            n,
            drivers: base.len(),
            family: Family::PathFeedback {
                base: base.iter().map(RectMatrix::from).collect(),
                gamma,
            },
        }
    }

    pub fn diag_basis(n: usize) -> Self {
        Self {
            n,
            drivers: n,
            family: Family::DiagBasis,
        }
    }

    pub fn goe_like(n: usize, drivers: usize, seed: u64) -> Self {
        Self {
            n,
            drivers,
            family: Family::GoeLike { seed, scale: 1.0 },
        }
    }

    pub fn rect_constant(payloads: Vec<RectMatrix>) -> Self {
        let n = payloads.first().map_or(0, |p| p.rows() + p.cols());
        Self {
            n,
            drivers: payloads.len(),
            family: Family::RectConstant { payloads },
        }
    }
}

/// Left-endpoint information available to an integrand at grid time `t_k`.
#[derive(Clone, Copy, Debug)]
pub struct EvalContext<'a> {
    pub time: f64,
    pub x_current: &'a SymMatrix,
    pub qv_current: &'a SymMatrix,
}

#[derive(Clone, Debug, PartialEq)]
enum Kind {
    Constant(Vec<SymMatrix>),
    DiagBasis,
    TimePoly {
        intercepts: Vec<SymMatrix>,
        slopes: Vec<SymMatrix>,
    },
    PathFeedback {
        base: Vec<SymMatrix>,
        gamma: f64,
    },
}

/// A validated integrand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "IntegrandSpec", into = "IntegrandSpec")]
pub struct Integrand {
    spec: IntegrandSpec,
    kind: Kind,
}

impl TryFrom<IntegrandSpec> for Integrand {
    type Error = Error;

    fn try_from(spec: IntegrandSpec) -> Result<Self> {
        validate_spec(spec)
    }
}

impl From<Integrand> for IntegrandSpec {
    fn from(i: Integrand) -> Self {
        i.spec
    }
}

fn symmetric_payload(m: &RectMatrix, n: usize, label: &str) -> Result<SymMatrix> {
    if m.rows() != n || m.cols() != n {
        return Err(Error::validation(format!(
            "{label} is {}x{}, expected {n}x{n}",
            m.rows(),
            m.cols()
        )));
    }
    m.to_symmetric()
        .map_err(|e| Error::validation(format!("{label}: {}", strip_prefix(&e))))
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Validation(m) | Error::InputDomain(m) => m.clone(),
        other => other.to_string(),
    }
}

fn payload_list(
    ms: &[RectMatrix],
    n: usize,
    drivers: usize,
    prefix: &str,
) -> Result<Vec<SymMatrix>> {
    if ms.len() != drivers {
        return Err(Error::validation(format!(
            "expected {drivers} {prefix} matrices, got {}",
            ms.len()
        )));
    }
    ms.iter()
        .enumerate()
        .map(|(i, m)| symmetric_payload(m, n, &format!("{prefix}{}", i + 1)))
        .collect()
}

/// Draws `drivers` frozen symmetric Gaussian matrices from `seed`.
pub fn goe_draws(n: usize, drivers: usize, seed: u64, scale: f64) -> Vec<SymMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let off_sd = scale / (n as f64).sqrt();
    let diag_sd = scale * (2.0 / n as f64).sqrt();
    (0..drivers)
        .map(|_| {
            SymMatrix::from_fn(n, |i, j| {
                let z: f64 = StandardNormal.sample(&mut rng);
                if i == j {
                    diag_sd * z
                } else {
                    off_sd * z
                }
            })
        })
        .collect()
}

/// Checks dimensions, symmetry and finiteness, and freezes random payloads.
pub fn validate_spec(mut spec: IntegrandSpec) -> Result<Integrand> {
    if let Family::DiagBasis = spec.family {
        spec.drivers = spec.n;
    }
    if let Family::RectConstant { payloads } = &spec.family {
        if let Some(first) = payloads.first() {
            spec.n = first.rows() + first.cols();
        }
        spec.drivers = payloads.len();
    }
    if spec.n == 0 {
        return Err(Error::validation("matrix dimension n must be at least 1"));
    }
    if spec.drivers == 0 {
        return Err(Error::validation("number of drivers N must be at least 1"));
    }
    let (n, drivers) = (spec.n, spec.drivers);
    let kind = match &spec.family {
        Family::Constant { matrices } => Kind::Constant(payload_list(matrices, n, drivers, "H")?),
        Family::TimePoly { intercepts, slopes } => Kind::TimePoly {
            intercepts: payload_list(intercepts, n, drivers, "A")?,
            slopes: payload_list(slopes, n, drivers, "B")?,
        },
        Family::PathFeedback { base, gamma } => {
            if !gamma.is_finite() {
                return Err(Error::validation("gamma must be finite"));
            }
            Kind::PathFeedback {
                base: payload_list(base, n, drivers, "A")?,
                gamma: *gamma,
            }
        }
        Family::DiagBasis => Kind::DiagBasis,
        Family::GoeLike { seed, scale } => {
            if !(scale.is_finite() && *scale >= 0.0) {
                return Err(Error::validation(
                    "goe_like scale must be finite and non-negative",
                ));
            }
            Kind::Constant(goe_draws(n, drivers, *seed, *scale))
        }
        Family::RectConstant { payloads } => {
            let (r, c) = (payloads[0].rows(), payloads[0].cols());
            let mut dilated = Vec::with_capacity(payloads.len());
            for (i, p) in payloads.iter().enumerate() {
                if (p.rows(), p.cols()) != (r, c) {
                    return Err(Error::validation(format!(
                        "H{} is {}x{}, expected {r}x{c}",
                        i + 1,
                        p.rows(),
                        p.cols()
                    )));
                }
                dilated.push(hermitian_dilation(p)?);
            }
            Kind::Constant(dilated)
        }
    };
    Ok(Integrand { spec, kind })
}

impl Integrand {
    pub fn spec(&self) -> &IntegrandSpec {
        &self.spec
    }

    pub fn n(&self) -> usize {
        self.spec.n
    }

    pub fn drivers(&self) -> usize {
        self.spec.drivers
    }

    pub fn family_name(&self) -> &'static str {
        self.spec.family.name()
    }

    /// True when the integrand never reads the path state.
    pub fn is_state_independent(&self) -> bool {
        match &self.kind {
            Kind::PathFeedback { gamma, .. } => *gamma == 0.0,
            _ => true,
        }
    }

    /// True when the integrand does not vary with time or state.
    pub fn is_constant(&self) -> bool {
        match &self.kind {
            Kind::Constant(_) | Kind::DiagBasis => true,
            Kind::PathFeedback { gamma, .. } => *gamma == 0.0,
            Kind::TimePoly { .. } => false,
        }
    }

    /// `(rows, cols)` of the rectangular payloads, for dilated families.
    pub fn rect_shape(&self) -> Option<(usize, usize)> {
        match &self.spec.family {
            Family::RectConstant { payloads } => Some((payloads[0].rows(), payloads[0].cols())),
            _ => None,
        }
    }

    pub fn rect_payloads(&self) -> Option<&[RectMatrix]> {
        match &self.spec.family {
            Family::RectConstant { payloads } => Some(payloads),
            _ => None,
        }
    }

    /// Sparse form of constant payloads, `None` when time/state dependent.
    pub(crate) fn constant_terms(&self) -> Option<Vec<SparseSym>> {
        match &self.kind {
            Kind::Constant(ms) => Some(ms.iter().map(SparseSym::from_dense).collect()),
            Kind::DiagBasis => {
                let n = self.n();
                Some((0..n).map(|i| SparseSym::basis(n, i)).collect())
            }
            Kind::PathFeedback { base, gamma } if *gamma == 0.0 => {
                Some(base.iter().map(SparseSym::from_dense).collect())
            }
            _ => None,
        }
    }

    /// Integrand values `H_{i,t_k}` for all drivers.
    pub fn evaluate(&self, ctx: &EvalContext<'_>) -> Result<Vec<SymMatrix>> {
        let n = self.n();
        if ctx.x_current.dim() != n || ctx.qv_current.dim() != n {
            return Err(Error::domain(format!(
                "context has dimension {}, integrand expects {n}",
                ctx.x_current.dim()
            )));
        }
        Ok(match &self.kind {
            Kind::Constant(ms) => ms.clone(),
            Kind::DiagBasis => (0..n)
                .map(|i| {
                    let mut d = vec![0.0; n];
                    d[i] = 1.0;
                    SymMatrix::diag(&d)
                })
                .collect(),
            Kind::TimePoly { intercepts, slopes } => intercepts
                .iter()
                .zip(slopes)
                .map(|(a, b)| SymMatrix::from_fn(n, |i, j| a.get(i, j) + ctx.time * b.get(i, j)))
                .collect(),
            Kind::PathFeedback { base, gamma } => {
                if *gamma == 0.0 {
                    base.clone()
                } else {
                    base.iter()
                        .map(|a| {
                            SymMatrix::from_fn(n, |i, j| {
                                a.get(i, j) + gamma * ctx.x_current.get(i, j)
                            })
                        })
                        .collect()
                }
            }
        })
    }
}

/// Free-function form of [`Integrand::evaluate`].
pub fn evaluate_integrand(integrand: &Integrand, ctx: &EvalContext<'_>) -> Result<Vec<SymMatrix>> {
    integrand.evaluate(ctx)
}

/// Nonzero entries of a symmetric matrix over its full row-major storage.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct SparseSym {
    pub(crate) dim: usize,
    pub(crate) entries: Vec<(usize, f64)>,
}

impl SparseSym {
    pub(crate) fn from_dense(m: &SymMatrix) -> Self {
        Self {
            dim: m.dim(),
            entries: m
                .as_slice()
                .iter()
                .enumerate()
                .filter(|(_, &v)| v != 0.0)
                .map(|(k, &v)| (k, v))
                .collect(),
        }
    }

    pub(crate) fn basis(dim: usize, i: usize) -> Self {
        Self {
            dim,
            entries: vec![(i * dim + i, 1.0)],
        }
    }

    /// `target += s · self`.
    #[inline]
    pub(crate) fn accumulate_into(&self, s: f64, target: &mut [f64]) {
        for &(k, v) in &self.entries {
            target[k] += s * v;
        }
    }

    pub(crate) fn to_dense(&self) -> SymMatrix {
        let mut m = SymMatrix::zeros(self.dim);
        self.accumulate_into(1.0, m.data_mut());
        m
    }
}
