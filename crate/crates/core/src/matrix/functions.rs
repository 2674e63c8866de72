use super::eigen::{sym_eigen, sym_eigenvalues};
use super::{RectMatrix, SymMatrix};
use crate::error::{Error, Result};

/// Relative PSD tolerance used by [`loewner_leq`].
pub const DEFAULT_PSD_TOL: f64 = 1e-10;

pub fn lambda_max(a: &SymMatrix) -> Result<f64> {
    Ok(sym_eigenvalues(a)?.first().copied().unwrap_or(0.0))
}

pub fn lambda_min(a: &SymMatrix) -> Result<f64> {
    Ok(sym_eigenvalues(a)?.last().copied().unwrap_or(0.0))
}

/// Largest absolute eigenvalue.
pub fn spectral_norm(a: &SymMatrix) -> Result<f64> {
    let vals = sym_eigenvalues(a)?;
    Ok(spectral_of_sorted(&vals))
}

pub(crate) fn spectral_of_sorted(desc: &[f64]) -> f64 {
    match (desc.first(), desc.last()) {
        (Some(&hi), Some(&lo)) => hi.abs().max(lo.abs()),
        _ => 0.0,
    }
}

fn check_exponent(p: f64) -> Result<()> {
    if p.is_finite() && p >= 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "Schatten exponent must be a finite real >= 1, got {p}"
        )))
    }
}

/// `(Σ |v|^p)^{1/p}` over a list of eigenvalues or singular values, scaled
/// by the largest magnitude so large exponents do not overflow.
pub fn schatten_of_eigenvalues(values: &[f64], p: f64) -> Result<f64> {
    check_exponent(p)?;
    let top = values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if top == 0.0 {
        return Ok(0.0);
    }
    let sum: f64 = values.iter().map(|v| (v.abs() / top).powf(p)).sum();
    Ok(top * sum.powf(1.0 / p))
}

pub fn schatten_norm(a: &SymMatrix, p: f64) -> Result<f64> {
    check_exponent(p)?;
    schatten_of_eigenvalues(&sym_eigenvalues(a)?, p)
}

/// Schatten norm over singular values, taken from the smaller Gram matrix.
pub fn schatten_norm_rect(a: &RectMatrix, p: f64) -> Result<f64> {
    check_exponent(p)?;
    if !a.is_finite() {
        return Err(Error::domain("matrix has non-finite entries"));
    }
    let gram = if a.cols() <= a.rows() {
        a.gram()
    } else {
        a.cogram()
    };
    let singular: Vec<f64> = sym_eigenvalues(&gram)?
        .into_iter()
        .map(|l| l.max(0.0).sqrt())
        .collect();
    schatten_of_eigenvalues(&singular, p)
}

/// Applies `f` to the spectrum: `Q · diag(f(λ)) · Qᵀ`.
pub fn spectral_map(a: &SymMatrix, f: impl Fn(f64) -> f64) -> Result<SymMatrix> {
    Ok(sym_eigen(a)?.reconstruct_with(f))
}

/// `|A| = (A²)^{1/2}`.
pub fn matrix_abs(a: &SymMatrix) -> Result<SymMatrix> {
    spectral_map(a, f64::abs)
}

/// `Tr exp(β M)`. Fails instead of returning infinity.
pub fn trace_exp(m: &SymMatrix, beta: f64) -> Result<f64> {
    if !beta.is_finite() {
        return Err(Error::domain("beta must be finite"));
    }
    let vals = sym_eigenvalues(m)?;
    trace_exp_of_eigenvalues(&vals, beta)
}

pub(crate) fn trace_exp_of_eigenvalues(vals: &[f64], beta: f64) -> Result<f64> {
    let limit = f64::MAX.ln();
    let mut sum = 0.0;
    for &l in vals {
        let arg = beta * l;
        if arg > limit {
            return Err(Error::Overflow(format!(
                "trace exponential: beta*lambda = {arg} exceeds {limit}"
            )));
        }
        sum += arg.exp();
    }
    if !sum.is_finite() {
        return Err(Error::Overflow(
            "trace exponential sum is not finite".into(),
        ));
    }
    Ok(sum)
}

/// `[[0, A], [Aᵀ, 0]]`.
pub fn hermitian_dilation(a: &RectMatrix) -> Result<SymMatrix> {
    if !a.is_finite() {
        return Err(Error::domain("matrix has non-finite entries"));
    }
    let (r, c) = (a.rows(), a.cols());
    Ok(SymMatrix::from_fn(r + c, |i, j| {
        // i <= j, so the only nonzero block in the upper triangle is A itself.
        if i < r && j >= r {
            a.get(i, j - r)
        } else {
            0.0
        }
    }))
}

/// `A ≼ B` with the default tolerance.
pub fn loewner_leq(a: &SymMatrix, b: &SymMatrix) -> Result<bool> {
    loewner_leq_with(a, b, DEFAULT_PSD_TOL)
}

/// True iff `λ_min(B − A) ≥ −tol · max(1, ‖B − A‖)`.
pub fn loewner_leq_with(a: &SymMatrix, b: &SymMatrix, tol: f64) -> Result<bool> {
    if a.dim() != b.dim() {
        return Err(Error::domain(format!(
            "Loewner comparison of {}x{} and {}x{}",
            a.dim(),
            a.dim(),
            b.dim(),
            b.dim()
        )));
    }
    let diff = b - a;
    let vals = sym_eigenvalues(&diff)?;
    let norm = spectral_of_sorted(&vals);
    let lo = vals.last().copied().unwrap_or(0.0);
    Ok(lo >= -tol * norm.max(1.0))
}
