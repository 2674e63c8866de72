//! Symmetric eigensolvers.
//!
//! `sym_eigen` is a cyclic Jacobi solver returning eigenvectors. The
//! eigenvalue-only path used in the simulation inner loop reduces to
//! tridiagonal form with Householder reflections and finishes with implicit
//! QL iterations, which is several times cheaper per call.

use serde::{Deserialize, Serialize};

use super::{RectMatrix, SymMatrix};
use crate::error::{Error, Result};

/// Stopping rule for the Jacobi iteration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenSettings {
    pub max_sweeps: usize,
    /// Converged once the off-diagonal Frobenius mass is below
    /// `offdiag_rel * ‖A‖_F`.
    pub offdiag_rel: f64,
}

impl Default for EigenSettings {
    fn default() -> Self {
        Self {
            max_sweeps: 100,
            offdiag_rel: 1e-13,
        }
    }
}

/// Eigenvalues sorted descending, with an optional orthogonal basis whose
/// columns are the matching eigenvectors.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    pub basis: Option<RectMatrix>,
}

impl Spectrum {
    pub fn max(&self) -> f64 {
        self.eigenvalues.first().copied().unwrap_or(0.0)
    }

    pub fn min(&self) -> f64 {
        self.eigenvalues.last().copied().unwrap_or(0.0)
    }

    /// `Q · diag(f(λ)) · Qᵀ`. Panics if the basis was not computed.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        let q = self.basis.as_ref().expect("spectrum without basis");
        let vals: Vec<f64> = self.eigenvalues.iter().map(|&l| f(l)).collect();
        let n = vals.len();
        SymMatrix::from_fn(n, |i, j| {
            (0..n).map(|k| q.get(i, k) * vals[k] * q.get(j, k)).sum()
        })
    }
}

fn check_finite(a: &SymMatrix) -> Result<()> {
    if a.is_finite() {
        Ok(())
    } else {
        Err(Error::domain("matrix has non-finite entries"))
    }
}

/// Full eigendecomposition with default settings.
pub fn sym_eigen(a: &SymMatrix) -> Result<Spectrum> {
    sym_eigen_with(a, &EigenSettings::default())
}

/// Cyclic Jacobi eigendecomposition.
pub fn sym_eigen_with(a: &SymMatrix, settings: &EigenSettings) -> Result<Spectrum> {
    check_finite(a)?;
    let n = a.dim();
    let mut m: Vec<f64> = a.as_slice().to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale = a.frobenius_norm();
    let threshold = settings.offdiag_rel * scale;

    let off_norm = |m: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                s += 2.0 * m[i * n + j] * m[i * n + j];
            }
        }
        s.sqrt()
    };

    let mut off = off_norm(&m);
    let mut sweeps = 0;
    while off > threshold {
        if sweeps == settings.max_sweeps {
            return Err(Error::Numeric {
                message: format!("Jacobi did not converge in {} sweeps", settings.max_sweeps),
                residual: off,
            });
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    if k == p || k == q {
                        continue;
                    }
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    let new_kp = c * akp - s * akq;
                    let new_kq = s * akp + c * akq;
                    m[k * n + p] = new_kp;
                    m[p * n + k] = new_kp;
                    m[k * n + q] = new_kq;
                    m[q * n + k] = new_kq;
                }
                m[p * n + p] -= t * apq;
                m[q * n + q] += t * apq;
                m[p * n + q] = 0.0;
                m[q * n + p] = 0.0;
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
        sweeps += 1;
        off = off_norm(&m);
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j * n + j].total_cmp(&m[i * n + i]));
    let eigenvalues = order.iter().map(|&i| m[i * n + i]).collect();
    let basis = RectMatrix::from_fn(n, n, |row, col| v[row * n + order[col]]);
    Ok(Spectrum {
        eigenvalues,
        basis: Some(basis),
    })
}

/// Eigenvalues only, sorted descending.
pub fn sym_eigenvalues(a: &SymMatrix) -> Result<Vec<f64>> {
    check_finite(a)?;
    let n = a.dim();
    let mut vals = if a.is_diagonal() {
        a.diagonal()
    } else {
        tridiagonal_ql(a)?
    };
    vals.sort_by(|x, y| y.total_cmp(x));
    debug_assert_eq!(vals.len(), n);
    Ok(vals)
}

fn tridiagonal_ql(a: &SymMatrix) -> Result<Vec<f64>> {
    let n = a.dim();
    let mut m: Vec<f64> = a.as_slice().to_vec();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    householder_tridiagonal(&mut m, n, &mut d, &mut e);
    implicit_ql(&mut d, &mut e)?;
    Ok(d)
}

/// Householder reduction of the row-major square `m` to tridiagonal form.
/// On exit `d` is the diagonal and `e[1..]` the sub-diagonal.
fn householder_tridiagonal(m: &mut [f64], n: usize, d: &mut [f64], e: &mut [f64]) {
    let at = |i: usize, j: usize| i * n + j;
    for i in (1..n).rev() {
        let l = i - 1;
        let mut h = 0.0;
        if l > 0 {
            let scale: f64 = (0..=l).map(|k| m[at(i, k)].abs()).sum();
            if scale == 0.0 {
                e[i] = m[at(i, l)];
            } else {
                for k in 0..=l {
                    m[at(i, k)] /= scale;
                    h += m[at(i, k)] * m[at(i, k)];
                }
                let f = m[at(i, l)];
                let g = if f >= 0.0 { -h.sqrt() } else { h.sqrt() };
                e[i] = scale * g;
                h -= f * g;
                m[at(i, l)] = f - g;
                let mut f = 0.0;
                for j in 0..=l {
                    let mut g = 0.0;
                    for k in 0..=j {
                        g += m[at(j, k)] * m[at(i, k)];
                    }
                    for k in (j + 1)..=l {
                        g += m[at(k, j)] * m[at(i, k)];
                    }
                    e[j] = g / h;
                    f += e[j] * m[at(i, j)];
                }
                let hh = f / (h + h);
                for j in 0..=l {
                    let f = m[at(i, j)];
                    let g = e[j] - hh * f;
                    e[j] = g;
                    for k in 0..=j {
                        m[at(j, k)] -= f * e[k] + g * m[at(i, k)];
                    }
                }
            }
        } else {
            e[i] = m[at(i, l)];
        }
        d[i] = h;
    }
    if n > 0 {
        e[0] = 0.0;
    }
    for i in 0..n {
        d[i] = m[at(i, i)];
    }
}

/// Implicit-shift QL on a symmetric tridiagonal matrix.
fn implicit_ql(d: &mut [f64], e: &mut [f64]) -> Result<()> {
    let n = d.len();
    if n < 2 {
        return Ok(());
    }
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;
    let max_iter = 60;
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m < n - 1 {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > max_iter {
                return Err(Error::Numeric {
                    message: "tridiagonal QL did not converge".into(),
                    residual: e[l].abs(),
                });
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut underflow = false;
            let mut i = m;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(())
}
