//! Hermitian factorization C = F F† for covariance matrices.
//!
//! Plain Cholesky is tried first. If a pivot collapses below the rank
//! threshold the matrix is refactored with full diagonal pivoting, which
//! handles rank-deficient (e.g. few-mode oscillatory) kernels.

use nalgebra::SymmetricEigen;

use crate::error::{Error, Result};
use crate::hilbert::{max_abs, CMatrix, C64};

/// Relative tolerance for declaring a covariance matrix non-PSD.
pub const PSD_TOLERANCE: f64 = 1e-10;
const RANK_THRESHOLD: f64 = 1e-12;

/// Row-wise lower factor: `rows[i]` holds F[i, 0..rows[i].len()]; entries
/// beyond that are zero.
#[derive(Clone, Debug)]
pub(crate) struct LowerFactor {
    pub rows: Vec<Vec<C64>>,
    pub rank: usize,
}

impl LowerFactor {
    #[cfg(test)]
    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    pub fn is_real(&self) -> bool {
        self.rows.iter().flatten().all(|z| z.im == 0.0)
    }

    #[cfg(test)]
    pub fn to_dense(&self) -> CMatrix {
        let n = self.dim();
        let mut f = CMatrix::zeros(n, self.rank.max(1));
        for (i, row) in self.rows.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                f[(i, j)] = *v;
            }
        }
        f
    }
}

fn not_psd(c: &CMatrix, tolerance: f64) -> Error {
    let eig = SymmetricEigen::new(c.clone());
    let min_eigenvalue = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    Error::NotPositiveSemidefinite { min_eigenvalue, tolerance }
}

pub(crate) fn hermitian_factor(c: &CMatrix) -> Result<LowerFactor> {
    let n = c.nrows();
    let scale = max_abs(c);
    if scale == 0.0 {
        return Ok(LowerFactor { rows: vec![Vec::new(); n], rank: 0 });
    }
    let tol = PSD_TOLERANCE * scale;
    match cholesky(c, scale, tol)? {
        Some(f) => Ok(f),
        None => pivoted_cholesky(c, scale, tol),
    }
}

/// Returns Ok(None) when a pivot is too small for the unpivoted algorithm.
fn cholesky(c: &CMatrix, scale: f64, tol: f64) -> Result<Option<LowerFactor>> {
    let n = c.nrows();
    let mut rows: Vec<Vec<C64>> = Vec::with_capacity(n);
    for i in 0..n {
        let mut row = vec![C64::default(); i + 1];
        for j in 0..i {
            let lj = &rows[j];
            let mut s = c[(i, j)];
            for k in 0..j {
                s -= row[k] * lj[k].conj();
            }
            row[j] = s / lj[j].re;
        }
        let d = c[(i, i)].re - row[..i].iter().map(|z| z.norm_sqr()).sum::<f64>();
        if d < -tol {
            return Err(not_psd(c, tol));
        }
        if d <= RANK_THRESHOLD * scale {
            return Ok(None);
        }
        row[i] = C64::new(d.sqrt(), 0.0);
        rows.push(row);
    }
    Ok(Some(LowerFactor { rows, rank: n }))
}

fn pivoted_cholesky(c: &CMatrix, scale: f64, tol: f64) -> Result<LowerFactor> {
    let n = c.nrows();
    let mut a = c.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut l = CMatrix::zeros(n, n);
    let mut rank = n;
    for k in 0..n {
        let (p, dmax) = (k..n)
            .map(|i| (i, a[(i, i)].re))
            .fold((k, f64::NEG_INFINITY), |best, x| if x.1 > best.1 { x } else { best });
        if p != k {
            a.swap_rows(k, p);
            a.swap_columns(k, p);
            l.swap_rows(k, p);
            perm.swap(k, p);
        }
        if dmax <= RANK_THRESHOLD * scale {
            // The trailing Schur complement must vanish for a PSD input.
            let rest = a.view((k, k), (n - k, n - k));
            let worst = rest.iter().map(|z| z.norm()).fold(0.0, f64::max);
            let min_diag = (k..n).map(|i| a[(i, i)].re).fold(f64::INFINITY, f64::min);
            if worst > tol || min_diag < -tol {
                return Err(not_psd(c, tol));
            }
            rank = k;
            break;
        }
        let pivot = dmax.sqrt();
        l[(k, k)] = C64::new(pivot, 0.0);
        for i in k + 1..n {
            l[(i, k)] = a[(i, k)] / pivot;
        }
        for j in k + 1..n {
            let ljc = l[(j, k)].conj();
            for i in j..n {
                let v = l[(i, k)] * ljc;
                a[(i, j)] -= v;
                if i != j {
                    a[(j, i)] = a[(i, j)].conj();
                }
            }
        }
    }
    let mut rows = vec![Vec::new(); n];
    for (i, &orig) in perm.iter().enumerate() {
        let len = (i + 1).min(rank);
        rows[orig] = (0..len).map(|j| l[(i, j)]).collect();
    }
    Ok(LowerFactor { rows, rank })
}
