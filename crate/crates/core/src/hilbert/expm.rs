//! Matrix exponentials: Padé scaling-and-squaring for dense matrices, an
//! Arnoldi/Krylov propagator for the action on a vector, and a short Taylor
//! kernel for the small per-step generators of the SDE integrators.

use nalgebra::DMatrix;

use super::{c64, norm1, CMatrix, CVector, C64};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct ExpmOptions {
    /// Relative accuracy target for the Krylov propagator.
    pub tolerance: f64,
    /// Dimensions above this use Krylov instead of dense scaling-and-squaring.
    pub krylov_threshold: usize,
    pub krylov_dim: usize,
    pub max_substeps: usize,
}

impl Default for ExpmOptions {
    fn default() -> Self {
        Self { tolerance: 1e-10, krylov_threshold: 64, krylov_dim: 30, max_substeps: 100_000 }
    }
}

// Higham (2005) backward-error bounds for the [m/m] Padé approximants.
const THETA: [(usize, f64); 5] = [
    (3, 1.495585217958292e-2),
    (5, 2.539398330063230e-1),
    (7, 9.504178996162932e-1),
    (9, 2.097847961257068e0),
    (13, 5.371920351148152e0),
];

const B3: [f64; 4] = [120., 60., 12., 1.];
const B5: [f64; 6] = [30240., 15120., 3360., 420., 30., 1.];
const B7: [f64; 8] = [17297280., 8648640., 1995840., 277200., 25200., 1512., 56., 1.];
const B9: [f64; 10] = [
    17643225600., 8821612800., 2075673600., 302702400., 30270240., 2162160., 110880., 3960., 90., 1.,
];
const B13: [f64; 14] = [
    64764752532480000.,
    32382376266240000.,
    7771770303897600.,
    1187353796428800.,
    129060195264000.,
    10559470521600.,
    670442572800.,
    33522128640.,
    1323241920.,
    40840800.,
    960960.,
    16380.,
    182.,
    1.,
];

fn scaled(m: &CMatrix, f: f64) -> CMatrix {
    m * c64(f, 0.0)
}

/// Low-degree Padé numerator/denominator split (U odd part, V even part).
fn pade_low(a: &CMatrix, b: &[f64]) -> (CMatrix, CMatrix) {
    let n = a.nrows();
    let ident = CMatrix::identity(n, n);
    let a2 = a * a;
    let mut odd = scaled(&ident, b[1]);
    let mut even = scaled(&ident, b[0]);
    let mut power = ident;
    let mut k = 2;
    while k < b.len() {
        power = &power * &a2;
        even += scaled(&power, b[k]);
        if k + 1 < b.len() {
            odd += scaled(&power, b[k + 1]);
        }
        k += 2;
    }
    (a * odd, even)
}

fn pade13(a: &CMatrix) -> (CMatrix, CMatrix) {
    let n = a.nrows();
    let ident = CMatrix::identity(n, n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let b = &B13;
    let u_inner = &a6 * (scaled(&a6, b[13]) + scaled(&a4, b[11]) + scaled(&a2, b[9]))
        + scaled(&a6, b[7])
        + scaled(&a4, b[5])
        + scaled(&a2, b[3])
        + scaled(&ident, b[1]);
    let u = a * u_inner;
    let v = &a6 * (scaled(&a6, b[12]) + scaled(&a4, b[10]) + scaled(&a2, b[8]))
        + scaled(&a6, b[6])
        + scaled(&a4, b[4])
        + scaled(&a2, b[2])
        + scaled(&ident, b[0]);
    (u, v)
}

fn pade_solve(u: CMatrix, v: CMatrix) -> Result<CMatrix> {
    let p = &v + &u;
    let q = v - u;
    q.lu()
        .solve(&p)
        .ok_or_else(|| Error::NonConvergence("singular Padé denominator".into()))
}

/// exp(a) by scaling and squaring with degree selection.
pub fn expm(a: &CMatrix) -> Result<CMatrix> {
    if !a.is_square() {
        return Err(Error::InvalidInput("expm needs a square matrix".into()));
    }
    let norm = norm1(a);
    if !norm.is_finite() {
        return Err(Error::NonConvergence("non-finite matrix norm".into()));
    }
    for &(m, theta) in &THETA[..4] {
        if norm <= theta {
            let b: &[f64] = match m {
                3 => &B3,
                5 => &B5,
                7 => &B7,
                _ => &B9,
            };
            let (u, v) = pade_low(a, b);
            return pade_solve(u, v);
        }
    }
    let theta13 = THETA[4].1;
    let squarings = if norm > theta13 { (norm / theta13).log2().ceil() as i32 } else { 0 };
    let a_scaled = scaled(a, 2f64.powi(-squarings));
    let (u, v) = pade13(&a_scaled);
    let mut x = pade_solve(u, v)?;
    for _ in 0..squarings {
        x = &x * &x;
    }
    Ok(x)
}

/// exp(a) v by truncated Taylor series; accurate to rounding when ‖a‖₁ ≲ 1.
fn taylor_apply(a: &CMatrix, v: &CVector) -> CVector {
    let mut acc = v.clone();
    let mut term = v.clone();
    for k in 1..=40 {
        term = (a * &term).unscale(k as f64);
        acc += &term;
        if term.norm() <= 0.25 * f64::EPSILON * acc.norm() {
            break;
        }
    }
    acc
}

/// exp(a) v for the small generators of a single SDE step.
pub(crate) fn exp_apply_small(a: &CMatrix, v: &CVector) -> Result<CVector> {
    if norm1(a) <= 0.5 {
        Ok(taylor_apply(a, v))
    } else {
        Ok(expm(a)? * v)
    }
}

/// exp(a) v via Arnoldi with adaptive substepping.
pub fn krylov_apply(a: &CMatrix, v: &CVector, opts: &ExpmOptions) -> Result<CVector> {
    let n = v.len();
    if a.nrows() != n || a.ncols() != n {
        return Err(Error::DimensionMismatch { expected: a.nrows(), found: n });
    }
    krylov_apply_operator(|x| a * x, norm1(a), v, opts)
}

/// exp(A) v for an operator given by its action `matvec` and a bound `anorm`
/// on ‖A‖₁ (used only to choose the first substep).
pub fn krylov_apply_operator<F>(matvec: F, anorm: f64, v: &CVector, opts: &ExpmOptions) -> Result<CVector>
where
    F: Fn(&CVector) -> CVector,
{
    let n = v.len();
    let beta0 = v.norm();
    if beta0 == 0.0 || anorm == 0.0 {
        return Ok(v.clone());
    }
    let m_max = opts.krylov_dim.min(n).max(1);
    let mut w = v.clone();
    let mut t_left = 1.0_f64;
    let mut tau = (4.0 / anorm).min(1.0);
    let mut substeps = 0usize;

    while t_left > 0.0 {
        substeps += 1;
        if substeps > opts.max_substeps {
            return Err(Error::NonConvergence(format!(
                "krylov propagator exceeded {} substeps",
                opts.max_substeps
            )));
        }
        let beta = w.norm();
        if beta == 0.0 {
            return Ok(w);
        }
        // Arnoldi (modified Gram-Schmidt).
        let mut basis: Vec<CVector> = Vec::with_capacity(m_max + 1);
        basis.push(w.unscale(beta));
        let mut h = DMatrix::<C64>::zeros(m_max + 1, m_max);
        let mut m = m_max;
        let mut breakdown = false;
        for j in 0..m_max {
            let mut p = matvec(&basis[j]);
            for (i, b) in basis.iter().enumerate() {
                let hij = b.dotc(&p);
                h[(i, j)] = hij;
                p.axpy(-hij, b, c64(1.0, 0.0));
            }
            let hn = p.norm();
            h[(j + 1, j)] = c64(hn, 0.0);
            if hn <= 1e-13 * anorm {
                m = j + 1;
                breakdown = true;
                break;
            }
            basis.push(p.unscale(hn));
        }
        let hm = h.view((0, 0), (m, m)).into_owned();
        let h_next = h[(m, m - 1)].re;

        tau = tau.min(t_left);
        let mut attempts = 0;
        loop {
            let e = expm(&(&hm * c64(tau, 0.0)))?;
            let err = if breakdown { 0.0 } else { beta * tau * h_next * e[(m - 1, 0)].norm() };
            if err <= opts.tolerance * beta0 * tau || attempts > 60 {
                if attempts > 60 {
                    return Err(Error::NonConvergence("krylov step size underflow".into()));
                }
                let mut next = CVector::zeros(n);
                for (i, b) in basis.iter().take(m).enumerate() {
                    next.axpy(e[(i, 0)] * beta, b, c64(1.0, 0.0));
                }
                w = next;
                t_left -= tau;
                if t_left < 1e-15 {
                    t_left = 0.0;
                }
                if err < 0.1 * opts.tolerance * beta0 * tau {
                    tau *= 2.0;
                }
                break;
            }
            tau *= 0.5;
            attempts += 1;
        }
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_hermitian(n: usize, seed: u64) -> CMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = CMatrix::from_fn(n, n, |_, _| c64(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
        (&m + m.adjoint()) * c64(0.5, 0.0)
    }

    // Eigendecomposition oracle for exp(i·s·H) with Hermitian H.
    fn eig_exp(h: &CMatrix, s: f64) -> CMatrix {
        let eig = SymmetricEigen::new(h.clone());
        let v = &eig.eigenvectors;
        let d = CMatrix::from_diagonal(&CVector::from_iterator(
            h.nrows(),
            eig.eigenvalues.iter().map(|&l| C64::from_polar(1.0, s * l)),
        ));
        v * d * v.adjoint()
    }

    #[test]
    fn dense_expm_matches_eigendecomposition() {
        for (n, s) in [(4, 0.3), (4, 7.0), (6, 40.0)] {
            let h = random_hermitian(n, 11 + n as u64);
            let got = expm(&(&h * c64(0.0, s))).unwrap();
            let want = eig_exp(&h, s);
            assert!((got - want).norm() < 1e-9, "n={n} s={s}");
        }
    }

    #[test]
    fn every_pade_degree_is_accurate() {
        let h = random_hermitian(3, 5);
        for s in [1e-3, 0.05, 0.5, 1.5, 3.0] {
            let scale = s / norm1(&h);
            let got = expm(&(&h * c64(0.0, scale))).unwrap();
            assert!((got - eig_exp(&h, scale)).norm() < 1e-12, "s={s}");
        }
    }

    #[test]
    fn krylov_matches_dense_above_threshold() {
        let n = 100;
        let h = random_hermitian(n, 99);
        let v = CVector::from_fn(n, |i, _| c64((i as f64).sin(), (i as f64 * 0.3).cos()));
        for s in [0.5, 12.0] {
            let a = &h * c64(0.0, -s);
            let got = krylov_apply(&a, &v, &ExpmOptions::default()).unwrap();
            let want = eig_exp(&h, -s) * &v;
            assert!((&got - &want).norm() / v.norm() < 1e-9, "s={s}");
        }
    }

    #[test]
    fn krylov_handles_non_hermitian_generators() {
        let n = 80;
        let h = random_hermitian(n, 3);
        let d = CMatrix::from_diagonal(&CVector::from_fn(n, |i, _| c64(-(i as f64) / n as f64, 0.0)));
        let a = &h * c64(0.0, -2.0) + d;
        let v = CVector::from_element(n, c64(1.0, 0.0));
        let got = krylov_apply(&a, &v, &ExpmOptions::default()).unwrap();
        let want = expm(&a).unwrap() * &v;
        assert!((&got - &want).norm() / want.norm() < 1e-9);
    }

    #[test]
    fn krylov_happy_breakdown_is_exact() {
        let n = 70;
        let a = CMatrix::identity(n, n) * c64(0.0, 0.7);
        let v = CVector::from_element(n, c64(0.5, 0.0));
        let got = krylov_apply(&a, &v, &ExpmOptions::default()).unwrap();
        let want = &v * C64::from_polar(1.0, 0.7);
        assert!((&got - &want).norm() < 1e-13);
    }

    #[test]
    fn taylor_kernel_matches_dense() {
        let h = random_hermitian(5, 8);
        let a = &h * c64(-0.05, -0.2);
        let v = CVector::from_fn(5, |i, _| c64(1.0 + i as f64, -0.5));
        let got = exp_apply_small(&a, &v).unwrap();
        let want = expm(&a).unwrap() * &v;
        assert!((got - want).norm() < 1e-13);
    }
}
