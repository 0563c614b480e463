//! Dense finite-dimensional Hilbert-space algebra.
//!
//! Tensor products order the first factor as the slowest-varying index, so
//! `tensor(system, bath)` places the system first. Every solver and oracle in
//! the crate follows this convention.

mod expm;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

pub use self::expm::{expm, krylov_apply, krylov_apply_operator, ExpmOptions};
pub(crate) use self::expm::exp_apply_small;
use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Default cap on Hilbert-space dimension for products and oracles.
pub const DEFAULT_DIM_CAP: usize = 4096;

const HERMITIAN_REL_TOL: f64 = 1e-12;
const DENSITY_HERMITIAN_REL_TOL: f64 = 1e-10;

pub const fn c64(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Unnormalized pure state.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    amps: CVector,
}

impl StateVector {
    pub fn new(amps: Vec<C64>) -> Result<Self> {
        Self::from_vector(CVector::from_vec(amps))
    }

    pub fn from_vector(amps: CVector) -> Result<Self> {
        if amps.is_empty() {
            return Err(Error::InvalidInput("state vector must have dim >= 1".into()));
        }
        if amps.iter().any(|a| !a.re.is_finite() || !a.im.is_finite()) {
            return Err(Error::InvalidInput("state vector has non-finite amplitudes".into()));
        }
        Ok(Self { amps })
    }

    pub(crate) fn from_vector_unchecked(amps: CVector) -> Self {
        Self { amps }
    }

    pub fn from_real(amps: &[f64]) -> Result<Self> {
        Self::new(amps.iter().map(|&x| c64(x, 0.0)).collect())
    }

    pub fn basis(dim: usize, index: usize) -> Self {
        let mut amps = CVector::zeros(dim);
        amps[index] = c64(1.0, 0.0);
        Self { amps }
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &CVector {
        &self.amps
    }

    pub fn into_vector(self) -> CVector {
        self.amps
    }

    pub fn norm_sq(&self) -> f64 {
        self.amps.norm_squared()
    }

    pub fn norm(&self) -> f64 {
        self.amps.norm()
    }

    /// The outer product |ψ⟩⟨ψ|, unnormalized.
    pub fn projector(&self) -> DensityMatrix {
        DensityMatrix::from_outer(&self.amps)
    }
}

/// Square complex matrix with an optional hermiticity certificate.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorMatrix {
    entries: CMatrix,
    hermitian: bool,
}

impl OperatorMatrix {
    pub fn new(entries: CMatrix) -> Result<Self> {
        if !entries.is_square() || entries.nrows() == 0 {
            return Err(Error::InvalidInput(format!(
                "operator must be a non-empty square matrix, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        if entries.iter().any(|a| !a.re.is_finite() || !a.im.is_finite()) {
            return Err(Error::InvalidInput("operator has non-finite entries".into()));
        }
        let mut op = Self { entries, hermitian: false };
        op.hermitian = op.hermitian_deviation() <= HERMITIAN_REL_TOL;
        Ok(op)
    }

    /// Builds an operator and certifies it Hermitian to 1e-12 relative.
    pub fn hermitian(entries: CMatrix) -> Result<Self> {
        Self::new(entries)?.into_hermitian("operator")
    }

    pub fn into_hermitian(mut self, name: &str) -> Result<Self> {
        let deviation = self.hermitian_deviation();
        if deviation > HERMITIAN_REL_TOL {
            return Err(Error::NotHermitian { name: name.to_string(), deviation });
        }
        self.hermitian = true;
        Ok(self)
    }

    pub fn from_real_rows(rows: &[&[f64]]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidInput("operator rows must form a square matrix".into()));
        }
        Self::new(CMatrix::from_fn(n, n, |i, j| c64(rows[i][j], 0.0)))
    }

    pub fn identity(dim: usize) -> Self {
        Self { entries: CMatrix::identity(dim, dim), hermitian: true }
    }

    pub fn zeros(dim: usize) -> Self {
        Self { entries: CMatrix::zeros(dim, dim), hermitian: true }
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let n = values.len();
        let entries = CMatrix::from_fn(n, n, |i, j| if i == j { c64(values[i], 0.0) } else { C64::default() });
        Self { entries, hermitian: true }
    }

    pub fn sigma_x() -> Self {
        let z = C64::default();
        let o = c64(1.0, 0.0);
        Self { entries: CMatrix::from_row_slice(2, 2, &[z, o, o, z]), hermitian: true }
    }

    pub fn sigma_y() -> Self {
        let z = C64::default();
        Self {
            entries: CMatrix::from_row_slice(2, 2, &[z, c64(0.0, -1.0), c64(0.0, 1.0), z]),
            hermitian: true,
        }
    }

    pub fn sigma_z() -> Self {
        Self::diagonal(&[1.0, -1.0])
    }

    /// Truncated bosonic annihilation operator on `cutoff` Fock levels.
    pub fn annihilation(cutoff: usize) -> Self {
        let mut entries = CMatrix::zeros(cutoff, cutoff);
        for n in 1..cutoff {
            entries[(n - 1, n)] = c64((n as f64).sqrt(), 0.0);
        }
        Self { entries, hermitian: false }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.entries
    }

    pub fn into_matrix(self) -> CMatrix {
        self.entries
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    /// max |A - A†| relative to max |A|.
    pub fn hermitian_deviation(&self) -> f64 {
        let scale = max_abs(&self.entries);
        if scale == 0.0 {
            return 0.0;
        }
        max_abs(&(&self.entries - self.entries.adjoint())) / scale
    }

    pub fn adjoint(&self) -> Self {
        Self { entries: self.entries.adjoint(), hermitian: self.hermitian }
    }

    pub fn scaled(&self, factor: C64) -> Self {
        Self {
            entries: &self.entries * factor,
            hermitian: self.hermitian && factor.im == 0.0,
        }
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        check_dim(self.dim(), other.dim())?;
        Ok(Self { entries: &self.entries * &other.entries, hermitian: false })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        check_dim(self.dim(), other.dim())?;
        Ok(Self {
            entries: &self.entries + &other.entries,
            hermitian: self.hermitian && other.hermitian,
        })
    }

    /// Frobenius norm of [self, other].
    pub fn commutator_norm(&self, other: &Self) -> Result<f64> {
        check_dim(self.dim(), other.dim())?;
        let ab = &self.entries * &other.entries;
        let ba = &other.entries * &self.entries;
        Ok((ab - ba).norm())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.entries.norm()
    }

    /// Eigen-decomposition of a Hermitian operator: (eigenvalues, eigenvector columns).
    pub fn hermitian_eigen(&self) -> Result<(Vec<f64>, CMatrix)> {
        if !self.hermitian {
            return Err(Error::NotHermitian {
                name: "operator".into(),
                deviation: self.hermitian_deviation(),
            });
        }
        let eig = SymmetricEigen::new(self.entries.clone());
        Ok((eig.eigenvalues.iter().copied().collect(), eig.eigenvectors))
    }
}

/// Density matrix (possibly unnormalized, e.g. a Monte Carlo mean of ψψ†).
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    entries: CMatrix,
}

impl DensityMatrix {
    /// Accepts matrices Hermitian to 1e-10 relative; the stored matrix is
    /// symmetrized exactly.
    pub fn new(entries: CMatrix) -> Result<Self> {
        if !entries.is_square() || entries.nrows() == 0 {
            return Err(Error::InvalidInput("density matrix must be non-empty and square".into()));
        }
        let scale = max_abs(&entries);
        if scale > 0.0 {
            let deviation = max_abs(&(&entries - entries.adjoint())) / scale;
            if deviation > DENSITY_HERMITIAN_REL_TOL {
                return Err(Error::NotHermitian { name: "density matrix".into(), deviation });
            }
        }
        Ok(Self::from_matrix_hermitized(entries))
    }

    pub(crate) fn from_matrix_hermitized(entries: CMatrix) -> Self {
        let sym = (&entries + entries.adjoint()) * c64(0.5, 0.0);
        Self { entries: sym }
    }

    pub fn from_outer(psi: &CVector) -> Self {
        let n = psi.len();
        let mut entries = CMatrix::zeros(n, n);
        accumulate_outer(&mut entries, psi);
        Self { entries }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.entries
    }

    pub fn trace(&self) -> f64 {
        self.entries.diagonal().iter().map(|z| z.re).sum()
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let eig = SymmetricEigen::new(self.entries.clone());
        let mut v: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        v.sort_by(|a, b| a.total_cmp(b));
        v
    }

    pub fn expectation(&self, op: &OperatorMatrix) -> Result<C64> {
        check_dim(self.dim(), op.dim())?;
        Ok((op.matrix() * &self.entries).trace())
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.entries[(i, j)]
    }
}

/// Adds ψψ† into `acc`, filling the upper triangle and mirroring so the
/// result stays exactly Hermitian.
pub(crate) fn accumulate_outer(acc: &mut CMatrix, psi: &CVector) {
    let n = psi.len();
    for j in 0..n {
        let pj = psi[j].conj();
        for i in 0..=j {
            let v = psi[i] * pj;
            acc[(i, j)] += v;
            if i != j {
                acc[(j, i)] += v.conj();
            } else {
                acc[(i, i)].im = 0.0;
            }
        }
    }
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

pub(crate) fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Maximum absolute column sum.
pub(crate) fn norm1(m: &CMatrix) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// ⟨a|b⟩, conjugate-linear in the first argument.
pub fn inner(a: &StateVector, b: &StateVector) -> Result<C64> {
    check_dim(a.dim(), b.dim())?;
    Ok(a.amps.dotc(&b.amps))
}

pub fn apply(op: &OperatorMatrix, s: &StateVector) -> Result<StateVector> {
    check_dim(op.dim(), s.dim())?;
    Ok(StateVector { amps: &op.entries * &s.amps })
}

/// Kronecker product with the default dimension cap.
pub fn tensor(a: &OperatorMatrix, b: &OperatorMatrix) -> Result<OperatorMatrix> {
    tensor_with_cap(a, b, DEFAULT_DIM_CAP)
}

pub fn tensor_with_cap(a: &OperatorMatrix, b: &OperatorMatrix, cap: usize) -> Result<OperatorMatrix> {
    let dim = a.dim().saturating_mul(b.dim());
    if dim > cap {
        return Err(Error::DimensionCap { dim, cap });
    }
    Ok(OperatorMatrix {
        entries: a.entries.kronecker(&b.entries),
        hermitian: a.hermitian && b.hermitian,
    })
}

/// Tensor product of a list of factors, first factor slowest.
pub fn tensor_all(factors: &[OperatorMatrix], cap: usize) -> Result<OperatorMatrix> {
    let (first, rest) = factors
        .split_first()
        .ok_or_else(|| Error::InvalidInput("empty tensor product".into()))?;
    rest.iter().try_fold(first.clone(), |acc, f| tensor_with_cap(&acc, f, cap))
}

/// exp(scale · op) s with the default options.
pub fn matrix_exponential_apply(op: &OperatorMatrix, scale: C64, s: &StateVector) -> Result<StateVector> {
    matrix_exponential_apply_with(op, scale, s, &ExpmOptions::default())
}

/// Dense scaling-and-squaring up to `opts.krylov_threshold`, Krylov above it.
pub fn matrix_exponential_apply_with(
    op: &OperatorMatrix,
    scale: C64,
    s: &StateVector,
    opts: &ExpmOptions,
) -> Result<StateVector> {
    check_dim(op.dim(), s.dim())?;
    if scale == C64::default() {
        return Ok(s.clone());
    }
    let a = op.matrix() * scale;
    let out = if op.dim() <= opts.krylov_threshold {
        expm(&a)? * &s.amps
    } else {
        krylov_apply(&a, &s.amps, opts)?
    };
    if out.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NonConvergence("non-finite result".into()));
    }
    Ok(StateVector { amps: out })
}

/// Partial trace over the trailing (bath) factor of a pure state:
/// ρ_sys[i,j] = Σ_b ψ[i·B+b] ψ*[j·B+b].
pub fn partial_trace_pure(psi: &CVector, sys_dim: usize) -> Result<DensityMatrix> {
    if sys_dim == 0 || !psi.len().is_multiple_of(sys_dim) {
        return Err(Error::DimensionMismatch { expected: sys_dim, found: psi.len() });
    }
    let bath = psi.len() / sys_dim;
    let mut rho = CMatrix::zeros(sys_dim, sys_dim);
    for i in 0..sys_dim {
        for j in 0..sys_dim {
            let mut acc = C64::default();
            for b in 0..bath {
                acc += psi[i * bath + b] * psi[j * bath + b].conj();
            }
            rho[(i, j)] = acc;
        }
    }
    Ok(DensityMatrix::from_matrix_hermitized(rho))
}

/// Partial trace over the trailing factor of a mixed state.
pub fn partial_trace(rho: &CMatrix, sys_dim: usize) -> Result<DensityMatrix> {
    if sys_dim == 0 || !rho.nrows().is_multiple_of(sys_dim) || !rho.is_square() {
        return Err(Error::DimensionMismatch { expected: sys_dim, found: rho.nrows() });
    }
    let bath = rho.nrows() / sys_dim;
    let out = CMatrix::from_fn(sys_dim, sys_dim, |i, j| {
        (0..bath).map(|b| rho[(i * bath + b, j * bath + b)]).sum()
    });
    Ok(DensityMatrix::from_matrix_hermitized(out))
}

/// |⟨a|b⟩|² / (‖a‖²‖b‖²).
pub fn fidelity(a: &StateVector, b: &StateVector) -> Result<f64> {
    let ab = inner(a, b)?;
    let denom = a.norm_sq() * b.norm_sq();
    if denom == 0.0 {
        return Err(Error::ZeroNorm { step: 0 });
    }
    Ok(ab.norm_sqr() / denom)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[(f64, f64)]) -> StateVector {
        StateVector::new(v.iter().map(|&(r, i)| c64(r, i)).collect()).unwrap()
    }

    #[test]
    fn inner_examples() {
        assert_eq!(inner(&s(&[(1., 0.), (0., 0.)]), &s(&[(1., 0.), (0., 0.)])).unwrap(), c64(1., 0.));
        assert_eq!(inner(&s(&[(1., 0.), (0., 0.)]), &s(&[(0., 0.), (1., 0.)])).unwrap(), c64(0., 0.));
        assert_eq!(inner(&s(&[(0., 1.), (0., 0.)]), &s(&[(1., 0.), (0., 0.)])).unwrap(), c64(0., -1.));
    }

    #[test]
    fn inner_dimension_mismatch() {
        let err = inner(&StateVector::basis(2, 0), &StateVector::basis(3, 0)).unwrap_err();
        assert_eq!(err, Error::DimensionMismatch { expected: 2, found: 3 });
    }

    #[test]
    fn apply_examples() {
        let up = StateVector::basis(2, 0);
        assert_eq!(apply(&OperatorMatrix::identity(2), &up).unwrap(), up);
        assert_eq!(apply(&OperatorMatrix::sigma_z(), &up).unwrap(), up);
        assert_eq!(apply(&OperatorMatrix::sigma_x(), &up).unwrap(), StateVector::basis(2, 1));
        assert!(apply(&OperatorMatrix::identity(3), &up).is_err());
    }

    #[test]
    fn tensor_examples() {
        let i2 = OperatorMatrix::identity(2);
        assert_eq!(tensor(&i2, &i2).unwrap().matrix(), OperatorMatrix::identity(4).matrix());
        let zi = tensor(&OperatorMatrix::sigma_z(), &i2).unwrap();
        let diag: Vec<f64> = zi.matrix().diagonal().iter().map(|z| z.re).collect();
        assert_eq!(diag, vec![1.0, 1.0, -1.0, -1.0]);
        assert!(zi.is_hermitian());
    }

    #[test]
    fn tensor_respects_cap() {
        let big = OperatorMatrix::identity(100);
        assert_eq!(
            tensor(&big, &big).unwrap_err(),
            Error::DimensionCap { dim: 10_000, cap: DEFAULT_DIM_CAP }
        );
    }

    #[test]
    fn hermitian_check_rejects_non_hermitian() {
        let m = CMatrix::from_row_slice(2, 2, &[c64(0., 0.), c64(1., 0.), c64(0., 0.), c64(0., 0.)]);
        assert!(matches!(OperatorMatrix::hermitian(m), Err(Error::NotHermitian { .. })));
        assert!(OperatorMatrix::sigma_y().hermitian_deviation() == 0.0);
    }

    #[test]
    fn matrix_exponential_trivial_cases() {
        let psi = s(&[(0.6, 0.0), (0.0, 0.8)]);
        let out = matrix_exponential_apply(&OperatorMatrix::sigma_x(), C64::default(), &psi).unwrap();
        assert_eq!(out, psi);

        let out = matrix_exponential_apply(
            &OperatorMatrix::sigma_z(),
            c64(0.0, std::f64::consts::FRAC_PI_2),
            &StateVector::basis(2, 0),
        )
        .unwrap();
        assert!((out.amplitudes()[0] - c64(0.0, 1.0)).norm() < 1e-14);
        assert!(out.amplitudes()[1].norm() < 1e-14);
    }

    #[test]
    fn partial_trace_of_product_state() {
        let sys = s(&[(0.6, 0.0), (0.0, 0.8)]);
        let bath = s(&[(0.0, 1.0), (0.0, 0.0), (0.0, 0.0)]);
        let total = sys.amplitudes().kronecker(bath.amplitudes());
        let rho = partial_trace_pure(&total, 2).unwrap();
        let expected = sys.projector();
        assert!((rho.matrix() - expected.matrix()).norm() < 1e-15);
        let mixed = partial_trace(&DensityMatrix::from_outer(&total).matrix().clone(), 2).unwrap();
        assert!((mixed.matrix() - expected.matrix()).norm() < 1e-15);
    }

    #[test]
    fn accumulated_outer_is_exactly_hermitian() {
        let psi = s(&[(0.3, -0.2), (1.1, 0.7), (-0.4, 0.9)]);
        let rho = psi.projector();
        assert_eq!(rho.matrix(), &rho.matrix().adjoint());
        assert!((rho.trace() - psi.norm_sq()).abs() < 1e-15);
    }
}
