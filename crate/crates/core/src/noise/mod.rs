//! Discretized complex Gaussian drivers: white noise, colored noise with an
//! exponential-sum kernel, and lattice vacuum fields.
//!
//! Convention: a kernel α gives M[z*(t) z(s)] = α(t − s) and M[z z] = 0.
//! On a grid the covariance matrix is C_ij = M[z_i z_j*] = α(t_j − t_i),
//! which is Hermitian because α(−τ) = α(τ)*.
//!
//! White noise is stored as step-constant values z_k with variance γ/dt, so
//! z_k·dt is the increment over step k.
//!
//! Every generator is a pure function of its inputs and a 64-bit seed. The
//! seed feeds a ChaCha8 stream; the standard complex normals w_k are drawn
//! in order (real part then imaginary part, each N(0, ½)). White noise is
//! z_k = √(γ/dt)·w_k and colored noise is z = F·w from the same stream, so
//! equal seeds give common random numbers across kernels.

mod factor;
pub mod export;
pub mod lattice;

use std::f64::consts::FRAC_1_SQRT_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::hilbert::{c64, CMatrix, C64};
pub use lattice::{
    sample_field, sample_field_modes, vacuum_correlation, FieldPath, LatticeMode, LatticeSpec, PerturbationDirection,
    VacuumCorrelation,
};

pub type NoiseRng = ChaCha8Rng;

pub use factor::PSD_TOLERANCE;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub dt: f64,
    pub steps: usize,
}

impl TimeGrid {
    /// A grid with zero steps is allowed and yields empty paths.
    pub fn new(t0: f64, dt: f64, steps: usize) -> Result<Self> {
        let grid = Self { t0, dt, steps };
        grid.validate()?;
        Ok(grid)
    }

    /// Grid covering [t0, t0 + duration] with step dt (rounded to the nearest
    /// whole number of steps).
    pub fn covering(t0: f64, dt: f64, duration: f64) -> Result<Self> {
        if !(duration >= 0.0 && duration.is_finite()) {
            return invalid(format!("duration must be finite and >= 0, got {duration}"));
        }
        if !(dt > 0.0) {
            return invalid(format!("time step must be positive, got {dt}"));
        }
        Self::new(t0, dt, (duration / dt).round() as usize)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return invalid(format!("time step must be positive and finite, got {}", self.dt));
        }
        if !self.t0.is_finite() {
            return invalid("start time must be finite");
        }
        Ok(())
    }

    /// Left endpoint of step k.
    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn end(&self) -> f64 {
        self.time(self.steps)
    }
}

/// One term g·e^{−κτ} of an exponential-sum kernel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpTerm {
    pub weight: C64,
    pub rate: C64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovarianceKernel {
    /// α(τ) = γ δ(τ).
    White { gamma: f64 },
    /// α(τ) = Σ g_j e^{−κ_j τ} for τ ≥ 0, extended by α(−τ) = α(τ)*.
    /// Re κ_j = 0 is allowed (undamped oscillatory terms).
    ExponentialSum { terms: Vec<ExpTerm> },
    /// Single-site kernel of the lattice vacuum, α(τ) = Σ_k |φ_k|² e^{−iω_k τ}.
    LatticeVacuum { lattice: LatticeSpec, coupling_cutoff: usize },
}

impl CovarianceKernel {
    pub fn white(gamma: f64) -> Self {
        Self::White { gamma }
    }

    /// α(τ) = (γκ/2) e^{−κ|τ|}, whose integral over the real line is γ.
    pub fn exponential(gamma: f64, kappa: f64) -> Self {
        Self::ExponentialSum { terms: vec![ExpTerm { weight: c64(gamma * kappa / 2.0, 0.0), rate: c64(kappa, 0.0) }] }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::White { gamma } => {
                if !(*gamma >= 0.0 && gamma.is_finite()) {
                    return invalid(format!("white-noise rate must be >= 0, got {gamma}"));
                }
            }
            Self::ExponentialSum { terms } => {
                for t in terms {
                    let finite = t.weight.re.is_finite()
                        && t.weight.im.is_finite()
                        && t.rate.re.is_finite()
                        && t.rate.im.is_finite();
                    if !finite {
                        return invalid("kernel terms must be finite");
                    }
                    if t.rate.re < 0.0 {
                        return invalid(format!("kernel decay rate must have Re >= 0, got {}", t.rate));
                    }
                }
                let a0: C64 = terms.iter().map(|t| t.weight).sum();
                if a0.im.abs() > 1e-12 * a0.norm().max(1e-300) {
                    return invalid(format!("kernel weights must sum to a real number, got {a0}"));
                }
            }
            Self::LatticeVacuum { lattice, coupling_cutoff } => {
                lattice.retained_modes(*coupling_cutoff)?;
            }
        }
        Ok(())
    }

    /// Exponential-sum form, or None for white noise.
    pub fn terms(&self) -> Result<Option<Vec<ExpTerm>>> {
        self.validate()?;
        Ok(match self {
            Self::White { .. } => None,
            Self::ExponentialSum { terms } => Some(terms.clone()),
            Self::LatticeVacuum { lattice, coupling_cutoff } => {
                match lattice.site_kernel(&lattice.retained_modes(*coupling_cutoff)?) {
                    Self::ExponentialSum { terms } => Some(terms),
                    _ => unreachable!(),
                }
            }
        })
    }

    /// α(τ) for a continuous kernel; None for white noise.
    pub fn alpha(&self, tau: f64) -> Result<Option<C64>> {
        Ok(self.terms()?.map(|terms| alpha_of_terms(&terms, tau)))
    }

    /// ∫ α(τ) dτ over the real line (the rate of the matching white noise).
    /// Undamped terms contribute nothing.
    pub fn markov_rate(&self) -> Result<f64> {
        Ok(match self.terms()? {
            None => match self {
                Self::White { gamma } => *gamma,
                _ => unreachable!(),
            },
            Some(terms) => terms
                .iter()
                .filter(|t| t.rate.re > 0.0)
                .map(|t| 2.0 * (t.weight / t.rate).re)
                .sum(),
        })
    }

    /// Grid covariance C_ij = M[z_i z_j*] = α((j − i)·dt); white noise gives
    /// (γ/dt)·δ_ij.
    pub fn covariance_matrix(&self, grid: &TimeGrid) -> Result<CMatrix> {
        grid.validate()?;
        let n = grid.steps;
        let table = self.lag_table(grid)?;
        Ok(CMatrix::from_fn(n, n, |i, j| {
            if j >= i {
                table[j - i]
            } else {
                table[i - j].conj()
            }
        }))
    }

    /// α(l·dt) for l = 0..steps, with the white-noise grid value γ/dt at l = 0.
    pub fn lag_table(&self, grid: &TimeGrid) -> Result<Vec<C64>> {
        let n = grid.steps.max(1);
        Ok(match self.terms()? {
            None => {
                let mut v = vec![C64::default(); n];
                if let Self::White { gamma } = self {
                    v[0] = c64(gamma / grid.dt, 0.0);
                }
                v
            }
            Some(terms) => (0..n).map(|l| alpha_of_terms(&terms, l as f64 * grid.dt)).collect(),
        })
    }
}

pub(crate) fn alpha_of_terms(terms: &[ExpTerm], tau: f64) -> C64 {
    let v: C64 = terms.iter().map(|t| t.weight * (-t.rate * tau.abs()).exp()).sum();
    if tau < 0.0 {
        v.conj()
    } else {
        v
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoisePath {
    pub grid: TimeGrid,
    pub values: Vec<C64>,
}

impl NoisePath {
    pub fn zeros(grid: TimeGrid) -> Self {
        Self { grid, values: vec![C64::default(); grid.steps] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// 64-bit seed for trajectory `index` of an ensemble with root seed `root`:
/// the splitmix64 finalizer applied to root + (index + 1)·0x9E3779B97F4A7C15.
pub fn derived_seed(root: u64, index: u64) -> u64 {
    let mut z = root.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng_from_seed(seed: u64) -> NoiseRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Standard complex normal: M[|w|²] = 1, M[w²] = 0.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    c64(re * FRAC_1_SQRT_2, im * FRAC_1_SQRT_2)
}

pub fn complex_normals<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<C64> {
    (0..n).map(|_| complex_normal(rng)).collect()
}

pub fn sample_white(gamma: f64, grid: &TimeGrid, seed: u64) -> Result<NoisePath> {
    sample_white_with(gamma, grid, &mut rng_from_seed(seed))
}

pub fn sample_white_with<R: Rng + ?Sized>(gamma: f64, grid: &TimeGrid, rng: &mut R) -> Result<NoisePath> {
    CovarianceKernel::white(gamma).validate()?;
    grid.validate()?;
    if gamma == 0.0 {
        return Ok(NoisePath::zeros(*grid));
    }
    let scale = (gamma / grid.dt).sqrt();
    let values = (0..grid.steps).map(|_| complex_normal(rng) * scale).collect();
    Ok(NoisePath { grid: *grid, values })
}

pub fn sample_colored(kernel: &CovarianceKernel, grid: &TimeGrid, seed: u64) -> Result<NoisePath> {
    Ok(ColoredSampler::new(kernel, grid)?.sample(seed))
}

#[derive(Clone, Debug)]
enum Factor {
    Zero,
    Diagonal(f64),
    Real(Vec<Vec<f64>>),
    Complex(Vec<Vec<C64>>),
}

/// Colored-noise generator with the grid covariance factored once.
#[derive(Clone, Debug)]
pub struct ColoredSampler {
    grid: TimeGrid,
    factor: Factor,
    rank: usize,
}

impl ColoredSampler {
    pub fn new(kernel: &CovarianceKernel, grid: &TimeGrid) -> Result<Self> {
        kernel.validate()?;
        grid.validate()?;
        if let CovarianceKernel::White { gamma } = kernel {
            let (factor, rank) = if *gamma == 0.0 {
                (Factor::Zero, 0)
            } else {
                (Factor::Diagonal((gamma / grid.dt).sqrt()), grid.steps)
            };
            return Ok(Self { grid: *grid, factor, rank });
        }
        let c = kernel.covariance_matrix(grid)?;
        let lower = factor::hermitian_factor(&c)?;
        let rank = lower.rank;
        let factor = if rank == 0 {
            Factor::Zero
        } else if lower.is_real() {
            Factor::Real(lower.rows.into_iter().map(|r| r.into_iter().map(|z| z.re).collect()).collect())
        } else {
            Factor::Complex(lower.rows)
        };
        Ok(Self { grid: *grid, factor, rank })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// Numerical rank of the grid covariance.
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn sample(&self, seed: u64) -> NoisePath {
        self.sample_with(&mut rng_from_seed(seed))
    }

    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R) -> NoisePath {
        let n = self.grid.steps;
        let values = match &self.factor {
            Factor::Zero => vec![C64::default(); n],
            Factor::Diagonal(s) => complex_normals(rng, n).into_iter().map(|w| w * *s).collect(),
            Factor::Real(rows) => {
                let w = complex_normals(rng, self.rank);
                rows.iter()
                    .map(|row| {
                        let (mut re, mut im) = (0.0, 0.0);
                        for (f, wk) in row.iter().zip(&w) {
                            re += f * wk.re;
                            im += f * wk.im;
                        }
                        c64(re, im)
                    })
                    .collect()
            }
            Factor::Complex(rows) => {
                let w = complex_normals(rng, self.rank);
                rows.iter().map(|row| row.iter().zip(&w).map(|(f, wk)| f * wk).sum()).collect()
            }
        };
        NoisePath { grid: self.grid, values }
    }
}

/// Empirical second moments of an ensemble of paths on a common grid.
#[derive(Clone, Debug)]
pub struct CovarianceEstimate {
    pub samples: usize,
    /// Ĉ_ij = mean of z_i z_j*.
    pub covariance: CMatrix,
    /// P̂_ij = mean of z_i z_j.
    pub pseudo_covariance: CMatrix,
    /// Sample mean of z_i.
    pub mean: Vec<C64>,
}

impl CovarianceEstimate {
    pub fn new(steps: usize) -> Self {
        Self {
            samples: 0,
            covariance: CMatrix::zeros(steps, steps),
            pseudo_covariance: CMatrix::zeros(steps, steps),
            mean: vec![C64::default(); steps],
        }
    }

    pub fn add(&mut self, path: &[C64]) -> Result<()> {
        let n = self.mean.len();
        if path.len() != n {
            return invalid(format!("path length {} does not match estimator size {n}", path.len()));
        }
        let m = self.samples as f64;
        let w = 1.0 / (m + 1.0);
        for i in 0..n {
            let d = path[i] - self.mean[i];
            self.mean[i] += d * w;
            for j in 0..n {
                let c = &mut self.covariance[(i, j)];
                *c += (path[i] * path[j].conj() - *c) * w;
                let p = &mut self.pseudo_covariance[(i, j)];
                *p += (path[i] * path[j] - *p) * w;
            }
        }
        self.samples += 1;
        Ok(())
    }

    /// Five-standard-error tolerance for entry (i,j) of a Gaussian ensemble
    /// with true covariance `c`: 5·√(C_ii·C_jj / N).
    pub fn tolerance(&self, c: &CMatrix, i: usize, j: usize) -> f64 {
        5.0 * (c[(i, i)].re * c[(j, j)].re / self.samples.max(1) as f64).sqrt()
    }

    /// Largest |Ĉ − C| and |P̂| in units of the five-standard-error tolerance
    /// max_ij 5·√(max C_ii · max C_jj / N). Values ≤ 1 pass.
    pub fn normalized_errors(&self, c: &CMatrix) -> (f64, f64) {
        let dmax = (0..c.nrows()).map(|i| c[(i, i)].re).fold(0.0, f64::max);
        let tol = 5.0 * (dmax * dmax / self.samples.max(1) as f64).sqrt();
        let cov = (&self.covariance - c).iter().map(|z| z.norm()).fold(0.0, f64::max);
        let pseudo = self.pseudo_covariance.iter().map(|z| z.norm()).fold(0.0, f64::max);
        if tol == 0.0 {
            return (if cov == 0.0 { 0.0 } else { f64::INFINITY }, if pseudo == 0.0 { 0.0 } else { f64::INFINITY });
        }
        (cov / tol, pseudo / tol)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::max_abs;

    fn grid(steps: usize) -> TimeGrid {
        TimeGrid::new(0.0, 0.05, steps).unwrap()
    }

    #[test]
    fn zero_rate_white_noise_is_zero() {
        let p = sample_white(0.0, &grid(50), 3).unwrap();
        assert!(p.values.iter().all(|z| *z == C64::default()));
    }

    #[test]
    fn white_noise_is_deterministic() {
        let a = sample_white(1.3, &grid(64), 99).unwrap();
        let b = sample_white(1.3, &grid(64), 99).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, sample_white(1.3, &grid(64), 100).unwrap());
    }

    #[test]
    fn white_noise_increment_variance() {
        let g = TimeGrid::new(0.0, 1e-3, 100_000).unwrap();
        let p = sample_white(1.0, &g, 5).unwrap();
        // Each z_k·dt is an increment of variance γ·dt, so |z_k|²·dt has mean γ.
        let mean: f64 = p.values.iter().map(|z| z.norm_sqr() * g.dt).sum::<f64>() / g.steps as f64;
        assert!((mean - 1.0).abs() < 5.0 / (1e5f64).sqrt());
    }

    #[test]
    fn zero_weight_kernel_gives_zero_path() {
        let k = CovarianceKernel::ExponentialSum { terms: vec![ExpTerm { weight: c64(0.0, 0.0), rate: c64(1.0, 0.0) }] };
        let p = sample_colored(&k, &grid(30), 1).unwrap();
        assert!(p.values.iter().all(|z| *z == C64::default()));
    }

    #[test]
    fn negative_decay_rate_is_rejected() {
        let k = CovarianceKernel::ExponentialSum { terms: vec![ExpTerm { weight: c64(1.0, 0.0), rate: c64(-1.0, 0.0) }] };
        assert!(k.validate().is_err());
    }

    #[test]
    fn complex_equal_time_value_is_rejected() {
        let k = CovarianceKernel::ExponentialSum { terms: vec![ExpTerm { weight: c64(1.0, 0.5), rate: c64(1.0, 0.0) }] };
        assert!(k.validate().is_err());
    }

    #[test]
    fn non_psd_kernel_names_negative_eigenvalue() {
        // A negative weight makes the grid covariance indefinite.
        let k = CovarianceKernel::ExponentialSum { terms: vec![ExpTerm { weight: c64(-1.0, 0.0), rate: c64(1.0, 0.0) }] };
        match sample_colored(&k, &grid(8), 1) {
            Err(crate::Error::NotPositiveSemidefinite { min_eigenvalue, .. }) => assert!(min_eigenvalue < 0.0),
            other => panic!("expected PSD failure, got {other:?}"),
        }
    }

    #[test]
    fn covariance_matrix_is_hermitian_toeplitz() {
        let k = CovarianceKernel::ExponentialSum {
            terms: vec![
                ExpTerm { weight: c64(0.7, 0.2), rate: c64(1.5, 3.0) },
                ExpTerm { weight: c64(0.4, -0.2), rate: c64(0.5, 0.0) },
            ],
        };
        let c = k.covariance_matrix(&grid(6)).unwrap();
        assert!(max_abs(&(&c - c.adjoint())) < 1e-15);
        let want = alpha_of_terms(&k.terms().unwrap().unwrap(), 3.0 * 0.05);
        assert_eq!(c[(1, 4)], want);
    }

    #[test]
    fn fast_decay_approaches_white_covariance() {
        let g = grid(20);
        let off = |kappa: f64| {
            let c = CovarianceKernel::exponential(1.0, kappa).covariance_matrix(&g).unwrap();
            let diag = c[(0, 0)].re;
            (0..20).flat_map(|i| (0..20).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| c[(i, j)].norm() / diag)
                .fold(0.0, f64::max)
        };
        assert!(off(100.0) < 1e-2);
        assert!(off(2000.0) < 1e-40);
        assert!(off(100.0) < off(20.0));
    }

    #[test]
    fn markov_rate_of_exponential_kernel() {
        let k = CovarianceKernel::exponential(0.8, 3.0);
        assert!((k.markov_rate().unwrap() - 0.8).abs() < 1e-15);
        assert_eq!(CovarianceKernel::white(2.5).markov_rate().unwrap(), 2.5);
    }

    #[test]
    fn derived_seeds_are_distinct_and_stable() {
        let seeds: Vec<u64> = (0..1000).map(|i| derived_seed(7, i)).collect();
        let mut sorted = seeds.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 1000);
        assert_eq!(derived_seed(7, 3), seeds[3]);
        assert_ne!(derived_seed(8, 3), seeds[3]);
    }

    #[test]
    fn white_and_colored_share_random_stream() {
        let g = grid(16);
        let w = sample_white(2.0, &g, 11).unwrap();
        let c = sample_colored(&CovarianceKernel::white(2.0), &g, 11).unwrap();
        assert_eq!(w, c);
    }

    #[test]
    fn estimator_tracks_running_mean() {
        let mut est = CovarianceEstimate::new(2);
        est.add(&[c64(1.0, 0.0), c64(0.0, 1.0)]).unwrap();
        est.add(&[c64(3.0, 0.0), c64(0.0, -1.0)]).unwrap();
        assert_eq!(est.samples, 2);
        assert!((est.covariance[(0, 0)].re - 5.0).abs() < 1e-15);
        assert!((est.covariance[(0, 1)] - c64(0.0, 1.0)).norm() < 1e-15);
        assert!((est.pseudo_covariance[(1, 1)].re + 1.0).abs() < 1e-15);
        assert!(est.add(&[c64(0.0, 0.0)]).is_err());
    }
}
