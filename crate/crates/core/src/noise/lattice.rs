//! Periodic 1-D lattice field: mode functions, sampled vacuum fields and the
//! exact mode-sum two-point function.
//!
//! Mode functions are φ_k(t,x) = e^{i(kx − ω_k t)} / √(2 ω_k L a) with
//! ω_k = √(m² + (2/a)² sin²(ka/2)). A sampled field is
//! A⁻(t,x) = Σ_k ξ_k φ_k*(t,x) with independent standard complex Gaussians
//! ξ_k, and A⁺ = (A⁻)*. Its covariance is
//! M[A⁺(x) A⁻(y)] = W(x − y) = Σ_k φ_k(x) φ_k*(y),
//! the vacuum two-point function ⟨Â(x)Â(y)⟩ of Â = Σ_k (a_k φ_k + a_k† φ_k*).
//! The memory kernel of the field SSE is W itself (the "−iD" of the
//! field equation is identified with the positive-frequency mode sum).

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{complex_normal, rng_from_seed, CovarianceKernel, ExpTerm, NoisePath, TimeGrid};
use crate::error::{invalid, Error, Result};
use crate::hilbert::{c64, C64};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeSpec {
    pub sites: usize,
    pub spacing: f64,
    pub mass: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeMode {
    /// Integer wave number n, with k = 2πn / (L a).
    pub index: i64,
    pub k: f64,
    pub omega: f64,
}

impl LatticeMode {
    /// |φ_k|² = 1 / (2 ω L a).
    pub fn weight(&self, lattice: &LatticeSpec) -> f64 {
        1.0 / (2.0 * self.omega * lattice.sites as f64 * lattice.spacing)
    }

    pub fn phi(&self, lattice: &LatticeSpec, t: f64, x: f64) -> C64 {
        C64::from_polar(self.weight(lattice).sqrt(), self.k * x - self.omega * t)
    }
}

impl LatticeSpec {
    pub fn new(sites: usize, spacing: f64, mass: f64) -> Result<Self> {
        let spec = Self { sites, spacing, mass };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sites < 2 {
            return invalid(format!("lattice needs at least 2 sites, got {}", self.sites));
        }
        if !(self.spacing > 0.0 && self.spacing.is_finite()) {
            return invalid(format!("lattice spacing must be positive, got {}", self.spacing));
        }
        if !(self.mass >= 0.0 && self.mass.is_finite()) {
            return invalid(format!("lattice mass must be >= 0, got {}", self.mass));
        }
        Ok(())
    }

    pub fn position(&self, site: usize) -> f64 {
        site as f64 * self.spacing
    }

    /// Periodic (minimum-image) separation in sites.
    pub fn site_distance(&self, a: usize, b: usize) -> usize {
        let l = self.sites;
        let d = (a % l).abs_diff(b % l);
        d.min(l - d)
    }

    pub fn mode(&self, index: i64) -> Result<LatticeMode> {
        self.validate()?;
        let l = self.sites as f64;
        let k = 2.0 * PI * index as f64 / (l * self.spacing);
        let s = (k * self.spacing / 2.0).sin();
        let omega = (self.mass * self.mass + (2.0 / self.spacing).powi(2) * s * s).sqrt();
        if omega <= 1e-12 {
            return Err(Error::MasslessZeroMode);
        }
        Ok(LatticeMode { index, k, omega })
    }

    /// Wave numbers ordered by |n|: 0, 1, −1, 2, −2, … (each residue mod L once).
    pub fn mode_order(&self) -> Vec<i64> {
        let l = self.sites as i64;
        let mut out = vec![0];
        let mut n = 1;
        while (out.len() as i64) < l {
            out.push(n);
            if (out.len() as i64) < l && (2 * n) != l {
                out.push(-n);
            }
            n += 1;
        }
        out
    }

    /// The `cutoff` lowest-|k| modes. The zero mode is skipped when m = 0.
    pub fn retained_modes(&self, cutoff: usize) -> Result<Vec<LatticeMode>> {
        self.validate()?;
        let available: Vec<i64> = self
            .mode_order()
            .into_iter()
            .filter(|&n| !(n == 0 && self.mass == 0.0))
            .collect();
        if cutoff == 0 || cutoff > available.len() {
            return invalid(format!(
                "coupling cutoff must be in 1..={}, got {cutoff}",
                available.len()
            ));
        }
        available[..cutoff].iter().map(|&n| self.mode(n)).collect()
    }

    pub fn explicit_modes(&self, indices: &[i64]) -> Result<Vec<LatticeMode>> {
        if indices.is_empty() {
            return invalid("at least one lattice mode must be retained");
        }
        indices.iter().map(|&n| self.mode(n)).collect()
    }

    /// Single-site memory kernel α(τ) = Σ_k |φ_k|² e^{−iω_k τ}.
    pub fn site_kernel(&self, modes: &[LatticeMode]) -> CovarianceKernel {
        CovarianceKernel::ExponentialSum {
            terms: modes
                .iter()
                .map(|m| ExpTerm { weight: c64(m.weight(self), 0.0), rate: c64(0.0, m.omega) })
                .collect(),
        }
    }
}

/// Field realization A⁻(t_k, x_m) on a grid, with the mode amplitudes that
/// generated it.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldPath {
    pub lattice: LatticeSpec,
    pub grid: TimeGrid,
    pub modes: Vec<LatticeMode>,
    /// ξ_k for each retained mode, so that A⁻ = Σ_k ξ_k φ_k*.
    pub amplitudes: Vec<C64>,
    /// values[k][m] = A⁻(t_k, x_m), for k in 0..steps.
    pub values: Vec<Vec<C64>>,
}

/// Direction of a field perturbation: A⁻ += δ with A⁺ = (A⁻)* kept consistent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationDirection {
    /// A⁻ += ε, A⁺ += ε.
    Real,
    /// A⁻ += iε, A⁺ −= iε.
    Imaginary,
}

impl PerturbationDirection {
    pub fn unit(self) -> C64 {
        match self {
            Self::Real => c64(1.0, 0.0),
            Self::Imaginary => c64(0.0, 1.0),
        }
    }
}

impl FieldPath {
    /// Builds the path from explicit mode amplitudes.
    pub fn from_amplitudes(
        lattice: LatticeSpec,
        grid: TimeGrid,
        modes: Vec<LatticeMode>,
        amplitudes: Vec<C64>,
    ) -> Result<Self> {
        lattice.validate()?;
        grid.validate()?;
        if modes.len() != amplitudes.len() {
            return invalid("one amplitude per retained mode is required");
        }
        let values = (0..grid.steps)
            .map(|k| {
                let t = grid.time(k);
                (0..lattice.sites)
                    .map(|m| {
                        let x = lattice.position(m);
                        modes
                            .iter()
                            .zip(&amplitudes)
                            .map(|(mode, xi)| xi * mode.phi(&lattice, t, x).conj())
                            .sum()
                    })
                    .collect()
            })
            .collect();
        Ok(Self { lattice, grid, modes, amplitudes, values })
    }

    pub fn minus(&self, step: usize, site: usize) -> C64 {
        self.values[step][site]
    }

    pub fn plus(&self, step: usize, site: usize) -> C64 {
        self.values[step][site].conj()
    }

    /// The single-site driver z(t_k) = A⁻(t_k, x_site).
    pub fn site_path(&self, site: usize) -> NoisePath {
        NoisePath {
            grid: self.grid,
            values: self.values.iter().map(|row| row[site]).collect(),
        }
    }

    /// Copy with A⁻(t_step, x_site) shifted by ε·direction.
    pub fn perturbed(&self, step: usize, site: usize, epsilon: f64, direction: PerturbationDirection) -> Self {
        let mut out = self.clone();
        out.values[step][site] += direction.unit() * epsilon;
        out
    }

    /// ∫_{t0}^{t} A⁻(s, x_site) ds, exact from the mode amplitudes.
    pub fn integrated_minus(&self, site: usize, t: f64) -> C64 {
        let x = self.lattice.position(site);
        let t0 = self.grid.t0;
        self.modes
            .iter()
            .zip(&self.amplitudes)
            .map(|(mode, xi)| {
                let w = mode.omega;
                let spatial = C64::from_polar(mode.weight(&self.lattice).sqrt(), -mode.k * x);
                let time = (C64::from_polar(1.0, w * t) - C64::from_polar(1.0, w * t0)) / c64(0.0, w);
                xi * spatial * time
            })
            .sum()
    }
}

/// Draws one realization of the lattice vacuum field.
pub fn sample_field(lattice: &LatticeSpec, grid: &TimeGrid, coupling_cutoff: usize, seed: u64) -> Result<FieldPath> {
    let modes = lattice.retained_modes(coupling_cutoff)?;
    sample_field_modes(lattice, grid, modes, seed)
}

pub fn sample_field_modes(
    lattice: &LatticeSpec,
    grid: &TimeGrid,
    modes: Vec<LatticeMode>,
    seed: u64,
) -> Result<FieldPath> {
    let mut rng = rng_from_seed(seed);
    let amplitudes = modes
        .iter()
        .map(|_| complex_normal(&mut rng))
        .collect();
    FieldPath::from_amplitudes(*lattice, *grid, modes, amplitudes)
}

/// Exact mode-sum two-point function on a space-time grid.
#[derive(Clone, Debug)]
pub struct VacuumCorrelation {
    pub lattice: LatticeSpec,
    pub modes: Vec<LatticeMode>,
    pub grid: TimeGrid,
    /// table[lag + steps − 1][Δm] = W(lag·dt, Δm·a), lag in −(steps−1)..=steps−1.
    table: Vec<Vec<C64>>,
}

impl VacuumCorrelation {
    /// W(Δt, Δx) = Σ_k |φ_k|² e^{i(kΔx − ω_kΔt)}.
    pub fn w(&self, delta_t: f64, delta_x: f64) -> C64 {
        mode_sum(&self.lattice, &self.modes, delta_t, delta_x)
    }

    /// Tabulated W at a time lag (in steps) and a site offset.
    pub fn at(&self, lag: i64, delta_site: i64) -> Option<C64> {
        let n = self.grid.steps as i64;
        let row = lag + n - 1;
        if row < 0 || row >= self.table.len() as i64 {
            return None;
        }
        let l = self.lattice.sites as i64;
        Some(self.table[row as usize][delta_site.rem_euclid(l) as usize])
    }

    /// The memory kernel of the field SSE between sites m (at t) and m' (at s).
    pub fn memory_kernel(&self, delta_t: f64, site: usize, source_site: usize) -> C64 {
        let dx = self.lattice.position(site) - self.lattice.position(source_site);
        self.w(delta_t, dx)
    }

    pub fn site_kernel(&self) -> CovarianceKernel {
        self.lattice.site_kernel(&self.modes)
    }
}

pub(crate) fn mode_sum(lattice: &LatticeSpec, modes: &[LatticeMode], delta_t: f64, delta_x: f64) -> C64 {
    modes
        .iter()
        .map(|m| C64::from_polar(m.weight(lattice), m.k * delta_x - m.omega * delta_t))
        .sum()
}

pub fn vacuum_correlation(lattice: &LatticeSpec, coupling_cutoff: usize, grid: &TimeGrid) -> Result<VacuumCorrelation> {
    grid.validate()?;
    let modes = lattice.retained_modes(coupling_cutoff)?;
    let n = grid.steps as i64;
    let table = if n == 0 {
        Vec::new()
    } else {
        (-(n - 1)..=(n - 1))
            .map(|lag| {
                (0..lattice.sites)
                    .map(|dm| mode_sum(lattice, &modes, lag as f64 * grid.dt, lattice.position(dm)))
                    .collect()
            })
            .collect()
    };
    Ok(VacuumCorrelation { lattice: *lattice, modes, grid: *grid, table })
}
