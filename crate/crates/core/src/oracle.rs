//! Brute-force reference solutions.
//!
//! [`exact_reduced_state`] evolves system ⊗ truncated bosonic bath from
//! ψ₀ ⊗ |vac⟩ with
//! H_tot = H ⊗ 1 + Σ_j ω_j n_j + Σ_i q_i ⊗ Σ_j (g_ji a_j + g_ji* a_j†)
//! and traces out the bath. Modes with a damping rate Γ_j > 0 are treated
//! as pseudomodes: the joint density matrix follows a Lindblad equation with
//! jump operator √Γ_j a_j, which makes the mode's correlation decay as
//! e^{−(iω_j + Γ_j/2)τ}. The induced bath correlation is
//! α_ik(τ) = ⟨B_i(τ)B_k(0)⟩ = Σ_j g_ji g_jk* e^{−(iω_j + Γ_j/2)τ}.
//!
//! [`lindblad_solve`] integrates dρ/dt = −i[H,ρ] + γ(qρq − ½{q²,ρ}) with an
//! adaptive RK4.

use nalgebra::SymmetricEigen;

use crate::error::{invalid, Error, Result};
use crate::hilbert::{
    c64, check_dim, krylov_apply_operator, partial_trace, partial_trace_pure, CMatrix, CVector, DensityMatrix,
    ExpmOptions, OperatorMatrix, StateVector, C64, DEFAULT_DIM_CAP,
};
use crate::noise::{CovarianceKernel, ExpTerm, TimeGrid};

/// Top-Fock-level population above which a truncation is rejected.
pub const LEAKAGE_THRESHOLD: f64 = 1e-6;

/// Absolute per-step error target of the adaptive RK4.
pub const LINDBLAD_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct SystemSpec {
    pub hamiltonian: OperatorMatrix,
    /// Operators q_i that couple to the bath.
    pub couplings: Vec<OperatorMatrix>,
}

impl SystemSpec {
    pub fn new(hamiltonian: OperatorMatrix, couplings: Vec<OperatorMatrix>) -> Result<Self> {
        let s = Self { hamiltonian, couplings };
        s.validate()?;
        Ok(s)
    }

    pub fn single(hamiltonian: OperatorMatrix, q: OperatorMatrix) -> Result<Self> {
        Self::new(hamiltonian, vec![q])
    }

    pub fn dim(&self) -> usize {
        self.hamiltonian.dim()
    }

    pub fn validate(&self) -> Result<()> {
        if !self.hamiltonian.is_hermitian() {
            return Err(Error::NotHermitian { name: "H".into(), deviation: self.hamiltonian.hermitian_deviation() });
        }
        for (i, q) in self.couplings.iter().enumerate() {
            check_dim(self.dim(), q.dim())?;
            if !q.is_hermitian() {
                return Err(Error::NotHermitian { name: format!("coupling {i}"), deviation: q.hermitian_deviation() });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BathMode {
    pub omega: f64,
    /// g_ji for each system coupling operator q_i.
    pub couplings: Vec<C64>,
    /// Pseudomode damping rate Γ ≥ 0.
    pub damping: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BathSpec {
    pub modes: Vec<BathMode>,
    pub fock_cutoff: usize,
    pub dim_cap: usize,
}

impl BathSpec {
    pub fn new(modes: Vec<BathMode>, fock_cutoff: usize) -> Self {
        Self { modes, fock_cutoff, dim_cap: DEFAULT_DIM_CAP }
    }

    /// Single damped mode whose correlation is (γκ/2) e^{−κ|τ|}, i.e. the
    /// exponential kernel with Markov rate γ.
    pub fn exponential(gamma: f64, kappa: f64, fock_cutoff: usize) -> Self {
        let g = (gamma * kappa / 2.0).sqrt();
        Self::new(vec![BathMode { omega: 0.0, couplings: vec![c64(g, 0.0)], damping: 2.0 * kappa }], fock_cutoff)
    }

    pub fn bath_dim(&self) -> Result<usize> {
        let mut d: usize = 1;
        for _ in &self.modes {
            d = d.checked_mul(self.fock_cutoff).ok_or(Error::DimensionCap { dim: usize::MAX, cap: self.dim_cap })?;
        }
        Ok(d)
    }

    pub fn is_damped(&self) -> bool {
        self.modes.iter().any(|m| m.damping > 0.0)
    }

    /// Exponential-sum terms of α_ik(τ) for τ ≥ 0.
    pub fn kernel_terms(&self, i: usize, k: usize) -> Vec<ExpTerm> {
        self.modes
            .iter()
            .map(|m| ExpTerm {
                weight: m.couplings[i] * m.couplings[k].conj(),
                rate: c64(m.damping / 2.0, m.omega),
            })
            .collect()
    }

    /// α_ii as a covariance kernel.
    pub fn kernel(&self, i: usize) -> CovarianceKernel {
        CovarianceKernel::ExponentialSum { terms: self.kernel_terms(i, i) }
    }

    fn validate(&self, system: &SystemSpec) -> Result<()> {
        if self.fock_cutoff < 2 {
            return invalid(format!("fock cutoff must be >= 2, got {}", self.fock_cutoff));
        }
        for (j, m) in self.modes.iter().enumerate() {
            if m.couplings.len() != system.couplings.len() {
                return invalid(format!(
                    "bath mode {j} has {} couplings but the system has {} coupling operators",
                    m.couplings.len(),
                    system.couplings.len()
                ));
            }
            if !(m.omega.is_finite() && m.damping >= 0.0 && m.damping.is_finite()) {
                return invalid(format!("bath mode {j} has invalid frequency or damping"));
            }
        }
        let dim = system.dim().saturating_mul(self.bath_dim()?);
        if dim > self.dim_cap {
            return Err(Error::DimensionCap { dim, cap: self.dim_cap });
        }
        Ok(())
    }
}

/// Row-compressed sparse complex matrix.
#[derive(Clone, Debug)]
struct Sparse {
    n: usize,
    rows: Vec<Vec<(usize, C64)>>,
}

impl Sparse {
    fn new(n: usize) -> Self {
        Self { n, rows: vec![Vec::new(); n] }
    }

    fn push(&mut self, i: usize, j: usize, v: C64) {
        if v != C64::default() {
            self.rows[i].push((j, v));
        }
    }

    fn finish(mut self) -> Self {
        for row in &mut self.rows {
            row.sort_by_key(|e| e.0);
            let mut merged: Vec<(usize, C64)> = Vec::with_capacity(row.len());
            for &(j, v) in row.iter() {
                match merged.last_mut() {
                    Some(last) if last.0 == j => last.1 += v,
                    _ => merged.push((j, v)),
                }
            }
            *row = merged;
        }
        self
    }

    fn matvec(&self, x: &CVector) -> CVector {
        CVector::from_iterator(self.n, self.rows.iter().map(|r| r.iter().map(|&(j, v)| v * x[j]).sum::<C64>()))
    }

    /// self · m
    fn mul_dense(&self, m: &CMatrix) -> CMatrix {
        let mut out = CMatrix::zeros(self.n, m.ncols());
        for (i, row) in self.rows.iter().enumerate() {
            for &(k, v) in row {
                for j in 0..m.ncols() {
                    out[(i, j)] += v * m[(k, j)];
                }
            }
        }
        out
    }

    fn norm1(&self) -> f64 {
        let mut col = vec![0.0; self.n];
        for row in &self.rows {
            for &(j, v) in row {
                col[j] += v.norm();
            }
        }
        col.into_iter().fold(0.0, f64::max)
    }
}

struct JointModel {
    sys_dim: usize,
    bath_dim: usize,
    hamiltonian: Sparse,
    /// (√Γ_j a_j, Γ_j n_j) for damped modes.
    jumps: Vec<(Sparse, Vec<f64>)>,
}

fn build_joint(system: &SystemSpec, bath: &BathSpec) -> Result<JointModel> {
    system.validate()?;
    bath.validate(system)?;
    let d = system.dim();
    let c = bath.fock_cutoff;
    let m = bath.modes.len();
    let b_dim = bath.bath_dim()?;
    let n = d * b_dim;
    let strides: Vec<usize> = (0..m).map(|j| c.pow((m - 1 - j) as u32)).collect();
    let occupation = |b: usize, j: usize| (b / strides[j]) % c;

    let mut h = Sparse::new(n);
    let hs = system.hamiltonian.matrix();
    for s in 0..d {
        for t in 0..d {
            let v = hs[(s, t)];
            if v != C64::default() {
                for b in 0..b_dim {
                    h.push(s * b_dim + b, t * b_dim + b, v);
                }
            }
        }
    }
    for b in 0..b_dim {
        let e: f64 = (0..m).map(|j| bath.modes[j].omega * occupation(b, j) as f64).sum();
        if e != 0.0 {
            for s in 0..d {
                h.push(s * b_dim + b, s * b_dim + b, c64(e, 0.0));
            }
        }
    }
    for (i, q) in system.couplings.iter().enumerate() {
        let q = q.matrix();
        for s in 0..d {
            for t in 0..d {
                let qv = q[(s, t)];
                if qv == C64::default() {
                    continue;
                }
                for (j, mode) in bath.modes.iter().enumerate() {
                    let g = mode.couplings[i];
                    if g == C64::default() {
                        continue;
                    }
                    for b in 0..b_dim {
                        let nj = occupation(b, j);
                        if nj == 0 {
                            continue;
                        }
                        let amp = (nj as f64).sqrt();
                        let lower = b - strides[j];
                        // q ⊗ g a_j and q ⊗ g* a_j†
                        h.push(s * b_dim + lower, t * b_dim + b, qv * g * amp);
                        h.push(s * b_dim + b, t * b_dim + lower, qv * g.conj() * amp);
                    }
                }
            }
        }
    }
    let mut jumps = Vec::new();
    for (j, mode) in bath.modes.iter().enumerate() {
        if mode.damping == 0.0 {
            continue;
        }
        let mut a = Sparse::new(n);
        let mut number = vec![0.0; n];
        let r = mode.damping.sqrt();
        for s in 0..d {
            for b in 0..b_dim {
                let nj = occupation(b, j);
                number[s * b_dim + b] = mode.damping * nj as f64;
                if nj > 0 {
                    a.push(s * b_dim + b - strides[j], s * b_dim + b, c64(r * (nj as f64).sqrt(), 0.0));
                }
            }
        }
        jumps.push((a.finish(), number));
    }
    Ok(JointModel { sys_dim: d, bath_dim: b_dim, hamiltonian: h.finish(), jumps })
}

fn joint_initial(psi0: &StateVector, bath_dim: usize) -> CVector {
    let d = psi0.dim();
    let mut v = CVector::zeros(d * bath_dim);
    for s in 0..d {
        v[s * bath_dim] = psi0.amplitudes()[s];
    }
    v
}

fn check_leakage(populations: impl Fn(usize) -> f64, bath: &BathSpec, b_dim: usize, sys_dim: usize) -> Result<()> {
    let m = bath.modes.len();
    let c = bath.fock_cutoff;
    for j in 0..m {
        let stride = c.pow((m - 1 - j) as u32);
        let mut top = 0.0;
        for s in 0..sys_dim {
            for b in 0..b_dim {
                if (b / stride) % c == c - 1 {
                    top += populations(s * b_dim + b);
                }
            }
        }
        if top > LEAKAGE_THRESHOLD {
            return Err(Error::FockLeakage { mode: j, population: top });
        }
    }
    Ok(())
}

/// Reduced system state at time `t` (see module docs).
pub fn exact_reduced_state(system: &SystemSpec, bath: &BathSpec, psi0: &StateVector, t: f64) -> Result<DensityMatrix> {
    Ok(exact_reduced_states(system, bath, psi0, &[t])?.pop().unwrap())
}

/// Reduced system states at increasing times `times` (all ≥ 0).
pub fn exact_reduced_states(
    system: &SystemSpec,
    bath: &BathSpec,
    psi0: &StateVector,
    times: &[f64],
) -> Result<Vec<DensityMatrix>> {
    check_dim(system.dim(), psi0.dim())?;
    if times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) || times.windows(2).any(|w| w[1] < w[0]) {
        return invalid("oracle times must be finite, non-negative and non-decreasing");
    }
    let joint = build_joint(system, bath)?;
    let psi = joint_initial(psi0, joint.bath_dim);
    if joint.jumps.is_empty() {
        evolve_pure(&joint, bath, psi, times)
    } else {
        let rho0 = &psi * psi.adjoint();
        evolve_mixed(&joint, bath, rho0, times)
    }
}

fn evolve_pure(joint: &JointModel, bath: &BathSpec, mut psi: CVector, times: &[f64]) -> Result<Vec<DensityMatrix>> {
    let opts = ExpmOptions::default();
    let anorm = joint.hamiltonian.norm1();
    let mut now = 0.0;
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        let dt = t - now;
        if dt > 0.0 {
            psi = krylov_apply_operator(
                |x| joint.hamiltonian.matvec(x) * c64(0.0, -dt),
                anorm * dt,
                &psi,
                &opts,
            )?;
            now = t;
        }
        check_leakage(|i| psi[i].norm_sqr(), bath, joint.bath_dim, joint.sys_dim)?;
        out.push(partial_trace_pure(&psi, joint.sys_dim)?);
    }
    Ok(out)
}

fn evolve_mixed(joint: &JointModel, bath: &BathSpec, rho0: CMatrix, times: &[f64]) -> Result<Vec<DensityMatrix>> {
    let n = joint.sys_dim * joint.bath_dim;
    let total_damping: Vec<f64> = (0..n).map(|i| joint.jumps.iter().map(|(_, num)| num[i]).sum()).collect();
    let generator = |rho: &CMatrix| -> CMatrix {
        // −i(Hρ − ρH) for Hermitian H and ρ: ρH = (Hρ)†.
        let h_rho = joint.hamiltonian.mul_dense(rho);
        let mut out = (&h_rho - h_rho.adjoint()) * c64(0.0, -1.0);
        for (a, _) in &joint.jumps {
            let a_rho = a.mul_dense(rho);
            let a_rho_a = a.mul_dense(&a_rho.adjoint());
            out += a_rho_a;
        }
        for i in 0..n {
            for j in 0..n {
                out[(i, j)] -= rho[(i, j)] * (0.5 * (total_damping[i] + total_damping[j]));
            }
        }
        out
    };
    let scale = joint.hamiltonian.norm1() + total_damping.iter().copied().fold(0.0, f64::max);
    let states = rk4_adaptive(generator, rho0, times, scale, f64::INFINITY)?;
    states
        .into_iter()
        .map(|rho| {
            check_leakage(|i| rho[(i, i)].re, bath, joint.bath_dim, joint.sys_dim)?;
            partial_trace(&rho, joint.sys_dim)
        })
        .collect()
}

/// Adaptive RK4 with step doubling, absolute error target LINDBLAD_TOLERANCE
/// per step (max entry), returning the state at each requested time.
fn rk4_adaptive<F>(f: F, y0: CMatrix, times: &[f64], scale: f64, max_step: f64) -> Result<Vec<CMatrix>>
where
    F: Fn(&CMatrix) -> CMatrix,
{
    let rk4 = |y: &CMatrix, h: f64| -> CMatrix {
        let k1 = f(y);
        let k2 = f(&(y + &k1 * c64(h / 2.0, 0.0)));
        let k3 = f(&(y + &k2 * c64(h / 2.0, 0.0)));
        let k4 = f(&(y + &k3 * c64(h, 0.0)));
        y + (k1 + k2 * c64(2.0, 0.0) + k3 * c64(2.0, 0.0) + k4) * c64(h / 6.0, 0.0)
    };
    let mut y = y0;
    let mut now = 0.0;
    let mut h = (0.1 / scale.max(1e-12)).min(max_step);
    let mut out = Vec::with_capacity(times.len());
    let mut steps = 0usize;
    for &t in times {
        while now < t {
            steps += 1;
            if steps > 50_000_000 {
                return Err(Error::NonConvergence("RK4 integrator exceeded its step budget".into()));
            }
            let last = t - now <= h;
            let hs = if last { t - now } else { h };
            let full = rk4(&y, hs);
            let half = rk4(&rk4(&y, hs / 2.0), hs / 2.0);
            let err = (&half - &full).iter().map(|z| z.norm()).fold(0.0, f64::max) / 15.0;
            if err <= LINDBLAD_TOLERANCE || hs < 1e-12 {
                // Richardson-corrected accepted step.
                y = &half + (&half - &full) * c64(1.0 / 15.0, 0.0);
                now = if last { t } else { now + hs };
                if err < LINDBLAD_TOLERANCE / 64.0 {
                    h = (hs * 2.0).min(max_step);
                } else if !last {
                    h = hs;
                }
            } else {
                let factor = (LINDBLAD_TOLERANCE / err).powf(0.2).clamp(0.1, 0.9);
                h = hs * factor;
            }
            if !y.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
                return Err(Error::NonConvergence("RK4 produced non-finite values".into()));
            }
        }
        out.push(y.clone());
    }
    Ok(out)
}

/// Solutions of dρ/dt = −i[H,ρ] + γ(qρq − ½{q²,ρ}) at every grid point
/// (steps + 1 states, starting with ρ₀).
pub fn lindblad_solve(
    h: &OperatorMatrix,
    q: &OperatorMatrix,
    gamma: f64,
    rho0: &DensityMatrix,
    grid: &TimeGrid,
) -> Result<Vec<DensityMatrix>> {
    let times: Vec<f64> = (0..=grid.steps).map(|k| k as f64 * grid.dt).collect();
    lindblad_at(h, q, gamma, rho0, &times)
}

/// Lindblad solution at arbitrary non-decreasing elapsed times.
pub fn lindblad_at(
    h: &OperatorMatrix,
    q: &OperatorMatrix,
    gamma: f64,
    rho0: &DensityMatrix,
    times: &[f64],
) -> Result<Vec<DensityMatrix>> {
    check_dim(h.dim(), q.dim())?;
    check_dim(h.dim(), rho0.dim())?;
    for (name, op) in [("H", h), ("q", q)] {
        if !op.is_hermitian() {
            return Err(Error::NotHermitian { name: name.into(), deviation: op.hermitian_deviation() });
        }
    }
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return invalid(format!("gamma must be >= 0, got {gamma}"));
    }
    if times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) || times.windows(2).any(|w| w[1] < w[0]) {
        return invalid("times must be finite, non-negative and non-decreasing");
    }
    let hm = h.matrix();
    let qm = q.matrix();
    let q2 = qm * qm;
    let f = |rho: &CMatrix| -> CMatrix {
        let h_rho = hm * rho;
        let comm = (&h_rho - h_rho.adjoint()) * c64(0.0, -1.0);
        let q2_rho = &q2 * rho;
        let anti = &q2_rho + q2_rho.adjoint();
        comm + (qm * rho * qm - anti * c64(0.5, 0.0)) * c64(gamma, 0.0)
    };
    let scale = crate::hilbert::max_abs(hm) * h.dim() as f64 + gamma * crate::hilbert::max_abs(&q2) * h.dim() as f64;
    let states = rk4_adaptive(f, rho0.matrix().clone(), times, scale, f64::INFINITY)?;
    Ok(states.into_iter().map(DensityMatrix::from_matrix_hermitized).collect())
}

/// ½‖a − b‖₁.
pub fn trace_distance(a: &DensityMatrix, b: &DensityMatrix) -> Result<f64> {
    check_dim(a.dim(), b.dim())?;
    Ok(trace_distance_matrix(&(a.matrix() - b.matrix())))
}

/// ½ Σ|λ_i| of a Hermitian difference matrix.
pub fn trace_distance_matrix(diff: &CMatrix) -> f64 {
    let sym = (diff + diff.adjoint()) * c64(0.5, 0.0);
    let eig = SymmetricEigen::new(sym);
    0.5 * eig.eigenvalues.iter().map(|l| l.abs()).sum::<f64>()
}
