//! Linear SSE with white noise (Itô):
//! dψ = [−iH dt − i q (z dt) − (γ/2) q² dt] ψ, M[(z dt)*(z dt)] = γ dt.
//!
//! One step applies the exact deterministic propagator
//! P = exp(dt(−iH − (γ/2)q²)) and then the noise kick exp(−i q z dt),
//! evaluated in the eigenbasis of q. The exponential kick agrees with the
//! Euler–Maruyama kick (1 − i q z dt) to the order of the scheme and keeps
//! ‖ψ‖² an exact martingale when [H, q] = 0.

use crate::error::{Error, Result};
use crate::hilbert::{c64, check_dim, expm, CMatrix, CVector, OperatorMatrix, StateVector, C64};
use crate::noise::{sample_white, NoisePath, TimeGrid};
use crate::trajectory::Trajectory;

#[derive(Clone, Debug, PartialEq)]
pub struct MarkovModel {
    pub h: OperatorMatrix,
    pub q: OperatorMatrix,
    pub gamma: f64,
}

impl MarkovModel {
    pub fn new(h: OperatorMatrix, q: OperatorMatrix, gamma: f64) -> Result<Self> {
        let m = Self { h, q, gamma };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        check_dim(self.h.dim(), self.q.dim())?;
        for (name, op) in [("H", &self.h), ("q", &self.q)] {
            if !op.is_hermitian() {
                return Err(Error::NotHermitian { name: name.into(), deviation: op.hermitian_deviation() });
            }
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidInput(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.h.dim()
    }
}

/// Precomputed propagators for a fixed step size.
#[derive(Clone, Debug)]
pub struct MarkovStepper {
    dt: f64,
    propagator: CMatrix,
    q_eigenvalues: Vec<f64>,
    /// Eigenvectors of q as columns; None when q is already diagonal.
    q_basis: Option<CMatrix>,
}

impl MarkovStepper {
    pub fn new(model: &MarkovModel, dt: f64) -> Result<Self> {
        model.validate()?;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidInput(format!("time step must be positive, got {dt}")));
        }
        let q = model.q.matrix();
        let generator = model.h.matrix() * c64(0.0, -dt) - (q * q) * c64(0.5 * model.gamma * dt, 0.0);
        let propagator = expm(&generator)?;
        let diagonal = (0..q.nrows()).all(|i| (0..q.ncols()).all(|j| i == j || q[(i, j)] == C64::default()));
        let (q_eigenvalues, q_basis) = if diagonal {
            (q.diagonal().iter().map(|z| z.re).collect(), None)
        } else {
            let (vals, vecs) = model.q.hermitian_eigen()?;
            (vals, Some(vecs))
        };
        Ok(Self { dt, propagator, q_eigenvalues, q_basis })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn propagator(&self) -> &CMatrix {
        &self.propagator
    }

    /// ψ ← exp(−i q z dt) P ψ.
    pub fn apply(&self, psi: &CVector, z: C64) -> CVector {
        let mut v = &self.propagator * psi;
        if z == C64::default() {
            return v;
        }
        let phase = |lambda: f64| (c64(0.0, -lambda * self.dt) * z).exp();
        match &self.q_basis {
            None => {
                for (vi, &l) in v.iter_mut().zip(&self.q_eigenvalues) {
                    *vi *= phase(l);
                }
                v
            }
            Some(basis) => {
                let mut w = basis.ad_mul(&v);
                for (wi, &l) in w.iter_mut().zip(&self.q_eigenvalues) {
                    *wi *= phase(l);
                }
                basis * w
            }
        }
    }
}

/// One step of the linear SSE with noise value `z` (so z·dt is the increment).
pub fn step(model: &MarkovModel, psi: &StateVector, z: C64, dt: f64) -> Result<StateVector> {
    check_dim(model.dim(), psi.dim())?;
    let stepper = MarkovStepper::new(model, dt)?;
    Ok(StateVector::from_vector_unchecked(stepper.apply(psi.amplitudes(), z)))
}

/// Integrates over `grid` with white noise drawn from `seed`, recording every step.
pub fn run_trajectory(model: &MarkovModel, grid: &TimeGrid, psi0: &StateVector, seed: u64) -> Result<Trajectory> {
    run_trajectory_strided(model, grid, psi0, seed, 1)
}

pub fn run_trajectory_strided(
    model: &MarkovModel,
    grid: &TimeGrid,
    psi0: &StateVector,
    seed: u64,
    stride: usize,
) -> Result<Trajectory> {
    let path = sample_white(model.gamma, grid, seed)?;
    let stepper = MarkovStepper::new(model, grid.dt)?;
    integrate(&stepper, psi0, &path, stride)
}

/// Integrates on an explicit noise path.
pub fn run_trajectory_with_path(model: &MarkovModel, psi0: &StateVector, path: &NoisePath) -> Result<Trajectory> {
    let stepper = MarkovStepper::new(model, path.grid.dt)?;
    integrate(&stepper, psi0, path, 1)
}

pub(crate) fn integrate(stepper: &MarkovStepper, psi0: &StateVector, path: &NoisePath, stride: usize) -> Result<Trajectory> {
    check_dim(stepper.propagator.nrows(), psi0.dim())?;
    let mut traj = Trajectory::start(path.grid, stride, psi0);
    let mut psi = psi0.amplitudes().clone();
    for (k, &z) in path.values.iter().enumerate() {
        psi = stepper.apply(&psi, z);
        traj.offer(k + 1, &psi)?;
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{fidelity, matrix_exponential_apply};

    fn dephasing(gamma: f64) -> MarkovModel {
        MarkovModel::new(OperatorMatrix::zeros(2), OperatorMatrix::sigma_z(), gamma).unwrap()
    }

    #[test]
    fn zero_coupling_is_schrodinger_step() {
        let m = MarkovModel::new(OperatorMatrix::sigma_x(), OperatorMatrix::zeros(2), 0.7).unwrap();
        let psi = StateVector::basis(2, 0);
        let out = step(&m, &psi, c64(0.3, -0.2), 0.01).unwrap();
        let want = matrix_exponential_apply(&OperatorMatrix::sigma_x(), c64(0.0, -0.01), &psi).unwrap();
        assert!((out.amplitudes() - want.amplitudes()).norm() < 1e-15);
        assert!((out.norm_sq() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn noiseless_dephasing_step_damps_uniformly() {
        let dt = 1e-3;
        let psi = StateVector::from_real(&[0.6, 0.8]).unwrap();
        let out = step(&dephasing(1.0), &psi, C64::default(), dt).unwrap();
        let f = (-0.5 * dt).exp();
        assert!((out.amplitudes()[0] - c64(0.6 * f, 0.0)).norm() < 1e-15);
        assert!((out.amplitudes()[1] - c64(0.8 * f, 0.0)).norm() < 1e-15);
        // Agrees with the first-order form (1 − γdt/2) to O(dt²).
        assert!((f - (1.0 - 0.5 * dt)).abs() < dt * dt);
    }

    #[test]
    fn non_diagonal_q_kick_matches_dense_exponential() {
        let m = MarkovModel::new(OperatorMatrix::sigma_z(), OperatorMatrix::sigma_x(), 0.5).unwrap();
        let psi = StateVector::from_real(&[0.6, 0.8]).unwrap();
        let (z, dt) = (c64(1.3, -0.4), 0.02);
        let out = step(&m, &psi, z, dt).unwrap();
        let s = MarkovStepper::new(&m, dt).unwrap();
        let kick = expm(&(OperatorMatrix::sigma_x().matrix() * (c64(0.0, -dt) * z))).unwrap();
        let want = kick * (s.propagator() * psi.amplitudes());
        assert!((out.amplitudes() - want).norm() < 1e-14);
    }

    #[test]
    fn unitary_trajectory_matches_exact_propagator() {
        let h = OperatorMatrix::from_real_rows(&[&[0.3, 1.0], &[1.0, -0.3]]).unwrap();
        let m = MarkovModel::new(h.clone(), OperatorMatrix::sigma_z(), 0.0).unwrap();
        let grid = TimeGrid::new(0.0, 0.01, 100).unwrap();
        let psi0 = StateVector::basis(2, 0);
        let traj = run_trajectory(&m, &grid, &psi0, 1).unwrap();
        let exact = matrix_exponential_apply(&h, c64(0.0, -1.0), &psi0).unwrap();
        assert!(fidelity(traj.final_state(), &exact).unwrap() >= 1.0 - 1e-12);
    }

    #[test]
    fn empty_grid_holds_initial_state() {
        let grid = TimeGrid::new(0.0, 0.01, 0).unwrap();
        let psi0 = StateVector::from_real(&[0.6, 0.8]).unwrap();
        let t = run_trajectory(&dephasing(1.0), &grid, &psi0, 3).unwrap();
        assert_eq!(t.states, vec![psi0]);
        assert_eq!(t.norms_sq.len(), 1);
    }

    #[test]
    fn trajectories_are_deterministic() {
        let grid = TimeGrid::new(0.0, 0.01, 50).unwrap();
        let psi0 = StateVector::from_real(&[0.6, 0.8]).unwrap();
        let a = run_trajectory(&dephasing(1.0), &grid, &psi0, 42).unwrap();
        let b = run_trajectory(&dephasing(1.0), &grid, &psi0, 42).unwrap();
        assert_eq!(a, b);
        for (s, n) in a.states.iter().zip(&a.norms_sq) {
            assert!((s.norm_sq() - n).abs() <= 1e-12 * n);
        }
    }

    #[test]
    fn non_hermitian_inputs_are_rejected() {
        let bad = OperatorMatrix::new(CMatrix::from_row_slice(2, 2, &[c64(0.0, 0.0), c64(1.0, 0.0), c64(0.0, 0.0), c64(0.0, 0.0)]))
            .unwrap();
        assert!(matches!(MarkovModel::new(bad, OperatorMatrix::sigma_z(), 1.0), Err(Error::NotHermitian { .. })));
    }
}
