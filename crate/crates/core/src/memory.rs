//! Linear SSE with colored noise and a memory term:
//! dψ/dt = −iHψ − i q z(t) ψ − q ∫₀ᵗ α(t−s) Ô(t,s) ds ψ,
//! with M[z*(t) z(s)] = α(t−s).
//!
//! The functional derivative δψ(t)/δz(s) is replaced by −i Ô(t,s) ψ(t):
//! Ô = q for commuting H and q (exact), or the free-evolved
//! Ô = e^{−iH(t−s)} q e^{iH(t−s)} (first order in the coupling). The sign of
//! the memory term is the one that reduces to −(γ/2) q² for α = γδ.

use serde::{Deserialize, Serialize};

use crate::engine::{History, KernelChannel, MemoryEngine};
use crate::error::{Error, Result};
use crate::hilbert::{c64, check_dim, expm, CMatrix, CVector, OperatorMatrix, StateVector, C64};
use crate::noise::{ColoredSampler, CovarianceKernel, NoisePath, TimeGrid};
use crate::trajectory::Trajectory;

/// Closure for the functional derivative in the memory term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Closure {
    /// Ô(t,s) = q; exact when [H, q] = 0.
    ExactDephasing,
    /// Ô(t,s) = e^{−iH(t−s)} q e^{iH(t−s)}.
    WeakCoupling,
}

/// Relative tolerance of the commutator test for exact dephasing.
pub const COMMUTATOR_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct MemoryModel {
    pub h: OperatorMatrix,
    pub q: OperatorMatrix,
    pub kernel: CovarianceKernel,
    pub closure: Closure,
}

impl MemoryModel {
    pub fn new(h: OperatorMatrix, q: OperatorMatrix, kernel: CovarianceKernel, closure: Closure) -> Result<Self> {
        let m = Self { h, q, kernel, closure };
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
        self.kernel.validate()?;
        if self.closure == Closure::ExactDephasing {
            let norm = self.h.commutator_norm(&self.q)?;
            let scale = self.h.frobenius_norm() * self.q.frobenius_norm();
            if norm > COMMUTATOR_TOLERANCE * scale {
                return Err(Error::NonCommuting { norm });
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.h.dim()
    }

    pub(crate) fn engine(&self, dt: f64) -> Result<MemoryEngine> {
        self.validate()?;
        let q = self.q.matrix();
        let (dissipator, channels) = match self.kernel.terms()? {
            None => {
                let gamma = self.kernel.markov_rate()?;
                ((q * q) * c64(0.5 * gamma, 0.0), Vec::new())
            }
            Some(terms) => {
                let d = self.dim();
                let channels = terms
                    .into_iter()
                    .filter(|t| t.weight != C64::default())
                    .map(|t| KernelChannel { weight: t.weight, rate: t.rate, left: q.clone(), right: q.clone() })
                    .collect();
                (CMatrix::zeros(d, d), channels)
            }
        };
        MemoryEngine::new(self.h.matrix(), &dissipator, vec![q.clone()], channels, self.closure, dt)
    }
}

/// Ô(t,s) of the chosen closure.
pub fn closure_operator(model: &MemoryModel, t: f64, s: f64) -> Result<OperatorMatrix> {
    model.validate()?;
    if !(0.0 <= s && s <= t) {
        return Err(Error::InvalidInput(format!("closure needs 0 <= s <= t, got s={s}, t={t}")));
    }
    match model.closure {
        Closure::ExactDephasing => Ok(model.q.clone()),
        Closure::WeakCoupling => {
            if t == s {
                return Ok(model.q.clone());
            }
            let u = expm(&(model.h.matrix() * c64(0.0, -(t - s))))?;
            let o = &u * model.q.matrix() * u.adjoint();
            OperatorMatrix::new((&o + o.adjoint()) * c64(0.5, 0.0))?.into_hermitian("closure operator")
        }
    }
}

/// State of a memory trajectory: ψ and the kernel history accumulated so far.
#[derive(Clone, Debug)]
pub struct MemoryState {
    pub psi: StateVector,
    pub step: usize,
    engine: MemoryEngine,
    history: History,
}

impl MemoryState {
    pub fn new(model: &MemoryModel, psi0: StateVector, dt: f64) -> Result<Self> {
        check_dim(model.dim(), psi0.dim())?;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidInput(format!("time step must be positive, got {dt}")));
        }
        let engine = model.engine(dt)?;
        let history = engine.initial_history();
        Ok(Self { psi: psi0, step: 0, engine, history })
    }

    /// Ā = dt Σ_{l=1}^{k} α(l·dt): the past-time part of ∫₀ᵗ α, zero at the start.
    /// Only tracked by the exact-dephasing closure.
    pub fn accumulated_kernel_integral(&self) -> Option<C64> {
        self.engine.history_scalar(&self.history)
    }

    /// Q̄ = dt Σ_{l=1}^{k} α(l·dt) e^{−iH l dt} q e^{iH l dt}: the past-time part
    /// of the smeared operator, zero at the start. Only tracked by the
    /// weak-coupling closure.
    pub fn smeared_operator(&self) -> Option<CMatrix> {
        self.engine.history_operator(&self.history)
    }

    /// The operator M̄ multiplying ψ in the memory term during the next step
    /// (with the white-noise dissipator excluded).
    pub fn memory_operator(&self) -> CMatrix {
        self.engine.memory_operator(&self.history)
    }

    /// Advances by one step with noise value `z`.
    pub fn advance(&mut self, z: C64) -> Result<()> {
        let next = self.engine.step(self.psi.amplitudes(), &mut self.history, &[z])?;
        crate::trajectory::check_state(self.step + 1, &next)?;
        self.psi = StateVector::from_vector_unchecked(next);
        self.step += 1;
        Ok(())
    }
}

/// One step from `state` with noise value `z`; `dt` must match the state's step.
pub fn step(state: &MemoryState, z: C64, dt: f64) -> Result<MemoryState> {
    if (dt - state.engine.dt()).abs() > 1e-15 * dt.abs() {
        return Err(Error::InvalidInput(format!(
            "step size {dt} differs from the state's step {}",
            state.engine.dt()
        )));
    }
    let mut next = state.clone();
    next.advance(z)?;
    Ok(next)
}

pub fn run_trajectory(model: &MemoryModel, grid: &TimeGrid, psi0: &StateVector, seed: u64) -> Result<Trajectory> {
    let sampler = ColoredSampler::new(&model.kernel, grid)?;
    run_trajectory_with_path(model, psi0, &sampler.sample(seed))
}

pub fn run_trajectory_with_path(model: &MemoryModel, psi0: &StateVector, path: &NoisePath) -> Result<Trajectory> {
    let engine = model.engine(path.grid.dt)?;
    integrate(&engine, psi0, path, 1)
}

pub(crate) fn integrate(engine: &MemoryEngine, psi0: &StateVector, path: &NoisePath, stride: usize) -> Result<Trajectory> {
    let mut traj = Trajectory::start(path.grid, stride, psi0);
    let mut history = engine.initial_history();
    let mut psi: CVector = psi0.amplitudes().clone();
    for (k, &z) in path.values.iter().enumerate() {
        psi = engine.step(&psi, &mut history, &[z])?;
        traj.offer(k + 1, &psi)?;
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{fidelity, matrix_exponential_apply};
    use crate::markov::{self, MarkovModel};
    use crate::noise::ExpTerm;

    fn dephasing(kernel: CovarianceKernel) -> MemoryModel {
        MemoryModel::new(OperatorMatrix::zeros(2), OperatorMatrix::sigma_z(), kernel, Closure::ExactDephasing).unwrap()
    }

    fn plus() -> StateVector {
        StateVector::from_real(&[std::f64::consts::FRAC_1_SQRT_2; 2]).unwrap()
    }

    #[test]
    fn exact_dephasing_rejects_non_commuting_model() {
        let r = MemoryModel::new(
            OperatorMatrix::sigma_x(),
            OperatorMatrix::sigma_z(),
            CovarianceKernel::exponential(1.0, 2.0),
            Closure::ExactDephasing,
        );
        assert!(matches!(r, Err(Error::NonCommuting { .. })));
    }

    #[test]
    fn closure_operator_examples() {
        let h = OperatorMatrix::diagonal(&[0.5, -0.5]);
        let m = MemoryModel::new(h, OperatorMatrix::sigma_z(), CovarianceKernel::exponential(1.0, 1.0), Closure::ExactDephasing)
            .unwrap();
        assert_eq!(closure_operator(&m, 2.0, 0.5).unwrap(), OperatorMatrix::sigma_z());

        let free = MemoryModel::new(
            OperatorMatrix::zeros(2),
            OperatorMatrix::sigma_x(),
            CovarianceKernel::exponential(1.0, 1.0),
            Closure::WeakCoupling,
        )
        .unwrap();
        let o = closure_operator(&free, 1.5, 0.2).unwrap();
        assert!((o.matrix() - OperatorMatrix::sigma_x().matrix()).norm() < 1e-15);

        let weak = MemoryModel::new(
            OperatorMatrix::sigma_z(),
            OperatorMatrix::sigma_x(),
            CovarianceKernel::exponential(1.0, 1.0),
            Closure::WeakCoupling,
        )
        .unwrap();
        assert_eq!(closure_operator(&weak, 0.7, 0.7).unwrap(), OperatorMatrix::sigma_x());
        // e^{−iσ_z τ} σ_x e^{iσ_z τ} = cos(2τ) σ_x + sin(2τ) σ_y
        let tau: f64 = 0.4;
        let o = closure_operator(&weak, 1.0, 1.0 - tau).unwrap();
        let want = OperatorMatrix::sigma_x().matrix() * c64((2.0 * tau).cos(), 0.0)
            + OperatorMatrix::sigma_y().matrix() * c64((2.0 * tau).sin(), 0.0);
        assert!((o.matrix() - want).norm() < 1e-14);
        assert!(closure_operator(&weak, 0.5, 0.7).is_err());
    }

    #[test]
    fn zero_kernel_is_schrodinger_evolution() {
        let h = OperatorMatrix::from_real_rows(&[&[0.2, 0.9], &[0.9, -0.2]]).unwrap();
        let zero = CovarianceKernel::ExponentialSum { terms: vec![ExpTerm { weight: c64(0.0, 0.0), rate: c64(1.0, 0.0) }] };
        let m = MemoryModel::new(h.clone(), OperatorMatrix::sigma_z(), zero, Closure::WeakCoupling).unwrap();
        let grid = TimeGrid::new(0.0, 0.01, 100).unwrap();
        let traj = run_trajectory(&m, &grid, &StateVector::basis(2, 0), 9).unwrap();
        let exact = matrix_exponential_apply(&h, c64(0.0, -1.0), &StateVector::basis(2, 0)).unwrap();
        assert!(fidelity(traj.final_state(), &exact).unwrap() > 1.0 - 1e-12);
    }

    #[test]
    fn white_kernel_reproduces_markov_trajectories() {
        let grid = TimeGrid::new(0.0, 0.01, 200).unwrap();
        let mem = dephasing(CovarianceKernel::white(1.0));
        let mk = MarkovModel::new(OperatorMatrix::zeros(2), OperatorMatrix::sigma_z(), 1.0).unwrap();
        for seed in 0..5 {
            let a = run_trajectory(&mem, &grid, &plus(), seed).unwrap();
            let b = markov::run_trajectory(&mk, &grid, &plus(), seed).unwrap();
            let d = (a.final_state().amplitudes() - b.final_state().amplitudes()).norm();
            assert!(d < 1e-10 * b.final_state().norm(), "seed {seed}: {d}");
        }
    }

    #[test]
    fn history_accumulators_start_at_zero_and_track_kernel_sums() {
        let kernel = CovarianceKernel::ExponentialSum {
            terms: vec![
                ExpTerm { weight: c64(0.6, 0.1), rate: c64(1.5, 2.0) },
                ExpTerm { weight: c64(0.4, -0.1), rate: c64(0.3, 0.0) },
            ],
        };
        let dt = 0.05;
        let mut s = MemoryState::new(&dephasing(kernel.clone()), plus(), dt).unwrap();
        assert_eq!(s.accumulated_kernel_integral(), Some(C64::default()));
        assert!(s.smeared_operator().is_none());
        for _ in 0..7 {
            s.advance(c64(0.1, 0.0)).unwrap();
        }
        let direct: C64 = (1..=7).map(|l| kernel.alpha(l as f64 * dt).unwrap().unwrap() * dt).sum();
        assert!((s.accumulated_kernel_integral().unwrap() - direct).norm() < 1e-14);

        let h = OperatorMatrix::from_real_rows(&[&[0.3, 0.5], &[0.5, -0.1]]).unwrap();
        let weak = MemoryModel::new(h, OperatorMatrix::sigma_z(), kernel.clone(), Closure::WeakCoupling).unwrap();
        let mut w = MemoryState::new(&weak, plus(), dt).unwrap();
        assert_eq!(w.smeared_operator().unwrap(), CMatrix::zeros(2, 2));
        for _ in 0..7 {
            w.advance(c64(0.0, 0.2)).unwrap();
        }
        let mut direct = CMatrix::zeros(2, 2);
        for l in 1..=7 {
            let tau = l as f64 * dt;
            let o = closure_operator(&weak, tau, 0.0).unwrap();
            direct += o.matrix() * (kernel.alpha(tau).unwrap().unwrap() * dt);
        }
        assert!((w.smeared_operator().unwrap() - direct).norm() < 1e-13);
    }

    #[test]
    fn future_noise_does_not_affect_the_past() {
        let grid = TimeGrid::new(0.0, 0.02, 60).unwrap();
        let h = OperatorMatrix::from_real_rows(&[&[0.3, 0.5], &[0.5, -0.1]]).unwrap();
        let m = MemoryModel::new(h, OperatorMatrix::sigma_z(), CovarianceKernel::exponential(1.0, 3.0), Closure::WeakCoupling)
            .unwrap();
        let path = ColoredSampler::new(&m.kernel, &grid).unwrap().sample(4);
        let base = run_trajectory_with_path(&m, &plus(), &path).unwrap();
        let mut tail = path.clone();
        for z in &mut tail.values[30..] {
            *z += c64(0.7, -1.1);
        }
        let moved = run_trajectory_with_path(&m, &plus(), &tail).unwrap();
        assert_eq!(base.states[..=30], moved.states[..=30]);
        assert_ne!(base.states[31], moved.states[31]);
    }

    #[test]
    fn step_function_matches_state_advance() {
        let m = dephasing(CovarianceKernel::exponential(1.0, 2.0));
        let s0 = MemoryState::new(&m, plus(), 0.01).unwrap();
        let s1 = step(&s0, c64(0.3, 0.1), 0.01).unwrap();
        let mut s = s0.clone();
        s.advance(c64(0.3, 0.1)).unwrap();
        assert_eq!(s1.psi, s.psi);
        assert!(step(&s0, c64(0.3, 0.1), 0.02).is_err());
    }
}
