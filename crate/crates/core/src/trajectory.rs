//! Recorded solutions of a linear SSE and their ensemble statistics.
//!
//! States are kept unnormalized. The physical state is ψ/‖ψ‖ and averages of
//! functionals of the physical state are weighted by ‖ψ‖².

use crate::error::{invalid, Error, Result};
use crate::hilbert::{accumulate_outer, CMatrix, CVector, DensityMatrix, StateVector, C64};
use crate::noise::TimeGrid;

/// Grid steps recorded at the given stride: 0, s, 2s, … and always the last.
pub fn recorded_steps(steps: usize, stride: usize) -> Vec<usize> {
    let stride = stride.max(1);
    let mut out: Vec<usize> = (0..=steps).step_by(stride).collect();
    if *out.last().unwrap() != steps {
        out.push(steps);
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub grid: TimeGrid,
    /// Grid step index of each recorded state.
    pub steps: Vec<usize>,
    pub states: Vec<StateVector>,
    pub norms_sq: Vec<f64>,
}

impl Trajectory {
    pub(crate) fn start(grid: TimeGrid, stride: usize, psi0: &StateVector) -> Self {
        let steps = recorded_steps(grid.steps, stride);
        let mut t = Self {
            grid,
            states: Vec::with_capacity(steps.len()),
            norms_sq: Vec::with_capacity(steps.len()),
            steps,
        };
        t.states.push(psi0.clone());
        t.norms_sq.push(psi0.norm_sq());
        t
    }

    /// Records ψ after `step` grid steps if that step is on the schedule.
    pub(crate) fn offer(&mut self, step: usize, psi: &CVector) -> Result<()> {
        check_state(step, psi)?;
        if self.steps.get(self.states.len()) == Some(&step) {
            self.norms_sq.push(psi.norm_squared());
            self.states.push(StateVector::from_vector_unchecked(psi.clone()));
        }
        Ok(())
    }

    pub fn times(&self) -> Vec<f64> {
        self.steps.iter().map(|&k| self.grid.time(k)).collect()
    }

    pub fn final_state(&self) -> &StateVector {
        self.states.last().expect("a trajectory always holds its initial state")
    }

    pub fn state_at_step(&self, step: usize) -> Option<&StateVector> {
        self.steps.binary_search(&step).ok().map(|i| &self.states[i])
    }
}

pub(crate) fn check_state(step: usize, psi: &CVector) -> Result<()> {
    let n = psi.norm_squared();
    if !n.is_finite() {
        return Err(Error::NonConvergence(format!("non-finite state at step {step}")));
    }
    if n == 0.0 {
        return Err(Error::ZeroNorm { step });
    }
    Ok(())
}

/// ψ/‖ψ‖.
pub fn physical_state(psi: &StateVector) -> Result<StateVector> {
    let n = psi.norm();
    if n == 0.0 || !n.is_finite() {
        return Err(Error::ZeroNorm { step: 0 });
    }
    Ok(StateVector::from_vector_unchecked(psi.amplitudes().unscale(n)))
}

/// Mean and standard error of complex samples (standard error 0 for one sample).
pub fn mean_and_stderr(values: &[C64]) -> (C64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<C64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean).norm_sqr()).sum();
    (mean, (ss / (n * (n - 1.0))).sqrt())
}

fn states_at(trajectories: &[Trajectory], step: usize) -> Result<Vec<&StateVector>> {
    if trajectories.is_empty() {
        return invalid("at least one trajectory is required");
    }
    let grid = trajectories[0].grid;
    trajectories
        .iter()
        .map(|t| {
            if t.grid != grid {
                return invalid("trajectories do not share a grid");
            }
            t.state_at_step(step)
                .ok_or_else(|| Error::InvalidInput(format!("step {step} was not recorded")))
        })
        .collect()
}

/// Σ_i ‖ψ_i‖²·f(ψ_i/‖ψ_i‖) / N at grid step `step`, with its standard error.
pub fn reweighted_mean<F>(trajectories: &[Trajectory], f: F, step: usize) -> Result<(C64, f64)>
where
    F: Fn(&StateVector) -> C64,
{
    let states = states_at(trajectories, step)?;
    let mut any_weight = false;
    let mut values = Vec::with_capacity(states.len());
    for psi in states {
        let w = psi.norm_sq();
        if w == 0.0 {
            values.push(C64::default());
            continue;
        }
        any_weight = true;
        values.push(f(&physical_state(psi)?) * w);
    }
    if !any_weight {
        return Err(Error::ZeroWeights);
    }
    Ok(mean_and_stderr(&values))
}

/// (1/N) Σ_i ψ_i ψ_i† of the unnormalized states at grid step `step`.
pub fn mean_density_matrix(trajectories: &[Trajectory], step: usize) -> Result<DensityMatrix> {
    let states = states_at(trajectories, step)?;
    let d = states[0].dim();
    let mut acc = CMatrix::zeros(d, d);
    for psi in &states {
        if psi.dim() != d {
            return Err(Error::DimensionMismatch { expected: d, found: psi.dim() });
        }
        accumulate_outer(&mut acc, psi.amplitudes());
    }
    Ok(DensityMatrix::from_matrix_hermitized(acc.unscale(states.len() as f64)))
}
