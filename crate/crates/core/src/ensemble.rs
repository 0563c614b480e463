//! Parallel Monte Carlo ensembles with a deterministic reduction.
//!
//! Trajectory i always uses `derived_seed(root_seed, i)`. Trajectories are
//! computed in fixed-size chunks on a worker pool and reduced sequentially
//! in index order, so results do not depend on the number of workers.
//!
//! Monte Carlo error of the mean density matrix ρ̄ (N trajectories, dim d):
//! ½·√d·√(Σ_ij se_ij²), where se_ij is the standard error of entry (i,j).
//! Since Σ_ij |ψ_iψ_j*|² = ‖ψ‖⁴ this equals
//! ½·√d·√((M[‖ψ‖⁴] − ‖ρ̄‖_F²)/(N − 1)); it bounds the expected trace
//! distance between ρ̄ and its limit through ‖X‖₁ ≤ √d‖X‖_F.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::hilbert::{accumulate_outer, check_dim, CMatrix, CVector, DensityMatrix, OperatorMatrix, StateVector, C64};
use crate::markov::{self, MarkovModel, MarkovStepper};
use crate::memory::{self, MemoryModel};
use crate::noise::{derived_seed, sample_white, ColoredSampler, TimeGrid};
use crate::trajectory::{recorded_steps, Trajectory};

const CHUNK: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub n_traj: usize,
    pub root_seed: u64,
    /// Worker threads; 0 uses the available parallelism.
    #[serde(default)]
    pub workers: usize,
    /// Record every `record_stride` grid steps (the final step is always recorded).
    #[serde(default = "one")]
    pub record_stride: usize,
}

fn one() -> usize {
    1
}

impl EnsembleSpec {
    pub fn new(n_traj: usize, root_seed: u64) -> Self {
        Self { n_traj, root_seed, workers: 0, record_stride: 1 }
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.record_stride = stride;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_traj == 0 {
            return invalid("n_traj must be >= 1");
        }
        if self.record_stride == 0 {
            return invalid("record_stride must be >= 1");
        }
        Ok(())
    }
}

/// Reweighted observables: each trajectory contributes ‖ψ‖²·f(ψ/‖ψ‖).
#[derive(Clone, Debug, PartialEq)]
pub enum Observable {
    /// f ≡ 1, i.e. ‖ψ‖².
    NormSq,
    /// ⟨O⟩ in the physical state.
    Expect { name: String, op: OperatorMatrix },
    /// ⟨O²⟩ − ⟨O⟩² in the physical state.
    Variance { name: String, op: OperatorMatrix },
}

impl Observable {
    pub fn name(&self) -> &str {
        match self {
            Self::NormSq => "norm_sq",
            Self::Expect { name, .. } | Self::Variance { name, .. } => name,
        }
    }

    fn dim(&self) -> Option<usize> {
        match self {
            Self::NormSq => None,
            Self::Expect { op, .. } | Self::Variance { op, .. } => Some(op.dim()),
        }
    }

    /// ‖ψ‖²·f(ψ/‖ψ‖) for an unnormalized ψ.
    pub fn weighted_value(&self, psi: &CVector) -> C64 {
        match self {
            Self::NormSq => C64::new(psi.norm_squared(), 0.0),
            Self::Expect { op, .. } => psi.dotc(&(op.matrix() * psi)),
            Self::Variance { op, .. } => {
                let w = psi.norm_squared();
                if w == 0.0 {
                    return C64::default();
                }
                let o_psi = op.matrix() * psi;
                let m1 = psi.dotc(&o_psi);
                let m2 = o_psi.dotc(&o_psi);
                m2 - m1 * m1 / w
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObservableSeries {
    pub name: String,
    pub mean: Vec<C64>,
    pub stderr: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleResult {
    pub grid: TimeGrid,
    /// Recorded grid steps.
    pub steps: Vec<usize>,
    pub n_traj: usize,
    pub mean_rho: Vec<DensityMatrix>,
    pub mean_norm_sq: Vec<f64>,
    pub norm_sq_stderr: Vec<f64>,
    /// Monte Carlo error of `mean_rho` in trace distance (see module docs).
    pub rho_mc_error: Vec<f64>,
    pub observables: Vec<ObservableSeries>,
}

impl EnsembleResult {
    pub fn times(&self) -> Vec<f64> {
        self.steps.iter().map(|&k| self.grid.time(k)).collect()
    }

    /// Index of the recorded step closest to time `t`.
    pub fn index_at_time(&self, t: f64) -> usize {
        let k = ((t - self.grid.t0) / self.grid.dt).round().max(0.0) as usize;
        match self.steps.binary_search(&k) {
            Ok(i) => i,
            Err(i) => {
                if i == 0 {
                    0
                } else if i >= self.steps.len() {
                    self.steps.len() - 1
                } else if k - self.steps[i - 1] <= self.steps[i] - k {
                    i - 1
                } else {
                    i
                }
            }
        }
    }

    pub fn observable(&self, name: &str) -> Option<&ObservableSeries> {
        self.observables.iter().find(|o| o.name == name)
    }
}

/// Spreads are accumulated as deviations from trajectory 0, which avoids
/// the cancellation in Σx²/N − x̄² when the ensemble is nearly degenerate.
struct Accumulator {
    rho: Vec<CMatrix>,
    norm: Vec<f64>,
    obs: Vec<Vec<C64>>,
    anchor: Vec<CVector>,
    anchor_obs: Vec<Vec<C64>>,
    norm_dev: Vec<f64>,
    norm_dev_sq: Vec<f64>,
    /// Σ ‖ψψ† − φφ†‖_F² with φ the anchor state.
    rho_dev_sq: Vec<f64>,
    obs_dev: Vec<Vec<C64>>,
    obs_dev_sq: Vec<Vec<f64>>,
    count: usize,
}

impl Accumulator {
    fn new(points: usize, dim: usize, n_obs: usize) -> Self {
        Self {
            rho: vec![CMatrix::zeros(dim, dim); points],
            norm: vec![0.0; points],
            obs: vec![vec![C64::default(); points]; n_obs],
            anchor: Vec::new(),
            anchor_obs: Vec::new(),
            norm_dev: vec![0.0; points],
            norm_dev_sq: vec![0.0; points],
            rho_dev_sq: vec![0.0; points],
            obs_dev: vec![vec![C64::default(); points]; n_obs],
            obs_dev_sq: vec![vec![0.0; points]; n_obs],
            count: 0,
        }
    }

    fn add(&mut self, states: &[CVector], observables: &[Observable]) {
        if self.count == 0 {
            self.anchor = states.to_vec();
            self.anchor_obs = observables.iter().map(|o| states.iter().map(|psi| o.weighted_value(psi)).collect()).collect();
        }
        for (k, psi) in states.iter().enumerate() {
            accumulate_outer(&mut self.rho[k], psi);
            let phi = &self.anchor[k];
            let (w, wa) = (psi.norm_squared(), phi.norm_squared());
            self.norm[k] += w;
            self.norm_dev[k] += w - wa;
            self.norm_dev_sq[k] += (w - wa) * (w - wa);
            self.rho_dev_sq[k] += outer_distance_sq(psi, phi);
            for (j, o) in observables.iter().enumerate() {
                let v = o.weighted_value(psi);
                let d = v - self.anchor_obs[j][k];
                self.obs[j][k] += v;
                self.obs_dev[j][k] += d;
                self.obs_dev_sq[j][k] += d.norm_sqr();
            }
        }
        self.count += 1;
    }

    fn finish(self, grid: TimeGrid, steps: Vec<usize>, observables: &[Observable]) -> EnsembleResult {
        let n = self.count as f64;
        // Standard error from the sums of deviations d and |d|².
        let se = |dev_mean_sq: f64, dev_sq: f64| {
            if self.count < 2 {
                return 0.0;
            }
            ((dev_sq / n - dev_mean_sq).max(0.0) / (n - 1.0)).sqrt()
        };
        let mut mean_rho = Vec::with_capacity(steps.len());
        let mut rho_mc_error = Vec::with_capacity(steps.len());
        let mut mean_norm_sq = Vec::with_capacity(steps.len());
        let mut norm_sq_stderr = Vec::with_capacity(steps.len());
        for (k, rho) in self.rho.into_iter().enumerate() {
            let rho = rho.unscale(n);
            let d = rho.nrows() as f64;
            let (spread, dev) = if self.count == 0 {
                (0.0, 0.0)
            } else {
                let phi = &self.anchor[k];
                let offset = (&rho - phi * phi.adjoint()).norm_squared();
                ((self.rho_dev_sq[k] / n - offset).max(0.0), self.norm_dev[k] / n)
            };
            rho_mc_error.push(if self.count < 2 { 0.0 } else { 0.5 * d.sqrt() * (spread / (n - 1.0)).sqrt() });
            mean_rho.push(DensityMatrix::from_matrix_hermitized(rho));
            mean_norm_sq.push(self.norm[k] / n);
            norm_sq_stderr.push(se(dev * dev, self.norm_dev_sq[k]));
        }
        let observables = observables
            .iter()
            .enumerate()
            .map(|(j, o)| ObservableSeries {
                name: o.name().to_string(),
                mean: self.obs[j].iter().map(|s| s / n).collect(),
                stderr: self.obs_dev[j]
                    .iter()
                    .zip(&self.obs_dev_sq[j])
                    .map(|(dev, sq)| se((dev / n).norm_sqr(), *sq))
                    .collect(),
            })
            .collect();
        EnsembleResult {
            grid,
            steps,
            n_traj: self.count,
            mean_rho,
            mean_norm_sq,
            norm_sq_stderr,
            rho_mc_error,
            observables,
        }
    }
}

/// ‖ψψ† − φφ†‖_F², entry by entry so identical states give exactly 0.
fn outer_distance_sq(psi: &CVector, phi: &CVector) -> f64 {
    let mut sum = 0.0;
    for i in 0..psi.len() {
        for j in 0..psi.len() {
            sum += (psi[i] * psi[j].conj() - phi[i] * phi[j].conj()).norm_sqr();
        }
    }
    sum
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidInput(format!("cannot start worker pool: {e}")))
}

/// Runs `trajectory(index, seed)` for every index and reduces the recorded
/// states. The closure must return one state per entry of
/// `recorded_steps(grid.steps, spec.record_stride)`.
pub fn run_ensemble<F>(
    spec: &EnsembleSpec,
    grid: &TimeGrid,
    dim: usize,
    observables: &[Observable],
    trajectory: F,
) -> Result<EnsembleResult>
where
    F: Fn(u64, u64) -> Result<Vec<CVector>> + Sync,
{
    spec.validate()?;
    grid.validate()?;
    for o in observables {
        if let Some(d) = o.dim() {
            check_dim(dim, d)?;
        }
    }
    let steps = recorded_steps(grid.steps, spec.record_stride);
    let mut acc = Accumulator::new(steps.len(), dim, observables.len());
    let pool = pool(spec.workers)?;
    let indices: Vec<u64> = (0..spec.n_traj as u64).collect();
    for chunk in indices.chunks(CHUNK) {
        let results: Vec<Result<Vec<CVector>>> = pool.install(|| {
            chunk
                .par_iter()
                .map(|&i| {
                    let seed = derived_seed(spec.root_seed, i);
                    trajectory(i, seed).map_err(|e| Error::InTrajectory { index: i, seed, source: Box::new(e) })
                })
                .collect()
        });
        for (r, &i) in results.into_iter().zip(chunk) {
            let states = r?;
            if states.len() != steps.len() || states.iter().any(|s| s.len() != dim) {
                return Err(Error::InTrajectory {
                    index: i,
                    seed: derived_seed(spec.root_seed, i),
                    source: Box::new(Error::DimensionMismatch { expected: steps.len(), found: states.len() }),
                });
            }
            acc.add(&states, observables);
        }
    }
    Ok(acc.finish(*grid, steps, observables))
}

fn into_states(t: Trajectory) -> Vec<CVector> {
    t.states.into_iter().map(StateVector::into_vector).collect()
}

pub fn markov_ensemble(
    model: &MarkovModel,
    grid: &TimeGrid,
    psi0: &StateVector,
    spec: &EnsembleSpec,
    observables: &[Observable],
) -> Result<EnsembleResult> {
    check_dim(model.dim(), psi0.dim())?;
    let stepper = MarkovStepper::new(model, grid.dt)?;
    run_ensemble(spec, grid, model.dim(), observables, |_, seed| {
        let path = sample_white(model.gamma, grid, seed)?;
        Ok(into_states(markov::integrate(&stepper, psi0, &path, spec.record_stride)?))
    })
}

pub fn memory_ensemble(
    model: &MemoryModel,
    grid: &TimeGrid,
    psi0: &StateVector,
    spec: &EnsembleSpec,
    observables: &[Observable],
) -> Result<EnsembleResult> {
    check_dim(model.dim(), psi0.dim())?;
    let sampler = ColoredSampler::new(&model.kernel, grid)?;
    let engine = model.engine(grid.dt)?;
    run_ensemble(spec, grid, model.dim(), observables, |_, seed| {
        let path = sampler.sample(seed);
        Ok(into_states(memory::integrate(&engine, psi0, &path, spec.record_stride)?))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::c64;
    use crate::trajectory::{mean_density_matrix, reweighted_mean};

    fn model() -> MarkovModel {
        MarkovModel::new(
            OperatorMatrix::from_real_rows(&[&[0.0, 0.4], &[0.4, 0.0]]).unwrap(),
            OperatorMatrix::sigma_z(),
            0.8,
        )
        .unwrap()
    }

    fn plus() -> StateVector {
        StateVector::from_real(&[std::f64::consts::FRAC_1_SQRT_2; 2]).unwrap()
    }

    #[test]
    fn result_is_independent_of_worker_count() {
        let grid = TimeGrid::new(0.0, 0.01, 40).unwrap();
        let obs = [Observable::NormSq, Observable::Variance { name: "var_q".into(), op: OperatorMatrix::sigma_z() }];
        let spec = EnsembleSpec::new(600, 12).with_stride(7);
        let a = markov_ensemble(&model(), &grid, &plus(), &spec.with_workers(1), &obs).unwrap();
        let b = markov_ensemble(&model(), &grid, &plus(), &spec.with_workers(3), &obs).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.steps, vec![0, 7, 14, 21, 28, 35, 40]);
    }

    #[test]
    fn reduction_matches_trajectory_functions() {
        let grid = TimeGrid::new(0.0, 0.02, 10).unwrap();
        let spec = EnsembleSpec::new(5, 3).with_workers(2);
        let obs = [Observable::Expect { name: "q".into(), op: OperatorMatrix::sigma_z() }];
        let ens = markov_ensemble(&model(), &grid, &plus(), &spec, &obs).unwrap();
        let trajs: Vec<Trajectory> = (0..5)
            .map(|i| markov::run_trajectory(&model(), &grid, &plus(), derived_seed(3, i)).unwrap())
            .collect();
        let rho = mean_density_matrix(&trajs, 10).unwrap();
        assert!((rho.matrix() - ens.mean_rho[10].matrix()).norm() < 1e-14);
        let (m, se) = reweighted_mean(
            &trajs,
            |phi| crate::hilbert::inner(phi, &crate::hilbert::apply(&OperatorMatrix::sigma_z(), phi).unwrap()).unwrap(),
            10,
        )
        .unwrap();
        assert!((m - ens.observables[0].mean[10]).norm() < 1e-14);
        assert!((se - ens.observables[0].stderr[10]).abs() < 1e-12);
    }

    #[test]
    fn single_unitary_trajectory_has_no_spread() {
        let m = MarkovModel::new(OperatorMatrix::sigma_x(), OperatorMatrix::sigma_z(), 0.0).unwrap();
        let grid = TimeGrid::new(0.0, 0.05, 20).unwrap();
        let ens = markov_ensemble(&m, &grid, &plus(), &EnsembleSpec::new(1, 0), &[Observable::NormSq]).unwrap();
        assert_eq!(ens.n_traj, 1);
        assert!(ens.norm_sq_stderr.iter().all(|s| *s == 0.0));
        assert!(ens.mean_norm_sq.iter().all(|n| (n - 1.0).abs() < 1e-13));
    }

    #[test]
    fn identical_trajectories_report_exactly_zero_spread() {
        let m = MarkovModel::new(OperatorMatrix::sigma_x(), OperatorMatrix::sigma_z(), 0.0).unwrap();
        let grid = TimeGrid::new(0.0, 0.05, 20).unwrap();
        let obs = [Observable::NormSq, Observable::Expect { name: "sy".into(), op: OperatorMatrix::sigma_y() }];
        let ens = markov_ensemble(&m, &grid, &plus(), &EnsembleSpec::new(300, 4), &obs).unwrap();
        assert!(ens.norm_sq_stderr.iter().all(|s| *s == 0.0));
        assert!(ens.rho_mc_error.iter().all(|s| *s == 0.0));
        assert!(ens.observables.iter().all(|o| o.stderr.iter().all(|s| *s == 0.0)));
    }

    #[test]
    fn spread_matches_the_two_pass_estimate() {
        let states: Vec<Vec<CVector>> = (0..5)
            .map(|i| vec![CVector::from_vec(vec![c64(1.0 + i as f64, 0.5), c64(0.0, -(i as f64))])])
            .collect();
        let ens = run_ensemble(&EnsembleSpec::new(5, 1), &TimeGrid::new(0.0, 1.0, 0).unwrap(), 2, &[], |i, _| {
            Ok(states[i as usize].clone())
        })
        .unwrap();
        let w: Vec<f64> = states.iter().map(|s| s[0].norm_squared()).collect();
        let mean = w.iter().sum::<f64>() / 5.0;
        let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 5.0;
        assert!((ens.norm_sq_stderr[0] - (var / 4.0).sqrt()).abs() < 1e-12);
        let rho = states.iter().map(|s| &s[0] * s[0].adjoint()).fold(CMatrix::zeros(2, 2), |a, b| a + b) / c64(5.0, 0.0);
        let m4 = w.iter().map(|x| x * x).sum::<f64>() / 5.0;
        let want = 0.5 * 2f64.sqrt() * ((m4 - rho.norm_squared()) / 4.0).sqrt();
        assert!((ens.rho_mc_error[0] - want).abs() < 1e-12 * want);
    }

    #[test]
    fn errors_carry_trajectory_context() {
        let grid = TimeGrid::new(0.0, 0.1, 3).unwrap();
        let err = run_ensemble(&EnsembleSpec::new(4, 9), &grid, 2, &[], |i, _| {
            if i == 2 {
                Err(Error::ZeroNorm { step: 1 })
            } else {
                Ok(vec![CVector::from_element(2, c64(1.0, 0.0)); 4])
            }
        })
        .unwrap_err();
        match err {
            Error::InTrajectory { index, seed, ref source } => {
                assert_eq!(index, 2);
                assert_eq!(seed, derived_seed(9, 2));
                assert_eq!(**source, Error::ZeroNorm { step: 1 });
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn index_lookup_by_time() {
        let grid = TimeGrid::new(0.0, 0.1, 10).unwrap();
        let ens = markov_ensemble(&model(), &grid, &plus(), &EnsembleSpec::new(2, 1).with_stride(3), &[]).unwrap();
        assert_eq!(ens.steps, vec![0, 3, 6, 9, 10]);
        assert_eq!(ens.index_at_time(0.6), 2);
        assert_eq!(ens.index_at_time(1.0), 4);
        assert_eq!(ens.index_at_time(0.4), 1);
    }
}
