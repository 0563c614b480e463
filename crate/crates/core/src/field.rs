//! Matter coupled to a classical lattice field through site-local currents:
//! dψ/dt = −i Σ_m J_m A⁻(t,m) ψ − Σ_{m,m'} J_m ∫₀ᵗ W((t,m) − (t',m')) Ô_{m'}(t,t') dt' ψ,
//! with W the positive-frequency vacuum mode sum (see [`crate::noise::lattice`])
//! and Ô_{m'} = J_{m'} for commuting currents. The free matter Hamiltonian is
//! zero (interaction picture).
//!
//! The bra of the bilinear current ψ†(t,A⁺) J ψ(t,A⁻) / ψ†(t,A⁺)ψ(t,A⁻) is
//! the Hermitian conjugate of the A⁻-driven ket: ψ depends on the field only
//! through A⁻, so its conjugate is the same functional evaluated on
//! A⁺ = (A⁻)*. The mean of ψ(t,A⁻)ψ†(t,A⁺) is then the ensemble mean of ψψ†
//! and the current is ⟨ψ|J|ψ⟩/⟨ψ|ψ⟩.

use serde::{Deserialize, Serialize};

use crate::engine::{KernelChannel, MemoryEngine};
use crate::ensemble::{run_ensemble, EnsembleResult, EnsembleSpec, Observable};
use crate::error::{invalid, Error, Result};
use crate::hilbert::{c64, check_dim, expm, CMatrix, CVector, OperatorMatrix, StateVector, C64};
use crate::memory::Closure;
use crate::noise::{sample_field_modes, FieldPath, LatticeMode, LatticeSpec, PerturbationDirection, TimeGrid};
use crate::oracle::{BathMode, BathSpec, SystemSpec};
use crate::trajectory::Trajectory;

/// Largest supported matter dimension.
pub const MAX_MATTER_DIM: usize = 16;

const COMMUTING_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct FieldModel {
    pub lattice: LatticeSpec,
    /// One Hermitian current per lattice site.
    pub currents: Vec<OperatorMatrix>,
    pub modes: Vec<LatticeMode>,
    pub closure: Closure,
    commuting: bool,
}

impl FieldModel {
    /// Retains the `coupling_cutoff` lowest-|k| modes.
    pub fn new(lattice: LatticeSpec, currents: Vec<OperatorMatrix>, coupling_cutoff: usize, closure: Closure) -> Result<Self> {
        let modes = lattice.retained_modes(coupling_cutoff)?;
        Self::with_modes(lattice, currents, modes, closure)
    }

    pub fn with_modes(
        lattice: LatticeSpec,
        currents: Vec<OperatorMatrix>,
        modes: Vec<LatticeMode>,
        closure: Closure,
    ) -> Result<Self> {
        lattice.validate()?;
        if currents.len() != lattice.sites {
            return invalid(format!("need one current per site: {} sites, {} currents", lattice.sites, currents.len()));
        }
        if modes.is_empty() {
            return invalid("at least one lattice mode must be retained");
        }
        let d = currents[0].dim();
        if d > MAX_MATTER_DIM {
            return Err(Error::DimensionCap { dim: d, cap: MAX_MATTER_DIM });
        }
        let mut worst: f64 = 0.0;
        for (m, j) in currents.iter().enumerate() {
            check_dim(d, j.dim())?;
            if !j.is_hermitian() {
                return Err(Error::NotHermitian { name: format!("current {m}"), deviation: j.hermitian_deviation() });
            }
        }
        for a in 0..currents.len() {
            for b in a + 1..currents.len() {
                worst = worst.max(currents[a].commutator_norm(&currents[b])?);
            }
        }
        let commuting = worst <= COMMUTING_TOLERANCE;
        if closure == Closure::ExactDephasing && !commuting {
            return Err(Error::NonCommuting { norm: worst });
        }
        Ok(Self { lattice, currents, modes, closure, commuting })
    }

    pub fn is_commuting(&self) -> bool {
        self.commuting
    }

    pub fn dim(&self) -> usize {
        self.currents[0].dim()
    }

    fn active_sites(&self) -> Vec<usize> {
        (0..self.currents.len()).filter(|&m| self.currents[m].frobenius_norm() > 0.0).collect()
    }

    /// Σ_m e^{±ikx_m} J_m over the active sites.
    fn mode_operator(&self, mode: &LatticeMode, sign: f64) -> CMatrix {
        let d = self.dim();
        let mut out = CMatrix::zeros(d, d);
        for m in self.active_sites() {
            let phase = C64::from_polar(1.0, sign * mode.k * self.lattice.position(m));
            out += self.currents[m].matrix() * phase;
        }
        out
    }

    pub(crate) fn engine(&self, dt: f64) -> Result<MemoryEngine> {
        let d = self.dim();
        let sites = self.active_sites();
        let drives = sites.iter().map(|&m| self.currents[m].matrix().clone()).collect();
        let channels = self
            .modes
            .iter()
            .map(|mode| KernelChannel {
                weight: c64(mode.weight(&self.lattice), 0.0),
                rate: c64(0.0, mode.omega),
                left: self.mode_operator(mode, 1.0),
                right: self.mode_operator(mode, -1.0),
            })
            .collect();
        let zero = CMatrix::zeros(d, d);
        MemoryEngine::new(&zero, &zero, drives, channels, self.closure, dt)
    }

    /// System and bath for the brute-force oracle: one bath mode per retained
    /// lattice mode, coupling g_{k,m} = φ_k(0, x_m) to current J_m.
    pub fn oracle_spec(&self, fock_cutoff: usize) -> Result<(SystemSpec, BathSpec)> {
        let sites = self.active_sites();
        let system = SystemSpec::new(
            OperatorMatrix::zeros(self.dim()),
            sites.iter().map(|&m| self.currents[m].clone()).collect(),
        )?;
        let modes = self
            .modes
            .iter()
            .map(|mode| BathMode {
                omega: mode.omega,
                couplings: sites.iter().map(|&m| mode.phi(&self.lattice, 0.0, self.lattice.position(m))).collect(),
                damping: 0.0,
            })
            .collect();
        Ok((system, BathSpec::new(modes, fock_cutoff)))
    }

    fn check_path(&self, field: &FieldPath) -> Result<()> {
        if field.lattice != self.lattice || field.modes != self.modes {
            return invalid("field path was sampled for a different lattice or mode set");
        }
        Ok(())
    }
}

fn integrate(
    engine: &MemoryEngine,
    sites: &[usize],
    psi0: &StateVector,
    field: &FieldPath,
    stride: usize,
    stop: usize,
) -> Result<Trajectory> {
    let grid = TimeGrid { steps: stop, ..field.grid };
    let mut traj = Trajectory::start(grid, stride, psi0);
    let mut history = engine.initial_history();
    let mut psi: CVector = psi0.amplitudes().clone();
    let mut drive = vec![C64::default(); sites.len()];
    for k in 0..stop {
        for (slot, &m) in drive.iter_mut().zip(sites) {
            *slot = field.minus(k, m);
        }
        psi = engine.step(&psi, &mut history, &drive)?;
        traj.offer(k + 1, &psi)?;
    }
    Ok(traj)
}

pub fn run_field_trajectory(model: &FieldModel, grid: &TimeGrid, psi0: &StateVector, seed: u64) -> Result<Trajectory> {
    let field = sample_field_modes(&model.lattice, grid, model.modes.clone(), seed)?;
    run_field_trajectory_with_path(model, psi0, &field)
}

pub fn run_field_trajectory_with_path(model: &FieldModel, psi0: &StateVector, field: &FieldPath) -> Result<Trajectory> {
    check_dim(model.dim(), psi0.dim())?;
    model.check_path(field)?;
    let engine = model.engine(field.grid.dt)?;
    integrate(&engine, &model.active_sites(), psi0, field, 1, field.grid.steps)
}

/// ψ after `step` grid steps on `field`.
pub fn state_at_step(model: &FieldModel, psi0: &StateVector, field: &FieldPath, step: usize) -> Result<StateVector> {
    check_dim(model.dim(), psi0.dim())?;
    model.check_path(field)?;
    if step > field.grid.steps {
        return invalid(format!("step {step} is beyond the grid ({} steps)", field.grid.steps));
    }
    let engine = model.engine(field.grid.dt)?;
    let traj = integrate(&engine, &model.active_sites(), psi0, field, step.max(1), step)?;
    Ok(traj.final_state().clone())
}

/// ∫_{t0}^{t} dt'' ∫_{t0}^{t''} dt' e^{−iω(t''−t')} for T = t − t0.
fn double_integral(omega: f64, t: f64) -> C64 {
    c64(0.0, -t / omega) + (C64::new(1.0, 0.0) - C64::from_polar(1.0, -omega * t)) / (omega * omega)
}

/// ψ(t) = exp{−i Σ_m J_m ∫A⁻(·,m) − Σ_k g_k A_k B_k ∫∫_{t'≤t''} e^{−iω_k(t''−t')}} ψ₀,
/// with both integrals evaluated exactly from the mode amplitudes.
pub fn closed_form_solution(model: &FieldModel, field: &FieldPath, t: f64, psi0: &StateVector) -> Result<StateVector> {
    if !model.commuting {
        return Err(Error::Unsupported("closed-form solution needs mutually commuting currents".into()));
    }
    check_dim(model.dim(), psi0.dim())?;
    model.check_path(field)?;
    let t0 = field.grid.t0;
    if !(t >= t0) {
        return invalid(format!("time {t} precedes the field start {t0}"));
    }
    let d = model.dim();
    let mut exponent = CMatrix::zeros(d, d);
    for m in model.active_sites() {
        exponent -= model.currents[m].matrix() * (c64(0.0, 1.0) * field.integrated_minus(m, t));
    }
    for mode in &model.modes {
        let ab = model.mode_operator(mode, 1.0) * model.mode_operator(mode, -1.0);
        exponent -= ab * (mode.weight(&model.lattice) * double_integral(mode.omega, t - t0));
    }
    Ok(StateVector::from_vector_unchecked(expm(&exponent)? * psi0.amplitudes()))
}

/// ⟨ψ|J_site|ψ⟩/⟨ψ|ψ⟩ at grid step `step`.
pub fn local_current(model: &FieldModel, step: usize, site: usize, field: &FieldPath, psi0: &StateVector) -> Result<C64> {
    if site >= model.currents.len() {
        return invalid(format!("site {site} is outside the lattice"));
    }
    let psi = state_at_step(model, psi0, field, step)?;
    current_of(&model.currents[site], &psi)
}

fn current_of(j: &OperatorMatrix, psi: &StateVector) -> Result<C64> {
    let v = psi.amplitudes();
    let denominator = v.dotc(v);
    let scale = psi.norm_sq();
    if !(denominator.norm() > 1e-12 * scale) || scale == 0.0 {
        return Err(Error::ExceptionalRealization { denominator: denominator.norm() });
    }
    Ok(v.dotc(&(j.matrix() * v)) / denominator)
}

/// Space-time point (grid step, site).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpaceTimePoint {
    pub step: usize,
    pub site: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConeClass {
    Future,
    InsideBackwardCone,
    Spacelike,
}

/// Position of `y` relative to `x` with cone speed 1 (lattice units):
/// future if t_y > t_x, inside if |Δm|·a ≤ t_x − t_y (periodic distance,
/// null separation counts as inside), spacelike otherwise.
pub fn classify(lattice: &LatticeSpec, dt: f64, x: SpaceTimePoint, y: SpaceTimePoint) -> ConeClass {
    if y.step > x.step {
        return ConeClass::Future;
    }
    let delta_t = (x.step - y.step) as f64 * dt;
    let delta_x = lattice.site_distance(x.site, y.site) as f64 * lattice.spacing;
    if delta_x <= delta_t + 1e-12 * delta_t.max(lattice.spacing) {
        ConeClass::InsideBackwardCone
    } else {
        ConeClass::Spacelike
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub x: SpaceTimePoint,
    pub y: SpaceTimePoint,
    pub classification: ConeClass,
    #[serde(rename = "J")]
    pub j: C64,
    #[serde(rename = "J_perturbed")]
    pub j_perturbed: C64,
    pub response_re: f64,
    pub response_im: f64,
    pub epsilon: f64,
    /// |r(ε) − r(ε/2)|.
    pub noise_floor: f64,
    pub direction: PerturbationDirection,
}

impl ProbeReport {
    pub fn response(&self) -> C64 {
        c64(self.response_re, self.response_im)
    }
}

/// Finite-difference response (J′ − J)/ε of the local current at `x` to a
/// perturbation of the field value at `y`.
pub fn causality_probe(
    model: &FieldModel,
    x: SpaceTimePoint,
    y: SpaceTimePoint,
    epsilon: f64,
    direction: PerturbationDirection,
    field: &FieldPath,
    psi0: &StateVector,
) -> Result<ProbeReport> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return invalid(format!("epsilon must be positive, got {epsilon}"));
    }
    if x.step > field.grid.steps || y.step >= field.grid.steps {
        return invalid("probe points must lie on the field grid");
    }
    if x.site >= model.lattice.sites || y.site >= model.lattice.sites {
        return invalid("probe sites must lie on the lattice");
    }
    let j = local_current(model, x.step, x.site, field, psi0)?;
    let response = |eps: f64| -> Result<(C64, C64)> {
        let perturbed = field.perturbed(y.step, y.site, eps, direction);
        let jp = local_current(model, x.step, x.site, &perturbed, psi0)?;
        Ok((jp, (jp - j) / eps))
    };
    let (j_perturbed, r) = response(epsilon)?;
    let (_, r_half) = response(epsilon / 2.0)?;
    Ok(ProbeReport {
        x,
        y,
        classification: classify(&model.lattice, field.grid.dt, x, y),
        j,
        j_perturbed,
        response_re: r.re,
        response_im: r.im,
        epsilon,
        noise_floor: (r - r_half).norm(),
        direction,
    })
}

pub fn field_ensemble(
    model: &FieldModel,
    grid: &TimeGrid,
    psi0: &StateVector,
    spec: &EnsembleSpec,
    observables: &[Observable],
) -> Result<EnsembleResult> {
    check_dim(model.dim(), psi0.dim())?;
    let engine = model.engine(grid.dt)?;
    let sites = model.active_sites();
    run_ensemble(spec, grid, model.dim(), observables, |_, seed| {
        let field = sample_field_modes(&model.lattice, grid, model.modes.clone(), seed)?;
        let traj = integrate(&engine, &sites, psi0, &field, spec.record_stride, grid.steps)?;
        Ok(traj.states.into_iter().map(StateVector::into_vector).collect())
    })
}

/// Currents c_m·diag(0, 1) on a qubit with c_m = scale·e^{−d(m, site)/2},
/// d the periodic site distance.
pub fn localized_qubit_currents(lattice: &LatticeSpec, site: usize, scale: f64) -> Vec<OperatorMatrix> {
    (0..lattice.sites)
        .map(|m| {
            let c = scale * (-(lattice.site_distance(m, site) as f64) / 2.0).exp();
            OperatorMatrix::diagonal(&[0.0, c])
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::{self, MemoryModel};
    use crate::noise::sample_field;

    fn lattice() -> LatticeSpec {
        LatticeSpec::new(8, 1.0, 1.0).unwrap()
    }

    fn plus() -> StateVector {
        StateVector::from_real(&[std::f64::consts::FRAC_1_SQRT_2; 2]).unwrap()
    }

    fn model(scale: f64, cutoff: usize) -> FieldModel {
        let l = lattice();
        FieldModel::new(l, localized_qubit_currents(&l, 0, scale), cutoff, Closure::ExactDephasing).unwrap()
    }

    #[test]
    fn zero_currents_leave_state_unchanged() {
        let m = model(0.0, 3);
        let grid = TimeGrid::new(0.0, 0.05, 20).unwrap();
        let t = run_field_trajectory(&m, &grid, &plus(), 5).unwrap();
        assert!(t.states.iter().all(|s| *s == plus()));
    }

    #[test]
    fn non_commuting_currents_need_weak_coupling() {
        let l = lattice();
        let mut currents = vec![OperatorMatrix::zeros(2); 8];
        currents[0] = OperatorMatrix::sigma_z();
        currents[1] = OperatorMatrix::sigma_x();
        assert!(matches!(
            FieldModel::new(l, currents.clone(), 2, Closure::ExactDephasing),
            Err(Error::NonCommuting { .. })
        ));
        let weak = FieldModel::new(l, currents, 2, Closure::WeakCoupling).unwrap();
        assert!(!weak.is_commuting());
        let f = sample_field(&l, &TimeGrid::new(0.0, 0.1, 3).unwrap(), 2, 1).unwrap();
        assert!(matches!(closed_form_solution(&weak, &f, 0.2, &plus()), Err(Error::Unsupported(_))));
    }

    #[test]
    fn single_site_single_mode_matches_memory_solver_bit_for_bit() {
        let l = lattice();
        let mut currents = vec![OperatorMatrix::zeros(2); 8];
        currents[0] = OperatorMatrix::diagonal(&[0.2, -0.7]);
        let fm = FieldModel::new(l, currents.clone(), 1, Closure::ExactDephasing).unwrap();
        let grid = TimeGrid::new(0.0, 0.02, 80).unwrap();
        let field = sample_field_modes(&l, &grid, fm.modes.clone(), 31).unwrap();
        let a = run_field_trajectory_with_path(&fm, &plus(), &field).unwrap();
        let mm = MemoryModel::new(OperatorMatrix::zeros(2), currents[0].clone(), l.site_kernel(&fm.modes), Closure::ExactDephasing)
            .unwrap();
        let b = memory::run_trajectory_with_path(&mm, &plus(), &field.site_path(0)).unwrap();
        assert_eq!(a.states, b.states);
    }

    #[test]
    fn closed_form_at_start_is_initial_state() {
        let m = model(0.5, 2);
        let f = sample_field(&lattice(), &TimeGrid::new(0.0, 0.1, 4).unwrap(), 2, 3).unwrap();
        let psi = closed_form_solution(&m, &f, 0.0, &plus()).unwrap();
        assert!((psi.amplitudes() - plus().amplitudes()).norm() < 1e-15);
        let zero = FieldPath::from_amplitudes(lattice(), f.grid, f.modes.clone(), vec![C64::default(); 2]).unwrap();
        let none = model(0.0, 2);
        let psi = closed_form_solution(&none, &zero, 0.4, &plus()).unwrap();
        assert!((psi.amplitudes() - plus().amplitudes()).norm() < 1e-15);
    }

    #[test]
    fn double_integral_matches_quadrature() {
        let (omega, t) = (1.7, 0.9);
        let n = 4000;
        let h = t / n as f64;
        let mut acc = C64::default();
        for i in 0..n {
            let tau = (i as f64 + 0.5) * h;
            acc += C64::from_polar(t - tau, -omega * tau) * h;
        }
        assert!((acc - double_integral(omega, t)).norm() < 1e-7);
    }

    #[test]
    fn zero_coupling_current_is_initial_expectation() {
        let m = model(0.0, 2);
        let f = sample_field(&lattice(), &TimeGrid::new(0.0, 0.1, 10).unwrap(), 2, 3).unwrap();
        let psi0 = StateVector::from_real(&[0.6, 0.8]).unwrap();
        let l = lattice();
        let probe = FieldModel::new(l, vec![OperatorMatrix::diagonal(&[0.0, 0.0]); 8], 2, Closure::ExactDephasing).unwrap();
        assert_eq!(local_current(&probe, 5, 2, &f, &psi0).unwrap(), C64::default());
        let j = local_current(&m, 10, 0, &f, &psi0).unwrap();
        assert_eq!(j, C64::default());
    }

    #[test]
    fn classification_rules() {
        let l = lattice();
        let p = |step, site| SpaceTimePoint { step, site };
        assert_eq!(classify(&l, 0.05, p(40, 3), p(41, 3)), ConeClass::Future);
        assert_eq!(classify(&l, 0.05, p(40, 3), p(20, 7)), ConeClass::Spacelike);
        assert_eq!(classify(&l, 0.05, p(40, 3), p(20, 4)), ConeClass::InsideBackwardCone);
        // Null separation counts as inside.
        assert_eq!(classify(&l, 0.5, p(4, 0), p(2, 1)), ConeClass::InsideBackwardCone);
        // Periodic distance: sites 0 and 7 are neighbours.
        assert_eq!(classify(&l, 0.5, p(4, 0), p(2, 7)), ConeClass::InsideBackwardCone);
    }

    #[test]
    fn future_perturbation_has_exactly_zero_response() {
        let m = model(0.8, 3);
        let grid = TimeGrid::new(0.0, 0.05, 60).unwrap();
        let f = sample_field_modes(&lattice(), &grid, m.modes.clone(), 8).unwrap();
        for step in [40, 45, 59] {
            let r = causality_probe(
                &m,
                SpaceTimePoint { step: 40, site: 3 },
                SpaceTimePoint { step, site: 7 },
                1e-4,
                PerturbationDirection::Imaginary,
                &f,
                &plus(),
            )
            .unwrap();
            assert_eq!(r.response_re, 0.0);
            assert_eq!(r.response_im, 0.0);
        }
    }

    #[test]
    fn oracle_couplings_reproduce_field_kernel() {
        let m = model(0.5, 2);
        let (sys, bath) = m.oracle_spec(6).unwrap();
        assert_eq!(sys.couplings.len(), 8);
        // α_{ik}(τ) from the bath equals W(τ, x_i − x_k).
        let corr = crate::noise::vacuum_correlation(&lattice(), 2, &TimeGrid::new(0.0, 0.1, 5).unwrap()).unwrap();
        for (i, k) in [(0usize, 0usize), (1, 4), (6, 2)] {
            let terms = bath.kernel_terms(i, k);
            for lag in 0..5 {
                let tau = lag as f64 * 0.1;
                let a: C64 = terms.iter().map(|t| t.weight * (-t.rate * tau).exp()).sum();
                let w = corr.at(lag, i as i64 - k as i64).unwrap();
                assert!((a - w).norm() < 1e-14);
            }
        }
    }
}
