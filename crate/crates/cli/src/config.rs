//! Run configuration: JSON with full-line `//` comments allowed.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sselab::ensemble::{EnsembleSpec, Observable};
use sselab::field::{localized_qubit_currents, FieldModel, SpaceTimePoint};
use sselab::hilbert::{c64, CMatrix, OperatorMatrix, StateVector};
use sselab::markov::MarkovModel;
use sselab::memory::{Closure, MemoryModel};
use sselab::noise::{CovarianceKernel, LatticeSpec, PerturbationDirection, TimeGrid};

/// A config problem, tagged with the JSON path it refers to.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.path.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.path, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(path: &str, message: impl std::fmt::Display) -> Result<T, ConfigError> {
    Err(ConfigError { path: path.into(), message: message.to_string() })
}

fn lift<T>(path: &str, r: sselab::Result<T>) -> Result<T, ConfigError> {
    r.or_else(|e| err(path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub initial_state: StateSpec,
    pub grid: GridConfig,
    pub ensemble: EnsembleConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelConfig {
    Markov(MarkovConfig),
    Memory(MemoryConfig),
    Field(FieldConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkovConfig {
    #[serde(default = "zero_matrix")]
    pub hamiltonian: MatrixSpec,
    pub q: MatrixSpec,
    pub gamma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryConfig {
    #[serde(default = "zero_matrix")]
    pub hamiltonian: MatrixSpec,
    pub q: MatrixSpec,
    pub kernel: CovarianceKernel,
    pub closure: Closure,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldConfig {
    pub lattice: LatticeSpec,
    pub currents: CurrentsSpec,
    /// Number of lowest-|k| modes retained; ignored when `modes` is given.
    #[serde(default)]
    pub coupling_cutoff: Option<usize>,
    /// Explicit mode indices n (k = 2πn/(La)).
    #[serde(default)]
    pub modes: Option<Vec<i64>>,
    pub closure: Closure,
    #[serde(default)]
    pub probe: Option<ProbeConfig>,
}

fn zero_matrix() -> MatrixSpec {
    MatrixSpec::Scaled { scale: 0.0, op: Box::new(MatrixSpec::Named("identity2".into())) }
}

/// Operators: a catalog name, a scaled operator, real rows, or rows of
/// [re, im] pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Named(String),
    Scaled { scale: f64, op: Box<MatrixSpec> },
    Real(Vec<Vec<f64>>),
    Complex(Vec<Vec<[f64; 2]>>),
}

impl MatrixSpec {
    pub fn build(&self, path: &str) -> Result<OperatorMatrix, ConfigError> {
        let m = match self {
            MatrixSpec::Named(name) => match name.as_str() {
                "sigma_x" => OperatorMatrix::sigma_x(),
                "sigma_y" => OperatorMatrix::sigma_y(),
                "sigma_z" => OperatorMatrix::sigma_z(),
                "identity2" => OperatorMatrix::identity(2),
                "number2" => OperatorMatrix::diagonal(&[0.0, 1.0]),
                other => {
                    return err(
                        path,
                        format!("unknown operator {other:?} (known: sigma_x, sigma_y, sigma_z, identity2, number2)"),
                    )
                }
            },
            MatrixSpec::Scaled { scale, op } => {
                if !scale.is_finite() {
                    return err(path, "scale must be finite");
                }
                op.build(&format!("{path}.op"))?.scaled(c64(*scale, 0.0))
            }
            MatrixSpec::Real(rows) => {
                let entries: Vec<Vec<_>> = rows.iter().map(|r| r.iter().map(|&x| c64(x, 0.0)).collect()).collect();
                square(path, entries)?
            }
            MatrixSpec::Complex(rows) => {
                let entries: Vec<Vec<_>> = rows.iter().map(|r| r.iter().map(|&[a, b]| c64(a, b)).collect()).collect();
                square(path, entries)?
            }
        };
        if !m.is_hermitian() {
            return err(path, format!("operator is not Hermitian (deviation {:.3e})", m.hermitian_deviation()));
        }
        Ok(m)
    }
}

fn square(path: &str, rows: Vec<Vec<sselab::hilbert::C64>>) -> Result<OperatorMatrix, ConfigError> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return err(path, "matrix must be square and non-empty");
    }
    if rows.iter().flatten().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
        return err(path, "matrix entries must be finite");
    }
    lift(path, OperatorMatrix::new(CMatrix::from_fn(n, n, |i, j| rows[i][j])))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CurrentsSpec {
    /// One operator per site.
    Explicit(Vec<MatrixSpec>),
    /// Qubit currents c_m·diag(0, 1), c_m = scale·e^{−d(m, center)/2}.
    Localized { center: usize, scale: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    /// [step, site]
    pub x: [usize; 2],
    pub y: [usize; 2],
    pub epsilon: f64,
    #[serde(default = "default_direction")]
    pub direction: PerturbationDirection,
}

fn default_direction() -> PerturbationDirection {
    PerturbationDirection::Imaginary
}

impl ProbeConfig {
    pub fn points(&self) -> (SpaceTimePoint, SpaceTimePoint) {
        (
            SpaceTimePoint { step: self.x[0], site: self.x[1] },
            SpaceTimePoint { step: self.y[0], site: self.y[1] },
        )
    }
}

/// Amplitudes as reals or [re, im] pairs; normalized on load.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StateSpec {
    Real(Vec<f64>),
    Complex(Vec<[f64; 2]>),
}

impl StateSpec {
    pub fn build(&self, path: &str) -> Result<StateVector, ConfigError> {
        let amps: Vec<_> = match self {
            StateSpec::Real(v) => v.iter().map(|&x| c64(x, 0.0)).collect(),
            StateSpec::Complex(v) => v.iter().map(|&[a, b]| c64(a, b)).collect(),
        };
        let s = lift(path, StateVector::new(amps))?;
        let norm = s.norm();
        if norm == 0.0 {
            return err(path, "initial state must be non-zero");
        }
        lift(path, StateVector::from_vector(s.amplitudes() / c64(norm, 0.0)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default)]
    pub t0: f64,
    pub dt: f64,
    pub steps: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub n_traj: usize,
    pub root_seed: u64,
    /// 0 lets the thread pool choose.
    #[serde(default)]
    pub workers: usize,
    #[serde(default = "one")]
    pub record_stride: usize,
}

fn one() -> usize {
    1
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_directory")]
    pub directory: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
    #[serde(default = "default_observables")]
    pub observables: Vec<ObservableSpec>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { directory: default_directory(), formats: default_formats(), observables: default_observables() }
    }
}

fn default_directory() -> PathBuf {
    PathBuf::from("out")
}

fn default_formats() -> Vec<Format> {
    vec![Format::Csv]
}

fn default_observables() -> Vec<ObservableSpec> {
    vec![ObservableSpec::NormSq, ObservableSpec::MeanRho]
}

/// The fixed observable catalog.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObservableSpec {
    /// Reweighted mean of 1, i.e. mean ‖ψ‖².
    NormSq,
    /// Entries of the mean of ψψ†.
    MeanRho,
    /// Reweighted variance of the coupling operator q.
    VarianceQ,
    /// Reweighted ⟨op⟩.
    Expect { name: String, op: MatrixSpec },
    /// Reweighted ⟨op²⟩ − ⟨op⟩².
    Variance { name: String, op: MatrixSpec },
}

/// A config resolved into solver inputs.
#[derive(Clone, Debug)]
pub enum Model {
    Markov(MarkovModel),
    Memory(MemoryModel),
    Field(FieldModel),
}

impl Model {
    pub fn dim(&self) -> usize {
        match self {
            Model::Markov(m) => m.dim(),
            Model::Memory(m) => m.dim(),
            Model::Field(m) => m.dim(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Model::Markov(_) => "markov",
            Model::Memory(_) => "memory",
            Model::Field(_) => "field",
        }
    }

    fn coupling(&self) -> Option<&OperatorMatrix> {
        match self {
            Model::Markov(m) => Some(&m.q),
            Model::Memory(m) => Some(&m.q),
            Model::Field(_) => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Resolved {
    pub model: Model,
    pub psi0: StateVector,
    pub grid: TimeGrid,
    pub spec: EnsembleSpec,
    pub observables: Vec<Observable>,
    pub mean_rho: bool,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let stripped = strip_comments(text);
        let value: serde_json::Value = serde_json::from_str(&stripped).or_else(|e| err("", e))?;
        match with_path::<Self>(&value, "") {
            Ok(c) => Ok(c),
            // The tagged model section hides paths inside it; redo it directly.
            Err(e) if e.path == "model" => Err(diagnose_model(&value["model"]).unwrap_or(e)),
            Err(e) => Err(e),
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .or_else(|e| err("", format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn resolve(&self) -> Result<Resolved, ConfigError> {
        let model = match &self.model {
            ModelConfig::Markov(MarkovConfig { hamiltonian, q, gamma }) => Model::Markov(lift(
                "model",
                MarkovModel::new(hamiltonian.build("model.hamiltonian")?, q.build("model.q")?, *gamma),
            )?),
            ModelConfig::Memory(MemoryConfig { hamiltonian, q, kernel, closure }) => {
                lift("model.kernel", kernel.validate())?;
                Model::Memory(lift(
                    "model",
                    MemoryModel::new(hamiltonian.build("model.hamiltonian")?, q.build("model.q")?, kernel.clone(), *closure),
                )?)
            }
            ModelConfig::Field(FieldConfig { lattice, currents, coupling_cutoff, modes, closure, probe }) => {
                lift("model.lattice", lattice.validate())?;
                let ops = match currents {
                    CurrentsSpec::Explicit(list) => list
                        .iter()
                        .enumerate()
                        .map(|(i, m)| m.build(&format!("model.currents[{i}]")))
                        .collect::<Result<Vec<_>, _>>()?,
                    CurrentsSpec::Localized { center, scale } => {
                        if *center >= lattice.sites {
                            return err("model.currents.center", "center must be a lattice site");
                        }
                        if !scale.is_finite() {
                            return err("model.currents.scale", "scale must be finite");
                        }
                        localized_qubit_currents(lattice, *center, *scale)
                    }
                };
                let retained = match (modes, coupling_cutoff) {
                    (Some(idx), _) => lift("model.modes", lattice.explicit_modes(idx))?,
                    (None, Some(c)) => lift("model.coupling_cutoff", lattice.retained_modes(*c))?,
                    (None, None) => return err("model", "one of coupling_cutoff or modes is required"),
                };
                let m = lift("model", FieldModel::with_modes(*lattice, ops, retained, *closure))?;
                if let Some(p) = probe {
                    if !(p.epsilon > 0.0 && p.epsilon.is_finite()) {
                        return err("model.probe.epsilon", "epsilon must be positive");
                    }
                    if p.x[1] >= lattice.sites || p.y[1] >= lattice.sites {
                        return err("model.probe", "probe sites must lie on the lattice");
                    }
                    if p.x[0] > self.grid.steps || p.y[0] >= self.grid.steps {
                        return err("model.probe", "probe steps must lie on the grid");
                    }
                }
                Model::Field(m)
            }
        };
        let psi0 = self.initial_state.build("initial_state")?;
        if psi0.dim() != model.dim() {
            return err(
                "initial_state",
                format!("state has dimension {} but the model has dimension {}", psi0.dim(), model.dim()),
            );
        }
        let grid = lift("grid", TimeGrid::new(self.grid.t0, self.grid.dt, self.grid.steps))?;
        let spec = EnsembleSpec::new(self.ensemble.n_traj, self.ensemble.root_seed)
            .with_workers(self.ensemble.workers)
            .with_stride(self.ensemble.record_stride);
        lift("ensemble", spec.validate())?;
        let mut observables = Vec::new();
        let mut mean_rho = false;
        for (i, o) in self.output.observables.iter().enumerate() {
            let path = format!("output.observables[{i}]");
            let obs = match o {
                ObservableSpec::NormSq => Observable::NormSq,
                ObservableSpec::MeanRho => {
                    mean_rho = true;
                    continue;
                }
                ObservableSpec::VarianceQ => match model.coupling() {
                    Some(q) => Observable::Variance { name: "variance_q".into(), op: q.clone() },
                    None => return err(&path, "variance_q needs a model with a single coupling operator q"),
                },
                ObservableSpec::Expect { name, op } => Observable::Expect { name: name.clone(), op: op.build(&format!("{path}.op"))? },
                ObservableSpec::Variance { name, op } => {
                    Observable::Variance { name: name.clone(), op: op.build(&format!("{path}.op"))? }
                }
            };
            if let Some(op) = obs_op(&obs) {
                if op.dim() != model.dim() {
                    return err(&path, format!("operator dimension {} does not match the model ({})", op.dim(), model.dim()));
                }
            }
            if observables.iter().any(|x: &Observable| x.name() == obs.name()) {
                return err(&path, format!("duplicate observable name {:?}", obs.name()));
            }
            observables.push(obs);
        }
        if self.output.formats.is_empty() {
            return err("output.formats", "at least one output format is required");
        }
        Ok(Resolved { model, psi0, grid, spec, observables, mean_rho })
    }
}

fn obs_op(o: &Observable) -> Option<&OperatorMatrix> {
    match o {
        Observable::NormSq => None,
        Observable::Expect { op, .. } | Observable::Variance { op, .. } => Some(op),
    }
}

fn with_path<T: serde::de::DeserializeOwned>(value: &serde_json::Value, prefix: &str) -> Result<T, ConfigError> {
    serde_path_to_error::deserialize(value).or_else(|e| {
        let inner = e.path().to_string();
        let path = match (prefix.is_empty(), inner == ".") {
            (true, true) => String::new(),
            (true, false) => inner,
            (false, true) => prefix.to_string(),
            (false, false) => format!("{prefix}.{inner}"),
        };
        err(&path, e.into_inner())
    })
}

fn diagnose_model(model: &serde_json::Value) -> Option<ConfigError> {
    let mut body = model.as_object()?.clone();
    let kind = body.remove("type")?;
    let body = serde_json::Value::Object(body);
    match kind.as_str()? {
        "markov" => with_path::<MarkovConfig>(&body, "model").err(),
        "memory" => with_path::<MemoryConfig>(&body, "model").err(),
        "field" => with_path::<FieldConfig>(&body, "model").err(),
        _ => None,
    }
}

/// Removes lines whose first non-blank characters are `//`.
pub fn strip_comments(text: &str) -> String {
    text.lines()
        .map(|l| if l.trim_start().starts_with("//") { "" } else { l })
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    const MARKOV: &str = r#"{
        // dephasing qubit
        "model": {"type": "markov", "q": "sigma_z", "gamma": 1.0},
        "initial_state": [1.0, 1.0],
        "grid": {"dt": 0.01, "steps": 10},
        "ensemble": {"n_traj": 4, "root_seed": 1}
    }"#;

    #[test]
    fn parses_with_comments_and_defaults() {
        let c = RunConfig::from_json(MARKOV).unwrap();
        assert_eq!(c.ensemble.record_stride, 1);
        assert_eq!(c.output.formats, vec![Format::Csv]);
        let r = c.resolve().unwrap();
        assert!((r.psi0.norm() - 1.0).abs() < 1e-15);
        assert!(r.mean_rho);
        assert_eq!(r.model.kind(), "markov");
    }

    #[test]
    fn round_trips_losslessly() {
        let c = RunConfig::from_json(MARKOV).unwrap();
        assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
        let field = r#"{
            "model": {"type": "field", "lattice": {"sites": 4, "spacing": 1.0, "mass": 1.0},
                      "currents": ["number2", {"scale": 0.5, "op": "number2"}, [[0,0],[0,0.25]], [[[0,0],[0,0]],[[0,0],[1,0]]]],
                      "coupling_cutoff": 2, "closure": "exact_dephasing",
                      "probe": {"x": [5, 1], "y": [2, 3], "epsilon": 1e-4}},
            "initial_state": [[1, 0], [0, 1]],
            "grid": {"t0": 0.5, "dt": 0.1, "steps": 10},
            "ensemble": {"n_traj": 3, "root_seed": 9, "workers": 2, "record_stride": 5},
            "output": {"directory": "x", "formats": ["csv", "json"],
                       "observables": [{"kind": "norm_sq"}, {"kind": "expect", "name": "n1", "op": "number2"}]}
        }"#;
        let c = RunConfig::from_json(field).unwrap();
        assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
        c.resolve().unwrap();
    }

    #[test]
    fn errors_carry_field_paths() {
        let bad = MARKOV.replace("\"gamma\": 1.0", "\"gamma\": \"one\"");
        let e = RunConfig::from_json(&bad).unwrap_err();
        assert_eq!(e.path, "model.gamma");
        let bad = MARKOV.replace("sigma_z", "sigma_w");
        let e = RunConfig::from_json(&bad).unwrap().resolve().unwrap_err();
        assert_eq!(e.path, "model.q");
        let bad = MARKOV.replace("[1.0, 1.0]", "[1.0, 1.0, 0.0]");
        assert_eq!(RunConfig::from_json(&bad).unwrap().resolve().unwrap_err().path, "initial_state");
        let bad = MARKOV.replace("\"n_traj\": 4", "\"n_traj\": 0");
        assert_eq!(RunConfig::from_json(&bad).unwrap().resolve().unwrap_err().path, "ensemble");
    }

    #[test]
    fn non_hermitian_operator_is_rejected() {
        let bad = MARKOV.replace("\"sigma_z\"", "[[0, 1], [0, 0]]");
        let e = RunConfig::from_json(&bad).unwrap().resolve().unwrap_err();
        assert_eq!(e.path, "model.q");
        assert!(e.message.contains("not Hermitian"));
    }

    #[test]
    fn variance_q_needs_a_coupling_operator() {
        let text = r#"{
            "model": {"type": "field", "lattice": {"sites": 4, "spacing": 1.0, "mass": 1.0},
                      "currents": {"center": 0, "scale": 1.0}, "coupling_cutoff": 2, "closure": "exact_dephasing"},
            "initial_state": [1, 1],
            "grid": {"dt": 0.1, "steps": 10},
            "ensemble": {"n_traj": 3, "root_seed": 9},
            "output": {"observables": [{"kind": "variance_q"}]}
        }"#;
        let e = RunConfig::from_json(text).unwrap().resolve().unwrap_err();
        assert_eq!(e.path, "output.observables[0]");
    }
}
