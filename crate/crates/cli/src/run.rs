//! Ensemble execution and file output.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};
use sselab::ensemble::{markov_ensemble, memory_ensemble, EnsembleResult};
use sselab::field::field_ensemble;
use sselab::hilbert::DensityMatrix;
use sselab::oracle::{lindblad_at, trace_distance};

use crate::config::{Format, Model, Resolved, RunConfig};

pub const VERSION: &str = env!("SSELAB_VERSION");

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CSV_FILE: &str = "timeseries.csv";
pub const JSON_FILE: &str = "timeseries.json";

/// sha256 over the version and the config echo with the worker count and
/// output directory blanked, neither of which affects the numbers.
pub fn manifest_hash(version: &str, config: &RunConfig) -> String {
    let mut c = config.clone();
    c.ensemble.workers = 0;
    c.output.directory = PathBuf::new();
    let mut h = Sha256::new();
    h.update(version.as_bytes());
    h.update(b"\n");
    h.update(serde_json::to_string(&c).expect("config serializes").as_bytes());
    h.finalize().iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub manifest_hash: String,
    pub seed: u64,
    pub model: String,
    pub wall_time_seconds: f64,
    pub files: Vec<String>,
    pub config: RunConfig,
}

pub fn execute(r: &Resolved) -> sselab::Result<EnsembleResult> {
    match &r.model {
        Model::Markov(m) => markov_ensemble(m, &r.grid, &r.psi0, &r.spec, &r.observables),
        Model::Memory(m) => memory_ensemble(m, &r.grid, &r.psi0, &r.spec, &r.observables),
        Model::Field(m) => field_ensemble(m, &r.grid, &r.psi0, &r.spec, &r.observables),
    }
}

/// Trace distance of the mean ψψ† to a reference at each recorded time:
/// the Lindblad solution (markov), the Lindblad solution at the kernel's
/// matched white-noise rate (memory), or the initial state (field).
pub fn td_reference(r: &Resolved, result: &EnsembleResult) -> sselab::Result<Vec<f64>> {
    let rho0 = r.psi0.projector();
    let elapsed: Vec<f64> = result.steps.iter().map(|&k| k as f64 * r.grid.dt).collect();
    let reference: Vec<DensityMatrix> = match &r.model {
        Model::Markov(m) => lindblad_at(&m.h, &m.q, m.gamma, &rho0, &elapsed)?,
        Model::Memory(m) => lindblad_at(&m.h, &m.q, m.kernel.markov_rate()?, &rho0, &elapsed)?,
        Model::Field(_) => vec![rho0; elapsed.len()],
    };
    result.mean_rho.iter().zip(&reference).map(|(a, b)| trace_distance(a, b)).collect()
}

fn columns(r: &Resolved, result: &EnsembleResult) -> Vec<String> {
    let mut cols: Vec<String> =
        ["t", "step", "mean_norm_sq", "mean_norm_sq_stderr", "td_reference", "rho_mc_error"].map(String::from).to_vec();
    for o in &result.observables {
        for suffix in ["re", "im", "stderr"] {
            cols.push(format!("{}_{suffix}", o.name));
        }
    }
    if r.mean_rho {
        let d = r.model.dim();
        for i in 0..d {
            for j in 0..d {
                cols.push(format!("rho_{i}_{j}_re"));
                cols.push(format!("rho_{i}_{j}_im"));
            }
        }
    }
    cols
}

fn rows(r: &Resolved, result: &EnsembleResult, td: &[f64]) -> Vec<Vec<Value>> {
    let times = result.times();
    (0..result.steps.len())
        .map(|k| {
            let mut row = vec![
                json!(times[k]),
                json!(result.steps[k]),
                json!(result.mean_norm_sq[k]),
                json!(result.norm_sq_stderr[k]),
                json!(td[k]),
                json!(result.rho_mc_error[k]),
            ];
            for o in &result.observables {
                row.extend([json!(o.mean[k].re), json!(o.mean[k].im), json!(o.stderr[k])]);
            }
            if r.mean_rho {
                let d = r.model.dim();
                for i in 0..d {
                    for j in 0..d {
                        let z = result.mean_rho[k].get(i, j);
                        row.extend([json!(z.re), json!(z.im)]);
                    }
                }
            }
            row
        })
        .collect()
}

pub fn render_csv(hash: &str, cols: &[String], rows: &[Vec<Value>]) -> String {
    let mut out = format!("# manifest_hash={hash}\n{}\n", cols.join(","));
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn render_json(hash: &str, cols: &[String], rows: &[Vec<Value>]) -> String {
    let records: Vec<Value> = rows
        .iter()
        .map(|row| Value::Object(cols.iter().cloned().zip(row.iter().cloned()).collect::<Map<_, _>>()))
        .collect();
    let mut s = serde_json::to_string_pretty(&json!({ "manifest_hash": hash, "rows": records })).expect("json");
    s.push('\n');
    s
}

#[derive(Debug)]
pub enum RunError {
    Numerical(sselab::Error),
    Io(String),
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Numerical(e) => write!(f, "{e}"),
            RunError::Io(e) => write!(f, "{e}"),
        }
    }
}

impl From<sselab::Error> for RunError {
    fn from(e: sselab::Error) -> Self {
        RunError::Numerical(e)
    }
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), RunError> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| RunError::Io(format!("cannot write {}: {e}", path.display())))
}

/// Runs the ensemble and writes the data files and manifest into the
/// configured output directory.
pub fn run_and_write(config: &RunConfig, resolved: &Resolved) -> Result<Manifest, RunError> {
    let start = Instant::now();
    let result = execute(resolved)?;
    let td = td_reference(resolved, &result)?;
    let hash = manifest_hash(VERSION, config);
    let cols = columns(resolved, &result);
    let data = rows(resolved, &result, &td);
    let dir = &config.output.directory;
    std::fs::create_dir_all(dir).map_err(|e| RunError::Io(format!("cannot create {}: {e}", dir.display())))?;
    let mut files = Vec::new();
    for format in &config.output.formats {
        let (name, text) = match format {
            Format::Csv => (CSV_FILE, render_csv(&hash, &cols, &data)),
            Format::Json => (JSON_FILE, render_json(&hash, &cols, &data)),
        };
        write_file(dir, name, &text)?;
        files.push(name.to_string());
    }
    let manifest = Manifest {
        version: VERSION.to_string(),
        manifest_hash: hash,
        seed: config.ensemble.root_seed,
        model: resolved.model.kind().to_string(),
        wall_time_seconds: start.elapsed().as_secs_f64(),
        files,
        config: config.clone(),
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    write_file(dir, MANIFEST_FILE, &text)?;
    Ok(manifest)
}

/// Checks that the manifest hash matches its config echo and that every data
/// file it lists carries the same hash. Returns the problems found.
pub fn check_output_dir(dir: &Path) -> Result<Vec<String>, String> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut problems = Vec::new();
    let expected = manifest_hash(&manifest.version, &manifest.config);
    if expected != manifest.manifest_hash {
        problems.push(format!("manifest hash {} does not match its config echo ({expected})", manifest.manifest_hash));
    }
    if manifest.version != VERSION {
        problems.push(format!("manifest was written by version {} (this is {VERSION})", manifest.version));
    }
    for name in &manifest.files {
        let p = dir.join(name);
        let Ok(data) = std::fs::read_to_string(&p) else {
            problems.push(format!("{name}: missing or unreadable"));
            continue;
        };
        let found = if name.ends_with(".csv") {
            data.lines().next().and_then(|l| l.strip_prefix("# manifest_hash=")).map(str::to_string)
        } else {
            serde_json::from_str::<Value>(&data)
                .ok()
                .and_then(|v| v.get("manifest_hash").and_then(Value::as_str).map(str::to_string))
        };
        match found {
            Some(h) if h == manifest.manifest_hash => {}
            Some(h) => problems.push(format!("{name}: carries hash {h}, manifest has {}", manifest.manifest_hash)),
            None => problems.push(format!("{name}: no manifest hash")),
        }
    }
    Ok(problems)
}
