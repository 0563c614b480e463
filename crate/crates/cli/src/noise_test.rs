//! Empirical covariance check of the noise generators.

use serde::Serialize;
use sselab::hilbert::CMatrix;
use sselab::noise::{
    derived_seed, sample_field_modes, vacuum_correlation, ColoredSampler, CovarianceEstimate, CovarianceKernel,
    LatticeSpec, NoisePath, TimeGrid,
};

#[derive(Clone, Debug, PartialEq)]
pub enum KernelArg {
    White { gamma: f64 },
    Exponential { gamma: f64, kappa: f64 },
    Field { lattice: LatticeSpec, cutoff: usize, site: usize },
}

fn params(body: &str) -> Result<Vec<(String, f64)>, String> {
    if body.is_empty() {
        return Ok(Vec::new());
    }
    body.split(',')
        .map(|kv| {
            let (k, v) = kv.split_once('=').ok_or_else(|| format!("expected key=value, got {kv:?}"))?;
            let v: f64 = v.trim().parse().map_err(|_| format!("{k}: not a number: {v:?}"))?;
            Ok((k.trim().to_string(), v))
        })
        .collect()
}

fn take(p: &mut Vec<(String, f64)>, key: &str, default: Option<f64>) -> Result<f64, String> {
    match p.iter().position(|(k, _)| k == key) {
        Some(i) => Ok(p.remove(i).1),
        None => default.ok_or_else(|| format!("missing parameter {key}")),
    }
}

fn whole(x: f64, key: &str) -> Result<usize, String> {
    if x >= 0.0 && x.fract() == 0.0 {
        Ok(x as usize)
    } else {
        Err(format!("{key} must be a non-negative integer"))
    }
}

impl std::str::FromStr for KernelArg {
    type Err = String;

    /// `white:gamma=G`, `exp:gamma=G,kappa=K` or
    /// `field:sites=L,spacing=A,mass=M,cutoff=C,site=S`.
    fn from_str(s: &str) -> Result<Self, String> {
        let (kind, body) = s.split_once(':').unwrap_or((s, ""));
        let mut p = params(body)?;
        let out = match kind {
            "white" => KernelArg::White { gamma: take(&mut p, "gamma", None)? },
            "exp" => KernelArg::Exponential { gamma: take(&mut p, "gamma", None)?, kappa: take(&mut p, "kappa", None)? },
            "field" => {
                let sites = whole(take(&mut p, "sites", Some(8.0))?, "sites")?;
                let lattice = LatticeSpec::new(sites, take(&mut p, "spacing", Some(1.0))?, take(&mut p, "mass", Some(1.0))?)
                    .map_err(|e| e.to_string())?;
                KernelArg::Field {
                    lattice,
                    cutoff: whole(take(&mut p, "cutoff", Some(3.0))?, "cutoff")?,
                    site: whole(take(&mut p, "site", Some(0.0))?, "site")?,
                }
            }
            other => return Err(format!("unknown kernel {other:?} (white, exp, field)")),
        };
        if let Some((k, _)) = p.first() {
            return Err(format!("unknown parameter {k:?} for kernel {kind}"));
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NoiseTestReport {
    pub kernel: String,
    pub paths: usize,
    pub steps: usize,
    pub dt: f64,
    /// max |Ĉ − C| in units of the five-standard-error tolerance.
    pub covariance_error: f64,
    /// max |P̂| (should vanish) in the same units.
    pub pseudo_covariance_error: f64,
    pub passed: bool,
}

/// Draws `paths` realizations with derived seeds and compares the
/// empirical covariance with the exact one. `keep` receives the first path.
pub fn run(
    kernel: &KernelArg,
    label: &str,
    grid: &TimeGrid,
    paths: usize,
    root_seed: u64,
    mut keep: impl FnMut(&NoisePath),
) -> sselab::Result<NoiseTestReport> {
    let mut est = CovarianceEstimate::new(grid.steps);
    let truth: CMatrix;
    let mut add = |i: usize, path: NoisePath| -> sselab::Result<()> {
        if i == 0 {
            keep(&path);
        }
        est.add(&path.values)
    };
    match kernel {
        KernelArg::White { gamma } | KernelArg::Exponential { gamma, .. } => {
            let k = match kernel {
                KernelArg::Exponential { kappa, .. } => CovarianceKernel::exponential(*gamma, *kappa),
                _ => CovarianceKernel::white(*gamma),
            };
            k.validate()?;
            truth = k.covariance_matrix(grid)?;
            let sampler = ColoredSampler::new(&k, grid)?;
            for i in 0..paths {
                add(i, sampler.sample(derived_seed(root_seed, i as u64)))?;
            }
        }
        KernelArg::Field { lattice, cutoff, site } => {
            if *site >= lattice.sites {
                return Err(sselab::Error::InvalidInput(format!("site {site} is outside the lattice")));
            }
            let modes = lattice.retained_modes(*cutoff)?;
            truth = vacuum_correlation(lattice, *cutoff, grid)?.site_kernel().covariance_matrix(grid)?;
            for i in 0..paths {
                let f = sample_field_modes(lattice, grid, modes.clone(), derived_seed(root_seed, i as u64))?;
                add(i, f.site_path(*site))?;
            }
        }
    }
    let (cov, pseudo) = est.normalized_errors(&truth);
    Ok(NoiseTestReport {
        kernel: label.to_string(),
        paths,
        steps: grid.steps,
        dt: grid.dt,
        covariance_error: cov,
        pseudo_covariance_error: pseudo,
        passed: cov <= 1.0 && pseudo <= 1.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_kernel_arguments() {
        assert_eq!("white:gamma=1".parse::<KernelArg>().unwrap(), KernelArg::White { gamma: 1.0 });
        assert_eq!(
            "exp:gamma=1,kappa=2".parse::<KernelArg>().unwrap(),
            KernelArg::Exponential { gamma: 1.0, kappa: 2.0 }
        );
        let KernelArg::Field { lattice, cutoff, site } = "field:sites=6,cutoff=2,site=1".parse().unwrap() else {
            panic!("expected a field kernel");
        };
        assert_eq!((lattice.sites, cutoff, site), (6, 2, 1));
        assert!("exp:gamma=1".parse::<KernelArg>().is_err());
        assert!("white:gamma=1,beta=2".parse::<KernelArg>().is_err());
        assert!("pink:gamma=1".parse::<KernelArg>().is_err());
    }

    #[test]
    fn small_runs_pass() {
        let grid = TimeGrid::new(0.0, 0.05, 8).unwrap();
        for k in ["white:gamma=0.5", "exp:gamma=1,kappa=2", "field:cutoff=2,site=3"] {
            let r = run(&k.parse().unwrap(), k, &grid, 2000, 11, |_| {}).unwrap();
            assert!(r.passed, "{r:?}");
        }
    }
}
