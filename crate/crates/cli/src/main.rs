use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sselab::field::{causality_probe, SpaceTimePoint};
use sselab::noise::export::{write_path_binary, write_path_csv};
use sselab::noise::{sample_field_modes, PerturbationDirection, TimeGrid};
use sselab::validation::{self, Scale};
use sselab_cli::config::{ConfigError, Format, Model, RunConfig};
use sselab_cli::noise_test::{self, KernelArg};
use sselab_cli::run::{check_output_dir, run_and_write, RunError};

const EXIT_VALIDATION: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(name = "sselab", version = sselab_cli::run::VERSION, about = "Stochastic Schrödinger equation ensembles and oracle checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Markovian (white-noise) ensemble.
    RunMarkov(RunArgs),
    /// Memory-kernel (colored-noise) ensemble.
    RunMemory(RunArgs),
    /// Lattice field toy ensemble.
    RunField(RunArgs),
    /// Finite-difference response of a local current to a field perturbation.
    ProbeCausality(ProbeArgs),
    /// Empirical covariance test of a noise generator.
    NoiseTest(NoiseArgs),
    /// Runs the oracle comparisons, or checks an output directory's manifest.
    Validate(ValidateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides ensemble.root_seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides ensemble.workers (0 = all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Overrides output.directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides output.formats.
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// One tenth of the configured trajectories.
    #[arg(long)]
    quick: bool,
}

#[derive(Args)]
struct ProbeArgs {
    /// Field config; its probe section supplies defaults.
    #[arg(long)]
    config: PathBuf,
    /// Observation point as STEP,SITE.
    #[arg(long, value_parser = parse_point)]
    x: Option<SpaceTimePoint>,
    /// Perturbation point as STEP,SITE.
    #[arg(long, value_parser = parse_point)]
    y: Option<SpaceTimePoint>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long, value_enum)]
    direction: Option<DirectionArg>,
    /// Field realization seed; defaults to ensemble.root_seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Also write probe.json here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum DirectionArg {
    Real,
    Imaginary,
}

#[derive(Args)]
struct NoiseArgs {
    /// white:gamma=G | exp:gamma=G,kappa=K | field:sites=L,spacing=A,mass=M,cutoff=C,site=S
    #[arg(long)]
    kernel: KernelArg,
    #[arg(long, default_value_t = 10_000)]
    paths: usize,
    #[arg(long, default_value_t = 16)]
    steps: usize,
    #[arg(long, default_value_t = 0.05)]
    dt: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Writes the first sampled path as path.csv and path.bin here.
    #[arg(long)]
    export: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
    #[arg(long)]
    quick: bool,
}

#[derive(Args)]
struct ValidateArgs {
    /// Ten times fewer trajectories.
    #[arg(long)]
    quick: bool,
    /// Verify the manifest of a run output directory instead.
    #[arg(long)]
    check: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
}

fn parse_point(s: &str) -> Result<SpaceTimePoint, String> {
    let (a, b) = s.split_once(',').ok_or("expected STEP,SITE")?;
    let step = a.trim().parse().map_err(|_| format!("bad step {a:?}"))?;
    let site = b.trim().parse().map_err(|_| format!("bad site {b:?}"))?;
    Ok(SpaceTimePoint { step, site })
}

fn config_error(e: ConfigError) -> ExitCode {
    eprintln!("config error: {e}");
    ExitCode::from(EXIT_CONFIG)
}

fn numerical_error(e: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(EXIT_NUMERICAL)
}

fn load(path: &Path) -> Result<RunConfig, ExitCode> {
    RunConfig::load(path).map_err(config_error)
}

fn run(args: RunArgs, expected: &str) -> ExitCode {
    let mut config = match load(&args.config) {
        Ok(c) => c,
        Err(code) => return code,
    };
    if let Some(s) = args.seed {
        config.ensemble.root_seed = s;
    }
    if let Some(w) = args.workers {
        config.ensemble.workers = w;
    }
    if let Some(o) = args.out {
        config.output.directory = o;
    }
    if let Some(f) = args.format {
        config.output.formats = vec![match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::Json => Format::Json,
        }];
    }
    if args.quick {
        config.ensemble.n_traj = (config.ensemble.n_traj / 10).max(1);
    }
    let resolved = match config.resolve() {
        Ok(r) => r,
        Err(e) => return config_error(e),
    };
    if resolved.model.kind() != expected {
        return config_error(ConfigError {
            path: "model.type".into(),
            message: format!("this subcommand runs {expected} models, the config has {}", resolved.model.kind()),
        });
    }
    match run_and_write(&config, &resolved) {
        Ok(m) => {
            println!(
                "wrote {} ({} trajectories, {:.2}s) to {}",
                m.files.join(", "),
                config.ensemble.n_traj,
                m.wall_time_seconds,
                config.output.directory.display()
            );
            ExitCode::SUCCESS
        }
        Err(RunError::Numerical(e)) => numerical_error(e),
        Err(e @ RunError::Io(_)) => numerical_error(e),
    }
}

fn probe(args: ProbeArgs) -> ExitCode {
    let config = match load(&args.config) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let resolved = match config.resolve() {
        Ok(r) => r,
        Err(e) => return config_error(e),
    };
    let Model::Field(model) = &resolved.model else {
        return config_error(ConfigError { path: "model.type".into(), message: "probe-causality needs a field model".into() });
    };
    let defaults = match &config.model {
        sselab_cli::config::ModelConfig::Field(f) => f.probe.clone(),
        _ => None,
    };
    let (x, y) = match (args.x, args.y, defaults.as_ref().map(|p| p.points())) {
        (Some(x), Some(y), _) => (x, y),
        (x, y, Some((dx, dy))) => (x.unwrap_or(dx), y.unwrap_or(dy)),
        _ => return config_error(ConfigError { path: "model.probe".into(), message: "give --x and --y or a probe section".into() }),
    };
    let Some(epsilon) = args.epsilon.or(defaults.as_ref().map(|p| p.epsilon)) else {
        return config_error(ConfigError { path: "model.probe.epsilon".into(), message: "give --epsilon or a probe section".into() });
    };
    let direction = match args.direction {
        Some(DirectionArg::Real) => PerturbationDirection::Real,
        Some(DirectionArg::Imaginary) => PerturbationDirection::Imaginary,
        None => defaults.map(|p| p.direction).unwrap_or(PerturbationDirection::Imaginary),
    };
    let seed = args.seed.unwrap_or(config.ensemble.root_seed);
    let report = sample_field_modes(&model.lattice, &resolved.grid, model.modes.clone(), seed)
        .and_then(|field| causality_probe(model, x, y, epsilon, direction, &field, &resolved.psi0));
    let report = match report {
        Ok(r) => r,
        Err(e @ sselab::Error::InvalidInput(_)) => {
            return config_error(ConfigError { path: String::new(), message: e.to_string() })
        }
        Err(e) => return numerical_error(e),
    };
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    println!("{text}");
    if let Some(dir) = args.out {
        if let Err(e) = std::fs::create_dir_all(&dir).and_then(|_| std::fs::write(dir.join("probe.json"), text + "\n")) {
            return numerical_error(format!("cannot write probe.json: {e}"));
        }
    }
    ExitCode::SUCCESS
}

fn noise(args: NoiseArgs) -> ExitCode {
    let paths = if args.quick { (args.paths / 10).max(2) } else { args.paths };
    let grid = match TimeGrid::new(0.0, args.dt, args.steps) {
        Ok(g) => g,
        Err(e) => return config_error(ConfigError { path: "--dt/--steps".into(), message: e.to_string() }),
    };
    let mut first = None;
    let label = format!("{:?}", args.kernel);
    let report = match noise_test::run(&args.kernel, &label, &grid, paths, args.seed, |p| first = Some(p.clone())) {
        Ok(r) => r,
        Err(e @ sselab::Error::InvalidInput(_)) => {
            return config_error(ConfigError { path: "--kernel".into(), message: e.to_string() })
        }
        Err(e) => return numerical_error(e),
    };
    if let (Some(dir), Some(path)) = (args.export, first) {
        let written = std::fs::create_dir_all(&dir).map_err(|e| e.to_string()).and_then(|_| {
            let create = |name: &str| std::fs::File::create(dir.join(name)).map(std::io::BufWriter::new);
            write_path_csv(&path, create("path.csv").map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
            write_path_binary(&path, create("path.bin").map_err(|e| e.to_string())?).map_err(|e| e.to_string())
        });
        if let Err(e) = written {
            return numerical_error(format!("cannot export path: {e}"));
        }
    }
    match args.format {
        FormatArg::Json => println!("{}", serde_json::to_string_pretty(&report).expect("report serializes")),
        FormatArg::Csv => println!(
            "{} {}: {} paths x {} steps, covariance error {:.3}, pseudo-covariance error {:.3} (units of 5 stderr)",
            if report.passed { "PASS" } else { "FAIL" },
            report.kernel,
            report.paths,
            report.steps,
            report.covariance_error,
            report.pseudo_covariance_error
        ),
    }
    if report.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_VALIDATION)
    }
}

fn validate(args: ValidateArgs) -> ExitCode {
    if let Some(dir) = args.check {
        return match check_output_dir(&dir) {
            Ok(problems) if problems.is_empty() => {
                println!("manifest ok: {}", dir.display());
                ExitCode::SUCCESS
            }
            Ok(problems) => {
                for p in problems {
                    eprintln!("mismatch: {p}");
                }
                ExitCode::from(EXIT_VALIDATION)
            }
            Err(e) => config_error(ConfigError { path: "--check".into(), message: e }),
        };
    }
    let scale = if args.quick { Scale::Quick } else { Scale::Full };
    let mut all_passed = true;
    let mut reports = Vec::new();
    for check in [
        validation::criterion_1,
        validation::criterion_2,
        validation::criterion_3,
        validation::criterion_4,
        validation::criterion_5,
        validation::criterion_6,
        validation::criterion_7,
        validation::criterion_8,
        validation::criterion_9,
    ] {
        let r = check(scale);
        all_passed &= r.passed;
        if let FormatArg::Csv = args.format {
            println!("{}", r.line());
        }
        reports.push(r);
    }
    if let FormatArg::Json = args.format {
        println!("{}", serde_json::to_string_pretty(&reports).expect("reports serialize"));
    }
    if all_passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_VALIDATION)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::RunMarkov(a) => run(a, "markov"),
        Command::RunMemory(a) => run(a, "memory"),
        Command::RunField(a) => run(a, "field"),
        Command::ProbeCausality(a) => probe(a),
        Command::NoiseTest(a) => noise(a),
        Command::Validate(a) => validate(a),
    }
}
