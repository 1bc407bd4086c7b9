use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fgash::config::{ModelTag, PacketConfig, PotentialConfig, SimulationConfig};
use fgash::error::{AppError, AppResult};
use fgash::experiments;
use fgash::io::{write_csv, write_csv_to, write_json, WaveFunctionTable};
use fgash::pipeline::{compare, provenance, run_experiment, run_oracle, write_run_outputs};
use fgash::reference::{solve, ReferenceParams, SpectralGrid};
use fgash::study;
use fgash_core::potentials::Surface;
use fgash_core::reconstruction::{GridSpec, WaveFunctionGrid};
use serde::Serialize;

/// Diabatic frozen-Gaussian surface hopping for two-level semiclassical
/// Schrödinger equations. Set FGASH_WORKERS to bound the worker pool.
#[derive(Debug, Parser)]
#[command(name = "fgash", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Surface-hopping run: CSV of (u0, u1) and a JSON summary.
    Run(RunArgs),
    /// Spectral reference solution as CSV.
    Reference(ReferenceArgs),
    /// Deterministic hop-count series truncated after 0 or 1 hops.
    Oracle {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(0..=1))]
        max_hops: u8,
    },
    /// Relative L² differences between two wave-function CSV files.
    Compare { a: PathBuf, b: PathBuf },
    /// Parameter sweep; prints a JSON study result.
    Study {
        kind: StudyKind,
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Prints a built-in example configuration (1 to 7).
    Example { number: usize },
}

#[derive(Debug, Args)]
struct RunArgs {
    config: PathBuf,
    /// Overrides `output.csv`.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Overrides `output.summary`; the summary is printed when no path is set.
    #[arg(long)]
    summary: Option<PathBuf>,
    #[arg(long)]
    trajectories: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Skips the reference solution and error metrics.
    #[arg(long)]
    no_reference: bool,
}

impl RunArgs {
    fn load(&self) -> AppResult<SimulationConfig> {
        let mut config = SimulationConfig::load(&self.config)?;
        if let Some(path) = &self.csv {
            config.output.csv = Some(path.clone());
        }
        if let Some(path) = &self.summary {
            config.output.summary = Some(path.clone());
        }
        if let Some(n) = self.trajectories {
            config.run.trajectories = n;
        }
        if let Some(seed) = self.seed {
            config.run.master_seed = seed;
        }
        if self.no_reference {
            config.reference.enabled = false;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Args)]
struct ReferenceArgs {
    #[arg(long, value_enum)]
    model: ModelArg,
    #[arg(long)]
    epsilon: f64,
    #[arg(long)]
    delta: f64,
    /// Final time; negative values run backwards.
    #[arg(long = "T", allow_negative_numbers = true)]
    final_time: f64,
    /// Defaults to ε/32.
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long = "grid-n")]
    grid_n: usize,
    /// Periodic domain `lower,upper`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    domain: Vec<f64>,
    #[arg(long, default_value_t = 12.5)]
    alpha: f64,
    #[arg(long, default_value_t = -1.5, allow_negative_numbers = true)]
    center: f64,
    #[arg(long, default_value_t = 2.0, allow_negative_numbers = true)]
    momentum: f64,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModelArg {
    Simple,
    Dual,
    Extended,
}

impl From<ModelArg> for ModelTag {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Simple => ModelTag::Simple,
            ModelArg::Dual => ModelTag::Dual,
            ModelArg::Extended => ModelTag::Extended,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StudyKind {
    Conv,
    Marcus,
    Ntraj,
    Avoided,
}

fn print_json<T: Serialize>(value: &T) -> AppResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(anyhow::Error::from)?;
    println!("{text}");
    Ok(())
}

fn emit_summary<T: Serialize>(path: Option<&PathBuf>, value: &T) -> AppResult<()> {
    match path {
        Some(path) => Ok(write_json(path, value)?),
        None => print_json(value),
    }
}

fn reference(args: &ReferenceArgs) -> AppResult<()> {
    let [lower, upper] = args.domain[..] else {
        return Err(AppError::invalid("--domain takes two values: lower,upper"));
    };
    let potential = PotentialConfig::of(args.model.into()).build();
    let packet = PacketConfig {
        alpha: args.alpha,
        center: args.center,
        momentum: args.momentum,
    }
    .build()?;
    let spec = GridSpec::new(lower, upper, args.grid_n)?;
    let grid = SpectralGrid::new(spec, args.epsilon)?;
    let u0 = WaveFunctionGrid::from_fn(spec, args.epsilon, |s, x| match s {
        Surface::Zero => packet.evaluate(x, args.epsilon),
        Surface::One => Default::default(),
    });
    let mut params = ReferenceParams::new(args.epsilon, args.delta, args.final_time);
    if let Some(dt) = args.dt {
        params = params.with_dt(dt);
    }
    let u = solve(&u0, &grid, &potential, &params)?;
    let lines = vec![format!(
        "fgash reference {} model={} epsilon={} delta={} T={} dt={} alpha={} center={} momentum={}",
        env!("CARGO_PKG_VERSION"),
        ModelTag::from(args.model).tag(),
        args.epsilon,
        args.delta,
        args.final_time,
        params.dt,
        args.alpha,
        args.center,
        args.momentum
    )];
    let table = WaveFunctionTable::without_errors(u);
    match &args.out {
        Some(path) => write_csv(path, &table, &lines)?,
        None => write_csv_to(std::io::stdout().lock(), &table, &lines)?,
    }
    Ok(())
}

fn execute(cli: Cli) -> AppResult<()> {
    match cli.command {
        Command::Run(args) => {
            let config = args.load()?;
            let artifacts = run_experiment(&config)?;
            write_run_outputs(&config, &artifacts)?;
            if config.output.summary.is_none() {
                print_json(&artifacts.summary)?;
            }
            Ok(())
        }
        Command::Reference(args) => reference(&args),
        Command::Oracle { run, max_hops } => {
            let config = run.load()?;
            let out = run_oracle(&config, max_hops as usize)?;
            if let Some(path) = &config.output.csv {
                let table = WaveFunctionTable::without_errors(out.grid);
                write_csv(path, &table, &provenance("oracle", &config))?;
            }
            emit_summary(config.output.summary.as_ref(), &out.summary)
        }
        Command::Compare { a, b } => print_json(&compare(&a, &b)?),
        Command::Study { kind, config, out } => {
            let config = SimulationConfig::load(&config)?;
            let result = match kind {
                StudyKind::Conv => study::study_convergence(&config)?,
                StudyKind::Marcus => study::study_marcus(&config)?,
                StudyKind::Ntraj => study::study_trajectory_scaling(&config)?,
                StudyKind::Avoided => study::study_avoided(&config)?,
            };
            emit_summary(out.as_ref(), &result)
        }
        Command::Example { number } => {
            let config = experiments::builtin(number)
                .ok_or_else(|| AppError::invalid(format!("no built-in example {number}; use 1 to 7")))?;
            print!("{}", config.to_toml());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
