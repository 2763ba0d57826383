use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;

use relubias::experiment::{
    emit_plot, generate_datasets, parse_constants, parse_seeds, run_experiment, verify_artifacts, ExperimentConfig,
    Scenario,
};
use relubias::min_norm::{min_norm_single, min_norm_two, MinNormOptions};
use relubias::spectral_data::Dataset;
use relubias::{Error, Result};

#[derive(Parser)]
#[command(name = "relubias", version, about = "Gradient descent on shallow ReLU networks and its min-norm limits")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample datasets for a scenario.
    Gen(ExperimentArgs),
    /// Run a scenario and write per-seed artifacts.
    Run(ExperimentArgs),
    /// Run the dimension sweep, aggregate and plot.
    Sweep(ExperimentArgs),
    /// Solve the min-norm interpolation program for a saved dataset.
    Minnorm {
        #[arg(long)]
        dataset: PathBuf,
        /// 1 for a single positive neuron, 2 for a (+, −) pair.
        #[arg(long, default_value_t = 1)]
        neurons: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-check a saved run.
    Verify {
        /// A seed directory holding trajectory.csv, dataset.json and summary.json.
        #[arg(long)]
        dir: Option<PathBuf>,
        #[arg(long, required_unless_present = "dir")]
        trajectory: Option<PathBuf>,
        #[arg(long, required_unless_present = "dir")]
        dataset: Option<PathBuf>,
        #[arg(long, required_unless_present = "dir")]
        summary: Option<PathBuf>,
    },
    /// Render an aggregate CSV as SVG.
    Plot {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ExperimentArgs {
    /// JSON experiment config; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    scenario: Option<String>,
    /// Comma-separated seeds.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Constant overrides, e.g. `C=12,C_y=3`.
    #[arg(long)]
    constants: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed_offset: u64,
}

impl ExperimentArgs {
    fn config(&self, default: Scenario) -> Result<ExperimentConfig> {
        let mut cfg = match (&self.config, &self.scenario) {
            (Some(path), _) => ExperimentConfig::from_json(&fs::read_to_string(path)?)?,
            (None, Some(name)) => ExperimentConfig::preset(Scenario::parse(name)?),
            (None, None) => ExperimentConfig::preset(default),
        };
        if let (Some(_), Some(name)) = (&self.config, &self.scenario) {
            cfg.scenario = Scenario::parse(name)?;
        }
        if let Some(s) = &self.seeds {
            cfg.seeds = parse_seeds(s)?;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        if self.eta.is_some() {
            cfg.eta = self.eta;
        }
        if self.max_iters.is_some() {
            cfg.max_iters = self.max_iters;
        }
        if let Some(c) = &self.constants {
            cfg.constants.extend(parse_constants(c)?);
        }
        let cfg = cfg.with_seed_offset(self.seed_offset);
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run_scenario(cfg: &ExperimentConfig) -> Result<ExitCode> {
    let manifest = run_experiment(cfg)?;
    for e in &manifest.errors {
        eprintln!("seed {} (d = {}) failed at {}: {}", e.seed, e.d, e.stage, e.message);
    }
    if let Some(fit) = manifest.sweep.as_ref().and_then(|s| s.fit) {
        println!("slope {:.4} (r² {:.4})", fit.slope, fit.r2);
    }
    println!(
        "{} runs, {} errors, artifacts in {}",
        manifest.runs.len() + manifest.gram.len(),
        manifest.errors.len(),
        cfg.output_dir.display()
    );
    Ok(if manifest.errors.is_empty() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn verify(dir: Option<&Path>, t: Option<PathBuf>, d: Option<PathBuf>, s: Option<PathBuf>) -> Result<ExitCode> {
    let pick = |given: Option<PathBuf>, name: &str| -> Result<PathBuf> {
        given
            .or_else(|| dir.map(|p| p.join(name)))
            .ok_or_else(|| Error::InvalidArgument(format!("missing path for {name}")))
    };
    let report = verify_artifacts(&pick(t, "trajectory.csv")?, &pick(d, "dataset.json")?, &pick(s, "summary.json")?)?;
    for c in &report.checks {
        let status = if c.skipped {
            "SKIP"
        } else if c.passed {
            "PASS"
        } else {
            "FAIL"
        };
        println!("{status} {}: {}", c.name, c.detail);
    }
    Ok(if report.passed { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.cmd {
        Command::Gen(a) => {
            let cfg = a.config(Scenario::SingleThm)?;
            for p in generate_datasets(&cfg)? {
                println!("{}", p.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Run(a) => run_scenario(&a.config(Scenario::SingleThm)?),
        Command::Sweep(a) => {
            let cfg = a.config(Scenario::SingleSweepD)?;
            if !cfg.scenario.is_sweep() {
                return Err(Error::InvalidArgument(format!("{} is not a sweep scenario", cfg.scenario.name())));
            }
            run_scenario(&cfg)
        }
        Command::Minnorm { dataset, neurons, out } => {
            let ds = Dataset::from_json(&fs::read_to_string(&dataset)?)?;
            let opts = MinNormOptions::default();
            let sol = match neurons {
                1 => min_norm_single(&ds, &opts)?,
                2 => min_norm_two(&ds, &opts)?,
                k => return Err(Error::InvalidArgument(format!("--neurons must be 1 or 2, got {k}"))),
            };
            let text = serde_json::to_string_pretty(&sol.to_json())? + "\n";
            match out {
                Some(p) => fs::write(p, text)?,
                None => print!("{text}"),
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { dir, trajectory, dataset, summary } => verify(dir.as_deref(), trajectory, dataset, summary),
        Command::Plot { input, out } => {
            emit_plot(&input, &out)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
