use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Parser};
use olfc_cli::{run_experiment, Experiment, RunConfig, ScenarioSource};
use olfc_core::scenario::{preset_names, preset_source};

/// Simulate distributed load-side frequency control on an electricity-heat network.
#[derive(Debug, Parser)]
#[command(name = "olfc", version)]
#[command(group(ArgGroup::new("source").args(["scenario", "preset", "dump_preset", "list_presets"]).required(true)))]
struct Args {
    /// Scenario file (TOML).
    #[arg(long, value_name = "PATH")]
    scenario: Option<PathBuf>,

    /// Built-in scenario preset.
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,

    /// Print a built-in preset to stdout and exit.
    #[arg(long, value_name = "NAME")]
    dump_preset: Option<String>,

    /// List built-in presets and exit.
    #[arg(long)]
    list_presets: bool,

    #[arg(long, value_enum, default_value_t = Experiment::Custom)]
    experiment: Experiment,

    /// Output root; runs go to <out>/<scenario>/<label>/.
    #[arg(long, default_value = "runs")]
    out: PathBuf,

    /// Run directory name (defaults to a UTC timestamp).
    #[arg(long)]
    label: Option<String>,

    /// Parallel sweep runs.
    #[arg(long, default_value_t = 1)]
    jobs: usize,

    /// Communication RNG seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Keep every n-th integrator step in trajectory.csv.
    #[arg(long, value_name = "N")]
    decimate: Option<usize>,

    /// Damping multipliers for damping-sweep.
    #[arg(long, value_delimiter = ',', value_name = "K,...")]
    k_grid: Option<Vec<f64>>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    if args.list_presets {
        for name in preset_names() {
            println!("{name}");
        }
        return ExitCode::SUCCESS;
    }
    if let Some(name) = &args.dump_preset {
        return match preset_source(name) {
            Ok(text) => {
                print!("{text}");
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(1)
            }
        };
    }
    let source = match (args.scenario, args.preset) {
        (Some(path), _) => ScenarioSource::File(path),
        (None, Some(name)) => ScenarioSource::Preset(name),
        (None, None) => unreachable!("clap requires a source"),
    };
    let config = RunConfig {
        source,
        out: args.out,
        experiment: args.experiment,
        decimation: args.decimate,
        seed: args.seed,
        jobs: args.jobs.max(1),
        label: args.label,
        k_grid: args.k_grid,
    };
    match run_experiment(&config) {
        Ok(summary) => {
            for run in &summary.runs {
                match &run.error {
                    Some(e) => println!("{}: {} ({e})", run.name, run.verdict),
                    None => println!("{}: {}", run.name, run.verdict),
                }
            }
            println!("artifacts: {}", summary.dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
