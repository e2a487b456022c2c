use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use oscloc_cli::commands;
use oscloc_cli::config::parse_delay_list;
use oscloc_cli::{CliError, Result, RunConfig};

#[derive(Parser)]
#[command(name = "oscloc", version, about = "Locate forced oscillation sources by time-series classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Only log warnings and errors.
    #[arg(long, short)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate labelled training and testing datasets.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Grid description (TOML); the built-in two-area system otherwise.
        #[arg(long)]
        grid: Option<PathBuf>,
    },
    /// Learn a Mahalanobis metric from a training dataset.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Classify series files or a dataset directory.
    Classify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        metric: Option<PathBuf>,
        #[arg(long)]
        training: Option<PathBuf>,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Score a labelled test set and optionally sweep the test delay.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        metric: Option<PathBuf>,
        #[arg(long)]
        training: Option<PathBuf>,
        #[arg(long)]
        testing: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        /// Comma-separated delays in seconds, e.g. `3,4,5`.
        #[arg(long)]
        delay_sweep: Option<String>,
    },
    /// Summarise a dataset directory or metric file.
    Inspect {
        #[command(flatten)]
        common: Common,
        path: PathBuf,
    },
}

fn setup(common: &Common) -> Result<RunConfig> {
    let level = if common.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init()
        .ok();
    if let Ok(v) = std::env::var("OSC_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| CliError::input(format!("OSC_THREADS must be a non-negative integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().ok();
    }
    RunConfig::load_or_default(common.config.as_deref())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { common, out, seed, grid } => {
            let mut cfg = setup(&common)?;
            if let Some(s) = seed {
                cfg.scenario.rng_seed = s;
            }
            if grid.is_some() {
                cfg.inputs.grid = grid;
            }
            let s = commands::simulate(&cfg, &out)?;
            println!(
                "wrote {} training and {} testing samples to {} ({} scenarios accepted, {} rejected)",
                s.training,
                s.testing,
                out.display(),
                s.accepted,
                s.rejected
            );
        }
        Command::Train { common, dataset, out, seed } => {
            let mut cfg = setup(&common)?;
            if let Some(s) = seed {
                cfg.learning.rng_seed = s;
            }
            if dataset.is_some() {
                cfg.inputs.dataset = dataset;
            }
            let t = commands::train_metric(&cfg, &out)?;
            println!(
                "{} after {} iterations, final loss {}",
                if t.converged { "converged" } else { "not converged" },
                t.iterations_run,
                t.loss_trace.last().copied().unwrap_or(0.0)
            );
        }
        Command::Classify { common, metric, training, input, out, k } => {
            let mut cfg = setup(&common)?;
            override_path(&mut cfg.inputs.metric, metric);
            override_path(&mut cfg.inputs.training, training);
            override_path(&mut cfg.inputs.input, input);
            if let Some(k) = k {
                cfg.classifier.k = k;
            }
            for (name, _, p) in commands::classify(&cfg, &out)? {
                println!("{name}\t{}", p.label);
            }
        }
        Command::Evaluate { common, metric, training, testing, out, k, delay_sweep } => {
            let mut cfg = setup(&common)?;
            override_path(&mut cfg.inputs.metric, metric);
            override_path(&mut cfg.inputs.training, training);
            override_path(&mut cfg.inputs.testing, testing);
            if let Some(k) = k {
                cfg.classifier.k = k;
            }
            if let Some(list) = delay_sweep {
                cfg.classifier.delay_sweep = Some(parse_delay_list(&list)?);
            }
            let outcome = commands::evaluate(&cfg, &out)?;
            print!("{}", oscloc_core::io::format_report_table(&outcome.report));
            for p in &outcome.sweep {
                println!("delay {} s: {:.2}%", p.delay, p.report.overall_accuracy);
            }
        }
        Command::Inspect { common, path } => {
            setup(&common)?;
            print!("{}", commands::inspect(&path)?);
        }
    }
    Ok(())
}

fn override_path(slot: &mut Option<PathBuf>, flag: Option<PathBuf>) {
    if flag.is_some() {
        *slot = flag;
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
