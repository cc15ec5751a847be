use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use evoroute::commands::{self, PolicySpec, RunConfig, SweepAxis};
use evoroute::{Error, MaskMode, Result};

#[derive(Parser)]
#[command(
    name = "evoroute",
    version,
    about = "Connection routing simulator and neuroevolution trainer"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overrides the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct Parallel {
    /// Worker threads for episode evaluation.
    #[arg(long, default_value_t = 1)]
    parallelism: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic workload.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Convert an external CSV trace into the workload format.
    Ingest {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trace: PathBuf,
        /// JSON column mapping; defaults to the workload format.
        #[arg(long)]
        mapping: Option<PathBuf>,
    },
    /// Train a population of neural routers.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        parallel: Parallel,
        /// Simulation budget, overrides the configuration.
        #[arg(long)]
        max_simulations: Option<u64>,
        #[arg(long)]
        mask_mode: Option<MaskArg>,
    },
    /// Evaluate one policy over several seeds.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        parallel: Parallel,
        /// random, round_robin, least_connection, least_duration_gap or neural:<genome.json>
        #[arg(long)]
        policy: String,
        #[arg(long)]
        n_seeds: Option<usize>,
        /// Evaluate on this workload CSV instead of generated ones.
        #[arg(long)]
        workload: Option<PathBuf>,
        #[arg(long)]
        mask_mode: Option<MaskArg>,
    },
    /// Evaluate policies along one configuration axis.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        parallel: Parallel,
        /// load, servers or sigma
        #[arg(long)]
        axis: String,
        /// Comma separated axis values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        /// Comma separated policies.
        #[arg(long)]
        policy: String,
        #[arg(long)]
        n_seeds: Option<usize>,
        #[arg(long)]
        mask_mode: Option<MaskArg>,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum MaskArg {
    Exclude,
    Zero,
}

impl From<MaskArg> for MaskMode {
    fn from(m: MaskArg) -> Self {
        match m {
            MaskArg::Exclude => MaskMode::Exclude,
            MaskArg::Zero => MaskMode::Zero,
        }
    }
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::from_json_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn apply_overrides(cfg: &mut RunConfig, n_seeds: Option<usize>, mask: Option<MaskArg>) {
    if n_seeds.is_some() {
        cfg.n_seeds = n_seeds;
    }
    if let Some(m) = mask {
        cfg.evo.mask_mode = m.into();
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { common } => {
            let cfg = load_config(&common)?;
            let reqs = commands::generate(&cfg, &common.out)?;
            println!(
                "wrote {} requests to {}",
                reqs.len(),
                common.out.join("workload.csv").display()
            );
        }
        Command::Ingest {
            common,
            trace,
            mapping,
        } => {
            let cfg = load_config(&common)?;
            let report = commands::ingest(&cfg, &trace, mapping.as_deref(), &common.out)?;
            println!(
                "read {} rows, kept {}, skipped {}",
                report.rows_read, report.rows_kept, report.rows_skipped
            );
        }
        Command::Train {
            common,
            parallel,
            max_simulations,
            mask_mode,
        } => {
            let mut cfg = load_config(&common)?;
            apply_overrides(&mut cfg, None, mask_mode);
            if let Some(budget) = max_simulations {
                cfg.evo.max_simulations = budget;
            }
            let outcome = commands::train_command(&cfg, &common.out, parallel.parallelism)?;
            println!(
                "{} generations, {} simulations, final front of {}",
                outcome.history.len(),
                outcome.simulations,
                outcome.final_front.len()
            );
        }
        Command::Evaluate {
            common,
            parallel,
            policy,
            n_seeds,
            workload,
            mask_mode,
        } => {
            let mut cfg = load_config(&common)?;
            apply_overrides(&mut cfg, n_seeds, mask_mode);
            let policy = PolicySpec::parse(&policy)?;
            let report = commands::evaluate(
                &cfg,
                &policy,
                workload.as_deref(),
                &common.out,
                parallel.parallelism,
            )?;
            println!(
                "{}: f_balance {:.4} +- {:.4}, f_idle {:.4} +- {:.4} min over {} seeds ({} aborted)",
                report.policy,
                report.f_balance.mean,
                report.f_balance.std,
                report.f_idle.mean,
                report.f_idle.std,
                report.n_seeds,
                report.aborted
            );
            if !report.std_defined {
                println!("single seed: standard deviation not defined");
            }
        }
        Command::Sweep {
            common,
            parallel,
            axis,
            values,
            policy,
            n_seeds,
            mask_mode,
        } => {
            let mut cfg = load_config(&common)?;
            apply_overrides(&mut cfg, n_seeds, mask_mode);
            let axis: SweepAxis = axis.parse()?;
            let policies = PolicySpec::parse_list(&policy)?;
            let (rows, errors) = commands::sweep(
                &cfg,
                axis,
                &values,
                &policies,
                &common.out,
                parallel.parallelism,
            )?;
            println!("{} rows, {} errors", rows.len(), errors.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    e.exit_code() as u8
}
