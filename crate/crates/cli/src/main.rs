use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use log::info;

use mmfl_core::config::{config_schema, SimulationConfig};
use mmfl_core::experiment::{
    compare, parse_arms, sweep_alpha, validate_selector, Arm, SWEEP_ALPHAS,
};
use mmfl_core::report;
use mmfl_core::scenario::default_profiles;
use mmfl_core::sim::run_simulation;
use mmfl_core::Error;

/// Multi-model federated learning scheduler simulator.
#[derive(Parser, Debug)]
#[command(name = "mmfl-sim", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one simulation; writes rounds.csv and summary.json.
    Run {
        #[command(flatten)]
        common: Common,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run every arm on every seed; writes comparison.csv and comparison_summary.csv.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Comma-separated arms (default: all).
        #[arg(long)]
        arms: Option<String>,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
        seeds: Vec<u64>,
    },
    /// Check the exact selector against exhaustive search; writes oracle.csv.
    ValidateSelector {
        #[arg(long, default_value_t = 1000)]
        instances: usize,
        #[arg(long, default_value_t = 5)]
        max_clients: usize,
        #[arg(long, default_value_t = 3)]
        max_models: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Flammable arm at alpha 0.1, 1 and 10; writes alpha_sweep.csv.
    SweepAlpha {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
        seeds: Vec<u64>,
    },
    /// Write the default device profiles as JSON.
    GenProfiles {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "profiles.json")]
        out: PathBuf,
    },
    /// Write the JSON schema of the config file.
    Schema {
        #[arg(long, default_value = "config.schema.json")]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// Config JSON; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn load_config(path: Option<&Path>) -> mmfl_core::Result<SimulationConfig> {
    match path {
        Some(p) => SimulationConfig::load(p),
        None => Ok(SimulationConfig::default()),
    }
}

/// Marker for a selector/oracle disagreement.
#[derive(Debug)]
struct Mismatch(usize);

impl std::fmt::Display for Mismatch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} instance(s) where the exact selector disagrees with the oracle",
            self.0
        )
    }
}

impl std::error::Error for Mismatch {}

fn execute(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run { common, seed } => {
            let mut cfg = load_config(common.config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let out = run_simulation(cfg.clone())?;
            report::write_run(&common.out, &out, &cfg)?;
            for m in &out.models {
                match m.time_to_accuracy {
                    Some(t) => println!(
                        "{}: target {} reached at t={} (round {})",
                        m.model,
                        m.target_accuracy,
                        report::fmt_sig(t),
                        m.rounds_to_accuracy.unwrap_or(0)
                    ),
                    None => println!(
                        "{}: target {} not reached (final accuracy {})",
                        m.model,
                        m.target_accuracy,
                        report::fmt_sig(m.final_accuracy)
                    ),
                }
            }
            info!("wrote {}", common.out.display());
        }
        Command::Compare {
            common,
            arms,
            seeds,
        } => {
            let cfg = load_config(common.config.as_deref())?;
            let arms = match arms {
                Some(list) => parse_arms(&list)?,
                None => Arm::ALL.to_vec(),
            };
            let c = compare(&cfg, &arms, &seeds)?;
            report::write_atomic(
                &common.out.join("comparison.csv"),
                &report::comparison_csv(&c),
            )?;
            let summary = report::comparison_summary_csv(&c);
            report::write_atomic(&common.out.join("comparison_summary.csv"), &summary)?;
            print!("{summary}");
        }
        Command::ValidateSelector {
            instances,
            max_clients,
            max_models,
            seed,
            out,
        } => {
            let rows = validate_selector(instances, max_clients, max_models, seed)?;
            report::write_atomic(&out.join("oracle.csv"), &report::oracle_csv(&rows))?;
            let bad = rows.iter().filter(|r| !r.equal).count();
            println!("{} instances, {} mismatches", rows.len(), bad);
            if bad > 0 {
                return Err(Mismatch(bad).into());
            }
        }
        Command::SweepAlpha { common, seeds } => {
            let cfg = load_config(common.config.as_deref())?;
            let sweep = sweep_alpha(&cfg, &SWEEP_ALPHAS, &seeds)?;
            report::write_atomic(
                &common.out.join("alpha_sweep.csv"),
                &report::alpha_csv(&sweep),
            )?;
            println!("alpha,model,median_time_to_accuracy,median_final_accuracy");
            for &a in &SWEEP_ALPHAS {
                for m in &cfg.models {
                    let tta = sweep
                        .median_tta(a, &m.id)
                        .map(report::fmt_sig)
                        .unwrap_or_default();
                    let acc = sweep
                        .median_final_accuracy(a, &m.id)
                        .map(report::fmt_sig)
                        .unwrap_or_default();
                    println!("{},{},{tta},{acc}", report::fmt_sig(a), m.id);
                }
            }
        }
        Command::GenProfiles { config, out } => {
            let cfg = load_config(config.as_deref())?;
            let mut text = default_profiles(&cfg.models).to_json();
            text.push('\n');
            report::write_atomic(&out, &text)
                .with_context(|| format!("writing {}", out.display()))?;
        }
        Command::Schema { out } => {
            let mut text = config_schema();
            text.push('\n');
            report::write_atomic(&out, &text)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<Error>() {
                Some(Error::Config(_) | Error::Json { .. }) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
