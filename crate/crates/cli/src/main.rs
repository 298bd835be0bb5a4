use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedcode::experiment::{
    self, load_config, write_sweep_csv, ExperimentConfig, Method, SweepAxis, CONFIG_HELP,
};
use fedcode::Error;

#[derive(Parser)]
#[command(
    name = "fedcode",
    version,
    about = "Codebook-transfer federated learning simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write rounds.csv and summary.csv.
    #[command(after_help = CONFIG_HELP)]
    Run {
        /// TOML config; omit to use the default preset.
        #[arg(long)]
        config: Option<PathBuf>,
        /// fedavg, fedavg_ws or fedcode; overrides the config.
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; overrides `out_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Count bits only, without training.
        #[arg(long)]
        accounting_only: bool,
        /// Client-update worker threads, 0 = all cores.
        #[arg(long)]
        threads: Option<usize>,
        /// Also run FedAvg with the same seed and report the accuracy gap.
        #[arg(long)]
        delta_acc: bool,
    },
    /// Run a grid of experiments and write sweep_rounds.csv and sweep_summary.csv.
    #[command(after_help = CONFIG_HELP)]
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        /// NAME=v1,v2,... with NAME one of K, F1, F2, E, beta, rho. Repeatable.
        #[arg(long = "axis", required = true)]
        axes: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Cells run in parallel on this many threads, 0 = all cores.
        #[arg(long)]
        threads: Option<usize>,
    },
}

fn load(path: Option<&PathBuf>) -> fedcode::Result<ExperimentConfig> {
    match path {
        Some(p) => load_config(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn execute(cli: Cli) -> fedcode::Result<()> {
    match cli.command {
        Command::Run {
            config,
            method,
            seed,
            out,
            accounting_only,
            threads,
            delta_acc,
        } => {
            let mut cfg = load(config.as_ref())?;
            if let Some(m) = method {
                cfg.method = Method::parse(&m).ok_or_else(|| Error::Config {
                    key: "method".into(),
                    msg: format!("`{m}` is not one of fedavg, fedavg_ws, fedcode"),
                })?;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(o) = out {
                cfg.out_dir = o;
            }
            if let Some(t) = threads {
                cfg.threads = t;
            }
            cfg.accounting_only |= accounting_only;
            cfg.validate()?;

            log::info!(
                "running {} for {} rounds, preset {}",
                cfg.method.name(),
                cfg.rounds,
                cfg.preset
            );
            let report = if delta_acc {
                experiment::run_with_reference(&cfg)?
            } else {
                experiment::run(&cfg)?
            };
            report.write_csv(&cfg.out_dir)?;
            let s = &report.summary;
            println!(
                "method={} rounds={} params={} down_dtr={:.3} up_dtr={:.3} total_dtr={:.3} transmitted_mb={:.3}",
                report.method.name(),
                report.rows.len(),
                report.param_count,
                s.dtr.down_dtr,
                s.dtr.up_dtr,
                s.dtr.total_dtr,
                fedcode::accounting::megabytes(s.dtr.fedcode_bits),
            );
            if let (Some(fin), Some(best)) = (s.final_accuracy, s.best_accuracy) {
                println!("final_accuracy={fin:.4} best_accuracy={best:.4}");
            }
            if let Some(d) = s.delta_acc {
                println!("delta_acc={d:+.4}");
            }
            println!("wrote {}", cfg.out_dir.display());
        }
        Command::Sweep {
            config,
            axes,
            out,
            threads,
        } => {
            let mut cfg = load(config.as_ref())?;
            if let Some(o) = out {
                cfg.out_dir = o;
            }
            if let Some(t) = threads {
                cfg.threads = t;
            }
            let axes = axes
                .iter()
                .map(|a| SweepAxis::parse(a))
                .collect::<fedcode::Result<Vec<_>>>()?;
            let cells = experiment::sweep(&cfg, &axes)?;
            write_sweep_csv(&axes, &cells, &cfg.out_dir)?;
            println!("{} cells, wrote {}", cells.len(), cfg.out_dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
