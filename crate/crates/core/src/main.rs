use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use povm_tomo::harness::config::ExperimentConfig;
use povm_tomo::harness::{self, ReconstructSource};

#[derive(Parser)]
#[command(name = "povm-tomo", version, about = "Quantum state tomography with generative models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a measurement dataset from the configured state.
    GenData,
    /// Train a model; generates the dataset when none is given.
    Train {
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Evaluate checkpoints against the configured state.
    Eval {
        /// Repeat to average metrics over several checkpoints; defaults to
        /// `<out>/best.ckpt`.
        #[arg(long)]
        checkpoint: Vec<PathBuf>,
    },
    /// Sample-complexity sweep over GHZ sizes and noise levels.
    Sweep,
    /// Dense density-matrix reconstruction, from the exact state by default.
    Reconstruct {
        #[arg(long, conflicts_with = "dataset")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let c = &cli.common;
    if let Some(t) = c.threads {
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global().context("thread pool")?;
    }
    let path = c.config.as_ref().context("--config is required")?;
    let mut config = ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(s) = c.seed {
        config.seed = s;
    }
    let out = &c.out;
    match &cli.command {
        Command::GenData => {
            let d = harness::cmd_gen_data(&config, out)?;
            println!("wrote {} samples to {}", d.header.n_samples, out.join("dataset.bin").display());
        }
        Command::Train { dataset } => {
            let t = harness::cmd_train(&config, dataset.as_deref(), out)?;
            let last = t.rows.last().context("no epochs")?;
            println!(
                "trained {} epochs, final train NLL {:.5}, best val NLL {:.5}",
                t.rows.len(),
                last.train_nll,
                t.best.meta.val_nll.unwrap_or(f64::NAN)
            );
        }
        Command::Eval { checkpoint } => {
            let cks = if checkpoint.is_empty() { vec![out.join("best.ckpt")] } else { checkpoint.clone() };
            let e = harness::cmd_eval(&config, &cks, out)?;
            for r in &e.metrics {
                println!("{} = {:.6} ± {:.6}", r.metric, r.value, r.stderr);
            }
        }
        Command::Sweep => {
            let s = harness::cmd_sweep(&config, out)?;
            for t in &s.thresholds {
                println!("N={} p={} N_s*={:.0} ({:?})", t.n, t.p, t.ns_star, t.censoring);
            }
            for f in &s.fits {
                println!("p={} slope={:.1} r={:.3}", f.p, f.slope, f.r);
            }
        }
        Command::Reconstruct { checkpoint, dataset } => {
            let source = match (checkpoint, dataset) {
                (Some(p), _) => ReconstructSource::Checkpoint(p),
                (None, Some(p)) => ReconstructSource::Dataset(p),
                (None, None) => ReconstructSource::Exact,
            };
            let s = harness::cmd_reconstruct(&config, source, out)?;
            println!(
                "min eigenvalue {:.3e}, trace deviation {:.3e}, fidelity {}",
                s.diagnostics.min_eigenvalue,
                s.diagnostics.trace_deviation,
                s.fidelity.map_or("n/a".into(), |f| format!("{f:.6}"))
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
