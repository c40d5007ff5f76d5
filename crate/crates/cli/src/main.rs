use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use splatsel::harness::{self, Mode, RunConfig};
use splatsel::report::read_log_csv;

#[derive(Parser)]
#[command(name = "splatsel", version, about = "2D Gaussian splatting with natural-selection pruning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on the images named in a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// ours, ablation_no_prior, ablation_strong_prior, baseline_opacity,
        /// baseline_render or no_prune
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Keep wall time out of the summary so reruns are bitwise identical.
        #[arg(long)]
        reproducible: bool,
    },
    /// Plot a training log.
    Plot {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tabulate the summaries of several runs.
    Compare {
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn train(config: PathBuf, mode: Option<Mode>, seed: Option<u64>, out: Option<PathBuf>, reproducible: bool) -> Result<()> {
    let mut cfg = RunConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
    if let Some(m) = mode {
        cfg.mode = m;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(o) = out {
        cfg.output_dir = o;
    }
    cfg.reproducible |= reproducible;
    let dir = cfg.output_dir.clone();
    let s = harness::run(cfg)?;
    println!(
        "{}: psnr {:.3} dB, ssim {:.4}, {} primitives (budget {}), completion {}",
        s.mode,
        s.psnr,
        s.ssim,
        s.final_count,
        s.budget,
        s.completion_iters.map_or("-".to_string(), |c| format!("+{c}")),
    );
    println!("wrote {}", dir.display());
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Train {
            config,
            mode,
            seed,
            out,
            reproducible,
        } => train(config, mode, seed, out, reproducible),
        Command::Plot { log, out } => {
            let rows = read_log_csv(&log).with_context(|| format!("reading {}", log.display()))?;
            if rows.len() < 2 {
                bail!("{} has fewer than two rows", log.display());
            }
            for p in harness::emit_plots(&rows, &out)? {
                println!("{}", p.display());
            }
            Ok(())
        }
        Command::Compare { runs, out } => {
            let rows = harness::compare_runs(&runs, &out)?;
            for (mode, psnr) in harness::median_psnr_by_mode(&rows) {
                println!("{mode:<24} median psnr {psnr:.3} dB");
            }
            println!("wrote {}", out.display());
            Ok(())
        }
    }
}
