use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use motion_style::run::{self, output_root};
use motion_style::runconfig::RunConfig;
use motion_style::synth::{write_corpus, CorpusSpec};

/// Motion style transfer: train, transfer, evaluate, and generate synthetic data.
#[derive(Parser)]
#[command(name = "motion-style", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a key-value config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Continue the run stored in this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Run directory; defaults to `<output root>/<run_name>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Apply the style of one BVH file to the content of another.
    Transfer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        content: PathBuf,
        #[arg(long)]
        style: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute CC, SC and SC++ on a labelled test manifest.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        train: PathBuf,
        /// Metrics CSV; defaults to `<output root>/evaluate/metrics.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the procedural BVH corpus and its manifests.
    SynthData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2)]
        variants: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train { config, resume, out } => {
            let (cfg, text) = RunConfig::load(&config)?;
            let dir = out.unwrap_or_else(|| output_root().join(&cfg.run_name));
            let every = (cfg.iterations / 20).max(1);
            let outcome = run::train_run(&cfg, &text, &dir, resume.as_deref(), |it, b| {
                if it % every == 0 || it == cfg.iterations {
                    let t = &b.terms;
                    eprintln!(
                        "iter {it:>7}  total {:.4}  recon {:.4}  L_D {:.4}  adv_d {:.4}",
                        b.total, t.recon, t.disentangle, b.adv_d
                    );
                }
            })
            .with_context(|| format!("training run in {}", dir.display()))?;
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            println!("{}", outcome.checkpoint.display());
        }
        Command::Transfer { ckpt, content, style, out } => {
            let files = run::transfer_files(&ckpt, &content, &style, &out)?;
            println!("wrote {} ({} frames)", files.bvh.display(), files.frames);
            println!("attention {}", files.attention.display());
        }
        Command::Evaluate { ckpt, test, train, out } => {
            let out = out.unwrap_or_else(|| output_root().join("evaluate").join("metrics.csv"));
            let report = run::evaluate_files(&ckpt, &test, &train, &out)?;
            if report.scpp_skipped > 0 {
                eprintln!("warning: {} pairs had no training clips for SC++", report.scpp_skipped);
            }
            print!("{}", report.to_csv()?);
        }
        Command::SynthData { out, variants, seed } => {
            let spec = CorpusSpec { variants, seed, ..CorpusSpec::default() };
            for path in write_corpus(&out, &spec).with_context(|| format!("writing corpus to {}", out.display()))? {
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}
