//! Command-line front end: `dldr <train|extract|ptrain|noise|spectrum> --config PATH`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dldr::runner::config::Seeds;
use dldr::runner::{self, ExperimentConfig};

#[derive(Parser)]
#[command(name = "dldr", version, about = "Trajectory subspaces for neural-network training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the baseline and sample its trajectory.
    Train(Common),
    /// Extract the top-d basis from a trajectory.
    Extract {
        #[command(flatten)]
        common: Common,
        /// Trajectory file (default: trajectory.dltr in the output directory).
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
    /// Retrain from w_0 inside the extracted subspace.
    Ptrain {
        #[command(flatten)]
        common: Common,
        /// Basis file (default: basis.dlbs in the output directory).
        #[arg(long)]
        basis: Option<PathBuf>,
        /// Initial point (default: init.dltr in the output directory).
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Label-noise comparison: baseline, extraction and P-SGD under corrupted labels.
    Noise(Common),
    /// Variance ratio of every trajectory component.
    Spectrum {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Subspace dimension (overrides `subspace.d`).
    #[arg(long)]
    d: Option<usize>,
    /// Run seed; sets init, data and noise seeds to N, N+1 and N+2.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> dldr::Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        if let Some(d) = self.d {
            if d == 0 {
                return Err(dldr::Error::Config { key: "--d".into(), message: "must be at least 1".into() });
            }
            cfg.d = d;
        }
        if let Some(seed) = self.seed {
            cfg.seeds = Seeds::from_run_seed(seed);
        }
        Ok(cfg)
    }
}

fn pct(x: f64) -> String {
    format!("{:.2}%", 100.0 * x)
}

fn run(cli: Cli) -> dldr::Result<()> {
    match cli.command {
        Command::Train(common) => {
            let cfg = common.load()?;
            let res = runner::cmd_train(&cfg)?;
            let last = res.outcome.rows.last().unwrap();
            println!(
                "trained {} epochs, {} snapshots; final test accuracy {} (best {}); artifacts in {}",
                last.epoch,
                res.outcome.samples,
                pct(res.outcome.final_test_acc),
                pct(res.outcome.best_test_acc),
                res.dir.display()
            );
        }
        Command::Extract { common, trajectory } => {
            let cfg = common.load()?;
            let path = trajectory.unwrap_or_else(|| cfg.output_dir.join(runner::TRAJECTORY_FILE));
            let (basis, spectrum) = runner::cmd_extract(&path, cfg.d, &cfg.output_dir)?;
            let captured: f64 = basis.variance_ratios.iter().sum();
            println!(
                "basis of dimension {} (requested {}) from {} snapshots captures {} of the variance",
                basis.dim(),
                cfg.d,
                spectrum.ratios.len(),
                pct(captured)
            );
        }
        Command::Ptrain { common, basis, init } => {
            let cfg = common.load()?;
            let basis = basis.unwrap_or_else(|| cfg.output_dir.join(runner::BASIS_FILE));
            let init = init.unwrap_or_else(|| cfg.output_dir.join(runner::INIT_FILE));
            let out = runner::cmd_ptrain(&cfg, &basis, &init)?;
            println!(
                "projected training: final test accuracy {} (best {}), confinement residual {:.2e}",
                pct(out.final_test_acc),
                pct(out.best_test_acc),
                out.confinement
            );
        }
        Command::Noise(common) => {
            let cfg = common.load()?;
            let s = runner::cmd_noise(&cfg)?;
            println!(
                "noise fraction {}: SGD final {}, SGD best {}, P-SGD final {}",
                s.fraction,
                pct(s.sgd_final),
                pct(s.sgd_best),
                pct(s.psgd_final)
            );
        }
        Command::Spectrum { common, trajectory } => {
            let cfg = common.load()?;
            let path = trajectory.unwrap_or_else(|| cfg.output_dir.join(runner::TRAJECTORY_FILE));
            let s = runner::cmd_spectrum(&path, &cfg.output_dir)?;
            let mut cum = 0.0;
            for (i, r) in s.ratios.iter().enumerate() {
                cum += r;
                println!("{:>3}  {:.6}  {:.6}", i + 1, r, cum);
            }
        }
    }
    Ok(())
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
