use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use volmark::commands::{self, Inputs};
use volmark::config::Gcp;
use volmark::{CliError, RunConfig};
use volmark_core::phantom::Split;

#[derive(Parser)]
#[command(name = "volmark", version, about = "Volumetric landmark detection with self-supervised refinement")]
struct Cli {
    /// TOML or JSON run configuration; defaults apply to anything it omits.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic phantom dataset.
    PhantomGen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n_train: Option<usize>,
        #[arg(long)]
        n_test: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Left-limb intensity offset (0 makes left and right look alike).
        #[arg(long)]
        left_offset: Option<f64>,
        /// Replace files from an earlier run.
        #[arg(long)]
        overwrite: bool,
    },
    /// Train a detector on a dataset's training split.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Model directory to write.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// off, block_boundary or every_k:<k>.
        #[arg(long)]
        gcp: Option<Gcp>,
    },
    /// Predict poses.
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        inputs: InputArgs,
        #[arg(long)]
        out: PathBuf,
        /// Also write the 16 heatmap channels as volumes.
        #[arg(long)]
        dump_heatmaps: bool,
    },
    /// Predict poses with per-case self-supervised refinement.
    Refine {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        library: PathBuf,
        #[command(flatten)]
        inputs: InputArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        k: Option<usize>,
        /// Keep every iteration's pose in the trace.
        #[arg(long)]
        snapshots: bool,
    },
    /// Score predicted poses against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        /// Dataset directory (test split) or a directory of pose files.
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a pose library from a dataset's training poses.
    Library {
        #[arg(long)]
        data: PathBuf,
        /// Library JSON file to write.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
    All,
}

#[derive(Args)]
struct InputArgs {
    /// Dataset directory to read cases from.
    #[arg(long, conflicts_with = "volumes")]
    data: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Volume header files (`.json`).
    #[arg(long, num_args = 1..)]
    volumes: Vec<PathBuf>,
}

impl InputArgs {
    fn resolve(self) -> Result<Inputs, CliError> {
        match (self.data, self.volumes.is_empty()) {
            (Some(dir), true) => {
                let split = match self.split {
                    SplitArg::Train => Some(Split::Train),
                    SplitArg::Test => Some(Split::Test),
                    SplitArg::All => None,
                };
                Ok(Inputs::Dataset { dir, split })
            }
            (None, false) => Ok(Inputs::Volumes(self.volumes)),
            _ => Err(CliError::Usage("pass either --data or --volumes".into())),
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = RunConfig::load_or_default(cli.config.as_deref())?;
    match cli.command {
        Command::PhantomGen { out, n_train, n_test, seed, left_offset, overwrite } => {
            cfg.dataset.n_train = n_train.unwrap_or(cfg.dataset.n_train);
            cfg.dataset.n_test = n_test.unwrap_or(cfg.dataset.n_test);
            cfg.dataset.seed = seed.unwrap_or(cfg.dataset.seed);
            cfg.phantom.left_intensity_offset = left_offset.unwrap_or(cfg.phantom.left_intensity_offset);
            let m = commands::phantom_gen(&cfg, &out, overwrite)?;
            println!("{} cases written to {}", m.cases.len(), out.display());
        }
        Command::Train { data, out, epochs, lr, seed, gcp } => {
            cfg.train.epochs = epochs.unwrap_or(cfg.train.epochs);
            cfg.train.adam.lr = lr.unwrap_or(cfg.train.adam.lr);
            cfg.train.seed = seed.unwrap_or(cfg.train.seed);
            cfg.gcp = gcp.unwrap_or(cfg.gcp);
            let s = commands::train(&cfg, &data, &out)?;
            println!("trained {} steps, final epoch loss {:.6e}", s.steps, s.final_loss);
        }
        Command::Infer { model, inputs, out, dump_heatmaps } => {
            let written = commands::infer_cmd(&cfg, &model, &inputs.resolve()?, &out, dump_heatmaps)?;
            println!("{} poses written to {}", written.len(), out.display());
        }
        Command::Refine { model, library, inputs, out, iterations, lr, k, snapshots } => {
            cfg.refine.iterations = iterations.unwrap_or(cfg.refine.iterations);
            cfg.refine.lr = lr.unwrap_or(cfg.refine.lr);
            cfg.refine.k = k.unwrap_or(cfg.refine.k);
            cfg.refine.snapshot_each_iter |= snapshots;
            let s = commands::refine_cmd(&cfg, &model, &library, &inputs.resolve()?, &out)?;
            println!(
                "{} completed, {} declined, {} aborted, {} failed",
                s.completed, s.declined, s.aborted, s.failed
            );
            if s.failed > 0 {
                return Err(CliError::Format { path: out.join("refine.json"), msg: format!("{} cases failed", s.failed) });
            }
        }
        Command::Eval { pred, gt, out } => {
            let r = commands::eval_cmd(&cfg, &pred, &gt, &out)?;
            println!("mean error {:.3} mm, AUC {:.2}%", r.report.overall_mean_mm, r.report.overall_auc_percent);
        }
        Command::Library { data, out } => {
            let l = commands::library_cmd(&cfg, &data, &out)?;
            println!("{} atlases written to {}", l.atlases.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
