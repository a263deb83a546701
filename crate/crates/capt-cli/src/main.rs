//! `capt` command line: dataset generation, training, evaluation, and
//! single-sample inference for articulated-object joint estimation.

use capt::error::CaptError;
use capt::pipeline::{evaluate, infer, train, write_reports, RunConfig};
use capt::synthdata::{generate_dataset, GenConfig};
use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "capt",
    version,
    about = "Category-level articulated-object joint estimation from partial point clouds"
)]
struct Cli {
    /// JSON run configuration; command flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Random seed (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker thread count; 1 guarantees byte-level reproducibility.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic articulated-object dataset (7:2:1 split).
    Gen {
        #[arg(long)]
        category: Option<String>,
        /// Total number of samples (>= 10).
        #[arg(long)]
        count: Option<usize>,
        /// Points per sampled cloud.
        #[arg(long)]
        n_points: Option<usize>,
        /// Output dataset directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model; saves the best-validation checkpoint.
    Train {
        #[arg(long)]
        category: Option<String>,
        /// Dataset directory holding manifest.json.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// Train the ablation objective with the motion term disabled.
        #[arg(long)]
        no_motion_loss: bool,
        /// Per-step loss log (defaults to the checkpoint path with .csv).
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a dataset split.
    Eval {
        #[arg(long)]
        category: Option<String>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        report_dir: Option<PathBuf>,
        /// Which split to evaluate.
        #[arg(long, default_value = "test")]
        split: String,
        /// Fine-voting band lower multiplier.
        #[arg(long)]
        omega0: Option<f64>,
        /// Fine-voting band upper multiplier (accepts "inf").
        #[arg(long)]
        omega1: Option<f64>,
    },
    /// Run single-sample inference on a stored cloud.
    Infer {
        /// Input sample file (.cpts).
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        category: Option<String>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Write the joint record JSON here as well as stdout.
        #[arg(long)]
        json: Option<PathBuf>,
        /// Write a PLY visualization (cloud colored by predicted segment,
        /// predicted axes red, ground-truth axes green).
        #[arg(long)]
        ply: Option<PathBuf>,
        #[arg(long)]
        omega0: Option<f64>,
        /// Accepts "inf" for an unbounded band.
        #[arg(long)]
        omega1: Option<f64>,
    },
}

fn exit_code(e: &CaptError) -> u8 {
    match e {
        CaptError::Config(_) => 2,
        CaptError::Io { .. } | CaptError::Format(_) => 3,
        _ => 4,
    }
}

fn load_base_config(cli: &Cli) -> Result<RunConfig, CaptError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CaptError> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(CaptError::Config("--threads must be at least 1".to_string()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CaptError::Config(format!("thread pool: {e}")))?;
    }
    let mut cfg = load_base_config(&cli)?;
    match cli.command {
        Command::Gen { category, count, n_points, out } => {
            if let Some(c) = category {
                cfg.category = c;
            }
            if let Some(c) = count {
                cfg.count = c;
            }
            if let Some(n) = n_points {
                cfg.n_points = n;
            }
            if let Some(o) = out {
                cfg.dataset_dir = o;
            }
            let manifest = generate_dataset(&GenConfig {
                category: cfg.category.clone(),
                count: cfg.count,
                n_points: cfg.n_points,
                seed: cfg.seed,
                out_dir: cfg.dataset_dir.clone(),
            })?;
            println!("manifest: {}", cfg.dataset_dir.join("manifest.json").display());
            println!(
                "splits: train {} / val {} / test {}",
                manifest.splits.train.len(),
                manifest.splits.val.len(),
                manifest.splits.test.len()
            );
            Ok(())
        }
        Command::Train {
            category,
            dataset,
            checkpoint,
            epochs,
            lr,
            no_motion_loss,
            csv,
        } => {
            if let Some(c) = category {
                cfg.category = c;
            }
            if let Some(d) = dataset {
                cfg.dataset_dir = d;
            }
            if let Some(c) = checkpoint {
                cfg.checkpoint = c;
            }
            if let Some(e) = epochs {
                cfg.optim.epochs = e;
            }
            if let Some(l) = lr {
                cfg.optim.lr = l;
            }
            if no_motion_loss {
                cfg.loss.motion = 0.0;
            }
            let csv_path = csv.unwrap_or_else(|| cfg.checkpoint.with_extension("csv"));
            let outcome = train(&cfg, &csv_path)?;
            println!("steps: {}", outcome.steps);
            println!(
                "train loss: first epoch {:.6}, last epoch {:.6}",
                outcome.first_epoch_loss, outcome.last_epoch_loss
            );
            println!(
                "best val loss: {:.6} (epoch {})",
                outcome.best_val_loss, outcome.best_epoch
            );
            println!("checkpoint: {}", cfg.checkpoint.display());
            println!("loss log: {}", csv_path.display());
            Ok(())
        }
        Command::Eval {
            category,
            dataset,
            checkpoint,
            report_dir,
            split,
            omega0,
            omega1,
        } => {
            if let Some(c) = category {
                cfg.category = c;
            }
            if let Some(d) = dataset {
                cfg.dataset_dir = d;
            }
            if let Some(c) = checkpoint {
                cfg.checkpoint = c;
            }
            if let Some(r) = report_dir {
                cfg.report_dir = r;
            }
            if let Some(w) = omega0 {
                cfg.voting.omega0 = w;
            }
            if let Some(w) = omega1 {
                cfg.voting.omega1 = w;
            }
            let eval = evaluate(&cfg, &split)?;
            let (json_path, txt_path) = write_reports(&cfg.report_dir, &eval)?;
            print!("{}", eval.to_table());
            println!("report json: {}", json_path.display());
            println!("report text: {}", txt_path.display());
            Ok(())
        }
        Command::Infer {
            input,
            category,
            checkpoint,
            json,
            ply,
            omega0,
            omega1,
        } => {
            if let Some(c) = category {
                cfg.category = c;
            }
            if let Some(c) = checkpoint {
                cfg.checkpoint = c;
            }
            if let Some(w) = omega0 {
                cfg.voting.omega0 = w;
            }
            if let Some(w) = omega1 {
                cfg.voting.omega1 = w;
            }
            let record = infer(&cfg, &input, ply.as_deref())?;
            let mut text = serde_json::to_string_pretty(&record)
                .map_err(|e| CaptError::Format(format!("record serialization: {e}")))?;
            text.push('\n');
            if let Some(path) = json {
                std::fs::write(&path, &text).map_err(|e| CaptError::io(&path, e))?;
            }
            print!("{text}");
            Ok(())
        }
    }
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
