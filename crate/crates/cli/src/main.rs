use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use log::{info, warn};

use unitminer_core::annohub::{self, AnnotationStore, ServerConfig};
use unitminer_core::minecore::{MinerConfig, SelectionFile};
use unitminer_core::patchline::PatchConfig;
use unitminer_core::pipeline::{self, TrainConfig, Workspace};
use unitminer_core::synthdata::SynthConfig;
use unitminer_core::Split;

#[derive(Parser)]
#[command(name = "unitminer", version, about = "Train, mine, annotate and explain a small patch classifier")]
struct Cli {
    /// Root of all artifacts.
    #[arg(long, global = true, default_value = "data")]
    data_dir: PathBuf,

    /// Model checkpoint (default: <data-dir>/model.ckpt).
    #[arg(long, global = true)]
    model: Option<PathBuf>,

    /// Annotation log (default: <data-dir>/annotations.jsonl).
    #[arg(long, global = true)]
    store: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset.
    Synth {
        #[arg(long, default_value_t = 200)]
        images: usize,
        /// Image side in pixels.
        #[arg(long, default_value_t = 128)]
        size: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Cut labelled patches from the dataset.
    Extract,
    /// Train the patch classifier on the train split.
    Train {
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        /// Shuffling and initialisation seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Units in the final conv layer.
        #[arg(long, default_value_t = 32)]
        units: usize,
    },
    /// Rank and select influential units on the test split.
    Mine {
        #[arg(long, default_value_t = 8)]
        top_per_image: usize,
        #[arg(long, default_value_t = 20)]
        top_per_class: usize,
    },
    /// Serve the annotation API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
    },
    /// Explain every image of a split.
    Explain {
        #[arg(long, default_value = "holdout")]
        split: Split,
    },
    /// Patch AUCs on the test split and greedy matching of explanations.
    Eval,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let ws = Workspace::new(&cli.data_dir);
    let model_path = cli.model.clone().unwrap_or_else(|| ws.default_model());
    let store_path = cli.store.clone().unwrap_or_else(|| ws.default_store());
    match cli.command {
        Command::Synth { images, size, seed } => {
            let cfg = SynthConfig {
                image_count: images,
                image_size: (size, size),
                seed,
                ..SynthConfig::default()
            };
            let manifest = pipeline::run_synth(&ws, &cfg)?;
            let [train, test, holdout] = manifest.split_counts();
            info!(
                "wrote {} images to {} (train {train}, test {test}, holdout {holdout})",
                manifest.records.len(),
                ws.dataset_dir().display()
            );
        }
        Command::Extract => {
            let (patches, counts) = pipeline::run_extract(&ws, &PatchConfig::default())?;
            info!("wrote {} patches to {}", patches.len(), ws.patches_file().display());
            println!("{}", serde_json::to_string_pretty(&counts)?);
        }
        Command::Train {
            epochs,
            learning_rate,
            seed,
            units,
        } => {
            let mut cfg = TrainConfig {
                units,
                init_seed: seed,
                ..TrainConfig::default()
            };
            cfg.sgd.seed = seed;
            if let Some(e) = epochs {
                cfg.sgd.epochs = e;
            }
            if let Some(lr) = learning_rate {
                cfg.sgd.learning_rate = lr;
            }
            pipeline::run_train(&ws, &cfg, &model_path, |s| {
                info!("epoch {} loss {:.4} accuracy {:.3}", s.epoch + 1, s.mean_loss, s.accuracy)
            })?;
            info!("saved {}", model_path.display());
        }
        Command::Mine {
            top_per_image,
            top_per_class,
        } => {
            let model = load_model(&model_path)?;
            let cfg = MinerConfig {
                top_per_image,
                top_per_class,
                ..MinerConfig::default()
            };
            let outcome = pipeline::run_mine(&ws, &model, &cfg)?;
            for w in &outcome.warnings {
                warn!("{w}");
            }
            for s in &outcome.selections {
                println!(
                    "{:<10} patches {:>5}  coverage {:.4}  units {:?}",
                    s.class_name, s.patch_count, s.coverage, s.unit_ids
                );
            }
        }
        Command::Serve { bind } => {
            let cfg = ServerConfig {
                mining_dir: ws.mining_dir(),
                dataset_dir: ws.dataset_dir(),
                explanations_dir: ws.explanations_dir(),
                store_path,
            };
            tokio::runtime::Runtime::new()?.block_on(annohub::run(&cfg, bind))?;
        }
        Command::Explain { split } => {
            let model = load_model(&model_path)?;
            let selection = SelectionFile::load(&ws.mining_dir().join("selection.json"))
                .context("explanations need the mining selection; run `mine` first")?;
            let store = AnnotationStore::open(&store_path, selection.unit_ids())?;
            let out = pipeline::run_explain(&ws, &model, &store, &selection.config, split)?;
            let with_units = out.iter().filter(|e| !e.units.is_empty()).count();
            info!(
                "wrote {} explanations ({with_units} with annotated units) to {}",
                out.len(),
                ws.explanations_dir().display()
            );
        }
        Command::Eval => {
            let model = load_model(&model_path)?;
            let outcome = pipeline::run_eval(&ws, &model)?;
            print!("{}", outcome.model.to_table());
            for r in &outcome.explanations {
                print!("{}", r.to_table());
            }
        }
    }
    Ok(())
}

fn load_model(path: &std::path::Path) -> Result<unitminer_core::Model> {
    pipeline::load_model(path).with_context(|| format!("cannot load model {}; run `train` first", path.display()))
}
