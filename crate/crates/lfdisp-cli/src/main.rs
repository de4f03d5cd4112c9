//! `lfdisp`: generate synthetic light field corpora, train and evaluate the
//! disparity network, run inference, and dump EPI diagnostics.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on runtime failures.

use clap::{Parser, Subcommand};
use lfdisp_core::error::Error;
use lfdisp_core::imageio;
use lfdisp_core::lightfield::{self, EpiOrientation};
use lfdisp_core::model::{self, ModelConfig, Variant};
use lfdisp_core::pfm;
use lfdisp_core::synth::{gen_corpus, CorpusOptions};
use lfdisp_core::train::{self, TrainConfig, TrainSession};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "lfdisp", version, about = "Light field disparity estimation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic light field corpus with ground-truth disparity.
    Gen {
        /// Output directory; one subdirectory per scene.
        #[arg(long)]
        out: PathBuf,
        /// Number of scenes.
        #[arg(long)]
        count: usize,
        /// Master seed; the corpus is byte-deterministic in it.
        #[arg(long)]
        seed: u64,
        /// Square image size in pixels.
        #[arg(long, default_value_t = 48)]
        size: usize,
        /// Views per grid axis (odd).
        #[arg(long, default_value_t = 9)]
        views: usize,
    },
    /// Train a model on a scene directory.
    Train {
        /// Directory of scene subdirectories.
        #[arg(long)]
        data: PathBuf,
        /// Training config file (key=value lines).
        #[arg(long)]
        config: PathBuf,
        /// Output directory for checkpoints and the log.
        #[arg(long)]
        out: PathBuf,
        /// Input SAI count.
        #[arg(long, default_value_t = 9, value_parser = parse_variant_flag)]
        variant: usize,
        /// Model width preset: compact (CPU-scale) or calibrated (published sizes).
        #[arg(long, default_value = "compact")]
        preset: String,
        /// Views per grid axis of the input scenes.
        #[arg(long, default_value_t = 9)]
        views: usize,
        /// Resume from a checkpoint written by a previous run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Predict disparity for one scene and write it as PFM.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        /// Output PFM path.
        #[arg(long)]
        out: PathBuf,
        /// Optional normalized grayscale preview PNG.
        #[arg(long)]
        png: Option<PathBuf>,
        #[arg(long, default_value_t = 9)]
        views: usize,
    },
    /// Evaluate a checkpoint over a scene directory; write per-scene CSV.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 9)]
        views: usize,
    },
    /// Extract a horizontal EPI as a PNG image.
    Epi {
        #[arg(long)]
        scene: PathBuf,
        /// Image row to slice.
        #[arg(long)]
        row: usize,
        /// View row of the grid to slice.
        #[arg(long)]
        view_row: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 9)]
        views: usize,
    },
    /// Print a checkpoint's architecture, parameter count and receptive field.
    Inspect {
        #[arg(long)]
        ckpt: PathBuf,
    },
}

fn parse_variant_flag(s: &str) -> Result<usize, String> {
    match s {
        "9" | "25" | "81" => Ok(s.parse().unwrap()),
        other => Err(format!("variant must be 9, 25 or 81, got '{other}'")),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Gen {
            out,
            count,
            seed,
            size,
            views,
        } => {
            let opts = CorpusOptions { views, size, seed };
            gen_corpus(&out, count, &opts)?;
            println!("wrote {count} scenes to {}", out.display());
            Ok(())
        }
        Command::Train {
            data,
            config,
            out,
            variant,
            preset,
            views,
            resume,
        } => {
            let text = std::fs::read_to_string(&config).map_err(|e| Error::io(&config, e))?;
            let train_config = TrainConfig::parse(&text)?;
            let variant = Variant::from_sai_count(variant)?;
            let mut session = match resume {
                Some(ckpt) => {
                    let loaded = train::load_checkpoint(&ckpt)?;
                    TrainSession {
                        trainer: loaded.trainer,
                        config: loaded.config,
                        next_epoch: loaded.next_epoch,
                    }
                }
                None => {
                    let model_config = match preset.as_str() {
                        "compact" => ModelConfig::compact(variant, train_config.seed),
                        "calibrated" => ModelConfig::calibrated(variant, train_config.seed),
                        other => {
                            return Err(Error::InvalidConfig(format!(
                                "preset must be compact or calibrated, got '{other}'"
                            )))
                        }
                    };
                    TrainSession::new(model_config, train_config.clone())?
                }
            };
            let dataset = train::load_dataset(
                &data,
                session.trainer.model.config().variant,
                (views, views),
                session.config.val_count,
            )?;
            let outcome = session.run(&dataset, Some(&out))?;
            for log in &outcome.epochs {
                let val = log
                    .val_mse_x100
                    .map(|v| format!(" val_mse_x100={v:.4}"))
                    .unwrap_or_default();
                println!(
                    "epoch {:4}  lr={:.2e}  loss={:.5}{}  ({:.1}s)",
                    log.epoch, log.lr, log.train_loss, val, log.seconds
                );
            }
            println!(
                "finished after {} epochs; best epoch: {}",
                outcome.final_epoch,
                outcome
                    .best_epoch
                    .map(|e| e.to_string())
                    .unwrap_or_else(|| "-".into())
            );
            Ok(())
        }
        Command::Infer {
            ckpt,
            scene,
            out,
            png,
            views,
        } => {
            let mut model = load_model_flexible(&ckpt)?;
            let scene_data = lightfield::load_scene(&scene, (views, views))?;
            let pattern = lightfield::ViewPattern::new(model.config().variant.side())?;
            let input = lightfield::stack_sais(&scene_data.lightfield, pattern)?;
            let pred = train::predict_with(&mut model, &input)?;
            pfm::write_pfm(&out, &pred)?;
            println!("wrote {}", out.display());
            if let Some(png_path) = png {
                let (lo, hi) = pred
                    .values
                    .iter()
                    .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                        (lo.min(v), hi.max(v))
                    });
                let span = if hi > lo { hi - lo } else { 1.0 };
                let gray: Vec<u8> = pred
                    .values
                    .iter()
                    .map(|&v| (((v - lo) / span) * 255.0).round() as u8)
                    .collect();
                imageio::write_png_gray8(&png_path, pred.width, pred.height, &gray)?;
                println!("png range: {lo} .. {hi}");
                println!("wrote {}", png_path.display());
            }
            Ok(())
        }
        Command::Eval {
            ckpt,
            data,
            out,
            views,
        } => {
            let mut model = load_model_flexible(&ckpt)?;
            let dataset = train::load_dataset(&data, model.config().variant, (views, views), 0)?;
            let reports = train::evaluate(&mut model, dataset.scenes.iter())?;
            let csv = train::metrics_csv(&reports);
            std::fs::write(&out, &csv).map_err(|e| Error::io(&out, e))?;
            if let Some(mean) = lfdisp_core::MetricsReport::mean_of(&reports) {
                println!("{mean}");
            }
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Epi {
            scene,
            row,
            view_row,
            out,
            views,
        } => {
            let lf = lightfield::load_lightfield(&scene, (views, views))?;
            let epi = lightfield::extract_epi(&lf, EpiOrientation::Horizontal, row, view_row)?;
            let (h, w, rgb) = epi.to_rgb8();
            imageio::write_png_rgb8(&out, w, h, &rgb)?;
            println!("wrote {} ({} views x {} pixels)", out.display(), h, w);
            Ok(())
        }
        Command::Inspect { ckpt } => {
            let model = load_model_flexible(&ckpt)?;
            let cfg = model.config();
            print!("{}", cfg.to_key_values());
            println!("params: {}", model.param_count());
            println!("receptive_field: {}", cfg.pyramid.receptive_field());
            Ok(())
        }
    }
}

/// Accept either a bare model container (from `Model::save`) or a training
/// checkpoint (whose sidecar prefixes model keys with `model.`).
fn load_model_flexible(path: &Path) -> Result<model::Model<f32>, Error> {
    let sidecar = model::sidecar_path(path);
    let text = std::fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
    if text.lines().any(|l| l.starts_with("model.")) {
        Ok(train::load_checkpoint(path)?.trainer.model)
    } else {
        model::load_model(path)
    }
}
