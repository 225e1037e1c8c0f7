use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use massnet::datagen::synth::{write_synthetic_corpus, SynthConfig};
use massnet::datagen::{build_dataset, read_depth_values, DatasetManifest, GenerateConfig, Intrinsics, Split};
use massnet::harness::{evaluate_checkpoint, read_jsonl, run_experiment, score_predictions, write_jsonl, ExperimentConfig, PredictionRecord};
use massnet::objectives::depth_metric_report;
use massnet::{Error, Result};

#[derive(Parser)]
#[command(name = "massnet", version, about = "Synthetic RGB-D data and mass estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Write a corpus of random primitive solids with metadata.csv.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Render a model directory into an RGB-D dataset.
    Generate {
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 14)]
        views: usize,
        #[arg(long, default_value_t = 0.9)]
        split: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Sensor width in pixels (Kinect geometry, scaled).
        #[arg(long, default_value_t = 640)]
        width: usize,
        #[arg(long, default_value_t = 256)]
        surface_points: usize,
    },
    /// Train one model variant from a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Predict masses for a manifest with a saved checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        #[arg(long, default_value_t = 16.5)]
        b: f64,
        /// Depth maps to use instead of the rendered ones.
        #[arg(long)]
        depth_dir: Option<PathBuf>,
    },
    /// Score predictions: a JSONL prediction file against a manifest, or a
    /// predicted depth PNG against a ground-truth depth PNG.
    Metrics {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn is_png(p: &Path) -> bool {
    p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { out, count, seed } => {
            let rows = write_synthetic_corpus(
                &out,
                &SynthConfig {
                    count,
                    seed,
                    ..SynthConfig::default()
                },
            )?;
            eprintln!("wrote {} models to {}", rows.len(), out.display());
            Ok(())
        }
        Command::Generate {
            models,
            out,
            views,
            split,
            seed,
            width,
            surface_points,
        } => {
            let cfg = GenerateConfig {
                intrinsics: Intrinsics::kinect_scaled(width),
                views,
                split_fraction: split,
                seed,
                surface_points,
                ..GenerateConfig::default()
            };
            let report = build_dataset(&models, &out, &cfg)?;
            for r in &report.rejected {
                eprintln!("rejected {}: {}", r.id, r.reason);
            }
            eprintln!(
                "{} train / {} test models, {} views",
                report.train_models,
                report.test_models,
                report.manifest.records.len()
            );
            Ok(())
        }
        Command::Train { config } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            let outcome = run_experiment(&cfg)?;
            eprintln!(
                "best epoch {} after {} steps; artifacts in {}",
                outcome.best_epoch,
                outcome.steps,
                cfg.out_dir.display()
            );
            print_json(&outcome.test)
        }
        Command::Eval {
            checkpoint,
            manifest,
            out,
            split,
            b,
            depth_dir,
        } => {
            let split = match split {
                SplitArg::Train => Some(Split::Train),
                SplitArg::Test => Some(Split::Test),
                SplitArg::All => None,
            };
            let (report, preds) = evaluate_checkpoint(&checkpoint, &manifest, split, b, depth_dir.as_deref())?;
            write_jsonl(&out, &preds)?;
            print_json(&report)
        }
        Command::Metrics { pred, truth } => {
            if is_png(&pred) && is_png(&truth) {
                let (pw, ph, p) = read_depth_values(&pred)?;
                let (tw, th, t) = read_depth_values(&truth)?;
                if (pw, ph) != (tw, th) {
                    return Err(Error::Shape(format!("{pw}x{ph} prediction vs {tw}x{th} truth")));
                }
                let mask: Vec<bool> = t.iter().zip(&p).map(|(&a, &b)| a > 0.0 && b > 0.0).collect();
                print_json(&depth_metric_report(&t, &p, Some(&mask))?)
            } else {
                let preds: Vec<PredictionRecord> = read_jsonl(&pred)?;
                let manifest = DatasetManifest::read(&truth)?;
                print_json(&score_predictions(&preds, &manifest)?)
            }
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
