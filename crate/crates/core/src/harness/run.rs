use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_weights, save_checkpoint};
use crate::datagen::{DatasetInfo, DatasetManifest, ManifestRecord, Split, DATASET_INFO_FILE, MANIFEST_FILE};
use crate::model::{MassModel, ModelConfig, ModelInput, Target};
use crate::objectives::MassMetricsReport;
use crate::pcops::FlipMode;
use crate::{Error, Result};

use super::config::ExperimentConfig;
use super::data::{derive_seed, load_views, partition_train_ids, prepare_sample, subsample_views, LoadOptions, LoadedView, Source};
use super::eval::{evaluate_views, write_jsonl};
use super::train::{make_batches, train_step, Adam, AdamConfig, StepLog};

/// Resampling seed used by every evaluation pass.
pub const EVAL_SEED: u64 = 0;

pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const BATCH_AUDIT_FILE: &str = "batches.jsonl";
pub const HISTORY_FILE: &str = "history.json";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const TEST_PREDICTIONS_FILE: &str = "test_predictions.jsonl";
pub const TEST_REPORT_FILE: &str = "test_report.json";

/// Decoded views for one experiment, grouped by role.
#[derive(Clone, Debug, Default)]
pub struct ExperimentData {
    pub synthetic: Vec<LoadedView>,
    pub surrogate: Vec<LoadedView>,
    pub validation: Vec<LoadedView>,
    pub test: Vec<LoadedView>,
}

impl ExperimentData {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self> {
        Self::load_inner(cfg).map_err(|e| e.context(format!("loading {}", cfg.dataset_dir.display())))
    }

    fn load_inner(cfg: &ExperimentConfig) -> Result<Self> {
        let base = &cfg.dataset_dir;
        let manifest = DatasetManifest::read(&base.join(MANIFEST_FILE))?;
        manifest.validate(base)?;
        let info = DatasetInfo::read(&base.join(DATASET_INFO_FILE))?;
        let model_cfg = cfg.model_config();
        let train_ids: Vec<String> = manifest.ids(Split::Train).into_iter().map(String::from).collect();
        let part = partition_train_ids(&train_ids, cfg.validation_fraction, cfg.surrogate_fraction, derive_seed(&[cfg.seed, 0x5eed]));
        let select = |ids: &[String], split: Split| -> Vec<&ManifestRecord> {
            let set: BTreeSet<&str> = ids.iter().map(String::as_str).collect();
            let recs: Vec<&ManifestRecord> = manifest
                .records
                .iter()
                .filter(|r| r.split == split && (split == Split::Test || set.contains(r.id.as_str())))
                .collect();
            subsample_views(&recs, cfg.views_per_object)
        };
        let opts = LoadOptions {
            image_side: model_cfg.image.input_side,
            need_points: cfg.variant.uses_points(),
            with_recon: false,
            depth_dir: None,
        };
        let synthetic = load_views(
            base,
            &info,
            &select(&part.synthetic, Split::Train),
            &LoadOptions {
                with_recon: cfg.variant.reconstructs(),
                ..opts.clone()
            },
        )?;
        let surrogate = load_views(base, &info, &select(&part.surrogate, Split::Train), &opts)?;
        let validation = load_views(base, &info, &select(&part.validation, Split::Train), &opts)?;
        let test = load_views(
            base,
            &info,
            &select(&[], Split::Test),
            &LoadOptions {
                depth_dir: cfg.predicted_depth_dir.clone(),
                ..opts
            },
        )?;
        let data = Self {
            synthetic,
            surrogate,
            validation,
            test,
        };
        data.check_disjoint()?;
        Ok(data)
    }

    /// No object may appear in more than one role.
    pub fn check_disjoint(&self) -> Result<()> {
        let mut owner = std::collections::HashMap::new();
        for (role, views) in [
            ("synthetic", &self.synthetic),
            ("surrogate", &self.surrogate),
            ("validation", &self.validation),
            ("test", &self.test),
        ] {
            for v in views {
                if let Some(prev) = owner.insert(v.id.as_str(), role) {
                    if prev != role {
                        return Err(Error::Metadata {
                            id: v.id.clone(),
                            reason: format!("object used for both {prev} and {role}"),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn source(&self, source: Source) -> &[LoadedView] {
        match source {
            Source::Synthetic => &self.synthetic,
            Source::RgbMass => &self.surrogate,
        }
    }
}

/// Sample keys consumed by one optimizer step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchAudit {
    pub step: usize,
    pub epoch: usize,
    pub source: Source,
    pub samples: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Optimizer steps taken so far.
    pub steps: usize,
    pub train_alde: f64,
    pub train_cd: Option<f64>,
    pub train_total: f64,
    pub validation: Option<MassMetricsReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    pub config: ExperimentConfig,
    pub model: ModelConfig,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub test: MassMetricsReport,
    pub steps: usize,
    pub checkpoint: PathBuf,
}

/// Augmented inputs for one planned batch, built in parallel with a
/// per-sample seed.
pub fn prepare_batch(
    views: &[LoadedView],
    indices: &[usize],
    points: usize,
    augment: bool,
    seed_parts: [u64; 3],
) -> Result<Vec<(ModelInput, Target)>> {
    indices
        .par_iter()
        .map(|&i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed_parts[0], seed_parts[1], seed_parts[2], i as u64]));
            let flip = if augment { FlipMode::sample(&mut rng) } else { FlipMode::None };
            prepare_sample(&views[i], points, flip, &mut rng)
        })
        .collect()
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let data = ExperimentData::load(cfg)?;
    run_with_data(cfg, &data)
}

/// Trains, selects the best epoch by validation ALDE (the last epoch when
/// there is no validation set), and scores that checkpoint on the test
/// views. Artifacts go to `cfg.out_dir`.
pub fn run_with_data(cfg: &ExperimentConfig, data: &ExperimentData) -> Result<ExperimentOutcome> {
    let ctx = |e: Error| e.context(format!("experiment {} seed {}", cfg.variant, cfg.seed));
    run_inner(cfg, data).map_err(ctx)
}

fn run_inner(cfg: &ExperimentConfig, data: &ExperimentData) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    data.check_disjoint()?;
    let out = &cfg.out_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let model_cfg = cfg.model_config();
    let mut model = MassModel::new(&model_cfg, derive_seed(&[cfg.seed, 0x1417]))?;
    let mut opt = Adam::new(
        &model.params,
        AdamConfig {
            lr: cfg.learning_rate,
            ..AdamConfig::default()
        },
    );
    let lambda = cfg.lambda();
    let best_path = out.join(BEST_CHECKPOINT);
    let mut logs: Vec<StepLog> = Vec::new();
    let mut audits: Vec<BatchAudit> = Vec::new();
    let mut history = Vec::new();
    let mut best: Option<(f64, usize)> = None;
    let mut step = 0usize;
    'epochs: for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, 0xba7c, epoch as u64]));
        let plans = make_batches(data.synthetic.len(), data.surrogate.len(), cfg.batch_size, &mut rng)?;
        let first = logs.len();
        for plan in plans {
            if cfg.max_steps.is_some_and(|m| step >= m) {
                break;
            }
            let views = data.source(plan.source);
            let batch = prepare_batch(views, &plan.indices, model_cfg.points, cfg.augment, [cfg.seed, epoch as u64, plan.source as u64])?;
            let mut log = train_step(&mut model, &mut opt, &batch, plan.source, lambda, cfg.b, step)?;
            log.epoch = epoch;
            audits.push(BatchAudit {
                step,
                epoch,
                source: plan.source,
                samples: plan.indices.iter().map(|&i| views[i].key()).collect(),
            });
            logs.push(log);
            step += 1;
        }
        let epoch_logs = &logs[first..];
        if epoch_logs.is_empty() {
            break;
        }
        let n = epoch_logs.len() as f64;
        let cds: Vec<f64> = epoch_logs.iter().filter_map(|l| l.cd).collect();
        let validation = if data.validation.is_empty() {
            None
        } else {
            Some(evaluate_views(&model, &data.validation, cfg.b, EVAL_SEED)?.0)
        };
        let score = validation.map_or(f64::NEG_INFINITY, |v| v.alde);
        if best.is_none_or(|(b, _)| score < b || validation.is_none()) {
            best = Some((score, epoch));
            save_checkpoint(&model, &best_path)?;
        }
        history.push(EpochRecord {
            epoch,
            steps: step,
            train_alde: epoch_logs.iter().map(|l| l.alde).sum::<f64>() / n,
            train_cd: (!cds.is_empty()).then(|| cds.iter().sum::<f64>() / cds.len() as f64),
            train_total: epoch_logs.iter().map(|l| l.total).sum::<f64>() / n,
            validation,
        });
        if cfg.max_steps.is_some_and(|m| step >= m) {
            break 'epochs;
        }
    }
    let (_, best_epoch) = best.ok_or(Error::EmptyDataset)?;
    save_checkpoint(&model, &out.join(LAST_CHECKPOINT))?;
    write_jsonl(&out.join(TRAIN_LOG_FILE), &logs)?;
    write_jsonl(&out.join(BATCH_AUDIT_FILE), &audits)?;
    load_weights(&mut model, &best_path)?;
    let (test, preds) = evaluate_views(&model, &data.test, cfg.b, EVAL_SEED)?;
    write_jsonl(&out.join(TEST_PREDICTIONS_FILE), &preds)?;
    let outcome = ExperimentOutcome {
        config: cfg.clone(),
        model: model_cfg,
        history,
        best_epoch,
        test,
        steps: step,
        checkpoint: best_path,
    };
    write_json(&out.join(HISTORY_FILE), &outcome.history)?;
    write_json(&out.join(TEST_REPORT_FILE), &outcome.test)?;
    Ok(outcome)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::io(path, e.into()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Scores a saved model on the views of `manifest_path` (restricted to
/// `split` when given). Image and depth paths resolve against the
/// manifest's directory; `depth_dir` substitutes depth maps by file name.
pub fn evaluate_checkpoint(
    checkpoint: &Path,
    manifest_path: &Path,
    split: Option<Split>,
    b: f64,
    depth_dir: Option<&Path>,
) -> Result<(MassMetricsReport, Vec<super::PredictionRecord>)> {
    let model = crate::checkpoint::load_checkpoint(checkpoint)?;
    let base = manifest_path.parent().unwrap_or(Path::new(""));
    let manifest = DatasetManifest::read(manifest_path)?;
    let info = DatasetInfo::read(&base.join(DATASET_INFO_FILE))?;
    let records: Vec<&ManifestRecord> = manifest.records.iter().filter(|r| split.is_none_or(|s| r.split == s)).collect();
    let opts = LoadOptions {
        image_side: model.config.image.input_side,
        need_points: model.config.variant.uses_points(),
        with_recon: false,
        depth_dir: depth_dir.map(Path::to_path_buf),
    };
    let views = load_views(base, &info, &records, &opts)?;
    evaluate_views(&model, &views, b, EVAL_SEED)
}
