mod common;

use std::collections::BTreeMap;

use massnet::harness::{
    read_jsonl, run_experiment, score_predictions, BatchAudit, ExperimentConfig, PredictionRecord, Scale, StepLog, Source,
    BATCH_AUDIT_FILE, TEST_PREDICTIONS_FILE, TRAIN_LOG_FILE,
};
use massnet::datagen::{DatasetManifest, MANIFEST_FILE};
use massnet::model::Variant;

#[test]
fn tiny_experiment_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let t = std::time::Instant::now();
    small_dataset_for(dir.path());
    eprintln!("dataset: {:?}", t.elapsed());
    let mut cfg = ExperimentConfig::new(Variant::PointnetFolding, dir.path().join("data"), dir.path().join("run_a"), 4);
    cfg.scale = Scale::Tiny;
    cfg.epochs = 2;
    cfg.batch_size = 4;
    cfg.views_per_object = Some(3);
    cfg.surrogate_fraction = 0.4;
    cfg.validation_fraction = 0.2;
    let t = std::time::Instant::now();
    let a = run_experiment(&cfg).unwrap();
    eprintln!("train: {:?}", t.elapsed());
    assert_eq!(a.history.len(), 2);

    let logs: Vec<StepLog> = read_jsonl(&cfg.out_dir.join(TRAIN_LOG_FILE)).unwrap();
    assert_eq!(logs.len(), a.steps);
    assert!(logs.iter().any(|l| l.source == Source::RgbMass));
    for l in &logs {
        assert_eq!(l.cd.is_some(), l.source == Source::Synthetic);
    }

    let audits: Vec<BatchAudit> = read_jsonl(&cfg.out_dir.join(BATCH_AUDIT_FILE)).unwrap();
    let mut per_epoch: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for b in &audits {
        per_epoch.entry(b.epoch).or_default().extend(b.samples.iter().cloned());
    }
    let first = per_epoch[&0].clone();
    for samples in per_epoch.values() {
        let mut s = samples.clone();
        s.sort();
        let mut f = first.clone();
        f.sort();
        assert_eq!(s, f);
        let n = s.len();
        s.dedup();
        assert_eq!(s.len(), n);
    }

    let manifest = DatasetManifest::read(&cfg.dataset_dir.join(MANIFEST_FILE)).unwrap();
    let test_ids = manifest.ids(massnet::datagen::Split::Test);
    for s in &first {
        assert!(!test_ids.contains(s.split('/').next().unwrap()));
    }

    let preds: Vec<PredictionRecord> = read_jsonl(&cfg.out_dir.join(TEST_PREDICTIONS_FILE)).unwrap();
    let rescored = score_predictions(&preds, &manifest).unwrap();
    assert!((rescored.alde - a.test.alde).abs() < 1e-12);

    cfg.out_dir = dir.path().join("run_b");
    let b = run_experiment(&cfg).unwrap();
    assert_eq!(a.history.len(), b.history.len());
    for (x, y) in a.history.iter().zip(&b.history) {
        assert!((x.train_total - y.train_total).abs() <= 1e-9);
        assert!((x.validation.unwrap().alde - y.validation.unwrap().alde).abs() <= 1e-9);
    }
    assert_eq!(a.test, b.test);
}

fn small_dataset_for(root: &std::path::Path) {
    common::small_dataset(root, 12, 64, 1);
}
