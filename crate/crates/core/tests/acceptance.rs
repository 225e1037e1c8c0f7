//! Acceptance criteria 1–9. Runs as a plain binary and prints one line per
//! criterion; `ACCEPTANCE_ONLY=3,6` restricts the run to a subset.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use massnet::autograd::{Graph, ParamStore};
use massnet::datagen::synth::{synth_object, SynthConfig};
use massnet::datagen::{
    camera_rig, normalize_depth, render_depth, DatasetManifest, Intrinsics, ReconTarget, RigConfig, Shading, Split, MANIFEST_FILE,
    VIEWS_PER_OBJECT,
};
use massnet::decoders::predict_mass;
use massnet::encoders::{PointNet, PointNetConfig};
use massnet::geom::Vec3;
use massnet::gradcheck::{check_gradients, generic_point, GradCheckConfig, GradCheckReport};
use massnet::harness::{
    prepare_batch, read_jsonl, run_with_data, train_step, Adam, AdamConfig, BatchAudit, ExperimentConfig, ExperimentData, Scale, Source,
    StepLog, BATCH_AUDIT_FILE, TRAIN_LOG_FILE,
};
use massnet::model::{MassModel, ModelConfig, ModelInput, Target, Variant};
use massnet::objectives::{alde, ape, chamfer_points, depth_metric_report, mnre, q_fraction, total_loss};
use massnet::tensor::Tensor;
use massnet::Error;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

// 1. Metric oracles.

/// Full squared-distance matrix, then row and column minima.
fn chamfer_oracle(a: &[Vec3], b: &[Vec3]) -> f64 {
    let d: Vec<Vec<f64>> = a
        .iter()
        .map(|p| b.iter().map(|q| (0..3).map(|i| (p[i] - q[i]).powi(2)).sum()).collect())
        .collect();
    let rows: f64 = d.iter().map(|r| r.iter().cloned().fold(f64::INFINITY, f64::min)).sum::<f64>() / a.len() as f64;
    let cols: f64 = (0..b.len())
        .map(|j| d.iter().map(|r| r[j]).fold(f64::INFINITY, f64::min))
        .sum::<f64>()
        / b.len() as f64;
    rows + cols
}

fn criterion_1() -> Outcome {
    let tol = 1e-9;
    let e = std::f64::consts::E;
    ensure!(alde(2.0, 2.0).unwrap() == 0.0, "alde identity");
    ensure!(close(alde(1.0, e).unwrap(), 1.0, tol), "alde(1, e)");
    ensure!(close(alde(10.0, 5.0).unwrap(), 0.693_147_180_559_945_3, tol), "alde(10, 5)");
    ensure!(close(ape(2.0, 1.0).unwrap(), 0.5, tol), "ape(2, 1)");
    ensure!(ape(3.7, 3.7).unwrap() == 0.0, "ape identity");
    ensure!(close(ape(1.0, 3.0).unwrap(), 2.0, tol), "ape(1, 3)");
    ensure!(close(mnre(2.0, 1.0).unwrap(), 0.5, tol), "mnre(2, 1)");
    ensure!(mnre(3.7, 3.7).unwrap() == 1.0, "mnre identity");
    ensure!(close(mnre(1.0, 4.0).unwrap(), 0.25, tol), "mnre(1, 4)");
    ensure!(q_fraction(&[(1.0, 1.0), (2.5, 2.5)]).unwrap() == 1.0, "q exact");
    ensure!(close(q_fraction(&[(1.0, 1.0), (1.0, 4.0)]).unwrap(), 0.5, tol), "q mixed");
    ensure!(matches!(q_fraction(&[]), Err(Error::EmptySet(_))), "q empty");
    let a = [[0.2, -0.1, 0.4], [1.0, 2.0, 3.0]];
    ensure!(chamfer_points(&a, &a).unwrap() == 0.0, "chamfer identity");
    ensure!(close(chamfer_points(&[[0.0; 3]], &[[1.0, 0.0, 0.0]]).unwrap(), 2.0, tol), "chamfer unit");
    ensure!(close(chamfer_points(&[[0.0; 3], [1.0, 0.0, 0.0]], &[[0.0; 3]]).unwrap(), 0.5, tol), "chamfer directed");
    ensure!(close(total_loss(0.4, Some(0.1), 1.0), 0.5, tol), "total_loss");
    ensure!(total_loss(0.4, Some(0.1), 0.0) == 0.4, "total_loss lambda 0");

    let y = [1.0, 2.5, 0.7, 3.0];
    let r = depth_metric_report(&y, &y, None).unwrap();
    ensure!(
        [r.mape, r.mspe, r.rmse, r.rmse_log, r.log10, r.silog].iter().all(|&m| m.abs() <= tol),
        "depth identity {r:?}"
    );
    let doubled: Vec<f64> = y.iter().map(|v| 2.0 * v).collect();
    let r = depth_metric_report(&y, &doubled, None).unwrap();
    ensure!(r.silog.abs() <= tol && r.rmse > 0.0, "constant ratio {r:?}");
    let r = depth_metric_report(&[1.0, e], &[1.0, 1.0], None).unwrap();
    ensure!(close(r.silog, 0.25, tol), "silog two-point {}", r.silog);

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let na = rng.gen_range(1..=256);
        let nb = rng.gen_range(1..=256);
        let mut cloud = |n: usize| -> Vec<Vec3> { (0..n).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect() };
        let (pa, pb) = (cloud(na), cloud(nb));
        let oracle = chamfer_oracle(&pa, &pb);
        let direct = chamfer_points(&pa, &pb).unwrap();
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let (ta, tb) = (g.input(Tensor::from_rows(&pa)), g.input(Tensor::from_rows(&pb)));
        let graph = g.chamfer(ta, tb);
        let graph = g.value(graph).item();
        worst = worst.max((direct - oracle).abs()).max((graph - oracle).abs());
    }
    ensure!(worst <= tol, "chamfer vs oracle max diff {worst:e}");
    Ok(format!("chamfer oracle max diff {worst:.1e}"))
}

// 2. PointNet permutation invariance.

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::new();
    let net = PointNet::new(&mut store, "pointnet", &PointNetConfig::default(), &mut rng);
    generic_point(&mut store, 0.05, 3);
    let pts: Vec<Vec3> = (0..1024).map(|_| [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)]).collect();
    let latent = |p: &[Vec3]| {
        let mut g = Graph::new(&store);
        let z = net.encode(&mut g, &Tensor::from_rows(p)).unwrap();
        g.value(z).clone()
    };
    let base = latent(&pts);
    ensure!(base.cols() == 512, "latent width {}", base.cols());
    let mut max_diff: f64 = 0.0;
    for _ in 0..100 {
        let mut perm = pts.clone();
        perm.shuffle(&mut rng);
        max_diff = max_diff.max(latent(&perm).max_abs_diff(&base));
    }
    ensure!(max_diff == 0.0, "max abs diff {max_diff:e}");
    Ok("100 permutations, max abs diff 0".into())
}

// 3. Gradient audit.

fn two_samples(root: &Path, variant: Variant) -> (MassModel, Vec<(ModelInput, Target)>) {
    let mut cfg = ExperimentConfig::new(variant, root.join("data"), root.join("out"), 5);
    cfg.scale = Scale::Tiny;
    cfg.k = Some(4);
    cfg.surrogate_fraction = 0.0;
    cfg.validation_fraction = 0.0;
    let data = ExperimentData::load(&cfg).unwrap();
    let model = MassModel::new(&cfg.model_config(), 9).unwrap();
    let batch = prepare_batch(&data.synthetic, &[0, 5], model.config.points, true, [1, 2, 3]).unwrap();
    (model, batch)
}

fn criterion_3() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    common::small_dataset(dir.path(), 6, 64, 21);
    let mut lines = Vec::new();
    let mut all = GradCheckReport::default();
    for v in Variant::ALL {
        let (mut model, batch) = two_samples(dir.path(), v);
        generic_point(&mut model.params, 0.05, 17);
        let lambda = if v.reconstructs() { 1.0 } else { 0.0 };
        let report = check_gradients(&model.params, &GradCheckConfig::default(), |g| model.batch_loss(g, &batch, lambda, 16.5).unwrap());
        lines.push(format!("{v}: {} params, max rel {:.1e}", report.checked, report.max_rel_error));
        ensure!(
            report.passed(),
            "{v}: {} failures, {} unresolved {:?}, worst {:?} {:?} rel {:e}",
            report.failures,
            report.unresolved,
            report.unresolved_entries,
            report.worst,
            report.worst_values,
            report.max_rel_error
        );
        all.merge(&report);
    }
    ensure!(all.max_rel_error < 1e-4, "max rel error {:e}", all.max_rel_error);
    Ok(lines.join("; "))
}

// 4. Scale invariance.

fn criterion_4() -> Outcome {
    let intr = Intrinsics::kinect_scaled(160);
    let shading = Shading::default();
    let rig = RigConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    let mut pixels = 0usize;
    for i in 0..3 {
        let mesh = synth_object(&format!("m{i}"), &SynthConfig::default(), &mut rng).unwrap();
        let big = mesh.scaled(10.0).unwrap();
        let poses_a = camera_rig(mesh.diagonal(), mesh.center(), &rig).unwrap();
        let poses_b = camera_rig(big.diagonal(), big.center(), &rig).unwrap();
        for (pa, pb) in poses_a.iter().zip(&poses_b) {
            let a = normalize_depth(&render_depth(&mesh, pa, &intr, &shading).unwrap().depth, mesh.diagonal()).unwrap();
            let b = normalize_depth(&render_depth(&big, pb, &intr, &shading).unwrap().depth, big.diagonal()).unwrap();
            ensure!(a.valid == b.valid, "valid masks differ for {} view {}", mesh.id, pa.view_index);
            for k in 0..a.data.len() {
                if a.valid[k] {
                    worst = worst.max((a.data[k] - b.data[k]).abs());
                    pixels += 1;
                }
            }
        }
    }
    ensure!(pixels > 0, "no valid pixels rendered");
    ensure!(worst <= 1e-6, "normalized depth differs by {worst:e}");
    let y: Vec<f64> = (1..200).map(|i| 0.5 + i as f64 * 0.013).collect();
    let mut silog_worst: f64 = 0.0;
    for ratio in [0.1, 0.5, 2.0, 10.0, 37.5] {
        let y_hat: Vec<f64> = y.iter().map(|v| v * ratio).collect();
        silog_worst = silog_worst.max(depth_metric_report(&y, &y_hat, None).unwrap().silog.abs());
    }
    ensure!(silog_worst < 1e-9, "silog of constant ratio {silog_worst:e}");
    Ok(format!("{pixels} pixels, max diff {worst:.1e}; silog {silog_worst:.1e}"))
}

// 5. b-invariance.

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let density = 10f64.powf(rng.gen_range(1.0..4.0));
        let volume = 10f64.powf(rng.gen_range(-6.0..0.0));
        let base = predict_mass(density, volume, 1.0).unwrap().mass;
        for b in [16.5, 100.0] {
            let m = predict_mass(density, volume, b).unwrap().mass;
            worst = worst.max((m - base).abs() / base);
        }
    }
    let cfg = ModelConfig::tiny(Variant::Pointnet);
    let mut model = MassModel::new(&cfg, 1).unwrap();
    generic_point(&mut model.params, 0.05, 1);
    let dir = tempfile::tempdir().unwrap();
    common::small_dataset(dir.path(), 4, 48, 5);
    let (_, batch) = two_samples(dir.path(), Variant::Pointnet);
    for (input, _) in &batch {
        let base = model.predict(input, 1.0).unwrap().0.mass;
        for b in [16.5, 100.0] {
            worst = worst.max((model.predict(input, b).unwrap().0.mass - base).abs() / base);
        }
    }
    ensure!(worst <= 1e-12, "relative spread {worst:e}");
    Ok(format!("max relative spread {worst:.1e}"))
}

// 6. Overfitting a fixed set.

fn criterion_6() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    common::small_dataset(dir.path(), 12, 160, 6);
    let mut lines = Vec::new();
    let mut failed = Vec::new();
    for v in Variant::ALL {
        let start = Instant::now();
        let mut cfg = ExperimentConfig::new(v, dir.path().join("data"), dir.path().join("out"), 6);
        cfg.k = Some(if v == Variant::Dgcnn { 10 } else { 8 });
        cfg.surrogate_fraction = 0.0;
        cfg.validation_fraction = 0.0;
        let data = ExperimentData::load(&cfg).unwrap();
        // One view from each of eight objects.
        let mut picked = Vec::new();
        let mut seen = BTreeSet::new();
        for (i, view) in data.synthetic.iter().enumerate() {
            if seen.insert(view.id.clone()) {
                picked.push(i);
            }
            if picked.len() == 8 {
                break;
            }
        }
        let mcfg = cfg.model_config();
        let batch = prepare_batch(&data.synthetic, &picked, mcfg.points, false, [6, 0, 0]).unwrap();
        let mut model = MassModel::new(&mcfg, 6).unwrap();
        let mut opt = Adam::new(&model.params, AdamConfig::default());
        let mut reached = None;
        let mut last = f64::NAN;
        for step in 0..2000 {
            let log = train_step(&mut model, &mut opt, &batch, Source::Synthetic, cfg.lambda(), cfg.b, step).unwrap();
            last = log.alde;
            if log.alde < 0.05 {
                reached = Some(step);
                break;
            }
        }
        let secs = start.elapsed().as_secs_f64();
        match reached {
            Some(s) => lines.push(format!("{v}: {s} steps ({secs:.0}s)")),
            None => {
                lines.push(format!("{v}: ALDE {last:.3} after 2000 steps ({secs:.0}s)"));
                failed.push(v);
            }
        }
        ensure!(secs < 900.0, "{v} took {secs:.0}s");
    }
    ensure!(failed.is_empty(), "{}", lines.join("; "));
    Ok(lines.join("; "))
}

// 7. Depth variants versus image-only.

fn criterion_7() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let report = common::small_dataset(dir.path(), 500, 160, 7);
    ensure!(report.rejected.is_empty(), "{} rejected objects", report.rejected.len());
    let mut lines = Vec::new();
    let mut wins: BTreeMap<Variant, usize> = BTreeMap::new();
    for seed in 0..3u64 {
        let mut results = BTreeMap::new();
        for v in Variant::ALL {
            let mut cfg = ExperimentConfig::new(v, dir.path().join("data"), dir.path().join(format!("run_{v}_{seed}")), seed);
            cfg.k = Some(if v == Variant::Dgcnn { 10 } else { 8 });
            cfg.epochs = 8;
            cfg.views_per_object = Some(4);
            cfg.surrogate_fraction = 0.3;
            let data = ExperimentData::load(&cfg).unwrap();
            let out = run_with_data(&cfg, &data).unwrap();
            results.insert(v, out.test);
        }
        let base = results[&Variant::ImageOnly];
        let mut parts = vec![format!("seed {seed}: image_only alde {:.3} q {:.2}", base.alde, base.q)];
        for (v, r) in &results {
            if *v == Variant::ImageOnly {
                continue;
            }
            if r.alde < base.alde && r.q > base.q {
                *wins.entry(*v).or_default() += 1;
            }
            parts.push(format!("{v} {:.3}/{:.2}", r.alde, r.q));
        }
        lines.push(parts.join(", "));
    }
    let losers: Vec<String> = Variant::ALL
        .iter()
        .filter(|v| **v != Variant::ImageOnly && wins.get(v).copied().unwrap_or(0) < 2)
        .map(|v| v.to_string())
        .collect();
    ensure!(losers.is_empty(), "ordering fails for {:?}: {}", losers, lines.join(" | "));
    Ok(lines.join(" | "))
}

// 8. Dual-source loss rule and epoch audit.

fn criterion_8() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    common::small_dataset(dir.path(), 16, 64, 8);
    let mut cfg = ExperimentConfig::new(Variant::PointnetFolding, dir.path().join("data"), dir.path().join("run"), 8);
    cfg.scale = Scale::Tiny;
    cfg.epochs = 3;
    cfg.batch_size = 5;
    cfg.surrogate_fraction = 0.4;
    cfg.validation_fraction = 0.0;
    let data = ExperimentData::load(&cfg).unwrap();
    run_with_data(&cfg, &data).unwrap();
    let logs: Vec<StepLog> = read_jsonl(&cfg.out_dir.join(TRAIN_LOG_FILE)).unwrap();
    let audits: Vec<BatchAudit> = read_jsonl(&cfg.out_dir.join(BATCH_AUDIT_FILE)).unwrap();
    ensure!(logs.len() == audits.len(), "log and audit lengths differ");
    let mut counts: BTreeMap<Source, usize> = BTreeMap::new();
    for l in &logs {
        *counts.entry(l.source).or_default() += 1;
        match l.source {
            Source::Synthetic => ensure!(l.cd.is_some() && close(l.total, l.alde + l.cd.unwrap(), 1e-12), "step {} synthetic without cd", l.step),
            Source::RgbMass => ensure!(l.cd.is_none() && l.total == l.alde, "step {} rgb_mass with cd", l.step),
        }
    }
    ensure!(counts.len() == 2, "only one source present: {counts:?}");

    let manifest = DatasetManifest::read(&cfg.dataset_dir.join(MANIFEST_FILE)).unwrap();
    let mut expected: Vec<String> = manifest.split(Split::Train).iter().map(|r| format!("{}/{:02}", r.id, r.view_index)).collect();
    expected.sort();
    let test_ids = manifest.ids(Split::Test);
    for epoch in 0..cfg.epochs {
        let mut got: Vec<String> = audits.iter().filter(|a| a.epoch == epoch).flat_map(|a| a.samples.clone()).collect();
        got.sort();
        ensure!(got == expected, "epoch {epoch} multiset differs ({} vs {})", got.len(), expected.len());
        ensure!(
            got.iter().all(|k| !test_ids.contains(k.split('/').next().unwrap())),
            "test object in training batch"
        );
    }
    Ok(format!(
        "{} synthetic / {} rgb_mass steps, {} samples per epoch",
        counts[&Source::Synthetic],
        counts[&Source::RgbMass],
        expected.len()
    ))
}

// 9. Dataset integrity.

fn dir_bytes(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn criterion_9() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let report = common::small_dataset(a.path(), 30, 96, 9);
    common::small_dataset(b.path(), 30, 96, 9);
    let data = a.path().join("data");
    let manifest = DatasetManifest::read(&data.join(MANIFEST_FILE)).unwrap();
    manifest.validate(&data).map_err(|e| e.to_string())?;

    let mut views: BTreeMap<&str, BTreeSet<usize>> = BTreeMap::new();
    for r in &manifest.records {
        views.entry(r.id.as_str()).or_default().insert(r.view_index);
    }
    ensure!(views.len() == report.train_models + report.test_models, "object count");
    ensure!(views.values().all(|v| v.len() == VIEWS_PER_OBJECT), "not 14 views per object");

    let diag: BTreeMap<&str, f64> = manifest.records.iter().map(|r| (r.id.as_str(), r.bbox_diagonal_m)).collect();
    let mut worst: f64 = 0.0;
    for (id, d) in &diag {
        let target = ReconTarget::read(&ReconTarget::path(&data, id)).unwrap();
        ensure!(target.poses.len() == VIEWS_PER_OBJECT, "{id}: {} poses", target.poses.len());
        for p in &target.poses {
            worst = worst.max((p.distance() / (2.1 * d) - 1.0).abs());
        }
    }
    ensure!(worst <= 1e-9, "camera distance relative error {worst:e}");

    let train = manifest.ids(Split::Train);
    let test = manifest.ids(Split::Test);
    ensure!(train.is_disjoint(&test), "split overlap");
    ensure!(!train.is_empty() && !test.is_empty(), "empty split");

    let (fa, fb) = (dir_bytes(&data), dir_bytes(&b.path().join("data")));
    ensure!(fa.keys().eq(fb.keys()), "file lists differ");
    let differing: Vec<&String> = fa.iter().filter(|(k, v)| fb[*k] != **v).map(|(k, _)| k).collect();
    ensure!(differing.is_empty(), "{} files differ, e.g. {}", differing.len(), differing[0]);
    Ok(format!(
        "{} objects, {} files byte-identical, distance error {worst:.1e}",
        views.len(),
        fa.len()
    ))
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 9] = [
        (1, "metric oracle suite", criterion_1),
        (2, "pointnet permutation invariance", criterion_2),
        (3, "gradient audit", criterion_3),
        (4, "scale invariance", criterion_4),
        (5, "b-invariance", criterion_5),
        (6, "overfit eight samples", criterion_6),
        (7, "depth variants beat image-only", criterion_7),
        (8, "dual-source loss rule", criterion_8),
        (9, "dataset integrity", criterion_9),
    ];
    let only: Option<BTreeSet<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let budgets = [10.0, f64::INFINITY, 300.0, f64::INFINITY, f64::INFINITY, f64::INFINITY, f64::INFINITY, f64::INFINITY, f64::INFINITY];
    let mut failures = 0;
    for (n, name, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        let budget = budgets[n as usize - 1];
        let result = match result {
            Ok(d) if secs > budget => Err(format!("{d}; took {secs:.1}s, budget {budget}s")),
            r => r,
        };
        match result {
            Ok(detail) => println!("criterion {n} ({name}): PASS [{secs:.1}s] {detail}"),
            Err(why) => {
                failures += 1;
                println!("criterion {n} ({name}): FAIL [{secs:.1}s] {why}");
            }
        }
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
