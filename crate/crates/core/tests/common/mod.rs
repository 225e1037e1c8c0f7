#![allow(dead_code)]

use std::path::Path;

use massnet::datagen::synth::{write_synthetic_corpus, SynthConfig};
use massnet::datagen::{build_dataset, BuildReport, GenerateConfig, Intrinsics};

/// Writes `count` synthetic objects under `root/models` and renders them
/// into `root/data` at a reduced sensor width.
pub fn small_dataset(root: &Path, count: usize, width: usize, seed: u64) -> BuildReport {
    let models = root.join("models");
    write_synthetic_corpus(
        &models,
        &SynthConfig {
            count,
            seed,
            ..SynthConfig::default()
        },
    )
    .unwrap();
    let cfg = GenerateConfig {
        intrinsics: Intrinsics::kinect_scaled(width),
        seed,
        ..GenerateConfig::default()
    };
    build_dataset(&models, &root.join("data"), &cfg).unwrap()
}
