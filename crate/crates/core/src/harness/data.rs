use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{denormalize_depth, DatasetInfo, DepthImage, DepthUnits, ManifestRecord, ReconTarget};
use crate::geom::{self, Vec3};
use crate::model::{ModelInput, Target};
use crate::pcops::{flip_augment, preprocess, unproject, FlipMode, ImageTensor, PointCloud};
use crate::{Error, Result};

/// Where a training sample comes from; decides which loss terms apply.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    /// Rendered objects with complete-shape targets.
    Synthetic,
    /// Mass-only samples without reconstruction targets.
    RgbMass,
}

impl Source {
    pub fn name(self) -> &'static str {
        match self {
            Source::Synthetic => "synthetic",
            Source::RgbMass => "rgb_mass",
        }
    }
}

/// Mixes several values into one seed (splitmix64 finalizer per step).
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut h = 0x9e37_79b9_7f4a_7c15u64;
    for &p in parts {
        h ^= p;
        h = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
        h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h ^= h >> 31;
    }
    h
}

/// One decoded view, before per-epoch resampling and augmentation.
#[derive(Clone, Debug)]
pub struct LoadedView {
    pub id: String,
    pub view_index: usize,
    pub mass: f64,
    pub image: ImageTensor,
    /// Full metric back-projection of the depth map (camera frame).
    pub cloud: Option<PointCloud>,
    /// Complete surface samples in this view's camera frame.
    pub recon: Option<Vec<Vec3>>,
}

impl LoadedView {
    pub fn key(&self) -> String {
        format!("{}/{:02}", self.id, self.view_index)
    }
}

#[derive(Clone, Debug, Default)]
pub struct LoadOptions {
    pub image_side: usize,
    pub need_points: bool,
    pub with_recon: bool,
    /// Replacement depth maps, matched by file name.
    pub depth_dir: Option<PathBuf>,
}

fn depth_path(base: &Path, rec: &ManifestRecord, opts: &LoadOptions) -> PathBuf {
    match &opts.depth_dir {
        Some(dir) => dir.join(Path::new(&rec.depth_path).file_name().unwrap_or_default()),
        None => base.join(&rec.depth_path),
    }
}

pub fn load_view(base: &Path, info: &DatasetInfo, rec: &ManifestRecord, opts: &LoadOptions, recon: Option<&ReconTarget>) -> Result<LoadedView> {
    let rgb_path = base.join(&rec.rgb_path);
    let rgb = image::open(&rgb_path).map_err(|e| Error::image(&rgb_path, e))?.into_rgb8();
    let image = ImageTensor::from_rgb_square(&rgb, opts.image_side);
    let cloud = if opts.need_points {
        let path = depth_path(base, rec, opts);
        let normalized = DepthImage::read_png(&path, info.intrinsics, DepthUnits::Normalized)?;
        let metric = denormalize_depth(&normalized, rec.bbox_diagonal_m)?;
        Some(unproject(&metric, &info.intrinsics).map_err(|e| e.context(path.display().to_string()))?)
    } else {
        None
    };
    let recon = match recon {
        Some(t) if opts.with_recon => {
            let pose = t
                .poses
                .iter()
                .find(|p| p.view_index == rec.view_index)
                .ok_or_else(|| Error::Shape(format!("{} has no pose for view {}", rec.id, rec.view_index)))?;
            let frame = pose.frame()?;
            Some(t.surface.iter().map(|&p| frame.to_camera(p)).collect())
        }
        _ => None,
    };
    Ok(LoadedView {
        id: rec.id.clone(),
        view_index: rec.view_index,
        mass: rec.mass_kg,
        image,
        cloud,
        recon,
    })
}

/// Decodes all records in parallel, preserving order.
pub fn load_views(base: &Path, info: &DatasetInfo, records: &[&ManifestRecord], opts: &LoadOptions) -> Result<Vec<LoadedView>> {
    let targets: HashMap<String, ReconTarget> = if opts.with_recon {
        let mut ids: Vec<&str> = records.iter().map(|r| r.id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.par_iter()
            .map(|id| Ok((id.to_string(), ReconTarget::read(&ReconTarget::path(base, id))?)))
            .collect::<Result<_>>()?
    } else {
        HashMap::new()
    };
    records
        .par_iter()
        .map(|rec| load_view(base, info, rec, opts, targets.get(&rec.id)))
        .collect()
}

/// Network input and target for one view. The cloud is resampled and
/// centered, the reconstruction target follows the same centering, and
/// `flip` mirrors image, cloud and target together.
pub fn prepare_sample(view: &LoadedView, points: usize, flip: FlipMode, rng: &mut impl Rng) -> Result<(ModelInput, Target)> {
    let (image, cloud, offset) = match &view.cloud {
        Some(raw) => {
            let pc = preprocess(raw, points, rng)?;
            let offset = pc.centroid_offset;
            let (img, pc) = flip_augment(&view.image, &pc, flip);
            (img, Some(pc), offset)
        }
        None => (flip.apply_image(&view.image), None, [0.0; 3]),
    };
    let recon = view.recon.as_ref().map(|surface| {
        let mut pts: Vec<Vec3> = surface.iter().map(|&p| geom::sub(p, offset)).collect();
        flip.apply_points(&mut pts);
        pts
    });
    Ok((
        ModelInput { image, cloud },
        Target {
            mass: view.mass,
            recon,
        },
    ))
}

/// Object-level partition of the training split.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TrainPartition {
    pub synthetic: Vec<String>,
    pub surrogate: Vec<String>,
    pub validation: Vec<String>,
}

/// Shuffles the sorted ids with `seed`, then takes the validation share,
/// then the surrogate share of the rest; everything left is synthetic.
pub fn partition_train_ids(ids: &[String], validation_fraction: f64, surrogate_fraction: f64, seed: u64) -> TrainPartition {
    let mut ids: Vec<String> = ids.to_vec();
    ids.sort();
    ids.dedup();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = ((ids.len() as f64) * validation_fraction).round() as usize;
    let n_val = n_val.min(ids.len().saturating_sub(1));
    let rest = ids.split_off(n_val);
    let n_sur = ((rest.len() as f64) * surrogate_fraction).round() as usize;
    let n_sur = n_sur.min(rest.len().saturating_sub(1));
    let mut synthetic = rest;
    let surrogate = synthetic.split_off(synthetic.len() - n_sur);
    TrainPartition {
        synthetic,
        surrogate,
        validation: ids,
    }
}

/// Keeps `per_object` evenly spaced views of every object.
pub fn subsample_views<'a>(records: &[&'a ManifestRecord], per_object: Option<usize>) -> Vec<&'a ManifestRecord> {
    let Some(v) = per_object else {
        return records.to_vec();
    };
    let mut by_id: BTreeMap<&str, Vec<&'a ManifestRecord>> = BTreeMap::new();
    for r in records {
        by_id.entry(r.id.as_str()).or_default().push(r);
    }
    let mut out = Vec::new();
    for (_, mut recs) in by_id {
        recs.sort_by_key(|r| r.view_index);
        let n = recs.len();
        if v >= n {
            out.extend(recs);
        } else {
            out.extend((0..v).map(|i| recs[i * n / v]));
        }
    }
    out
}
