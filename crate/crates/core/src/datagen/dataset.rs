use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::camera::{camera_rig, CameraPose, Intrinsics, RigConfig, VIEWS_PER_OBJECT};
use super::depth::normalize_depth;
use super::mesh::{load_mesh, read_metadata_table, TriangleMesh};
use super::render::{render_depth, Shading};
use crate::geom::Vec3;
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const DATASET_INFO_FILE: &str = "dataset.json";
pub const METADATA_FILE: &str = "metadata.csv";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub view_index: usize,
    pub rgb_path: String,
    pub depth_path: String,
    pub mass_kg: f64,
    pub bbox_diagonal_m: f64,
    pub split: Split,
}

/// One record per rendered view, in (id, view) order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        for r in &self.records {
            serde_json::to_writer(&mut out, r).expect("manifest records serialize");
            out.push(b'\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.into(),
                reason: format!("line {}: {e}", n + 1),
            })?);
        }
        Ok(Self { records })
    }

    pub fn split(&self, split: Split) -> Vec<&ManifestRecord> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    pub fn ids(&self, split: Split) -> BTreeSet<&str> {
        self.records.iter().filter(|r| r.split == split).map(|r| r.id.as_str()).collect()
    }

    /// Checks uniqueness of (id, view), id-disjoint splits, and that every
    /// referenced file exists relative to `base`.
    pub fn validate(&self, base: &Path) -> Result<()> {
        let mut seen = HashSet::new();
        let mut split_of: BTreeMap<&str, Split> = BTreeMap::new();
        for r in &self.records {
            if !seen.insert((r.id.as_str(), r.view_index)) {
                return Err(Error::Domain(format!("duplicate record ({}, {})", r.id, r.view_index)));
            }
            if let Some(prev) = split_of.insert(&r.id, r.split) {
                if prev != r.split {
                    return Err(Error::Domain(format!("object `{}` appears in both splits", r.id)));
                }
            }
            for p in [&r.rgb_path, &r.depth_path] {
                if !base.join(p).is_file() {
                    return Err(Error::Domain(format!("missing file {p}")));
                }
            }
        }
        Ok(())
    }
}

/// Rendering parameters recorded next to the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub intrinsics: Intrinsics,
    pub rig: RigConfig,
    pub views: usize,
    pub seed: u64,
    pub split_fraction: f64,
    pub surface_points: usize,
}

impl DatasetInfo {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.into(),
            reason: e.to_string(),
        })
    }
}

/// Complete surface samples of one object (world frame, meters) with the
/// poses it was captured from; the reconstruction target for its views.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconTarget {
    pub surface: Vec<Vec3>,
    pub poses: Vec<CameraPose>,
}

impl ReconTarget {
    pub fn path(dataset_dir: &Path, id: &str) -> PathBuf {
        dataset_dir.join("recon").join(format!("{id}.json"))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.into(),
            reason: e.to_string(),
        })
    }
}

#[derive(Clone, Debug)]
pub struct GenerateConfig {
    pub intrinsics: Intrinsics,
    pub rig: RigConfig,
    pub shading: Shading,
    pub views: usize,
    pub split_fraction: f64,
    pub seed: u64,
    pub surface_points: usize,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            intrinsics: Intrinsics::kinect(),
            rig: RigConfig::default(),
            shading: Shading::default(),
            views: VIEWS_PER_OBJECT,
            split_fraction: 0.9,
            seed: 0,
            surface_points: 256,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Rejection {
    pub id: String,
    pub reason: String,
}

#[derive(Clone, Debug)]
pub struct BuildReport {
    pub manifest: DatasetManifest,
    pub train_models: usize,
    pub test_models: usize,
    pub rejected: Vec<Rejection>,
}

/// Number of (train, test) models for a corpus of `n` at `fraction`.
pub fn split_counts(n: usize, fraction: f64) -> (usize, usize) {
    let mut train = (n as f64 * fraction).round() as usize;
    if n >= 2 {
        train = train.clamp(1, n - 1);
    } else {
        train = train.min(n);
    }
    (train, n - train)
}

/// Deterministic id-level split: sorted ids shuffled by `seed`, the first
/// `split_counts` share go to training.
pub fn split_ids(ids: &[String], fraction: f64, seed: u64) -> BTreeMap<String, Split> {
    let mut sorted: Vec<&String> = ids.iter().collect();
    sorted.sort();
    sorted.dedup();
    let (train, _) = split_counts(sorted.len(), fraction);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sorted.shuffle(&mut rng);
    sorted
        .into_iter()
        .enumerate()
        .map(|(i, id)| (id.clone(), if i < train { Split::Train } else { Split::Test }))
        .collect()
}

/// Stable 64-bit FNV-1a of a string, used to derive per-object seeds.
pub fn stable_hash(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Loads every model listed in `model_dir/metadata.csv`, rejecting those
/// without valid metric dimensions and mass.
pub fn load_corpus(model_dir: &Path) -> Result<(Vec<TriangleMesh>, Vec<Rejection>)> {
    let table = read_metadata_table(&model_dir.join(METADATA_FILE))?;
    let mut meshes = Vec::new();
    let mut rejected = Vec::new();
    for meta in &table {
        match load_mesh(&model_dir.join(format!("{}.obj", meta.id)), meta) {
            Ok(m) => meshes.push(m),
            Err(e @ (Error::Metadata { .. } | Error::Parse { .. })) => rejected.push(Rejection {
                id: meta.id.clone(),
                reason: e.to_string(),
            }),
            Err(e) => return Err(e),
        }
    }
    meshes.sort_by(|a, b| a.id.cmp(&b.id));
    meshes.dedup_by(|a, b| a.id == b.id);
    Ok((meshes, rejected))
}

fn rel_path(kind: &str, id: &str, view: usize) -> String {
    format!("{kind}/{id}_{view:02}.png")
}

/// Renders every accepted mesh from the capture rig and writes RGB images,
/// normalized 16-bit depth maps, reconstruction targets and the manifest.
pub fn build_dataset(model_dir: &Path, out_dir: &Path, cfg: &GenerateConfig) -> Result<BuildReport> {
    if !(cfg.split_fraction > 0.0 && cfg.split_fraction < 1.0) {
        return Err(Error::Domain(format!("split fraction must lie in (0, 1), got {}", cfg.split_fraction)));
    }
    if cfg.views == 0 || cfg.views > VIEWS_PER_OBJECT {
        return Err(Error::Domain(format!("views must be in 1..={VIEWS_PER_OBJECT}, got {}", cfg.views)));
    }
    cfg.intrinsics.validate()?;
    let (meshes, rejected) = load_corpus(model_dir)?;
    if meshes.is_empty() {
        return Err(Error::EmptyCorpus(model_dir.into()));
    }
    for sub in ["rgb", "depth", "recon"] {
        let d = out_dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }

    let ids: Vec<String> = meshes.iter().map(|m| m.id.clone()).collect();
    let splits = split_ids(&ids, cfg.split_fraction, cfg.seed);

    let per_object: Vec<Vec<ManifestRecord>> = meshes
        .par_iter()
        .map(|mesh| render_object(mesh, splits[&mesh.id], out_dir, cfg))
        .collect::<Result<_>>()?;
    let manifest = DatasetManifest {
        records: per_object.into_iter().flatten().collect(),
    };
    manifest.write(&out_dir.join(MANIFEST_FILE))?;

    let info = DatasetInfo {
        intrinsics: cfg.intrinsics,
        rig: cfg.rig,
        views: cfg.views,
        seed: cfg.seed,
        split_fraction: cfg.split_fraction,
        surface_points: cfg.surface_points,
    };
    let info_path = out_dir.join(DATASET_INFO_FILE);
    let mut f = fs::File::create(&info_path).map_err(|e| Error::io(&info_path, e))?;
    serde_json::to_writer_pretty(&mut f, &info).expect("dataset info serializes");
    f.write_all(b"\n").map_err(|e| Error::io(&info_path, e))?;

    let train_models = splits.values().filter(|&&s| s == Split::Train).count();
    Ok(BuildReport {
        manifest,
        train_models,
        test_models: splits.len() - train_models,
        rejected,
    })
}

fn render_object(mesh: &TriangleMesh, split: Split, out_dir: &Path, cfg: &GenerateConfig) -> Result<Vec<ManifestRecord>> {
    let diag = mesh.diagonal();
    let poses: Vec<CameraPose> = camera_rig(diag, mesh.center(), &cfg.rig)?.into_iter().take(cfg.views).collect();
    let mut records = Vec::with_capacity(poses.len());
    for pose in &poses {
        let out = render_depth(mesh, pose, &cfg.intrinsics, &cfg.shading).map_err(|e| e.context(format!("rendering `{}`", mesh.id)))?;
        let normalized = normalize_depth(&out.depth, diag)?;
        let rgb_path = rel_path("rgb", &mesh.id, pose.view_index);
        let depth_path = rel_path("depth", &mesh.id, pose.view_index);
        let rgb_abs = out_dir.join(&rgb_path);
        out.rgb.save(&rgb_abs).map_err(|e| Error::image(&rgb_abs, e))?;
        normalized.write_png(&out_dir.join(&depth_path))?;
        records.push(ManifestRecord {
            id: mesh.id.clone(),
            view_index: pose.view_index,
            rgb_path,
            depth_path,
            mass_kg: mesh.mass,
            bbox_diagonal_m: diag,
            split,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ stable_hash(&mesh.id));
    let recon = ReconTarget {
        surface: mesh.sample_surface(cfg.surface_points, &mut rng),
        poses,
    };
    let path = ReconTarget::path(out_dir, &mesh.id);
    let text = serde_json::to_string(&recon).expect("recon target serializes");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn large_corpus_split_counts() {
        assert_eq!(split_counts(8948, 0.9), (8053, 895));
        let (train, test) = split_counts(8948, 0.9);
        assert_eq!(train * VIEWS_PER_OBJECT, 112_742);
        assert_eq!(test * VIEWS_PER_OBJECT, 12_530);
        assert_eq!(split_counts(10, 0.9), (9, 1));
        assert_eq!(split_counts(2, 0.99), (1, 1));
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let ids: Vec<String> = (0..50).map(|i| format!("obj{i:03}")).collect();
        let a = split_ids(&ids, 0.9, 7);
        let b = split_ids(&ids, 0.9, 7);
        assert_eq!(a, b);
        assert_eq!(a.values().filter(|&&s| s == Split::Test).count(), 5);
        let mut shuffled = ids.clone();
        shuffled.reverse();
        assert_eq!(split_ids(&shuffled, 0.9, 7), a);
        assert_ne!(split_ids(&ids, 0.9, 8), a);
    }

    #[test]
    fn manifest_validation_catches_overlap() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.png"), b"x").unwrap();
        let rec = |id: &str, view, split| ManifestRecord {
            id: id.into(),
            view_index: view,
            rgb_path: "a.png".into(),
            depth_path: "a.png".into(),
            mass_kg: 1.0,
            bbox_diagonal_m: 1.0,
            split,
        };
        let ok = DatasetManifest {
            records: vec![rec("a", 0, Split::Train), rec("a", 1, Split::Train), rec("b", 0, Split::Test)],
        };
        ok.validate(dir.path()).unwrap();
        let overlap = DatasetManifest {
            records: vec![rec("a", 0, Split::Train), rec("a", 1, Split::Test)],
        };
        assert!(overlap.validate(dir.path()).is_err());
        let dup = DatasetManifest {
            records: vec![rec("a", 0, Split::Train), rec("a", 0, Split::Train)],
        };
        assert!(dup.validate(dir.path()).is_err());
        let mut missing = ok.clone();
        missing.records[0].depth_path = "nope.png".into();
        assert!(missing.validate(dir.path()).is_err());
    }
}
