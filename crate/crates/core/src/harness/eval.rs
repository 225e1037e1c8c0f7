use std::collections::HashMap;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{stable_hash, DatasetManifest};
use crate::model::MassModel;
use crate::objectives::{MassMetricsReport, MASS_FLOOR};
use crate::pcops::FlipMode;
use crate::{Error, Result};

use super::data::{derive_seed, prepare_sample, LoadedView};

/// Per-view output persisted next to the aggregate report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub view_index: usize,
    pub density: f64,
    pub volume: f64,
    pub mass: f64,
    pub b: f64,
}

/// Augmentation-free pass over `views`. Each view's resampling draw is
/// seeded from `seed` and its key, so results do not depend on order or
/// thread count.
pub fn predict_views(model: &MassModel, views: &[LoadedView], b: f64, seed: u64) -> Result<Vec<PredictionRecord>> {
    views
        .par_iter()
        .map(|v| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, stable_hash(&v.id), v.view_index as u64]));
            let (input, _) = prepare_sample(v, model.config.points, FlipMode::None, &mut rng)?;
            let (p, _) = model.predict(&input, b)?;
            Ok(PredictionRecord {
                id: v.id.clone(),
                view_index: v.view_index,
                density: p.density,
                volume: p.volume,
                mass: p.mass.max(MASS_FLOOR),
                b,
            })
        })
        .collect()
}

pub fn evaluate_views(model: &MassModel, views: &[LoadedView], b: f64, seed: u64) -> Result<(MassMetricsReport, Vec<PredictionRecord>)> {
    if views.is_empty() {
        return Err(Error::EmptySet("evaluation set".into()));
    }
    let preds = predict_views(model, views, b, seed)?;
    let pairs: Vec<(f64, f64)> = views.iter().zip(&preds).map(|(v, p)| (v.mass, p.mass)).collect();
    Ok((MassMetricsReport::from_pairs(&pairs)?, preds))
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for it in items {
        serde_json::to_writer(&mut w, it).map_err(|e| Error::io(path, e.into()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.into(),
            reason: format!("line {}: {e}", i + 1),
        })?);
    }
    Ok(out)
}

/// Mass metrics of stored predictions against manifest masses, joined on
/// `(id, view_index)`.
pub fn score_predictions(preds: &[PredictionRecord], truth: &DatasetManifest) -> Result<MassMetricsReport> {
    let masses: HashMap<(&str, usize), f64> = truth.records.iter().map(|r| ((r.id.as_str(), r.view_index), r.mass_kg)).collect();
    let pairs = preds
        .iter()
        .map(|p| {
            masses
                .get(&(p.id.as_str(), p.view_index))
                .map(|&y| (y, p.mass.max(MASS_FLOOR)))
                .ok_or_else(|| Error::Metadata {
                    id: p.id.clone(),
                    reason: format!("view {} not in the truth manifest", p.view_index),
                })
        })
        .collect::<Result<Vec<_>>>()?;
    MassMetricsReport::from_pairs(&pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{ManifestRecord, Split};

    fn rec(id: &str, view: usize, mass: f64) -> ManifestRecord {
        ManifestRecord {
            id: id.into(),
            view_index: view,
            rgb_path: String::new(),
            depth_path: String::new(),
            mass_kg: mass,
            bbox_diagonal_m: 1.0,
            split: Split::Test,
        }
    }

    fn pred(id: &str, view: usize, mass: f64) -> PredictionRecord {
        PredictionRecord {
            id: id.into(),
            view_index: view,
            density: 1000.0,
            volume: mass / 1000.0,
            mass,
            b: 16.5,
        }
    }

    #[test]
    fn exact_and_doubled_predictions() {
        let truth = DatasetManifest {
            records: vec![rec("a", 0, 1.0), rec("a", 1, 1.0), rec("b", 0, 3.0)],
        };
        let exact = [pred("a", 0, 1.0), pred("a", 1, 1.0), pred("b", 0, 3.0)];
        let r = score_predictions(&exact, &truth).unwrap();
        assert_eq!((r.alde, r.ape, r.mnre, r.q), (0.0, 0.0, 1.0, 1.0));
        let doubled = [pred("a", 0, 2.0), pred("a", 1, 2.0), pred("b", 0, 6.0)];
        let r = score_predictions(&doubled, &truth).unwrap();
        assert!((r.alde - 2f64.ln()).abs() < 1e-12);
        assert!((r.ape - 1.0).abs() < 1e-12);
        assert!((r.mnre - 0.5).abs() < 1e-12);
        assert_eq!(r.q, 1.0);
        assert!(score_predictions(&[pred("zz", 0, 1.0)], &truth).is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.jsonl");
        let items = vec![pred("a", 0, 1.5), pred("b", 3, 0.25)];
        write_jsonl(&path, &items).unwrap();
        assert_eq!(read_jsonl::<PredictionRecord>(&path).unwrap(), items);
    }
}
