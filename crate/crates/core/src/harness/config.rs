use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::model::{ModelConfig, Variant};
use crate::{Error, Result};

/// Architecture size preset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Tiny,
    Desk,
    Full,
}

fn default_scale() -> Scale {
    Scale::Desk
}
fn default_b() -> f64 {
    crate::decoders::DEFAULT_B
}
fn default_lr() -> f64 {
    1e-3
}
fn default_batch() -> usize {
    16
}
fn default_epochs() -> usize {
    30
}
fn default_surrogate() -> f64 {
    0.5
}
fn default_validation() -> f64 {
    0.1
}
fn default_true() -> bool {
    true
}

/// One training run, read from a flat TOML file. Every random stream is
/// derived from `seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub variant: Variant,
    #[serde(default = "default_scale")]
    pub scale: Scale,
    pub dataset_dir: PathBuf,
    pub out_dir: PathBuf,
    pub seed: u64,
    #[serde(default = "default_b")]
    pub b: f64,
    /// Chamfer weight; only read by `pointnet_folding`.
    #[serde(default)]
    pub lambda: Option<f64>,
    /// Neighborhood size; required by `dgcnn` and `point_transformer`.
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Overrides the preset's points per cloud.
    #[serde(default)]
    pub points: Option<usize>,
    /// Overrides the preset's square image side.
    #[serde(default)]
    pub image_side: Option<usize>,
    /// Share of training objects served as the mass-only source (no
    /// reconstruction targets).
    #[serde(default = "default_surrogate")]
    pub surrogate_fraction: f64,
    /// Share of training objects held out for model selection.
    #[serde(default = "default_validation")]
    pub validation_fraction: f64,
    /// Evenly spaced subset of each object's views.
    #[serde(default)]
    pub views_per_object: Option<usize>,
    /// Hard cap on optimizer steps across all epochs.
    #[serde(default)]
    pub max_steps: Option<usize>,
    /// Directory of depth PNGs replacing the rendered ones at evaluation,
    /// matched by file name.
    #[serde(default)]
    pub predicted_depth_dir: Option<PathBuf>,
    #[serde(default = "default_true")]
    pub augment: bool,
}

impl ExperimentConfig {
    /// Minimal config with defaults for everything optional.
    pub fn new(variant: Variant, dataset_dir: impl Into<PathBuf>, out_dir: impl Into<PathBuf>, seed: u64) -> Self {
        let k = match variant {
            Variant::Dgcnn => Some(20),
            Variant::PointTransformer => Some(16),
            _ => None,
        };
        Self {
            variant,
            scale: default_scale(),
            dataset_dir: dataset_dir.into(),
            out_dir: out_dir.into(),
            seed,
            b: default_b(),
            lambda: None,
            k,
            learning_rate: default_lr(),
            batch_size: default_batch(),
            epochs: default_epochs(),
            points: None,
            image_side: None,
            surrogate_fraction: default_surrogate(),
            validation_fraction: default_validation(),
            views_per_object: None,
            max_steps: None,
            predicted_depth_dir: None,
            augment: true,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative paths resolve against its directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| e.context(format!("config {}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [Some(&mut cfg.dataset_dir), Some(&mut cfg.out_dir), cfg.predicted_depth_dir.as_mut()]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if matches!(self.variant, Variant::Dgcnn | Variant::PointTransformer) && self.k.is_none() {
            return bad(format!("variant {} requires `k`", self.variant));
        }
        if self.k == Some(0) {
            return bad("k must be positive".into());
        }
        if !(self.b > 0.0 && self.b.is_finite()) {
            return bad(format!("b must be positive, got {}", self.b));
        }
        if let Some(l) = self.lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return bad(format!("lambda must be non-negative, got {l}"));
            }
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be non-negative, got {}", self.learning_rate));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be positive".into());
        }
        for (name, f) in [("surrogate_fraction", self.surrogate_fraction), ("validation_fraction", self.validation_fraction)] {
            if !(0.0..1.0).contains(&f) {
                return bad(format!("{name} must lie in [0, 1), got {f}"));
            }
        }
        if self.views_per_object == Some(0) || self.points == Some(0) {
            return bad("views_per_object and points must be positive".into());
        }
        Ok(())
    }

    pub fn lambda(&self) -> f64 {
        if self.variant.reconstructs() {
            self.lambda.unwrap_or(1.0)
        } else {
            0.0
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        let mut m = match self.scale {
            Scale::Tiny => ModelConfig::tiny(self.variant),
            Scale::Desk => ModelConfig::desk(self.variant),
            Scale::Full => ModelConfig::full(self.variant),
        };
        if let Some(n) = self.points {
            m.points = n;
        }
        if let Some(s) = self.image_side {
            m.image.input_side = s;
        }
        if let Some(k) = self.k {
            m.dgcnn.k = k;
            m.point_transformer.k = k;
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flat_file_with_defaults() {
        let cfg = ExperimentConfig::from_toml(
            r#"
variant = "dgcnn"
dataset_dir = "data"
out_dir = "runs/a"
seed = 3
k = 12
"#,
        )
        .unwrap();
        assert_eq!(cfg.variant, Variant::Dgcnn);
        assert_eq!(cfg.b, 16.5);
        assert_eq!(cfg.batch_size, 16);
        assert_eq!(cfg.epochs, 30);
        assert_eq!(cfg.learning_rate, 1e-3);
        assert_eq!(cfg.model_config().dgcnn.k, 12);
        assert_eq!(cfg.lambda(), 0.0);
    }

    #[test]
    fn rejects_unknown_and_missing_keys() {
        let base = "variant = \"pointnet\"\ndataset_dir = \"d\"\nout_dir = \"o\"\nseed = 1\n";
        assert!(ExperimentConfig::from_toml(base).is_ok());
        assert!(matches!(ExperimentConfig::from_toml(&format!("{base}colour = 1\n")), Err(Error::Config(_))));
        assert!(matches!(
            ExperimentConfig::from_toml("variant = \"pointnet\"\ndataset_dir = \"d\"\nout_dir = \"o\"\n"),
            Err(Error::Config(_))
        ));
        let pt = base.replace("pointnet", "point_transformer");
        assert!(matches!(ExperimentConfig::from_toml(&pt), Err(Error::Config(_))));
        assert!(ExperimentConfig::from_toml(&format!("{pt}k = 8\n")).is_ok());
    }

    #[test]
    fn relative_paths_follow_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.toml");
        std::fs::write(
            &path,
            "variant = \"pointnet_folding\"\ndataset_dir = \"data\"\nout_dir = \"/abs/out\"\nseed = 0\nlambda = 0.5\n",
        )
        .unwrap();
        let cfg = ExperimentConfig::from_file(&path).unwrap();
        assert_eq!(cfg.dataset_dir, dir.path().join("data"));
        assert_eq!(cfg.out_dir, PathBuf::from("/abs/out"));
        assert_eq!(cfg.lambda(), 0.5);
    }
}
