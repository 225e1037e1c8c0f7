use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, ParamStore, Var};
use crate::nn::{mlp_relu, Dense, Init};
use crate::tensor::Tensor;
use crate::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PointNetConfig {
    /// Widths of the shared per-point layers; the last is the latent width.
    pub widths: Vec<usize>,
}

impl Default for PointNetConfig {
    fn default() -> Self {
        Self {
            widths: vec![64, 128, 256, 512],
        }
    }
}

/// Shared per-point MLP followed by a global max over points.
#[derive(Clone, Debug)]
pub struct PointNet {
    pub layers: Vec<Dense>,
}

impl PointNet {
    pub fn new(store: &mut ParamStore, prefix: &str, cfg: &PointNetConfig, rng: &mut impl Rng) -> Self {
        let mut input = 3;
        let layers = cfg
            .widths
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let l = Dense::new(store, &format!("{prefix}.mlp{i}"), input, w, Init::He, rng);
                input = w;
                l
            })
            .collect();
        Self { layers }
    }

    pub fn latent_width(&self) -> usize {
        self.layers.last().map_or(3, |l| l.output)
    }

    /// Per-point features before pooling, `N × latent`.
    pub fn point_features(&self, g: &mut Graph, points: &Tensor) -> Result<Var> {
        super::check_points(points)?;
        let x = g.input(points.clone());
        Ok(mlp_relu(&self.layers, g, x))
    }

    pub fn encode(&self, g: &mut Graph, points: &Tensor) -> Result<Var> {
        let f = self.point_features(g, points)?;
        Ok(g.max_groups(f, points.rows()))
    }
}
