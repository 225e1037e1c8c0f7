//! Assembly of encoders and decoders into the five mass-estimation variants.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autograd::{Gradients, Graph, ParamStore, Var};
use crate::decoders::{mass_var, predict_mass, DensityHead, FoldingConfig, FoldingDecoder, HeadConfig, MassPrediction, VolumeHead};
use crate::encoders::{
    fuse_latents, DenseNet, DenseNetConfig, Dgcnn, DgcnnConfig, PointEncoder, PointNet, PointNetConfig, PointTransformer,
    PointTransformerConfig,
};
use crate::geom::Vec3;
use crate::objectives::alde_loss;
use crate::pcops::{ImageTensor, PointCloud};
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    ImageOnly,
    Pointnet,
    Dgcnn,
    PointTransformer,
    PointnetFolding,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::ImageOnly,
        Variant::Pointnet,
        Variant::Dgcnn,
        Variant::PointTransformer,
        Variant::PointnetFolding,
    ];

    pub fn uses_points(self) -> bool {
        self != Variant::ImageOnly
    }

    pub fn reconstructs(self) -> bool {
        self == Variant::PointnetFolding
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::ImageOnly => "image_only",
            Variant::Pointnet => "pointnet",
            Variant::Dgcnn => "dgcnn",
            Variant::PointTransformer => "point_transformer",
            Variant::PointnetFolding => "pointnet_folding",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Points per input cloud.
    pub points: usize,
    pub image: DenseNetConfig,
    /// Image latent width when no point branch is present.
    pub image_only_latent: usize,
    pub pointnet: PointNetConfig,
    pub dgcnn: DgcnnConfig,
    pub point_transformer: PointTransformerConfig,
    pub heads: HeadConfig,
    pub folding: FoldingConfig,
}

impl ModelConfig {
    /// Full-size architecture: 1024 points, 64×64 images, 512-wide branch
    /// latents fused to 1024.
    pub fn full(variant: Variant) -> Self {
        Self {
            variant,
            points: 1024,
            image: DenseNetConfig::default(),
            image_only_latent: 1024,
            pointnet: PointNetConfig::default(),
            dgcnn: DgcnnConfig::default(),
            point_transformer: PointTransformerConfig::default(),
            heads: HeadConfig::default(),
            folding: FoldingConfig::default(),
        }
    }

    /// Reduced widths and resolutions for single-core training runs.
    pub fn desk(variant: Variant) -> Self {
        Self {
            variant,
            points: 256,
            image: DenseNetConfig {
                input_side: 32,
                stem_channels: 8,
                growth: 6,
                block_layers: vec![2, 2, 2],
                bottleneck: 2,
                compression: 0.5,
                latent: 64,
            },
            image_only_latent: 128,
            pointnet: PointNetConfig { widths: vec![32, 64, 64] },
            dgcnn: DgcnnConfig {
                edge_widths: vec![16, 16, 32],
                k: 10,
                latent: 64,
                dynamic: true,
            },
            point_transformer: PointTransformerConfig {
                widths: vec![16, 32, 48, 64],
                k: 8,
                downsample: 4,
                fps_seed: 0,
            },
            heads: HeadConfig {
                hidden: vec![64, 32],
                ..HeadConfig::default()
            },
            folding: FoldingConfig { grid: 8, hidden: 32 },
        }
    }

    /// Minimal widths for exhaustive finite-difference audits.
    pub fn tiny(variant: Variant) -> Self {
        Self {
            variant,
            points: 32,
            image: DenseNetConfig {
                input_side: 8,
                stem_channels: 3,
                growth: 2,
                block_layers: vec![1, 1],
                bottleneck: 2,
                compression: 0.5,
                latent: 6,
            },
            image_only_latent: 8,
            pointnet: PointNetConfig { widths: vec![6, 6] },
            dgcnn: DgcnnConfig {
                edge_widths: vec![4, 4],
                k: 4,
                latent: 6,
                dynamic: true,
            },
            point_transformer: PointTransformerConfig {
                widths: vec![4, 6],
                k: 4,
                downsample: 4,
                fps_seed: 0,
            },
            heads: HeadConfig {
                hidden: vec![6, 4],
                ..HeadConfig::default()
            },
            folding: FoldingConfig { grid: 3, hidden: 5 },
        }
    }

    pub fn image_latent(&self) -> usize {
        if self.variant.uses_points() {
            self.image.latent
        } else {
            self.image_only_latent
        }
    }
}

/// Network inputs for one view.
#[derive(Clone, Debug)]
pub struct ModelInput {
    pub image: ImageTensor,
    /// Preprocessed cloud; required by every variant except image-only.
    pub cloud: Option<PointCloud>,
}

/// Supervision for one view.
#[derive(Clone, Debug)]
pub struct Target {
    pub mass: f64,
    /// Complete-shape samples in the input cloud's frame, when available.
    pub recon: Option<Vec<Vec3>>,
}

pub struct ForwardOutput {
    pub density: Var,
    pub volume: Var,
    pub mass: Var,
    pub recon: Option<Var>,
}

pub struct SampleLoss {
    pub total: Var,
    pub alde: Var,
    pub cd: Option<Var>,
}

/// Mean loss terms over a batch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub alde: f64,
    pub cd: Option<f64>,
    pub total: f64,
}

#[derive(Clone, Debug)]
pub struct MassModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub image: DenseNet,
    pub points: Option<PointEncoder>,
    pub density: DensityHead,
    pub volume: VolumeHead,
    pub folding: Option<FoldingDecoder>,
}

impl MassModel {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut img_cfg = config.image.clone();
        img_cfg.latent = config.image_latent();
        if img_cfg.input_side < 8 {
            return Err(Error::Config(format!("image side {} is too small", img_cfg.input_side)));
        }
        let image = DenseNet::new(&mut params, "image", &img_cfg, &mut rng);
        let points = match config.variant {
            Variant::ImageOnly => None,
            Variant::Pointnet | Variant::PointnetFolding => Some(PointEncoder::PointNet(PointNet::new(&mut params, "pointnet", &config.pointnet, &mut rng))),
            Variant::Dgcnn => {
                if config.dgcnn.k >= config.points {
                    return Err(Error::Config(format!("dgcnn k={} needs more than {} points", config.dgcnn.k, config.points)));
                }
                Some(PointEncoder::Dgcnn(Dgcnn::new(&mut params, "dgcnn", &config.dgcnn, &mut rng)))
            }
            Variant::PointTransformer => Some(PointEncoder::PointTransformer(PointTransformer::new(
                &mut params,
                "point_transformer",
                &config.point_transformer,
                &mut rng,
            ))),
        };
        let latent = img_cfg.latent + points.as_ref().map_or(0, |p| p.latent_width());
        let density = DensityHead::new(&mut params, "density", latent, &config.heads, &mut rng);
        let volume = VolumeHead::new(&mut params, "volume", latent, &config.heads, &mut rng);
        let folding = config
            .variant
            .reconstructs()
            .then(|| FoldingDecoder::new(&mut params, "folding", latent, &config.folding, &mut rng));
        Ok(Self {
            config: config.clone(),
            params,
            image,
            points,
            density,
            volume,
            folding,
        })
    }

    pub fn latent_width(&self) -> usize {
        self.image.latent_width() + self.points.as_ref().map_or(0, |p| p.latent_width())
    }

    /// Builds the forward pass on `g`, which may be bound to any store with
    /// this model's layout.
    pub fn forward(&self, g: &mut Graph, input: &ModelInput, b: f64) -> Result<ForwardOutput> {
        let img = self.image.encode(g, &input.image)?;
        let pc_latent = match &self.points {
            None => None,
            Some(enc) => {
                let cloud = input
                    .cloud
                    .as_ref()
                    .ok_or_else(|| Error::Shape(format!("variant {} needs a point cloud", self.config.variant)))?;
                if cloud.len() != self.config.points {
                    return Err(Error::Shape(format!("expected {} points, got {}", self.config.points, cloud.len())));
                }
                Some(enc.encode(g, &cloud.to_tensor())?)
            }
        };
        let latent = fuse_latents(g, img, pc_latent)?;
        let density = self.density.forward(g, latent)?.value;
        let volume = self.volume.forward(g, latent)?.value;
        let mass = mass_var(g, density, volume, b)?;
        let recon = match &self.folding {
            Some(f) => Some(f.forward(g, latent)?),
            None => None,
        };
        Ok(ForwardOutput {
            density,
            volume,
            mass,
            recon,
        })
    }

    /// `ALDE + λ·CD`; the Chamfer term is present only when both a folding
    /// decoder and a reconstruction target exist.
    pub fn sample_loss(&self, g: &mut Graph, input: &ModelInput, target: &Target, lambda: f64, b: f64) -> Result<SampleLoss> {
        let out = self.forward(g, input, b)?;
        let alde = alde_loss(g, out.mass, target.mass)?;
        let cd = match (out.recon, &target.recon) {
            (Some(r), Some(gt)) => {
                if gt.is_empty() {
                    return Err(Error::EmptySet("empty reconstruction target".into()));
                }
                let t = g.input(Tensor::from_rows(gt));
                Some(g.chamfer(r, t))
            }
            _ => None,
        };
        let total = match cd {
            Some(c) => {
                let w = g.scale(c, lambda);
                g.add(alde, w)
            }
            None => alde,
        };
        Ok(SampleLoss { total, alde, cd })
    }

    /// Mean batch loss as a single scalar on one graph.
    pub fn batch_loss(&self, g: &mut Graph, batch: &[(ModelInput, Target)], lambda: f64, b: f64) -> Result<Var> {
        if batch.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut parts = Vec::with_capacity(batch.len());
        for (input, target) in batch {
            parts.push(self.sample_loss(g, input, target, lambda, b)?.total);
        }
        let all = g.concat_rows(&parts);
        Ok(g.mean_all(all))
    }

    /// Mean loss and its parameter gradient, evaluating samples on separate
    /// tapes in parallel and reducing in sample order.
    pub fn loss_and_grad(&self, store: &ParamStore, batch: &[(ModelInput, Target)], lambda: f64, b: f64) -> Result<(LossBreakdown, Gradients)> {
        if batch.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let per_sample: Vec<(f64, Option<f64>, f64, Gradients)> = batch
            .par_iter()
            .map(|(input, target)| {
                let mut g = Graph::new(store);
                let l = self.sample_loss(&mut g, input, target, lambda, b)?;
                let grads = g.backward(l.total);
                Ok((g.value(l.alde).item(), l.cd.map(|c| g.value(c).item()), g.value(l.total).item(), grads))
            })
            .collect::<Result<_>>()?;
        let n = batch.len() as f64;
        let mut grads = Gradients::zeros_like(store);
        let (mut alde, mut total) = (0.0, 0.0);
        let mut cd_sum = 0.0;
        let mut cd_count = 0usize;
        for (a, c, t, gr) in &per_sample {
            alde += a;
            total += t;
            if let Some(c) = c {
                cd_sum += c;
                cd_count += 1;
            }
            grads.add_assign(gr);
        }
        grads.scale(1.0 / n);
        Ok((
            LossBreakdown {
                alde: alde / n,
                cd: (cd_count > 0).then(|| cd_sum / cd_count as f64),
                total: total / n,
            },
            grads,
        ))
    }

    /// Inference for one view: the mass prediction (with the volume head
    /// output) and the reconstruction, if any.
    pub fn predict(&self, input: &ModelInput, b: f64) -> Result<(MassPrediction, Option<Tensor>)> {
        let mut g = Graph::new(&self.params);
        let out = self.forward(&mut g, input, b)?;
        let pred = predict_mass(g.value(out.density).item(), g.value(out.volume).item(), b)?;
        Ok((pred, out.recon.map(|r| g.value(r).clone())))
    }
}
