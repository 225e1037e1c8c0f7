use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, ParamStore, Var};
use crate::nn::{Conv, Dense, Init};
use crate::pcops::ImageTensor;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenseNetConfig {
    pub input_side: usize,
    pub stem_channels: usize,
    pub growth: usize,
    /// Layers in each dense block.
    pub block_layers: Vec<usize>,
    /// Bottleneck width as a multiple of the growth rate.
    pub bottleneck: usize,
    pub compression: f64,
    pub latent: usize,
}

impl Default for DenseNetConfig {
    fn default() -> Self {
        Self {
            input_side: 64,
            stem_channels: 24,
            growth: 12,
            block_layers: vec![4, 4, 4],
            bottleneck: 4,
            compression: 0.5,
            latent: 512,
        }
    }
}

/// ReLU → 1×1 bottleneck → ReLU → 3×3 conv producing `growth` channels.
#[derive(Clone, Debug)]
pub struct DenseLayer {
    pub bottleneck: Conv,
    pub conv: Conv,
}

#[derive(Clone, Debug)]
pub struct DenseNet {
    pub stem: Conv,
    pub blocks: Vec<Vec<DenseLayer>>,
    /// ReLU → 1×1 compression → 2×2 average pool, between blocks.
    pub transitions: Vec<Conv>,
    pub head: Dense,
    pub input_side: usize,
}

impl DenseNet {
    pub fn new(store: &mut ParamStore, prefix: &str, cfg: &DenseNetConfig, rng: &mut impl Rng) -> Self {
        let stem = Conv::new(store, &format!("{prefix}.stem"), 3, cfg.stem_channels, 3, 1, rng);
        let mut channels = cfg.stem_channels;
        let mut blocks = Vec::new();
        let mut transitions = Vec::new();
        for (b, &layers) in cfg.block_layers.iter().enumerate() {
            if b > 0 {
                let out = ((channels as f64 * cfg.compression).floor() as usize).max(1);
                transitions.push(Conv::new(store, &format!("{prefix}.trans{b}"), channels, out, 1, 1, rng));
                channels = out;
            }
            let mut block = Vec::new();
            for l in 0..layers {
                let name = format!("{prefix}.block{b}.layer{l}");
                let mid = cfg.bottleneck * cfg.growth;
                block.push(DenseLayer {
                    bottleneck: Conv::new(store, &format!("{name}.bottleneck"), channels, mid, 1, 1, rng),
                    conv: Conv::new(store, &format!("{name}.conv"), mid, cfg.growth, 3, 1, rng),
                });
                channels += cfg.growth;
            }
            blocks.push(block);
        }
        let head = Dense::new(store, &format!("{prefix}.head"), channels, cfg.latent, Init::Glorot, rng);
        Self {
            stem,
            blocks,
            transitions,
            head,
            input_side: cfg.input_side,
        }
    }

    pub fn latent_width(&self) -> usize {
        self.head.output
    }

    pub fn encode(&self, g: &mut Graph, img: &ImageTensor) -> Result<Var> {
        if img.channels() != 3 || img.height != self.input_side || img.width != self.input_side {
            return Err(Error::Shape(format!(
                "image encoder expects 3×{s}×{s}, got {}×{}×{}",
                img.channels(),
                img.height,
                img.width,
                s = self.input_side
            )));
        }
        let x = g.input(img.data.clone());
        let (x, h, w) = self.stem.forward(g, x, img.height, img.width);
        let mut x = g.avg_pool2(x, h, w);
        let (mut h, mut w) = (h / 2, w / 2);
        for (b, block) in self.blocks.iter().enumerate() {
            if b > 0 {
                let r = g.relu(x);
                let (c, _, _) = self.transitions[b - 1].forward(g, r, h, w);
                x = g.avg_pool2(c, h, w);
                h /= 2;
                w /= 2;
            }
            for layer in block {
                let r = g.relu(x);
                let (y, _, _) = layer.bottleneck.forward(g, r, h, w);
                let y = g.relu(y);
                let (y, _, _) = layer.conv.forward(g, y, h, w);
                x = g.concat_rows(&[x, y]);
            }
        }
        let r = g.relu(x);
        let pooled = g.global_avg_pool(r);
        Ok(self.head.forward(g, pooled))
    }
}
