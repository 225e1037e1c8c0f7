//! Density, volume and mass heads, and the folding reconstruction decoder.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{logistic, Graph, ParamId, ParamStore, Var};
use crate::nn::{init_tensor, mlp_relu, Dense, Init};
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const DEFAULT_B: f64 = 16.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeadConfig {
    pub hidden: Vec<usize>,
    /// kg/m³
    pub rho_min: f64,
    /// kg/m³
    pub rho_max: f64,
    /// Volume represented by one unit of the volume head's final layer, m³.
    pub volume_unit: f64,
    /// Initial bias of the volume head's final layer, in `volume_unit`s.
    pub volume_bias_init: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 64],
            rho_min: 10.0,
            rho_max: 10_000.0,
            volume_unit: 1e-3,
            volume_bias_init: 1.0,
        }
    }
}

/// Bounded log-space density activation
/// `ρ = exp(ln ρ_min + σ(z)·(ln ρ_max − ln ρ_min))`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DensityActivation {
    pub rho_min: f64,
    pub rho_max: f64,
}

impl DensityActivation {
    pub fn apply(&self, z: f64) -> f64 {
        let (lo, hi) = (self.rho_min.ln(), self.rho_max.ln());
        (lo + logistic(z) * (hi - lo)).exp()
    }

    pub fn forward(&self, g: &mut Graph, z: Var) -> Var {
        let (lo, hi) = (self.rho_min.ln(), self.rho_max.ln());
        let s = g.sigmoid(z);
        let s = g.scale(s, hi - lo);
        let s = g.shift(s, lo);
        g.exp(s)
    }
}

fn check_latent(g: &Graph, latent: Var, width: usize) -> Result<()> {
    let shape = g.shape(latent);
    if shape != (1, width) {
        return Err(Error::Shape(format!("head expects a 1×{width} latent, got {}×{}", shape.0, shape.1)));
    }
    Ok(())
}

fn head_layers(store: &mut ParamStore, prefix: &str, input: usize, hidden: &[usize], rng: &mut impl Rng) -> (Vec<Dense>, usize) {
    let mut width = input;
    let layers = hidden
        .iter()
        .enumerate()
        .map(|(i, &h)| {
            let l = Dense::new(store, &format!("{prefix}.fc{i}"), width, h, Init::He, rng);
            width = h;
            l
        })
        .collect();
    (layers, width)
}

/// Head outputs for one sample.
pub struct HeadOutput {
    pub value: Var,
    pub pre_activation: Var,
}

#[derive(Clone, Debug)]
pub struct DensityHead {
    pub layers: Vec<Dense>,
    pub out: Dense,
    pub activation: DensityActivation,
}

impl DensityHead {
    pub fn new(store: &mut ParamStore, prefix: &str, latent: usize, cfg: &HeadConfig, rng: &mut impl Rng) -> Self {
        let (layers, w) = head_layers(store, prefix, latent, &cfg.hidden, rng);
        let out = Dense::new(store, &format!("{prefix}.out"), w, 1, Init::Scaled(0.1), rng);
        Self {
            layers,
            out,
            activation: DensityActivation {
                rho_min: cfg.rho_min,
                rho_max: cfg.rho_max,
            },
        }
    }

    pub fn forward(&self, g: &mut Graph, latent: Var) -> Result<HeadOutput> {
        check_latent(g, latent, self.layers.first().map_or(self.out.input, |l| l.input))?;
        let h = mlp_relu(&self.layers, g, latent);
        let z = self.out.forward(g, h);
        Ok(HeadOutput {
            value: self.activation.forward(g, z),
            pre_activation: z,
        })
    }
}

/// Volume in m³ as `relu(unit · z)`; the fixed unit keeps the trainable
/// output near 1 for household-sized objects.
#[derive(Clone, Debug)]
pub struct VolumeHead {
    pub layers: Vec<Dense>,
    pub out: Dense,
    pub unit: f64,
}

impl VolumeHead {
    pub fn new(store: &mut ParamStore, prefix: &str, latent: usize, cfg: &HeadConfig, rng: &mut impl Rng) -> Self {
        let (layers, w) = head_layers(store, prefix, latent, &cfg.hidden, rng);
        let out = Dense::new(store, &format!("{prefix}.out"), w, 1, Init::Scaled(0.1), rng);
        store.get_mut(out.b).data_mut()[0] = cfg.volume_bias_init;
        Self {
            layers,
            out,
            unit: cfg.volume_unit,
        }
    }

    /// `pre_activation` is already in m³.
    pub fn forward(&self, g: &mut Graph, latent: Var) -> Result<HeadOutput> {
        check_latent(g, latent, self.layers.first().map_or(self.out.input, |l| l.input))?;
        let h = mlp_relu(&self.layers, g, latent);
        let z = self.out.forward(g, h);
        let pre = g.scale(z, self.unit);
        Ok(HeadOutput {
            value: g.relu(pre),
            pre_activation: pre,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MassPrediction {
    /// kg/m³
    pub density: f64,
    /// m³
    pub volume: f64,
    /// kg
    pub mass: f64,
    pub b: f64,
}

impl MassPrediction {
    pub fn density_factor(&self) -> f64 {
        self.density * self.b
    }

    pub fn volume_factor(&self) -> f64 {
        self.volume / self.b
    }
}

fn check_b(b: f64) -> Result<()> {
    if b > 0.0 && b.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("balancing constant b must be positive, got {b}")))
    }
}

/// `mass = (density · b) · (volume / b)`.
pub fn predict_mass(density: f64, volume: f64, b: f64) -> Result<MassPrediction> {
    check_b(b)?;
    if !(density > 0.0) || !(volume >= 0.0) {
        return Err(Error::Domain(format!("need density > 0 and volume >= 0, got {density}, {volume}")));
    }
    Ok(MassPrediction {
        density,
        volume,
        mass: (density * b) * (volume / b),
        b,
    })
}

/// Graph form of [`predict_mass`].
pub fn mass_var(g: &mut Graph, density: Var, volume: Var, b: f64) -> Result<Var> {
    check_b(b)?;
    let d = g.scale(density, b);
    let v = g.scale(volume, 1.0 / b);
    Ok(g.mul(d, v))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FoldingConfig {
    pub grid: usize,
    pub hidden: usize,
}

impl Default for FoldingConfig {
    fn default() -> Self {
        Self { grid: 16, hidden: 256 }
    }
}

/// `G × G` grid on `[−1, 1]²`, row-major with x varying fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct FoldingGrid {
    pub size: usize,
    pub coords: Tensor,
}

impl FoldingGrid {
    pub fn new(size: usize) -> Self {
        let step = |i: usize| if size == 1 { 0.0 } else { -1.0 + 2.0 * i as f64 / (size - 1) as f64 };
        let mut coords = Tensor::zeros(size * size, 2);
        for r in 0..size {
            for c in 0..size {
                coords.set(r * size + c, 0, step(c));
                coords.set(r * size + c, 1, step(r));
            }
        }
        Self { size, coords }
    }

    pub fn len(&self) -> usize {
        self.coords.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.rows() == 0
    }
}

/// One folding stage: `[x ⊕ latent] → hidden → hidden → 3`, shared across
/// points; the latent projection is computed once per sample.
#[derive(Clone, Debug)]
pub struct FoldStage {
    pub w_point: ParamId,
    pub w_latent: ParamId,
    pub b: ParamId,
    pub mid: Dense,
    pub out: Dense,
}

impl FoldStage {
    fn new(store: &mut ParamStore, prefix: &str, point_dim: usize, latent: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let fan_in = point_dim + latent;
        Self {
            w_point: store.add(format!("{prefix}.w_point"), init_tensor(point_dim, hidden, fan_in, hidden, Init::He, rng)),
            w_latent: store.add(format!("{prefix}.w_latent"), init_tensor(latent, hidden, fan_in, hidden, Init::He, rng)),
            b: store.add(format!("{prefix}.b"), Tensor::zeros(1, hidden)),
            mid: Dense::new(store, &format!("{prefix}.mid"), hidden, hidden, Init::He, rng),
            out: Dense::new(store, &format!("{prefix}.out"), hidden, 3, Init::Glorot, rng),
        }
    }

    fn forward(&self, g: &mut Graph, x: Var, latent: Var) -> Var {
        let wl = g.param(self.w_latent);
        let b = g.param(self.b);
        let lat = g.linear(latent, wl, Some(b));
        let wp = g.param(self.w_point);
        let h = g.linear(x, wp, None);
        let h = g.add_row(h, lat);
        let h = g.relu(h);
        let h = self.mid.forward_relu(g, h);
        self.out.forward(g, h)
    }
}

#[derive(Clone, Debug)]
pub struct FoldingDecoder {
    pub fold1: FoldStage,
    pub fold2: FoldStage,
    pub latent: usize,
    pub grid: FoldingGrid,
}

impl FoldingDecoder {
    pub fn new(store: &mut ParamStore, prefix: &str, latent: usize, cfg: &FoldingConfig, rng: &mut impl Rng) -> Self {
        Self {
            fold1: FoldStage::new(store, &format!("{prefix}.fold1"), 2, latent, cfg.hidden, rng),
            fold2: FoldStage::new(store, &format!("{prefix}.fold2"), 3, latent, cfg.hidden, rng),
            latent,
            grid: FoldingGrid::new(cfg.grid),
        }
    }

    pub fn forward(&self, g: &mut Graph, latent: Var) -> Result<Var> {
        self.forward_grid(g, latent, &self.grid.coords)
    }

    /// Folds an arbitrary set of 2-D grid points (one per row).
    pub fn forward_grid(&self, g: &mut Graph, latent: Var, grid: &Tensor) -> Result<Var> {
        check_latent(g, latent, self.latent)?;
        if grid.cols() != 2 || grid.rows() == 0 {
            return Err(Error::Shape(format!("folding grid must be M×2, got {}×{}", grid.rows(), grid.cols())));
        }
        let x = g.input(grid.clone());
        let p1 = self.fold1.forward(g, x, latent);
        Ok(self.fold2.forward(g, p1, latent))
    }
}
