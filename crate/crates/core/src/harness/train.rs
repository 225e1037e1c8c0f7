use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Gradients, ParamStore};
use crate::model::{MassModel, ModelInput, Target};
use crate::tensor::Tensor;
use crate::{Error, Result};

use super::data::Source;

/// Indices into one source's sample list.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub source: Source,
    pub indices: Vec<usize>,
}

/// Shuffles `0..n` and cuts it into batches; the last one may be short.
pub fn shuffled_batches(n: usize, batch_size: usize, source: Source, rng: &mut impl Rng) -> Vec<BatchPlan> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch_size.max(1))
        .map(|c| BatchPlan {
            source,
            indices: c.to_vec(),
        })
        .collect()
}

/// One epoch of single-source batches from both datasets, interleaved in
/// random order. With only one dataset this is plain shuffled batching.
pub fn make_batches(n_synthetic: usize, n_rgb_mass: usize, batch_size: usize, rng: &mut impl Rng) -> Result<Vec<BatchPlan>> {
    if n_synthetic + n_rgb_mass == 0 {
        return Err(Error::EmptyDataset);
    }
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut plans = shuffled_batches(n_synthetic, batch_size, Source::Synthetic, rng);
    if n_rgb_mass > 0 {
        plans.extend(shuffled_batches(n_rgb_mass, batch_size, Source::RgbMass, rng));
        if n_synthetic > 0 {
            plans.shuffle(rng);
        }
    }
    Ok(plans)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adaptive-moment optimizer with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub cfg: AdamConfig,
    pub t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, cfg: AdamConfig) -> Self {
        let zeros: Vec<Tensor> = store.iter().map(|(_, _, t)| Tensor::zeros(t.rows(), t.cols())).collect();
        Self {
            cfg,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) {
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t.min(i32::MAX as u64) as i32);
        let c2 = 1.0 - beta2.powi(self.t.min(i32::MAX as u64) as i32);
        let ids: Vec<_> = store.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            let g = grads.get(id).data();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let p = store.get_mut(id).data_mut();
            for j in 0..p.len() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                p[j] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
            }
        }
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub source: Source,
    pub alde: f64,
    /// Absent for batches without reconstruction targets.
    pub cd: Option<f64>,
    pub total: f64,
}

/// Mean loss over the batch, one backward pass, one optimizer update.
pub fn train_step(
    model: &mut MassModel,
    opt: &mut Adam,
    batch: &[(ModelInput, Target)],
    source: Source,
    lambda: f64,
    b: f64,
    step: usize,
) -> Result<StepLog> {
    let expect_recon = source == Source::Synthetic;
    if batch.iter().any(|(_, t)| t.recon.is_some() != expect_recon) && model.config.variant.reconstructs() {
        return Err(Error::Shape(format!("{} batch with mismatched reconstruction targets", source.name())));
    }
    let (loss, grads) = model.loss_and_grad(&model.params, batch, lambda, b)?;
    if !loss.total.is_finite() || !grads.is_finite() {
        return Err(Error::NonFiniteLoss {
            step,
            source_tag: source.name().into(),
            alde: loss.alde,
            cd: loss.cd,
        });
    }
    opt.step(&mut model.params, &grads);
    Ok(StepLog {
        step,
        epoch: 0,
        source,
        alde: loss.alde,
        cd: loss.cd,
        total: loss.total,
    })
}
