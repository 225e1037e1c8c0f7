use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, ParamStore, Var};
use crate::nn::{Dense, Init};
use crate::pcops::{farthest_point_sample, knn_query, NeighborIndex};
use crate::tensor::Tensor;
use crate::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PointTransformerConfig {
    /// Channel width of each stage; stage `s > 0` starts with a transition
    /// that keeps `1/downsample` of the points.
    pub widths: Vec<usize>,
    pub k: usize,
    pub downsample: usize,
    pub fps_seed: u64,
}

impl Default for PointTransformerConfig {
    fn default() -> Self {
        Self {
            widths: vec![32, 64, 128, 512],
            k: 16,
            downsample: 4,
            fps_seed: 0,
        }
    }
}

/// Vector self-attention over each point's neighborhood followed by a
/// residual projection.
#[derive(Clone, Debug)]
pub struct PtBlock {
    pub query: Dense,
    pub key: Dense,
    pub value: Dense,
    pub pos1: Dense,
    pub pos2: Dense,
    pub gamma1: Dense,
    pub gamma2: Dense,
    pub proj: Dense,
}

/// Output of one vector-attention pass.
pub struct Attention {
    /// `N × C` aggregated features.
    pub output: Var,
    /// `N·k × C` per-channel weights, normalized within each neighborhood.
    pub weights: Var,
}

fn centers(n: usize, k: usize) -> Vec<usize> {
    (0..n).flat_map(|i| std::iter::repeat(i).take(k)).collect()
}

/// Rows `p_i − p_j` (or `p_j − p_i` when `reverse`) for every neighbor
/// slot.
fn relative(queries: &Tensor, points: &Tensor, nbr: &NeighborIndex, reverse: bool) -> Tensor {
    let n = nbr.rows();
    let mut out = Tensor::zeros(n * nbr.k, 3);
    for i in 0..n {
        for (s, &j) in nbr.row(i).iter().enumerate() {
            let r = out.row_mut(i * nbr.k + s);
            for c in 0..3 {
                let d = queries.get(i, c) - points.get(j, c);
                r[c] = if reverse { -d } else { d };
            }
        }
    }
    out
}

impl PtBlock {
    pub fn new(store: &mut ParamStore, name: &str, c: usize, rng: &mut impl Rng) -> Self {
        let mut d = |suffix: &str, i, o, init| Dense::new(store, &format!("{name}.{suffix}"), i, o, init, rng);
        Self {
            query: d("query", c, c, Init::Glorot),
            key: d("key", c, c, Init::Glorot),
            value: d("value", c, c, Init::Glorot),
            pos1: d("pos1", 3, c, Init::He),
            pos2: d("pos2", c, c, Init::Glorot),
            gamma1: d("gamma1", c, c, Init::He),
            gamma2: d("gamma2", c, c, Init::Glorot),
            proj: d("proj", c, c, Init::Glorot),
        }
    }

    /// `out_i = Σ_j softmax_j(γ(q_i − k_j + δ_ij)) ⊙ (v_j + δ_ij)` with
    /// `δ_ij` a learned encoding of `p_i − p_j`; the softmax runs over the
    /// neighborhood separately for every channel.
    pub fn attention(&self, g: &mut Graph, points: &Tensor, feats: Var, nbr: &NeighborIndex) -> Attention {
        let n = nbr.rows();
        let k = nbr.k;
        let rel = g.input(relative(points, points, nbr, false));
        let d1 = self.pos1.forward_relu(g, rel);
        let delta = self.pos2.forward(g, d1);

        let q = self.query.forward(g, feats);
        let kf = self.key.forward(g, feats);
        let v = self.value.forward(g, feats);
        let q_rep = g.gather_rows(q, centers(n, k));
        let k_nb = g.gather_rows(kf, nbr.indices.clone());
        let v_nb = g.gather_rows(v, nbr.indices.clone());

        let qk = g.sub(q_rep, k_nb);
        let a = g.add(qk, delta);
        let h = self.gamma1.forward_relu(g, a);
        let logits = self.gamma2.forward(g, h);
        let weights = g.softmax_groups(logits, k);
        let vd = g.add(v_nb, delta);
        let weighted = g.mul(weights, vd);
        let output = g.sum_groups(weighted, k);
        Attention { output, weights }
    }

    pub fn forward(&self, g: &mut Graph, points: &Tensor, feats: Var, k: usize) -> Result<Var> {
        let nbr = knn_query(points, points, k.min(points.rows()))?;
        g.record_discrete(&nbr.indices);
        let att = self.attention(g, points, feats, &nbr);
        let p = self.proj.forward(g, att.output);
        let s = g.add(feats, p);
        Ok(g.relu(s))
    }
}

/// Farthest-point downsampling with neighborhood max-pooled features on
/// `[p_j − p'_i, f_j]`.
#[derive(Clone, Debug)]
pub struct TransitionDown {
    pub mlp: Dense,
}

/// Point counts per stage for an `n`-point input.
pub fn stage_sizes(n: usize, stages: usize, downsample: usize) -> Vec<usize> {
    let mut sizes = vec![n];
    for _ in 1..stages {
        let last = *sizes.last().unwrap();
        sizes.push((last / downsample.max(1)).max(1));
    }
    sizes
}

#[derive(Clone, Debug)]
pub struct PointTransformer {
    pub stem: Dense,
    pub blocks: Vec<PtBlock>,
    pub transitions: Vec<TransitionDown>,
    pub cfg: PointTransformerConfig,
}

/// Latent plus the point count seen by each stage.
pub struct PtEncoding {
    pub latent: Var,
    pub stage_points: Vec<usize>,
}

impl PointTransformer {
    pub fn new(store: &mut ParamStore, prefix: &str, cfg: &PointTransformerConfig, rng: &mut impl Rng) -> Self {
        let w0 = cfg.widths[0];
        let stem = Dense::new(store, &format!("{prefix}.stem"), 3, w0, Init::He, rng);
        let mut blocks = Vec::new();
        let mut transitions = Vec::new();
        for (s, &w) in cfg.widths.iter().enumerate() {
            if s > 0 {
                let mlp = Dense::new(store, &format!("{prefix}.down{s}"), 3 + cfg.widths[s - 1], w, Init::He, rng);
                transitions.push(TransitionDown { mlp });
            }
            blocks.push(PtBlock::new(store, &format!("{prefix}.block{s}"), w, rng));
        }
        Self {
            stem,
            blocks,
            transitions,
            cfg: cfg.clone(),
        }
    }

    pub fn latent_width(&self) -> usize {
        *self.cfg.widths.last().unwrap()
    }

    pub fn encode(&self, g: &mut Graph, points: &Tensor) -> Result<Var> {
        Ok(self.encode_traced(g, points)?.latent)
    }

    pub fn encode_traced(&self, g: &mut Graph, points: &Tensor) -> Result<PtEncoding> {
        super::check_points(points)?;
        let k = self.cfg.k.max(1);
        let sizes = stage_sizes(points.rows(), self.blocks.len(), self.cfg.downsample);
        let mut pts = points.clone();
        let x = g.input(pts.clone());
        let mut f = self.stem.forward_relu(g, x);
        let mut stage_points = Vec::with_capacity(sizes.len());
        for (s, block) in self.blocks.iter().enumerate() {
            if s > 0 {
                let m = sizes[s];
                let idx = farthest_point_sample(&pts, m, self.cfg.fps_seed.wrapping_add(s as u64))?;
                g.record_discrete(&idx);
                let mut sub = Tensor::zeros(m, 3);
                for (r, &i) in idx.iter().enumerate() {
                    sub.row_mut(r).copy_from_slice(pts.row(i));
                }
                let nbr = knn_query(&sub, &pts, k.min(pts.rows()))?;
                g.record_discrete(&nbr.indices);
                let rel = g.input(relative(&sub, &pts, &nbr, true));
                let fj = g.gather_rows(f, nbr.indices.clone());
                let e = g.concat_cols(&[rel, fj]);
                let h = self.transitions[s - 1].mlp.forward_relu(g, e);
                f = g.max_groups(h, nbr.k);
                pts = sub;
            }
            stage_points.push(pts.rows());
            f = block.forward(g, &pts, f, k)?;
        }
        let latent = g.max_groups(f, pts.rows());
        Ok(PtEncoding { latent, stage_points })
    }
}
