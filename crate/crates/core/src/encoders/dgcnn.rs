use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, ParamId, ParamStore, Var};
use crate::nn::{init_tensor, Dense, Init};
use crate::pcops::{knn, NeighborIndex};
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DgcnnConfig {
    pub edge_widths: Vec<usize>,
    pub k: usize,
    pub latent: usize,
    /// Recompute neighbor graphs in each block's input feature space; when
    /// false every block reuses the coordinate graph.
    pub dynamic: bool,
}

impl Default for DgcnnConfig {
    fn default() -> Self {
        Self {
            edge_widths: vec![64, 64, 128, 256],
            k: 20,
            latent: 512,
            dynamic: true,
        }
    }
}

/// Edge convolution `max_j relu([x_i − x_j, x_i]·W + b)` with `W` split
/// into the difference block and the self block.
#[derive(Clone, Copy, Debug)]
pub struct EdgeConv {
    pub w_diff: ParamId,
    pub w_self: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub output: usize,
}

impl EdgeConv {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let fan_in = 2 * input;
        Self {
            w_diff: store.add(format!("{name}.w_diff"), init_tensor(input, output, fan_in, output, Init::He, rng)),
            w_self: store.add(format!("{name}.w_self"), init_tensor(input, output, fan_in, output, Init::He, rng)),
            b: store.add(format!("{name}.b"), Tensor::zeros(1, output)),
            input,
            output,
        }
    }

    /// Uses `relu(P_i − min_j Q_j)` with `P = X(W_d + W_s) + b` and
    /// `Q = X W_d`, which equals the max over explicit edge features because
    /// ReLU is monotone.
    pub fn forward(&self, g: &mut Graph, x: Var, nbr: &NeighborIndex) -> Var {
        let wd = g.param(self.w_diff);
        let ws = g.param(self.w_self);
        let b = g.param(self.b);
        let wsum = g.add(wd, ws);
        let p = g.linear(x, wsum, Some(b));
        let q = g.linear(x, wd, None);
        let qmin = g.min_gather(q, &nbr.indices, nbr.k);
        let h = g.sub(p, qmin);
        g.relu(h)
    }

    /// Same layer evaluated on materialized `N·k × 2d` edge features.
    pub fn forward_explicit(&self, g: &mut Graph, x: Var, nbr: &NeighborIndex) -> Var {
        let n = nbr.rows();
        let centers: Vec<usize> = (0..n).flat_map(|i| std::iter::repeat(i).take(nbr.k)).collect();
        let xi = g.gather_rows(x, centers);
        let xj = g.gather_rows(x, nbr.indices.clone());
        let diff = g.sub(xi, xj);
        let e = g.concat_cols(&[diff, xi]);
        let wd = g.param(self.w_diff);
        let ws = g.param(self.w_self);
        let w = g.concat_rows(&[wd, ws]);
        let b = g.param(self.b);
        let h = g.linear(e, w, Some(b));
        let h = g.relu(h);
        g.max_groups(h, nbr.k)
    }
}

/// Row `(i, s)` is `[x_i − x_j, x_i]` for the `s`-th neighbor `j` of `i`.
pub fn dgcnn_edge_features(points: &Tensor, nbr: &NeighborIndex) -> Result<Tensor> {
    if nbr.rows() != points.rows() || nbr.indices.iter().any(|&j| j >= points.rows()) {
        return Err(Error::Shape(format!(
            "neighbor index for {} points does not match a {}-point cloud",
            nbr.rows(),
            points.rows()
        )));
    }
    let d = points.cols();
    let mut out = Tensor::zeros(points.rows() * nbr.k, 2 * d);
    for i in 0..points.rows() {
        let xi = points.row(i);
        for (s, &j) in nbr.row(i).iter().enumerate() {
            let row = out.row_mut(i * nbr.k + s);
            for c in 0..d {
                row[c] = xi[c] - points.get(j, c);
                row[d + c] = xi[c];
            }
        }
    }
    Ok(out)
}

/// Stacked edge convolutions whose outputs are concatenated into a shared
/// head, then max-pooled over points.
#[derive(Clone, Debug)]
pub struct Dgcnn {
    pub blocks: Vec<EdgeConv>,
    pub head: Dense,
    pub k: usize,
    pub dynamic: bool,
}

impl Dgcnn {
    pub fn new(store: &mut ParamStore, prefix: &str, cfg: &DgcnnConfig, rng: &mut impl Rng) -> Self {
        let mut input = 3;
        let blocks: Vec<EdgeConv> = cfg
            .edge_widths
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let b = EdgeConv::new(store, &format!("{prefix}.edge{i}"), input, w, rng);
                input = w;
                b
            })
            .collect();
        let concat: usize = cfg.edge_widths.iter().sum();
        let head = Dense::new(store, &format!("{prefix}.head"), concat, cfg.latent, Init::He, rng);
        Self {
            blocks,
            head,
            k: cfg.k,
            dynamic: cfg.dynamic,
        }
    }

    pub fn latent_width(&self) -> usize {
        self.head.output
    }

    pub fn encode(&self, g: &mut Graph, points: &Tensor) -> Result<Var> {
        self.encode_with(g, points, false)
    }

    /// `explicit` selects the materialized edge-feature evaluation.
    pub fn encode_with(&self, g: &mut Graph, points: &Tensor, explicit: bool) -> Result<Var> {
        super::check_points(points)?;
        let n = points.rows();
        if self.k == 0 || self.k >= n {
            return Err(Error::Shape(format!("DGCNN needs more than k={} points, got {n}", self.k)));
        }
        let mut x = g.input(points.clone());
        let mut nbr = knn(points, self.k)?;
        let mut outputs = Vec::with_capacity(self.blocks.len());
        for (l, block) in self.blocks.iter().enumerate() {
            if l > 0 && self.dynamic {
                nbr = knn(g.value(x), self.k)?;
            }
            g.record_discrete(&nbr.indices);
            x = if explicit {
                block.forward_explicit(g, x, &nbr)
            } else {
                block.forward(g, x, &nbr)
            };
            outputs.push(x);
        }
        let cat = g.concat_cols(&outputs);
        let h = self.head.forward_relu(g, cat);
        Ok(g.max_groups(h, n))
    }
}
