//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] is a tape built by one forward pass. Parameters live in a
//! [`ParamStore`] that the graph borrows immutably, so many graphs (one per
//! sample) can be evaluated against the same parameters concurrently. Calling
//! [`Graph::backward`] yields [`Gradients`] indexed like the store.

use std::collections::HashMap;

use crate::tensor::{gemm, Tensor};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
struct Param {
    name: String,
    value: Tensor,
}

/// Named, ordered collection of trainable arrays.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<Param>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a new parameter. Panics on duplicate names, which indicates
    /// a model-construction bug.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        let id = ParamId(self.entries.len());
        let prev = self.index.insert(name.clone(), id);
        assert!(prev.is_none(), "duplicate parameter name `{name}`");
        self.entries.push(Param { name, value });
        id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|p| p.value.len()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, p)| (ParamId(i), p.name.as_str(), &p.value))
    }
}

/// Per-parameter gradient arrays, aligned with a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    grads: Vec<Tensor>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            grads: store
                .entries
                .iter()
                .map(|p| Tensor::zeros(p.value.rows(), p.value.cols()))
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in &mut self.grads {
            g.scale_in_place(s);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().all(Tensor::is_finite)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Geometry of a square-kernel 2-D convolution over one image.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_h: usize,
    pub in_w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.pad - self.kernel) / self.stride + 1
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }
}

enum Op {
    Input,
    Param(ParamId),
    Linear { x: Var, w: Var, b: Option<Var> },
    MatMul { a: Var, b: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow { x: Var, row: Var },
    Scale(Var, f64),
    Shift(Var),
    Relu(Var),
    Exp(Var),
    Ln(Var),
    Sigmoid(Var),
    Abs(Var),
    GatherRows { x: Var, idx: Vec<usize> },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols { x: Var, start: usize },
    MaxGroups { x: Var, argmax: Vec<usize> },
    MinGather { x: Var, argmin: Vec<usize> },
    SoftmaxGroups { x: Var, group: usize },
    SumGroups { x: Var, group: usize },
    Conv2d { x: Var, w: Var, b: Var, geom: ConvGeom, cols: Option<Tensor> },
    AvgPool2 { x: Var, h: usize, w: usize },
    GlobalAvgPool(Var),
    SumAll(Var),
    Chamfer { a: Var, b: Var, nn_ab: Vec<usize>, nn_ba: Vec<usize> },
}

struct Node {
    value: Option<Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Forward tape. Every builder method evaluates eagerly and records how to
/// propagate gradients back to its inputs.
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    fingerprint: Option<u64>,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            fingerprint: None,
        }
    }

    /// A graph that additionally hashes every discrete branch taken during the
    /// forward pass (ReLU masks, max/min selections, neighbor sets). Two
    /// evaluations with equal fingerprints lie on the same smooth piece of the
    /// piecewise-smooth network function.
    pub fn with_fingerprint(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            fingerprint: Some(FNV_OFFSET),
        }
    }

    pub fn fingerprint(&self) -> Option<u64> {
        self.fingerprint
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn is_tracking_branches(&self) -> bool {
        self.fingerprint.is_some()
    }

    /// Mixes external discrete decisions (e.g. neighbor indices) into the
    /// fingerprint.
    pub fn record_discrete(&mut self, decisions: &[usize]) {
        if let Some(h) = self.fingerprint.as_mut() {
            for &d in decisions {
                *h = (*h ^ d as u64).wrapping_mul(FNV_PRIME);
            }
            *h = (*h ^ 0xff).wrapping_mul(FNV_PRIME);
        }
    }

    fn record_bits(&mut self, bits: impl Iterator<Item = bool>) {
        if let Some(h) = self.fingerprint.as_mut() {
            let mut word = 0u64;
            let mut n = 0;
            for b in bits {
                word = (word << 1) | b as u64;
                n += 1;
                if n == 64 {
                    *h = (*h ^ word).wrapping_mul(FNV_PRIME);
                    word = 0;
                    n = 0;
                }
            }
            *h = (*h ^ word ^ ((n as u64) << 56)).wrapping_mul(FNV_PRIME);
        }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Param(id) => self.params.get(id),
            _ => node.value.as_ref().expect("non-parameter node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input, false)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// `x · w + b` with `x: n×i`, `w: i×o`, `b: 1×o`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let xv = self.value(x);
        let wv = self.value(w);
        assert_eq!(xv.cols(), wv.rows(), "linear: input width {} vs weight rows {}", xv.cols(), wv.rows());
        let mut out = Tensor::zeros(xv.rows(), wv.cols());
        if let Some(b) = b {
            let bv = self.value(b);
            assert_eq!(bv.shape(), (1, wv.cols()), "linear: bias shape");
            for r in 0..out.rows() {
                out.row_mut(r).copy_from_slice(bv.data());
            }
            gemm(1.0, xv, false, wv, false, 1.0, &mut out);
        } else {
            gemm(1.0, xv, false, wv, false, 0.0, &mut out);
        }
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        self.push(out, Op::Linear { x, w, b }, ng)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::MatMul { a, b }, ng)
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let av = self.value(a);
        let bv = self.value(b);
        assert_eq!(av.shape(), bv.shape(), "elementwise op on mismatched shapes");
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_vec(av.rows(), av.cols(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |x, y| x - y);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Mul(a, b), ng)
    }

    /// Adds the `1×c` row `row` to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let xv = self.value(x);
        let rv = self.value(row);
        assert_eq!(rv.shape(), (1, xv.cols()), "add_row: row shape");
        let mut out = xv.clone();
        for r in 0..out.rows() {
            for (o, &b) in out.row_mut(r).iter_mut().zip(rv.data()) {
                *o += b;
            }
        }
        let ng = self.ng(x) || self.ng(row);
        self.push(out, Op::AddRow { x, row }, ng)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let out = self.value(x).map(|v| v * s);
        let ng = self.ng(x);
        self.push(out, Op::Scale(x, s), ng)
    }

    pub fn shift(&mut self, x: Var, s: f64) -> Var {
        let out = self.value(x).map(|v| v + s);
        let ng = self.ng(x);
        self.push(out, Op::Shift(x), ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        if self.fingerprint.is_some() {
            let bits: Vec<bool> = self.value(x).data().iter().map(|&v| v > 0.0).collect();
            self.record_bits(bits.into_iter());
        }
        let ng = self.ng(x);
        self.push(out, Op::Relu(x), ng)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::exp);
        let ng = self.ng(x);
        self.push(out, Op::Exp(x), ng)
    }

    pub fn ln(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::ln);
        let ng = self.ng(x);
        self.push(out, Op::Ln(x), ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(logistic);
        let ng = self.ng(x);
        self.push(out, Op::Sigmoid(x), ng)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::abs);
        if self.fingerprint.is_some() {
            let bits: Vec<bool> = self.value(x).data().iter().map(|&v| v >= 0.0).collect();
            self.record_bits(bits.into_iter());
        }
        let ng = self.ng(x);
        self.push(out, Op::Abs(x), ng)
    }

    /// Output row `r` is input row `idx[r]`.
    pub fn gather_rows(&mut self, x: Var, idx: Vec<usize>) -> Var {
        let xv = self.value(x);
        let c = xv.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in &idx {
            data.extend_from_slice(xv.row(i));
        }
        let out = Tensor::from_vec(idx.len(), c, data);
        let ng = self.ng(x);
        self.push(out, Op::GatherRows { x, idx }, ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Tensor::zeros(rows, total);
        let mut offset = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.rows(), rows, "concat_cols: row counts differ");
            let c = pv.cols();
            for r in 0..rows {
                out.row_mut(r)[offset..offset + c].copy_from_slice(pv.row(r));
            }
            offset += c;
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(out, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.cols(), cols, "concat_rows: column counts differ");
            data.extend_from_slice(pv.data());
            rows += pv.rows();
        }
        let out = Tensor::from_vec(rows, cols, data);
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(out, Op::ConcatRows(parts.to_vec()), ng)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = self.value(x);
        assert!(start + len <= xv.cols(), "slice_cols out of range");
        let mut out = Tensor::zeros(xv.rows(), len);
        for r in 0..xv.rows() {
            out.row_mut(r).copy_from_slice(&xv.row(r)[start..start + len]);
        }
        let ng = self.ng(x);
        self.push(out, Op::SliceCols { x, start }, ng)
    }

    /// Columnwise max over consecutive groups of `group` rows:
    /// `(n·group)×c → n×c`. Ties resolve to the earliest row.
    pub fn max_groups(&mut self, x: Var, group: usize) -> Var {
        let xv = self.value(x);
        assert!(group > 0 && xv.rows() % group == 0, "max_groups: {} rows not divisible by {group}", xv.rows());
        let n = xv.rows() / group;
        let c = xv.cols();
        let mut out = Tensor::zeros(n, c);
        let mut argmax = vec![0usize; n * c];
        for i in 0..n {
            let base = i * group;
            let o = out.row_mut(i);
            o.copy_from_slice(xv.row(base));
            let am = &mut argmax[i * c..(i + 1) * c];
            am.fill(base);
            for r in base + 1..base + group {
                for (ch, &v) in xv.row(r).iter().enumerate() {
                    if v > o[ch] {
                        o[ch] = v;
                        am[ch] = r;
                    }
                }
            }
        }
        self.record_discrete(&argmax);
        let ng = self.ng(x);
        self.push(out, Op::MaxGroups { x, argmax }, ng)
    }

    /// `out[i, c] = min_s x[nbr[i·k + s], c]`: columnwise minimum over each
    /// row's `k` neighbor rows. Ties resolve to the earliest neighbor slot.
    pub fn min_gather(&mut self, x: Var, nbr: &[usize], k: usize) -> Var {
        let xv = self.value(x);
        assert!(k > 0 && nbr.len() % k == 0, "min_gather: neighbor list not divisible by k");
        let n = nbr.len() / k;
        let c = xv.cols();
        let mut out = Tensor::zeros(n, c);
        let mut argmin = vec![0usize; n * c];
        for i in 0..n {
            let slots = &nbr[i * k..(i + 1) * k];
            let o = out.row_mut(i);
            o.copy_from_slice(xv.row(slots[0]));
            let am = &mut argmin[i * c..(i + 1) * c];
            am.fill(slots[0]);
            for &j in &slots[1..] {
                for (ch, &v) in xv.row(j).iter().enumerate() {
                    if v < o[ch] {
                        o[ch] = v;
                        am[ch] = j;
                    }
                }
            }
        }
        self.record_discrete(&argmin);
        let ng = self.ng(x);
        self.push(out, Op::MinGather { x, argmin }, ng)
    }

    /// Columnwise softmax within consecutive groups of `group` rows.
    pub fn softmax_groups(&mut self, x: Var, group: usize) -> Var {
        let xv = self.value(x);
        assert!(group > 0 && xv.rows() % group == 0, "softmax_groups: bad group");
        let n = xv.rows() / group;
        let c = xv.cols();
        let mut out = xv.clone();
        let mut maxes = vec![0.0; c];
        let mut sums = vec![0.0; c];
        for i in 0..n {
            let base = i * group;
            maxes.copy_from_slice(xv.row(base));
            for r in base + 1..base + group {
                for (m, &v) in maxes.iter_mut().zip(xv.row(r)) {
                    *m = m.max(v);
                }
            }
            sums.fill(0.0);
            for r in base..base + group {
                for ((o, s), m) in out.row_mut(r).iter_mut().zip(sums.iter_mut()).zip(&maxes) {
                    *o = (*o - m).exp();
                    *s += *o;
                }
            }
            for r in base..base + group {
                for (o, s) in out.row_mut(r).iter_mut().zip(&sums) {
                    *o /= s;
                }
            }
        }
        let ng = self.ng(x);
        self.push(out, Op::SoftmaxGroups { x, group }, ng)
    }

    /// Columnwise sum within consecutive groups of `group` rows.
    pub fn sum_groups(&mut self, x: Var, group: usize) -> Var {
        let xv = self.value(x);
        assert!(group > 0 && xv.rows() % group == 0, "sum_groups: bad group");
        let n = xv.rows() / group;
        let mut out = Tensor::zeros(n, xv.cols());
        for i in 0..n {
            let o = out.row_mut(i);
            for r in i * group..(i + 1) * group {
                for (a, &v) in o.iter_mut().zip(xv.row(r)) {
                    *a += v;
                }
            }
        }
        let ng = self.ng(x);
        self.push(out, Op::SumGroups { x, group }, ng)
    }

    /// 2-D convolution of `x: C_in × (H·W)` with `w: C_out × (C_in·k·k)` and
    /// bias `b: 1 × C_out`, producing `C_out × (H'·W')`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, geom: ConvGeom) -> Var {
        let xv = self.value(x);
        let wv = self.value(w);
        let bv = self.value(b);
        let cin = xv.rows();
        assert_eq!(xv.cols(), geom.in_h * geom.in_w, "conv2d: input pixel count");
        assert_eq!(wv.cols(), cin * geom.kernel * geom.kernel, "conv2d: weight width");
        assert_eq!(bv.shape(), (1, wv.rows()), "conv2d: bias shape");
        let (oh, ow) = (geom.out_h(), geom.out_w());
        let mut out = Tensor::zeros(wv.rows(), oh * ow);
        for r in 0..out.rows() {
            out.row_mut(r).fill(bv.data()[r]);
        }
        let cols = if geom.is_pointwise() {
            gemm(1.0, wv, false, xv, false, 1.0, &mut out);
            None
        } else {
            let cols = im2col(xv, geom);
            gemm(1.0, wv, false, &cols, false, 1.0, &mut out);
            Some(cols)
        };
        let ng = self.ng(x) || self.ng(w) || self.ng(b);
        self.push(out, Op::Conv2d { x, w, b, geom, cols }, ng)
    }

    /// 2×2 average pooling with stride 2 on `C × (h·w)` maps; odd trailing
    /// rows/columns are dropped.
    pub fn avg_pool2(&mut self, x: Var, h: usize, w: usize) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.cols(), h * w, "avg_pool2: pixel count");
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Tensor::zeros(xv.rows(), oh * ow);
        for c in 0..xv.rows() {
            let src = xv.row(c);
            let dst = out.row_mut(c);
            for y in 0..oh {
                for x_ in 0..ow {
                    let i = 2 * y * w + 2 * x_;
                    dst[y * ow + x_] = 0.25 * (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]);
                }
            }
        }
        let ng = self.ng(x);
        self.push(out, Op::AvgPool2 { x, h, w }, ng)
    }

    /// `C × P → 1 × C`: mean over pixels for each channel.
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let p = xv.cols() as f64;
        let data = (0..xv.rows()).map(|c| xv.row(c).iter().sum::<f64>() / p).collect();
        let out = Tensor::row_vector(data);
        let ng = self.ng(x);
        self.push(out, Op::GlobalAvgPool(x), ng)
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        let ng = self.ng(x);
        self.push(out, Op::SumAll(x), ng)
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum_all(x);
        self.scale(s, 1.0 / n)
    }

    /// Symmetric Chamfer distance between point sets `a: n×d` and `b: m×d`:
    /// mean squared distance from each point to its nearest neighbor in the
    /// other set, summed over both directions. Ties pick the lowest index.
    pub fn chamfer(&mut self, a: Var, b: Var) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        assert!(av.rows() > 0 && bv.rows() > 0, "chamfer on empty set");
        assert_eq!(av.cols(), bv.cols(), "chamfer: dimension mismatch");
        let (nn_ab, d_ab) = nearest(av, bv);
        let (nn_ba, d_ba) = nearest(bv, av);
        let value = d_ab.iter().sum::<f64>() / av.rows() as f64 + d_ba.iter().sum::<f64>() / bv.rows() as f64;
        self.record_discrete(&nn_ab);
        self.record_discrete(&nn_ba);
        let ng = self.ng(a) || self.ng(b);
        self.push(Tensor::scalar(value), Op::Chamfer { a, b, nn_ab, nn_ba }, ng)
    }

    /// Back-propagates from the scalar `output` and returns parameter
    /// gradients.
    pub fn backward(&self, output: Var) -> Gradients {
        assert_eq!(self.shape(output), (1, 1), "backward from a non-scalar");
        let mut pgrads = Gradients::zeros_like(self.params);
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::scalar(1.0));
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            self.propagate(i, g, &mut grads, &mut pgrads);
        }
        pgrads
    }

    fn propagate(&self, i: usize, g: Tensor, grads: &mut [Option<Tensor>], pgrads: &mut Gradients) {
        let node = &self.nodes[i];
        let out = node.value.as_ref();
        match &node.op {
            Op::Input => {}
            Op::Param(id) => pgrads.grads[id.0].add_assign(&g),
            Op::Linear { x, w, b } => {
                if self.ng(*x) {
                    let wv = self.value(*w);
                    let mut dx = Tensor::zeros(g.rows(), wv.rows());
                    gemm(1.0, &g, false, wv, true, 0.0, &mut dx);
                    accumulate(grads, *x, dx);
                }
                if self.ng(*w) {
                    let xv = self.value(*x);
                    let mut dw = Tensor::zeros(xv.cols(), g.cols());
                    gemm(1.0, xv, true, &g, false, 0.0, &mut dw);
                    accumulate(grads, *w, dw);
                }
                if let Some(b) = b {
                    if self.ng(*b) {
                        accumulate(grads, *b, col_sums(&g));
                    }
                }
            }
            Op::MatMul { a, b } => {
                if self.ng(*a) {
                    let bv = self.value(*b);
                    let mut da = Tensor::zeros(g.rows(), bv.rows());
                    gemm(1.0, &g, false, bv, true, 0.0, &mut da);
                    accumulate(grads, *a, da);
                }
                if self.ng(*b) {
                    let av = self.value(*a);
                    let mut db = Tensor::zeros(av.cols(), g.cols());
                    gemm(1.0, av, true, &g, false, 0.0, &mut db);
                    accumulate(grads, *b, db);
                }
            }
            Op::Add(a, b) => {
                if self.ng(*b) {
                    accumulate(grads, *b, g.clone());
                }
                if self.ng(*a) {
                    accumulate(grads, *a, g);
                }
            }
            Op::Sub(a, b) => {
                if self.ng(*b) {
                    accumulate(grads, *b, g.map(|v| -v));
                }
                if self.ng(*a) {
                    accumulate(grads, *a, g);
                }
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    let bv = self.value(*b);
                    accumulate(grads, *a, zip(&g, bv, |d, y| d * y));
                }
                if self.ng(*b) {
                    let av = self.value(*a);
                    accumulate(grads, *b, zip(&g, av, |d, x| d * x));
                }
            }
            Op::AddRow { x, row } => {
                if self.ng(*row) {
                    accumulate(grads, *row, col_sums(&g));
                }
                if self.ng(*x) {
                    accumulate(grads, *x, g);
                }
            }
            Op::Scale(x, s) => accumulate(grads, *x, g.map(|v| v * s)),
            Op::Shift(x) => accumulate(grads, *x, g),
            Op::Relu(x) => {
                let y = out.unwrap();
                accumulate(grads, *x, zip(&g, y, |d, y| if y > 0.0 { d } else { 0.0 }));
            }
            Op::Exp(x) => accumulate(grads, *x, zip(&g, out.unwrap(), |d, y| d * y)),
            Op::Ln(x) => accumulate(grads, *x, zip(&g, self.value(*x), |d, x| d / x)),
            Op::Sigmoid(x) => accumulate(grads, *x, zip(&g, out.unwrap(), |d, y| d * y * (1.0 - y))),
            Op::Abs(x) => accumulate(
                grads,
                *x,
                zip(&g, self.value(*x), |d, x| {
                    if x > 0.0 {
                        d
                    } else if x < 0.0 {
                        -d
                    } else {
                        0.0
                    }
                }),
            ),
            Op::GatherRows { x, idx } => {
                let (r, c) = self.shape(*x);
                let mut dx = Tensor::zeros(r, c);
                for (o, &src) in idx.iter().enumerate() {
                    for (a, &v) in dx.row_mut(src).iter_mut().zip(g.row(o)) {
                        *a += v;
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (r, c) = self.shape(p);
                    if self.ng(p) {
                        let mut dp = Tensor::zeros(r, c);
                        for row in 0..r {
                            dp.row_mut(row).copy_from_slice(&g.row(row)[offset..offset + c]);
                        }
                        accumulate(grads, p, dp);
                    }
                    offset += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (r, c) = self.shape(p);
                    if self.ng(p) {
                        let dp = Tensor::from_vec(r, c, g.data()[offset * c..(offset + r) * c].to_vec());
                        accumulate(grads, p, dp);
                    }
                    offset += r;
                }
            }
            Op::SliceCols { x, start } => {
                let (r, c) = self.shape(*x);
                let mut dx = Tensor::zeros(r, c);
                let len = g.cols();
                for row in 0..r {
                    dx.row_mut(row)[*start..*start + len].copy_from_slice(g.row(row));
                }
                accumulate(grads, *x, dx);
            }
            Op::MaxGroups { x, argmax } | Op::MinGather { x, argmin: argmax } => {
                let (r, c) = self.shape(*x);
                let mut dx = Tensor::zeros(r, c);
                let gd = g.data();
                for (flat, &src) in argmax.iter().enumerate() {
                    let ch = flat % c;
                    dx.data_mut()[src * c + ch] += gd[flat];
                }
                accumulate(grads, *x, dx);
            }
            Op::SoftmaxGroups { x, group } => {
                let y = out.unwrap();
                let c = y.cols();
                let mut dx = Tensor::zeros(y.rows(), c);
                let mut dots = vec![0.0; c];
                for i in 0..y.rows() / group {
                    dots.fill(0.0);
                    for r in i * group..(i + 1) * group {
                        for ((d, &yv), &gv) in dots.iter_mut().zip(y.row(r)).zip(g.row(r)) {
                            *d += yv * gv;
                        }
                    }
                    for r in i * group..(i + 1) * group {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        for (ch, o) in dx.row_mut(r).iter_mut().enumerate() {
                            *o = yr[ch] * (gr[ch] - dots[ch]);
                        }
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::SumGroups { x, group } => {
                let (r, c) = self.shape(*x);
                let mut dx = Tensor::zeros(r, c);
                for row in 0..r {
                    dx.row_mut(row).copy_from_slice(g.row(row / group));
                }
                accumulate(grads, *x, dx);
            }
            Op::Conv2d { x, w, b, geom, cols } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                if self.ng(*b) {
                    let db = Tensor::row_vector((0..g.rows()).map(|r| g.row(r).iter().sum()).collect());
                    accumulate(grads, *b, db);
                }
                if self.ng(*w) {
                    let src = cols.as_ref().unwrap_or(xv);
                    let mut dw = Tensor::zeros(wv.rows(), wv.cols());
                    gemm(1.0, &g, false, src, true, 0.0, &mut dw);
                    accumulate(grads, *w, dw);
                }
                if self.ng(*x) {
                    let mut dcols = Tensor::zeros(wv.cols(), g.cols());
                    gemm(1.0, wv, true, &g, false, 0.0, &mut dcols);
                    let dx = if cols.is_some() {
                        col2im(&dcols, xv.rows(), *geom)
                    } else {
                        dcols
                    };
                    accumulate(grads, *x, dx);
                }
            }
            Op::AvgPool2 { x, h, w } => {
                let (oh, ow) = (h / 2, w / 2);
                let (r, c) = self.shape(*x);
                let mut dx = Tensor::zeros(r, c);
                for ch in 0..r {
                    let src = g.row(ch);
                    let dst = dx.row_mut(ch);
                    for y in 0..oh {
                        for x_ in 0..ow {
                            let v = 0.25 * src[y * ow + x_];
                            let i = 2 * y * w + 2 * x_;
                            dst[i] += v;
                            dst[i + 1] += v;
                            dst[i + w] += v;
                            dst[i + w + 1] += v;
                        }
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::GlobalAvgPool(x) => {
                let (r, c) = self.shape(*x);
                let mut dx = Tensor::zeros(r, c);
                for ch in 0..r {
                    dx.row_mut(ch).fill(g.data()[ch] / c as f64);
                }
                accumulate(grads, *x, dx);
            }
            Op::SumAll(x) => {
                let (r, c) = self.shape(*x);
                accumulate(grads, *x, Tensor::full(r, c, g.item()));
            }
            Op::Chamfer { a, b, nn_ab, nn_ba } => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let d = av.cols();
                let s = g.item();
                let mut da = Tensor::zeros(av.rows(), d);
                let mut db = Tensor::zeros(bv.rows(), d);
                let wa = 2.0 * s / av.rows() as f64;
                for (i, &j) in nn_ab.iter().enumerate() {
                    for k in 0..d {
                        let diff = wa * (av.get(i, k) - bv.get(j, k));
                        da.data_mut()[i * d + k] += diff;
                        db.data_mut()[j * d + k] -= diff;
                    }
                }
                let wb = 2.0 * s / bv.rows() as f64;
                for (j, &i) in nn_ba.iter().enumerate() {
                    for k in 0..d {
                        let diff = wb * (bv.get(j, k) - av.get(i, k));
                        db.data_mut()[j * d + k] += diff;
                        da.data_mut()[i * d + k] -= diff;
                    }
                }
                if self.ng(*a) {
                    accumulate(grads, *a, da);
                }
                if self.ng(*b) {
                    accumulate(grads, *b, db);
                }
            }
        }
    }
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.rows(), a.cols(), data)
}

fn col_sums(g: &Tensor) -> Tensor {
    let mut out = vec![0.0; g.cols()];
    for r in 0..g.rows() {
        for (o, &v) in out.iter_mut().zip(g.row(r)) {
            *o += v;
        }
    }
    Tensor::row_vector(out)
}

/// Index and squared distance of the nearest row of `to` for each row of
/// `from`; ties pick the lowest index.
fn nearest(from: &Tensor, to: &Tensor) -> (Vec<usize>, Vec<f64>) {
    let d = from.cols();
    let mut idx = Vec::with_capacity(from.rows());
    let mut dist = Vec::with_capacity(from.rows());
    for i in 0..from.rows() {
        let p = from.row(i);
        let mut best = f64::INFINITY;
        let mut best_j = 0;
        for j in 0..to.rows() {
            let q = to.row(j);
            let mut s = 0.0;
            for k in 0..d {
                let t = p[k] - q[k];
                s += t * t;
            }
            if s < best {
                best = s;
                best_j = j;
            }
        }
        idx.push(best_j);
        dist.push(best);
    }
    (idx, dist)
}

fn im2col(x: &Tensor, geom: ConvGeom) -> Tensor {
    let k = geom.kernel;
    let (oh, ow) = (geom.out_h(), geom.out_w());
    let cin = x.rows();
    let mut cols = Tensor::zeros(cin * k * k, oh * ow);
    for c in 0..cin {
        let src = x.row(c);
        for ky in 0..k {
            for kx in 0..k {
                let dst = cols.row_mut((c * k + ky) * k + kx);
                for oy in 0..oh {
                    let iy = (oy * geom.stride + ky) as isize - geom.pad as isize;
                    if iy < 0 || iy >= geom.in_h as isize {
                        continue;
                    }
                    let srow = &src[iy as usize * geom.in_w..(iy as usize + 1) * geom.in_w];
                    for ox in 0..ow {
                        let ix = (ox * geom.stride + kx) as isize - geom.pad as isize;
                        if ix >= 0 && ix < geom.in_w as isize {
                            dst[oy * ow + ox] = srow[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &Tensor, cin: usize, geom: ConvGeom) -> Tensor {
    let k = geom.kernel;
    let (oh, ow) = (geom.out_h(), geom.out_w());
    let mut x = Tensor::zeros(cin, geom.in_h * geom.in_w);
    for c in 0..cin {
        let dst = x.row_mut(c);
        for ky in 0..k {
            for kx in 0..k {
                let src = cols.row((c * k + ky) * k + kx);
                for oy in 0..oh {
                    let iy = (oy * geom.stride + ky) as isize - geom.pad as isize;
                    if iy < 0 || iy >= geom.in_h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * geom.stride + kx) as isize - geom.pad as isize;
                        if ix >= 0 && ix < geom.in_w as isize {
                            dst[iy as usize * geom.in_w + ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
    x
}
