//! Parameterized layers on top of the autograd graph.

use rand::Rng;

use crate::autograd::{ConvGeom, Graph, ParamId, ParamStore, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform with variance 2/fan_in, for layers followed by ReLU.
    He,
    /// Uniform with variance 2/(fan_in + fan_out).
    Glorot,
    /// He scaled by a factor, for output layers that should start near zero.
    Scaled(f64),
}

pub fn init_tensor(rows: usize, cols: usize, fan_in: usize, fan_out: usize, init: Init, rng: &mut impl Rng) -> Tensor {
    let limit = match init {
        Init::He => (6.0 / fan_in as f64).sqrt(),
        Init::Glorot => (6.0 / (fan_in + fan_out) as f64).sqrt(),
        Init::Scaled(s) => s * (6.0 / fan_in as f64).sqrt(),
    };
    let data = (0..rows * cols).map(|_| rng.gen_range(-limit..=limit)).collect();
    Tensor::from_vec(rows, cols, data)
}

/// Affine map `x·W + b` on row vectors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Dense {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, output: usize, init: Init, rng: &mut impl Rng) -> Self {
        let w = store.add(format!("{name}.w"), init_tensor(input, output, input, output, init, rng));
        let b = store.add(format!("{name}.b"), Tensor::zeros(1, output));
        Self { w, b, input, output }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.param(self.w);
        let b = g.param(self.b);
        g.linear(x, w, Some(b))
    }

    pub fn forward_relu(&self, g: &mut Graph, x: Var) -> Var {
        let y = self.forward(g, x);
        g.relu(y)
    }
}

/// Runs `x` through a chain of dense layers with ReLU after every layer.
pub fn mlp_relu(layers: &[Dense], g: &mut Graph, mut x: Var) -> Var {
    for l in layers {
        x = l.forward_relu(g, x);
    }
    x
}

/// Square-kernel convolution over channel-major images.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub output: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl Conv {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, output: usize, kernel: usize, stride: usize, rng: &mut impl Rng) -> Self {
        let fan_in = input * kernel * kernel;
        let w = store.add(format!("{name}.w"), init_tensor(output, fan_in, fan_in, output, Init::He, rng));
        let b = store.add(format!("{name}.b"), Tensor::zeros(1, output));
        Self {
            w,
            b,
            input,
            output,
            kernel,
            stride,
        }
    }

    /// Same-padded convolution of an `h × w` map; returns the output and its
    /// spatial size.
    pub fn forward(&self, g: &mut Graph, x: Var, h: usize, w: usize) -> (Var, usize, usize) {
        let geom = ConvGeom {
            in_h: h,
            in_w: w,
            kernel: self.kernel,
            stride: self.stride,
            pad: self.kernel / 2,
        };
        let wv = g.param(self.w);
        let bv = g.param(self.b);
        (g.conv2d(x, wv, bv, geom), geom.out_h(), geom.out_w())
    }
}
