//! Parameterized layers: each registers its tensors in a [`ParamStore`] under
//! a name prefix and applies itself to a [`Graph`].

use rand::Rng;

use crate::error::Result;
use crate::graph::{BatchNormParams, Graph, GruParams, Var};
use crate::init::he_normal;
use crate::ops::conv::ceil_mode_padding;
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// No padding.
    Valid,
    /// Pad so the output length is `ceil(input / stride)`.
    Same,
}

fn pads(padding: Padding, input: usize, kernel: usize, stride: usize) -> (usize, usize) {
    match padding {
        Padding::Valid => (0, 0),
        Padding::Same => ceil_mode_padding(input, kernel, stride),
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
}

impl Dense {
    pub fn new(store: &mut ParamStore, name: &str, din: usize, dout: usize, rng: &mut impl Rng) -> Self {
        Self {
            w: store.add(format!("{name}.w"), he_normal(&[din, dout], din, rng), true),
            b: store.add(format!("{name}.b"), Tensor::zeros(&[dout]), true),
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let w = g.param(self.w);
        let b = g.param(self.b);
        g.linear(x, w, b)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: ParamId,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: Padding,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: Padding,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = cin * kernel.0 * kernel.1;
        Self {
            w: store.add(
                format!("{name}.w"),
                he_normal(&[cout, cin, kernel.0, kernel.1], fan_in, rng),
                true,
            ),
            b: store.add(format!("{name}.b"), Tensor::zeros(&[cout]), true),
            kernel,
            stride,
            padding,
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        let (h, w) = match shape.as_slice() {
            [_, _, h, w] => (*h, *w),
            _ => (0, 0),
        };
        let (pt, pb) = pads(self.padding, h, self.kernel.0, self.stride.0);
        let (pl, pr) = pads(self.padding, w, self.kernel.1, self.stride.1);
        let wv = g.param(self.w);
        let bv = g.param(self.b);
        g.conv2d(x, wv, bv, self.stride, [pt, pb, pl, pr])
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Conv1d {
    pub w: ParamId,
    pub b: ParamId,
    pub kernel: usize,
    pub stride: usize,
    pub padding: Padding,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            w: store.add(
                format!("{name}.w"),
                he_normal(&[cout, cin, kernel], cin * kernel, rng),
                true,
            ),
            b: store.add(format!("{name}.b"), Tensor::zeros(&[cout]), true),
            kernel,
            stride,
            padding,
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let len = g.shape(x).last().copied().unwrap_or(0);
        let pad = pads(self.padding, len, self.kernel, self.stride);
        let wv = g.param(self.w);
        let bv = g.param(self.b);
        g.conv1d(x, wv, bv, self.stride, pad)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BatchNorm {
    pub params: BatchNormParams,
    pub momentum: f64,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, momentum: f64) -> Self {
        Self {
            params: BatchNormParams {
                gamma: store.add(format!("{name}.gamma"), Tensor::full(&[channels], 1.0), true),
                beta: store.add(format!("{name}.beta"), Tensor::zeros(&[channels]), true),
                running_mean: store.add(format!("{name}.running_mean"), Tensor::zeros(&[channels]), false),
                running_var: store.add(format!("{name}.running_var"), Tensor::full(&[channels], 1.0), false),
            },
            momentum,
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var, training: bool) -> Result<Var> {
        g.batch_norm(x, self.params, training, self.momentum)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Gru {
    pub params: GruParams,
    pub hidden: usize,
}

impl Gru {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let g3 = 3 * hidden;
        Self {
            params: GruParams {
                w_ih: store.add(format!("{name}.w_ih"), he_normal(&[input, g3], input, rng), true),
                w_hh: store.add(format!("{name}.w_hh"), he_normal(&[hidden, g3], hidden, rng), true),
                b_ih: store.add(format!("{name}.b_ih"), Tensor::zeros(&[g3]), true),
                b_hh: store.add(format!("{name}.b_hh"), Tensor::zeros(&[g3]), true),
            },
            hidden,
        }
    }

    /// Final hidden state of an `[N, T, C]` sequence.
    pub fn final_state(&self, g: &mut Graph<'_>, seq: Var) -> Result<Var> {
        let all = g.gru(seq, self.params)?;
        g.last_step(all)
    }
}
