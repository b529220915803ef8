//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied during a forward pass. Nodes are
//! appended in evaluation order, so walking the tape backwards is a valid
//! reverse topological order. Parameters are copied in from a [`ParamStore`]
//! and their gradients are accumulated back into it by [`Graph::backward`].

use crate::error::{shape_err, Error, Result};
use crate::ops::conv::{self, ConvGeom};
use crate::ops::gru::{self, GruCache, GruDims};
use crate::ops::norm::{self, BnCache};
use crate::ops::pool::{self, PoolGeom};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Parameter ids of a batch-normalization layer.
#[derive(Debug, Clone, Copy)]
pub struct BatchNormParams {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

/// Parameter ids of a GRU layer.
#[derive(Debug, Clone, Copy)]
pub struct GruParams {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b_ih: ParamId,
    pub b_hh: ParamId,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Reshape(Var),
    Sum(Var),
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Conv {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        dims: (usize, usize, usize),
        cache: BnCache,
    },
    ChannelsToSeq {
        x: Var,
        dims: (usize, usize, usize),
    },
    Gru {
        x: Var,
        w_ih: Var,
        w_hh: Var,
        b_ih: Var,
        b_hh: Var,
        dims: GruDims,
        cache: GruCache,
    },
    LastStep {
        x: Var,
        dims: (usize, usize, usize),
    },
    Softmax(Var),
    SoftmaxCrossEntropy {
        logits: Var,
        probs: Vec<f64>,
        labels: Vec<usize>,
    },
    CenterLoss {
        x: Var,
        diff: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

pub struct Graph<'s> {
    store: &'s mut ParamStore,
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    backward_done: bool,
}

fn check_rank(layer: &'static str, t: &Tensor, rank: usize) -> Result<()> {
    if t.shape().len() != rank {
        return Err(Error::Shape {
            layer,
            lhs: t.shape().to_vec(),
            rhs: vec![0; rank],
        });
    }
    Ok(())
}

impl<'s> Graph<'s> {
    pub fn new(store: &'s mut ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
        }
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last backward pass w.r.t. `v`, if `v` was reached.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Constant input; no gradient is computed for it.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Input whose gradient is wanted (gradient checks, saliency).
    pub fn input_with_grad(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let value = self.store.value(id).clone();
        let rg = self.store.is_trainable(id);
        self.push(value, Op::Param(id), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("add", ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("mul", ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let t = self.value(x);
        let out = Tensor::from_fn(t.shape(), |i| t.data()[i] * k);
        let rg = self.rg(&[x]);
        self.push(out, Op::Scale(x, k), rg)
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(x);
        let out = Tensor::from_fn(t.shape(), |i| f(t.data()[i]));
        let rg = self.rg(&[x]);
        self.push(out, op, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| if v < 0.0 { 0.0 } else { v }, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, |v| 1.0 / (1.0 + (-v).exp()), Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// `x·W + b` for `x: [N, in]`, `W: [in, out]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        check_rank("dense", tx, 2)?;
        check_rank("dense", tw, 2)?;
        let (n, din) = (tx.shape()[0], tx.shape()[1]);
        if tw.shape()[0] != din {
            return Err(shape_err("dense", tx.shape(), tw.shape()));
        }
        let dout = tw.shape()[1];
        if tb.shape() != [dout] {
            return Err(shape_err("dense", tw.shape(), tb.shape()));
        }
        let mut y = Vec::with_capacity(n * dout);
        for _ in 0..n {
            y.extend_from_slice(tb.data());
        }
        crate::ops::gemm::gemm(n, din, dout, tx.data(), false, tw.data(), false, 1.0, &mut y);
        let out = Tensor::new(vec![n, dout], y)?;
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(out, Op::Linear { x, w, b }, rg))
    }

    /// 2-D convolution of `[N, C, H, W]` with weights `[Cout, C, kh, kw]`.
    /// `pad` is `[top, bottom, left, right]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: (usize, usize),
        pad: [usize; 4],
    ) -> Result<Var> {
        let (tx, tw) = (self.value(x), self.value(w));
        check_rank("conv2d", tx, 4)?;
        check_rank("conv2d", tw, 4)?;
        let &[n, cin, h, wd] = tx.shape() else { unreachable!() };
        let &[cout, wcin, kh, kw] = tw.shape() else { unreachable!() };
        self.conv_common("conv2d", x, w, b, [n, cin, h, wd], [cout, wcin, kh, kw], stride, pad)
            .map(|(v, _)| v)
    }

    /// 1-D convolution of `[N, C, L]` with weights `[Cout, C, k]`.
    /// `pad` is `(left, right)`.
    pub fn conv1d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: (usize, usize),
    ) -> Result<Var> {
        let (tx, tw) = (self.value(x), self.value(w));
        check_rank("conv1d", tx, 3)?;
        check_rank("conv1d", tw, 3)?;
        let &[n, cin, l] = tx.shape() else { unreachable!() };
        let &[cout, wcin, k] = tw.shape() else { unreachable!() };
        let (v, geom) = self.conv_common(
            "conv1d",
            x,
            w,
            b,
            [n, cin, 1, l],
            [cout, wcin, 1, k],
            (1, stride),
            [0, 0, pad.0, pad.1],
        )?;
        let shape = vec![geom.n, geom.cout, geom.wo];
        let node = &mut self.nodes[v.0];
        node.value = std::mem::replace(&mut node.value, Tensor::scalar(0.0)).reshape(&shape)?;
        Ok(v)
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_common(
        &mut self,
        layer: &'static str,
        x: Var,
        w: Var,
        b: Var,
        xs: [usize; 4],
        ws: [usize; 4],
        stride: (usize, usize),
        pad: [usize; 4],
    ) -> Result<(Var, ConvGeom)> {
        let [n, cin, h, wd] = xs;
        let [cout, wcin, kh, kw] = ws;
        if wcin != cin {
            return Err(shape_err(layer, self.shape(x), self.shape(w)));
        }
        if self.shape(b) != [cout] {
            return Err(shape_err(layer, self.shape(w), self.shape(b)));
        }
        let ho = conv::out_len(h, kh, stride.0, pad[0], pad[1]);
        let wo = conv::out_len(wd, kw, stride.1, pad[2], pad[3]);
        let (Some(ho), Some(wo)) = (ho, wo) else {
            return Err(shape_err(layer, self.shape(x), self.shape(w)));
        };
        let geom = ConvGeom {
            n,
            cin,
            h,
            w: wd,
            cout,
            kh,
            kw,
            sh: stride.0,
            sw: stride.1,
            pad,
            ho,
            wo,
        };
        let y = geom.forward(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
        );
        let out = Tensor::new(vec![n, cout, ho, wo], y)?;
        let rg = self.rg(&[x, w, b]);
        Ok((self.push(out, Op::Conv { x, w, b, geom }, rg), geom))
    }

    /// Max pooling of `[N, C, H, W]`, floor mode, no padding.
    pub fn max_pool2d(&mut self, x: Var, kernel: (usize, usize), stride: (usize, usize)) -> Result<Var> {
        let t = self.value(x);
        check_rank("maxpool2d", t, 4)?;
        let &[n, c, h, w] = t.shape() else { unreachable!() };
        let (ho, wo) = match (
            conv::out_len(h, kernel.0, stride.0, 0, 0),
            conv::out_len(w, kernel.1, stride.1, 0, 0),
        ) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(shape_err("maxpool2d", t.shape(), &[kernel.0, kernel.1])),
        };
        let geom = PoolGeom {
            planes: n * c,
            h,
            w,
            kh: kernel.0,
            kw: kernel.1,
            sh: stride.0,
            sw: stride.1,
            ho,
            wo,
        };
        let (y, argmax) = geom.forward(t.data());
        let out = Tensor::new(vec![n, c, ho, wo], y)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::MaxPool { x, argmax }, rg))
    }

    /// Max pooling of `[N, C, L]`.
    pub fn max_pool1d(&mut self, x: Var, kernel: usize, stride: usize) -> Result<Var> {
        let t = self.value(x);
        check_rank("maxpool1d", t, 3)?;
        let &[n, c, l] = t.shape() else { unreachable!() };
        let Some(lo) = conv::out_len(l, kernel, stride, 0, 0) else {
            return Err(shape_err("maxpool1d", t.shape(), &[kernel]));
        };
        let geom = PoolGeom {
            planes: n * c,
            h: 1,
            w: l,
            kh: 1,
            kw: kernel,
            sh: 1,
            sw: stride,
            ho: 1,
            wo: lo,
        };
        let (y, argmax) = geom.forward(t.data());
        let out = Tensor::new(vec![n, c, lo], y)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::MaxPool { x, argmax }, rg))
    }

    /// Batch normalization over axis 1 of an `[N, C, ...]` tensor.
    ///
    /// In training mode batch statistics are used and the running statistics
    /// in the store are updated as `running = momentum·running + (1 − momentum)·batch`.
    pub fn batch_norm(
        &mut self,
        x: Var,
        p: BatchNormParams,
        training: bool,
        momentum: f64,
    ) -> Result<Var> {
        let t = self.value(x);
        if t.shape().len() < 2 {
            return Err(shape_err("batchnorm", t.shape(), &[0, 0]));
        }
        let n = t.shape()[0];
        let c = t.shape()[1];
        let s: usize = t.shape()[2..].iter().product();
        if self.store.value(p.gamma).len() != c {
            return Err(shape_err(
                "batchnorm",
                t.shape(),
                self.store.value(p.gamma).shape(),
            ));
        }
        let (mean, var) = if training {
            let (mean, var) = norm::batch_stats(t.data(), n, c, s);
            let m = (n * s) as f64;
            let unbias = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
            let rm = self.store.value_mut(p.running_mean).data_mut();
            for (r, v) in rm.iter_mut().zip(&mean) {
                *r = momentum * *r + (1.0 - momentum) * v;
            }
            let rv = self.store.value_mut(p.running_var).data_mut();
            for (r, v) in rv.iter_mut().zip(&var) {
                *r = momentum * *r + (1.0 - momentum) * v * unbias;
            }
            (mean, var)
        } else {
            (
                self.store.value(p.running_mean).data().to_vec(),
                self.store.value(p.running_var).data().to_vec(),
            )
        };
        let gamma = self.param(p.gamma);
        let beta = self.param(p.beta);
        let t = self.value(x);
        let (y, cache) = norm::forward(
            t.data(),
            n,
            c,
            s,
            self.value(gamma).data(),
            self.value(beta).data(),
            &mean,
            &var,
            training,
        );
        let out = Tensor::new(t.shape().to_vec(), y)?;
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                dims: (n, c, s),
                cache,
            },
            rg,
        ))
    }

    /// `[N, C, T]` or `[N, C, T, 1]` feature maps to an `[N, T, C]` sequence.
    pub fn channels_to_seq(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (n, c, len) = match *t.shape() {
            [n, c, l] => (n, c, l),
            [n, c, l, 1] => (n, c, l),
            _ => return Err(shape_err("channels_to_seq", t.shape(), &[0, 0, 0])),
        };
        let mut y = vec![0.0; n * len * c];
        let d = t.data();
        for s in 0..n {
            for ch in 0..c {
                for step in 0..len {
                    y[(s * len + step) * c + ch] = d[(s * c + ch) * len + step];
                }
            }
        }
        let out = Tensor::new(vec![n, len, c], y)?;
        let rg = self.rg(&[x]);
        Ok(self.push(
            out,
            Op::ChannelsToSeq {
                x,
                dims: (n, c, len),
            },
            rg,
        ))
    }

    /// GRU over an `[N, T, C]` sequence; returns every hidden state, `[N, T, H]`.
    pub fn gru(&mut self, x: Var, p: GruParams) -> Result<Var> {
        let w_ih = self.param(p.w_ih);
        let w_hh = self.param(p.w_hh);
        let b_ih = self.param(p.b_ih);
        let b_hh = self.param(p.b_hh);
        let t = self.value(x);
        check_rank("gru", t, 3)?;
        let &[n, steps, input] = t.shape() else { unreachable!() };
        let wi = self.value(w_ih);
        if wi.shape().len() != 2 || wi.shape()[0] != input || wi.shape()[1] % 3 != 0 {
            return Err(shape_err("gru", t.shape(), wi.shape()));
        }
        let hidden = wi.shape()[1] / 3;
        if self.shape(w_hh) != [hidden, 3 * hidden]
            || self.shape(b_ih) != [3 * hidden]
            || self.shape(b_hh) != [3 * hidden]
        {
            return Err(shape_err("gru", wi.shape(), self.shape(w_hh)));
        }
        if steps == 0 {
            return Err(shape_err("gru", t.shape(), &[n, 1, input]));
        }
        let dims = GruDims {
            n,
            t: steps,
            input,
            hidden,
        };
        let (y, cache) = gru::forward(
            dims,
            t.data(),
            self.value(w_ih).data(),
            self.value(w_hh).data(),
            self.value(b_ih).data(),
            self.value(b_hh).data(),
        );
        let out = Tensor::new(vec![n, steps, hidden], y)?;
        let rg = self.rg(&[x, w_ih, w_hh, b_ih, b_hh]);
        Ok(self.push(
            out,
            Op::Gru {
                x,
                w_ih,
                w_hh,
                b_ih,
                b_hh,
                dims,
                cache,
            },
            rg,
        ))
    }

    /// Final step of an `[N, T, H]` sequence, `[N, H]`.
    pub fn last_step(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        check_rank("last_step", t, 3)?;
        let &[n, steps, h] = t.shape() else { unreachable!() };
        let mut y = Vec::with_capacity(n * h);
        for s in 0..n {
            let off = (s * steps + steps - 1) * h;
            y.extend_from_slice(&t.data()[off..off + h]);
        }
        let out = Tensor::new(vec![n, h], y)?;
        let rg = self.rg(&[x]);
        Ok(self.push(
            out,
            Op::LastStep {
                x,
                dims: (n, steps, h),
            },
            rg,
        ))
    }

    /// Row-wise softmax of `[N, K]`, stabilized by max subtraction.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        check_rank("softmax", t, 2)?;
        let k = t.shape()[1];
        let mut y = Vec::with_capacity(t.len());
        for row in t.data().chunks(k) {
            y.extend(softmax_row(row));
        }
        let out = Tensor::new(t.shape().to_vec(), y)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Softmax(x), rg))
    }

    /// Mean negative log-probability of the true class.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        check_rank("cross_entropy", t, 2)?;
        let (n, k) = (t.shape()[0], t.shape()[1]);
        if labels.len() != n {
            return Err(shape_err("cross_entropy", t.shape(), &[labels.len()]));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Input(format!(
                "label {bad} out of range for {k} classes"
            )));
        }
        let mut probs = Vec::with_capacity(n * k);
        let mut loss = 0.0;
        for (row, &y) in t.data().chunks(k).zip(labels) {
            let (max, tail) = max_and_tail(row);
            let lse = max + tail.ln_1p();
            loss += (max - row[y]) + tail.ln_1p();
            probs.extend(row.iter().map(|v| (v - lse).exp()));
        }
        let out = Tensor::scalar(loss / n as f64);
        let rg = self.rg(&[logits]);
        Ok(self.push(
            out,
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                labels: labels.to_vec(),
            },
            rg,
        ))
    }

    /// `(1/2n) Σ ‖xᵢ − c_{yᵢ}‖²` with `centers` held constant (`[classes, d]`).
    pub fn center_loss(&mut self, x: Var, labels: &[usize], centers: &Tensor) -> Result<Var> {
        let t = self.value(x);
        check_rank("center_loss", t, 2)?;
        let (n, d) = (t.shape()[0], t.shape()[1]);
        if centers.shape().len() != 2 || centers.shape()[1] != d || labels.len() != n {
            return Err(shape_err("center_loss", t.shape(), centers.shape()));
        }
        let classes = centers.shape()[0];
        let mut diff = Vec::with_capacity(n * d);
        for (row, &y) in t.data().chunks(d).zip(labels) {
            if y >= classes {
                return Err(Error::Input(format!(
                    "label {y} out of range for {classes} centers"
                )));
            }
            let c = &centers.data()[y * d..(y + 1) * d];
            diff.extend(row.iter().zip(c).map(|(a, b)| a - b));
        }
        let loss = diff.iter().map(|v| v * v).sum::<f64>() / (2.0 * n as f64);
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::scalar(loss), Op::CenterLoss { x, diff }, rg))
    }

    fn accumulate(&mut self, v: Var, g: Vec<f64>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(g),
        }
    }

    /// Reverse pass from a scalar `loss`. Parameter gradients are added to the store.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::State(
                "backward already ran on this graph; run a new forward pass".into(),
            ));
        }
        if self.value(loss).len() != 1 {
            return Err(shape_err("backward", self.shape(loss), &[1]));
        }
        self.backward_done = true;
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else { continue };
            self.backprop_node(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn backprop_node(&mut self, i: usize, g: &[f64]) {
        let node = &self.nodes[i];
        // Collect (target, gradient) pairs first so `self` can be mutated after.
        let mut out: Vec<(Var, Vec<f64>)> = Vec::new();
        let val = |v: Var| self.nodes[v.0].value.data();
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => {
                let acc = self.store.grad_mut(*id);
                acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
            Op::Add(a, b) => {
                out.push((*a, g.to_vec()));
                out.push((*b, g.to_vec()));
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    out.push((*a, g.iter().zip(val(*b)).map(|(x, y)| x * y).collect()));
                }
                if needs(*b) {
                    out.push((*b, g.iter().zip(val(*a)).map(|(x, y)| x * y).collect()));
                }
            }
            Op::Scale(x, k) => out.push((*x, g.iter().map(|v| v * k).collect())),
            Op::Relu(x) => out.push((
                *x,
                g.iter()
                    .zip(val(*x))
                    .map(|(d, v)| if *v > 0.0 { *d } else { 0.0 })
                    .collect(),
            )),
            Op::Sigmoid(x) => out.push((
                *x,
                g.iter()
                    .zip(node.value.data())
                    .map(|(d, s)| d * s * (1.0 - s))
                    .collect(),
            )),
            Op::Tanh(x) => out.push((
                *x,
                g.iter()
                    .zip(node.value.data())
                    .map(|(d, t)| d * (1.0 - t * t))
                    .collect(),
            )),
            Op::Reshape(x) => out.push((*x, g.to_vec())),
            Op::Sum(x) => out.push((*x, vec![g[0]; self.nodes[x.0].value.len()])),
            Op::Linear { x, w, b } => {
                let tx = &self.nodes[x.0].value;
                let (n, din) = (tx.shape()[0], tx.shape()[1]);
                let dout = self.nodes[w.0].value.shape()[1];
                use crate::ops::gemm::gemm;
                if needs(*x) {
                    let mut dx = vec![0.0; n * din];
                    gemm(n, dout, din, g, false, val(*w), true, 0.0, &mut dx);
                    out.push((*x, dx));
                }
                if needs(*w) {
                    let mut dw = vec![0.0; din * dout];
                    gemm(din, n, dout, tx.data(), true, g, false, 0.0, &mut dw);
                    out.push((*w, dw));
                }
                if needs(*b) {
                    let mut db = vec![0.0; dout];
                    for row in g.chunks(dout) {
                        db.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                    }
                    out.push((*b, db));
                }
            }
            Op::Conv { x, w, b, geom } => {
                let (dx, dw, db) = geom.backward(val(*x), val(*w), g, needs(*x));
                if let Some(dx) = dx {
                    out.push((*x, dx));
                }
                out.push((*w, dw));
                out.push((*b, db));
            }
            Op::MaxPool { x, argmax } => {
                out.push((*x, pool::backward(argmax, g, self.nodes[x.0].value.len())));
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                dims: (n, c, s),
                cache,
            } => {
                let (dx, dgamma, dbeta) = norm::backward(cache, g, *n, *c, *s, val(*gamma));
                out.push((*x, dx));
                out.push((*gamma, dgamma));
                out.push((*beta, dbeta));
            }
            Op::ChannelsToSeq { x, dims: (n, c, len) } => {
                let mut dx = vec![0.0; n * c * len];
                for s in 0..*n {
                    for ch in 0..*c {
                        for step in 0..*len {
                            dx[(s * c + ch) * len + step] = g[(s * len + step) * c + ch];
                        }
                    }
                }
                out.push((*x, dx));
            }
            Op::Gru {
                x,
                w_ih,
                w_hh,
                b_ih,
                b_hh,
                dims,
                cache,
            } => {
                let grads = gru::backward(
                    *dims,
                    val(*x),
                    val(*w_ih),
                    val(*w_hh),
                    node.value.data(),
                    cache,
                    g,
                    needs(*x),
                );
                if let Some(dx) = grads.dx {
                    out.push((*x, dx));
                }
                out.push((*w_ih, grads.dw_ih));
                out.push((*w_hh, grads.dw_hh));
                out.push((*b_ih, grads.db_ih));
                out.push((*b_hh, grads.db_hh));
            }
            Op::LastStep { x, dims: (n, steps, h) } => {
                let mut dx = vec![0.0; n * steps * h];
                for s in 0..*n {
                    let off = (s * steps + steps - 1) * h;
                    dx[off..off + h].copy_from_slice(&g[s * h..(s + 1) * h]);
                }
                out.push((*x, dx));
            }
            Op::Softmax(x) => {
                let y = node.value.data();
                let k = node.value.shape()[1];
                let mut dx = vec![0.0; y.len()];
                for ((yr, gr), dr) in y.chunks(k).zip(g.chunks(k)).zip(dx.chunks_mut(k)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..k {
                        dr[j] = yr[j] * (gr[j] - dot);
                    }
                }
                out.push((*x, dx));
            }
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                labels,
            } => {
                let n = labels.len();
                let k = probs.len() / n.max(1);
                let scale = g[0] / n as f64;
                let mut dx: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (s, &y) in labels.iter().enumerate() {
                    dx[s * k + y] -= scale;
                }
                out.push((*logits, dx));
            }
            Op::CenterLoss { x, diff } => {
                let n = self.nodes[x.0].value.shape()[0] as f64;
                out.push((*x, diff.iter().map(|d| d * g[0] / n).collect()));
            }
        }
        for (v, grad) in out {
            self.accumulate(v, grad);
        }
    }
}

pub(crate) fn softmax_row(row: &[f64]) -> impl Iterator<Item = f64> + '_ {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
    row.iter().map(move |v| (v - max).exp() / z)
}

/// Row maximum and `Σ exp(v − max)` over the non-maximal entries, so that
/// `ln Σ exp(v) = max + ln_1p(tail)` keeps tiny tail probabilities accurate.
fn max_and_tail(row: &[f64]) -> (f64, f64) {
    let (arg, max) = row
        .iter()
        .cloned()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    let tail = row
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != arg)
        .map(|(_, v)| (v - max).exp())
        .sum();
    (max, tail)
}
