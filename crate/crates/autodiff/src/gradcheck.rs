//! Central finite-difference gradient checking.
//!
//! The numerical side only ever calls forward passes, so it is independent of
//! every backward rule it is used to verify.

use rand::{Rng, SeedableRng};

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub step: f64,
    /// Relative errors use `max(|analytic|, |numeric|, floor)` as denominator.
    pub floor: f64,
    /// Coordinates probed per tensor; larger tensors are subsampled.
    pub max_coords: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            floor: 1e-6,
            max_coords: 40,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub coords_checked: usize,
}

/// Builds the function under test from its inputs. The returned variable may
/// have any shape; non-scalar outputs are reduced with a fixed random
/// projection so every output element contributes.
pub trait Build: Fn(&mut Graph<'_>, &[Var]) -> Result<Var> {}
impl<F: Fn(&mut Graph<'_>, &[Var]) -> Result<Var>> Build for F {}

fn scalar_loss(
    store: &mut ParamStore,
    inputs: &[Tensor],
    build: &impl Build,
    proj_seed: u64,
) -> Result<f64> {
    let mut g = Graph::new(store);
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = build(&mut g, &vars)?;
    Ok(project(g.value(out), proj_seed))
}

fn projection(len: usize, seed: u64) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn project(t: &Tensor, seed: u64) -> f64 {
    let p = projection(t.len(), seed);
    t.data().iter().zip(&p).map(|(a, b)| a * b).sum()
}

/// Compare analytic gradients of every input and every trainable parameter
/// against central differences.
pub fn check(
    store: &mut ParamStore,
    inputs: &[Tensor],
    build: impl Build,
    cfg: GradCheckConfig,
) -> Result<GradCheckReport> {
    let proj_seed = cfg.seed ^ 0x9e37_79b9;
    store.zero_grads();
    let (input_grads, param_grads) = {
        let mut g = Graph::new(store);
        let vars: Vec<Var> = inputs.iter().map(|t| g.input_with_grad(t.clone())).collect();
        let out = build(&mut g, &vars)?;
        let shape = g.shape(out).to_vec();
        let loss = if g.value(out).len() == 1 {
            out
        } else {
            let p = Tensor::new(shape, projection(g.value(out).len(), proj_seed))?;
            let pv = g.input(p);
            let prod = g.mul(out, pv)?;
            g.sum(prod)
        };
        g.backward(loss)?;
        let ig: Vec<Vec<f64>> = vars
            .iter()
            .zip(inputs)
            .map(|(v, t)| g.grad(*v).map(<[f64]>::to_vec).unwrap_or(vec![0.0; t.len()]))
            .collect();
        drop(g);
        let pg: Vec<(ParamId, Vec<f64>)> = store
            .trainable_ids()
            .map(|id| (id, store.grad(id).to_vec()))
            .collect();
        (ig, pg)
    };

    let mut rng = rand::rngs::StdRng::seed_from_u64(cfg.seed);
    let mut report = GradCheckReport::default();
    let mut record = |analytic: f64, numeric: f64| {
        let denom = analytic.abs().max(numeric.abs()).max(cfg.floor);
        let rel = (analytic - numeric).abs() / denom;
        report.max_rel_err = report.max_rel_err.max(rel);
        report.coords_checked += 1;
    };

    let mut inputs = inputs.to_vec();
    for k in 0..inputs.len() {
        for i in pick(inputs[k].len(), cfg.max_coords, &mut rng) {
            let orig = inputs[k].data()[i];
            inputs[k].data_mut()[i] = orig + cfg.step;
            let plus = scalar_loss(store, &inputs, &build, proj_seed)?;
            inputs[k].data_mut()[i] = orig - cfg.step;
            let minus = scalar_loss(store, &inputs, &build, proj_seed)?;
            inputs[k].data_mut()[i] = orig;
            record(input_grads[k][i], (plus - minus) / (2.0 * cfg.step));
        }
    }
    for (id, grad) in &param_grads {
        for i in pick(grad.len(), cfg.max_coords, &mut rng) {
            let orig = store.value(*id).data()[i];
            store.value_mut(*id).data_mut()[i] = orig + cfg.step;
            let plus = scalar_loss(store, &inputs, &build, proj_seed)?;
            store.value_mut(*id).data_mut()[i] = orig - cfg.step;
            let minus = scalar_loss(store, &inputs, &build, proj_seed)?;
            store.value_mut(*id).data_mut()[i] = orig;
            record(grad[i], (plus - minus) / (2.0 * cfg.step));
        }
    }
    Ok(report)
}

fn pick(len: usize, max: usize, rng: &mut impl Rng) -> Vec<usize> {
    if len <= max {
        (0..len).collect()
    } else {
        rand::seq::index::sample(rng, len, max).into_vec()
    }
}

/// Layers covered by [`run_layer_suite`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv2d,
    Conv1d,
    Dense,
    Gru,
    MaxPool2d,
    MaxPool1d,
    BatchNormTrain,
    BatchNormEval,
    Activations,
    Softmax,
    SoftmaxCrossEntropy,
    CenterLoss,
}

impl LayerKind {
    pub const ALL: [LayerKind; 12] = [
        LayerKind::Conv2d,
        LayerKind::Conv1d,
        LayerKind::Dense,
        LayerKind::Gru,
        LayerKind::MaxPool2d,
        LayerKind::MaxPool1d,
        LayerKind::BatchNormTrain,
        LayerKind::BatchNormEval,
        LayerKind::Activations,
        LayerKind::Softmax,
        LayerKind::SoftmaxCrossEntropy,
        LayerKind::CenterLoss,
    ];
}

fn rand_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Run `shapes` randomized gradient checks of one layer kind; returns the
/// worst relative error seen and the number of coordinates probed.
pub fn run_layer_suite(kind: LayerKind, shapes: usize, seed: u64) -> Result<GradCheckReport> {
    use crate::layers::{BatchNorm, Conv1d, Conv2d, Dense, Gru, Padding};

    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    let mut total = GradCheckReport::default();
    for case in 0..shapes {
        let mut store = ParamStore::new();
        let cfg = GradCheckConfig {
            seed: seed.wrapping_add(case as u64),
            ..GradCheckConfig::default()
        };
        let n = rng.gen_range(1..=3);
        let report = match kind {
            LayerKind::Conv2d => {
                let (cin, cout) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
                let kernel = (rng.gen_range(1..=3), rng.gen_range(1..=5));
                let stride = (rng.gen_range(1..=2), rng.gen_range(1..=4));
                let (h, w) = (rng.gen_range(3..=7), rng.gen_range(5..=11));
                let padding = if rng.gen_bool(0.5) { Padding::Same } else { Padding::Valid };
                let conv = Conv2d::new(&mut store, "c", cin, cout, kernel, stride, padding, &mut rng);
                let x = rand_tensor(&[n, cin, h, w], &mut rng);
                check(&mut store, &[x], move |g: &mut Graph<'_>, v: &[Var]| conv.forward(g, v[0]), cfg)?
            }
            LayerKind::Conv1d => {
                let (cin, cout) = (rng.gen_range(1..=3), rng.gen_range(1..=4));
                let kernel = rng.gen_range(1..=3);
                let stride = rng.gen_range(1..=3);
                let len = rng.gen_range(4..=15);
                let padding = if rng.gen_bool(0.5) { Padding::Same } else { Padding::Valid };
                let conv = Conv1d::new(&mut store, "c", cin, cout, kernel, stride, padding, &mut rng);
                let x = rand_tensor(&[n, cin, len], &mut rng);
                check(&mut store, &[x], move |g: &mut Graph<'_>, v: &[Var]| conv.forward(g, v[0]), cfg)?
            }
            LayerKind::Dense => {
                let (din, dout) = (rng.gen_range(1..=8), rng.gen_range(1..=6));
                let dense = Dense::new(&mut store, "d", din, dout, &mut rng);
                let x = rand_tensor(&[n, din], &mut rng);
                check(&mut store, &[x], move |g: &mut Graph<'_>, v: &[Var]| dense.forward(g, v[0]), cfg)?
            }
            LayerKind::Gru => {
                let (input, hidden) = (rng.gen_range(1..=4), rng.gen_range(1..=5));
                let steps = rng.gen_range(1..=6);
                let gru = Gru::new(&mut store, "g", input, hidden, &mut rng);
                // non-zero biases so every bias path is exercised
                for id in [gru.params.b_ih, gru.params.b_hh] {
                    for v in store.value_mut(id).data_mut() {
                        *v = rng.gen_range(-0.5..0.5);
                    }
                }
                let x = rand_tensor(&[n, steps, input], &mut rng);
                let full_sequence = rng.gen_bool(0.5);
                check(
                    &mut store,
                    &[x],
                    move |g: &mut Graph<'_>, v: &[Var]| {
                        if full_sequence {
                            g.gru(v[0], gru.params)
                        } else {
                            gru.final_state(g, v[0])
                        }
                    },
                    cfg,
                )?
            }
            LayerKind::MaxPool2d => {
                let c = rng.gen_range(1..=3);
                let kernel = (rng.gen_range(1..=3), rng.gen_range(1..=4));
                let stride = (rng.gen_range(1..=3), rng.gen_range(1..=4));
                let (h, w) = (rng.gen_range(3..=7), rng.gen_range(4..=10));
                let x = rand_tensor(&[n, c, h, w], &mut rng);
                check(
                    &mut store,
                    &[x],
                    move |g: &mut Graph<'_>, v: &[Var]| g.max_pool2d(v[0], kernel, stride),
                    cfg,
                )?
            }
            LayerKind::MaxPool1d => {
                let c = rng.gen_range(1..=3);
                let kernel = rng.gen_range(1..=4);
                let len = rng.gen_range(4..=16);
                let x = rand_tensor(&[n, c, len], &mut rng);
                check(
                    &mut store,
                    &[x],
                    move |g: &mut Graph<'_>, v: &[Var]| g.max_pool1d(v[0], kernel, kernel),
                    cfg,
                )?
            }
            LayerKind::BatchNormTrain | LayerKind::BatchNormEval => {
                let training = kind == LayerKind::BatchNormTrain;
                let c = rng.gen_range(1..=4);
                let spatial = rng.gen_range(1..=5);
                let n = n + 1;
                let bn = BatchNorm::new(&mut store, "bn", c, 0.9);
                for id in [bn.params.gamma, bn.params.beta, bn.params.running_mean] {
                    for v in store.value_mut(id).data_mut() {
                        *v += rng.gen_range(-0.5..0.5);
                    }
                }
                for v in store.value_mut(bn.params.running_var).data_mut() {
                    *v = rng.gen_range(0.5..2.0);
                }
                let x = rand_tensor(&[n, c, spatial], &mut rng);
                check(
                    &mut store,
                    &[x],
                    move |g: &mut Graph<'_>, v: &[Var]| bn.forward(g, v[0], training),
                    cfg,
                )?
            }
            LayerKind::Activations => {
                let len = rng.gen_range(1..=12);
                let x = rand_tensor(&[n, len], &mut rng);
                let y = rand_tensor(&[n, len], &mut rng);
                check(
                    &mut store,
                    &[x, y],
                    |g: &mut Graph<'_>, v: &[Var]| {
                        let a = g.relu(v[0]);
                        let b = g.sigmoid(v[1]);
                        let c = g.tanh(v[0]);
                        let ab = g.mul(a, b)?;
                        let s = g.add(ab, c)?;
                        Ok(g.scale(s, 1.5))
                    },
                    cfg,
                )?
            }
            LayerKind::Softmax => {
                let k = rng.gen_range(2..=5);
                let x = rand_tensor(&[n, k], &mut rng);
                check(&mut store, &[x], |g: &mut Graph<'_>, v: &[Var]| g.softmax(v[0]), cfg)?
            }
            LayerKind::SoftmaxCrossEntropy => {
                let k = rng.gen_range(2..=4);
                let x = rand_tensor(&[n, k], &mut rng);
                let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
                check(
                    &mut store,
                    &[x],
                    move |g: &mut Graph<'_>, v: &[Var]| g.softmax_cross_entropy(v[0], &labels),
                    cfg,
                )?
            }
            LayerKind::CenterLoss => {
                let d = rng.gen_range(1..=6);
                let x = rand_tensor(&[n, d], &mut rng);
                let centers = rand_tensor(&[2, d], &mut rng);
                let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();
                check(
                    &mut store,
                    &[x],
                    move |g: &mut Graph<'_>, v: &[Var]| g.center_loss(v[0], &labels, &centers),
                    cfg,
                )?
            }
        };
        total.max_rel_err = total.max_rel_err.max(report.max_rel_err);
        total.coords_checked += report.coords_checked;
    }
    Ok(total)
}
