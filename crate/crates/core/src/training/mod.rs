//! Batch construction and the training loop: cross-entropy plus center loss,
//! AMSGrad, dev-EER model selection.

mod batches;

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use replayscope_autodiff::{update_centers, AmsGrad, AmsGradConfig, Graph, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::SpectroTensor;
use crate::metrics::{compute_eer, compute_min_tdcf, ScoreEntry, ScoreSet, TdcfParams};
use crate::models::{bonafide_probability, row_batch, spectro_batch, ModelGraph};

pub use batches::{make_batches, Batch, BatchStream, Shaping};

/// One utterance's model input at full length.
#[derive(Debug, Clone, PartialEq)]
pub enum Example {
    Spectro(SpectroTensor),
    Wave(Vec<f64>),
    Vector(Vec<f64>),
}

impl Example {
    /// Batch-of-one tensor for whole-utterance evaluation.
    pub fn eval_tensor(&self) -> Result<Tensor> {
        match self {
            Example::Spectro(t) => spectro_batch(&[t]),
            Example::Wave(w) => row_batch(&[w], true),
            Example::Vector(v) => row_batch(&[v], false),
        }
    }
}

/// Labelled examples with the protocol tags the metrics need.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub examples: Vec<Example>,
    pub meta: Vec<ScoreEntry>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn push(&mut self, example: Example, meta: ScoreEntry) {
        self.examples.push(example);
        self.meta.push(meta);
    }

    /// Class indices, bona fide 0 and spoof 1.
    pub fn labels(&self) -> Result<Vec<usize>> {
        self.meta
            .iter()
            .map(|m| {
                m.label
                    .class_index()
                    .ok_or_else(|| Error::Input(format!("{} has no label", m.utterance_id)))
            })
            .collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            examples: indices.iter().map(|&i| self.examples[i].clone()).collect(),
            meta: indices.iter().map(|&i| self.meta[i].clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub center_loss_weight: f64,
    pub center_alpha: f64,
    /// Dev evaluation period in epochs.
    pub eval_every: usize,
    /// Stop once training accuracy has been 100% for this many consecutive
    /// epochs (0 disables).
    pub stop_after_perfect_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 100,
            lr: 1e-3,
            weight_decay: 1e-4,
            seed: 0,
            center_loss_weight: 0.01,
            center_alpha: 0.5,
            eval_every: 1,
            stop_after_perfect_epochs: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("train: {m}")));
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if self.epochs == 0 || self.eval_every == 0 {
            return bad("epochs and eval_every must be positive");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("lr and weight_decay must be finite and non-negative");
        }
        if !(self.center_loss_weight >= 0.0 && self.center_loss_weight.is_finite()) {
            return bad("center_loss_weight must be finite and non-negative");
        }
        if !(0.0..=1.0).contains(&self.center_alpha) {
            return bad("center_alpha must lie in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub loss: f64,
    pub cross_entropy: f64,
    pub center_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_accuracy: f64,
    pub dev_eer: Option<f64>,
    pub dev_min_tdcf: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    /// Elapsed seconds; not part of equality so runs can be compared.
    pub wall_clock_secs: f64,
}

impl PartialEq for TrainLog {
    fn eq(&self, other: &Self) -> bool {
        self.steps == other.steps && self.epochs == other.epochs && self.best_epoch == other.best_epoch
    }
}

/// Result of a training run; the model itself is updated in place.
#[derive(Debug)]
pub struct TrainOutcome {
    pub log: TrainLog,
    pub centers: Tensor,
    pub optimizer: AmsGrad,
}

/// Bona-fide probabilities for every example, one whole utterance at a time.
pub fn score_dataset(model: &mut ModelGraph, data: &Dataset) -> Result<Vec<f64>> {
    data.examples
        .iter()
        .map(|ex| {
            let (logits, _) = model.logits(ex.eval_tensor()?)?;
            bonafide_probability(logits.data())
        })
        .collect()
}

pub fn score_set(system_id: &str, model: &mut ModelGraph, data: &Dataset) -> Result<ScoreSet> {
    let scores = score_dataset(model, data)?;
    let entries = data
        .meta
        .iter()
        .zip(scores)
        .map(|(m, s)| ScoreEntry { score: s, ..m.clone() })
        .collect();
    ScoreSet::new(system_id, entries)
}

fn grad_norms(model: &ModelGraph) -> Vec<(String, f64)> {
    model
        .store
        .trainable_ids()
        .map(|id| {
            let n = model.store.grad(id).iter().map(|g| g * g).sum::<f64>().sqrt();
            (model.store.name(id).to_string(), n)
        })
        .collect()
}

/// Minimise `CE + lambda_c * center_loss` with AMSGrad. When `dev` is given
/// the parameters with the lowest dev EER are restored at the end.
pub fn train_model(
    model: &mut ModelGraph,
    train: &Dataset,
    dev: Option<&Dataset>,
    cfg: &TrainConfig,
    shaping: &Shaping,
    tdcf: &TdcfParams,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let labels = train.labels()?;
    if !(labels.contains(&0) && labels.contains(&1)) {
        return Err(Error::Input("training data needs both classes".into()));
    }
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AmsGrad::new(
        AmsGradConfig {
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
            ..AmsGradConfig::default()
        },
        &model.store,
    );
    let emb_dim = model.net().embedding_dim();
    let mut centers = Tensor::zeros(&[2, emb_dim]);
    let mut log = TrainLog::default();
    let mut best: Option<(f64, Vec<(String, Tensor)>)> = None;
    let mut last_norms: Vec<(String, f64)> = Vec::new();
    let mut perfect_run = 0;

    for epoch in 1..=cfg.epochs {
        let (mut correct, mut seen, mut loss_sum, mut batches) = (0usize, 0usize, 0.0, 0usize);
        for batch in make_batches(train, shaping, cfg.batch_size, &mut rng)? {
            let batch = batch?;
            model.store.zero_grads();
            let (net, store) = model.parts();
            let mut g = Graph::new(store);
            let x = g.input(batch.input);
            let out = net.forward(&mut g, x, true, &mut Vec::new())?;
            let ce = g.softmax_cross_entropy(out.logits, &batch.labels)?;
            let cl = g.center_loss(out.embedding, &batch.labels, &centers)?;
            let scaled = g.scale(cl, cfg.center_loss_weight);
            let loss = g.add(ce, scaled)?;
            let (ce_v, cl_v, loss_v) = (g.value(ce).item(), g.value(cl).item(), g.value(loss).item());
            if !loss_v.is_finite() {
                let worst = last_norms
                    .iter()
                    .max_by(|a, b| a.1.total_cmp(&b.1))
                    .map(|(n, v)| format!("{n} {v:.3e}"))
                    .unwrap_or_else(|| "none yet".into());
                return Err(Error::Numeric(format!(
                    "loss became {loss_v} at epoch {epoch}, step {} (lr {}, largest previous grad norm: {worst})",
                    opt.steps() + 1,
                    cfg.lr
                )));
            }
            for (row, &y) in g.value(out.logits).data().chunks(2).zip(&batch.labels) {
                let pred = usize::from(row[1] > row[0]);
                correct += usize::from(pred == y);
                seen += 1;
            }
            let embeddings = g.value(out.embedding).clone();
            g.backward(loss)?;
            drop(g);
            last_norms = grad_norms(model);
            opt.step(&mut model.store);
            update_centers(&mut centers, &embeddings, &batch.labels, cfg.center_alpha);
            loss_sum += loss_v;
            batches += 1;
            log.steps.push(StepRecord {
                step: opt.steps(),
                epoch,
                loss: loss_v,
                cross_entropy: ce_v,
                center_loss: cl_v,
            });
        }
        let train_accuracy = correct as f64 / seen.max(1) as f64;
        let mut record = EpochRecord {
            epoch,
            mean_loss: loss_sum / batches.max(1) as f64,
            train_accuracy,
            dev_eer: None,
            dev_min_tdcf: None,
        };
        if let Some(dev) = dev {
            if epoch % cfg.eval_every == 0 || epoch == cfg.epochs {
                let set = score_set("dev", model, dev)?;
                let eer = compute_eer(&set)?.eer;
                record.dev_eer = Some(eer);
                record.dev_min_tdcf = Some(compute_min_tdcf(&set, tdcf)?);
                if best.as_ref().map_or(true, |(b, _)| eer < *b) {
                    best = Some((eer, model.store.iter().map(|(n, t)| (n.to_string(), t.clone())).collect()));
                    log.best_epoch = epoch;
                }
            }
        }
        log::debug!(
            "epoch {epoch}: loss {:.4} acc {:.3} dev EER {:?}",
            record.mean_loss,
            record.train_accuracy,
            record.dev_eer
        );
        log.epochs.push(record);
        perfect_run = if train_accuracy == 1.0 { perfect_run + 1 } else { 0 };
        if cfg.stop_after_perfect_epochs > 0 && perfect_run >= cfg.stop_after_perfect_epochs {
            break;
        }
    }
    match best {
        Some((_, tensors)) => {
            for (name, t) in tensors {
                model.store.set_value(&name, t)?;
            }
        }
        None => log.best_epoch = log.epochs.len(),
    }
    log.wall_clock_secs = started.elapsed().as_secs_f64();
    Ok(TrainOutcome {
        log,
        centers,
        optimizer: opt,
    })
}
