use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmsGradConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AmsGradConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// AMSGrad with decoupled weight decay.
///
/// ```text
/// m ← β₁m + (1−β₁)g
/// v ← β₂v + (1−β₂)g²
/// v̂ ← max(v̂, v)
/// θ ← θ − lr·m/(√v̂ + ε) − lr·λ·θ
/// ```
#[derive(Debug, Clone)]
pub struct AmsGrad {
    pub config: AmsGradConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    vhat: Vec<Vec<f64>>,
}

impl AmsGrad {
    pub fn new(config: AmsGradConfig, store: &ParamStore) -> Self {
        let zeros = |_| Vec::new();
        let mut s = Self {
            config,
            step: 0,
            m: (0..store.len()).map(zeros).collect(),
            v: (0..store.len()).map(zeros).collect(),
            vhat: (0..store.len()).map(zeros).collect(),
        };
        for id in store.trainable_ids() {
            let n = store.value(id).len();
            s.m[id.index()] = vec![0.0; n];
            s.v[id.index()] = vec![0.0; n];
            s.vhat[id.index()] = vec![0.0; n];
        }
        s
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore) {
        let AmsGradConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let ids: Vec<_> = store.trainable_ids().collect();
        for id in ids {
            let k = id.index();
            let (theta, grad) = store.value_and_grad_mut(id);
            let (m, v, vh) = (&mut self.m[k], &mut self.v[k], &mut self.vhat[k]);
            for (i, p) in theta.data_mut().iter_mut().enumerate() {
                let g = grad[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                vh[i] = vh[i].max(v[i]);
                *p = *p - lr * m[i] / (vh[i].sqrt() + eps) - lr * weight_decay * *p;
            }
        }
        self.step += 1;
    }

    /// Running-max second moment of one parameter (exposed for monitoring).
    pub fn vhat(&self, index: usize) -> &[f64] {
        &self.vhat[index]
    }

    /// Moments as named tensors for checkpointing.
    pub fn export(&self, store: &ParamStore) -> Vec<(String, Tensor)> {
        let mut out = vec![("opt.step".to_string(), Tensor::scalar(self.step as f64))];
        for id in store.trainable_ids() {
            let k = id.index();
            let shape = store.value(id).shape();
            let name = store.name(id);
            for (tag, buf) in [("m", &self.m[k]), ("v", &self.v[k]), ("vhat", &self.vhat[k])] {
                let t = Tensor::new(shape.to_vec(), buf.clone()).expect("moment shape");
                out.push((format!("opt.{tag}.{name}"), t));
            }
        }
        out
    }

    /// Restore moments written by [`Self::export`]; missing entries stay zero.
    pub fn import(&mut self, store: &ParamStore, tensors: &[(String, Tensor)]) {
        for (name, t) in tensors {
            if name == "opt.step" {
                self.step = t.item() as u64;
                continue;
            }
            let Some(rest) = name.strip_prefix("opt.") else { continue };
            let Some((tag, pname)) = rest.split_once('.') else { continue };
            let Some(id) = store.id(pname) else { continue };
            let buf = match tag {
                "m" => &mut self.m[id.index()],
                "v" => &mut self.v[id.index()],
                "vhat" => &mut self.vhat[id.index()],
                _ => continue,
            };
            if buf.len() == t.len() {
                buf.copy_from_slice(t.data());
            }
        }
    }
}
