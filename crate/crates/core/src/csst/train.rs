use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor};
use crate::error::{param_err, AdisError, Result};

use super::copf::{CopfInputs, CopfModel};

const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    /// SGD with heavy-ball momentum.
    Sgd,
    /// Adam with bias correction; `momentum` is β₁.
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub optimizer: Optimizer,
    pub lr: f64,
    pub momentum: f64,
    /// Adam's second-moment decay.
    pub beta2: f64,
    /// Rescale the gradient when its global L2 norm exceeds this; 0 disables.
    pub clip_norm: f64,
    /// Seeds the sample order.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            optimizer: Optimizer::Adam,
            lr: 1e-3,
            momentum: 0.9,
            beta2: 0.999,
            clip_norm: 1.0,
            seed: 0,
        }
    }
}

/// Ground truth paired with its prepared measurement.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub truth: Tensor,
    pub inputs: CopfInputs,
}

/// Trains `model` in place on mean-squared error and returns the loss at
/// every step, measured before that step's update.
pub fn train_toy(model: &mut CopfModel, data: &[TrainSample], cfg: &TrainConfig) -> Result<Vec<f64>> {
    if data.is_empty() {
        return param_err("training set is empty");
    }
    if !(cfg.lr >= 0.0)
        || !(0.0..1.0).contains(&cfg.momentum)
        || !(0.0..1.0).contains(&cfg.beta2)
        || !(cfg.clip_norm >= 0.0)
    {
        return param_err("lr >= 0, momentum and beta2 in [0, 1) and clip_norm >= 0 required");
    }
    for s in data {
        if s.truth.shape() != s.inputs.x0.shape() {
            return param_err(format!(
                "truth {:?} does not match the estimate {:?}",
                s.truth.shape(),
                s.inputs.x0.shape()
            ));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let zeros = || -> Vec<Vec<f64>> { model.store().tensors().iter().map(|t| vec![0.0; t.numel()]).collect() };
    let (mut first, mut second) = (zeros(), zeros());
    let mut trace = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        if step % data.len() == 0 {
            order.shuffle(&mut rng);
        }
        let sample = &data[order[step % data.len()]];
        let mut g = Graph::new();
        let b = model.store().bind(&mut g);
        let x = model.forward(&mut g, &b, &sample.inputs)?;
        let t = g.constant(sample.truth.clone());
        let loss = g.mse(x, t)?;
        let lv = g.value(loss).data()[0];
        if !lv.is_finite() {
            return Err(AdisError::Numeric {
                location: format!("training step {step}"),
            });
        }
        if let Err(AdisError::Numeric { location }) = g.check_finite() {
            return Err(AdisError::Numeric {
                location: format!("training step {step}, {location}"),
            });
        }
        trace.push(lv);

        let grads = g.backward(loss)?;
        let gs: Vec<Tensor> = b.vars().iter().map(|&v| grads.wrt(v)).collect();
        let norm = gs.iter().flat_map(|t| t.data()).map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(AdisError::Numeric {
                location: format!("gradient at training step {step}"),
            });
        }
        let scale = if cfg.clip_norm > 0.0 && norm > cfg.clip_norm {
            cfg.clip_norm / norm
        } else {
            1.0
        };
        let store = model.store_mut();
        let ids: Vec<_> = store.ids().collect();
        let t = (step + 1) as i32;
        let (c1, c2) = (1.0 - cfg.momentum.powi(t), 1.0 - cfg.beta2.powi(t));
        for (((id, gt), m1), m2) in ids.into_iter().zip(&gs).zip(&mut first).zip(&mut second) {
            let p = store.get_mut(id).data_mut();
            for (((w, d), m), v) in p.iter_mut().zip(gt.data()).zip(m1.iter_mut()).zip(m2.iter_mut()) {
                let d = scale * d;
                match cfg.optimizer {
                    Optimizer::Sgd => {
                        *m = cfg.momentum * *m + d;
                        *w -= cfg.lr * *m;
                    }
                    Optimizer::Adam => {
                        *m = cfg.momentum * *m + (1.0 - cfg.momentum) * d;
                        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * d * d;
                        *w -= cfg.lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
                    }
                }
            }
        }
    }
    Ok(trace)
}
