//! Full-batch gradient descent on summed cross-entropy.
//!
//! Phase 1 uses a fixed learning rate until `L < log 2 / N`. Phase 2 keeps
//! following the cross-entropy gradient direction but with a step of fixed
//! length relative to ‖ζ‖. Once the loss is tiny the raw gradient vanishes
//! exponentially, so a fixed learning rate would stall; normalizing the step is
//! a reparametrization of time along the same descent direction.

use super::TrainError;
use crate::autodiff::Graph;
use crate::data::{argmax, LabeledDataset};
use crate::models::{flat_values, init_kaiming, mlp_graph, MlpSpec, ParameterVector};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierTrainConfig {
    pub lr: f64,
    pub max_epochs: usize,
    pub extra_epochs: usize,
    /// Phase-2 step length as a fraction of ‖ζ‖.
    #[serde(default = "default_relative_step")]
    pub relative_step: f64,
    pub seed: u64,
}

fn default_relative_step() -> f64 {
    1e-3
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.05,
            max_epochs: 100_000,
            extra_epochs: 100_000,
            relative_step: default_relative_step(),
            seed: 0,
        }
    }
}

impl ClassifierTrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.lr > 0.0) {
            return Err(TrainError::Config("classifier lr must be positive".into()));
        }
        if !(self.relative_step > 0.0) {
            return Err(TrainError::Config("relative_step must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierTrajectory {
    /// Cross-entropy before each update, then the final value.
    pub loss: Vec<f64>,
    /// Epoch at which the loss first fell below `log 2 / N`.
    pub threshold_epoch: Option<usize>,
}

/// Summed cross-entropy, the per-logit weights of its gradient direction and
/// the log of their scale.
///
/// The exact logit gradient `softmax − onehot` equals `e^{log_scale} · weights`.
/// Weights are computed in log space so they do not underflow.
fn ce_and_direction(logits: &Tensor, y: &[usize]) -> (f64, Tensor, f64) {
    let (n, c) = (logits.rows(), logits.cols());
    let mut loss = 0.0;
    let mut logp = vec![f64::NEG_INFINITY; n * c];
    for i in 0..n {
        let row = logits.row_slice(i);
        // -m_ic = Φ_c − Φ_y for c ≠ y
        let neg_m: Vec<f64> = (0..c)
            .filter(|&k| k != y[i])
            .map(|k| row[k] - row[y[i]])
            .collect();
        let top = neg_m.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = top + neg_m.iter().map(|v| (v - top).exp()).sum::<f64>().ln();
        // per-sample CE = log(1 + Σ e^{-m}) = softplus(lse)
        let softplus = if lse > 0.0 {
            lse + (-lse).exp().ln_1p()
        } else {
            lse.exp().ln_1p()
        };
        loss += softplus;
        for k in (0..c).filter(|&k| k != y[i]) {
            logp[i * c + k] = row[k] - row[y[i]] - softplus;
        }
    }
    let top = logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut w = vec![0.0; n * c];
    for i in 0..n {
        let mut own = 0.0;
        for k in (0..c).filter(|&k| k != y[i]) {
            let p = (logp[i * c + k] - top).exp();
            w[i * c + k] = p;
            own += p;
        }
        w[i * c + y[i]] = -own;
    }
    (loss, Tensor::from_parts(n, c, w), top)
}

/// CE loss, the CE gradient direction in ζ, and the factor turning it into the exact gradient.
fn loss_and_gradient(
    spec: &MlpSpec,
    zeta: &ParameterVector,
    x: &Tensor,
    y: &[usize],
) -> Result<(f64, Vec<f64>, f64), TrainError> {
    let mut g = Graph::new();
    let leaves = zeta.leaves(&mut g);
    let xv = g.constant(x.clone());
    let logits = mlp_graph(&mut g, spec, &leaves, xv)?;
    let (loss, w, log_scale) = ce_and_direction(g.value(logits)?, y);
    let wv = g.constant(w);
    let prod = g.mul(wv, logits)?;
    let s = g.sum(prod);
    let grads = g.gradient(s, &leaves)?;
    Ok((loss, flat_values(&g, &grads)?, log_scale.exp()))
}

pub fn training_accuracy(
    spec: &MlpSpec,
    zeta: &ParameterVector,
    d: &LabeledDataset,
) -> Result<f64, TrainError> {
    let logits = crate::models::classifier_forward(spec, zeta, &d.x)?;
    let hits = (0..d.len())
        .filter(|&i| argmax(logits.row_slice(i)) == d.y[i])
        .count();
    Ok(hits as f64 / d.len() as f64)
}

/// Trains from Kaiming initialization with `config.seed`.
pub fn train_classifier(
    dataset: &LabeledDataset,
    spec: &MlpSpec,
    config: &ClassifierTrainConfig,
) -> Result<(ParameterVector, ClassifierTrajectory), TrainError> {
    train_classifier_from(dataset, spec, config, init_kaiming(spec, config.seed))
}

pub fn train_classifier_from(
    dataset: &LabeledDataset,
    spec: &MlpSpec,
    config: &ClassifierTrainConfig,
    init: ParameterVector,
) -> Result<(ParameterVector, ClassifierTrajectory), TrainError> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(TrainError::Config("empty dataset".into()));
    }
    let threshold = 2f64.ln() / dataset.len() as f64;
    let mut zeta = init;
    let mut traj = ClassifierTrajectory {
        loss: Vec::new(),
        threshold_epoch: None,
    };
    let mut epoch = 0usize;
    loop {
        let (loss, dir, scale) = loss_and_gradient(spec, &zeta, &dataset.x, &dataset.y)?;
        if !loss.is_finite() || dir.iter().any(|v| !v.is_finite()) {
            return Err(TrainError::NonFinite {
                step: epoch as u64,
                what: "classifier loss".into(),
            });
        }
        traj.loss.push(loss);
        if traj.threshold_epoch.is_none() && loss < threshold {
            traj.threshold_epoch = Some(epoch);
        }
        match traj.threshold_epoch {
            None => {
                if epoch >= config.max_epochs {
                    return Err(TrainError::NotConverged {
                        epochs: epoch,
                        last_loss: loss,
                        trajectory: traj.loss,
                    });
                }
                let step = config.lr * scale;
                for (z, d) in zeta.values_mut().iter_mut().zip(&dir) {
                    *z -= step * d;
                }
            }
            Some(hit) => {
                if epoch - hit >= config.extra_epochs {
                    break;
                }
                let gn = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
                if gn == 0.0 {
                    break;
                }
                let step = config.relative_step * zeta.norm() / gn;
                for (z, d) in zeta.values_mut().iter_mut().zip(&dir) {
                    *z -= step * d;
                }
            }
        }
        epoch += 1;
    }
    Ok((zeta, traj))
}
