use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{Model, ParamSet, Params};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// SGD with momentum and L2 weight decay folded into the momentum buffer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            learning_rate: 1e-4,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 32,
            epochs: 20,
            seed: 0,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("learning rate {} must be >= 0", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} must be in [0, 1)", self.momentum)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!("weight decay {} must be >= 0", self.weight_decay)));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Momentum buffers, one per parameter tensor, plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumState {
    pub velocity: ParamSet,
    pub steps: usize,
}

impl MomentumState {
    pub fn new(model: &Model) -> Self {
        MomentumState {
            velocity: model.params.iter().map(|p| p.as_ref().map(Params::zeros_like)).collect(),
            steps: 0,
        }
    }
}

/// Mean cross-entropy over `batch` and the mean gradient.
///
/// Per-sample gradients are computed in parallel and summed in batch order,
/// so the result does not depend on thread scheduling.
pub fn batch_gradients(model: &Model, batch: &[(Tensor, usize)]) -> Result<(f64, ParamSet)> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let per_sample: Vec<(f64, ParamSet)> = batch
        .par_iter()
        .map(|(x, y)| model.loss_and_gradients(x, *y))
        .collect::<Result<_>>()?;
    let scale = 1.0 / batch.len() as f64;
    let mut iter = per_sample.into_iter();
    let (mut loss, mut total) = iter.next().expect("non-empty");
    for (l, g) in iter {
        loss += l;
        for (acc, g) in total.iter_mut().zip(g) {
            if let (Some(acc), Some(g)) = (acc.as_mut(), g) {
                add_assign(acc.weight.data_mut(), g.weight.data());
                add_assign(acc.bias.data_mut(), g.bias.data());
            }
        }
    }
    for p in total.iter_mut().flatten() {
        p.weight.data_mut().iter_mut().for_each(|v| *v *= scale);
        p.bias.data_mut().iter_mut().for_each(|v| *v *= scale);
    }
    Ok((loss * scale, total))
}

fn add_assign(acc: &mut [f64], x: &[f64]) {
    for (a, b) in acc.iter_mut().zip(x) {
        *a += b;
    }
}

/// One SGD step: `v <- mu * v + (g + lambda * w)`, `w <- w - lr * v`.
///
/// Returns the mean loss on the pre-update weights. Nothing is modified when
/// the loss or any gradient is non-finite.
pub fn train_step(
    model: &mut Model,
    batch: &[(Tensor, usize)],
    cfg: &SgdConfig,
    state: &mut MomentumState,
) -> Result<f64> {
    cfg.validate()?;
    let step = state.steps;
    let (loss, grads) = batch_gradients(model, batch)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            what: "loss",
            layer: None,
            batch: step,
        });
    }
    for (i, g) in grads.iter().enumerate() {
        if let Some(g) = g {
            if !g.weight.is_finite() || !g.bias.is_finite() {
                return Err(Error::NonFinite {
                    what: "gradient",
                    layer: Some(i),
                    batch: step,
                });
            }
        }
    }
    for ((param, vel), g) in model.params.iter_mut().zip(state.velocity.iter_mut()).zip(grads) {
        if let (Some(p), Some(v), Some(g)) = (param.as_mut(), vel.as_mut(), g) {
            sgd_update(p.weight.data_mut(), v.weight.data_mut(), g.weight.data(), cfg);
            sgd_update(p.bias.data_mut(), v.bias.data_mut(), g.bias.data(), cfg);
        }
    }
    state.steps += 1;
    Ok(loss)
}

/// In-place momentum SGD on one flat parameter array.
pub fn sgd_update(w: &mut [f64], v: &mut [f64], g: &[f64], cfg: &SgdConfig) {
    for ((w, v), g) in w.iter_mut().zip(v.iter_mut()).zip(g) {
        *v = cfg.momentum * *v + (g + cfg.weight_decay * *w);
        *w -= cfg.learning_rate * *v;
    }
}

/// Per-epoch summary reported by [`train`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub accuracy: f64,
}

/// Runs `cfg.epochs` epochs of shuffled minibatch SGD.
///
/// With `balance_classes`, each epoch draws the same number of samples from
/// every class present (minority classes are resampled with replacement)
/// instead of one pass over the data.
pub fn train(
    model: &mut Model,
    data: &[(Tensor, usize)],
    cfg: &SgdConfig,
    balance_classes: bool,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<Vec<EpochStats>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Config("no training samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = MomentumState::new(model);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); model.spec.class_count];
    for (i, (_, y)) in data.iter().enumerate() {
        by_class
            .get_mut(*y)
            .ok_or_else(|| Error::OutOfRange(format!("label {y}")))?
            .push(i);
    }
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = if balance_classes {
            let per_class = by_class.iter().map(Vec::len).max().unwrap_or(0);
            by_class
                .iter()
                .filter(|idx| !idx.is_empty())
                .flat_map(|idx| {
                    let mut picks = idx.clone();
                    while picks.len() < per_class {
                        picks.push(idx[rng.gen_range(0..idx.len())]);
                    }
                    picks
                })
                .collect()
        } else {
            (0..data.len()).collect()
        };
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(Tensor, usize)> = chunk.iter().map(|&i| data[i].clone()).collect();
            loss_sum += train_step(model, &batch, cfg, &mut state)?;
            batches += 1;
        }
        let correct = data
            .par_iter()
            .map(|(x, y)| model.forward(x, false).map(|p| (p.logits.argmax() == *y) as usize))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .sum::<usize>();
        let stats = EpochStats {
            epoch,
            mean_loss: loss_sum / batches as f64,
            accuracy: correct as f64 / data.len() as f64,
        };
        on_epoch(&stats);
        history.push(stats);
    }
    Ok(history)
}

/// Mean cross-entropy of `batch` under `model` without gradients.
pub fn batch_loss(model: &Model, batch: &[(Tensor, usize)]) -> Result<f64> {
    let mut total = 0.0;
    for (x, y) in batch {
        let pass = model.forward(x, false)?;
        total += -pass.probabilities.data()[*y].max(f64::MIN_POSITIVE).ln();
    }
    Ok(total / batch.len() as f64)
}

/// Compares analytic gradients against central finite differences.
pub fn grad_check(model: &Model, batch: &[(Tensor, usize)], epsilon: f64) -> Result<f64> {
    grad_check_with(model, batch, epsilon, |m, b| batch_gradients(m, b).map(|(_, g)| g))
}

/// Parameters probed per tensor; larger tensors are sampled.
const GRAD_CHECK_SAMPLES: usize = 48;

/// [`grad_check`] against an arbitrary gradient source.
///
/// Returns the max over probed parameters of
/// `|analytic - fd| / max(|analytic|, |fd|, 1e-8)`.
pub fn grad_check_with(
    model: &Model,
    batch: &[(Tensor, usize)],
    epsilon: f64,
    analytic: impl Fn(&Model, &[(Tensor, usize)]) -> Result<ParamSet>,
) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::Config(format!("epsilon {epsilon} must be > 0")));
    }
    let grads = analytic(model, batch)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x9e37_79b9);
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for layer in 0..model.params.len() {
        let Some(g) = grads[layer].as_ref() else {
            continue;
        };
        for is_bias in [false, true] {
            let n = {
                let p = model.params[layer].as_ref().expect("params");
                if is_bias {
                    p.bias.len()
                } else {
                    p.weight.len()
                }
            };
            let indices: Vec<usize> = if n <= GRAD_CHECK_SAMPLES {
                (0..n).collect()
            } else {
                rand::seq::index::sample(&mut rng, n, GRAD_CHECK_SAMPLES).into_vec()
            };
            for idx in indices {
                let original = *param_slot(&mut probe, layer, is_bias, idx);
                *param_slot(&mut probe, layer, is_bias, idx) = original + epsilon;
                let plus = batch_loss(&probe, batch)?;
                *param_slot(&mut probe, layer, is_bias, idx) = original - epsilon;
                let minus = batch_loss(&probe, batch)?;
                *param_slot(&mut probe, layer, is_bias, idx) = original;
                let fd = (plus - minus) / (2.0 * epsilon);
                let a = if is_bias {
                    g.bias.data()[idx]
                } else {
                    g.weight.data()[idx]
                };
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
                worst = worst.max(rel);
            }
        }
    }
    Ok(worst)
}

fn param_slot(model: &mut Model, layer: usize, is_bias: bool, idx: usize) -> &mut f64 {
    let p = model.params[layer].as_mut().expect("params");
    if is_bias {
        &mut p.bias.data_mut()[idx]
    } else {
        &mut p.weight.data_mut()[idx]
    }
}
