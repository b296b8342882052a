use alloc::vec::Vec;

use rand::seq::SliceRandom;

use super::forward::{random_cubes, training_loss, BoundParams};
use super::{GradientMode, ModelComponents, OffsetAnchor, PolicyMode, Schedule};
use crate::cost::Component;
use crate::diff::{Graph, Tensor};
use crate::error::{Error, Result};
use crate::synth::{stream_rng, Samples};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Epochs of joint training, or of the first phase under [`Schedule::TwoStage`].
    pub epochs: usize,
    /// Epochs of the policy-only phase; unused end to end.
    pub policy_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Step size of the policy head, which sees gradients in pixel units.
    pub policy_learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub mode: GradientMode,
    pub schedule: Schedule,
    pub policy: PolicyMode,
    pub anchor: OffsetAnchor,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            policy_epochs: 6,
            batch_size: 16,
            learning_rate: 0.2,
            policy_learning_rate: 0.05,
            momentum: 0.9,
            weight_decay: 1e-4,
            mode: GradientMode::FeatureGrad,
            schedule: Schedule::TwoStage,
            policy: PolicyMode::LEARNED,
            anchor: OffsetAnchor::Centered,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.learning_rate > 0.0 && self.policy_learning_rate > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.weight_decay < 0.0 {
            return bad("weight_decay must be non-negative");
        }
        Ok(())
    }
}

/// `base · (1 + cos(π·step/total)) / 2`.
pub fn cosine_lr(base: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return base;
    }
    let phase = step.min(total) as f64 / total as f64;
    base * 0.5 * (1.0 + libm::cos(core::f64::consts::PI * phase))
}

/// SGD with heavy-ball momentum and decoupled-from-bias weight decay.
#[derive(Clone, Debug)]
pub struct Sgd {
    momentum: f64,
    weight_decay: f64,
    velocity: Vec<Tensor>,
}

impl Sgd {
    pub fn new(params: &[&Tensor], momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    /// `v ← μv + g + λw` (λ only on rank ≥ 2 tensors), `w ← w − lr·v`.
    /// `None` gradients leave the parameter and its velocity untouched.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Option<Tensor>], lrs: &[f64]) {
        for (((w, g), v), &lr) in params.iter_mut().zip(grads).zip(&mut self.velocity).zip(lrs) {
            let Some(g) = g else { continue };
            let decay = if w.rank() >= 2 { self.weight_decay } else { 0.0 };
            for ((vi, gi), wi) in v.data_mut().iter_mut().zip(g.data()).zip(w.data_mut().iter_mut()) {
                *vi = self.momentum * *vi + gi + decay * *wi;
                *wi -= lr * *vi;
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    /// 0 for joint or first-phase training, 1 for the policy phase.
    pub phase: usize,
    /// Epoch index counted across phases.
    pub epoch: usize,
    /// Step size at the start of the epoch for the components being trained.
    pub learning_rate: f64,
    pub mean_loss: f64,
}

const SHUFFLE_STREAM: u64 = 0x1417_0003;
const TRAIN_CUBE_STREAM: u64 = 0x1417_0004;

struct Phase {
    index: usize,
    epochs: usize,
    policy: PolicyMode,
    trainable: fn(Component) -> bool,
}

impl Phase {
    fn trains_policy_only(&self) -> bool {
        Component::ALL.iter().all(|&c| (self.trainable)(c) == (c == Component::Policy))
    }
}

/// Trains `model` in place and reports one [`EpochStats`] per epoch to `observe`.
pub fn train<S: Samples + ?Sized>(
    model: &mut ModelComponents,
    data: &S,
    config: &TrainConfig,
    mut observe: impl FnMut(&EpochStats, &ModelComponents),
) -> Result<Vec<EpochStats>> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let phases = match config.schedule {
        Schedule::EndToEnd => alloc::vec![Phase {
            index: 0,
            epochs: config.epochs,
            policy: config.policy,
            trainable: |_| true,
        }],
        Schedule::TwoStage => alloc::vec![
            Phase {
                index: 0,
                epochs: config.epochs,
                policy: PolicyMode::RANDOM,
                trainable: |c| c != Component::Policy,
            },
            Phase {
                index: 1,
                epochs: if config.policy.is_random() { 0 } else { config.policy_epochs },
                policy: config.policy,
                trainable: |c| c == Component::Policy,
            },
        ],
    };
    let components: Vec<Component> = model.named_params().into_iter().map(|(_, c, _)| c).collect();
    let mut history = Vec::new();
    let mut epoch = 0;
    for phase in phases {
        let mut sgd = {
            let params: Vec<&Tensor> = model.named_params().into_iter().map(|(_, _, t)| t).collect();
            Sgd::new(&params, config.momentum, config.weight_decay)
        };
        let batches = data.len().div_ceil(config.batch_size);
        let total = phase.epochs * batches;
        let mut step = 0;
        for _ in 0..phase.epochs {
            let mut order: Vec<usize> = (0..data.len()).collect();
            order.shuffle(&mut stream_rng(config.seed, SHUFFLE_STREAM, epoch as u64));
            let lr = cosine_lr(1.0, step, total);
            let mut loss_sum = 0.0;
            for batch in order.chunks(config.batch_size) {
                let factor = cosine_lr(1.0, step, total);
                let (loss, grads) = batch_gradients(model, data, batch, config, &phase, epoch)?;
                if !loss.is_finite() {
                    return Err(Error::Divergence { epoch, step, loss });
                }
                loss_sum += loss * batch.len() as f64;
                let lrs: Vec<f64> = components
                    .iter()
                    .map(|&c| {
                        let base = if c == Component::Policy {
                            config.policy_learning_rate
                        } else {
                            config.learning_rate
                        };
                        base * factor
                    })
                    .collect();
                let mut params = model.params_mut();
                sgd.step(&mut params, &grads, &lrs);
                step += 1;
            }
            let stats = EpochStats {
                phase: phase.index,
                epoch,
                learning_rate: lr * if phase.trains_policy_only() {
                    config.policy_learning_rate
                } else {
                    config.learning_rate
                },
                mean_loss: loss_sum / data.len() as f64,
            };
            observe(&stats, model);
            history.push(stats);
            epoch += 1;
        }
    }
    Ok(history)
}

/// Mean loss and mean gradients over one mini-batch.
fn batch_gradients<S: Samples + ?Sized>(
    model: &ModelComponents,
    data: &S,
    batch: &[usize],
    config: &TrainConfig,
    phase: &Phase,
    epoch: usize,
) -> Result<(f64, Vec<Option<Tensor>>)> {
    let mut sum: Vec<Option<Tensor>> = Vec::new();
    let mut loss = 0.0;
    for &i in batch {
        let sample = data.get(i);
        let mut rng = stream_rng(
            config.seed,
            TRAIN_CUBE_STREAM,
            (epoch as u64) << 32 | i as u64,
        );
        let drawn = random_cubes(model.config.cube, model.config.video, model.config.max_cubes, &mut rng);
        let mut g = Graph::new();
        let b = BoundParams::bind(model, &mut g, phase.trainable);
        let fwd = training_loss(
            &mut g,
            &b,
            model,
            &sample.video,
            sample.label,
            config.mode,
            phase.policy,
            config.anchor,
            &drawn,
        )
        .map_err(|e| match e {
            Error::NonFinite { .. } => Error::Divergence {
                epoch,
                step: i,
                loss: f64::NAN,
            },
            other => other,
        })?;
        loss += g.value(fwd.loss).item();
        let mut grads = g.backward(fwd.loss)?;
        let per: Vec<Option<Tensor>> = b.all().into_iter().map(|id| grads.take(id)).collect();
        if sum.is_empty() {
            sum = per;
        } else {
            for (s, p) in sum.iter_mut().zip(per) {
                if let (Some(s), Some(p)) = (s.as_mut(), p) {
                    s.add_assign(&p);
                }
            }
        }
    }
    let n = batch.len() as f64;
    for t in sum.iter_mut().flatten() {
        t.scale_assign(1.0 / n);
    }
    Ok((loss / n, sum))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_schedule_endpoints() {
        assert_eq!(cosine_lr(0.1, 0, 10), 0.1);
        assert!((cosine_lr(0.1, 5, 10) - 0.05).abs() < 1e-15);
        assert!(cosine_lr(0.1, 10, 10).abs() < 1e-15);
    }

    #[test]
    fn sgd_momentum_update() {
        let mut w = Tensor::vector(alloc::vec![1.0]);
        let mut sgd = Sgd::new(&[&w], 0.9, 0.0);
        let g = Some(Tensor::vector(alloc::vec![1.0]));
        sgd.step(&mut [&mut w], core::slice::from_ref(&g), &[0.1]);
        assert!((w.data()[0] - 0.9).abs() < 1e-15);
        sgd.step(&mut [&mut w], &[g], &[0.1]);
        assert!((w.data()[0] - (0.9 - 0.19)).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_config() {
        let c = TrainConfig {
            momentum: 1.0,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
