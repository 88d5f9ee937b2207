//! Deterministic Adam training loop with multi-path lagging sampling.
//!
//! Follows the inverse-square-root schedule with linear warm-up; gradient
//! clipping is disabled (clip-norm 0). All stochasticity flows through one
//! seeded ChaCha stream, so a (config, seed) pair fully determines the
//! parameter trajectory, and checkpoints resume bit-exactly.

mod adam;

pub use adam::AdamState;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{BatchPlan, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{Container, SimtModel};
use crate::policy::sample_train_k;

/// How the per-batch lagging is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KMode {
    /// Sample k uniformly from [1 ..= max source length in the batch].
    Multipath,
    /// Train a plain wait-k baseline at a fixed k.
    Fixed(usize),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr_peak: f64,
    pub warmup_updates: usize,
    pub warmup_init_lr: f64,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub label_smoothing: f64,
    pub max_updates: usize,
    pub seed: u64,
    pub validate_every: usize,
    pub mode: KMode,
    pub max_tokens: usize,
}

impl TrainConfig {
    pub fn desk(seed: u64) -> TrainConfig {
        TrainConfig {
            lr_peak: 5e-4,
            warmup_updates: 400,
            warmup_init_lr: 1e-7,
            adam_betas: (0.9, 0.98),
            adam_eps: 1e-8,
            weight_decay: 1e-4,
            label_smoothing: 0.1,
            max_updates: 5000,
            seed,
            validate_every: 200,
            mode: KMode::Multipath,
            max_tokens: 1600,
        }
    }

    /// The published full-scale regime (warm-up 4000 etc.). Not a test target.
    pub fn paper(seed: u64) -> TrainConfig {
        TrainConfig {
            warmup_updates: 4000,
            max_updates: 50_000,
            max_tokens: 16_000,
            validate_every: 1000,
            ..TrainConfig::desk(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.warmup_updates == 0 {
            return Err(Error::Usage("warmup_updates must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::Usage(format!(
                "label smoothing {} outside [0,1)",
                self.label_smoothing
            )));
        }
        if let KMode::Fixed(k) = self.mode {
            if k == 0 {
                return Err(Error::Usage("fixed_k must be at least 1".into()));
            }
        }
        Ok(())
    }
}

/// Learning rate at update `u` (1-based): linear ramp from the warm-up
/// initial LR to the peak over `warmup_updates`, then peak * sqrt(warmup/u).
pub fn lr_at(u: usize, cfg: &TrainConfig) -> f64 {
    debug_assert!(u >= 1);
    let w = cfg.warmup_updates as f64;
    if u <= cfg.warmup_updates {
        cfg.warmup_init_lr + (cfg.lr_peak - cfg.warmup_init_lr) * u as f64 / w
    } else {
        cfg.lr_peak * (w / u as f64).sqrt()
    }
}

/// One validation-point line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct LogPoint {
    pub update: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
    pub lr: f64,
}

/// Tab-separated log: update, train_loss, valid_loss, lr.
pub fn log_to_tsv(points: &[LogPoint]) -> String {
    let mut out = String::from("update\ttrain_loss\tvalid_loss\tlr\n");
    for p in points {
        out.push_str(&format!(
            "{}\t{:.6}\t{:.6}\t{:.8}\n",
            p.update, p.train_loss, p.valid_loss, p.lr
        ));
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LoopState {
    update: usize,
    epoch: usize,
    batch_in_epoch: usize,
    best_valid: f64,
    rng: ChaCha8Rng,
}

/// The training loop. Owns the model and all mutable optimization state.
pub struct Trainer {
    pub model: SimtModel,
    pub cfg: TrainConfig,
    pub log: Vec<LogPoint>,
    state: LoopState,
    adam: AdamState,
    loss_accum: f64,
    loss_count: usize,
}

impl Trainer {
    pub fn new(model: SimtModel, cfg: TrainConfig) -> Result<Trainer> {
        cfg.validate()?;
        let adam = AdamState::new(&trainable(&model));
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Ok(Trainer {
            model,
            cfg,
            log: Vec::new(),
            state: LoopState {
                update: 0,
                epoch: 0,
                batch_in_epoch: 0,
                best_valid: f64::INFINITY,
                rng,
            },
            adam,
            loss_accum: 0.0,
            loss_count: 0,
        })
    }

    pub fn update_count(&self) -> usize {
        self.state.update
    }

    pub fn best_valid(&self) -> f64 {
        self.state.best_valid
    }

    /// Deterministic evaluation loss (no dropout): mean over the adapter
    /// lagging values of the batch-mean teacher-forced loss.
    pub fn validation_loss(&self, plan: &BatchPlan) -> Result<f64> {
        let laggings: Vec<usize> = if self.model.config.has_adapters() {
            self.model.config.adapter_lagging.clone()
        } else {
            vec![1, usize::MAX / 2]
        };
        let mut total = 0.0;
        let mut count = 0usize;
        for batch in plan.batches() {
            for &k in &laggings {
                total += self.model.eval_loss(batch, k, self.cfg.label_smoothing)?;
                count += 1;
            }
        }
        Ok(total / count as f64)
    }

    /// Run `updates` more optimization steps (bounded by cfg.max_updates).
    pub fn run(&mut self, train: &BatchPlan, valid: &BatchPlan, updates: usize) -> Result<()> {
        if train.num_batches() == 0 {
            return Err(Error::Usage("training plan has no batches".into()));
        }
        let target = (self.state.update + updates).min(self.cfg.max_updates);
        while self.state.update < target {
            let order = train.epoch_order(self.state.epoch);
            if self.state.batch_in_epoch >= order.len() {
                self.state.epoch += 1;
                self.state.batch_in_epoch = 0;
                continue;
            }
            let batch = &train.batches()[order[self.state.batch_in_epoch]];
            self.state.batch_in_epoch += 1;

            let k = match self.cfg.mode {
                KMode::Multipath => sample_train_k(&mut self.state.rng, batch.max_src_len),
                KMode::Fixed(k) => k,
            };
            let loss = self.model.forward_train(
                batch,
                k,
                self.cfg.label_smoothing,
                &mut self.state.rng,
            )?;
            let loss_value = loss.item();
            if !loss_value.is_finite() {
                return Err(Error::Diverged {
                    update: self.state.update + 1,
                    loss: loss_value,
                });
            }
            loss.backward()?;

            if cfg!(debug_assertions) && self.state.update % 97 == 0 {
                self.assert_adapter_isolation(k);
            }

            let lr = lr_at(self.state.update + 1, &self.cfg);
            let params = trainable(&self.model);
            self.adam.step(&params, lr, &self.cfg)?;
            for (_, p) in &params {
                p.zero_grad();
            }
            self.state.update += 1;
            self.loss_accum += loss_value;
            self.loss_count += 1;

            if self.state.update % self.cfg.validate_every == 0 || self.state.update == target {
                let valid_loss = self.validation_loss(valid)?;
                let train_loss = self.loss_accum / self.loss_count.max(1) as f64;
                self.loss_accum = 0.0;
                self.loss_count = 0;
                self.state.best_valid = self.state.best_valid.min(valid_loss);
                self.log.push(LogPoint {
                    update: self.state.update,
                    train_loss,
                    valid_loss,
                    lr,
                });
                log::info!(
                    "update {} train {:.4} valid {:.4} lr {:.6}",
                    self.state.update,
                    train_loss,
                    valid_loss,
                    lr
                );
            }
        }
        Ok(())
    }

    /// Exactly one adapter column may carry gradients after a backward pass.
    fn assert_adapter_isolation(&self, k: usize) {
        if !self.model.config.has_adapters() {
            return;
        }
        let active = crate::model::route(k, &self.model.config.adapter_lagging).unwrap();
        for (idx, group) in self.model.adapter_params_by_index().iter().enumerate() {
            for (name, t) in group {
                let grad = t.grad();
                if idx == active {
                    assert!(grad.is_some(), "active adapter {name} missing gradient");
                } else {
                    assert!(
                        grad.is_none() || grad.unwrap().iter().all(|g| *g == 0.0),
                        "inactive adapter {name} received gradient"
                    );
                }
            }
        }
    }

    /// Serialize model + optimizer + loop state for bit-exact resumption.
    pub fn to_container(&self, src_vocab: &Vocabulary, tgt_vocab: &Vocabulary) -> Result<Container> {
        let mut c = self.model.to_container(src_vocab, tgt_vocab)?;
        let state = serde_json::to_value(&self.state)
            .map_err(|e| Error::Checkpoint(format!("state encode: {e}")))?;
        let cfg = serde_json::to_value(&self.cfg)
            .map_err(|e| Error::Checkpoint(format!("config encode: {e}")))?;
        c.json["train_state"] = state;
        c.json["train_config"] = cfg;
        for (name, m, v) in self.adam.arrays() {
            c.arrays.push((format!("state.adam.m.{name}"), vec![m.len()], m.clone()));
            c.arrays.push((format!("state.adam.v.{name}"), vec![v.len()], v.clone()));
        }
        Ok(c)
    }

    /// Resume from a container produced by [`Trainer::to_container`].
    pub fn from_container(c: &Container) -> Result<(Trainer, Vocabulary, Vocabulary)> {
        let (model, sv, tv) = SimtModel::from_container(c)?;
        let cfg: TrainConfig = c.json_field("train_config")?;
        let state: LoopState = c.json_field("train_state")?;
        let mut adam = AdamState::new(&trainable(&model));
        adam.load_arrays(c)?;
        adam.set_steps(state.update);
        let mut trainer = Trainer::new(model, cfg)?;
        trainer.state = state;
        trainer.adam = adam;
        Ok((trainer, sv, tv))
    }
}

fn trainable(model: &SimtModel) -> Vec<(String, crate::ndgrad::Tensor)> {
    model
        .parameters()
        .into_iter()
        .filter(|(_, t)| t.requires_grad())
        .collect()
}

/// Attach fresh adapters to a pretrained backbone and freeze it (the
/// frozen-backbone fine-tuning regime).
pub fn prepare_frozen_adapter_model(
    backbone: &SimtModel,
    adapter_lagging: Vec<usize>,
    adapter_bottleneck: usize,
    adapter_layers: Vec<usize>,
    seed: u64,
) -> Result<SimtModel> {
    let mut model = backbone.with_fresh_adapters(
        adapter_lagging,
        adapter_bottleneck,
        adapter_layers,
        seed,
    )?;
    model.freeze_backbone();
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> TrainConfig {
        TrainConfig::desk(1)
    }

    #[test]
    fn lr_ramp_hits_peak_at_warmup() {
        let c = cfg();
        assert!((lr_at(c.warmup_updates, &c) - c.lr_peak).abs() < 1e-15);
    }

    #[test]
    fn lr_inverse_sqrt_halves_at_4x_warmup() {
        let c = cfg();
        let at4 = lr_at(4 * c.warmup_updates, &c);
        assert!((at4 - c.lr_peak / 2.0).abs() < 1e-12);
    }

    #[test]
    fn lr_starts_near_warmup_init() {
        let c = cfg();
        let first = lr_at(1, &c);
        assert!(first >= c.warmup_init_lr);
        assert!(first <= c.warmup_init_lr + (c.lr_peak - c.warmup_init_lr) / 100.0);
    }

    #[test]
    fn exactly_one_mode_is_structural() {
        // the mode enum cannot express "both" or "neither"
        let c = TrainConfig { mode: KMode::Fixed(0), ..cfg() };
        assert!(c.validate().is_err());
    }
}
