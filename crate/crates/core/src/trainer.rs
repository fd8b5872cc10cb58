//! Mini-batch training of the shared-weight encoder on sampled triplets.

use std::collections::HashSet;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::TrainingPools;
use crate::encoder::{init_encoder, EncoderConfig, EncoderModel};
use crate::error::{Error, Result};
use crate::loss::{batch_loss, LossConfig};
use crate::optim::{optimizer_step, OptimizerConfig, OptimizerState};
use crate::sampler::{benchmark_pools, sample_epoch, Mode, PoolHandles, Triplet};
use crate::seed::derive_seed;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub triplets_per_epoch: usize,
    pub loss: LossConfig,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    pub mode: Mode,
    /// In bench2, draw union-pool indices domain-balanced instead of
    /// uniformly over the concatenation.
    pub balance_union: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 60,
            triplets_per_epoch: 200,
            loss: LossConfig::default(),
            optimizer: OptimizerConfig::default(),
            seed: 0,
            mode: Mode::Ours,
            balance_union: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.triplets_per_epoch == 0 {
            return Err(Error::Config(
                "epochs, batch_size and triplets_per_epoch must be positive".into(),
            ));
        }
        if self.batch_size > self.triplets_per_epoch {
            return Err(Error::Config(format!(
                "batch_size {} exceeds triplets_per_epoch {}",
                self.batch_size, self.triplets_per_epoch
            )));
        }
        self.loss.validate()?;
        self.optimizer.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean triplet loss of each epoch.
    pub loss_history: Vec<f64>,
    pub wall_time_s: f64,
}

/// The JSON training report written next to a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingReportFile {
    pub epochs: usize,
    pub loss_history: Vec<f64>,
    pub seed: u64,
    pub config_echo: TrainingEcho,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingEcho {
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
}

impl TrainReport {
    pub fn to_file(&self, encoder: &EncoderConfig, train: &TrainConfig) -> TrainingReportFile {
        TrainingReportFile {
            epochs: self.loss_history.len(),
            loss_history: self.loss_history.clone(),
            seed: train.seed,
            config_echo: TrainingEcho {
                encoder: encoder.clone(),
                train: train.clone(),
            },
        }
    }
}

/// Initializes an encoder from `encoder_config` and trains it.
pub fn train(
    data: &TrainingPools,
    encoder_config: &EncoderConfig,
    config: &TrainConfig,
) -> Result<(EncoderModel, TrainReport)> {
    let model = init_encoder(encoder_config)?;
    train_model(model, data, config)
}

/// Trains an existing model in place of a fresh initialization.
pub fn train_model(
    mut model: EncoderModel,
    data: &TrainingPools,
    config: &TrainConfig,
) -> Result<(EncoderModel, TrainReport)> {
    config.validate()?;
    let mut pools = benchmark_pools(config.mode, data)?;
    pools.balance_union = config.balance_union;

    let start = Instant::now();
    let mut used = HashSet::new();
    let mut state = OptimizerState::default();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let triplets = sample_epoch(
            &pools,
            config.triplets_per_epoch,
            derive_seed(config.seed, epoch as u64),
            &mut used,
        )?;
        let mut epoch_loss = 0.0f64;
        for (b, batch) in triplets.chunks(config.batch_size).enumerate() {
            let (loss, grads) = batch_gradients(&model, data, &pools, batch, &config.loss)?;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch: epoch + 1,
                    batch: b + 1,
                });
            }
            epoch_loss += loss as f64 * batch.len() as f64;
            optimizer_step(model.weights_mut(), &grads, &mut state, &config.optimizer)?;
        }
        if !model.weights().iter().all(Tensor::all_finite) {
            return Err(Error::Divergence {
                epoch: epoch + 1,
                batch: triplets.len().div_ceil(config.batch_size),
            });
        }
        history.push(epoch_loss / triplets.len() as f64);
    }

    let report = TrainReport {
        loss_history: history,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    Ok((model, report))
}

/// Mean loss over `batch` and the weight gradients of that mean: three
/// backward passes per triplet, summed in batch order.
pub fn batch_gradients(
    model: &EncoderModel,
    data: &TrainingPools,
    pools: &PoolHandles,
    batch: &[Triplet],
    loss: &LossConfig,
) -> Result<(f32, Vec<Tensor>)> {
    let mut passes = Vec::with_capacity(batch.len());
    for t in batch {
        let (ea, ca) = model.embed_with_cache(data.image(pools.anchors.id, t.a))?;
        let (ep, cp) = model.embed_with_cache(data.image(pools.positives.id, t.p))?;
        let (en, cn) = model.embed_with_cache(data.image(pools.negatives.id, t.n))?;
        passes.push(([ea, ep, en], [ca, cp, cn]));
    }
    let views: Vec<_> = passes
        .iter()
        .map(|(e, _)| (e[0].as_slice(), e[1].as_slice(), e[2].as_slice()))
        .collect();
    let (mean, per_triplet) = batch_loss(&views, loss)?;

    let mut total: Vec<Tensor> = model
        .weights()
        .iter()
        .map(|w| Tensor::zeros(w.shape()))
        .collect();
    for ((_, traces), g) in passes.iter().zip(&per_triplet) {
        for (trace, grad) in traces.iter().zip([&g.grad_a, &g.grad_p, &g.grad_n]) {
            // an inactive triplet contributes exactly zero
            if grad.iter().all(|&v| v == 0.0) {
                continue;
            }
            for (acc, w) in total.iter_mut().zip(model.backward(trace, grad)?) {
                acc.add_assign(&w)?;
            }
        }
    }
    Ok((mean, total))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{ConvBlock, InputSize};

    fn tiny_encoder() -> EncoderConfig {
        EncoderConfig {
            input_size: InputSize {
                height: 8,
                width: 8,
                channels: 1,
            },
            conv_blocks: vec![ConvBlock {
                filters: 2,
                kernel_size: 3,
            }],
            embedding_dim: 4,
            seed: 3,
            ..EncoderConfig::default()
        }
    }

    fn pools() -> TrainingPools {
        let img = |v: f32| Tensor::filled(&[8, 8, 1], v);
        TrainingPools {
            source_no_defect: vec![img(0.8), img(0.7), img(0.75)],
            source_defect: vec![img(0.1), img(0.2)],
            target_no_defect: vec![img(0.5), img(0.55)],
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let bad = TrainConfig {
            batch_size: 10,
            triplets_per_epoch: 5,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(&pools(), &tiny_encoder(), &bad),
            Err(Error::Config(_))
        ));
        let bad = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn capacity_error_propagates() {
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 4,
            triplets_per_epoch: 8,
            ..TrainConfig::default()
        };
        // ours: 3 × 2 × 2 = 12 constellations, 24 requested
        let err = train(&pools(), &tiny_encoder(), &cfg).unwrap_err();
        assert!(matches!(err, Error::Capacity { .. }));
    }

    #[test]
    fn report_file_echoes_config() {
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 2,
            triplets_per_epoch: 4,
            ..TrainConfig::default()
        };
        let (_, rep) = train(&pools(), &tiny_encoder(), &cfg).unwrap();
        let file = rep.to_file(&tiny_encoder(), &cfg);
        assert_eq!(file.epochs, 2);
        let json = serde_json::to_value(&file).unwrap();
        for key in ["epochs", "loss_history", "seed", "config_echo"] {
            assert!(json.get(key).is_some(), "missing {key}");
        }
    }
}
