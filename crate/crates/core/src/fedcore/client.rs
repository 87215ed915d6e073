use rand::seq::SliceRandom;

use super::{ClientUpdate, FedError, FederationConfig, Result, UpdateMetrics};
use crate::nn::{
    evaluate, train_local, AdamState, CnnModel, ImageSample, ModelWeights, TrainConfig,
};
use crate::seed;

/// Seeded holdout split. Returns `(train, validation)`; training samples keep
/// their original relative order. Fewer than two samples yield no holdout.
pub fn split_validation(
    data: &[ImageSample],
    fraction: f64,
    seed: u64,
) -> (Vec<ImageSample>, Vec<ImageSample>) {
    let n = data.len();
    let n_val = if n < 2 {
        0
    } else {
        ((fraction * n as f64).round() as usize).min(n - 1)
    };
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed::stream(seed, &[seed::tag::SPLIT]));
    let (val_idx, train_idx) = idx.split_at(n_val);
    let mut train_idx = train_idx.to_vec();
    train_idx.sort_unstable();
    (
        train_idx.iter().map(|&i| data[i].clone()).collect(),
        val_idx.iter().map(|&i| data[i].clone()).collect(),
    )
}

/// One participant: its data split, local model and optimizer state, which
/// persists from round to round unless the config asks for a reset.
#[derive(Debug, Clone)]
pub struct FedClient {
    pub id: u32,
    seed: u64,
    sample_count: u64,
    train: Vec<ImageSample>,
    val: Vec<ImageSample>,
    model: CnnModel,
    adam: AdamState,
    train_cfg: TrainConfig,
    reset_optimizer: bool,
}

impl FedClient {
    pub fn new(id: u32, data: Vec<ImageSample>, seed: u64, cfg: &FederationConfig) -> Result<Self> {
        if data.is_empty() {
            return Err(FedError::EmptyDataset);
        }
        cfg.validate()?;
        let (train, val) = split_validation(&data, cfg.validation_fraction, seed);
        Ok(Self {
            id,
            seed,
            sample_count: data.len() as u64,
            train,
            val,
            model: CnnModel::zeros(cfg.arch)?,
            adam: AdamState::new(cfg.adam),
            train_cfg: TrainConfig {
                epochs: cfg.local_epochs,
                batch_size: cfg.batch_size,
                augment: cfg.augment,
                round_to_f32: true,
            },
            reset_optimizer: cfg.reset_optimizer_each_round,
        })
    }

    pub fn train_set(&self) -> &[ImageSample] {
        &self.train
    }

    pub fn validation_set(&self) -> &[ImageSample] {
        &self.val
    }

    pub fn model(&self) -> &CnnModel {
        &self.model
    }

    pub fn optimizer(&self) -> &AdamState {
        &self.adam
    }

    /// Loads `global`, trains for the configured local epochs and reports the
    /// new weights with held-out metrics (training metrics when there is no
    /// holdout).
    pub fn step(&mut self, global: &ModelWeights, round: u32) -> Result<ClientUpdate> {
        self.model.set_weights(global.clone())?;
        if self.reset_optimizer {
            self.adam = AdamState::new(self.adam.config);
        }
        let local = train_local(
            &mut self.model,
            &self.train,
            &self.train_cfg,
            &mut self.adam,
            self.seed,
        )?;
        let metrics = if self.val.is_empty() {
            let last = local.last().expect("at least one epoch ran");
            UpdateMetrics {
                loss: last.loss,
                accuracy: last.accuracy,
            }
        } else {
            let eval = evaluate(&self.model, &self.val)?;
            UpdateMetrics {
                loss: eval.loss,
                accuracy: eval.accuracy,
            }
        };
        Ok(ClientUpdate {
            client_id: self.id,
            round,
            weights: self.model.weights().clone(),
            sample_count: self.sample_count,
            metrics,
        })
    }
}

/// A single stateless training step from fresh optimizer state.
pub fn client_step(
    global: &ModelWeights,
    local_data: &[ImageSample],
    cfg: &FederationConfig,
    seed: u64,
) -> Result<ClientUpdate> {
    FedClient::new(0, local_data.to_vec(), seed, cfg)?.step(global, 0)
}
