use rand::seq::SliceRandom;

use super::adam::AdamState;
use super::model::{CnnModel, Mode};
use super::{NnError, Result};
use crate::features::{augment, AugmentConfig, EmotionLabel, ImageTensor, IMAGE_PIXELS};
use crate::fusion::ProbVector;
use crate::seed;

/// One labelled image, flattened row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample {
    pub pixels: Vec<f64>,
    pub label: EmotionLabel,
}

impl ImageSample {
    pub fn new(image: ImageTensor, label: EmotionLabel) -> Self {
        Self {
            pixels: image.into_pixels(),
            label,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Flip/rotate 48x48 inputs during training.
    pub augment: Option<AugmentConfig>,
    /// Round parameters to single precision after every optimizer step, so
    /// that the `f32` wire format carries them exactly.
    pub round_to_f32: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 4,
            batch_size: 32,
            augment: None,
            round_to_f32: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    /// Mean training-mode loss over the epoch's minibatches.
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LocalMetrics {
    pub epochs: Vec<EpochMetrics>,
}

impl LocalMetrics {
    pub fn last(&self) -> Option<EpochMetrics> {
        self.epochs.last().copied()
    }
}

/// Runs `cfg.epochs` shuffled minibatch passes over `data`, updating the
/// model in place.
///
/// Epoch `k` (counted by `state.completed_epochs`, so it keeps counting across
/// calls) draws its shuffle, dropout masks and augmentation from the stream
/// `(seed, k)`. Training `a` epochs and then `b` more therefore reproduces a
/// single `a + b` epoch run bit for bit.
pub fn train_local(
    model: &mut CnnModel,
    data: &[ImageSample],
    cfg: &TrainConfig,
    state: &mut AdamState,
    seed: u64,
) -> Result<LocalMetrics> {
    if data.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(NnError::InvalidConfig(
            "epochs and batch size must be positive".into(),
        ));
    }
    let augment_cfg = cfg
        .augment
        .filter(|_| model.arch().input_pixels() == IMAGE_PIXELS);
    let mut grads = model.weights().zeros_like();
    let mut metrics = LocalMetrics::default();
    let mut order: Vec<usize> = (0..data.len()).collect();

    for _ in 0..cfg.epochs {
        let mut rng = seed::stream(seed, &[seed::tag::EPOCH, state.completed_epochs]);
        order.sort_unstable();
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let augmented: Vec<Vec<f64>> = match &augment_cfg {
                Some(a) => batch
                    .iter()
                    .map(|&i| {
                        let img = ImageTensor::new(data[i].pixels.clone())
                            .map_err(|e| NnError::ShapeMismatch(e.to_string()))?;
                        Ok(augment(&img, &mut rng, a).into_pixels())
                    })
                    .collect::<Result<_>>()?,
                None => Vec::new(),
            };
            let images: Vec<&[f64]> = if augment_cfg.is_some() {
                augmented.iter().map(Vec::as_slice).collect()
            } else {
                batch.iter().map(|&i| data[i].pixels.as_slice()).collect()
            };
            let labels: Vec<EmotionLabel> = batch.iter().map(|&i| data[i].label).collect();

            grads.fill(0.0);
            let stats = model.accumulate_gradients(&images, &labels, Some(&mut rng), &mut grads)?;
            grads.scale(1.0 / stats.samples as f64);
            state.apply(model.weights_mut(), &grads)?;
            if cfg.round_to_f32 {
                model.weights_mut().round_to_f32();
            }
            loss_sum += stats.loss_sum;
            correct += stats.correct;
        }
        state.completed_epochs += 1;
        metrics.epochs.push(EpochMetrics {
            loss: loss_sum / data.len() as f64,
            accuracy: correct as f64 / data.len() as f64,
        });
    }
    Ok(metrics)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalMetrics {
    pub loss: f64,
    pub accuracy: f64,
    pub probs: Vec<ProbVector>,
}

/// Evaluation-mode loss, accuracy and per-sample probabilities.
pub fn evaluate(model: &CnnModel, data: &[ImageSample]) -> Result<EvalMetrics> {
    if data.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    let images: Vec<&[f64]> = data.iter().map(|s| s.pixels.as_slice()).collect();
    let probs = model.forward(&images, Mode::Eval)?;
    let labels: Vec<EmotionLabel> = data.iter().map(|s| s.label).collect();
    let loss = super::model::cross_entropy(&probs, &labels)?;
    let correct = probs
        .iter()
        .zip(&labels)
        .filter(|(p, l)| p.argmax() == **l)
        .count();
    Ok(EvalMetrics {
        loss,
        accuracy: correct as f64 / data.len() as f64,
        probs,
    })
}

/// Evaluation-mode class distribution and its argmax (lowest index on ties).
pub fn predict_visual(model: &CnnModel, image: &[f64]) -> Result<(ProbVector, EmotionLabel)> {
    let p = model.forward(&[image], Mode::Eval)?.remove(0);
    Ok((p, p.argmax()))
}
