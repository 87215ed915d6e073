use rand::Rng as _;

use super::arch::{CnnArch, CLASSES};
use super::ops;
use super::tensor::{ModelWeights, NamedTensor};
use super::{NnError, Result};
use crate::features::EmotionLabel;
use crate::fusion::{argmax, ProbVector};
use crate::seed::{self, Rng};

/// Forward-pass mode. Training draws dropout masks from the given stream;
/// evaluation is deterministic and applies no dropout (masks are inverted,
/// so no rescaling is needed either).
pub enum Mode<'a> {
    Eval,
    Train(&'a mut Rng),
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `log(softmax(logits))` through log-sum-exp.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

/// Mean negative log-likelihood of the true labels.
pub fn cross_entropy(probs: &[ProbVector], labels: &[EmotionLabel]) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(NnError::ShapeMismatch(format!(
            "{} probability rows for {} labels",
            probs.len(),
            labels.len()
        )));
    }
    if probs.is_empty() {
        return Err(NnError::EmptyBatch);
    }
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(p, l)| -p.probs()[l.index()].max(f64::MIN_POSITIVE).ln())
        .sum();
    Ok(total / probs.len() as f64)
}

#[derive(Default)]
struct BlockTrace {
    col: Vec<f64>,
    // post-ReLU convolution output; its sign is the ReLU mask
    act: Vec<f64>,
    argmax: Vec<u32>,
    dropout: Option<Vec<f64>>,
}

#[derive(Default)]
struct Trace {
    blocks: [BlockTrace; 3],
    flat: Vec<f64>,
    hidden: Vec<f64>,
    hidden_dropout: Option<Vec<f64>>,
    head_in: Vec<f64>,
    logits: [f64; CLASSES],
}

/// Summary of one gradient accumulation call.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BatchStats {
    pub loss_sum: f64,
    pub correct: usize,
    pub samples: usize,
}

/// The three-block CNN.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel {
    arch: CnnArch,
    params: ModelWeights,
}

const CONV_W: [usize; 3] = [0, 2, 4];
const DENSE1: usize = 6;
const DENSE2: usize = 8;

fn dropout_mask(len: usize, rate: f64, rng: &mut Rng) -> Vec<f64> {
    let keep = 1.0 - rate;
    let scale = 1.0 / keep;
    (0..len)
        .map(|_| {
            if rng.random::<f64>() < keep {
                scale
            } else {
                0.0
            }
        })
        .collect()
}

impl CnnModel {
    /// All parameters zero.
    pub fn zeros(arch: CnnArch) -> Result<Self> {
        arch.validate()?;
        let tensors = arch
            .layout()
            .into_iter()
            .map(|(name, dims)| NamedTensor::zeros(name, dims))
            .collect();
        Ok(Self {
            arch,
            params: ModelWeights::new(tensors)?,
        })
    }

    /// He-style uniform fan-in initialisation, `U(-sqrt(6/fan_in), sqrt(6/fan_in))`
    /// for weights and zero biases. Values are rounded to `f32`.
    pub fn init(arch: CnnArch, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(arch)?;
        let mut rng = seed::stream(seed, &[seed::tag::INIT]);
        for t in model.params.tensors_mut() {
            if t.dims.len() < 2 {
                continue;
            }
            let fan_in: usize = t.dims[1..].iter().product();
            let bound = (6.0 / fan_in as f64).sqrt();
            for x in &mut t.data {
                *x = rng.random_range(-bound..bound) as f32 as f64;
            }
        }
        Ok(model)
    }

    pub fn from_weights(arch: CnnArch, weights: ModelWeights) -> Result<Self> {
        let template = Self::zeros(arch)?;
        template.params.check_compatible(&weights)?;
        Ok(Self {
            arch,
            params: weights,
        })
    }

    pub fn arch(&self) -> &CnnArch {
        &self.arch
    }

    pub fn weights(&self) -> &ModelWeights {
        &self.params
    }

    pub fn weights_mut(&mut self) -> &mut ModelWeights {
        &mut self.params
    }

    pub fn into_weights(self) -> ModelWeights {
        self.params
    }

    pub fn set_weights(&mut self, weights: ModelWeights) -> Result<()> {
        self.params.check_compatible(&weights)?;
        self.params = weights;
        Ok(())
    }

    fn p(&self, i: usize) -> &[f64] {
        &self.params.tensors()[i].data
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.arch.input_pixels() {
            return Err(NnError::ShapeMismatch(format!(
                "input has {} pixels, architecture expects {}",
                x.len(),
                self.arch.input_pixels()
            )));
        }
        Ok(())
    }

    #[allow(clippy::needless_range_loop)]
    fn forward_sample(&self, x: &[f64], mut rng: Option<&mut Rng>, trace: &mut Trace) {
        let arch = &self.arch;
        let mut input: Vec<f64> = x.to_vec();
        for b in 0..3 {
            let (cin, side) = arch.block_input(b);
            let n = side * side;
            let bt = &mut trace.blocks[b];
            ops::im2col(&input, cin, side, &mut bt.col);
            ops::conv_forward(
                self.p(CONV_W[b]),
                self.p(CONV_W[b] + 1),
                &bt.col,
                cin * 9,
                n,
                &mut bt.act,
            );
            bt.act.iter_mut().for_each(|v| *v = v.max(0.0));
            let mut pooled = Vec::new();
            ops::maxpool_forward(
                &bt.act,
                arch.conv_channels[b],
                side,
                &mut pooled,
                &mut bt.argmax,
            );
            bt.dropout = match rng.as_deref_mut() {
                Some(r) if arch.conv_dropout > 0.0 => {
                    let mask = dropout_mask(pooled.len(), arch.conv_dropout, r);
                    pooled.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
                    Some(mask)
                }
                _ => None,
            };
            input = pooled;
        }
        trace.flat = input;

        let (w1, b1) = (self.p(DENSE1), self.p(DENSE1 + 1));
        let k = trace.flat.len();
        trace.hidden = b1
            .iter()
            .enumerate()
            .map(|(o, &bias)| (bias + ops::dot(&w1[o * k..][..k], &trace.flat)).max(0.0))
            .collect();
        let mut head_in = trace.hidden.clone();
        trace.hidden_dropout = match rng {
            Some(r) if arch.dense_dropout > 0.0 => {
                let mask = dropout_mask(head_in.len(), arch.dense_dropout, r);
                head_in.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
                Some(mask)
            }
            _ => None,
        };
        trace.head_in = head_in;

        let (w2, b2) = (self.p(DENSE2), self.p(DENSE2 + 1));
        let h = arch.dense_units;
        for o in 0..CLASSES {
            trace.logits[o] = b2[o] + ops::dot(&w2[o * h..][..h], &trace.head_in);
        }
        debug_assert!(
            trace.logits.iter().all(|z| z.is_finite()),
            "non-finite logits"
        );
    }

    /// Accumulates d(loss)/d(params) for one sample into `grads` and returns
    /// the sample loss.
    fn backward_sample(&self, trace: &Trace, label: usize, grads: &mut ModelWeights) -> f64 {
        let arch = &self.arch;
        let logp = log_softmax(&trace.logits);
        let loss = -logp[label];
        let mut dlogits: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
        dlogits[label] -= 1.0;

        let g = grads.tensors_mut();
        let h = arch.dense_units;
        // head
        let w2 = self.p(DENSE2);
        let mut dhead = vec![0.0; h];
        for (o, &d) in dlogits.iter().enumerate() {
            g[DENSE2 + 1].data[o] += d;
            ops::axpy(&mut g[DENSE2].data[o * h..][..h], d, &trace.head_in);
            ops::axpy(&mut dhead, d, &w2[o * h..][..h]);
        }
        if let Some(mask) = &trace.hidden_dropout {
            dhead.iter_mut().zip(mask).for_each(|(d, m)| *d *= m);
        }
        for (d, &a) in dhead.iter_mut().zip(&trace.hidden) {
            if a <= 0.0 {
                *d = 0.0;
            }
        }
        // dense1
        let w1 = self.p(DENSE1);
        let k = trace.flat.len();
        let mut dflat = vec![0.0; k];
        for (o, &d) in dhead.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            g[DENSE1 + 1].data[o] += d;
            ops::axpy(&mut g[DENSE1].data[o * k..][..k], d, &trace.flat);
            ops::axpy(&mut dflat, d, &w1[o * k..][..k]);
        }
        // conv blocks, last to first
        let mut dpooled = dflat;
        let mut dcol = Vec::new();
        for b in (0..3).rev() {
            let (cin, side) = arch.block_input(b);
            let n = side * side;
            let bt = &trace.blocks[b];
            if let Some(mask) = &bt.dropout {
                dpooled.iter_mut().zip(mask).for_each(|(d, m)| *d *= m);
            }
            let mut dact = vec![0.0; bt.act.len()];
            ops::maxpool_backward(&dpooled, &bt.argmax, &mut dact);
            for (d, &a) in dact.iter_mut().zip(&bt.act) {
                if a <= 0.0 {
                    *d = 0.0;
                }
            }
            let (gw, rest) = g[CONV_W[b]..].split_at_mut(1);
            ops::conv_backward(
                self.p(CONV_W[b]),
                &bt.col,
                &dact,
                cin * 9,
                n,
                &mut gw[0].data,
                &mut rest[0].data,
                (b > 0).then_some(&mut dcol),
            );
            if b > 0 {
                let mut dinput = vec![0.0; cin * n];
                ops::col2im(&dcol, cin, side, &mut dinput);
                dpooled = dinput;
            }
        }
        loss
    }

    /// Class probabilities for every image.
    pub fn forward(&self, images: &[&[f64]], mut mode: Mode<'_>) -> Result<Vec<ProbVector>> {
        if images.is_empty() {
            return Err(NnError::EmptyBatch);
        }
        let mut trace = Trace::default();
        images
            .iter()
            .map(|x| {
                self.check_input(x)?;
                let rng = match &mut mode {
                    Mode::Eval => None,
                    Mode::Train(r) => Some(&mut **r),
                };
                self.forward_sample(x, rng, &mut trace);
                Ok(ProbVector::from_slice(&softmax(&trace.logits))
                    .expect("softmax output is a distribution"))
            })
            .collect()
    }

    /// Raw logits in evaluation mode.
    pub fn logits(&self, image: &[f64]) -> Result<[f64; CLASSES]> {
        self.check_input(image)?;
        let mut trace = Trace::default();
        self.forward_sample(image, None, &mut trace);
        Ok(trace.logits)
    }

    /// Runs a training-mode forward pass and the matching backward pass for
    /// each sample, adding the per-sample gradients (not yet averaged) into
    /// `grads`. Dropout masks come from `rng` and are reused by the backward
    /// pass of the same sample.
    pub fn accumulate_gradients(
        &self,
        images: &[&[f64]],
        labels: &[EmotionLabel],
        mut rng: Option<&mut Rng>,
        grads: &mut ModelWeights,
    ) -> Result<BatchStats> {
        if images.len() != labels.len() {
            return Err(NnError::ShapeMismatch(format!(
                "{} images for {} labels",
                images.len(),
                labels.len()
            )));
        }
        if images.is_empty() {
            return Err(NnError::EmptyBatch);
        }
        self.params.check_compatible(grads)?;
        let mut stats = BatchStats::default();
        let mut trace = Trace::default();
        for (x, label) in images.iter().zip(labels) {
            self.check_input(x)?;
            self.forward_sample(x, rng.as_deref_mut(), &mut trace);
            stats.loss_sum += self.backward_sample(&trace, label.index(), grads);
            stats.correct += usize::from(argmax(&trace.logits) == label.index());
            stats.samples += 1;
        }
        Ok(stats)
    }

    /// Gradient of the mean cross-entropy over the batch. With `rng` the
    /// pass runs in training mode (dropout active).
    pub fn backward(
        &self,
        images: &[&[f64]],
        labels: &[EmotionLabel],
        rng: Option<&mut Rng>,
    ) -> Result<(f64, ModelWeights)> {
        let mut grads = self.params.zeros_like();
        let stats = self.accumulate_gradients(images, labels, rng, &mut grads)?;
        let inv = 1.0 / stats.samples as f64;
        grads.scale(inv);
        Ok((stats.loss_sum * inv, grads))
    }

    /// Mean cross-entropy from logits; `rng` selects training mode.
    pub fn loss(
        &self,
        images: &[&[f64]],
        labels: &[EmotionLabel],
        mut rng: Option<&mut Rng>,
    ) -> Result<f64> {
        if images.is_empty() || images.len() != labels.len() {
            return Err(NnError::ShapeMismatch("batch/label length".into()));
        }
        let mut trace = Trace::default();
        let mut total = 0.0;
        for (x, label) in images.iter().zip(labels) {
            self.check_input(x)?;
            self.forward_sample(x, rng.as_deref_mut(), &mut trace);
            total -= log_softmax(&trace.logits)[label.index()];
        }
        Ok(total / images.len() as f64)
    }
}
