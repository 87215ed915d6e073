//! Decision-level fusion of the visual and physiological predictions.

use std::str::FromStr;

use thiserror::Error;

use crate::features::EmotionLabel;

const CLASSES: usize = EmotionLabel::COUNT;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("invalid probability vector: {0}")]
    InvalidProbability(String),
    #[error("unknown fusion mode {0:?} (expected vote, confidence or sum)")]
    UnknownPolicy(String),
}

/// A distribution over the seven emotion classes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbVector([f64; CLASSES]);

impl ProbVector {
    pub fn new(probs: [f64; CLASSES]) -> Result<Self, FusionError> {
        if let Some(p) = probs.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(FusionError::InvalidProbability(format!("entry {p}")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(FusionError::InvalidProbability(format!("sum {sum}")));
        }
        Ok(Self(probs))
    }

    pub fn from_slice(probs: &[f64]) -> Result<Self, FusionError> {
        let arr: [f64; CLASSES] = probs
            .try_into()
            .map_err(|_| FusionError::InvalidProbability(format!("length {}", probs.len())))?;
        Self::new(arr)
    }

    pub fn uniform() -> Self {
        Self([1.0 / CLASSES as f64; CLASSES])
    }

    pub fn one_hot(label: EmotionLabel) -> Self {
        let mut p = [0.0; CLASSES];
        p[label.index()] = 1.0;
        Self(p)
    }

    pub fn probs(&self) -> &[f64; CLASSES] {
        &self.0
    }

    /// Most probable class; the lowest index wins ties.
    pub fn argmax(&self) -> EmotionLabel {
        EmotionLabel::from_index(argmax(&self.0)).expect("seven entries")
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FusionPolicy {
    /// Two-way indicator vote; a disagreement is a tie, broken by the lower label.
    IndicatorVote,
    /// On disagreement, trust the modality with the larger top probability.
    #[default]
    ConfidenceTieBreak,
    /// Argmax of the summed distributions.
    ProbabilitySum,
}

impl FromStr for FusionPolicy {
    type Err = FusionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "vote" | "indicator" | "indicator_vote" => Ok(Self::IndicatorVote),
            "confidence" | "confidence_tie_break" => Ok(Self::ConfidenceTieBreak),
            "sum" | "probability_sum" => Ok(Self::ProbabilitySum),
            other => Err(FusionError::UnknownPolicy(other.to_string())),
        }
    }
}

impl FusionPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::IndicatorVote => "vote",
            Self::ConfidenceTieBreak => "confidence",
            Self::ProbabilitySum => "sum",
        }
    }
}

pub fn fuse(p_visual: &ProbVector, p_physio: &ProbVector, policy: FusionPolicy) -> EmotionLabel {
    let (yv, yp) = (p_visual.argmax(), p_physio.argmax());
    if yv == yp {
        return yv;
    }
    match policy {
        FusionPolicy::IndicatorVote => yv.min(yp),
        FusionPolicy::ConfidenceTieBreak => {
            let (cv, cp) = (p_visual.max(), p_physio.max());
            if cv > cp {
                yv
            } else if cp > cv {
                yp
            } else {
                yv.min(yp)
            }
        }
        FusionPolicy::ProbabilitySum => {
            let mut sum = [0.0; CLASSES];
            for (k, s) in sum.iter_mut().enumerate() {
                *s = p_visual.0[k] + p_physio.0[k];
            }
            EmotionLabel::from_index(argmax(&sum)).expect("seven entries")
        }
    }
}

/// Validating wrapper for callers holding raw slices.
pub fn fuse_slices(
    p_visual: &[f64],
    p_physio: &[f64],
    policy: FusionPolicy,
) -> Result<EmotionLabel, FusionError> {
    Ok(fuse(
        &ProbVector::from_slice(p_visual)?,
        &ProbVector::from_slice(p_physio)?,
        policy,
    ))
}
