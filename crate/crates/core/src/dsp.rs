//! Physiological signal conditioning: Butterworth low-pass filtering,
//! causal moving-average smoothing and z-score normalization.
//!
//! The low-pass filter is a true IIR Butterworth realised as a cascade of
//! second-order sections. Each analog pole pair is mapped through the bilinear
//! transform with the cutoff pre-warped, so the digital response is
//! `|H(f)|^2 = 1 / (1 + (tan(pi f / fs) / tan(pi fc / fs))^(2N))`.

use std::f64::consts::PI;

use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DspError {
    #[error("cutoff {cutoff_hz} Hz is at or above the Nyquist frequency {nyquist_hz} Hz")]
    DegenerateCutoff { cutoff_hz: f64, nyquist_hz: f64 },
    #[error("cutoff must be a positive finite frequency, got {0}")]
    InvalidCutoff(f64),
    #[error("filter order must be even and non-zero, got {0}")]
    InvalidOrder(usize),
    #[error("sample rate must be positive and finite, got {0}")]
    InvalidSampleRate(f64),
    #[error("signal contains a non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("signal is empty")]
    Empty,
    #[error("signal needs at least {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("moving-average window must be at least 1")]
    InvalidWindow,
}

pub type Result<T> = std::result::Result<T, DspError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Channel {
    HeartRate,
    Eda,
    SkinTemp,
}

/// A uniformly sampled, finite-valued 1-D signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    samples: Vec<f64>,
    sample_rate_hz: f64,
    channel: Channel,
}

impl Signal {
    pub fn new(samples: Vec<f64>, sample_rate_hz: f64, channel: Channel) -> Result<Self> {
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(DspError::InvalidSampleRate(sample_rate_hz));
        }
        if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
            return Err(DspError::NonFinite(i));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
            channel,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn channel(&self) -> Channel {
        self.channel
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    // Samples produced by the operations below are finite whenever the input is.
    fn with_samples(&self, samples: Vec<f64>) -> Self {
        Self {
            samples,
            sample_rate_hz: self.sample_rate_hz,
            channel: self.channel,
        }
    }
}

/// One second-order section, normalised so that `a0 = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    /// Transfer function evaluated at `z^-1 = zinv`.
    fn eval(&self, zinv: Complex64) -> Complex64 {
        let zinv2 = zinv * zinv;
        let num = self.b0 + zinv * self.b1 + zinv2 * self.b2;
        let den = 1.0 + zinv * self.a1 + zinv2 * self.a2;
        num / den
    }

    /// Both poles strictly inside the unit circle (Jury conditions for a
    /// monic quadratic).
    pub fn is_stable(&self) -> bool {
        self.a2.abs() < 1.0 && self.a1.abs() < 1.0 + self.a2
    }
}

/// Cascade of second-order sections.
#[derive(Debug, Clone, PartialEq)]
pub struct BiquadCascade {
    pub stages: Vec<Biquad>,
    pub dc_gain: f64,
}

impl BiquadCascade {
    /// Complex frequency response at `freq_hz` for sample rate `sample_rate_hz`.
    pub fn response(&self, freq_hz: f64, sample_rate_hz: f64) -> Complex64 {
        let omega = 2.0 * PI * freq_hz / sample_rate_hz;
        let zinv = Complex64::from_polar(1.0, -omega);
        self.stages
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.eval(zinv))
    }

    pub fn magnitude(&self, freq_hz: f64, sample_rate_hz: f64) -> f64 {
        self.response(freq_hz, sample_rate_hz).norm()
    }

    pub fn is_stable(&self) -> bool {
        self.stages.iter().all(Biquad::is_stable)
    }

    pub fn order(&self) -> usize {
        self.stages.len() * 2
    }
}

/// Designs an even-order low-pass Butterworth filter as `order / 2` biquads.
pub fn design_butterworth(
    order: usize,
    cutoff_hz: f64,
    sample_rate_hz: f64,
) -> Result<BiquadCascade> {
    if order == 0 || !order.is_multiple_of(2) {
        return Err(DspError::InvalidOrder(order));
    }
    if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
        return Err(DspError::InvalidSampleRate(sample_rate_hz));
    }
    if !(cutoff_hz.is_finite() && cutoff_hz > 0.0) {
        return Err(DspError::InvalidCutoff(cutoff_hz));
    }
    let nyquist_hz = sample_rate_hz / 2.0;
    if cutoff_hz >= nyquist_hz {
        return Err(DspError::DegenerateCutoff {
            cutoff_hz,
            nyquist_hz,
        });
    }

    // Pre-warped analog cutoff, in units where the bilinear constant 2*fs is 1.
    let k = (PI * cutoff_hz / sample_rate_hz).tan();
    let k2 = k * k;
    let stages: Vec<Biquad> = (0..order / 2)
        .map(|i| {
            // Pole pair at angle theta from the imaginary axis; q = 1 / (2 sin theta).
            let theta = PI * (2 * i + 1) as f64 / (2 * order) as f64;
            let inv_q = 2.0 * theta.sin();
            let norm = 1.0 / (1.0 + k * inv_q + k2);
            let b0 = k2 * norm;
            Biquad {
                b0,
                b1: 2.0 * b0,
                b2: b0,
                a1: 2.0 * (k2 - 1.0) * norm,
                a2: (1.0 - k * inv_q + k2) * norm,
            }
        })
        .collect();

    let mut cascade = BiquadCascade {
        stages,
        dc_gain: 1.0,
    };
    cascade.dc_gain = cascade.magnitude(0.0, sample_rate_hz);
    debug_assert!(cascade.is_stable());
    Ok(cascade)
}

/// Direct-form-II-transposed evaluation of the cascade, zero initial state.
pub fn filter_signal(cascade: &BiquadCascade, signal: &Signal) -> Signal {
    let mut out = signal.samples.clone();
    for stage in &cascade.stages {
        let (mut z1, mut z2) = (0.0, 0.0);
        for x in out.iter_mut() {
            let input = *x;
            let y = stage.b0 * input + z1;
            z1 = stage.b1 * input - stage.a1 * y + z2;
            z2 = stage.b2 * input - stage.a2 * y;
            *x = y;
        }
    }
    signal.with_samples(out)
}

/// Causal moving average; the window is truncated at the left edge, so
/// `out[t]` averages `in[max(0, t - window + 1) ..= t]`.
pub fn moving_average(signal: &Signal, window: usize) -> Result<Signal> {
    if window == 0 {
        return Err(DspError::InvalidWindow);
    }
    let xs = &signal.samples;
    let out = (0..xs.len())
        .map(|t| {
            let start = (t + 1).saturating_sub(window);
            let span = &xs[start..=t];
            span.iter().sum::<f64>() / span.len() as f64
        })
        .collect();
    Ok(signal.with_samples(out))
}

/// Zero-mean, unit population-variance normalization. A signal whose
/// standard deviation is negligible relative to its level maps to zeros.
pub fn zscore(signal: &Signal) -> Result<Signal> {
    let xs = &signal.samples;
    if xs.len() < 2 {
        return Err(DspError::TooShort {
            needed: 2,
            got: xs.len(),
        });
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let sigma = var.sqrt();
    if sigma < 1e-12 * mean.abs().max(1.0) {
        return Ok(signal.with_samples(vec![0.0; xs.len()]));
    }
    Ok(signal.with_samples(xs.iter().map(|x| (x - mean) / sigma).collect()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DspConfig {
    pub filter_order: usize,
    pub cutoff_hz: f64,
    pub smoothing_window: usize,
    /// Sample rate used when generating or resampling physiological data.
    pub sample_rate_hz: f64,
    /// When the cutoff is at or above Nyquist, skip filtering instead of failing.
    pub bypass_degenerate: bool,
}

impl Default for DspConfig {
    fn default() -> Self {
        Self {
            filter_order: 4,
            cutoff_hz: 0.5,
            smoothing_window: 5,
            sample_rate_hz: 4.0,
            bypass_degenerate: true,
        }
    }
}

/// Output of [`preprocess_channel`].
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessed {
    pub signal: Signal,
    /// Set when the low-pass stage was skipped because the cutoff was degenerate.
    pub filter_bypassed: bool,
}

/// Filter, then smooth, then normalise.
pub fn preprocess_channel(signal: &Signal, cfg: &DspConfig) -> Result<Preprocessed> {
    if signal.is_empty() {
        return Err(DspError::Empty);
    }
    let (filtered, filter_bypassed) = match design_butterworth(
        cfg.filter_order,
        cfg.cutoff_hz,
        signal.sample_rate_hz,
    ) {
        Ok(cascade) => {
            // Filter the deviation from the first sample so a resting
            // baseline does not produce a start-up ramp.
            let x0 = signal.samples[0];
            let shifted = signal.with_samples(signal.samples.iter().map(|x| x - x0).collect());
            let out = filter_signal(&cascade, &shifted);
            (
                out.with_samples(out.samples.iter().map(|y| y + x0).collect()),
                false,
            )
        }
        Err(DspError::DegenerateCutoff {
            cutoff_hz,
            nyquist_hz,
        }) if cfg.bypass_degenerate => {
            log::warn!(
                "{:?}: cutoff {cutoff_hz} Hz >= Nyquist {nyquist_hz} Hz, low-pass stage bypassed",
                signal.channel
            );
            (signal.clone(), true)
        }
        Err(e) => return Err(e),
    };
    let smoothed = moving_average(&filtered, cfg.smoothing_window)?;
    Ok(Preprocessed {
        signal: zscore(&smoothed)?,
        filter_bypassed,
    })
}
