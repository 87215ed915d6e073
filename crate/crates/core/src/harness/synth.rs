//! Synthetic stand-ins for the wearable and camera streams.
//!
//! Physiological sessions are a resting baseline followed by a five second
//! response window whose heart-rate oscillation, EDA rise and skin
//! temperature drift depend on the emotion. Sessions go through the normal
//! preprocessing chain and the window is cut from the end. Faces are
//! rendered line drawings whose brows, eyes and mouth depend on the emotion.

use std::f64::consts::PI;
use std::sync::OnceLock;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::Result;
use crate::dsp::{preprocess_channel, Channel, DspConfig, Signal};
use crate::features::{
    extract_physio_features, EmotionLabel, ImageTensor, PhysioFeatures, PhysioWindow, IMAGE_SIDE,
};
use crate::seed::{self, Rng};

/// Response amplitudes for one emotion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassProfile {
    /// Amplitude (bpm) of the heart-rate oscillation in the window.
    pub hr_step: f64,
    /// Height (uS) of the skin-conductance rise.
    pub eda_peak: f64,
    /// Total temperature change (degC) across the window.
    pub temp_drift: f64,
}

const HR_LEVELS: [f64; 3] = [0.5, 2.0, 5.0];
const EDA_LEVELS: [f64; 3] = [0.05, 0.25, 0.7];
const TEMP_LEVELS: [f64; 3] = [0.02, 0.12, 0.35];

/// Level codes per emotion; any two differ in at least two channels.
const CODES: [[usize; 3]; 7] = [
    [2, 1, 0],
    [0, 2, 1],
    [2, 0, 1],
    [1, 2, 0],
    [0, 0, 0],
    [1, 1, 1],
    [0, 1, 2],
];

pub fn default_profiles() -> [ClassProfile; 7] {
    CODES.map(|[h, e, t]| ClassProfile {
        hr_step: HR_LEVELS[h],
        eda_peak: EDA_LEVELS[e],
        temp_drift: TEMP_LEVELS[t],
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthPhysioConfig {
    pub profiles: [ClassProfile; 7],
    /// Scales sensor noise and per-window amplitude jitter; zero makes every
    /// window of a class identical.
    pub noise_sigma: f64,
    pub windows_per_class: usize,
    pub sample_rate_hz: f64,
    pub window_s: f64,
    /// Resting baseline recorded before the response window.
    pub lead_in_s: f64,
    /// Probability that a window is replaced by a sensor artefact.
    pub artefact_rate: f64,
    pub dsp: DspConfig,
    pub seed: u64,
}

impl Default for SynthPhysioConfig {
    fn default() -> Self {
        Self {
            profiles: default_profiles(),
            noise_sigma: 1.0,
            windows_per_class: 50,
            sample_rate_hz: 4.0,
            window_s: 5.0,
            lead_in_s: 20.0,
            artefact_rate: 0.0,
            dsp: DspConfig::default(),
            seed: 0,
        }
    }
}

// Per-unit sensor noise: bpm, uS, degC.
const NOISE_UNITS: [f64; 3] = [0.5, 0.01, 0.005];
const ARTEFACT_GAIN: f64 = 12.0;

fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// One labelled window plus whether it is an artefact.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthWindow {
    pub window: PhysioWindow,
    pub artefact: bool,
}

/// Session for window `index` of `label`; each window has its own random
/// stream, so adding windows never changes earlier ones.
pub fn synth_window(
    cfg: &SynthPhysioConfig,
    label: EmotionLabel,
    index: usize,
) -> Result<SynthWindow> {
    let mut rng = seed::stream(
        cfg.seed,
        &[seed::tag::PHYSIO, label.index() as u64, index as u64],
    );
    let artefact = rng.random::<f64>() < cfg.artefact_rate;
    let fs = cfg.sample_rate_hz;
    let n_lead = (cfg.lead_in_s * fs).round() as usize;
    let n_win = (cfg.window_s * fs).round() as usize;
    let p = cfg.profiles[label.index()];
    let sigma = cfg.noise_sigma;
    let jitter = |rng: &mut Rng| (1.0 + 0.1 * sigma * normal(rng)).max(0.0);
    let (hr_amp, eda_amp, temp_amp) = if artefact {
        (0.0, 0.0, 0.0)
    } else {
        (
            p.hr_step * jitter(&mut rng),
            p.eda_peak * jitter(&mut rng),
            p.temp_drift * jitter(&mut rng),
        )
    };

    let mut channels = [Vec::new(), Vec::new(), Vec::new()];
    for i in 0..n_lead + n_win {
        let t = i as f64 / fs;
        let in_window = i >= n_lead;
        let tw = if in_window {
            (i - n_lead) as f64 / fs
        } else {
            0.0
        };
        let mut x = [
            70.0 + 3.0 * (2.0 * PI * t / 15.0).sin(),
            2.0 + 0.1 * (2.0 * PI * t / 20.0 + 1.0).sin(),
            33.0 + 0.05 * (2.0 * PI * t / 25.0 + 2.0).sin(),
        ];
        if in_window {
            x[0] += hr_amp * (2.0 * PI * 0.3 * tw).sin();
            x[1] += eda_amp * (1.0 - (-tw).exp());
            x[2] += temp_amp * tw / cfg.window_s;
        }
        let gain = if artefact && in_window {
            ARTEFACT_GAIN
        } else {
            1.0
        };
        for c in 0..3 {
            channels[c].push(x[c] + gain * sigma * NOISE_UNITS[c] * normal(&mut rng));
        }
    }

    let mut dsp = cfg.dsp.clone();
    dsp.sample_rate_hz = fs;
    let [hr, eda, temp] = channels;
    let cut = |samples: Vec<f64>, ch: Channel| -> Result<Vec<f64>> {
        let pre = preprocess_channel(&Signal::new(samples, fs, ch)?, &dsp)?;
        Ok(pre.signal.samples()[n_lead..].to_vec())
    };
    let window = PhysioWindow::new(
        cut(hr, Channel::HeartRate)?,
        cut(eda, Channel::Eda)?,
        cut(temp, Channel::SkinTemp)?,
        fs,
        Some(label),
    )?;
    Ok(SynthWindow { window, artefact })
}

/// `windows_per_class` windows for every emotion, interleaved by class.
pub fn gen_synthetic_physio(cfg: &SynthPhysioConfig) -> Result<Vec<PhysioWindow>> {
    let mut out = Vec::with_capacity(cfg.windows_per_class * EmotionLabel::COUNT);
    for i in 0..cfg.windows_per_class {
        for label in EmotionLabel::ALL {
            out.push(synth_window(cfg, label, i)?.window);
        }
    }
    Ok(out)
}

/// Features of the generated windows, in the same order.
pub fn synthetic_features(cfg: &SynthPhysioConfig) -> Result<Vec<(PhysioFeatures, EmotionLabel)>> {
    gen_synthetic_physio(cfg)?
        .iter()
        .map(|w| {
            Ok((
                extract_physio_features(w)?,
                w.label.expect("generated windows are labelled"),
            ))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthImageConfig {
    /// Standard deviation of additive pixel noise.
    pub noise_sigma: f64,
    /// Largest translation in pixels along each axis.
    pub max_shift: i32,
    /// Probability that the face is fully occluded.
    pub occlusion_rate: f64,
}

impl Default for SynthImageConfig {
    fn default() -> Self {
        Self {
            noise_sigma: 0.1,
            max_shift: 2,
            occlusion_rate: 0.0,
        }
    }
}

/// Expression parameters: brow tilt, eye opening, mouth curvature, mouth opening.
fn expression(label: EmotionLabel) -> [f64; 4] {
    match label {
        EmotionLabel::Angry => [-1.0, 0.6, 0.0, 0.0],
        EmotionLabel::Disgust => [0.0, 0.6, -1.0, 0.0],
        EmotionLabel::Fear => [1.0, 1.6, 0.0, 1.0],
        EmotionLabel::Happy => [0.0, 1.0, 1.0, 0.0],
        EmotionLabel::Sad => [1.0, 1.0, -1.0, 0.0],
        EmotionLabel::Surprise => [0.0, 1.6, 0.0, 2.0],
        EmotionLabel::Neutral => [0.0, 1.0, 0.0, 0.0],
    }
}

fn stroke(img: &mut [f64], points: impl IntoIterator<Item = (f64, f64)>, width: f64, level: f64) {
    let side = IMAGE_SIDE as i64;
    for (r, c) in points {
        let (r0, c0) = (r.round() as i64, c.round() as i64);
        for y in (r0 - 3).max(0)..(r0 + 4).min(side) {
            for x in (c0 - 3).max(0)..(c0 + 4).min(side) {
                let d2 = (y as f64 - r).powi(2) + (x as f64 - c).powi(2);
                let v = level * (-d2 / (2.0 * width * width)).exp();
                let px = &mut img[(y * side + x) as usize];
                *px = px.max(v);
            }
        }
    }
}

fn curve(n: usize, f: impl Fn(f64) -> (f64, f64)) -> Vec<(f64, f64)> {
    (0..=n).map(|i| f(i as f64 / n as f64)).collect()
}

fn render_face(label: EmotionLabel) -> Vec<f64> {
    let [brow, eye, smile, open] = expression(label);
    let mut img = vec![0.0; IMAGE_SIDE * IMAGE_SIDE];
    let (cy, cx) = (24.0, 23.5);
    // head outline
    stroke(
        &mut img,
        curve(160, |s| {
            (
                cy + 20.0 * (2.0 * PI * s).sin(),
                cx + 16.0 * (2.0 * PI * s).cos(),
            )
        }),
        0.8,
        0.45,
    );
    for side in [-1.0, 1.0] {
        let ex = cx + side * 7.0;
        // eyes
        stroke(
            &mut img,
            curve(40, |s| {
                (
                    17.0 + 1.8 * eye * (2.0 * PI * s).sin(),
                    ex + 3.0 * (2.0 * PI * s).cos(),
                )
            }),
            0.7,
            0.9,
        );
        // brows: tilt raises or lowers the inner end
        stroke(
            &mut img,
            curve(20, |s| {
                (
                    11.5 - brow * 2.0 * (1.0 - s) + 0.3 * brow,
                    ex - side * 4.0 * (1.0 - 2.0 * s),
                )
            }),
            0.8,
            1.0,
        );
    }
    // mouth: a curve bowed by `smile`, opened into an ellipse by `open`
    stroke(
        &mut img,
        curve(40, |s| {
            let u = 2.0 * s - 1.0;
            (33.0 - smile * 3.0 * (1.0 - u * u), cx + 7.0 * u)
        }),
        0.8,
        1.0,
    );
    if open > 0.0 {
        stroke(
            &mut img,
            curve(40, |s| {
                let u = 2.0 * s - 1.0;
                (33.0 + open * 2.5 * (1.0 - u * u), cx + 7.0 * u)
            }),
            0.8,
            1.0,
        );
    }
    img
}

/// Noise-free face for each emotion.
pub fn face_template(label: EmotionLabel) -> &'static [f64] {
    static TEMPLATES: OnceLock<Vec<Vec<f64>>> = OnceLock::new();
    &TEMPLATES.get_or_init(|| EmotionLabel::ALL.iter().map(|&l| render_face(l)).collect())
        [label.index()]
}

/// A jittered, noisy face; occluded faces carry no expression at all.
pub fn synth_face(
    label: EmotionLabel,
    rng: &mut Rng,
    cfg: &SynthImageConfig,
) -> (ImageTensor, bool) {
    let occluded = rng.random::<f64>() < cfg.occlusion_rate;
    let dy = rng.random_range(-cfg.max_shift..=cfg.max_shift);
    let dx = rng.random_range(-cfg.max_shift..=cfg.max_shift);
    let contrast = rng.random_range(0.75..=1.0);
    let template = face_template(label);
    let side = IMAGE_SIDE as i32;
    let mut pixels = Vec::with_capacity(IMAGE_SIDE * IMAGE_SIDE);
    for y in 0..side {
        for x in 0..side {
            let base = if occluded {
                0.35
            } else {
                let (sy, sx) = (y - dy, x - dx);
                if (0..side).contains(&sy) && (0..side).contains(&sx) {
                    contrast * template[(sy * side + sx) as usize]
                } else {
                    0.0
                }
            };
            let sigma = if occluded { 0.25 } else { cfg.noise_sigma };
            pixels.push((base + sigma * normal(rng)).clamp(0.0, 1.0));
        }
    }
    (
        ImageTensor::new(pixels).expect("clamped to [0, 1]"),
        occluded,
    )
}
