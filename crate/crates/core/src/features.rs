//! Per-modality inputs: the physiological feature vector computed over a
//! window of normalized channels, and 48x48 grayscale face images.

use std::fmt;

use rand::Rng as _;
use thiserror::Error;

use crate::seed::Rng;

/// Side length of every image fed to the visual model.
pub const IMAGE_SIDE: usize = 48;
pub const IMAGE_PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("window needs at least {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("channel is empty")]
    Empty,
    #[error("channel lengths differ: hr {hr}, eda {eda}, temp {temp}")]
    LengthMismatch { hr: usize, eda: usize, temp: usize },
    #[error("non-finite value in {0} channel")]
    NonFinite(&'static str),
    #[error("window lasts {actual_s} s, expected {expected_s} s")]
    DurationMismatch { actual_s: f64, expected_s: f64 },
    #[error("source image {h}x{w} is smaller than {IMAGE_SIDE}x{IMAGE_SIDE}")]
    SourceTooSmall { h: usize, w: usize },
    #[error("frame has {got} pixels, expected {expected}")]
    FrameSize { expected: usize, got: usize },
    #[error("pixel {index} = {value} is outside [{lo}, {hi}]")]
    OutOfRange {
        index: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("label index {0} is not in 0..7")]
    BadLabel(i64),
}

pub type Result<T> = std::result::Result<T, FeatureError>;

/// The seven emotion classes, coded as in the FER2013 CSV.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum EmotionLabel {
    Angry = 0,
    Disgust = 1,
    Fear = 2,
    Happy = 3,
    Sad = 4,
    Surprise = 5,
    Neutral = 6,
}

impl EmotionLabel {
    pub const COUNT: usize = 7;
    pub const ALL: [EmotionLabel; 7] = [
        EmotionLabel::Angry,
        EmotionLabel::Disgust,
        EmotionLabel::Fear,
        EmotionLabel::Happy,
        EmotionLabel::Sad,
        EmotionLabel::Surprise,
        EmotionLabel::Neutral,
    ];

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            EmotionLabel::Angry => "Angry",
            EmotionLabel::Disgust => "Disgust",
            EmotionLabel::Fear => "Fear",
            EmotionLabel::Happy => "Happy",
            EmotionLabel::Sad => "Sad",
            EmotionLabel::Surprise => "Surprise",
            EmotionLabel::Neutral => "Neutral",
        }
    }
}

impl TryFrom<i64> for EmotionLabel {
    type Error = FeatureError;

    fn try_from(v: i64) -> Result<Self> {
        usize::try_from(v)
            .ok()
            .and_then(Self::from_index)
            .ok_or(FeatureError::BadLabel(v))
    }
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Normalized heart-rate, EDA and skin-temperature samples over one window.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysioWindow {
    hr: Vec<f64>,
    eda: Vec<f64>,
    temp: Vec<f64>,
    sample_rate_hz: f64,
    pub label: Option<EmotionLabel>,
}

impl PhysioWindow {
    pub fn new(
        hr: Vec<f64>,
        eda: Vec<f64>,
        temp: Vec<f64>,
        sample_rate_hz: f64,
        label: Option<EmotionLabel>,
    ) -> Result<Self> {
        if hr.len() != eda.len() || hr.len() != temp.len() {
            return Err(FeatureError::LengthMismatch {
                hr: hr.len(),
                eda: eda.len(),
                temp: temp.len(),
            });
        }
        if hr.len() < 2 {
            return Err(FeatureError::TooShort {
                needed: 2,
                got: hr.len(),
            });
        }
        for (name, ch) in [("hr", &hr), ("eda", &eda), ("temp", &temp)] {
            if ch.iter().any(|x| !x.is_finite()) {
                return Err(FeatureError::NonFinite(name));
            }
        }
        Ok(Self {
            hr,
            eda,
            temp,
            sample_rate_hz,
            label,
        })
    }

    pub fn hr(&self) -> &[f64] {
        &self.hr
    }

    pub fn eda(&self) -> &[f64] {
        &self.eda
    }

    pub fn temp(&self) -> &[f64] {
        &self.temp
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.hr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hr.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.hr.len() as f64 / self.sample_rate_hz
    }

    pub fn check_duration(&self, expected_s: f64) -> Result<()> {
        let actual_s = self.duration_s();
        if (actual_s - expected_s).abs() > 1e-9 {
            return Err(FeatureError::DurationMismatch {
                actual_s,
                expected_s,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysioFeatures {
    pub hrv: f64,
    pub eda_max: f64,
    pub delta_t: f64,
}

impl PhysioFeatures {
    pub fn as_array(&self) -> [f64; 3] {
        [self.hrv, self.eda_max, self.delta_t]
    }

    pub fn get(&self, index: usize) -> f64 {
        self.as_array()[index]
    }
}

/// Mean absolute successive difference. Divides by the number of
/// differences (`T - 1`).
pub fn hrv(hr: &[f64]) -> Result<f64> {
    if hr.len() < 2 {
        return Err(FeatureError::TooShort {
            needed: 2,
            got: hr.len(),
        });
    }
    let total: f64 = hr.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
    Ok(total / (hr.len() - 1) as f64)
}

pub fn eda_max(eda: &[f64]) -> Result<f64> {
    eda.iter()
        .copied()
        .reduce(f64::max)
        .ok_or(FeatureError::Empty)
}

pub fn delta_t(temp: &[f64]) -> Result<f64> {
    let max = temp
        .iter()
        .copied()
        .reduce(f64::max)
        .ok_or(FeatureError::Empty)?;
    let min = temp
        .iter()
        .copied()
        .reduce(f64::min)
        .ok_or(FeatureError::Empty)?;
    Ok(max - min)
}

pub fn extract_physio_features(window: &PhysioWindow) -> Result<PhysioFeatures> {
    Ok(PhysioFeatures {
        hrv: hrv(&window.hr)?,
        eda_max: eda_max(&window.eda)?,
        delta_t: delta_t(&window.temp)?,
    })
}

/// Row-major grid of raw intensities, any size.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
}

impl Frame {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(FeatureError::FrameSize {
                expected: height * width,
                got: pixels.len(),
            });
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }
}

/// 48x48 grayscale image with every pixel in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    pixels: Vec<f64>,
}

impl ImageTensor {
    pub fn new(pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != IMAGE_PIXELS {
            return Err(FeatureError::FrameSize {
                expected: IMAGE_PIXELS,
                got: pixels.len(),
            });
        }
        if let Some((index, &value)) = pixels
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(FeatureError::OutOfRange {
                index,
                value,
                lo: 0.0,
                hi: 1.0,
            });
        }
        Ok(Self { pixels })
    }

    pub fn zeros() -> Self {
        Self {
            pixels: vec![0.0; IMAGE_PIXELS],
        }
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * IMAGE_SIDE + col]
    }

    /// Horizontal mirror.
    pub fn flipped(&self) -> Self {
        let mut pixels = self.pixels.clone();
        for row in pixels.chunks_exact_mut(IMAGE_SIDE) {
            row.reverse();
        }
        Self { pixels }
    }

    /// Rotation by `degrees` (counter-clockwise) about the image centre with
    /// bilinear interpolation; samples falling outside the source are black.
    pub fn rotated(&self, degrees: f64) -> Self {
        if degrees == 0.0 {
            return self.clone();
        }
        let (sin, cos) = degrees.to_radians().sin_cos();
        let c = (IMAGE_SIDE as f64 - 1.0) / 2.0;
        let side = IMAGE_SIDE as isize;
        let fetch = |r: isize, col: isize| -> f64 {
            if (0..side).contains(&r) && (0..side).contains(&col) {
                self.pixels[r as usize * IMAGE_SIDE + col as usize]
            } else {
                0.0
            }
        };
        let mut out = vec![0.0; IMAGE_PIXELS];
        for r in 0..IMAGE_SIDE {
            for col in 0..IMAGE_SIDE {
                let dx = col as f64 - c;
                let dy = r as f64 - c;
                // inverse mapping: output pixel -> source location
                let sx = cos * dx - sin * dy + c;
                let sy = sin * dx + cos * dy + c;
                let (x0, y0) = (sx.floor(), sy.floor());
                let (fx, fy) = (sx - x0, sy - y0);
                let (x0, y0) = (x0 as isize, y0 as isize);
                let v = (1.0 - fy) * ((1.0 - fx) * fetch(y0, x0) + fx * fetch(y0, x0 + 1))
                    + fy * ((1.0 - fx) * fetch(y0 + 1, x0) + fx * fetch(y0 + 1, x0 + 1));
                out[r * IMAGE_SIDE + col] = v.clamp(0.0, 1.0);
            }
        }
        Self { pixels: out }
    }
}

/// Nearest-neighbour downsampling to 48x48:
/// `out[x', y'] = raw[floor(x' * h / 48), floor(y' * w / 48)]`.
pub fn resize_image(raw: &Frame) -> Result<Frame> {
    let (h, w) = (raw.height, raw.width);
    if h < IMAGE_SIDE || w < IMAGE_SIDE {
        return Err(FeatureError::SourceTooSmall { h, w });
    }
    let mut pixels = Vec::with_capacity(IMAGE_PIXELS);
    for x in 0..IMAGE_SIDE {
        let sx = x * h / IMAGE_SIDE;
        for y in 0..IMAGE_SIDE {
            pixels.push(raw.at(sx, y * w / IMAGE_SIDE));
        }
    }
    Frame::new(IMAGE_SIDE, IMAGE_SIDE, pixels)
}

/// Maps 8-bit intensities in `[0, 255]` to `[0, 1]`.
pub fn rescale(frame: &Frame) -> Result<ImageTensor> {
    if frame.height != IMAGE_SIDE || frame.width != IMAGE_SIDE {
        return Err(FeatureError::FrameSize {
            expected: IMAGE_PIXELS,
            got: frame.pixels.len(),
        });
    }
    if let Some((index, &value)) = frame
        .pixels
        .iter()
        .enumerate()
        .find(|(_, v)| !(0.0..=255.0).contains(*v))
    {
        return Err(FeatureError::OutOfRange {
            index,
            value,
            lo: 0.0,
            hi: 255.0,
        });
    }
    ImageTensor::new(frame.pixels.iter().map(|v| v / 255.0).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub flip_probability: f64,
    pub max_rotation_deg: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            flip_probability: 0.5,
            max_rotation_deg: 10.0,
        }
    }
}

impl AugmentConfig {
    pub fn identity() -> Self {
        Self {
            flip_probability: 0.0,
            max_rotation_deg: 0.0,
        }
    }
}

/// Random horizontal flip followed by a random rotation. Always draws one
/// coin and one angle from `rng`, whatever the config.
pub fn augment(image: &ImageTensor, rng: &mut Rng, cfg: &AugmentConfig) -> ImageTensor {
    let coin: f64 = rng.random();
    let unit: f64 = rng.random();
    let angle = (2.0 * unit - 1.0) * cfg.max_rotation_deg;
    let flipped = if coin < cfg.flip_probability {
        image.flipped()
    } else {
        image.clone()
    };
    flipped.rotated(angle)
}
