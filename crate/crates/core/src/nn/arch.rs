use super::{NnError, Result};
use crate::features::EmotionLabel;

/// Shape hyper-parameters of the three-block CNN.
///
/// Each block is a same-padded 3x3 convolution, ReLU, 2x2 max pool and
/// dropout; the head is a ReLU dense layer with dropout followed by a
/// seven-way softmax layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CnnArch {
    pub input_side: usize,
    pub conv_channels: [usize; 3],
    pub dense_units: usize,
    pub conv_dropout: f64,
    pub dense_dropout: f64,
}

pub const CLASSES: usize = EmotionLabel::COUNT;

impl CnnArch {
    /// 48x48 input, filter depths 32/64/128, 1024-unit head.
    pub fn paper() -> Self {
        Self {
            input_side: 48,
            conv_channels: [32, 64, 128],
            dense_units: 1024,
            conv_dropout: 0.25,
            dense_dropout: 0.5,
        }
    }

    /// Narrow variant of the paper layout for single-core experiments.
    pub fn desk() -> Self {
        Self {
            input_side: 48,
            conv_channels: [4, 8, 16],
            dense_units: 32,
            conv_dropout: 0.25,
            dense_dropout: 0.5,
        }
    }

    /// 8x8 input, depths 2/3/4, 16-unit head: small enough for
    /// finite-difference gradient checks.
    pub fn reduced() -> Self {
        Self {
            input_side: 8,
            conv_channels: [2, 3, 4],
            dense_units: 16,
            conv_dropout: 0.25,
            dense_dropout: 0.5,
        }
    }

    pub fn without_dropout(self) -> Self {
        Self {
            conv_dropout: 0.0,
            dense_dropout: 0.0,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_side == 0 || !self.input_side.is_multiple_of(8) {
            return Err(NnError::InvalidArch(format!(
                "input side {} must be a positive multiple of 8",
                self.input_side
            )));
        }
        if self.conv_channels.contains(&0) || self.dense_units == 0 {
            return Err(NnError::InvalidArch("zero-width layer".into()));
        }
        for p in [self.conv_dropout, self.dense_dropout] {
            if !(0.0..1.0).contains(&p) {
                return Err(NnError::InvalidArch(format!(
                    "dropout rate {p} not in [0, 1)"
                )));
            }
        }
        Ok(())
    }

    pub fn input_pixels(&self) -> usize {
        self.input_side * self.input_side
    }

    /// Input channels and spatial side of conv block `b`.
    pub fn block_input(&self, b: usize) -> (usize, usize) {
        let channels = if b == 0 { 1 } else { self.conv_channels[b - 1] };
        (channels, self.input_side >> b)
    }

    pub fn flatten_len(&self) -> usize {
        let side = self.input_side / 8;
        side * side * self.conv_channels[2]
    }

    /// Names and dims of every parameter tensor, in layer order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::with_capacity(10);
        for b in 0..3 {
            let (cin, _) = self.block_input(b);
            let cout = self.conv_channels[b];
            out.push((format!("conv{}.weight", b + 1), vec![cout, cin, 3, 3]));
            out.push((format!("conv{}.bias", b + 1), vec![cout]));
        }
        out.push((
            "dense1.weight".into(),
            vec![self.dense_units, self.flatten_len()],
        ));
        out.push(("dense1.bias".into(), vec![self.dense_units]));
        out.push(("dense2.weight".into(), vec![CLASSES, self.dense_units]));
        out.push(("dense2.bias".into(), vec![CLASSES]));
        out
    }

    pub fn param_count(&self) -> usize {
        self.layout()
            .iter()
            .map(|(_, d)| d.iter().product::<usize>())
            .sum()
    }
}
