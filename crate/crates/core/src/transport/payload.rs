//! Payload bodies for the message kinds that carry one.

use super::blob::{deserialize_weights, serialize_weights};
use super::{MessageKind, Result, TransportError};
use crate::nn::ModelWeights;

fn malformed(kind: MessageKind, reason: impl Into<String>) -> TransportError {
    TransportError::MalformedPayload {
        kind,
        reason: reason.into(),
    }
}

fn fixed<const N: usize>(kind: MessageKind, bytes: &[u8]) -> Result<[u8; N]> {
    bytes
        .try_into()
        .map_err(|_| malformed(kind, format!("expected {N} bytes, got {}", bytes.len())))
}

/// Sent by the server in reply to `Hello`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WelcomePayload {
    pub rounds: u32,
    pub local_epochs: u32,
}

impl WelcomePayload {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = self.rounds.to_le_bytes().to_vec();
        out.extend_from_slice(&self.local_epochs.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let b: [u8; 8] = fixed(MessageKind::Welcome, bytes)?;
        Ok(Self {
            rounds: u32::from_le_bytes(b[..4].try_into().unwrap()),
            local_epochs: u32::from_le_bytes(b[4..].try_into().unwrap()),
        })
    }
}

/// A client's trained weights, local sample count and validation metrics:
/// `sample_count u64 | loss f64 | accuracy f64 | weight blob`.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdatePayload {
    pub sample_count: u64,
    pub loss: f64,
    pub accuracy: f64,
    pub weights: ModelWeights,
}

impl UpdatePayload {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let blob = serialize_weights(&self.weights)?;
        let mut out = Vec::with_capacity(24 + blob.len());
        out.extend_from_slice(&self.sample_count.to_le_bytes());
        out.extend_from_slice(&self.loss.to_le_bytes());
        out.extend_from_slice(&self.accuracy.to_le_bytes());
        out.extend_from_slice(&blob);
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 24 {
            return Err(malformed(
                MessageKind::Update,
                "shorter than its 24-byte prefix",
            ));
        }
        let f = |i: usize| f64::from_le_bytes(bytes[i..i + 8].try_into().unwrap());
        Ok(Self {
            sample_count: u64::from_le_bytes(bytes[..8].try_into().unwrap()),
            loss: f(8),
            accuracy: f(16),
            weights: deserialize_weights(&bytes[24..])?,
        })
    }
}

/// Aggregate metrics the server announces when a round closes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundSummary {
    pub loss: f64,
    pub accuracy: f64,
    pub participants: u32,
}

impl RoundSummary {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = self.loss.to_le_bytes().to_vec();
        out.extend_from_slice(&self.accuracy.to_le_bytes());
        out.extend_from_slice(&self.participants.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let b: [u8; 20] = fixed(MessageKind::RoundDone, bytes)?;
        Ok(Self {
            loss: f64::from_le_bytes(b[..8].try_into().unwrap()),
            accuracy: f64::from_le_bytes(b[8..16].try_into().unwrap()),
            participants: u32::from_le_bytes(b[16..].try_into().unwrap()),
        })
    }
}
