//! Federated averaging: sample-weighted aggregation of client CNN weights,
//! the per-client training step, the server round state machine and drivers
//! that run a whole federation over any transport.

mod client;
mod federation;
mod server;

use std::time::Duration;

use thiserror::Error;

use crate::features::AugmentConfig;
use crate::nn::{AdamConfig, CnnArch, ModelWeights, NnError};
use crate::transport::TransportError;

pub use client::{client_step, split_validation, FedClient};
pub use federation::{
    run_client, run_federation, run_federation_tcp, run_federation_with, ClientReport, ClientSetup,
    FederationOutcome,
};
pub use server::{
    serve, server_round, Evaluator, FederationHistory, RoundRecord, RoundState, TestMetrics,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FedError {
    #[error("no updates to aggregate")]
    EmptyUpdateSet,
    #[error("updates from different rounds: {0} and {1}")]
    MixedRounds(u32, u32),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("client {0} reported zero samples")]
    ZeroSampleCount(u32),
    #[error("local dataset is empty")]
    EmptyDataset,
    #[error("round {0} received no updates, even after a retry")]
    NoUpdatesReceived(u32),
    #[error("no client joined the federation")]
    NoClients,
    #[error("round limit {0} reached")]
    RoundLimit(u32),
    #[error("invalid federation config: {0}")]
    InvalidConfig(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Nn(NnError),
}

impl From<NnError> for FedError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::ShapeMismatch(s) => FedError::ShapeMismatch(s),
            NnError::EmptyDataset => FedError::EmptyDataset,
            other => FedError::Nn(other),
        }
    }
}

pub type Result<T> = std::result::Result<T, FedError>;

#[derive(Debug, Clone, PartialEq)]
pub struct FederationConfig {
    pub n_clients: usize,
    pub rounds: usize,
    pub local_epochs: usize,
    /// How long the server waits for updates once it has broadcast a round.
    pub straggler_timeout: Duration,
    /// How long the server waits for clients to say hello.
    pub join_timeout: Duration,
    pub seed: u64,
    pub arch: CnnArch,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub augment: Option<AugmentConfig>,
    /// Share of each client's data held out for validation metrics.
    pub validation_fraction: f64,
    /// Start every round with fresh Adam moments and an undecayed rate.
    pub reset_optimizer_each_round: bool,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            n_clients: 3,
            rounds: 20,
            local_epochs: 4,
            straggler_timeout: Duration::from_secs(600),
            join_timeout: Duration::from_secs(120),
            seed: 0,
            arch: CnnArch::paper(),
            adam: AdamConfig::default(),
            batch_size: 32,
            augment: None,
            validation_fraction: 0.1,
            reset_optimizer_each_round: false,
        }
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(FedError::InvalidConfig(m.into()));
        if self.n_clients == 0 {
            return bad("at least one client is required");
        }
        if self.rounds == 0 || self.rounds > u32::MAX as usize {
            return bad("rounds must be in 1..=u32::MAX");
        }
        if self.local_epochs == 0 {
            return bad("local_epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation_fraction must be in [0, 1)");
        }
        self.arch.validate().map_err(FedError::from)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateMetrics {
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client_id: u32,
    pub round: u32,
    pub weights: ModelWeights,
    pub sample_count: u64,
    pub metrics: UpdateMetrics,
}

/// Sample-weighted mean of the client weights, `sum_n (m_n / M) w_n`.
///
/// Terms are summed in `f64` in ascending client-id order, so the result does
/// not depend on the order updates arrived in. Each coordinate is clamped to
/// the range spanned by the inputs, which makes equal inputs a fixed point
/// despite rounding in the weights `m_n / M`.
pub fn fedavg(updates: &[ClientUpdate]) -> Result<ModelWeights> {
    let first = updates.first().ok_or(FedError::EmptyUpdateSet)?;
    for u in updates {
        if u.round != first.round {
            return Err(FedError::MixedRounds(first.round, u.round));
        }
        if u.sample_count == 0 {
            return Err(FedError::ZeroSampleCount(u.client_id));
        }
        first.weights.check_compatible(&u.weights)?;
    }
    let mut order: Vec<&ClientUpdate> = updates.iter().collect();
    order.sort_by_key(|u| (u.client_id, u.sample_count));
    let total: u64 = order.iter().map(|u| u.sample_count).sum();
    let total = total as f64;
    let coeffs: Vec<f64> = order
        .iter()
        .map(|u| u.sample_count as f64 / total)
        .collect();

    let mut out = order[0].weights.clone();
    for (ti, t) in out.tensors_mut().iter_mut().enumerate() {
        for (i, x) in t.data.iter_mut().enumerate() {
            let (mut lo, mut hi) = (*x, *x);
            let mut acc = coeffs[0] * *x;
            for (u, &c) in order.iter().zip(&coeffs).skip(1) {
                let v = u.weights.tensors()[ti].data[i];
                acc += c * v;
                lo = lo.min(v);
                hi = hi.max(v);
            }
            *x = acc.clamp(lo, hi);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::NamedTensor;
    use proptest::prelude::*;

    fn update(id: u32, m: u64, values: Vec<f64>) -> ClientUpdate {
        let n = values.len();
        ClientUpdate {
            client_id: id,
            round: 0,
            weights: ModelWeights::new(vec![NamedTensor::new("w", vec![n], values).unwrap()])
                .unwrap(),
            sample_count: m,
            metrics: UpdateMetrics::default(),
        }
    }

    fn scalar(w: &ModelWeights) -> f64 {
        w.tensors()[0].data[0]
    }

    #[test]
    fn fedavg_examples() {
        let single = update(0, 5, vec![0.3, -1.0]);
        assert_eq!(
            fedavg(std::slice::from_ref(&single)).unwrap(),
            single.weights
        );
        let same = [update(0, 3, vec![0.1, 0.7]), update(1, 11, vec![0.1, 0.7])];
        assert_eq!(fedavg(&same).unwrap(), same[0].weights);
        let two = [update(0, 1, vec![0.0]), update(1, 2, vec![3.0])];
        assert_eq!(scalar(&fedavg(&two).unwrap()), 2.0);
    }

    #[test]
    fn fedavg_errors() {
        assert_eq!(fedavg(&[]), Err(FedError::EmptyUpdateSet));
        let mut late = update(1, 1, vec![1.0]);
        late.round = 2;
        assert_eq!(
            fedavg(&[update(0, 1, vec![1.0]), late]),
            Err(FedError::MixedRounds(0, 2))
        );
        assert!(matches!(
            fedavg(&[update(0, 1, vec![1.0]), update(1, 1, vec![1.0, 2.0])]),
            Err(FedError::ShapeMismatch(_))
        ));
        assert_eq!(
            fedavg(&[update(4, 0, vec![1.0])]),
            Err(FedError::ZeroSampleCount(4))
        );
    }

    fn update_set() -> impl Strategy<Value = Vec<ClientUpdate>> {
        (1usize..=5, 1usize..=40).prop_flat_map(|(n, len)| {
            proptest::collection::vec(
                (1u64..1000, proptest::collection::vec(-10.0f64..10.0, len)),
                n,
            )
            .prop_map(|raw| {
                raw.into_iter()
                    .enumerate()
                    .map(|(i, (m, v))| update(i as u32, m, v))
                    .collect()
            })
        })
    }

    proptest! {
        #[test]
        fn permutation_invariant(mut ups in update_set(), rot in 0usize..5) {
            let a = fedavg(&ups).unwrap();
            let k = rot % ups.len();
            ups.rotate_left(k);
            ups.reverse();
            prop_assert_eq!(fedavg(&ups).unwrap(), a);
        }

        #[test]
        fn inside_the_convex_hull(ups in update_set()) {
            let out = fedavg(&ups).unwrap();
            for (i, &x) in out.tensors()[0].data.iter().enumerate() {
                let vals = ups.iter().map(|u| u.weights.tensors()[0].data[i]);
                let lo = vals.clone().fold(f64::INFINITY, f64::min);
                let hi = vals.fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(lo <= x && x <= hi);
            }
        }

        #[test]
        fn common_scaling_of_counts_changes_nothing(mut ups in update_set(), k in 2u64..1000) {
            let a = fedavg(&ups).unwrap();
            ups.iter_mut().for_each(|u| u.sample_count *= k);
            prop_assert_eq!(fedavg(&ups).unwrap(), a);
        }
    }
}
