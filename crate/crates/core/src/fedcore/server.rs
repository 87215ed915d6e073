use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use super::{fedavg, ClientUpdate, FedError, FederationConfig, Result, UpdateMetrics};
use crate::nn::ModelWeights;
use crate::transport::{
    deserialize_weights, serialize_weights, ConnId, Message, MessageKind, RoundSummary,
    ServerTransport, TransportError, UpdatePayload, WelcomePayload,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestMetrics {
    pub loss: f64,
    pub accuracy: f64,
}

/// What happened in one closed round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: u32,
    /// Sample-weighted mean of the participants' validation metrics.
    pub loss: f64,
    pub accuracy: f64,
    pub participants: Vec<u32>,
    pub sample_count: u64,
    pub wall_clock_s: f64,
    /// Metrics of the new global model on a server-side test set, if any.
    pub test: Option<TestMetrics>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundState {
    pub round: u32,
    pub global: ModelWeights,
    pub expected: BTreeSet<u32>,
    pub received: BTreeMap<u32, ClientUpdate>,
    pub deadline: Duration,
    pub max_rounds: u32,
    pub history: Vec<RoundRecord>,
}

impl RoundState {
    pub fn new(
        global: ModelWeights,
        expected: impl IntoIterator<Item = u32>,
        deadline: Duration,
        max_rounds: u32,
    ) -> Self {
        Self {
            round: 0,
            global,
            expected: expected.into_iter().collect(),
            received: BTreeMap::new(),
            deadline,
            max_rounds,
            history: Vec::new(),
        }
    }

    /// Takes an update for the current round from an expected client that
    /// has not reported yet. Anything else is dropped and `false` returned.
    pub fn accept(&mut self, update: ClientUpdate) -> Result<bool> {
        if update.round != self.round {
            log::debug!(
                "dropping update for round {} during round {}",
                update.round,
                self.round
            );
            return Ok(false);
        }
        if !self.expected.contains(&update.client_id)
            || self.received.contains_key(&update.client_id)
        {
            log::debug!(
                "dropping unexpected or duplicate update from client {}",
                update.client_id
            );
            return Ok(false);
        }
        self.global.check_compatible(&update.weights)?;
        if update.sample_count == 0 {
            return Err(FedError::ZeroSampleCount(update.client_id));
        }
        self.received.insert(update.client_id, update);
        Ok(true)
    }

    pub fn is_complete(&self) -> bool {
        self.received.len() == self.expected.len()
    }

    /// Averages whatever arrived, with weights renormalised over the
    /// participants, and advances to the next round.
    pub fn close_round(&mut self, wall_clock_s: f64) -> Result<&mut RoundRecord> {
        if self.round >= self.max_rounds {
            return Err(FedError::RoundLimit(self.max_rounds));
        }
        if self.received.is_empty() {
            return Err(FedError::NoUpdatesReceived(self.round));
        }
        let updates: Vec<ClientUpdate> = std::mem::take(&mut self.received).into_values().collect();
        let mut global = fedavg(&updates)?;
        global.round_to_f32();
        let total: u64 = updates.iter().map(|u| u.sample_count).sum();
        let mean = |f: fn(&UpdateMetrics) -> f64| {
            updates
                .iter()
                .map(|u| u.sample_count as f64 * f(&u.metrics))
                .sum::<f64>()
                / total as f64
        };
        self.history.push(RoundRecord {
            round: self.round,
            loss: mean(|m| m.loss),
            accuracy: mean(|m| m.accuracy),
            participants: updates.iter().map(|u| u.client_id).collect(),
            sample_count: total,
            wall_clock_s,
            test: None,
        });
        self.global = global;
        self.round += 1;
        Ok(self.history.last_mut().unwrap())
    }
}

/// Feeds `incoming` (the updates that arrived before the deadline) into the
/// state and closes the round.
pub fn server_round(
    mut state: RoundState,
    incoming: impl IntoIterator<Item = ClientUpdate>,
) -> Result<RoundState> {
    for u in incoming {
        state.accept(u)?;
    }
    state.close_round(0.0)?;
    Ok(state)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederationHistory {
    pub rounds: Vec<RoundRecord>,
    pub final_weights: ModelWeights,
    pub total_wall_clock_s: f64,
}

/// Scores a global model on held-out data.
pub type Evaluator<'a> = dyn FnMut(&ModelWeights) -> Option<TestMetrics> + 'a;

fn broadcast(
    transport: &mut dyn ServerTransport,
    conns: &BTreeMap<u32, ConnId>,
    msg_for: impl Fn(u32) -> Message,
) {
    for (&id, &conn) in conns {
        if let Err(e) = transport.send(conn, &msg_for(id)) {
            log::warn!("send to client {id} failed: {e}");
        }
    }
}

/// Waits for updates until every expected client has reported or the
/// straggler deadline passes.
fn collect(
    transport: &mut dyn ServerTransport,
    state: &mut RoundState,
    conns: &BTreeMap<u32, ConnId>,
) -> Result<()> {
    let deadline = Instant::now() + state.deadline;
    while !state.is_complete() {
        let remaining = deadline.saturating_duration_since(Instant::now());
        if remaining.is_zero() {
            break;
        }
        let (conn, msg) = match transport.recv_any(Some(remaining)) {
            Ok(m) => m,
            Err(TransportError::Timeout) | Err(TransportError::ChannelClosed) => break,
            Err(e) => return Err(e.into()),
        };
        if conns.get(&msg.client_id) != Some(&conn) {
            log::warn!(
                "connection {conn} sent a message as client {}",
                msg.client_id
            );
            continue;
        }
        match msg.kind {
            MessageKind::Update => {
                let accepted = UpdatePayload::decode(&msg.payload)
                    .map_err(FedError::from)
                    .and_then(|p| {
                        state.accept(ClientUpdate {
                            client_id: msg.client_id,
                            round: msg.round,
                            weights: p.weights,
                            sample_count: p.sample_count,
                            metrics: UpdateMetrics {
                                loss: p.loss,
                                accuracy: p.accuracy,
                            },
                        })
                    });
                if let Err(e) = accepted {
                    log::warn!("rejecting update from client {}: {e}", msg.client_id);
                }
            }
            MessageKind::Error => log::warn!(
                "client {} reported: {}",
                msg.client_id,
                String::from_utf8_lossy(&msg.payload)
            ),
            other => log::debug!("ignoring {other:?} from client {}", msg.client_id),
        }
    }
    Ok(())
}

/// Coordinates a whole federation from the server side: greets clients,
/// broadcasts the global model each round, aggregates what comes back and
/// finally tells everyone to shut down.
pub fn serve(
    transport: &mut dyn ServerTransport,
    cfg: &FederationConfig,
    initial: ModelWeights,
    mut evaluator: Option<&mut Evaluator<'_>>,
) -> Result<FederationHistory> {
    cfg.validate()?;
    let started = Instant::now();
    let mut conns: BTreeMap<u32, ConnId> = BTreeMap::new();
    let join_deadline = Instant::now() + cfg.join_timeout;
    while conns.len() < cfg.n_clients {
        let remaining = join_deadline.saturating_duration_since(Instant::now());
        match transport.recv_any(Some(remaining)) {
            Ok((conn, msg)) if msg.kind == MessageKind::Hello => {
                if conns.insert(msg.client_id, conn).is_some() {
                    log::warn!("client {} said hello twice", msg.client_id);
                }
                let welcome = WelcomePayload {
                    rounds: cfg.rounds as u32,
                    local_epochs: cfg.local_epochs as u32,
                };
                transport.send(
                    conn,
                    &Message::new(MessageKind::Welcome, 0, msg.client_id, welcome.encode()),
                )?;
                log::info!(
                    "client {} joined ({}/{})",
                    msg.client_id,
                    conns.len(),
                    cfg.n_clients
                );
            }
            Ok((conn, msg)) => log::warn!("connection {conn} sent {:?} before hello", msg.kind),
            Err(TransportError::Timeout) | Err(TransportError::ChannelClosed) => break,
            Err(e) => return Err(e.into()),
        }
    }
    if conns.is_empty() {
        return Err(FedError::NoClients);
    }
    if conns.len() < cfg.n_clients {
        log::warn!("starting with {} of {} clients", conns.len(), cfg.n_clients);
    }

    let mut state = RoundState::new(
        initial,
        conns.keys().copied(),
        cfg.straggler_timeout,
        cfg.rounds as u32,
    );
    for _ in 0..cfg.rounds {
        let round_start = Instant::now();
        let round = state.round;
        let blob = serialize_weights(&state.global)?;
        for attempt in 0..2 {
            broadcast(transport, &conns, |id| {
                Message::new(MessageKind::GlobalModel, round, id, blob.clone())
            });
            collect(transport, &mut state, &conns)?;
            if !state.received.is_empty() {
                break;
            }
            if attempt == 0 {
                log::warn!("round {round}: no updates before the deadline, retrying once");
            }
        }
        let missing: Vec<u32> = state
            .expected
            .iter()
            .filter(|id| !state.received.contains_key(id))
            .copied()
            .collect();
        if !missing.is_empty() && !state.received.is_empty() {
            log::warn!("round {round}: aggregating without stragglers {missing:?}");
        }
        let elapsed = round_start.elapsed().as_secs_f64();
        let record = state.close_round(elapsed)?;
        let summary = RoundSummary {
            loss: record.loss,
            accuracy: record.accuracy,
            participants: record.participants.len() as u32,
        };
        log::info!(
            "round {round}: loss {:.4} accuracy {:.4} from {} clients in {elapsed:.2}s",
            summary.loss,
            summary.accuracy,
            summary.participants
        );
        broadcast(transport, &conns, |id| {
            Message::new(MessageKind::RoundDone, round, id, summary.encode())
        });
        if let Some(eval) = evaluator.as_deref_mut() {
            let test = eval(&state.global);
            state.history.last_mut().unwrap().test = test;
        }
    }
    broadcast(transport, &conns, |id| {
        Message::empty(MessageKind::Shutdown, state.round, id)
    });
    Ok(FederationHistory {
        rounds: state.history,
        final_weights: state.global,
        total_wall_clock_s: started.elapsed().as_secs_f64(),
    })
}

/// Decodes a `GlobalModel` payload.
pub(crate) fn global_from(msg: &Message) -> Result<ModelWeights> {
    Ok(deserialize_weights(&msg.payload)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::NamedTensor;

    fn w(v: f64) -> ModelWeights {
        ModelWeights::new(vec![NamedTensor::new("w", vec![1], vec![v]).unwrap()]).unwrap()
    }

    fn up(id: u32, round: u32, m: u64, v: f64, acc: f64) -> ClientUpdate {
        ClientUpdate {
            client_id: id,
            round,
            weights: w(v),
            sample_count: m,
            metrics: UpdateMetrics {
                loss: 1.0 - acc,
                accuracy: acc,
            },
        }
    }

    #[test]
    fn happy_path_advances() {
        let s = RoundState::new(w(0.0), [0, 1, 2], Duration::from_secs(1), 20);
        let s = server_round(
            s,
            [
                up(0, 0, 1, 1.0, 0.5),
                up(1, 0, 1, 2.0, 0.5),
                up(2, 0, 2, 4.0, 1.0),
            ],
        )
        .unwrap();
        assert_eq!(s.round, 1);
        assert!(s.received.is_empty());
        assert_eq!(s.global, w(2.75));
        assert_eq!(s.history[0].accuracy, 0.75);
        assert_eq!(s.history[0].participants, vec![0, 1, 2]);
    }

    #[test]
    fn straggler_subset_is_renormalised() {
        let s = RoundState::new(w(0.0), [0, 1, 2], Duration::from_secs(1), 20);
        let s = server_round(s, [up(0, 0, 1, 3.0, 0.0), up(2, 0, 3, 7.0, 0.0)]).unwrap();
        assert_eq!(s.global, w(6.0));
        assert_eq!(s.history[0].sample_count, 4);
    }

    #[test]
    fn empty_round_and_stale_updates() {
        let s = RoundState::new(w(0.0), [0], Duration::from_secs(1), 20);
        assert_eq!(
            server_round(s.clone(), []),
            Err(FedError::NoUpdatesReceived(0))
        );
        assert_eq!(
            server_round(s, [up(0, 3, 1, 1.0, 0.0)]),
            Err(FedError::NoUpdatesReceived(0))
        );
    }

    #[test]
    fn rounds_are_capped_and_increasing() {
        let mut s = RoundState::new(w(0.0), [0], Duration::from_secs(1), 2);
        for r in 0..2 {
            s = server_round(s, [up(0, r, 1, r as f64, 0.0)]).unwrap();
        }
        assert_eq!(
            s.history.iter().map(|h| h.round).collect::<Vec<_>>(),
            vec![0, 1]
        );
        assert_eq!(
            server_round(s, [up(0, 2, 1, 0.0, 0.0)]),
            Err(FedError::RoundLimit(2))
        );
    }
}
