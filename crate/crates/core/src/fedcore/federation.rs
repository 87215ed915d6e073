use std::time::Duration;

use super::server::global_from;
use super::{
    serve, ClientUpdate, Evaluator, FedClient, FedError, FederationConfig, FederationHistory,
    Result,
};
use crate::nn::{CnnModel, ImageSample};
use crate::seed;
use crate::transport::{
    loopback_transport, ClientTransport, Message, MessageKind, RoundSummary, ServerTransport,
    TcpClient, TcpServer, TransportError, UpdatePayload,
};

/// Data and training seed for one client.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientSetup {
    pub id: u32,
    pub data: Vec<ImageSample>,
    pub seed: u64,
}

impl ClientSetup {
    /// Seed derived from the federation seed and the client id.
    pub fn new(id: u32, data: Vec<ImageSample>, federation_seed: u64) -> Self {
        Self {
            id,
            data,
            seed: seed::derive(federation_seed, &[seed::tag::CLIENT, id as u64]),
        }
    }
}

/// What a client saw during the federation.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClientReport {
    pub client_id: u32,
    pub rounds_trained: u32,
    pub summaries: Vec<RoundSummary>,
}

/// Client side of the protocol: hello, then train on every broadcast global
/// model until the server says shut down. `on_update` sees each update
/// before it is sent.
pub fn run_client(
    transport: &mut dyn ClientTransport,
    client: &mut FedClient,
    mut on_update: impl FnMut(&ClientUpdate),
) -> Result<ClientReport> {
    let id = client.id;
    transport.send(&Message::empty(MessageKind::Hello, 0, id))?;
    let mut report = ClientReport {
        client_id: id,
        ..ClientReport::default()
    };
    loop {
        let msg = transport.recv(None)?;
        match msg.kind {
            MessageKind::Welcome => log::debug!("client {id} welcomed"),
            MessageKind::GlobalModel => {
                let global = global_from(&msg)?;
                let update = match client.step(&global, msg.round) {
                    Ok(u) => u,
                    Err(e) => {
                        let _ = transport.send(&Message::new(
                            MessageKind::Error,
                            msg.round,
                            id,
                            e.to_string().into_bytes(),
                        ));
                        return Err(e);
                    }
                };
                on_update(&update);
                let payload = UpdatePayload {
                    sample_count: update.sample_count,
                    loss: update.metrics.loss,
                    accuracy: update.metrics.accuracy,
                    weights: update.weights,
                };
                transport.send(&Message::new(
                    MessageKind::Update,
                    msg.round,
                    id,
                    payload.encode()?,
                ))?;
                report.rounds_trained += 1;
            }
            MessageKind::RoundDone => report.summaries.push(RoundSummary::decode(&msg.payload)?),
            MessageKind::Shutdown => break,
            MessageKind::Error => {
                return Err(FedError::Protocol(format!(
                    "server error: {}",
                    String::from_utf8_lossy(&msg.payload)
                )))
            }
            other => {
                return Err(FedError::Protocol(format!(
                    "unexpected {other:?} from server"
                )))
            }
        }
    }
    transport.close();
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederationOutcome {
    pub history: FederationHistory,
    pub clients: Vec<ClientReport>,
}

/// Runs server and clients as threads of this process over the given
/// transports; `client_transports[i]` carries `setups[i]`.
pub fn run_federation_with<S, C>(
    cfg: &FederationConfig,
    mut server_transport: S,
    client_transports: Vec<C>,
    setups: Vec<ClientSetup>,
    evaluator: Option<&mut Evaluator<'_>>,
) -> Result<FederationOutcome>
where
    S: ServerTransport,
    C: ClientTransport,
{
    cfg.validate()?;
    if setups.len() != cfg.n_clients || client_transports.len() != setups.len() {
        return Err(FedError::InvalidConfig(format!(
            "{} clients configured, {} datasets, {} transports",
            cfg.n_clients,
            setups.len(),
            client_transports.len()
        )));
    }
    let mut clients = setups
        .into_iter()
        .map(|s| FedClient::new(s.id, s.data, s.seed, cfg))
        .collect::<Result<Vec<_>>>()?;
    let initial = CnnModel::init(cfg.arch, cfg.seed)?.into_weights();

    std::thread::scope(|scope| {
        let handles: Vec<_> = clients
            .iter_mut()
            .zip(client_transports)
            .map(|(client, mut t)| scope.spawn(move || run_client(&mut t, client, |_| {})))
            .collect();
        let history = serve(&mut server_transport, cfg, initial, evaluator);
        server_transport.close();
        let reports = handles
            .into_iter()
            .map(|h| h.join().expect("client thread panicked"))
            .collect::<Vec<_>>();
        let history = history?;
        let clients = reports
            .into_iter()
            .filter_map(|r| match r {
                Ok(r) => Some(r),
                Err(e) => {
                    log::warn!("client ended with an error: {e}");
                    None
                }
            })
            .collect();
        Ok(FederationOutcome { history, clients })
    })
}

/// Whole federation in one process over in-memory channels.
pub fn run_federation(
    cfg: &FederationConfig,
    setups: Vec<ClientSetup>,
    evaluator: Option<&mut Evaluator<'_>>,
) -> Result<FederationOutcome> {
    let (server, clients) = loopback_transport(setups.len());
    run_federation_with(cfg, server, clients, setups, evaluator)
}

/// Whole federation in one process over TCP on the loopback interface.
pub fn run_federation_tcp(
    cfg: &FederationConfig,
    setups: Vec<ClientSetup>,
    evaluator: Option<&mut Evaluator<'_>>,
) -> Result<FederationOutcome> {
    let mut server = TcpServer::bind("127.0.0.1:0")?;
    let addr = server.local_addr()?;
    let clients = (0..setups.len())
        .map(|_| TcpClient::connect(addr, Duration::from_secs(10)))
        .collect::<std::result::Result<Vec<_>, TransportError>>()?;
    server.accept_clients(setups.len(), cfg.join_timeout)?;
    run_federation_with(cfg, server, clients, setups, evaluator)
}
