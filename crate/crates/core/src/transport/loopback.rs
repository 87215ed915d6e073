//! In-process transport. Messages travel as encoded frames over unbounded
//! channels, so they go through the same codec as on a socket.

use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::time::Duration;

use super::{
    decode_message, encode_message, ClientTransport, ConnId, Message, Result, ServerTransport,
    TransportError,
};

pub struct LoopbackServer {
    inbox: Receiver<(ConnId, Vec<u8>)>,
    outboxes: Vec<Option<Sender<Vec<u8>>>>,
}

pub struct LoopbackClient {
    conn: ConnId,
    outbox: Option<Sender<(ConnId, Vec<u8>)>>,
    inbox: Receiver<Vec<u8>>,
}

/// A server endpoint wired to `n_clients` client endpoints; client `i` is
/// connection `i` on the server.
pub fn loopback_transport(n_clients: usize) -> (LoopbackServer, Vec<LoopbackClient>) {
    let (to_server, inbox) = channel();
    let mut outboxes = Vec::with_capacity(n_clients);
    let mut clients = Vec::with_capacity(n_clients);
    for conn in 0..n_clients {
        let (tx, rx) = channel();
        outboxes.push(Some(tx));
        clients.push(LoopbackClient {
            conn,
            outbox: Some(to_server.clone()),
            inbox: rx,
        });
    }
    (LoopbackServer { inbox, outboxes }, clients)
}

fn decode_whole(bytes: &[u8]) -> Result<Message> {
    Ok(decode_message(bytes)?.0)
}

fn recv_with<T>(rx: &Receiver<T>, timeout: Option<Duration>) -> Result<T> {
    match timeout {
        None => rx.recv().map_err(|_| TransportError::ChannelClosed),
        Some(t) => rx.recv_timeout(t).map_err(|e| match e {
            RecvTimeoutError::Timeout => TransportError::Timeout,
            RecvTimeoutError::Disconnected => TransportError::ChannelClosed,
        }),
    }
}

impl ServerTransport for LoopbackServer {
    fn recv_any(&mut self, timeout: Option<Duration>) -> Result<(ConnId, Message)> {
        let (conn, bytes) = recv_with(&self.inbox, timeout)?;
        Ok((conn, decode_whole(&bytes)?))
    }

    fn send(&mut self, conn: ConnId, msg: &Message) -> Result<()> {
        let tx = self
            .outboxes
            .get(conn)
            .ok_or(TransportError::UnknownConnection(conn))?
            .as_ref()
            .ok_or(TransportError::ChannelClosed)?;
        tx.send(encode_message(msg)?)
            .map_err(|_| TransportError::ChannelClosed)
    }

    fn connections(&self) -> usize {
        self.outboxes.len()
    }

    fn close(&mut self) {
        self.outboxes.iter_mut().for_each(|o| *o = None);
    }
}

impl LoopbackClient {
    pub fn conn(&self) -> ConnId {
        self.conn
    }
}

impl ClientTransport for LoopbackClient {
    fn send(&mut self, msg: &Message) -> Result<()> {
        let tx = self.outbox.as_ref().ok_or(TransportError::ChannelClosed)?;
        tx.send((self.conn, encode_message(msg)?))
            .map_err(|_| TransportError::ChannelClosed)
    }

    fn recv(&mut self, timeout: Option<Duration>) -> Result<Message> {
        decode_whole(&recv_with(&self.inbox, timeout)?)
    }

    fn close(&mut self) {
        self.outbox = None;
    }
}
