//! TCP carrier. The server runs one reader thread per connection, all
//! feeding a single inbox; writes happen on the caller's thread.

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use super::{
    decode_header, encode_message, ClientTransport, ConnId, Message, Result, ServerTransport,
    TransportError, DEFAULT_MAX_PAYLOAD, HEADER_LEN,
};

pub const DEFAULT_PORT: u16 = 7878;

/// Reads exactly one frame from a stream.
pub fn read_frame(stream: &mut impl Read, max_payload: usize) -> Result<Message> {
    let mut header = [0u8; HEADER_LEN];
    stream.read_exact(&mut header)?;
    let h = decode_header(&header, max_payload)?;
    let mut payload = vec![0u8; h.payload_len];
    stream.read_exact(&mut payload)?;
    Ok(Message::new(h.kind, h.round, h.client_id, payload))
}

type Inbound = (ConnId, Result<Message>);

pub struct TcpServer {
    listener: TcpListener,
    writers: Vec<Option<TcpStream>>,
    live: Vec<bool>,
    inbox_tx: Sender<Inbound>,
    inbox: Receiver<Inbound>,
    readers: Vec<JoinHandle<()>>,
    max_payload: usize,
}

impl TcpServer {
    pub fn bind(addr: impl ToSocketAddrs) -> Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let (inbox_tx, inbox) = channel();
        Ok(Self {
            listener,
            writers: Vec::new(),
            live: Vec::new(),
            inbox_tx,
            inbox,
            readers: Vec::new(),
            max_payload: DEFAULT_MAX_PAYLOAD,
        })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.listener.local_addr()?)
    }

    /// Accepts connections until `n` are open or `timeout` passes; returns
    /// how many are open.
    pub fn accept_clients(&mut self, n: usize, timeout: Duration) -> Result<usize> {
        let deadline = Instant::now() + timeout;
        self.listener.set_nonblocking(true)?;
        while self.writers.len() < n {
            match self.listener.accept() {
                Ok((stream, peer)) => {
                    log::debug!("connection {} from {peer}", self.writers.len());
                    self.attach(stream)?;
                }
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                    if Instant::now() >= deadline {
                        break;
                    }
                    std::thread::sleep(Duration::from_millis(5));
                }
                Err(e) => return Err(e.into()),
            }
        }
        self.listener.set_nonblocking(false)?;
        Ok(self.writers.len())
    }

    fn attach(&mut self, stream: TcpStream) -> Result<()> {
        stream.set_nonblocking(false)?;
        stream.set_nodelay(true)?;
        let conn = self.writers.len();
        let mut reader = stream.try_clone()?;
        let tx = self.inbox_tx.clone();
        let max = self.max_payload;
        self.readers.push(std::thread::spawn(move || loop {
            let frame = read_frame(&mut reader, max);
            let failed = frame.is_err();
            if tx.send((conn, frame)).is_err() || failed {
                break;
            }
        }));
        self.writers.push(Some(stream));
        self.live.push(true);
        Ok(())
    }
}

impl ServerTransport for TcpServer {
    fn recv_any(&mut self, timeout: Option<Duration>) -> Result<(ConnId, Message)> {
        let deadline = timeout.map(|t| Instant::now() + t);
        loop {
            if !self.live.iter().any(|&l| l) {
                return Err(TransportError::ChannelClosed);
            }
            let next = match deadline {
                None => self.inbox.recv().map_err(|_| TransportError::ChannelClosed),
                Some(d) => self
                    .inbox
                    .recv_timeout(d.saturating_duration_since(Instant::now()))
                    .map_err(|e| match e {
                        RecvTimeoutError::Timeout => TransportError::Timeout,
                        RecvTimeoutError::Disconnected => TransportError::ChannelClosed,
                    }),
            }?;
            match next {
                (conn, Ok(msg)) => return Ok((conn, msg)),
                (conn, Err(e)) => {
                    log::warn!("connection {conn} dropped: {e}");
                    self.live[conn] = false;
                    self.writers[conn] = None;
                }
            }
        }
    }

    fn send(&mut self, conn: ConnId, msg: &Message) -> Result<()> {
        let stream = self
            .writers
            .get_mut(conn)
            .ok_or(TransportError::UnknownConnection(conn))?
            .as_mut()
            .ok_or(TransportError::ChannelClosed)?;
        stream.write_all(&encode_message(msg)?)?;
        Ok(())
    }

    fn connections(&self) -> usize {
        self.writers.len()
    }

    fn close(&mut self) {
        for w in self.writers.iter_mut() {
            if let Some(s) = w.take() {
                let _ = s.shutdown(std::net::Shutdown::Both);
            }
        }
        self.live.iter_mut().for_each(|l| *l = false);
        for h in self.readers.drain(..) {
            let _ = h.join();
        }
    }
}

impl Drop for TcpServer {
    fn drop(&mut self) {
        self.close();
    }
}

pub struct TcpClient {
    stream: Option<TcpStream>,
    max_payload: usize,
}

impl TcpClient {
    /// Connects, retrying until `retry_for` has elapsed so a client may start
    /// before its server.
    pub fn connect(addr: impl ToSocketAddrs, retry_for: Duration) -> Result<Self> {
        let addrs: Vec<SocketAddr> = addr.to_socket_addrs()?.collect();
        let deadline = Instant::now() + retry_for;
        loop {
            match TcpStream::connect(&addrs[..]) {
                Ok(stream) => {
                    stream.set_nodelay(true)?;
                    return Ok(Self {
                        stream: Some(stream),
                        max_payload: DEFAULT_MAX_PAYLOAD,
                    });
                }
                Err(e) if Instant::now() < deadline => {
                    log::debug!("connect failed ({e}), retrying");
                    std::thread::sleep(Duration::from_millis(50));
                }
                Err(e) => return Err(e.into()),
            }
        }
    }

    fn stream(&mut self) -> Result<&mut TcpStream> {
        self.stream.as_mut().ok_or(TransportError::ChannelClosed)
    }
}

impl ClientTransport for TcpClient {
    fn send(&mut self, msg: &Message) -> Result<()> {
        let bytes = encode_message(msg)?;
        self.stream()?.write_all(&bytes)?;
        Ok(())
    }

    fn recv(&mut self, timeout: Option<Duration>) -> Result<Message> {
        let max = self.max_payload;
        let stream = self.stream()?;
        stream.set_read_timeout(timeout)?;
        read_frame(stream, max)
    }

    fn close(&mut self) {
        if let Some(s) = self.stream.take() {
            let _ = s.shutdown(std::net::Shutdown::Both);
        }
    }
}
