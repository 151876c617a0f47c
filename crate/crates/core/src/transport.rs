//! Point-to-point message transports for halo exchange.
//!
//! Messages carry a stage counter and the receiver's face id so that
//! out-of-order arrivals can be matched. [`ChannelTransport`] connects
//! threads of one process; [`TcpTransport`] speaks the framed wire format
//! over sockets.
//!
//! Wire frame (all integers little-endian):
//!
//! | bytes | field                          |
//! |-------|--------------------------------|
//! | 4     | magic `NDGH`                   |
//! | 4     | stage counter (u32)            |
//! | 4     | face id (u32)                  |
//! | 8     | payload length in bytes (u64)  |
//! | n     | payload, f64 little-endian     |

use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

pub const FRAME_MAGIC: [u8; 4] = *b"NDGH";
pub const FRAME_HEADER_LEN: usize = 20;
/// Face id reserved for global reductions.
pub const REDUCE_FACE: u32 = u32::MAX;

const POLL: Duration = Duration::from_millis(20);

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("timed out after {0:?} waiting for a message")]
    Timeout(Duration),
    #[error("aborted because another worker failed")]
    Aborted,
    #[error("peer {0} disconnected")]
    Disconnected(usize),
    #[error("no peer with rank {0}")]
    UnknownPeer(usize),
    #[error("bad frame: {0}")]
    Frame(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub stage: u32,
    /// Id of the face the payload is meant for on the receiving side.
    pub face: u32,
    pub payload: Vec<f64>,
}

pub trait Transport: Send {
    fn rank(&self) -> usize;

    /// Queues `msg` for `to`; never waits for the receiver.
    fn send(&mut self, to: usize, msg: Message) -> Result<(), TransportError>;

    /// Waits for the message from `from` tagged `(face, stage)`, buffering
    /// any other message that arrives first.
    fn recv(&mut self, from: usize, face: u32, stage: u32) -> Result<Vec<f64>, TransportError>;
}

impl<T: Transport + ?Sized> Transport for Box<T> {
    fn rank(&self) -> usize {
        (**self).rank()
    }

    fn send(&mut self, to: usize, msg: Message) -> Result<(), TransportError> {
        (**self).send(to, msg)
    }

    fn recv(&mut self, from: usize, face: u32, stage: u32) -> Result<Vec<f64>, TransportError> {
        (**self).recv(from, face, stage)
    }
}

fn take_pending(pending: &mut Vec<(usize, Message)>, from: usize, face: u32, stage: u32) -> Option<Vec<f64>> {
    let pos = pending
        .iter()
        .position(|(f, m)| *f == from && m.face == face && m.stage == stage)?;
    Some(pending.swap_remove(pos).1.payload)
}

/// In-process transport over `mpsc` channels.
pub struct ChannelTransport {
    rank: usize,
    peers: Vec<Sender<(usize, Message)>>,
    inbox: Receiver<(usize, Message)>,
    pending: Vec<(usize, Message)>,
    timeout: Duration,
    abort: Arc<AtomicBool>,
}

impl ChannelTransport {
    /// Fully connected set of `n` endpoints, one per rank.
    pub fn mesh(n: usize, timeout: Duration, abort: Arc<AtomicBool>) -> Vec<ChannelTransport> {
        let (senders, receivers): (Vec<_>, Vec<_>) = (0..n).map(|_| mpsc::channel()).unzip();
        receivers
            .into_iter()
            .enumerate()
            .map(|(rank, inbox)| ChannelTransport {
                rank,
                peers: senders.clone(),
                inbox,
                pending: Vec::new(),
                timeout,
                abort: abort.clone(),
            })
            .collect()
    }
}

impl Transport for ChannelTransport {
    fn rank(&self) -> usize {
        self.rank
    }

    fn send(&mut self, to: usize, msg: Message) -> Result<(), TransportError> {
        let peer = self.peers.get(to).ok_or(TransportError::UnknownPeer(to))?;
        peer.send((self.rank, msg)).map_err(|_| TransportError::Disconnected(to))
    }

    fn recv(&mut self, from: usize, face: u32, stage: u32) -> Result<Vec<f64>, TransportError> {
        if let Some(p) = take_pending(&mut self.pending, from, face, stage) {
            return Ok(p);
        }
        let deadline = Instant::now() + self.timeout;
        loop {
            match self.inbox.recv_timeout(POLL) {
                Ok((f, m)) => {
                    if f == from && m.face == face && m.stage == stage {
                        return Ok(m.payload);
                    }
                    self.pending.push((f, m));
                }
                Err(RecvTimeoutError::Timeout) => {
                    if self.abort.load(Ordering::SeqCst) {
                        return Err(TransportError::Aborted);
                    }
                    if Instant::now() >= deadline {
                        return Err(TransportError::Timeout(self.timeout));
                    }
                }
                Err(RecvTimeoutError::Disconnected) => return Err(TransportError::Disconnected(from)),
            }
        }
    }
}

/// Serializes one frame.
pub fn encode_frame(msg: &Message) -> Vec<u8> {
    let mut out = Vec::with_capacity(FRAME_HEADER_LEN + 8 * msg.payload.len());
    out.extend_from_slice(&FRAME_MAGIC);
    out.extend_from_slice(&msg.stage.to_le_bytes());
    out.extend_from_slice(&msg.face.to_le_bytes());
    out.extend_from_slice(&((8 * msg.payload.len()) as u64).to_le_bytes());
    for v in &msg.payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Reads one frame from `r`.
pub fn decode_frame<R: Read>(r: &mut R) -> Result<Message, TransportError> {
    let mut header = [0u8; FRAME_HEADER_LEN];
    r.read_exact(&mut header)?;
    if header[0..4] != FRAME_MAGIC {
        return Err(TransportError::Frame(format!("bad magic {:?}", &header[0..4])));
    }
    let stage = u32::from_le_bytes(header[4..8].try_into().unwrap());
    let face = u32::from_le_bytes(header[8..12].try_into().unwrap());
    let len = u64::from_le_bytes(header[12..20].try_into().unwrap());
    if len % 8 != 0 {
        return Err(TransportError::Frame(format!("payload length {len} is not a multiple of 8")));
    }
    let len = usize::try_from(len).map_err(|_| TransportError::Frame(format!("payload length {len} too large")))?;
    let mut bytes = vec![0u8; len];
    r.read_exact(&mut bytes)?;
    let payload = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Message { stage, face, payload })
}

/// Socket transport. Each peer connection has a writer thread so that
/// `send` never blocks on a full socket buffer, and a reader thread that
/// forwards decoded frames into one inbox.
pub struct TcpTransport {
    rank: usize,
    writers: Vec<Option<Sender<Vec<u8>>>>,
    inner: ChannelTransport,
}

impl TcpTransport {
    /// Connects rank `rank` to every address in `peers` (indexed by rank).
    /// Lower ranks accept, higher ranks connect; each connection starts
    /// with the connecting rank as a little-endian u32.
    pub fn connect(
        rank: usize,
        listener: TcpListener,
        peers: &[SocketAddr],
        timeout: Duration,
        abort: Arc<AtomicBool>,
    ) -> Result<TcpTransport, TransportError> {
        let n = peers.len();
        let mut streams: Vec<Option<TcpStream>> = (0..n).map(|_| None).collect();
        let deadline = Instant::now() + timeout;
        for (peer, addr) in peers.iter().enumerate().take(rank) {
            let stream = loop {
                match TcpStream::connect(addr) {
                    Ok(s) => break s,
                    Err(e) if Instant::now() >= deadline => return Err(e.into()),
                    Err(_) => thread::sleep(POLL),
                }
            };
            let mut s = stream;
            s.write_all(&(rank as u32).to_le_bytes())?;
            streams[peer] = Some(s);
        }
        for _ in rank + 1..n {
            let (mut s, _) = listener.accept()?;
            let mut id = [0u8; 4];
            s.read_exact(&mut id)?;
            let peer = u32::from_le_bytes(id) as usize;
            if peer >= n || peer <= rank || streams[peer].is_some() {
                return Err(TransportError::Frame(format!("unexpected handshake from rank {peer}")));
            }
            streams[peer] = Some(s);
        }

        let (inbox_tx, inbox) = mpsc::channel();
        let mut writers = Vec::with_capacity(n);
        for (peer, stream) in streams.into_iter().enumerate() {
            let Some(stream) = stream else {
                writers.push(None);
                continue;
            };
            stream.set_nodelay(true)?;
            let mut reader = stream.try_clone()?;
            let tx = inbox_tx.clone();
            thread::spawn(move || {
                while let Ok(m) = decode_frame(&mut reader) {
                    if tx.send((peer, m)).is_err() {
                        break;
                    }
                }
            });
            let (wtx, wrx) = mpsc::channel::<Vec<u8>>();
            let mut writer = stream;
            thread::spawn(move || {
                for frame in wrx {
                    if writer.write_all(&frame).is_err() {
                        break;
                    }
                }
            });
            writers.push(Some(wtx));
        }
        // Self-addressed messages bypass the socket.
        let inner = ChannelTransport {
            rank,
            peers: (0..n).map(|_| inbox_tx.clone()).collect(),
            inbox,
            pending: Vec::new(),
            timeout,
            abort,
        };
        Ok(TcpTransport { rank, writers, inner })
    }

    /// `n` loopback endpoints in this process, connected concurrently.
    pub fn loopback_mesh(n: usize, timeout: Duration, abort: Arc<AtomicBool>) -> Result<Vec<TcpTransport>, TransportError> {
        let listeners = (0..n)
            .map(|_| TcpListener::bind("127.0.0.1:0"))
            .collect::<Result<Vec<_>, _>>()?;
        let addrs = listeners
            .iter()
            .map(|l| l.local_addr())
            .collect::<Result<Vec<_>, _>>()?;
        thread::scope(|s| {
            let handles: Vec<_> = listeners
                .into_iter()
                .enumerate()
                .map(|(rank, l)| {
                    let addrs = &addrs;
                    let abort = abort.clone();
                    s.spawn(move || TcpTransport::connect(rank, l, addrs, timeout, abort))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(TransportError::Frame("connect panicked".into()))))
                .collect()
        })
    }
}

impl Transport for TcpTransport {
    fn rank(&self) -> usize {
        self.rank
    }

    fn send(&mut self, to: usize, msg: Message) -> Result<(), TransportError> {
        if to == self.rank {
            return self.inner.send(to, msg);
        }
        let writer = self
            .writers
            .get(to)
            .and_then(Option::as_ref)
            .ok_or(TransportError::UnknownPeer(to))?;
        writer.send(encode_frame(&msg)).map_err(|_| TransportError::Disconnected(to))
    }

    fn recv(&mut self, from: usize, face: u32, stage: u32) -> Result<Vec<f64>, TransportError> {
        self.inner.recv(from, face, stage)
    }
}
