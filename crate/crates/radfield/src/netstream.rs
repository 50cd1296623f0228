//! Byte-stream transports for streaming sessions.
//!
//! Sessions run over any `Read`/`Write` pair: an OS pipe inside one process
//! or a TCP connection. Every message is logged in a transcript with its
//! exact wire size. Over TCP the kernel's own counters (`TCP_INFO`) are read
//! at points where no control segments are pending, so they can be compared
//! byte for byte with the transcript.

use std::fmt::Write as _;
use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};

use radfield_core::wire::{
    message_len, MessageKind, Receiver, ReceiverEvent, ReferenceRenderer, Sender, SessionError, SessionMode, StreamMessage,
    WireError, FRAME_HEADER_LEN,
};
use radfield_core::{CameraPose, Frame};

pub const TRANSCRIPT_HEADER: &str = "direction,msg_type,bytes";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Send,
    Recv,
}

impl Direction {
    pub fn name(self) -> &'static str {
        match self {
            Direction::Send => "send",
            Direction::Recv => "recv",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranscriptEntry {
    pub direction: Direction,
    pub kind: MessageKind,
    pub bytes: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Transcript {
    pub entries: Vec<TranscriptEntry>,
}

impl Transcript {
    pub fn total(&self, direction: Direction) -> usize {
        self.entries.iter().filter(|e| e.direction == direction).map(|e| e.bytes).sum()
    }

    pub fn csv(&self) -> String {
        let mut s = format!("{TRANSCRIPT_HEADER}\n");
        for e in &self.entries {
            let _ = writeln!(s, "{},{},{}", e.direction.name(), e.kind.name(), e.bytes);
        }
        s
    }
}

#[derive(Debug, thiserror::Error)]
pub enum NetError {
    #[error("transport failed after frame {last_good:?}")]
    Transport { last_good: Option<u32>, source: io::Error },
    #[error("bad message after frame {last_good:?}")]
    Wire { last_good: Option<u32>, source: WireError },
    #[error("stream ended before the session finished (last frame {last_good:?})")]
    Closed { last_good: Option<u32> },
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error("{0}")]
    Peer(String),
}

/// Writes one message; returns its size on the wire.
pub fn write_message<W: Write>(w: &mut W, msg: &StreamMessage) -> io::Result<usize> {
    let bytes = msg.encode();
    w.write_all(&bytes)?;
    Ok(bytes.len())
}

/// Reads one message, or `None` on a clean end of stream before its first byte.
pub fn read_message<R: Read>(r: &mut R, last_good: Option<u32>) -> Result<Option<(StreamMessage, usize)>, NetError> {
    let transport = |source| NetError::Transport { last_good, source };
    let mut header = [0u8; FRAME_HEADER_LEN];
    let mut got = 0;
    while got < header.len() {
        match r.read(&mut header[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(NetError::Closed { last_good }),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(transport(e)),
        }
    }
    let total = message_len(&header).map_err(|source| NetError::Wire { last_good, source })?;
    let mut buf = vec![0u8; total];
    buf[..FRAME_HEADER_LEN].copy_from_slice(&header);
    r.read_exact(&mut buf[FRAME_HEADER_LEN..]).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => NetError::Closed { last_good },
        _ => transport(e),
    })?;
    let (msg, used) = StreamMessage::decode(&buf).map_err(|source| NetError::Wire { last_good, source })?;
    Ok(Some((msg, used)))
}

/// One frame to send with its capture pose and time.
#[derive(Debug, Clone, PartialEq)]
pub struct OutgoingFrame {
    pub frame: Frame,
    pub pose: CameraPose,
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SendOutcome {
    pub transcript: Transcript,
    /// What the receiver must rebuild, as decoded on the sender side.
    pub expected: Vec<Frame>,
}

/// Streams `frames` (indexed from 0) and the closing End message.
pub fn send_session<W: Write, R: ReferenceRenderer>(
    w: &mut W,
    renderer: &R,
    mode: SessionMode,
    q: u8,
    frames: &[OutgoingFrame],
) -> Result<SendOutcome, NetError> {
    let (width, height) = frames.first().map_or((0, 0), |f| (f.frame.width(), f.frame.height()));
    let mut tx = Sender::new(renderer, mode, width, height, q)?;
    let mut transcript = Transcript::default();
    let mut expected = Vec::with_capacity(frames.len());
    let mut last_good = None;
    let put = |w: &mut W, msg: &StreamMessage, transcript: &mut Transcript, last_good: Option<u32>| {
        let bytes = write_message(w, msg).map_err(|source| NetError::Transport { last_good, source })?;
        transcript.entries.push(TranscriptEntry { direction: Direction::Send, kind: msg.kind(), bytes });
        Ok::<_, NetError>(())
    };
    put(w, &tx.hello(), &mut transcript, last_good)?;
    for (i, f) in frames.iter().enumerate() {
        let idx = u32::try_from(i).expect("frame count fits u32");
        let (msgs, rebuilt) = tx.frame(idx, &f.frame, &f.pose, f.time)?;
        for m in &msgs {
            put(w, m, &mut transcript, last_good)?;
        }
        expected.push(rebuilt);
        last_good = Some(idx);
    }
    put(w, &tx.end(), &mut transcript, last_good)?;
    w.flush().map_err(|source| NetError::Transport { last_good, source })?;
    Ok(SendOutcome { transcript, expected })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecvOutcome {
    pub transcript: Transcript,
    pub frames: Vec<Frame>,
}

/// Consumes a whole session; stops right after the End message.
pub fn recv_session<Rd: Read, R: ReferenceRenderer>(r: &mut Rd, renderer: &R, mode: SessionMode) -> Result<RecvOutcome, NetError> {
    let mut rx = Receiver::new(renderer, mode);
    let mut transcript = Transcript::default();
    let mut frames = Vec::new();
    while !rx.is_done() {
        let last_good = rx.last_frame();
        let (msg, bytes) = read_message(r, last_good)?.ok_or(NetError::Closed { last_good })?;
        transcript.entries.push(TranscriptEntry { direction: Direction::Recv, kind: msg.kind(), bytes });
        if let ReceiverEvent::Frame { frame, .. } = rx.handle(msg)? {
            frames.push(frame);
        }
    }
    Ok(RecvOutcome { transcript, frames })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionReport {
    pub sent: SendOutcome,
    pub received: RecvOutcome,
    /// Kernel counters, TCP sessions only.
    pub os_bytes: Option<TcpCounters>,
}

impl SessionReport {
    /// Sender and receiver transcripts in one table.
    pub fn transcript(&self) -> Transcript {
        let mut entries = self.sent.transcript.entries.clone();
        entries.extend(self.received.transcript.entries.iter().cloned());
        Transcript { entries }
    }
}

/// The more telling of two failures: a receiver-side rejection explains the
/// broken transport the sender then sees.
fn pick<A, B>(sent: Result<A, NetError>, received: Result<B, NetError>) -> Result<(A, B), NetError> {
    match (sent, received) {
        (Ok(a), Ok(b)) => Ok((a, b)),
        (Err(NetError::Transport { .. } | NetError::Closed { .. }), Err(e)) => Err(e),
        (Err(e), _) | (_, Err(e)) => Err(e),
    }
}

fn join<T>(h: std::thread::ScopedJoinHandle<'_, Result<T, NetError>>) -> Result<T, NetError> {
    h.join().unwrap_or_else(|_| Err(NetError::Peer("session thread panicked".into())))
}

/// Sender and receiver on two threads connected by an OS pipe.
pub fn run_pipe_session<R: ReferenceRenderer + Sync>(
    tx_renderer: &R,
    rx_renderer: &R,
    mode: SessionMode,
    q: u8,
    frames: &[OutgoingFrame],
) -> Result<SessionReport, NetError> {
    let (mut reader, mut writer) = io::pipe().map_err(|source| NetError::Transport { last_good: None, source })?;
    std::thread::scope(|s| {
        let rx = s.spawn(move || recv_session(&mut reader, rx_renderer, mode));
        let sent = send_session(&mut writer, tx_renderer, mode, q, frames);
        drop(writer);
        let (sent, received) = pick(sent, join(rx))?;
        Ok(SessionReport { sent, received, os_bytes: None })
    })
}

/// Kernel byte counters of one TCP session.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TcpCounters {
    /// Payload bytes the peer acknowledged, read on the sending socket.
    pub sender_acked: u64,
    /// Payload bytes received, read on the receiving socket.
    pub receiver_received: u64,
}

/// `(bytes_acked, bytes_received)` from `TCP_INFO`.
#[cfg(target_os = "linux")]
pub fn tcp_info_bytes(stream: &TcpStream) -> io::Result<(u64, u64)> {
    use std::os::fd::AsRawFd;
    let mut info: libc::tcp_info = unsafe { std::mem::zeroed() };
    let mut len = std::mem::size_of::<libc::tcp_info>() as libc::socklen_t;
    // SAFETY: `info` is a valid, writable tcp_info of `len` bytes and the fd is open.
    let rc = unsafe {
        libc::getsockopt(
            stream.as_raw_fd(),
            libc::IPPROTO_TCP,
            libc::TCP_INFO,
            (&mut info as *mut libc::tcp_info).cast(),
            &mut len,
        )
    };
    if rc != 0 {
        return Err(io::Error::last_os_error());
    }
    Ok((info.tcpi_bytes_acked, info.tcpi_bytes_received))
}

#[cfg(not(target_os = "linux"))]
pub fn tcp_info_bytes(_stream: &TcpStream) -> io::Result<(u64, u64)> {
    Err(io::Error::new(io::ErrorKind::Unsupported, "TCP_INFO byte counters need Linux"))
}

/// Sender half over TCP. After End it waits for the receiver to close, so
/// every byte has been acknowledged and no FIN of ours is counted yet. The
/// counter is taken relative to its value on entry, which drops the SYN a
/// connecting socket counts as acknowledged.
pub fn tcp_send<R: ReferenceRenderer>(
    mut stream: TcpStream,
    renderer: &R,
    mode: SessionMode,
    q: u8,
    frames: &[OutgoingFrame],
) -> Result<(SendOutcome, Option<u64>), NetError> {
    let base = tcp_info_bytes(&stream).ok().map(|(a, _)| a);
    let out = send_session(&mut stream, renderer, mode, q, frames)?;
    let last_good = out.expected.len().checked_sub(1).map(|i| i as u32);
    let transport = |source| NetError::Transport { last_good, source };
    let mut rest = Vec::new();
    stream.read_to_end(&mut rest).map_err(transport)?;
    if !rest.is_empty() {
        return Err(NetError::Peer(format!("receiver sent {} unexpected bytes", rest.len())));
    }
    let acked = base.zip(tcp_info_bytes(&stream).ok()).map(|(b, (a, _))| a - b);
    Ok((out, acked))
}

/// Receiver half over TCP. Reads the counters after End, then closes.
pub fn tcp_recv<R: ReferenceRenderer>(mut stream: TcpStream, renderer: &R, mode: SessionMode) -> Result<(RecvOutcome, Option<u64>), NetError> {
    let out = recv_session(&mut stream, renderer, mode)?;
    let received = tcp_info_bytes(&stream).ok().map(|(_, r)| r);
    drop(stream);
    Ok((out, received))
}

/// Both halves over a loopback TCP connection.
pub fn run_tcp_session<R: ReferenceRenderer + Sync>(
    tx_renderer: &R,
    rx_renderer: &R,
    mode: SessionMode,
    q: u8,
    frames: &[OutgoingFrame],
) -> Result<SessionReport, NetError> {
    let setup = |source| NetError::Transport { last_good: None, source };
    let listener = TcpListener::bind(SocketAddr::from(([127, 0, 0, 1], 0))).map_err(setup)?;
    let addr = listener.local_addr().map_err(setup)?;
    std::thread::scope(|s| {
        let rx = s.spawn(move || {
            let (stream, _) = listener.accept().map_err(setup)?;
            tcp_recv(stream, rx_renderer, mode)
        });
        let sent = TcpStream::connect(addr).map_err(setup).and_then(|stream| tcp_send(stream, tx_renderer, mode, q, frames));
        let ((sent, acked), (received, got)) = pick(sent, join(rx))?;
        let os_bytes = acked.zip(got).map(|(sender_acked, receiver_received)| TcpCounters { sender_acked, receiver_received });
        Ok(SessionReport { sent, received, os_bytes })
    })
}
