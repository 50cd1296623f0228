//! Stream protocol: framed messages and the sender/receiver state machines.
//!
//! Every message is `tag u8 | body length u32 | body | CRC32(tag, length, body)`,
//! little-endian. Both ends hold the same field checkpoint; only poses and
//! residuals travel.

use alloc::vec;
use alloc::vec::Vec;

use crate::camera::{CameraError, CameraPose};
use crate::codec::{self, CodecError};
use crate::field::MultiresField;
use crate::image::Frame;
use crate::render::{render_frame, RenderError};

pub const PROTOCOL_VERSION: u16 = 1;
/// Tag and length prefix.
pub const FRAME_HEADER_LEN: usize = 5;
pub const CRC_LEN: usize = 4;
/// Upper bound on a message body accepted by the decoder.
pub const MAX_BODY_LEN: usize = 64 << 20;
pub const POSE_BODY_LEN: usize = 4 + 4 + 64 + 16;
const HELLO_BODY_LEN: usize = 2 + 32 + 2 + 2 + 1;
const END_BODY_LEN: usize = 8;

const TAG_HELLO: u8 = 1;
const TAG_POSE: u8 = 2;
const TAG_RESIDUAL: u8 = 3;
const TAG_END: u8 = 4;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WireError {
    #[error("truncated message: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("unknown message tag {0}")]
    UnknownTag(u8),
    #[error("CRC mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    BadCrc { stored: u32, computed: u32 },
    #[error("message tag {tag} cannot have a body of {len} bytes")]
    BadLength { tag: u8, len: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum StreamMessage {
    Hello { version: u16, model_id: [u8; 32], width: u16, height: u16, q: u8 },
    PoseFrame { frame_idx: u32, time: f32, pose: [f32; 16], intrinsics: [f32; 4] },
    Residual { frame_idx: u32, payload: Vec<u8> },
    End { frame_count: u32, crc32: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MessageKind {
    Hello,
    PoseFrame,
    Residual,
    End,
}

impl MessageKind {
    pub fn name(self) -> &'static str {
        match self {
            MessageKind::Hello => "hello",
            MessageKind::PoseFrame => "pose_frame",
            MessageKind::Residual => "residual",
            MessageKind::End => "end",
        }
    }
}

impl StreamMessage {
    pub fn kind(&self) -> MessageKind {
        match self {
            StreamMessage::Hello { .. } => MessageKind::Hello,
            StreamMessage::PoseFrame { .. } => MessageKind::PoseFrame,
            StreamMessage::Residual { .. } => MessageKind::Residual,
            StreamMessage::End { .. } => MessageKind::End,
        }
    }

    fn tag(&self) -> u8 {
        match self {
            StreamMessage::Hello { .. } => TAG_HELLO,
            StreamMessage::PoseFrame { .. } => TAG_POSE,
            StreamMessage::Residual { .. } => TAG_RESIDUAL,
            StreamMessage::End { .. } => TAG_END,
        }
    }

    fn body(&self) -> Vec<u8> {
        let mut b = Vec::new();
        match self {
            StreamMessage::Hello { version, model_id, width, height, q } => {
                b.extend_from_slice(&version.to_le_bytes());
                b.extend_from_slice(model_id);
                b.extend_from_slice(&width.to_le_bytes());
                b.extend_from_slice(&height.to_le_bytes());
                b.push(*q);
            }
            StreamMessage::PoseFrame { frame_idx, time, pose, intrinsics } => {
                b.extend_from_slice(&frame_idx.to_le_bytes());
                b.extend_from_slice(&time.to_le_bytes());
                for v in pose.iter().chain(intrinsics) {
                    b.extend_from_slice(&v.to_le_bytes());
                }
            }
            StreamMessage::Residual { frame_idx, payload } => {
                b.extend_from_slice(&frame_idx.to_le_bytes());
                b.extend_from_slice(payload);
            }
            StreamMessage::End { frame_count, crc32 } => {
                b.extend_from_slice(&frame_count.to_le_bytes());
                b.extend_from_slice(&crc32.to_le_bytes());
            }
        }
        b
    }

    pub fn encode(&self) -> Vec<u8> {
        let body = self.body();
        let mut out = Vec::with_capacity(FRAME_HEADER_LEN + body.len() + CRC_LEN);
        out.push(self.tag());
        out.extend_from_slice(&(body.len() as u32).to_le_bytes());
        out.extend_from_slice(&body);
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    /// Encoded size in bytes.
    pub fn wire_len(&self) -> usize {
        FRAME_HEADER_LEN + self.body().len() + CRC_LEN
    }

    /// Decodes one message from the front of `bytes`; returns it and the bytes consumed.
    pub fn decode(bytes: &[u8]) -> Result<(StreamMessage, usize), WireError> {
        let header: &[u8; FRAME_HEADER_LEN] = bytes
            .get(..FRAME_HEADER_LEN)
            .and_then(|h| h.try_into().ok())
            .ok_or(WireError::Truncated { needed: FRAME_HEADER_LEN, have: bytes.len() })?;
        let total = message_len(header)?;
        if bytes.len() < total {
            return Err(WireError::Truncated { needed: total, have: bytes.len() });
        }
        let computed = crc32fast::hash(&bytes[..total - CRC_LEN]);
        let stored = u32::from_le_bytes(bytes[total - CRC_LEN..total].try_into().expect("4 bytes"));
        if stored != computed {
            return Err(WireError::BadCrc { stored, computed });
        }
        let body = &bytes[FRAME_HEADER_LEN..total - CRC_LEN];
        let u32_at = |o: usize| u32::from_le_bytes(body[o..o + 4].try_into().expect("4 bytes"));
        let f32_at = |o: usize| f32::from_le_bytes(body[o..o + 4].try_into().expect("4 bytes"));
        let msg = match header[0] {
            TAG_HELLO => StreamMessage::Hello {
                version: u16::from_le_bytes([body[0], body[1]]),
                model_id: body[2..34].try_into().expect("32 bytes"),
                width: u16::from_le_bytes([body[34], body[35]]),
                height: u16::from_le_bytes([body[36], body[37]]),
                q: body[38],
            },
            TAG_POSE => {
                let mut pose = [0f32; 16];
                let mut intrinsics = [0f32; 4];
                for (i, v) in pose.iter_mut().chain(intrinsics.iter_mut()).enumerate() {
                    *v = f32_at(8 + 4 * i);
                }
                StreamMessage::PoseFrame { frame_idx: u32_at(0), time: f32_at(4), pose, intrinsics }
            }
            TAG_RESIDUAL => StreamMessage::Residual { frame_idx: u32_at(0), payload: body[4..].to_vec() },
            TAG_END => StreamMessage::End { frame_count: u32_at(0), crc32: u32_at(4) },
            t => return Err(WireError::UnknownTag(t)),
        };
        Ok((msg, total))
    }
}

/// Total message length implied by a 5-byte header, validated against the tag.
pub fn message_len(header: &[u8; FRAME_HEADER_LEN]) -> Result<usize, WireError> {
    let tag = header[0];
    let len = u32::from_le_bytes(header[1..5].try_into().expect("4 bytes")) as usize;
    let ok = match tag {
        TAG_HELLO => len == HELLO_BODY_LEN,
        TAG_POSE => len == POSE_BODY_LEN,
        TAG_RESIDUAL => (4..=MAX_BODY_LEN).contains(&len),
        TAG_END => len == END_BODY_LEN,
        t => return Err(WireError::UnknownTag(t)),
    };
    if !ok {
        return Err(WireError::BadLength { tag, len });
    }
    Ok(FRAME_HEADER_LEN + len + CRC_LEN)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SessionError {
    #[error("model hash mismatch: peer has a different checkpoint")]
    ModelMismatch,
    #[error("unsupported protocol version {0}")]
    Version(u16),
    #[error("unexpected {got:?} message while expecting {expected}")]
    Unexpected { got: MessageKind, expected: &'static str },
    #[error("frame index {got} does not follow {last:?}")]
    FrameOrder { got: u32, last: Option<u32> },
    #[error("frame {0} does not match the session resolution")]
    FrameShape(u32),
    #[error("end message disagrees: {0}")]
    EndMismatch(&'static str),
    #[error("frame {frame_idx}")]
    Codec { frame_idx: u32, source: CodecError },
    #[error("invalid pose")]
    Pose(#[from] CameraError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("session dimensions {0}x{1} do not fit the protocol")]
    TooLarge(usize, usize),
}

/// Renders the reference frame for a transmitted pose. Both ends must agree
/// on everything that affects the render.
pub trait ReferenceRenderer {
    fn model_id(&self) -> [u8; 32];
    fn render(&self, pose: &CameraPose, time: f64, width: usize, height: usize) -> Result<Frame, RenderError>;
}

/// A static field rendered with a fixed sample count.
#[derive(Debug, Clone)]
pub struct FieldReference<'a> {
    pub field: &'a MultiresField,
    pub n_samples: usize,
    id: [u8; 32],
}

impl<'a> FieldReference<'a> {
    pub fn new(field: &'a MultiresField, n_samples: usize) -> Self {
        FieldReference { field, n_samples, id: field.model_id() }
    }
}

impl ReferenceRenderer for FieldReference<'_> {
    fn model_id(&self) -> [u8; 32] {
        self.id
    }

    fn render(&self, pose: &CameraPose, _time: f64, width: usize, height: usize) -> Result<Frame, RenderError> {
        Ok(render_frame(self.field, pose, width, height, self.n_samples)?.rgb.to_frame())
    }
}

/// How residual payloads are predicted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionMode {
    /// Against the rendered reference.
    Reference,
    /// Against an all-zero frame (frames sent standalone; the baseline).
    Intra,
}

/// Produces the message sequence for a stream of frames.
pub struct Sender<'a, R: ReferenceRenderer> {
    renderer: &'a R,
    mode: SessionMode,
    width: usize,
    height: usize,
    q: u8,
    crc: crc32fast::Hasher,
    count: u32,
    last: Option<u32>,
}

impl<'a, R: ReferenceRenderer> Sender<'a, R> {
    pub fn new(renderer: &'a R, mode: SessionMode, width: usize, height: usize, q: u8) -> Result<Self, SessionError> {
        if width > u16::MAX as usize || height > u16::MAX as usize {
            return Err(SessionError::TooLarge(width, height));
        }
        Ok(Sender { renderer, mode, width, height, q, crc: crc32fast::Hasher::new(), count: 0, last: None })
    }

    pub fn hello(&self) -> StreamMessage {
        StreamMessage::Hello {
            version: PROTOCOL_VERSION,
            model_id: self.renderer.model_id(),
            width: self.width as u16,
            height: self.height as u16,
            q: self.q,
        }
    }

    /// PoseFrame and Residual for one frame. Returns also the frame the
    /// receiver will reconstruct.
    pub fn frame(
        &mut self,
        frame_idx: u32,
        frame: &Frame,
        pose: &CameraPose,
        time: f64,
    ) -> Result<([StreamMessage; 2], Frame), SessionError> {
        if self.last.is_some_and(|l| frame_idx <= l) {
            return Err(SessionError::FrameOrder { got: frame_idx, last: self.last });
        }
        if (frame.width(), frame.height(), frame.channels()) != (self.width, self.height, 3) {
            return Err(SessionError::FrameShape(frame_idx));
        }
        let (m, k) = pose.to_f32();
        let time = time as f32;
        let pose_msg = StreamMessage::PoseFrame { frame_idx, time, pose: m, intrinsics: k };
        let reference = reference_for(self.renderer, self.mode, &CameraPose::from_f32(&m, &k)?, time, self.width, self.height)?;
        let codec_err = |source| SessionError::Codec { frame_idx, source };
        let payload = codec::encode_frame(frame, &reference, self.q).map_err(codec_err)?;
        let rebuilt = codec::decode_frame(&payload, &reference, self.q).map_err(codec_err)?;
        self.crc.update(&payload);
        self.count += 1;
        self.last = Some(frame_idx);
        Ok(([pose_msg, StreamMessage::Residual { frame_idx, payload }], rebuilt))
    }

    pub fn end(&self) -> StreamMessage {
        StreamMessage::End { frame_count: self.count, crc32: self.crc.clone().finalize() }
    }
}

fn reference_for<R: ReferenceRenderer>(
    renderer: &R,
    mode: SessionMode,
    pose: &CameraPose,
    time: f32,
    width: usize,
    height: usize,
) -> Result<Frame, SessionError> {
    match mode {
        SessionMode::Reference => Ok(renderer.render(pose, time as f64, width, height)?),
        SessionMode::Intra => Ok(Frame::from_vec(width, height, 3, vec![0; width * height * 3]).expect("valid shape")),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReceiverEvent {
    Handshake { width: usize, height: usize, q: u8 },
    Pose { frame_idx: u32 },
    Frame { frame_idx: u32, frame: Frame },
    Finished { frame_count: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum RxState {
    AwaitHello,
    AwaitPose,
    AwaitResidual { frame_idx: u32, time: f32 },
    Done,
}

/// Consumes messages in order and rebuilds frames.
pub struct Receiver<'a, R: ReferenceRenderer> {
    renderer: &'a R,
    mode: SessionMode,
    state: RxState,
    width: usize,
    height: usize,
    q: u8,
    pose: Option<CameraPose>,
    crc: crc32fast::Hasher,
    count: u32,
    last: Option<u32>,
}

impl<'a, R: ReferenceRenderer> Receiver<'a, R> {
    pub fn new(renderer: &'a R, mode: SessionMode) -> Self {
        Receiver {
            renderer,
            mode,
            state: RxState::AwaitHello,
            width: 0,
            height: 0,
            q: 1,
            pose: None,
            crc: crc32fast::Hasher::new(),
            count: 0,
            last: None,
        }
    }

    /// Index of the last fully rebuilt frame.
    pub fn last_frame(&self) -> Option<u32> {
        self.last
    }

    pub fn is_done(&self) -> bool {
        self.state == RxState::Done
    }

    pub fn handle(&mut self, msg: StreamMessage) -> Result<ReceiverEvent, SessionError> {
        let unexpected = |expected| SessionError::Unexpected { got: msg.kind(), expected };
        match (self.state, &msg) {
            (RxState::AwaitHello, StreamMessage::Hello { version, model_id, width, height, q }) => {
                if *version != PROTOCOL_VERSION {
                    return Err(SessionError::Version(*version));
                }
                if *model_id != self.renderer.model_id() {
                    return Err(SessionError::ModelMismatch);
                }
                (self.width, self.height, self.q) = (*width as usize, *height as usize, *q);
                self.state = RxState::AwaitPose;
                Ok(ReceiverEvent::Handshake { width: self.width, height: self.height, q: self.q })
            }
            (RxState::AwaitHello, _) => Err(unexpected("hello")),
            (RxState::AwaitPose, StreamMessage::PoseFrame { frame_idx, time, pose, intrinsics }) => {
                if self.last.is_some_and(|l| *frame_idx <= l) {
                    return Err(SessionError::FrameOrder { got: *frame_idx, last: self.last });
                }
                self.pose = Some(CameraPose::from_f32(pose, intrinsics)?);
                self.state = RxState::AwaitResidual { frame_idx: *frame_idx, time: *time };
                Ok(ReceiverEvent::Pose { frame_idx: *frame_idx })
            }
            (RxState::AwaitPose, StreamMessage::End { frame_count, crc32 }) => {
                if *frame_count != self.count {
                    return Err(SessionError::EndMismatch("frame count"));
                }
                if *crc32 != self.crc.clone().finalize() {
                    return Err(SessionError::EndMismatch("payload CRC"));
                }
                self.state = RxState::Done;
                Ok(ReceiverEvent::Finished { frame_count: *frame_count })
            }
            (RxState::AwaitPose, _) => Err(unexpected("pose frame or end")),
            (RxState::AwaitResidual { frame_idx, time }, StreamMessage::Residual { frame_idx: got, payload }) => {
                if *got != frame_idx {
                    return Err(SessionError::FrameOrder { got: *got, last: Some(frame_idx) });
                }
                let pose = self.pose.take().expect("pose stored with the state");
                let reference = reference_for(self.renderer, self.mode, &pose, time, self.width, self.height)?;
                let frame = codec::decode_frame(payload, &reference, self.q)
                    .map_err(|source| SessionError::Codec { frame_idx, source })?;
                self.crc.update(payload);
                self.count += 1;
                self.last = Some(frame_idx);
                self.state = RxState::AwaitPose;
                Ok(ReceiverEvent::Frame { frame_idx, frame })
            }
            (RxState::AwaitResidual { .. }, _) => Err(unexpected("residual")),
            (RxState::Done, _) => Err(unexpected("nothing after end")),
        }
    }
}
