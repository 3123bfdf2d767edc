use std::io::{self, Read, Write};

use thiserror::Error;

/// Header size: little-endian `u32` payload length plus one type byte.
pub const HEADER_LEN: usize = 5;
/// Largest accepted payload.
pub const MAX_PAYLOAD: usize = 1 << 31;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum MsgType {
    EncY = 0x01,
    EncU = 0x02,
    Hello = 0x03,
    Bye = 0x04,
    AbortVerification = 0x05,
}

impl TryFrom<u8> for MsgType {
    type Error = FrameError;

    fn try_from(b: u8) -> Result<Self, FrameError> {
        Ok(match b {
            0x01 => MsgType::EncY,
            0x02 => MsgType::EncU,
            0x03 => MsgType::Hello,
            0x04 => MsgType::Bye,
            0x05 => MsgType::AbortVerification,
            other => return Err(FrameError::BadType(other)),
        })
    }
}

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("truncated frame: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("unknown message type {0:#04x}")]
    BadType(u8),
    #[error("payload of {0} bytes exceeds the limit")]
    TooLong(u64),
    #[error("frame declares {declared} payload bytes but {actual} follow")]
    LengthMismatch { declared: usize, actual: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl FrameError {
    /// Errors after which the stream is still positioned at a frame boundary.
    pub fn recoverable(&self) -> bool {
        matches!(self, FrameError::BadType(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub msg_type: MsgType,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(msg_type: MsgType, payload: Vec<u8>) -> Self {
        Self { msg_type, payload }
    }

    pub fn empty(msg_type: MsgType) -> Self {
        Self::new(msg_type, Vec::new())
    }

    pub fn encode(&self) -> Result<Vec<u8>, FrameError> {
        if self.payload.len() > MAX_PAYLOAD {
            return Err(FrameError::TooLong(self.payload.len() as u64));
        }
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len());
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.push(self.msg_type as u8);
        out.extend_from_slice(&self.payload);
        Ok(out)
    }

    /// Decodes the frame at the start of `bytes`, returning it and the number
    /// of bytes consumed.
    pub fn decode(bytes: &[u8]) -> Result<(Frame, usize), FrameError> {
        if bytes.len() < HEADER_LEN {
            return Err(FrameError::Truncated { needed: HEADER_LEN, available: bytes.len() });
        }
        let len = u32::from_le_bytes(bytes[..4].try_into().expect("4 bytes")) as usize;
        if len > MAX_PAYLOAD {
            return Err(FrameError::TooLong(len as u64));
        }
        let msg_type = MsgType::try_from(bytes[4])?;
        let end = HEADER_LEN + len;
        if bytes.len() < end {
            return Err(FrameError::Truncated { needed: end, available: bytes.len() });
        }
        Ok((Frame::new(msg_type, bytes[HEADER_LEN..end].to_vec()), end))
    }

    /// Decodes a buffer that must hold exactly one frame.
    pub fn decode_exact(bytes: &[u8]) -> Result<Frame, FrameError> {
        let (frame, used) = Frame::decode(bytes)?;
        if used != bytes.len() {
            return Err(FrameError::LengthMismatch { declared: used - HEADER_LEN, actual: bytes.len() - HEADER_LEN });
        }
        Ok(frame)
    }
}

/// Reads one frame. `Ok(None)` on a clean end of stream at a frame boundary.
/// An unknown type byte is reported after its payload has been skipped.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<Frame>, FrameError> {
    let mut header = [0u8; HEADER_LEN];
    let mut filled = 0;
    while filled < HEADER_LEN {
        match r.read(&mut header[filled..]) {
            Ok(0) if filled == 0 => return Ok(None),
            Ok(0) => return Err(FrameError::Truncated { needed: HEADER_LEN, available: filled }),
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_le_bytes(header[..4].try_into().expect("4 bytes")) as usize;
    if len > MAX_PAYLOAD {
        return Err(FrameError::TooLong(len as u64));
    }
    let mut payload = Vec::new();
    let got = r.by_ref().take(len as u64).read_to_end(&mut payload)?;
    if got < len {
        return Err(FrameError::Truncated { needed: HEADER_LEN + len, available: HEADER_LEN + got });
    }
    let msg_type = MsgType::try_from(header[4])?;
    Ok(Some(Frame::new(msg_type, payload)))
}

pub fn write_frame<W: Write>(w: &mut W, frame: &Frame) -> Result<(), FrameError> {
    w.write_all(&frame.encode()?)?;
    w.flush()?;
    Ok(())
}
