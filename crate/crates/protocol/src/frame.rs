//! `[len:u32 BE][payload]` framing.

use std::io::{self, Read, Write};

/// Largest frame accepted by default (64 MiB).
pub const DEFAULT_MAX_FRAME_BYTES: usize = 64 * 1024 * 1024;

pub const HEADER_LEN: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FrameError {
    #[error("truncated frame: {available} of {needed} bytes present")]
    Truncated { needed: usize, available: usize },
    #[error("frame of {declared} bytes exceeds the {max}-byte maximum")]
    Oversized { declared: usize, max: usize },
    #[error("{extra} trailing bytes after frame")]
    TrailingBytes { extra: usize },
}

pub fn encode_frame(payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    out.extend_from_slice(payload);
    out
}

/// Returns the payload of a buffer holding exactly one frame.
pub fn decode_frame(bytes: &[u8], max: usize) -> Result<&[u8], FrameError> {
    let (payload, used) = split_frame(bytes, max)?;
    if used != bytes.len() {
        return Err(FrameError::TrailingBytes {
            extra: bytes.len() - used,
        });
    }
    Ok(payload)
}

/// Splits the first frame off `bytes`, returning its payload and the number
/// of bytes consumed.
pub fn split_frame(bytes: &[u8], max: usize) -> Result<(&[u8], usize), FrameError> {
    if bytes.len() < HEADER_LEN {
        return Err(FrameError::Truncated {
            needed: HEADER_LEN,
            available: bytes.len(),
        });
    }
    let declared = u32::from_be_bytes(bytes[..HEADER_LEN].try_into().unwrap()) as usize;
    if declared > max {
        return Err(FrameError::Oversized { declared, max });
    }
    let end = HEADER_LEN + declared;
    if bytes.len() < end {
        return Err(FrameError::Truncated {
            needed: end,
            available: bytes.len(),
        });
    }
    Ok((&bytes[HEADER_LEN..end], end))
}

#[derive(Debug, thiserror::Error)]
pub enum ReadFrameError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Frame(#[from] FrameError),
}

/// Reads one whole frame (header included) from a stream.
pub fn read_frame(r: &mut impl Read, max: usize) -> Result<Vec<u8>, ReadFrameError> {
    let mut header = [0u8; HEADER_LEN];
    r.read_exact(&mut header)?;
    let declared = u32::from_be_bytes(header) as usize;
    if declared > max {
        return Err(FrameError::Oversized { declared, max }.into());
    }
    let mut buf = vec![0u8; HEADER_LEN + declared];
    buf[..HEADER_LEN].copy_from_slice(&header);
    r.read_exact(&mut buf[HEADER_LEN..])?;
    Ok(buf)
}

pub fn write_frame(w: &mut impl Write, frame: &[u8]) -> io::Result<()> {
    w.write_all(frame)?;
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_is_big_endian_length() {
        let f = encode_frame(b"abc");
        assert_eq!(&f[..4], &[0, 0, 0, 3]);
        assert_eq!(decode_frame(&f, 16).unwrap(), b"abc");
    }

    #[test]
    fn boundary_cases() {
        let f = encode_frame(&[7u8; 10]);
        assert_eq!(decode_frame(&f, 9), Err(FrameError::Oversized { declared: 10, max: 9 }));
        assert!(decode_frame(&f, 10).is_ok());
        assert!(matches!(decode_frame(&f[..8], 10), Err(FrameError::Truncated { .. })));
        assert!(matches!(decode_frame(&f[..2], 10), Err(FrameError::Truncated { .. })));
        let mut long = f.clone();
        long.push(0);
        assert_eq!(decode_frame(&long, 10), Err(FrameError::TrailingBytes { extra: 1 }));
    }

    #[test]
    fn stream_reader_rejects_oversized_before_allocating() {
        let mut bytes: &[u8] = &[0xff, 0xff, 0xff, 0xff];
        assert!(matches!(
            read_frame(&mut bytes, 1024),
            Err(ReadFrameError::Frame(FrameError::Oversized { .. }))
        ));
        let f = encode_frame(b"hello");
        let mut r: &[u8] = &f;
        assert_eq!(read_frame(&mut r, 1024).unwrap(), f);
    }
}
