//! Binary recording layout:
//!
//! ```text
//! magic      8 bytes   b"TPREC\0\x01\0"
//! header_len u64 LE
//! header     header_len bytes of UTF-8 JSON:
//!            {"channels": [..], "rate": f64, "n_samples": u64, "events": [..]}
//! samples    n_channels · n_samples little-endian f32, row-major (channel by channel)
//! ```

use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{ContinuousRecording, Event};
use crate::{Error, Result};

pub const RECORDING_MAGIC: [u8; 8] = *b"TPREC\0\x01\0";

/// Refuse headers larger than this before allocating.
const MAX_HEADER_BYTES: u64 = 1 << 30;

#[derive(Serialize, Deserialize)]
struct Header {
    channels: Vec<String>,
    rate: f64,
    n_samples: u64,
    events: Vec<Event>,
}

pub fn write_recording<W: Write>(rec: &ContinuousRecording, mut out: W) -> Result<()> {
    let header = Header {
        channels: rec.channels().to_vec(),
        rate: rec.rate(),
        n_samples: rec.n_samples() as u64,
        events: rec.events().to_vec(),
    };
    let header = serde_json::to_vec(&header)?;
    out.write_all(&RECORDING_MAGIC)?;
    out.write_all(&(header.len() as u64).to_le_bytes())?;
    out.write_all(&header)?;
    let data = rec.data();
    let mut buf = Vec::with_capacity(4 * data.len());
    for row in data.row_iter() {
        for &v in row.iter() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    out.flush()?;
    Ok(())
}

pub fn read_recording<R: Read>(mut input: R) -> Result<ContinuousRecording> {
    let mut magic = [0u8; 8];
    read_exact(&mut input, &mut magic, "magic")?;
    if magic != RECORDING_MAGIC {
        return Err(Error::Format("not a recording file (bad magic)".into()));
    }
    let mut len = [0u8; 8];
    read_exact(&mut input, &mut len, "header length")?;
    let len = u64::from_le_bytes(len);
    if len > MAX_HEADER_BYTES {
        return Err(Error::Format(format!("implausible header length {len}")));
    }
    let mut header = vec![0u8; len as usize];
    read_exact(&mut input, &mut header, "header")?;
    let header: Header = serde_json::from_slice(&header)
        .map_err(|e| Error::Format(format!("recording header: {e}")))?;
    let n_ch = header.channels.len();
    let n = usize::try_from(header.n_samples)
        .map_err(|_| Error::Format("sample count overflows".into()))?;
    let total = n_ch
        .checked_mul(n)
        .and_then(|t| t.checked_mul(4))
        .ok_or_else(|| Error::Format("sample block size overflows".into()))?;
    let mut raw = Vec::new();
    input.read_to_end(&mut raw)?;
    if raw.len() != total {
        return Err(Error::Format(format!(
            "sample block has {} bytes, header implies {total}",
            raw.len()
        )));
    }
    let values: Vec<f64> = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    let data = DMatrix::from_row_slice(n_ch, n, &values);
    ContinuousRecording::new(header.channels, data, header.rate, header.events)
        .map_err(|e| Error::Format(format!("recording header: {e}")))
}

fn read_exact<R: Read>(input: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    input.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format(format!("truncated recording ({what})")),
        _ => Error::Io(e),
    })
}
