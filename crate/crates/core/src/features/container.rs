//! Feature container: `RSFT`, u32 version, u32 frames, u32 bins, u32 channel
//! count, one byte per channel code, then f32 values in frame, bin, channel
//! order. All integers little-endian.

use std::io::{Read, Write};

use super::{ChannelKind, SpectroTensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"RSFT";
const VERSION: u32 = 1;

fn io_err(e: std::io::Error) -> Error {
    Error::Format(format!("feature container: {e}"))
}

pub fn write_features(w: &mut impl Write, t: &SpectroTensor) -> Result<()> {
    let mut buf = Vec::with_capacity(20 + t.n_channels() + 4 * t.values.len());
    buf.extend_from_slice(MAGIC);
    for v in [VERSION, t.frames as u32, t.bins as u32, t.n_channels() as u32] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend(t.channel_kinds.iter().map(|k| k.code()));
    for v in &t.values {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    w.write_all(&buf).map_err(io_err)
}

pub fn read_features(r: &mut impl Read) -> Result<SpectroTensor> {
    let mut head = [0u8; 20];
    r.read_exact(&mut head).map_err(io_err)?;
    if &head[..4] != MAGIC {
        return Err(Error::Format("not a feature container".into()));
    }
    let word = |i: usize| u32::from_le_bytes(head[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes"));
    if word(0) != VERSION {
        return Err(Error::Format(format!("feature container version {}", word(0))));
    }
    let (frames, bins, nch) = (word(1) as usize, word(2) as usize, word(3) as usize);
    let mut codes = vec![0u8; nch];
    r.read_exact(&mut codes).map_err(io_err)?;
    let kinds = codes
        .iter()
        .map(|&c| ChannelKind::from_code(c).ok_or_else(|| Error::Format(format!("channel code {c}"))))
        .collect::<Result<Vec<_>>>()?;
    let n = frames
        .checked_mul(bins)
        .and_then(|v| v.checked_mul(nch))
        .ok_or_else(|| Error::Format("feature dimensions overflow".into()))?;
    let mut raw = vec![0u8; 4 * n];
    r.read_exact(&mut raw).map_err(io_err)?;
    let values = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
        .collect();
    SpectroTensor::new(frames, bins, kinds, values)
}
