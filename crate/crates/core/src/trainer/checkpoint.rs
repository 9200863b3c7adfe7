//! GHED head checkpoint codec.
//!
//! Layout (little-endian): magic "GHED" | version u32 = 1 | num_classes u32 |
//! d u64 | num_classes*d f64 weights row-major | num_classes f64 bias.

use std::path::Path;

use crate::binio::Cursor;
use crate::error::{Error, ParseError, Result};
use crate::mathcore::LinearHead;

pub const GHED_MAGIC: [u8; 4] = *b"GHED";
pub const GHED_VERSION: u32 = 1;

pub fn encode_head(head: &LinearHead) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + 8 * (head.weights().len() + head.bias().len()));
    out.extend_from_slice(&GHED_MAGIC);
    out.extend_from_slice(&GHED_VERSION.to_le_bytes());
    out.extend_from_slice(&(head.num_classes() as u32).to_le_bytes());
    out.extend_from_slice(&(head.dim() as u64).to_le_bytes());
    for v in head.weights().iter().chain(head.bias()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_head(bytes: &[u8]) -> Result<LinearHead, ParseError> {
    let mut cur = Cursor::new(bytes);
    cur.magic(GHED_MAGIC)?;
    let at = cur.offset();
    let version = cur.u32("version")?;
    if version != GHED_VERSION {
        return Err(ParseError::UnsupportedVersion {
            offset: at,
            version,
        });
    }
    let hdr = cur.offset();
    let k = cur.u32("class count")? as usize;
    let d = cur.u64("input dimension")?;
    if k == 0 || d == 0 {
        return Err(ParseError::InvalidHeader {
            offset: hdr,
            reason: format!("num_classes = {k} and d = {d} must both be positive"),
        });
    }
    let overflow = ParseError::SizeOverflow {
        offset: hdr,
        what: "num_classes*d*8",
    };
    let cells = usize::try_from(d)
        .ok()
        .and_then(|d| d.checked_mul(k))
        .ok_or(overflow.clone())?;
    let bytes_needed = cells.checked_mul(8).ok_or(overflow)?;
    let read_f64s = |raw: &[u8]| -> Vec<f64> {
        raw.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect()
    };
    let weights = read_f64s(cur.take(bytes_needed, "weights")?);
    let bias = read_f64s(cur.take(k * 8, "bias")?);
    cur.finish()?;
    LinearHead::from_parts(k, d as usize, weights, bias).map_err(|e| ParseError::InvalidHeader {
        offset: hdr,
        reason: e.to_string(),
    })
}

pub fn save_head(head: &LinearHead, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_head(head)).map_err(|e| Error::io(path, e))
}

pub fn load_head(path: impl AsRef<Path>) -> Result<LinearHead> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_head(&bytes).map_err(|source| Error::Parse {
        path: path.to_path_buf(),
        source,
    })
}
