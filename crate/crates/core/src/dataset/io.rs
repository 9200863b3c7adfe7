//! GEMB binary codec and CSV ingest.
//!
//! GEMB layout (little-endian):
//!
//! ```text
//! magic "GEMB" | version u32 = 1 | n u64 | d u64 | num_classes u32 | num_spurious u32
//! n*d f32 features, row-major
//! n u32 class labels
//! n u32 spurious labels (only when num_spurious > 0)
//! ```

use std::path::Path;

use super::EmbeddingDataset;
use crate::binio::Cursor;
use crate::error::{Error, ParseError, Result};

pub const GEMB_MAGIC: [u8; 4] = *b"GEMB";
pub const GEMB_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 8 + 4 + 4;

pub fn encode_gemb(ds: &EmbeddingDataset) -> Vec<u8> {
    let n = ds.len();
    let extra = if ds.has_spurious() { n * 4 } else { 0 };
    let mut out = Vec::with_capacity(HEADER_LEN + n * ds.dim() * 4 + n * 4 + extra);
    out.extend_from_slice(&GEMB_MAGIC);
    out.extend_from_slice(&GEMB_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&(ds.dim() as u64).to_le_bytes());
    out.extend_from_slice(&(ds.num_classes() as u32).to_le_bytes());
    out.extend_from_slice(&(ds.num_spurious() as u32).to_le_bytes());
    for v in ds.features() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    for c in ds.class_labels() {
        out.extend_from_slice(&c.to_le_bytes());
    }
    if let Some(s) = ds.spurious_labels() {
        for v in s {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_gemb(bytes: &[u8]) -> Result<EmbeddingDataset, ParseError> {
    let mut cur = Cursor::new(bytes);
    cur.magic(GEMB_MAGIC)?;
    let version_at = cur.offset();
    let version = cur.u32("version")?;
    if version != GEMB_VERSION {
        return Err(ParseError::UnsupportedVersion {
            offset: version_at,
            version,
        });
    }
    let n_at = cur.offset();
    let n = cur.u64("row count")?;
    let d = cur.u64("feature dimension")?;
    let num_classes = cur.u32("class count")?;
    let num_spurious = cur.u32("spurious count")?;
    if n == 0 || d == 0 {
        return Err(ParseError::InvalidHeader {
            offset: n_at,
            reason: format!("n = {n} and d = {d} must both be positive"),
        });
    }
    if num_classes == 0 {
        return Err(ParseError::InvalidHeader {
            offset: n_at + 16,
            reason: "num_classes = 0".into(),
        });
    }
    let overflow = |what| ParseError::SizeOverflow { offset: n_at, what };
    let cells = n.checked_mul(d).ok_or(overflow("n*d"))?;
    let feature_bytes = cells.checked_mul(4).ok_or(overflow("n*d*4"))?;
    let feature_bytes =
        usize::try_from(feature_bytes).map_err(|_| overflow("n*d*4 exceeds address space"))?;
    let n = usize::try_from(n).map_err(|_| overflow("n exceeds address space"))?;
    let d = d as usize;
    let label_bytes = n.checked_mul(4).ok_or(overflow("n*4"))?;

    let raw = cur.take(feature_bytes, "features")?;
    let features: Vec<f64> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
        return Err(ParseError::InvalidHeader {
            offset: HEADER_LEN as u64 + pos as u64 * 4,
            reason: "non-finite feature value".into(),
        });
    }

    let read_labels = |cur: &mut Cursor<'_>, kind: &'static str, limit: u32| {
        let at = cur.offset();
        let raw = cur.take(label_bytes, kind)?;
        let mut labels = Vec::with_capacity(n);
        for (i, c) in raw.chunks_exact(4).enumerate() {
            let v = u32::from_le_bytes(c.try_into().unwrap());
            if v >= limit {
                return Err(ParseError::LabelOutOfRange {
                    offset: at + 4 * i as u64,
                    kind,
                    value: v,
                    limit,
                });
            }
            labels.push(v);
        }
        Ok(labels)
    };
    let classes = read_labels(&mut cur, "class", num_classes)?;
    let spurious = if num_spurious > 0 {
        Some(read_labels(&mut cur, "spurious", num_spurious)?)
    } else {
        None
    };
    cur.finish()?;
    EmbeddingDataset::new(d, features, classes, spurious, num_classes, num_spurious).map_err(|e| {
        ParseError::InvalidHeader {
            offset: 0,
            reason: e.to_string(),
        }
    })
}

fn parse_err(path: &Path, source: ParseError) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        source,
    }
}

/// Loads a GEMB file, or a CSV file when the extension is `.csv`.
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingDataset> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let is_csv = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        decode_csv(&bytes).map_err(|e| parse_err(path, e))
    } else {
        decode_gemb(&bytes).map_err(|e| parse_err(path, e))
    }
}

/// Writes GEMB, or CSV when the extension is `.csv`. Features are narrowed
/// to f32 either way.
pub fn save_embeddings(ds: &EmbeddingDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let is_csv = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let bytes = if is_csv {
        encode_csv(ds)
    } else {
        encode_gemb(ds)
    };
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// CSV with header `f0,...,f{d-1},class[,spurious]`. Class and spurious
/// counts are taken as one more than the largest label seen.
pub fn decode_csv(bytes: &[u8]) -> Result<EmbeddingDataset, ParseError> {
    let text = std::str::from_utf8(bytes).map_err(|e| ParseError::Csv {
        line: 0,
        reason: format!("not utf-8: {e}"),
    })?;
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(ParseError::Csv {
        line: 1,
        reason: "missing header".into(),
    })?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let has_spurious = cols.last() == Some(&"spurious");
    let label_cols = if has_spurious { 2 } else { 1 };
    if cols.len() < label_cols + 1 || cols[cols.len() - label_cols] != "class" {
        return Err(ParseError::Csv {
            line: 1,
            reason: "header must be f0,...,f{d-1},class[,spurious]".into(),
        });
    }
    let d = cols.len() - label_cols;
    for (k, c) in cols[..d].iter().enumerate() {
        if *c != format!("f{k}") {
            return Err(ParseError::Csv {
                line: 1,
                reason: format!("column {k} is {c:?}, expected \"f{k}\""),
            });
        }
    }
    let mut features = Vec::new();
    let mut classes = Vec::new();
    let mut spurious = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != cols.len() {
            return Err(ParseError::Csv {
                line: lineno,
                reason: format!("{} fields, expected {}", fields.len(), cols.len()),
            });
        }
        for f in &fields[..d] {
            let v: f32 = f.parse().map_err(|_| ParseError::Csv {
                line: lineno,
                reason: format!("bad feature value {f:?}"),
            })?;
            features.push(v as f64);
        }
        let label = |s: &str| {
            s.parse::<u32>().map_err(|_| ParseError::Csv {
                line: lineno,
                reason: format!("bad label {s:?}"),
            })
        };
        classes.push(label(fields[d])?);
        if has_spurious {
            spurious.push(label(fields[d + 1])?);
        }
    }
    let num_classes = classes.iter().max().map_or(0, |m| m + 1).max(1);
    let num_spurious = if has_spurious {
        spurious.iter().max().map_or(0, |m| m + 1)
    } else {
        0
    };
    EmbeddingDataset::new(
        d,
        features,
        classes,
        has_spurious.then_some(spurious),
        num_classes,
        num_spurious,
    )
    .map_err(|e| ParseError::Csv {
        line: 0,
        reason: e.to_string(),
    })
}

pub fn encode_csv(ds: &EmbeddingDataset) -> Vec<u8> {
    let mut out = String::new();
    let header: Vec<String> = (0..ds.dim()).map(|k| format!("f{k}")).collect();
    out.push_str(&header.join(","));
    out.push_str(",class");
    if ds.has_spurious() {
        out.push_str(",spurious");
    }
    out.push('\n');
    for i in 0..ds.len() {
        let row: Vec<String> = ds.row(i).iter().map(|v| format!("{}", *v as f32)).collect();
        out.push_str(&row.join(","));
        out.push_str(&format!(",{}", ds.class(i)));
        if let Some(s) = ds.spurious(i) {
            out.push_str(&format!(",{s}"));
        }
        out.push('\n');
    }
    out.into_bytes()
}
