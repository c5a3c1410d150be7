//! Dataset files.
//!
//! Binary layout, integers little-endian:
//!
//! ```text
//! "SSAD"  u8 version (1)
//! u32 side  u64 count  u8 labeled  u8 domain (0 source, 1 target)
//! u32 class_lo  u32 class_hi
//! count × side² f64 samples, row-major
//! count × u32 labels            (only when labeled = 1)
//! ```

use std::io::Write;
use std::path::Path;

use super::{DataError, Domain, DomainDataset};

pub const DATASET_MAGIC: &[u8; 4] = b"SSAD";
const VERSION: u8 = 1;
const HEADER_LEN: usize = 4 + 1 + 4 + 8 + 1 + 1 + 4 + 4;

pub fn write_dataset(d: &DomainDataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + d.samples.len() * 8 + d.len() * 4);
    out.extend_from_slice(DATASET_MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(d.side as u32).to_le_bytes());
    out.extend_from_slice(&(d.len() as u64).to_le_bytes());
    out.push(u8::from(d.labels.is_some()));
    out.push(d.domain.tag());
    out.extend_from_slice(&d.class_range.0.to_le_bytes());
    out.extend_from_slice(&d.class_range.1.to_le_bytes());
    for v in &d.samples {
        out.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(labels) = &d.labels {
        for l in labels {
            out.extend_from_slice(&l.to_le_bytes());
        }
    }
    out
}

fn format_err(offset: usize, message: impl Into<String>) -> DataError {
    DataError::Format { offset, message: message.into() }
}

pub fn read_dataset(bytes: &[u8]) -> Result<DomainDataset, DataError> {
    if bytes.is_empty() {
        return Err(format_err(0, "empty file"));
    }
    if bytes.len() < HEADER_LEN {
        return Err(format_err(bytes.len(), format!("truncated header ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != DATASET_MAGIC {
        return Err(format_err(0, "bad magic, expected SSAD"));
    }
    if bytes[4] != VERSION {
        return Err(format_err(4, format!("unsupported version {}", bytes[4])));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let side = u32_at(5) as usize;
    let count = u64::from_le_bytes(bytes[9..17].try_into().expect("8 bytes"));
    let labeled = match bytes[17] {
        0 => false,
        1 => true,
        other => return Err(format_err(17, format!("labeled flag {other}"))),
    };
    let domain = Domain::from_tag(bytes[18]).ok_or_else(|| format_err(18, "unknown domain tag"))?;
    let class_range = (u32_at(19), u32_at(23));
    if class_range.0 > class_range.1 {
        return Err(format_err(19, "class range is reversed"));
    }
    if side == 0 {
        return Err(format_err(5, "side is zero"));
    }

    let count = usize::try_from(count).map_err(|_| format_err(9, "count too large"))?;
    let sample_bytes = count
        .checked_mul(side * side)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| format_err(9, "count too large"))?;
    let label_bytes = if labeled { count * 4 } else { 0 };
    let expected = HEADER_LEN + sample_bytes + label_bytes;
    if bytes.len() < expected {
        return Err(format_err(
            bytes.len(),
            format!("truncated: expected {expected} bytes, file has {}", bytes.len()),
        ));
    }
    if bytes.len() > expected {
        return Err(format_err(expected, format!("{} trailing bytes", bytes.len() - expected)));
    }
    let body = &bytes[HEADER_LEN..HEADER_LEN + sample_bytes];
    let samples =
        body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    let labels = if labeled {
        let start = HEADER_LEN + sample_bytes;
        let mut labels = Vec::with_capacity(count);
        for (i, c) in bytes[start..].chunks_exact(4).enumerate() {
            let l = u32::from_le_bytes(c.try_into().expect("4 bytes"));
            if l < class_range.0 || l >= class_range.1 {
                return Err(format_err(start + 4 * i, format!("label {l} outside class range")));
            }
            labels.push(l);
        }
        Some(labels)
    } else {
        None
    };
    Ok(DomainDataset { side, samples, labels, class_range, domain })
}

pub fn save_dataset(path: &Path, d: &DomainDataset) -> Result<(), DataError> {
    std::fs::write(path, write_dataset(d))?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<DomainDataset, DataError> {
    read_dataset(&std::fs::read(path)?)
}

/// One row per sample: label (or -1), then pixel values.
pub fn write_csv(d: &DomainDataset, out: &mut impl Write) -> Result<(), DataError> {
    for i in 0..d.len() {
        let label = d.labels.as_ref().map_or(-1, |l| i64::from(l[i]));
        write!(out, "{label}")?;
        for v in d.sample(i) {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}
