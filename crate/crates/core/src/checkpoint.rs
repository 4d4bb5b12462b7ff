//! Self-describing binary checkpoints.
//!
//! Layout (little-endian):
//!
//! | bytes        | content                                   |
//! |--------------|-------------------------------------------|
//! | 0..8         | magic `LEAFNET1`                          |
//! | 8..16        | `u64` header length `H`                   |
//! | 16..16+H     | UTF-8 JSON header                         |
//! | 16+H..       | concatenated raw `f32` tensor payload     |
//!
//! The header carries the format version, class names, the architecture,
//! free-form training metadata, and a tensor table of
//! `(name, shape, dtype, offset, length)` with offsets relative to the start
//! of the payload. The payload must be exactly the sum of the table's
//! lengths.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::nn::{ModelSpec, ResNet9};

pub const MAGIC: &[u8; 8] = b"LEAFNET1";
pub const FORMAT_VERSION: u32 = 1;
const PREAMBLE: usize = 16;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CheckpointError {
    #[error("bad magic bytes (not a checkpoint file)")]
    BadMagic,
    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("truncated file: need {expected} bytes, have {actual}")]
    Truncated { expected: u64, actual: u64 },
    #[error("tensor layout error: {0}")]
    Layout(String),
    #[error("invalid header: {0}")]
    Header(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub offset: u64,
    pub length: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub class_names: Vec<String>,
    pub architecture: ModelSpec,
    #[serde(default)]
    pub metadata: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

/// A loaded checkpoint.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub class_names: Vec<String>,
    pub model: ResNet9<f32>,
    pub metadata: serde_json::Value,
}

pub fn to_bytes(
    model: &ResNet9<f32>,
    class_names: &[String],
    metadata: &serde_json::Value,
) -> Result<Vec<u8>> {
    if class_names.len() != model.num_classes() {
        return Err(Error::invalid(format!(
            "{} class names for a {}-class model",
            class_names.len(),
            model.num_classes()
        )));
    }
    let state = model.state();
    let mut tensors = Vec::with_capacity(state.len());
    let mut offset = 0u64;
    for (name, t) in &state {
        let length = (t.numel() * 4) as u64;
        tensors.push(TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            dtype: "f32".into(),
            offset,
            length,
        });
        offset += length;
    }
    let header = CheckpointHeader {
        format_version: FORMAT_VERSION,
        class_names: class_names.to_vec(),
        architecture: model.spec().clone(),
        metadata: metadata.clone(),
        tensors,
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(PREAMBLE + header_bytes.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    for (_, t) in &state {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn truncated(expected: u64, actual: usize) -> Error {
    Error::Checkpoint(CheckpointError::Truncated {
        expected,
        actual: actual as u64,
    })
}

/// Parses only the preamble and header.
pub fn read_header(bytes: &[u8]) -> Result<(CheckpointHeader, usize)> {
    if bytes.len() < MAGIC.len() {
        return Err(truncated(PREAMBLE as u64, bytes.len()));
    }
    if &bytes[..8] != MAGIC {
        return Err(CheckpointError::BadMagic.into());
    }
    if bytes.len() < PREAMBLE {
        return Err(truncated(PREAMBLE as u64, bytes.len()));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let header_end = (PREAMBLE as u64).saturating_add(header_len);
    if (bytes.len() as u64) < header_end {
        return Err(truncated(header_end, bytes.len()));
    }
    let header_end = header_end as usize;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[PREAMBLE..header_end])
        .map_err(|e| CheckpointError::Header(e.to_string()))?;
    if header.format_version != FORMAT_VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: header.format_version,
            expected: FORMAT_VERSION,
        }
        .into());
    }
    Ok((header, header_end))
}

pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    let (header, payload_start) = read_header(bytes)?;
    let layout = |msg: String| Error::Checkpoint(CheckpointError::Layout(msg));

    let mut expected_offset = 0u64;
    for e in &header.tensors {
        if e.dtype != "f32" {
            return Err(layout(format!("{}: unsupported dtype {}", e.name, e.dtype)));
        }
        let numel: u64 = e.shape.iter().map(|&d| d as u64).product();
        if e.shape.is_empty() || numel == 0 || numel * 4 != e.length {
            return Err(layout(format!(
                "{}: shape {:?} disagrees with byte length {}",
                e.name, e.shape, e.length
            )));
        }
        if e.offset != expected_offset {
            return Err(layout(format!(
                "{}: offset {} (expected {expected_offset})",
                e.name, e.offset
            )));
        }
        expected_offset += e.length;
    }
    let payload_len = (bytes.len() - payload_start) as u64;
    if payload_len < expected_offset {
        return Err(truncated(payload_start as u64 + expected_offset, bytes.len()));
    }
    if payload_len > expected_offset {
        return Err(layout(format!(
            "{} trailing bytes after the last tensor",
            payload_len - expected_offset
        )));
    }
    if header.class_names.len() != header.architecture.num_classes {
        return Err(CheckpointError::Header(format!(
            "{} class names for a {}-class architecture",
            header.class_names.len(),
            header.architecture.num_classes
        ))
        .into());
    }

    let mut model = ResNet9::<f32>::new(header.architecture.clone())
        .map_err(|e| CheckpointError::Header(format!("architecture: {e}")))?;
    let mut slots = model.state_mut();
    if slots.len() != header.tensors.len() {
        return Err(layout(format!(
            "architecture has {} tensors, file lists {}",
            slots.len(),
            header.tensors.len()
        )));
    }
    let payload = &bytes[payload_start..];
    for ((name, slot), e) in slots.iter_mut().zip(&header.tensors) {
        if *name != e.name || slot.shape() != e.shape.as_slice() {
            return Err(layout(format!(
                "expected {name} {:?}, file has {} {:?}",
                slot.shape(),
                e.name,
                e.shape
            )));
        }
        let raw = &payload[e.offset as usize..(e.offset + e.length) as usize];
        for (dst, chunk) in slot.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
            *dst = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        }
    }
    drop(slots);
    Ok(Checkpoint {
        class_names: header.class_names,
        model,
        metadata: header.metadata,
    })
}

/// Writes through a temporary file in the same directory, then renames.
pub fn save(
    path: &Path,
    model: &ResNet9<f32>,
    class_names: &[String],
    metadata: &serde_json::Value,
) -> Result<()> {
    let bytes = to_bytes(model, class_names, metadata)?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;

    fn model() -> (ResNet9<f32>, Vec<String>) {
        let mut spec = ModelSpec::resnet9(3, 8);
        spec.layers.truncate(3);
        let mut rng = Rng::new(1);
        let mut m = ResNet9::init(spec, &mut rng).unwrap();
        // make running stats non-trivial
        for (name, t) in m.state_mut() {
            if name.contains("running") {
                for (i, v) in t.data_mut().iter_mut().enumerate() {
                    *v = 0.5 + i as f32 * 0.01;
                }
            }
        }
        (m, vec!["a".into(), "b".into(), "c".into()])
    }

    #[test]
    fn round_trip_is_bitwise() {
        let (m, names) = model();
        let meta = serde_json::json!({"epochs": 5});
        let bytes = to_bytes(&m, &names, &meta).unwrap();
        assert_eq!(&bytes[..8], MAGIC);
        let ck = from_bytes(&bytes).unwrap();
        assert_eq!(ck.class_names, names);
        assert_eq!(ck.metadata, meta);
        for ((n1, a), (n2, b)) in m.state().iter().zip(ck.model.state().iter()) {
            assert_eq!(n1, n2);
            let bits = |t: &crate::tensor::Tensor<f32>| {
                t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            };
            assert_eq!(bits(a), bits(b));
        }
    }

    #[test]
    fn detects_corruption() {
        let (m, names) = model();
        let bytes = to_bytes(&m, &names, &serde_json::Value::Null).unwrap();

        let err = from_bytes(&bytes[..bytes.len() - 1]).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(CheckpointError::Truncated { .. })));

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            from_bytes(&bad).unwrap_err(),
            Error::Checkpoint(CheckpointError::BadMagic)
        ));

        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(
            from_bytes(&extra).unwrap_err(),
            Error::Checkpoint(CheckpointError::Layout(_))
        ));

        assert!(matches!(
            from_bytes(&bytes[..20]).unwrap_err(),
            Error::Checkpoint(CheckpointError::Truncated { .. })
        ));
    }

    fn rewrite_header(bytes: &[u8], edit: impl FnOnce(&mut CheckpointHeader)) -> Vec<u8> {
        let (mut header, start) = read_header(bytes).unwrap();
        edit(&mut header);
        let hb = serde_json::to_vec(&header).unwrap();
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&(hb.len() as u64).to_le_bytes());
        out.extend_from_slice(&hb);
        out.extend_from_slice(&bytes[start..]);
        out
    }

    #[test]
    fn detects_version_and_layout_errors() {
        let (m, names) = model();
        let bytes = to_bytes(&m, &names, &serde_json::Value::Null).unwrap();

        let v2 = rewrite_header(&bytes, |h| h.format_version = 2);
        assert_eq!(
            from_bytes(&v2).unwrap_err().to_string(),
            Error::Checkpoint(CheckpointError::VersionMismatch {
                found: 2,
                expected: 1
            })
            .to_string()
        );

        let bad_len = rewrite_header(&bytes, |h| h.tensors[0].length -= 4);
        assert!(matches!(
            from_bytes(&bad_len).unwrap_err(),
            Error::Checkpoint(CheckpointError::Layout(_))
        ));

        let bad_shape = rewrite_header(&bytes, |h| h.tensors[1].shape = vec![2, 32]);
        assert!(matches!(
            from_bytes(&bad_shape).unwrap_err(),
            Error::Checkpoint(CheckpointError::Layout(_))
        ));
    }
}
