//! On-disk weight bundle.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"LTIM" | version: u32 | manifest_len: u64 | manifest (UTF-8 JSON) | payload
//! ```
//!
//! The payload is the concatenation of every tensor as raw IEEE-754 values in
//! row-major order, in canonical tensor order. The manifest records the model
//! config, a directory of `{name, dtype, shape, offset, length}` entries
//! (offsets relative to the payload start) and a SHA-256 of the payload.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{Dtype, ModelConfig};
use crate::error::{BundleError, Result};
use crate::real::Real;
use crate::weights::{tensor_specs, ModelWeights};

pub const MAGIC: &[u8; 4] = b"LTIM";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub length: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub config: ModelConfig,
    pub payload_bytes: u64,
    pub checksum: String,
    pub tensors: Vec<TensorEntry>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(7 + 64);
    s.push_str("sha256:");
    for b in digest.iter() {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// Serializes weights into bundle bytes, storing tensors as `config.dtype`.
pub fn encode_bundle<T: Real>(weights: &ModelWeights<T>, config: &ModelConfig) -> Result<Vec<u8>> {
    config.validate()?;
    weights.check_matches(config)?;

    let mut payload = Vec::new();
    let mut entries = Vec::new();
    for (name, view) in weights.named_tensors() {
        let offset = payload.len() as u64;
        for &v in view.iter() {
            match config.dtype {
                Dtype::F32 => payload.extend_from_slice(&(v.as_f64() as f32).to_le_bytes()),
                Dtype::F64 => payload.extend_from_slice(&v.as_f64().to_le_bytes()),
            }
        }
        entries.push(TensorEntry {
            name,
            dtype: config.dtype,
            shape: view.shape().to_vec(),
            offset,
            length: payload.len() as u64 - offset,
        });
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        config: config.clone(),
        payload_bytes: payload.len() as u64,
        checksum: sha256_hex(&payload),
        tensors: entries,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| BundleError::Manifest(e.to_string()))?;

    let mut out = Vec::with_capacity(HEADER_LEN + text.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(text.len() as u64).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Splits bundle bytes into the parsed manifest and the payload slice.
pub fn split_bundle(bytes: &[u8]) -> Result<(Manifest, &[u8])> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(BundleError::BadMagic.into());
    }
    if bytes.len() < HEADER_LEN {
        return Err(BundleError::TruncatedHeader.into());
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(BundleError::UnsupportedVersion(version).into());
    }
    let manifest_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let manifest_end = usize::try_from(manifest_len)
        .ok()
        .and_then(|m| m.checked_add(HEADER_LEN))
        .filter(|&end| end <= bytes.len())
        .ok_or(BundleError::TruncatedHeader)?;
    let text = std::str::from_utf8(&bytes[HEADER_LEN..manifest_end])
        .map_err(|e| BundleError::Manifest(format!("manifest is not UTF-8: {e}")))?;
    let manifest: Manifest = serde_json::from_str(text).map_err(|e| BundleError::Manifest(e.to_string()))?;
    Ok((manifest, &bytes[manifest_end..]))
}

/// Reassembles bundle bytes from a (possibly edited) manifest and payload.
pub fn join_bundle(manifest: &Manifest, payload: &[u8]) -> Result<Vec<u8>> {
    let text = serde_json::to_string_pretty(manifest).map_err(|e| BundleError::Manifest(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(text.len() as u64).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out.extend_from_slice(payload);
    Ok(out)
}

/// Parses and fully validates bundle bytes, converting tensors to `T`.
pub fn decode_bundle<T: Real>(bytes: &[u8]) -> Result<(ModelConfig, ModelWeights<T>)> {
    let (manifest, payload) = split_bundle(bytes)?;

    let found = sha256_hex(payload);
    if found != manifest.checksum || payload.len() as u64 != manifest.payload_bytes {
        return Err(BundleError::ChecksumMismatch {
            expected: manifest.checksum,
            found,
        }
        .into());
    }

    let config = manifest.config;
    config.validate()?;
    let expected: BTreeMap<String, Vec<usize>> =
        tensor_specs(&config).into_iter().map(|t| (t.name, t.shape)).collect();

    let mut spans = Vec::with_capacity(manifest.tensors.len());
    let mut tensors = BTreeMap::new();
    for entry in &manifest.tensors {
        let shape = expected
            .get(&entry.name)
            .ok_or_else(|| BundleError::UnexpectedTensor(entry.name.clone()))?;
        if &entry.shape != shape {
            return Err(BundleError::ShapeMismatch {
                name: entry.name.clone(),
                expected: shape.clone(),
                found: entry.shape.clone(),
            }
            .into());
        }
        if entry.dtype != config.dtype {
            return Err(BundleError::DtypeMismatch {
                name: entry.name.clone(),
                expected: config.dtype.to_string(),
                found: entry.dtype.to_string(),
            }
            .into());
        }
        let count: usize = shape.iter().product();
        let want = (count * entry.dtype.size()) as u64;
        if entry.length != want {
            return Err(BundleError::LengthMismatch {
                name: entry.name.clone(),
                expected: want,
                found: entry.length,
            }
            .into());
        }
        let end = entry
            .offset
            .checked_add(entry.length)
            .filter(|&e| e <= payload.len() as u64)
            .ok_or_else(|| BundleError::OutOfBounds(entry.name.clone()))?;
        spans.push((entry.offset, end, entry.name.clone()));

        let raw = &payload[entry.offset as usize..end as usize];
        let data: Vec<T> = match entry.dtype {
            Dtype::F32 => raw
                .chunks_exact(4)
                .map(|c| T::of(f32::from_le_bytes(c.try_into().unwrap()) as f64))
                .collect(),
            Dtype::F64 => raw
                .chunks_exact(8)
                .map(|c| T::of(f64::from_le_bytes(c.try_into().unwrap())))
                .collect(),
        };
        if data.iter().any(|v| !v.is_finite()) {
            return Err(BundleError::NonFinite(entry.name.clone()).into());
        }
        let arr = ArrayD::from_shape_vec(IxDyn(shape), data).expect("length checked");
        if tensors.insert(entry.name.clone(), arr).is_some() {
            return Err(BundleError::Manifest(format!("tensor `{}` listed twice", entry.name)).into());
        }
    }

    spans.sort();
    for pair in spans.windows(2) {
        if pair[1].0 < pair[0].1 {
            return Err(BundleError::Overlap(pair[0].2.clone(), pair[1].2.clone()).into());
        }
    }

    let weights = ModelWeights::from_tensors(&config, tensors)?;
    Ok((config, weights))
}

pub fn save_bundle<T: Real>(weights: &ModelWeights<T>, config: &ModelConfig, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_bundle(weights, config)?;
    fs::write(path, bytes).map_err(|source| BundleError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(())
}

pub fn load_bundle<T: Real>(path: impl AsRef<Path>) -> Result<(ModelConfig, ModelWeights<T>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| BundleError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_bundle(&bytes)
}

/// Reads just the manifest, e.g. to pick the compute dtype before loading.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| BundleError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(split_bundle(&bytes)?.0)
}
