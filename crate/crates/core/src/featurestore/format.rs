//! `.fst` feature-set files.
//!
//! ```text
//! offset  size   field
//! 0       4      magic "FSTv"
//! 4       2      version (u16 LE, = 1)
//! 6       2      flags (u16 LE; bit 0: prompt_seed present)
//! 8       8      n (u64 LE)
//! 16      8      D (u64 LE)
//! 24      4      C (u32 LE)
//! 28      1      feature_kind
//! 29      1      prompt_tag
//! 30      8      prompt_seed (i64 LE, 0 when absent)
//! 38      4nD    features, f32 LE, row-major
//! ..      4n     labels, i32 LE
//! ..      4      trailer length L (u32 LE)
//! ..      L      UTF-8 JSON {"dataset_name":..,"model_name":..}
//! ```
//!
//! The trailer must be in the compact form the writer produces, so any file
//! the loader accepts is reproduced byte for byte by the writer.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FeatureKind, FeatureMeta, FeatureSet, PromptTag};
use crate::error::{Error, Result};

pub const FST_MAGIC: &[u8; 4] = b"FSTv";
pub const FST_VERSION: u16 = 1;

const HEADER_LEN: usize = 38;
const FLAG_HAS_SEED: u16 = 0x0001;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Trailer {
    dataset_name: String,
    model_name: String,
}

pub fn encode_feature_set(fs: &FeatureSet) -> Result<Vec<u8>> {
    // sets are validated on construction; re-check the payload before it hits disk
    if let Some(index) = fs.features.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue { index });
    }
    let meta = &fs.meta;
    let trailer = serde_json::to_vec(&Trailer {
        dataset_name: meta.dataset_name.clone(),
        model_name: meta.model_name.clone(),
    })?;
    let trailer_len = u32::try_from(trailer.len())
        .map_err(|_| Error::InvalidTrailer("trailer longer than 4 GiB".into()))?;

    let mut out =
        Vec::with_capacity(HEADER_LEN + 4 * fs.features.len() + 4 * fs.n_samples + 4 + trailer.len());
    out.extend_from_slice(FST_MAGIC);
    out.extend_from_slice(&FST_VERSION.to_le_bytes());
    let flags = if meta.prompt_seed.is_some() { FLAG_HAS_SEED } else { 0 };
    out.extend_from_slice(&flags.to_le_bytes());
    out.extend_from_slice(&(fs.n_samples as u64).to_le_bytes());
    out.extend_from_slice(&(fs.dim as u64).to_le_bytes());
    out.extend_from_slice(&meta.class_count.to_le_bytes());
    out.push(meta.feature_kind.code());
    out.push(meta.prompt_tag.code());
    out.extend_from_slice(&meta.prompt_seed.unwrap_or(0).to_le_bytes());
    for v in &fs.features {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for (index, &l) in fs.labels.iter().enumerate() {
        let l = i32::try_from(l).map_err(|_| Error::LabelOutOfRange {
            index,
            label: l as i64,
            class_count: meta.class_count,
        })?;
        out.extend_from_slice(&l.to_le_bytes());
    }
    out.extend_from_slice(&trailer_len.to_le_bytes());
    out.extend_from_slice(&trailer);
    Ok(out)
}

pub fn decode_feature_set(bytes: &[u8]) -> Result<FeatureSet> {
    if bytes.len() < 4 || &bytes[..4] != FST_MAGIC {
        return Err(Error::BadMagic { expected: "FSTv" });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::InvalidHeader(format!(
            "truncated header ({} of {HEADER_LEN} bytes)",
            bytes.len()
        )));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FST_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: FST_VERSION,
        });
    }
    let flags = u16::from_le_bytes([bytes[6], bytes[7]]);
    if flags & !FLAG_HAS_SEED != 0 {
        return Err(Error::InvalidHeader(format!("unknown flags {flags:#06x}")));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let dim = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let class_count = u32::from_le_bytes(bytes[24..28].try_into().unwrap());
    let kind_code = bytes[28];
    let tag_code = bytes[29];
    let seed = i64::from_le_bytes(bytes[30..38].try_into().unwrap());

    if n == 0 || dim == 0 {
        return Err(Error::DimensionMismatch(format!(
            "empty feature set (n = {n}, D = {dim})"
        )));
    }
    // all section sizes, overflow-checked against the actual byte count
    let sizes = (|| {
        let n = usize::try_from(n).ok()?;
        let dim = usize::try_from(dim).ok()?;
        let values = n.checked_mul(dim)?;
        let payload = values.checked_mul(4)?;
        let labels_end = HEADER_LEN.checked_add(payload)?.checked_add(n.checked_mul(4)?)?;
        Some((n, dim, labels_end))
    })();
    let (n, dim, labels_end) = match sizes {
        Some(s) if s.2.checked_add(4).is_some_and(|end| end <= bytes.len()) => s,
        _ => {
            return Err(Error::DimensionMismatch(format!(
                "declared n = {n}, D = {dim} exceeds the {} byte file",
                bytes.len()
            )))
        }
    };
    let trailer_len = u32::from_le_bytes(bytes[labels_end..labels_end + 4].try_into().unwrap()) as usize;
    let expected_len = labels_end + 4 + trailer_len;
    if expected_len != bytes.len() {
        return Err(Error::DimensionMismatch(format!(
            "declared n = {n}, D = {dim} implies {expected_len} bytes, file has {}",
            bytes.len()
        )));
    }

    let feature_kind = FeatureKind::from_code(kind_code)
        .ok_or_else(|| Error::InvalidHeader(format!("unknown feature kind {kind_code}")))?;
    let prompt_tag = PromptTag::from_code(tag_code)
        .ok_or_else(|| Error::InvalidHeader(format!("unknown prompt tag {tag_code}")))?;
    let prompt_seed = if flags & FLAG_HAS_SEED != 0 {
        Some(seed)
    } else if seed != 0 {
        return Err(Error::InvalidHeader(
            "prompt seed set without its presence flag".into(),
        ));
    } else {
        None
    };

    let features: Vec<f32> = bytes[HEADER_LEN..HEADER_LEN + 4 * n * dim]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if let Some(index) = features.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue { index });
    }
    let mut labels = Vec::with_capacity(n);
    for (index, c) in bytes[HEADER_LEN + 4 * n * dim..labels_end]
        .chunks_exact(4)
        .enumerate()
    {
        let label = i32::from_le_bytes(c.try_into().unwrap());
        if label < 0 || label as u32 >= class_count {
            return Err(Error::LabelOutOfRange {
                index,
                label: label as i64,
                class_count,
            });
        }
        labels.push(label as u32);
    }

    let raw_trailer = &bytes[labels_end + 4..];
    let trailer: Trailer = serde_json::from_slice(raw_trailer)
        .map_err(|e| Error::InvalidTrailer(e.to_string()))?;
    if serde_json::to_vec(&trailer)? != raw_trailer {
        return Err(Error::InvalidTrailer("trailer is not in canonical form".into()));
    }

    let meta = FeatureMeta {
        dataset_name: trailer.dataset_name,
        model_name: trailer.model_name,
        feature_kind,
        prompt_tag,
        prompt_seed,
        class_count,
    };
    FeatureSet::new(features, dim, labels, meta)
}

pub fn load_feature_set(path: impl AsRef<Path>) -> Result<FeatureSet> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_feature_set(&bytes)
}

pub fn write_feature_set(fs: &FeatureSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_feature_set(fs)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
