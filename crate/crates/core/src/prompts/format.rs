//! `.pst` prompt files.
//!
//! Little-endian layout, 35-byte header then payload:
//!
//! | bytes | field                                   |
//! |-------|-----------------------------------------|
//! | 4     | magic `PSTv`                            |
//! | 2     | version (u16)                           |
//! | 4     | height (u32)                            |
//! | 4     | width (u32)                             |
//! | 4     | frame (u32)                             |
//! | 1     | provenance code                         |
//! | 8     | gamma (f64), `0.0` when absent          |
//! | 8     | seed (i64), `i64::MIN` when absent      |
//! | 12hw  | channel-major f32 payload               |

use std::path::Path;

use super::{PromptSample, PromptSpec, Provenance, CHANNELS};
use crate::error::{Error, Result};

pub const PST_MAGIC: &[u8; 4] = b"PSTv";
pub const PST_VERSION: u16 = 1;
const HEADER_LEN: usize = 35;
const NO_SEED: i64 = i64::MIN;

pub fn encode_prompt(prompt: &PromptSample) -> Result<Vec<u8>> {
    let spec = prompt.spec();
    let dim = |what: &'static str, v: usize| {
        u32::try_from(v).map_err(|_| Error::OutOfRange {
            what,
            value: v as i64,
            range: format!("0..={}", u32::MAX),
        })
    };
    if prompt.seed == Some(NO_SEED) {
        return Err(Error::OutOfRange {
            what: "seed",
            value: NO_SEED,
            range: format!("{}..={}", NO_SEED + 1, i64::MAX),
        });
    }
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * prompt.delta().len());
    out.extend_from_slice(PST_MAGIC);
    out.extend_from_slice(&PST_VERSION.to_le_bytes());
    out.extend_from_slice(&dim("height", spec.height)?.to_le_bytes());
    out.extend_from_slice(&dim("width", spec.width)?.to_le_bytes());
    out.extend_from_slice(&dim("frame", spec.frame)?.to_le_bytes());
    out.push(prompt.provenance.code());
    out.extend_from_slice(&prompt.gamma.unwrap_or(0.0).to_le_bytes());
    out.extend_from_slice(&prompt.seed.unwrap_or(NO_SEED).to_le_bytes());
    for v in prompt.delta() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn take<const N: usize>(bytes: &[u8], at: &mut usize) -> [u8; N] {
    let out = bytes[*at..*at + N].try_into().expect("length checked");
    *at += N;
    out
}

pub fn decode_prompt(bytes: &[u8]) -> Result<PromptSample> {
    if bytes.len() < 4 || &bytes[..4] != PST_MAGIC {
        return Err(Error::BadMagic { expected: "PSTv" });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::InvalidHeader(format!(
            "{} bytes is shorter than the {HEADER_LEN}-byte header",
            bytes.len()
        )));
    }
    let mut at = 4;
    let version = u16::from_le_bytes(take(bytes, &mut at));
    if version != PST_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: PST_VERSION,
        });
    }
    let height = u32::from_le_bytes(take(bytes, &mut at)) as usize;
    let width = u32::from_le_bytes(take(bytes, &mut at)) as usize;
    let frame = u32::from_le_bytes(take(bytes, &mut at)) as usize;
    let [code] = take::<1>(bytes, &mut at);
    let gamma_bits = take::<8>(bytes, &mut at);
    let gamma = f64::from_le_bytes(gamma_bits);
    let seed = i64::from_le_bytes(take(bytes, &mut at));

    let spec = PromptSpec {
        height,
        width,
        frame,
    };
    spec.validate()
        .map_err(|e| Error::InvalidHeader(e.to_string()))?;
    let provenance = Provenance::from_code(code)
        .ok_or_else(|| Error::InvalidHeader(format!("unknown provenance code {code}")))?;
    let gamma = match gamma_bits {
        [0, 0, 0, 0, 0, 0, 0, 0] => None,
        _ if gamma > 0.0 && gamma.is_finite() => Some(gamma),
        _ => return Err(Error::InvalidHeader(format!("gamma {gamma} is not positive"))),
    };
    let seed = (seed != NO_SEED).then_some(seed);

    let expected = (CHANNELS as u128) * (height as u128) * (width as u128) * 4;
    let found = (bytes.len() - HEADER_LEN) as u128;
    if expected != found {
        return Err(Error::DimensionMismatch(format!(
            "payload has {found} bytes, header implies {expected}"
        )));
    }
    let delta = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
        .collect::<Vec<_>>();
    PromptSample::new(spec, delta, provenance, gamma, seed)
}

pub fn load_prompt(path: impl AsRef<Path>) -> Result<PromptSample> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_prompt(&bytes)
}

pub fn write_prompt(prompt: &PromptSample, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_prompt(prompt)?).map_err(|e| Error::io(path, e))
}
