//! DBW1 named-tensor files and model checkpoints.
//!
//! A DBW1 payload is the magic `"DBW1"` followed, per tensor, by a u16 name
//! length, the UTF-8 name, a u8 rank, u32 extents and f32 values, all
//! little-endian. A checkpoint prefixes the payload with the architecture
//! (depth and base width as u32) so it can be validated on load.

use std::fs;
use std::path::Path;

use darkburst_core::model::{ArchitectureConfig, RfcnParams};
use darkburst_core::optim::AdamState;
use darkburst_core::Tensor;

use crate::error::{FormatError, Reader, Result};

pub const MAGIC: &str = "DBW1";
pub const CONFIG_HEADER_LEN: usize = 8;

pub fn encode_tensors<'a>(entries: impl IntoIterator<Item = (&'a str, &'a Tensor<f32>)>) -> Result<Vec<u8>> {
    let mut out = MAGIC.as_bytes().to_vec();
    for (name, t) in entries {
        let len = u16::try_from(name.len()).map_err(|_| FormatError::Invalid {
            offset: out.len(),
            message: format!("tensor name of {} bytes is too long", name.len()),
        })?;
        let rank = u8::try_from(t.shape().len()).map_err(|_| FormatError::Invalid {
            offset: out.len(),
            message: format!("rank {} is too large", t.shape().len()),
        })?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(rank);
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| FormatError::Invalid {
                offset: out.len(),
                message: format!("extent {d} does not fit in u32"),
            })?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn decode_tensors_at(r: &mut Reader<'_>) -> Result<Vec<(String, Tensor<f32>)>> {
    r.magic(MAGIC)?;
    let mut out = Vec::new();
    while r.remaining() > 0 {
        let len = r.u16()? as usize;
        let name_at = r.offset();
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| r.invalid(name_at, "tensor name is not UTF-8"))?
            .to_owned();
        let rank = r.u8()? as usize;
        let shape = (0..rank).map(|_| Ok(r.u32()? as usize)).collect::<Result<Vec<_>>>()?;
        let count_at = r.offset();
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| r.invalid(count_at, format!("extents of `{name}` overflow")))?;
        if count > r.remaining() {
            return Err(FormatError::Truncated {
                expected: count_at + count,
                actual: count_at + r.remaining(),
            });
        }
        let data = r
            .take(count)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        out.push((name, Tensor::new(&shape, data)?));
    }
    Ok(out)
}

pub fn decode_tensors(bytes: &[u8]) -> Result<Vec<(String, Tensor<f32>)>> {
    decode_tensors_at(&mut Reader::new(bytes))
}

pub fn encode_checkpoint(params: &RfcnParams<f32>) -> Result<Vec<u8>> {
    let cfg = params.config();
    let mut out = Vec::new();
    out.extend_from_slice(&(cfg.depth as u32).to_le_bytes());
    out.extend_from_slice(&(cfg.base_channels as u32).to_le_bytes());
    out.extend(encode_tensors(params.params().iter().map(|p| (p.name.as_str(), &p.tensor)))?);
    Ok(out)
}

/// Reads only the architecture header.
pub fn decode_config(bytes: &[u8]) -> Result<ArchitectureConfig> {
    if bytes.len() < CONFIG_HEADER_LEN {
        return Err(FormatError::Truncated {
            expected: CONFIG_HEADER_LEN,
            actual: bytes.len(),
        });
    }
    let depth = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let base = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    ArchitectureConfig::new(depth, base).map_err(|e| FormatError::Invalid {
        offset: 0,
        message: e.to_string(),
    })
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<RfcnParams<f32>> {
    let config = decode_config(bytes)?;
    let tensors = decode_tensors(&bytes[CONFIG_HEADER_LEN..]).map_err(|e| match e {
        FormatError::Invalid { offset, message } => FormatError::Invalid {
            offset: offset + CONFIG_HEADER_LEN,
            message,
        },
        FormatError::Truncated { expected, actual } => FormatError::Truncated {
            expected: expected + CONFIG_HEADER_LEN,
            actual: actual + CONFIG_HEADER_LEN,
        },
        other => other,
    })?;
    Ok(RfcnParams::from_tensors(config, tensors)?)
}

pub fn save(path: impl AsRef<Path>, params: &RfcnParams<f32>) -> Result<()> {
    fs::write(path, encode_checkpoint(params)?)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<RfcnParams<f32>> {
    decode_checkpoint(&fs::read(path)?)
}

/// Adam moments as a DBW1 payload with entries `m.<param>` and `v.<param>`.
pub fn encode_moments(params: &RfcnParams<f32>, adam: &AdamState<f32>) -> Result<Vec<u8>> {
    let names: Vec<(String, &Tensor<f32>)> = params
        .params()
        .iter()
        .zip(&adam.m)
        .map(|(p, m)| (format!("m.{}", p.name), m))
        .chain(params.params().iter().zip(&adam.v).map(|(p, v)| (format!("v.{}", p.name), v)))
        .collect();
    encode_tensors(names.iter().map(|(n, t)| (n.as_str(), *t)))
}

/// Rebuilds optimizer state from [`encode_moments`] output.
pub fn decode_moments(
    bytes: &[u8],
    params: &RfcnParams<f32>,
    step: u64,
    learning_rate: f64,
) -> Result<AdamState<f32>> {
    let tensors = decode_tensors(bytes)?;
    let n = params.params().len();
    if tensors.len() != 2 * n {
        return Err(FormatError::Invalid {
            offset: 0,
            message: format!("expected {} moment tensors, found {}", 2 * n, tensors.len()),
        });
    }
    let mut adam = AdamState::new(learning_rate, params.params());
    for (i, (name, t)) in tensors.into_iter().enumerate() {
        let (kind, p) = if i < n { ("m", &params.params()[i]) } else { ("v", &params.params()[i - n]) };
        if name != format!("{kind}.{}", p.name) || t.shape() != p.tensor.shape() {
            return Err(FormatError::Invalid {
                offset: 0,
                message: format!("moment `{name}` {:?} does not match `{}` {:?}", t.shape(), p.name, p.tensor.shape()),
            });
        }
        if i < n {
            adam.m[i] = t;
        } else {
            adam.v[i - n] = t;
        }
    }
    adam.t = step;
    Ok(adam)
}

#[cfg(test)]
mod tests {
    use super::*;
    use darkburst_core::model::{build_model, param_count};

    #[test]
    fn checkpoint_round_trip() {
        let cfg = ArchitectureConfig::new(2, 2).unwrap();
        let p = build_model::<f32>(cfg, 4).unwrap();
        let bytes = encode_checkpoint(&p).unwrap();
        assert_eq!(decode_checkpoint(&bytes).unwrap(), p);
        assert_eq!(encode_checkpoint(&decode_checkpoint(&bytes).unwrap()).unwrap(), bytes);
        let headers: usize = p.params().iter().map(|q| 2 + q.name.len() + 1 + 4 * q.tensor.shape().len()).sum();
        assert_eq!((bytes.len() - CONFIG_HEADER_LEN - 4 - headers) / 4, param_count(&cfg));
    }

    #[test]
    fn config_mismatch_is_rejected() {
        let p = build_model::<f32>(ArchitectureConfig::new(2, 2).unwrap(), 4).unwrap();
        let mut bytes = encode_checkpoint(&p).unwrap();
        bytes[4] = 3;
        assert!(decode_checkpoint(&bytes).is_err());
        let mut bytes = encode_checkpoint(&p).unwrap();
        bytes[0] = 0;
        assert!(matches!(decode_checkpoint(&bytes), Err(FormatError::Invalid { offset: 0, .. })));
    }

    #[test]
    fn truncated_payload() {
        let p = build_model::<f32>(ArchitectureConfig::new(2, 1).unwrap(), 4).unwrap();
        let bytes = encode_checkpoint(&p).unwrap();
        assert!(matches!(
            decode_checkpoint(&bytes[..bytes.len() - 3]),
            Err(FormatError::Truncated { .. })
        ));
        assert!(matches!(decode_tensors(b"DBW0"), Err(FormatError::BadMagic { .. })));
    }

    #[test]
    fn moments_round_trip() {
        let p = build_model::<f32>(ArchitectureConfig::new(2, 1).unwrap(), 4).unwrap();
        let mut adam = AdamState::new(1e-3, p.params());
        adam.m[0].data_mut()[0] = 0.25;
        adam.v[1].data_mut()[0] = 0.5;
        adam.t = 7;
        let bytes = encode_moments(&p, &adam).unwrap();
        assert_eq!(decode_moments(&bytes, &p, 7, 1e-3).unwrap(), adam);
    }
}
