//! DBRAW: a portable little-endian container for a burst of Bayer mosaics.
//!
//! ```text
//! "DBR1" | u16 frames | u32 width | u32 height | u8 bayer | u16 black | u16 white
//!        | f32 exposure_s | u8 has_ground_truth | frames * width * height u16
//!        | [width * height * 3 u8 sRGB]
//! ```

use std::fs;
use std::path::Path;

use darkburst_core::raw::BayerPattern;
use darkburst_core::synth::BurstContainer;

use crate::error::{FormatError, Reader, Result};

pub const MAGIC: &str = "DBR1";
pub const HEADER_LEN: usize = 24;
pub const EXTENSION: &str = "dbraw";

pub fn encode(c: &BurstContainer) -> Result<Vec<u8>> {
    c.validate()?;
    let (w, h) = (c.width, c.height);
    let too_big = |what: &str| FormatError::Invalid {
        offset: 0,
        message: format!("{what} does not fit the header field"),
    };
    let frames = u16::try_from(c.frame_count()).map_err(|_| too_big("frame count"))?;
    let wu = u32::try_from(w).map_err(|_| too_big("width"))?;
    let hu = u32::try_from(h).map_err(|_| too_big("height"))?;
    let gt_len = if c.ground_truth.is_some() { w * h * 3 } else { 0 };
    let mut out = Vec::with_capacity(HEADER_LEN + c.frame_count() * w * h * 2 + gt_len);
    out.extend_from_slice(MAGIC.as_bytes());
    out.extend_from_slice(&frames.to_le_bytes());
    out.extend_from_slice(&wu.to_le_bytes());
    out.extend_from_slice(&hu.to_le_bytes());
    out.push(c.pattern.code());
    out.extend_from_slice(&c.black_level.to_le_bytes());
    out.extend_from_slice(&c.white_level.to_le_bytes());
    out.extend_from_slice(&c.exposure_time.to_le_bytes());
    out.push(c.ground_truth.is_some() as u8);
    for m in &c.mosaics {
        for &s in m {
            out.extend_from_slice(&s.to_le_bytes());
        }
    }
    if let Some(gt) = &c.ground_truth {
        out.extend_from_slice(gt);
    }
    Ok(out)
}

/// Parses a container. The declared payload size is checked against the
/// input length before any sample buffer is allocated.
pub fn decode(bytes: &[u8]) -> Result<BurstContainer> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC)?;
    let frames = r.u16()? as usize;
    let width = r.u32()? as usize;
    let height = r.u32()? as usize;
    let code_at = r.offset();
    let code = r.u8()?;
    let black_level = r.u16()?;
    let white_level = r.u16()?;
    let exposure_at = r.offset();
    let exposure_time = r.f32()?;
    let gt_at = r.offset();
    let has_gt = r.u8()?;

    if frames == 0 {
        return Err(r.invalid(4, "frame count is zero"));
    }
    if width == 0 || !width.is_multiple_of(2) {
        return Err(r.invalid(6, format!("width {width} must be even and positive")));
    }
    if height == 0 || !height.is_multiple_of(2) {
        return Err(r.invalid(10, format!("height {height} must be even and positive")));
    }
    let pattern = BayerPattern::from_code(code)
        .map_err(|_| r.invalid(code_at, format!("unsupported bayer pattern code {code}")))?;
    if black_level >= white_level {
        return Err(r.invalid(
            code_at + 1,
            format!("black level {black_level} must be below white level {white_level}"),
        ));
    }
    if !(exposure_time > 0.0) || !exposure_time.is_finite() {
        return Err(r.invalid(exposure_at, format!("exposure time {exposure_time} must be positive")));
    }
    if has_gt > 1 {
        return Err(r.invalid(gt_at, format!("ground-truth flag must be 0 or 1, found {has_gt}")));
    }

    let overflow = || r.invalid(4, "declared dimensions overflow");
    let plane = width.checked_mul(height).ok_or_else(overflow)?;
    let samples = plane.checked_mul(frames).and_then(|n| n.checked_mul(2)).ok_or_else(overflow)?;
    let gt_len = if has_gt == 1 { plane.checked_mul(3).ok_or_else(overflow)? } else { 0 };
    let expected = HEADER_LEN
        .checked_add(samples)
        .and_then(|n| n.checked_add(gt_len))
        .ok_or_else(overflow)?;
    if bytes.len() < expected {
        return Err(FormatError::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(FormatError::TrailingBytes {
            expected,
            actual: bytes.len(),
        });
    }

    let mosaics = (0..frames)
        .map(|_| {
            let raw = r.take(plane * 2)?;
            Ok(raw.chunks_exact(2).map(|b| u16::from_le_bytes([b[0], b[1]])).collect())
        })
        .collect::<Result<Vec<Vec<u16>>>>()?;
    let ground_truth = if has_gt == 1 { Some(r.take(gt_len)?.to_vec()) } else { None };
    debug_assert_eq!(r.remaining(), 0);

    let container = BurstContainer {
        width,
        height,
        pattern,
        black_level,
        white_level,
        exposure_time,
        mosaics,
        ground_truth,
    };
    container.validate()?;
    Ok(container)
}

pub fn read(path: impl AsRef<Path>) -> Result<BurstContainer> {
    decode(&fs::read(path)?)
}

pub fn write(path: impl AsRef<Path>, c: &BurstContainer) -> Result<()> {
    fs::write(path, encode(c)?)?;
    Ok(())
}
