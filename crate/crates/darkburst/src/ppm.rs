//! Binary PPM (P6, maxval 255) reading and writing.

use std::fs;
use std::path::Path;

use darkburst_core::Image;

use crate::error::{FormatError, Result};

pub fn encode(img: &Image) -> Result<Vec<u8>> {
    if img.channels != 3 {
        return Err(FormatError::Invalid {
            offset: 0,
            message: format!("PPM holds 3 channels, image has {}", img.channels),
        });
    }
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.to_interleaved_u8());
    Ok(out)
}

/// Skips whitespace and `#` comments, then reads one decimal header field.
fn field(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                    *pos += 1;
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            _ => break,
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(u8::is_ascii_digit) {
        *pos += 1;
    }
    if start == *pos {
        return Err(FormatError::Invalid {
            offset: start,
            message: "expected a decimal header field".into(),
        });
    }
    std::str::from_utf8(&bytes[start..*pos])
        .unwrap()
        .parse()
        .map_err(|_| FormatError::Invalid {
            offset: start,
            message: "header field out of range".into(),
        })
}

pub fn decode(bytes: &[u8]) -> Result<Image> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(FormatError::BadMagic {
            expected: "P6",
            found: bytes[..bytes.len().min(2)].to_vec(),
        });
    }
    let mut pos = 2;
    let width = field(bytes, &mut pos)?;
    let height = field(bytes, &mut pos)?;
    let maxval_at = pos;
    let maxval = field(bytes, &mut pos)?;
    if maxval != 255 {
        return Err(FormatError::Invalid {
            offset: maxval_at,
            message: format!("only maxval 255 is supported, found {maxval}"),
        });
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(FormatError::Invalid {
            offset: pos,
            message: "missing whitespace after maxval".into(),
        });
    }
    pos += 1;
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(3))
        .and_then(|n| n.checked_add(pos))
        .ok_or(FormatError::Invalid {
            offset: 2,
            message: "dimensions overflow".into(),
        })?;
    if bytes.len() < expected {
        return Err(FormatError::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    Ok(Image::from_interleaved_u8(3, height, width, &bytes[pos..expected])?)
}

pub fn read(path: impl AsRef<Path>) -> Result<Image> {
    decode(&fs::read(path)?)
}

pub fn write(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    fs::write(path, encode(img)?)?;
    Ok(())
}
