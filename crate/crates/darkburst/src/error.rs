use std::io;

/// Failure to read or write one of the binary or text file formats.
#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("bad magic at offset 0: expected {expected:?}, found {found:?}")]
    BadMagic { expected: &'static str, found: Vec<u8> },
    #[error("truncated input: expected {expected} bytes, got {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("{actual} bytes present but the header describes {expected}")]
    TrailingBytes { expected: usize, actual: usize },
    #[error("invalid field at byte offset {offset}: {message}")]
    Invalid { offset: usize, message: String },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error(transparent)]
    Core(#[from] darkburst_core::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = FormatError> = std::result::Result<T, E>;

/// Little-endian cursor over a byte slice that reports offsets on failure.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn offset(&self) -> usize {
        self.pos
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(FormatError::Truncated {
            expected: usize::MAX,
            actual: self.bytes.len(),
        })?;
        if end > self.bytes.len() {
            return Err(FormatError::Truncated {
                expected: end,
                actual: self.bytes.len(),
            });
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub(crate) fn magic(&mut self, expected: &'static str) -> Result<()> {
        let n = expected.len();
        let found = &self.bytes[..n.min(self.bytes.len())];
        if found != expected.as_bytes() {
            return Err(FormatError::BadMagic {
                expected,
                found: found.to_vec(),
            });
        }
        self.pos = n;
        Ok(())
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn invalid(&self, at: usize, message: impl Into<String>) -> FormatError {
        FormatError::Invalid {
            offset: at,
            message: message.into(),
        }
    }
}
