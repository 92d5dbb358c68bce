//! Little-endian byte containers for model and checkpoint files.
//!
//! The on-disk formats are deliberately plain so other implementations can
//! read them: magic bytes, a u32 format version, then length-prefixed
//! sections of u8/u32/u64/f64 values, all little-endian. The concrete
//! layouts are documented where each container is written (`nn::codec`,
//! `vae::ModelBundle::to_bytes`, `train::Checkpoint::to_bytes`).

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SerialError {
    /// File does not start with the expected magic bytes.
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    /// Container version is not one this build understands.
    VersionMismatch { expected: u32, found: u32 },
    /// Input ended before the declared content did.
    Truncated { needed: usize, remaining: usize },
    /// A decoded value violates an invariant (shape, enum tag, finiteness).
    Invalid(String),
}

impl fmt::Display for SerialError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SerialError::BadMagic { expected, found } => write!(
                f,
                "bad magic bytes: expected {:?}, found {:?}",
                expected, found
            ),
            SerialError::VersionMismatch { expected, found } => {
                write!(f, "format version mismatch: expected {expected}, found {found}")
            }
            SerialError::Truncated { needed, remaining } => {
                write!(f, "truncated input: needed {needed} bytes, {remaining} remaining")
            }
            SerialError::Invalid(msg) => write!(f, "invalid content: {msg}"),
        }
    }
}

impl core::error::Error for SerialError {}

/// Append-only little-endian writer.
#[derive(Default)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn magic(&mut self, m: &[u8; 4]) {
        self.buf.extend_from_slice(m);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64_slice(&mut self, vs: &[f64]) {
        self.u64(vs.len() as u64);
        for &v in vs {
            self.f64(v);
        }
    }

    pub fn bytes(&mut self, vs: &[u8]) {
        self.u64(vs.len() as u64);
        self.buf.extend_from_slice(vs);
    }

    pub fn str(&mut self, s: &str) {
        self.bytes(s.as_bytes());
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

/// Cursor-based little-endian reader.
pub struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Self { data, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], SerialError> {
        let remaining = self.data.len() - self.pos;
        if remaining < n {
            return Err(SerialError::Truncated { needed: n, remaining });
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn magic(&mut self, expected: &[u8; 4]) -> Result<(), SerialError> {
        let raw = self.take(4)?;
        let mut found = [0u8; 4];
        found.copy_from_slice(raw);
        if &found != expected {
            return Err(SerialError::BadMagic { expected: *expected, found });
        }
        Ok(())
    }

    pub fn version(&mut self, expected: u32) -> Result<(), SerialError> {
        let found = self.u32()?;
        if found != expected {
            return Err(SerialError::VersionMismatch { expected, found });
        }
        Ok(())
    }

    pub fn u8(&mut self) -> Result<u8, SerialError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, SerialError> {
        let raw = self.take(4)?;
        Ok(u32::from_le_bytes(raw.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, SerialError> {
        let raw = self.take(8)?;
        Ok(u64::from_le_bytes(raw.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64, SerialError> {
        let raw = self.take(8)?;
        Ok(f64::from_le_bytes(raw.try_into().unwrap()))
    }

    pub fn f64_vec(&mut self) -> Result<Vec<f64>, SerialError> {
        let n = self.u64()? as usize;
        let raw = self.take(n.checked_mul(8).ok_or(SerialError::Invalid(
            String::from("length overflow"),
        ))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn byte_vec(&mut self) -> Result<Vec<u8>, SerialError> {
        let n = self.u64()? as usize;
        Ok(self.take(n)?.to_vec())
    }

    pub fn str(&mut self) -> Result<String, SerialError> {
        let raw = self.byte_vec()?;
        String::from_utf8(raw).map_err(|_| SerialError::Invalid(String::from("non-utf8 string")))
    }

    /// Fails unless the whole input has been consumed.
    pub fn expect_end(&self) -> Result<(), SerialError> {
        if self.pos != self.data.len() {
            return Err(SerialError::Invalid(String::from("trailing bytes")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut w = Writer::new();
        w.magic(b"TEST");
        w.u32(1);
        w.u8(7);
        w.f64_slice(&[1.5, -2.25]);
        w.str("hello");
        let data = w.finish();

        let mut r = Reader::new(&data);
        r.magic(b"TEST").unwrap();
        r.version(1).unwrap();
        assert_eq!(r.u8().unwrap(), 7);
        assert_eq!(r.f64_vec().unwrap(), alloc::vec![1.5, -2.25]);
        assert_eq!(r.str().unwrap(), "hello");
        r.expect_end().unwrap();
    }

    #[test]
    fn truncated_is_detected() {
        let mut w = Writer::new();
        w.magic(b"TEST");
        w.u32(1);
        w.f64_slice(&[1.0, 2.0, 3.0]);
        let mut data = w.finish();
        data.truncate(data.len() - 4);

        let mut r = Reader::new(&data);
        r.magic(b"TEST").unwrap();
        r.version(1).unwrap();
        assert!(matches!(r.f64_vec(), Err(SerialError::Truncated { .. })));
    }

    #[test]
    fn wrong_version_is_detected() {
        let mut w = Writer::new();
        w.magic(b"TEST");
        w.u32(9);
        let data = w.finish();
        let mut r = Reader::new(&data);
        r.magic(b"TEST").unwrap();
        assert!(matches!(r.version(1), Err(SerialError::VersionMismatch { .. })));
    }
}
