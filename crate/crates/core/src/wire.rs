//! Little-endian primitive encoding shared by the dataset, model and
//! protocol codecs.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("truncated: needed {needed} more bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("invalid utf-8 string at offset {0}")]
    BadUtf8(usize),
    #[error("{0}")]
    Invalid(String),
}

/// Cursor over a byte slice.
#[derive(Debug, Clone)]
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> &'a [u8] {
        &self.buf[self.pos..]
    }

    pub fn is_empty(&self) -> bool {
        self.pos >= self.buf.len()
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(
            DecodeError::Truncated { offset: self.pos, needed: n.saturating_sub(self.buf.len() - self.pos) },
        )?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub fn skip(&mut self, n: usize) -> Result<(), DecodeError> {
        self.take(n).map(|_| ())
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], DecodeError> {
        Ok(self.take(N)?.try_into().unwrap())
    }

    pub fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.array::<1>()?[0])
    }

    pub fn u16(&mut self) -> Result<u16, DecodeError> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    pub fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    pub fn i64(&mut self) -> Result<i64, DecodeError> {
        Ok(i64::from_le_bytes(self.array()?))
    }

    pub fn f32(&mut self) -> Result<f32, DecodeError> {
        Ok(f32::from_le_bytes(self.array()?))
    }

    pub fn f64(&mut self) -> Result<f64, DecodeError> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    /// u16 length prefix followed by UTF-8 bytes.
    pub fn string(&mut self) -> Result<String, DecodeError> {
        let len = self.u16()? as usize;
        let at = self.pos;
        let raw = self.take(len)?;
        std::str::from_utf8(raw).map(str::to_owned).map_err(|_| DecodeError::BadUtf8(at))
    }

    /// u16 count followed by that many strings.
    pub fn string_list(&mut self) -> Result<Vec<String>, DecodeError> {
        let n = self.u16()? as usize;
        (0..n).map(|_| self.string()).collect()
    }

    /// u32 length prefix followed by raw bytes.
    pub fn blob(&mut self) -> Result<&'a [u8], DecodeError> {
        let len = self.u32()? as usize;
        self.take(len)
    }

    pub fn finish(&self) -> Result<(), DecodeError> {
        if self.is_empty() {
            Ok(())
        } else {
            Err(DecodeError::Invalid(format!(
                "{} trailing bytes at offset {}",
                self.buf.len() - self.pos,
                self.pos
            )))
        }
    }
}

pub fn put_u16(out: &mut Vec<u8>, v: u16) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

/// Writes a u16-length-prefixed string.
///
/// Panics if the string is longer than `u16::MAX` bytes; callers validate
/// user-supplied names before encoding.
pub fn put_str(out: &mut Vec<u8>, s: &str) {
    let len = u16::try_from(s.len()).expect("string longer than 65535 bytes");
    put_u16(out, len);
    out.extend_from_slice(s.as_bytes());
}

pub fn put_str_list<S: AsRef<str>>(out: &mut Vec<u8>, items: &[S]) {
    let n = u16::try_from(items.len()).expect("more than 65535 list entries");
    put_u16(out, n);
    for s in items {
        put_str(out, s.as_ref());
    }
}

pub fn put_blob(out: &mut Vec<u8>, b: &[u8]) {
    put_u32(out, u32::try_from(b.len()).expect("blob larger than 4 GiB"));
    out.extend_from_slice(b);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strings_and_lists() {
        let mut out = Vec::new();
        put_str(&mut out, "key");
        put_str_list(&mut out, &["a", "bc"]);
        put_blob(&mut out, &[1, 2, 3]);
        let mut r = Reader::new(&out);
        assert_eq!(r.string().unwrap(), "key");
        assert_eq!(r.string_list().unwrap(), vec!["a", "bc"]);
        assert_eq!(r.blob().unwrap(), &[1, 2, 3]);
        r.finish().unwrap();
    }

    #[test]
    fn truncation_reported() {
        let mut r = Reader::new(&[5, 0, b'a']);
        assert!(matches!(r.string(), Err(DecodeError::Truncated { .. })));
    }

    #[test]
    fn bad_utf8() {
        let mut r = Reader::new(&[1, 0, 0xFF]);
        assert_eq!(r.string(), Err(DecodeError::BadUtf8(2)));
    }
}
