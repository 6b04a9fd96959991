//! Little-endian fixed-width encoding shared by the checkpoint formats.

use byteorder::{ByteOrder, LittleEndian, WriteBytesExt};

/// Read past the end of the buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Truncated;

#[derive(Debug, Default)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_magic(magic: &[u8; 4]) -> Self {
        let mut enc = Self::new();
        enc.bytes(magic);
        enc
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.write_u64::<LittleEndian>(v).expect("vec write");
        self
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.write_u32::<LittleEndian>(v).expect("vec write");
        self
    }

    pub fn i64(&mut self, v: i64) -> &mut Self {
        self.buf.write_i64::<LittleEndian>(v).expect("vec write");
        self
    }

    pub fn f64(&mut self, v: f64) -> &mut Self {
        self.buf.write_f64::<LittleEndian>(v).expect("vec write");
        self
    }

    pub fn usize(&mut self, v: usize) -> &mut Self {
        self.u64(v as u64)
    }

    pub fn bool(&mut self, v: bool) -> &mut Self {
        self.buf.push(v as u8);
        self
    }

    pub fn f64_slice(&mut self, values: &[f64]) -> &mut Self {
        self.buf.reserve(values.len() * 8);
        for &v in values {
            self.f64(v);
        }
        self
    }

    pub fn bytes(&mut self, bytes: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(bytes);
        self
    }

    /// Length-prefixed byte block.
    pub fn block(&mut self, bytes: &[u8]) -> &mut Self {
        self.u64(bytes.len() as u64);
        self.bytes(bytes)
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

#[derive(Debug)]
pub struct Decoder<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn take(&mut self, len: usize) -> Result<&'a [u8], Truncated> {
        let end = self.pos.checked_add(len).ok_or(Truncated)?;
        let out = self.buf.get(self.pos..end).ok_or(Truncated)?;
        self.pos = end;
        Ok(out)
    }

    /// Consumes `magic` if present. `Ok(false)` on mismatch.
    pub fn magic(&mut self, magic: &[u8; 4]) -> Result<bool, Truncated> {
        Ok(self.take(4)? == magic)
    }

    pub fn u64(&mut self) -> Result<u64, Truncated> {
        self.take(8).map(LittleEndian::read_u64)
    }

    pub fn u32(&mut self) -> Result<u32, Truncated> {
        self.take(4).map(LittleEndian::read_u32)
    }

    pub fn i64(&mut self) -> Result<i64, Truncated> {
        self.take(8).map(LittleEndian::read_i64)
    }

    pub fn f64(&mut self) -> Result<f64, Truncated> {
        self.take(8).map(LittleEndian::read_f64)
    }

    pub fn usize(&mut self) -> Result<usize, Truncated> {
        usize::try_from(self.u64()?).map_err(|_| Truncated)
    }

    pub fn bool(&mut self) -> Result<bool, Truncated> {
        Ok(self.take(1)?[0] != 0)
    }

    /// Reads `len` doubles, rejecting lengths the buffer cannot hold before
    /// allocating.
    pub fn f64_vec(&mut self, len: usize) -> Result<Vec<f64>, Truncated> {
        let bytes = self.take(len.checked_mul(8).ok_or(Truncated)?)?;
        Ok(bytes.chunks_exact(8).map(LittleEndian::read_f64).collect())
    }

    pub fn block(&mut self) -> Result<&'a [u8], Truncated> {
        let len = self.usize()?;
        self.take(len)
    }

    /// Remaining element count sanity check for a collection of `len`
    /// items of at least `min_item_bytes` each.
    pub fn check_len(&self, len: usize, min_item_bytes: usize) -> Result<(), Truncated> {
        match len.checked_mul(min_item_bytes) {
            Some(total) if total <= self.remaining() => Ok(()),
            _ => Err(Truncated),
        }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn is_empty(&self) -> bool {
        self.remaining() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_scalars() {
        let mut enc = Encoder::with_magic(b"TEST");
        enc.u64(7).i64(-1).f64(0.1).u32(3).bool(true).block(b"abc");
        let bytes = enc.finish();
        let mut dec = Decoder::new(&bytes);
        assert!(dec.magic(b"TEST").unwrap());
        assert_eq!(dec.u64().unwrap(), 7);
        assert_eq!(dec.i64().unwrap(), -1);
        assert_eq!(dec.f64().unwrap().to_bits(), 0.1f64.to_bits());
        assert_eq!(dec.u32().unwrap(), 3);
        assert!(dec.bool().unwrap());
        assert_eq!(dec.block().unwrap(), b"abc");
        assert!(dec.is_empty());
        assert_eq!(dec.u64(), Err(Truncated));
    }

    #[test]
    fn huge_length_prefix_is_rejected() {
        let mut enc = Encoder::new();
        enc.u64(u64::MAX);
        let bytes = enc.finish();
        let mut dec = Decoder::new(&bytes);
        assert_eq!(dec.block(), Err(Truncated));
    }
}
