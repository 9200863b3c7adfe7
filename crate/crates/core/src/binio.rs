//! Little-endian byte cursor shared by the GEMB and GHED codecs.

use crate::error::ParseError;

pub(crate) struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Cursor { buf, pos: 0 }
    }

    pub fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn take(&mut self, len: usize, what: &'static str) -> Result<&'a [u8], ParseError> {
        if self.remaining() < len {
            return Err(ParseError::Truncated {
                offset: self.offset(),
                what,
                needed: len as u64,
                available: self.remaining() as u64,
            });
        }
        let out = &self.buf[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }

    pub fn magic(&mut self, expected: [u8; 4]) -> Result<(), ParseError> {
        let offset = self.offset();
        let avail = self.remaining().min(4);
        let found = &self.buf[self.pos..self.pos + avail];
        if found != expected {
            return Err(ParseError::BadMagic {
                offset,
                expected,
                found: found.to_vec(),
            });
        }
        self.pos += 4;
        Ok(())
    }

    pub fn u32(&mut self, what: &'static str) -> Result<u32, ParseError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    pub fn u64(&mut self, what: &'static str) -> Result<u64, ParseError> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    pub fn finish(&self) -> Result<(), ParseError> {
        if self.remaining() > 0 {
            return Err(ParseError::TrailingBytes {
                offset: self.offset(),
                extra: self.remaining() as u64,
            });
        }
        Ok(())
    }
}
