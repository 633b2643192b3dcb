//! Binary arithmetic coder: 32-bit range, 16-bit probabilities, byte-wise
//! renormalization with carry propagation through a cached byte.
//!
//! A probability `p` is the chance, in units of 2^-16, that a bin is 1.
//! Zero bins take the low part of the interval. The encoder flushes four
//! bytes of a final code value and then drops trailing zero bytes of that flush,
//! which the decoder supplies again as implicit zeros past the end of the
//! payload (at most [`FLUSH_BYTES`] of them).

use crate::error::{Error, Result};

pub const PROB_BITS: u32 = 16;
pub const PROB_ONE: u32 = 1 << PROB_BITS;
const TOP: u32 = 1 << 24;
pub const FLUSH_BYTES: usize = 4;

pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
    started: bool,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        Self {
            low: 0,
            range: u32::MAX,
            cache: 0,
            cache_size: 1,
            started: false,
            out: Vec::new(),
        }
    }

    #[inline]
    pub fn encode_bit(&mut self, bit: bool, p_one: u16) {
        debug_assert!(p_one > 0);
        let bound = (self.range >> PROB_BITS) * (PROB_ONE - p_one as u32);
        if bit {
            self.low += bound as u64;
            self.range -= bound;
        } else {
            self.range = bound;
        }
        self.normalize();
    }

    /// Equiprobable bit that skips the probability model.
    #[inline]
    pub fn encode_bypass(&mut self, bit: bool) {
        self.range >>= 1;
        if bit {
            self.low += self.range as u64;
        }
        self.normalize();
    }

    #[inline]
    fn normalize(&mut self) {
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    fn shift_low(&mut self) {
        if (self.low as u32) < 0xFF00_0000 || (self.low >> 32) != 0 {
            let carry = (self.low >> 32) as u8;
            let mut byte = self.cache;
            loop {
                // the very first cached byte is always zero and is not stored
                if self.started {
                    self.out.push(byte.wrapping_add(carry));
                }
                self.started = true;
                byte = 0xFF;
                self.cache_size -= 1;
                if self.cache_size == 0 {
                    break;
                }
            }
            self.cache = ((self.low >> 24) & 0xFF) as u8;
        }
        self.cache_size += 1;
        self.low = (self.low & 0x00FF_FFFF) << 8;
    }

    pub fn finish(mut self) -> Vec<u8> {
        // any value in [low, low + range) identifies the interval; take the
        // one with the most trailing zero bytes so trimming can drop them
        let end = self.low + self.range as u64;
        for shift in (8..=32).rev().step_by(8) {
            let mask = (1u64 << shift) - 1;
            let v = (self.low + mask) & !mask;
            if v < end {
                self.low = v;
                break;
            }
        }
        for _ in 0..=FLUSH_BYTES {
            self.shift_low();
        }
        let keep = self.out.len() - FLUSH_BYTES;
        while self.out.len() > keep && self.out.last() == Some(&0) {
            self.out.pop();
        }
        self.out
    }
}

pub struct RangeDecoder<'a> {
    data: &'a [u8],
    pos: usize,
    implicit: usize,
    code: u32,
    range: u32,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(data: &'a [u8]) -> Result<Self> {
        let mut d = Self {
            data,
            pos: 0,
            implicit: 0,
            code: 0,
            range: u32::MAX,
        };
        for _ in 0..FLUSH_BYTES {
            let b = d.next_byte()?;
            d.code = (d.code << 8) | b as u32;
        }
        if d.code == u32::MAX {
            return Err(Error::corrupt(0, "initial code outside the coding interval"));
        }
        Ok(d)
    }

    #[inline]
    fn next_byte(&mut self) -> Result<u8> {
        if let Some(&b) = self.data.get(self.pos) {
            self.pos += 1;
            Ok(b)
        } else {
            self.implicit += 1;
            if self.implicit > FLUSH_BYTES {
                return Err(Error::corrupt(self.data.len(), "payload exhausted"));
            }
            Ok(0)
        }
    }

    #[inline]
    pub fn decode_bit(&mut self, p_one: u16) -> Result<bool> {
        let bound = (self.range >> PROB_BITS) * (PROB_ONE - p_one as u32);
        let bit = if self.code < bound {
            self.range = bound;
            false
        } else {
            self.code -= bound;
            self.range -= bound;
            true
        };
        self.normalize()?;
        Ok(bit)
    }

    #[inline]
    pub fn decode_bypass(&mut self) -> Result<bool> {
        self.range >>= 1;
        let bit = if self.code >= self.range {
            self.code -= self.range;
            true
        } else {
            false
        };
        self.normalize()?;
        Ok(bit)
    }

    #[inline]
    fn normalize(&mut self) -> Result<()> {
        while self.range < TOP {
            self.range <<= 8;
            self.code = (self.code << 8) | self.next_byte()? as u32;
        }
        Ok(())
    }

    /// Payload bytes consumed so far (implicit trailing zeros excluded).
    pub fn position(&self) -> usize {
        self.pos
    }

    /// Checks that decoding ended exactly at the end of the payload.
    pub fn finish(&self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(Error::corrupt(
                self.pos,
                format!("{} trailing payload bytes", self.data.len() - self.pos),
            ));
        }
        Ok(())
    }
}
