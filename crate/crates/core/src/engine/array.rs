//! Accumulator rows of the two processing-element arrays.
//!
//! Both arrays hold one accumulator per pixel of an output row and wrap at
//! `acc_bits` as two's-complement registers. In exact-check mode a shadow
//! row of 64-bit sums is carried along so that a wrapped result can be
//! reported instead of silently returned.

use crate::error::{Error, Result};
use crate::signed_digit::Sign;

pub const DEFAULT_ACC_BITS: u32 = 20;

#[derive(Clone, Debug)]
struct AccRow {
    acc: Vec<i32>,
    exact: Option<Vec<i64>>,
    shift: u32,
    cycles: u64,
}

impl AccRow {
    fn new(width: usize, acc_bits: u32, exact_check: bool) -> Result<Self> {
        if !(2..=32).contains(&acc_bits) {
            return Err(Error::config(format!("accumulator width {acc_bits} outside 2..=32 bits")));
        }
        Ok(Self {
            acc: vec![0; width],
            exact: exact_check.then(|| vec![0; width]),
            shift: 32 - acc_bits,
            cycles: 0,
        })
    }

    #[inline]
    fn wrap(&self, v: i32) -> i32 {
        v.wrapping_shl(self.shift).wrapping_shr(self.shift)
    }

    fn reset(&mut self) {
        self.acc.fill(0);
        if let Some(e) = self.exact.as_mut() {
            e.fill(0);
        }
        self.cycles = 0;
    }

    fn acc_bits(&self) -> u32 {
        32 - self.shift
    }

    /// Exact sums when tracked, else the wrapped register values.
    fn finish(&self, y: usize, o: usize) -> Result<Vec<i64>> {
        match &self.exact {
            None => Ok(self.acc.iter().map(|&a| a as i64).collect()),
            Some(exact) => {
                for (x, (&a, &e)) in self.acc.iter().zip(exact).enumerate() {
                    if a as i64 != e {
                        return Err(Error::Overflow {
                            x,
                            y,
                            o,
                            value: e,
                            bits: self.acc_bits(),
                        });
                    }
                }
                Ok(exact.clone())
            }
        }
    }
}

/// Architecture II: every cycle adds or subtracts one input row, or
/// doubles all accumulators at the end of a bit layer.
#[derive(Clone, Debug)]
pub struct BlmacArray {
    row: AccRow,
}

impl BlmacArray {
    pub fn new(width: usize, acc_bits: u32, exact_check: bool) -> Result<Self> {
        Ok(Self {
            row: AccRow::new(width, acc_bits, exact_check)?,
        })
    }

    pub fn width(&self) -> usize {
        self.row.acc.len()
    }

    pub fn reset(&mut self) {
        self.row.reset();
    }

    #[inline]
    pub fn step(&mut self, pixels: &[i8], sign: Sign) {
        debug_assert_eq!(pixels.len(), self.width());
        let shift = self.row.shift;
        match sign {
            Sign::Pos => {
                for (a, &p) in self.row.acc.iter_mut().zip(pixels) {
                    *a = a.wrapping_add(p as i32).wrapping_shl(shift).wrapping_shr(shift);
                }
            }
            Sign::Neg => {
                for (a, &p) in self.row.acc.iter_mut().zip(pixels) {
                    *a = a.wrapping_sub(p as i32).wrapping_shl(shift).wrapping_shr(shift);
                }
            }
        }
        if let Some(e) = self.row.exact.as_mut() {
            let s = sign.value() as i64;
            for (a, &p) in e.iter_mut().zip(pixels) {
                *a += s * p as i64;
            }
        }
        self.row.cycles += 1;
    }

    /// Doubles every accumulator (the EOR of a non-final bit layer).
    #[inline]
    pub fn shift(&mut self) {
        let shift = self.row.shift;
        for a in self.row.acc.iter_mut() {
            *a = a.wrapping_shl(1 + shift).wrapping_shr(shift);
        }
        if let Some(e) = self.row.exact.as_mut() {
            for a in e.iter_mut() {
                *a *= 2;
            }
        }
        self.row.cycles += 1;
    }

    /// Counts the final EOR, which only hands the row to the merger.
    pub fn end_column(&mut self) {
        self.row.cycles += 1;
    }

    pub fn cycles(&self) -> u64 {
        self.row.cycles
    }

    pub fn accumulators(&self) -> &[i32] {
        &self.row.acc
    }

    pub fn finish(&self, y: usize, o: usize) -> Result<Vec<i64>> {
        self.row.finish(y, o)
    }
}

/// Architecture I: every cycle multiplies one input row by one weight.
#[derive(Clone, Debug)]
pub struct MacArray {
    row: AccRow,
}

impl MacArray {
    pub fn new(width: usize, acc_bits: u32, exact_check: bool) -> Result<Self> {
        Ok(Self {
            row: AccRow::new(width, acc_bits, exact_check)?,
        })
    }

    pub fn reset(&mut self) {
        self.row.reset();
    }

    #[inline]
    pub fn mac(&mut self, pixels: &[i8], weight: i32) {
        for (a, &p) in self.row.acc.iter_mut().zip(pixels) {
            let v = (*a as i64).wrapping_add(weight as i64 * p as i64) as i32;
            *a = v;
        }
        for i in 0..self.row.acc.len() {
            self.row.acc[i] = self.row.wrap(self.row.acc[i]);
        }
        if let Some(e) = self.row.exact.as_mut() {
            for (a, &p) in e.iter_mut().zip(pixels) {
                *a += weight as i64 * p as i64;
            }
        }
        self.row.cycles += 1;
    }

    pub fn end_column(&mut self) {
        self.row.cycles += 1;
    }

    pub fn cycles(&self) -> u64 {
        self.row.cycles
    }

    pub fn accumulators(&self) -> &[i32] {
        &self.row.acc
    }

    pub fn finish(&self, y: usize, o: usize) -> Result<Vec<i64>> {
        self.row.finish(y, o)
    }
}

/// Value of `v` in a two's-complement register of `bits` bits.
pub fn wrap_to_bits(v: i64, bits: u32) -> i64 {
    let s = 64 - bits;
    (v << s) >> s
}
