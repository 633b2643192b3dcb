//! Run-length symbols: each nonzero digit becomes `(ZRUN, sign)`, and every
//! bit layer ends with an explicit EOR.

use crate::error::{Error, Result};
use crate::signed_digit::Sign;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RunSymbol {
    /// `zrun` zero positions followed by one nonzero digit.
    Run { zrun: u32, sign: Sign },
    /// End of run: the rest of the layer is zero.
    Eor,
}

/// Encodes the nonzero positions of one bit layer. Input order does not
/// matter; positions are sorted before gap coding.
pub fn rle_encode_layer(digit_positions: &[(usize, Sign)], flatten_len: usize) -> Vec<RunSymbol> {
    let mut sorted = digit_positions.to_vec();
    sorted.sort_unstable_by_key(|&(p, _)| p);
    debug_assert!(sorted.windows(2).all(|w| w[0].0 < w[1].0), "duplicate positions");
    debug_assert!(sorted.last().is_none_or(|&(p, _)| p < flatten_len));
    let mut out = Vec::with_capacity(sorted.len() + 1);
    let mut next = 0usize;
    for (pos, sign) in sorted {
        out.push(RunSymbol::Run {
            zrun: (pos - next) as u32,
            sign,
        });
        next = pos + 1;
    }
    out.push(RunSymbol::Eor);
    out
}

/// Inverse of [`rle_encode_layer`]. Stops at the first EOR.
pub fn rle_decode_layer(symbols: &[RunSymbol], flatten_len: usize) -> Result<Vec<(usize, Sign)>> {
    let mut out = Vec::new();
    let mut next = 0usize;
    for (n, sym) in symbols.iter().enumerate() {
        match *sym {
            RunSymbol::Run { zrun, sign } => {
                let pos = next + zrun as usize;
                if pos >= flatten_len {
                    return Err(Error::corrupt(
                        n,
                        format!("run reaches position {pos}, layer length is {flatten_len}"),
                    ));
                }
                out.push((pos, sign));
                next = pos + 1;
            }
            RunSymbol::Eor => return Ok(out),
        }
    }
    Err(Error::corrupt(symbols.len(), "layer not terminated by EOR"))
}
