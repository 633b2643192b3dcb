//! Canonical signed-digit (non-adjacent form) recoding and the bit-layer
//! plans that drive the BLMAC array.
//!
//! A BLMAC multiplies by a weight one signed binary digit at a time, so the
//! cost of a kernel column is its number of nonzero digits plus one EOR per
//! bit layer. Canonical signed digits minimize that count.

use crate::codec::flatten::FlattenOrder;
use crate::codec::rle::{rle_encode_layer, RunSymbol};
use crate::error::{Error, Result};
use crate::tensor::QuantizedWeightTensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Sign {
    Pos,
    Neg,
}

impl Sign {
    #[inline]
    pub fn value(self) -> i32 {
        match self {
            Sign::Pos => 1,
            Sign::Neg => -1,
        }
    }

    /// Bypass-bit encoding: 1 means negative.
    #[inline]
    pub fn bit(self) -> bool {
        self == Sign::Neg
    }

    #[inline]
    pub fn from_bit(bit: bool) -> Self {
        if bit {
            Sign::Neg
        } else {
            Sign::Pos
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Digit {
    pub layer: u32,
    pub sign: Sign,
}

/// Nonzero digits of a signed-digit number, most significant first.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SignedDigitVector {
    pub digits: Vec<Digit>,
}

impl SignedDigitVector {
    pub fn value(&self) -> i64 {
        self.digits
            .iter()
            .map(|d| d.sign.value() as i64 * (1i64 << d.layer))
            .sum()
    }

    pub fn len(&self) -> usize {
        self.digits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.digits.is_empty()
    }

    /// True when no two nonzero digits sit on adjacent layers.
    pub fn is_nonadjacent(&self) -> bool {
        self.digits.windows(2).all(|w| w[0].layer > w[1].layer + 1)
    }

    /// Highest layer index, if any digit is present.
    pub fn top_layer(&self) -> Option<u32> {
        self.digits.first().map(|d| d.layer)
    }

    /// Multiplies by `2^by` by moving every digit up `by` layers. Used to
    /// bring weights with different exponents onto a common scale.
    pub fn shifted(&self, by: u32) -> Self {
        Self {
            digits: self
                .digits
                .iter()
                .map(|d| Digit {
                    layer: d.layer + by,
                    sign: d.sign,
                })
                .collect(),
        }
    }
}

/// Non-adjacent-form recoding of `w`.
pub fn csd_decompose(w: i64) -> SignedDigitVector {
    debug_assert!(w.unsigned_abs() < 1 << 62);
    let mut digits = Vec::new();
    let mut n = w;
    let mut layer = 0;
    while n != 0 {
        if n & 1 != 0 {
            // n mod 4 is 1 or 3; pick the digit that clears two low bits
            let d = 2 - n.rem_euclid(4);
            digits.push(Digit {
                layer,
                sign: if d > 0 { Sign::Pos } else { Sign::Neg },
            });
            n -= d;
        }
        n >>= 1;
        layer += 1;
    }
    digits.reverse();
    SignedDigitVector { digits }
}

/// One output column's weights split into bit layers of run symbols.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitLayerPlan {
    pub o: usize,
    pub n_b: u32,
    /// `layers[0]` is bit layer `n_b - 1`; each entry holds the `(zrun, sign)`
    /// runs of that layer, the EOR being implicit at the end.
    pub layers: Vec<Vec<(u32, Sign)>>,
    pub flatten_len: usize,
}

impl BitLayerPlan {
    /// Plan with every layer empty.
    pub fn empty(o: usize, n_b: u32, flatten_len: usize) -> Self {
        Self {
            o,
            n_b,
            layers: vec![Vec::new(); n_b as usize],
            flatten_len,
        }
    }

    /// All symbols in processing order, one EOR after each layer.
    pub fn symbols(&self) -> impl Iterator<Item = RunSymbol> + '_ {
        self.layers.iter().flat_map(|layer| {
            layer
                .iter()
                .map(|&(zrun, sign)| RunSymbol::Run { zrun, sign })
                .chain(std::iter::once(RunSymbol::Eor))
        })
    }

    /// Reconstructs the column's weights in flattened order.
    pub fn expand(&self) -> Vec<i64> {
        let mut out = vec![0i64; self.flatten_len];
        for (idx, layer) in self.layers.iter().enumerate() {
            let weight = 1i64 << (self.n_b as usize - 1 - idx);
            let mut pos = 0usize;
            for &(zrun, sign) in layer {
                pos += zrun as usize;
                out[pos] += sign.value() as i64 * weight;
                pos += 1;
            }
        }
        out
    }

    /// Number of symbols an engine consumes for this plan: `N_3 + N_b`.
    pub fn decode_steps(&self) -> u64 {
        count_nonzero_trits(self) + self.n_b as u64
    }

    /// Same column with extra empty leading (most significant) layers so
    /// that the plan has exactly `n_b` layers.
    pub fn padded_to(mut self, n_b: u32) -> Result<Self> {
        if n_b < self.n_b {
            return Err(Error::config(format!(
                "column {} needs {} bit layers, cannot fit in {n_b}",
                self.o, self.n_b
            )));
        }
        let extra = (n_b - self.n_b) as usize;
        let mut layers = vec![Vec::new(); extra];
        layers.append(&mut self.layers);
        self.layers = layers;
        self.n_b = n_b;
        Ok(self)
    }
}

/// Column `o` of `w` in flattened order.
pub fn column_weights(w: &QuantizedWeightTensor, o: usize, order: FlattenOrder) -> Vec<i32> {
    let (k, zd) = (w.k(), w.z());
    (0..w.shape().flatten_len())
        .map(|p| {
            let (j, i, z) = order.unflatten(p, k, zd);
            w.get(j, i, z, o)
        })
        .collect()
}

/// Plan for column `o` with its own bit-layer count (one more than the
/// highest digit, at least 1).
pub fn build_layer_plan(w: &QuantizedWeightTensor, o: usize, order: FlattenOrder) -> BitLayerPlan {
    assert!(o < w.o(), "output index {o} out of range");
    let column = column_weights(w, o, order);
    let flatten_len = column.len();
    let mut buckets: Vec<Vec<(usize, Sign)>> = Vec::new();
    for (pos, &weight) in column.iter().enumerate() {
        for d in csd_decompose(weight as i64).digits {
            let l = d.layer as usize;
            if buckets.len() <= l {
                buckets.resize(l + 1, Vec::new());
            }
            buckets[l].push((pos, d.sign));
        }
    }
    let n_b = buckets.len().max(1) as u32;
    buckets.resize(n_b as usize, Vec::new());
    let layers = buckets
        .iter()
        .rev()
        .map(|positions| {
            rle_encode_layer(positions, flatten_len)
                .into_iter()
                .filter_map(|s| match s {
                    RunSymbol::Run { zrun, sign } => Some((zrun, sign)),
                    RunSymbol::Eor => None,
                })
                .collect()
        })
        .collect();
    BitLayerPlan {
        o,
        n_b,
        layers,
        flatten_len,
    }
}

/// Plans for every column sharing one bit-layer count, the maximum over
/// all columns of the tensor.
pub fn build_layer_plans(w: &QuantizedWeightTensor, order: FlattenOrder) -> Vec<BitLayerPlan> {
    let plans: Vec<_> = (0..w.o()).map(|o| build_layer_plan(w, o, order)).collect();
    let n_b = plans.iter().map(|p| p.n_b).max().unwrap_or(1);
    plans
        .into_iter()
        .map(|p| p.padded_to(n_b).expect("n_b is the maximum"))
        .collect()
}

/// `N_3`: nonzero digits across all layers of the plan.
pub fn count_nonzero_trits(plan: &BitLayerPlan) -> u64 {
    plan.layers.iter().map(|l| l.len() as u64).sum()
}

/// Binary floating-point layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FpFormat {
    pub frac_bits: u32,
    pub exp_bits: u32,
    pub bias: i32,
}

impl FpFormat {
    pub const HALF: FpFormat = FpFormat {
        frac_bits: 10,
        exp_bits: 5,
        bias: 15,
    };
    pub const BFLOAT16: FpFormat = FpFormat {
        frac_bits: 7,
        exp_bits: 8,
        bias: 127,
    };
    pub const TENSOR_FLOAT32: FpFormat = FpFormat {
        frac_bits: 10,
        exp_bits: 8,
        bias: 127,
    };
    pub const SINGLE: FpFormat = FpFormat {
        frac_bits: 23,
        exp_bits: 8,
        bias: 127,
    };

    pub fn total_bits(&self) -> u32 {
        1 + self.exp_bits + self.frac_bits
    }
}

/// A floating-point weight as `mantissa * 2^scale_exp`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FpInteger {
    pub mantissa: i64,
    pub scale_exp: i32,
}

impl FpInteger {
    pub fn to_f64(self) -> f64 {
        self.mantissa as f64 * (self.scale_exp as f64).exp2()
    }
}

/// Turns a normal floating-point encoding into an integer mantissa (with
/// the hidden bit) and a power-of-two scale. Zero maps to mantissa 0;
/// NaN, infinities and denormals are rejected.
pub fn fp_weight_to_integer(
    negative: bool,
    exponent: u32,
    fraction: u32,
    format: FpFormat,
) -> Result<FpInteger> {
    if format.frac_bits > 30 || format.exp_bits == 0 || format.exp_bits > 11 {
        return Err(Error::config("unsupported floating-point format"));
    }
    let exp_max = (1u32 << format.exp_bits) - 1;
    if exponent > exp_max || fraction >= 1 << format.frac_bits {
        return Err(Error::config("floating-point field out of range"));
    }
    if exponent == exp_max {
        return Err(Error::Unsupported("NaN or infinity weight".into()));
    }
    let scale_exp = exponent as i32 - format.bias - format.frac_bits as i32;
    if exponent == 0 {
        if fraction == 0 {
            return Ok(FpInteger {
                mantissa: 0,
                scale_exp,
            });
        }
        return Err(Error::Unsupported("denormal weight".into()));
    }
    let magnitude = (1i64 << format.frac_bits) + fraction as i64;
    Ok(FpInteger {
        mantissa: if negative { -magnitude } else { magnitude },
        scale_exp,
    })
}

/// Splits a raw encoding (sign in the top bit of `total_bits`) and calls
/// [`fp_weight_to_integer`].
pub fn fp_bits_to_integer(bits: u32, format: FpFormat) -> Result<FpInteger> {
    let frac_mask = (1u32 << format.frac_bits) - 1;
    let exp_mask = (1u32 << format.exp_bits) - 1;
    let fraction = bits & frac_mask;
    let exponent = (bits >> format.frac_bits) & exp_mask;
    let negative = (bits >> (format.frac_bits + format.exp_bits)) & 1 == 1;
    fp_weight_to_integer(negative, exponent, fraction, format)
}

/// Whether the implicit leading 1 of the significand is counted as a digit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum HiddenBit {
    /// Only the stored fraction bits are multiplied (the published averages).
    #[default]
    Excluded,
    Included,
}

/// Exact average of nonzero CSD digits over uniformly distributed fractions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CycleAverage {
    pub total_digits: u128,
    pub samples: u128,
}

impl CycleAverage {
    pub fn mean(&self) -> f64 {
        self.total_digits as f64 / self.samples as f64
    }
}

/// Largest fraction width enumerated exhaustively; wider formats use the
/// carry-state counting recurrence.
pub const EXHAUSTIVE_FRAC_BITS: u32 = 16;

/// Average BLMAC cycles for one floating-point multiply-accumulate, i.e.
/// the mean CSD digit count of the mantissa integer when the fraction is
/// uniform over `[0, 2^frac_bits)`.
pub fn expected_fp_blmac_cycles(frac_bits: u32, hidden: HiddenBit) -> CycleAverage {
    assert!(frac_bits <= 24, "fraction wider than 24 bits");
    if frac_bits <= EXHAUSTIVE_FRAC_BITS {
        let base = match hidden {
            HiddenBit::Excluded => 0,
            HiddenBit::Included => 1i64 << frac_bits,
        };
        let total = (0..1i64 << frac_bits)
            .map(|f| csd_decompose(base + f).len() as u128)
            .sum();
        CycleAverage {
            total_digits: total,
            samples: 1 << frac_bits,
        }
    } else {
        digit_count_recurrence(frac_bits, hidden)
    }
}

/// Sums NAF digit counts over all `frac_bits`-bit fractions without
/// enumerating them. Scans bits from the LSB with state (carry, current
/// bit); a digit is emitted whenever `bit + carry` is odd, and its sign
/// depends on the next bit.
fn digit_count_recurrence(frac_bits: u32, hidden: HiddenBit) -> CycleAverage {
    let f = frac_bits as usize;
    let tail: &[u8] = match hidden {
        HiddenBit::Excluded => &[],
        HiddenBit::Included => &[1],
    };
    let fixed_bit = |pos: usize| -> u8 { tail.get(pos - f).copied().unwrap_or(0) };
    // state[carry][bit] = (count of fractions, digits so far)
    let mut state = [[(0u128, 0u128); 2]; 2];
    if f > 0 {
        state[0][0] = (1, 0);
        state[0][1] = (1, 0);
    } else {
        state[0][fixed_bit(0) as usize] = (1, 0);
    }
    let positions = f + tail.len() + 2;
    for pos in 0..positions {
        let mut next = [[(0u128, 0u128); 2]; 2];
        let next_bits: &[u8] = if pos + 1 < f {
            &[0, 1]
        } else {
            match fixed_bit(pos + 1) {
                0 => &[0],
                _ => &[1],
            }
        };
        #[allow(clippy::needless_range_loop)]
        for carry in 0..2 {
            for bit in 0..2 {
                let (count, digits) = state[carry][bit];
                if count == 0 {
                    continue;
                }
                for &nb in next_bits {
                    let (emit, carry_out) = match carry + bit {
                        0 => (0, 0),
                        2 => (0, 1),
                        // odd residue: +1 if the next bit is 0, -1 (borrow) otherwise
                        _ => (1, nb as usize),
                    };
                    let slot = &mut next[carry_out][nb as usize];
                    slot.0 += count;
                    slot.1 += digits + emit * count;
                }
            }
        }
        state = next;
    }
    debug_assert_eq!(state[1][0].0 + state[1][1].0 + state[0][1].0, 0);
    CycleAverage {
        total_digits: state[0][0].1,
        samples: state[0][0].0,
    }
}
