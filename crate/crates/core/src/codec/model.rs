//! Static two-context probability model and the symbol binarization.
//!
//! Each run symbol is coded as:
//! 1. an EOR flag bin (1 = EOR),
//! 2. for RUN only: `zrun + 1` in order-0 Exp-Golomb form, i.e. a unary
//!    prefix of `floor(log2(zrun + 1))` one-bins closed by a zero-bin,
//!    followed by that many bypass suffix bits (MSB first),
//! 3. for RUN only: the sign as one bypass bit (1 = negative).
//!
//! Context 0 codes the bins of a bit layer until its first RUN; context 1
//! codes the rest of that layer.

use crate::error::{Error, Result};
use crate::signed_digit::BitLayerPlan;

/// Number of context-coded unary prefix positions; deeper positions share
/// the last bin.
pub const PREFIX_BINS: usize = 16;
pub const PROB_MIN: u16 = 32;
pub const PROB_MAX: u16 = (65536 - 32) as u16;
pub const PROB_HALF: u16 = 1 << 15;
pub const CONTEXTS: usize = 2;
pub const MODEL_ENTRIES: usize = CONTEXTS * (1 + PREFIX_BINS);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Bin {
    EorFlag,
    Prefix(usize),
}

impl Bin {
    #[inline]
    pub fn prefix(n: usize) -> Self {
        Bin::Prefix(n.min(PREFIX_BINS - 1))
    }
}

/// Probabilities of a 1-bin for one context.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ContextModel {
    pub eor: u16,
    pub prefix: [u16; PREFIX_BINS],
}

impl ContextModel {
    pub const UNIFORM: ContextModel = ContextModel {
        eor: PROB_HALF,
        prefix: [PROB_HALF; PREFIX_BINS],
    };

    #[inline]
    pub fn get(&self, bin: Bin) -> u16 {
        match bin {
            Bin::EorFlag => self.eor,
            Bin::Prefix(n) => self.prefix[n],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProbabilityModel {
    pub contexts: [ContextModel; CONTEXTS],
}

impl Default for ProbabilityModel {
    fn default() -> Self {
        Self::uniform()
    }
}

impl ProbabilityModel {
    pub fn uniform() -> Self {
        Self {
            contexts: [ContextModel::UNIFORM; CONTEXTS],
        }
    }

    #[inline]
    pub fn get(&self, ctx: usize, bin: Bin) -> u16 {
        self.contexts[ctx].get(bin)
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries().any(|p| p == 0) {
            return Err(Error::format("probability model contains a zero probability"));
        }
        Ok(())
    }

    fn entries(&self) -> impl Iterator<Item = u16> + '_ {
        self.contexts
            .iter()
            .flat_map(|c| std::iter::once(c.eor).chain(c.prefix.iter().copied()))
    }

    /// Length-prefixed little-endian table: u16 entry count, then per
    /// context the EOR probability and the prefix probabilities.
    pub fn write_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(MODEL_ENTRIES as u16).to_le_bytes());
        for p in self.entries() {
            out.extend_from_slice(&p.to_le_bytes());
        }
    }

    /// Parses a table written by [`write_to`](Self::write_to); returns the
    /// model and the number of bytes consumed.
    pub fn read_from(bytes: &[u8]) -> Result<(Self, usize)> {
        let short = || Error::format("probability model table truncated");
        let count = u16::from_le_bytes(bytes.get(0..2).ok_or_else(short)?.try_into().unwrap());
        if count as usize != MODEL_ENTRIES {
            return Err(Error::format(format!(
                "probability model has {count} entries, expected {MODEL_ENTRIES}"
            )));
        }
        let len = 2 + 2 * MODEL_ENTRIES;
        let table = bytes.get(2..len).ok_or_else(short)?;
        let mut vals = table
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]));
        let mut model = Self::uniform();
        for ctx in model.contexts.iter_mut() {
            ctx.eor = vals.next().unwrap();
            for p in ctx.prefix.iter_mut() {
                *p = vals.next().unwrap();
            }
        }
        model.validate()?;
        Ok((model, len))
    }
}

/// Receiver of the binarized symbol stream.
pub trait BinSink {
    fn context_bin(&mut self, ctx: usize, bin: Bin, bit: bool);
    fn bypass(&mut self, bit: bool);
}

/// Feeds every bin of `plan` to `sink` in coding order.
pub fn binarize_plan<S: BinSink>(plan: &BitLayerPlan, sink: &mut S) {
    for layer in &plan.layers {
        let mut ctx = 0;
        for &(zrun, sign) in layer {
            sink.context_bin(ctx, Bin::EorFlag, false);
            let v = zrun as u64 + 1;
            let prefix_len = 63 - v.leading_zeros() as usize;
            for n in 0..prefix_len {
                sink.context_bin(ctx, Bin::prefix(n), true);
            }
            sink.context_bin(ctx, Bin::prefix(prefix_len), false);
            for b in (0..prefix_len).rev() {
                sink.bypass((v >> b) & 1 == 1);
            }
            sink.bypass(sign.bit());
            ctx = 1;
        }
        sink.context_bin(ctx, Bin::EorFlag, true);
    }
}

#[derive(Clone, Debug, Default)]
struct BinCounts {
    // [ctx][0 = EOR flag, 1.. = prefix] -> (ones, total)
    counts: [[(u64, u64); 1 + PREFIX_BINS]; CONTEXTS],
}

impl BinSink for BinCounts {
    fn context_bin(&mut self, ctx: usize, bin: Bin, bit: bool) {
        let slot = match bin {
            Bin::EorFlag => 0,
            Bin::Prefix(n) => 1 + n,
        };
        let c = &mut self.counts[ctx][slot];
        c.0 += bit as u64;
        c.1 += 1;
    }

    fn bypass(&mut self, _bit: bool) {}
}

/// Empirical probability of a 1-bin, clamped to `[PROB_MIN, PROB_MAX]`.
/// Bins never seen get one half.
pub fn probability_from_counts(ones: u64, total: u64) -> u16 {
    if total == 0 {
        return PROB_HALF;
    }
    let p = (ones as u128 * 65536 + total as u128 / 2) / total as u128;
    p.clamp(PROB_MIN as u128, PROB_MAX as u128) as u16
}

/// Fits a static model to the bin statistics of `plans`.
pub fn estimate_model(plans: &[BitLayerPlan]) -> ProbabilityModel {
    let mut counts = BinCounts::default();
    for plan in plans {
        binarize_plan(plan, &mut counts);
    }
    let mut model = ProbabilityModel::uniform();
    for (ctx, model_ctx) in model.contexts.iter_mut().enumerate() {
        let c = &counts.counts[ctx];
        model_ctx.eor = probability_from_counts(c[0].0, c[0].1);
        for n in 0..PREFIX_BINS {
            model_ctx.prefix[n] = probability_from_counts(c[1 + n].0, c[1 + n].1);
        }
    }
    model
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signed_digit::Sign;

    #[test]
    fn counts_to_probability() {
        assert_eq!(probability_from_counts(50, 100), 1 << 15);
        assert_eq!(probability_from_counts(0, 0), 1 << 15);
        assert_eq!(probability_from_counts(10, 10), PROB_MAX);
        assert_eq!(probability_from_counts(0, 10), PROB_MIN);
        assert_eq!(probability_from_counts(1, 4), 16384);
    }

    #[test]
    fn eor_only_plans_clamp_at_max() {
        let plans = vec![BitLayerPlan::empty(0, 3, 9), BitLayerPlan::empty(1, 3, 9)];
        let m = estimate_model(&plans);
        assert_eq!(m.contexts[0].eor, PROB_MAX);
        // context 1 never used
        assert_eq!(m.contexts[1], ContextModel::UNIFORM);
    }

    #[test]
    fn binarization_of_a_run() {
        struct Log(Vec<String>);
        impl BinSink for Log {
            fn context_bin(&mut self, ctx: usize, bin: Bin, bit: bool) {
                self.0.push(format!("c{ctx}:{bin:?}={}", bit as u8));
            }
            fn bypass(&mut self, bit: bool) {
                self.0.push(format!("b={}", bit as u8));
            }
        }
        let plan = BitLayerPlan {
            o: 0,
            n_b: 1,
            layers: vec![vec![(4, Sign::Neg), (0, Sign::Pos)]],
            flatten_len: 9,
        };
        let mut log = Log(Vec::new());
        binarize_plan(&plan, &mut log);
        // zrun 4 -> v = 5 = 0b101: prefix 1,1,0 then suffix bits 0,1
        assert_eq!(
            log.0,
            vec![
                "c0:EorFlag=0", "c0:Prefix(0)=1", "c0:Prefix(1)=1", "c0:Prefix(2)=0", "b=0", "b=1",
                "b=1", "c1:EorFlag=0", "c1:Prefix(0)=0", "b=0", "c1:EorFlag=1",
            ]
        );
    }

    #[test]
    fn table_round_trip_and_validation() {
        let mut m = ProbabilityModel::uniform();
        m.contexts[1].prefix[3] = 1234;
        m.contexts[0].eor = 65535;
        let mut bytes = Vec::new();
        m.write_to(&mut bytes);
        assert_eq!(bytes.len(), 2 + 2 * MODEL_ENTRIES);
        let (back, used) = ProbabilityModel::read_from(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(used, bytes.len());

        let mut zero = bytes.clone();
        zero[2] = 0;
        zero[3] = 0;
        assert!(ProbabilityModel::read_from(&zero).is_err());
        assert!(ProbabilityModel::read_from(&bytes[..10]).is_err());
    }
}
