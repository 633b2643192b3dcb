//! `BLWS` compressed weight stream container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "BLWS" | u16 version | u16 K | u32 Z | u32 O | u8 N_b | u8 flatten order
//! | u16 model entries, u16 x entries | u32 x (O + 1) payload offsets
//! | payload bytes
//! ```
//!
//! Offsets are relative to the start of the payload; payload `o` spans
//! `offsets[o]..offsets[o + 1]` and decodes on its own.

use std::path::Path;

use super::flatten::FlattenOrder;
use super::model::{binarize_plan, estimate_model, Bin, BinSink, ProbabilityModel, MODEL_ENTRIES};
use super::range_coder::{RangeDecoder, RangeEncoder};
use super::rle::RunSymbol;
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::signed_digit::{build_layer_plans, BitLayerPlan, Sign};
use crate::tensor::{KernelShape, QuantizedWeightTensor};

pub const STREAM_MAGIC: &[u8; 4] = b"BLWS";
pub const STREAM_VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CompressedWeightStream {
    pub k: usize,
    pub z: usize,
    pub o: usize,
    pub n_b: u32,
    pub order: FlattenOrder,
    pub model: ProbabilityModel,
    offsets: Vec<u32>,
    payload: Vec<u8>,
}

impl CompressedWeightStream {
    pub fn shape(&self) -> KernelShape {
        KernelShape::new(self.k, self.z, self.o)
    }

    pub fn flatten_len(&self) -> usize {
        self.k * self.k * self.z
    }

    /// Coded bytes of output channel `o`.
    pub fn payload(&self, o: usize) -> &[u8] {
        &self.payload[self.offsets[o] as usize..self.offsets[o + 1] as usize]
    }

    pub fn payload_range(&self, o: usize) -> std::ops::Range<usize> {
        self.offsets[o] as usize..self.offsets[o + 1] as usize
    }

    /// Total coded payload bytes over all outputs.
    pub fn payload_len(&self) -> usize {
        self.payload.len()
    }

    pub fn header_len(&self) -> usize {
        4 + 2 + 2 + 4 + 4 + 1 + 1 + 2 + 2 * MODEL_ENTRIES + 4 * (self.o + 1)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.header_len() + self.payload.len());
        out.extend_from_slice(STREAM_MAGIC);
        out.extend_from_slice(&STREAM_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.k as u16).to_le_bytes());
        out.extend_from_slice(&(self.z as u32).to_le_bytes());
        out.extend_from_slice(&(self.o as u32).to_le_bytes());
        out.push(self.n_b as u8);
        out.push(self.order.id());
        self.model.write_to(&mut out);
        for off in &self.offsets {
            out.extend_from_slice(&off.to_le_bytes());
        }
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(4)? != STREAM_MAGIC {
            return Err(Error::format("bad weight stream magic"));
        }
        let version = r.u16()?;
        if version != STREAM_VERSION {
            return Err(Error::format(format!("unsupported stream version {version}")));
        }
        let k = r.u16()? as usize;
        let z = r.u32()? as usize;
        let o = r.u32()? as usize;
        let n_b = r.u8()? as u32;
        let order = FlattenOrder::from_id(r.u8()?)?;
        KernelShape::new(k, z, o)
            .validate()
            .map_err(|e| Error::format(e.to_string()))?;
        if n_b == 0 || n_b > 32 {
            return Err(Error::format(format!("invalid bit-layer count {n_b}")));
        }
        let (model, used) = ProbabilityModel::read_from(&bytes[r.pos..])?;
        r.pos += used;
        let offsets = (0..=o).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let payload = bytes[r.pos..].to_vec();
        if offsets[0] != 0
            || offsets.windows(2).any(|w| w[0] > w[1])
            || offsets[o] as usize != payload.len()
        {
            return Err(Error::format("payload offsets inconsistent with payload size"));
        }
        Ok(Self {
            k,
            z,
            o,
            n_b,
            order,
            model,
            offsets,
            payload,
        })
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.to_bytes())
    }

    /// Mutable payload access, for fault-injection tests.
    pub fn payload_mut(&mut self) -> &mut [u8] {
        &mut self.payload
    }

    /// Streaming decoder over payload `o`.
    pub fn decoder(&self, o: usize) -> Result<SymbolDecoder<'_>> {
        if o >= self.o {
            return Err(Error::config(format!("output index {o} out of range (O = {})", self.o)));
        }
        SymbolDecoder::new(self.payload(o), &self.model, self.n_b, self.flatten_len())
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| Error::format("weight stream header truncated"))?;
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

struct EncoderSink<'m> {
    rc: RangeEncoder,
    model: &'m ProbabilityModel,
}

impl BinSink for EncoderSink<'_> {
    #[inline]
    fn context_bin(&mut self, ctx: usize, bin: Bin, bit: bool) {
        self.rc.encode_bit(bit, self.model.get(ctx, bin));
    }

    #[inline]
    fn bypass(&mut self, bit: bool) {
        self.rc.encode_bypass(bit);
    }
}

/// Arithmetic-codes one plan into a standalone payload.
pub fn encode_plan(plan: &BitLayerPlan, model: &ProbabilityModel) -> Vec<u8> {
    let mut sink = EncoderSink {
        rc: RangeEncoder::new(),
        model,
    };
    binarize_plan(plan, &mut sink);
    sink.rc.finish()
}

/// Compresses the plans of all output channels `0..O` of a `K x K x Z x O`
/// kernel. Every plan must share the same bit-layer count.
pub fn ac_encode(
    plans: &[BitLayerPlan],
    k: usize,
    z: usize,
    order: FlattenOrder,
    model: &ProbabilityModel,
) -> Result<CompressedWeightStream> {
    model.validate()?;
    let shape = KernelShape::new(k, z, plans.len());
    shape.validate()?;
    let n_b = plans[0].n_b;
    if !(1..=32).contains(&n_b) {
        return Err(Error::config(format!("bit-layer count {n_b} outside 1..=32")));
    }
    let mut offsets = Vec::with_capacity(plans.len() + 1);
    let mut payload = Vec::new();
    offsets.push(0);
    for (o, plan) in plans.iter().enumerate() {
        if plan.o != o {
            return Err(Error::config(format!("plan {o} is for output {}", plan.o)));
        }
        if plan.n_b != n_b || plan.layers.len() != n_b as usize {
            return Err(Error::config(format!(
                "plan {o} has {} bit layers, stream uses {n_b}",
                plan.n_b
            )));
        }
        if plan.flatten_len != shape.flatten_len() {
            return Err(Error::config(format!(
                "plan {o} covers {} positions, kernel has {}",
                plan.flatten_len,
                shape.flatten_len()
            )));
        }
        payload.extend(encode_plan(plan, model));
        offsets.push(u32::try_from(payload.len()).map_err(|_| Error::config("stream too large"))?);
    }
    Ok(CompressedWeightStream {
        k,
        z,
        o: plans.len(),
        n_b,
        order,
        model: model.clone(),
        offsets,
        payload,
    })
}

/// Builds shared-depth plans for `w` and compresses them.
pub fn compress_tensor(
    w: &QuantizedWeightTensor,
    order: FlattenOrder,
    model: &ProbabilityModel,
) -> Result<CompressedWeightStream> {
    let plans = build_layer_plans(w, order);
    ac_encode(&plans, w.k(), w.z(), order, model)
}

/// Compresses `w` with a model fitted to its own bin statistics.
pub fn compress_fitted(w: &QuantizedWeightTensor, order: FlattenOrder) -> Result<CompressedWeightStream> {
    let plans = build_layer_plans(w, order);
    let model = estimate_model(&plans);
    ac_encode(&plans, w.k(), w.z(), order, &model)
}

/// One decoded symbol together with the flattened position it addresses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecodedSymbol {
    Digit { zrun: u32, pos: usize, sign: Sign },
    Eor,
}

impl DecodedSymbol {
    pub fn to_run_symbol(self) -> RunSymbol {
        match self {
            DecodedSymbol::Digit { zrun, sign, .. } => RunSymbol::Run { zrun, sign },
            DecodedSymbol::Eor => RunSymbol::Eor,
        }
    }
}

/// Incremental decoder for one output channel's payload. Emits exactly
/// `N_b` EORs, then `None`.
pub struct SymbolDecoder<'a> {
    rc: RangeDecoder<'a>,
    model: &'a ProbabilityModel,
    flatten_len: usize,
    max_prefix: usize,
    eors_left: u32,
    ctx: usize,
    next_pos: usize,
    steps: u64,
}

impl<'a> SymbolDecoder<'a> {
    pub fn new(
        payload: &'a [u8],
        model: &'a ProbabilityModel,
        n_b: u32,
        flatten_len: usize,
    ) -> Result<Self> {
        Ok(Self {
            rc: RangeDecoder::new(payload)?,
            model,
            flatten_len,
            // zrun + 1 <= flatten_len bounds the unary prefix
            max_prefix: (usize::BITS - flatten_len.leading_zeros()) as usize,
            eors_left: n_b,
            ctx: 0,
            next_pos: 0,
            steps: 0,
        })
    }

    /// Symbols decoded so far, RUNs and EORs alike.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn next_symbol(&mut self) -> Result<Option<DecodedSymbol>> {
        if self.eors_left == 0 {
            return Ok(None);
        }
        let ctx = self.ctx;
        let is_eor = self.rc.decode_bit(self.model.get(ctx, Bin::EorFlag))?;
        self.steps += 1;
        if is_eor {
            self.eors_left -= 1;
            self.ctx = 0;
            self.next_pos = 0;
            if self.eors_left == 0 {
                self.rc.finish()?;
            }
            return Ok(Some(DecodedSymbol::Eor));
        }
        let mut prefix_len = 0usize;
        while self.rc.decode_bit(self.model.get(ctx, Bin::prefix(prefix_len)))? {
            prefix_len += 1;
            if prefix_len > self.max_prefix {
                return Err(Error::corrupt(self.rc.position(), "run-length prefix too long"));
            }
        }
        let mut v = 1u64;
        for _ in 0..prefix_len {
            v = (v << 1) | self.rc.decode_bypass()? as u64;
        }
        let sign = Sign::from_bit(self.rc.decode_bypass()?);
        let zrun = v - 1;
        let pos = self.next_pos as u64 + zrun;
        if pos >= self.flatten_len as u64 {
            return Err(Error::corrupt(
                self.rc.position(),
                format!("run reaches position {pos}, kernel column has {}", self.flatten_len),
            ));
        }
        self.next_pos = pos as usize + 1;
        self.ctx = 1;
        Ok(Some(DecodedSymbol::Digit {
            zrun: zrun as u32,
            pos: pos as usize,
            sign,
        }))
    }
}

/// Decoded plan plus the number of symbols it took.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecodedPlan {
    pub plan: BitLayerPlan,
    pub decode_steps: u64,
}

/// Decodes the plan of output channel `o`.
pub fn ac_decode(stream: &CompressedWeightStream, o: usize) -> Result<DecodedPlan> {
    let mut dec = stream.decoder(o)?;
    let mut plan = BitLayerPlan::empty(o, stream.n_b, stream.flatten_len());
    let mut layer = 0usize;
    while let Some(sym) = dec.next_symbol()? {
        match sym {
            DecodedSymbol::Digit { zrun, sign, .. } => plan.layers[layer].push((zrun, sign)),
            DecodedSymbol::Eor => layer += 1,
        }
    }
    Ok(DecodedPlan {
        plan,
        decode_steps: dec.steps(),
    })
}

/// Decodes every output channel and returns the plans.
pub fn decode_all(stream: &CompressedWeightStream) -> Result<Vec<BitLayerPlan>> {
    (0..stream.o).map(|o| ac_decode(stream, o).map(|d| d.plan)).collect()
}

/// Rebuilds the integer weights of a stream (biases are not stored in it).
pub fn decompress_weights(stream: &CompressedWeightStream) -> Result<QuantizedWeightTensor> {
    let mut w = QuantizedWeightTensor::zeros(stream.shape())?;
    for o in 0..stream.o {
        let plan = ac_decode(stream, o)?.plan;
        for (pos, v) in plan.expand().into_iter().enumerate() {
            let (j, i, z) = stream.order.unflatten(pos, stream.k, stream.z);
            w.set(j, i, z, o, v as i32);
        }
    }
    Ok(w)
}
