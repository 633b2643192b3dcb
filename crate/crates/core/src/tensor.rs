//! Feature maps, quantized kernels and the host-side tensor operations.
//!
//! Pixels are signed 8-bit values. A feature map is stored slice by slice:
//! each slice (fixed `y`) is `Z` rows of `X` pixels, so element `(x, y, z)`
//! lives at `(y * Z + z) * X + x`. This is also the on-disk order of the
//! `FMAP` file format, which lets a slice be streamed as one contiguous run.

use std::path::Path;

use crate::error::{Error, Result};
use crate::fsutil::write_atomic;

pub const FMAP_MAGIC: &[u8; 4] = b"FMAP";
pub const FMAP_HEADER_LEN: usize = 16;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FeatureMap {
    dims_x: usize,
    dims_y: usize,
    dims_z: usize,
    data: Vec<i8>,
}

impl FeatureMap {
    pub fn zeros(dims_x: usize, dims_y: usize, dims_z: usize) -> Self {
        Self {
            dims_x,
            dims_y,
            dims_z,
            data: vec![0; dims_x * dims_y * dims_z],
        }
    }

    pub fn filled(dims_x: usize, dims_y: usize, dims_z: usize, value: i8) -> Self {
        Self {
            dims_x,
            dims_y,
            dims_z,
            data: vec![value; dims_x * dims_y * dims_z],
        }
    }

    /// Wraps pixel data already laid out slice by slice.
    pub fn from_data(dims_x: usize, dims_y: usize, dims_z: usize, data: Vec<i8>) -> Result<Self> {
        if data.len() != dims_x * dims_y * dims_z {
            return Err(Error::config(format!(
                "feature map {dims_x}x{dims_y}x{dims_z} needs {} pixels, got {}",
                dims_x * dims_y * dims_z,
                data.len()
            )));
        }
        Ok(Self {
            dims_x,
            dims_y,
            dims_z,
            data,
        })
    }

    /// Builds a map from a pixel function.
    pub fn from_fn(
        dims_x: usize,
        dims_y: usize,
        dims_z: usize,
        mut f: impl FnMut(usize, usize, usize) -> i8,
    ) -> Self {
        let mut map = Self::zeros(dims_x, dims_y, dims_z);
        for y in 0..dims_y {
            for z in 0..dims_z {
                for x in 0..dims_x {
                    map.set(x, y, z, f(x, y, z));
                }
            }
        }
        map
    }

    pub fn dims_x(&self) -> usize {
        self.dims_x
    }

    pub fn dims_y(&self) -> usize {
        self.dims_y
    }

    pub fn dims_z(&self) -> usize {
        self.dims_z
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.dims_x, self.dims_y, self.dims_z)
    }

    pub fn data(&self) -> &[i8] {
        &self.data
    }

    #[inline]
    fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (y * self.dims_z + z) * self.dims_x + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> i8 {
        self.data[self.index(x, y, z)]
    }

    /// Pixel read with zero padding outside the map.
    #[inline]
    pub fn get_padded(&self, x: isize, y: isize, z: usize) -> i8 {
        if x < 0 || y < 0 || x as usize >= self.dims_x || y as usize >= self.dims_y {
            0
        } else {
            self.get(x as usize, y as usize, z)
        }
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: i8) {
        let i = self.index(x, y, z);
        self.data[i] = v;
    }

    /// All `Z` rows of slice `y`, contiguous.
    pub fn slice(&self, y: usize) -> &[i8] {
        let n = self.dims_x * self.dims_z;
        &self.data[y * n..(y + 1) * n]
    }

    pub fn slice_mut(&mut self, y: usize) -> &mut [i8] {
        let n = self.dims_x * self.dims_z;
        &mut self.data[y * n..(y + 1) * n]
    }

    pub fn row(&self, y: usize, z: usize) -> &[i8] {
        let start = self.index(0, y, z);
        &self.data[start..start + self.dims_x]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(FMAP_HEADER_LEN + self.data.len());
        out.extend_from_slice(FMAP_MAGIC);
        for d in [self.dims_x, self.dims_y, self.dims_z] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend(self.data.iter().map(|&p| p as u8));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < FMAP_HEADER_LEN {
            return Err(Error::format("feature map file shorter than its header"));
        }
        if &bytes[0..4] != FMAP_MAGIC {
            return Err(Error::format("bad feature map magic"));
        }
        let dim = |i: usize| -> usize {
            u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize
        };
        let (x, y, z) = (dim(0), dim(1), dim(2));
        let body = &bytes[FMAP_HEADER_LEN..];
        if body.len() != x * y * z {
            return Err(Error::format(format!(
                "feature map {x}x{y}x{z} expects {} pixel bytes, file has {}",
                x * y * z,
                body.len()
            )));
        }
        Ok(Self {
            dims_x: x,
            dims_y: y,
            dims_z: z,
            data: body.iter().map(|&b| b as i8).collect(),
        })
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.to_bytes())
    }
}

/// `[X, Y, Z]` extent of a feature map.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dims {
    pub x: usize,
    pub y: usize,
    pub z: usize,
}

impl Dims {
    pub const fn new(x: usize, y: usize, z: usize) -> Self {
        Self { x, y, z }
    }

    pub const fn volume(&self) -> usize {
        self.x * self.y * self.z
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.x, self.y, self.z)
    }
}

/// Wide accumulator results `[X, Y, O]`, same layout as [`FeatureMap`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AccumulatorMap {
    pub dims_x: usize,
    pub dims_y: usize,
    pub dims_o: usize,
    data: Vec<i64>,
}

impl AccumulatorMap {
    pub fn zeros(dims_x: usize, dims_y: usize, dims_o: usize) -> Self {
        Self {
            dims_x,
            dims_y,
            dims_o,
            data: vec![0; dims_x * dims_y * dims_o],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, o: usize) -> i64 {
        self.data[(y * self.dims_o + o) * self.dims_x + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, o: usize, v: i64) {
        self.data[(y * self.dims_o + o) * self.dims_x + x] = v;
    }

    pub fn data(&self) -> &[i64] {
        &self.data
    }

    /// Runs every accumulator through the bias/activation/scale stage.
    /// The accumulators are expected to already include the bias when
    /// `biases` is `None`.
    pub fn to_feature_map(&self, biases: Option<&[i32]>, scale: &ScaleParams) -> FeatureMap {
        FeatureMap::from_fn(self.dims_x, self.dims_y, self.dims_o, |x, y, o| {
            let b = biases.map_or(0, |b| b[o]);
            apply_bias_activation_scale(self.get(x, y, o), b, scale)
        })
    }
}

/// `[K, K, Z, O]` kernel geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct KernelShape {
    pub k: usize,
    pub z: usize,
    pub o: usize,
}

impl KernelShape {
    pub const fn new(k: usize, z: usize, o: usize) -> Self {
        Self { k, z, o }
    }

    /// Length of one flattened kernel column, `K * K * Z`.
    pub const fn flatten_len(&self) -> usize {
        self.k * self.k * self.z
    }

    pub const fn len(&self) -> usize {
        self.flatten_len() * self.o
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k.is_multiple_of(2) {
            return Err(Error::config(format!(
                "kernel size must be odd, got {}",
                self.k
            )));
        }
        if self.z == 0 || self.o == 0 {
            return Err(Error::config("kernel needs at least one input and one output channel"));
        }
        Ok(())
    }
}

impl std::fmt::Display for KernelShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}x{}", self.k, self.k, self.z, self.o)
    }
}

/// Integer weights `W[j][i][z][o]` plus one bias per output channel.
///
/// Storage keeps `j` fastest: `((o * Z + z) * K + i) * K + j`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuantizedWeightTensor {
    shape: KernelShape,
    weights: Vec<i32>,
    biases: Vec<i32>,
    /// Fractional bits of the fixed-point weights (output scaling metadata).
    pub frac_bits: u32,
}

impl QuantizedWeightTensor {
    pub fn new(shape: KernelShape, weights: Vec<i32>, biases: Vec<i32>) -> Result<Self> {
        shape.validate()?;
        if weights.len() != shape.len() {
            return Err(Error::config(format!(
                "kernel {shape} needs {} weights, got {}",
                shape.len(),
                weights.len()
            )));
        }
        if biases.len() != shape.o {
            return Err(Error::config(format!(
                "kernel {shape} needs {} biases, got {}",
                shape.o,
                biases.len()
            )));
        }
        Ok(Self {
            shape,
            weights,
            biases,
            frac_bits: 0,
        })
    }

    pub fn zeros(shape: KernelShape) -> Result<Self> {
        Self::new(shape, vec![0; shape.len()], vec![0; shape.o])
    }

    pub fn from_fn(
        shape: KernelShape,
        mut f: impl FnMut(usize, usize, usize, usize) -> i32,
    ) -> Result<Self> {
        let mut w = Self::zeros(shape)?;
        for o in 0..shape.o {
            for z in 0..shape.z {
                for i in 0..shape.k {
                    for j in 0..shape.k {
                        w.set(j, i, z, o, f(j, i, z, o));
                    }
                }
            }
        }
        Ok(w)
    }

    pub fn shape(&self) -> KernelShape {
        self.shape
    }

    pub fn k(&self) -> usize {
        self.shape.k
    }

    pub fn z(&self) -> usize {
        self.shape.z
    }

    pub fn o(&self) -> usize {
        self.shape.o
    }

    /// Convolution strides; this model supports stride 1 only.
    pub fn strides(&self) -> (usize, usize) {
        (1, 1)
    }

    #[inline]
    fn index(&self, j: usize, i: usize, z: usize, o: usize) -> usize {
        ((o * self.shape.z + z) * self.shape.k + i) * self.shape.k + j
    }

    #[inline]
    pub fn get(&self, j: usize, i: usize, z: usize, o: usize) -> i32 {
        self.weights[self.index(j, i, z, o)]
    }

    pub fn set(&mut self, j: usize, i: usize, z: usize, o: usize, v: i32) {
        let idx = self.index(j, i, z, o);
        self.weights[idx] = v;
    }

    /// Raw weights in storage order (`j` fastest, `o` slowest).
    pub fn weights(&self) -> &[i32] {
        &self.weights
    }

    pub fn biases(&self) -> &[i32] {
        &self.biases
    }

    pub fn set_biases(&mut self, biases: Vec<i32>) -> Result<()> {
        if biases.len() != self.shape.o {
            return Err(Error::config("bias count must equal output channels"));
        }
        self.biases = biases;
        Ok(())
    }

    pub fn nonzero_count(&self) -> usize {
        self.weights.iter().filter(|&&w| w != 0).count()
    }

    pub fn max_abs(&self) -> u32 {
        self.weights.iter().map(|w| w.unsigned_abs()).max().unwrap_or(0)
    }
}

/// Leaky-ReLU slope and the fixed-point output scaling applied after the
/// accumulators.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScaleParams {
    pub leaky_num: i32,
    pub leaky_shift: u32,
    pub out_mult: i32,
    pub out_shift: u32,
}

impl Default for ScaleParams {
    /// Slope 26/256 (about 0.1) and unit output scale.
    fn default() -> Self {
        Self {
            leaky_num: 26,
            leaky_shift: 8,
            out_mult: 1,
            out_shift: 0,
        }
    }
}

impl ScaleParams {
    /// Slope 1, i.e. no activation.
    pub fn linear(out_mult: i32, out_shift: u32) -> Self {
        Self {
            leaky_num: 1,
            leaky_shift: 0,
            out_mult,
            out_shift,
        }
    }

    pub fn with_output(out_mult: i32, out_shift: u32) -> Self {
        Self {
            out_mult,
            out_shift,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.leaky_shift > 30 || self.leaky_num <= 0 || (self.leaky_num as i64) > (1i64 << self.leaky_shift) {
            return Err(Error::config(format!(
                "leaky slope {}/2^{} must lie in (0, 1]",
                self.leaky_num, self.leaky_shift
            )));
        }
        if self.out_shift > 62 {
            return Err(Error::config("output shift too large"));
        }
        Ok(())
    }
}

/// Right shift by `shift` with round-half-away-from-zero.
#[inline]
fn round_shift(v: i64, shift: u32) -> i64 {
    if shift == 0 {
        return v;
    }
    let half = 1i64 << (shift - 1);
    if v >= 0 {
        (v + half) >> shift
    } else {
        -((-v + half) >> shift)
    }
}

/// Bias, leaky ReLU, output scaling and saturation to an 8-bit pixel.
#[inline]
pub fn apply_bias_activation_scale(acc: i64, bias: i32, p: &ScaleParams) -> i8 {
    let mut v = acc + bias as i64;
    if v < 0 {
        v = (v * p.leaky_num as i64) >> p.leaky_shift;
    }
    let scaled = round_shift(v.saturating_mul(p.out_mult as i64), p.out_shift);
    scaled.clamp(i8::MIN as i64, i8::MAX as i64) as i8
}

/// Direct nested-loop convolution with zero padding and stride 1, biases
/// included. No sparsity shortcuts: this is the reference everything else
/// is checked against.
pub fn conv2d_reference(input: &FeatureMap, w: &QuantizedWeightTensor) -> Result<AccumulatorMap> {
    if input.dims_z() != w.z() {
        return Err(Error::config(format!(
            "input has {} channels, kernel expects {}",
            input.dims_z(),
            w.z()
        )));
    }
    w.shape().validate()?;
    let (nx, ny) = (input.dims_x(), input.dims_y());
    let k = w.k();
    let half = (k / 2) as isize;
    let mut out = AccumulatorMap::zeros(nx, ny, w.o());
    for o in 0..w.o() {
        for y in 0..ny {
            for x in 0..nx {
                let mut acc = w.biases()[o] as i64;
                for z in 0..w.z() {
                    for i in 0..k {
                        for j in 0..k {
                            let px = input.get_padded(
                                x as isize + j as isize - half,
                                y as isize + i as isize - half,
                                z,
                            );
                            acc += px as i64 * w.get(j, i, z, o) as i64;
                        }
                    }
                }
                out.set(x, y, o, acc);
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PoolStride {
    One,
    Two,
}

impl PoolStride {
    pub fn get(self) -> usize {
        match self {
            PoolStride::One => 1,
            PoolStride::Two => 2,
        }
    }

    pub fn output_dims(self, input: Dims) -> Dims {
        match self {
            PoolStride::One => input,
            PoolStride::Two => Dims::new(input.x / 2, input.y / 2, input.z),
        }
    }
}

impl TryFrom<usize> for PoolStride {
    type Error = Error;

    fn try_from(v: usize) -> Result<Self> {
        match v {
            1 => Ok(PoolStride::One),
            2 => Ok(PoolStride::Two),
            _ => Err(Error::config(format!("maxpool stride must be 1 or 2, got {v}"))),
        }
    }
}

/// 2x2 max pooling. Stride 2 halves X and Y; stride 1 keeps the dims and
/// replicates the last row/column at the far edges.
pub fn maxpool2x2(input: &FeatureMap, stride: PoolStride) -> FeatureMap {
    let d = stride.output_dims(input.dims());
    let s = stride.get();
    let (lx, ly) = (input.dims_x().saturating_sub(1), input.dims_y().saturating_sub(1));
    FeatureMap::from_fn(d.x, d.y, d.z, |x, y, z| {
        let (x0, y0) = (x * s, y * s);
        let (x1, y1) = ((x0 + 1).min(lx), (y0 + 1).min(ly));
        input
            .get(x0, y0, z)
            .max(input.get(x1, y0, z))
            .max(input.get(x0, y1, z))
            .max(input.get(x1, y1, z))
    })
}

/// Nearest-neighbour 2x upsampling in X and Y.
pub fn upsample2x(input: &FeatureMap) -> FeatureMap {
    FeatureMap::from_fn(
        input.dims_x() * 2,
        input.dims_y() * 2,
        input.dims_z(),
        |x, y, z| input.get(x / 2, y / 2, z),
    )
}

/// Channel concatenation: `a`'s channels first, then `b`'s.
pub fn concat_z(a: &FeatureMap, b: &FeatureMap) -> Result<FeatureMap> {
    if a.dims_x() != b.dims_x() || a.dims_y() != b.dims_y() {
        return Err(Error::config(format!(
            "cannot concatenate {} with {}: X and Y differ",
            a.dims(),
            b.dims()
        )));
    }
    let za = a.dims_z();
    Ok(FeatureMap::from_fn(
        a.dims_x(),
        a.dims_y(),
        za + b.dims_z(),
        |x, y, z| {
            if z < za {
                a.get(x, y, z)
            } else {
                b.get(x, y, z - za)
            }
        },
    ))
}

pub fn macs_per_kernel(k: usize, z: usize, o: usize) -> usize {
    k * k * z * o
}

/// Uniform fixed-point quantization: `round(w * 2^frac_bits)`, saturated to
/// the symmetric range of a `weight_bits`-bit signed integer. Biases use the
/// same scale without saturation.
pub fn quantize_weights_uniform(
    shape: KernelShape,
    float_weights: &[f32],
    float_biases: &[f32],
    frac_bits: u32,
    weight_bits: u32,
) -> Result<QuantizedWeightTensor> {
    if !(2..=31).contains(&weight_bits) {
        return Err(Error::config("weight_bits must be in 2..=31"));
    }
    if frac_bits > 30 {
        return Err(Error::config("frac_bits must be at most 30"));
    }
    let limit = ((1i64 << (weight_bits - 1)) - 1) as f64;
    let scale = (1u64 << frac_bits) as f64;
    let weights = float_weights
        .iter()
        .map(|&w| (w as f64 * scale).round().clamp(-limit, limit) as i32)
        .collect();
    let biases = float_biases
        .iter()
        .map(|&b| (b as f64 * scale).round().clamp(i32::MIN as f64, i32::MAX as f64) as i32)
        .collect();
    let mut t = QuantizedWeightTensor::new(shape, weights, biases)?;
    t.frac_bits = frac_bits;
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_1x1() -> QuantizedWeightTensor {
        QuantizedWeightTensor::new(KernelShape::new(1, 1, 1), vec![1], vec![0]).unwrap()
    }

    #[test]
    fn identity_kernel_returns_input() {
        let input = FeatureMap::from_fn(5, 4, 1, |x, y, _| (x as i8 - 2) * (y as i8 + 1));
        let out = conv2d_reference(&input, &identity_1x1()).unwrap();
        for y in 0..4 {
            for x in 0..5 {
                assert_eq!(out.get(x, y, 0), input.get(x, y, 0) as i64);
            }
        }
    }

    #[test]
    fn zero_weights_leave_bias() {
        let input = FeatureMap::from_fn(6, 3, 2, |x, y, z| (x + y + z) as i8);
        let mut w = QuantizedWeightTensor::zeros(KernelShape::new(3, 2, 3)).unwrap();
        w.set_biases(vec![7, -3, 0]).unwrap();
        let out = conv2d_reference(&input, &w).unwrap();
        for y in 0..3 {
            for x in 0..6 {
                assert_eq!(out.get(x, y, 0), 7);
                assert_eq!(out.get(x, y, 1), -3);
                assert_eq!(out.get(x, y, 2), 0);
            }
        }
    }

    #[test]
    fn sequential_input_center_sum() {
        // values 0..15 in raster order, y-major
        let input = FeatureMap::from_fn(4, 4, 1, |x, y, _| (y * 4 + x) as i8);
        let w = QuantizedWeightTensor::from_fn(KernelShape::new(3, 1, 1), |_, _, _, _| 1).unwrap();
        let out = conv2d_reference(&input, &w).unwrap();
        // neighbourhood of (1,1): 0+1+2+4+5+6+8+9+10
        assert_eq!(out.get(1, 1, 0), 45);
        // corner (0,0): 0+1+4+5
        assert_eq!(out.get(0, 0, 0), 10);
    }

    #[test]
    fn channel_mismatch_rejected() {
        let input = FeatureMap::zeros(4, 4, 2);
        assert!(matches!(
            conv2d_reference(&input, &identity_1x1()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn scale_stage_examples() {
        let p = ScaleParams::default();
        assert_eq!(apply_bias_activation_scale(100, 0, &p), 100);
        assert_eq!(apply_bias_activation_scale(-256, 0, &p), -26);
        assert_eq!(apply_bias_activation_scale(300, 0, &p), 127);
        assert_eq!(apply_bias_activation_scale(-100_000, 0, &p), -128);
        // bias applied before the activation
        assert_eq!(apply_bias_activation_scale(-10, 20, &p), 10);
    }

    #[test]
    fn output_rounding_is_half_away_from_zero() {
        let p = ScaleParams::with_output(1, 1);
        assert_eq!(apply_bias_activation_scale(3, 0, &p), 2);
        assert_eq!(apply_bias_activation_scale(5, 0, &p), 3);
        let p = ScaleParams {
            leaky_num: 128,
            leaky_shift: 8,
            out_mult: 1,
            out_shift: 1,
        };
        // -6 -> leaky -3 -> -1.5 -> -2
        assert_eq!(apply_bias_activation_scale(-6, 0, &p), -2);
    }

    #[test]
    fn scale_params_validation() {
        assert!(ScaleParams::default().validate().is_ok());
        let bad = ScaleParams {
            leaky_num: 257,
            ..ScaleParams::default()
        };
        assert!(bad.validate().is_err());
        let lin = ScaleParams::linear(1, 0);
        assert!(lin.validate().is_ok());
        assert_eq!(apply_bias_activation_scale(-77, 0, &lin), -77);
    }

    #[test]
    fn maxpool_examples() {
        let m = FeatureMap::from_data(2, 2, 1, vec![1, 2, 3, 4]).unwrap();
        let p = maxpool2x2(&m, PoolStride::Two);
        assert_eq!(p.dims(), Dims::new(1, 1, 1));
        assert_eq!(p.get(0, 0, 0), 4);

        let c = FeatureMap::filled(7, 5, 3, -9);
        assert_eq!(maxpool2x2(&c, PoolStride::One), c);
        assert_eq!(maxpool2x2(&c, PoolStride::Two), FeatureMap::filled(3, 2, 3, -9));
    }

    #[test]
    fn maxpool_stride_one_replicates_edge() {
        let m = FeatureMap::from_fn(3, 3, 1, |x, y, _| (y * 3 + x) as i8);
        let p = maxpool2x2(&m, PoolStride::One);
        assert_eq!(p.dims(), m.dims());
        assert_eq!(p.get(0, 0, 0), 4);
        assert_eq!(p.get(2, 0, 0), 5);
        assert_eq!(p.get(2, 2, 0), 8);
        assert_eq!(p.get(0, 2, 0), 7);
    }

    #[test]
    fn maxpool_stride_two_shapes() {
        let m = FeatureMap::zeros(416, 416, 16);
        assert_eq!(maxpool2x2(&m, PoolStride::Two).dims(), Dims::new(208, 208, 16));
        let odd = FeatureMap::zeros(13, 7, 2);
        assert_eq!(maxpool2x2(&odd, PoolStride::Two).dims(), Dims::new(6, 3, 2));
        assert!(PoolStride::try_from(3).is_err());
    }

    #[test]
    fn macs_per_kernel_table_rows() {
        assert_eq!(macs_per_kernel(3, 3, 16), 432);
        assert_eq!(macs_per_kernel(3, 512, 1024), 4_718_592);
        assert_eq!(macs_per_kernel(1, 1024, 256), 262_144);
    }

    #[test]
    fn quantize_examples() {
        let shape = KernelShape::new(1, 1, 3);
        let q = quantize_weights_uniform(shape, &[0.0, 0.5, -0.3], &[0.0, 0.0, 0.0], 4, 8).unwrap();
        assert_eq!(q.weights(), &[0, 8, -5]);
        assert_eq!(q.frac_bits, 4);
        let sat = quantize_weights_uniform(shape, &[100.0, -100.0, 0.0], &[0.0; 3], 4, 8).unwrap();
        assert_eq!(sat.weights(), &[127, -127, 0]);
    }

    #[test]
    fn upsample_and_concat() {
        let a = FeatureMap::zeros(13, 13, 128);
        let up = upsample2x(&a);
        assert_eq!(up.dims(), Dims::new(26, 26, 128));
        let b = FeatureMap::zeros(26, 26, 256);
        assert_eq!(concat_z(&up, &b).unwrap().dims(), Dims::new(26, 26, 384));
        assert!(concat_z(&a, &b).is_err());

        let c = FeatureMap::filled(3, 2, 2, 5);
        assert_eq!(upsample2x(&c), FeatureMap::filled(6, 4, 2, 5));

        let small = FeatureMap::from_fn(2, 2, 1, |x, y, _| (x + 2 * y) as i8);
        let up = upsample2x(&small);
        assert_eq!(up.get(3, 0, 0), 1);
        assert_eq!(up.get(1, 3, 0), 2);
    }

    #[test]
    fn concat_keeps_channel_order() {
        let a = FeatureMap::filled(2, 2, 1, 1);
        let b = FeatureMap::filled(2, 2, 2, 2);
        let c = concat_z(&a, &b).unwrap();
        assert_eq!(c.get(1, 1, 0), 1);
        assert_eq!(c.get(1, 1, 2), 2);
    }

    #[test]
    fn fmap_file_layout() {
        let m = FeatureMap::from_fn(2, 2, 2, |x, y, z| (x + 2 * z + 4 * y) as i8 - 3);
        let bytes = m.to_bytes();
        assert_eq!(&bytes[0..4], b"FMAP");
        assert_eq!(&bytes[4..16], &[2, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0]);
        // x fastest, then z, then y
        let body: Vec<i8> = bytes[16..].iter().map(|&b| b as i8).collect();
        assert_eq!(body, vec![-3, -2, -1, 0, 1, 2, 3, 4]);
        assert_eq!(FeatureMap::from_bytes(&bytes).unwrap(), m);
        assert!(FeatureMap::from_bytes(&bytes[..20]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(FeatureMap::from_bytes(&bad).is_err());
    }
}
