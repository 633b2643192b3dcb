use rayon::prelude::*;

use super::array::{BlmacArray, MacArray, DEFAULT_ACC_BITS};
use super::slice_buffer::{select_window_into, SliceBuffer, SliceData};
use super::tiles::TileArrangement;
use crate::codec::{CompressedWeightStream, DecodedSymbol, FlattenOrder};
use crate::error::{Error, Result};
use crate::tensor::{
    apply_bias_activation_scale, AccumulatorMap, Dims, FeatureMap, PoolStride, QuantizedWeightTensor, ScaleParams,
};

/// Timing terms added on top of the one-cycle-per-symbol core.
///
/// The merger and scale units, and the stalls they cause, are not simulated;
/// a proportional allowance plus fixed per-row and per-slice terms stand in
/// for them.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CycleOverhead {
    /// Fixed pipeline cycles per (output channel, slice).
    pub per_row: u64,
    /// Proportional stall allowance, in percent of the busy cycles.
    pub percent: u32,
    /// Fixed cycles per output slice (merger drain).
    pub per_slice: u64,
    /// Memory rate for loading one input slice; 0 treats loads as hidden
    /// behind computation.
    pub load_bytes_per_cycle: u64,
}

impl Default for CycleOverhead {
    fn default() -> Self {
        Self {
            per_row: 0,
            percent: 12,
            per_slice: 0,
            load_bytes_per_cycle: 0,
        }
    }
}

impl CycleOverhead {
    pub const NONE: CycleOverhead = CycleOverhead {
        per_row: 0,
        percent: 0,
        per_slice: 0,
        load_bytes_per_cycle: 0,
    };

    #[inline]
    fn stall(&self, busy: u64) -> u64 {
        (busy * self.percent as u64).div_ceil(100)
    }

    /// Cycles of one output slice whose slowest group is busy for `busy`
    /// cycles, overlapped with loading `load_bytes` of the next input slice.
    pub fn slice_cycles(&self, busy: u64, load_bytes: u64) -> u64 {
        let compute = busy + self.stall(busy) + self.per_slice;
        if self.load_bytes_per_cycle == 0 {
            compute
        } else {
            compute.max(load_bytes.div_ceil(self.load_bytes_per_cycle))
        }
    }

    /// Cycles to produce one output column given the summed busy cycles of
    /// all channels.
    pub fn kernel_cycles(&self, busy: u64) -> u64 {
        busy + self.stall(busy)
    }
}

#[derive(Clone, Debug)]
pub struct EngineOptions {
    pub fuse_maxpool: Option<PoolStride>,
    pub acc_bits: u32,
    /// Track exact sums and fail on accumulator overflow.
    pub exact_check: bool,
    pub overhead: CycleOverhead,
    /// Run groups on the rayon pool. Results are identical either way.
    pub parallel: bool,
    /// Keep the (bias-included) accumulator values of every pixel.
    pub capture_accumulators: bool,
    /// Flatten order of the MAC event stream (the BLMAC path uses the
    /// stream's own order).
    pub mac_order: FlattenOrder,
}

impl Default for EngineOptions {
    fn default() -> Self {
        Self {
            fuse_maxpool: None,
            acc_bits: DEFAULT_ACC_BITS,
            exact_check: false,
            overhead: CycleOverhead::default(),
            parallel: true,
            capture_accumulators: false,
            mac_order: FlattenOrder::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerRunResult {
    /// Output pixels, pooled when a fused maxpool was requested.
    pub output: FeatureMap,
    /// Dims of the convolution output before pooling.
    pub conv_dims: Dims,
    pub cycles_per_slice: Vec<u64>,
    pub cycles_map: u64,
    pub cycles_per_kernel: u64,
    /// Busy cycles of all channels for one output slice, before overhead.
    pub busy_per_kernel: u64,
    /// Symbols decoded (or MAC events issued) per output slice.
    pub decode_steps_per_slice: u64,
    pub decode_steps: u64,
    pub peak_residency: usize,
    pub residency_capacity: usize,
    pub accumulators: Option<AccumulatorMap>,
}

impl LayerRunResult {
    pub fn max_cycles_per_slice(&self) -> u64 {
        self.cycles_per_slice.iter().copied().max().unwrap_or(0)
    }
}

/// Work of one output channel for one output slice.
struct ColumnOutput {
    sums: Vec<i64>,
    cycles: u64,
    steps: u64,
}

/// Busy cycles, decode steps and finished columns of one group.
type GroupWork = (u64, u64, Vec<(usize, ColumnOutput)>);

trait ColumnKernel: Sync {
    type State: Send;
    fn k(&self) -> usize;
    fn z(&self) -> usize;
    fn o(&self) -> usize;
    fn new_state(&self, width: usize, opts: &EngineOptions) -> Result<Self::State>;
    fn compute(&self, o: usize, y: usize, buf: &SliceBuffer, st: &mut Self::State) -> Result<ColumnOutput>;
}

struct BlmacKernel<'a> {
    stream: &'a CompressedWeightStream,
}

struct BlmacState {
    arr: BlmacArray,
    win: Vec<i8>,
}

impl ColumnKernel for BlmacKernel<'_> {
    type State = BlmacState;

    fn k(&self) -> usize {
        self.stream.k
    }

    fn z(&self) -> usize {
        self.stream.z
    }

    fn o(&self) -> usize {
        self.stream.o
    }

    fn new_state(&self, width: usize, opts: &EngineOptions) -> Result<BlmacState> {
        Ok(BlmacState {
            arr: BlmacArray::new(width, opts.acc_bits, opts.exact_check)?,
            win: vec![0; width],
        })
    }

    fn compute(&self, o: usize, y: usize, buf: &SliceBuffer, st: &mut BlmacState) -> Result<ColumnOutput> {
        let s = self.stream;
        st.arr.reset();
        let mut dec = s.decoder(o)?;
        let mut lcnt = s.n_b - 1;
        while let Some(sym) = dec.next_symbol()? {
            match sym {
                DecodedSymbol::Digit { pos, sign, .. } => {
                    let (j, i, z) = s.order.unflatten(pos, s.k, s.z);
                    select_window_into(buf.read_row(i, z), j, s.k, &mut st.win);
                    st.arr.step(&st.win, sign);
                }
                DecodedSymbol::Eor if lcnt > 0 => {
                    st.arr.shift();
                    lcnt -= 1;
                }
                DecodedSymbol::Eor => st.arr.end_column(),
            }
        }
        Ok(ColumnOutput {
            sums: st.arr.finish(y, o)?,
            cycles: st.arr.cycles(),
            steps: dec.steps(),
        })
    }
}

/// One nonzero weight of a column as a MAC event.
#[derive(Clone, Copy)]
struct MacEvent {
    j: u16,
    i: u16,
    z: u32,
    w: i32,
}

struct MacKernel {
    k: usize,
    z: usize,
    columns: Vec<Vec<MacEvent>>,
}

impl MacKernel {
    fn new(w: &QuantizedWeightTensor, order: FlattenOrder) -> Self {
        let (k, z_dim) = (w.k(), w.z());
        let columns = (0..w.o())
            .map(|o| {
                (0..w.shape().flatten_len())
                    .filter_map(|pos| {
                        let (j, i, z) = order.unflatten(pos, k, z_dim);
                        let v = w.get(j, i, z, o);
                        (v != 0).then_some(MacEvent {
                            j: j as u16,
                            i: i as u16,
                            z: z as u32,
                            w: v,
                        })
                    })
                    .collect()
            })
            .collect();
        Self { k, z: z_dim, columns }
    }
}

struct MacState {
    arr: MacArray,
    win: Vec<i8>,
}

impl ColumnKernel for MacKernel {
    type State = MacState;

    fn k(&self) -> usize {
        self.k
    }

    fn z(&self) -> usize {
        self.z
    }

    fn o(&self) -> usize {
        self.columns.len()
    }

    fn new_state(&self, width: usize, opts: &EngineOptions) -> Result<MacState> {
        Ok(MacState {
            arr: MacArray::new(width, opts.acc_bits, opts.exact_check)?,
            win: vec![0; width],
        })
    }

    fn compute(&self, o: usize, y: usize, buf: &SliceBuffer, st: &mut MacState) -> Result<ColumnOutput> {
        st.arr.reset();
        for ev in &self.columns[o] {
            select_window_into(buf.read_row(ev.i as usize, ev.z as usize), ev.j as usize, self.k, &mut st.win);
            st.arr.mac(&st.win, ev.w);
        }
        st.arr.end_column();
        Ok(ColumnOutput {
            sums: st.arr.finish(y, o)?,
            cycles: st.arr.cycles(),
            steps: self.columns[o].len() as u64 + 1,
        })
    }
}

/// Streaming 2x2 maxpool fed one convolution output slice at a time.
struct FusedPool {
    stride: PoolStride,
    prev: Vec<i8>,
    has_prev: bool,
    out: FeatureMap,
    x_dim: usize,
    o_dim: usize,
}

impl FusedPool {
    fn new(stride: PoolStride, conv: Dims) -> Self {
        let d = stride.output_dims(conv);
        Self {
            stride,
            prev: vec![0; conv.x * conv.z],
            has_prev: false,
            out: FeatureMap::zeros(d.x, d.y, d.z),
            x_dim: conv.x,
            o_dim: conv.z,
        }
    }

    fn emit(&mut self, out_y: usize, a: &[i8], b: &[i8]) {
        let (nx, s) = (self.out.dims_x(), self.stride.get());
        let last = self.x_dim - 1;
        let dst = self.out.slice_mut(out_y);
        for o in 0..self.o_dim {
            let (ra, rb) = (&a[o * self.x_dim..][..self.x_dim], &b[o * self.x_dim..][..self.x_dim]);
            for x in 0..nx {
                let x0 = x * s;
                let x1 = (x0 + 1).min(last);
                dst[o * nx + x] = ra[x0].max(ra[x1]).max(rb[x0]).max(rb[x1]);
            }
        }
    }

    fn feed(&mut self, y: usize, slice: &[i8]) {
        match self.stride {
            PoolStride::Two => {
                if y % 2 == 1 {
                    let prev = std::mem::take(&mut self.prev);
                    self.emit(y / 2, &prev, slice);
                    self.prev = prev;
                } else {
                    self.prev.copy_from_slice(slice);
                }
            }
            PoolStride::One => {
                if self.has_prev {
                    let prev = std::mem::take(&mut self.prev);
                    self.emit(y - 1, &prev, slice);
                    self.prev = prev;
                }
                self.prev.copy_from_slice(slice);
                self.has_prev = true;
            }
        }
    }

    fn finish(mut self, y_dim: usize) -> FeatureMap {
        if self.stride == PoolStride::One && self.has_prev {
            let prev = std::mem::take(&mut self.prev);
            self.emit(y_dim - 1, &prev, &prev);
        }
        self.out
    }
}

fn check_layer(input: &FeatureMap, k: usize, z: usize, o: usize, biases: &[i32], arrange: &TileArrangement) -> Result<()> {
    if k.is_multiple_of(2) {
        return Err(Error::config(format!("kernel size {k} must be odd")));
    }
    if input.dims_z() != z {
        return Err(Error::config(format!(
            "input has {} channels, weights expect {z}",
            input.dims_z()
        )));
    }
    if biases.len() != o {
        return Err(Error::config(format!("{} biases for {o} output channels", biases.len())));
    }
    if input.dims_x() > arrange.group_width {
        return Err(Error::config(format!(
            "line width {} exceeds group width {}",
            input.dims_x(),
            arrange.group_width
        )));
    }
    if input.dims_x() == 0 || input.dims_y() == 0 {
        return Err(Error::config("empty input feature map"));
    }
    Ok(())
}

fn run_layer<Kn: ColumnKernel>(
    input: &FeatureMap,
    kernel: &Kn,
    biases: &[i32],
    scale: &ScaleParams,
    arrange: &TileArrangement,
    opts: &EngineOptions,
) -> Result<LayerRunResult> {
    let (k, z_dim, o_dim) = (kernel.k(), kernel.z(), kernel.o());
    check_layer(input, k, z_dim, o_dim, biases, arrange)?;
    scale.validate()?;
    let (x_dim, y_dim) = (input.dims_x(), input.dims_y());
    let half = (k / 2) as isize;
    let conv_dims = Dims::new(x_dim, y_dim, o_dim);

    let mut buf = SliceBuffer::new(k, z_dim, x_dim);
    let push = |buf: &mut SliceBuffer, s: isize| {
        if s >= 0 && (s as usize) < y_dim {
            buf.push(SliceData::Pixels(input.slice(s as usize)))
        } else {
            buf.push(SliceData::VirtualZero)
        }
    };
    // slots 0..K-1 receive slices -K/2..=K/2
    for s in -half..=half {
        push(&mut buf, s)?;
        buf.rotate();
    }

    let mut states = (0..arrange.groups)
        .map(|_| kernel.new_state(x_dim, opts))
        .collect::<Result<Vec<_>>>()?;
    let mut conv_out = opts.fuse_maxpool.is_none().then(|| FeatureMap::zeros(x_dim, y_dim, o_dim));
    let mut pool = opts.fuse_maxpool.map(|s| FusedPool::new(s, conv_dims));
    let mut accs = opts.capture_accumulators.then(|| AccumulatorMap::zeros(x_dim, y_dim, o_dim));
    let mut slice_px = vec![0i8; o_dim * x_dim];

    let mut cycles_per_slice = Vec::with_capacity(y_dim);
    let mut busy_per_kernel = 0;
    let mut steps_per_slice = 0;
    let mut decode_steps = 0;
    let load_bytes = (z_dim * x_dim) as u64;

    for y in 0..y_dim {
        // the next input slice fills slot K while slots 0..K-1 are read
        push(&mut buf, y as isize + half + 1)?;
        let buf_ref = &buf;
        let work = |(g, st): (usize, &mut Kn::State)| -> Result<GroupWork> {
            let mut busy = 0;
            let mut steps = 0;
            let mut cols = Vec::new();
            for o in arrange.channels_of(g, o_dim) {
                let col = kernel.compute(o, y, buf_ref, st)?;
                busy += col.cycles + opts.overhead.per_row;
                steps += col.steps;
                cols.push((o, col));
            }
            Ok((busy, steps, cols))
        };
        let groups: Vec<_> = if opts.parallel && arrange.groups > 1 {
            states.par_iter_mut().enumerate().map(work).collect::<Result<_>>()?
        } else {
            states.iter_mut().enumerate().map(work).collect::<Result<_>>()?
        };

        let mut slowest = 0;
        let mut busy_all = 0;
        let mut steps_all = 0;
        for (busy, steps, cols) in groups {
            slowest = slowest.max(busy);
            busy_all += busy;
            steps_all += steps;
            for (o, col) in cols {
                let row = &mut slice_px[o * x_dim..(o + 1) * x_dim];
                for (x, (&v, px)) in col.sums.iter().zip(row.iter_mut()).enumerate() {
                    *px = apply_bias_activation_scale(v, biases[o], scale);
                    if let Some(a) = accs.as_mut() {
                        a.set(x, y, o, v + biases[o] as i64);
                    }
                }
            }
        }
        if y == 0 {
            busy_per_kernel = busy_all;
            steps_per_slice = steps_all;
        }
        debug_assert_eq!(busy_all, busy_per_kernel);
        decode_steps += steps_all;
        cycles_per_slice.push(opts.overhead.slice_cycles(slowest, load_bytes));

        match (&mut conv_out, &mut pool) {
            (Some(map), _) => map.slice_mut(y).copy_from_slice(&slice_px),
            (None, Some(p)) => p.feed(y, &slice_px),
            (None, None) => unreachable!(),
        }
        buf.rotate();
    }

    let output = match (conv_out, pool) {
        (Some(map), _) => map,
        (None, Some(p)) => p.finish(y_dim),
        (None, None) => unreachable!(),
    };
    Ok(LayerRunResult {
        output,
        conv_dims,
        cycles_map: cycles_per_slice.iter().sum(),
        cycles_per_slice,
        cycles_per_kernel: opts.overhead.kernel_cycles(busy_per_kernel),
        busy_per_kernel,
        decode_steps_per_slice: steps_per_slice,
        decode_steps,
        peak_residency: buf.peak_resident_pixels(),
        residency_capacity: buf.capacity_pixels(),
        accumulators: accs,
    })
}

/// Runs one convolution layer on the bit-layer (architecture II) array,
/// decoding the compressed weights once per output slice and channel.
pub fn run_layer_blmac(
    input: &FeatureMap,
    stream: &CompressedWeightStream,
    biases: &[i32],
    scale: &ScaleParams,
    arrange: &TileArrangement,
    opts: &EngineOptions,
) -> Result<LayerRunResult> {
    if stream.n_b == 0 {
        return Err(Error::format("stream declares zero bit layers"));
    }
    run_layer(input, &BlmacKernel { stream }, biases, scale, arrange, opts)
}

/// Runs one convolution layer on the multiplier (architecture I) array:
/// one row-wide multiply-accumulate per nonzero weight.
pub fn run_layer_mac(
    input: &FeatureMap,
    w: &QuantizedWeightTensor,
    scale: &ScaleParams,
    arrange: &TileArrangement,
    opts: &EngineOptions,
) -> Result<LayerRunResult> {
    w.shape().validate()?;
    let kernel = MacKernel::new(w, opts.mac_order);
    run_layer(input, &kernel, w.biases(), scale, arrange, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{compress_tensor, estimate_model, ProbabilityModel};
    use crate::engine::tiles::{arrange_tiles, ArrayGeometry};
    use crate::signed_digit::build_layer_plans;
    use crate::tensor::{conv2d_reference, maxpool2x2, KernelShape};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_layer(
        rng: &mut ChaCha8Rng,
        x: usize,
        y: usize,
        k: usize,
        z: usize,
        o: usize,
        sparsity: f64,
    ) -> (FeatureMap, QuantizedWeightTensor) {
        let input = FeatureMap::from_fn(x, y, z, |_, _, _| rng.random_range(-128..=127));
        let mut w = QuantizedWeightTensor::from_fn(KernelShape::new(k, z, o), |_, _, _, _| {
            if rng.random_bool(sparsity) {
                0
            } else {
                rng.random_range(-127..=127)
            }
        })
        .unwrap();
        let biases = (0..o).map(|_| rng.random_range(-2000..=2000)).collect();
        w.set_biases(biases).unwrap();
        (input, w)
    }

    fn fitted_stream(w: &QuantizedWeightTensor) -> CompressedWeightStream {
        let model = estimate_model(&build_layer_plans(w, FlattenOrder::Izj));
        compress_tensor(w, FlattenOrder::Izj, &model).unwrap()
    }

    fn oracle(input: &FeatureMap, w: &QuantizedWeightTensor, scale: &ScaleParams) -> FeatureMap {
        conv2d_reference(input, w).unwrap().to_feature_map(None, scale)
    }

    #[test]
    fn identity_1x1_layer() {
        let input = FeatureMap::from_fn(5, 3, 1, |x, y, _| (x * 10 + y) as i8);
        let w = QuantizedWeightTensor::new(KernelShape::new(1, 1, 1), vec![1], vec![0]).unwrap();
        let stream = compress_tensor(&w, FlattenOrder::Izj, &ProbabilityModel::uniform()).unwrap();
        let arr = arrange_tiles(5).unwrap();
        let opts = EngineOptions::default();
        let r = run_layer_blmac(&input, &stream, &[0], &ScaleParams::default(), &arr, &opts).unwrap();
        assert_eq!(r.output, input);
        let m = run_layer_mac(&input, &w, &ScaleParams::default(), &arr, &opts).unwrap();
        assert_eq!(m.output, input);
    }

    #[test]
    fn random_layer_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (input, w) = random_layer(&mut rng, 8, 8, 3, 4, 4, 0.7);
        let scale = ScaleParams::with_output(3, 6);
        let stream = fitted_stream(&w);
        let arr = arrange_tiles(8).unwrap();
        let opts = EngineOptions {
            exact_check: true,
            capture_accumulators: true,
            ..Default::default()
        };
        let r = run_layer_blmac(&input, &stream, w.biases(), &scale, &arr, &opts).unwrap();
        let want = conv2d_reference(&input, &w).unwrap();
        assert_eq!(r.accumulators.as_ref().unwrap(), &want);
        assert_eq!(r.output, oracle(&input, &w, &scale));
        let m = run_layer_mac(&input, &w, &scale, &arr, &opts).unwrap();
        assert_eq!(m.output, r.output);
    }

    #[test]
    fn output_independent_of_arrangement() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (input, w) = random_layer(&mut rng, 12, 6, 3, 3, 7, 0.4);
        let stream = fitted_stream(&w);
        let scale = ScaleParams::with_output(1, 4);
        let geo = ArrayGeometry::default();
        let mut outs = Vec::new();
        for groups in [1, 4, 32] {
            let arr = TileArrangement::new(groups, geo).unwrap();
            for parallel in [false, true] {
                let opts = EngineOptions {
                    parallel,
                    ..Default::default()
                };
                outs.push(run_layer_blmac(&input, &stream, w.biases(), &scale, &arr, &opts).unwrap());
            }
        }
        for r in &outs[1..] {
            assert_eq!(r.output, outs[0].output);
            assert_eq!(r.busy_per_kernel, outs[0].busy_per_kernel);
        }
        // more groups never take longer per slice
        assert!(outs[2].cycles_per_slice[0] <= outs[0].cycles_per_slice[0]);
    }

    #[test]
    fn cycle_and_step_accounting() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (input, w) = random_layer(&mut rng, 6, 5, 3, 2, 3, 0.5);
        let plans = build_layer_plans(&w, FlattenOrder::Izj);
        let bound: u64 = plans.iter().map(|p| p.decode_steps()).sum();
        let stream = fitted_stream(&w);
        let arr = TileArrangement::new(1, ArrayGeometry::default()).unwrap();
        let opts = EngineOptions {
            overhead: CycleOverhead::NONE,
            ..Default::default()
        };
        let r = run_layer_blmac(&input, &stream, w.biases(), &ScaleParams::default(), &arr, &opts).unwrap();
        assert_eq!(r.decode_steps_per_slice, bound);
        assert_eq!(r.decode_steps, bound * 5);
        assert_eq!(r.cycles_per_kernel, bound);
        assert_eq!(r.cycles_per_slice, vec![bound; 5]);
        assert_eq!(r.cycles_map, bound * 5);

        let with = EngineOptions::default();
        let r = run_layer_blmac(&input, &stream, w.biases(), &ScaleParams::default(), &arr, &with).unwrap();
        assert_eq!(r.cycles_per_kernel, bound + (bound * 12).div_ceil(100));
    }

    #[test]
    fn dense_mac_cycles() {
        let w = QuantizedWeightTensor::from_fn(KernelShape::new(3, 2, 1), |_, _, _, _| 1).unwrap();
        let input = FeatureMap::filled(4, 4, 2, 1);
        let arr = arrange_tiles(4).unwrap();
        let opts = EngineOptions {
            overhead: CycleOverhead::NONE,
            ..Default::default()
        };
        let r = run_layer_mac(&input, &w, &ScaleParams::default(), &arr, &opts).unwrap();
        assert_eq!(r.cycles_per_kernel, 18 + 1);
        let stream = fitted_stream(&w);
        let b = run_layer_blmac(&input, &stream, &[0], &ScaleParams::default(), &arr, &opts).unwrap();
        assert_eq!(b.cycles_per_kernel, 18 + 1);
        assert_eq!(b.output, r.output);
    }

    #[test]
    fn fused_maxpool_matches_unfused() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for (x, y) in [(8, 8), (7, 5), (1, 1), (2, 3)] {
            let (input, w) = random_layer(&mut rng, x, y, 3, 2, 3, 0.3);
            let stream = fitted_stream(&w);
            let scale = ScaleParams::with_output(1, 5);
            let arr = arrange_tiles(x).unwrap();
            let plain = run_layer_blmac(&input, &stream, w.biases(), &scale, &arr, &EngineOptions::default()).unwrap();
            for stride in [PoolStride::One, PoolStride::Two] {
                let opts = EngineOptions {
                    fuse_maxpool: Some(stride),
                    ..Default::default()
                };
                let fused = run_layer_blmac(&input, &stream, w.biases(), &scale, &arr, &opts).unwrap();
                assert_eq!(fused.output, maxpool2x2(&plain.output, stride), "{x}x{y} {stride:?}");
                // every slice is still computed
                assert_eq!(fused.cycles_per_slice.len(), y);
            }
        }
    }

    #[test]
    fn wrapped_result_is_correct_when_it_fits() {
        // intermediate sums overflow 12 bits, the final value does not
        let input = FeatureMap::filled(3, 1, 2, 127);
        let w = QuantizedWeightTensor::new(KernelShape::new(1, 2, 1), vec![31, -30], vec![0]).unwrap();
        let stream = fitted_stream(&w);
        let arr = arrange_tiles(3).unwrap();
        let opts = EngineOptions {
            acc_bits: 12,
            exact_check: true,
            capture_accumulators: true,
            ..Default::default()
        };
        let r = run_layer_blmac(&input, &stream, &[0], &ScaleParams::default(), &arr, &opts).unwrap();
        assert_eq!(r.accumulators.unwrap().get(0, 0, 0), 127);
    }

    #[test]
    fn overflow_is_reported_in_exact_mode() {
        let input = FeatureMap::filled(3, 2, 1, 127);
        let w = QuantizedWeightTensor::new(KernelShape::new(1, 1, 1), vec![127], vec![0]).unwrap();
        let stream = fitted_stream(&w);
        let arr = arrange_tiles(3).unwrap();
        let opts = EngineOptions {
            acc_bits: 12,
            exact_check: true,
            ..Default::default()
        };
        let err = run_layer_blmac(&input, &stream, &[0], &ScaleParams::default(), &arr, &opts).unwrap_err();
        assert!(matches!(err, Error::Overflow { x: 0, y: 0, o: 0, bits: 12, .. }));
        let loose = EngineOptions { acc_bits: 12, ..Default::default() };
        assert!(run_layer_blmac(&input, &stream, &[0], &ScaleParams::default(), &arr, &loose).is_ok());
    }

    #[test]
    fn residency_stays_within_k_plus_one_slices() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (input, w) = random_layer(&mut rng, 9, 10, 3, 5, 2, 0.5);
        let stream = fitted_stream(&w);
        let arr = arrange_tiles(9).unwrap();
        let r = run_layer_blmac(&input, &stream, w.biases(), &ScaleParams::default(), &arr, &EngineOptions::default())
            .unwrap();
        assert!(r.peak_residency <= r.residency_capacity);
        assert_eq!(r.residency_capacity, 4 * 5 * 9);
    }

    #[test]
    fn corrupt_stream_propagates() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (input, w) = random_layer(&mut rng, 6, 4, 3, 4, 2, 0.2);
        let mut stream = fitted_stream(&w);
        let n = stream.payload_len();
        stream.payload_mut()[..n / 2].fill(0xFF);
        let arr = arrange_tiles(6).unwrap();
        let r = run_layer_blmac(&input, &stream, w.biases(), &ScaleParams::default(), &arr, &EngineOptions::default());
        assert!(r.is_err());
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (input, w) = random_layer(&mut rng, 20, 4, 3, 2, 2, 0.2);
        let stream = fitted_stream(&w);
        let narrow = TileArrangement::new(32, ArrayGeometry::default()).unwrap();
        let opts = EngineOptions::default();
        let scale = ScaleParams::default();
        assert!(run_layer_blmac(&input, &stream, w.biases(), &scale, &narrow, &opts).is_err());
        let wide = arrange_tiles(20).unwrap();
        assert!(run_layer_blmac(&input, &stream, &[0], &scale, &wide, &opts).is_err());
        let other = FeatureMap::zeros(20, 4, 3);
        assert!(run_layer_blmac(&other, &stream, w.biases(), &scale, &wide, &opts).is_err());
    }
}
