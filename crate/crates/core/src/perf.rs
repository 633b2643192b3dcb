//! Cycle, bandwidth and clock accounting for a layer stack.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::engine::{CycleOverhead, TileArrangement};
use crate::error::{Error, Result};
use crate::signed_digit::BitLayerPlan;
use crate::tensor::{Dims, KernelShape, PoolStride};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    Maxpool,
    Upsample,
    Route,
}

/// Shape summary of one layer as seen by the accounting.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub index: usize,
    pub name: String,
    pub kind: LayerKind,
    /// Kernel dims for convolutions.
    pub kernel: Option<KernelShape>,
    /// Stride for maxpool layers.
    pub pool: Option<PoolStride>,
    pub input: Dims,
    /// Output dims; for a convolution with a fused maxpool this is the
    /// pooled map.
    pub output: Dims,
    pub fused_maxpool: Option<PoolStride>,
}

impl LayerSpec {
    pub fn conv(index: usize, k: usize, input: Dims, o: usize, fused_maxpool: Option<PoolStride>) -> Self {
        let conv_out = Dims::new(input.x, input.y, o);
        Self {
            index,
            name: format!("conv{index}"),
            kind: LayerKind::Conv,
            kernel: Some(KernelShape::new(k, input.z, o)),
            pool: None,
            input,
            output: fused_maxpool.map_or(conv_out, |s| s.output_dims(conv_out)),
            fused_maxpool,
        }
    }

    pub fn maxpool(index: usize, stride: PoolStride, input: Dims) -> Self {
        Self {
            index,
            name: format!("maxpool{index}"),
            kind: LayerKind::Maxpool,
            kernel: None,
            pool: Some(stride),
            input,
            output: stride.output_dims(input),
            fused_maxpool: None,
        }
    }

    /// Convolution output before any fused pooling.
    pub fn conv_output(&self) -> Dims {
        match self.kernel {
            Some(k) => Dims::new(self.input.x, self.input.y, k.o),
            None => self.output,
        }
    }

    pub fn macs_per_kernel(&self) -> u64 {
        self.kernel.map_or(0, |k| (k.k * k.k * k.z * k.o) as u64)
    }

    /// Two operations (multiply and add) per MAC over the whole map.
    pub fn operations(&self) -> u64 {
        2 * self.macs_per_kernel() * (self.input.x * self.input.y) as u64
    }

    pub fn validate(&self) -> Result<()> {
        let expect = match (self.kind, self.kernel, self.pool) {
            (LayerKind::Conv, Some(k), None) => {
                k.validate()?;
                if k.z != self.input.z {
                    return Err(Error::config(format!(
                        "layer {}: kernel depth {} does not match input depth {}",
                        self.index, k.z, self.input.z
                    )));
                }
                let out = Dims::new(self.input.x, self.input.y, k.o);
                self.fused_maxpool.map_or(out, |s| s.output_dims(out))
            }
            (LayerKind::Maxpool, None, Some(s)) => s.output_dims(self.input),
            (LayerKind::Upsample, None, None) => Dims::new(self.input.x * 2, self.input.y * 2, self.input.z),
            (LayerKind::Route, None, None) => self.output,
            _ => return Err(Error::config(format!("layer {}: inconsistent layer spec", self.index))),
        };
        if expect != self.output {
            return Err(Error::config(format!(
                "layer {}: output {} inconsistent with its kind (expected {expect})",
                self.index, self.output
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CycleEstimate {
    pub cycles_per_slice: u64,
    pub cycles_map: u64,
    pub cycles_per_kernel: u64,
    /// `sum_o (N_3(o) + N_b)` plus per-row terms: one slice's total work.
    pub busy_per_kernel: u64,
}

/// Analytic cycle count of a convolution from its bit-layer plans.
///
/// The slowest group is approximated by an even split of the work, so with
/// zero overhead this is a lower bound on the engine's count.
pub fn cycles_estimate_layer(
    spec: &LayerSpec,
    plans: &[BitLayerPlan],
    arrange: &TileArrangement,
    overhead: &CycleOverhead,
) -> Result<CycleEstimate> {
    let kernel = spec
        .kernel
        .ok_or_else(|| Error::config(format!("layer {} is not a convolution", spec.index)))?;
    if plans.len() != kernel.o {
        return Err(Error::config(format!(
            "layer {}: {} plans for {} output channels",
            spec.index,
            plans.len(),
            kernel.o
        )));
    }
    let busy: u64 = plans.iter().map(|p| p.decode_steps() + overhead.per_row).sum();
    let per_group = busy.div_ceil(arrange.groups as u64);
    let cycles_per_slice = overhead.slice_cycles(per_group, (spec.input.x * spec.input.z) as u64);
    Ok(CycleEstimate {
        cycles_per_slice,
        cycles_map: cycles_per_slice * spec.input.y as u64,
        cycles_per_kernel: overhead.kernel_cycles(busy),
        busy_per_kernel: busy,
    })
}

/// Cycles to stream `compressed_bytes` of weights into the cache; kept
/// apart from the compute lower bound. Zero rate means not modeled.
pub fn weight_load_cycles(compressed_bytes: u64, bytes_per_cycle: u64) -> u64 {
    if bytes_per_cycle == 0 {
        0
    } else {
        compressed_bytes.div_ceil(bytes_per_cycle)
    }
}

/// Passes over the input map when the compressed weights have to be split
/// along `o` to fit the cache.
pub fn multipass_factor(compressed_bytes: u64, cache_bytes: u64) -> Result<u64> {
    if cache_bytes == 0 {
        return Err(Error::config("weight cache size must be positive"));
    }
    Ok(compressed_bytes.div_ceil(cache_bytes).max(1))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BandwidthRow {
    pub index: usize,
    pub input_dims: Dims,
    pub output_dims: Dims,
    pub input_bytes: u64,
    pub output_bytes: u64,
    pub weight_bytes: u64,
    pub passes: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BandwidthTotals {
    pub input_bytes: u64,
    pub output_bytes: u64,
    pub weight_bytes: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BandwidthReport {
    pub rows: Vec<BandwidthRow>,
    pub totals: BandwidthTotals,
}

/// Per-convolution byte traffic. `weight_bytes[n]` is the compressed size
/// of the `n`-th convolution in `specs`; `cache_bytes = None` means the
/// cache holds every layer.
pub fn bandwidth_report(specs: &[LayerSpec], weight_bytes: &[u64], cache_bytes: Option<u64>) -> Result<BandwidthReport> {
    let convs: Vec<&LayerSpec> = specs.iter().filter(|s| s.kind == LayerKind::Conv).collect();
    if convs.len() != weight_bytes.len() {
        return Err(Error::config(format!(
            "{} weight sizes for {} convolution layers",
            weight_bytes.len(),
            convs.len()
        )));
    }
    let mut report = BandwidthReport::default();
    for (spec, &wb) in convs.into_iter().zip(weight_bytes) {
        let passes = match cache_bytes {
            Some(c) => multipass_factor(wb, c)?,
            None => 1,
        };
        let row = BandwidthRow {
            index: spec.index,
            input_dims: spec.input,
            output_dims: spec.output,
            input_bytes: spec.input.volume() as u64 * passes,
            output_bytes: spec.output.volume() as u64,
            weight_bytes: wb,
            passes,
        };
        report.totals.input_bytes += row.input_bytes;
        report.totals.output_bytes += row.output_bytes;
        report.totals.weight_bytes += row.weight_bytes;
        report.rows.push(row);
    }
    Ok(report)
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::config(format!("{name} must be a positive number, got {v}")))
    }
}

/// Clock in Hz needed to run `cycles_per_frame` at `fps`.
pub fn required_clock(cycles_per_frame: u64, fps: f64) -> Result<f64> {
    check_positive("frame rate", fps)?;
    if cycles_per_frame == 0 {
        return Err(Error::config("cycles per frame must be positive"));
    }
    Ok(cycles_per_frame as f64 * fps)
}

pub fn operations_per_clock(total_ops: f64, cycles_per_frame: f64) -> Result<f64> {
    check_positive("operation count", total_ops)?;
    check_positive("cycles per frame", cycles_per_frame)?;
    Ok(total_ops / cycles_per_frame)
}

pub fn operations_per_second(ops_per_clock: f64, clock_hz: f64) -> f64 {
    ops_per_clock * clock_hz
}

/// Frame cycles when only `to_height` of `from_height` slices are
/// processed, scaling the frame total uniformly.
pub fn rescale_frame_cycles(frame_cycles: u64, from_height: usize, to_height: usize) -> f64 {
    frame_cycles as f64 * to_height as f64 / from_height as f64
}

/// Cycle figures substituted for the estimated ones: per-layer cycles per
/// slice and an optional frame total.
///
/// Text format, one entry per line, `#` starts a comment:
///
/// ```text
/// layer 0 723
/// frame 7909915
/// ```
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Calibration {
    pub cycles_per_slice: BTreeMap<usize, u64>,
    pub frame_cycles: Option<u64>,
}

impl Calibration {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cal = Calibration::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |what: &str| Error::config(format!("calibration line {}: {what}: {raw:?}", n + 1));
            let fields: Vec<&str> = line.split_whitespace().collect();
            let num = |s: &str| s.replace(',', "").parse::<u64>().map_err(|_| bad("not a number"));
            match fields.as_slice() {
                ["layer", idx, cycles] => {
                    let idx = num(idx)? as usize;
                    if cal.cycles_per_slice.insert(idx, num(cycles)?).is_some() {
                        return Err(bad("duplicate layer"));
                    }
                }
                ["frame", cycles] => {
                    if cal.frame_cycles.replace(num(cycles)?).is_some() {
                        return Err(bad("duplicate frame total"));
                    }
                }
                _ => return Err(bad("expected `layer <index> <cycles>` or `frame <cycles>`")),
            }
        }
        Ok(cal)
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

/// One line of the cycle table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CycleRow {
    pub spec: LayerSpec,
    pub groups: usize,
    /// Present for convolutions.
    pub cycles: Option<CycleEstimate>,
    pub calibrated: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkReport {
    pub rows: Vec<CycleRow>,
    pub bandwidth: BandwidthReport,
    /// Sum of the cycles/map column.
    pub summed_frame_cycles: u64,
    /// Frame cycles used for the clock figures (calibration total if given).
    pub frame_cycles: u64,
    pub fps: f64,
    pub required_clock_hz: Option<f64>,
    pub total_ops: u64,
    pub ops_per_clock: Option<f64>,
}

/// Inputs of one convolution for [`build_report`].
#[derive(Clone, Debug)]
pub struct ConvAccounting<'a> {
    pub plans: &'a [BitLayerPlan],
    pub arrange: TileArrangement,
    pub stream_bytes: u64,
}

/// Assembles the cycle and bandwidth tables. `convs[n]` belongs to the
/// `n`-th convolution in `specs`. Calibrated layers keep the estimated
/// per-kernel work but take their cycles per slice from `calibration`,
/// with cycles per kernel counted as cycles per slice times groups.
pub fn build_report(
    specs: &[LayerSpec],
    convs: &[ConvAccounting<'_>],
    overhead: &CycleOverhead,
    cache_bytes: Option<u64>,
    fps: f64,
    calibration: Option<&Calibration>,
) -> Result<NetworkReport> {
    check_positive("frame rate", fps)?;
    let mut rows = Vec::new();
    let mut conv_iter = convs.iter();
    let mut summed = 0u64;
    for spec in specs {
        spec.validate()?;
        match spec.kind {
            LayerKind::Conv => {
                let acc = conv_iter
                    .next()
                    .ok_or_else(|| Error::config("fewer accounting entries than convolutions"))?;
                let mut est = cycles_estimate_layer(spec, acc.plans, &acc.arrange, overhead)?;
                let cal = calibration.and_then(|c| c.cycles_per_slice.get(&spec.index));
                if let Some(&cps) = cal {
                    est.cycles_per_slice = cps;
                    est.cycles_map = cps * spec.input.y as u64;
                    est.cycles_per_kernel = cps * acc.arrange.groups as u64;
                }
                summed += est.cycles_map;
                rows.push(CycleRow {
                    spec: spec.clone(),
                    groups: acc.arrange.groups,
                    cycles: Some(est),
                    calibrated: cal.is_some(),
                });
            }
            LayerKind::Maxpool => rows.push(CycleRow {
                spec: spec.clone(),
                groups: 0,
                cycles: None,
                calibrated: false,
            }),
            LayerKind::Upsample | LayerKind::Route => {}
        }
    }
    if conv_iter.next().is_some() {
        return Err(Error::config("more accounting entries than convolutions"));
    }
    let weight_bytes: Vec<u64> = convs.iter().map(|c| c.stream_bytes).collect();
    let bandwidth = bandwidth_report(specs, &weight_bytes, cache_bytes)?;
    let frame_cycles = calibration.and_then(|c| c.frame_cycles).unwrap_or(summed);
    let total_ops: u64 = specs.iter().map(|s| s.operations()).sum();
    let (required_clock_hz, ops_per_clock) = if frame_cycles > 0 {
        (
            Some(required_clock(frame_cycles, fps)?),
            (total_ops > 0)
                .then(|| operations_per_clock(total_ops as f64, frame_cycles as f64))
                .transpose()?,
        )
    } else {
        (None, None)
    };
    Ok(NetworkReport {
        rows,
        bandwidth,
        summed_frame_cycles: summed,
        frame_cycles,
        fps,
        required_clock_hz,
        total_ops,
        ops_per_clock,
    })
}

/// `1234567` -> `"1,234,567"`.
pub fn thousands(v: u64) -> String {
    let digits = v.to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3);
    for (n, c) in digits.chars().enumerate() {
        if n > 0 && (digits.len() - n).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

fn kind_label(row: &CycleRow) -> (&'static str, String) {
    match (row.spec.kind, row.spec.kernel, row.spec.pool) {
        (LayerKind::Conv, Some(k), _) => ("Conv", format!("{0}x{0}x{1}x{2}", k.k, k.z, k.o)),
        (LayerKind::Maxpool, _, Some(s)) => ("Maxpool", format!("2x2/{}", s.get())),
        _ => ("Other", String::new()),
    }
}

impl NetworkReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:>5}  {:<8} {:<14} {:<14} {:<14} {:>11} {:>12} {:>12} {:>12}",
            "layer", "type", "kernel", "input", "output", "MACs/kernel", "cycles/slice", "cycles/map", "cycles/kernel"
        );
        for row in &self.rows {
            let (kind, kernel) = kind_label(row);
            let conv_out = row.spec.conv_output();
            let (macs, cps, map, kern) = match row.cycles {
                Some(c) => (
                    thousands(row.spec.macs_per_kernel()),
                    format!("{}{}", thousands(c.cycles_per_slice), if row.calibrated { "*" } else { "" }),
                    thousands(c.cycles_map),
                    thousands(c.cycles_per_kernel),
                ),
                None => Default::default(),
            };
            let _ = writeln!(
                s,
                "{:>5}  {:<8} {:<14} {:<14} {:<14} {:>11} {:>12} {:>12} {:>12}",
                row.spec.index,
                kind,
                kernel,
                row.spec.input.to_string(),
                conv_out.to_string(),
                macs,
                cps,
                map,
                kern
            );
        }
        if self.rows.iter().any(|r| r.calibrated) {
            let _ = writeln!(s, "(* cycles/slice taken from the calibration file)");
        }
        let _ = writeln!(s, "cycles per frame (column sum): {}", thousands(self.summed_frame_cycles));
        if self.frame_cycles != self.summed_frame_cycles {
            let _ = writeln!(s, "cycles per frame (calibrated): {}", thousands(self.frame_cycles));
        }
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "{:>5}  {:<14} {:>12} {:<14} {:>12} {:>12} {:>6}",
            "layer", "input", "input bytes", "output", "output bytes", "weight bytes", "passes"
        );
        for r in &self.bandwidth.rows {
            let _ = writeln!(
                s,
                "{:>5}  {:<14} {:>12} {:<14} {:>12} {:>12} {:>6}",
                r.index,
                r.input_dims.to_string(),
                thousands(r.input_bytes),
                r.output_dims.to_string(),
                thousands(r.output_bytes),
                thousands(r.weight_bytes),
                r.passes
            );
        }
        let t = &self.bandwidth.totals;
        let _ = writeln!(
            s,
            "{:>5}  {:<14} {:>12} {:<14} {:>12} {:>12}",
            "total",
            "",
            thousands(t.input_bytes),
            "",
            thousands(t.output_bytes),
            thousands(t.weight_bytes)
        );
        let _ = writeln!(s);
        match self.required_clock_hz {
            Some(hz) => {
                let _ = writeln!(s, "required clock at {} fps: {:.0} Hz ({:.1} MHz)", self.fps, hz, hz / 1e6);
            }
            None => {
                let _ = writeln!(s, "required clock at {} fps: n/a (no cycles)", self.fps);
            }
        }
        let _ = writeln!(s, "operations per frame: {}", thousands(self.total_ops));
        if let Some(opc) = self.ops_per_clock {
            let _ = writeln!(s, "operations per clock: {opc:.1}");
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,type,kernel,input,output,macs_per_kernel,cycles_per_slice,cycles_map,cycles_per_kernel,calibrated\n");
        for row in &self.rows {
            let (kind, kernel) = kind_label(row);
            let cells = match row.cycles {
                Some(c) => format!(
                    "{},{},{},{},{}",
                    row.spec.macs_per_kernel(),
                    c.cycles_per_slice,
                    c.cycles_map,
                    c.cycles_per_kernel,
                    row.calibrated as u8
                ),
                None => ",,,,".to_string(),
            };
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                row.spec.index,
                kind,
                kernel,
                row.spec.input,
                row.spec.conv_output(),
                cells
            );
        }
        s.push('\n');
        s.push_str("layer,input,input_bytes,output,output_bytes,weight_bytes,passes\n");
        for r in &self.bandwidth.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.index, r.input_dims, r.input_bytes, r.output_dims, r.output_bytes, r.weight_bytes, r.passes
            );
        }
        let t = &self.bandwidth.totals;
        let _ = writeln!(s, "total,,{},,{},{},", t.input_bytes, t.output_bytes, t.weight_bytes);
        s.push('\n');
        s.push_str("metric,value\n");
        let _ = writeln!(s, "frame_cycles_sum,{}", self.summed_frame_cycles);
        let _ = writeln!(s, "frame_cycles,{}", self.frame_cycles);
        let _ = writeln!(s, "fps,{}", self.fps);
        if let Some(hz) = self.required_clock_hz {
            let _ = writeln!(s, "required_clock_hz,{hz:.0}");
        }
        let _ = writeln!(s, "operations,{}", self.total_ops);
        if let Some(opc) = self.ops_per_clock {
            let _ = writeln!(s, "operations_per_clock,{opc:.3}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{arrange_tiles, ArrayGeometry};
    use crate::signed_digit::Sign;

    fn plan(o: usize, n_b: u32, digits_per_layer: &[usize]) -> BitLayerPlan {
        let layers = digits_per_layer.iter().map(|&n| vec![(0, Sign::Pos); n]).collect();
        BitLayerPlan {
            o,
            n_b,
            layers,
            flatten_len: 64,
        }
    }

    #[test]
    fn estimate_examples() {
        let spec = LayerSpec::conv(0, 3, Dims::new(10, 10, 2), 1, None);
        let one = TileArrangement::new(1, ArrayGeometry::default()).unwrap();
        let p = plan(0, 3, &[2, 1, 1]);
        let e = cycles_estimate_layer(&spec, &[p], &one, &CycleOverhead::NONE).unwrap();
        assert_eq!(e.cycles_per_slice, 7);
        assert_eq!(e.cycles_map, 70);

        let dense = plan(0, 1, &[18]);
        let e = cycles_estimate_layer(&spec, &[dense], &one, &CycleOverhead::NONE).unwrap();
        assert_eq!(e.cycles_per_kernel, 19);
    }

    #[test]
    fn groups_split_the_work() {
        let spec = LayerSpec::conv(0, 1, Dims::new(13, 4, 1), 5, Some(PoolStride::Two));
        let plans: Vec<_> = (0..5).map(|o| plan(o, 1, &[o])).collect();
        let arr = arrange_tiles(13).unwrap();
        let e = cycles_estimate_layer(&spec, &plans, &arr, &CycleOverhead::NONE).unwrap();
        // busy = (0+1)+(1+1)+...+(4+1) = 15
        assert_eq!(e.busy_per_kernel, 15);
        assert_eq!(e.cycles_per_slice, 1);
        // every slice is computed, pooled or not
        assert_eq!(e.cycles_map, 4);
        let e = cycles_estimate_layer(&spec, &plans, &arr, &CycleOverhead::default()).unwrap();
        assert_eq!(e.cycles_per_kernel, 15 + 2);
    }

    #[test]
    fn multipass_examples() {
        assert_eq!(multipass_factor(1_811_304, 262_144).unwrap(), 7);
        assert_eq!(multipass_factor(100, 262_144).unwrap(), 1);
        assert_eq!(multipass_factor(262_144, 262_144).unwrap(), 1);
        assert_eq!(multipass_factor(0, 262_144).unwrap(), 1);
        assert!(multipass_factor(1, 0).is_err());
    }

    #[test]
    fn bandwidth_examples() {
        let specs = vec![
            LayerSpec::conv(0, 3, Dims::new(416, 416, 3), 16, Some(PoolStride::Two)),
            LayerSpec::maxpool(1, PoolStride::Two, Dims::new(416, 416, 16)),
            LayerSpec::conv(12, 3, Dims::new(13, 13, 512), 1024, None),
        ];
        let r = bandwidth_report(&specs, &[288, 1_811_304], Some(262_144)).unwrap();
        assert_eq!(r.rows[0].input_bytes, 519_168);
        assert_eq!(r.rows[0].output_bytes, 692_224);
        assert_eq!(r.rows[1].output_bytes, 173_056);
        assert_eq!(r.rows[1].passes, 7);
        assert_eq!(r.rows[1].input_bytes, 86_528 * 7);
        assert_eq!(r.totals.weight_bytes, 288 + 1_811_304);
        assert_eq!(bandwidth_report(&[], &[], None).unwrap(), BandwidthReport::default());
        assert!(bandwidth_report(&specs, &[1], None).is_err());
    }

    #[test]
    fn clock_examples() {
        assert_eq!(required_clock(7_909_915, 30.0).unwrap(), 237_297_450.0);
        assert_eq!(required_clock(1, 1.0).unwrap(), 1.0);
        assert!(required_clock(10, 0.0).is_err());
        assert!(required_clock(10, f64::NAN).is_err());
        let opc = operations_per_clock(5.56e9, 7.9e6).unwrap();
        assert!((opc - 703.8).abs() < 0.1);
        assert_eq!(operations_per_clock(3.0, 3.0).unwrap(), 1.0);
        let tops = operations_per_second(opc, 2.0e9);
        assert!((tops / 1e12 - 1.41).abs() < 0.005);
    }

    #[test]
    fn reduced_height_clock() {
        // 320 of 416 slices at 30 fps
        let hz = rescale_frame_cycles(7_909_915, 416, 320) * 30.0;
        assert!((hz / 1e6 - 182.5).abs() < 0.1, "{hz}");
    }

    #[test]
    fn calibration_parsing() {
        let c = Calibration::parse("# cycles\nlayer 0 723\nlayer 12 171,762  # big\n\nframe 7909915\n").unwrap();
        assert_eq!(c.cycles_per_slice[&12], 171_762);
        assert_eq!(c.frame_cycles, Some(7_909_915));
        assert!(Calibration::parse("layer x 3").is_err());
        assert!(Calibration::parse("layer 1 3\nlayer 1 4").is_err());
        assert!(Calibration::parse("speed 3").is_err());
    }

    #[test]
    fn thousands_separator() {
        assert_eq!(thousands(0), "0");
        assert_eq!(thousands(999), "999");
        assert_eq!(thousands(1000), "1,000");
        assert_eq!(thousands(7_909_915), "7,909,915");
    }

    #[test]
    fn empty_report() {
        let r = build_report(&[], &[], &CycleOverhead::default(), None, 30.0, None).unwrap();
        assert!(r.rows.is_empty());
        assert_eq!(r.frame_cycles, 0);
        assert_eq!(r.bandwidth.totals, BandwidthTotals::default());
        assert!(r.to_text().contains("n/a"));
        assert!(build_report(&[], &[], &CycleOverhead::default(), None, 0.0, None).is_err());
    }

    #[test]
    fn calibrated_report() {
        let specs = vec![
            LayerSpec::conv(0, 3, Dims::new(416, 416, 3), 16, Some(PoolStride::Two)),
            LayerSpec::maxpool(1, PoolStride::Two, Dims::new(416, 416, 16)),
        ];
        let plans: Vec<_> = (0..16).map(|o| plan(o, 1, &[10])).collect();
        let convs = [ConvAccounting {
            plans: &plans,
            arrange: arrange_tiles(416).unwrap(),
            stream_bytes: 288,
        }];
        let cal = Calibration::parse("layer 0 723\n").unwrap();
        let r = build_report(&specs, &convs, &CycleOverhead::default(), None, 30.0, Some(&cal)).unwrap();
        let c = r.rows[0].cycles.unwrap();
        assert_eq!((c.cycles_per_slice, c.cycles_map, c.cycles_per_kernel), (723, 300_768, 723));
        assert_eq!(r.frame_cycles, 300_768);
        assert!(r.to_text().contains("723*"));
        assert!(r.to_csv().lines().any(|l| l == "0,Conv,3x3x3x16,416x416x3,416x416x16,432,723,300768,723,1"));
        let est = build_report(&specs, &convs, &CycleOverhead::NONE, None, 30.0, None).unwrap();
        assert_eq!(est.rows[0].cycles.unwrap().cycles_per_slice, 16 * 11);
    }
}
