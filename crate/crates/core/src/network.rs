//! Layer-stack configuration and execution.
//!
//! The config is a line-oriented stanza format. A `[net]` stanza with the
//! global options comes first, then one stanza per layer in execution order;
//! layers are numbered from 0 in that order. `#` starts a comment.
//!
//! ```text
//! [net]
//! width=416
//! height=416
//! channels=3
//!
//! [conv]
//! size=3
//! filters=16
//! activation=leaky
//! out_shift=5
//!
//! [maxpool]
//! stride=2
//!
//! [route]
//! layers=4,2
//! ```
//!
//! Global keys: `width`, `height`, `channels` (required), `acc_bits`,
//! `tiles`, `tile_width`, `cache_bytes`, `load_bytes_per_cycle`,
//! `overhead_percent`, `overhead_per_row`, `overhead_per_slice`,
//! `fuse_maxpool`, `flatten_order` (`izj` or `zij`).
//!
//! Layers: `[conv]` (`size`, `filters`, `activation` = `leaky`|`linear`,
//! `leaky_num`, `leaky_shift`, `out_mult`, `out_shift`, `frac_bits`,
//! `weight_bits`), `[maxpool]` (`size=2`, `stride` 1 or 2), `[route]`
//! (`layers`: absolute indices of earlier layers, concatenated along z),
//! `[upsample]` (`stride=2`) and `[yolo]` (detection head, passes its input
//! through). Every stanza accepts an optional `name`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::{CompressedWeightStream, FlattenOrder};
use crate::engine::{
    arrange_tiles_on, run_layer_blmac, run_layer_mac, ArrayGeometry, CycleOverhead, EngineOptions, LayerRunResult,
    TileArrangement, DEFAULT_ACC_BITS,
};
use crate::error::{Error, Result};
use crate::perf::{LayerKind, LayerSpec};
use crate::tensor::{
    concat_z, conv2d_reference, maxpool2x2, upsample2x, Dims, FeatureMap, KernelShape, PoolStride,
    QuantizedWeightTensor, ScaleParams,
};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GlobalOptions {
    pub acc_bits: u32,
    pub geometry: ArrayGeometry,
    pub cache_bytes: Option<u64>,
    pub overhead: CycleOverhead,
    pub fuse_maxpool: bool,
    pub flatten_order: FlattenOrder,
}

impl Default for GlobalOptions {
    fn default() -> Self {
        Self {
            acc_bits: DEFAULT_ACC_BITS,
            geometry: ArrayGeometry::default(),
            cache_bytes: None,
            overhead: CycleOverhead::default(),
            fuse_maxpool: true,
            flatten_order: FlattenOrder::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvLayer {
    pub k: usize,
    pub filters: usize,
    pub scale: ScaleParams,
    /// Fixed-point position used when quantizing float weights.
    pub frac_bits: u32,
    pub weight_bits: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Layer {
    Conv(ConvLayer),
    Maxpool(PoolStride),
    Route(Vec<usize>),
    Upsample,
    Yolo,
}

impl Layer {
    pub fn label(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "conv",
            Layer::Maxpool(_) => "maxpool",
            Layer::Route(_) => "route",
            Layer::Upsample => "upsample",
            Layer::Yolo => "yolo",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerEntry {
    pub name: Option<String>,
    pub layer: Layer,
    /// 1-based line of the stanza header.
    pub line: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerShape {
    pub input: Dims,
    pub output: Dims,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkConfig {
    pub input: Dims,
    pub options: GlobalOptions,
    pub layers: Vec<LayerEntry>,
}

struct Stanza {
    header: String,
    line: usize,
    keys: BTreeMap<String, (String, usize)>,
}

impl Stanza {
    fn take(&mut self, key: &str) -> Option<(String, usize)> {
        self.keys.remove(key)
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.take(key) {
            None => Ok(None),
            Some((v, line)) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::config(format!("line {line}: invalid value {v:?} for `{key}`"))),
        }
    }

    fn require<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        self.parse(key)?.ok_or_else(|| {
            Error::config(format!("line {}: [{}] needs `{key}`", self.line, self.header))
        })
    }

    fn finish(self) -> Result<()> {
        match self.keys.into_iter().next() {
            None => Ok(()),
            Some((k, (_, line))) => Err(Error::config(format!(
                "line {line}: unknown key `{k}` in [{}]",
                self.header
            ))),
        }
    }
}

fn split_stanzas(text: &str) -> Result<Vec<Stanza>> {
    let mut out: Vec<Stanza> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(h) = line.strip_prefix('[') {
            let header = h
                .strip_suffix(']')
                .ok_or_else(|| Error::config(format!("line {line_no}: malformed stanza header")))?;
            out.push(Stanza {
                header: header.trim().to_ascii_lowercase(),
                line: line_no,
                keys: BTreeMap::new(),
            });
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::config(format!("line {line_no}: expected key=value")))?;
        let stanza = out
            .last_mut()
            .ok_or_else(|| Error::config(format!("line {line_no}: key outside any stanza")))?;
        let key = k.trim().to_ascii_lowercase();
        if stanza.keys.insert(key.clone(), (v.trim().to_string(), line_no)).is_some() {
            return Err(Error::config(format!("line {line_no}: duplicate key `{key}`")));
        }
    }
    Ok(out)
}

fn parse_bool(v: &str, line: usize) -> Result<bool> {
    match v {
        "1" | "true" | "yes" => Ok(true),
        "0" | "false" | "no" => Ok(false),
        _ => Err(Error::config(format!("line {line}: expected a boolean, got {v:?}"))),
    }
}

fn parse_global(mut s: Stanza) -> Result<(Dims, GlobalOptions)> {
    let input = Dims::new(s.require("width")?, s.require("height")?, s.require("channels")?);
    let mut g = GlobalOptions::default();
    if let Some(v) = s.parse("acc_bits")? {
        g.acc_bits = v;
    }
    if let Some(v) = s.parse("tiles")? {
        g.geometry.tiles = v;
    }
    if let Some(v) = s.parse("tile_width")? {
        g.geometry.tile_width = v;
    }
    g.cache_bytes = s.parse("cache_bytes")?;
    if let Some(v) = s.parse("load_bytes_per_cycle")? {
        g.overhead.load_bytes_per_cycle = v;
    }
    if let Some(v) = s.parse("overhead_percent")? {
        g.overhead.percent = v;
    }
    if let Some(v) = s.parse("overhead_per_row")? {
        g.overhead.per_row = v;
    }
    if let Some(v) = s.parse("overhead_per_slice")? {
        g.overhead.per_slice = v;
    }
    if let Some((v, line)) = s.take("fuse_maxpool") {
        g.fuse_maxpool = parse_bool(&v, line)?;
    }
    if let Some((v, line)) = s.take("flatten_order") {
        g.flatten_order = match v.to_ascii_lowercase().as_str() {
            "izj" => FlattenOrder::Izj,
            "zij" => FlattenOrder::Zij,
            _ => return Err(Error::config(format!("line {line}: unknown flatten order {v:?}"))),
        };
    }
    s.finish()?;
    Ok((input, g))
}

fn parse_layer(mut s: Stanza) -> Result<LayerEntry> {
    let name = s.take("name").map(|(v, _)| v);
    let line = s.line;
    let layer = match s.header.as_str() {
        "conv" => {
            let k = s.require("size")?;
            let filters = s.require("filters")?;
            let activation = s.take("activation").map(|(v, l)| (v.to_ascii_lowercase(), l));
            let mut scale = match activation.as_ref().map(|(v, l)| (v.as_str(), *l)) {
                None | Some(("leaky", _)) => ScaleParams::default(),
                Some(("linear", _)) => ScaleParams::linear(1, 0),
                Some((v, l)) => return Err(Error::config(format!("line {l}: unknown activation {v:?}"))),
            };
            if let Some(v) = s.parse("leaky_num")? {
                scale.leaky_num = v;
            }
            if let Some(v) = s.parse("leaky_shift")? {
                scale.leaky_shift = v;
            }
            if let Some(v) = s.parse("out_mult")? {
                scale.out_mult = v;
            }
            if let Some(v) = s.parse("out_shift")? {
                scale.out_shift = v;
            }
            scale
                .validate()
                .map_err(|e| Error::config(format!("line {line}: {}", e.root())))?;
            Layer::Conv(ConvLayer {
                k,
                filters,
                scale,
                frac_bits: s.parse("frac_bits")?.unwrap_or(6),
                weight_bits: s.parse("weight_bits")?.unwrap_or(8),
            })
        }
        "maxpool" => {
            let size: usize = s.parse("size")?.unwrap_or(2);
            if size != 2 {
                return Err(Error::config(format!("line {line}: only 2x2 maxpool is supported")));
            }
            Layer::Maxpool(PoolStride::try_from(s.parse::<usize>("stride")?.unwrap_or(2))?)
        }
        "route" => {
            let (v, l) = s
                .take("layers")
                .ok_or_else(|| Error::config(format!("line {line}: [route] needs `layers`")))?;
            let sources = v
                .split(',')
                .map(|t| {
                    t.trim()
                        .parse::<usize>()
                        .map_err(|_| Error::config(format!("line {l}: route source {t:?} is not a layer index")))
                })
                .collect::<Result<Vec<_>>>()?;
            Layer::Route(sources)
        }
        "upsample" => {
            if s.parse::<usize>("stride")?.unwrap_or(2) != 2 {
                return Err(Error::config(format!("line {line}: upsample stride must be 2")));
            }
            Layer::Upsample
        }
        "yolo" => {
            // detection parameters are not used by the simulator
            for key in ["mask", "anchors", "classes", "num"] {
                s.take(key);
            }
            Layer::Yolo
        }
        "net" => return Err(Error::config(format!("line {line}: [net] must be the first stanza"))),
        other => return Err(Error::config(format!("line {line}: unknown stanza [{other}]"))),
    };
    s.finish()?;
    Ok(LayerEntry { name, layer, line })
}

impl NetworkConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut stanzas = split_stanzas(text)?.into_iter();
        let first = stanzas
            .next()
            .ok_or_else(|| Error::config("config is empty; expected a [net] stanza"))?;
        if first.header != "net" {
            return Err(Error::config(format!("line {}: config must start with [net]", first.line)));
        }
        let (input, options) = parse_global(first)?;
        let layers = stanzas.map(parse_layer).collect::<Result<Vec<_>>>()?;
        let cfg = Self { input, options, layers };
        cfg.shapes()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Input and output dims of every layer; fails on any broken link.
    pub fn shapes(&self) -> Result<Vec<LayerShape>> {
        if self.input.volume() == 0 {
            return Err(Error::config("network input has a zero dimension"));
        }
        if !(2..=32).contains(&self.options.acc_bits) {
            return Err(Error::config("acc_bits must be in 2..=32"));
        }
        if self.options.geometry.lanes() == 0 {
            return Err(Error::config("tiles and tile_width must be positive"));
        }
        if self.options.cache_bytes == Some(0) {
            return Err(Error::config("cache_bytes must be positive"));
        }
        if self.options.overhead.percent > 1000 {
            return Err(Error::config("overhead_percent above 1000"));
        }
        let mut shapes: Vec<LayerShape> = Vec::with_capacity(self.layers.len());
        for (n, entry) in self.layers.iter().enumerate() {
            let at = |msg: String| Error::config(format!("layer {n} (line {}): {msg}", entry.line));
            let prev = shapes.last().map_or(self.input, |s| s.output);
            let shape = match &entry.layer {
                Layer::Conv(c) => {
                    KernelShape::new(c.k, prev.z, c.filters).validate().map_err(|e| at(e.root().to_string()))?;
                    if c.k > 3 {
                        return Err(at(format!("kernel size {} not supported (1 or 3)", c.k)));
                    }
                    arrange_tiles_on(prev.x, self.options.geometry).map_err(|e| at(e.root().to_string()))?;
                    LayerShape {
                        input: prev,
                        output: Dims::new(prev.x, prev.y, c.filters),
                    }
                }
                Layer::Maxpool(s) => {
                    let out = s.output_dims(prev);
                    if out.volume() == 0 {
                        return Err(at(format!("maxpool of a {prev} map is empty")));
                    }
                    LayerShape { input: prev, output: out }
                }
                Layer::Upsample => LayerShape {
                    input: prev,
                    output: Dims::new(prev.x * 2, prev.y * 2, prev.z),
                },
                Layer::Yolo => LayerShape {
                    input: prev,
                    output: prev,
                },
                Layer::Route(sources) => {
                    if sources.is_empty() {
                        return Err(at("route without sources".into()));
                    }
                    let mut out: Option<Dims> = None;
                    for &src in sources {
                        if src >= n {
                            return Err(at(format!("route source {src} is not an earlier layer")));
                        }
                        let d = shapes[src].output;
                        out = Some(match out {
                            None => d,
                            Some(o) if (o.x, o.y) == (d.x, d.y) => Dims::new(o.x, o.y, o.z + d.z),
                            Some(o) => return Err(at(format!("route joins {o} and {d} maps"))),
                        });
                    }
                    let out = out.unwrap();
                    LayerShape { input: out, output: out }
                }
            };
            shapes.push(shape);
        }
        Ok(shapes)
    }

    /// `(layer index, kernel shape)` of every convolution, in order.
    pub fn conv_layers(&self) -> Result<Vec<(usize, KernelShape, ConvLayer)>> {
        let shapes = self.shapes()?;
        Ok(self
            .layers
            .iter()
            .enumerate()
            .filter_map(|(n, e)| match e.layer {
                Layer::Conv(c) => Some((n, KernelShape::new(c.k, shapes[n].input.z, c.filters), c)),
                _ => None,
            })
            .collect())
    }

    /// Layers whose outputs a route reads.
    fn route_sources(&self) -> BTreeSet<usize> {
        self.layers
            .iter()
            .filter_map(|e| match &e.layer {
                Layer::Route(s) => Some(s.iter().copied()),
                _ => None,
            })
            .flatten()
            .collect()
    }

    /// Accounting view: a convolution directly followed by a maxpool counts
    /// the pooled map as its output. Detection heads carry no traffic and
    /// are left out.
    pub fn layer_specs(&self) -> Result<Vec<LayerSpec>> {
        let shapes = self.shapes()?;
        let mut specs = Vec::new();
        for (n, entry) in self.layers.iter().enumerate() {
            let sh = shapes[n];
            let mut spec = match &entry.layer {
                Layer::Conv(c) => {
                    let pool = match self.layers.get(n + 1).map(|e| &e.layer) {
                        Some(Layer::Maxpool(s)) => Some(*s),
                        _ => None,
                    };
                    LayerSpec::conv(n, c.k, sh.input, c.filters, pool)
                }
                Layer::Maxpool(s) => LayerSpec::maxpool(n, *s, sh.input),
                Layer::Upsample | Layer::Route(_) => LayerSpec {
                    index: n,
                    name: format!("{}{n}", entry.layer.label()),
                    kind: if matches!(entry.layer, Layer::Upsample) {
                        LayerKind::Upsample
                    } else {
                        LayerKind::Route
                    },
                    kernel: None,
                    pool: None,
                    input: sh.input,
                    output: sh.output,
                    fused_maxpool: None,
                },
                Layer::Yolo => continue,
            };
            if let Some(name) = &entry.name {
                spec.name = name.clone();
            }
            specs.push(spec);
        }
        Ok(specs)
    }

    pub fn engine_options(&self) -> EngineOptions {
        EngineOptions {
            acc_bits: self.options.acc_bits,
            overhead: self.options.overhead,
            mac_order: self.options.flatten_order,
            ..EngineOptions::default()
        }
    }
}

/// Compressed weights and biases of one convolution.
#[derive(Clone, Debug)]
pub struct ConvWeights {
    pub stream: CompressedWeightStream,
    pub biases: Vec<i32>,
}

/// How a network run evaluates its convolutions.
pub trait ConvBackend {
    /// Convolution `index` of the config, optionally followed by a fused
    /// maxpool. Returns the output and, for engine backends, the run record.
    fn conv(
        &mut self,
        index: usize,
        layer: &ConvLayer,
        input: &FeatureMap,
        fuse: Option<PoolStride>,
        arrange: &TileArrangement,
        opts: &EngineOptions,
    ) -> Result<(FeatureMap, Option<LayerRunResult>)>;
}

/// Direct convolution followed by the scale stage.
pub struct OracleBackend<'a> {
    pub weights: &'a BTreeMap<usize, QuantizedWeightTensor>,
}

fn lookup<T>(map: &BTreeMap<usize, T>, index: usize) -> Result<&T> {
    map.get(&index)
        .ok_or_else(|| Error::config(format!("no weights for convolution layer {index}")))
}

impl ConvBackend for OracleBackend<'_> {
    fn conv(
        &mut self,
        index: usize,
        layer: &ConvLayer,
        input: &FeatureMap,
        fuse: Option<PoolStride>,
        _arrange: &TileArrangement,
        _opts: &EngineOptions,
    ) -> Result<(FeatureMap, Option<LayerRunResult>)> {
        let w = lookup(self.weights, index)?;
        let out = conv2d_reference(input, w)?.to_feature_map(None, &layer.scale);
        Ok((fuse.map_or_else(|| out.clone(), |s| maxpool2x2(&out, s)), None))
    }
}

/// Architecture I: multiplier array fed with uncompressed weights.
pub struct MacBackend<'a> {
    pub weights: &'a BTreeMap<usize, QuantizedWeightTensor>,
}

impl ConvBackend for MacBackend<'_> {
    fn conv(
        &mut self,
        index: usize,
        layer: &ConvLayer,
        input: &FeatureMap,
        fuse: Option<PoolStride>,
        arrange: &TileArrangement,
        opts: &EngineOptions,
    ) -> Result<(FeatureMap, Option<LayerRunResult>)> {
        let w = lookup(self.weights, index)?;
        let opts = EngineOptions {
            fuse_maxpool: fuse,
            ..opts.clone()
        };
        let r = run_layer_mac(input, w, &layer.scale, arrange, &opts)?;
        Ok((r.output.clone(), Some(r)))
    }
}

/// Architecture II: bit-layer array decoding compressed streams. Weights
/// are fetched on demand through `load`.
pub struct BlmacBackend<F> {
    pub load: F,
}

impl<F: FnMut(usize) -> Result<ConvWeights>> ConvBackend for BlmacBackend<F> {
    fn conv(
        &mut self,
        index: usize,
        layer: &ConvLayer,
        input: &FeatureMap,
        fuse: Option<PoolStride>,
        arrange: &TileArrangement,
        opts: &EngineOptions,
    ) -> Result<(FeatureMap, Option<LayerRunResult>)> {
        let w = (self.load)(index)?;
        if w.stream.k != layer.k || w.stream.o != layer.filters || w.stream.z != input.dims_z() {
            return Err(Error::config(format!(
                "stream holds a {}x{}x{}x{} kernel, layer needs {}x{}x{}x{}",
                w.stream.k,
                w.stream.k,
                w.stream.z,
                w.stream.o,
                layer.k,
                layer.k,
                input.dims_z(),
                layer.filters
            )));
        }
        let opts = EngineOptions {
            fuse_maxpool: fuse,
            ..opts.clone()
        };
        let r = run_layer_blmac(input, &w.stream, &w.biases, &layer.scale, arrange, &opts)?;
        Ok((r.output.clone(), Some(r)))
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Layers whose outputs must be kept (and therefore never fused away).
    pub keep: BTreeSet<usize>,
    /// Keep every layer output.
    pub keep_all: bool,
    pub exact_check: bool,
    pub parallel: bool,
}

/// Engine statistics of one convolution.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvStats {
    pub groups: usize,
    pub group_width: usize,
    pub cycles_per_slice: Vec<u64>,
    pub cycles_map: u64,
    pub cycles_per_kernel: u64,
    pub busy_per_kernel: u64,
    pub decode_steps: u64,
    pub peak_residency: usize,
    pub residency_capacity: usize,
}

#[derive(Clone, Debug)]
pub struct LayerRecord {
    pub index: usize,
    pub label: &'static str,
    pub shape: LayerShape,
    /// The layer was computed inside the preceding convolution.
    pub fused: bool,
    pub stats: Option<ConvStats>,
}

#[derive(Clone, Debug)]
pub struct NetworkRun {
    /// Kept outputs by layer index.
    pub outputs: BTreeMap<usize, FeatureMap>,
    pub final_output: FeatureMap,
    pub layers: Vec<LayerRecord>,
}

impl NetworkRun {
    pub fn peak_residency(&self) -> usize {
        self.layers
            .iter()
            .filter_map(|l| l.stats.as_ref().map(|s| s.peak_residency))
            .max()
            .unwrap_or(0)
    }

    /// Every convolution stayed within its `(K + 1) * Z * X` bound.
    pub fn residency_within_bounds(&self) -> bool {
        self.layers
            .iter()
            .filter_map(|l| l.stats.as_ref())
            .all(|s| s.peak_residency <= s.residency_capacity)
    }

    pub fn frame_cycles(&self) -> u64 {
        self.layers
            .iter()
            .filter_map(|l| l.stats.as_ref().map(|s| s.cycles_map))
            .sum()
    }
}

/// Executes the layer stack. Errors carry the index of the failing layer.
pub fn run_network(
    cfg: &NetworkConfig,
    input: &FeatureMap,
    backend: &mut dyn ConvBackend,
    run: &RunOptions,
) -> Result<NetworkRun> {
    let shapes = cfg.shapes()?;
    if input.dims() != cfg.input {
        return Err(Error::config(format!(
            "input map is {}, network expects {}",
            input.dims(),
            cfg.input
        )));
    }
    let routed = cfg.route_sources();
    let n_layers = cfg.layers.len();
    // last layer that reads each output
    let mut last_use = vec![0usize; n_layers];
    for (n, e) in cfg.layers.iter().enumerate() {
        if n > 0 {
            last_use[n - 1] = last_use[n - 1].max(n);
        }
        if let Layer::Route(s) = &e.layer {
            for &src in s {
                last_use[src] = last_use[src].max(n);
            }
        }
    }
    let mut opts = cfg.engine_options();
    opts.exact_check = run.exact_check;
    opts.parallel = run.parallel;

    let mut live: BTreeMap<usize, FeatureMap> = BTreeMap::new();
    let mut kept: BTreeMap<usize, FeatureMap> = BTreeMap::new();
    let mut records: Vec<LayerRecord> = Vec::with_capacity(n_layers);
    let mut current = input.clone();
    let mut n = 0;
    while n < n_layers {
        let entry = &cfg.layers[n];
        let mut fused_next = false;
        let out = match &entry.layer {
            Layer::Conv(c) => {
                let fuse = match cfg.layers.get(n + 1).map(|e| &e.layer) {
                    Some(Layer::Maxpool(s))
                        if cfg.options.fuse_maxpool && !routed.contains(&n) && !run.keep.contains(&n) && !run.keep_all =>
                    {
                        Some(*s)
                    }
                    _ => None,
                };
                let arrange = arrange_tiles_on(current.dims_x(), cfg.options.geometry).map_err(|e| e.in_layer(n))?;
                let (out, result) = backend
                    .conv(n, c, &current, fuse, &arrange, &opts)
                    .map_err(|e| e.in_layer(n))?;
                let stats = result.map(|r| ConvStats {
                    groups: arrange.groups,
                    group_width: arrange.group_width,
                    cycles_map: r.cycles_map,
                    cycles_per_kernel: r.cycles_per_kernel,
                    busy_per_kernel: r.busy_per_kernel,
                    decode_steps: r.decode_steps,
                    peak_residency: r.peak_residency,
                    residency_capacity: r.residency_capacity,
                    cycles_per_slice: r.cycles_per_slice,
                });
                records.push(LayerRecord {
                    index: n,
                    label: entry.layer.label(),
                    shape: shapes[n],
                    fused: false,
                    stats,
                });
                fused_next = fuse.is_some();
                out
            }
            Layer::Maxpool(s) => maxpool2x2(&current, *s),
            Layer::Upsample => upsample2x(&current),
            Layer::Yolo => current.clone(),
            Layer::Route(sources) => {
                let mut it = sources.iter().map(|s| {
                    live.get(s)
                        .ok_or_else(|| Error::config(format!("output of layer {s} is not available")).in_layer(n))
                });
                let mut acc = it.next().unwrap()?.clone();
                for m in it {
                    acc = concat_z(&acc, m?).map_err(|e| e.in_layer(n))?;
                }
                acc
            }
        };
        if !matches!(entry.layer, Layer::Conv(_)) {
            records.push(LayerRecord {
                index: n,
                label: entry.layer.label(),
                shape: shapes[n],
                fused: false,
                stats: None,
            });
        }
        if fused_next {
            // the maxpool at n + 1 already happened inside the conv
            n += 1;
            records.push(LayerRecord {
                index: n,
                label: cfg.layers[n].layer.label(),
                shape: shapes[n],
                fused: true,
                stats: None,
            });
        }
        debug_assert_eq!(out.dims(), shapes[n].output);
        if run.keep_all || run.keep.contains(&n) || matches!(cfg.layers[n].layer, Layer::Yolo) {
            kept.insert(n, out.clone());
        }
        if routed.contains(&n) {
            live.insert(n, out.clone());
        }
        live.retain(|&src, _| last_use[src] > n);
        current = out;
        n += 1;
    }
    Ok(NetworkRun {
        outputs: kept,
        final_output: current,
        layers: records,
    })
}

/// Value distribution of synthetic weights: a fraction of exact zeros and
/// Laplacian-distributed magnitudes otherwise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightProfile {
    pub zero_fraction: f64,
    /// Mean magnitude of nonzero weights.
    pub mean_magnitude: f64,
    pub max_abs: i32,
    pub bias_range: i32,
}

impl Default for WeightProfile {
    fn default() -> Self {
        Self {
            zero_fraction: 0.5,
            mean_magnitude: 6.0,
            max_abs: 127,
            bias_range: 256,
        }
    }
}

pub fn random_weights(shape: KernelShape, profile: &WeightProfile, rng: &mut impl Rng) -> Result<QuantizedWeightTensor> {
    let mut w = QuantizedWeightTensor::from_fn(shape, |_, _, _, _| {
        if rng.random_bool(profile.zero_fraction) {
            return 0;
        }
        // 1 + exponential tail, so nonzero stays nonzero
        let u: f64 = rng.random::<f64>();
        let m = (1.0 + -(1.0 - u).ln() * (profile.mean_magnitude - 1.0).max(0.0)).round() as i32;
        let m = m.clamp(1, profile.max_abs);
        if rng.random_bool(0.5) {
            -m
        } else {
            m
        }
    })?;
    let b = profile.bias_range;
    w.set_biases((0..shape.o).map(|_| rng.random_range(-b..=b)).collect())?;
    Ok(w)
}

pub fn random_feature_map(dims: Dims, rng: &mut impl Rng) -> FeatureMap {
    FeatureMap::from_fn(dims.x, dims.y, dims.z, |_, _, _| rng.random_range(i8::MIN..=i8::MAX))
}

/// Deterministic per-layer weights: every convolution draws from its own
/// generator seeded by `(seed, layer index)`.
pub fn synthesize_weights(
    cfg: &NetworkConfig,
    seed: u64,
    profile: &WeightProfile,
) -> Result<BTreeMap<usize, QuantizedWeightTensor>> {
    cfg.conv_layers()?
        .into_iter()
        .map(|(n, shape, _)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (n as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            Ok((n, random_weights(shape, profile, &mut rng)?))
        })
        .collect()
}

pub fn synthesize_input(cfg: &NetworkConfig, seed: u64) -> FeatureMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_feature_map(cfg.input, &mut rng)
}
