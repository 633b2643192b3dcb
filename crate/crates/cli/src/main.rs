//! `blmac-sim`: compress weights, run a layer stack on the BLMAC engine,
//! verify it against the reference paths and print cycle/bandwidth tables.

mod files;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use blmac::codec::{compress_fitted, decode_all, CompressedWeightStream};
use blmac::engine::arrange_tiles_on;
use blmac::network::{
    run_network, synthesize_input, synthesize_weights, BlmacBackend, ConvWeights, MacBackend, NetworkConfig,
    NetworkRun, OracleBackend, RunOptions, WeightProfile,
};
use blmac::perf::{build_report, thousands, Calibration, ConvAccounting, LayerKind};
use blmac::signed_digit::count_nonzero_trits;
use blmac::tensor::{FeatureMap, QuantizedWeightTensor};
use blmac::write_atomic;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "blmac-sim", version, about = "BLMAC inference processor model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct WeightArgs {
    /// Weight file (f32 weights and biases per conv, or i8/i32 with --int8)
    #[arg(long)]
    weights: PathBuf,
    /// Weights are already quantized 8-bit integers with i32 biases
    #[arg(long)]
    int8: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Compress the weights of every convolution into a streams directory
    Compress {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        weights: WeightArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the layer stack on the BLMAC engine from compressed streams
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        streams: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the output of this layer (repeatable)
        #[arg(long = "dump-layer")]
        dump_layer: Vec<usize>,
        /// Fail if any accumulator wraps around
        #[arg(long)]
        exact_check: bool,
    },
    /// Compare the oracle, the MAC array and the BLMAC array pixel by pixel
    Verify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Input map (synthesized from the seed when absent)
        #[arg(long)]
        input: Option<PathBuf>,
        /// Weight file (synthesized from the seed when absent)
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, requires = "weights")]
        int8: bool,
        /// Use these compressed streams for the BLMAC path instead of
        /// compressing the weights in memory
        #[arg(long)]
        streams: Option<PathBuf>,
    },
    /// Print the cycle and bandwidth tables
    Report {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        streams: PathBuf,
        #[arg(long, allow_negative_numbers = true)]
        fps: f64,
        /// Per-layer cycles/slice overrides
        #[arg(long)]
        calibration: Option<PathBuf>,
        #[arg(long)]
        csv: bool,
    },
    /// Write a deterministic random input map and int8 weight file
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        /// Fraction of zero weights
        #[arg(long, default_value_t = WeightProfile::default().zero_fraction)]
        zero_fraction: f64,
    },
}

/// Pixel-level disagreement between the verification paths.
#[derive(Debug)]
struct Mismatch(String);

impl std::fmt::Display for Mismatch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Mismatch {}

const EXIT_MISMATCH: u8 = 1;
const EXIT_IO: u8 = 2;
const EXIT_CONFIG: u8 = 3;

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Mismatch>() {
            return EXIT_MISMATCH;
        }
        if let Some(e) = cause.downcast_ref::<blmac::Error>() {
            return match e.root() {
                blmac::Error::Config(_) | blmac::Error::Unsupported(_) => EXIT_CONFIG,
                _ => EXIT_IO,
            };
        }
    }
    EXIT_IO
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Compress { config, weights, out } => cmd_compress(&config, &weights, &out),
        Command::Run {
            config,
            input,
            streams,
            out,
            dump_layer,
            exact_check,
        } => cmd_run(&config, &input, &streams, &out, &dump_layer, exact_check),
        Command::Verify {
            config,
            seed,
            input,
            weights,
            int8,
            streams,
        } => cmd_verify(&config, seed, input.as_deref(), weights.as_deref(), int8, streams.as_deref()),
        Command::Report {
            config,
            streams,
            fps,
            calibration,
            csv,
        } => cmd_report(&config, &streams, fps, calibration.as_deref(), csv),
        Command::Generate {
            config,
            seed,
            input,
            weights,
            zero_fraction,
        } => cmd_generate(&config, seed, &input, &weights, zero_fraction),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn load_config(path: &Path) -> anyhow::Result<NetworkConfig> {
    let cfg = NetworkConfig::from_file(path).with_context(|| format!("reading {}", path.display()))?;
    // reject chains that do not connect before anything is computed
    cfg.shapes().with_context(|| format!("validating {}", path.display()))?;
    Ok(cfg)
}

fn load_weights(cfg: &NetworkConfig, path: &Path, int8: bool) -> anyhow::Result<BTreeMap<usize, QuantizedWeightTensor>> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    files::parse_weights(cfg, &bytes, int8).with_context(|| format!("parsing {}", path.display()))
}

fn load_map(path: &Path) -> anyhow::Result<FeatureMap> {
    FeatureMap::read_file(path).with_context(|| format!("reading {}", path.display()))
}

fn cmd_compress(config: &Path, w: &WeightArgs, out: &Path) -> anyhow::Result<()> {
    let cfg = load_config(config)?;
    let weights = load_weights(&cfg, &w.weights, w.int8)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut summary = String::new();
    let _ = writeln!(
        summary,
        "{:>5}  {:<14} {:>12} {:>12} {:>7} {:>12} {:>4}",
        "layer", "kernel", "raw bytes", "compressed", "ratio", "N_3", "N_b"
    );
    let (mut raw_total, mut comp_total, mut n3_total) = (0u64, 0u64, 0u64);
    for (n, t) in &weights {
        let stream = compress_fitted(t, cfg.options.flatten_order).map_err(|e| e.in_layer(*n))?;
        files::write_conv(out, *n, &stream, t.biases()).with_context(|| format!("writing layer {n}"))?;
        let bytes = stream.to_bytes().len() as u64;
        let plans = decode_all(&stream).map_err(|e| e.in_layer(*n))?;
        let n3: u64 = plans.iter().map(count_nonzero_trits).sum();
        let n_b = plans.first().map_or(0, |p| p.n_b);
        let weight_bits = match &cfg.layers[*n].layer {
            blmac::network::Layer::Conv(c) => c.weight_bits,
            _ => unreachable!("weights exist only for convolutions"),
        };
        let raw = t.shape().len() as u64 * weight_bits.div_ceil(8) as u64;
        let s = t.shape();
        let _ = writeln!(
            summary,
            "{:>5}  {:<14} {:>12} {:>12} {:>7.3} {:>12} {:>4}",
            n,
            format!("{}x{}x{}x{}", s.k, s.k, s.z, s.o),
            thousands(raw),
            thousands(bytes),
            bytes as f64 / raw as f64,
            thousands(n3),
            n_b
        );
        raw_total += raw;
        comp_total += bytes;
        n3_total += n3;
    }
    let _ = writeln!(
        summary,
        "{:>5}  {:<14} {:>12} {:>12} {:>7.3} {:>12}",
        "total",
        "",
        thousands(raw_total),
        thousands(comp_total),
        if raw_total == 0 { 0.0 } else { comp_total as f64 / raw_total as f64 },
        thousands(n3_total)
    );
    write_atomic(&out.join("summary.txt"), summary.as_bytes())?;
    print!("{summary}");
    Ok(())
}

fn engine_report(run: &NetworkRun) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:>5}  {:<8} {:<14} {:<14} {:>6} {:>13} {:>12} {:>14}",
        "layer", "type", "input", "output", "groups", "cycles/kernel", "cycles/map", "peak/capacity"
    );
    for l in &run.layers {
        let kind = if l.fused { format!("{}*", l.label) } else { l.label.to_string() };
        let (groups, kern, map, res) = match &l.stats {
            Some(st) => (
                st.groups.to_string(),
                thousands(st.cycles_per_kernel),
                thousands(st.cycles_map),
                format!("{}/{}", st.peak_residency, st.residency_capacity),
            ),
            None => Default::default(),
        };
        let _ = writeln!(
            s,
            "{:>5}  {:<8} {:<14} {:<14} {:>6} {:>13} {:>12} {:>14}",
            l.index,
            kind,
            l.shape.input.to_string(),
            l.shape.output.to_string(),
            groups,
            kern,
            map,
            res
        );
    }
    if run.layers.iter().any(|l| l.fused) {
        let _ = writeln!(s, "(* computed inside the preceding convolution)");
    }
    let _ = writeln!(s, "cycles per frame: {}", thousands(run.frame_cycles()));
    let _ = writeln!(s, "peak slice buffer residency: {} pixels", run.peak_residency());
    s
}

fn cmd_run(
    config: &Path,
    input: &Path,
    streams: &Path,
    out: &Path,
    dump: &[usize],
    exact_check: bool,
) -> anyhow::Result<()> {
    let cfg = load_config(config)?;
    let input = load_map(input)?;
    if let Some(&bad) = dump.iter().find(|&&n| n >= cfg.layers.len()) {
        return Err(blmac::Error::Config(format!(
            "--dump-layer {bad}: network has {} layers",
            cfg.layers.len()
        ))
        .into());
    }
    let mut backend = BlmacBackend {
        load: |n: usize| files::read_conv(streams, n),
    };
    let opts = RunOptions {
        keep: dump.iter().copied().collect(),
        exact_check,
        parallel: true,
        ..Default::default()
    };
    let run = run_network(&cfg, &input, &mut backend, &opts)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for (n, map) in &run.outputs {
        map.write_file(files::map_path(out, *n))?;
    }
    run.final_output.write_file(out.join("output.fmap"))?;
    let report = engine_report(&run);
    write_atomic(&out.join("engine_report.txt"), report.as_bytes())?;
    print!("{report}");
    Ok(())
}

fn first_difference(a: &FeatureMap, b: &FeatureMap) -> Option<(usize, usize, usize)> {
    if a.dims() != b.dims() {
        return Some((0, 0, 0));
    }
    let d = a.dims();
    (0..d.y)
        .flat_map(|y| (0..d.z).flat_map(move |z| (0..d.x).map(move |x| (x, y, z))))
        .find(|&(x, y, z)| a.get(x, y, z) != b.get(x, y, z))
}

fn compare_runs(oracle: &NetworkRun, mac: &NetworkRun, blmac: &NetworkRun) -> Result<usize, Mismatch> {
    let mut maps: Vec<(String, &FeatureMap, &FeatureMap, &FeatureMap)> = oracle
        .outputs
        .iter()
        .map(|(n, m)| (format!("layer {n}"), m, &mac.outputs[n], &blmac.outputs[n]))
        .collect();
    maps.push(("final output".into(), &oracle.final_output, &mac.final_output, &blmac.final_output));
    for (name, o, m, b) in &maps {
        for (path, other) in [("MAC", m), ("BLMAC", b)] {
            if let Some((x, y, z)) = first_difference(o, other) {
                let detail = if o.dims() != other.dims() {
                    format!("dims {} vs {}", o.dims(), other.dims())
                } else {
                    format!("(x={x}, y={y}, z={z}): oracle {}, {path} {}", o.get(x, y, z), other.get(x, y, z))
                };
                return Err(Mismatch(format!("{path} path differs from the oracle at {name} {detail}")));
            }
        }
    }
    Ok(maps.len())
}

fn cmd_verify(
    config: &Path,
    seed: u64,
    input: Option<&Path>,
    weights: Option<&Path>,
    int8: bool,
    streams: Option<&Path>,
) -> anyhow::Result<()> {
    let cfg = load_config(config)?;
    let input = match input {
        Some(p) => load_map(p)?,
        None => synthesize_input(&cfg, seed),
    };
    let weights = match weights {
        Some(p) => load_weights(&cfg, p, int8)?,
        None => synthesize_weights(&cfg, seed, &WeightProfile::default())?,
    };
    let opts = RunOptions {
        exact_check: false,
        parallel: true,
        ..Default::default()
    };
    let oracle = run_network(&cfg, &input, &mut OracleBackend { weights: &weights }, &opts)?;
    let mac = run_network(&cfg, &input, &mut MacBackend { weights: &weights }, &opts)?;
    let bl = match streams {
        Some(dir) => run_network(
            &cfg,
            &input,
            &mut BlmacBackend {
                load: |n: usize| files::read_conv(dir, n),
            },
            &opts,
        )?,
        None => {
            let mut compressed: BTreeMap<usize, ConvWeights> = BTreeMap::new();
            for (&n, w) in &weights {
                let stream = compress_fitted(w, cfg.options.flatten_order).map_err(|e| e.in_layer(n))?;
                compressed.insert(
                    n,
                    ConvWeights {
                        stream,
                        biases: w.biases().to_vec(),
                    },
                );
            }
            run_network(
                &cfg,
                &input,
                &mut BlmacBackend {
                    load: |n: usize| Ok(compressed.remove(&n).expect("one load per convolution")),
                },
                &opts,
            )?
        }
    };
    let checked = compare_runs(&oracle, &mac, &bl)?;
    println!(
        "verified {} layers, {} convolutions, {checked} output maps: oracle, MAC and BLMAC agree",
        cfg.layers.len(),
        weights.len()
    );
    Ok(())
}

fn cmd_report(
    config: &Path,
    streams: &Path,
    fps: f64,
    calibration: Option<&Path>,
    csv: bool,
) -> anyhow::Result<()> {
    let cfg = load_config(config)?;
    if !(fps.is_finite() && fps > 0.0) {
        return Err(blmac::Error::Config(format!("frame rate must be positive, got {fps}")).into());
    }
    let calibration = match calibration {
        Some(p) => Some(Calibration::read_file(p).with_context(|| format!("reading {}", p.display()))?),
        None => None,
    };
    let specs = cfg.layer_specs()?;
    let mut loaded = Vec::new();
    for spec in specs.iter().filter(|s| s.kind == LayerKind::Conv) {
        let n = spec.index;
        let path = files::stream_path(streams, n);
        let stream = CompressedWeightStream::read_file(&path)
            .map_err(|e| e.in_layer(n))
            .with_context(|| format!("reading {}", path.display()))?;
        if Some(stream.shape()) != spec.kernel {
            return Err(blmac::Error::Config(format!(
                "stream for layer {n} has shape {:?}, config expects {:?}",
                stream.shape(),
                spec.kernel
            ))
            .into());
        }
        let plans = decode_all(&stream).map_err(|e| e.in_layer(n))?;
        let arrange = arrange_tiles_on(spec.input.x, cfg.options.geometry).map_err(|e| e.in_layer(n))?;
        loaded.push((plans, arrange, stream.to_bytes().len() as u64));
    }
    let convs: Vec<ConvAccounting<'_>> = loaded
        .iter()
        .map(|(plans, arrange, bytes)| ConvAccounting {
            plans,
            arrange: *arrange,
            stream_bytes: *bytes,
        })
        .collect();
    let report = build_report(
        &specs,
        &convs,
        &cfg.options.overhead,
        cfg.options.cache_bytes,
        fps,
        calibration.as_ref(),
    )?;
    if csv {
        print!("{}", report.to_csv());
    } else {
        print!("{}", report.to_text());
    }
    Ok(())
}

fn cmd_generate(config: &Path, seed: u64, input: &Path, weights: &Path, zero_fraction: f64) -> anyhow::Result<()> {
    let cfg = load_config(config)?;
    if !(0.0..=1.0).contains(&zero_fraction) {
        return Err(blmac::Error::Config(format!("zero fraction {zero_fraction} is outside [0, 1]")).into());
    }
    let profile = WeightProfile {
        zero_fraction,
        ..WeightProfile::default()
    };
    let w = synthesize_weights(&cfg, seed, &profile)?;
    synthesize_input(&cfg, seed).write_file(input)?;
    write_atomic(weights, &files::int8_weight_bytes(&w)?)?;
    println!(
        "wrote {} ({}) and int8 weights for {} convolutions to {}",
        input.display(),
        cfg.input,
        w.len(),
        weights.display()
    );
    Ok(())
}
