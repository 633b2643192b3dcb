use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use blmac::codec::CompressedWeightStream;
use blmac::network::{run_network, BlmacBackend, ConvWeights, NetworkConfig, RunOptions};
use blmac::tensor::FeatureMap;
use tempfile::TempDir;

const SMALL: &str = "
[net]
width=16
height=8
channels=4
acc_bits=24

[conv]
size=3
filters=8
out_shift=5

[maxpool]
stride=2

[conv]
size=1
filters=6
activation=linear
out_shift=4

[yolo]
";

const IDENTITY: &str = "
[net]
width=9
height=5
channels=1

[conv]
size=1
filters=1
activation=linear
out_mult=1
out_shift=0
";

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn sim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blmac-sim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new(config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("net.cfg"), config).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> String {
        self.dir.path().join(name).to_str().unwrap().to_string()
    }

    fn generate(&self, seed: u64) {
        ok(&sim(&[
            "generate",
            "--config",
            &self.path("net.cfg"),
            "--seed",
            &seed.to_string(),
            "--input",
            &self.path("input.fmap"),
            "--weights",
            &self.path("weights.bin"),
        ]));
    }

    fn compress(&self) -> String {
        ok(&sim(&[
            "compress",
            "--config",
            &self.path("net.cfg"),
            "--weights",
            &self.path("weights.bin"),
            "--int8",
            "--out",
            &self.path("streams"),
        ]))
    }

    fn run(&self, out: &str, extra: &[&str]) -> Output {
        let mut args = vec![
            "run".to_string(),
            "--config".into(),
            self.path("net.cfg"),
            "--input".into(),
            self.path("input.fmap"),
            "--streams".into(),
            self.path("streams"),
            "--out".into(),
            self.path(out),
        ];
        args.extend(extra.iter().map(|s| s.to_string()));
        sim(&args.iter().map(String::as_str).collect::<Vec<_>>())
    }
}

#[test]
fn identity_layer_reproduces_input_file() {
    let ws = Workspace::new(IDENTITY);
    ws.generate(3);
    // weight 1, bias 0
    let mut w = vec![1u8];
    w.extend_from_slice(&0i32.to_le_bytes());
    std::fs::write(ws.path("weights.bin"), w).unwrap();
    ws.compress();
    ok(&ws.run("out", &[]));
    let input = std::fs::read(ws.path("input.fmap")).unwrap();
    let output = std::fs::read(ws.dir.path().join("out/output.fmap")).unwrap();
    assert_eq!(input, output);
}

#[test]
fn run_matches_in_memory_pipeline() {
    let ws = Workspace::new(SMALL);
    ws.generate(11);
    let summary = ws.compress();
    assert!(summary.contains("N_3"), "{summary}");
    ok(&ws.run("out", &["--dump-layer", "1"]));

    let cfg = NetworkConfig::parse(SMALL).unwrap();
    let input = FeatureMap::read_file(ws.path("input.fmap")).unwrap();
    let streams = ws.dir.path().join("streams");
    let mut backend = BlmacBackend {
        load: |n: usize| {
            let stream = CompressedWeightStream::read_file(streams.join(format!("layer_{n:03}.blws")))?;
            let bias = std::fs::read(streams.join(format!("layer_{n:03}.bias")))?;
            let biases = bias
                .chunks_exact(4)
                .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            Ok(ConvWeights { stream, biases })
        },
    };
    let run = run_network(&cfg, &input, &mut backend, &RunOptions::default()).unwrap();
    let file = std::fs::read(ws.dir.path().join("out/output.fmap")).unwrap();
    assert_eq!(file, run.final_output.to_bytes());
    // the dumped layer and the detection head are written too
    assert!(ws.dir.path().join("out/layer_001.fmap").exists());
    assert!(ws.dir.path().join("out/layer_003.fmap").exists());
    let report = std::fs::read_to_string(ws.dir.path().join("out/engine_report.txt")).unwrap();
    assert!(report.contains("cycles per frame"), "{report}");
}

#[test]
fn compressed_sizes_match_files() {
    let ws = Workspace::new(SMALL);
    ws.generate(5);
    let summary = ws.compress();
    for n in [0usize, 2] {
        let len = std::fs::metadata(ws.dir.path().join(format!("streams/layer_{n:03}.blws")))
            .unwrap()
            .len();
        let row = summary
            .lines()
            .find(|l| l.split_whitespace().next() == Some(&n.to_string()))
            .unwrap();
        let reported: u64 = row.split_whitespace().nth(3).unwrap().replace(',', "").parse().unwrap();
        assert_eq!(reported, len, "{row}");
    }
}

#[test]
fn missing_stream_names_the_layer() {
    let ws = Workspace::new(SMALL);
    ws.generate(1);
    ws.compress();
    std::fs::remove_file(ws.dir.path().join("streams/layer_002.blws")).unwrap();
    let out = ws.run("out", &[]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("layer 2"), "{err}");
    assert!(!ws.dir.path().join("out/output.fmap").exists());
}

#[test]
fn verify_accepts_streams_and_rejects_corruption() {
    let ws = Workspace::new(SMALL);
    ws.generate(9);
    ws.compress();
    let verify = || {
        sim(&[
            "verify",
            "--config",
            &ws.path("net.cfg"),
            "--weights",
            &ws.path("weights.bin"),
            "--int8",
            "--input",
            &ws.path("input.fmap"),
            "--streams",
            &ws.path("streams"),
        ])
    };
    ok(&verify());

    let path = ws.dir.path().join("streams/layer_000.blws");
    let mut stream = CompressedWeightStream::from_bytes(&std::fs::read(&path).unwrap()).unwrap();
    let mid = stream.payload_range(3).start + stream.payload(3).len() / 2;
    stream.payload_mut()[mid] ^= 0x5a;
    std::fs::write(&path, stream.to_bytes()).unwrap();
    let out = verify();
    let code = out.status.code();
    assert!(code == Some(1) || code == Some(2), "exit {code:?}");
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}

#[test]
fn verify_from_seed_and_zero_weights() {
    let ws = Workspace::new(SMALL);
    let out = ok(&sim(&["verify", "--config", &ws.path("net.cfg"), "--seed", "42"]));
    assert!(out.contains("agree"), "{out}");

    ok(&sim(&[
        "generate",
        "--config",
        &ws.path("net.cfg"),
        "--input",
        &ws.path("input.fmap"),
        "--weights",
        &ws.path("weights.bin"),
        "--zero-fraction",
        "1",
    ]));
    ok(&sim(&[
        "verify",
        "--config",
        &ws.path("net.cfg"),
        "--weights",
        &ws.path("weights.bin"),
        "--int8",
    ]));
}

#[test]
fn exit_codes_follow_error_kind() {
    let ws = Workspace::new(SMALL);
    ws.generate(2);
    ws.compress();
    let report = |fps: &str| {
        sim(&[
            "report",
            "--config",
            &ws.path("net.cfg"),
            "--streams",
            &ws.path("streams"),
            "--fps",
            fps,
        ])
    };
    assert_eq!(report("0").status.code(), Some(3));
    assert_eq!(report("-5").status.code(), Some(3));
    ok(&report("30"));

    // a chain that does not connect
    std::fs::write(ws.path("bad.cfg"), "[net]\nwidth=8\nheight=8\nchannels=3\n[route]\nlayers=4\n").unwrap();
    let out = sim(&["verify", "--config", &ws.path("bad.cfg")]);
    assert_eq!(out.status.code(), Some(3));

    // weight file shorter than the config requires
    std::fs::write(ws.path("short.bin"), [0u8; 10]).unwrap();
    let out = sim(&[
        "compress",
        "--config",
        &ws.path("net.cfg"),
        "--weights",
        &ws.path("short.bin"),
        "--int8",
        "--out",
        &ws.path("s2"),
    ]);
    assert_eq!(out.status.code(), Some(2));

    let out = sim(&["verify", "--config", &ws.path("missing.cfg")]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn empty_network_reports_zero_totals() {
    let ws = Workspace::new("[net]\nwidth=8\nheight=8\nchannels=3\n");
    std::fs::create_dir(ws.path("streams")).unwrap();
    let out = ok(&sim(&[
        "report",
        "--config",
        &ws.path("net.cfg"),
        "--streams",
        &ws.path("streams"),
        "--fps",
        "30",
    ]));
    assert!(out.contains("cycles per frame (column sum): 0"), "{out}");
    ok(&sim(&["verify", "--config", &ws.path("net.cfg")]));
}

#[test]
fn outputs_are_deterministic() {
    let a = Workspace::new(SMALL);
    let b = Workspace::new(SMALL);
    for ws in [&a, &b] {
        ws.generate(17);
        ws.compress();
        ok(&ws.run("out", &[]));
    }
    for name in [
        "input.fmap",
        "weights.bin",
        "streams/layer_000.blws",
        "streams/layer_002.blws",
        "out/output.fmap",
        "out/engine_report.txt",
    ] {
        let x = std::fs::read(a.dir.path().join(name)).unwrap();
        let y = std::fs::read(b.dir.path().join(name)).unwrap();
        assert_eq!(x, y, "{name}");
    }
}

#[test]
fn tiny_yolo_run_and_report() {
    let ws = Workspace::new(&std::fs::read_to_string(configs_dir().join("tiny-yolo.cfg")).unwrap());
    ws.generate(8);
    ws.compress();
    let engine = ok(&ws.run("out", &[]));
    let conv_rows = engine.lines().filter(|l| l.split_whitespace().nth(1) == Some("conv")).count();
    assert_eq!(conv_rows, 13, "{engine}");

    let report_args = |extra: &[&str]| {
        let mut v = vec![
            "report".to_string(),
            "--config".into(),
            ws.path("net.cfg"),
            "--streams".into(),
            ws.path("streams"),
            "--fps".into(),
            "30".into(),
        ];
        v.extend(extra.iter().map(|s| s.to_string()));
        v
    };
    let run = |args: Vec<String>| ok(&sim(&args.iter().map(String::as_str).collect::<Vec<_>>()));
    let text = run(report_args(&[]));
    let convs = text.lines().filter(|l| l.split_whitespace().nth(1) == Some("Conv")).count();
    assert_eq!(convs, 13, "{text}");
    assert!(text.contains("required clock at 30 fps"), "{text}");

    let cal = configs_dir().join("tiny-yolo-published.cal");
    let text = run(report_args(&["--calibration", cal.to_str().unwrap()]));
    assert!(text.contains("(237.3 MHz)"), "{text}");

    let csv = run(report_args(&["--csv"]));
    assert!(csv.lines().count() > 13);
}
