use std::path::Path;
use std::process::{Command, Output};

use subbyte_core::tensor_io::{read_from, TensorFile};

fn subbyte(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_subbyte")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn last_row(o: &Output) -> Vec<String> {
    stdout(o).lines().last().unwrap().split(',').map(str::to_string).collect()
}

fn data(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name).display().to_string()
}

#[test]
fn precision_nine_is_a_usage_error() {
    let o = subbyte(&["kernel", "conv2d", "--size", "8x8", "--kernel", "3x3", "--wbits", "9", "--abits", "2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--wbits"), "{}", stderr(&o));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    assert_eq!(subbyte(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn conv_with_and_without_vbitpack_agree() {
    let args =
        |mode| ["kernel", "conv2d", "--size", "8x8", "--kernel", "3x3", "--wbits", "2", "--abits", "2", "--mode", mode];
    let a = subbyte(&args("int2"));
    let b = subbyte(&args("int2-no-vbitpack"));
    assert!(a.status.success() && b.status.success());
    let (ra, rb) = (last_row(&a), last_row(&b));
    assert_eq!(ra[10], rb[10], "checksums");
    assert_eq!(ra[11], "verified");
    let cycles = |r: &[String]| r[5].parse::<u64>().unwrap();
    assert!(cycles(&ra) < cycles(&rb));
}

#[test]
fn kernel_report_carries_the_config() {
    let o = subbyte(&["--set", "lanes=8", "--set", "vlen=8192", "kernel", "matmul", "--shape", "4x100x70"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("# config lanes=8\n"));
    assert!(out.contains("# config vlen_bits=8192\n"));
    assert!(out.contains("\nkernel,mode,shape,"));
}

#[test]
fn config_file_errors_cite_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("machine.cfg");
    std::fs::write(&cfg, "lanes=8\nvlen_bits=8192\nnot a pair\n").unwrap();
    let o = subbyte(&["--config", cfg.to_str().unwrap(), "layers"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn golden_trace_through_the_cli() {
    let o = subbyte(&["trace", &data("vbitpack_four_calls.trace"), "--regs", "v2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let expected = std::fs::read_to_string(data("vbitpack_four_calls.expected")).unwrap();
    let want = expected.lines().find(|l| l.starts_with("v2 ")).unwrap();
    assert!(stdout(&o).lines().any(|l| l == want), "{}", stdout(&o));
    assert!(stdout(&o).contains("vl 8 sew e8"));
}

#[test]
fn trace_errors_cite_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.trace");
    std::fs::write(&bad, "vsetvl 4, e8\nvand v1, v2, v3\nvfrobnicate v1, v2\n").unwrap();
    let o = subbyte(&["trace", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));

    // Runtime faults are reported at their line after the partial result.
    std::fs::write(&bad, "vsetvl 4, e8\n\nvbitpack v1, v2, 3\n").unwrap();
    let o = subbyte(&["trace", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
    assert!(stdout(&o).contains("instructions 1"));
}

#[test]
fn empty_trace_runs_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.trace");
    std::fs::write(&empty, "# nothing\n\n").unwrap();
    let o = subbyte(&["trace", empty.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("instructions 0\ncycles 0\n"));
}

#[test]
fn bench_is_deterministic_and_honours_a_layer_file() {
    let dir = tempfile::tempdir().unwrap();
    let layers = dir.path().join("layers.txt");
    std::fs::write(
        &layers,
        "# two small layers\n\
         stem cin=3 cout=8 kernel=3x3 stride=1 pad=1 input=8x8 w=s2@0.1 a=u2@0.2 o=u2@0.5 excluded\n\
         body cin=8 cout=16 kernel=3x3 stride=2 pad=1 input=8x8 w=s2@0.1 a=u2@0.2 o=u2@0.5\n",
    )
    .unwrap();
    let run = || subbyte(&["bench-resnet18", "--layers", layers.to_str().unwrap(), "--seed", "4", "--verify"]);
    let (a, b) = (run(), run());
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
    let out = stdout(&a);
    assert_eq!(out.lines().filter(|l| !l.starts_with('#')).count(), 9);
    assert!(out.contains("# excluded from summary: stem\n"));
    assert!(out.contains("# summary mode=int2 "));
}

#[test]
fn bench_rejects_a_malformed_layer_file() {
    let dir = tempfile::tempdir().unwrap();
    let layers = dir.path().join("layers.txt");
    std::fs::write(&layers, "body cin=8 cout=16 kernel=3 stride=1\n").unwrap();
    let o = subbyte(&["bench-resnet18", "--layers", layers.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 1"), "{}", stderr(&o));
}

#[test]
fn roofline_on_a_short_ladder() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("roof.csv");
    let o = subbyte(&["roofline", "--sizes", "4,8", "--channels", "4", "-o", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(&out).unwrap();
    let rows: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "config,size,intensity,performance");
    assert_eq!(rows.len(), 5);
    assert!(rows[1].starts_with("packed-8-lane,4x4,"));
    assert!(rows[4].starts_with("baseline-4-lane,8x8,"));
}

#[test]
fn gen_tensor_writes_a_readable_file() {
    let dir = tempfile::tempdir().unwrap();
    for layout in ["unpacked", "bitplane", "dense"] {
        let path = dir.path().join(format!("{layout}.bin"));
        let o = subbyte(&[
            "gen-tensor",
            "--shape",
            "3x5x7",
            "--bits",
            "2",
            "--signed",
            "--layout",
            layout,
            "-o",
            path.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        let t = match read_from(&mut std::fs::File::open(&path).unwrap()).unwrap() {
            TensorFile::Unpacked(t) => t,
            TensorFile::Packed(p) => p.unpack(),
        };
        assert_eq!(t.shape(), &[3, 5, 7]);
        assert!(t.values().iter().all(|v| (-2..=1).contains(v)));
    }
}
