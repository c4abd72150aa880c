//! The `subbyte` command line.
//!
//! Exit status: 0 on success, 1 when a kernel disagrees with the reference
//! implementation, 2 on usage, configuration or input errors.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};

use crate::bench::{bench_csv, bench_layers};
use crate::error::{Error, Result};
use crate::isa::{parse_program, Machine};
use crate::kernels::{
    conv2d_bitserial, conv2d_int8_baseline, dot_bitserial, matmul_bitserial, matmul_int8_baseline, pack_bitplanes_with,
    pack_dense, KernelOutput, MixedSign, PackMethod,
};
use crate::oracle::{conv2d_ref, dot_ref, matmul_ref};
use crate::qnn::{format_layers, parse_layers, resnet18_layer_set, Mode};
use crate::rng::SplitMix64;
use crate::roofline::{roofline_csv, roofline_sweep, SweepConfig, DEFAULT_CHANNELS, DEFAULT_SIZES};
use crate::tensor::{ConvParams, QuantTensor, Signedness};
use crate::tensor_io::{write_to, TensorFile};
use crate::MachineConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "subbyte", version, about = "Sub-byte vector kernel simulator and benchmarks")]
struct Cli {
    /// Machine configuration file of key=value lines.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. --set lanes=8. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one kernel, check it against the reference and print its cycles.
    Kernel(KernelArgs),
    /// Per-layer cycles of every mode over the residual network layer set.
    #[command(name = "bench-resnet18")]
    BenchResnet18(BenchArgs),
    /// Roofline points of the 3x3 convolution for both machine presets.
    Roofline(RooflineArgs),
    /// Execute a textual program on a fresh machine.
    Trace(TraceArgs),
    /// Write a random tensor file.
    #[command(name = "gen-tensor")]
    GenTensor(GenTensorArgs),
    /// Print the built-in layer set in the layer file format.
    Layers(OutArg),
}

#[derive(Args, Debug)]
struct OutArg {
    /// Output file; standard output when omitted.
    #[arg(short = 'o', long = "output", value_name = "FILE")]
    output: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum KernelKind {
    Dot,
    Matmul,
    Conv2d,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum CliMode {
    Int1,
    Int2,
    #[value(name = "int2-no-vbitpack")]
    Int2NoVbitpack,
    Int8,
}

impl CliMode {
    fn mode(self) -> Mode {
        match self {
            CliMode::Int1 => Mode::Int1,
            CliMode::Int2 => Mode::Int2,
            CliMode::Int2NoVbitpack => Mode::Int2NoVbitpack,
            CliMode::Int8 => Mode::Int8Baseline,
        }
    }
}

fn dims(s: &str, n: usize) -> std::result::Result<Vec<usize>, String> {
    let v: Vec<usize> = s
        .split('x')
        .map(|d| d.parse::<usize>().map_err(|_| format!("bad dimension `{d}`")))
        .collect::<std::result::Result<_, _>>()?;
    if v.len() != n {
        return Err(format!("expected {n} dimensions separated by `x`, got `{s}`"));
    }
    if v.contains(&0) {
        return Err("dimensions must be positive".into());
    }
    Ok(v)
}

fn hw(s: &str) -> std::result::Result<(usize, usize), String> {
    dims(s, 2).map(|v| (v[0], v[1]))
}

fn mkn(s: &str) -> std::result::Result<(usize, usize, usize), String> {
    dims(s, 3).map(|v| (v[0], v[1], v[2]))
}

#[derive(Args, Debug)]
struct KernelArgs {
    kind: KernelKind,
    /// Input height x width (conv2d).
    #[arg(long, value_parser = hw, default_value = "8x8")]
    size: (usize, usize),
    /// Kernel height x width (conv2d).
    #[arg(long, value_parser = hw, default_value = "3x3")]
    kernel: (usize, usize),
    /// Input channels (conv2d).
    #[arg(long, default_value_t = 4)]
    channels: usize,
    /// Output channels (conv2d); defaults to --channels.
    #[arg(long)]
    out_channels: Option<usize>,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    #[arg(long, default_value_t = 0)]
    pad: usize,
    /// Vector length (dot).
    #[arg(long, default_value_t = 1024)]
    len: usize,
    /// Rows x inner x columns (matmul).
    #[arg(long, value_parser = mkn, default_value = "16x64x16")]
    shape: (usize, usize, usize),
    /// Weight precision; defaults to the mode's precision.
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..=8))]
    wbits: Option<u32>,
    /// Activation precision; defaults to the mode's precision.
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..=8))]
    abits: Option<u32>,
    /// Treat activations as signed (weights are always signed).
    #[arg(long)]
    signed_activations: bool,
    #[arg(long, value_enum, default_value = "int2")]
    mode: CliMode,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Layer file to benchmark instead of the built-in set.
    #[arg(long, value_name = "FILE")]
    layers: Option<PathBuf>,
    /// Also check every layer output against the reference convolution.
    #[arg(long)]
    verify: bool,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args, Debug)]
struct RooflineArgs {
    /// Square input sizes, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SIZES)]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = DEFAULT_CHANNELS)]
    channels: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args, Debug)]
struct TraceArgs {
    file: PathBuf,
    /// Registers to print, e.g. v1,v2. Defaults to every non-zero register.
    #[arg(long, value_delimiter = ',')]
    regs: Vec<String>,
    /// Also print every executed instruction with its cycles.
    #[arg(long)]
    verbose: bool,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum TensorLayout {
    Unpacked,
    Bitplane,
    Dense,
}

#[derive(Args, Debug)]
struct GenTensorArgs {
    /// Dimensions separated by `x`, e.g. 4x8x8.
    #[arg(long)]
    shape: String,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..=8))]
    bits: u32,
    #[arg(long)]
    signed: bool,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, value_enum, default_value = "unpacked")]
    layout: TensorLayout,
    #[arg(short = 'o', long = "output", value_name = "FILE")]
    output: PathBuf,
}

enum Failure {
    Verify(String),
    Usage(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

type CliResult<T = ()> = std::result::Result<T, Failure>;

fn machine_config(cli: &Cli) -> Result<MachineConfig> {
    let mut cfg = MachineConfig::default();
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        cfg.apply_kv(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    }
    for o in &cli.overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| Error::Config(format!("--set expects key=value, got `{o}`")))?;
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn emit(out: &mut dyn Write, path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::Io(format!("{}: {e}", p.display()))),
        None => Ok(out.write_all(text.as_bytes())?),
    }
}

fn checksum(values: &[i64]) -> String {
    let mut h = Sha256::new();
    for v in values {
        h.update(v.to_le_bytes());
    }
    h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
}

fn config_header(s: &mut String, cfg: &MachineConfig) {
    for line in cfg.to_kv_lines() {
        let _ = writeln!(s, "# config {line}");
    }
}

fn cmd_kernel(cfg: &MachineConfig, a: &KernelArgs, out: &mut dyn Write) -> CliResult {
    let mode = a.mode.mode();
    let wbits = a.wbits.unwrap_or(mode.precision());
    let abits = a.abits.unwrap_or(mode.precision());
    let asign = if a.signed_activations { Signedness::Signed } else { Signedness::Unsigned };
    let mut rng = SplitMix64::new(a.seed);
    let mut m = Machine::new(cfg.clone())?;
    let method = mode.pack_method();
    let (shape, got, want): (String, KernelOutput, Vec<i64>) = match a.kind {
        KernelKind::Dot => {
            let w = QuantTensor::random(&[a.len], wbits, Signedness::Signed, &mut rng)?;
            let x = QuantTensor::random(&[a.len], abits, asign, &mut rng)?;
            let want = vec![dot_ref(&w, &x)?];
            let got = match method {
                Some(method) => {
                    let before = m.report();
                    let pw = pack_bitplanes_with(&mut m, &w, method)?;
                    let px = pack_bitplanes_with(&mut m, &x, method)?;
                    let packing_cycles = m.report().since(&before).total_cycles;
                    let v = dot_bitserial(&mut m, &pw, &px, MixedSign::Allow)?;
                    KernelOutput { values: vec![v], shape: vec![1], packing_cycles }
                }
                None => {
                    let w = w.reshape(&[1, a.len])?;
                    let x = x.reshape(&[a.len, 1])?;
                    matmul_int8_baseline(&mut m, &w, &x)?
                }
            };
            (format!("{}", a.len), got, want)
        }
        KernelKind::Matmul => {
            let (r, k, c) = a.shape;
            let x = QuantTensor::random(&[r, k], abits, asign, &mut rng)?;
            let w = QuantTensor::random(&[k, c], wbits, Signedness::Signed, &mut rng)?;
            let want = matmul_ref(&x, &w)?;
            let got = match method {
                Some(method) => matmul_bitserial(&mut m, &x, &w, method)?,
                None => matmul_int8_baseline(&mut m, &x, &w)?,
            };
            (format!("{r}x{k}x{c}"), got, want)
        }
        KernelKind::Conv2d => {
            let p = ConvParams {
                in_channels: a.channels,
                out_channels: a.out_channels.unwrap_or(a.channels),
                kernel_h: a.kernel.0,
                kernel_w: a.kernel.1,
                stride: a.stride,
                padding: a.pad,
                input_h: a.size.0,
                input_w: a.size.1,
            };
            p.validate()?;
            let x = QuantTensor::random(&p.input_shape(), abits, asign, &mut rng)?;
            let w = QuantTensor::random(&p.weight_shape(), wbits, Signedness::Signed, &mut rng)?;
            let want = conv2d_ref(&x, &w, &p)?;
            let got = match method {
                Some(method) => conv2d_bitserial(&mut m, &x, &w, &p, method)?,
                None => conv2d_int8_baseline(&mut m, &x, &w, &p)?,
            };
            let shape = format!(
                "{}x{}x{}/{}x{}x{}",
                p.in_channels,
                p.input_h,
                p.input_w,
                p.out_channels,
                p.output_h(),
                p.output_w()
            );
            (shape, got, want)
        }
    };
    let r = m.report();
    let ok = got.values == want;
    let kind = match a.kind {
        KernelKind::Dot => "dot",
        KernelKind::Matmul => "matmul",
        KernelKind::Conv2d => "conv2d",
    };
    let mut s = String::new();
    let _ = writeln!(s, "# subbyte kernel {kind} seed={}", a.seed);
    config_header(&mut s, cfg);
    s.push_str("kernel,mode,shape,wbits,abits,cycles,packing_cycles,instructions,ops,bytes,checksum,status\n");
    let _ = writeln!(
        s,
        "{kind},{},{shape},{wbits},{abits},{},{},{},{},{},{},{}",
        mode,
        r.total_cycles,
        got.packing_cycles,
        r.instructions,
        r.ops_executed,
        r.bytes_moved,
        checksum(&got.values),
        if ok { "verified" } else { "MISMATCH" }
    );
    emit(out, a.out.output.as_deref(), &s)?;
    if ok {
        Ok(())
    } else {
        Err(Failure::Verify(format!("{kind} output disagrees with the reference")))
    }
}

fn cmd_bench(cfg: &MachineConfig, a: &BenchArgs, out: &mut dyn Write) -> CliResult {
    let layers = match &a.layers {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
            parse_layers(&text)?
        }
        None => resnet18_layer_set(),
    };
    let result = bench_layers(cfg, &layers, a.seed, a.verify).map_err(|e| match e {
        Error::Accumulator(msg) if a.verify => Failure::Verify(msg),
        e => e.into(),
    })?;
    emit(out, a.out.output.as_deref(), &bench_csv(cfg, a.seed, &result))?;
    Ok(())
}

fn cmd_roofline(cfg: &MachineConfig, a: &RooflineArgs, out: &mut dyn Write) -> CliResult {
    let mut configs = [SweepConfig::packed_eight_lane(), SweepConfig::baseline_four_lane()];
    // Cycle-model constants apply to both presets; lane count and register
    // length stay those of the preset.
    for c in &mut configs {
        c.machine.issue_overhead_cycles = cfg.issue_overhead_cycles;
        c.machine.lane_datapath_bits = cfg.lane_datapath_bits;
        c.machine.memory_bandwidth_factor = cfg.memory_bandwidth_factor;
        c.machine.memory_bytes = cfg.memory_bytes;
        c.machine.validate()?;
    }
    let points = roofline_sweep(&configs, &a.sizes, a.channels, a.seed)?;
    emit(out, a.out.output.as_deref(), &roofline_csv(&configs, a.channels, a.seed, &points))?;
    Ok(())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn cmd_trace(cfg: &MachineConfig, a: &TraceArgs, out: &mut dyn Write) -> CliResult {
    let text = std::fs::read_to_string(&a.file).map_err(|e| Error::Io(format!("{}: {e}", a.file.display())))?;
    let program = parse_program(&text).map_err(|e| Failure::Usage(format!("{}: {e}", a.file.display())))?;
    let regs: Vec<usize> = a
        .regs
        .iter()
        .map(|r| {
            r.trim()
                .strip_prefix('v')
                .and_then(|n| n.parse::<usize>().ok())
                .filter(|&n| n < crate::config::NUM_VREGS)
                .ok_or_else(|| Failure::Usage(format!("bad register `{r}`")))
        })
        .collect::<CliResult<_>>()?;
    let mut m = Machine::new(cfg.clone())?;
    for (addr, bytes) in &program.memory {
        m.mem_mut().write(*addr, bytes)?;
    }
    let result = m.run_program(&program.instructions);
    let (trace, failure) = match result {
        Ok(t) => (t, None),
        Err(e) => {
            let line = program.lines[e.index];
            (e.partial.clone(), Some(format!("{}: line {line}: {}", a.file.display(), e.error)))
        }
    };
    let mut s = String::new();
    if a.verbose {
        for e in trace.entries() {
            let _ = writeln!(s, "{:>6}  {}", e.cycles, e.instr);
        }
    }
    let r = trace.report();
    let st = m.state();
    let _ = writeln!(s, "instructions {}", r.instructions);
    let _ = writeln!(s, "cycles {}", r.total_cycles);
    let b = &r.breakdown;
    let _ = writeln!(
        s,
        "breakdown alu={} popcnt={} shacc={} bitpack={} memory={} scalar={}",
        b.alu, b.popcnt, b.shacc, b.bitpack, b.memory, b.scalar
    );
    let _ = writeln!(s, "vl {} sew {}", st.vl, st.sew);
    let shown: Vec<usize> = if regs.is_empty() {
        (0..crate::config::NUM_VREGS).filter(|&r| m.vrf().words(r).iter().any(|&w| w != 0)).collect()
    } else {
        regs
    };
    for r in shown {
        let bytes = m.vrf().to_bytes(r);
        let active = st.vl * st.sew.bytes() as usize;
        let used = bytes.iter().rposition(|&b| b != 0).map_or(0, |i| i + 1).max(active);
        let _ = writeln!(s, "v{r} {}", hex(&bytes[..used]));
    }
    emit(out, None, &s)?;
    match failure {
        None => Ok(()),
        Some(msg) => Err(Failure::Usage(msg)),
    }
}

fn cmd_gen_tensor(cfg: &MachineConfig, a: &GenTensorArgs) -> CliResult {
    let shape = a
        .shape
        .split('x')
        .map(|d| d.parse::<usize>().map_err(|_| Failure::Usage(format!("bad dimension `{d}`"))))
        .collect::<CliResult<Vec<_>>>()?;
    let s = if a.signed { Signedness::Signed } else { Signedness::Unsigned };
    let t = QuantTensor::random(&shape, a.bits, s, &mut SplitMix64::new(a.seed))?;
    let file = match a.layout {
        TensorLayout::Unpacked => TensorFile::Unpacked(t),
        TensorLayout::Bitplane => {
            TensorFile::Packed(pack_bitplanes_with(&mut Machine::new(cfg.clone())?, &t, PackMethod::Vbitpack)?)
        }
        TensorLayout::Dense => TensorFile::Packed(pack_dense(&mut Machine::new(cfg.clone())?, &t)?),
    };
    let mut f = std::fs::File::create(&a.output).map_err(|e| Error::Io(format!("{}: {e}", a.output.display())))?;
    write_to(&mut f, &file)?;
    Ok(())
}

fn dispatch(cli: &Cli, out: &mut dyn Write) -> CliResult {
    let cfg = machine_config(cli)?;
    match &cli.command {
        Command::Kernel(a) => cmd_kernel(&cfg, a, out),
        Command::BenchResnet18(a) => cmd_bench(&cfg, a, out),
        Command::Roofline(a) => cmd_roofline(&cfg, a, out),
        Command::Trace(a) => cmd_trace(&cfg, a, out),
        Command::GenTensor(a) => cmd_gen_tensor(&cfg, a),
        Command::Layers(o) => {
            let text = format!(
                "# name cin cout kernel stride pad input w a o [excluded]\n{}",
                format_layers(&resnet18_layer_set())
            );
            Ok(emit(out, o.output.as_deref(), &text)?)
        }
    }
}

/// Parse `args` (program name first), run, and return the exit status.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    match dispatch(&cli, out) {
        Ok(()) => EXIT_OK,
        Err(Failure::Verify(msg)) => {
            let _ = writeln!(err, "verification failed: {msg}");
            EXIT_VERIFY
        }
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_USAGE
        }
    }
}
