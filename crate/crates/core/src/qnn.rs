//! Quantized layer execution: quantize, integer convolution on the vector
//! unit, floating-point rescale on the scalar core.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::isa::{Machine, Opcode};
use crate::kernels::{conv2d_bitserial_prepared, conv2d_int8_baseline, prepare_conv_weights, PackMethod};
use crate::perf::CycleReport;
use crate::tensor::{check_precision, numel, ConvParams, QuantTensor, Signedness};
use crate::MachineConfig;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantScheme {
    pub precision_bits: u32,
    pub signedness: Signedness,
    pub scale: f64,
    pub zero_point: i32,
}

impl QuantScheme {
    pub fn new(precision_bits: u32, signedness: Signedness, scale: f64) -> Self {
        QuantScheme { precision_bits, signedness, scale, zero_point: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        check_precision(self.precision_bits)?;
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::Quant(format!("scale {} must be finite and positive", self.scale)));
        }
        let (lo, hi) = self.signedness.range(self.precision_bits);
        if !(lo..=hi).contains(&(self.zero_point as i64)) {
            return Err(Error::Quant(format!(
                "zero point {} not representable in {} {}-bit",
                self.zero_point,
                self.signedness.name(),
                self.precision_bits
            )));
        }
        Ok(())
    }

    fn token(&self) -> String {
        let s = if self.signedness.is_signed() { 's' } else { 'u' };
        if self.zero_point == 0 {
            format!("{s}{}@{}", self.precision_bits, self.scale)
        } else {
            format!("{s}{}@{}:{}", self.precision_bits, self.scale, self.zero_point)
        }
    }

    fn parse_token(tok: &str) -> Result<Self> {
        let bad = || Error::Format(format!("bad quantization scheme `{tok}`, expected e.g. s2@0.05"));
        let (head, rest) = tok.split_once('@').ok_or_else(bad)?;
        let signedness = match head.chars().next() {
            Some('s') => Signedness::Signed,
            Some('u') => Signedness::Unsigned,
            _ => return Err(bad()),
        };
        let precision_bits = head[1..].parse().map_err(|_| bad())?;
        let (scale, zp) = match rest.split_once(':') {
            Some((s, z)) => (s, z.parse().map_err(|_| bad())?),
            None => (rest, 0),
        };
        let scheme =
            QuantScheme { precision_bits, signedness, scale: scale.parse().map_err(|_| bad())?, zero_point: zp };
        scheme.validate()?;
        Ok(scheme)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerConfig {
    pub name: String,
    pub conv: ConvParams,
    pub weight: QuantScheme,
    pub activation: QuantScheme,
    pub output: QuantScheme,
    /// Kept at full precision in the network; not part of benchmark averages.
    pub excluded: bool,
}

impl LayerConfig {
    pub fn validate(&self) -> Result<()> {
        self.conv.validate()?;
        for s in [&self.weight, &self.activation, &self.output] {
            s.validate()?;
        }
        if self.weight.zero_point != 0 || self.activation.zero_point != 0 {
            return Err(Error::Quant("weight and activation zero points must be 0".into()));
        }
        let f = self.rescale_factor();
        if !(f.is_finite() && f > 0.0) {
            return Err(Error::Quant(format!("rescale factor {f} must be finite and positive")));
        }
        Ok(())
    }

    /// `input_scale * weight_scale / output_scale`.
    pub fn rescale_factor(&self) -> f64 {
        self.activation.scale * self.weight.scale / self.output.scale
    }

    /// Same layer with weights, activations and outputs at `bits`.
    pub fn at_precision(&self, bits: u32) -> LayerConfig {
        let mut c = self.clone();
        c.weight.precision_bits = bits;
        c.activation.precision_bits = bits;
        c.output.precision_bits = bits;
        c
    }

    /// One line of the layer file format.
    pub fn to_line(&self) -> String {
        let p = &self.conv;
        let mut line = format!(
            "{} cin={} cout={} kernel={}x{} stride={} pad={} input={}x{} w={} a={} o={}",
            self.name,
            p.in_channels,
            p.out_channels,
            p.kernel_h,
            p.kernel_w,
            p.stride,
            p.padding,
            p.input_h,
            p.input_w,
            self.weight.token(),
            self.activation.token(),
            self.output.token()
        );
        if self.excluded {
            line.push_str(" excluded");
        }
        line
    }

    pub fn parse_line(line: &str) -> Result<LayerConfig> {
        let mut toks = line.split_whitespace();
        let name = toks.next().ok_or_else(|| Error::Format("empty layer line".into()))?.to_string();
        let mut conv = ConvParams::square(0, 0, 0, 1, 0, 0);
        let (mut w, mut a, mut o) = (None, None, None);
        let mut excluded = false;
        let pair = |v: &str| -> Result<(usize, usize)> {
            let (x, y) = v.split_once('x').ok_or_else(|| Error::Format(format!("expected AxB, got `{v}`")))?;
            Ok((num(x)?, num(y)?))
        };
        for tok in toks {
            if tok == "excluded" {
                excluded = true;
                continue;
            }
            let (k, v) =
                tok.split_once('=').ok_or_else(|| Error::Format(format!("expected key=value, got `{tok}`")))?;
            match k {
                "cin" => conv.in_channels = num(v)?,
                "cout" => conv.out_channels = num(v)?,
                "kernel" => (conv.kernel_h, conv.kernel_w) = pair(v)?,
                "stride" => conv.stride = num(v)?,
                "pad" => conv.padding = num(v)?,
                "input" => (conv.input_h, conv.input_w) = pair(v)?,
                "w" => w = Some(QuantScheme::parse_token(v)?),
                "a" => a = Some(QuantScheme::parse_token(v)?),
                "o" => o = Some(QuantScheme::parse_token(v)?),
                _ => return Err(Error::Format(format!("unknown layer key `{k}`"))),
            }
        }
        let missing = |f: &str| Error::Format(format!("layer `{name}` has no `{f}=` scheme"));
        let cfg = LayerConfig {
            weight: w.ok_or_else(|| missing("w"))?,
            activation: a.ok_or_else(|| missing("a"))?,
            output: o.ok_or_else(|| missing("o"))?,
            name,
            conv,
            excluded,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn num(v: &str) -> Result<usize> {
    v.parse().map_err(|_| Error::Format(format!("bad number `{v}`")))
}

/// Serialize a layer set, one layer per line.
pub fn format_layers(layers: &[LayerConfig]) -> String {
    layers.iter().map(|l| l.to_line() + "\n").collect()
}

/// Parse a layer file; blank lines and `#` comments are skipped.
pub fn parse_layers(text: &str) -> Result<Vec<LayerConfig>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| {
            let t = l.trim();
            !t.is_empty() && !t.starts_with('#')
        })
        .map(|(i, l)| LayerConfig::parse_line(l).map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() }))
        .collect()
}

/// The convolutions of an 18-layer residual network for 32x32 inputs: a 3x3
/// stem, four stages of two basic blocks at 64/128/256/512 channels with
/// stride-2 entry and 1x1 projection shortcuts. The stem is flagged
/// `excluded`. Schemes are 2-bit.
pub fn resnet18_layer_set() -> Vec<LayerConfig> {
    let layer = |name: String, cin, cout, k, stride, input, excluded| {
        let conv = ConvParams::square(cin, cout, k, stride, k / 2, input);
        let activation = QuantScheme::new(2, Signedness::Unsigned, 0.25);
        let weight = QuantScheme::new(2, Signedness::Signed, 0.05);
        let spread = (conv.patch_len() as f64).sqrt() * 2.0;
        let output = QuantScheme::new(2, Signedness::Unsigned, activation.scale * weight.scale * spread);
        LayerConfig { name, conv, weight, activation, output, excluded }
    };
    let mut layers = vec![layer("conv1".into(), 3, 64, 3, 1, 32, true)];
    let mut cin = 64;
    let mut size = 32;
    for (s, cout) in [64usize, 128, 256, 512].into_iter().enumerate() {
        let stage = s + 1;
        let stride = if stage == 1 { 1 } else { 2 };
        let out = size / stride;
        layers.push(layer(format!("layer{stage}.0.conv1"), cin, cout, 3, stride, size, false));
        layers.push(layer(format!("layer{stage}.0.conv2"), cout, cout, 3, 1, out, false));
        if stride != 1 || cin != cout {
            layers.push(layer(format!("layer{stage}.0.downsample"), cin, cout, 1, stride, size, false));
        }
        layers.push(layer(format!("layer{stage}.1.conv1"), cout, cout, 3, 1, out, false));
        layers.push(layer(format!("layer{stage}.1.conv2"), cout, cout, 3, 1, out, false));
        cin = cout;
        size = out;
    }
    layers
}

/// Execution mode of a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    Int1,
    Int2,
    Int2NoVbitpack,
    Int8Baseline,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Int1, Mode::Int2, Mode::Int2NoVbitpack, Mode::Int8Baseline];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Int1 => "int1",
            Mode::Int2 => "int2",
            Mode::Int2NoVbitpack => "int2_no_vbitpack",
            Mode::Int8Baseline => "int8_baseline",
        }
    }

    pub fn precision(self) -> u32 {
        match self {
            Mode::Int1 => 1,
            Mode::Int2 | Mode::Int2NoVbitpack => 2,
            Mode::Int8Baseline => 8,
        }
    }

    /// Packing method of the bit-serial modes.
    pub fn pack_method(self) -> Option<PackMethod> {
        match self {
            Mode::Int1 | Mode::Int2 => Some(PackMethod::Vbitpack),
            Mode::Int2NoVbitpack => Some(PackMethod::BaseOps),
            Mode::Int8Baseline => None,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Mode> {
        match s.replace('-', "_").as_str() {
            "int1" => Ok(Mode::Int1),
            "int2" => Ok(Mode::Int2),
            "int2_no_vbitpack" => Ok(Mode::Int2NoVbitpack),
            "int8" | "int8_baseline" => Ok(Mode::Int8Baseline),
            _ => Err(Error::Config(format!("unknown mode `{s}`"))),
        }
    }
}

/// `clamp(round(x / scale) + zero_point)`, rounding half away from zero.
pub fn quantize(values: &[f64], shape: &[usize], s: &QuantScheme) -> Result<QuantTensor> {
    s.validate()?;
    if values.len() != numel(shape) {
        return Err(Error::Shape(format!("{} values for shape {shape:?}", values.len())));
    }
    if let Some(x) = values.iter().find(|x| !x.is_finite()) {
        return Err(Error::Quant(format!("cannot quantize non-finite value {x}")));
    }
    let (lo, hi) = s.signedness.range(s.precision_bits);
    let q: Vec<i32> =
        values.iter().map(|&x| ((x / s.scale).round() as i64 + s.zero_point as i64).clamp(lo, hi) as i32).collect();
    QuantTensor::new(shape, s.precision_bits, s.signedness, &q)
}

/// `clamp(round(acc * factor) + zero_point)` into the output scheme.
pub fn rescale(acc: &[i64], shape: &[usize], factor: f64, out: &QuantScheme) -> Result<QuantTensor> {
    out.validate()?;
    if !(factor.is_finite() && factor > 0.0) {
        return Err(Error::Quant(format!("rescale factor {factor} must be finite and positive")));
    }
    let (lo, hi) = out.signedness.range(out.precision_bits);
    let q: Vec<i32> = acc
        .iter()
        .map(|&v| ((v as f64 * factor).round() as i64 + out.zero_point as i64).clamp(lo, hi) as i32)
        .collect();
    QuantTensor::new(shape, out.precision_bits, out.signedness, &q)
}

/// Accumulators back to real values: `acc * (input_scale * weight_scale)`.
pub fn dequantize(acc: &[i64], cfg: &LayerConfig) -> Vec<f64> {
    let s = cfg.activation.scale * cfg.weight.scale;
    acc.iter().map(|&v| v as f64 * s).collect()
}

pub fn rescale_cycles(numel: usize, cfg: &MachineConfig) -> u64 {
    numel as u64 * cfg.scalar_cycles_per_rescale_element as u64
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerRunReport {
    pub output: QuantTensor,
    pub accumulators: Vec<i64>,
    /// Vector-unit cycles of the inference, activation packing included.
    pub vector_cycles: u64,
    /// Part of `vector_cycles` spent packing activations.
    pub packing_cycles: u64,
    pub scalar_rescale_cycles: u64,
    /// One-time cost of packing the weights, not part of `vector_cycles`.
    pub weight_packing_cycles: u64,
    pub vector: CycleReport,
}

impl LayerRunReport {
    pub fn total_cycles(&self) -> u64 {
        self.vector_cycles + self.scalar_rescale_cycles
    }

    pub fn instruction_counts(&self) -> Vec<(Opcode, u64)> {
        self.vector.opcode_counts()
    }
}

fn check_tensor(what: &str, t: &QuantTensor, shape: &[usize], s: &QuantScheme) -> Result<()> {
    if t.shape() != shape {
        return Err(Error::Shape(format!("{what} {:?}, expected {shape:?}", t.shape())));
    }
    if t.precision() != s.precision_bits || t.signedness() != s.signedness {
        return Err(Error::Quant(format!(
            "{what} is {} {}-bit, layer expects {} {}-bit",
            t.signedness().name(),
            t.precision(),
            s.signedness.name(),
            s.precision_bits
        )));
    }
    Ok(())
}

/// Run one quantized layer on `m` in the given mode.
pub fn run_layer(
    m: &mut Machine,
    cfg: &LayerConfig,
    weights: &QuantTensor,
    input: &QuantTensor,
    mode: Mode,
) -> Result<LayerRunReport> {
    cfg.validate()?;
    let bits = mode.precision();
    if cfg.weight.precision_bits != bits || cfg.activation.precision_bits != bits {
        return Err(Error::Quant(format!(
            "mode {mode} runs {bits}-bit operands, layer `{}` is {}-bit weights / {}-bit activations",
            cfg.name, cfg.weight.precision_bits, cfg.activation.precision_bits
        )));
    }
    check_tensor("input", input, &cfg.conv.input_shape(), &cfg.activation)?;
    check_tensor("weights", weights, &cfg.conv.weight_shape(), &cfg.weight)?;
    let (out, weight_packing_cycles, vector) = match mode.pack_method() {
        Some(method) => {
            let w = prepare_conv_weights(m, weights, &cfg.conv, method)?;
            let before = m.report();
            let out = conv2d_bitserial_prepared(m, input, &w, &cfg.conv, method)?;
            (out, w.packing_cycles(), m.report().since(&before))
        }
        None => {
            let before = m.report();
            let out = conv2d_int8_baseline(m, input, weights, &cfg.conv)?;
            (out, 0, m.report().since(&before))
        }
    };
    let output = rescale(&out.values, &out.shape, cfg.rescale_factor(), &cfg.output)?;
    Ok(LayerRunReport {
        scalar_rescale_cycles: rescale_cycles(output.numel(), m.config()),
        output,
        accumulators: out.values,
        vector_cycles: vector.total_cycles,
        packing_cycles: out.packing_cycles,
        weight_packing_cycles,
        vector,
    })
}

/// Quantize a real-valued input with the layer's activation scheme, then
/// [`run_layer`].
pub fn forward_layer(
    m: &mut Machine,
    cfg: &LayerConfig,
    weights: &QuantTensor,
    input: &[f64],
    mode: Mode,
) -> Result<LayerRunReport> {
    let q = quantize(input, &cfg.conv.input_shape(), &cfg.activation)?;
    run_layer(m, cfg, weights, &q, mode)
}
