//! Per-layer benchmark of every mode over a layer set.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::isa::Machine;
use crate::oracle::conv2d_ref;
use crate::perf::{arithmetic_mean, geometric_mean, speedup_cycles};
use crate::qnn::{run_layer, LayerConfig, Mode};
use crate::rng::SplitMix64;
use crate::tensor::QuantTensor;
use crate::MachineConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub layer: String,
    pub excluded: bool,
    pub mode: Mode,
    pub vector_cycles: u64,
    pub packing_cycles: u64,
    pub scalar_cycles: u64,
    pub speedup_vs_int8: f64,
}

impl BenchRow {
    pub fn total_cycles(&self) -> u64 {
        self.vector_cycles + self.scalar_cycles
    }
}

/// Mean speedup over int8 of one mode across the non-excluded layers.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeSummary {
    pub mode: Mode,
    pub mean_speedup: f64,
    pub geomean_speedup: f64,
    pub layers: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchResult {
    pub rows: Vec<BenchRow>,
    pub summary: Vec<ModeSummary>,
}

impl BenchResult {
    pub fn row(&self, layer: &str, mode: Mode) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.layer == layer && r.mode == mode)
    }

    pub fn summary_for(&self, mode: Mode) -> Option<&ModeSummary> {
        self.summary.iter().find(|s| s.mode == mode)
    }
}

/// Operands of one layer at one precision, derived from the seed, the layer
/// index and the precision only, so every mode at that precision sees the
/// same tensors.
pub fn layer_operands(cfg: &LayerConfig, index: usize, seed: u64) -> Result<(QuantTensor, QuantTensor)> {
    let tag = ((index as u64) << 8) | cfg.weight.precision_bits as u64;
    let mut rng = SplitMix64::derive(seed, tag);
    let w = QuantTensor::random(&cfg.conv.weight_shape(), cfg.weight.precision_bits, cfg.weight.signedness, &mut rng)?;
    let x = QuantTensor::random(
        &cfg.conv.input_shape(),
        cfg.activation.precision_bits,
        cfg.activation.signedness,
        &mut rng,
    )?;
    Ok((w, x))
}

/// Run every layer in every mode, each on a fresh machine. With `verify`,
/// each output is also checked against the scalar reference convolution.
pub fn bench_layers(cfg: &MachineConfig, layers: &[LayerConfig], seed: u64, verify: bool) -> Result<BenchResult> {
    cfg.validate()?;
    let jobs: Vec<(usize, Mode)> = (0..layers.len()).flat_map(|i| Mode::ALL.map(|m| (i, m))).collect();
    let mut runs = jobs
        .par_iter()
        .map(|&(i, mode)| {
            let layer = layers[i].at_precision(mode.precision());
            let (w, x) = layer_operands(&layer, i, seed)?;
            let mut m = Machine::new(cfg.clone())?;
            let r = run_layer(&mut m, &layer, &w, &x, mode)?;
            if verify && r.accumulators != conv2d_ref(&x, &w, &layer.conv)? {
                return Err(Error::Accumulator(format!(
                    "layer `{}` in mode {mode} disagrees with the reference",
                    layer.name
                )));
            }
            Ok((i, mode, r.vector_cycles, r.packing_cycles, r.scalar_rescale_cycles))
        })
        .collect::<Result<Vec<_>>>()?;
    runs.sort_by_key(|&(i, mode, ..)| (i, mode));

    let mut rows = Vec::with_capacity(runs.len());
    for group in runs.chunks(Mode::ALL.len()) {
        let base = group.iter().find(|r| r.1 == Mode::Int8Baseline).expect("every layer runs int8");
        let base_total = base.2 + base.4;
        for &(i, mode, vector_cycles, packing_cycles, scalar_cycles) in group {
            rows.push(BenchRow {
                layer: layers[i].name.clone(),
                excluded: layers[i].excluded,
                mode,
                vector_cycles,
                packing_cycles,
                scalar_cycles,
                speedup_vs_int8: speedup_cycles(base_total, vector_cycles + scalar_cycles)?,
            });
        }
    }
    let summary = Mode::ALL
        .iter()
        .filter(|&&m| m != Mode::Int8Baseline)
        .map(|&mode| {
            let s: Vec<f64> =
                rows.iter().filter(|r| r.mode == mode && !r.excluded).map(|r| r.speedup_vs_int8).collect();
            ModeSummary {
                mode,
                mean_speedup: arithmetic_mean(&s),
                geomean_speedup: geometric_mean(&s),
                layers: s.len(),
            }
        })
        .collect();
    Ok(BenchResult { rows, summary })
}

pub const CSV_HEADER: &str = "layer,mode,vector_cycles,packing_cycles,scalar_cycles,speedup_vs_int8";

/// CSV with `#` header lines describing the machine and seed, one row per
/// layer and mode, then `# summary` lines.
pub fn bench_csv(cfg: &MachineConfig, seed: u64, result: &BenchResult) -> String {
    let mut s = String::new();
    s.push_str("# subbyte bench-resnet18\n");
    let _ = writeln!(s, "# seed={seed}");
    for line in cfg.to_kv_lines() {
        let _ = writeln!(s, "# config {line}");
    }
    s.push_str("# speedup_vs_int8 = (int8 vector + scalar cycles) / (mode vector + scalar cycles)\n");
    s.push_str("# packing_cycles counts activation packing and is part of vector_cycles\n");
    let excluded: Vec<&str> = {
        let mut v: Vec<&str> = result.rows.iter().filter(|r| r.excluded).map(|r| r.layer.as_str()).collect();
        v.dedup();
        v
    };
    if !excluded.is_empty() {
        let _ = writeln!(s, "# excluded from summary: {}", excluded.join(" "));
    }
    s.push_str(CSV_HEADER);
    s.push('\n');
    for r in &result.rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{:.4}",
            r.layer, r.mode, r.vector_cycles, r.packing_cycles, r.scalar_cycles, r.speedup_vs_int8
        );
    }
    for m in &result.summary {
        let _ = writeln!(
            s,
            "# summary mode={} mean_speedup={:.4} geomean_speedup={:.4} layers={}",
            m.mode, m.mean_speedup, m.geomean_speedup, m.layers
        );
    }
    s
}
