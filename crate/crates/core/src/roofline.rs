//! Roofline data for 3x3 convolutions across input sizes.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::isa::Machine;
use crate::kernels::{conv2d_bitserial, conv2d_int8_baseline, PackMethod};
use crate::perf::{CycleReport, OP_COUNTING_RULE};
use crate::rng::SplitMix64;
use crate::tensor::{ConvParams, QuantTensor, Signedness};
use crate::MachineConfig;

pub const DEFAULT_SIZES: [usize; 8] = [4, 8, 16, 32, 64, 128, 256, 512];
pub const DEFAULT_CHANNELS: usize = 16;

/// A machine plus the kernel it runs.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub label: String,
    pub machine: MachineConfig,
    /// Operand precision; 8 selects the byte baseline kernel.
    pub precision: u32,
}

impl SweepConfig {
    /// Eight lanes running the 2-bit bit-serial kernel with `vbitpack`.
    pub fn packed_eight_lane() -> Self {
        SweepConfig { label: "packed-8-lane".into(), machine: MachineConfig::eight_lane(), precision: 2 }
    }

    /// Four lanes running the byte baseline.
    pub fn baseline_four_lane() -> Self {
        SweepConfig { label: "baseline-4-lane".into(), machine: MachineConfig::default(), precision: 8 }
    }

    pub fn roof(&self) -> Roof {
        Roof::of(&self.machine)
    }
}

/// Compute roof in ops/cycle (one op per datapath bit per cycle) and
/// bandwidth roof in bytes/cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Roof {
    pub peak_ops_per_cycle: f64,
    pub peak_bytes_per_cycle: f64,
}

impl Roof {
    pub fn of(cfg: &MachineConfig) -> Roof {
        let bits = cfg.lanes as f64 * cfg.lane_datapath_bits as f64;
        Roof { peak_ops_per_cycle: bits, peak_bytes_per_cycle: bits / 8.0 / cfg.memory_bandwidth_factor }
    }

    /// Attainable ops/cycle at an arithmetic intensity.
    pub fn bound(&self, intensity: f64) -> f64 {
        self.peak_ops_per_cycle.min(intensity * self.peak_bytes_per_cycle)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RooflinePoint {
    pub config: String,
    pub size: usize,
    /// ops per byte moved.
    pub intensity: f64,
    /// ops per cycle.
    pub performance: f64,
    pub report: CycleReport,
}

impl RooflinePoint {
    pub fn under_roof(&self, roof: &Roof) -> bool {
        self.performance <= roof.bound(self.intensity) * (1.0 + 1e-12)
    }
}

pub fn conv_params(size: usize, channels: usize) -> ConvParams {
    ConvParams::square(channels, channels, 3, 1, 1, size)
}

fn run_point(c: &SweepConfig, size: usize, channels: usize, seed: u64) -> Result<RooflinePoint> {
    let p = conv_params(size, channels);
    p.validate()?;
    let mut rng = SplitMix64::derive(seed, size as u64);
    let x = QuantTensor::random(&p.input_shape(), c.precision, Signedness::Unsigned, &mut rng)?;
    let w = QuantTensor::random(&p.weight_shape(), c.precision, Signedness::Signed, &mut rng)?;
    let mut m = Machine::new(c.machine.clone())?;
    if c.precision == 8 {
        conv2d_int8_baseline(&mut m, &x, &w, &p)?;
    } else {
        conv2d_bitserial(&mut m, &x, &w, &p, PackMethod::Vbitpack)?;
    }
    let report = m.report();
    if report.total_cycles == 0 {
        return Err(Error::Shape(format!("size {size} executed no instructions")));
    }
    let intensity =
        if report.bytes_moved == 0 { f64::INFINITY } else { report.ops_executed as f64 / report.bytes_moved as f64 };
    Ok(RooflinePoint {
        config: c.label.clone(),
        size,
        intensity,
        performance: report.ops_executed as f64 / report.total_cycles as f64,
        report,
    })
}

/// One point per `(config, size)`, ordered by config then size.
pub fn roofline_sweep(
    configs: &[SweepConfig],
    sizes: &[usize],
    channels: usize,
    seed: u64,
) -> Result<Vec<RooflinePoint>> {
    if sizes.is_empty() {
        return Err(Error::Config("empty size ladder".into()));
    }
    if channels == 0 {
        return Err(Error::Config("channels must be positive".into()));
    }
    let jobs: Vec<(usize, usize)> = (0..configs.len()).flat_map(|c| sizes.iter().map(move |&s| (c, s))).collect();
    jobs.par_iter().map(|&(c, s)| run_point(&configs[c], s, channels, seed)).collect()
}

pub const CSV_HEADER: &str = "config,size,intensity,performance";

pub fn roofline_csv(configs: &[SweepConfig], channels: usize, seed: u64, points: &[RooflinePoint]) -> String {
    let mut s = String::new();
    s.push_str("# subbyte roofline: conv2d 3x3, stride 1, pad 1\n");
    let _ = writeln!(s, "# seed={seed} channels={channels}");
    let _ = writeln!(s, "# ops rule: {OP_COUNTING_RULE}");
    s.push_str("# intensity = ops / bytes moved by vector memory instructions; performance = ops / cycle\n");
    for c in configs {
        let roof = c.roof();
        let _ = writeln!(
            s,
            "# roof {} precision={} peak_ops_per_cycle={} peak_bytes_per_cycle={}",
            c.label, c.precision, roof.peak_ops_per_cycle, roof.peak_bytes_per_cycle
        );
        for line in c.machine.to_kv_lines() {
            let _ = writeln!(s, "# config {} {line}", c.label);
        }
    }
    s.push_str(CSV_HEADER);
    s.push('\n');
    for p in points {
        let _ = writeln!(s, "{},{}x{},{:.6},{:.6}", p.config, p.size, p.size, p.intensity, p.performance);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roofs() {
        let r = Roof::of(&MachineConfig::default());
        assert_eq!(r.peak_ops_per_cycle, 256.0);
        assert_eq!(r.peak_bytes_per_cycle, 32.0);
        assert_eq!(r.bound(2.0), 64.0);
        assert_eq!(r.bound(100.0), 256.0);
        assert_eq!(Roof::of(&MachineConfig::eight_lane()).peak_ops_per_cycle, 512.0);
    }

    #[test]
    fn small_sweep_is_under_the_roof() {
        let configs = [SweepConfig::packed_eight_lane(), SweepConfig::baseline_four_lane()];
        let pts = roofline_sweep(&configs, &[4, 8, 16], 8, 1).unwrap();
        assert_eq!(pts.len(), 6);
        for p in &pts {
            let c = configs.iter().find(|c| c.label == p.config).unwrap();
            assert!(p.under_roof(&c.roof()), "{p:?}");
        }
        let csv = roofline_csv(&configs, 8, 1, &pts);
        assert!(csv.contains("\npacked-8-lane,4x4,"));
        assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 7);
    }

    #[test]
    fn rejects_bad_ladders() {
        let configs = [SweepConfig::baseline_four_lane()];
        assert!(roofline_sweep(&configs, &[], 8, 1).is_err());
        assert!(roofline_sweep(&configs, &[0], 8, 1).is_err());
    }
}
