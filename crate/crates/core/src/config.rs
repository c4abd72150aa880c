//! Machine configuration: lane count, register width and cycle-model constants.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Selected element width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Sew {
    E8,
    E16,
    E32,
    E64,
}

impl Sew {
    pub const ALL: [Sew; 4] = [Sew::E8, Sew::E16, Sew::E32, Sew::E64];

    pub const fn bits(self) -> u32 {
        match self {
            Sew::E8 => 8,
            Sew::E16 => 16,
            Sew::E32 => 32,
            Sew::E64 => 64,
        }
    }

    pub const fn bytes(self) -> u32 {
        self.bits() / 8
    }

    pub fn from_bits(bits: u32) -> Result<Sew> {
        match bits {
            8 => Ok(Sew::E8),
            16 => Ok(Sew::E16),
            32 => Ok(Sew::E32),
            64 => Ok(Sew::E64),
            other => Err(Error::UnsupportedSew(other)),
        }
    }

    /// All-ones mask of this width.
    pub const fn mask(self) -> u64 {
        match self {
            Sew::E64 => u64::MAX,
            s => (1u64 << s.bits()) - 1,
        }
    }
}

impl fmt::Display for Sew {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.bits())
    }
}

impl FromStr for Sew {
    type Err = Error;

    fn from_str(s: &str) -> Result<Sew> {
        let digits = s.strip_prefix('e').unwrap_or(s);
        let bits: u32 = digits.parse().map_err(|_| Error::Config(format!("bad element width `{s}`")))?;
        Sew::from_bits(bits)
    }
}

pub const NUM_VREGS: usize = 32;
pub const DEFAULT_MEMORY_BYTES: u64 = 64 << 20;

#[derive(Debug, Clone, PartialEq)]
pub struct MachineConfig {
    pub lanes: u32,
    /// Bits per vector register.
    pub vlen_bits: u32,
    pub supported_sews: Vec<Sew>,
    pub issue_overhead_cycles: u32,
    /// Bits each lane processes per cycle.
    pub lane_datapath_bits: u32,
    pub scalar_cycles_per_rescale_element: u32,
    /// Multiplier applied to the data term of memory instructions.
    pub memory_bandwidth_factor: f64,
    pub memory_bytes: u64,
}

impl Default for MachineConfig {
    fn default() -> Self {
        MachineConfig {
            lanes: 4,
            vlen_bits: 4096,
            supported_sews: Sew::ALL.to_vec(),
            issue_overhead_cycles: 1,
            lane_datapath_bits: 64,
            scalar_cycles_per_rescale_element: 4,
            memory_bandwidth_factor: 1.0,
            memory_bytes: DEFAULT_MEMORY_BYTES,
        }
    }
}

impl MachineConfig {
    /// Eight lanes with the register file doubled to 32 KiB.
    pub fn eight_lane() -> Self {
        MachineConfig { lanes: 8, vlen_bits: 8192, ..MachineConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.lanes == 0 {
            return bad("lanes must be positive".into());
        }
        if !self.vlen_bits.is_power_of_two() {
            return bad(format!("vlen_bits {} is not a power of two", self.vlen_bits));
        }
        if !self.vlen_bits.is_multiple_of(64 * self.lanes) {
            return bad(format!("vlen_bits {} not divisible by 64 x {} lanes", self.vlen_bits, self.lanes));
        }
        if self.lane_datapath_bits == 0 {
            return bad("lane_datapath_bits must be positive".into());
        }
        if self.supported_sews.is_empty() {
            return bad("supported_sews is empty".into());
        }
        if !(self.memory_bandwidth_factor.is_finite() && self.memory_bandwidth_factor > 0.0) {
            return bad(format!(
                "memory_bandwidth_factor {} must be finite and positive",
                self.memory_bandwidth_factor
            ));
        }
        if self.memory_bytes == 0 {
            return bad("memory_bytes must be positive".into());
        }
        Ok(())
    }

    pub fn supports(&self, sew: Sew) -> bool {
        self.supported_sews.contains(&sew)
    }

    /// Maximum vector length for an element width.
    pub fn vlmax(&self, sew: Sew) -> usize {
        (self.vlen_bits / sew.bits()) as usize
    }

    pub fn vrf_bytes(&self) -> usize {
        NUM_VREGS * self.vlen_bits as usize / 8
    }

    /// `key=value` lines, one per field. Parsed back by [`MachineConfig::from_kv`].
    pub fn to_kv_lines(&self) -> Vec<String> {
        let sews: Vec<String> = self.supported_sews.iter().map(|s| s.bits().to_string()).collect();
        vec![
            format!("lanes={}", self.lanes),
            format!("vlen_bits={}", self.vlen_bits),
            format!("supported_sews={}", sews.join(",")),
            format!("issue_overhead_cycles={}", self.issue_overhead_cycles),
            format!("lane_datapath_bits={}", self.lane_datapath_bits),
            format!("scalar_cycles_per_rescale_element={}", self.scalar_cycles_per_rescale_element),
            format!("memory_bandwidth_factor={}", self.memory_bandwidth_factor),
            format!("memory_bytes={}", self.memory_bytes),
        ]
    }

    /// Apply one `key=value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim().parse().map_err(|_| Error::Config(format!("bad value `{v}` for `{key}`")))
        }
        match key.trim() {
            "lanes" => self.lanes = num(key, value)?,
            "vlen_bits" | "vlen" => self.vlen_bits = num(key, value)?,
            "supported_sews" => {
                self.supported_sews = value.split(',').map(|s| s.trim().parse::<Sew>()).collect::<Result<_>>()?
            }
            "issue_overhead_cycles" => self.issue_overhead_cycles = num(key, value)?,
            "lane_datapath_bits" => self.lane_datapath_bits = num(key, value)?,
            "scalar_cycles_per_rescale_element" => self.scalar_cycles_per_rescale_element = num(key, value)?,
            "memory_bandwidth_factor" => self.memory_bandwidth_factor = num(key, value)?,
            "memory_bytes" => self.memory_bytes = num(key, value)?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Parse a `key=value` config file on top of the defaults. Blank lines and
    /// `#` comments are ignored.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = MachineConfig::default();
        cfg.apply_kv(text)?;
        Ok(cfg)
    }

    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse { line: i + 1, msg: format!("expected key=value, got `{line}`") })?;
            self.set(k, v).map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?;
        }
        self.validate()
    }
}
