//! Analytic cycle model.
//!
//! Every vector instruction costs `issue_overhead + ceil(vl * width / (lanes *
//! lane_datapath_bits))`, where `width` is the element width the datapath
//! produces (the accumulator width for the widening MAC). The data term of
//! memory instructions is scaled by `memory_bandwidth_factor`. Configuration
//! instructions cost the issue overhead only. Instructions execute strictly
//! in sequence; there is no chaining or overlap.

use crate::config::MachineConfig;
use crate::error::{Error, Result};
use crate::isa::{Instruction, OpClass, Opcode, Trace, TraceEntry, VState};

/// Declared op-counting rule, embedded in roofline CSV headers.
pub const OP_COUNTING_RULE: &str = "mac=2 ops/element; and,or,xor,popcnt=1 op/bit; \
add,sub,mul,shift,shacc=1 op/element; move,pack,memory,config=0";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Breakdown {
    pub alu: u64,
    pub popcnt: u64,
    pub shacc: u64,
    pub bitpack: u64,
    pub memory: u64,
    pub scalar: u64,
}

impl Breakdown {
    pub fn sum(&self) -> u64 {
        self.alu + self.popcnt + self.shacc + self.bitpack + self.memory + self.scalar
    }

    fn slot(&mut self, class: OpClass) -> &mut u64 {
        match class {
            OpClass::Alu => &mut self.alu,
            OpClass::Popcnt => &mut self.popcnt,
            OpClass::Shacc => &mut self.shacc,
            OpClass::Bitpack => &mut self.bitpack,
            OpClass::Memory => &mut self.memory,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CycleReport {
    pub total_cycles: u64,
    pub breakdown: Breakdown,
    pub ops_executed: u64,
    pub bytes_moved: u64,
    pub instructions: u64,
    opcode_counts: [u64; Opcode::COUNT],
}

impl Default for CycleReport {
    fn default() -> Self {
        CycleReport {
            total_cycles: 0,
            breakdown: Breakdown::default(),
            ops_executed: 0,
            bytes_moved: 0,
            instructions: 0,
            opcode_counts: [0; Opcode::COUNT],
        }
    }
}

impl CycleReport {
    pub(crate) fn record(&mut self, e: &TraceEntry) {
        let op = e.instr.opcode();
        self.total_cycles += e.cycles;
        *self.breakdown.slot(op.class()) += e.cycles;
        self.ops_executed += instr_ops(&e.instr, e.state);
        self.bytes_moved += instr_bytes(&e.instr, e.state);
        self.instructions += 1;
        self.opcode_counts[op.index()] += 1;
    }

    /// Charge cycles spent on the scalar core.
    pub fn add_scalar(&mut self, cycles: u64) {
        self.breakdown.scalar += cycles;
        self.total_cycles += cycles;
    }

    pub fn count(&self, op: Opcode) -> u64 {
        self.opcode_counts[op.index()]
    }

    /// Non-zero instruction counts keyed by opcode.
    pub fn opcode_counts(&self) -> Vec<(Opcode, u64)> {
        Opcode::ALL.iter().map(|&op| (op, self.count(op))).filter(|&(_, n)| n > 0).collect()
    }

    pub fn merged(&self, other: &CycleReport) -> CycleReport {
        let b = &self.breakdown;
        let o = &other.breakdown;
        let mut counts = self.opcode_counts;
        for (c, oc) in counts.iter_mut().zip(other.opcode_counts) {
            *c += oc;
        }
        CycleReport {
            total_cycles: self.total_cycles + other.total_cycles,
            breakdown: Breakdown {
                alu: b.alu + o.alu,
                popcnt: b.popcnt + o.popcnt,
                shacc: b.shacc + o.shacc,
                bitpack: b.bitpack + o.bitpack,
                memory: b.memory + o.memory,
                scalar: b.scalar + o.scalar,
            },
            ops_executed: self.ops_executed + other.ops_executed,
            bytes_moved: self.bytes_moved + other.bytes_moved,
            instructions: self.instructions + other.instructions,
            opcode_counts: counts,
        }
    }

    /// Difference `self - earlier` of two snapshots taken from the same
    /// monotonically growing trace.
    pub fn since(&self, earlier: &CycleReport) -> CycleReport {
        let b = &self.breakdown;
        let o = &earlier.breakdown;
        let mut counts = self.opcode_counts;
        for (c, oc) in counts.iter_mut().zip(earlier.opcode_counts) {
            *c -= oc;
        }
        CycleReport {
            total_cycles: self.total_cycles - earlier.total_cycles,
            breakdown: Breakdown {
                alu: b.alu - o.alu,
                popcnt: b.popcnt - o.popcnt,
                shacc: b.shacc - o.shacc,
                bitpack: b.bitpack - o.bitpack,
                memory: b.memory - o.memory,
                scalar: b.scalar - o.scalar,
            },
            ops_executed: self.ops_executed - earlier.ops_executed,
            bytes_moved: self.bytes_moved - earlier.bytes_moved,
            instructions: self.instructions - earlier.instructions,
            opcode_counts: counts,
        }
    }
}

/// Width in bits of each element the datapath produces.
fn datapath_width(instr: &Instruction, state: VState) -> u64 {
    match instr {
        Instruction::Vmacc { .. } => 4 * state.sew.bits() as u64,
        _ => state.sew.bits() as u64,
    }
}

pub fn instr_cycles(instr: &Instruction, state: VState, cfg: &MachineConfig) -> u64 {
    let overhead = cfg.issue_overhead_cycles as u64;
    if matches!(instr, Instruction::Vsetvl { .. }) {
        return overhead;
    }
    let bits = state.vl as u64 * datapath_width(instr, state);
    let per_cycle = cfg.lanes as u64 * cfg.lane_datapath_bits as u64;
    let data = bits.div_ceil(per_cycle);
    let data = if instr.opcode().class() == OpClass::Memory {
        (data as f64 * cfg.memory_bandwidth_factor).ceil() as u64
    } else {
        data
    };
    overhead + data
}

/// Useful operations per [`OP_COUNTING_RULE`].
pub fn instr_ops(instr: &Instruction, state: VState) -> u64 {
    let vl = state.vl as u64;
    let bits = vl * state.sew.bits() as u64;
    match instr.opcode() {
        Opcode::Vmacc => 2 * vl,
        Opcode::Vand | Opcode::Vor | Opcode::Vxor | Opcode::Vpopcnt => bits,
        Opcode::Vadd | Opcode::Vsub | Opcode::Vmul | Opcode::Vsll | Opcode::Vsrl | Opcode::Vshacc => vl,
        Opcode::Vmv | Opcode::Vbitpack | Opcode::Vle | Opcode::Vse | Opcode::Vlse | Opcode::Vsetvl => 0,
    }
}

/// Bytes transferred between memory and the register file.
pub fn instr_bytes(instr: &Instruction, state: VState) -> u64 {
    match instr.opcode().class() {
        OpClass::Memory => state.vl as u64 * state.sew.bytes() as u64,
        _ => 0,
    }
}

/// Re-cost a retained trace under `cfg`.
pub fn attribute(trace: &Trace, cfg: &MachineConfig) -> CycleReport {
    let mut report = CycleReport::default();
    for e in trace.entries() {
        let recosted = TraceEntry { cycles: instr_cycles(&e.instr, e.state, cfg), ..*e };
        report.record(&recosted);
    }
    report
}

/// `baseline / candidate` in total cycles.
pub fn speedup(baseline: &CycleReport, candidate: &CycleReport) -> Result<f64> {
    speedup_cycles(baseline.total_cycles, candidate.total_cycles)
}

pub fn speedup_cycles(baseline: u64, candidate: u64) -> Result<f64> {
    if candidate == 0 {
        return Err(Error::Shape("speedup against a zero-cycle run".into()));
    }
    Ok(baseline as f64 / candidate as f64)
}

pub fn arithmetic_mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn geometric_mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    (xs.iter().map(|x| x.ln()).sum::<f64>() / xs.len() as f64).exp()
}
