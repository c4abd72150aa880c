use super::{Instruction, VState};
use crate::perf::CycleReport;

/// One executed instruction with the vector state it ran under.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceEntry {
    pub instr: Instruction,
    pub state: VState,
    pub cycles: u64,
}

/// Executed instruction sequence with running aggregates.
///
/// Entries are only kept when `retain` is set; the aggregates are always
/// maintained, so long kernel runs can be costed without storing millions of
/// entries.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    entries: Vec<TraceEntry>,
    retain: bool,
    report: CycleReport,
}

impl Trace {
    pub fn new(retain: bool) -> Self {
        Trace { entries: Vec::new(), retain, report: CycleReport::default() }
    }

    pub fn retaining() -> Self {
        Trace::new(true)
    }

    pub fn push(&mut self, entry: TraceEntry) {
        self.report.record(&entry);
        if self.retain {
            self.entries.push(entry);
        }
    }

    pub fn entries(&self) -> &[TraceEntry] {
        &self.entries
    }

    pub fn retains_entries(&self) -> bool {
        self.retain
    }

    /// Running aggregates over everything pushed so far.
    pub fn report(&self) -> &CycleReport {
        &self.report
    }

    /// Number of instructions executed.
    pub fn len(&self) -> u64 {
        self.report.instructions
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn total_cycles(&self) -> u64 {
        self.report.total_cycles
    }

    /// Append another trace.
    pub fn extend(&mut self, other: &Trace) {
        if self.retain {
            self.entries.extend_from_slice(&other.entries);
        }
        self.report = self.report.merged(&other.report);
    }
}
