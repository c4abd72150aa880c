//! Vector machine state and instruction semantics.
//!
//! Element `i` of a register occupies bits `[i*sew, (i+1)*sew)` of the register
//! bit string, LSB first. Every instruction is tail-undisturbed: elements at
//! index `>= vl` are never written.

mod machine;
mod memory;
mod text;
mod trace;
mod vrf;

pub use machine::{Machine, ProgramError, VState};
pub use memory::Memory;
pub use text::{format_program, parse_program, ParsedProgram};
pub use trace::{Trace, TraceEntry};
pub use vrf::VectorRegisterFile;

use crate::config::Sew;

/// Vector register index. Validated against `0..=31` at execution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VReg(pub u8);

impl std::fmt::Display for VReg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "v{}", self.0)
    }
}

/// Second source operand: a vector register or a scalar broadcast to every
/// active element (the `.vx` form). For shifts the scalar is the shift amount.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Operand {
    Vector(VReg),
    Scalar(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AluOp {
    And,
    Or,
    Xor,
    Add,
    Sub,
    Sll,
    Srl,
    Mul,
}

/// Operand signedness of the widening multiply-accumulate: first letter for
/// `vs1`, second for the second source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MaccSigns {
    SS,
    SU,
    US,
    UU,
}

impl MaccSigns {
    pub fn from_flags(vs1_signed: bool, src_signed: bool) -> Self {
        match (vs1_signed, src_signed) {
            (true, true) => MaccSigns::SS,
            (true, false) => MaccSigns::SU,
            (false, true) => MaccSigns::US,
            (false, false) => MaccSigns::UU,
        }
    }

    pub fn flags(self) -> (bool, bool) {
        match self {
            MaccSigns::SS => (true, true),
            MaccSigns::SU => (true, false),
            MaccSigns::US => (false, true),
            MaccSigns::UU => (false, false),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Instruction {
    /// Set `vl = min(avl, vlmax(sew))` and the element width.
    Vsetvl {
        avl: u64,
        sew: Sew,
    },
    Alu {
        op: AluOp,
        vd: VReg,
        vs1: VReg,
        src: Operand,
    },
    /// Quad-widening multiply-accumulate: `vd[i] += vs1[i] * src[i]` with the
    /// accumulator at `4 * sew` bits. Valid at e8 and e16.
    Vmacc {
        vd: VReg,
        vs1: VReg,
        src: Operand,
        signs: MaccSigns,
    },
    Vmv {
        vd: VReg,
        src: Operand,
    },
    /// Per-element population count.
    Vpopcnt {
        vd: VReg,
        vs2: VReg,
    },
    /// Fused shift-accumulate: `vd[i] += vs2[i] << shamt`.
    Vshacc {
        vd: VReg,
        vs2: VReg,
        shamt: u32,
    },
    /// Shift the active region of `vd` left by `vl * precision` bits, then pack
    /// the low `precision` bits of each `vs2[i]` into bits
    /// `[i*precision, (i+1)*precision)`.
    Vbitpack {
        vd: VReg,
        vs2: VReg,
        precision: u32,
    },
    /// Unit-stride load.
    Vle {
        vd: VReg,
        addr: u64,
    },
    /// Unit-stride store.
    Vse {
        vs: VReg,
        addr: u64,
    },
    /// Strided load, `stride` in bytes.
    Vlse {
        vd: VReg,
        addr: u64,
        stride: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Opcode {
    Vand,
    Vor,
    Vxor,
    Vadd,
    Vsub,
    Vsll,
    Vsrl,
    Vmul,
    Vmacc,
    Vmv,
    Vle,
    Vse,
    Vlse,
    Vsetvl,
    Vpopcnt,
    Vshacc,
    Vbitpack,
}

impl Opcode {
    pub const ALL: [Opcode; 17] = [
        Opcode::Vand,
        Opcode::Vor,
        Opcode::Vxor,
        Opcode::Vadd,
        Opcode::Vsub,
        Opcode::Vsll,
        Opcode::Vsrl,
        Opcode::Vmul,
        Opcode::Vmacc,
        Opcode::Vmv,
        Opcode::Vle,
        Opcode::Vse,
        Opcode::Vlse,
        Opcode::Vsetvl,
        Opcode::Vpopcnt,
        Opcode::Vshacc,
        Opcode::Vbitpack,
    ];
    pub const COUNT: usize = Self::ALL.len();

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn mnemonic(self) -> &'static str {
        match self {
            Opcode::Vand => "vand",
            Opcode::Vor => "vor",
            Opcode::Vxor => "vxor",
            Opcode::Vadd => "vadd",
            Opcode::Vsub => "vsub",
            Opcode::Vsll => "vsll",
            Opcode::Vsrl => "vsrl",
            Opcode::Vmul => "vmul",
            Opcode::Vmacc => "vmacc",
            Opcode::Vmv => "vmv",
            Opcode::Vle => "vle",
            Opcode::Vse => "vse",
            Opcode::Vlse => "vlse",
            Opcode::Vsetvl => "vsetvl",
            Opcode::Vpopcnt => "vpopcnt",
            Opcode::Vshacc => "vshacc",
            Opcode::Vbitpack => "vbitpack",
        }
    }

    pub fn class(self) -> OpClass {
        match self {
            Opcode::Vpopcnt => OpClass::Popcnt,
            Opcode::Vshacc => OpClass::Shacc,
            Opcode::Vbitpack => OpClass::Bitpack,
            Opcode::Vle | Opcode::Vse | Opcode::Vlse => OpClass::Memory,
            _ => OpClass::Alu,
        }
    }
}

/// Cycle-breakdown buckets for vector instructions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpClass {
    Alu,
    Popcnt,
    Shacc,
    Bitpack,
    Memory,
}

impl AluOp {
    pub fn opcode(self) -> Opcode {
        match self {
            AluOp::And => Opcode::Vand,
            AluOp::Or => Opcode::Vor,
            AluOp::Xor => Opcode::Vxor,
            AluOp::Add => Opcode::Vadd,
            AluOp::Sub => Opcode::Vsub,
            AluOp::Sll => Opcode::Vsll,
            AluOp::Srl => Opcode::Vsrl,
            AluOp::Mul => Opcode::Vmul,
        }
    }

    pub fn is_shift(self) -> bool {
        matches!(self, AluOp::Sll | AluOp::Srl)
    }

    /// Apply at full 64-bit width; the caller truncates to the element width.
    pub fn apply(self, a: u64, b: u64) -> u64 {
        match self {
            AluOp::And => a & b,
            AluOp::Or => a | b,
            AluOp::Xor => a ^ b,
            AluOp::Add => a.wrapping_add(b),
            AluOp::Sub => a.wrapping_sub(b),
            AluOp::Sll => a << b,
            AluOp::Srl => a >> b,
            AluOp::Mul => a.wrapping_mul(b),
        }
    }
}

impl Instruction {
    pub fn opcode(&self) -> Opcode {
        match self {
            Instruction::Vsetvl { .. } => Opcode::Vsetvl,
            Instruction::Alu { op, .. } => op.opcode(),
            Instruction::Vmacc { .. } => Opcode::Vmacc,
            Instruction::Vmv { .. } => Opcode::Vmv,
            Instruction::Vpopcnt { .. } => Opcode::Vpopcnt,
            Instruction::Vshacc { .. } => Opcode::Vshacc,
            Instruction::Vbitpack { .. } => Opcode::Vbitpack,
            Instruction::Vle { .. } => Opcode::Vle,
            Instruction::Vse { .. } => Opcode::Vse,
            Instruction::Vlse { .. } => Opcode::Vlse,
        }
    }

    // Shorthand constructors used by the kernels.

    pub fn alu(op: AluOp, vd: VReg, vs1: VReg, src: Operand) -> Self {
        Instruction::Alu { op, vd, vs1, src }
    }

    pub fn vv(op: AluOp, vd: VReg, vs1: VReg, vs2: VReg) -> Self {
        Instruction::Alu { op, vd, vs1, src: Operand::Vector(vs2) }
    }

    pub fn vx(op: AluOp, vd: VReg, vs1: VReg, scalar: u64) -> Self {
        Instruction::Alu { op, vd, vs1, src: Operand::Scalar(scalar) }
    }
}
