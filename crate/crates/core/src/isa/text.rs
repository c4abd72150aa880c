//! Line-oriented textual program format.
//!
//! One instruction per line, `mnemonic operand, operand, ...`; `#` starts a
//! comment. A second source that is not a `vN` register is a scalar. The
//! directive `.mem <addr> <hex bytes>` seeds memory before execution.
//!
//! ```text
//! .mem 0x100 0102030405060708
//! vsetvl 8, e8
//! vle v1, 0x100
//! vbitpack v2, v1, 2      # pack the low 2 bits of each element
//! vand v3, v1, 0x0f
//! vmacc.su v8, v1, 3
//! ```

use std::fmt;

use super::{AluOp, Instruction, MaccSigns, Operand, VReg};
use crate::config::Sew;
use crate::error::{Error, Result};

fn scalar(f: &mut fmt::Formatter<'_>, x: u64) -> fmt::Result {
    if x < 4096 {
        write!(f, "{x}")
    } else {
        write!(f, "{x:#x}")
    }
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Vector(r) => write!(f, "{r}"),
            Operand::Scalar(x) => scalar(f, *x),
        }
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = self.opcode().mnemonic();
        match *self {
            Instruction::Vsetvl { avl, sew } => write!(f, "{m} {avl}, {sew}"),
            Instruction::Alu { vd, vs1, src, .. } => write!(f, "{m} {vd}, {vs1}, {src}"),
            Instruction::Vmacc { vd, vs1, src, signs } => {
                let sfx = match signs {
                    MaccSigns::SS => "ss",
                    MaccSigns::SU => "su",
                    MaccSigns::US => "us",
                    MaccSigns::UU => "uu",
                };
                write!(f, "{m}.{sfx} {vd}, {vs1}, {src}")
            }
            Instruction::Vmv { vd, src } => write!(f, "{m} {vd}, {src}"),
            Instruction::Vpopcnt { vd, vs2 } => write!(f, "{m} {vd}, {vs2}"),
            Instruction::Vshacc { vd, vs2, shamt } => write!(f, "{m} {vd}, {vs2}, {shamt}"),
            Instruction::Vbitpack { vd, vs2, precision } => write!(f, "{m} {vd}, {vs2}, {precision}"),
            Instruction::Vle { vd, addr } => {
                write!(f, "{m} {vd}, ")?;
                scalar(f, addr)
            }
            Instruction::Vse { vs, addr } => {
                write!(f, "{m} {vs}, ")?;
                scalar(f, addr)
            }
            Instruction::Vlse { vd, addr, stride } => {
                write!(f, "{m} {vd}, ")?;
                scalar(f, addr)?;
                write!(f, ", {stride}")
            }
        }
    }
}

/// A parsed program: instructions, their source line numbers, and memory
/// seeds from `.mem` directives.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedProgram {
    pub instructions: Vec<Instruction>,
    pub lines: Vec<usize>,
    pub memory: Vec<(u64, Vec<u8>)>,
}

pub fn format_program(program: &[Instruction]) -> String {
    program.iter().map(|i| format!("{i}\n")).collect()
}

fn parse_num(tok: &str) -> std::result::Result<u64, String> {
    let t = tok.trim().replace('_', "");
    let r = if let Some(h) = t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")) {
        u64::from_str_radix(h, 16)
    } else if let Some(b) = t.strip_prefix("0b") {
        u64::from_str_radix(b, 2)
    } else {
        t.parse()
    };
    r.map_err(|_| format!("bad number `{tok}`"))
}

fn parse_reg(tok: &str) -> std::result::Result<VReg, String> {
    let t = tok.trim();
    let n = t
        .strip_prefix('v')
        .and_then(|d| d.parse::<u32>().ok())
        .ok_or_else(|| format!("expected vector register, got `{t}`"))?;
    if n > 31 {
        return Err(format!("register v{n} out of range"));
    }
    Ok(VReg(n as u8))
}

fn parse_operand(tok: &str) -> std::result::Result<Operand, String> {
    if tok.trim().starts_with('v') {
        parse_reg(tok).map(Operand::Vector)
    } else {
        parse_num(tok).map(Operand::Scalar)
    }
}

fn parse_hex_bytes(toks: &[&str]) -> std::result::Result<Vec<u8>, String> {
    let joined: String = toks.concat();
    if !joined.len().is_multiple_of(2) {
        return Err("odd number of hex digits".into());
    }
    (0..joined.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&joined[i..i + 2], 16).map_err(|_| format!("bad hex `{}`", &joined[i..i + 2])))
        .collect()
}

fn parse_line(mnemonic: &str, ops: &[&str]) -> std::result::Result<Instruction, String> {
    let want = |n: usize| {
        if ops.len() == n {
            Ok(())
        } else {
            Err(format!("`{mnemonic}` takes {n} operands, got {}", ops.len()))
        }
    };
    let alu = |op| -> std::result::Result<Instruction, String> {
        want(3)?;
        Ok(Instruction::Alu { op, vd: parse_reg(ops[0])?, vs1: parse_reg(ops[1])?, src: parse_operand(ops[2])? })
    };
    let small = |tok: &str| -> std::result::Result<u32, String> {
        u32::try_from(parse_num(tok)?).map_err(|_| format!("immediate `{tok}` too large"))
    };
    match mnemonic {
        "vsetvl" => {
            want(2)?;
            let sew: Sew = ops[1].trim().parse().map_err(|e: Error| e.to_string())?;
            Ok(Instruction::Vsetvl { avl: parse_num(ops[0])?, sew })
        }
        "vand" => alu(AluOp::And),
        "vor" => alu(AluOp::Or),
        "vxor" => alu(AluOp::Xor),
        "vadd" => alu(AluOp::Add),
        "vsub" => alu(AluOp::Sub),
        "vsll" => alu(AluOp::Sll),
        "vsrl" => alu(AluOp::Srl),
        "vmul" => alu(AluOp::Mul),
        "vmacc.ss" | "vmacc.su" | "vmacc.us" | "vmacc.uu" | "vmacc" => {
            want(3)?;
            let signs = match mnemonic {
                "vmacc.su" => MaccSigns::SU,
                "vmacc.us" => MaccSigns::US,
                "vmacc.uu" => MaccSigns::UU,
                _ => MaccSigns::SS,
            };
            Ok(Instruction::Vmacc {
                vd: parse_reg(ops[0])?,
                vs1: parse_reg(ops[1])?,
                src: parse_operand(ops[2])?,
                signs,
            })
        }
        "vmv" => {
            want(2)?;
            Ok(Instruction::Vmv { vd: parse_reg(ops[0])?, src: parse_operand(ops[1])? })
        }
        "vpopcnt" => {
            want(2)?;
            Ok(Instruction::Vpopcnt { vd: parse_reg(ops[0])?, vs2: parse_reg(ops[1])? })
        }
        "vshacc" => {
            want(3)?;
            Ok(Instruction::Vshacc { vd: parse_reg(ops[0])?, vs2: parse_reg(ops[1])?, shamt: small(ops[2])? })
        }
        "vbitpack" => {
            want(3)?;
            Ok(Instruction::Vbitpack { vd: parse_reg(ops[0])?, vs2: parse_reg(ops[1])?, precision: small(ops[2])? })
        }
        "vle" => {
            want(2)?;
            Ok(Instruction::Vle { vd: parse_reg(ops[0])?, addr: parse_num(ops[1])? })
        }
        "vse" => {
            want(2)?;
            Ok(Instruction::Vse { vs: parse_reg(ops[0])?, addr: parse_num(ops[1])? })
        }
        "vlse" => {
            want(3)?;
            Ok(Instruction::Vlse { vd: parse_reg(ops[0])?, addr: parse_num(ops[1])?, stride: parse_num(ops[2])? })
        }
        other => Err(format!("unknown mnemonic `{other}`")),
    }
}

pub fn parse_program(text: &str) -> Result<ParsedProgram> {
    let mut out = ParsedProgram::default();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse { line: line_no, msg };
        let (head, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
        let head = head.to_ascii_lowercase();
        if head == ".mem" {
            let toks: Vec<&str> = rest.split_whitespace().collect();
            let (addr, bytes) = toks.split_first().ok_or_else(|| err(".mem needs an address".into()))?;
            let addr = parse_num(addr).map_err(err)?;
            let bytes = parse_hex_bytes(bytes).map_err(err)?;
            out.memory.push((addr, bytes));
            continue;
        }
        let ops: Vec<&str> = if rest.trim().is_empty() { Vec::new() } else { rest.split(',').collect() };
        let instr = parse_line(&head, &ops).map_err(err)?;
        out.instructions.push(instr);
        out.lines.push(line_no);
    }
    Ok(out)
}
