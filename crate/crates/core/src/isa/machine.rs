use super::{AluOp, Instruction, MaccSigns, Memory, Operand, Trace, TraceEntry, VReg, VectorRegisterFile};
use crate::config::{MachineConfig, Sew, NUM_VREGS};
use crate::error::{Error, Result};
use crate::perf::{self, CycleReport};

/// Active vector length and element width.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VState {
    pub vl: usize,
    pub sew: Sew,
}

/// A failed [`Machine::run_program`]: the failing instruction index, its error
/// and the trace of everything that executed before it.
#[derive(Debug, Clone, thiserror::Error)]
#[error("instruction {index}: {error}")]
pub struct ProgramError {
    pub index: usize,
    pub error: Error,
    pub partial: Trace,
}

/// One sequential vector machine: register file, memory and trace.
#[derive(Debug, Clone)]
pub struct Machine {
    cfg: MachineConfig,
    vrf: VectorRegisterFile,
    mem: Memory,
    trace: Trace,
}

fn reg(r: VReg) -> Result<usize> {
    if (r.0 as usize) < NUM_VREGS {
        Ok(r.0 as usize)
    } else {
        Err(Error::InvalidRegister(r.0 as u32))
    }
}

fn sign_extend(v: u64, bits: u32) -> i64 {
    let shift = 64 - bits;
    ((v << shift) as i64) >> shift
}

impl Machine {
    pub fn new(cfg: MachineConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Machine {
            vrf: VectorRegisterFile::new(cfg.vlen_bits),
            mem: Memory::new(cfg.memory_bytes),
            trace: Trace::new(false),
            cfg,
        })
    }

    pub fn config(&self) -> &MachineConfig {
        &self.cfg
    }

    pub fn vrf(&self) -> &VectorRegisterFile {
        &self.vrf
    }

    pub fn vrf_mut(&mut self) -> &mut VectorRegisterFile {
        &mut self.vrf
    }

    pub fn mem(&self) -> &Memory {
        &self.mem
    }

    pub fn mem_mut(&mut self) -> &mut Memory {
        &mut self.mem
    }

    pub fn state(&self) -> VState {
        VState { vl: self.vrf.vl(), sew: self.vrf.sew() }
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    /// Keep individual entries in the machine trace from now on.
    pub fn retain_trace(&mut self, retain: bool) {
        let old = std::mem::replace(&mut self.trace, Trace::new(retain));
        self.trace.extend(&old);
    }

    pub fn take_trace(&mut self) -> Trace {
        let retain = self.trace.retains_entries();
        std::mem::replace(&mut self.trace, Trace::new(retain))
    }

    /// Snapshot of the running cycle aggregates.
    pub fn report(&self) -> CycleReport {
        self.trace.report().clone()
    }

    pub fn cycles(&self) -> u64 {
        self.trace.total_cycles()
    }

    /// Execute `vsetvl` and return the granted vector length.
    pub fn vsetvl(&mut self, avl: u64, sew: Sew) -> Result<usize> {
        self.execute(&Instruction::Vsetvl { avl, sew })?;
        Ok(self.vrf.vl())
    }

    /// Execute one instruction and append it to the trace.
    pub fn execute(&mut self, instr: &Instruction) -> Result<u64> {
        self.exec_inner(instr)?;
        let state = self.state();
        let cycles = perf::instr_cycles(instr, state, &self.cfg);
        self.trace.push(TraceEntry { instr: *instr, state, cycles });
        Ok(cycles)
    }

    /// Execute a program in order. Its trace is also appended to the machine
    /// trace.
    pub fn run_program(&mut self, program: &[Instruction]) -> Result<Trace, Box<ProgramError>> {
        let saved = std::mem::replace(&mut self.trace, Trace::retaining());
        let mut failure = None;
        for (index, instr) in program.iter().enumerate() {
            if let Err(error) = self.execute(instr) {
                failure = Some((index, error));
                break;
            }
        }
        let local = std::mem::replace(&mut self.trace, saved);
        self.trace.extend(&local);
        match failure {
            None => Ok(local),
            Some((index, error)) => Err(Box::new(ProgramError { index, error, partial: local })),
        }
    }

    fn exec_inner(&mut self, instr: &Instruction) -> Result<()> {
        match *instr {
            Instruction::Vsetvl { avl, sew } => {
                if !self.cfg.supports(sew) {
                    return Err(Error::UnsupportedSew(sew.bits()));
                }
                let vl = avl.min(self.cfg.vlmax(sew) as u64) as usize;
                self.vrf.set_vtype(vl, sew);
                Ok(())
            }
            Instruction::Alu { op, vd, vs1, src } => self.exec_alu(op, vd, vs1, src),
            Instruction::Vmacc { vd, vs1, src, signs } => self.exec_vmacc(vd, vs1, src, signs),
            Instruction::Vmv { vd, src } => {
                let vd = reg(vd)?;
                let w = self.vrf.sew().bits();
                let mask = self.vrf.sew().mask();
                let src = self.resolve(src)?;
                for i in 0..self.vrf.vl() {
                    let v = match src {
                        Src::Vec(r) => self.vrf.read(r, w, i),
                        Src::Scalar(x) => x & mask,
                    };
                    self.vrf.write(vd, w, i, v);
                }
                Ok(())
            }
            Instruction::Vpopcnt { vd, vs2 } => self.exec_vpopcnt(vd, vs2),
            Instruction::Vshacc { vd, vs2, shamt } => self.exec_vshacc(vd, vs2, shamt),
            Instruction::Vbitpack { vd, vs2, precision } => self.exec_vbitpack(vd, vs2, precision),
            Instruction::Vle { vd, addr } => self.exec_vle(vd, addr),
            Instruction::Vse { vs, addr } => self.exec_vse(vs, addr),
            Instruction::Vlse { vd, addr, stride } => self.exec_vlse(vd, addr, stride),
        }
    }

    fn resolve(&self, src: Operand) -> Result<Src> {
        Ok(match src {
            Operand::Vector(r) => Src::Vec(reg(r)?),
            Operand::Scalar(x) => Src::Scalar(x),
        })
    }

    pub fn exec_alu(&mut self, op: AluOp, vd: VReg, vs1: VReg, src: Operand) -> Result<()> {
        let (vd, vs1) = (reg(vd)?, reg(vs1)?);
        let src = self.resolve(src)?;
        let sew = self.vrf.sew();
        let (w, mask) = (sew.bits(), sew.mask());
        if let (true, Src::Scalar(x)) = (op.is_shift(), src) {
            if x >= w as u64 {
                return Err(Error::ImmediateOutOfRange { value: x, sew: w });
            }
        }
        for i in 0..self.vrf.vl() {
            let a = self.vrf.read(vs1, w, i);
            let b = match src {
                Src::Vec(r) => self.vrf.read(r, w, i),
                Src::Scalar(x) => x & mask,
            };
            // vector shift amounts use the low log2(sew) bits
            let b = if op.is_shift() { b % w as u64 } else { b };
            self.vrf.write(vd, w, i, op.apply(a, b) & mask);
        }
        Ok(())
    }

    fn exec_vmacc(&mut self, vd: VReg, vs1: VReg, src: Operand, signs: MaccSigns) -> Result<()> {
        let (vd, vs1) = (reg(vd)?, reg(vs1)?);
        let src = self.resolve(src)?;
        let sew = self.vrf.sew();
        if !matches!(sew, Sew::E8 | Sew::E16) {
            return Err(Error::WidthMismatch("vmacc (quad-widening, e8/e16 only)"));
        }
        let (w, acc_w) = (sew.bits(), 4 * sew.bits());
        let vl = self.vrf.vl();
        if vl * acc_w as usize > self.vrf.vlen_bits() {
            return Err(Error::RegisterOverflow { op: "vmacc", vl, width: acc_w, vlen: self.vrf.vlen_bits() as u32 });
        }
        if vd == vs1 || matches!(src, Src::Vec(r) if r == vd) {
            return Err(Error::Overlap("vmacc"));
        }
        let (s1, s2) = signs.flags();
        let ext = |v: u64, signed: bool| if signed { sign_extend(v, w) } else { v as i64 };
        let acc_mask = if acc_w == 64 { u64::MAX } else { (1u64 << acc_w) - 1 };
        for i in 0..vl {
            let a = ext(self.vrf.read(vs1, w, i), s1);
            let b = match src {
                Src::Vec(r) => ext(self.vrf.read(r, w, i), s2),
                Src::Scalar(x) => ext(x & sew.mask(), s2),
            };
            let acc = self.vrf.read(vd, acc_w, i);
            let v = acc.wrapping_add(a.wrapping_mul(b) as u64) & acc_mask;
            self.vrf.write(vd, acc_w, i, v);
        }
        Ok(())
    }

    pub fn exec_vpopcnt(&mut self, vd: VReg, vs2: VReg) -> Result<()> {
        let (vd, vs2) = (reg(vd)?, reg(vs2)?);
        let w = self.vrf.sew().bits();
        for i in 0..self.vrf.vl() {
            let v = self.vrf.read(vs2, w, i).count_ones() as u64;
            self.vrf.write(vd, w, i, v);
        }
        Ok(())
    }

    pub fn exec_vshacc(&mut self, vd: VReg, vs2: VReg, shamt: u32) -> Result<()> {
        let (vd, vs2) = (reg(vd)?, reg(vs2)?);
        let sew = self.vrf.sew();
        let w = sew.bits();
        if shamt >= w {
            return Err(Error::ImmediateOutOfRange { value: shamt as u64, sew: w });
        }
        for i in 0..self.vrf.vl() {
            let acc = self.vrf.read(vd, w, i);
            let add = self.vrf.read(vs2, w, i) << shamt;
            self.vrf.write(vd, w, i, acc.wrapping_add(add) & sew.mask());
        }
        Ok(())
    }

    pub fn exec_vbitpack(&mut self, vd: VReg, vs2: VReg, precision: u32) -> Result<()> {
        let (vd, vs2) = (reg(vd)?, reg(vs2)?);
        let w = self.vrf.sew().bits();
        if precision == 0 || precision > w || !w.is_multiple_of(precision) {
            return Err(Error::PackPrecision { precision, sew: w });
        }
        let vl = self.vrf.vl();
        let p = precision as usize;
        let region = vl * w as usize;
        let slice = vl * p;
        if region == 0 {
            return Ok(());
        }
        let nwords = region.div_ceil(64);
        let pmask = if p == 64 { u64::MAX } else { (1u64 << p) - 1 };
        // Read the slice first: vs2 may alias vd.
        let mut packed = vec![0u64; slice.div_ceil(64)];
        for i in 0..vl {
            let bit = i * p;
            packed[bit / 64] |= (self.vrf.read(vs2, w, i) & pmask) << (bit % 64);
        }
        let old: Vec<u64> = self.vrf.words(vd)[..nwords].to_vec();
        let (ws, bs) = (slice / 64, slice % 64);
        let mut shifted = vec![0u64; nwords];
        for (k, out) in shifted.iter_mut().enumerate() {
            if k < ws {
                continue;
            }
            let lo = old[k - ws] << bs;
            let carry = if bs > 0 && k > ws { old[k - ws - 1] >> (64 - bs) } else { 0 };
            *out = lo | carry;
        }
        // The slice occupies bits [0, slice); shifted content is zero there.
        for (k, &p) in packed.iter().enumerate() {
            shifted[k] |= p;
        }
        let words = self.vrf.words_mut(vd);
        for (k, new) in shifted.into_iter().enumerate() {
            let lo = k * 64;
            let mask = if region >= lo + 64 { u64::MAX } else { (1u64 << (region - lo)) - 1 };
            words[k] = (words[k] & !mask) | (new & mask);
        }
        Ok(())
    }

    fn exec_vle(&mut self, vd: VReg, addr: u64) -> Result<()> {
        let vd = reg(vd)?;
        let nbytes = self.vrf.vl() * self.vrf.sew().bytes() as usize;
        let src = self.mem.read(addr, nbytes as u64)?;
        let words = self.vrf.words_mut(vd);
        for (k, chunk) in src.chunks(8).enumerate() {
            let mut buf = words[k].to_le_bytes();
            buf[..chunk.len()].copy_from_slice(chunk);
            words[k] = u64::from_le_bytes(buf);
        }
        Ok(())
    }

    fn exec_vse(&mut self, vs: VReg, addr: u64) -> Result<()> {
        let vs = reg(vs)?;
        let nbytes = self.vrf.vl() * self.vrf.sew().bytes() as usize;
        // bounds check before touching the register file
        self.mem.read(addr, nbytes as u64)?;
        let bytes: Vec<u8> = self.vrf.words(vs).iter().flat_map(|w| w.to_le_bytes()).take(nbytes).collect();
        self.mem.write(addr, &bytes)
    }

    fn exec_vlse(&mut self, vd: VReg, addr: u64, stride: u64) -> Result<()> {
        let vd = reg(vd)?;
        let sew = self.vrf.sew();
        let (w, eb) = (sew.bits(), sew.bytes() as u64);
        let vl = self.vrf.vl();
        if vl == 0 {
            return Ok(());
        }
        let last = (vl as u64 - 1)
            .checked_mul(stride)
            .and_then(|o| o.checked_add(addr))
            .ok_or(Error::MemoryOutOfRange { addr, len: u64::MAX, size: self.mem.size() })?;
        self.mem.read(last, eb)?;
        for i in 0..vl {
            let b = self.mem.read(addr + i as u64 * stride, eb)?;
            let mut buf = [0u8; 8];
            buf[..b.len()].copy_from_slice(b);
            self.vrf.write(vd, w, i, u64::from_le_bytes(buf));
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
enum Src {
    Vec(usize),
    Scalar(u64),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::Opcode;

    fn machine() -> Machine {
        Machine::new(MachineConfig { memory_bytes: 1 << 16, ..MachineConfig::default() }).unwrap()
    }

    fn fill(m: &mut Machine, r: u8, w: u32, vals: &[u64]) {
        for (i, &v) in vals.iter().enumerate() {
            m.vrf_mut().write(r as usize, w, i, v);
        }
    }

    #[test]
    fn vsetvl_caps_at_vlmax() {
        let mut m = machine();
        assert_eq!(m.vsetvl(1000, Sew::E8).unwrap(), 512);
        assert_eq!(m.vsetvl(100, Sew::E8).unwrap(), 100);
        assert_eq!(m.vsetvl(0, Sew::E64).unwrap(), 0);
        let cfg = MachineConfig { supported_sews: vec![Sew::E8], ..MachineConfig::default() };
        let mut m = Machine::new(cfg).unwrap();
        assert_eq!(m.vsetvl(4, Sew::E16), Err(Error::UnsupportedSew(16)));
    }

    #[test]
    fn alu_examples() {
        let mut m = machine();
        m.vsetvl(1, Sew::E8).unwrap();
        fill(&mut m, 1, 8, &[0b1100]);
        fill(&mut m, 2, 8, &[0b1010]);
        m.execute(&Instruction::vv(AluOp::And, VReg(3), VReg(1), VReg(2))).unwrap();
        assert_eq!(m.vrf().read(3, 8, 0), 0b1000);

        fill(&mut m, 1, 8, &[255]);
        m.execute(&Instruction::vx(AluOp::Add, VReg(3), VReg(1), 1)).unwrap();
        assert_eq!(m.vrf().read(3, 8, 0), 0);

        fill(&mut m, 1, 8, &[1]);
        m.execute(&Instruction::vx(AluOp::Sll, VReg(3), VReg(1), 7)).unwrap();
        assert_eq!(m.vrf().read(3, 8, 0), 0x80);

        let err = m.execute(&Instruction::vx(AluOp::Sll, VReg(3), VReg(1), 8)).unwrap_err();
        assert_eq!(err, Error::ImmediateOutOfRange { value: 8, sew: 8 });
        let err = m.execute(&Instruction::vv(AluOp::Add, VReg(32), VReg(1), VReg(2))).unwrap_err();
        assert_eq!(err, Error::InvalidRegister(32));
    }

    #[test]
    fn vpopcnt_examples() {
        let mut m = machine();
        m.vsetvl(2, Sew::E8).unwrap();
        fill(&mut m, 1, 8, &[0x00, 0xFF]);
        m.execute(&Instruction::Vpopcnt { vd: VReg(2), vs2: VReg(1) }).unwrap();
        assert_eq!(m.vrf().read(2, 8, 0), 0);
        assert_eq!(m.vrf().read(2, 8, 1), 8);
        m.vsetvl(1, Sew::E64).unwrap();
        fill(&mut m, 1, 64, &[u64::MAX]);
        m.execute(&Instruction::Vpopcnt { vd: VReg(1), vs2: VReg(1) }).unwrap();
        assert_eq!(m.vrf().read(1, 64, 0), 64);
    }

    #[test]
    fn vshacc_examples() {
        let mut m = machine();
        m.vsetvl(1, Sew::E64).unwrap();
        fill(&mut m, 4, 64, &[10]);
        fill(&mut m, 5, 64, &[3]);
        m.execute(&Instruction::Vshacc { vd: VReg(4), vs2: VReg(5), shamt: 2 }).unwrap();
        assert_eq!(m.vrf().read(4, 64, 0), 22);
        m.execute(&Instruction::Vshacc { vd: VReg(4), vs2: VReg(5), shamt: 0 }).unwrap();
        assert_eq!(m.vrf().read(4, 64, 0), 25);
        let err = m.execute(&Instruction::Vshacc { vd: VReg(4), vs2: VReg(5), shamt: 64 });
        assert!(matches!(err, Err(Error::ImmediateOutOfRange { .. })));
    }

    #[test]
    fn vbitpack_single_bit_slice() {
        let mut m = machine();
        m.vsetvl(4, Sew::E8).unwrap();
        fill(&mut m, 1, 8, &[1, 0, 1, 1]);
        m.execute(&Instruction::Vbitpack { vd: VReg(2), vs2: VReg(1), precision: 1 }).unwrap();
        assert_eq!(m.vrf().words(2)[0] & 0xF, 0b1101);
        // active region is 32 bits; nothing else set
        assert_eq!(m.vrf().words(2)[0], 0b1101);
    }

    #[test]
    fn vbitpack_full_width_copies_source() {
        let mut m = machine();
        m.vsetvl(3, Sew::E8).unwrap();
        fill(&mut m, 2, 8, &[9, 9, 9, 0x77]);
        fill(&mut m, 1, 8, &[0xAA, 0xBB, 0xCC]);
        m.execute(&Instruction::Vbitpack { vd: VReg(2), vs2: VReg(1), precision: 8 }).unwrap();
        assert_eq!(m.vrf().to_bytes(2)[..4], [0xAA, 0xBB, 0xCC, 0x77]);
    }

    #[test]
    fn vbitpack_rejects_non_dividing_precision() {
        let mut m = machine();
        m.vsetvl(4, Sew::E8).unwrap();
        let err = m.execute(&Instruction::Vbitpack { vd: VReg(2), vs2: VReg(1), precision: 3 });
        assert_eq!(err, Err(Error::PackPrecision { precision: 3, sew: 8 }));
        let err = m.execute(&Instruction::Vbitpack { vd: VReg(2), vs2: VReg(1), precision: 0 });
        assert!(err.is_err());
    }

    #[test]
    fn memory_roundtrip_and_bounds() {
        let mut m = machine();
        m.mem_mut().write(0x100, &[1, 2, 3]).unwrap();
        m.vsetvl(3, Sew::E8).unwrap();
        m.execute(&Instruction::Vle { vd: VReg(1), addr: 0x100 }).unwrap();
        assert_eq!(m.vrf().to_bytes(1)[..3], [1, 2, 3]);
        m.execute(&Instruction::Vse { vs: VReg(1), addr: 0x200 }).unwrap();
        m.execute(&Instruction::Vle { vd: VReg(2), addr: 0x200 }).unwrap();
        assert_eq!(m.vrf().to_bytes(2)[..3], [1, 2, 3]);
        let end = m.mem().size();
        let err = m.execute(&Instruction::Vse { vs: VReg(1), addr: end - 2 }).unwrap_err();
        assert!(matches!(err, Error::MemoryOutOfRange { .. }));
        m.execute(&Instruction::Vse { vs: VReg(1), addr: end - 3 }).unwrap();
    }

    #[test]
    fn strided_load() {
        let mut m = machine();
        let data: Vec<u8> = (0..64).collect();
        m.mem_mut().write(0, &data).unwrap();
        m.vsetvl(4, Sew::E16).unwrap();
        m.execute(&Instruction::Vlse { vd: VReg(3), addr: 2, stride: 10 }).unwrap();
        for i in 0..4u64 {
            let lo = 2 + 10 * i;
            assert_eq!(m.vrf().read(3, 16, i as usize), lo | ((lo + 1) << 8));
        }
        let err = m.execute(&Instruction::Vlse { vd: VReg(3), addr: 0, stride: 1 << 20 });
        assert!(err.is_err());
    }

    #[test]
    fn vmacc_widens() {
        let mut m = machine();
        m.vsetvl(2, Sew::E8).unwrap();
        fill(&mut m, 1, 8, &[0xFF, 100]); // -1, 100
        m.execute(&Instruction::Vmacc { vd: VReg(4), vs1: VReg(1), src: Operand::Scalar(200), signs: MaccSigns::SU })
            .unwrap();
        assert_eq!(m.vrf().read(4, 32, 0) as u32 as i32, -200);
        assert_eq!(m.vrf().read(4, 32, 1), 20000);
        let err =
            m.execute(&Instruction::Vmacc { vd: VReg(1), vs1: VReg(1), src: Operand::Scalar(1), signs: MaccSigns::SS });
        assert_eq!(err, Err(Error::Overlap("vmacc")));
        m.vsetvl(200, Sew::E8).unwrap();
        let err =
            m.execute(&Instruction::Vmacc { vd: VReg(4), vs1: VReg(1), src: Operand::Scalar(1), signs: MaccSigns::SS });
        assert!(matches!(err, Err(Error::RegisterOverflow { .. })));
    }

    #[test]
    fn vmacc_e16_accumulates_at_64_bits() {
        let mut m = machine();
        m.vsetvl(2, Sew::E16).unwrap();
        fill(&mut m, 1, 16, &[0x8000, 30000]); // -32768, 30000
        fill(&mut m, 4, 64, &[5, u64::MAX]);
        m.execute(&Instruction::Vmacc {
            vd: VReg(4),
            vs1: VReg(1),
            src: Operand::Scalar(0xFFFF),
            signs: MaccSigns::SS,
        })
        .unwrap();
        assert_eq!(m.vrf().read(4, 64, 0), 32773);
        assert_eq!(m.vrf().read(4, 64, 1) as i64, -30001);
    }

    #[test]
    fn run_program_costs_and_partial_trace() {
        let mut m = machine();
        assert_eq!(m.run_program(&[]).unwrap().total_cycles(), 0);
        let prog =
            [Instruction::Vsetvl { avl: 512, sew: Sew::E8 }, Instruction::vv(AluOp::Add, VReg(1), VReg(2), VReg(3))];
        let t = m.run_program(&prog).unwrap();
        assert_eq!(t.entries()[1].cycles, 1 + 16);
        assert_eq!(t.report().count(Opcode::Vadd), 1);

        let bad = [
            Instruction::vv(AluOp::And, VReg(1), VReg(2), VReg(3)),
            Instruction::vv(AluOp::And, VReg(40), VReg(2), VReg(3)),
            Instruction::vv(AluOp::And, VReg(1), VReg(2), VReg(3)),
        ];
        let err = m.run_program(&bad).unwrap_err();
        assert_eq!(err.index, 1);
        assert_eq!(err.partial.len(), 1);
    }
}
