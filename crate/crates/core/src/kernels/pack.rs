//! Bit-plane and dense packing as machine instruction sequences.
//!
//! Source bytes are staged in machine memory (zero padded), packed by the
//! vector unit and read back. Planes are stored word-padded: plane `b` of an
//! `n`-element buffer starts at `dst + b * plane_stride(n)`.

use crate::config::Sew;
use crate::error::{Error, Result};
use crate::isa::{AluOp, Instruction, Machine, VReg};
use crate::tensor::{check_precision, Layout, PackedTensor, QuantTensor};

/// How bit-planes are extracted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PackMethod {
    /// One `vbitpack` per plane per chunk.
    Vbitpack,
    /// Strided loads plus mask, multiply-gather and shift-or on base ALU ops.
    BaseOps,
}

const BYTE_LSBS: u64 = 0x0101_0101_0101_0101;
/// Multiplying the masked byte LSBs by this gathers them into the top byte,
/// byte 0 landing in bit 56.
const GATHER: u64 = 0x0102_0408_1020_4080;

const SRC: VReg = VReg(8);
const TMP: VReg = VReg(9);

pub(crate) fn plane_stride(n: usize) -> u64 {
    (n.div_ceil(64) * 8) as u64
}

fn chunk_len(m: &Machine, n: usize) -> usize {
    m.config().vlmax(Sew::E8).min(n.next_multiple_of(64))
}

/// Copy `bytes` into freshly allocated memory, zero padded for either packer.
pub(crate) fn stage(m: &mut Machine, bytes: &[u8]) -> Result<u64> {
    let n = bytes.len();
    let chunk = chunk_len(m, n).max(64);
    let len = n.next_multiple_of(8 * chunk);
    let addr = m.mem_mut().alloc(len as u64)?;
    m.mem_mut().write(addr, bytes)?;
    m.mem_mut().fill(addr + n as u64, (len - n) as u64, 0)?;
    Ok(addr)
}

/// Extract `bits` planes of the `n` staged bytes at `src` into `dst`.
pub(crate) fn pack_planes_at(
    m: &mut Machine,
    src: u64,
    n: usize,
    bits: u32,
    dst: u64,
    method: PackMethod,
) -> Result<()> {
    check_precision(bits)?;
    match method {
        PackMethod::Vbitpack => planes_vbitpack(m, src, n, bits, dst),
        PackMethod::BaseOps => planes_base_ops(m, src, n, bits, dst),
    }
}

fn planes_vbitpack(m: &mut Machine, src: u64, n: usize, bits: u32, dst: u64) -> Result<()> {
    let chunk = chunk_len(m, n);
    let stride = plane_stride(n);
    let mut base = 0;
    while base < n {
        let g = (n - base).div_ceil(chunk).min(8);
        m.vsetvl(chunk as u64, Sew::E8)?;
        // Newest slice lands lowest, so walk the chunks backwards.
        for c in (0..g).rev() {
            m.execute(&Instruction::Vle { vd: SRC, addr: src + (base + c * chunk) as u64 })?;
            for b in 0..bits {
                let s = if b == 0 {
                    SRC
                } else {
                    m.execute(&Instruction::vx(AluOp::Srl, TMP, SRC, b as u64))?;
                    TMP
                };
                m.execute(&Instruction::Vbitpack { vd: VReg(b as u8), vs2: s, precision: 1 })?;
            }
        }
        let off = (base / 8) as u64;
        let bytes = ((g * chunk / 8) as u64).min(stride - off);
        m.vsetvl(bytes, Sew::E8)?;
        for b in 0..bits {
            m.execute(&Instruction::Vse { vs: VReg(b as u8), addr: dst + b as u64 * stride + off })?;
        }
        base += 8 * chunk;
    }
    Ok(())
}

fn planes_base_ops(m: &mut Machine, src: u64, n: usize, bits: u32, dst: u64) -> Result<()> {
    let words = n.div_ceil(64);
    let stride = plane_stride(n);
    let mut w0 = 0;
    while w0 < words {
        let vl = m.vsetvl((words - w0) as u64, Sew::E64)?;
        for c in 0..8u64 {
            // Element i gets bytes [64(w0+i) + 8c, +8).
            let addr = src + (w0 * 64) as u64 + 8 * c;
            m.execute(&Instruction::Vlse { vd: SRC, addr, stride: 64 })?;
            for b in 0..bits {
                let acc = VReg(b as u8);
                let cur = if b == 0 {
                    SRC
                } else {
                    m.execute(&Instruction::vx(AluOp::Srl, TMP, SRC, b as u64))?;
                    TMP
                };
                m.execute(&Instruction::vx(AluOp::And, TMP, cur, BYTE_LSBS))?;
                m.execute(&Instruction::vx(AluOp::Mul, TMP, TMP, GATHER))?;
                if c == 0 {
                    m.execute(&Instruction::vx(AluOp::Srl, acc, TMP, 56))?;
                } else {
                    m.execute(&Instruction::vx(AluOp::Srl, TMP, TMP, 56))?;
                    m.execute(&Instruction::vx(AluOp::Sll, TMP, TMP, 8 * c))?;
                    m.execute(&Instruction::vv(AluOp::Or, acc, acc, TMP))?;
                }
            }
        }
        for b in 0..bits {
            let addr = dst + b as u64 * stride + (w0 * 8) as u64;
            m.execute(&Instruction::Vse { vs: VReg(b as u8), addr })?;
        }
        w0 += vl;
    }
    Ok(())
}

/// Run `f` and free any memory it allocated, whether or not it succeeds.
pub(crate) fn scoped<T>(m: &mut Machine, f: impl FnOnce(&mut Machine) -> Result<T>) -> Result<T> {
    let mark = m.mem().mark();
    let out = f(m);
    m.mem_mut().release(mark);
    out
}

pub fn pack_bitplanes(m: &mut Machine, t: &QuantTensor) -> Result<PackedTensor> {
    pack_bitplanes_with(m, t, PackMethod::Vbitpack)
}

/// Same output as [`pack_bitplanes`] without using `vbitpack`.
pub fn pack_bitplanes_emulated(m: &mut Machine, t: &QuantTensor) -> Result<PackedTensor> {
    pack_bitplanes_with(m, t, PackMethod::BaseOps)
}

pub fn pack_bitplanes_with(m: &mut Machine, t: &QuantTensor, method: PackMethod) -> Result<PackedTensor> {
    let (n, bits) = (t.numel(), t.precision());
    let plane_bytes = n.div_ceil(8);
    if n == 0 {
        return PackedTensor::bitplanes(t.shape(), bits, t.signedness(), vec![Vec::new(); bits as usize]);
    }
    let planes = scoped(m, |m| {
        let src = stage(m, t.bytes())?;
        let stride = plane_stride(n);
        let dst = m.mem_mut().alloc(stride * bits as u64)?;
        pack_planes_at(m, src, n, bits, dst, method)?;
        (0..bits as u64)
            .map(|b| Ok(m.mem().read(dst + b * stride, plane_bytes as u64)?.to_vec()))
            .collect::<Result<Vec<_>>>()
    })?;
    PackedTensor::bitplanes(t.shape(), bits, t.signedness(), planes)
}

/// Dense `precision`-bit packing. Uses `vbitpack` when the precision divides
/// the byte; other precisions are packed on the host.
pub fn pack_dense(m: &mut Machine, t: &QuantTensor) -> Result<PackedTensor> {
    let (n, p) = (t.numel(), t.precision() as usize);
    let out_len = (n * p).div_ceil(8);
    if n == 0 || 8 % p != 0 {
        return PackedTensor::dense(t.shape(), p as u32, t.signedness(), host_dense(t));
    }
    let calls = 8 / p;
    let data = scoped(m, |m| {
        let src = stage(m, t.bytes())?;
        let dst = m.mem_mut().alloc(out_len as u64)?;
        let chunk = chunk_len(m, n);
        let mut base = 0;
        while base < n {
            let g = (n - base).div_ceil(chunk).min(calls);
            m.vsetvl(chunk as u64, Sew::E8)?;
            for c in (0..g).rev() {
                m.execute(&Instruction::Vle { vd: SRC, addr: src + (base + c * chunk) as u64 })?;
                m.execute(&Instruction::Vbitpack { vd: VReg(0), vs2: SRC, precision: p as u32 })?;
            }
            let off = base * p / 8;
            let bytes = (g * chunk * p / 8).min(out_len - off);
            m.vsetvl(bytes as u64, Sew::E8)?;
            m.execute(&Instruction::Vse { vs: VReg(0), addr: dst + off as u64 })?;
            base += calls * chunk;
        }
        Ok(m.mem().read(dst, out_len as u64)?.to_vec())
    })?;
    PackedTensor::dense(t.shape(), p as u32, t.signedness(), data)
}

fn host_dense(t: &QuantTensor) -> Vec<u8> {
    let p = t.precision() as usize;
    let mut out = vec![0u8; (t.numel() * p).div_ceil(8)];
    let mut acc = 0u32;
    let mut filled = 0;
    let mut k = 0;
    for &v in t.bytes() {
        acc |= ((v as u32) & ((1 << p) - 1)) << filled;
        filled += p;
        while filled >= 8 {
            out[k] = acc as u8;
            k += 1;
            acc >>= 8;
            filled -= 8;
        }
    }
    if filled > 0 {
        out[k] = acc as u8;
    }
    out
}

pub fn unpack_dense(pt: &PackedTensor) -> Result<QuantTensor> {
    if pt.layout() != Layout::Dense {
        return Err(Error::Format("expected a dense packed tensor".into()));
    }
    Ok(pt.unpack())
}
