//! Byte-granular baseline: widening multiply-accumulate into 32-bit lanes,
//! vectorized over output channels with activations as scalar operands.

use super::im2col::im2col_rows;
use super::pack::scoped;
use super::KernelOutput;
use crate::config::Sew;
use crate::error::{Error, Result};
use crate::isa::{Instruction, MaccSigns, Machine, Operand, VReg};
use crate::tensor::{ConvParams, QuantTensor, Signedness};

const BLOCK: usize = 8;
const W: VReg = VReg(16);

/// Largest `|w * a|` summed over `k` terms must stay below `2^31`.
fn check_accumulator(k: usize, wbits: u32, abits: u32) -> Result<()> {
    let bound = k as u128 * ((1u128 << wbits) - 1) * ((1u128 << abits) - 1);
    if bound >= 1 << 31 {
        return Err(Error::Accumulator(format!(
            "{k} terms of {wbits}x{abits} bits can reach {bound}, beyond a 32-bit accumulator"
        )));
    }
    Ok(())
}

/// `out[row][c] = sum_k rows[row][k] * w[k][c]`, weights `[k][cols]` bytes at
/// `w_addr`, output `i32` at `out`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: &mut Machine,
    w_addr: u64,
    k: usize,
    cols: usize,
    rows: &[u8],
    count: usize,
    signs: MaccSigns,
    out: u64,
) -> Result<()> {
    let vlmax = m.config().vlmax(Sew::E32);
    for c0 in (0..cols).step_by(vlmax) {
        let cb = (cols - c0).min(vlmax) as u64;
        for p0 in (0..count).step_by(BLOCK) {
            let rb = (count - p0).min(BLOCK);
            m.vsetvl(cb, Sew::E32)?;
            for r in 0..rb {
                m.execute(&Instruction::Vmv { vd: VReg(r as u8), src: Operand::Scalar(0) })?;
            }
            m.vsetvl(cb, Sew::E8)?;
            for kk in 0..k {
                m.execute(&Instruction::Vle { vd: W, addr: w_addr + (kk * cols + c0) as u64 })?;
                for r in 0..rb {
                    let a = rows[(p0 + r) * k + kk] as u64;
                    m.execute(&Instruction::Vmacc { vd: VReg(r as u8), vs1: W, src: Operand::Scalar(a), signs })?;
                }
            }
            m.vsetvl(cb, Sew::E32)?;
            for r in 0..rb {
                let addr = out + (((p0 + r) * cols + c0) * 4) as u64;
                m.execute(&Instruction::Vse { vs: VReg(r as u8), addr })?;
            }
        }
    }
    Ok(())
}

fn run(
    m: &mut Machine,
    k: usize,
    cols: usize,
    rows: usize,
    w_at: impl Fn(usize, usize) -> u8,
    signs: MaccSigns,
    rows_at: impl Fn(usize, usize) -> Vec<u8>,
) -> Result<Vec<i64>> {
    let mut values = vec![0i64; rows * cols];
    scoped(m, |m| {
        let mut wt = vec![0u8; k * cols];
        for kk in 0..k {
            for c in 0..cols {
                wt[kk * cols + c] = w_at(kk, c);
            }
        }
        let w_addr = m.mem_mut().alloc(wt.len() as u64)?;
        m.mem_mut().write(w_addr, &wt)?;
        let budget = (m.config().memory_bytes / 16) as usize;
        let tile = (budget / (cols * 4).max(1) / BLOCK * BLOCK).max(BLOCK);
        for p0 in (0..rows).step_by(tile) {
            let count = (rows - p0).min(tile);
            let block = rows_at(p0, count);
            scoped(m, |m| {
                let out = m.mem_mut().alloc((count * cols * 4) as u64)?;
                gemm(m, w_addr, k, cols, &block, count, signs, out)?;
                let bytes = m.mem().read(out, (count * cols * 4) as u64)?;
                for (v, b) in values[p0 * cols..][..count * cols].iter_mut().zip(bytes.chunks(4)) {
                    *v = i32::from_le_bytes(b.try_into().expect("4 bytes")) as i64;
                }
                Ok(())
            })?;
        }
        Ok(())
    })?;
    Ok(values)
}

fn signs(w: Signedness, a: Signedness) -> MaccSigns {
    MaccSigns::from_flags(w.is_signed(), a.is_signed())
}

pub fn conv2d_int8_baseline(
    m: &mut Machine,
    input: &QuantTensor,
    weights: &QuantTensor,
    p: &ConvParams,
) -> Result<KernelOutput> {
    p.check_operands(input, weights)?;
    let k = p.patch_len();
    check_accumulator(k, weights.precision(), input.precision())?;
    let (cols, pixels) = (p.out_channels, p.output_h() * p.output_w());
    let w = weights.bytes();
    let pc = run(
        m,
        k,
        cols,
        pixels,
        |kk, c| w[c * k + kk],
        signs(weights.signedness(), input.signedness()),
        |p0, count| im2col_rows(input, p, p0, count, k),
    )?;
    let mut values = vec![0i64; pc.len()];
    for (px, row) in pc.chunks(cols).enumerate() {
        for (c, &v) in row.iter().enumerate() {
            values[c * pixels + px] = v;
        }
    }
    Ok(KernelOutput { values, shape: p.output_shape().to_vec(), packing_cycles: 0 })
}

/// `[rows, k] x [k, cols]` on the baseline path.
pub fn matmul_int8_baseline(m: &mut Machine, a: &QuantTensor, b: &QuantTensor) -> Result<KernelOutput> {
    let (&[rows, k], &[kb, cols]) = (a.shape(), b.shape()) else {
        return Err(Error::Shape("matmul operands must be rank 2".into()));
    };
    if k != kb {
        return Err(Error::Shape(format!("inner dimensions {k} and {kb} differ")));
    }
    check_accumulator(k, b.precision(), a.precision())?;
    let (wb, ab) = (b.bytes(), a.bytes());
    let values = run(
        m,
        k,
        cols,
        rows,
        |kk, c| wb[kk * cols + c],
        signs(b.signedness(), a.signedness()),
        |p0, count| ab[p0 * k..(p0 + count) * k].to_vec(),
    )?;
    Ok(KernelOutput { values, shape: vec![rows, cols], packing_cycles: 0 })
}
