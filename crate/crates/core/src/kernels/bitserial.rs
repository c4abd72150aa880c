//! Bit-serial kernels: `w . a = sum_m sum_n 2^(m+n) popcount(w_m & a_n)`.
//!
//! For a signed operand the top plane carries weight `-2^(p-1)`, so each
//! `(m, n)` term is either added to a positive or a negative accumulator and
//! the two are subtracted once at the end.

use super::im2col::im2col_rows;
use super::pack::{pack_planes_at, plane_stride, scoped, stage, PackMethod};
use super::KernelOutput;
use crate::config::Sew;
use crate::error::{Error, Result};
use crate::isa::{AluOp, Instruction, Machine, Operand, VReg};
use crate::tensor::{ConvParams, Layout, PackedTensor, QuantTensor, Signedness};

/// Whether [`dot_bitserial`] accepts operands of different signedness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixedSign {
    Reject,
    Allow,
}

/// Output pixels sharing one pass over the weight planes.
const BLOCK: usize = 8;
const TMP: VReg = VReg(24);
const W_BASE: u8 = 16;

fn pos(r: usize) -> VReg {
    VReg(r as u8)
}

fn neg(r: usize) -> VReg {
    VReg((BLOCK + r) as u8)
}

fn term_is_negative(m: u32, mb: u32, ms: bool, n: u32, nb: u32, ns: bool) -> bool {
    (ms && m == mb - 1) != (ns && n == nb - 1)
}

/// Weight matrix as bit-planes of 64-bit words laid out `[j][col]`: word
/// `(j, c)` of plane `m` holds bit `m` of reduction indices `64j..64j+63`
/// of column `c`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreparedWeights {
    planes: Vec<Vec<u64>>,
    precision: u32,
    signedness: Signedness,
    k: usize,
    cols: usize,
    packing_cycles: u64,
}

impl PreparedWeights {
    /// Pack a `k x cols` matrix given by `at(k, c)` on the machine.
    fn pack(
        m: &mut Machine,
        k: usize,
        cols: usize,
        precision: u32,
        signedness: Signedness,
        method: PackMethod,
        at: impl Fn(usize, usize) -> u8,
    ) -> Result<Self> {
        let words = k.div_ceil(64);
        let n = words * cols * 64;
        let mut t = vec![0u8; n];
        for j in 0..words {
            for c in 0..cols {
                let row = &mut t[(j * cols + c) * 64..][..64];
                for (b, v) in row.iter_mut().enumerate().take(k.saturating_sub(64 * j)) {
                    *v = at(64 * j + b, c);
                }
            }
        }
        let before = m.report();
        let planes = scoped(m, |m| {
            if n == 0 {
                return Ok(vec![Vec::new(); precision as usize]);
            }
            let src = stage(m, &t)?;
            let stride = plane_stride(n);
            let dst = m.mem_mut().alloc(stride * precision as u64)?;
            pack_planes_at(m, src, n, precision, dst, method)?;
            (0..precision as u64)
                .map(|b| {
                    let bytes = m.mem().read(dst + b * stride, stride)?;
                    Ok(bytes.chunks(8).map(|w| u64::from_le_bytes(w.try_into().expect("8 bytes"))).collect())
                })
                .collect::<Result<Vec<Vec<u64>>>>()
        })?;
        let packing_cycles = m.report().since(&before).total_cycles;
        Ok(PreparedWeights { planes, precision, signedness, k, cols, packing_cycles })
    }

    pub fn precision(&self) -> u32 {
        self.precision
    }

    pub fn signedness(&self) -> Signedness {
        self.signedness
    }

    pub fn reduction_len(&self) -> usize {
        self.k
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Cycles spent packing these weights.
    pub fn packing_cycles(&self) -> u64 {
        self.packing_cycles
    }

    fn words_per_col(&self) -> usize {
        self.k.div_ceil(64)
    }
}

/// Pack conv weights `[cout, cin, kh, kw]` as a `patch_len x cout` matrix.
pub fn prepare_conv_weights(
    m: &mut Machine,
    weights: &QuantTensor,
    p: &ConvParams,
    method: PackMethod,
) -> Result<PreparedWeights> {
    p.validate()?;
    if weights.shape() != p.weight_shape() {
        return Err(Error::Shape(format!("weights {:?}, expected {:?}", weights.shape(), p.weight_shape())));
    }
    let k = p.patch_len();
    let w = weights.bytes();
    PreparedWeights::pack(m, k, p.out_channels, weights.precision(), weights.signedness(), method, |i, c| w[c * k + i])
}

/// Pack the right-hand operand `[k, cols]` of a matrix product.
pub fn prepare_matrix(m: &mut Machine, b: &QuantTensor, method: PackMethod) -> Result<PreparedWeights> {
    let &[k, cols] = b.shape() else {
        return Err(Error::Shape("matmul operands must be rank 2".into()));
    };
    let w = b.bytes();
    PreparedWeights::pack(m, k, cols, b.precision(), b.signedness(), method, |i, c| w[i * cols + c])
}

struct ActPlanes {
    addr: u64,
    stride: u64,
    bits: u32,
    signed: bool,
    words: usize,
}

impl ActPlanes {
    fn word(&self, m: &Machine, n: u32, row: usize, j: usize) -> Result<u64> {
        m.mem().read_u64(self.addr + n as u64 * self.stride + ((row * self.words + j) * 8) as u64)
    }
}

/// `out[row][c] = sum_k act[row][k] * w[k][c]` for `rows` packed activation
/// rows, written as `i64` to `out`. Weight planes are staged at `w_addr`.
fn gemm(m: &mut Machine, w: &PreparedWeights, w_addr: u64, act: &ActPlanes, rows: usize, out: u64) -> Result<()> {
    let (cols, words) = (w.cols, w.words_per_col());
    let (mb, ms) = (w.precision, w.signedness.is_signed());
    let (nb, ns) = (act.bits, act.signed);
    let split = ms || ns;
    let w_stride = (words * cols * 8) as u64;
    let vlmax = m.config().vlmax(Sew::E64);
    for c0 in (0..cols).step_by(vlmax) {
        let cb = (cols - c0).min(vlmax);
        m.vsetvl(cb as u64, Sew::E64)?;
        for p0 in (0..rows).step_by(BLOCK) {
            let rb = (rows - p0).min(BLOCK);
            for r in 0..rb {
                m.execute(&Instruction::Vmv { vd: pos(r), src: Operand::Scalar(0) })?;
                if split {
                    m.execute(&Instruction::Vmv { vd: neg(r), src: Operand::Scalar(0) })?;
                }
            }
            for j in 0..words {
                for b in 0..mb {
                    let addr = w_addr + b as u64 * w_stride + ((j * cols + c0) * 8) as u64;
                    m.execute(&Instruction::Vle { vd: VReg(W_BASE + b as u8), addr })?;
                }
                for r in 0..rb {
                    for b in 0..mb {
                        for n in 0..nb {
                            let a = act.word(m, n, p0 + r, j)?;
                            m.execute(&Instruction::vx(AluOp::And, TMP, VReg(W_BASE + b as u8), a))?;
                            m.execute(&Instruction::Vpopcnt { vd: TMP, vs2: TMP })?;
                            let vd = if term_is_negative(b, mb, ms, n, nb, ns) { neg(r) } else { pos(r) };
                            m.execute(&Instruction::Vshacc { vd, vs2: TMP, shamt: b + n })?;
                        }
                    }
                }
            }
            for r in 0..rb {
                if split {
                    m.execute(&Instruction::vv(AluOp::Sub, pos(r), pos(r), neg(r)))?;
                }
                let addr = out + (((p0 + r) * cols + c0) * 8) as u64;
                m.execute(&Instruction::Vse { vs: pos(r), addr })?;
            }
        }
    }
    Ok(())
}

/// Pixel rows per tile, bounded so activations and outputs stay within a
/// sixteenth of machine memory each.
fn tile_rows(m: &Machine, row_bytes: usize, out_row_bytes: usize) -> usize {
    let budget = (m.config().memory_bytes / 16) as usize;
    let by_in = budget / row_bytes.max(1);
    let by_out = budget / out_row_bytes.max(1);
    (by_in.min(by_out) / BLOCK * BLOCK).max(BLOCK)
}

/// Multiply `rows` activation rows (produced by `rows_at(first, count,
/// row_len)`) by prepared weights. Returns `[rows][cols]` and the cycles
/// spent packing activations.
fn run_gemm(
    m: &mut Machine,
    w: &PreparedWeights,
    rows: usize,
    act_bits: u32,
    act_sign: Signedness,
    method: PackMethod,
    rows_at: &dyn Fn(usize, usize, usize) -> Vec<u8>,
) -> Result<(Vec<i64>, u64)> {
    let (cols, words) = (w.cols, w.words_per_col());
    let row_len = words * 64;
    let mut values = vec![0i64; rows * cols];
    let mut packing = 0;
    scoped(m, |m| {
        let w_addr = m.mem_mut().alloc((w.planes.len() * words * cols * 8) as u64)?;
        for (b, plane) in w.planes.iter().enumerate() {
            let bytes: Vec<u8> = plane.iter().flat_map(|x| x.to_le_bytes()).collect();
            m.mem_mut().write(w_addr + (b * bytes.len()) as u64, &bytes)?;
        }
        let tile = tile_rows(m, row_len, cols * 8);
        for p0 in (0..rows).step_by(tile) {
            let count = (rows - p0).min(tile);
            scoped(m, |m| {
                let src = stage(m, &rows_at(p0, count, row_len))?;
                let n = count * row_len;
                let stride = plane_stride(n);
                let dst = m.mem_mut().alloc(stride * act_bits as u64)?;
                let before = m.report();
                if n > 0 {
                    pack_planes_at(m, src, n, act_bits, dst, method)?;
                }
                packing += m.report().since(&before).total_cycles;
                let act = ActPlanes { addr: dst, stride, bits: act_bits, signed: act_sign.is_signed(), words };
                let out = m.mem_mut().alloc((count * cols * 8) as u64)?;
                gemm(m, w, w_addr, &act, count, out)?;
                let bytes = m.mem().read(out, (count * cols * 8) as u64)?;
                for (v, b) in values[p0 * cols..][..count * cols].iter_mut().zip(bytes.chunks(8)) {
                    *v = i64::from_le_bytes(b.try_into().expect("8 bytes"));
                }
                Ok(())
            })?;
        }
        Ok(())
    })?;
    Ok((values, packing))
}

/// Convolution against prepared weights. Only activation packing is counted
/// in `packing_cycles`.
pub fn conv2d_bitserial_prepared(
    m: &mut Machine,
    input: &QuantTensor,
    w: &PreparedWeights,
    p: &ConvParams,
    method: PackMethod,
) -> Result<KernelOutput> {
    p.validate()?;
    if input.shape() != p.input_shape() {
        return Err(Error::Shape(format!("input {:?}, expected {:?}", input.shape(), p.input_shape())));
    }
    if w.k != p.patch_len() || w.cols != p.out_channels {
        return Err(Error::Shape("prepared weights do not match conv parameters".into()));
    }
    let pixels = p.output_h() * p.output_w();
    let rows_at = |p0: usize, count: usize, len: usize| im2col_rows(input, p, p0, count, len);
    let (pc, packing_cycles) = run_gemm(m, w, pixels, input.precision(), input.signedness(), method, &rows_at)?;
    let cols = p.out_channels;
    let mut values = vec![0i64; pc.len()];
    for (px, row) in pc.chunks(cols.max(1)).enumerate() {
        for (c, &v) in row.iter().enumerate() {
            values[c * pixels + px] = v;
        }
    }
    Ok(KernelOutput { values, shape: p.output_shape().to_vec(), packing_cycles })
}

/// im2col + bit-serial GEMM. Weights are packed once per call and counted
/// in `packing_cycles` together with the activations.
pub fn conv2d_bitserial(
    m: &mut Machine,
    input: &QuantTensor,
    weights: &QuantTensor,
    p: &ConvParams,
    method: PackMethod,
) -> Result<KernelOutput> {
    p.check_operands(input, weights)?;
    let w = prepare_conv_weights(m, weights, p, method)?;
    let mut out = conv2d_bitserial_prepared(m, input, &w, p, method)?;
    out.packing_cycles += w.packing_cycles;
    Ok(out)
}

/// `[rows, k] x [k, cols]`. The right operand is packed once and reused for
/// every row.
pub fn matmul_bitserial(m: &mut Machine, a: &QuantTensor, b: &QuantTensor, method: PackMethod) -> Result<KernelOutput> {
    let (&[rows, k], &[kb, cols]) = (a.shape(), b.shape()) else {
        return Err(Error::Shape("matmul operands must be rank 2".into()));
    };
    if k != kb {
        return Err(Error::Shape(format!("inner dimensions {k} and {kb} differ")));
    }
    let w = prepare_matrix(m, b, method)?;
    let src = a.bytes();
    let rows_at = |p0: usize, count: usize, len: usize| {
        let mut out = vec![0u8; count * len];
        for (r, row) in out.chunks_mut(len.max(1)).enumerate().take(count) {
            row[..k].copy_from_slice(&src[(p0 + r) * k..][..k]);
        }
        out
    };
    let (values, act_packing) = run_gemm(m, &w, rows, a.precision(), a.signedness(), method, &rows_at)?;
    Ok(KernelOutput { values, shape: vec![rows, cols], packing_cycles: w.packing_cycles + act_packing })
}

/// Dot product of two bit-plane tensors, vectorized across 64-bit words of
/// the planes and reduced with a halving tree at the end.
pub fn dot_bitserial(m: &mut Machine, w: &PackedTensor, a: &PackedTensor, mixed: MixedSign) -> Result<i64> {
    if w.numel() != a.numel() {
        return Err(Error::Shape(format!("dot of {} and {} elements", w.numel(), a.numel())));
    }
    if w.layout() != Layout::Bitplane || a.layout() != Layout::Bitplane {
        return Err(Error::Format("dot operands must be bit-plane packed".into()));
    }
    if w.signedness() != a.signedness() && mixed == MixedSign::Reject {
        return Err(Error::Signedness(format!(
            "{} weights with {} activations",
            w.signedness().name(),
            a.signedness().name()
        )));
    }
    let n = w.numel();
    let words = n.div_ceil(64);
    if words == 0 {
        return Ok(0);
    }
    let (mb, ms) = (w.precision(), w.signedness().is_signed());
    let (nb, ns) = (a.precision(), a.signedness().is_signed());
    let split = ms || ns;
    let (acc, acc_neg, tmp) = (VReg(0), VReg(1), VReg(2));
    let stride = plane_stride(n);
    scoped(m, |m| {
        let stage_planes = |m: &mut Machine, t: &PackedTensor| -> Result<u64> {
            let addr = m.mem_mut().alloc(stride * t.precision() as u64)?;
            m.mem_mut().fill(addr, stride * t.precision() as u64, 0)?;
            for (b, plane) in t.planes().iter().enumerate() {
                m.mem_mut().write(addr + b as u64 * stride, plane)?;
            }
            Ok(addr)
        };
        let w_addr = stage_planes(m, w)?;
        let a_addr = stage_planes(m, a)?;
        let vlmax = m.config().vlmax(Sew::E64);
        let first = words.min(vlmax);
        m.vsetvl(first as u64, Sew::E64)?;
        m.execute(&Instruction::Vmv { vd: acc, src: Operand::Scalar(0) })?;
        if split {
            m.execute(&Instruction::Vmv { vd: acc_neg, src: Operand::Scalar(0) })?;
        }
        let mut w0 = 0;
        while w0 < words {
            let vl = m.vsetvl((words - w0) as u64, Sew::E64)?;
            let off = (w0 * 8) as u64;
            for b in 0..mb {
                m.execute(&Instruction::Vle { vd: VReg(16 + b as u8), addr: w_addr + b as u64 * stride + off })?;
            }
            for n in 0..nb {
                m.execute(&Instruction::Vle { vd: VReg(24 + n as u8), addr: a_addr + n as u64 * stride + off })?;
            }
            for b in 0..mb {
                for n in 0..nb {
                    m.execute(&Instruction::vv(AluOp::And, tmp, VReg(16 + b as u8), VReg(24 + n as u8)))?;
                    m.execute(&Instruction::Vpopcnt { vd: tmp, vs2: tmp })?;
                    let vd = if term_is_negative(b, mb, ms, n, nb, ns) { acc_neg } else { acc };
                    m.execute(&Instruction::Vshacc { vd, vs2: tmp, shamt: b + n })?;
                }
            }
            w0 += vl;
        }
        m.vsetvl(first as u64, Sew::E64)?;
        if split {
            m.execute(&Instruction::vv(AluOp::Sub, acc, acc, acc_neg))?;
        }
        let scratch = m.mem_mut().alloc((first * 8) as u64)?;
        let mut len = first;
        while len > 1 {
            let half = len / 2;
            let rest = len - half;
            m.vsetvl(len as u64, Sew::E64)?;
            m.execute(&Instruction::Vse { vs: acc, addr: scratch })?;
            m.vsetvl(half as u64, Sew::E64)?;
            m.execute(&Instruction::Vle { vd: tmp, addr: scratch + (rest * 8) as u64 })?;
            m.execute(&Instruction::vv(AluOp::Add, acc, acc, tmp))?;
            len = rest;
        }
        m.vsetvl(1, Sew::E64)?;
        m.execute(&Instruction::Vse { vs: acc, addr: scratch })?;
        Ok(m.mem().read_u64(scratch)? as i64)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::MachineConfig;
    use crate::kernels::pack::pack_bitplanes;
    use crate::oracle::{conv2d_ref, dot_ref, matmul_ref};
    use crate::rng::SplitMix64;
    use crate::tensor::Signedness::{Signed, Unsigned};
    use proptest::prelude::*;

    fn machine() -> Machine {
        Machine::new(MachineConfig { memory_bytes: 4 << 20, ..MachineConfig::default() }).unwrap()
    }

    fn dot(w: &QuantTensor, a: &QuantTensor) -> i64 {
        let mut m = machine();
        let (pw, pa) = (pack_bitplanes(&mut m, w).unwrap(), pack_bitplanes(&mut m, a).unwrap());
        dot_bitserial(&mut m, &pw, &pa, MixedSign::Allow).unwrap()
    }

    #[test]
    fn single_element_dot() {
        let w = QuantTensor::new(&[1], 2, Unsigned, &[3]).unwrap();
        let a = QuantTensor::new(&[1], 2, Unsigned, &[2]).unwrap();
        assert_eq!(dot(&w, &a), 6);
    }

    #[test]
    fn dot_edge_cases() {
        let w = QuantTensor::random(&[300], 3, Signed, &mut SplitMix64::new(5)).unwrap();
        let z = QuantTensor::zeros(&[300], 2, Signed).unwrap();
        assert_eq!(dot(&w, &z), 0);
        let ones = QuantTensor::new(&[777], 1, Unsigned, &[1; 777]).unwrap();
        assert_eq!(dot(&ones, &ones), 777);
    }

    #[test]
    fn mixed_signedness_needs_opt_in() {
        let mut m = machine();
        let w = pack_bitplanes(&mut m, &QuantTensor::new(&[2], 2, Signed, &[-1, 1]).unwrap()).unwrap();
        let a = pack_bitplanes(&mut m, &QuantTensor::new(&[2], 2, Unsigned, &[3, 2]).unwrap()).unwrap();
        assert!(matches!(dot_bitserial(&mut m, &w, &a, MixedSign::Reject), Err(Error::Signedness(_))));
        assert_eq!(dot_bitserial(&mut m, &w, &a, MixedSign::Allow).unwrap(), -1);
        let short = pack_bitplanes(&mut m, &QuantTensor::new(&[1], 2, Signed, &[1]).unwrap()).unwrap();
        assert!(dot_bitserial(&mut m, &w, &short, MixedSign::Allow).is_err());
    }

    #[test]
    fn signed_two_bit_pairs_exhaustive() {
        for x in -2..=1 {
            for y in -2..=1 {
                let w = QuantTensor::new(&[1], 2, Signed, &[x]).unwrap();
                let a = QuantTensor::new(&[1], 2, Signed, &[y]).unwrap();
                assert_eq!(dot(&w, &a), (x * y) as i64);
            }
        }
    }

    #[test]
    fn conv_examples() {
        let mut m = machine();
        let p = ConvParams::square(1, 1, 3, 1, 0, 3);
        let x = QuantTensor::new(&[1, 3, 3], 1, Unsigned, &[1; 9]).unwrap();
        let w = QuantTensor::new(&[1, 1, 3, 3], 1, Unsigned, &[1; 9]).unwrap();
        assert_eq!(conv2d_bitserial(&mut m, &x, &w, &p, PackMethod::Vbitpack).unwrap().values, [9]);

        let mut rng = SplitMix64::new(11);
        for p in [ConvParams::square(4, 4, 3, 1, 0, 8), ConvParams::square(4, 4, 3, 2, 1, 8)] {
            let x = QuantTensor::random(&p.input_shape(), 2, Unsigned, &mut rng).unwrap();
            let w = QuantTensor::random(&p.weight_shape(), 2, Signed, &mut rng).unwrap();
            let want = conv2d_ref(&x, &w, &p).unwrap();
            for method in [PackMethod::Vbitpack, PackMethod::BaseOps] {
                let got = conv2d_bitserial(&mut m, &x, &w, &p, method).unwrap();
                assert_eq!(got.values, want);
                assert_eq!(got.shape, p.output_shape());
            }
        }
    }

    #[test]
    fn matmul_examples() {
        let mut m = machine();
        let mut rng = SplitMix64::new(3);
        let a = QuantTensor::random(&[4, 8], 2, Signed, &mut rng).unwrap();
        let b = QuantTensor::random(&[8, 3], 2, Signed, &mut rng).unwrap();
        assert_eq!(matmul_bitserial(&mut m, &a, &b, PackMethod::Vbitpack).unwrap().values, matmul_ref(&a, &b).unwrap());

        let ones: Vec<i32> = (0..8 * 3).map(|i| (i % 3 == 1) as i32).collect();
        let sel = QuantTensor::new(&[8, 3], 1, Unsigned, &ones).unwrap();
        let out = matmul_bitserial(&mut m, &a, &sel, PackMethod::Vbitpack).unwrap().values;
        for r in 0..4 {
            let sum: i64 = (0..8).map(|k| a.get(r * 8 + k) as i64).sum();
            assert_eq!(out[r * 3..r * 3 + 3], [0, sum, 0]);
        }
    }

    #[test]
    fn prepared_weights_are_reusable() {
        let mut m = machine();
        let mut rng = SplitMix64::new(8);
        let p = ConvParams::square(3, 5, 3, 1, 1, 6);
        let w = QuantTensor::random(&p.weight_shape(), 2, Signed, &mut rng).unwrap();
        let pw = prepare_conv_weights(&mut m, &w, &p, PackMethod::Vbitpack).unwrap();
        assert!(pw.packing_cycles() > 0);
        for _ in 0..2 {
            let x = QuantTensor::random(&p.input_shape(), 2, Unsigned, &mut rng).unwrap();
            let out = conv2d_bitserial_prepared(&mut m, &x, &pw, &p, PackMethod::Vbitpack).unwrap();
            assert_eq!(out.values, conv2d_ref(&x, &w, &p).unwrap());
        }
    }

    proptest! {
        #[test]
        fn dot_matches_oracle(seed: u64, n in 0usize..700, mb in 1u32..=4, nb in 1u32..=4, ws: bool, as_: bool) {
            let mut rng = SplitMix64::new(seed);
            let sw = if ws { Signed } else { Unsigned };
            let sa = if as_ { Signed } else { Unsigned };
            let w = QuantTensor::random(&[n], mb, sw, &mut rng).unwrap();
            let a = QuantTensor::random(&[n], nb, sa, &mut rng).unwrap();
            prop_assert_eq!(dot(&w, &a), dot_ref(&w, &a).unwrap());
        }

        #[test]
        fn matmul_matches_oracle(seed: u64, rows in 0usize..12, k in 1usize..150, cols in 0usize..70,
                                 mb in 1u32..=4, nb in 1u32..=4) {
            let mut rng = SplitMix64::new(seed);
            let a = QuantTensor::random(&[rows, k], nb, Unsigned, &mut rng).unwrap();
            let b = QuantTensor::random(&[k, cols], mb, Signed, &mut rng).unwrap();
            let got = matmul_bitserial(&mut machine(), &a, &b, PackMethod::Vbitpack).unwrap();
            prop_assert_eq!(got.values, matmul_ref(&a, &b).unwrap());
        }
    }
}
