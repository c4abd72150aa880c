//! Scalar reference implementations.
//!
//! Plain nested loops over the one-byte-per-value tensors, computed in `i64`
//! and `f64` whatever widths the kernels use. Nothing here calls into the
//! kernel, packing or pipeline code it is used to check.

use crate::error::{Error, Result};
use crate::qnn::{LayerConfig, QuantScheme};
use crate::tensor::{ConvParams, QuantTensor};

pub fn dot_ref(w: &QuantTensor, a: &QuantTensor) -> Result<i64> {
    if w.numel() != a.numel() {
        return Err(Error::Shape(format!("dot of {} and {} elements", w.numel(), a.numel())));
    }
    Ok((0..w.numel()).map(|i| w.get(i) as i64 * a.get(i) as i64).sum())
}

/// `[rows, inner] x [inner, cols]`, row-major result.
pub fn matmul_ref(a: &QuantTensor, b: &QuantTensor) -> Result<Vec<i64>> {
    let (&[rows, inner], &[inner_b, cols]) = (a.shape(), b.shape()) else {
        return Err(Error::Shape("matmul operands must be rank 2".into()));
    };
    if inner != inner_b {
        return Err(Error::Shape(format!("inner dimensions {inner} and {inner_b} differ")));
    }
    let mut out = vec![0i64; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let mut s = 0i64;
            for k in 0..inner {
                s += a.get(r * inner + k) as i64 * b.get(k * cols + c) as i64;
            }
            out[r * cols + c] = s;
        }
    }
    Ok(out)
}

/// Direct convolution; output `[out_channels, output_h, output_w]`.
pub fn conv2d_ref(input: &QuantTensor, weights: &QuantTensor, p: &ConvParams) -> Result<Vec<i64>> {
    p.validate()?;
    if input.shape() != p.input_shape() || weights.shape() != p.weight_shape() {
        return Err(Error::Shape("conv operands do not match parameters".into()));
    }
    let (oh, ow) = (p.output_h(), p.output_w());
    let mut out = vec![0i64; p.out_channels * oh * ow];
    for co in 0..p.out_channels {
        for y in 0..oh {
            for x in 0..ow {
                let mut s = 0i64;
                for ci in 0..p.in_channels {
                    for ky in 0..p.kernel_h {
                        for kx in 0..p.kernel_w {
                            let iy = (y * p.stride + ky) as isize - p.padding as isize;
                            let ix = (x * p.stride + kx) as isize - p.padding as isize;
                            if iy < 0 || ix < 0 || iy >= p.input_h as isize || ix >= p.input_w as isize {
                                continue;
                            }
                            let iv = input.get((ci * p.input_h + iy as usize) * p.input_w + ix as usize) as i64;
                            let wv =
                                weights.get(((co * p.in_channels + ci) * p.kernel_h + ky) * p.kernel_w + kx) as i64;
                            s += iv * wv;
                        }
                    }
                }
                out[(co * oh + y) * ow + x] = s;
            }
        }
    }
    Ok(out)
}

fn round_half_away(x: f64) -> f64 {
    let mag = x.abs();
    let fl = mag.floor();
    let r = if mag - fl >= 0.5 { fl + 1.0 } else { fl };
    r.copysign(x)
}

fn quantize_value(x: f64, s: &QuantScheme) -> i64 {
    let (lo, hi) = s.signedness.range(s.precision_bits);
    let q = round_half_away(x / s.scale) as i64 + s.zero_point as i64;
    q.clamp(lo, hi)
}

/// Reference outputs of one quantized layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerRefOutput {
    pub input: Vec<i64>,
    pub accumulators: Vec<i64>,
    /// `acc * (input_scale * weight_scale)`.
    pub dequantized: Vec<f64>,
    /// `clamp(round(acc * factor) + zero_point)` in the output scheme.
    pub requantized: Vec<i64>,
}

/// Quantize, integer convolution, then rescale in double precision.
pub fn quantized_layer_ref(cfg: &LayerConfig, input: &[f64], weights: &QuantTensor) -> Result<LayerRefOutput> {
    for s in [&cfg.weight, &cfg.activation, &cfg.output] {
        if !(s.scale.is_finite() && s.scale > 0.0) {
            return Err(Error::Quant(format!("scale {} must be finite and positive", s.scale)));
        }
    }
    if input.iter().any(|x| !x.is_finite()) {
        return Err(Error::Quant("non-finite input".into()));
    }
    let a = &cfg.activation;
    let q: Vec<i32> = input.iter().map(|&x| quantize_value(x, a) as i32).collect();
    let qt = QuantTensor::new(&cfg.conv.input_shape(), a.precision_bits, a.signedness, &q)?;
    let acc = conv2d_ref(&qt, weights, &cfg.conv)?;
    let deq_scale = cfg.activation.scale * cfg.weight.scale;
    let factor = cfg.activation.scale * cfg.weight.scale / cfg.output.scale;
    let (lo, hi) = cfg.output.signedness.range(cfg.output.precision_bits);
    Ok(LayerRefOutput {
        input: q.iter().map(|&v| v as i64).collect(),
        dequantized: acc.iter().map(|&v| v as f64 * deq_scale).collect(),
        requantized: acc
            .iter()
            .map(|&v| (round_half_away(v as f64 * factor) as i64 + cfg.output.zero_point as i64).clamp(lo, hi))
            .collect(),
        accumulators: acc,
    })
}

/// Bit `m` of element `i` lands in plane `m`, byte `i / 8`, bit `i % 8`.
pub fn pack_bitplanes_ref(t: &QuantTensor) -> Vec<Vec<u8>> {
    let n = t.numel();
    let mut planes = vec![vec![0u8; n.div_ceil(8)]; t.precision() as usize];
    for i in 0..n {
        let byte = t.bytes()[i];
        for (m, plane) in planes.iter_mut().enumerate() {
            if (byte >> m) & 1 == 1 {
                plane[i / 8] |= 1 << (i % 8);
            }
        }
    }
    planes
}

/// Element `i` occupies bits `[i*p, (i+1)*p)` of the little-endian bit stream.
pub fn pack_dense_ref(t: &QuantTensor) -> Vec<u8> {
    let p = t.precision() as usize;
    let mut out = vec![0u8; (t.numel() * p).div_ceil(8)];
    for i in 0..t.numel() {
        let byte = t.bytes()[i];
        for b in 0..p {
            if (byte >> b) & 1 == 1 {
                let bit = i * p + b;
                out[bit / 8] |= 1 << (bit % 8);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Signedness::{Signed, Unsigned};

    fn t(shape: &[usize], bits: u32, vals: &[i32]) -> QuantTensor {
        QuantTensor::new(shape, bits, Signed, vals).unwrap()
    }

    #[test]
    fn dot_example() {
        assert_eq!(dot_ref(&t(&[1], 3, &[3]), &t(&[1], 3, &[2])).unwrap(), 6);
        assert!(dot_ref(&t(&[1], 3, &[3]), &t(&[2], 3, &[2, 1])).is_err());
    }

    #[test]
    fn conv_all_ones() {
        let p = ConvParams::square(1, 1, 3, 1, 0, 3);
        let x = QuantTensor::new(&[1, 3, 3], 1, Unsigned, &[1; 9]).unwrap();
        let w = QuantTensor::new(&[1, 1, 3, 3], 1, Unsigned, &[1; 9]).unwrap();
        assert_eq!(conv2d_ref(&x, &w, &p).unwrap(), vec![9]);
    }

    #[test]
    fn matmul_identity() {
        let id = t(&[2, 2], 4, &[1, 0, 0, 1]);
        let m = t(&[2, 2], 4, &[3, -4, 5, 7]);
        assert_eq!(matmul_ref(&id, &m).unwrap(), vec![3, -4, 5, 7]);
    }

    #[test]
    fn rounding_is_half_away_from_zero() {
        assert_eq!(round_half_away(0.5), 1.0);
        assert_eq!(round_half_away(-0.5), -1.0);
        assert_eq!(round_half_away(2.4999), 2.0);
        assert_eq!(round_half_away(0.49999999999999994), 0.0);
    }

    #[test]
    fn reference_packers() {
        let x = QuantTensor::new(&[4], 2, Unsigned, &[3, 0, 1, 2]).unwrap();
        assert_eq!(pack_bitplanes_ref(&x), vec![vec![0b0101], vec![0b1001]]);
        assert_eq!(pack_dense_ref(&x), vec![0b10_01_00_11]);
    }
}
