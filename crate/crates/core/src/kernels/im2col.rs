use crate::tensor::{ConvParams, QuantTensor};

/// Patch rows for output pixels `[p0, p0 + count)` in raster order, each
/// `row_len >= patch_len` bytes. Reduction index is `(ci, ky, kx)`; padding
/// positions and the row tail are zero.
pub(crate) fn im2col_rows(input: &QuantTensor, p: &ConvParams, p0: usize, count: usize, row_len: usize) -> Vec<u8> {
    let ow = p.output_w();
    let src = input.bytes();
    let mut out = vec![0u8; count * row_len];
    for (r, row) in out.chunks_mut(row_len).enumerate() {
        let (y, x) = ((p0 + r) / ow, (p0 + r) % ow);
        let mut k = 0;
        for ci in 0..p.in_channels {
            for ky in 0..p.kernel_h {
                let iy = (y * p.stride + ky).wrapping_sub(p.padding);
                for kx in 0..p.kernel_w {
                    let ix = (x * p.stride + kx).wrapping_sub(p.padding);
                    if iy < p.input_h && ix < p.input_w {
                        row[k] = src[(ci * p.input_h + iy) * p.input_w + ix];
                    }
                    k += 1;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Signedness::Unsigned;

    #[test]
    fn padded_corner_patch() {
        let p = ConvParams::square(1, 1, 3, 1, 1, 2);
        let x = QuantTensor::new(&[1, 2, 2], 3, Unsigned, &[1, 2, 3, 4]).unwrap();
        let rows = im2col_rows(&x, &p, 0, 1, 12);
        assert_eq!(rows, [0, 0, 0, 0, 1, 2, 0, 3, 4, 0, 0, 0]);
        let rows = im2col_rows(&x, &p, 3, 1, 9);
        assert_eq!(rows, [1, 2, 0, 3, 4, 0, 0, 0, 0]);
    }

    #[test]
    fn strided_rows() {
        let p = ConvParams::square(2, 1, 1, 2, 0, 4);
        let vals: Vec<i32> = (0..32).map(|v| v % 8).collect();
        let x = QuantTensor::new(&[2, 4, 4], 3, Unsigned, &vals).unwrap();
        let rows = im2col_rows(&x, &p, 0, 4, 2);
        assert_eq!(rows, [0, 0, 2, 2, 0, 0, 2, 2]);
    }
}
