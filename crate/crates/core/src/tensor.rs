//! Sub-byte integer tensors and their packed forms.

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Signedness {
    Unsigned,
    Signed,
}

impl Signedness {
    pub fn is_signed(self) -> bool {
        self == Signedness::Signed
    }

    /// Inclusive value range at `bits`.
    pub fn range(self, bits: u32) -> (i64, i64) {
        match self {
            Signedness::Unsigned => (0, (1i64 << bits) - 1),
            Signedness::Signed => (-(1i64 << (bits - 1)), (1i64 << (bits - 1)) - 1),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Signedness::Unsigned => "unsigned",
            Signedness::Signed => "signed",
        }
    }
}

pub fn check_precision(bits: u32) -> Result<()> {
    if (1..=8).contains(&bits) {
        Ok(())
    } else {
        Err(Error::Precision(bits))
    }
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Integer tensor of `precision`-bit values, one byte per value (two's
/// complement for signed tensors), row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantTensor {
    shape: Vec<usize>,
    precision: u32,
    signedness: Signedness,
    data: Vec<u8>,
}

impl QuantTensor {
    pub fn new(shape: &[usize], precision: u32, signedness: Signedness, values: &[i32]) -> Result<Self> {
        check_precision(precision)?;
        if numel(shape) != values.len() {
            return Err(Error::Shape(format!("shape {shape:?} holds {} values, got {}", numel(shape), values.len())));
        }
        let (lo, hi) = signedness.range(precision);
        let data = values
            .iter()
            .map(|&v| {
                if (lo..=hi).contains(&(v as i64)) {
                    Ok(v as u8)
                } else {
                    Err(Error::ValueRange { value: v as i64, bits: precision, signed: signedness.name() })
                }
            })
            .collect::<Result<_>>()?;
        Ok(QuantTensor { shape: shape.to_vec(), precision, signedness, data })
    }

    /// From the one-byte-per-value encoding; every byte must decode to an
    /// in-range value.
    pub fn from_bytes(shape: &[usize], precision: u32, signedness: Signedness, data: Vec<u8>) -> Result<Self> {
        check_precision(precision)?;
        if numel(shape) != data.len() {
            return Err(Error::Shape(format!("shape {shape:?} needs {} bytes, got {}", numel(shape), data.len())));
        }
        let t = QuantTensor { shape: shape.to_vec(), precision, signedness, data };
        let (lo, hi) = signedness.range(precision);
        for i in 0..t.numel() {
            let v = t.get(i) as i64;
            if !(lo..=hi).contains(&v) {
                return Err(Error::ValueRange { value: v, bits: precision, signed: signedness.name() });
            }
        }
        Ok(t)
    }

    pub fn zeros(shape: &[usize], precision: u32, signedness: Signedness) -> Result<Self> {
        check_precision(precision)?;
        Ok(QuantTensor { shape: shape.to_vec(), precision, signedness, data: vec![0; numel(shape)] })
    }

    /// Uniformly random values over the full range.
    pub fn random(shape: &[usize], precision: u32, signedness: Signedness, rng: &mut SplitMix64) -> Result<Self> {
        check_precision(precision)?;
        let (lo, hi) = signedness.range(precision);
        let data = (0..numel(shape)).map(|_| rng.range_i64(lo, hi) as u8).collect();
        Ok(QuantTensor { shape: shape.to_vec(), precision, signedness, data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn precision(&self) -> u32 {
        self.precision
    }

    pub fn signedness(&self) -> Signedness {
        self.signedness
    }

    /// The one-byte-per-value encoding.
    pub fn bytes(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize) -> i32 {
        match self.signedness {
            Signedness::Unsigned => self.data[i] as i32,
            Signedness::Signed => self.data[i] as i8 as i32,
        }
    }

    pub fn values(&self) -> Vec<i32> {
        (0..self.numel()).map(|i| self.get(i)).collect()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if numel(shape) != self.numel() {
            return Err(Error::Shape(format!("cannot reshape {:?} to {shape:?}", self.shape)));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Layout {
    /// One buffer per bit position; bit `i` of plane `m` is bit `m` of element `i`.
    Bitplane,
    /// Elements packed `precision` bits each, element 0 in the low bits of byte 0.
    Dense,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedTensor {
    shape: Vec<usize>,
    precision: u32,
    signedness: Signedness,
    layout: Layout,
    buffers: Vec<Vec<u8>>,
}

impl PackedTensor {
    pub fn bitplanes(shape: &[usize], precision: u32, signedness: Signedness, planes: Vec<Vec<u8>>) -> Result<Self> {
        check_precision(precision)?;
        let want = numel(shape).div_ceil(8);
        if planes.len() != precision as usize || planes.iter().any(|p| p.len() != want) {
            return Err(Error::Shape(format!("expected {precision} planes of {want} bytes")));
        }
        Ok(PackedTensor { shape: shape.to_vec(), precision, signedness, layout: Layout::Bitplane, buffers: planes })
    }

    pub fn dense(shape: &[usize], precision: u32, signedness: Signedness, data: Vec<u8>) -> Result<Self> {
        check_precision(precision)?;
        let want = (numel(shape) * precision as usize).div_ceil(8);
        if data.len() != want {
            return Err(Error::Shape(format!("dense buffer must be {want} bytes, got {}", data.len())));
        }
        Ok(PackedTensor { shape: shape.to_vec(), precision, signedness, layout: Layout::Dense, buffers: vec![data] })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        numel(&self.shape)
    }

    pub fn precision(&self) -> u32 {
        self.precision
    }

    pub fn signedness(&self) -> Signedness {
        self.signedness
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    /// Plane `m` of a bit-plane tensor.
    pub fn plane(&self, m: usize) -> &[u8] {
        assert_eq!(self.layout, Layout::Bitplane, "not a bit-plane tensor");
        &self.buffers[m]
    }

    pub fn planes(&self) -> &[Vec<u8>] {
        assert_eq!(self.layout, Layout::Bitplane, "not a bit-plane tensor");
        &self.buffers
    }

    /// Payload of a dense tensor.
    pub fn dense_bytes(&self) -> &[u8] {
        assert_eq!(self.layout, Layout::Dense, "not a dense tensor");
        &self.buffers[0]
    }

    /// Raw `precision`-bit code of element `i`.
    fn code(&self, i: usize) -> u32 {
        let p = self.precision as usize;
        match self.layout {
            Layout::Bitplane => (0..p).map(|m| (((self.buffers[m][i / 8] >> (i % 8)) & 1) as u32) << m).sum(),
            Layout::Dense => {
                let d = &self.buffers[0];
                (0..p)
                    .map(|b| {
                        let bit = i * p + b;
                        (((d[bit / 8] >> (bit % 8)) & 1) as u32) << b
                    })
                    .sum()
            }
        }
    }

    /// Back to the one-byte-per-value form.
    pub fn unpack(&self) -> QuantTensor {
        let p = self.precision;
        let values: Vec<i32> = (0..self.numel())
            .map(|i| {
                let c = self.code(i) as i32;
                if self.signedness.is_signed() && c >= 1 << (p - 1) {
                    c - (1 << p)
                } else {
                    c
                }
            })
            .collect();
        QuantTensor::new(&self.shape, p, self.signedness, &values).expect("decoded values are in range")
    }
}

/// 2-D convolution geometry. Input is `[in_channels, input_h, input_w]`,
/// weights `[out_channels, in_channels, kernel_h, kernel_w]`, output
/// `[out_channels, output_h, output_w]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvParams {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub input_h: usize,
    pub input_w: usize,
}

impl ConvParams {
    pub fn square(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        input: usize,
    ) -> Self {
        ConvParams {
            in_channels,
            out_channels,
            kernel_h: kernel,
            kernel_w: kernel,
            stride,
            padding,
            input_h: input,
            input_w: input,
        }
    }

    fn out_dim(input: usize, pad: usize, k: usize, stride: usize) -> Option<usize> {
        (input + 2 * pad).checked_sub(k).map(|d| d / stride + 1)
    }

    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("in_channels", self.in_channels),
            ("out_channels", self.out_channels),
            ("kernel_h", self.kernel_h),
            ("kernel_w", self.kernel_w),
            ("stride", self.stride),
            ("input_h", self.input_h),
            ("input_w", self.input_w),
        ];
        if let Some((name, _)) = pos.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Shape(format!("{name} must be positive")));
        }
        if Self::out_dim(self.input_h, self.padding, self.kernel_h, self.stride).is_none()
            || Self::out_dim(self.input_w, self.padding, self.kernel_w, self.stride).is_none()
        {
            return Err(Error::Shape("kernel larger than padded input; output would be empty".into()));
        }
        Ok(())
    }

    pub fn output_h(&self) -> usize {
        Self::out_dim(self.input_h, self.padding, self.kernel_h, self.stride).unwrap_or(0)
    }

    pub fn output_w(&self) -> usize {
        Self::out_dim(self.input_w, self.padding, self.kernel_w, self.stride).unwrap_or(0)
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [self.in_channels, self.input_h, self.input_w]
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel_h, self.kernel_w]
    }

    pub fn output_shape(&self) -> [usize; 3] {
        [self.out_channels, self.output_h(), self.output_w()]
    }

    /// Reduction length of one output element.
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    pub fn macs(&self) -> u64 {
        (self.patch_len() * self.out_channels * self.output_h() * self.output_w()) as u64
    }

    pub(crate) fn check_operands(&self, input: &QuantTensor, weights: &QuantTensor) -> Result<()> {
        self.validate()?;
        if input.shape() != self.input_shape() {
            return Err(Error::Shape(format!("input {:?}, expected {:?}", input.shape(), self.input_shape())));
        }
        if weights.shape() != self.weight_shape() {
            return Err(Error::Shape(format!("weights {:?}, expected {:?}", weights.shape(), self.weight_shape())));
        }
        Ok(())
    }
}
