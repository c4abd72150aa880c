//! Quantized kernels expressed as instruction sequences on a [`Machine`].
//!
//! [`Machine`]: crate::isa::Machine

mod bitserial;
mod im2col;
mod int8;
mod pack;

pub use bitserial::{
    conv2d_bitserial, conv2d_bitserial_prepared, dot_bitserial, matmul_bitserial, prepare_conv_weights, prepare_matrix,
    MixedSign, PreparedWeights,
};
pub use int8::{conv2d_int8_baseline, matmul_int8_baseline};
pub use pack::{pack_bitplanes, pack_bitplanes_emulated, pack_bitplanes_with, pack_dense, unpack_dense, PackMethod};

/// Integer result of a kernel plus the cycles it spent packing operands.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KernelOutput {
    pub values: Vec<i64>,
    pub shape: Vec<usize>,
    pub packing_cycles: u64,
}
