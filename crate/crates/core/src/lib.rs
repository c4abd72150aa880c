//! Functional simulator of an integer vector processor with sub-byte
//! bit-serial instructions (`vpopcnt`, `vshacc`, `vbitpack`), a bit-serial
//! quantized kernel library built on it, an analytic cycle model, and the
//! benchmark drivers behind the `subbyte` CLI.

pub mod bench;
pub mod cli;
pub mod config;
pub mod error;
pub mod isa;
pub mod kernels;
pub mod oracle;
pub mod perf;
pub mod qnn;
pub mod rng;
pub mod roofline;
pub mod tensor;
pub mod tensor_io;

pub use config::{MachineConfig, Sew};
pub use error::{Error, Result};
pub use isa::{Instruction, Machine, Opcode, Trace, VReg};
