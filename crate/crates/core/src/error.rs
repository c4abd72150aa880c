use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid machine configuration: {0}")]
    Config(String),

    #[error("unsupported element width e{0}")]
    UnsupportedSew(u32),

    #[error("invalid vector register index {0} (must be 0..=31)")]
    InvalidRegister(u32),

    #[error("immediate {value} out of range for e{sew}")]
    ImmediateOutOfRange { value: u64, sew: u32 },

    #[error("pack precision {precision} invalid for e{sew} (must be 1..=sew and divide sew)")]
    PackPrecision { precision: u32, sew: u32 },

    #[error("{op}: {vl} elements of {width} bits exceed the {vlen}-bit register")]
    RegisterOverflow { op: &'static str, vl: usize, width: u32, vlen: u32 },

    #[error("{0}: destination overlaps a source register")]
    Overlap(&'static str),

    #[error("{0} is not valid at the current element width")]
    WidthMismatch(&'static str),

    #[error("memory access [{addr:#x}, {addr:#x}+{len}) outside memory of {size} bytes")]
    MemoryOutOfRange { addr: u64, len: u64, size: u64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("signedness mismatch: {0}")]
    Signedness(String),

    #[error("value {value} not representable as {signed} {bits}-bit")]
    ValueRange { value: i64, bits: u32, signed: &'static str },

    #[error("invalid precision {0} (must be 1..=8)")]
    Precision(u32),

    #[error("invalid quantization parameters: {0}")]
    Quant(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("tensor file: {0}")]
    Format(String),

    #[error("accumulator overflow risk: {0}")]
    Accumulator(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
