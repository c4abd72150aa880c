//! Binary tensor file format.
//!
//! ```text
//! offset  size        field
//! 0       4           magic "SBQT"
//! 4       1           layout: 0 = unpacked (1 byte/value), 1 = dense, 2 = bit-plane
//! 5       1           rank r
//! 6       4*r         dims, u32 little-endian, outermost first
//! 6+4r    1           precision in bits (1..=8)
//! 7+4r    1           signedness: 0 = unsigned, 1 = signed
//! 8+4r    ...         payload
//! ```
//!
//! Unpacked payloads are row-major values one byte each (two's complement for
//! signed). Dense payloads are `ceil(numel*p/8)` bytes; bit-plane payloads are
//! `p` planes of `ceil(numel/8)` bytes, plane 0 first.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::tensor::{numel, Layout, PackedTensor, QuantTensor, Signedness};

pub const MAGIC: [u8; 4] = *b"SBQT";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TensorFile {
    Unpacked(QuantTensor),
    Packed(PackedTensor),
}

fn header(out: &mut Vec<u8>, layout: u8, shape: &[usize], precision: u32, signedness: Signedness) -> Result<()> {
    let rank = u8::try_from(shape.len()).map_err(|_| Error::Format("rank above 255".into()))?;
    out.extend_from_slice(&MAGIC);
    out.push(layout);
    out.push(rank);
    for &d in shape {
        let d = u32::try_from(d).map_err(|_| Error::Format(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    out.push(precision as u8);
    out.push(signedness.is_signed() as u8);
    Ok(())
}

pub fn encode(t: &QuantTensor) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + t.numel());
    header(&mut out, 0, t.shape(), t.precision(), t.signedness())?;
    out.extend_from_slice(t.bytes());
    Ok(out)
}

pub fn encode_packed(t: &PackedTensor) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    match t.layout() {
        Layout::Dense => {
            header(&mut out, 1, t.shape(), t.precision(), t.signedness())?;
            out.extend_from_slice(t.dense_bytes());
        }
        Layout::Bitplane => {
            header(&mut out, 2, t.shape(), t.precision(), t.signedness())?;
            for p in t.planes() {
                out.extend_from_slice(p);
            }
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<TensorFile> {
    let fail = |m: &str| Error::Format(m.to_string());
    if bytes.len() < 6 || bytes[..4] != MAGIC {
        return Err(fail("bad magic"));
    }
    let layout = bytes[4];
    let rank = bytes[5] as usize;
    let dims_end = 6 + 4 * rank;
    if bytes.len() < dims_end + 2 {
        return Err(fail("truncated header"));
    }
    let shape: Vec<usize> =
        bytes[6..dims_end].chunks(4).map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")) as usize).collect();
    let precision = bytes[dims_end] as u32;
    let signedness = match bytes[dims_end + 1] {
        0 => Signedness::Unsigned,
        1 => Signedness::Signed,
        f => return Err(Error::Format(format!("bad signedness flag {f}"))),
    };
    let payload = &bytes[dims_end + 2..];
    let n = numel(&shape);
    match layout {
        0 => {
            if payload.len() != n {
                return Err(Error::Format(format!("expected {n} payload bytes, got {}", payload.len())));
            }
            Ok(TensorFile::Unpacked(QuantTensor::from_bytes(&shape, precision, signedness, payload.to_vec())?))
        }
        1 => Ok(TensorFile::Packed(PackedTensor::dense(&shape, precision, signedness, payload.to_vec())?)),
        2 => {
            let plane = n.div_ceil(8);
            if payload.len() != plane * precision as usize {
                return Err(fail("bit-plane payload size mismatch"));
            }
            let planes = if plane == 0 {
                vec![Vec::new(); precision as usize]
            } else {
                payload.chunks(plane).map(<[u8]>::to_vec).collect()
            };
            Ok(TensorFile::Packed(PackedTensor::bitplanes(&shape, precision, signedness, planes)?))
        }
        l => Err(Error::Format(format!("unknown layout flag {l}"))),
    }
}

pub fn write_to(w: &mut impl Write, file: &TensorFile) -> Result<()> {
    let bytes = match file {
        TensorFile::Unpacked(t) => encode(t)?,
        TensorFile::Packed(t) => encode_packed(t)?,
    };
    w.write_all(&bytes)?;
    Ok(())
}

pub fn read_from(r: &mut impl Read) -> Result<TensorFile> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    decode(&buf)
}
