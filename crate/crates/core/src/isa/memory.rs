use crate::error::{Error, Result};

/// Flat byte-addressable memory shared by the scalar and vector sides.
///
/// Also hands out regions to kernels through a bump allocator with
/// mark/release, so a kernel can free its scratch space on exit.
#[derive(Debug, Clone)]
pub struct Memory {
    bytes: Vec<u8>,
    top: u64,
}

impl Memory {
    pub fn new(size: u64) -> Self {
        Memory { bytes: vec![0; size as usize], top: 0 }
    }

    pub fn size(&self) -> u64 {
        self.bytes.len() as u64
    }

    fn range(&self, addr: u64, len: u64) -> Result<std::ops::Range<usize>> {
        match addr.checked_add(len) {
            Some(end) if end <= self.size() => Ok(addr as usize..end as usize),
            _ => Err(Error::MemoryOutOfRange { addr, len, size: self.size() }),
        }
    }

    pub fn read(&self, addr: u64, len: u64) -> Result<&[u8]> {
        let r = self.range(addr, len)?;
        Ok(&self.bytes[r])
    }

    pub fn write(&mut self, addr: u64, data: &[u8]) -> Result<()> {
        let r = self.range(addr, data.len() as u64)?;
        self.bytes[r].copy_from_slice(data);
        Ok(())
    }

    pub fn fill(&mut self, addr: u64, len: u64, value: u8) -> Result<()> {
        let r = self.range(addr, len)?;
        self.bytes[r].fill(value);
        Ok(())
    }

    pub fn read_u64(&self, addr: u64) -> Result<u64> {
        let b = self.read(addr, 8)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    pub fn write_u64(&mut self, addr: u64, v: u64) -> Result<()> {
        self.write(addr, &v.to_le_bytes())
    }

    /// Reserve `len` bytes aligned to 64 bytes.
    pub fn alloc(&mut self, len: u64) -> Result<u64> {
        let base = self.top.next_multiple_of(64);
        self.range(base, len)?;
        self.top = base + len;
        Ok(base)
    }

    pub fn mark(&self) -> u64 {
        self.top
    }

    pub fn release(&mut self, mark: u64) {
        debug_assert!(mark <= self.top);
        self.top = mark;
    }
}
