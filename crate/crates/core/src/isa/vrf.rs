use crate::config::{Sew, NUM_VREGS};

/// 32 architectural registers of `vlen_bits` each, plus the active vector
/// length and element width.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VectorRegisterFile {
    words_per_reg: usize,
    data: Vec<u64>,
    vl: usize,
    sew: Sew,
}

impl VectorRegisterFile {
    pub fn new(vlen_bits: u32) -> Self {
        let words_per_reg = (vlen_bits / 64) as usize;
        VectorRegisterFile { words_per_reg, data: vec![0; words_per_reg * NUM_VREGS], vl: 0, sew: Sew::E8 }
    }

    pub fn vlen_bits(&self) -> usize {
        self.words_per_reg * 64
    }

    pub fn vl(&self) -> usize {
        self.vl
    }

    pub fn sew(&self) -> Sew {
        self.sew
    }

    pub(crate) fn set_vtype(&mut self, vl: usize, sew: Sew) {
        debug_assert!(vl * sew.bits() as usize <= self.vlen_bits());
        self.vl = vl;
        self.sew = sew;
    }

    pub fn words(&self, reg: usize) -> &[u64] {
        &self.data[reg * self.words_per_reg..(reg + 1) * self.words_per_reg]
    }

    pub fn words_mut(&mut self, reg: usize) -> &mut [u64] {
        &mut self.data[reg * self.words_per_reg..(reg + 1) * self.words_per_reg]
    }

    /// Element `i` of `reg` at `width` bits (8, 16, 32 or 64), zero-extended.
    #[inline]
    pub fn read(&self, reg: usize, width: u32, i: usize) -> u64 {
        let bit = i * width as usize;
        let w = self.data[reg * self.words_per_reg + bit / 64];
        if width == 64 {
            w
        } else {
            (w >> (bit % 64)) & ((1u64 << width) - 1)
        }
    }

    /// Write element `i` of `reg`; `val` is truncated to `width` bits.
    #[inline]
    pub fn write(&mut self, reg: usize, width: u32, i: usize, val: u64) {
        let bit = i * width as usize;
        let slot = &mut self.data[reg * self.words_per_reg + bit / 64];
        if width == 64 {
            *slot = val;
        } else {
            let shift = bit % 64;
            let mask = ((1u64 << width) - 1) << shift;
            *slot = (*slot & !mask) | ((val << shift) & mask);
        }
    }

    /// Byte `k` of the register bit string.
    pub fn byte(&self, reg: usize, k: usize) -> u8 {
        (self.words(reg)[k / 8] >> (8 * (k % 8))) as u8
    }

    /// Register contents as little-endian bytes (byte 0 holds bits 0..8).
    pub fn to_bytes(&self, reg: usize) -> Vec<u8> {
        self.words(reg).iter().flat_map(|w| w.to_le_bytes()).collect()
    }

    /// Overwrite a register from little-endian bytes; missing bytes are zero.
    pub fn load_bytes(&mut self, reg: usize, bytes: &[u8]) {
        let words = self.words_mut(reg);
        for (wi, w) in words.iter_mut().enumerate() {
            let mut buf = [0u8; 8];
            for (bi, b) in buf.iter_mut().enumerate() {
                if let Some(&v) = bytes.get(wi * 8 + bi) {
                    *b = v;
                }
            }
            *w = u64::from_le_bytes(buf);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn element_layout_is_little_endian() {
        let mut vrf = VectorRegisterFile::new(256);
        vrf.write(3, 8, 0, 0xAB);
        vrf.write(3, 8, 9, 0xCD);
        assert_eq!(vrf.byte(3, 0), 0xAB);
        assert_eq!(vrf.byte(3, 9), 0xCD);
        assert_eq!(vrf.read(3, 16, 0), 0x00AB);
        assert_eq!(vrf.read(3, 16, 4), 0xCD00);
        vrf.write(3, 32, 1, 0x1_2345_6789);
        assert_eq!(vrf.read(3, 32, 1), 0x2345_6789);
        assert_eq!(vrf.words(3)[0] >> 32, 0x2345_6789);
        // other registers untouched
        assert!(vrf.words(2).iter().all(|&w| w == 0));
    }

    #[test]
    fn byte_roundtrip() {
        let mut vrf = VectorRegisterFile::new(128);
        let bytes: Vec<u8> = (0..16).collect();
        vrf.load_bytes(5, &bytes);
        assert_eq!(vrf.to_bytes(5), bytes);
        assert_eq!(vrf.read(5, 64, 1), u64::from_le_bytes([8, 9, 10, 11, 12, 13, 14, 15]));
    }
}
