//! CRC-16 with generator `x^16 + x^12 + x^5 + 1` (0x1021), zero initial
//! value, no reflection and no final XOR, computed over bit sequences.

pub const CRC_POLY: u16 = 0x1021;
pub const CRC_BITS: usize = 16;

/// CRC of a bit sequence (one bit per byte, first bit first).
pub fn crc16_bits(bits: &[u8]) -> u16 {
    let mut reg: u16 = 0;
    for &b in bits {
        let top = ((reg >> 15) as u8) ^ (b & 1);
        reg <<= 1;
        if top == 1 {
            reg ^= CRC_POLY;
        }
    }
    reg
}

/// `payload` followed by its 16 CRC bits, most significant first.
pub fn attach_crc(payload: &[u8]) -> Vec<u8> {
    let crc = crc16_bits(payload);
    let mut out = payload.to_vec();
    out.extend((0..CRC_BITS).rev().map(|i| ((crc >> i) & 1) as u8));
    out
}

/// True when the trailing 16 bits are the CRC of the rest.
pub fn check_crc(block: &[u8]) -> bool {
    block.len() >= CRC_BITS && crc16_bits(block) == 0
}
