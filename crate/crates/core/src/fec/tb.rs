//! Transport blocks: the payload of one layer in one slot, split into
//! CRC-protected code blocks that fill the layer's coded bits.

use rand::Rng;

use super::crc::{attach_crc, check_crc, CRC_BITS};
use super::ldpc::LdpcCode;
use crate::error::{config_err, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TransportBlock {
    /// Payload bits of every code block, concatenated.
    pub payload: Vec<u8>,
    /// Coded bits, `capacity` long; positions past the last code block are
    /// filler.
    pub coded: Vec<u8>,
    pub code_blocks: usize,
}

/// Code blocks that fit into `capacity` coded bits.
pub fn code_blocks(code: &LdpcCode, capacity: usize) -> Result<usize> {
    let c = capacity / code.n;
    if c == 0 || code.k <= CRC_BITS {
        return config_err(format!(
            "{} coded bits cannot hold a length-{} code block",
            capacity, code.n
        ));
    }
    Ok(c)
}

pub fn payload_bits_per_block(code: &LdpcCode) -> usize {
    code.k - CRC_BITS
}

/// Random payload, segmented, CRC-attached and encoded.
pub fn build_tb<R: Rng + ?Sized>(code: &LdpcCode, capacity: usize, rng: &mut R) -> Result<TransportBlock> {
    let cbs = code_blocks(code, capacity)?;
    let per = payload_bits_per_block(code);
    let payload: Vec<u8> = (0..cbs * per).map(|_| rng.random_range(0..2u8)).collect();
    let mut coded = Vec::with_capacity(capacity);
    for chunk in payload.chunks(per) {
        coded.extend(code.encode(&attach_crc(chunk))?);
    }
    while coded.len() < capacity {
        coded.push(rng.random_range(0..2u8));
    }
    Ok(TransportBlock {
        payload,
        coded,
        code_blocks: cbs,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TbDecodeResult {
    pub payload: Vec<u8>,
    /// Every code block passed its CRC.
    pub crc_ok: bool,
    pub failed_blocks: usize,
}

/// Decodes the code blocks of a transport block from LLRs (positive
/// favours one) over its `capacity` coded bits.
pub fn decode_tb(code: &LdpcCode, llr: &[f64], max_iterations: usize) -> Result<TbDecodeResult> {
    let cbs = code_blocks(code, llr.len())?;
    let per = payload_bits_per_block(code);
    let mut payload = Vec::with_capacity(cbs * per);
    let mut failed = 0;
    for b in 0..cbs {
        let d = code.decode(&llr[b * code.n..(b + 1) * code.n], max_iterations)?;
        let info = code.info_bits(&d.codeword);
        if !check_crc(&info) {
            failed += 1;
        }
        payload.extend_from_slice(&info[..per]);
    }
    Ok(TbDecodeResult {
        payload,
        crc_ok: failed == 0,
        failed_blocks: failed,
    })
}
