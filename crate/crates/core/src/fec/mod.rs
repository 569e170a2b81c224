//! Channel coding: LDPC, CRC and transport-block segmentation.

pub mod coded;
pub mod crc;
pub mod ldpc;
pub mod tb;

pub use crc::{attach_crc, check_crc, crc16_bits};
pub use ldpc::{LdpcCode, SparseH};
pub use tb::{build_tb, decode_tb, TransportBlock};
