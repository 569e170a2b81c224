//! Gray-labelled QAM constellations with unit average energy.
//!
//! Labels follow the 3GPP quadrant-recursive mapping; bit `b0` is the first
//! bit of each symbol:
//!
//! | order  | in-phase amplitude                         | quadrature uses      | scale   |
//! |--------|--------------------------------------------|----------------------|---------|
//! | QPSK   | `1 - 2 b0`                                 | `b1`                 | `1/√2`  |
//! | 16-QAM | `(1 - 2 b0)(2 - (1 - 2 b2))`               | `b1, b3`             | `1/√10` |
//! | 64-QAM | `(1 - 2 b0)(4 - (1 - 2 b2)(2 - (1 - 2 b4)))` | `b1, b3, b5`       | `1/√42` |

use std::sync::Arc;

use mdx_autodiff::DemapTable;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modulation {
    Qpsk,
    Qam16,
    Qam64,
}

impl Modulation {
    pub const ALL: [Modulation; 3] = [Modulation::Qpsk, Modulation::Qam16, Modulation::Qam64];

    pub fn bits_per_symbol(self) -> usize {
        match self {
            Modulation::Qpsk => 2,
            Modulation::Qam16 => 4,
            Modulation::Qam64 => 6,
        }
    }

    /// Index of the modulation-specific demapper scale.
    pub fn index(self) -> usize {
        match self {
            Modulation::Qpsk => 0,
            Modulation::Qam16 => 1,
            Modulation::Qam64 => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Modulation::Qpsk => "qpsk",
            Modulation::Qam16 => "qam16",
            Modulation::Qam64 => "qam64",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Constellation {
    pub modulation: Modulation,
    pub bits_per_symbol: usize,
    /// Point `p` carries the bits of `p` written MSB first (`b0` = MSB).
    pub points: Vec<Complex64>,
    table: Arc<DemapTable>,
}

fn pam(bits: &[u8]) -> f64 {
    // nested Gray amplitude for one axis, bits ordered from coarse to fine
    let s = |b: u8| 1.0 - 2.0 * b as f64;
    match bits.len() {
        1 => s(bits[0]),
        2 => s(bits[0]) * (2.0 - s(bits[1])),
        3 => s(bits[0]) * (4.0 - s(bits[1]) * (2.0 - s(bits[2]))),
        _ => unreachable!("axis with {} bits", bits.len()),
    }
}

impl Constellation {
    pub fn new(modulation: Modulation) -> Self {
        let b = modulation.bits_per_symbol();
        let scale = match modulation {
            Modulation::Qpsk => 2f64,
            Modulation::Qam16 => 10.0,
            Modulation::Qam64 => 42.0,
        }
        .sqrt()
        .recip();
        let mut points = Vec::with_capacity(1 << b);
        let mut labels = Vec::with_capacity(1 << b);
        for p in 0..1usize << b {
            let bits: Vec<u8> = (0..b).map(|i| ((p >> (b - 1 - i)) & 1) as u8).collect();
            let i_bits: Vec<u8> = bits.iter().step_by(2).copied().collect();
            let q_bits: Vec<u8> = bits.iter().skip(1).step_by(2).copied().collect();
            points.push(Complex64::new(pam(&i_bits) * scale, pam(&q_bits) * scale));
            labels.push(bits.iter().map(|&v| v == 1).collect());
        }
        let table = Arc::new(DemapTable {
            points: points.iter().map(|c| [c.re, c.im]).collect(),
            labels,
            bits_per_symbol: b,
        });
        Self {
            modulation,
            bits_per_symbol: b,
            points,
            table,
        }
    }

    pub fn label(&self, point: usize, bit: usize) -> u8 {
        ((point >> (self.bits_per_symbol - 1 - bit)) & 1) as u8
    }

    pub fn point_index(&self, bits: &[u8]) -> usize {
        bits.iter().fold(0, |acc, &b| (acc << 1) | (b & 1) as usize)
    }

    pub fn modulate(&self, bits: &[u8]) -> Result<Vec<Complex64>> {
        let b = self.bits_per_symbol;
        if bits.len() % b != 0 {
            return shape_err(format!("{} bits is not a multiple of {}", bits.len(), b));
        }
        Ok(bits.chunks(b).map(|c| self.points[self.point_index(c)]).collect())
    }

    pub fn nearest(&self, x: Complex64) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (i, p) in self.points.iter().enumerate() {
            let d = (x - p).norm_sqr();
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }

    pub fn hard_demap(&self, symbols: &[Complex64]) -> Vec<u8> {
        let mut out = Vec::with_capacity(symbols.len() * self.bits_per_symbol);
        for &x in symbols {
            let p = self.nearest(x);
            out.extend((0..self.bits_per_symbol).map(|b| self.label(p, b)));
        }
        out
    }

    /// Points whose bit `bit` equals `value`.
    pub fn bit_set(&self, bit: usize, value: u8) -> Vec<usize> {
        (0..self.points.len()).filter(|&p| self.label(p, bit) == value).collect()
    }

    pub fn demap_table(&self) -> Arc<DemapTable> {
        self.table.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qpsk_points() {
        let c = Constellation::new(Modulation::Qpsk);
        let a = std::f64::consts::FRAC_1_SQRT_2;
        assert!((c.points[0] - Complex64::new(a, a)).norm() < 1e-15);
        assert!((c.points[3] - Complex64::new(-a, -a)).norm() < 1e-15);
    }
}
