//! Complexity accounting and error-rate bookkeeping.
//!
//! Complexity is counted in real multiplications. A complex product is four,
//! a complex-by-real product two, `|z|^2` two. Divisions and additions are not
//! counted. The multiply-add convention reports twice the multiplications.

use serde::Serialize;

use crate::constellation::Modulation;
use crate::grid::GridLayout;
use crate::mdx::MdxConfig;
use crate::mdx::params::{AB_CHANNELS, PE_CHANNELS};

/// Real multiplications of one LMMSE equalization of `n_tx` layers on `n_rx`
/// receive antennas (`n`, `m` below), including the noise scaling and diagonal
/// loading (2), the Gram matrix upper triangle (`2 m n^2`), sweep inversion
/// (`2 n^3 - 2 n`), `A^{-1} H^H` (`4 m n^2`), and the filtered output with the
/// bias terms (`6 m n`).
pub fn lmmse_mult_count(n_tx: usize, n_rx: usize) -> u64 {
    let (m, n) = (n_rx as u64, n_tx as u64);
    2 * n * n * n + 6 * m * n * n + 6 * m * n - 2 * n + 2
}

/// Separable convolution over an `f x s` map: depthwise `k^2 c_in` plus
/// pointwise `c_in c_out` per position.
pub fn sepconv_mult_count(k: usize, c_in: usize, c_out: usize, f: usize, s: usize) -> u64 {
    ((k * k * c_in + c_in * c_out) * f * s) as u64
}

/// Max-log demapping: `|x - c|^2` plus the variance scaling for each of the
/// `2^B` points, per data RE and layer.
pub fn demap_mult_count(bits_per_symbol: usize) -> u64 {
    (1u64 << bits_per_symbol) * 4
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComplexityReport {
    pub prbs: usize,
    pub n_rx: usize,
    pub n_tx: usize,
    pub modulation: Modulation,
    pub pa_ls: u64,
    pub interpolation: u64,
    pub lmmse_dals: u64,
    pub da_ls: u64,
    pub res_blocks: u64,
    pub lmmse_final: u64,
    pub demap: u64,
    pub total_mults: u64,
    pub total_mul_add: u64,
}

/// Inference complexity of the receiver on one slot.
pub fn model_complexity(
    cfg: &MdxConfig,
    prbs: usize,
    n_rx: usize,
    n_tx: usize,
    modulation: Modulation,
) -> crate::Result<ComplexityReport> {
    let layout = GridLayout::standard(prbs, n_tx)?;
    let (f, s) = (layout.n_sc as u64, layout.n_sym as u64);
    let n_data = layout.data.len() as u64;
    let (m, n) = (n_rx as u64, n_tx as u64);
    let links = m * n;
    let pilots: u64 = layout.pilots.iter().map(|p| p.len() as u64).sum();
    // two raw LS values and the averaging scale
    let pa_ls = pilots * m * (4 + 4 + 2);
    // frequency lerp on DMRS symbols, then time lerp everywhere
    let interpolation = links * (f * layout.dmrs_symbols.len() as u64 + f * s) * 4;
    let lmmse = n_data * lmmse_mult_count(n_tx, n_rx);
    // H x_hat, then (e + h x) conj(x) per link
    let da_ls = n_data * (4 * m * n + 8 * m * n);
    let (k, nf) = (cfg.kernel, cfg.filters);
    let (fu, su) = (layout.n_sc, layout.n_sym);
    let mut per_link = 0;
    for l in 0..cfg.n_blocks {
        // batch norm folded into one scale per channel
        per_link += AB_CHANNELS as u64 * f * s;
        per_link += sepconv_mult_count(k, AB_CHANNELS + PE_CHANNELS, nf, fu, su);
        per_link += sepconv_mult_count(k, nf, 2, fu, su);
        // residual weight
        per_link += 2 * f * s;
        if l + 1 < cfg.n_blocks {
            per_link += sepconv_mult_count(k, nf, 2, fu, su);
        }
    }
    let res_blocks = per_link * links;
    let demap = 2 * n_data * n * demap_mult_count(modulation.bits_per_symbol());
    let total = pa_ls + interpolation + 2 * lmmse + da_ls + res_blocks + demap;
    Ok(ComplexityReport {
        prbs,
        n_rx,
        n_tx,
        modulation,
        pa_ls,
        interpolation,
        lmmse_dals: lmmse,
        da_ls,
        res_blocks,
        lmmse_final: lmmse,
        demap,
        total_mults: total,
        total_mul_add: 2 * total,
    })
}

/// Error counts of one receiver at one SNR point.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct MetricAccumulator {
    pub bit_errors: u64,
    pub bits: u64,
    pub block_errors: u64,
    pub blocks: u64,
    pub ch_sq_error: f64,
    pub ch_entries: u64,
    pub slots: u64,
}

impl MetricAccumulator {
    /// Adds one block of hard decisions.
    pub fn add_block(&mut self, decided: &[u8], truth: &[u8]) {
        let e = decided.iter().zip(truth).filter(|(a, b)| a != b).count() as u64;
        self.bit_errors += e;
        self.bits += truth.len() as u64;
        self.blocks += 1;
        self.block_errors += (e > 0) as u64;
    }

    /// Adds a decoded block whose success is judged externally.
    pub fn add_decoded_block(&mut self, bit_errors: u64, bits: u64, failed: bool) {
        self.bit_errors += bit_errors;
        self.bits += bits;
        self.blocks += 1;
        self.block_errors += failed as u64;
    }

    pub fn add_channel_error(&mut self, sq_error: f64, entries: u64) {
        self.ch_sq_error += sq_error;
        self.ch_entries += entries;
    }

    pub fn merge(&mut self, other: &MetricAccumulator) {
        self.bit_errors += other.bit_errors;
        self.bits += other.bits;
        self.block_errors += other.block_errors;
        self.blocks += other.blocks;
        self.ch_sq_error += other.ch_sq_error;
        self.ch_entries += other.ch_entries;
        self.slots += other.slots;
    }

    pub fn ber(&self) -> f64 {
        ratio(self.bit_errors as f64, self.bits)
    }

    pub fn bler(&self) -> f64 {
        ratio(self.block_errors as f64, self.blocks)
    }

    pub fn ch_mse(&self) -> f64 {
        ratio(self.ch_sq_error, self.ch_entries)
    }

    /// Standard deviation of the BER estimate, `sqrt(p (1 - p) / n)`.
    pub fn ber_std(&self) -> f64 {
        let p = self.ber();
        if self.bits == 0 {
            0.0
        } else {
            (p * (1.0 - p) / self.bits as f64).sqrt()
        }
    }
}

fn ratio(num: f64, den: u64) -> f64 {
    if den == 0 {
        f64::NAN
    } else {
        num / den as f64
    }
}

pub const REPORT_CSV_HEADER: &str = "snr_db,ber,bler,ch_mse,n_bits,n_blocks,n_slots";

pub fn report_row(snr_db: f64, m: &MetricAccumulator) -> String {
    format!(
        "{},{:.10e},{:.10e},{:.10e},{},{},{}",
        snr_db,
        m.ber(),
        m.bler(),
        m.ch_mse(),
        m.bits,
        m.blocks,
        m.slots
    )
}

pub fn report_csv(rows: &[(f64, MetricAccumulator)]) -> String {
    let mut out = String::from(REPORT_CSV_HEADER);
    out.push('\n');
    for (snr, m) in rows {
        out.push_str(&report_row(*snr, m));
        out.push('\n');
    }
    out
}
