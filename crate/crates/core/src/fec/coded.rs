//! Coded link simulation: one LDPC-coded transport block per slot on a
//! single layer.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ldpc::LdpcCode;
use super::tb::{build_tb, decode_tb};
use crate::analysis::MetricAccumulator;
use crate::channel::{ChannelModel, LayerFading, Numerology};
use crate::classical::{run_baseline, BaselineKind, NoiseMode};
use crate::constellation::Modulation;
use crate::error::{config_err, Result};
use crate::grid::GridLayout;
use crate::sim::{generate_tti_with_bits, mix_seed, TtiSpec, DEFAULT_DMRS_SEED};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CodedConfig {
    pub prbs: usize,
    pub n_rx: usize,
    pub modulation: Modulation,
    pub snr_db: Vec<f64>,
    pub blocks: usize,
    pub code_length: usize,
    pub code_seed: u64,
    pub max_iterations: usize,
    pub receiver: BaselineKind,
    pub noise: NoiseMode,
}

impl Default for CodedConfig {
    fn default() -> Self {
        Self {
            prbs: 2,
            n_rx: 4,
            modulation: Modulation::Qam16,
            snr_db: vec![4.0, 8.0],
            blocks: 500,
            code_length: 1024,
            code_seed: 1,
            max_iterations: 50,
            receiver: BaselineKind::PerfectCsiLmmse,
            noise: NoiseMode::Genie,
        }
    }
}

/// Transport-block error rates over block-fading slots. Slot `i` reuses
/// the same channel, noise and payload streams at every SNR.
pub fn coded_bler(cfg: &CodedConfig, seed: u64) -> Result<Vec<(f64, MetricAccumulator)>> {
    if cfg.blocks == 0 || cfg.snr_db.is_empty() {
        return config_err("coded simulation needs blocks and SNR points");
    }
    let code = LdpcCode::regular(cfg.code_length, cfg.code_seed)?;
    let layout = GridLayout::standard(cfg.prbs, 1)?;
    let capacity = layout.data.len() * cfg.modulation.bits_per_symbol();
    let numerology = Numerology::default();
    let mut out = Vec::with_capacity(cfg.snr_db.len());
    for &snr in &cfg.snr_db {
        let mut acc = MetricAccumulator::default();
        for i in 0..cfg.blocks {
            let mut tb_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed ^ 0x7462, i as u64));
            let tb = build_tb(&code, capacity, &mut tb_rng)?;
            let spec = TtiSpec {
                prbs: cfg.prbs,
                n_rx: cfg.n_rx,
                modulation: cfg.modulation,
                fading: vec![LayerFading {
                    doppler_hz: 0.0,
                    delay_spread_s: 0.0,
                }],
                snr_db: snr,
            };
            let tti = generate_tti_with_bits(
                &spec,
                &ChannelModel::BlockFading,
                &numerology,
                DEFAULT_DMRS_SEED,
                mix_seed(seed, i as u64),
                Some(vec![tb.coded.clone()]),
            )?;
            let rx = run_baseline(cfg.receiver, &tti, cfg.noise)?;
            let dec = decode_tb(&code, &rx.llr.layer(0), cfg.max_iterations)?;
            let errors = dec.payload.iter().zip(&tb.payload).filter(|(a, b)| a != b).count() as u64;
            acc.add_decoded_block(errors, tb.payload.len() as u64, !dec.crc_ok || errors > 0);
            acc.slots += 1;
        }
        out.push((snr, acc));
    }
    Ok(out)
}
