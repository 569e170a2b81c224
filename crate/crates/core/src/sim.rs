//! Generation of one simulated slot (TTI): bits, symbols, pilots, channel,
//! and received signal.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::channel::{apply_channel, realize_channel, ChannelModel, ChannelRealization, LayerFading, Numerology};
use crate::constellation::{Constellation, Modulation};
use crate::dmrs::pilot_grid;
use crate::error::Result;
use crate::grid::{map_to_grid, GridLayout, ResourceGrid};

/// Seed of the DMRS base sequences (shared by every slot, like a cell id).
pub const DEFAULT_DMRS_SEED: u64 = 0x5eed_d3a5;

/// SplitMix64 finalizer; derives independent per-TTI seeds.
pub fn mix_seed(master: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(index.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Clone, Debug)]
pub struct TtiSpec {
    pub prbs: usize,
    pub n_rx: usize,
    pub modulation: Modulation,
    /// One entry per active layer.
    pub fading: Vec<LayerFading>,
    pub snr_db: f64,
}

#[derive(Clone, Debug)]
pub struct Tti {
    pub seed: u64,
    pub layout: GridLayout,
    pub modulation: Modulation,
    pub n_rx: usize,
    /// `bits[layer][d * B + b]` for data RE `d` (data-set order).
    pub bits: Vec<Vec<u8>>,
    /// Full-grid pilot values per layer (zero off the layer's pilot REs).
    pub pilots: Vec<Vec<Complex64>>,
    pub tx: ResourceGrid,
    pub channel: ChannelRealization,
    /// `y[re * n_rx + r]`
    pub y: Vec<Complex64>,
}

impl Tti {
    pub fn n_tx(&self) -> usize {
        self.layout.n_layers
    }

    pub fn snr_linear(&self) -> f64 {
        10f64.powf(self.channel.snr_db / 10.0)
    }
}

pub fn generate_tti(
    spec: &TtiSpec,
    model: &ChannelModel,
    numerology: &Numerology,
    dmrs_seed: u64,
    seed: u64,
) -> Result<Tti> {
    generate_tti_with_bits(spec, model, numerology, dmrs_seed, seed, None)
}

/// Like [`generate_tti`], but transmits `bits[layer]` (one bit per data RE
/// and bit position) instead of random bits. The random streams of the
/// channel and noise are unaffected by the choice.
pub fn generate_tti_with_bits(
    spec: &TtiSpec,
    model: &ChannelModel,
    numerology: &Numerology,
    dmrs_seed: u64,
    seed: u64,
    bits: Option<Vec<Vec<u8>>>,
) -> Result<Tti> {
    let n_tx = spec.fading.len();
    let layout = GridLayout::standard(spec.prbs, n_tx)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let constellation = Constellation::new(spec.modulation);
    let b = constellation.bits_per_symbol;
    let drawn: Vec<Vec<u8>> = (0..n_tx)
        .map(|_| (0..layout.data.len() * b).map(|_| rng.random_range(0..2u8)).collect())
        .collect();
    let bits = match bits {
        None => drawn,
        Some(given) => {
            if given.len() != n_tx || given.iter().any(|l| l.len() != layout.data.len() * b) {
                return Err(crate::Error::Shape("transmit bits do not match the slot".into()));
            }
            given
        }
    };
    let data = bits
        .iter()
        .map(|bl| constellation.modulate(bl))
        .collect::<Result<Vec<_>>>()?;
    let pilots: Vec<Vec<Complex64>> = (0..n_tx).map(|l| pilot_grid(l, &layout, dmrs_seed)).collect();
    let pilot_lists: Vec<Vec<Complex64>> = (0..n_tx)
        .map(|l| layout.pilots[l].iter().map(|&re| pilots[l][re]).collect())
        .collect();
    let tx = map_to_grid(&layout, &data, &pilot_lists)?;
    let channel = realize_channel(
        model,
        &spec.fading,
        spec.n_rx,
        layout.n_sc,
        layout.n_sym,
        numerology,
        spec.snr_db,
        &mut rng,
    );
    let y = apply_channel(&tx.symbols, &channel, &mut rng)?;
    Ok(Tti {
        seed,
        layout,
        modulation: spec.modulation,
        n_rx: spec.n_rx,
        bits,
        pilots,
        tx,
        channel,
        y,
    })
}
