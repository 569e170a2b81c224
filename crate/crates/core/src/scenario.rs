//! Random slot generation for training and evaluation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{sample_drop, ChannelModel, DropConfig, TdlProfile};
use crate::constellation::Modulation;
use crate::error::{config_err, Result};
use crate::sim::{generate_tti, mix_seed, Tti, TtiSpec, DEFAULT_DMRS_SEED};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    BlockFading,
    TdlA,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub prbs: usize,
    pub channel: ChannelKind,
    /// Optional TDL profile file replacing the bundled TDL-A.
    pub tdl_profile: Option<String>,
    pub drop: DropConfig,
    /// Drawn uniformly per slot.
    pub modulations: Vec<Modulation>,
    /// Always schedule `drop.max_layers` layers instead of sampling the count.
    pub fixed_layers: bool,
    pub dmrs_seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            prbs: 1,
            channel: ChannelKind::BlockFading,
            tdl_profile: None,
            drop: DropConfig::default(),
            modulations: vec![Modulation::Qpsk],
            fixed_layers: false,
            dmrs_seed: DEFAULT_DMRS_SEED,
        }
    }
}

/// Slot generator bound to a validated scenario.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub config: ScenarioConfig,
    model: ChannelModel,
}

impl Scenario {
    pub fn new(config: ScenarioConfig) -> Result<Self> {
        config.drop.validate()?;
        if config.prbs == 0 {
            return config_err("need at least one PRB");
        }
        if config.modulations.is_empty() {
            return config_err("no modulation configured");
        }
        if config.drop.max_layers > crate::grid::MAX_LAYERS {
            return config_err(format!("at most {} layers are supported", crate::grid::MAX_LAYERS));
        }
        let model = match (config.channel, &config.tdl_profile) {
            (ChannelKind::BlockFading, _) => ChannelModel::BlockFading,
            (ChannelKind::TdlA, None) => ChannelModel::Tdl(TdlProfile::tdl_a()),
            (ChannelKind::TdlA, Some(p)) => ChannelModel::Tdl(TdlProfile::load(p.as_ref())?),
        };
        Ok(Self { config, model })
    }

    /// Slot `seed`. The drop (layers, speeds, delay spreads, SNR) comes from
    /// a stream derived from `seed`; `snr_db` overrides the drawn SNR
    /// without disturbing any other draw, so the same seed at different
    /// SNRs gives common random numbers.
    pub fn sample(&self, seed: u64, snr_db: Option<f64>) -> Result<Tti> {
        let c = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x64726f70));
        let mut drop = sample_drop(&c.drop, &mut rng);
        if c.fixed_layers && drop.n_layers != c.drop.max_layers {
            let extra = drop.fading[0];
            drop.fading.resize(c.drop.max_layers, extra);
            for f in drop.fading.iter_mut().skip(drop.n_layers) {
                let v = if c.drop.speed_range[1] > c.drop.speed_range[0] {
                    rng.random_range(c.drop.speed_range[0]..c.drop.speed_range[1])
                } else {
                    c.drop.speed_range[0]
                };
                f.doppler_hz = c.drop.numerology.doppler_hz(v);
            }
            drop.n_layers = c.drop.max_layers;
        }
        let m = c.modulations[rng.random_range(0..c.modulations.len())];
        let spec = TtiSpec {
            prbs: c.prbs,
            n_rx: c.drop.n_rx,
            modulation: m,
            fading: drop.fading,
            snr_db: snr_db.unwrap_or(drop.snr_db),
        };
        generate_tti(&spec, &self.model, &c.drop.numerology, c.dmrs_seed, seed)
    }
}
