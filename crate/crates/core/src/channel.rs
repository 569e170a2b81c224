//! Fading channel generation, user drops, and the received-signal model
//! `y = H x + n`.

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, shape_err, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// Sinusoids per tap in the sum-of-sinusoids fading generator.
pub const SINUSOIDS_PER_TAP: usize = 32;

const TDL_A_JSON: &str = include_str!("../data/tdl_a.json");

#[derive(Deserialize)]
struct ProfileFile {
    name: String,
    delays_normalized: Vec<f64>,
    powers_db: Vec<f64>,
}

/// Tapped-delay-line power delay profile with delays normalized to a unit
/// RMS delay spread.
#[derive(Clone, Debug, PartialEq)]
pub struct TdlProfile {
    pub name: String,
    pub tap_delays: Vec<f64>,
    /// Linear, summing to one.
    pub tap_powers: Vec<f64>,
}

impl TdlProfile {
    pub fn from_json(text: &str) -> Result<Self> {
        let f: ProfileFile = serde_json::from_str(text)?;
        Self::new(f.name, &f.delays_normalized, &f.powers_db)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn tdl_a() -> Self {
        Self::from_json(TDL_A_JSON).expect("bundled TDL-A profile")
    }

    /// Sorts taps by delay and normalizes the powers.
    pub fn new(name: String, delays: &[f64], powers_db: &[f64]) -> Result<Self> {
        if delays.is_empty() || delays.len() != powers_db.len() {
            return config_err(format!(
                "profile {}: {} delays vs {} powers",
                name,
                delays.len(),
                powers_db.len()
            ));
        }
        if delays.iter().chain(powers_db).any(|v| !v.is_finite()) || delays.iter().any(|&d| d < 0.0) {
            return config_err(format!("profile {}: delays must be finite and non-negative", name));
        }
        let mut taps: Vec<(f64, f64)> = delays
            .iter()
            .zip(powers_db)
            .map(|(&d, &p)| (d, 10f64.powf(p / 10.0)))
            .collect();
        taps.sort_by(|a, b| a.0.total_cmp(&b.0));
        let total: f64 = taps.iter().map(|t| t.1).sum();
        Ok(Self {
            name,
            tap_delays: taps.iter().map(|t| t.0).collect(),
            tap_powers: taps.iter().map(|t| t.1 / total).collect(),
        })
    }
}

/// Numerology of the simulated carrier.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Numerology {
    pub subcarrier_spacing_hz: f64,
    pub carrier_hz: f64,
}

impl Default for Numerology {
    fn default() -> Self {
        Self {
            subcarrier_spacing_hz: 30e3,
            carrier_hz: 2.14e9,
        }
    }
}

impl Numerology {
    /// OFDM symbol duration including cyclic prefix (14 symbols per slot).
    pub fn symbol_duration(&self) -> f64 {
        let slots_per_ms = self.subcarrier_spacing_hz / 15e3;
        1e-3 / slots_per_ms / 14.0
    }

    pub fn doppler_hz(&self, speed_mps: f64) -> f64 {
        speed_mps * self.carrier_hz / SPEED_OF_LIGHT
    }
}

pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re * s, im * s)
}

/// Frequency response `n_sc x n_sym` (index `f * n_sym + s`) of one link.
/// Each tap is a sum-of-sinusoids Rayleigh process with maximum Doppler
/// `doppler_hz`; the response has unit average power.
pub fn generate_tdl_channel<R: Rng + ?Sized>(
    profile: &TdlProfile,
    rms_delay_spread: f64,
    doppler_hz: f64,
    n_sc: usize,
    n_sym: usize,
    numerology: &Numerology,
    rng: &mut R,
) -> Vec<Complex64> {
    let t_sym = numerology.symbol_duration();
    let m = SINUSOIDS_PER_TAP;
    let mut h = vec![Complex64::new(0.0, 0.0); n_sc * n_sym];
    let mut gains = vec![Complex64::new(0.0, 0.0); n_sym];
    for (&delay, &power) in profile.tap_delays.iter().zip(&profile.tap_powers) {
        gains.iter_mut().for_each(|g| *g = Complex64::new(0.0, 0.0));
        let amp = (power / m as f64).sqrt();
        for _ in 0..m {
            let alpha = rng.random_range(0.0..2.0 * PI);
            let phi = rng.random_range(0.0..2.0 * PI);
            let w = 2.0 * PI * doppler_hz * alpha.cos();
            for (s, g) in gains.iter_mut().enumerate() {
                *g += Complex64::from_polar(amp, w * s as f64 * t_sym + phi);
            }
        }
        let tau = delay * rms_delay_spread;
        for f in 0..n_sc {
            let rot = Complex64::from_polar(1.0, -2.0 * PI * f as f64 * numerology.subcarrier_spacing_hz * tau);
            for s in 0..n_sym {
                h[f * n_sym + s] += gains[s] * rot;
            }
        }
    }
    h
}

/// Channel of one slot for all links.
#[derive(Clone, Debug)]
pub struct ChannelRealization {
    pub n_rx: usize,
    pub n_tx: usize,
    /// Index `((re * n_rx) + r) * n_tx + t`.
    pub h: Vec<Complex64>,
    pub n0: f64,
    pub snr_db: f64,
}

impl ChannelRealization {
    #[inline]
    pub fn at(&self, re: usize, r: usize, t: usize) -> Complex64 {
        self.h[(re * self.n_rx + r) * self.n_tx + t]
    }
}

pub fn snr_to_n0(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

/// Channel model used to fill a [`ChannelRealization`].
#[derive(Clone, Debug, PartialEq)]
pub enum ChannelModel {
    /// i.i.d. Rayleigh, constant over the slot.
    BlockFading,
    Tdl(TdlProfile),
}

/// Per-layer propagation parameters of one drop.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerFading {
    pub doppler_hz: f64,
    pub delay_spread_s: f64,
}

pub fn realize_channel<R: Rng + ?Sized>(
    model: &ChannelModel,
    layers: &[LayerFading],
    n_rx: usize,
    n_sc: usize,
    n_sym: usize,
    numerology: &Numerology,
    snr_db: f64,
    rng: &mut R,
) -> ChannelRealization {
    let n_tx = layers.len();
    let n_re = n_sc * n_sym;
    let mut h = vec![Complex64::new(0.0, 0.0); n_re * n_rx * n_tx];
    for r in 0..n_rx {
        for (t, lf) in layers.iter().enumerate() {
            match model {
                ChannelModel::BlockFading => {
                    let g = complex_gaussian(rng, 1.0);
                    for re in 0..n_re {
                        h[(re * n_rx + r) * n_tx + t] = g;
                    }
                }
                ChannelModel::Tdl(profile) => {
                    let resp =
                        generate_tdl_channel(profile, lf.delay_spread_s, lf.doppler_hz, n_sc, n_sym, numerology, rng);
                    for (re, v) in resp.into_iter().enumerate() {
                        h[(re * n_rx + r) * n_tx + t] = v;
                    }
                }
            }
        }
    }
    ChannelRealization {
        n_rx,
        n_tx,
        h,
        n0: snr_to_n0(snr_db),
        snr_db,
    }
}

/// `y = H x + n` on every RE. `x[layer][re]`; returns `y[re * n_rx + r]`.
pub fn apply_channel<R: Rng + ?Sized>(
    x: &[Vec<Complex64>],
    ch: &ChannelRealization,
    rng: &mut R,
) -> Result<Vec<Complex64>> {
    if x.len() != ch.n_tx {
        return shape_err(format!("{} layers for a channel with {} transmitters", x.len(), ch.n_tx));
    }
    let n_re = ch.h.len() / (ch.n_rx * ch.n_tx.max(1));
    if x.iter().any(|l| l.len() != n_re) {
        return shape_err("layer grid size does not match the channel");
    }
    let mut y = Vec::with_capacity(n_re * ch.n_rx);
    for re in 0..n_re {
        for r in 0..ch.n_rx {
            let mut acc = Complex64::new(0.0, 0.0);
            for (t, layer) in x.iter().enumerate() {
                acc += ch.at(re, r, t) * layer[re];
            }
            if ch.n0 > 0.0 {
                acc += complex_gaussian(rng, ch.n0);
            }
            y.push(acc);
        }
    }
    Ok(y)
}

/// Ranges of the randomized user drops.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DropConfig {
    pub max_layers: usize,
    pub n_rx: usize,
    pub speed_range: [f64; 2],
    pub delay_spread_range: [f64; 2],
    pub snr_range_db: [f64; 2],
    pub numerology: Numerology,
}

impl Default for DropConfig {
    fn default() -> Self {
        Self {
            max_layers: 2,
            n_rx: 4,
            speed_range: [0.0, 56.0],
            delay_spread_range: [10e-9, 300e-9],
            snr_range_db: [-4.0, 16.0],
            numerology: Numerology::default(),
        }
    }
}

impl DropConfig {
    pub fn validate(&self) -> Result<()> {
        let ordered = |r: &[f64; 2]| r[0].is_finite() && r[1].is_finite() && r[0] <= r[1];
        if !ordered(&self.speed_range) || !ordered(&self.delay_spread_range) || !ordered(&self.snr_range_db) {
            return config_err("drop ranges must be finite and ordered");
        }
        if self.speed_range[0] < 0.0 || self.delay_spread_range[0] < 0.0 {
            return config_err("speeds and delay spreads must be non-negative");
        }
        if self.max_layers == 0 || self.n_rx == 0 {
            return config_err("drops need at least one layer and one receive antenna");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Drop {
    pub n_layers: usize,
    pub speeds_mps: Vec<f64>,
    pub fading: Vec<LayerFading>,
    pub snr_db: f64,
}

/// Probability of `k` active layers: proportional to `k` on `1..=max`
/// (discrete triangular law with its mode at `max`).
pub fn layer_count_pmf(max_layers: usize) -> Vec<f64> {
    let total = (max_layers * (max_layers + 1) / 2) as f64;
    (1..=max_layers).map(|k| k as f64 / total).collect()
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.random_range(r[0]..r[1])
    } else {
        r[0]
    }
}

pub fn sample_drop<R: Rng + ?Sized>(cfg: &DropConfig, rng: &mut R) -> Drop {
    let pmf = layer_count_pmf(cfg.max_layers);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut n_layers = cfg.max_layers;
    for (i, p) in pmf.iter().enumerate() {
        acc += p;
        if u < acc {
            n_layers = i + 1;
            break;
        }
    }
    let speeds_mps: Vec<f64> = (0..n_layers).map(|_| uniform(rng, cfg.speed_range)).collect();
    let fading = speeds_mps
        .iter()
        .map(|&v| LayerFading {
            doppler_hz: cfg.numerology.doppler_hz(v),
            delay_spread_s: uniform(rng, cfg.delay_spread_range),
        })
        .collect();
    Drop {
        n_layers,
        speeds_mps,
        fading,
        snr_db: uniform(rng, cfg.snr_range_db),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symbol_duration_at_30khz() {
        let n = Numerology::default();
        assert!((n.symbol_duration() - 0.5e-3 / 14.0).abs() < 1e-15);
    }

    #[test]
    fn max_speed_doppler_near_400hz() {
        let fd = Numerology::default().doppler_hz(56.0);
        assert!((fd - 399.7).abs() < 0.5, "{}", fd);
    }
}
