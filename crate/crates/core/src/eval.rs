//! Link-level evaluation of the receivers over an SNR sweep.

use serde::{Deserialize, Serialize};

use crate::analysis::{report_csv, MetricAccumulator};
use crate::classical::{restrict_to_data, run_baseline, BaselineKind, LlrGrid, NoiseMode};
use crate::error::{config_err, Result};
use crate::mdx::MdxParams;
use crate::scenario::{Scenario, ScenarioConfig};
use crate::sim::{mix_seed, Tti};
use crate::Complex64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ReceiverKind {
    Mdx,
    LsLmmse,
    PerfectCsi,
}

impl ReceiverKind {
    pub fn name(self) -> &'static str {
        match self {
            ReceiverKind::Mdx => "mdx",
            ReceiverKind::LsLmmse => "ls_lmmse",
            ReceiverKind::PerfectCsi => "perfect_csi",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub snr_db: Vec<f64>,
    pub slots: usize,
    /// Slots per inference graph.
    pub batch_size: usize,
    pub noise: NoiseMode,
    pub receivers: Vec<ReceiverKind>,
    pub scenario: ScenarioConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            snr_db: vec![0.0, 5.0, 10.0, 15.0],
            slots: 500,
            batch_size: 16,
            noise: NoiseMode::Estimated,
            receivers: vec![ReceiverKind::Mdx, ReceiverKind::LsLmmse, ReceiverKind::PerfectCsi],
            scenario: ScenarioConfig::default(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.slots == 0 || self.batch_size == 0 || self.snr_db.is_empty() || self.receivers.is_empty() {
            return config_err("evaluation needs slots, a batch size, SNR points and receivers");
        }
        if self.snr_db.iter().any(|s| !s.is_finite()) {
            return config_err("SNR points must be finite");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SnrPoint {
    pub snr_db: f64,
    pub metrics: MetricAccumulator,
    /// Bit errors of every slot, in slot order.
    pub slot_bit_errors: Vec<u64>,
    pub slot_bits: Vec<u64>,
    pub non_finite_llrs: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReceiverCurve {
    pub receiver: ReceiverKind,
    pub points: Vec<SnrPoint>,
}

impl ReceiverCurve {
    pub fn csv(&self) -> String {
        let rows: Vec<_> = self.points.iter().map(|p| (p.snr_db, p.metrics)).collect();
        report_csv(&rows)
    }

    pub fn at(&self, snr_db: f64) -> Option<&SnrPoint> {
        self.points.iter().find(|p| p.snr_db == snr_db)
    }
}

/// Standard error of the mean per-slot BER difference `a - b` between two
/// receivers evaluated on the same slots.
pub fn paired_ber_sigma(a: &[u64], b: &[u64], bits_per_slot: &[u64]) -> f64 {
    let n = a.len().min(b.len()).min(bits_per_slot.len());
    if n < 2 {
        return 0.0;
    }
    let d: Vec<f64> = (0..n)
        .map(|i| (a[i] as f64 - b[i] as f64) / bits_per_slot[i] as f64)
        .collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (var / n as f64).sqrt()
}

fn score(acc: &mut SnrPoint, tti: &Tti, llr: &LlrGrid, h_data: Option<&[Complex64]>) {
    let mut slot_errors = 0;
    for (t, bits) in tti.bits.iter().enumerate() {
        let hard = llr.hard_bits(t);
        let before = acc.metrics.bit_errors;
        acc.metrics.add_block(&hard, bits);
        slot_errors += acc.metrics.bit_errors - before;
    }
    acc.non_finite_llrs += llr.llr.iter().filter(|v| !v.is_finite()).count() as u64;
    let truth = restrict_to_data(&tti.channel.h, &tti.layout, tti.n_rx);
    let se = h_data.map_or(0.0, |h| h.iter().zip(&truth).map(|(a, b)| (a - b).norm_sqr()).sum());
    acc.metrics.add_channel_error(se, truth.len() as u64);
    acc.metrics.slots += 1;
    acc.slot_bit_errors.push(slot_errors);
    acc.slot_bits.push(tti.bits.iter().map(|b| b.len() as u64).sum());
}

/// Evaluates every configured receiver on the same slots at each SNR:
/// slot `i` uses seed `mix_seed(seed, i)` at every SNR point, so the
/// curves share their random numbers.
pub fn evaluate(cfg: &EvalConfig, params: Option<&MdxParams>, seed: u64) -> Result<Vec<ReceiverCurve>> {
    cfg.validate()?;
    if cfg.receivers.contains(&ReceiverKind::Mdx) && params.is_none() {
        return config_err("evaluating the learned receiver needs parameters");
    }
    let scenario = Scenario::new(cfg.scenario.clone())?;
    let mut curves: Vec<ReceiverCurve> = cfg
        .receivers
        .iter()
        .map(|&r| ReceiverCurve {
            receiver: r,
            points: Vec::new(),
        })
        .collect();
    for &snr in &cfg.snr_db {
        let mut points: Vec<SnrPoint> = cfg
            .receivers
            .iter()
            .map(|_| SnrPoint {
                snr_db: snr,
                metrics: MetricAccumulator::default(),
                slot_bit_errors: Vec::with_capacity(cfg.slots),
                slot_bits: Vec::with_capacity(cfg.slots),
                non_finite_llrs: 0,
            })
            .collect();
        let mut start = 0;
        while start < cfg.slots {
            let end = (start + cfg.batch_size).min(cfg.slots);
            let ttis = (start..end)
                .map(|i| scenario.sample(mix_seed(seed, i as u64), Some(snr)))
                .collect::<Result<Vec<_>>>()?;
            for (r, point) in cfg.receivers.iter().zip(points.iter_mut()) {
                match r {
                    ReceiverKind::Mdx => {
                        let p = params.expect("checked above");
                        let refs: Vec<&Tti> = ttis.iter().collect();
                        for (tti, out) in ttis.iter().zip(p.infer(&refs, cfg.noise)?) {
                            score(point, tti, &out.llr, Some(&out.h_data));
                        }
                    }
                    ReceiverKind::LsLmmse | ReceiverKind::PerfectCsi => {
                        let kind = if *r == ReceiverKind::LsLmmse {
                            BaselineKind::LsLmmse
                        } else {
                            BaselineKind::PerfectCsiLmmse
                        };
                        for tti in &ttis {
                            let out = run_baseline(kind, tti, cfg.noise)?;
                            let h = (kind == BaselineKind::LsLmmse).then_some(out.h_data.as_slice());
                            score(point, tti, &out.llr, h);
                        }
                    }
                }
            }
            start = end;
        }
        for (c, p) in curves.iter_mut().zip(points) {
            c.points.push(p);
        }
    }
    Ok(curves)
}
