//! Losses and the training loop.

use std::io::Write;

use mdx_autodiff::{Adam, AdamConfig, Graph, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::classical::{restrict_to_data, NoiseMode};
use crate::error::{config_err, Error, Result};
use crate::mdx::{build, prepare, register_params, MdxParams, Mode, TtiNodes};
use crate::scenario::{Scenario, ScenarioConfig};
use crate::sim::{mix_seed, Tti};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Weight of the channel MSE term.
    pub lambda: f64,
    pub noise: NoiseMode,
    pub scenario: ScenarioConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 20_000,
            batch_size: 8,
            learning_rate: 1e-3,
            lambda: 0.01,
            noise: NoiseMode::Estimated,
            scenario: ScenarioConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return config_err("batch size must be positive");
        }
        if !(self.learning_rate > 0.0) || !(self.lambda >= 0.0) {
            return config_err("learning rate must be positive and lambda non-negative");
        }
        Ok(())
    }
}

/// Loss terms of one slot (unweighted) and its SNR weight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossTerms {
    pub bce_d: f64,
    pub bce_dals: f64,
    pub mse: f64,
    pub weight: f64,
}

/// Bit targets in LLR order `[d][t][b]`.
pub fn bit_targets(tti: &Tti) -> Vec<f64> {
    let b = tti.modulation.bits_per_symbol();
    let d_n = tti.layout.data.len();
    let mut out = Vec::with_capacity(d_n * tti.n_tx() * b);
    for d in 0..d_n {
        for layer in &tti.bits {
            out.extend(layer[d * b..(d + 1) * b].iter().map(|&v| v as f64));
        }
    }
    out
}

/// Binary cross-entropy (bits) summed over `llr` and scaled by
/// `1 / (|D| * T * B^T)`.
pub fn bce_loss(g: &mut Graph, llr: Var, targets: &[f64], n_data: usize, n_tx: usize, bits: usize) -> Result<Var> {
    let e = g.bce_with_logits(llr, targets)?;
    let s = g.sum(e);
    let norm = n_data as f64 * n_tx as f64 * (bits as f64).powi(n_tx as i32);
    Ok(g.scale(s, 1.0 / norm))
}

/// Squared error of the channel estimate on the data REs divided by
/// `|D| * R * T`.
pub fn mse_loss(g: &mut Graph, nodes: &TtiNodes, tti: &Tti) -> Result<Var> {
    let truth = restrict_to_data(&tti.channel.h, &tti.layout, tti.n_rx);
    let shape = [nodes.n_data, nodes.n_rx, nodes.n_tx];
    let tr = g.constant(Tensor::new(&shape, truth.iter().map(|c| c.re).collect())?);
    let ti = g.constant(Tensor::new(&shape, truth.iter().map(|c| c.im).collect())?);
    let dr = g.sub(nodes.h_nn.re, tr)?;
    let di = g.sub(nodes.h_nn.im, ti)?;
    let sr = g.mul(dr, dr)?;
    let si = g.mul(di, di)?;
    let sq = g.add(sr, si)?;
    let s = g.sum(sq);
    Ok(g.scale(s, 1.0 / (nodes.n_data * nodes.n_rx * nodes.n_tx) as f64))
}

/// Batch loss: mean over slots of `log2(1 + snr) (bce_d + bce_dals + lambda mse)`.
/// Fails with [`Error::NonFinite`] naming the first offending slot.
pub fn total_loss(
    g: &mut Graph,
    nodes: &[TtiNodes],
    ttis: &[&Tti],
    lambda: f64,
    iteration: usize,
) -> Result<(Var, Vec<LossTerms>)> {
    let mut parts = Vec::with_capacity(nodes.len());
    let mut terms = Vec::with_capacity(nodes.len());
    for (n, tti) in nodes.iter().zip(ttis) {
        let targets = bit_targets(tti);
        let bd = bce_loss(g, n.llr, &targets, n.n_data, n.n_tx, n.bits_per_symbol)?;
        let bi = bce_loss(g, n.llr_dals, &targets, n.n_data, n.n_tx, n.bits_per_symbol)?;
        let m = mse_loss(g, n, tti)?;
        let weight = (1.0 + tti.snr_linear()).log2();
        let t = LossTerms {
            bce_d: g.value(bd).item(),
            bce_dals: g.value(bi).item(),
            mse: g.value(m).item(),
            weight,
        };
        if ![t.bce_d, t.bce_dals, t.mse].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                iteration,
                tti_seed: tti.seed,
            });
        }
        terms.push(t);
        let bce = g.add(bd, bi)?;
        let lm = g.scale(m, lambda);
        let l = g.add(bce, lm)?;
        parts.push(g.scale(l, weight));
    }
    let mut acc = parts[0];
    for &p in &parts[1..] {
        acc = g.add(acc, p)?;
    }
    Ok((g.scale(acc, 1.0 / parts.len() as f64), terms))
}

/// One row of the loss trace.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub loss: f64,
    pub bce_d: f64,
    pub bce_dals: f64,
    pub mse: f64,
    pub mean_snr_db: f64,
}

pub const LOSS_CSV_HEADER: &str = "iteration,loss,bce_d,bce_dals,mse,mean_snr_db";

impl IterationRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
            self.iteration, self.loss, self.bce_d, self.bce_dals, self.mse, self.mean_snr_db
        )
    }
}

pub struct Trainer {
    pub config: TrainConfig,
    pub params: MdxParams,
    pub seed: u64,
    pub iteration: usize,
    scenario: Scenario,
    adam: Adam,
}

impl Trainer {
    pub fn new(config: TrainConfig, params: MdxParams, seed: u64) -> Result<Self> {
        config.validate()?;
        let scenario = Scenario::new(config.scenario.clone())?;
        let adam = Adam::new(AdamConfig {
            lr: config.learning_rate,
            ..AdamConfig::default()
        });
        Ok(Self {
            config,
            params,
            seed,
            iteration: 0,
            scenario,
            adam,
        })
    }

    /// Slots of iteration `it`; a pure function of the seed and `it`.
    pub fn batch(&self, it: usize) -> Result<Vec<Tti>> {
        let base = mix_seed(self.seed, it as u64);
        (0..self.config.batch_size)
            .map(|b| self.scenario.sample(mix_seed(base, b as u64), None))
            .collect()
    }

    /// Forward and backward on `ttis`, then one Adam update.
    pub fn step_on(&mut self, ttis: &[Tti]) -> Result<IterationRecord> {
        let refs: Vec<&Tti> = ttis.iter().collect();
        let prep = refs
            .iter()
            .map(|t| prepare(t, self.config.noise))
            .collect::<Result<Vec<_>>>()?;
        let mut g = Graph::new();
        let vars = register_params(&mut g, &self.params, Mode::Train);
        let mut stats = self.params.bn_stats.clone();
        let p = &self.params;
        let it = self.iteration;
        let nodes = build(&mut g, &vars, &p.config, &p.idx, &mut stats, true, &refs, &prep).map_err(|e| match e {
            Error::NonFinite { tti_seed, .. } => Error::NonFinite {
                iteration: it,
                tti_seed,
            },
            e => e,
        })?;
        let (loss, terms) = total_loss(&mut g, &nodes, &refs, self.config.lambda, self.iteration)?;
        let lv = g.value(loss).item();
        if !lv.is_finite() {
            return Err(Error::NonFinite {
                iteration: self.iteration,
                tti_seed: ttis[0].seed,
            });
        }
        g.backward(loss)?;
        let grads: Vec<Vec<f64>> = vars
            .iter()
            .zip(&self.params.tensors)
            .map(|(&v, t)| g.grad(v).map_or_else(|| vec![0.0; t.len()], |s| s.to_vec()))
            .collect();
        if grads.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                iteration: self.iteration,
                tti_seed: ttis[0].seed,
            });
        }
        let grad_refs: Vec<&[f64]> = grads.iter().map(|v| v.as_slice()).collect();
        let mut tensors: Vec<&mut Tensor> = self.params.tensors.iter_mut().collect();
        self.adam.step(&mut tensors, &grad_refs)?;
        self.params.bn_stats = stats;
        let n = terms.len() as f64;
        let rec = IterationRecord {
            iteration: self.iteration,
            loss: lv,
            bce_d: terms.iter().map(|t| t.bce_d).sum::<f64>() / n,
            bce_dals: terms.iter().map(|t| t.bce_dals).sum::<f64>() / n,
            mse: terms.iter().map(|t| t.mse).sum::<f64>() / n,
            mean_snr_db: ttis.iter().map(|t| t.channel.snr_db).sum::<f64>() / n,
        };
        self.iteration += 1;
        Ok(rec)
    }

    pub fn step(&mut self) -> Result<IterationRecord> {
        let batch = self.batch(self.iteration)?;
        self.step_on(&batch)
    }

    /// Runs the configured number of iterations, writing the loss trace to
    /// `log` (header first) when given.
    pub fn run(&mut self, mut log: Option<&mut dyn Write>) -> Result<Vec<IterationRecord>> {
        if let Some(w) = log.as_deref_mut() {
            writeln!(w, "{}", LOSS_CSV_HEADER)?;
        }
        let mut out = Vec::with_capacity(self.config.iterations);
        while self.iteration < self.config.iterations {
            let rec = self.step()?;
            if let Some(w) = log.as_deref_mut() {
                writeln!(w, "{}", rec.csv_row())?;
            }
            out.push(rec);
        }
        Ok(out)
    }
}
