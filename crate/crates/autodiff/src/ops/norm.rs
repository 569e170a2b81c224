//! Batch normalization over the trailing channel axis.

use crate::error::{shape_err, AutodiffError, Result};
use crate::graph::{Function, Graph, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BnMode {
    /// Normalize with batch statistics and fold them into the running
    /// statistics: `running = (1 - momentum) * running + momentum * batch`.
    Train { momentum: f64 },
    /// Normalize with the running statistics.
    Infer,
}

/// Running per-channel statistics. The first training update copies the
/// batch statistics verbatim.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub initialized: bool,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            initialized: false,
        }
    }

    fn update(&mut self, mean: &[f64], var: &[f64], momentum: f64) {
        if !self.initialized {
            self.mean.copy_from_slice(mean);
            self.var.copy_from_slice(var);
            self.initialized = true;
            return;
        }
        for (r, b) in self.mean.iter_mut().zip(mean) {
            *r = (1.0 - momentum) * *r + momentum * b;
        }
        for (r, b) in self.var.iter_mut().zip(var) {
            *r = (1.0 - momentum) * *r + momentum * b;
        }
    }
}

struct BatchNorm {
    x: Var,
    gamma: Var,
    beta: Var,
    /// Normalized input.
    x_hat: Vec<f64>,
    inv_std: Vec<f64>,
    /// Batch statistics were used (gradient flows through mean and variance).
    batch_stats: bool,
}

impl Function for BatchNorm {
    fn inputs(&self) -> Vec<Var> {
        vec![self.x, self.gamma, self.beta]
    }

    fn backward(&self, g: &Graph, _out: &Tensor, go: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let gamma = g.data(self.gamma);
        let c = gamma.len();
        let count = (go.len() / c) as f64;
        let mut g_beta = vec![0.0; c];
        let mut g_gamma = vec![0.0; c];
        for (gy, xh) in go.chunks(c).zip(self.x_hat.chunks(c)) {
            for ch in 0..c {
                g_beta[ch] += gy[ch];
                g_gamma[ch] += gy[ch] * xh[ch];
            }
        }
        let g_x = needs[0].then(|| {
            let mut gx = Vec::with_capacity(go.len());
            for (gy, xh) in go.chunks(c).zip(self.x_hat.chunks(c)) {
                for ch in 0..c {
                    let scale = gamma[ch] * self.inv_std[ch];
                    let v = if self.batch_stats {
                        scale * (gy[ch] - g_beta[ch] / count - xh[ch] * g_gamma[ch] / count)
                    } else {
                        scale * gy[ch]
                    };
                    gx.push(v);
                }
            }
            gx
        });
        vec![g_x, needs[1].then_some(g_gamma), needs[2].then_some(g_beta)]
    }
}

impl Graph {
    /// Batch normalization of `x` (`[..., C]`) with per-channel affine
    /// `gamma`, `beta` (`[C]`). Statistics are biased (population) variances.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BnMode,
        stats: &mut RunningStats,
        eps: f64,
    ) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let Some(&c) = shape.last() else {
            return shape_err("batch_norm of a scalar");
        };
        if self.shape(gamma) != [c] || self.shape(beta) != [c] || stats.mean.len() != c {
            return shape_err(format!("batch_norm affine/stats do not match {} channels", c));
        }
        let xv = self.data(x);
        let count = xv.len() / c;
        if count == 0 {
            return shape_err("batch_norm of an empty batch");
        }
        let (mean, var, batch_stats) = match mode {
            BnMode::Train { .. } => {
                let mut mean = vec![0.0; c];
                for row in xv.chunks(c) {
                    for ch in 0..c {
                        mean[ch] += row[ch];
                    }
                }
                mean.iter_mut().for_each(|m| *m /= count as f64);
                let mut var = vec![0.0; c];
                for row in xv.chunks(c) {
                    for ch in 0..c {
                        let d = row[ch] - mean[ch];
                        var[ch] += d * d;
                    }
                }
                var.iter_mut().for_each(|v| *v /= count as f64);
                (mean, var, true)
            }
            BnMode::Infer => {
                if !stats.initialized {
                    return Err(AutodiffError::State(
                        "inference batch_norm before running statistics were collected".into(),
                    ));
                }
                (stats.mean.clone(), stats.var.clone(), false)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let gv = self.data(gamma);
        let bv = self.data(beta);
        let mut x_hat = Vec::with_capacity(xv.len());
        let mut out = Vec::with_capacity(xv.len());
        for row in xv.chunks(c) {
            for ch in 0..c {
                let xh = (row[ch] - mean[ch]) * inv_std[ch];
                x_hat.push(xh);
                out.push(gv[ch] * xh + bv[ch]);
            }
        }
        if let BnMode::Train { momentum } = mode {
            stats.update(&mean, &var, momentum);
        }
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(
            value,
            Box::new(BatchNorm {
                x,
                gamma,
                beta,
                x_hat,
                inv_std,
                batch_stats,
            }),
        ))
    }
}
