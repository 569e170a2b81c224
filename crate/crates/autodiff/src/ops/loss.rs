//! Losses and the max-log distance kernel used by soft demapping.

use std::f64::consts::LN_2;
use std::sync::Arc;

use crate::error::{shape_err, Result};
use crate::graph::{Function, Graph, Var};
use crate::tensor::Tensor;

struct BceWithLogits {
    logit: Var,
    target: Vec<f64>,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Function for BceWithLogits {
    fn inputs(&self) -> Vec<Var> {
        vec![self.logit]
    }

    fn backward(&self, g: &Graph, _out: &Tensor, go: &[f64], _needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let l = g.data(self.logit);
        vec![Some(
            go.iter()
                .zip(l.iter().zip(&self.target))
                .map(|(g, (&l, &t))| g * (sigmoid(l) - t) / LN_2)
                .collect(),
        )]
    }
}

/// Constellation lookup for [`Graph::max_log_distance`].
#[derive(Clone, Debug)]
pub struct DemapTable {
    /// `(re, im)` of every constellation point.
    pub points: Vec<[f64; 2]>,
    /// `labels[p][b]` is bit `b` of point `p`.
    pub labels: Vec<Vec<bool>>,
    pub bits_per_symbol: usize,
}

struct MaxLogDistance {
    xr: Var,
    xi: Var,
    table: Arc<DemapTable>,
    /// Per output element: (nearest point with bit 0, nearest with bit 1).
    argmin: Vec<(u32, u32)>,
}

impl Function for MaxLogDistance {
    fn inputs(&self) -> Vec<Var> {
        vec![self.xr, self.xi]
    }

    fn backward(&self, g: &Graph, _out: &Tensor, go: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let bits = self.table.bits_per_symbol;
        let n = g.value(self.xr).len();
        let mut gr = vec![0.0; n];
        let mut gi = vec![0.0; n];
        for i in 0..n {
            for b in 0..bits {
                let o = i * bits + b;
                let (p0, p1) = self.argmin[o];
                let c0 = self.table.points[p0 as usize];
                let c1 = self.table.points[p1 as usize];
                // d/dx (|x - c0|^2 - |x - c1|^2) = 2 (c1 - c0)
                gr[i] += go[o] * 2.0 * (c1[0] - c0[0]);
                gi[i] += go[o] * 2.0 * (c1[1] - c0[1]);
            }
        }
        vec![needs[0].then_some(gr), needs[1].then_some(gi)]
    }
}

impl Graph {
    /// Per-element binary cross-entropy in bits between `sigmoid(logit)` and
    /// a 0/1 target. Stable for large `|logit|`.
    pub fn bce_with_logits(&mut self, logit: Var, target: &[f64]) -> Result<Var> {
        let l = self.data(logit);
        if l.len() != target.len() {
            return shape_err(format!(
                "bce logits ({}) and targets ({}) differ in length",
                l.len(),
                target.len()
            ));
        }
        // softplus(l) - t*l, with softplus(l) = max(l,0) + ln(1 + e^{-|l|})
        let data = l
            .iter()
            .zip(target)
            .map(|(&l, &t)| (l.max(0.0) - t * l + (-l.abs()).exp().ln_1p()) / LN_2)
            .collect();
        let value = Tensor::new(self.shape(logit), data)?;
        Ok(self.push(
            value,
            Box::new(BceWithLogits {
                logit,
                target: target.to_vec(),
            }),
        ))
    }

    /// For every complex sample `x = xr + j xi` and bit position `b`,
    /// `min_{c: bit b = 0} |x - c|^2 - min_{c: bit b = 1} |x - c|^2`.
    /// Output shape is the input shape with a trailing axis of length
    /// `bits_per_symbol`. Gradients flow through the selected points.
    pub fn max_log_distance(&mut self, xr: Var, xi: Var, table: Arc<DemapTable>) -> Result<Var> {
        if self.shape(xr) != self.shape(xi) {
            return shape_err("max_log_distance real/imag shapes differ");
        }
        let bits = table.bits_per_symbol;
        let (re, im) = (self.data(xr), self.data(xi));
        let mut out = Vec::with_capacity(re.len() * bits);
        let mut argmin = Vec::with_capacity(re.len() * bits);
        let mut dist = vec![0.0; table.points.len()];
        for (&r, &i) in re.iter().zip(im) {
            for (d, p) in dist.iter_mut().zip(&table.points) {
                *d = (r - p[0]).powi(2) + (i - p[1]).powi(2);
            }
            for b in 0..bits {
                let mut best = [(f64::INFINITY, 0u32); 2];
                for (p, &d) in dist.iter().enumerate() {
                    let slot = &mut best[table.labels[p][b] as usize];
                    if d < slot.0 {
                        *slot = (d, p as u32);
                    }
                }
                out.push(best[0].0 - best[1].0);
                argmin.push((best[0].1, best[1].1));
            }
        }
        let mut shape = self.shape(xr).to_vec();
        shape.push(bits);
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(
            value,
            Box::new(MaxLogDistance {
                xr,
                xi,
                table,
                argmin,
            }),
        ))
    }
}
