//! Finite-difference verification of analytic gradients.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Central-difference step.
pub const STEP: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct InputReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    /// `|a - n| / max(|a|, |n|)` over the whole tensor (0 when both vanish).
    pub rel_error: f64,
}

/// Compares backprop gradients of a scalar function against central
/// differences. `f` builds the function from fresh parameter leaves, one per
/// entry of `inputs`, and returns the scalar output node.
pub fn check<F>(inputs: &[Tensor], f: F) -> Result<Vec<InputReport>>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| g.grad_tensor(v).into_data()).collect();

    let mut reports = Vec::with_capacity(inputs.len());
    let mut work = inputs.to_vec();
    for (k, a) in analytic.into_iter().enumerate() {
        let mut numeric = Vec::with_capacity(a.len());
        for i in 0..work[k].len() {
            let orig = work[k].data()[i];
            work[k].data_mut()[i] = orig + STEP;
            let up = eval(&work)?;
            work[k].data_mut()[i] = orig - STEP;
            let down = eval(&work)?;
            work[k].data_mut()[i] = orig;
            numeric.push((up - down) / (2.0 * STEP));
        }
        let rel_error = relative_error(&a, &numeric);
        reports.push(InputReport {
            analytic: a,
            numeric,
            rel_error,
        });
    }
    Ok(reports)
}

/// Largest relative error over all inputs.
pub fn max_rel_error<F>(inputs: &[Tensor], f: F) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    Ok(check(inputs, f)?
        .iter()
        .map(|r| r.rel_error)
        .fold(0.0, f64::max))
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut a.iter().zip(b).map(|(x, y)| x - y));
    let scale = norm(&mut a.iter().copied()).max(norm(&mut b.iter().copied()));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}
