#![allow(dead_code)]

use mdx_autodiff::{ComplexPair, Graph, Result, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Random values bounded away from zero (keeps relu/clamp kinks out of reach
/// of the finite-difference step).
pub fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.1..2.0);
            if rng.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

/// Weighted sum `sum(w * x)` with fixed pseudo-random weights, so every
/// output element contributes to the scalar with a distinct weight.
pub fn weighted_sum(g: &mut Graph, x: Var, seed: u64) -> Result<Var> {
    let mut r = rng(seed);
    let w = uniform(&mut r, g.shape(x), -1.0, 1.0);
    let w = g.constant(w);
    let p = g.mul(x, w)?;
    Ok(g.sum(p))
}

/// Builds the Hermitian positive definite `M^H M + shift I` per batch entry
/// from parameter parts `mr`, `mi` (`[batch, n, n]`).
pub fn hermitian_pd(g: &mut Graph, mr: Var, mi: Var, shift: f64) -> Result<ComplexPair> {
    let m = ComplexPair::new(mr, mi);
    let a = g.complex_matmul(m, m, true)?;
    let s = g.shape(mr).to_vec();
    let (batch, n) = (s[0], s[1]);
    let mut eye = vec![0.0; batch * n * n];
    for b in 0..batch {
        for i in 0..n {
            eye[b * n * n + i * n + i] = shift;
        }
    }
    let eye = g.constant(Tensor::new(&s, eye)?);
    let re = g.add(a.re, eye)?;
    Ok(ComplexPair::new(re, a.im))
}
