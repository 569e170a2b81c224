//! Finite-difference checks of every differentiable operation and of the
//! full receiver loss, shared by the command line and the acceptance run.

use std::sync::Arc;

use mdx_autodiff::gradcheck::{check, max_rel_error};
use mdx_autodiff::{BnMode, ComplexPair, Graph, RunningStats, SepConvWeights, Tensor, Var, GATHER_ZERO};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::channel::{ChannelModel, LayerFading, Numerology};
use crate::classical::NoiseMode;
use crate::constellation::{Constellation, Modulation};
use crate::error::Result;
use crate::mdx::{build, prepare, MdxConfig, MdxParams};
use crate::sim::{generate_tti, TtiSpec, DEFAULT_DMRS_SEED};
use crate::trainer::total_loss;

pub const OP_TOLERANCE: f64 = 1e-5;
pub const MODEL_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub rel_error: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.rel_error < self.tolerance
    }
}

fn uniform(r: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| r.random_range(lo..hi)).collect()).expect("shape")
}

fn away_from_zero(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = r.random_range(0.1..2.0);
            if r.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape, data).expect("shape")
}

fn weighted_sum(g: &mut Graph, x: Var, seed: u64) -> mdx_autodiff::Result<Var> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let w = uniform(&mut r, g.shape(x), -1.0, 1.0);
    let w = g.constant(w);
    let p = g.mul(x, w)?;
    Ok(g.sum(p))
}

type OpCheck = fn(u64) -> mdx_autodiff::Result<f64>;

fn elementwise(seed: u64) -> mdx_autodiff::Result<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let a = uniform(&mut r, &[3, 4], -2.0, 2.0);
    let b = away_from_zero(&mut r, &[3, 4]);
    max_rel_error(&[a, b], |g, v| {
        let s = g.add(v[0], v[1])?;
        let d = g.sub(v[0], v[1])?;
        let m = g.mul(s, d)?;
        let q = g.div(m, v[1])?;
        let q = g.scale(q, 1.7);
        let q = g.add_scalar(q, 0.3);
        let y = g.relu(q);
        let z = g.clamp(v[0], -0.05, 1.05);
        let t = g.add(y, z)?;
        weighted_sum(g, t, seed)
    })
}

fn shaping(seed: u64) -> mdx_autodiff::Result<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let a = uniform(&mut r, &[2, 3, 2], -1.0, 1.0);
    let b = uniform(&mut r, &[2, 3, 1], -1.0, 1.0);
    let s = uniform(&mut r, &[3, 3], -1.0, 1.0);
    let index: Arc<[usize]> = (0..10)
        .map(|i| if i % 4 == 3 { GATHER_ZERO } else { r.random_range(0..18) })
        .collect();
    max_rel_error(&[a, b, s], |g, v| {
        let c = g.concat_channels(&[v[0], v[1]])?;
        let c = g.broadcast_mul(c, v[2])?;
        let f = g.reshape(c, &[18])?;
        let h = g.gather(f, index.clone(), &[2, 5])?;
        let h2 = g.mul(h, h)?;
        let m = g.reduce_mean(h2)?;
        let w = weighted_sum(g, f, seed)?;
        let t = g.mul(m, w)?;
        Ok(g.sum(t))
    })
}

fn matmul(seed: u64) -> mdx_autodiff::Result<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let ins: Vec<Tensor> = (0..4).map(|_| uniform(&mut r, &[2, 3, 2], -1.0, 1.0)).collect();
    max_rel_error(&ins, |g, v| {
        let a = ComplexPair::new(v[0], v[1]);
        let b = ComplexPair::new(v[2], v[3]);
        let p = g.complex_matmul(a, b, true)?;
        let q = g.complex_matmul(a, p, false)?;
        let at = g.complex_adjoint(a)?;
        let u = g.complex_matmul(at, b, false)?;
        let e = g.complex_mul(a, b)?;
        let e = g.complex_conj(e);
        let s1 = weighted_sum(g, q.re, seed)?;
        let s2 = weighted_sum(g, q.im, seed + 1)?;
        let s3 = weighted_sum(g, e.im, seed + 2)?;
        let s4 = weighted_sum(g, u.im, seed + 3)?;
        let t = g.add(s1, s2)?;
        let t = g.add(t, s3)?;
        g.add(t, s4)
    })
}

fn solve(seed: u64) -> mdx_autodiff::Result<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let n = 3;
    let ins = vec![
        uniform(&mut r, &[2, n, n], -1.0, 1.0),
        uniform(&mut r, &[2, n, n], -1.0, 1.0),
        uniform(&mut r, &[2, n, 2], -1.0, 1.0),
        uniform(&mut r, &[2, n, 2], -1.0, 1.0),
    ];
    max_rel_error(&ins, |g, v| {
        let m = ComplexPair::new(v[0], v[1]);
        let a = g.complex_matmul(m, m, true)?;
        let eye: Vec<f64> = (0..2 * n * n).map(|i| if (i % (n * n)) % (n + 1) == 0 { 0.5 } else { 0.0 }).collect();
        let eye = g.constant(Tensor::new(&[2, n, n], eye)?);
        let a = ComplexPair::new(g.add(a.re, eye)?, a.im);
        let x = g.hermitian_solve(a, ComplexPair::new(v[2], v[3]))?;
        let s1 = weighted_sum(g, x.re, seed)?;
        let s2 = weighted_sum(g, x.im, seed + 7)?;
        g.add(s1, s2)
    })
}

fn conv(seed: u64) -> mdx_autodiff::Result<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let ins = vec![
        uniform(&mut r, &[2, 4, 5, 3], -1.0, 1.0),
        uniform(&mut r, &[3, 3, 3], -1.0, 1.0),
        uniform(&mut r, &[3], -1.0, 1.0),
        uniform(&mut r, &[3, 2], -1.0, 1.0),
        uniform(&mut r, &[2], -1.0, 1.0),
    ];
    max_rel_error(&ins, |g, v| {
        let w = SepConvWeights {
            depthwise: v[1],
            depthwise_bias: v[2],
            pointwise: v[3],
            pointwise_bias: v[4],
        };
        let y = g.conv2d_separable(v[0], w)?;
        let y2 = g.mul(y, y)?;
        weighted_sum(g, y2, seed)
    })
}

fn batch_norm(seed: u64) -> mdx_autodiff::Result<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let ins = vec![
        uniform(&mut r, &[3, 2, 4], -1.0, 2.0),
        uniform(&mut r, &[4], 0.5, 1.5),
        uniform(&mut r, &[4], -0.5, 0.5),
    ];
    let mut worst: f64 = 0.0;
    for mode in [BnMode::Train { momentum: 0.1 }, BnMode::Infer] {
        let e = max_rel_error(&ins, |g, v| {
            let mut stats = RunningStats {
                mean: vec![0.1, -0.2, 0.3, 0.0],
                var: vec![1.5, 0.7, 1.0, 2.0],
                initialized: true,
            };
            let y = g.batch_norm(v[0], v[1], v[2], mode, &mut stats, 1e-3)?;
            let y2 = g.mul(y, y)?;
            let s = g.add(y2, y)?;
            weighted_sum(g, s, seed)
        })?;
        worst = worst.max(e);
    }
    Ok(worst)
}

fn losses(seed: u64) -> mdx_autodiff::Result<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let table = Constellation::new(Modulation::Qam16).demap_table();
    let xr = uniform(&mut r, &[3, 2], -1.2, 1.2);
    let xi = uniform(&mut r, &[3, 2], -1.2, 1.2);
    let t: Vec<f64> = (0..24).map(|_| r.random_range(0..2) as f64).collect();
    max_rel_error(&[xr, xi], |g, v| {
        let d = g.max_log_distance(v[0], v[1], table.clone())?;
        let d = g.scale(d, 3.0);
        let l = g.bce_with_logits(d, &t)?;
        weighted_sum(g, l, seed)
    })
}

const OPS: [(&str, OpCheck); 7] = [
    ("elementwise", elementwise),
    ("shape and gather", shaping),
    ("complex matmul", matmul),
    ("hermitian solve", solve),
    ("separable conv", conv),
    ("batch norm", batch_norm),
    ("bce and max-log demap", losses),
];

/// Per-operation checks over `instances` random draws each; reports the
/// worst relative error of each operation.
pub fn op_checks(instances: u64) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for (k, (name, f)) in OPS.iter().enumerate() {
        let mut worst: f64 = 0.0;
        for i in 0..instances {
            worst = worst.max(f(1000 * k as u64 + i)?);
        }
        out.push(CheckResult {
            name: name.to_string(),
            rel_error: worst,
            tolerance: OP_TOLERANCE,
        });
    }
    Ok(out)
}

/// Parameters moved away from their initial values so that every branch
/// (residual weights included) carries gradient.
pub fn perturbed_params(cfg: &MdxConfig, seed: u64) -> Result<MdxParams> {
    let mut p = MdxParams::init(cfg, seed)?;
    let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
    for t in p.tensors.iter_mut() {
        for v in t.data_mut() {
            *v += r.random_range(-0.3..0.3);
        }
    }
    Ok(p)
}

/// Gradient check of the full training loss with respect to every
/// parameter on one slot of 1 PRB, 2 receive antennas and 1 layer.
pub fn model_check(seed: u64) -> Result<CheckResult> {
    let cfg = MdxConfig::default();
    let params = perturbed_params(&cfg, seed)?;
    let spec = TtiSpec {
        prbs: 1,
        n_rx: 2,
        modulation: Modulation::Qpsk,
        fading: vec![LayerFading {
            doppler_hz: 100.0,
            delay_spread_s: 100e-9,
        }],
        snr_db: 5.0,
    };
    let tti = generate_tti(&spec, &ChannelModel::BlockFading, &Numerology::default(), DEFAULT_DMRS_SEED, seed)?;
    let prep = vec![prepare(&tti, NoiseMode::Estimated)?];
    let stats = params.bn_stats.clone();
    let reports = check(&params.tensors, |g, vars| {
        let mut st = stats.clone();
        let nodes = build(g, vars, &params.config, &params.idx, &mut st, true, &[&tti], &prep)
            .map_err(|e| mdx_autodiff::AutodiffError::State(e.to_string()))?;
        let (loss, _) = total_loss(g, &nodes, &[&tti], 0.01, 0)
            .map_err(|e| mdx_autodiff::AutodiffError::State(e.to_string()))?;
        Ok(loss)
    })?;
    let analytic: Vec<f64> = reports.iter().flat_map(|r| r.analytic.iter().copied()).collect();
    let numeric: Vec<f64> = reports.iter().flat_map(|r| r.numeric.iter().copied()).collect();
    Ok(CheckResult {
        name: "receiver loss".into(),
        rel_error: mdx_autodiff::gradcheck::relative_error(&analytic, &numeric),
        tolerance: MODEL_TOLERANCE,
    })
}

/// All checks: operations, then the end-to-end loss.
pub fn full_suite(instances: u64, seed: u64) -> Result<Vec<CheckResult>> {
    let mut out = op_checks(instances)?;
    out.push(model_check(seed)?);
    Ok(out)
}
