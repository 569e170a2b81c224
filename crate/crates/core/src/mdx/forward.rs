use std::sync::Arc;

use mdx_autodiff::{BnMode, ComplexPair, Graph, RunningStats, SepConvWeights, Tensor, Var, GATHER_ZERO};
use num_complex::Complex64;

use super::params::{MdxConfig, MdxParams, ParamIdx, SepConvIdx};
use super::pe::positional_encoding;
use crate::classical::{
    estimate_noise_variance, interpolate_to_grid, pa_ls_estimate, prb_index, LlrGrid, NoiseMode, LLR_CLIP,
    SIGMA_FLOOR,
};
use crate::constellation::Constellation;
use crate::error::{shape_err, Error, Result};
use crate::grid::GridLayout;
use crate::sim::Tti;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Parameters are trainable, batch norm uses batch statistics and
    /// updates the running ones.
    Train,
    /// Parameters are constants, batch norm uses the running statistics
    /// (batch statistics if none have been collected yet).
    Infer,
}

/// Classical quantities computed before the graph: the interpolated PA-LS
/// estimate (full grid) and the noise variance.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub h_pals: Vec<Complex64>,
    pub sigma2: f64,
}

pub fn prepare(tti: &Tti, noise: NoiseMode) -> Result<Prepared> {
    let est = pa_ls_estimate(&tti.y, tti.n_rx, &tti.layout, &tti.pilots)?;
    let sigma2 = match noise {
        NoiseMode::Genie => tti.channel.n0,
        NoiseMode::Estimated => estimate_noise_variance(&tti.y, tti.n_rx, &tti.layout, &tti.pilots)?,
    };
    Ok(Prepared {
        h_pals: interpolate_to_grid(&est, &tti.layout),
        sigma2,
    })
}

/// Graph nodes of one slot.
#[derive(Clone, Debug)]
pub struct TtiNodes {
    /// Final LLRs, `[D, T, B]`.
    pub llr: Var,
    /// LLRs of the first LMMSE pass (unit demapper scales), `[D, T, B]`.
    pub llr_dals: Var,
    /// Refined channel on the data REs, `[D, R, T]`.
    pub h_nn: ComplexPair,
    pub n_data: usize,
    pub n_rx: usize,
    pub n_tx: usize,
    pub bits_per_symbol: usize,
    pub floored: usize,
}

fn c_const(g: &mut Graph, v: &[Complex64], shape: &[usize]) -> Result<ComplexPair> {
    let re = g.constant(Tensor::new(shape, v.iter().map(|c| c.re).collect())?);
    let im = g.constant(Tensor::new(shape, v.iter().map(|c| c.im).collect())?);
    Ok(ComplexPair::new(re, im))
}

fn gather_pair(g: &mut Graph, z: ComplexPair, index: &Arc<[usize]>, shape: &[usize]) -> Result<ComplexPair> {
    Ok(ComplexPair::new(
        g.gather(z.re, index.clone(), shape)?,
        g.gather(z.im, index.clone(), shape)?,
    ))
}

/// `[D, T]` view of a per-PRB `[12, 14]` tensor at the listed REs.
fn prb_map(g: &mut Graph, p: Var, layout: &GridLayout, res: &[usize], n_tx: usize) -> Result<Var> {
    let index: Arc<[usize]> = res
        .iter()
        .flat_map(|&re| {
            let (f, s) = layout.coords(re);
            std::iter::repeat_n(prb_index(f, s), n_tx)
        })
        .collect();
    Ok(g.gather(p, index, &[res.len(), n_tx])?)
}

/// LMMSE on the graph. `h` is `[D, R, T]`, `y` is `[D, R, 1]`. Returns the
/// unbiased estimates `[D, T]` and residual variances `[D, T]`.
fn lmmse(
    g: &mut Graph,
    h: ComplexPair,
    y: ComplexPair,
    sigma2: f64,
    psi: Var,
    layout: &GridLayout,
    res: &[usize],
) -> Result<(ComplexPair, Var)> {
    let (d, t) = (res.len(), g.shape(h.re)[2]);
    let gram = g.complex_matmul(h, h, true)?;
    let hy = g.complex_matmul(h, y, true)?;
    let load_idx: Arc<[usize]> = res
        .iter()
        .flat_map(|&re| {
            let (f, s) = layout.coords(re);
            let k = prb_index(f, s);
            (0..t * t).map(move |ij| if ij / t == ij % t { k } else { GATHER_ZERO })
        })
        .collect();
    let load = g.gather(psi, load_idx, &[d, t, t])?;
    let load = g.scale(load, sigma2);
    let a = ComplexPair::new(g.add(gram.re, load)?, gram.im);
    let rhs = ComplexPair::new(g.concat(&[hy.re, gram.re], 2)?, g.concat(&[hy.im, gram.im], 2)?);
    let sol = g.hermitian_solve(a, rhs)?;
    let w = t + 1;
    let z_idx: Arc<[usize]> = (0..d * t).map(|i| i * w).collect();
    let d_idx: Arc<[usize]> = (0..d * t).map(|i| i * w + 1 + i % t).collect();
    let z = gather_pair(g, sol, &z_idx, &[d, t])?;
    let diag = g.gather(sol.re, d_idx, &[d, t])?;
    let x = ComplexPair::new(g.div(z.re, diag)?, g.div(z.im, diag)?);
    let ones = g.constant(Tensor::full(&[d, t], 1.0));
    let inv = g.div(ones, diag)?;
    let sres = g.add_scalar(inv, -1.0);
    Ok((x, sres))
}

/// Max-log LLRs with demapper variance `sigma`, floored and clipped.
fn demap(g: &mut Graph, x: ComplexPair, sigma: Var, constellation: &Constellation) -> Result<(Var, usize)> {
    let shape = g.shape(sigma).to_vec();
    let floored = g.data(sigma).iter().filter(|&&v| !(v > SIGMA_FLOOR)).count();
    let sigma = g.clamp(sigma, SIGMA_FLOOR, f64::INFINITY);
    let dist = g.max_log_distance(x.re, x.im, constellation.demap_table())?;
    let ones = g.constant(Tensor::full(&shape, 1.0));
    let inv = g.div(ones, sigma)?;
    let b = constellation.bits_per_symbol;
    let n: usize = shape.iter().product();
    let idx: Arc<[usize]> = (0..n * b).map(|i| i / b).collect();
    let mut out_shape = shape;
    out_shape.push(b);
    let inv = g.gather(inv, idx, &out_shape)?;
    let llr = g.mul(dist, inv)?;
    Ok((g.clamp(llr, -LLR_CLIP, LLR_CLIP), floored))
}

fn sep_weights(vars: &[Var], i: SepConvIdx) -> SepConvWeights {
    SepConvWeights {
        depthwise: vars[i.dw],
        depthwise_bias: vars[i.dw_bias],
        pointwise: vars[i.pw],
        pointwise_bias: vars[i.pw_bias],
    }
}

/// Data-aided LS estimate `(y - sum_{k != n} h_k x_k) conj(x_n)` of every
/// link. `h` is `[D, R, T]`, `y` is `[D, R, 1]`, `x` is `[D, T]`.
pub fn da_ls_estimate(g: &mut Graph, h: ComplexPair, y: ComplexPair, x: ComplexPair) -> Result<ComplexPair> {
    let shape = g.shape(h.re).to_vec();
    if shape.len() != 3 || g.shape(y.re) != [shape[0], shape[1], 1] || g.shape(x.re) != [shape[0], shape[2]] {
        return shape_err("data-aided LS expects h [D, R, T], y [D, R, 1] and x [D, T]");
    }
    let (d_n, r_n, t_n) = (shape[0], shape[1], shape[2]);
    let block = r_n * t_n;
    // e = y - H x, then add back the own term h_n x_n
    let xcol = ComplexPair::new(g.reshape(x.re, &[d_n, t_n, 1])?, g.reshape(x.im, &[d_n, t_n, 1])?);
    let hx = g.complex_matmul(h, xcol, false)?;
    let e = g.complex_sub(y, hx)?;
    let e_idx: Arc<[usize]> = (0..d_n * block).map(|i| i / t_n).collect();
    let x_idx: Arc<[usize]> = (0..d_n * block).map(|i| (i / block) * t_n + i % t_n).collect();
    let e_t = gather_pair(g, e, &e_idx, &[d_n, r_n, t_n])?;
    let x_t = gather_pair(g, x, &x_idx, &[d_n, r_n, t_n])?;
    let hxn = g.complex_mul(h, x_t)?;
    let num = g.complex_add(e_t, hxn)?;
    let xc = g.complex_conj(x_t);
    g.complex_mul(num, xc).map_err(Into::into)
}

struct FirstStage {
    y: ComplexPair,
    llr_dals: Var,
    /// Link tensors `[R*T, F, S, 2]` and positional encoding `[R*T, F, S, 4]`.
    a: Var,
    b: Var,
    p: Var,
}

fn first_stage(
    g: &mut Graph,
    vars: &[Var],
    cfg: &MdxConfig,
    idx: &ParamIdx,
    tti: &Tti,
    prep: &Prepared,
    constellation: &Constellation,
) -> Result<FirstStage> {
    let layout = &tti.layout;
    let (r_n, t_n) = (tti.n_rx, tti.n_tx());
    let res = &layout.data;
    let d_n = res.len();
    let n_re = layout.n_re();
    let block = r_n * t_n;
    let hp: Vec<Complex64> = res
        .iter()
        .flat_map(|&re| prep.h_pals[re * block..(re + 1) * block].iter().copied())
        .collect();
    let yd: Vec<Complex64> = res
        .iter()
        .flat_map(|&re| tti.y[re * r_n..(re + 1) * r_n].iter().copied())
        .collect();
    let h_pals = c_const(g, &hp, &[d_n, r_n, t_n])?;
    let y = c_const(g, &yd, &[d_n, r_n, 1])?;

    let (x, sres) = lmmse(g, h_pals, y, prep.sigma2, vars[idx.psi_dals], layout, res)?;
    let (llr_dals, _) = demap(g, x, sres, constellation)?;

    let h_dals = da_ls_estimate(g, h_pals, y, x)?;

    let n_links = block;
    let mut a_val = vec![0.0; n_links * n_re * 2];
    let mut b_val = vec![0.0; n_links * n_re * 2];
    let mut b_idx = vec![GATHER_ZERO; n_links * n_re * 2];
    let plane = d_n * block;
    for r in 0..r_n {
        for t in 0..t_n {
            let l = r * t_n + t;
            for re in 0..n_re {
                let h = prep.h_pals[(re * r_n + r) * t_n + t];
                let o = (l * n_re + re) * 2;
                a_val[o] = h.re;
                a_val[o + 1] = h.im;
                let di = layout.data_index[re];
                if di == crate::grid::NOT_DATA {
                    b_val[o] = h.re;
                    b_val[o + 1] = h.im;
                } else {
                    let k = (di * r_n + r) * t_n + t;
                    b_idx[o] = k;
                    b_idx[o + 1] = plane + k;
                }
            }
        }
    }
    let shape = [n_links, layout.n_sc, layout.n_sym, 2];
    let a = g.constant(Tensor::new(&shape, a_val)?);
    let b_const = g.constant(Tensor::new(&shape, b_val)?);
    let hd_re = g.reshape(h_dals.re, &[plane])?;
    let hd_im = g.reshape(h_dals.im, &[plane])?;
    let hd = g.concat(&[hd_re, hd_im], 0)?;
    let b_data = g.gather(hd, b_idx.into(), &shape)?;
    let b = g.add(b_const, b_data)?;

    let pe_layers: Vec<Vec<f64>> = (0..t_n)
        .map(|t| positional_encoding(layout, t, cfg.pe_freq_norm, cfg.pe_time_norm))
        .collect();
    let mut p_val = Vec::with_capacity(n_links * n_re * 4);
    for _r in 0..r_n {
        for pe in &pe_layers {
            for f in 0..layout.n_sc {
                for s in 0..layout.n_sym {
                    let o = prb_index(f, s) * 4;
                    p_val.extend_from_slice(&pe[o..o + 4]);
                }
            }
        }
    }
    let p = g.constant(Tensor::new(&[n_links, layout.n_sc, layout.n_sym, 4], p_val)?);
    Ok(FirstStage {
        y,
        llr_dals,
        a,
        b,
        p,
    })
}

/// Registers the parameters as graph leaves (trainable in `Mode::Train`).
pub fn register_params(g: &mut Graph, params: &MdxParams, mode: Mode) -> Vec<Var> {
    params
        .tensors
        .iter()
        .map(|t| g.leaf(t.clone(), mode == Mode::Train))
        .collect()
}

/// Builds the receiver graph for a batch of slots sharing the PRB count.
/// `vars` are the parameter leaves in [`MdxParams`] order. With
/// `bn_train`, batch norm normalizes with batch statistics and folds them
/// into `stats`.
pub fn build(
    g: &mut Graph,
    vars: &[Var],
    cfg: &MdxConfig,
    idx: &ParamIdx,
    stats: &mut [RunningStats],
    bn_train: bool,
    ttis: &[&Tti],
    prep: &[Prepared],
) -> Result<Vec<TtiNodes>> {
    let Some(first) = ttis.first() else {
        return shape_err("empty slot batch");
    };
    let (n_sc, n_sym) = (first.layout.n_sc, first.layout.n_sym);
    if ttis.iter().any(|t| t.layout.n_sc != n_sc || t.layout.n_sym != n_sym) || prep.len() != ttis.len() {
        return shape_err("slots of one batch must share the grid size");
    }
    let mut stages = Vec::with_capacity(ttis.len());
    let mut offsets = Vec::with_capacity(ttis.len());
    let mut n_links = 0;
    for (tti, pr) in ttis.iter().zip(prep) {
        let c = Constellation::new(tti.modulation);
        offsets.push(n_links);
        n_links += tti.n_rx * tti.n_tx();
        stages.push(first_stage(g, vars, cfg, idx, tti, pr, &c)?);
    }
    let mut a = g.concat(&stages.iter().map(|s| s.a).collect::<Vec<_>>(), 0)?;
    let mut b = g.concat(&stages.iter().map(|s| s.b).collect::<Vec<_>>(), 0)?;
    let p = g.concat(&stages.iter().map(|s| s.p).collect::<Vec<_>>(), 0)?;

    let bn_mode = if bn_train {
        BnMode::Train {
            momentum: cfg.bn_momentum,
        }
    } else {
        BnMode::Infer
    };
    let gamma_idx: Arc<[usize]> = (0..n_sc * n_sym * 2)
        .map(|i| {
            let re = i / 2;
            prb_index(re / n_sym, re % n_sym)
        })
        .collect();
    for (bi, blk) in idx.blocks.iter().enumerate() {
        let x = g.concat_channels(&[a, b])?;
        let x = g.batch_norm(x, vars[blk.bn_gamma], vars[blk.bn_beta], bn_mode, &mut stats[bi], cfg.bn_eps)?;
        let x = g.relu(x);
        let x = g.concat_channels(&[x, p])?;
        let x = g.conv2d_separable(x, sep_weights(vars, blk.trunk))?;
        let x = g.relu(x);
        let a_head = g.conv2d_separable(x, sep_weights(vars, blk.a_head))?;
        let gam = g.gather(vars[blk.gamma_res], gamma_idx.clone(), &[n_sc, n_sym, 2])?;
        let a_upd = g.broadcast_mul(a_head, gam)?;
        a = g.add(a, a_upd)?;
        if let Some(bh) = blk.b_head {
            let b_upd = g.conv2d_separable(x, sep_weights(vars, bh))?;
            b = g.add(b, b_upd)?;
        }
    }

    let mut out = Vec::with_capacity(ttis.len());
    for ((tti, pr), (stage, &off)) in ttis.iter().zip(prep).zip(stages.iter().zip(&offsets)) {
        let layout = &tti.layout;
        let (r_n, t_n) = (tti.n_rx, tti.n_tx());
        let res = &layout.data;
        let d_n = res.len();
        let n_re = layout.n_re();
        let h_idx: Arc<[usize]> = (0..d_n * r_n * t_n)
            .map(|i| {
                let (d, l) = (i / (r_n * t_n), i % (r_n * t_n));
                ((off + l) * n_re + res[d]) * 2
            })
            .collect();
        let h_idx_im: Arc<[usize]> = h_idx.iter().map(|i| i + 1).collect();
        let h_nn = ComplexPair::new(
            g.gather(a, h_idx, &[d_n, r_n, t_n])?,
            g.gather(a, h_idx_im, &[d_n, r_n, t_n])?,
        );
        if g.data(h_nn.re).iter().chain(g.data(h_nn.im)).any(|v| !v.is_finite()) {
            // the caller knows the iteration
            return Err(Error::NonFinite {
                iteration: 0,
                tti_seed: tti.seed,
            });
        }
        let c = Constellation::new(tti.modulation);
        let (x, sres) = lmmse(g, h_nn, stage.y, pr.sigma2, vars[idx.psi_d], layout, res)?;
        let phi = prb_map(g, vars[idx.phi], layout, res, t_n)?;
        let sd = g.mul(sres, phi)?;
        let gm = g.gather(vars[idx.gamma], Arc::from(vec![tti.modulation.index()]), &[1])?;
        let sd = g.broadcast_mul(sd, gm)?;
        let (llr, floored) = demap(g, x, sd, &c)?;
        out.push(TtiNodes {
            llr,
            llr_dals: stage.llr_dals,
            h_nn,
            n_data: d_n,
            n_rx: r_n,
            n_tx: t_n,
            bits_per_symbol: c.bits_per_symbol,
            floored,
        });
    }
    Ok(out)
}

/// Numeric output of the receiver on one slot.
#[derive(Clone, Debug)]
pub struct MdxOutput {
    pub llr: LlrGrid,
    /// `[(d * n_rx + r) * n_tx + t]`
    pub h_data: Vec<Complex64>,
    pub sigma2: f64,
}

impl MdxParams {
    /// Inference on a batch of slots sharing the PRB count. Running
    /// statistics are not modified.
    pub fn infer(&self, ttis: &[&Tti], noise: NoiseMode) -> Result<Vec<MdxOutput>> {
        let prep = ttis.iter().map(|t| prepare(t, noise)).collect::<Result<Vec<_>>>()?;
        let mut g = Graph::new();
        let vars = register_params(&mut g, self, Mode::Infer);
        let mut stats = self.bn_stats.clone();
        let bn_train = stats.iter().any(|s| !s.initialized);
        let nodes = build(&mut g, &vars, &self.config, &self.idx, &mut stats, bn_train, ttis, &prep)?;
        Ok(nodes
            .iter()
            .zip(&prep)
            .map(|(n, p)| {
                let h_data = g
                    .data(n.h_nn.re)
                    .iter()
                    .zip(g.data(n.h_nn.im))
                    .map(|(&re, &im)| Complex64::new(re, im))
                    .collect();
                MdxOutput {
                    llr: LlrGrid {
                        n_data: n.n_data,
                        n_tx: n.n_tx,
                        bits_per_symbol: n.bits_per_symbol,
                        llr: g.data(n.llr).to_vec(),
                        floored: n.floored,
                    },
                    h_data,
                    sigma2: p.sigma2,
                }
            })
            .collect())
    }
}
