//! Non-learned receiver processing: pilot-aided LS estimation with CDM
//! despreading, interpolation, noise estimation, LMMSE equalization with an
//! instrumented multiplication counter, and max-log demapping.

use num_complex::Complex64;

use crate::constellation::Constellation;
use crate::error::{Error, Result};
use crate::grid::{cdm_pair, GridLayout, CDM_GROUPS, SC_PER_PRB};
use crate::sim::Tti;

/// Magnitude at which LLRs are clipped.
pub const LLR_CLIP: f64 = 20.0;
/// Lower bound of the demapper noise variance.
pub const SIGMA_FLOOR: f64 = 1e-12;
/// Entries of a per-PRB learnable matrix (12 x 14).
pub const PRB_ENTRIES: usize = 12 * 14;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Channel estimate at the pilot REs of each layer.
#[derive(Clone, Debug)]
pub struct PilotEstimate {
    pub n_rx: usize,
    /// `est[layer][re * n_rx + r]`, meaningful where `covered[layer][re]`.
    pub est: Vec<Vec<Complex64>>,
    pub covered: Vec<Vec<bool>>,
}

fn raw_ls(y: &[Complex64], p: Complex64, re: usize, r: usize, n_rx: usize) -> Complex64 {
    y[re * n_rx + r] * p.conj() / p.norm_sqr()
}

/// LS estimate `p* y / |p|^2` at every pilot RE, averaged over the two
/// subcarriers of each CDM pair (which removes the other layer of the group
/// when the channel is flat across the pair).
pub fn pa_ls_estimate(y: &[Complex64], n_rx: usize, layout: &GridLayout, pilots: &[Vec<Complex64>]) -> Result<PilotEstimate> {
    let n_re = layout.n_re();
    let mut est = Vec::with_capacity(layout.n_layers);
    let mut covered = Vec::with_capacity(layout.n_layers);
    for l in 0..layout.n_layers {
        let mut e = vec![ZERO; n_re * n_rx];
        let mut c = vec![false; n_re];
        for &re in &layout.pilots[l] {
            let (f, s) = layout.coords(re);
            let re2 = layout.re(cdm_pair(f).0, s);
            let (p1, p2) = (pilots[l][re], pilots[l][re2]);
            if p1.norm_sqr() == 0.0 || p2.norm_sqr() == 0.0 {
                return Err(Error::Numerical(format!("zero pilot for layer {} at RE ({}, {})", l, f, s)));
            }
            for r in 0..n_rx {
                e[re * n_rx + r] = (raw_ls(y, p1, re, r, n_rx) + raw_ls(y, p2, re2, r, n_rx)) * 0.5;
            }
            c[re] = true;
        }
        est.push(e);
        covered.push(c);
    }
    Ok(PilotEstimate { n_rx, est, covered })
}

fn lerp(a: Complex64, b: Complex64, w: f64) -> Complex64 {
    a * (1.0 - w) + b * w
}

/// Linear interpolation in frequency across the covered comb subcarriers
/// (nearest value beyond the outermost ones), then linear interpolation in
/// time between DMRS symbols (nearest value outside the first and last).
/// Returns `h[((re * n_rx) + r) * n_tx + t]`.
pub fn interpolate_to_grid(est: &PilotEstimate, layout: &GridLayout) -> Vec<Complex64> {
    let n_rx = est.n_rx;
    let n_tx = layout.n_layers;
    let (n_sc, n_sym) = (layout.n_sc, layout.n_sym);
    let syms = &layout.dmrs_symbols;
    let mut h = vec![ZERO; layout.n_re() * n_rx * n_tx];
    let mut at_dmrs = vec![ZERO; syms.len() * n_sc];
    for t in 0..n_tx {
        for r in 0..n_rx {
            for (k, &s) in syms.iter().enumerate() {
                let known: Vec<usize> = (0..n_sc).filter(|&f| est.covered[t][layout.re(f, s)]).collect();
                let val = |f: usize| est.est[t][layout.re(f, s) * n_rx + r];
                let mut j = 0;
                for f in 0..n_sc {
                    while j + 1 < known.len() && known[j + 1] <= f {
                        j += 1;
                    }
                    let v = if known.is_empty() {
                        ZERO
                    } else if f <= known[0] {
                        val(known[0])
                    } else if j + 1 >= known.len() {
                        val(known[known.len() - 1])
                    } else {
                        let (lo, hi) = (known[j], known[j + 1]);
                        lerp(val(lo), val(hi), (f - lo) as f64 / (hi - lo) as f64)
                    };
                    at_dmrs[k * n_sc + f] = v;
                }
            }
            for f in 0..n_sc {
                for s in 0..n_sym {
                    let v = if s <= syms[0] {
                        at_dmrs[f]
                    } else if s >= syms[syms.len() - 1] {
                        at_dmrs[(syms.len() - 1) * n_sc + f]
                    } else {
                        let k = syms.iter().rposition(|&d| d <= s).unwrap();
                        let (lo, hi) = (syms[k], syms[k + 1]);
                        lerp(
                            at_dmrs[k * n_sc + f],
                            at_dmrs[(k + 1) * n_sc + f],
                            (s - lo) as f64 / (hi - lo) as f64,
                        )
                    };
                    h[((layout.re(f, s)) * n_rx + r) * n_tx + t] = v;
                }
            }
        }
    }
    h
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseMode {
    Estimated,
    Genie,
}

/// Noise variance of one slot from the DMRS REs.
///
/// * A CDM group without layers leaves its comb REs empty: their mean power
///   is the noise variance.
/// * A group with a single layer leaves the `(+,-)` cover code unused: the
///   despread residual on that code has variance `N0 / 2`.
/// * With every code in use, despread estimates of adjacent pairs differ by
///   noise of variance `N0` when the channel is flat over both pairs.
pub fn estimate_noise_variance(y: &[Complex64], n_rx: usize, layout: &GridLayout, pilots: &[Vec<Complex64>]) -> Result<f64> {
    let mean = |acc: f64, n: usize| -> Result<f64> {
        if n == 0 {
            Err(Error::Config("not enough DMRS REs to estimate the noise".into()))
        } else {
            Ok(acc / n as f64)
        }
    };
    if let Some(g) = (0..CDM_GROUPS).find(|&g| !layout.group_in_use(g)) {
        let (mut acc, mut n) = (0.0, 0);
        for f in (g..layout.n_sc).step_by(CDM_GROUPS) {
            for &s in &layout.dmrs_symbols {
                let re = layout.re(f, s);
                for r in 0..n_rx {
                    acc += y[re * n_rx + r].norm_sqr();
                    n += 1;
                }
            }
        }
        return mean(acc, n);
    }
    if let Some(g) = (0..CDM_GROUPS).find(|&g| layout.layers_in_group(g).len() == 1) {
        let l = layout.layers_in_group(g)[0];
        let (mut acc, mut n) = (0.0, 0);
        for &re in &layout.pilots[l] {
            let (f, s) = layout.coords(re);
            let (f2, first) = cdm_pair(f);
            if !first {
                continue;
            }
            let re2 = layout.re(f2, s);
            for r in 0..n_rx {
                let d = (raw_ls(y, pilots[l][re], re, r, n_rx) - raw_ls(y, pilots[l][re2], re2, r, n_rx)) * 0.5;
                acc += d.norm_sqr();
                n += 1;
            }
        }
        return Ok(2.0 * mean(acc, n)?);
    }
    let est = pa_ls_estimate(y, n_rx, layout, pilots)?;
    let (mut acc, mut n) = (0.0, 0);
    for l in 0..layout.n_layers {
        let group = layout.cdm[l].group;
        for &s in &layout.dmrs_symbols {
            // first subcarrier of each pair of this group, ascending
            let firsts: Vec<usize> = (0..layout.n_sc)
                .filter(|&f| f % CDM_GROUPS == group && cdm_pair(f).1)
                .collect();
            for w in firsts.windows(2) {
                let (a, b) = (layout.re(w[0], s), layout.re(w[1], s));
                for r in 0..n_rx {
                    acc += (est.est[l][a * n_rx + r] - est.est[l][b * n_rx + r]).norm_sqr();
                    n += 1;
                }
            }
        }
    }
    mean(acc, n)
}

#[derive(Clone, Debug)]
pub struct EqualizerOutput {
    pub n_tx: usize,
    /// `x_hat[i * n_tx + t]` for the i-th equalized RE.
    pub x_hat: Vec<Complex64>,
    pub sigma_res: Vec<f64>,
}

/// Index of RE `(f, s)` into a 12 x 14 per-PRB matrix.
#[inline]
pub fn prb_index(f: usize, s: usize) -> usize {
    (f % SC_PER_PRB) * 14 + s
}

/// In-place inversion of a Hermitian positive definite matrix (row-major,
/// full storage) with the sweep operator. Counts real multiplications;
/// reciprocals of the pivots are divisions and are not counted.
fn sweep_invert(a: &mut [Complex64], n: usize, muls: &mut u64) -> Result<()> {
    let scale = (0..n).map(|i| a[i * n + i].re.abs()).fold(0.0, f64::max);
    let mut row = vec![ZERO; n];
    let mut col = vec![ZERO; n];
    for k in 0..n {
        let d = a[k * n + k].re;
        if !(d > mdx_autodiff::PIVOT_TOL * scale) || scale == 0.0 {
            return Err(Error::Singular(format!("sweep pivot {} = {:e}", k, d)));
        }
        let inv = 1.0 / d;
        for j in (0..n).filter(|&j| j != k) {
            row[j] = a[k * n + j] * inv;
            col[j] = a[j * n + k] * inv;
            *muls += 4;
        }
        for i in (0..n).filter(|&i| i != k) {
            let aik = a[i * n + k];
            // diagonal: a_ik * a_ki / d is real
            a[i * n + i].re -= aik.re * row[i].re - aik.im * row[i].im;
            *muls += 2;
            for j in (i + 1..n).filter(|&j| j != k) {
                let v = a[i * n + j] - aik * row[j];
                *muls += 4;
                a[i * n + j] = v;
                a[j * n + i] = v.conj();
            }
        }
        for j in (0..n).filter(|&j| j != k) {
            a[k * n + j] = row[j];
            a[j * n + k] = col[j];
        }
        a[k * n + k] = Complex64::new(-inv, 0.0);
    }
    a.iter_mut().for_each(|v| *v = -*v);
    Ok(())
}

/// LMMSE equalization of one RE. `h` is `n_rx x n_tx` row-major. Writes the
/// unbiased estimates and post-equalization residual variances, and adds the
/// real multiplications spent to `muls`:
/// `2 N^3 + 6 M N^2 + 6 M N - 2 N + 2` for `M = n_rx`, `N = n_tx`.
pub fn lmmse_re(
    h: &[Complex64],
    y: &[Complex64],
    n_rx: usize,
    n_tx: usize,
    sigma2: f64,
    psi: f64,
    x_out: &mut [Complex64],
    s_out: &mut [f64],
    muls: &mut u64,
) -> Result<()> {
    let (m, n) = (n_rx, n_tx);
    let sigma_adj = psi * sigma2;
    // loading `sigma_adj * I` is one scalar product
    *muls += 2;
    let mut a = vec![ZERO; n * n];
    for i in 0..n {
        let mut d = 0.0;
        for r in 0..m {
            d += h[r * n + i].norm_sqr();
        }
        *muls += 2 * m as u64;
        a[i * n + i] = Complex64::new(d + sigma_adj, 0.0);
        for j in i + 1..n {
            let mut v = ZERO;
            for r in 0..m {
                v += h[r * n + i].conj() * h[r * n + j];
            }
            *muls += 4 * m as u64;
            a[i * n + j] = v;
            a[j * n + i] = v.conj();
        }
    }
    sweep_invert(&mut a, n, muls)?;
    // G = A^{-1} H^H, n x m
    let mut g = vec![ZERO; n * m];
    for i in 0..n {
        for r in 0..m {
            let mut v = ZERO;
            for k in 0..n {
                v += a[i * n + k] * h[r * n + k].conj();
            }
            g[i * m + r] = v;
        }
    }
    *muls += 4 * (n * n * m) as u64;
    for i in 0..n {
        let mut xt = ZERO;
        let mut d = 0.0;
        for r in 0..m {
            xt += g[i * m + r] * y[r];
            let gh = g[i * m + r];
            let hr = h[r * n + i];
            d += gh.re * hr.re - gh.im * hr.im;
        }
        *muls += 6 * m as u64;
        x_out[i] = Complex64::new(xt.re / d, xt.im / d);
        s_out[i] = 1.0 / d - 1.0;
    }
    Ok(())
}

/// LMMSE equalization on the listed REs. `h` is indexed like the output of
/// [`interpolate_to_grid`], `y[re * n_rx + r]`. `psi` is a 12 x 14 per-PRB
/// scale of the noise variance (all ones when `None`).
pub fn lmmse_equalize(
    h: &[Complex64],
    y: &[Complex64],
    n_rx: usize,
    n_tx: usize,
    layout: &GridLayout,
    res: &[usize],
    sigma2: f64,
    psi: Option<&[f64]>,
    muls: &mut u64,
) -> Result<EqualizerOutput> {
    let mut x_hat = vec![ZERO; res.len() * n_tx];
    let mut sigma_res = vec![0.0; res.len() * n_tx];
    let block = n_rx * n_tx;
    for (i, &re) in res.iter().enumerate() {
        let (f, s) = layout.coords(re);
        let p = psi.map_or(1.0, |p| p[prb_index(f, s)]);
        lmmse_re(
            &h[re * block..(re + 1) * block],
            &y[re * n_rx..(re + 1) * n_rx],
            n_rx,
            n_tx,
            sigma2,
            p,
            &mut x_hat[i * n_tx..(i + 1) * n_tx],
            &mut sigma_res[i * n_tx..(i + 1) * n_tx],
            muls,
        )?;
    }
    Ok(EqualizerOutput { n_tx, x_hat, sigma_res })
}

/// Bit LLRs on the data REs, `llr[(d * n_tx + t) * B + b]`, positive values
/// favouring bit 1.
#[derive(Clone, Debug, PartialEq)]
pub struct LlrGrid {
    pub n_data: usize,
    pub n_tx: usize,
    pub bits_per_symbol: usize,
    pub llr: Vec<f64>,
    /// Number of demapper variances raised to the floor.
    pub floored: usize,
}

impl LlrGrid {
    #[inline]
    pub fn at(&self, d: usize, t: usize, b: usize) -> f64 {
        self.llr[(d * self.n_tx + t) * self.bits_per_symbol + b]
    }

    /// Hard decisions of one layer in data-set order.
    pub fn hard_bits(&self, t: usize) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.n_data * self.bits_per_symbol);
        for d in 0..self.n_data {
            for b in 0..self.bits_per_symbol {
                out.push((self.at(d, t, b) > 0.0) as u8);
            }
        }
        out
    }

    /// LLRs of one layer in data-set order.
    pub fn layer(&self, t: usize) -> Vec<f64> {
        let b = self.bits_per_symbol;
        (0..self.n_data)
            .flat_map(|d| (0..b).map(move |k| (d, k)))
            .map(|(d, k)| self.at(d, t, k))
            .collect()
    }
}

/// Max-log demapping with demapper variance `gamma * phi(f', s) * sigma_res`
/// (floored at [`SIGMA_FLOOR`]) and LLRs clipped to `±LLR_CLIP`.
pub fn max_log_demap(
    eq: &EqualizerOutput,
    layout: &GridLayout,
    res: &[usize],
    constellation: &Constellation,
    gamma: f64,
    phi: Option<&[f64]>,
) -> LlrGrid {
    let b = constellation.bits_per_symbol;
    let n_tx = eq.n_tx;
    let mut llr = Vec::with_capacity(res.len() * n_tx * b);
    let mut floored = 0;
    let mut dist = vec![0.0; constellation.points.len()];
    for (i, &re) in res.iter().enumerate() {
        let (f, s) = layout.coords(re);
        let ph = phi.map_or(1.0, |p| p[prb_index(f, s)]);
        for t in 0..n_tx {
            let x = eq.x_hat[i * n_tx + t];
            let mut var = gamma * ph * eq.sigma_res[i * n_tx + t];
            if !(var > SIGMA_FLOOR) {
                var = SIGMA_FLOOR;
                floored += 1;
            }
            for (d, p) in dist.iter_mut().zip(&constellation.points) {
                *d = (x - p).norm_sqr();
            }
            for bit in 0..b {
                let mut best = [f64::INFINITY; 2];
                for (p, &d) in dist.iter().enumerate() {
                    let v = constellation.label(p, bit) as usize;
                    best[v] = best[v].min(d);
                }
                llr.push(((best[0] - best[1]) / var).clamp(-LLR_CLIP, LLR_CLIP));
            }
        }
    }
    LlrGrid {
        n_data: res.len(),
        n_tx,
        bits_per_symbol: b,
        llr,
        floored,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BaselineKind {
    LsLmmse,
    PerfectCsiLmmse,
}

/// Output of a receiver on one slot.
#[derive(Clone, Debug)]
pub struct ReceiverOutput {
    pub llr: LlrGrid,
    /// Channel estimate on the data REs, `[(d * n_rx + r) * n_tx + t]`.
    pub h_data: Vec<Complex64>,
    pub sigma2: f64,
}

/// Channel values of `h` (full-grid layout) restricted to the data REs.
pub fn restrict_to_data(h: &[Complex64], layout: &GridLayout, n_rx: usize) -> Vec<Complex64> {
    let block = n_rx * layout.n_layers;
    layout
        .data
        .iter()
        .flat_map(|&re| h[re * block..(re + 1) * block].iter().copied())
        .collect()
}

pub fn run_baseline(kind: BaselineKind, tti: &Tti, noise: NoiseMode) -> Result<ReceiverOutput> {
    let layout = &tti.layout;
    let n_tx = tti.n_tx();
    let sigma2 = match (kind, noise) {
        (BaselineKind::PerfectCsiLmmse, _) | (_, NoiseMode::Genie) => tti.channel.n0,
        (BaselineKind::LsLmmse, NoiseMode::Estimated) => {
            estimate_noise_variance(&tti.y, tti.n_rx, layout, &tti.pilots)?
        }
    };
    let h = match kind {
        BaselineKind::PerfectCsiLmmse => tti.channel.h.clone(),
        BaselineKind::LsLmmse => {
            let est = pa_ls_estimate(&tti.y, tti.n_rx, layout, &tti.pilots)?;
            interpolate_to_grid(&est, layout)
        }
    };
    let mut muls = 0;
    let eq = lmmse_equalize(&h, &tti.y, tti.n_rx, n_tx, layout, &layout.data, sigma2, None, &mut muls)?;
    let constellation = Constellation::new(tti.modulation);
    let llr = max_log_demap(&eq, layout, &layout.data, &constellation, 1.0, None);
    Ok(ReceiverOutput {
        llr,
        h_data: restrict_to_data(&h, layout, tti.n_rx),
        sigma2,
    })
}
