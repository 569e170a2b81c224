//! Depthwise separable 2-D convolution over channel-last feature maps.

use std::cell::Cell;

use crate::error::{shape_err, AutodiffError, Result};
use crate::graph::{Function, Graph, Var};
use crate::tensor::Tensor;

/// Weights of one separable convolution: a `k x k` depthwise filter per
/// input channel followed by a 1x1 pointwise mix.
#[derive(Clone, Copy, Debug)]
pub struct SepConvWeights {
    /// `[k, k, c_in]`
    pub depthwise: Var,
    /// `[c_in]`
    pub depthwise_bias: Var,
    /// `[c_in, c_out]`
    pub pointwise: Var,
    /// `[c_out]`
    pub pointwise_bias: Var,
}

thread_local! {
    static FORWARD_MULTS: Cell<u64> = const { Cell::new(0) };
}

/// Multiplications done by separable-convolution forward passes on this
/// thread since the previous call. Taps that fall on the zero padding are
/// skipped and not counted; bias additions are not multiplications.
pub fn take_conv_mults() -> u64 {
    FORWARD_MULTS.with(|c| c.replace(0))
}

fn count_mults(n: u64) {
    FORWARD_MULTS.with(|c| c.set(c.get() + n));
}

#[derive(Clone, Copy)]
struct Dims {
    batch: usize,
    rows: usize,
    cols: usize,
    c_in: usize,
    c_out: usize,
    k: usize,
}

struct SepConv {
    x: Var,
    w: SepConvWeights,
    dims: Dims,
    /// Depthwise output, `[batch, rows, cols, c_in]`.
    depthwise_out: Vec<f64>,
}

/// `acc += a * b` elementwise, with a fixed-width path for 8 channels.
#[inline(always)]
fn mul_acc(acc: &mut [f64], a: &[f64], b: &[f64]) {
    if acc.len() == 8 {
        let acc: &mut [f64; 8] = acc.try_into().unwrap();
        let a: &[f64; 8] = a.try_into().unwrap();
        let b: &[f64; 8] = b.try_into().unwrap();
        for i in 0..8 {
            acc[i] += a[i] * b[i];
        }
    } else {
        for ((o, x), y) in acc.iter_mut().zip(a).zip(b) {
            *o += x * y;
        }
    }
}

/// `acc += alpha * x`.
#[inline(always)]
fn axpy(acc: &mut [f64], alpha: f64, x: &[f64]) {
    if acc.len() == 8 {
        let acc: &mut [f64; 8] = acc.try_into().unwrap();
        let x: &[f64; 8] = x.try_into().unwrap();
        for i in 0..8 {
            acc[i] += alpha * x[i];
        }
    } else {
        for (o, v) in acc.iter_mut().zip(x) {
            *o += alpha * v;
        }
    }
}

#[inline(always)]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    if a.len() == 8 {
        let a: &[f64; 8] = a.try_into().unwrap();
        let b: &[f64; 8] = b.try_into().unwrap();
        let mut s = [0.0; 4];
        for i in 0..4 {
            s[i] = a[i] * b[i] + a[i + 4] * b[i + 4];
        }
        (s[0] + s[1]) + (s[2] + s[3])
    } else {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }
}

/// Kernel offsets `u` with `0 <= f + u - k/2 < rows`.
#[inline]
fn taps(f: usize, rows: usize, k: usize) -> std::ops::Range<usize> {
    let h = k / 2;
    let lo = h.saturating_sub(f);
    let hi = (rows + h - f).min(k);
    lo..hi
}

fn depthwise(x: &[f64], kernel: &[f64], bias: &[f64], d: Dims) -> Vec<f64> {
    let c = d.c_in;
    let h = d.k / 2;
    let mut out = vec![0.0; d.batch * d.rows * d.cols * c];
    let mut used = 0u64;
    for n in 0..d.batch {
        for f in 0..d.rows {
            for s in 0..d.cols {
                let o = ((n * d.rows + f) * d.cols + s) * c;
                let acc = &mut out[o..o + c];
                acc.copy_from_slice(bias);
                for u in taps(f, d.rows, d.k) {
                    let fi = f + u - h;
                    for v in taps(s, d.cols, d.k) {
                        let si = s + v - h;
                        let xi = ((n * d.rows + fi) * d.cols + si) * c;
                        let ki = (u * d.k + v) * c;
                        mul_acc(acc, &x[xi..xi + c], &kernel[ki..ki + c]);
                        used += 1;
                    }
                }
            }
        }
    }
    count_mults(used * c as u64);
    out
}

impl Function for SepConv {
    fn inputs(&self) -> Vec<Var> {
        vec![
            self.x,
            self.w.depthwise,
            self.w.depthwise_bias,
            self.w.pointwise,
            self.w.pointwise_bias,
        ]
    }

    fn backward(&self, g: &Graph, _out: &Tensor, go: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let d = self.dims;
        let x = g.data(self.x);
        let dw = g.data(self.w.depthwise);
        let pw = g.data(self.w.pointwise);
        let pixels = d.batch * d.rows * d.cols;

        let mut g_pw = vec![0.0; d.c_in * d.c_out];
        let mut g_pwb = vec![0.0; d.c_out];
        let mut g_mid = vec![0.0; pixels * d.c_in];
        for p in 0..pixels {
            let gy = &go[p * d.c_out..(p + 1) * d.c_out];
            let mid = &self.depthwise_out[p * d.c_in..(p + 1) * d.c_in];
            for (acc, g) in g_pwb.iter_mut().zip(gy) {
                *acc += g;
            }
            let gm = &mut g_mid[p * d.c_in..(p + 1) * d.c_in];
            for ((row, gpw), (m, out)) in pw
                .chunks_exact(d.c_out)
                .zip(g_pw.chunks_exact_mut(d.c_out))
                .zip(mid.iter().zip(gm.iter_mut()))
            {
                *out = dot(gy, row);
                axpy(gpw, *m, gy);
            }
        }

        let mut g_dwb = vec![0.0; d.c_in];
        for p in 0..pixels {
            for c in 0..d.c_in {
                g_dwb[c] += g_mid[p * d.c_in + c];
            }
        }

        let h = d.k / 2;
        let c = d.c_in;
        let mut g_dw = vec![0.0; d.k * d.k * c];
        let mut g_x = if needs[0] { vec![0.0; x.len()] } else { Vec::new() };
        for n in 0..d.batch {
            for f in 0..d.rows {
                for s in 0..d.cols {
                    let o = ((n * d.rows + f) * d.cols + s) * c;
                    let gm = &g_mid[o..o + c];
                    for u in taps(f, d.rows, d.k) {
                        let fi = f + u - h;
                        for v in taps(s, d.cols, d.k) {
                            let si = s + v - h;
                            let xi = ((n * d.rows + fi) * d.cols + si) * c;
                            let ki = (u * d.k + v) * c;
                            mul_acc(&mut g_dw[ki..ki + c], gm, &x[xi..xi + c]);
                            if needs[0] {
                                mul_acc(&mut g_x[xi..xi + c], gm, &dw[ki..ki + c]);
                            }
                        }
                    }
                }
            }
        }
        vec![
            needs[0].then_some(g_x),
            needs[1].then_some(g_dw),
            needs[2].then_some(g_dwb),
            needs[3].then_some(g_pw),
            needs[4].then_some(g_pwb),
        ]
    }
}

impl Graph {
    /// Depthwise `k x k` convolution (stride 1, zero "same" padding) followed
    /// by a 1x1 pointwise convolution. `x` is `[batch, rows, cols, c_in]`;
    /// returns `[batch, rows, cols, c_out]`.
    pub fn conv2d_separable(&mut self, x: Var, w: SepConvWeights) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 {
            return shape_err(format!("conv input must be 4-D, got {:?}", xs));
        }
        let ks = self.shape(w.depthwise).to_vec();
        if ks.len() != 3 || ks[0] != ks[1] {
            return shape_err(format!("depthwise kernel must be [k, k, c], got {:?}", ks));
        }
        let k = ks[0];
        if k % 2 == 0 {
            return Err(AutodiffError::Config(format!("kernel size {} must be odd", k)));
        }
        let c_in = xs[3];
        let ps = self.shape(w.pointwise).to_vec();
        if ks[2] != c_in
            || self.shape(w.depthwise_bias) != [c_in]
            || ps.len() != 2
            || ps[0] != c_in
            || self.shape(w.pointwise_bias) != [ps[1]]
        {
            return shape_err(format!(
                "conv weights {:?}/{:?} do not match {} input channels",
                ks, ps, c_in
            ));
        }
        let dims = Dims {
            batch: xs[0],
            rows: xs[1],
            cols: xs[2],
            c_in,
            c_out: ps[1],
            k,
        };
        let mid = depthwise(
            self.data(x),
            self.data(w.depthwise),
            self.data(w.depthwise_bias),
            dims,
        );
        let pw = self.data(w.pointwise);
        let pwb = self.data(w.pointwise_bias);
        let pixels = dims.batch * dims.rows * dims.cols;
        let mut out = Vec::with_capacity(pixels * dims.c_out);
        for m in mid.chunks_exact(c_in) {
            let start = out.len();
            out.extend_from_slice(pwb);
            let o = &mut out[start..];
            for (&mv, row) in m.iter().zip(pw.chunks_exact(dims.c_out)) {
                axpy(o, mv, row);
            }
        }
        count_mults((pixels * c_in * dims.c_out) as u64);
        let value = Tensor::new(&[dims.batch, dims.rows, dims.cols, dims.c_out], out)?;
        Ok(self.push(
            value,
            Box::new(SepConv {
                x,
                w,
                dims,
                depthwise_out: mid,
            }),
        ))
    }
}
