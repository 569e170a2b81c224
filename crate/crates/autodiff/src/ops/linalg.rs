//! Batched small dense linear algebra.

use crate::error::{shape_err, AutodiffError, Result};
use crate::graph::{Function, Graph, Var};
use crate::tensor::Tensor;

/// Relative pivot tolerance of the Cholesky factorization.
pub const PIVOT_TOL: f64 = 1e-12;

struct BatchMatMul {
    a: Var,
    b: Var,
    ta: bool,
    tb: bool,
    batch: usize,
    p: usize,
    q: usize,
    r: usize,
}

#[inline]
fn at(data: &[f64], base: usize, rows: usize, cols: usize, i: usize, j: usize, t: bool) -> f64 {
    // element (i, j) of the logical matrix; stored transposed when `t`
    if t {
        data[base + j * rows + i]
    } else {
        data[base + i * cols + j]
    }
}

fn bmm(a: &[f64], b: &[f64], ta: bool, tb: bool, batch: usize, p: usize, q: usize, r: usize) -> Vec<f64> {
    let mut out = vec![0.0; batch * p * r];
    for n in 0..batch {
        let (ab, bb, ob) = (n * p * q, n * q * r, n * p * r);
        for i in 0..p {
            for k in 0..q {
                let aik = at(a, ab, p, q, i, k, ta);
                if aik == 0.0 {
                    continue;
                }
                for j in 0..r {
                    out[ob + i * r + j] += aik * at(b, bb, q, r, k, j, tb);
                }
            }
        }
    }
    out
}

impl Function for BatchMatMul {
    fn inputs(&self) -> Vec<Var> {
        vec![self.a, self.b]
    }

    fn backward(&self, g: &Graph, _out: &Tensor, go: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let (batch, p, q, r) = (self.batch, self.p, self.q, self.r);
        let a = g.data(self.a);
        let b = g.data(self.b);
        let ga = needs[0].then(|| {
            // dA_eff = G B_eff^T  (p x q)
            let mut grad = vec![0.0; batch * p * q];
            for n in 0..batch {
                let (bb, ob) = (n * q * r, n * p * r);
                for i in 0..p {
                    for k in 0..q {
                        let mut s = 0.0;
                        for j in 0..r {
                            s += go[ob + i * r + j] * at(b, bb, q, r, k, j, self.tb);
                        }
                        let idx = if self.ta { k * p + i } else { i * q + k };
                        grad[n * p * q + idx] = s;
                    }
                }
            }
            grad
        });
        let gb = needs[1].then(|| {
            // dB_eff = A_eff^T G  (q x r)
            let mut grad = vec![0.0; batch * q * r];
            for n in 0..batch {
                let (ab, ob) = (n * p * q, n * p * r);
                for k in 0..q {
                    for j in 0..r {
                        let mut s = 0.0;
                        for i in 0..p {
                            s += at(a, ab, p, q, i, k, self.ta) * go[ob + i * r + j];
                        }
                        let idx = if self.tb { j * q + k } else { k * r + j };
                        grad[n * q * r + idx] = s;
                    }
                }
            }
            grad
        });
        vec![ga, gb]
    }
}

#[derive(Clone, Copy, Debug, Default)]
struct Cx {
    re: f64,
    im: f64,
}

impl Cx {
    #[inline]
    fn mul(self, o: Cx) -> Cx {
        Cx {
            re: self.re * o.re - self.im * o.im,
            im: self.re * o.im + self.im * o.re,
        }
    }
    #[inline]
    fn conj(self) -> Cx {
        Cx { re: self.re, im: -self.im }
    }
    #[inline]
    fn sub(self, o: Cx) -> Cx {
        Cx { re: self.re - o.re, im: self.im - o.im }
    }
    #[inline]
    fn scale(self, s: f64) -> Cx {
        Cx { re: self.re * s, im: self.im * s }
    }
}

/// Lower Cholesky factor of one Hermitian matrix (reads the lower triangle).
fn cholesky(ar: &[f64], ai: &[f64], n: usize) -> Result<Vec<Cx>> {
    let scale = (0..n).map(|i| ar[i * n + i].abs()).fold(0.0, f64::max);
    let mut l = vec![Cx::default(); n * n];
    for j in 0..n {
        let mut d = ar[j * n + j];
        for k in 0..j {
            let v = l[j * n + k];
            d -= v.re * v.re + v.im * v.im;
        }
        if !(d > PIVOT_TOL * scale) || scale == 0.0 {
            return Err(AutodiffError::Singular(format!(
                "pivot {} = {:e} not positive (scale {:e})",
                j, d, scale
            )));
        }
        let djj = d.sqrt();
        l[j * n + j] = Cx { re: djj, im: 0.0 };
        for i in j + 1..n {
            let mut s = Cx {
                re: ar[i * n + j],
                im: ai[i * n + j],
            };
            for k in 0..j {
                s = s.sub(l[i * n + k].mul(l[j * n + k].conj()));
            }
            l[i * n + j] = s.scale(1.0 / djj);
        }
    }
    Ok(l)
}

/// Solves `L L^H x = b` in place for each of the `m` columns of `b` (n x m).
fn cholesky_solve(l: &[Cx], b: &mut [Cx], n: usize, m: usize) {
    for c in 0..m {
        for i in 0..n {
            let mut s = b[i * m + c];
            for k in 0..i {
                s = s.sub(l[i * n + k].mul(b[k * m + c]));
            }
            b[i * m + c] = s.scale(1.0 / l[i * n + i].re);
        }
        for i in (0..n).rev() {
            let mut s = b[i * m + c];
            for k in i + 1..n {
                s = s.sub(l[k * n + i].conj().mul(b[k * m + c]));
            }
            b[i * m + c] = s.scale(1.0 / l[i * n + i].re);
        }
    }
}

struct HermitianSolve {
    inputs: [Var; 4],
    batch: usize,
    n: usize,
    m: usize,
    factors: Vec<Vec<Cx>>,
}

impl Function for HermitianSolve {
    fn inputs(&self) -> Vec<Var> {
        self.inputs.to_vec()
    }

    fn backward(&self, _g: &Graph, out: &Tensor, go: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let (batch, n, m) = (self.batch, self.n, self.m);
        let plane = batch * n * m;
        let x = out.data();
        let need_a = needs[0] || needs[1];
        let need_b = needs[2] || needs[3];
        let mut gar = vec![0.0; batch * n * n];
        let mut gai = vec![0.0; batch * n * n];
        let mut gbr = vec![0.0; plane];
        let mut gbi = vec![0.0; plane];
        for t in 0..batch {
            let off = t * n * m;
            // G_B = A^{-H} G_X = A^{-1} G_X for Hermitian A
            let mut gb: Vec<Cx> = (0..n * m)
                .map(|i| Cx {
                    re: go[off + i],
                    im: go[plane + off + i],
                })
                .collect();
            cholesky_solve(&self.factors[t], &mut gb, n, m);
            if need_b {
                for (i, v) in gb.iter().enumerate() {
                    gbr[off + i] = v.re;
                    gbi[off + i] = v.im;
                }
            }
            if need_a {
                // G_A = -G_B X^H
                for i in 0..n {
                    for j in 0..n {
                        let mut s = Cx::default();
                        for k in 0..m {
                            let xjk = Cx {
                                re: x[off + j * m + k],
                                im: x[plane + off + j * m + k],
                            };
                            let p = gb[i * m + k].mul(xjk.conj());
                            s.re += p.re;
                            s.im += p.im;
                        }
                        gar[t * n * n + i * n + j] = -s.re;
                        gai[t * n * n + i * n + j] = -s.im;
                    }
                }
            }
        }
        vec![
            needs[0].then_some(gar),
            needs[1].then_some(gai),
            needs[2].then_some(gbr),
            needs[3].then_some(gbi),
        ]
    }
}

impl Graph {
    /// Batched real matrix product. `a` is `[batch, p, q]` (stored as
    /// `[batch, q, p]` when `ta`), `b` is `[batch, q, r]` (stored as
    /// `[batch, r, q]` when `tb`). Returns `[batch, p, r]`.
    pub fn batch_matmul(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return shape_err(format!("batch_matmul operands {:?} x {:?}", sa, sb));
        }
        let (p, q) = if ta { (sa[2], sa[1]) } else { (sa[1], sa[2]) };
        let (qb, r) = if tb { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if q != qb {
            return shape_err(format!("inner dimensions {} vs {}", q, qb));
        }
        let batch = sa[0];
        let data = bmm(self.data(a), self.data(b), ta, tb, batch, p, q, r);
        let value = Tensor::new(&[batch, p, r], data)?;
        Ok(self.push(
            value,
            Box::new(BatchMatMul {
                a,
                b,
                ta,
                tb,
                batch,
                p,
                q,
                r,
            }),
        ))
    }

    /// Solves `A X = B` for a batch of Hermitian positive definite `A`
    /// (`[batch, n, n]` real and imaginary parts) and `B` (`[batch, n, m]`).
    /// Returns the stacked solution `[2, batch, n, m]` (real plane first).
    /// Use [`Graph::hermitian_solve`] for the split form.
    pub fn hermitian_solve_stacked(&mut self, ar: Var, ai: Var, br: Var, bi: Var) -> Result<Var> {
        let sa = self.shape(ar).to_vec();
        let sb = self.shape(br).to_vec();
        if sa.len() != 3 || sa[1] != sa[2] || self.shape(ai) != sa.as_slice() {
            return shape_err(format!("solve matrix must be [batch, n, n], got {:?}", sa));
        }
        if sb.len() != 3 || sb[0] != sa[0] || sb[1] != sa[1] || self.shape(bi) != sb.as_slice() {
            return shape_err(format!("solve rhs {:?} does not match {:?}", sb, sa));
        }
        let (batch, n, m) = (sa[0], sa[1], sb[2]);
        let plane = batch * n * m;
        let mut out = vec![0.0; 2 * plane];
        let mut factors = Vec::with_capacity(batch);
        {
            let (arv, aiv, brv, biv) = (self.data(ar), self.data(ai), self.data(br), self.data(bi));
            for t in 0..batch {
                let a_off = t * n * n;
                let l = cholesky(&arv[a_off..a_off + n * n], &aiv[a_off..a_off + n * n], n)?;
                let off = t * n * m;
                let mut x: Vec<Cx> = (0..n * m)
                    .map(|i| Cx {
                        re: brv[off + i],
                        im: biv[off + i],
                    })
                    .collect();
                cholesky_solve(&l, &mut x, n, m);
                for (i, v) in x.iter().enumerate() {
                    out[off + i] = v.re;
                    out[plane + off + i] = v.im;
                }
                factors.push(l);
            }
        }
        let value = Tensor::new(&[2, batch, n, m], out)?;
        Ok(self.push(
            value,
            Box::new(HermitianSolve {
                inputs: [ar, ai, br, bi],
                batch,
                n,
                m,
                factors,
            }),
        ))
    }
}
