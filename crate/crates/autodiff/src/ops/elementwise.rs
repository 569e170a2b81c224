//! Pointwise arithmetic, reductions and index plumbing.

use std::sync::Arc;

use crate::error::{shape_err, Result};
use crate::graph::{Function, Graph, Var};
use crate::tensor::Tensor;

/// Index value that makes [`Graph::gather`] emit a zero.
pub const GATHER_ZERO: usize = usize::MAX;

#[derive(Clone, Copy)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

struct Binary {
    kind: BinaryKind,
    a: Var,
    b: Var,
}

impl Function for Binary {
    fn inputs(&self) -> Vec<Var> {
        vec![self.a, self.b]
    }

    fn backward(&self, g: &Graph, _out: &Tensor, go: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let a = g.data(self.a);
        let b = g.data(self.b);
        let (ga, gb) = match self.kind {
            BinaryKind::Add => (
                needs[0].then(|| go.to_vec()),
                needs[1].then(|| go.to_vec()),
            ),
            BinaryKind::Sub => (
                needs[0].then(|| go.to_vec()),
                needs[1].then(|| go.iter().map(|v| -v).collect()),
            ),
            BinaryKind::Mul => (
                needs[0].then(|| go.iter().zip(b).map(|(g, b)| g * b).collect()),
                needs[1].then(|| go.iter().zip(a).map(|(g, a)| g * a).collect()),
            ),
            BinaryKind::Div => (
                needs[0].then(|| go.iter().zip(b).map(|(g, b)| g / b).collect()),
                needs[1].then(|| {
                    go.iter()
                        .zip(a.iter().zip(b))
                        .map(|(g, (a, b))| -g * a / (b * b))
                        .collect()
                }),
            ),
        };
        vec![ga, gb]
    }
}

struct Scale {
    x: Var,
    factor: f64,
}

impl Function for Scale {
    fn inputs(&self) -> Vec<Var> {
        vec![self.x]
    }

    fn backward(&self, _g: &Graph, _out: &Tensor, go: &[f64], _needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        vec![Some(go.iter().map(|g| g * self.factor).collect())]
    }
}

struct PassThrough {
    x: Var,
}

impl Function for PassThrough {
    fn inputs(&self) -> Vec<Var> {
        vec![self.x]
    }

    fn backward(&self, _g: &Graph, _out: &Tensor, go: &[f64], _needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        vec![Some(go.to_vec())]
    }
}

struct Relu {
    x: Var,
}

impl Function for Relu {
    fn inputs(&self) -> Vec<Var> {
        vec![self.x]
    }

    fn backward(&self, g: &Graph, _out: &Tensor, go: &[f64], _needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let x = g.data(self.x);
        // subgradient 0 at x == 0
        vec![Some(
            go.iter()
                .zip(x)
                .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                .collect(),
        )]
    }
}

struct Clamp {
    x: Var,
    lo: f64,
    hi: f64,
}

impl Function for Clamp {
    fn inputs(&self) -> Vec<Var> {
        vec![self.x]
    }

    fn backward(&self, g: &Graph, _out: &Tensor, go: &[f64], _needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let x = g.data(self.x);
        vec![Some(
            go.iter()
                .zip(x)
                .map(|(g, &x)| if x > self.lo && x < self.hi { *g } else { 0.0 })
                .collect(),
        )]
    }
}

/// `x * s` where `s` has the shape of a trailing suffix of `x`.
struct BroadcastMul {
    x: Var,
    s: Var,
}

impl Function for BroadcastMul {
    fn inputs(&self) -> Vec<Var> {
        vec![self.x, self.s]
    }

    fn backward(&self, g: &Graph, _out: &Tensor, go: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let x = g.data(self.x);
        let s = g.data(self.s);
        let n = s.len();
        let gx = needs[0].then(|| {
            go.chunks(n)
                .flat_map(|chunk| chunk.iter().zip(s).map(|(g, s)| g * s))
                .collect()
        });
        let gs = needs[1].then(|| {
            let mut acc = vec![0.0; n];
            for (gchunk, xchunk) in go.chunks(n).zip(x.chunks(n)) {
                for ((a, g), x) in acc.iter_mut().zip(gchunk).zip(xchunk) {
                    *a += g * x;
                }
            }
            acc
        });
        vec![gx, gs]
    }
}

struct Concat {
    inputs: Vec<Var>,
    /// Product of axis lengths before the concat axis.
    outer: usize,
    /// Per input: length of its block (axis len times inner size).
    blocks: Vec<usize>,
}

impl Function for Concat {
    fn inputs(&self) -> Vec<Var> {
        self.inputs.clone()
    }

    fn backward(&self, _g: &Graph, _out: &Tensor, go: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let total: usize = self.blocks.iter().sum();
        let mut grads: Vec<Option<Vec<f64>>> = self
            .blocks
            .iter()
            .zip(needs)
            .map(|(&b, &need)| need.then(|| Vec::with_capacity(b * self.outer)))
            .collect();
        for o in 0..self.outer {
            let mut offset = o * total;
            for (grad, &block) in grads.iter_mut().zip(&self.blocks) {
                if let Some(grad) = grad {
                    grad.extend_from_slice(&go[offset..offset + block]);
                }
                offset += block;
            }
        }
        grads
    }
}

struct Reduce {
    x: Var,
    scale: f64,
}

impl Function for Reduce {
    fn inputs(&self) -> Vec<Var> {
        vec![self.x]
    }

    fn backward(&self, g: &Graph, _out: &Tensor, go: &[f64], _needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let n = g.value(self.x).len();
        vec![Some(vec![go[0] * self.scale; n])]
    }
}

struct Gather {
    x: Var,
    index: Arc<[usize]>,
}

impl Function for Gather {
    fn inputs(&self) -> Vec<Var> {
        vec![self.x]
    }

    fn backward(&self, g: &Graph, _out: &Tensor, go: &[f64], _needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let mut gx = vec![0.0; g.value(self.x).len()];
        for (&i, &gv) in self.index.iter().zip(go) {
            if i != GATHER_ZERO {
                gx[i] += gv;
            }
        }
        vec![Some(gx)]
    }
}

impl Graph {
    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return shape_err(format!(
                "elementwise operands differ: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            ));
        }
        let av = self.data(a);
        let bv = self.data(b);
        let data: Vec<f64> = match kind {
            BinaryKind::Add => av.iter().zip(bv).map(|(x, y)| x + y).collect(),
            BinaryKind::Sub => av.iter().zip(bv).map(|(x, y)| x - y).collect(),
            BinaryKind::Mul => av.iter().zip(bv).map(|(x, y)| x * y).collect(),
            BinaryKind::Div => av.iter().zip(bv).map(|(x, y)| x / y).collect(),
        };
        let value = Tensor::new(self.shape(a), data)?;
        Ok(self.push(value, Box::new(Binary { kind, a, b })))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Div, a, b)
    }

    /// Multiplication by a constant.
    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let data = self.data(x).iter().map(|v| v * factor).collect();
        let value = Tensor::new(self.shape(x), data).expect("same shape");
        self.push(value, Box::new(Scale { x, factor }))
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    /// Addition of a constant.
    pub fn add_scalar(&mut self, x: Var, offset: f64) -> Var {
        let data = self.data(x).iter().map(|v| v + offset).collect();
        let value = Tensor::new(self.shape(x), data).expect("same shape");
        self.push(value, Box::new(PassThrough { x }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshaped(shape)?;
        Ok(self.push(value, Box::new(PassThrough { x })))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let data = self.data(x).iter().map(|&v| v.max(0.0)).collect();
        let value = Tensor::new(self.shape(x), data).expect("same shape");
        self.push(value, Box::new(Relu { x }))
    }

    /// Elementwise clamp to `[lo, hi]`; gradient is zero where clamped.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let data = self.data(x).iter().map(|&v| v.clamp(lo, hi)).collect();
        let value = Tensor::new(self.shape(x), data).expect("same shape");
        self.push(value, Box::new(Clamp { x, lo, hi }))
    }

    /// `x * s`, with `s` broadcast over the leading axes of `x`. The shape of
    /// `s` must equal a trailing suffix of the shape of `x` (a scalar always
    /// conforms).
    pub fn broadcast_mul(&mut self, x: Var, s: Var) -> Result<Var> {
        let xs = self.shape(x);
        let ss = self.shape(s);
        let scalar = self.value(s).len() == 1;
        if !scalar && (ss.len() > xs.len() || xs[xs.len() - ss.len()..] != *ss) {
            return shape_err(format!("cannot broadcast {:?} onto {:?}", ss, xs));
        }
        let sv = self.data(s);
        let n = sv.len();
        let data = self
            .data(x)
            .chunks(n)
            .flat_map(|chunk| chunk.iter().zip(sv).map(|(a, b)| a * b))
            .collect();
        let value = Tensor::new(self.shape(x), data)?;
        Ok(self.push(value, Box::new(BroadcastMul { x, s })))
    }

    /// Concatenation along `axis`. All other axes must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = inputs.first() else {
            return shape_err("concat of zero tensors");
        };
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return shape_err(format!("concat axis {} out of range for {:?}", axis, base));
        }
        let mut axis_len = 0;
        for &v in inputs {
            let s = self.shape(v);
            let conform = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !conform {
                return shape_err(format!("concat operands {:?} vs {:?}", s, base));
            }
            axis_len += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let blocks: Vec<usize> = inputs.iter().map(|&v| self.shape(v)[axis] * inner).collect();
        let mut data = Vec::with_capacity(outer * axis_len * inner);
        for o in 0..outer {
            for (&v, &block) in inputs.iter().zip(&blocks) {
                data.extend_from_slice(&self.data(v)[o * block..(o + 1) * block]);
            }
        }
        let mut shape = base;
        shape[axis] = axis_len;
        let value = Tensor::new(&shape, data)?;
        Ok(self.push(
            value,
            Box::new(Concat {
                inputs: inputs.to_vec(),
                outer,
                blocks,
            }),
        ))
    }

    /// Concatenation along the last (channel) axis.
    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var> {
        let Some(&first) = inputs.first() else {
            return shape_err("concat of zero tensors");
        };
        let axis = self.shape(first).len().saturating_sub(1);
        self.concat(inputs, axis)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().sum();
        self.push(Tensor::scalar(s), Box::new(Reduce { x, scale: 1.0 }))
    }

    pub fn reduce_mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        if n == 0 {
            return shape_err("mean of empty tensor");
        }
        let s: f64 = self.data(x).iter().sum();
        let scale = 1.0 / n as f64;
        Ok(self.push(Tensor::scalar(s * scale), Box::new(Reduce { x, scale })))
    }

    /// `out[i] = x[index[i]]`, or zero where `index[i] == GATHER_ZERO`.
    /// Backward scatters (with accumulation) into `x`.
    pub fn gather(&mut self, x: Var, index: Arc<[usize]>, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != index.len() {
            return shape_err(format!(
                "gather shape {:?} needs {} indices, got {}",
                shape,
                n,
                index.len()
            ));
        }
        let src = self.data(x);
        let mut data = Vec::with_capacity(n);
        for &i in index.iter() {
            if i == GATHER_ZERO {
                data.push(0.0);
            } else if i < src.len() {
                data.push(src[i]);
            } else {
                return shape_err(format!("gather index {} out of range {}", i, src.len()));
            }
        }
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Box::new(Gather { x, index })))
    }
}
