//! Complex arithmetic expressed over pairs of real tensors.

use std::sync::Arc;

use crate::error::{shape_err, Result};
use crate::graph::{Graph, Var};

/// Complex tensor as a (real, imaginary) pair of equally shaped nodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ComplexPair {
    pub re: Var,
    pub im: Var,
}

impl ComplexPair {
    pub fn new(re: Var, im: Var) -> Self {
        Self { re, im }
    }
}

impl Graph {
    fn check_pair(&self, z: ComplexPair) -> Result<()> {
        if self.shape(z.re) != self.shape(z.im) {
            return shape_err(format!(
                "complex pair parts differ: {:?} vs {:?}",
                self.shape(z.re),
                self.shape(z.im)
            ));
        }
        Ok(())
    }

    pub fn complex_add(&mut self, a: ComplexPair, b: ComplexPair) -> Result<ComplexPair> {
        Ok(ComplexPair::new(self.add(a.re, b.re)?, self.add(a.im, b.im)?))
    }

    pub fn complex_sub(&mut self, a: ComplexPair, b: ComplexPair) -> Result<ComplexPair> {
        Ok(ComplexPair::new(self.sub(a.re, b.re)?, self.sub(a.im, b.im)?))
    }

    pub fn complex_conj(&mut self, a: ComplexPair) -> ComplexPair {
        ComplexPair::new(a.re, self.neg(a.im))
    }

    /// Elementwise complex product.
    pub fn complex_mul(&mut self, a: ComplexPair, b: ComplexPair) -> Result<ComplexPair> {
        let rr = self.mul(a.re, b.re)?;
        let ii = self.mul(a.im, b.im)?;
        let ri = self.mul(a.re, b.im)?;
        let ir = self.mul(a.im, b.re)?;
        Ok(ComplexPair::new(self.sub(rr, ii)?, self.add(ri, ir)?))
    }

    /// Batched complex matrix product `op(A) B` with `op(A) = A^H` when
    /// `adjoint_a`, else `A`. Shapes follow [`Graph::batch_matmul`].
    pub fn complex_matmul(&mut self, a: ComplexPair, b: ComplexPair, adjoint_a: bool) -> Result<ComplexPair> {
        self.check_pair(a)?;
        self.check_pair(b)?;
        let t = adjoint_a;
        let rr = self.batch_matmul(a.re, b.re, t, false)?;
        let ii = self.batch_matmul(a.im, b.im, t, false)?;
        let ri = self.batch_matmul(a.re, b.im, t, false)?;
        let ir = self.batch_matmul(a.im, b.re, t, false)?;
        if adjoint_a {
            // (Ar^T - j Ai^T)(Br + j Bi)
            Ok(ComplexPair::new(self.add(rr, ii)?, self.sub(ri, ir)?))
        } else {
            Ok(ComplexPair::new(self.sub(rr, ii)?, self.add(ri, ir)?))
        }
    }

    /// Batched conjugate transpose of `[batch, p, q]` matrices.
    pub fn complex_adjoint(&mut self, a: ComplexPair) -> Result<ComplexPair> {
        self.check_pair(a)?;
        let s = self.shape(a.re).to_vec();
        if s.len() != 3 {
            return shape_err(format!("adjoint needs [batch, p, q], got {:?}", s));
        }
        let (batch, p, q) = (s[0], s[1], s[2]);
        let index: Arc<[usize]> = (0..batch)
            .flat_map(|n| (0..q).flat_map(move |j| (0..p).map(move |i| (n * p + i) * q + j)))
            .collect();
        let re = self.gather(a.re, index.clone(), &[batch, q, p])?;
        let im_t = self.gather(a.im, index, &[batch, q, p])?;
        let im = self.neg(im_t);
        Ok(ComplexPair::new(re, im))
    }

    /// `A^{-1} B` for a batch of Hermitian positive definite `A`.
    /// Fails with a singular-system error if a Cholesky pivot is not
    /// positive within a relative tolerance of 1e-12.
    pub fn hermitian_solve(&mut self, a: ComplexPair, b: ComplexPair) -> Result<ComplexPair> {
        self.check_pair(a)?;
        self.check_pair(b)?;
        let stacked = self.hermitian_solve_stacked(a.re, a.im, b.re, b.im)?;
        let shape = self.shape(b.re).to_vec();
        let plane: usize = shape.iter().product();
        let re_idx: Arc<[usize]> = (0..plane).collect();
        let im_idx: Arc<[usize]> = (plane..2 * plane).collect();
        let re = self.gather(stacked, re_idx, &shape)?;
        let im = self.gather(stacked, im_idx, &shape)?;
        Ok(ComplexPair::new(re, im))
    }
}
