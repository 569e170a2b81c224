//! Computation graph and the reverse sweep.
//!
//! Nodes are appended in evaluation order, so a node's inputs always have a
//! smaller index than the node itself. The reverse sweep therefore walks the
//! node list backwards from the root, which is a reverse topological order
//! that touches each reachable node once.

use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule of a recorded operation.
pub(crate) trait Function {
    fn inputs(&self) -> Vec<Var>;

    /// Returns one gradient per input (same order as [`Function::inputs`]).
    /// Entries for inputs with `needs[i] == false` may be `None`.
    fn backward(
        &self,
        graph: &Graph,
        out: &Tensor,
        grad_out: &[f64],
        needs: &[bool],
    ) -> Vec<Option<Vec<f64>>>;
}

struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    func: Option<Box<dyn Function>>,
    requires_grad: bool,
}

/// A single-use tape of tensor operations.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that receives a gradient on [`Graph::backward`].
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Leaf without gradient tracking.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            func: None,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn push(&mut self, value: Tensor, func: Box<dyn Function>) -> Var {
        let requires_grad = func
            .inputs()
            .iter()
            .any(|v| self.nodes[v.0].requires_grad);
        // Constant subexpressions do not need their backward rule.
        let func = if requires_grad { Some(func) } else { None };
        self.nodes.push(Node {
            value,
            grad: None,
            func,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    #[inline]
    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    #[inline]
    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    #[inline]
    pub fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward root with respect to `v`, if `v` was
    /// reachable and tracks gradients.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Gradient as a tensor, zero-filled when `v` was not reached.
    pub fn grad_tensor(&self, v: Var) -> Tensor {
        let value = &self.nodes[v.0].value;
        match &self.nodes[v.0].grad {
            Some(g) => Tensor::new(value.shape(), g.clone()).expect("grad shape"),
            None => Tensor::zeros(value.shape()),
        }
    }

    /// Reverse sweep from a scalar root. Previous gradients are cleared.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.nodes[root.0].value.len() != 1 {
            return shape_err(format!(
                "backward root must be scalar, got shape {:?}",
                self.nodes[root.0].value.shape()
            ));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        self.nodes[root.0].grad = Some(vec![1.0]);

        for i in (0..=root.0).rev() {
            let Some(grad_out) = self.nodes[i].grad.take() else {
                continue;
            };
            let contributions = match &self.nodes[i].func {
                Some(func) => {
                    let inputs = func.inputs();
                    let needs: Vec<bool> = inputs
                        .iter()
                        .map(|v| self.nodes[v.0].requires_grad)
                        .collect();
                    let grads = func.backward(self, &self.nodes[i].value, &grad_out, &needs);
                    inputs.into_iter().zip(grads).collect::<Vec<_>>()
                }
                None => Vec::new(),
            };
            self.nodes[i].grad = Some(grad_out);
            for (input, grad) in contributions {
                let Some(grad) = grad else { continue };
                let node = &mut self.nodes[input.0];
                if !node.requires_grad {
                    continue;
                }
                debug_assert_eq!(grad.len(), node.value.len());
                match &mut node.grad {
                    Some(acc) => acc.iter_mut().zip(&grad).for_each(|(a, g)| *a += g),
                    None => node.grad = Some(grad),
                }
            }
        }
        Ok(())
    }
}
