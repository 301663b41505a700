//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] records each primitive as it is evaluated. Node ids are
//! handed out in evaluation order, so the node list is already a
//! topological order and [`Tape::backward`] is a single reverse sweep.

use crate::error::{Error, Result};
use crate::ops::{self, Activation, LossKind, Target};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Activation(Var, Activation),
    Mask(Var, Vec<f64>),
    Affine(Var, f64),
    Sum(Var),
    Loss(Var, Target, LossKind),
    BceLogits(Var, Tensor),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Records an input or parameter. Gradients are only reported for leaves
    /// created with `requires_grad`.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = ops::matmul(self.value(a), self.value(b))?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let value = ops::add_row(self.value(x), self.value(bias))?;
        let rg = self.needs(&[x, bias]);
        Ok(self.push(value, Op::AddRow(x, bias), rg))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        let value = ops::activation(self.value(x), kind)?;
        let rg = self.needs(&[x]);
        Ok(self.push(value, Op::Activation(x, kind), rg))
    }

    /// Seeded inverted dropout; inactive or zero-rate dropout records nothing.
    pub fn dropout(&mut self, x: Var, rate: f64, seed: u64, active: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Parameter(format!(
                "dropout rate {rate} must lie in [0, 1)"
            )));
        }
        if !active || rate == 0.0 {
            return Ok(x);
        }
        let mask = ops::dropout_mask(self.value(x).len(), rate, seed)?;
        let value = ops::apply_mask(self.value(x), &mask)?;
        let rg = self.needs(&[x]);
        Ok(self.push(value, Op::Mask(x, mask), rg))
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Result<Var> {
        let value = self.value(x).map(|v| scale * v + shift);
        value.ensure_finite("affine")?;
        let rg = self.needs(&[x]);
        Ok(self.push(value, Op::Affine(x, scale), rg))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let total = self.value(x).sum();
        let value = Tensor::new_finite(vec![1], vec![total], "sum")?;
        let rg = self.needs(&[x]);
        Ok(self.push(value, Op::Sum(x), rg))
    }

    pub fn loss(&mut self, output: Var, target: Target, kind: LossKind) -> Result<Var> {
        let value = Tensor::scalar(ops::loss(self.value(output), &target, kind)?);
        let rg = self.needs(&[output]);
        Ok(self.push(value, Op::Loss(output, target, kind), rg))
    }

    /// Binary cross-entropy on pre-sigmoid logits.
    pub fn bce_logits(&mut self, logits: Var, target: Tensor) -> Result<Var> {
        let value = Tensor::scalar(ops::bce_with_logits(self.value(logits), &target)?);
        let rg = self.needs(&[logits]);
        Ok(self.push(value, Op::BceLogits(logits, target), rg))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_value = self.value(root);
        if !root_value.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got shape {:?}",
                root_value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::new(root_value.shape().to_vec(), vec![1.0])?);

        for id in (0..=root.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (ga, gb) = ops::matmul_backward(self.value(*a), self.value(*b), &g);
                    self.accumulate(&mut grads, *a, ga);
                    self.accumulate(&mut grads, *b, gb);
                }
                Op::AddRow(x, bias) => {
                    let gb = ops::add_row_backward_bias(&g, self.value(*bias).shape());
                    self.accumulate(&mut grads, *bias, gb);
                    self.accumulate(&mut grads, *x, g);
                }
                Op::Activation(x, kind) => {
                    let gx = ops::activation_backward(*kind, self.value(*x), &node.value, &g);
                    self.accumulate(&mut grads, *x, gx);
                }
                Op::Mask(x, mask) => {
                    let gx = Tensor::new(
                        g.shape().to_vec(),
                        g.data().iter().zip(mask).map(|(g, m)| g * m).collect(),
                    )?;
                    self.accumulate(&mut grads, *x, gx);
                }
                Op::Affine(x, scale) => {
                    let gx = g.map(|v| v * scale);
                    self.accumulate(&mut grads, *x, gx);
                }
                Op::Sum(x) => {
                    let up = g.data()[0];
                    let gx = Tensor::full(self.value(*x).shape(), up)?;
                    self.accumulate(&mut grads, *x, gx);
                }
                Op::Loss(out, target, kind) => {
                    let up = g.data()[0];
                    let gx = ops::loss_backward(self.value(*out), target, *kind).map(|v| v * up);
                    self.accumulate(&mut grads, *out, gx);
                }
                Op::BceLogits(l, target) => {
                    let up = g.data()[0];
                    let gx = ops::bce_with_logits_backward(self.value(*l), target).map(|v| v * up);
                    self.accumulate(&mut grads, *l, gx);
                }
            }
        }

        for g in grads.iter().flatten() {
            g.ensure_finite("backward")?;
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let g = if g.shape() == self.value(v).shape() {
            g
        } else {
            g.reshape(self.value(v).shape().to_vec())
                .expect("gradient has the element count of its node")
        };
        match &mut grads[v.0] {
            Some(acc) => {
                for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }
}

/// Gradients of a scalar with respect to the tape's differentiable leaves.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` if `v` does not influence the root or was
    /// not marked differentiable.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Like [`Gradients::get`] but returns zeros shaped like `like` when the
    /// root does not depend on `v`.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape()).expect("valid shape"))
    }
}
