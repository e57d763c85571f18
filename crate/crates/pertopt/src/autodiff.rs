//! Reverse-mode automatic differentiation on an append-only tape.
//!
//! A [`Tape`] records every operation performed on its [`Var`] handles during
//! the forward pass. Nodes are appended in evaluation order, so every node's
//! parents precede it; [`Var::backward`] walks the tape in reverse index
//! order and applies each operation's adjoint rule. Leaf gradients accumulate
//! across repeated `backward` calls until [`Tape::zero_grad`] resets them,
//! mirroring the zero-grad/backward/step loop the optimizers expect.
//!
//! A tape and its vars form a single-owner unit: `Tape` is not `Sync`, and
//! vars from different tapes refuse to combine. Distinct tapes are fully
//! independent and may run on different threads.
//!
//! The operation set is deliberately small: elementwise arithmetic, scalar
//! scaling, relu, clamp, rank-2 matmul, explicit row broadcasting, sum/mean
//! reductions, and a batch-mean cross-entropy. There is no implicit
//! broadcasting between tensors; row replication is its own taped operation.

use std::cell::RefCell;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Backward rule selector, plus whatever forward values the rule needs that
/// are not already stored on the parent nodes.
#[derive(Debug, Clone)]
enum Op {
    /// Leaf with gradient tracking (a parameter).
    Leaf,
    /// Leaf without gradient tracking (data, frozen values).
    Constant,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    Relu(usize),
    Clamp(usize, f64, f64),
    MatMul(usize, usize),
    BroadcastRows(usize),
    Sum(usize),
    Mean(usize),
    CrossEntropy {
        logits: usize,
        targets: Vec<usize>,
        /// Row-major softmax of the logits, cached by the forward pass.
        softmax: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    /// Accumulated gradient; populated for leaves only.
    grad: Option<Tensor>,
}

/// Append-only record of a forward computation.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Register a differentiable leaf (requires_grad = true).
    pub fn var(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Register a non-differentiable leaf.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Constant, false)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Reset all accumulated leaf gradients.
    pub fn zero_grad(&self) {
        for node in self.nodes.borrow_mut().iter_mut() {
            node.grad = None;
        }
    }

    fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }
}

/// Handle to a node on a [`Tape`]. Cheap to copy; the tensor itself lives on
/// the tape.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl<'t> Var<'t> {
    pub fn value(&self) -> Tensor {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    /// Scalar value of a single-element tensor.
    pub fn item(&self) -> f64 {
        self.tape.nodes.borrow()[self.id].value.item()
    }

    /// Accumulated gradient of a leaf. Exactly zero when no gradient has
    /// flowed into it, so unused parameters report a zero gradient rather
    /// than an absence.
    pub fn grad(&self) -> Tensor {
        let nodes = self.tape.nodes.borrow();
        let node = &nodes[self.id];
        match &node.grad {
            Some(g) => g.clone(),
            None => Tensor::zeros(node.value.shape()),
        }
    }

    fn same_tape(&self, other: &Var<'t>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::TapeMismatch)
        }
    }

    fn binary(
        &self,
        other: Var<'t>,
        op_name: &'static str,
        make_op: impl Fn(usize, usize) -> Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var<'t>> {
        self.same_tape(&other)?;
        let value = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id].value;
            let b = &nodes[other.id].value;
            if a.shape() != b.shape() {
                return Err(Error::ShapeMismatch {
                    op: op_name,
                    lhs: a.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
            let data = a
                .data()
                .iter()
                .zip(b.data())
                .map(|(&x, &y)| f(x, y))
                .collect();
            Tensor::new(a.shape().to_vec(), data).expect("shape preserved")
        };
        let rg = self.tape.requires_grad(self.id) || self.tape.requires_grad(other.id);
        Ok(self.tape.push(value, make_op(self.id, other.id), rg))
    }

    fn unary(
        &self,
        make_op: impl Fn(usize) -> Op,
        f: impl Fn(f64) -> f64,
    ) -> Var<'t> {
        let value = self.tape.nodes.borrow()[self.id].value.map(&f);
        let rg = self.tape.requires_grad(self.id);
        self.tape.push(value, make_op(self.id), rg)
    }

    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", Op::Add, |a, b| a + b)
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", Op::Sub, |a, b| a - b)
    }

    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "mul", Op::Mul, |a, b| a * b)
    }

    pub fn neg(&self) -> Var<'t> {
        self.unary(Op::Neg, |v| -v)
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        self.unary(|id| Op::Scale(id, c), |v| v * c)
    }

    /// Rectified linear unit. The subgradient at 0 is fixed to 0.
    pub fn relu(&self) -> Var<'t> {
        self.unary(Op::Relu, |v| if v > 0.0 { v } else { 0.0 })
    }

    /// Clamp to `[lo, hi]`. Gradient passes only strictly inside the range.
    pub fn clamp(&self, lo: f64, hi: f64) -> Var<'t> {
        self.unary(|id| Op::Clamp(id, lo, hi), |v| v.clamp(lo, hi))
    }

    /// Rank-2 matrix product.
    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other)?;
        let value = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id].value;
            let b = &nodes[other.id].value;
            if a.rank() != 2 {
                return Err(Error::RankMismatch {
                    op: "matmul",
                    expected: 2,
                    shape: a.shape().to_vec(),
                });
            }
            if b.rank() != 2 {
                return Err(Error::RankMismatch {
                    op: "matmul",
                    expected: 2,
                    shape: b.shape().to_vec(),
                });
            }
            let (m, k) = (a.rows(), a.cols());
            let (k2, n) = (b.rows(), b.cols());
            if k != k2 {
                return Err(Error::MatmulMismatch { m, k, k2, n });
            }
            matmul_raw(a, b, m, k, n)
        };
        let rg = self.tape.requires_grad(self.id) || self.tape.requires_grad(other.id);
        Ok(self.tape.push(value, Op::MatMul(self.id, other.id), rg))
    }

    /// Replicate a single-row tensor (`[d]` or `[1, d...]`) across `rows`
    /// leading rows. This is the only broadcast the tape supports, and it is
    /// explicit; the backward rule sums over the replicated rows.
    pub fn broadcast_rows(&self, rows: usize) -> Result<Var<'t>> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id].value;
            let shape = a.shape();
            let (row_extent, rest): (usize, &[usize]) = match shape.len() {
                0 => {
                    return Err(Error::RankMismatch {
                        op: "broadcast_rows",
                        expected: 1,
                        shape: shape.to_vec(),
                    })
                }
                1 => (1, shape),
                _ => (shape[0], &shape[1..]),
            };
            if row_extent != 1 {
                return Err(Error::InvalidArgument(format!(
                    "broadcast_rows requires a single leading row, got shape {:?}",
                    shape
                )));
            }
            let mut out_shape = vec![rows];
            out_shape.extend_from_slice(rest);
            let mut data = Vec::with_capacity(rows * a.numel());
            for _ in 0..rows {
                data.extend_from_slice(a.data());
            }
            Tensor::new(out_shape, data).expect("replicated shape")
        };
        let rg = self.tape.requires_grad(self.id);
        Ok(self.tape.push(value, Op::BroadcastRows(self.id), rg))
    }

    /// Sum of all elements, as a rank-0 scalar.
    pub fn sum(&self) -> Var<'t> {
        let value = Tensor::scalar(self.tape.nodes.borrow()[self.id].value.data().iter().sum());
        let rg = self.tape.requires_grad(self.id);
        self.tape.push(value, Op::Sum(self.id), rg)
    }

    /// Mean of all elements, as a rank-0 scalar.
    pub fn mean(&self) -> Var<'t> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let t = &nodes[self.id].value;
            Tensor::scalar(t.data().iter().sum::<f64>() / t.numel() as f64)
        };
        let rg = self.tape.requires_grad(self.id);
        self.tape.push(value, Op::Mean(self.id), rg)
    }

    /// Mean over the batch of `-log softmax(logits)[target]`, stabilized by
    /// max subtraction. `self` must be `[batch, classes]` logits.
    pub fn cross_entropy(&self, targets: &[usize]) -> Result<Var<'t>> {
        let (value, softmax) = {
            let nodes = self.tape.nodes.borrow();
            let logits = &nodes[self.id].value;
            if logits.rank() != 2 {
                return Err(Error::RankMismatch {
                    op: "cross_entropy",
                    expected: 2,
                    shape: logits.shape().to_vec(),
                });
            }
            let (batch, classes) = (logits.rows(), logits.cols());
            if batch == 0 {
                return Err(Error::InvalidArgument(
                    "cross_entropy requires a non-empty batch".into(),
                ));
            }
            if targets.len() != batch {
                return Err(Error::InvalidArgument(format!(
                    "cross_entropy got {} targets for batch of {}",
                    targets.len(),
                    batch
                )));
            }
            let mut softmax = vec![0.0; batch * classes];
            let mut total = 0.0;
            for (i, &target) in targets.iter().enumerate() {
                if target >= classes {
                    return Err(Error::TargetOutOfRange {
                        index: target,
                        classes,
                    });
                }
                let row = logits.row(i);
                let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                let mut denom = 0.0;
                for (j, &v) in row.iter().enumerate() {
                    let e = (v - max).exp();
                    softmax[i * classes + j] = e;
                    denom += e;
                }
                for j in 0..classes {
                    softmax[i * classes + j] /= denom;
                }
                // -log softmax[target] = log(denom) - (v_t - max)
                total += denom.ln() - (row[target] - max);
            }
            (Tensor::scalar(total / batch as f64), softmax)
        };
        let rg = self.tape.requires_grad(self.id);
        Ok(self.tape.push(
            value,
            Op::CrossEntropy {
                logits: self.id,
                targets: targets.to_vec(),
                softmax,
            },
            rg,
        ))
    }

    /// Reverse-mode gradient pass seeded at this scalar. Gradients of leaf
    /// vars accumulate into the tape; read them back with [`Var::grad`].
    pub fn backward(&self) -> Result<()> {
        let mut nodes = self.tape.nodes.borrow_mut();
        {
            let loss = &nodes[self.id].value;
            if loss.numel() != 1 {
                return Err(Error::NonScalarLoss {
                    shape: loss.shape().to_vec(),
                });
            }
        }

        // Local adjoints for this pass; only leaf adjoints persist.
        let mut adjoint: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        adjoint[self.id] = Some(vec![1.0]);

        for id in (0..=self.id).rev() {
            if !nodes[id].requires_grad {
                continue;
            }
            let Some(up) = adjoint[id].take() else {
                continue;
            };
            let op = nodes[id].op.clone();
            match op {
                Op::Leaf => {
                    let node = &mut nodes[id];
                    let grad = node
                        .grad
                        .get_or_insert_with(|| Tensor::zeros(node.value.shape()));
                    for (g, u) in grad.data_mut().iter_mut().zip(&up) {
                        *g += u;
                    }
                }
                Op::Constant => {}
                Op::Add(a, b) => {
                    accumulate(&nodes, &mut adjoint, a, |buf| add_assign(buf, &up, 1.0));
                    accumulate(&nodes, &mut adjoint, b, |buf| add_assign(buf, &up, 1.0));
                }
                Op::Sub(a, b) => {
                    accumulate(&nodes, &mut adjoint, a, |buf| add_assign(buf, &up, 1.0));
                    accumulate(&nodes, &mut adjoint, b, |buf| add_assign(buf, &up, -1.0));
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (nodes[a].value.clone(), nodes[b].value.clone());
                    accumulate(&nodes, &mut adjoint, a, |buf| {
                        for ((g, u), v) in buf.iter_mut().zip(&up).zip(vb.data()) {
                            *g += u * v;
                        }
                    });
                    accumulate(&nodes, &mut adjoint, b, |buf| {
                        for ((g, u), v) in buf.iter_mut().zip(&up).zip(va.data()) {
                            *g += u * v;
                        }
                    });
                }
                Op::Neg(a) => {
                    accumulate(&nodes, &mut adjoint, a, |buf| add_assign(buf, &up, -1.0));
                }
                Op::Scale(a, c) => {
                    accumulate(&nodes, &mut adjoint, a, |buf| add_assign(buf, &up, c));
                }
                Op::Relu(a) => {
                    let va = nodes[a].value.clone();
                    accumulate(&nodes, &mut adjoint, a, |buf| {
                        for ((g, u), v) in buf.iter_mut().zip(&up).zip(va.data()) {
                            if *v > 0.0 {
                                *g += u;
                            }
                        }
                    });
                }
                Op::Clamp(a, lo, hi) => {
                    let va = nodes[a].value.clone();
                    accumulate(&nodes, &mut adjoint, a, |buf| {
                        for ((g, u), v) in buf.iter_mut().zip(&up).zip(va.data()) {
                            if *v > lo && *v < hi {
                                *g += u;
                            }
                        }
                    });
                }
                Op::MatMul(a, b) => {
                    let (va, vb) = (nodes[a].value.clone(), nodes[b].value.clone());
                    let (m, k) = (va.rows(), va.cols());
                    let n = vb.cols();
                    // dA += up · Bᵀ
                    accumulate(&nodes, &mut adjoint, a, |buf| {
                        for i in 0..m {
                            for p in 0..k {
                                let mut s = 0.0;
                                for j in 0..n {
                                    s += up[i * n + j] * vb.data()[p * n + j];
                                }
                                buf[i * k + p] += s;
                            }
                        }
                    });
                    // dB += Aᵀ · up
                    accumulate(&nodes, &mut adjoint, b, |buf| {
                        for p in 0..k {
                            for j in 0..n {
                                let mut s = 0.0;
                                for i in 0..m {
                                    s += va.data()[i * k + p] * up[i * n + j];
                                }
                                buf[p * n + j] += s;
                            }
                        }
                    });
                }
                Op::BroadcastRows(a) => {
                    let row_len = nodes[a].value.numel();
                    accumulate(&nodes, &mut adjoint, a, |buf| {
                        for (idx, u) in up.iter().enumerate() {
                            buf[idx % row_len] += u;
                        }
                    });
                }
                Op::Sum(a) => {
                    accumulate(&nodes, &mut adjoint, a, |buf| {
                        for g in buf.iter_mut() {
                            *g += up[0];
                        }
                    });
                }
                Op::Mean(a) => {
                    let n = nodes[a].value.numel() as f64;
                    accumulate(&nodes, &mut adjoint, a, |buf| {
                        for g in buf.iter_mut() {
                            *g += up[0] / n;
                        }
                    });
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    softmax,
                } => {
                    let classes = nodes[logits].value.cols();
                    let batch = targets.len() as f64;
                    accumulate(&nodes, &mut adjoint, logits, |buf| {
                        for (i, &t) in targets.iter().enumerate() {
                            for j in 0..classes {
                                let indicator = if j == t { 1.0 } else { 0.0 };
                                buf[i * classes + j] +=
                                    up[0] * (softmax[i * classes + j] - indicator) / batch;
                            }
                        }
                    });
                }
            }
        }
        Ok(())
    }
}

fn add_assign(buf: &mut [f64], up: &[f64], c: f64) {
    for (g, u) in buf.iter_mut().zip(up) {
        *g += u * c;
    }
}

/// Apply `f` to the adjoint buffer of `id`, creating it zeroed on first use.
/// Skips nodes that do not require grad so constants cost nothing.
fn accumulate(
    nodes: &[Node],
    adjoint: &mut [Option<Vec<f64>>],
    id: usize,
    f: impl FnOnce(&mut Vec<f64>),
) {
    if !nodes[id].requires_grad {
        return;
    }
    let buf = adjoint[id].get_or_insert_with(|| vec![0.0; nodes[id].value.numel()]);
    f(buf);
}

fn matmul_raw(a: &Tensor, b: &Tensor, m: usize, k: usize, n: usize) -> Tensor {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a.data()[i * k + p];
            if av == 0.0 {
                continue;
            }
            for j in 0..n {
                out[i * n + j] += av * b.data()[p * n + j];
            }
        }
    }
    Tensor::new(vec![m, n], out).expect("matmul shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::finite_difference_gradient;

    #[test]
    fn add_componentwise() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::vector(&[1.0, 2.0]));
        let b = tape.constant(Tensor::vector(&[3.0, 4.0]));
        assert_eq!(a.add(b).unwrap().value(), Tensor::vector(&[4.0, 6.0]));
    }

    #[test]
    fn relu_definition() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::vector(&[-1.0, 0.0, 2.0]));
        assert_eq!(x.relu().value(), Tensor::vector(&[0.0, 0.0, 2.0]));
    }

    #[test]
    fn clamp_definition() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::vector(&[-0.5, 0.5, 1.5]));
        assert_eq!(
            x.clamp(0.0, 1.0).value(),
            Tensor::vector(&[0.0, 0.5, 1.0])
        );
    }

    #[test]
    fn matmul_identity() {
        let tape = Tape::new();
        let i = tape.constant(Tensor::identity(2));
        let m = tape.constant(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        assert_eq!(i.matmul(m).unwrap().value(), m.value());
    }

    #[test]
    fn matmul_hand_case() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 0.0]).unwrap());
        let b = tape.constant(Tensor::matrix(2, 1, vec![5.0, 7.0]).unwrap());
        assert_eq!(
            a.matmul(b).unwrap().value(),
            Tensor::matrix(2, 1, vec![5.0, 0.0]).unwrap()
        );
    }

    #[test]
    fn matmul_inner_extent_mismatch() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        assert!(matches!(
            a.matmul(b),
            Err(Error::MatmulMismatch { k: 3, k2: 2, .. })
        ));
    }

    #[test]
    fn matmul_grad_matches_finite_differences() {
        // d/da sum(a·b) at a=[[1,1]], b=[[2],[3]]  →  [[2,3]]
        let b = Tensor::matrix(2, 1, vec![2.0, 3.0]).unwrap();
        let f = |a: &Tensor| -> crate::Result<f64> {
            let tape = Tape::new();
            let av = tape.constant(a.clone());
            let bv = tape.constant(b.clone());
            Ok(av.matmul(bv)?.sum().item())
        };
        let a0 = Tensor::matrix(1, 2, vec![1.0, 1.0]).unwrap();
        let fd = finite_difference_gradient(f, &a0, 1e-5).unwrap();

        let tape = Tape::new();
        let av = tape.var(a0);
        let bv = tape.constant(b.clone());
        av.matmul(bv).unwrap().sum().backward().unwrap();
        let grad = av.grad();

        for (g, e) in grad.data().iter().zip(fd.data()) {
            assert!((g - e).abs() < 1e-6, "grad {g} vs fd {e}");
        }
        assert!((grad.data()[0] - 2.0).abs() < 1e-9);
        assert!((grad.data()[1] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let tape = Tape::new();
        let logits = tape.constant(Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap());
        let loss = logits.cross_entropy(&[0]).unwrap();
        assert!((loss.item() - 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_saturated_no_overflow() {
        let tape = Tape::new();
        let logits = tape.constant(Tensor::matrix(1, 2, vec![1000.0, 0.0]).unwrap());
        let loss = logits.cross_entropy(&[0]).unwrap();
        assert!(loss.item().is_finite());
        assert!(loss.item().abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_three_class_value() {
        // -log(e^3 / (e^1 + e^2 + e^3)) computed independently.
        let expected = -((3.0f64).exp() / ((1.0f64).exp() + (2.0f64).exp() + (3.0f64).exp())).ln();
        let tape = Tape::new();
        let logits = tape.constant(Tensor::matrix(1, 3, vec![1.0, 2.0, 3.0]).unwrap());
        let loss = logits.cross_entropy(&[2]).unwrap();
        assert!((loss.item() - expected).abs() < 1e-12);
        assert!((loss.item() - 0.40761).abs() < 1e-5);
    }

    #[test]
    fn cross_entropy_target_out_of_range() {
        let tape = Tape::new();
        let logits = tape.constant(Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap());
        assert!(matches!(
            logits.cross_entropy(&[2]),
            Err(Error::TargetOutOfRange { index: 2, classes: 2 })
        ));
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let tape = Tape::new();
        let x = tape.var(Tensor::matrix(2, 3, vec![1.0; 6]).unwrap());
        x.sum().backward().unwrap();
        assert_eq!(x.grad(), Tensor::ones(&[2, 3]));
    }

    #[test]
    fn backward_of_square_sum() {
        let tape = Tape::new();
        let x = tape.var(Tensor::vector(&[1.0, 2.0]));
        x.mul(x).unwrap().sum().backward().unwrap();
        assert_eq!(x.grad(), Tensor::vector(&[2.0, 4.0]));
    }

    #[test]
    fn backward_requires_scalar() {
        let tape = Tape::new();
        let x = tape.var(Tensor::vector(&[1.0, 2.0]));
        assert!(matches!(
            x.backward(),
            Err(Error::NonScalarLoss { .. })
        ));
    }

    #[test]
    fn repeated_backward_accumulates() {
        let tape = Tape::new();
        let x = tape.var(Tensor::vector(&[1.0, 2.0]));
        let loss = x.sum();
        loss.backward().unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad(), Tensor::vector(&[2.0, 2.0]));
        tape.zero_grad();
        loss.backward().unwrap();
        assert_eq!(x.grad(), Tensor::vector(&[1.0, 1.0]));
    }

    #[test]
    fn unused_parameter_has_exactly_zero_grad() {
        let tape = Tape::new();
        let x = tape.var(Tensor::vector(&[1.0, 2.0]));
        let unused = tape.var(Tensor::vector(&[5.0]));
        x.sum().backward().unwrap();
        assert!(unused.grad().bits_eq(&Tensor::zeros(&[1])));
    }

    #[test]
    fn broadcast_rows_backward_sums() {
        let tape = Tape::new();
        let b = tape.var(Tensor::vector(&[1.0, 2.0]));
        let rows = b.broadcast_rows(3).unwrap();
        assert_eq!(rows.shape(), vec![3, 2]);
        rows.sum().backward().unwrap();
        assert_eq!(b.grad(), Tensor::vector(&[3.0, 3.0]));
    }

    #[test]
    fn mixing_tapes_is_an_error() {
        let t1 = Tape::new();
        let t2 = Tape::new();
        let a = t1.constant(Tensor::vector(&[1.0]));
        let b = t2.constant(Tensor::vector(&[1.0]));
        assert!(matches!(a.add(b), Err(Error::TapeMismatch)));
    }

    #[test]
    fn forward_is_deterministic_bitwise() {
        let run = || {
            let tape = Tape::new();
            let x = tape.constant(Tensor::vector(&[0.1, 0.2, 0.3]));
            let y = tape.constant(Tensor::vector(&[0.7, -0.3, 0.9]));
            x.mul(y).unwrap().relu().sum().item()
        };
        assert_eq!(run().to_bits(), run().to_bits());
    }

    #[test]
    fn two_layer_network_grad_matches_finite_differences() {
        // Fixed small MLP: x[1x3] → w1[3x4] → relu → w2[4x2] → cross-entropy.
        let x = Tensor::matrix(1, 3, vec![0.3, -0.6, 0.9]).unwrap();
        let w2 = Tensor::matrix(4, 2, vec![0.2, -0.4, 0.6, 0.1, -0.3, 0.5, 0.4, -0.2]).unwrap();
        let f = |w1: &Tensor| -> crate::Result<f64> {
            let tape = Tape::new();
            let xv = tape.constant(x.clone());
            let w1v = tape.constant(w1.clone());
            let w2v = tape.constant(w2.clone());
            let h = xv.matmul(w1v)?.relu();
            let logits = h.matmul(w2v)?;
            Ok(logits.cross_entropy(&[1])?.item())
        };
        let w1 = Tensor::matrix(
            3,
            4,
            vec![0.5, -0.2, 0.8, 0.3, 0.1, 0.7, -0.5, 0.4, -0.6, 0.2, 0.9, -0.1],
        )
        .unwrap();
        let fd = finite_difference_gradient(f, &w1, 1e-5).unwrap();

        let tape = Tape::new();
        let xv = tape.constant(x.clone());
        let w1v = tape.var(w1.clone());
        let w2v = tape.constant(w2.clone());
        let h = xv.matmul(w1v).unwrap().relu();
        let logits = h.matmul(w2v).unwrap();
        logits.cross_entropy(&[1]).unwrap().backward().unwrap();
        let grad = w1v.grad();

        for (g, e) in grad.data().iter().zip(fd.data()) {
            let denom = g.abs().max(e.abs()).max(1.0);
            assert!(
                (g - e).abs() / denom < 1e-4,
                "backward {g} vs finite difference {e}"
            );
        }
    }
}
