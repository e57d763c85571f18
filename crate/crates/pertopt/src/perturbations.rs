//! Parameterized data transforms: the δ side of the optimization.
//!
//! The additive model is the workhorse: per-sample perturbations hold one δ
//! row per sample, universal perturbations hold a single row that is
//! replicated across the batch. Applying a zero δ is the identity, bitwise
//! included for per-sample perturbations, because nothing is recomputed.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::optim::ConstraintSet;
use crate::tensor::Tensor;

/// How δ relates to the batch dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerturbKind {
    /// One δ row per sample; shape equals the data shape.
    PerSample,
    /// One shared δ row `[1, d…]` replicated across the batch.
    Universal,
}

/// How δ starts out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitKind {
    Zeros,
    /// Seeded feasible point of the given constraint set.
    UniformInBall { constraint: ConstraintSet, seed: u64 },
}

/// Anything that transforms data through trainable parameters.
pub trait PerturbationModel {
    fn apply_tensor(&self, x: &Tensor) -> Result<Tensor>;
    fn parameters(&self) -> &[Tensor];
    fn parameters_mut(&mut self) -> &mut [Tensor];
}

/// Additive transform `x + δ` (per-sample) or `x + replicate(δ)` (universal).
#[derive(Debug, Clone)]
pub struct Perturbation {
    kind: PerturbKind,
    delta: [Tensor; 1],
}

impl Perturbation {
    pub fn init(kind: PerturbKind, data_shape: &[usize], init: &InitKind) -> Result<Self> {
        if data_shape.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "perturbations need a batch-leading shape of rank ≥ 2, got {data_shape:?}"
            )));
        }
        let delta_shape: Vec<usize> = match kind {
            PerturbKind::PerSample => data_shape.to_vec(),
            PerturbKind::Universal => {
                let mut s = vec![1];
                s.extend_from_slice(&data_shape[1..]);
                s
            }
        };
        let delta = match init {
            InitKind::Zeros => Tensor::zeros(&delta_shape),
            InitKind::UniformInBall { constraint, seed } => {
                constraint.sample_in_ball(&delta_shape, *seed)
            }
        };
        Ok(Perturbation { kind, delta: [delta] })
    }

    pub fn kind(&self) -> PerturbKind {
        self.kind
    }

    pub fn delta(&self) -> &Tensor {
        &self.delta[0]
    }

    pub fn delta_mut(&mut self) -> &mut Tensor {
        &mut self.delta[0]
    }

    /// Register δ on a tape as a trainable leaf.
    pub fn bind<'t>(&self, tape: &'t Tape) -> BoundPerturbation<'t> {
        BoundPerturbation {
            kind: self.kind,
            delta: tape.var(self.delta[0].clone()),
        }
    }

    fn check_shape(&self, x: &Tensor) -> Result<()> {
        let delta = &self.delta[0];
        let compatible = match self.kind {
            PerturbKind::PerSample => x.shape() == delta.shape(),
            PerturbKind::Universal => {
                x.rank() == delta.rank() && x.shape()[1..] == delta.shape()[1..]
            }
        };
        if compatible {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                op: "apply",
                lhs: x.shape().to_vec(),
                rhs: delta.shape().to_vec(),
            })
        }
    }
}

impl PerturbationModel for Perturbation {
    /// Non-taped application, for evaluation.
    fn apply_tensor(&self, x: &Tensor) -> Result<Tensor> {
        self.check_shape(x)?;
        let delta = &self.delta[0];
        match self.kind {
            PerturbKind::PerSample => x.add(delta),
            PerturbKind::Universal => {
                let mut out = x.clone();
                let row_len = delta.numel();
                for (i, v) in out.data_mut().iter_mut().enumerate() {
                    *v += delta.data()[i % row_len];
                }
                Ok(out)
            }
        }
    }

    /// Exactly the δ tensors, in a stable order, ready for an optimizer.
    fn parameters(&self) -> &[Tensor] {
        &self.delta
    }

    fn parameters_mut(&mut self) -> &mut [Tensor] {
        &mut self.delta
    }
}

/// δ bound to one tape for a differentiable apply.
pub struct BoundPerturbation<'t> {
    kind: PerturbKind,
    delta: Var<'t>,
}

impl<'t> BoundPerturbation<'t> {
    pub fn apply(&self, x: Var<'t>) -> Result<Var<'t>> {
        match self.kind {
            PerturbKind::PerSample => x.add(self.delta),
            PerturbKind::Universal => {
                let rows = x.shape()[0];
                x.add(self.delta.broadcast_rows(rows)?)
            }
        }
    }

    pub fn delta_var(&self) -> Var<'t> {
        self.delta
    }
}

/// Multiplicative-affine variant `a ∘ x + δ`, an extension point behind the
/// same interface. The scale starts at ones, so the default transform is
/// also the identity.
#[derive(Debug, Clone)]
pub struct AffinePerturbation {
    params: [Tensor; 2],
}

impl AffinePerturbation {
    pub fn init(data_shape: &[usize]) -> Result<Self> {
        if data_shape.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "perturbations need a batch-leading shape of rank ≥ 2, got {data_shape:?}"
            )));
        }
        Ok(AffinePerturbation {
            params: [Tensor::ones(data_shape), Tensor::zeros(data_shape)],
        })
    }

    pub fn scale(&self) -> &Tensor {
        &self.params[0]
    }

    pub fn delta(&self) -> &Tensor {
        &self.params[1]
    }
}

impl PerturbationModel for AffinePerturbation {
    fn apply_tensor(&self, x: &Tensor) -> Result<Tensor> {
        x.hadamard(&self.params[0])?.add(&self.params[1])
    }

    fn parameters(&self) -> &[Tensor] {
        &self.params
    }

    fn parameters_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }
}
