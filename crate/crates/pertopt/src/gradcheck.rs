//! Gradient verification utilities.
//!
//! [`finite_difference_gradient`] is the independent oracle used throughout
//! the test suite: it estimates gradients from forward evaluations only and
//! never touches the reverse-mode machinery it is used to check.
//! [`check_random_compositions`] drives that oracle over randomly generated
//! op-composition programs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Central-difference gradient estimate of a scalar-valued function,
/// coordinate by coordinate.
pub fn finite_difference_gradient<F>(f: F, x: &Tensor, step: f64) -> Result<Tensor>
where
    F: Fn(&Tensor) -> Result<f64>,
{
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "finite difference step must be positive, got {step}"
        )));
    }
    let mut grad = Tensor::zeros(x.shape());
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let original = probe.data()[i];
        probe.data_mut()[i] = original + step;
        let plus = f(&probe)?;
        probe.data_mut()[i] = original - step;
        let minus = f(&probe)?;
        probe.data_mut()[i] = original;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!(
                "finite difference evaluation at coordinate {i}"
            )));
        }
        grad.data_mut()[i] = (plus - minus) / (2.0 * step);
    }
    Ok(grad)
}

/// A straight-line program over slots. Each slot is either a leaf tensor or
/// an operation whose operands are earlier slots, so evaluation is a single
/// left-to-right pass.
struct Composition {
    leaves: Vec<Tensor>,
    slots: Vec<Slot>,
}

enum Slot {
    Leaf(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    Relu(usize),
    Clamp(usize, f64, f64),
    MatMul(usize, usize),
    BroadcastAdd { matrix: usize, row: usize },
    CrossEntropy { logits: usize, targets: Vec<usize> },
}

impl Composition {
    /// Evaluate to a scalar. The leaf with index `wrt` is replaced by
    /// `override_leaf` when given, and registered as a differentiable var
    /// when `differentiable` is set; every other leaf is a constant. Returns
    /// the scalar output and the var handle of the `wrt` leaf.
    fn eval<'t>(
        &self,
        tape: &'t Tape,
        wrt: usize,
        override_leaf: Option<&Tensor>,
        differentiable: bool,
    ) -> Result<(Var<'t>, Var<'t>)> {
        let mut vals: Vec<Var<'t>> = Vec::with_capacity(self.slots.len());
        let mut wrt_var = None;
        for slot in &self.slots {
            let v = match slot {
                Slot::Leaf(i) => {
                    let tensor = if *i == wrt {
                        override_leaf.cloned().unwrap_or_else(|| self.leaves[*i].clone())
                    } else {
                        self.leaves[*i].clone()
                    };
                    let var = if *i == wrt && differentiable {
                        tape.var(tensor)
                    } else {
                        tape.constant(tensor)
                    };
                    if *i == wrt {
                        wrt_var = Some(var);
                    }
                    var
                }
                Slot::Add(a, b) => vals[*a].add(vals[*b])?,
                Slot::Sub(a, b) => vals[*a].sub(vals[*b])?,
                Slot::Mul(a, b) => vals[*a].mul(vals[*b])?,
                Slot::Neg(a) => vals[*a].neg(),
                Slot::Scale(a, c) => vals[*a].scale(*c),
                Slot::Relu(a) => vals[*a].relu(),
                Slot::Clamp(a, lo, hi) => vals[*a].clamp(*lo, *hi),
                Slot::MatMul(a, b) => vals[*a].matmul(vals[*b])?,
                Slot::BroadcastAdd { matrix, row } => {
                    let rows = vals[*matrix].shape()[0];
                    vals[*matrix].add(vals[*row].broadcast_rows(rows)?)?
                }
                Slot::CrossEntropy { logits, targets } => vals[*logits].cross_entropy(targets)?,
            };
            vals.push(v);
        }
        let last = vals[vals.len() - 1];
        let out = if last.shape().is_empty() { last } else { last.mean() };
        Ok((out, wrt_var.expect("wrt leaf evaluated")))
    }
}

struct Builder {
    leaves: Vec<Tensor>,
    slots: Vec<Slot>,
    shapes: Vec<(usize, usize)>,
}

impl Builder {
    fn push_leaf(&mut self, tensor: Tensor) -> usize {
        let shape = (tensor.shape()[0], tensor.shape()[1]);
        self.leaves.push(tensor);
        self.slots.push(Slot::Leaf(self.leaves.len() - 1));
        self.shapes.push(shape);
        self.slots.len() - 1
    }

    fn push_op(&mut self, slot: Slot, shape: (usize, usize)) -> usize {
        self.slots.push(slot);
        self.shapes.push(shape);
        self.slots.len() - 1
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let numel = shape.iter().product();
    let data = (0..numel)
        .map(|_| {
            // Magnitudes around O(1) and away from the relu/clamp kinks keep
            // central differences sharp.
            let v: f64 = rng.gen_range(0.15..1.4);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("generated shape")
}

fn random_composition(rng: &mut ChaCha8Rng) -> Composition {
    let rows = rng.gen_range(1..5usize);
    let cols = rng.gen_range(1..5usize);
    let mut b = Builder {
        leaves: Vec::new(),
        slots: Vec::new(),
        shapes: Vec::new(),
    };
    b.push_leaf(random_tensor(rng, &[rows, cols]));

    let n_ops = rng.gen_range(2..7usize);
    for _ in 0..n_ops {
        let a = rng.gen_range(0..b.slots.len());
        let (r, c) = b.shapes[a];
        match rng.gen_range(0..8u8) {
            0 => {
                let leaf = b.push_leaf(random_tensor(rng, &[r, c]));
                b.push_op(Slot::Add(a, leaf), (r, c));
            }
            1 => {
                let other = pick_same_shape(rng, &b.shapes, (r, c));
                b.push_op(Slot::Sub(a, other), (r, c));
            }
            2 => {
                let other = pick_same_shape(rng, &b.shapes, (r, c));
                b.push_op(Slot::Mul(a, other), (r, c));
            }
            3 => {
                b.push_op(Slot::Neg(a), (r, c));
            }
            4 => {
                let scale = rng.gen_range(-6..7i32) as f64 / 4.0;
                b.push_op(Slot::Scale(a, scale), (r, c));
            }
            5 => {
                b.push_op(Slot::Relu(a), (r, c));
            }
            6 => {
                b.push_op(Slot::Clamp(a, -0.8, 0.9), (r, c));
            }
            _ => {
                let k = rng.gen_range(1..4usize);
                let leaf = b.push_leaf(random_tensor(rng, &[c, k]));
                b.push_op(Slot::MatMul(a, leaf), (r, k));
            }
        }
    }

    // Occasionally finish through a bias broadcast and a cross-entropy head,
    // mirroring how classifiers use the tape.
    let last = b.slots.len() - 1;
    let (r, c) = b.shapes[last];
    if rng.gen_bool(0.4) {
        let bias = b.push_leaf(random_tensor(rng, &[1, c]));
        let shifted = b.push_op(Slot::BroadcastAdd { matrix: last, row: bias }, (r, c));
        if c >= 2 && rng.gen_bool(0.6) {
            let offset = rng.gen_range(0..c);
            let targets = (0..r).map(|i| (i + offset) % c).collect();
            b.push_op(
                Slot::CrossEntropy {
                    logits: shifted,
                    targets,
                },
                (1, 1),
            );
        }
    }

    Composition {
        leaves: b.leaves,
        slots: b.slots,
    }
}

fn pick_same_shape(rng: &mut ChaCha8Rng, shapes: &[(usize, usize)], want: (usize, usize)) -> usize {
    let candidates: Vec<usize> = shapes
        .iter()
        .enumerate()
        .filter(|(_, &s)| s == want)
        .map(|(i, _)| i)
        .collect();
    candidates[rng.gen_range(0..candidates.len())]
}

/// Report from [`check_random_compositions`].
#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub cases: usize,
    pub gradients_checked: usize,
    pub max_relative_error: f64,
}

/// Generate `cases` random op compositions and compare reverse-mode
/// gradients against central finite differences at the given step, for every
/// leaf of every composition. Returns the worst relative error observed; the
/// denominator is floored at 1 so near-zero gradients compare absolutely.
pub fn check_random_compositions(cases: usize, seed: u64, step: f64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_rel = 0.0f64;
    let mut checked = 0usize;
    for _ in 0..cases {
        let comp = random_composition(&mut rng);
        for wrt in 0..comp.leaves.len() {
            let tape = Tape::new();
            let (out, wrt_var) = comp.eval(&tape, wrt, None, true)?;
            if !out.item().is_finite() {
                return Err(Error::NonFinite("generated composition output".into()));
            }
            out.backward()?;
            let grad = wrt_var.grad();

            let f = |x: &Tensor| -> Result<f64> {
                let t = Tape::new();
                let (v, _) = comp.eval(&t, wrt, Some(x), false)?;
                Ok(v.item())
            };
            let fd = finite_difference_gradient(f, &comp.leaves[wrt], step)?;
            for (g, e) in grad.data().iter().zip(fd.data()) {
                let denom = g.abs().max(e.abs()).max(1.0);
                max_rel = max_rel.max((g - e).abs() / denom);
                checked += 1;
            }
        }
    }
    Ok(GradCheckReport {
        cases,
        gradients_checked: checked,
        max_relative_error: max_rel,
    })
}
