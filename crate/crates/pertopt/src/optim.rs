//! Constraint sets, ℓp-ball projections, and the inner optimizers used to
//! solve the constrained maximization over perturbation parameters.
//!
//! All optimizers here minimize their criterion; maximization is expressed
//! by negating the loss (or by the SGD `maximize` flag, which flips the
//! gradient sign before the momentum update).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Which ℓp norm bounds the feasible set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormOrder {
    L1,
    L2,
    LInf,
}

impl NormOrder {
    pub fn parse(s: &str) -> Result<NormOrder> {
        match s {
            "l1" => Ok(NormOrder::L1),
            "l2" => Ok(NormOrder::L2),
            "linf" => Ok(NormOrder::LInf),
            other => Err(Error::InvalidArgument(format!(
                "unknown norm `{other}`; expected one of l1, l2, linf"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            NormOrder::L1 => "l1",
            NormOrder::L2 => "l2",
            NormOrder::LInf => "linf",
        }
    }
}

/// The feasible set `{x : ‖x‖_p ≤ ε}` centered at the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintSet {
    pub p: NormOrder,
    pub epsilon: f64,
}

impl ConstraintSet {
    pub fn new(p: NormOrder, epsilon: f64) -> Result<Self> {
        if !(epsilon >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "constraint radius must be non-negative, got {epsilon}"
            )));
        }
        Ok(ConstraintSet { p, epsilon })
    }

    pub fn l2(epsilon: f64) -> Result<Self> {
        Self::new(NormOrder::L2, epsilon)
    }

    pub fn linf(epsilon: f64) -> Result<Self> {
        Self::new(NormOrder::LInf, epsilon)
    }

    pub fn l1(epsilon: f64) -> Result<Self> {
        Self::new(NormOrder::L1, epsilon)
    }

    pub fn norm(&self, data: &[f64]) -> f64 {
        match self.p {
            NormOrder::L1 => data.iter().map(|v| v.abs()).sum(),
            NormOrder::L2 => data.iter().map(|v| v * v).sum::<f64>().sqrt(),
            NormOrder::LInf => data.iter().fold(0.0, |m, v| m.max(v.abs())),
        }
    }

    /// Membership check with relative slack for accumulated rounding.
    pub fn contains(&self, x: &Tensor, relative_slack: f64) -> bool {
        self.norm(x.data()) <= self.epsilon * (1.0 + relative_slack)
    }

    /// Euclidean projection onto the ball, treating the whole tensor as one
    /// flat vector. Feasible inputs are returned unchanged (bitwise); the
    /// degenerate ε = 0 ball maps everything to zero.
    pub fn project(&self, x: &Tensor) -> Tensor {
        let mut out = x.clone();
        self.project_slice(out.data_mut());
        out
    }

    /// Project each slice of the leading axis independently. For a
    /// `[batch, d]` tensor this constrains every sample's row on its own,
    /// which is how per-sample perturbations are bounded; tensors of rank
    /// ≤ 1 are projected whole.
    pub fn project_rows(&self, x: &Tensor) -> Tensor {
        if x.rank() < 2 {
            return self.project(x);
        }
        let rows = x.shape()[0];
        let row_len = if rows == 0 { 0 } else { x.numel() / rows };
        let mut out = x.clone();
        for r in 0..rows {
            self.project_slice(&mut out.data_mut()[r * row_len..(r + 1) * row_len]);
        }
        out
    }

    fn project_slice(&self, data: &mut [f64]) {
        if self.epsilon == 0.0 {
            data.fill(0.0);
            return;
        }
        match self.p {
            NormOrder::L2 => {
                let norm = data.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > self.epsilon {
                    let scale = self.epsilon / norm;
                    for v in data.iter_mut() {
                        *v *= scale;
                    }
                }
            }
            NormOrder::LInf => {
                for v in data.iter_mut() {
                    *v = v.clamp(-self.epsilon, self.epsilon);
                }
            }
            NormOrder::L1 => {
                let l1: f64 = data.iter().map(|v| v.abs()).sum();
                if l1 <= self.epsilon {
                    return;
                }
                // Sort-and-threshold projection onto the ℓ1 ball: find the
                // soft-threshold τ so that Σ max(|vᵢ| − τ, 0) = ε, then
                // shrink every coordinate toward zero by τ. The sort is
                // stable, so ties keep their input order.
                let mut mags: Vec<f64> = data.iter().map(|v| v.abs()).collect();
                mags.sort_by(|a, b| b.partial_cmp(a).expect("finite magnitudes"));
                let mut cumsum = 0.0;
                let mut tau = 0.0;
                for (j, &m) in mags.iter().enumerate() {
                    cumsum += m;
                    let candidate = (cumsum - self.epsilon) / (j + 1) as f64;
                    if m - candidate > 0.0 {
                        tau = candidate;
                    } else {
                        break;
                    }
                }
                for v in data.iter_mut() {
                    let shrunk = (v.abs() - tau).max(0.0);
                    *v = v.signum() * shrunk;
                }
            }
        }
    }

    /// Seeded sample from the ball's interior (uniform for ℓ∞ and ℓ2, and
    /// Dirichlet-based for ℓ1). Always feasible by construction.
    pub fn sample_in_ball(&self, shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let numel: usize = shape.iter().product();
        let mut data = vec![0.0; numel];
        if numel == 0 || self.epsilon == 0.0 {
            return Tensor::new(shape.to_vec(), data).expect("sample shape");
        }
        match self.p {
            NormOrder::LInf => {
                for v in data.iter_mut() {
                    *v = rng.gen_range(-self.epsilon..=self.epsilon);
                }
            }
            NormOrder::L2 => {
                let mut norm_sq = 0.0;
                for v in data.iter_mut() {
                    let g: f64 = rng.sample(StandardNormal);
                    *v = g;
                    norm_sq += g * g;
                }
                let norm = norm_sq.sqrt().max(f64::MIN_POSITIVE);
                let u: f64 = rng.gen_range(0.0..1.0);
                let radius = self.epsilon * u.powf(1.0 / numel as f64);
                for v in data.iter_mut() {
                    *v *= radius / norm;
                }
            }
            NormOrder::L1 => {
                // Exponential spacings give a uniform point on the simplex;
                // random signs and a radial factor fill the ball.
                let mut total = 0.0;
                for v in data.iter_mut() {
                    let e: f64 = -f64::ln(1.0 - rng.gen_range(0.0..1.0));
                    *v = e;
                    total += e;
                }
                let u: f64 = rng.gen_range(0.0..1.0);
                let radius = self.epsilon * u.powf(1.0 / numel as f64);
                for v in data.iter_mut() {
                    let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                    *v = sign * radius * (*v / total);
                }
            }
        }
        Tensor::new(shape.to_vec(), data).expect("sample shape")
    }
}

/// Whether a projected optimizer constrains whole parameter tensors or each
/// leading-axis row independently.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ProjectionScope {
    #[default]
    PerTensor,
    PerRow,
}

/// Step interface shared by every optimizer in the crate: given parameter
/// tensors and matching gradients, update the parameters in place.
pub trait Optimizer {
    fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()>;
}

/// Plain SGD with optional momentum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub maximize: bool,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            lr: 0.1,
            momentum: 0.0,
            maximize: false,
        }
    }
}

impl SgdConfig {
    pub fn with_lr(lr: f64) -> Self {
        SgdConfig {
            lr,
            ..Default::default()
        }
    }
}

pub struct Sgd {
    cfg: SgdConfig,
    velocity: Vec<Option<Tensor>>,
}

impl Sgd {
    pub fn new(cfg: SgdConfig) -> Self {
        Sgd {
            cfg,
            velocity: Vec::new(),
        }
    }
}

impl Optimizer for Sgd {
    fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::InvalidArgument(format!(
                "{} params but {} grads",
                params.len(),
                grads.len()
            )));
        }
        if self.velocity.len() < params.len() {
            self.velocity.resize(params.len(), None);
        }
        for (index, (param, grad)) in params.iter_mut().zip(grads).enumerate() {
            if !grad.all_finite() {
                return Err(Error::NonFiniteGradient { index });
            }
            if param.shape() != grad.shape() {
                return Err(Error::ShapeMismatch {
                    op: "sgd_step",
                    lhs: param.shape().to_vec(),
                    rhs: grad.shape().to_vec(),
                });
            }
            let sign = if self.cfg.maximize { -1.0 } else { 1.0 };
            if self.cfg.momentum != 0.0 {
                let v = self.velocity[index]
                    .get_or_insert_with(|| Tensor::zeros(param.shape()));
                for ((vv, g), p) in v
                    .data_mut()
                    .iter_mut()
                    .zip(grad.data())
                    .zip(param.data_mut())
                {
                    *vv = self.cfg.momentum * *vv + sign * g;
                    *p -= self.cfg.lr * *vv;
                }
            } else {
                for (p, g) in param.data_mut().iter_mut().zip(grad.data()) {
                    *p -= self.cfg.lr * sign * g;
                }
            }
        }
        Ok(())
    }
}

/// SGD wrapped with a projection back onto the constraint set after every
/// inner step, so iterates are always feasible on return. `normalize_grad`
/// rescales each gradient tensor to unit ℓ2 norm before the inner step.
pub struct ProjectedSgd {
    inner: Sgd,
    constraint: ConstraintSet,
    scope: ProjectionScope,
    normalize_grad: bool,
}

impl ProjectedSgd {
    pub fn new(cfg: SgdConfig, constraint: ConstraintSet, scope: ProjectionScope) -> Self {
        ProjectedSgd {
            inner: Sgd::new(cfg),
            constraint,
            scope,
            normalize_grad: false,
        }
    }

    pub fn normalize_grad(mut self, yes: bool) -> Self {
        self.normalize_grad = yes;
        self
    }

    pub fn constraint(&self) -> &ConstraintSet {
        &self.constraint
    }

    fn normalize(&self, g: &Tensor) -> Tensor {
        match self.scope {
            ProjectionScope::PerTensor => {
                let n = g.norm_l2();
                if n > 0.0 {
                    g.scale(1.0 / n)
                } else {
                    g.clone()
                }
            }
            ProjectionScope::PerRow => {
                if g.rank() < 2 {
                    return self.normalize_whole(g);
                }
                let rows = g.shape()[0];
                if rows == 0 {
                    return g.clone();
                }
                let row_len = g.numel() / rows;
                let mut out = g.clone();
                for r in 0..rows {
                    let slice = &mut out.data_mut()[r * row_len..(r + 1) * row_len];
                    let n = slice.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if n > 0.0 {
                        for v in slice.iter_mut() {
                            *v /= n;
                        }
                    }
                }
                out
            }
        }
    }

    fn normalize_whole(&self, g: &Tensor) -> Tensor {
        let n = g.norm_l2();
        if n > 0.0 {
            g.scale(1.0 / n)
        } else {
            g.clone()
        }
    }
}

impl Optimizer for ProjectedSgd {
    fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if self.normalize_grad {
            // Normalization follows the projection scope: per-row scopes
            // rescale each sample's gradient row on its own, so no sample
            // stalls just because its neighbors dominate the batch norm.
            let normalized: Vec<Tensor> = grads.iter().map(|g| self.normalize(g)).collect();
            self.inner.step(params, &normalized)?;
        } else {
            self.inner.step(params, grads)?;
        }
        for param in params.iter_mut() {
            *param = match self.scope {
                ProjectionScope::PerTensor => self.constraint.project(param),
                ProjectionScope::PerRow => self.constraint.project_rows(param),
            };
        }
        Ok(())
    }
}

/// Frank–Wolfe step over the ℓ1 ball with the linear minimization oracle
/// restricted to the top-q fraction of coordinates by gradient magnitude.
///
/// Each step picks k = max(1, ⌈q·dim⌉) coordinates with the largest |g|,
/// forms the vertex `s` with mass ε/k on those coordinates opposing the
/// gradient sign, and moves to the convex combination
/// `x ← (1 − lr)·x + lr·s`. With lr = 1 the iterate is exactly `s`. Iterates
/// of a feasible start stay inside the ball for any gradients.
#[derive(Debug, Clone, Copy)]
pub struct L1qFrankWolfe {
    pub epsilon: f64,
    pub lr: f64,
    pub q: f64,
}

impl L1qFrankWolfe {
    pub fn new(epsilon: f64, lr: f64, q: f64) -> Result<Self> {
        if !(epsilon >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "frank-wolfe radius must be non-negative, got {epsilon}"
            )));
        }
        if !(lr > 0.0 && lr <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "frank-wolfe lr must be in (0, 1], got {lr}"
            )));
        }
        if !(q > 0.0 && q <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "frank-wolfe q must be in (0, 1], got {q}"
            )));
        }
        Ok(L1qFrankWolfe { epsilon, lr, q })
    }

    /// The restricted linear minimization oracle vertex for one gradient.
    pub fn lmo_vertex(&self, grad: &Tensor) -> Tensor {
        let dim = grad.numel();
        let mut vertex = Tensor::zeros(grad.shape());
        if dim == 0 || self.epsilon == 0.0 {
            return vertex;
        }
        let k = ((self.q * dim as f64).ceil() as usize).max(1).min(dim);
        let mut order: Vec<usize> = (0..dim).collect();
        // Stable on ties: larger |g| first, index order among equals.
        order.sort_by(|&a, &b| {
            grad.data()[b]
                .abs()
                .partial_cmp(&grad.data()[a].abs())
                .expect("finite gradients")
                .then(a.cmp(&b))
        });
        let mass = self.epsilon / k as f64;
        for &i in order.iter().take(k) {
            let g = grad.data()[i];
            vertex.data_mut()[i] = if g > 0.0 {
                -mass
            } else if g < 0.0 {
                mass
            } else {
                0.0
            };
        }
        vertex
    }
}

impl Optimizer for L1qFrankWolfe {
    fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::InvalidArgument(format!(
                "{} params but {} grads",
                params.len(),
                grads.len()
            )));
        }
        for (index, (param, grad)) in params.iter_mut().zip(grads).enumerate() {
            if !grad.all_finite() {
                return Err(Error::NonFiniteGradient { index });
            }
            let vertex = self.lmo_vertex(grad);
            for (p, s) in param.data_mut().iter_mut().zip(vertex.data()) {
                *p = (1.0 - self.lr) * *p + self.lr * s;
            }
        }
        Ok(())
    }
}
