//! Solver loops for constrained perturbation problems: per-batch and
//! universal perturbation optimization, adversarial evaluation, robust
//! training, the simultaneous model/distribution min-max, and robustness
//! curves.
//!
//! Every solver minimizes its criterion; maximization problems are written
//! by negating the loss. Attacks therefore minimize `-cross_entropy`, while
//! concept probes minimize `+cross_entropy` toward a chosen target class.
//! Model parameters are never touched by a perturbation solve: the model is
//! bound to the tape as constants, so no gradient can reach θ.

use std::fmt;
use std::sync::Arc;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::models::{argmax, LabeledBatch, MlpClassifier, ModelParameters, TrainReport};
use crate::optim::{
    ConstraintSet, L1qFrankWolfe, NormOrder, Optimizer, ProjectedSgd, ProjectionScope, Sgd,
    SgdConfig,
};
use crate::perturbations::{InitKind, PerturbKind, Perturbation, PerturbationModel};
use crate::tensor::Tensor;

// ---------------------------------------------------------------------------
// Criteria

type CriterionFn = dyn for<'t> Fn(Var<'t>, &[usize]) -> Result<Var<'t>> + Send + Sync;

/// Differentiable scalar objective of (logits, targets). Solvers minimize it.
#[derive(Clone)]
pub struct Criterion {
    name: &'static str,
    f: Arc<CriterionFn>,
}

impl fmt::Debug for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Criterion({})", self.name)
    }
}

impl Criterion {
    pub fn custom<F>(name: &'static str, f: F) -> Self
    where
        F: for<'t> Fn(Var<'t>, &[usize]) -> Result<Var<'t>> + Send + Sync + 'static,
    {
        Criterion { name, f: Arc::new(f) }
    }

    /// `-cross_entropy(logits, targets)`: minimizing it maximizes the loss,
    /// the attack convention.
    pub fn negated_cross_entropy() -> Self {
        Criterion::custom("negated_cross_entropy", |logits, targets| {
            Ok(logits.cross_entropy(targets)?.neg())
        })
    }

    /// `+cross_entropy(logits, targets)`: minimized toward a chosen target,
    /// the probe convention.
    pub fn cross_entropy() -> Self {
        Criterion::custom("cross_entropy", |logits, targets| {
            logits.cross_entropy(targets)
        })
    }

    /// Sum of all logits; handy for linear problems with closed forms.
    pub fn logit_sum() -> Self {
        Criterion::custom("logit_sum", |logits, _| Ok(logits.sum()))
    }

    pub fn name(&self) -> &'static str {
        self.name
    }

    pub fn evaluate<'t>(&self, logits: Var<'t>, targets: &[usize]) -> Result<Var<'t>> {
        (self.f)(logits, targets)
    }
}

// ---------------------------------------------------------------------------
// Optimizer configuration

/// Declarative inner-optimizer choice; built per solve so state starts fresh.
#[derive(Debug, Clone)]
pub enum OptimizerConfig {
    /// Unconstrained SGD (no projection).
    Sgd(SgdConfig),
    /// SGD followed by projection onto the solve's constraint set.
    Projected {
        lr: f64,
        momentum: f64,
        normalize_grad: bool,
    },
    /// Sparse Frank–Wolfe over the ℓ1 ball of the solve's constraint.
    L1qFrankWolfe { lr: f64, q: f64 },
}

impl OptimizerConfig {
    pub fn projected(lr: f64) -> Self {
        OptimizerConfig::Projected {
            lr,
            momentum: 0.0,
            normalize_grad: false,
        }
    }

    fn build(
        &self,
        constraint: &ConstraintSet,
        scope: ProjectionScope,
    ) -> Result<Box<dyn Optimizer>> {
        match *self {
            OptimizerConfig::Sgd(cfg) => Ok(Box::new(Sgd::new(cfg))),
            OptimizerConfig::Projected {
                lr,
                momentum,
                normalize_grad,
            } => Ok(Box::new(
                ProjectedSgd::new(
                    SgdConfig {
                        lr,
                        momentum,
                        maximize: false,
                    },
                    *constraint,
                    scope,
                )
                .normalize_grad(normalize_grad),
            )),
            OptimizerConfig::L1qFrankWolfe { lr, q } => {
                if constraint.p != NormOrder::L1 {
                    return Err(Error::InvalidArgument(format!(
                        "frank-wolfe requires an l1 constraint, got {}",
                        constraint.p.name()
                    )));
                }
                Ok(Box::new(L1qFrankWolfe::new(constraint.epsilon, lr, q)?))
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Generic perturbation solve

/// Full description of one perturbation solve.
#[derive(Debug, Clone)]
pub struct SolveSpec {
    pub steps: usize,
    pub criterion: Criterion,
    pub optimizer: OptimizerConfig,
    pub constraint: ConstraintSet,
    pub kind: PerturbKind,
    pub init: InitKind,
    /// Independent runs with re-randomized starts; the best final criterion
    /// wins. 1 means a single run from `init`.
    pub restarts: usize,
    pub seed: u64,
}

impl SolveSpec {
    fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidArgument("solve steps must be ≥ 1".into()));
        }
        if self.restarts == 0 {
            return Err(Error::InvalidArgument("restarts must be ≥ 1".into()));
        }
        Ok(())
    }

    fn scope(&self) -> ProjectionScope {
        match self.kind {
            PerturbKind::PerSample => ProjectionScope::PerRow,
            PerturbKind::Universal => ProjectionScope::PerTensor,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub perturbation: Perturbation,
    /// Criterion value observed at each step, before that step's update.
    pub trace: Vec<f64>,
    /// Criterion of the final iterate.
    pub final_criterion: f64,
}

/// Does δ satisfy the constraint, rows independently for per-sample kinds?
pub fn delta_feasible(p: &Perturbation, c: &ConstraintSet, slack: f64) -> bool {
    let delta = p.delta();
    match p.kind() {
        PerturbKind::Universal => c.contains(delta, slack),
        PerturbKind::PerSample => {
            let rows = delta.shape()[0];
            if rows == 0 {
                return true;
            }
            let row_len = delta.numel() / rows;
            (0..rows).all(|r| {
                c.norm(&delta.data()[r * row_len..(r + 1) * row_len])
                    <= c.epsilon * (1.0 + slack)
            })
        }
    }
}

fn criterion_at(
    model: &MlpClassifier,
    perturbation: &Perturbation,
    batch: &LabeledBatch,
    criterion: &Criterion,
) -> Result<f64> {
    let perturbed = perturbation.apply_tensor(&batch.inputs)?;
    let tape = Tape::new();
    let logits = model.bind(&tape, false).forward(tape.constant(perturbed))?;
    Ok(criterion.evaluate(logits, &batch.targets)?.item())
}

/// Iterate apply → criterion → backward → step for `spec.steps` steps, model
/// frozen throughout. Returns the optimized δ and the per-step criterion
/// trace of the winning restart.
pub fn solve_perturbation(
    model: &MlpClassifier,
    batch: &LabeledBatch,
    spec: &SolveSpec,
) -> Result<SolveOutcome> {
    spec.validate()?;
    let mut best: Option<SolveOutcome> = None;
    for restart in 0..spec.restarts {
        let init = if restart == 0 {
            spec.init
        } else {
            InitKind::UniformInBall {
                constraint: spec.constraint,
                seed: spec.seed.wrapping_add(restart as u64),
            }
        };
        let mut perturbation = Perturbation::init(spec.kind, batch.inputs.shape(), &init)?;
        let mut optimizer = spec.optimizer.build(&spec.constraint, spec.scope())?;
        let mut trace = Vec::with_capacity(spec.steps);
        for step in 0..spec.steps {
            let value = perturbation_step(
                model,
                &mut perturbation,
                optimizer.as_mut(),
                &batch.inputs,
                &batch.targets,
                &spec.criterion,
            )?;
            if !value.is_finite() {
                return Err(Error::NonFiniteCriterion { step });
            }
            trace.push(value);
        }
        let final_criterion = criterion_at(model, &perturbation, batch, &spec.criterion)?;
        let better = match &best {
            None => true,
            Some(b) => final_criterion < b.final_criterion,
        };
        if better {
            best = Some(SolveOutcome {
                perturbation,
                trace,
                final_criterion,
            });
        }
    }
    Ok(best.expect("at least one restart"))
}

/// One δ update: returns the criterion value the gradient was taken at.
fn perturbation_step(
    model: &MlpClassifier,
    perturbation: &mut Perturbation,
    optimizer: &mut dyn Optimizer,
    inputs: &Tensor,
    targets: &[usize],
    criterion: &Criterion,
) -> Result<f64> {
    let tape = Tape::new();
    let bound_model = model.bind(&tape, false);
    let bound_delta = perturbation.bind(&tape);
    let x = tape.constant(inputs.clone());
    let perturbed = bound_delta.apply(x)?;
    let logits = bound_model.forward(perturbed)?;
    let objective = criterion.evaluate(logits, targets)?;
    let value = objective.item();
    objective.backward()?;
    let grad = bound_delta.delta_var().grad();
    optimizer.step(perturbation.parameters_mut(), &[grad])?;
    Ok(value)
}

// ---------------------------------------------------------------------------
// Attack

/// Projected-gradient attack settings. The defaults are the library's
/// standard recipe: 10 steps of ℓ2-projected SGD with lr 0.1 inside an
/// ε = 1.0 ball, starting from the clean input.
#[derive(Debug, Clone)]
pub struct AttackConfig {
    pub constraint: ConstraintSet,
    pub steps: usize,
    pub lr: f64,
    pub momentum: f64,
    pub normalize_grad: bool,
    pub init: InitKind,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            constraint: ConstraintSet::l2(1.0).expect("valid radius"),
            steps: 10,
            lr: 0.1,
            momentum: 0.0,
            normalize_grad: false,
            init: InitKind::Zeros,
            restarts: 1,
            seed: 0,
        }
    }
}

impl AttackConfig {
    fn solve_spec(&self) -> SolveSpec {
        SolveSpec {
            steps: self.steps,
            criterion: Criterion::negated_cross_entropy(),
            optimizer: OptimizerConfig::Projected {
                lr: self.lr,
                momentum: self.momentum,
                normalize_grad: self.normalize_grad,
            },
            constraint: self.constraint,
            kind: PerturbKind::PerSample,
            init: self.init,
            restarts: self.restarts,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AttackOutcome {
    pub perturbed: Tensor,
    pub clean_correct: Vec<bool>,
    pub adv_correct: Vec<bool>,
    /// Prediction changed relative to the clean input.
    pub flipped: Vec<bool>,
    pub clean_accuracy: f64,
    pub adversarial_accuracy: f64,
    /// Per-sample criterion (−cross-entropy) at the final perturbed input.
    pub per_sample_criterion: Vec<f64>,
    pub trace: Vec<f64>,
}

fn per_sample_neg_cross_entropy(logits: &Tensor, targets: &[usize]) -> Vec<f64> {
    targets
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let row = logits.row(i);
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let denom: f64 = row.iter().map(|&v| (v - max).exp()).sum();
            -(denom.ln() - (row[t] - max))
        })
        .collect()
}

/// Per-sample ℓp-bounded attack: maximize cross-entropy against the true
/// targets, report what flipped. An ε = 0 budget is an exact no-op on the
/// data, so adversarial accuracy equals clean accuracy bitwise.
pub fn attack(model: &MlpClassifier, batch: &LabeledBatch, cfg: &AttackConfig) -> Result<AttackOutcome> {
    if cfg.steps == 0 {
        return Err(Error::InvalidArgument("attack steps must be ≥ 1".into()));
    }
    let clean_logits = model.predict(&batch.inputs)?;
    let clean_pred: Vec<usize> = (0..batch.len()).map(|i| argmax(clean_logits.row(i))).collect();

    let (perturbed, trace) = if cfg.constraint.epsilon == 0.0 {
        let value = {
            let tape = Tape::new();
            let logits = tape.constant(clean_logits.clone());
            Criterion::negated_cross_entropy()
                .evaluate(logits, &batch.targets)?
                .item()
        };
        (batch.inputs.clone(), vec![value; cfg.steps])
    } else {
        let outcome = solve_perturbation(model, batch, &cfg.solve_spec())?;
        (
            outcome.perturbation.apply_tensor(&batch.inputs)?,
            outcome.trace,
        )
    };

    let adv_logits = if cfg.constraint.epsilon == 0.0 {
        clean_logits.clone()
    } else {
        model.predict(&perturbed)?
    };
    let adv_pred: Vec<usize> = (0..batch.len()).map(|i| argmax(adv_logits.row(i))).collect();

    let clean_correct: Vec<bool> = clean_pred
        .iter()
        .zip(&batch.targets)
        .map(|(p, t)| p == t)
        .collect();
    let adv_correct: Vec<bool> = adv_pred
        .iter()
        .zip(&batch.targets)
        .map(|(p, t)| p == t)
        .collect();
    let flipped = clean_pred
        .iter()
        .zip(&adv_pred)
        .map(|(c, a)| c != a)
        .collect();
    let n = batch.len() as f64;
    Ok(AttackOutcome {
        clean_accuracy: clean_correct.iter().filter(|&&b| b).count() as f64 / n,
        adversarial_accuracy: adv_correct.iter().filter(|&&b| b).count() as f64 / n,
        per_sample_criterion: per_sample_neg_cross_entropy(&adv_logits, &batch.targets),
        perturbed,
        clean_correct,
        adv_correct,
        flipped,
        trace,
    })
}

/// Accuracy under attack, aggregated over a dataset.
pub fn adversarial_accuracy(
    model: &MlpClassifier,
    batches: &[LabeledBatch],
    cfg: &AttackConfig,
) -> Result<f64> {
    let total: usize = batches.iter().map(|b| b.len()).sum();
    if total == 0 {
        return Err(Error::InvalidArgument(
            "adversarial accuracy over an empty dataset".into(),
        ));
    }
    let mut correct = 0.0;
    for batch in batches {
        let outcome = attack(model, batch, cfg)?;
        correct += outcome.adversarial_accuracy * batch.len() as f64;
    }
    Ok(correct / total as f64)
}

// ---------------------------------------------------------------------------
// Concept probing

/// Sparse Frank–Wolfe probe settings. Defaults mirror the standard recipe:
/// lr 1, 10 steps; the ℓ1 budget defaults to 4, sized for 2-d toy inputs.
#[derive(Debug, Clone)]
pub struct ProbeConfig {
    pub epsilon: f64,
    pub lr: f64,
    pub q: f64,
    pub steps: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            epsilon: 4.0,
            lr: 1.0,
            q: 0.25,
            steps: 10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProbeOutcome {
    /// The rendered input: noise plus the optimized δ.
    pub input: Tensor,
    /// Logits of the first sample, initial plus one row per step.
    pub logit_trace: Vec<Vec<f64>>,
    /// Every sample's argmax reached the target class.
    pub success: bool,
}

/// Drive a noise input toward a target class by minimizing cross-entropy
/// with the sparse ℓ1 Frank–Wolfe optimizer, model frozen.
pub fn probe(
    model: &MlpClassifier,
    noise: &Tensor,
    target: usize,
    cfg: &ProbeConfig,
) -> Result<ProbeOutcome> {
    if target >= model.classes() {
        return Err(Error::TargetOutOfRange {
            index: target,
            classes: model.classes(),
        });
    }
    if cfg.steps == 0 {
        return Err(Error::InvalidArgument("probe steps must be ≥ 1".into()));
    }
    let batch = noise.shape()[0];
    let targets = vec![target; batch];
    let criterion = Criterion::cross_entropy();
    let mut perturbation = Perturbation::init(PerturbKind::PerSample, noise.shape(), &InitKind::Zeros)?;
    let mut optimizer = L1qFrankWolfe::new(cfg.epsilon, cfg.lr, cfg.q)?;

    let mut logit_trace = Vec::with_capacity(cfg.steps + 1);
    logit_trace.push(model.predict(noise)?.row(0).to_vec());
    for step in 0..cfg.steps {
        let value = perturbation_step(
            model,
            &mut perturbation,
            &mut optimizer,
            noise,
            &targets,
            &criterion,
        )?;
        if !value.is_finite() {
            return Err(Error::NonFiniteCriterion { step });
        }
        logit_trace.push(
            model
                .predict(&perturbation.apply_tensor(noise)?)?
                .row(0)
                .to_vec(),
        );
    }
    let input = perturbation.apply_tensor(noise)?;
    let final_logits = model.predict(&input)?;
    let success = (0..batch).all(|i| argmax(final_logits.row(i)) == target);
    Ok(ProbeOutcome {
        input,
        logit_trace,
        success,
    })
}

// ---------------------------------------------------------------------------
// Universal perturbations

/// Optimize one shared δ across every batch for `spec.steps` epochs. The
/// expectation over the data distribution is estimated per minibatch: each
/// batch contributes one optimizer step per epoch.
pub fn solve_universal(
    model: &MlpClassifier,
    dataset: &[LabeledBatch],
    spec: &SolveSpec,
) -> Result<SolveOutcome> {
    spec.validate()?;
    if spec.kind != PerturbKind::Universal {
        return Err(Error::InvalidArgument(
            "solve_universal requires the universal perturbation kind".into(),
        ));
    }
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("dataset must be non-empty".into()));
    }
    let shape = dataset[0].inputs.shape().to_vec();
    let mut best: Option<SolveOutcome> = None;
    for restart in 0..spec.restarts {
        let init = if restart == 0 {
            spec.init
        } else {
            InitKind::UniformInBall {
                constraint: spec.constraint,
                seed: spec.seed.wrapping_add(restart as u64),
            }
        };
        let mut perturbation = Perturbation::init(PerturbKind::Universal, &shape, &init)?;
        let mut optimizer = spec.optimizer.build(&spec.constraint, spec.scope())?;
        let mut trace = Vec::new();
        for epoch in 0..spec.steps {
            for batch in dataset {
                let value = perturbation_step(
                    model,
                    &mut perturbation,
                    optimizer.as_mut(),
                    &batch.inputs,
                    &batch.targets,
                    &spec.criterion,
                )?;
                if !value.is_finite() {
                    return Err(Error::NonFiniteCriterion { step: epoch });
                }
                trace.push(value);
            }
        }
        let mut final_criterion = 0.0;
        for batch in dataset {
            final_criterion += criterion_at(model, &perturbation, batch, &spec.criterion)?;
        }
        final_criterion /= dataset.len() as f64;
        let better = match &best {
            None => true,
            Some(b) => final_criterion < b.final_criterion,
        };
        if better {
            best = Some(SolveOutcome {
                perturbation,
                trace,
                final_criterion,
            });
        }
    }
    Ok(best.expect("at least one restart"))
}

// ---------------------------------------------------------------------------
// Robust training

/// Inner maximization settings for adversarial training.
#[derive(Debug, Clone)]
pub struct InnerAttackSpec {
    pub constraint: ConstraintSet,
    pub steps: usize,
    pub lr: f64,
    /// Per-row gradient normalization; keeps the inner attack moving even
    /// when the model is confident and raw input gradients vanish.
    pub normalize_grad: bool,
}

impl InnerAttackSpec {
    /// The usual adversarial-training inner loop: ℓ2 ball, normalized steps
    /// sized to sweep the ball budget.
    pub fn pgd(epsilon: f64, steps: usize) -> Result<Self> {
        Ok(InnerAttackSpec {
            constraint: ConstraintSet::l2(epsilon)?,
            steps,
            lr: if steps > 0 { 2.5 * epsilon / steps as f64 } else { 0.0 },
            normalize_grad: true,
        })
    }
}

/// Adversarial training: each outer step first solves the inner attack on
/// the current batch with θ frozen, then descends the cross-entropy at the
/// perturbed data. With ε = 0 the feasible set is {0}, the attack is the
/// identity, and this is standard training, bitwise.
pub fn robust_train(
    model: &mut MlpClassifier,
    dataset: &[LabeledBatch],
    inner: &InnerAttackSpec,
    outer: &SgdConfig,
    epochs: usize,
) -> Result<TrainReport> {
    if epochs == 0 {
        return Err(Error::InvalidArgument("epochs must be ≥ 1".into()));
    }
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("dataset must be non-empty".into()));
    }
    let mut opt = Sgd::new(*outer);
    let mut trace = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let mut epoch_loss = 0.0;
        for batch in dataset {
            let loss = if inner.constraint.epsilon == 0.0 {
                crate::models::model_step(model, &mut opt, &batch.inputs, &batch.targets)?
            } else {
                let spec = SolveSpec {
                    steps: inner.steps,
                    criterion: Criterion::negated_cross_entropy(),
                    optimizer: OptimizerConfig::Projected {
                        lr: inner.lr,
                        momentum: 0.0,
                        normalize_grad: inner.normalize_grad,
                    },
                    constraint: inner.constraint,
                    kind: PerturbKind::PerSample,
                    init: InitKind::Zeros,
                    restarts: 1,
                    seed: 0,
                };
                let outcome = solve_perturbation(model, batch, &spec)?;
                let perturbed = outcome.perturbation.apply_tensor(&batch.inputs)?;
                crate::models::model_step(model, &mut opt, &perturbed, &batch.targets)?
            };
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            epoch_loss += loss;
        }
        trace.push(epoch_loss / dataset.len() as f64);
    }
    Ok(TrainReport { loss_trace: trace })
}

// ---------------------------------------------------------------------------
// Distributional min-max

/// Settings for the simultaneous model/distribution min-max: one universal
/// δ ascent step per θ descent step, alternating.
#[derive(Debug, Clone)]
pub struct DistributionalSpec {
    pub constraint: ConstraintSet,
    pub delta_lr: f64,
    pub criterion: Criterion,
    pub init: InitKind,
    pub epochs: usize,
}

#[derive(Debug, Clone)]
pub struct DistributionalOutcome {
    pub delta: Perturbation,
    /// Snapshot of (θ, δ) after every alternation step.
    pub theta_trace: Vec<ModelParameters>,
    pub delta_trace: Vec<Tensor>,
    pub loss_trace: Vec<f64>,
}

/// Alternating gradient descent-ascent on
/// `min_θ max_{δ∈Δ} E[criterion(f_θ(x + δ), y)]` with one shared δ.
pub fn solve_distributional(
    model: &mut MlpClassifier,
    dataset: &[LabeledBatch],
    spec: &DistributionalSpec,
    outer: &SgdConfig,
) -> Result<DistributionalOutcome> {
    if spec.epochs == 0 {
        return Err(Error::InvalidArgument("epochs must be ≥ 1".into()));
    }
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("dataset must be non-empty".into()));
    }
    let shape = dataset[0].inputs.shape().to_vec();
    let mut sample_shape = vec![1];
    sample_shape.extend_from_slice(&shape[1..]);
    let mut perturbation = Perturbation::init(PerturbKind::Universal, &shape, &spec.init)?;
    let mut delta_opt = ProjectedSgd::new(
        SgdConfig {
            lr: spec.delta_lr,
            momentum: 0.0,
            maximize: true,
        },
        spec.constraint,
        ProjectionScope::PerTensor,
    );
    let mut theta_opt = Sgd::new(*outer);
    let mut out = DistributionalOutcome {
        delta: perturbation.clone(),
        theta_trace: Vec::new(),
        delta_trace: Vec::new(),
        loss_trace: Vec::new(),
    };
    for epoch in 0..spec.epochs {
        for batch in dataset {
            // δ ascent at the current θ. Skipped entirely for the ε = 0
            // degenerate ball, where δ is pinned at zero.
            if spec.constraint.epsilon > 0.0 {
                let tape = Tape::new();
                let bound_model = model.bind(&tape, false);
                let bound_delta = perturbation.bind(&tape);
                let x = tape.constant(batch.inputs.clone());
                let logits = bound_model.forward(bound_delta.apply(x)?)?;
                let objective = spec.criterion.evaluate(logits, &batch.targets)?;
                objective.backward()?;
                let grad = bound_delta.delta_var().grad();
                delta_opt.step(perturbation.parameters_mut(), &[grad])?;
            }

            // θ descent at the updated δ.
            let inputs = if spec.constraint.epsilon > 0.0 {
                perturbation.apply_tensor(&batch.inputs)?
            } else {
                batch.inputs.clone()
            };
            let loss = {
                let tape = Tape::new();
                let bound = model.bind(&tape, true);
                let x = tape.constant(inputs);
                let logits = bound.forward(x)?;
                let objective = spec.criterion.evaluate(logits, &batch.targets)?;
                let value = objective.item();
                objective.backward()?;
                let grads = bound.grads();
                theta_opt.step(model.parameters_mut().tensors_mut(), &grads)?;
                value
            };
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            out.theta_trace.push(model.parameters().clone());
            out.delta_trace.push(perturbation.delta().clone());
            out.loss_trace.push(loss);
        }
    }
    out.delta = perturbation;
    Ok(out)
}

// ---------------------------------------------------------------------------
// Robustness curves

/// One (model, ε) cell of a robustness curve.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessPoint {
    pub model: String,
    pub epsilon: f64,
    pub adv_accuracy: f64,
    pub seed: u64,
}

/// Evaluation-attack settings for a curve. With `auto_scale_lr` the step
/// size is 2.5·ε/steps, the usual budget-proportional PGD schedule; with it
/// off, `lr` applies at every ε.
#[derive(Debug, Clone)]
pub struct CurveSpec {
    pub steps: usize,
    pub lr: f64,
    pub auto_scale_lr: bool,
    pub normalize_grad: bool,
    pub norm: NormOrder,
    pub seed: u64,
}

impl Default for CurveSpec {
    fn default() -> Self {
        CurveSpec {
            steps: 20,
            lr: 0.1,
            auto_scale_lr: true,
            normalize_grad: true,
            norm: NormOrder::L2,
            seed: 0,
        }
    }
}

impl CurveSpec {
    pub fn attack_config(&self, epsilon: f64) -> Result<AttackConfig> {
        Ok(AttackConfig {
            constraint: ConstraintSet::new(self.norm, epsilon)?,
            steps: self.steps,
            lr: if self.auto_scale_lr {
                2.5 * epsilon / self.steps as f64
            } else {
                self.lr
            },
            normalize_grad: self.normalize_grad,
            seed: self.seed,
            ..AttackConfig::default()
        })
    }
}

/// Full cartesian evaluation: one [`RobustnessPoint`] per (model, ε), in
/// model-major order. At ε = 0 every point is the clean accuracy.
pub fn robustness_curve(
    models: &[(String, MlpClassifier)],
    dataset: &[LabeledBatch],
    epsilons: &[f64],
    spec: &CurveSpec,
) -> Result<Vec<RobustnessPoint>> {
    if epsilons.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument(
            "epsilons must be sorted ascending".into(),
        ));
    }
    let mut points = Vec::with_capacity(models.len() * epsilons.len());
    for (name, model) in models {
        for &epsilon in epsilons {
            let cfg = spec.attack_config(epsilon)?;
            let adv = adversarial_accuracy(model, dataset, &cfg)?;
            points.push(RobustnessPoint {
                model: name.clone(),
                epsilon,
                adv_accuracy: adv,
                seed: spec.seed,
            });
        }
    }
    Ok(points)
}

/// CSV with the exact header `model,epsilon,adv_accuracy,seed`.
pub fn robustness_csv(points: &[RobustnessPoint]) -> String {
    let mut out = String::from("model,epsilon,adv_accuracy,seed\n");
    for p in points {
        out.push_str(&format!(
            "{},{},{},{}\n",
            p.model, p.epsilon, p.adv_accuracy, p.seed
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{accuracy, standard_train};

    fn linear_model(w: &[f64]) -> MlpClassifier {
        let mut m = MlpClassifier::init(&[w.len(), 1], 0).unwrap();
        m.parameters_mut().tensors_mut()[0] =
            Tensor::new(vec![w.len(), 1], w.to_vec()).unwrap();
        m.parameters_mut().tensors_mut()[1] = Tensor::zeros(&[1]);
        m
    }

    fn single_point_batch(x: &[f64]) -> LabeledBatch {
        LabeledBatch::new(Tensor::new(vec![1, x.len()], x.to_vec()).unwrap(), vec![0]).unwrap()
    }

    #[test]
    fn zero_lr_solve_leaves_delta_unchanged() {
        let model = linear_model(&[1.0, -2.0]);
        let batch = single_point_batch(&[0.5, 0.5]);
        let spec = SolveSpec {
            steps: 5,
            criterion: Criterion::logit_sum(),
            optimizer: OptimizerConfig::projected(0.0),
            constraint: ConstraintSet::l2(1.0).unwrap(),
            kind: PerturbKind::PerSample,
            init: InitKind::Zeros,
            restarts: 1,
            seed: 0,
        };
        let outcome = solve_perturbation(&model, &batch, &spec).unwrap();
        assert!(outcome
            .perturbation
            .delta()
            .bits_eq(&Tensor::zeros(&[1, 2])));
        for pair in outcome.trace.windows(2) {
            assert_eq!(pair[0].to_bits(), pair[1].to_bits());
        }
    }

    #[test]
    fn linear_l2_solve_reaches_closed_form_optimum() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let d = rng.gen_range(2..5usize);
            let w: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0f64)).collect();
            if w.iter().map(|v| v * v).sum::<f64>().sqrt() < 0.2 {
                continue;
            }
            let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let epsilon = rng.gen_range(0.5..2.0);
            let model = linear_model(&w);
            let batch = single_point_batch(&x);
            let w_norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            let initial: f64 = w.iter().zip(&x).map(|(a, b)| a * b).sum();
            let optimum = initial - epsilon * w_norm;

            let spec = SolveSpec {
                steps: 20,
                criterion: Criterion::logit_sum(),
                optimizer: OptimizerConfig::projected(0.5 * epsilon / w_norm),
                constraint: ConstraintSet::l2(epsilon).unwrap(),
                kind: PerturbKind::PerSample,
                init: InitKind::Zeros,
                restarts: 1,
                seed: 0,
            };
            let outcome = solve_perturbation(&model, &batch, &spec).unwrap();
            let gap = initial - optimum;
            assert!(
                outcome.final_criterion <= optimum + 0.01 * gap,
                "achieved {} vs optimum {} (start {})",
                outcome.final_criterion,
                optimum,
                initial
            );
            assert!(delta_feasible(
                &outcome.perturbation,
                &spec.constraint,
                1e-9
            ));
        }
    }

    #[test]
    fn smooth_quadratic_trace_is_non_increasing() {
        // criterion = mean((x+δ)²) through an identity linear model
        let model = {
            let mut m = MlpClassifier::init(&[2, 2], 0).unwrap();
            m.parameters_mut().tensors_mut()[0] = Tensor::identity(2);
            m.parameters_mut().tensors_mut()[1] = Tensor::zeros(&[2]);
            m
        };
        let batch = LabeledBatch::new(
            Tensor::matrix(1, 2, vec![1.0, -2.0]).unwrap(),
            vec![0],
        )
        .unwrap();
        let quadratic = Criterion::custom("quadratic", |logits, _| {
            Ok(logits.mul(logits)?.mean())
        });
        let spec = SolveSpec {
            steps: 30,
            criterion: quadratic,
            optimizer: OptimizerConfig::projected(0.05),
            constraint: ConstraintSet::l2(10.0).unwrap(),
            kind: PerturbKind::PerSample,
            init: InitKind::Zeros,
            restarts: 1,
            seed: 0,
        };
        let outcome = solve_perturbation(&model, &batch, &spec).unwrap();
        for pair in outcome.trace.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12);
        }
    }

    #[test]
    fn solve_leaves_model_bitwise_unchanged() {
        let model = linear_model(&[0.3, 0.7]);
        let before = model.parameters().clone();
        let batch = single_point_batch(&[1.0, 1.0]);
        let spec = SolveSpec {
            steps: 10,
            criterion: Criterion::logit_sum(),
            optimizer: OptimizerConfig::projected(0.5),
            constraint: ConstraintSet::l2(1.0).unwrap(),
            kind: PerturbKind::PerSample,
            init: InitKind::Zeros,
            restarts: 2,
            seed: 3,
        };
        solve_perturbation(&model, &batch, &spec).unwrap();
        assert!(model.parameters().bits_eq(&before));
    }

    #[test]
    fn attack_zero_epsilon_equals_clean_exactly() {
        let model = MlpClassifier::init(&[2, 8, 2], 5).unwrap();
        let batch = LabeledBatch::new(
            Tensor::matrix(4, 2, vec![0.5, 1.0, -0.5, 0.25, 2.0, -1.0, 0.0, 0.0]).unwrap(),
            vec![0, 1, 0, 1],
        )
        .unwrap();
        let cfg = AttackConfig {
            constraint: ConstraintSet::l2(0.0).unwrap(),
            ..AttackConfig::default()
        };
        let outcome = attack(&model, &batch, &cfg).unwrap();
        assert_eq!(outcome.clean_correct, outcome.adv_correct);
        assert_eq!(outcome.clean_accuracy, outcome.adversarial_accuracy);
        assert!(outcome.perturbed.bits_eq(&batch.inputs));
        assert!(outcome.flipped.iter().all(|&f| !f));
    }

    #[test]
    fn attack_defaults_follow_the_standard_recipe() {
        let cfg = AttackConfig::default();
        assert_eq!(cfg.steps, 10);
        assert_eq!(cfg.lr, 0.1);
        assert_eq!(cfg.constraint.epsilon, 1.0);
        assert_eq!(cfg.constraint.p, NormOrder::L2);
    }

    #[test]
    fn probe_defaults_follow_the_standard_recipe() {
        let cfg = ProbeConfig::default();
        assert_eq!(cfg.lr, 1.0);
        assert_eq!(cfg.steps, 10);
    }

    #[test]
    fn probe_zero_budget_never_changes_the_input() {
        let model = MlpClassifier::init(&[2, 6, 2], 2).unwrap();
        let noise = Tensor::matrix(1, 2, vec![0.2, -0.1]).unwrap();
        let cfg = ProbeConfig {
            epsilon: 0.0,
            ..ProbeConfig::default()
        };
        let outcome = probe(&model, &noise, 1, &cfg).unwrap();
        assert!(outcome.input.bits_eq(&noise));
        assert_eq!(outcome.logit_trace.len(), cfg.steps + 1);
    }

    #[test]
    fn probe_rejects_invalid_target() {
        let model = MlpClassifier::init(&[2, 2], 0).unwrap();
        let noise = Tensor::zeros(&[1, 2]);
        assert!(matches!(
            probe(&model, &noise, 2, &ProbeConfig::default()),
            Err(Error::TargetOutOfRange { .. })
        ));
    }

    #[test]
    fn universal_single_batch_matches_per_batch_solve() {
        let model = MlpClassifier::init(&[2, 4, 2], 8).unwrap();
        let batch = LabeledBatch::new(
            Tensor::matrix(3, 2, vec![0.5, -1.0, 1.5, 0.5, -0.5, 0.0]).unwrap(),
            vec![0, 1, 0],
        )
        .unwrap();
        let spec = SolveSpec {
            steps: 7,
            criterion: Criterion::negated_cross_entropy(),
            optimizer: OptimizerConfig::projected(0.2),
            constraint: ConstraintSet::l2(1.0).unwrap(),
            kind: PerturbKind::Universal,
            init: InitKind::Zeros,
            restarts: 1,
            seed: 0,
        };
        let uni = solve_universal(&model, &[batch.clone()], &spec).unwrap();
        let per = solve_perturbation(&model, &batch, &spec).unwrap();
        assert!(uni.perturbation.delta().bits_eq(per.perturbation.delta()));
        assert_eq!(uni.trace.len(), per.trace.len());
        assert!(delta_feasible(&uni.perturbation, &spec.constraint, 1e-9));
    }

    #[test]
    fn robust_train_zero_epsilon_is_standard_train_bitwise() {
        let (train, _) = crate::data::BlobsSpec::separable(13).generate().unwrap();
        let outer = SgdConfig::with_lr(0.1);

        let mut standard = MlpClassifier::init(&[2, 8, 2], 4).unwrap();
        standard_train(&mut standard, &train, &outer, 3).unwrap();

        let mut robust = MlpClassifier::init(&[2, 8, 2], 4).unwrap();
        let inner = InnerAttackSpec {
            constraint: ConstraintSet::l2(0.0).unwrap(),
            steps: 5,
            lr: 0.1,
            normalize_grad: true,
        };
        robust_train(&mut robust, &train, &inner, &outer, 3).unwrap();

        assert!(standard.parameters().bits_eq(robust.parameters()));
    }

    #[test]
    fn distributional_zero_epsilon_is_standard_train_bitwise() {
        let (train, _) = crate::data::BlobsSpec::separable(19).generate().unwrap();
        let outer = SgdConfig::with_lr(0.1);

        let mut standard = MlpClassifier::init(&[2, 8, 2], 6).unwrap();
        standard_train(&mut standard, &train, &outer, 2).unwrap();

        let mut minmax = MlpClassifier::init(&[2, 8, 2], 6).unwrap();
        let spec = DistributionalSpec {
            constraint: ConstraintSet::l2(0.0).unwrap(),
            delta_lr: 0.1,
            criterion: Criterion::cross_entropy(),
            init: InitKind::Zeros,
            epochs: 2,
        };
        let outcome = solve_distributional(&mut minmax, &train, &spec, &outer).unwrap();

        assert!(standard.parameters().bits_eq(minmax.parameters()));
        for d in &outcome.delta_trace {
            assert!(d.bits_eq(&Tensor::zeros(d.shape())));
        }
    }

    #[test]
    fn distributional_delta_trace_stays_feasible() {
        let (train, _) = crate::data::BlobsSpec::separable(23).generate().unwrap();
        let mut model = MlpClassifier::init(&[2, 8, 2], 9).unwrap();
        let c = ConstraintSet::l2(0.5).unwrap();
        let spec = DistributionalSpec {
            constraint: c,
            delta_lr: 0.3,
            criterion: Criterion::cross_entropy(),
            init: InitKind::Zeros,
            epochs: 2,
        };
        let outcome = solve_distributional(&mut model, &train, &spec, &SgdConfig::with_lr(0.1)).unwrap();
        for d in &outcome.delta_trace {
            assert!(c.contains(d, 1e-9));
        }
    }

    #[test]
    fn bilinear_saddle_iterates_bounded_and_average_contracts() {
        // Model [1,1] without meaningful bias dynamics in (w, δ): with data
        // x = 0 and criterion Σlogits, the objective is w·δ + b, exactly
        // bilinear in (w, δ). Alternating GDA cycles around the saddle at
        // (0, 0); the running average spirals in.
        let mut model = MlpClassifier::init(&[1, 1], 41).unwrap();
        model.parameters_mut().tensors_mut()[0] = Tensor::matrix(1, 1, vec![0.8]).unwrap();
        let batch = LabeledBatch::new(Tensor::zeros(&[1, 1]), vec![0]).unwrap();
        let spec = DistributionalSpec {
            constraint: ConstraintSet::l2(10.0).unwrap(),
            delta_lr: 0.1,
            criterion: Criterion::logit_sum(),
            init: InitKind::Zeros,
            epochs: 400,
        };
        let outcome =
            solve_distributional(&mut model, &[batch], &spec, &SgdConfig::with_lr(0.1)).unwrap();

        let initial = 0.8f64;
        let mut max_dist = 0.0f64;
        let mut sum_w = 0.0;
        let mut sum_d = 0.0;
        let mut avg_dist_early = 0.0;
        for (i, (theta, delta)) in outcome
            .theta_trace
            .iter()
            .zip(&outcome.delta_trace)
            .enumerate()
        {
            let w = theta.get("w0").unwrap().data()[0];
            let d = delta.data()[0];
            max_dist = max_dist.max((w * w + d * d).sqrt());
            sum_w += w;
            sum_d += d;
            if i + 1 == 40 {
                let aw = sum_w / 40.0;
                let ad = sum_d / 40.0;
                avg_dist_early = (aw * aw + ad * ad).sqrt();
            }
        }
        let n = outcome.theta_trace.len() as f64;
        let avg_dist_late = ((sum_w / n).powi(2) + (sum_d / n).powi(2)).sqrt();

        assert!(max_dist <= 3.0 * initial, "iterates escaped: {max_dist}");
        assert!(avg_dist_late < avg_dist_early, "{avg_dist_late} vs {avg_dist_early}");
        assert!(avg_dist_late < 0.25 * initial, "averaged distance {avg_dist_late}");
    }

    #[test]
    fn curve_at_zero_epsilon_equals_clean_accuracy() {
        let (train, test) = crate::data::BlobsSpec::separable(29).generate().unwrap();
        let mut model = MlpClassifier::init(&[2, 8, 2], 10).unwrap();
        standard_train(&mut model, &train, &SgdConfig::with_lr(0.1), 10).unwrap();
        let clean = accuracy(&model, &test).unwrap();
        let points = robustness_curve(
            &[("standard".into(), model)],
            &test,
            &[0.0, 0.5],
            &CurveSpec::default(),
        )
        .unwrap();
        assert_eq!(points.len(), 2);
        assert_eq!(points[0].epsilon, 0.0);
        assert_eq!(points[0].adv_accuracy, clean);
        assert!(points[1].adv_accuracy <= points[0].adv_accuracy);
    }

    #[test]
    fn curve_requires_sorted_epsilons() {
        let model = MlpClassifier::init(&[2, 2], 0).unwrap();
        let batch = LabeledBatch::new(Tensor::zeros(&[1, 2]), vec![0]).unwrap();
        assert!(robustness_curve(
            &[("m".into(), model)],
            &[batch],
            &[1.0, 0.5],
            &CurveSpec::default(),
        )
        .is_err());
    }

    #[test]
    fn robustness_csv_has_exact_header() {
        let points = vec![RobustnessPoint {
            model: "standard".into(),
            epsilon: 0.25,
            adv_accuracy: 0.875,
            seed: 7,
        }];
        let csv = robustness_csv(&points);
        assert_eq!(csv, "model,epsilon,adv_accuracy,seed\nstandard,0.25,0.875,7\n");
    }

    #[test]
    fn curve_spec_scales_lr_with_epsilon() {
        let spec = CurveSpec::default();
        let cfg = spec.attack_config(2.0).unwrap();
        assert!((cfg.lr - 2.5 * 2.0 / 20.0).abs() < 1e-12);
        let fixed = CurveSpec {
            auto_scale_lr: false,
            ..CurveSpec::default()
        };
        assert_eq!(fixed.attack_config(2.0).unwrap().lr, 0.1);
    }
}
