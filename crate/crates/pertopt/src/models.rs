//! Toy MLP classifiers and standard training.
//!
//! Parameters live as raw tensors between steps; every forward pass binds
//! them onto a fresh tape ([`MlpClassifier::bind`]), either as trainable
//! leaves or as frozen constants. Frozen binds are what the solvers use to
//! optimize perturbations without any gradient flow into the model.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::optim::{Optimizer, Sgd, SgdConfig};
use crate::tensor::Tensor;

/// One minibatch of inputs `[batch, d_in]` with class-index targets.
#[derive(Debug, Clone)]
pub struct LabeledBatch {
    pub inputs: Tensor,
    pub targets: Vec<usize>,
}

impl LabeledBatch {
    pub fn new(inputs: Tensor, targets: Vec<usize>) -> Result<Self> {
        if inputs.rank() != 2 {
            return Err(Error::RankMismatch {
                op: "labeled_batch",
                expected: 2,
                shape: inputs.shape().to_vec(),
            });
        }
        if inputs.rows() != targets.len() {
            return Err(Error::InvalidArgument(format!(
                "batch of {} rows with {} targets",
                inputs.rows(),
                targets.len()
            )));
        }
        Ok(LabeledBatch { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// Ordered, uniquely named parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ModelParameters {
    pub fn new() -> Self {
        ModelParameters {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        if self.names.iter().any(|n| n == name) {
            return Err(Error::InvalidArgument(format!(
                "duplicate parameter name `{name}`"
            )));
        }
        self.names.push(name.to_string());
        self.tensors.push(tensor);
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names
            .iter()
            .map(|n| n.as_str())
            .zip(self.tensors.iter())
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn bits_eq(&self, other: &ModelParameters) -> bool {
        self.names == other.names
            && self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.bits_eq(b))
    }
}

impl Default for ModelParameters {
    fn default() -> Self {
        Self::new()
    }
}

/// Fully connected classifier with relu between layers and raw logits at the
/// end. Layer extents `[d_in, h₁, …, classes]`.
#[derive(Debug, Clone)]
pub struct MlpClassifier {
    extents: Vec<usize>,
    params: ModelParameters,
    seed: u64,
}

impl MlpClassifier {
    /// Seeded uniform init scaled by 1/√fan_in; biases zero. The same seed
    /// reproduces bitwise-identical parameters.
    pub fn init(extents: &[usize], seed: u64) -> Result<Self> {
        if extents.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least [d_in, classes] extents, got {extents:?}"
            )));
        }
        if extents.iter().any(|&e| e == 0) {
            return Err(Error::InvalidArgument(format!(
                "layer extents must be positive, got {extents:?}"
            )));
        }
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut params = ModelParameters::new();
        for (layer, pair) in extents.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|_| rng.gen_range(-bound..bound))
                .collect();
            params.push(&format!("w{layer}"), Tensor::new(vec![fan_in, fan_out], data)?)?;
            params.push(&format!("b{layer}"), Tensor::zeros(&[fan_out]))?;
        }
        Ok(MlpClassifier {
            extents: extents.to_vec(),
            params,
            seed,
        })
    }

    pub fn from_parts(extents: Vec<usize>, params: ModelParameters, seed: u64) -> Result<Self> {
        if extents.len() < 2 || extents.iter().any(|&e| e == 0) {
            return Err(Error::InvalidArgument(format!(
                "invalid layer extents {extents:?}"
            )));
        }
        let mut expected: Vec<(String, Vec<usize>)> = Vec::new();
        for (layer, pair) in extents.windows(2).enumerate() {
            expected.push((format!("w{layer}"), vec![pair[0], pair[1]]));
            expected.push((format!("b{layer}"), vec![pair[1]]));
        }
        if expected.len() != params.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameter tensors for extents {:?}, got {}",
                expected.len(),
                extents,
                params.len()
            )));
        }
        for ((en, eshape), (gn, gt)) in expected.iter().zip(params.iter()) {
            if en != gn || eshape.as_slice() != gt.shape() {
                return Err(Error::InvalidArgument(format!(
                    "parameter `{gn}` has shape {:?}, expected `{en}` of {:?}",
                    gt.shape(),
                    eshape
                )));
            }
        }
        Ok(MlpClassifier { extents, params, seed })
    }

    pub fn extents(&self) -> &[usize] {
        &self.extents
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_dim(&self) -> usize {
        self.extents[0]
    }

    pub fn classes(&self) -> usize {
        *self.extents.last().expect("at least two extents")
    }

    pub fn parameters(&self) -> &ModelParameters {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut ModelParameters {
        &mut self.params
    }

    /// Put the parameters on a tape, trainable or frozen.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> BoundModel<'t> {
        let vars = self
            .params
            .tensors()
            .iter()
            .map(|t| {
                if trainable {
                    tape.var(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        BoundModel {
            extents: self.extents.clone(),
            vars,
        }
    }

    /// Deterministic logits for a `[batch, d_in]` input.
    pub fn predict(&self, inputs: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let x = tape.constant(inputs.clone());
        Ok(self.bind(&tape, false).forward(x)?.value())
    }
}

/// A model's parameters registered on one tape.
pub struct BoundModel<'t> {
    extents: Vec<usize>,
    vars: Vec<Var<'t>>,
}

impl<'t> BoundModel<'t> {
    pub fn forward(&self, x: Var<'t>) -> Result<Var<'t>> {
        let shape = x.shape();
        if shape.len() != 2 || shape[1] != self.extents[0] {
            return Err(Error::ShapeMismatch {
                op: "predict",
                lhs: shape,
                rhs: vec![0, self.extents[0]],
            });
        }
        let batch = shape[0];
        let layers = self.extents.len() - 1;
        let mut h = x;
        for layer in 0..layers {
            let w = self.vars[2 * layer];
            let b = self.vars[2 * layer + 1];
            h = h.matmul(w)?.add(b.broadcast_rows(batch)?)?;
            if layer + 1 < layers {
                h = h.relu();
            }
        }
        Ok(h)
    }

    pub fn param_vars(&self) -> &[Var<'t>] {
        &self.vars
    }

    /// Gradients of every parameter, in declaration order.
    pub fn grads(&self) -> Vec<Tensor> {
        self.vars.iter().map(|v| v.grad()).collect()
    }
}

/// Per-epoch mean training loss.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub loss_trace: Vec<f64>,
}

/// One cross-entropy descent step on a batch; shared by standard training
/// and the outer loop of robust training so that the two take bitwise-equal
/// parameter updates when the inner attack is inactive.
pub(crate) fn model_step(
    model: &mut MlpClassifier,
    optimizer: &mut Sgd,
    inputs: &Tensor,
    targets: &[usize],
) -> Result<f64> {
    let tape = Tape::new();
    let bound = model.bind(&tape, true);
    let x = tape.constant(inputs.clone());
    let logits = bound.forward(x)?;
    let loss = logits.cross_entropy(targets)?;
    let loss_value = loss.item();
    loss.backward()?;
    let grads = bound.grads();
    optimizer.step(model.params.tensors_mut(), &grads)?;
    Ok(loss_value)
}

/// Minimize mean cross-entropy over the dataset for `epochs` passes.
pub fn standard_train(
    model: &mut MlpClassifier,
    dataset: &[LabeledBatch],
    optimizer: &SgdConfig,
    epochs: usize,
) -> Result<TrainReport> {
    if epochs == 0 {
        return Err(Error::InvalidArgument("epochs must be ≥ 1".into()));
    }
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("dataset must be non-empty".into()));
    }
    let mut opt = Sgd::new(*optimizer);
    let mut trace = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let mut epoch_loss = 0.0;
        for batch in dataset {
            let loss = model_step(model, &mut opt, &batch.inputs, &batch.targets)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            epoch_loss += loss;
        }
        trace.push(epoch_loss / dataset.len() as f64);
    }
    Ok(TrainReport { loss_trace: trace })
}

/// Index of the row maximum, ties going to the lowest class index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of samples whose argmax logit matches the target.
pub fn accuracy(model: &MlpClassifier, batches: &[LabeledBatch]) -> Result<f64> {
    let total: usize = batches.iter().map(|b| b.len()).sum();
    if total == 0 {
        return Err(Error::InvalidArgument(
            "accuracy over an empty dataset".into(),
        ));
    }
    let mut correct = 0usize;
    for batch in batches {
        let logits = model.predict(&batch.inputs)?;
        for (i, &target) in batch.targets.iter().enumerate() {
            if argmax(logits.row(i)) == target {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / total as f64)
}
