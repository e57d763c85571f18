//! Synthetic two-class Gaussian blob datasets.
//!
//! Class 1 is centered at `+mean`, class 0 at `-mean`, with per-axis
//! standard deviations `sigma`. Axis-wise anisotropy lets one axis carry a
//! strongly predictive but small-margin signal while another carries a noisy
//! but robust one, which is what makes standard and adversarially trained
//! models separate cleanly at this scale.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::models::LabeledBatch;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct BlobsSpec {
    pub train_points: usize,
    pub test_points: usize,
    /// Per-axis offset of the class-1 center; class 0 sits at the negation.
    pub mean: Vec<f64>,
    /// Per-axis standard deviation.
    pub sigma: Vec<f64>,
    pub batch_size: usize,
    pub seed: u64,
}

impl BlobsSpec {
    /// Isotropic, linearly separable blobs (centers ±[2, 0], unit noise).
    pub fn separable(seed: u64) -> Self {
        BlobsSpec {
            train_points: 200,
            test_points: 100,
            mean: vec![2.0, 0.0],
            sigma: vec![1.0, 1.0],
            batch_size: 32,
            seed,
        }
    }

    /// Anisotropic blobs where axis 0 is near-perfectly predictive but
    /// fragile (margin ≈ 0.3, tiny noise) and axis 1 is noisy but robust.
    /// Standard training collapses onto axis 0 and breaks under small ℓ2
    /// budgets; adversarial training at ε ≥ 0.3 is forced onto axis 1.
    pub fn fragile_feature(seed: u64) -> Self {
        BlobsSpec {
            train_points: 2000,
            test_points: 1000,
            mean: vec![0.3, 0.9],
            sigma: vec![0.02, 1.0],
            batch_size: 64,
            seed,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Deterministic (train, test) batches for this spec.
    pub fn generate(&self) -> Result<(Vec<LabeledBatch>, Vec<LabeledBatch>)> {
        if self.mean.is_empty() || self.mean.len() != self.sigma.len() {
            return Err(Error::InvalidArgument(format!(
                "mean has {} axes, sigma has {}",
                self.mean.len(),
                self.sigma.len()
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be ≥ 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let train = self.sample_split(&mut rng, self.train_points)?;
        let test = self.sample_split(&mut rng, self.test_points)?;
        Ok((train, test))
    }

    fn sample_split(&self, rng: &mut ChaCha8Rng, points: usize) -> Result<Vec<LabeledBatch>> {
        let d = self.dim();
        let mut batches = Vec::new();
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(self.batch_size);
        let mut targets: Vec<usize> = Vec::with_capacity(self.batch_size);
        for i in 0..points {
            // Alternate classes so every split and batch stays balanced.
            let class = i % 2;
            let sign = if class == 1 { 1.0 } else { -1.0 };
            let mut row = Vec::with_capacity(d);
            for axis in 0..d {
                let noise: f64 = StandardNormal.sample(rng);
                row.push(sign * self.mean[axis] + self.sigma[axis] * noise);
            }
            rows.push(row);
            targets.push(class);
            if rows.len() == self.batch_size {
                batches.push(LabeledBatch::new(
                    Tensor::from_rows(&rows)?,
                    std::mem::take(&mut targets),
                )?);
                rows.clear();
            }
        }
        if !rows.is_empty() {
            batches.push(LabeledBatch::new(Tensor::from_rows(&rows)?, targets)?);
        }
        Ok(batches)
    }
}
