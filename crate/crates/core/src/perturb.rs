//! Interpretable representation and locality sampling.
//!
//! The locality around an instance is a beta–Bernoulli masking process: each
//! perturbed point draws a zeroing probability `ρ ~ Beta(a, b)` and then masks
//! every position independently with probability `ρ`, replacing masked values
//! with the background. The interpretable representation is the binary
//! presence vector (`1` where the value differs from the background), or the
//! perturbed values themselves under [`Representation::Identity`].

use rand::Rng;
use rand_distr::{Beta, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::substream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    features: Vec<f64>,
    background: f64,
    shape: Option<(usize, usize)>,
}

impl Instance {
    pub fn new(features: Vec<f64>, background: f64, shape: Option<(usize, usize)>) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::InvalidArgument("instance must have at least one feature".into()));
        }
        if !background.is_finite() {
            return Err(Error::InvalidArgument(format!("background must be finite, got {background}")));
        }
        if let Some((rows, cols)) = shape {
            if rows * cols != features.len() {
                return Err(Error::ShapeMismatch(format!(
                    "shape {rows}x{cols} does not cover {} features",
                    features.len()
                )));
            }
        }
        if let Some(j) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("feature {j} is not finite")));
        }
        Ok(Self { features, background, shape })
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn background(&self) -> f64 {
        self.background
    }

    pub fn shape(&self) -> Option<(usize, usize)> {
        self.shape
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }
}

/// Presence/absence encoding of an instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InterpretableRep {
    active: Vec<bool>,
    active_count: usize,
}

impl InterpretableRep {
    pub fn active(&self) -> &[bool] {
        &self.active
    }

    pub fn active_count(&self) -> usize {
        self.active_count
    }

    /// Indices of the active positions, ascending.
    pub fn positions(&self) -> Vec<usize> {
        self.active.iter().enumerate().filter(|(_, &a)| a).map(|(j, _)| j).collect()
    }
}

/// A position is active exactly when its value differs from the background.
pub fn interpretable_rep(instance: &Instance) -> InterpretableRep {
    #[allow(clippy::float_cmp)]
    let active: Vec<bool> = instance.features.iter().map(|&v| v != instance.background).collect();
    let active_count = active.iter().filter(|&&a| a).count();
    InterpretableRep { active, active_count }
}

/// How perturbed points are presented to the explanation model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Representation {
    /// `z'_j = 1` if position `j` is active in the instance and was kept.
    #[default]
    BinaryPresence,
    /// `z'_j = z_j`, the perturbed value in the original space.
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalityConfig {
    pub beta_a: f64,
    pub beta_b: f64,
    pub num_samples: usize,
    pub seed: u64,
    /// Pins the zeroing probability instead of drawing it from the beta distribution.
    pub rho_fixed: Option<f64>,
    pub representation: Representation,
}

impl Default for LocalityConfig {
    fn default() -> Self {
        Self {
            beta_a: 1.0,
            beta_b: 1.0,
            num_samples: 1000,
            seed: 0,
            rho_fixed: None,
            representation: Representation::BinaryPresence,
        }
    }
}

impl LocalityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta_a > 0.0 && self.beta_a.is_finite()) || !(self.beta_b > 0.0 && self.beta_b.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "beta parameters must be positive, got ({}, {})",
                self.beta_a, self.beta_b
            )));
        }
        if self.num_samples == 0 {
            return Err(Error::InvalidArgument("num_samples must be at least 1".into()));
        }
        if let Some(rho) = self.rho_fixed {
            if !(0.0..=1.0).contains(&rho) {
                return Err(Error::InvalidArgument(format!("rho_fixed must lie in [0, 1], got {rho}")));
            }
        }
        Ok(())
    }
}

/// `N` sampled locality points in the original and interpretable spaces.
///
/// Matrices are row-major `N × d`. `features` lists the positions the
/// explanation model may use (the instance's active set).
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationBatch {
    n: usize,
    d: usize,
    originals: Vec<f64>,
    reps: Vec<f64>,
    weights: Vec<f64>,
    features: Vec<usize>,
}

impl PerturbationBatch {
    /// Builds a batch directly from an interpretable design, with the
    /// originals equal to the representation. Weights are uniform.
    pub fn from_design(n: usize, d: usize, reps: Vec<f64>, features: Vec<usize>) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::InvalidArgument("batch must be non-empty".into()));
        }
        if reps.len() != n * d {
            return Err(Error::ShapeMismatch(format!("expected {} entries, got {}", n * d, reps.len())));
        }
        if features.iter().any(|&j| j >= d) || features.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("features must be strictly increasing positions < d".into()));
        }
        Ok(Self {
            n,
            d,
            originals: reps.clone(),
            reps,
            weights: vec![1.0 / n as f64; n],
            features,
        })
    }

    /// Replaces the sample weights; they are normalized to sum to one.
    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.n {
            return Err(Error::ShapeMismatch(format!("expected {} weights, got {}", self.n, weights.len())));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidArgument("weights must be finite and non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidArgument("weights must not all be zero".into()));
        }
        self.weights = weights.into_iter().map(|w| w / total).collect();
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn originals(&self) -> &[f64] {
        &self.originals
    }

    pub fn original_row(&self, i: usize) -> &[f64] {
        &self.originals[i * self.d..(i + 1) * self.d]
    }

    pub fn reps(&self) -> &[f64] {
        &self.reps
    }

    pub fn rep_row(&self, i: usize) -> &[f64] {
        &self.reps[i * self.d..(i + 1) * self.d]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn features(&self) -> &[usize] {
        &self.features
    }

    /// Original-space rows as owned vectors, the shape model sources consume.
    pub fn original_rows(&self) -> Vec<Vec<f64>> {
        self.originals.chunks(self.d).map(<[f64]>::to_vec).collect()
    }
}

/// Draws `config.num_samples` perturbations of `instance`.
///
/// Row `i` uses ChaCha stream `i` of `config.seed`, so the batch is identical
/// whether rows are generated sequentially or in parallel.
pub fn sample_perturbations(
    instance: &Instance,
    rep: &InterpretableRep,
    config: &LocalityConfig,
) -> Result<PerturbationBatch> {
    config.validate()?;
    let d = instance.dim();
    if rep.active.len() != d {
        return Err(Error::ShapeMismatch(format!(
            "representation has {} entries, instance has {d}",
            rep.active.len()
        )));
    }
    let n = config.num_samples;
    let beta = Beta::new(config.beta_a, config.beta_b)
        .map_err(|e| Error::InvalidArgument(format!("beta distribution: {e}")))?;

    let mut originals = vec![0.0; n * d];
    let mut reps = vec![0.0; n * d];
    originals
        .par_chunks_mut(d)
        .zip(reps.par_chunks_mut(d))
        .enumerate()
        .for_each(|(i, (orig_row, rep_row))| {
            let mut rng = substream(config.seed, i as u64);
            let rho = match config.rho_fixed {
                Some(rho) => rho,
                None => beta.sample(&mut rng),
            };
            for j in 0..d {
                let masked = rng.random::<f64>() < rho;
                let value = if masked { instance.background } else { instance.features[j] };
                orig_row[j] = value;
                rep_row[j] = match config.representation {
                    Representation::BinaryPresence => f64::from(u8::from(rep.active[j] && !masked)),
                    Representation::Identity => value,
                };
            }
        });

    Ok(PerturbationBatch {
        n,
        d,
        originals,
        reps,
        weights: vec![1.0 / n as f64; n],
        features: rep.positions(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(n: usize, seed: u64) -> LocalityConfig {
        LocalityConfig { num_samples: n, seed, ..LocalityConfig::default() }
    }

    #[test]
    fn rep_marks_non_background() {
        let inst = Instance::new(vec![0.0, 0.7, 0.3], 0.0, None).unwrap();
        let rep = interpretable_rep(&inst);
        assert_eq!(rep.active(), &[false, true, true]);
        assert_eq!(rep.active_count(), 2);
        assert_eq!(rep.positions(), vec![1, 2]);
    }

    #[test]
    fn rep_all_background_and_all_foreground() {
        let inst = Instance::new(vec![0.5, 0.5], 0.5, None).unwrap();
        assert_eq!(interpretable_rep(&inst).active(), &[false, false]);

        let inst = Instance::new(vec![1.0; 784], 0.0, Some((28, 28))).unwrap();
        assert_eq!(interpretable_rep(&inst).active_count(), 784);
    }

    #[test]
    fn instance_validation() {
        assert!(Instance::new(vec![], 0.0, None).is_err());
        assert!(Instance::new(vec![1.0], f64::NAN, None).is_err());
        assert!(Instance::new(vec![1.0, 2.0, 3.0], 0.0, Some((2, 2))).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(LocalityConfig { beta_a: 0.0, ..cfg(10, 0) }.validate().is_err());
        assert!(LocalityConfig { beta_b: -1.0, ..cfg(10, 0) }.validate().is_err());
        assert!(cfg(0, 0).validate().is_err());
        assert!(LocalityConfig { rho_fixed: Some(1.5), ..cfg(10, 0) }.validate().is_err());
    }

    #[test]
    fn rho_zero_is_identity() {
        let inst = Instance::new(vec![0.0, 0.2, 0.9, 0.0, 1.0], 0.0, None).unwrap();
        let rep = interpretable_rep(&inst);
        let batch =
            sample_perturbations(&inst, &rep, &LocalityConfig { rho_fixed: Some(0.0), ..cfg(20, 3) }).unwrap();
        for i in 0..batch.len() {
            assert_eq!(batch.original_row(i), inst.features());
            let expect: Vec<f64> = rep.active().iter().map(|&a| f64::from(u8::from(a))).collect();
            assert_eq!(batch.rep_row(i), &expect[..]);
        }
    }

    #[test]
    fn rho_one_masks_everything() {
        let inst = Instance::new(vec![0.1, 0.2, 0.9, 0.0, 1.0], 0.0, None).unwrap();
        let rep = interpretable_rep(&inst);
        let batch =
            sample_perturbations(&inst, &rep, &LocalityConfig { rho_fixed: Some(1.0), ..cfg(20, 3) }).unwrap();
        assert!(batch.originals().iter().all(|&v| v == 0.0));
        assert!(batch.reps().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn uniform_beta_masks_half_on_average() {
        let inst = Instance::new(vec![1.0; 100], 0.0, None).unwrap();
        let rep = interpretable_rep(&inst);
        let batch = sample_perturbations(&inst, &rep, &cfg(10_000, 11)).unwrap();
        let masked = batch.reps().iter().filter(|&&v| v == 0.0).count() as f64;
        let frac = masked / (10_000.0 * 100.0);
        assert!((0.48..=0.52).contains(&frac), "masked fraction {frac}");
    }

    #[test]
    fn weights_default_uniform_and_normalize() {
        let inst = Instance::new(vec![1.0, 2.0], 0.0, None).unwrap();
        let rep = interpretable_rep(&inst);
        let batch = sample_perturbations(&inst, &rep, &cfg(7, 0)).unwrap();
        assert!((batch.weights().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        let batch = batch.with_weights(vec![2.0; 7]).unwrap();
        assert!((batch.weights().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        assert!(batch.clone().with_weights(vec![0.0; 7]).is_err());
        assert!(batch.with_weights(vec![1.0; 3]).is_err());
    }

    #[test]
    fn identity_representation_tracks_originals() {
        let inst = Instance::new(vec![0.3, -1.2, 0.0, 2.5], 0.0, None).unwrap();
        let rep = interpretable_rep(&inst);
        let config = LocalityConfig { representation: Representation::Identity, ..cfg(50, 5) };
        let batch = sample_perturbations(&inst, &rep, &config).unwrap();
        assert_eq!(batch.reps(), batch.originals());
        assert_eq!(batch.features(), &[0, 1, 3]);
    }

    fn instance_strategy() -> impl Strategy<Value = (Instance, u64)> {
        (
            prop::collection::vec(prop_oneof![Just(0.0), -2.0..2.0f64], 1..40),
            any::<u64>(),
        )
            .prop_map(|(f, seed)| (Instance::new(f, 0.0, None).unwrap(), seed))
    }

    proptest! {
        #[test]
        fn batch_invariants((inst, seed) in instance_strategy(), a in 0.2..5.0f64, b in 0.2..5.0f64) {
            let rep = interpretable_rep(&inst);
            let config = LocalityConfig { beta_a: a, beta_b: b, num_samples: 64, seed, ..LocalityConfig::default() };
            let batch = sample_perturbations(&inst, &rep, &config).unwrap();
            let again = sample_perturbations(&inst, &rep, &config).unwrap();
            prop_assert_eq!(&batch, &again);
            for i in 0..batch.len() {
                let z = batch.original_row(i);
                let zr = batch.rep_row(i);
                for j in 0..inst.dim() {
                    // dominance
                    prop_assert!(zr[j] <= f64::from(u8::from(rep.active()[j])));
                    // reconstruction from the representation
                    let rebuilt = if zr[j] == 1.0 { inst.features()[j] } else { inst.background() };
                    prop_assert_eq!(rebuilt.to_bits(), z[j].to_bits());
                }
            }
        }
    }
}
