//! Synthetic Gaussian regression data with a tunable eigenvalue tail.
//!
//! Singular-value profile `s_i = (1 - tail) exp(-(i/ν)²) + tail exp(-0.1 i/ν)`
//! and covariance eigenvalues `λ_i = s_i²`, rotated by a seeded random
//! orthogonal matrix. Larger `tail` gives a flatter spectrum with smaller
//! gaps between consecutive eigenvalues.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use alloc::{format, vec};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{CstError, Result};
use crate::rng::rng_for;
use crate::spectral::DataMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub features: usize,
    pub samples: usize,
    pub tail: f64,
    /// `ν`; `None` means `N / 4`.
    pub effective_rank: Option<f64>,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(features: usize, samples: usize, tail: f64, seed: u64) -> Self {
        SynthSpec {
            features,
            samples,
            tail,
            effective_rank: None,
            noise_sigma: 0.1,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.features < 2 {
            return Err(CstError::InvalidParameter(format!(
                "need at least 2 features, got {}",
                self.features
            )));
        }
        if self.samples < 2 {
            return Err(CstError::InsufficientSamples(self.samples));
        }
        if !(0.0..=1.0).contains(&self.tail) {
            return Err(CstError::InvalidParameter(format!(
                "tail must lie in [0, 1], got {}",
                self.tail
            )));
        }
        if let Some(nu) = self.effective_rank {
            if !(nu.is_finite() && nu > 0.0) {
                return Err(CstError::InvalidParameter(format!(
                    "effective rank must be positive, got {nu}"
                )));
            }
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(CstError::InvalidParameter(format!(
                "noise sigma must be non-negative, got {}",
                self.noise_sigma
            )));
        }
        Ok(())
    }

    pub fn rank(&self) -> f64 {
        self.effective_rank.unwrap_or(self.features as f64 / 4.0)
    }

    pub fn descriptor(&self) -> Vec<(String, String)> {
        vec![
            ("features".to_string(), self.features.to_string()),
            ("samples".to_string(), self.samples.to_string()),
            ("tail".to_string(), format!("{}", self.tail)),
            ("effective_rank".to_string(), format!("{}", self.rank())),
            ("noise_sigma".to_string(), format!("{}", self.noise_sigma)),
            ("seed".to_string(), self.seed.to_string()),
        ]
    }
}

/// Descending covariance eigenvalues for `n` features.
pub fn eigenvalue_profile(n: usize, tail: f64, rank: f64) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let r = i as f64 / rank;
            let s = (1.0 - tail) * libm::exp(-r * r) + tail * libm::exp(-0.1 * r);
            s * s
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub data: DataMatrix,
    pub targets: DVector<f64>,
    pub true_cov: DMatrix<f64>,
    pub true_weights: DVector<f64>,
    pub eigenvalues: Vec<f64>,
}

/// Random orthogonal matrix from the QR factorization of a Gaussian matrix,
/// with column signs fixed by the diagonal of `R`.
fn random_orthogonal(n: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = rng_for(seed, "synth-rotation");
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for (j, mut col) in q.column_iter_mut().enumerate() {
        if r[(j, j)] < 0.0 {
            col.neg_mut();
        }
    }
    q
}

pub fn synth_generate(spec: &SynthSpec) -> Result<SynthDataset> {
    spec.validate()?;
    let n = spec.features;
    let t = spec.samples;
    let eigenvalues = eigenvalue_profile(n, spec.tail, spec.rank());
    let q = random_orthogonal(n, spec.seed);
    let lambda = DMatrix::from_diagonal(&DVector::from_column_slice(&eigenvalues));
    let cov = &q * lambda * q.transpose();
    let true_cov = (&cov + cov.transpose()) * 0.5;

    let mut jittered = true_cov.clone();
    let jitter = 1e-12 * true_cov.trace() / n as f64;
    for i in 0..n {
        jittered[(i, i)] += jitter;
    }
    let chol = jittered
        .cholesky()
        .ok_or(CstError::DegenerateCovariance(jitter))?;
    let mut rng = rng_for(spec.seed, "synth-samples");
    let z = DMatrix::from_fn(n, t, |_, _| rng.sample::<f64, _>(StandardNormal));
    let x = chol.l() * z;

    let mut rng = rng_for(spec.seed, "synth-weights");
    let w = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let true_weights = w.normalize();
    let mut rng = rng_for(spec.seed, "synth-noise");
    let targets = DVector::from_fn(t, |i, _| {
        true_weights.dot(&x.column(i)) + spec.noise_sigma * rng.sample::<f64, _>(StandardNormal)
    });
    let names = (0..n).map(|i| format!("f{i}")).collect();
    Ok(SynthDataset {
        data: DataMatrix::new(x)?.with_feature_names(names)?,
        targets,
        true_cov,
        true_weights,
        eigenvalues,
    })
}
