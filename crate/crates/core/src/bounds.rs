//! Evaluators for the stability quantities of the transform: the wavelet
//! perturbation scale `Δ`, the pruning-preservation test, the covariance and
//! signal stability bounds, and the PCA eigengap scale.
//!
//! `Q`, `G`, `ε` and `u` have no data-driven estimator; the formula for `Δ` is
//! a rate evaluator, not a certified bound. Its `O(1/T)` remainder is dropped.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::DVector;

use crate::error::{CstError, Result};
use crate::spectral::{eig_sym, DataMatrix, SpectralDecomposition};
use crate::wavelets::WaveletMatrixSet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundConstants {
    /// Absolute constant of the concentration inequality.
    pub q: f64,
    /// Variance constant, at least 1.
    pub g: f64,
    pub k_max: f64,
    pub epsilon: f64,
    pub u: f64,
}

impl Default for BoundConstants {
    fn default() -> Self {
        BoundConstants {
            q: 1.0,
            g: 1.0,
            k_max: 1.0,
            epsilon: 1.0,
            u: 1.0,
        }
    }
}

impl BoundConstants {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("Q", self.q),
            ("k_max", self.k_max),
            ("epsilon", self.epsilon),
            ("u", self.u),
        ];
        for (name, v) in named {
            if !(v.is_finite() && v > 0.0) {
                return Err(CstError::InvalidParameter(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !(self.g.is_finite() && self.g >= 1.0) {
            return Err(CstError::InvalidParameter(format!(
                "G must be >= 1, got {}",
                self.g
            )));
        }
        Ok(())
    }

    /// `(1 - e^-ε)(1 - 2e^-u)`, the nominal probability attached to `Δ`.
    /// Assumes the two events are independent.
    pub fn confidence(&self) -> f64 {
        (1.0 - libm::exp(-self.epsilon)) * (1.0 - 2.0 * libm::exp(-self.u))
    }
}

/// Per-direction plug-in `k̂_j = sqrt(mean((x̃ᵀv_j)² ‖x̃‖²) - ŵ_j²)` on centered
/// samples, with `ŵ_j = mean((x̃ᵀv_j)²)`. Negative radicands clamp to 0.
pub fn kmax_per_direction(
    data: &DataMatrix,
    decomposition: &SpectralDecomposition,
) -> Result<Vec<f64>> {
    let t = data.n_samples();
    if t < 2 {
        return Err(CstError::InsufficientSamples(t));
    }
    if decomposition.dim() != data.n_features() {
        return Err(CstError::ShapeError {
            expected: decomposition.dim(),
            found: data.n_features(),
        });
    }
    let x = data.values();
    let mean = DVector::from_fn(x.nrows(), |i, _| x.row(i).mean());
    let mut centered = x.clone();
    for mut col in centered.column_iter_mut() {
        col -= &mean;
    }
    let sq_norms: Vec<f64> = centered.column_iter().map(|c| c.norm_squared()).collect();
    let proj = decomposition.eigenvectors().tr_mul(&centered);
    let tf = t as f64;
    Ok(proj
        .row_iter()
        .map(|row| {
            let w: f64 = row.iter().map(|p| p * p).sum::<f64>() / tf;
            let m: f64 = row
                .iter()
                .zip(&sq_norms)
                .map(|(p, s)| p * p * s)
                .sum::<f64>()
                / tf;
            libm::sqrt((m - w * w).max(0.0))
        })
        .collect())
}

/// `max_j k̂_j`.
pub fn estimate_kmax(data: &DataMatrix, decomposition: &SpectralDecomposition) -> Result<f64> {
    Ok(kmax_per_direction(data, decomposition)?
        .into_iter()
        .fold(0.0, f64::max))
}

/// `Δ = (P N / √T)(k_max e^(ε/2) + (2 Q G γ ‖C‖ / w₁) sqrt(ln N + u))`.
pub fn wavelet_delta(
    lipschitz: f64,
    n: usize,
    t: usize,
    constants: &BoundConstants,
    gamma: f64,
    cov_norm: f64,
    w1: f64,
) -> f64 {
    let c = constants;
    let nf = n as f64;
    let concentration = 2.0 * c.q * c.g * gamma * cov_norm / w1 * libm::sqrt(libm::log(nf) + c.u);
    lipschitz * nf / libm::sqrt(t as f64) * (c.k_max * libm::exp(c.epsilon / 2.0) + concentration)
}

/// Whether a node at depth `layer` is guaranteed to make the same pruning
/// decision under both operators: `lhs > (Δ B^(ℓ-1) ‖x‖)² ((ℓ+1) B + ℓ τ)`,
/// where `lhs = |‖H_j x_path‖² - τ² ‖x_path‖²|`.
pub fn pruning_preserved(
    lhs: f64,
    layer: usize,
    delta: f64,
    b: f64,
    tau: f64,
    x_norm: f64,
) -> bool {
    let l = layer as f64;
    let scale = delta * libm::pow(b, l - 1.0) * x_norm;
    lhs > scale * scale * ((l + 1.0) * b + l * tau)
}

/// `B_U Δ ‖x‖ sqrt(Σ_{ℓ=1}^{L-1} ℓ² B^(2ℓ-2) F_ℓ)`, with `counts[ℓ] = F_ℓ`
/// for `ℓ = 0..L` (the root count is ignored).
pub fn cst_stability_bound(delta: f64, b: f64, b_u: f64, x_norm: f64, counts: &[usize]) -> f64 {
    let sum: f64 = counts
        .iter()
        .enumerate()
        .skip(1)
        .map(|(l, &f)| {
            let lf = l as f64;
            lf * lf * libm::pow(b, 2.0 * lf - 2.0) * f as f64
        })
        .sum();
    b_u * delta * x_norm * libm::sqrt(sum)
}

/// `B_U ‖δ‖ sqrt(Σ_{ℓ=0}^{L-1} F_ℓ B^(2ℓ))`.
pub fn signal_stability_bound(b: f64, b_u: f64, delta_norm: f64, counts: &[usize]) -> f64 {
    let sum: f64 = counts
        .iter()
        .enumerate()
        .map(|(l, &f)| f as f64 * libm::pow(b, 2.0 * l as f64))
        .sum();
    b_u * delta_norm * libm::sqrt(sum)
}

/// `1 / min_{i≠j≤k} |w_i - w_j|`; infinite when two of the top `k`
/// eigenvalues coincide.
pub fn pca_gap_scale(eigenvalues: &[f64], k: usize) -> Result<f64> {
    if k < 2 || k > eigenvalues.len() {
        return Err(CstError::InvalidK {
            k,
            n: eigenvalues.len(),
        });
    }
    let top = &eigenvalues[..k];
    let mut gap = f64::INFINITY;
    for i in 0..k {
        for j in (i + 1)..k {
            gap = gap.min((top[i] - top[j]).abs());
        }
    }
    Ok(if gap > 0.0 { 1.0 / gap } else { f64::INFINITY })
}

/// Spectral norms `‖H_j(T̂) - H_j(T)‖₂` for every scale. The differences are
/// symmetric, so the norm is the largest absolute eigenvalue.
pub fn measured_wavelet_errors(
    truth: &WaveletMatrixSet,
    estimate: &WaveletMatrixSet,
) -> Result<Vec<f64>> {
    if truth.len() != estimate.len() {
        return Err(CstError::ShapeError {
            expected: truth.len(),
            found: estimate.len(),
        });
    }
    truth
        .matrices()
        .iter()
        .zip(estimate.matrices())
        .map(|(a, b)| {
            if a.shape() != b.shape() {
                return Err(CstError::ShapeError {
                    expected: a.nrows(),
                    found: b.nrows(),
                });
            }
            let diff = b - a;
            let diff = (&diff + diff.transpose()) * 0.5;
            Ok(eig_sym(&diff)?.eigenvalues().amax())
        })
        .collect()
}

/// `max_j ‖H_j(T̂) - H_j(T)‖₂`.
pub fn measured_delta(truth: &WaveletMatrixSet, estimate: &WaveletMatrixSet) -> Result<f64> {
    Ok(measured_wavelet_errors(truth, estimate)?
        .into_iter()
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{sample_covariance, wavelet_operator, OperatorKind, SampleCovariance};
    use crate::wavelets::{build_filterbank, diffusion_gamma, wavelet_matrices, KernelFamily};
    use alloc::vec;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn normal_data(n: usize, t: usize, seed: u64) -> DataMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DataMatrix::new(DMatrix::from_fn(n, t, |_, _| {
            rng.sample::<f64, _>(StandardNormal)
        }))
        .unwrap()
    }

    #[test]
    fn delta_scaling_and_value() {
        let c = BoundConstants::default();
        let d1 = wavelet_delta(1.0, 20, 1000, &c, 1.0, 1.0, 1.0);
        let d4 = wavelet_delta(1.0, 20, 4000, &c, 1.0, 1.0, 1.0);
        assert!((d4 - d1 / 2.0).abs() < 1e-14);
        assert_eq!(wavelet_delta(0.0, 20, 1000, &c, 1.0, 1.0, 1.0), 0.0);
        let direct = 20.0 / 1000f64.sqrt() * (0.5f64.exp() + 2.0 * (20f64.ln() + 1.0).sqrt());
        assert!((d1 - direct).abs() < 1e-12);
    }

    #[test]
    fn pruning_condition_edges() {
        assert!(pruning_preserved(1e-12, 2, 0.0, 1.0, 0.3, 1.0));
        assert!(!pruning_preserved(0.0, 1, 0.0, 1.0, 0.0, 1.0));
        assert!(!pruning_preserved(0.0, 1, 0.1, 1.0, 0.0, 1.0));
        // threshold: (0.1)² (2·1 + 0) = 0.02
        assert!(pruning_preserved(0.0201, 1, 0.1, 1.0, 0.0, 1.0));
        assert!(!pruning_preserved(0.0199, 1, 0.1, 1.0, 0.0, 1.0));
    }

    #[test]
    fn cst_bound_examples() {
        assert_eq!(cst_stability_bound(0.3, 1.0, 1.0, 2.0, &[1]), 0.0);
        let full = cst_stability_bound(0.1, 1.0, 1.0, 1.0, &[1, 3, 9]);
        assert!((full - 0.1 * 39f64.sqrt()).abs() < 1e-15);
        let halved = cst_stability_bound(0.1, 1.3, 1.0, 1.0, &[1, 2, 4]);
        let whole = cst_stability_bound(0.1, 1.3, 1.0, 1.0, &[1, 4, 8]);
        assert!((halved - whole / 2f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn signal_bound_examples() {
        assert_eq!(signal_stability_bound(1.0, 1.0, 0.0, &[1, 2, 4]), 0.0);
        assert_eq!(signal_stability_bound(1.7, 1.0, 0.4, &[1]), 0.4);
        let v = signal_stability_bound(1.0, 1.0, 2.0, &[1, 2, 4]);
        assert!((v - 2.0 * 7f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn gap_scale_examples() {
        assert_eq!(pca_gap_scale(&[4.0, 2.0, 1.0], 2).unwrap(), 0.5);
        assert_eq!(pca_gap_scale(&[3.0, 3.0, 1.0], 2).unwrap(), f64::INFINITY);
        assert!(pca_gap_scale(&[3.0, 1.0], 1).is_err());
    }

    #[test]
    fn kmax_vanishes_without_fluctuation() {
        let v = DVector::from_vec(vec![0.6, 0.8, 0.0]);
        let data = DataMatrix::new(DMatrix::from_fn(3, 10, |i, _| 2.0 * v[i])).unwrap();
        let decomposition = eig_sym(&DMatrix::identity(3, 3)).unwrap();
        assert!(kmax_per_direction(&data, &decomposition)
            .unwrap()
            .iter()
            .all(|&k| k < 1e-12));
    }

    #[test]
    fn kmax_matches_monte_carlo() {
        let n = 5;
        let data = normal_data(n, 10_000, 4);
        let decomposition = sample_covariance(&data).unwrap().decompose().unwrap();
        let k = estimate_kmax(&data, &decomposition).unwrap();
        // direct evaluation of E‖xxᵀv‖² - (E (xᵀv)²)² on a fresh draw along e₁
        let fresh = normal_data(n, 200_000, 40);
        let x = fresh.values();
        let mut m = 0.0;
        let mut w = 0.0;
        for col in x.column_iter() {
            m += col[0] * col[0] * col.norm_squared();
            w += col[0] * col[0];
        }
        let tf = x.ncols() as f64;
        let oracle = (m / tf - (w / tf).powi(2)).sqrt();
        assert!((k - oracle).abs() / oracle < 0.05, "{k} vs {oracle}");
        assert!((oracle - ((n + 1) as f64).sqrt()).abs() < 0.05 * oracle);
    }

    #[test]
    fn measured_errors_vanish_for_same_operator() {
        let cov = SampleCovariance::known(DMatrix::from_diagonal(&DVector::from_vec(vec![
            3.0, 2.0, 1.0,
        ])))
        .unwrap();
        let op =
            wavelet_operator(&cov, OperatorKind::Normalized, diffusion_gamma(3).unwrap()).unwrap();
        let fb = build_filterbank(&op, KernelFamily::Diffusion, 3).unwrap();
        let set = wavelet_matrices(&fb, &op).unwrap();
        assert_eq!(measured_delta(&set, &set).unwrap(), 0.0);
    }

    #[test]
    fn constants_validation() {
        assert!(BoundConstants::default().validate().is_ok());
        assert!(BoundConstants {
            g: 0.5,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(BoundConstants {
            q: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        let p = BoundConstants::default().confidence();
        assert!(p > 0.0 && p < 1.0);
    }
}
