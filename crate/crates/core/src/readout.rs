//! PCA baseline, ridge readout and error metrics.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use alloc::{format, vec};

use nalgebra::{DMatrix, DVector};

use crate::error::{CstError, Result};
use crate::spectral::{DataMatrix, SampleCovariance, SpectralDecomposition};

/// Default ridge regularization grid.
pub const RIDGE_GRID: [f64; 4] = [1.0, 10.0, 100.0, 200.0];

/// Projection onto the leading `k` eigenvectors of a covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    components: DMatrix<f64>,
    mean: DVector<f64>,
    source_eigenvalues: DVector<f64>,
}

impl PcaModel {
    pub fn fit(cov: &SampleCovariance, k: usize) -> Result<Self> {
        let decomposition = cov.decompose()?;
        Self::from_decomposition(cov, &decomposition, k)
    }

    pub fn from_decomposition(
        cov: &SampleCovariance,
        decomposition: &SpectralDecomposition,
        k: usize,
    ) -> Result<Self> {
        let n = decomposition.dim();
        if k == 0 || k > n {
            return Err(CstError::InvalidK { k, n });
        }
        Ok(PcaModel {
            components: decomposition.eigenvectors().columns(0, k).into_owned(),
            mean: cov.mean().clone(),
            source_eigenvalues: decomposition.eigenvalues().clone(),
        })
    }

    /// `N × k`, orthonormal columns.
    pub fn components(&self) -> &DMatrix<f64> {
        &self.components
    }

    pub fn k(&self) -> usize {
        self.components.ncols()
    }

    pub fn source_eigenvalues(&self) -> &DVector<f64> {
        &self.source_eigenvalues
    }

    /// `V_kᵀ (X - μ̂)`, a `k × T` matrix.
    pub fn transform(&self, data: &DataMatrix) -> Result<DMatrix<f64>> {
        let x = data.values();
        if x.nrows() != self.components.nrows() {
            return Err(CstError::ShapeError {
                expected: self.components.nrows(),
                found: x.nrows(),
            });
        }
        let mut centered = x.clone();
        for mut col in centered.column_iter_mut() {
            col -= &self.mean;
        }
        Ok(self.components.transpose() * centered)
    }

    /// `V_k V_kᵀ`
    pub fn projector(&self) -> DMatrix<f64> {
        &self.components * self.components.transpose()
    }
}

pub fn pca_fit_transform(
    cov: &SampleCovariance,
    k: usize,
    data: &DataMatrix,
) -> Result<DMatrix<f64>> {
    PcaModel::fit(cov, k)?.transform(data)
}

/// Frobenius distance between the two models' projectors.
pub fn projector_distance(a: &PcaModel, b: &PcaModel) -> f64 {
    (a.projector() - b.projector()).norm()
}

/// Linear readout `ŷ = wᵀz + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeModel {
    weights: DVector<f64>,
    intercept: f64,
    alpha: f64,
}

impl RidgeModel {
    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn intercept(&self) -> f64 {
        self.intercept
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// Predictions for the columns of a `D × T` feature matrix.
    pub fn predict(&self, z: &DMatrix<f64>) -> Result<DVector<f64>> {
        if z.nrows() != self.weights.len() {
            return Err(CstError::ShapeError {
                expected: self.weights.len(),
                found: z.nrows(),
            });
        }
        Ok(z.tr_mul(&self.weights).add_scalar(self.intercept))
    }

    pub fn descriptor(&self) -> Vec<(String, String)> {
        let weights: Vec<String> = self.weights.iter().map(|w| format!("{w}")).collect();
        vec![
            ("ridge_alpha".to_string(), format!("{}", self.alpha)),
            ("ridge_intercept".to_string(), format!("{}", self.intercept)),
            ("ridge_weights".to_string(), weights.join(";")),
        ]
    }
}

/// Ridge regression on centered features and targets.
///
/// `z` is `D × T`. Solves the `D × D` normal equations when `D ≤ T` and the
/// `T × T` dual otherwise.
pub fn ridge_fit(z: &DMatrix<f64>, y: &DVector<f64>, alpha: f64) -> Result<RidgeModel> {
    let (d, t) = z.shape();
    if t == 0 {
        return Err(CstError::InsufficientSamples(0));
    }
    if y.len() != t {
        return Err(CstError::ShapeError {
            expected: t,
            found: y.len(),
        });
    }
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(CstError::InvalidParameter(format!(
            "ridge alpha must be non-negative, got {alpha}"
        )));
    }
    if z.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(CstError::InvalidData("ridge inputs must be finite".into()));
    }
    let z_mean = DVector::from_fn(d, |i, _| z.row(i).sum() / t as f64);
    let y_mean = y.mean();
    let mut zc = z.clone();
    for mut col in zc.column_iter_mut() {
        col -= &z_mean;
    }
    let yc = y.add_scalar(-y_mean);

    let weights = if d <= t {
        let mut gram = &zc * zc.transpose();
        add_diagonal(&mut gram, alpha);
        spd_solve(gram, &zc * &yc, alpha)?
    } else {
        let mut gram = zc.tr_mul(&zc);
        add_diagonal(&mut gram, alpha);
        let dual = spd_solve(gram, yc, alpha)?;
        &zc * dual
    };
    let intercept = y_mean - weights.dot(&z_mean);
    Ok(RidgeModel {
        weights,
        intercept,
        alpha,
    })
}

fn add_diagonal(m: &mut DMatrix<f64>, alpha: f64) {
    for i in 0..m.nrows() {
        m[(i, i)] += alpha;
    }
}

fn spd_solve(a: DMatrix<f64>, b: DVector<f64>, alpha: f64) -> Result<DVector<f64>> {
    let scale = a.diagonal().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let chol = a.cholesky().ok_or(CstError::SingularSystem)?;
    if alpha == 0.0 {
        // rank deficiency survives Cholesky as a rounding-level pivot
        let min_pivot = chol
            .l_dirty()
            .diagonal()
            .iter()
            .fold(f64::INFINITY, |m, v| m.min(v * v));
        if !(min_pivot > 1e-12 * scale) {
            return Err(CstError::SingularSystem);
        }
    }
    Ok(chol.solve(&b))
}

/// Fits one model per `alpha` on the training split and keeps the lowest
/// validation MAE; ties go to the earlier grid entry.
pub fn select_ridge(
    train_z: &DMatrix<f64>,
    train_y: &DVector<f64>,
    valid_z: &DMatrix<f64>,
    valid_y: &DVector<f64>,
    grid: &[f64],
) -> Result<(RidgeModel, f64)> {
    let mut best: Option<(RidgeModel, f64)> = None;
    for &alpha in grid {
        let model = ridge_fit(train_z, train_y, alpha)?;
        let err = mae(model.predict(valid_z)?.as_slice(), valid_y.as_slice())?;
        if best.as_ref().is_none_or(|(_, e)| err < *e) {
            best = Some((model, err));
        }
    }
    best.ok_or_else(|| CstError::InvalidParameter("empty ridge grid".into()))
}

fn check_lengths(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(CstError::ShapeError {
            expected: a.len(),
            found: b.len(),
        });
    }
    if a.is_empty() {
        return Err(CstError::InvalidData("metric over empty input".into()));
    }
    Ok(())
}

/// Mean absolute error.
pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_lengths(pred, truth)?;
    let sum: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum();
    Ok(sum / pred.len() as f64)
}

/// Mean squared error.
pub fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    check_lengths(a, b)?;
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.len() as f64)
}

/// Mean squared error over all entries of two equally shaped matrices.
pub fn mse_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(CstError::ShapeError {
            expected: a.len(),
            found: b.len(),
        });
    }
    mse(a.as_slice(), b.as_slice())
}
