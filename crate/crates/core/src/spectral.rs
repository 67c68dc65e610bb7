//! Sample covariance estimation, the symmetric eigensolver and the two
//! wavelet operators built from a covariance spectrum.

use alloc::string::String;
use alloc::vec::Vec;
use alloc::{format, vec};

use nalgebra::{DMatrix, DVector};

use crate::error::{CstError, Result};

const JACOBI_MAX_SWEEPS: usize = 100;
const JACOBI_REL_TOL: f64 = 1e-12;
const SYMMETRY_REL_TOL: f64 = 1e-10;

/// Observations stored feature-major: rows are features, columns are samples.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    values: DMatrix<f64>,
    feature_names: Option<Vec<String>>,
}

impl DataMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() < 2 {
            return Err(CstError::InvalidData(format!(
                "need at least 2 features, got {}",
                values.nrows()
            )));
        }
        if values.ncols() == 0 {
            return Err(CstError::InvalidData("data has no samples".into()));
        }
        if let Some((idx, _)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            let (row, col) = (idx % values.nrows(), idx / values.nrows());
            return Err(CstError::InvalidData(format!(
                "non-finite entry at feature {row}, sample {col}"
            )));
        }
        Ok(DataMatrix {
            values,
            feature_names: None,
        })
    }

    /// Builds a data matrix from sample-major rows (`T` rows of length `N`).
    pub fn from_samples(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.first().map(Vec::len).unwrap_or(0);
        if let Some(bad) = rows.iter().position(|r| r.len() != n) {
            return Err(CstError::InvalidData(format!(
                "sample {bad} has {} entries, expected {n}",
                rows[bad].len()
            )));
        }
        Self::new(DMatrix::from_fn(n, rows.len(), |i, t| rows[t][i]))
    }

    pub fn with_feature_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n_features() {
            return Err(CstError::ShapeError {
                expected: self.n_features(),
                found: names.len(),
            });
        }
        self.feature_names = Some(names);
        Ok(self)
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    pub fn n_features(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.values.ncols()
    }

    pub fn sample(&self, t: usize) -> DVector<f64> {
        self.values.column(t).into_owned()
    }

    /// Keeps the given samples, in the given order.
    pub fn select_samples(&self, indices: &[usize]) -> Result<Self> {
        let t = self.n_samples();
        if let Some(&bad) = indices.iter().find(|&&i| i >= t) {
            return Err(CstError::IndexError { index: bad, len: t });
        }
        if indices.is_empty() {
            return Err(CstError::InvalidData("empty sample selection".into()));
        }
        let values = self.values.select_columns(indices.iter());
        Ok(DataMatrix {
            values,
            feature_names: self.feature_names.clone(),
        })
    }

    /// Reorders features so that new feature `i` is old feature `perm[i]`.
    pub fn permute_features(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.n_features())?;
        let values = self.values.select_rows(perm.iter());
        let feature_names = self
            .feature_names
            .as_ref()
            .map(|names| perm.iter().map(|&p| names[p].clone()).collect());
        Ok(DataMatrix {
            values,
            feature_names,
        })
    }

    /// Z-scores every feature with the given per-feature mean and scale.
    /// Features with zero scale are only centered.
    pub fn standardized_with(&self, mean: &DVector<f64>, scale: &DVector<f64>) -> Result<Self> {
        let n = self.n_features();
        if mean.len() != n || scale.len() != n {
            return Err(CstError::ShapeError {
                expected: n,
                found: mean.len().min(scale.len()),
            });
        }
        let mut values = self.values.clone();
        for i in 0..n {
            let s = if scale[i] > 0.0 { scale[i] } else { 1.0 };
            for v in values.row_mut(i).iter_mut() {
                *v = (*v - mean[i]) / s;
            }
        }
        Ok(DataMatrix {
            values,
            feature_names: self.feature_names.clone(),
        })
    }

    /// Per-feature mean and population standard deviation.
    pub fn feature_moments(&self) -> (DVector<f64>, DVector<f64>) {
        let t = self.n_samples() as f64;
        let mean = DVector::from_fn(self.n_features(), |i, _| self.values.row(i).sum() / t);
        let std = DVector::from_fn(self.n_features(), |i, _| {
            let m = mean[i];
            let ss: f64 = self.values.row(i).iter().map(|v| (v - m) * (v - m)).sum();
            libm::sqrt(ss / t)
        });
        (mean, std)
    }
}

pub(crate) fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    if perm.len() != n {
        return Err(CstError::ShapeError {
            expected: n,
            found: perm.len(),
        });
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || seen[p] {
            return Err(CstError::InvalidParameter(format!(
                "not a permutation of 0..{n}"
            )));
        }
        seen[p] = true;
    }
    Ok(())
}

/// Covariance estimate together with the mean it was centered on.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleCovariance {
    matrix: DMatrix<f64>,
    mean: DVector<f64>,
    sample_count: Option<usize>,
}

impl SampleCovariance {
    /// Wraps a known (population) covariance, e.g. the ground truth of a
    /// synthetic dataset. The mean is taken as zero.
    pub fn known(matrix: DMatrix<f64>) -> Result<Self> {
        check_symmetric(&matrix)?;
        let n = matrix.nrows();
        let matrix = symmetrize(matrix);
        Ok(SampleCovariance {
            matrix,
            mean: DVector::zeros(n),
            sample_count: None,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    /// Number of samples behind the estimate; `None` for a known covariance.
    pub fn sample_count(&self) -> Option<usize> {
        self.sample_count
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn decompose(&self) -> Result<SpectralDecomposition> {
        eig_sym(&self.matrix)
    }
}

/// `(1/T) Σ (x_t - μ)(x_t - μ)ᵀ`, exactly symmetric.
pub fn sample_covariance(data: &DataMatrix) -> Result<SampleCovariance> {
    let t = data.n_samples();
    if t < 2 {
        return Err(CstError::InsufficientSamples(t));
    }
    let x = data.values();
    let n = x.nrows();
    let mean = DVector::from_fn(n, |i, _| x.row(i).sum() / t as f64);
    let mut centered = x.clone();
    for mut col in centered.column_iter_mut() {
        col -= &mean;
    }
    let scatter = &centered * centered.transpose() / t as f64;
    Ok(SampleCovariance {
        matrix: symmetrize(scatter),
        mean,
        sample_count: Some(t),
    })
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let mt = m.transpose();
    (m + mt) * 0.5
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(CstError::ShapeError {
            expected: m.nrows(),
            found: m.ncols(),
        });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(CstError::InvalidData(
            "matrix has non-finite entries".into(),
        ));
    }
    let scale = m.iter().fold(1.0_f64, |acc, v| acc.max(v.abs()));
    let mut worst = 0.0_f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    if worst > SYMMETRY_REL_TOL * scale {
        return Err(CstError::NotSymmetric(worst));
    }
    Ok(())
}

/// Eigenvectors (columns) and eigenvalues sorted in descending order.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomposition {
    eigenvectors: DMatrix<f64>,
    eigenvalues: DVector<f64>,
}

impl SpectralDecomposition {
    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `V diag(f(w)) Vᵀ`, symmetrized.
    pub fn apply_function(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let mut scaled = self.eigenvectors.clone();
        for (k, mut col) in scaled.column_iter_mut().enumerate() {
            col *= f(self.eigenvalues[k]);
        }
        symmetrize(scaled * self.eigenvectors.transpose())
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        self.apply_function(|w| w)
    }
}

/// Cyclic Jacobi eigensolver for symmetric matrices.
///
/// Eigenvalues come back in descending order (stable for ties) and every
/// eigenvector has its largest-magnitude entry positive, the first such entry
/// winning ties, so results are reproducible bit for bit.
pub fn eig_sym(matrix: &DMatrix<f64>) -> Result<SpectralDecomposition> {
    check_symmetric(matrix)?;
    let n = matrix.nrows();
    let mut a = symmetrize(matrix.clone());
    let mut v = DMatrix::<f64>::identity(n, n);
    let tol = JACOBI_REL_TOL * a.norm();

    let mut converged = false;
    for _ in 0..JACOBI_MAX_SWEEPS {
        if off_diagonal_norm(&a) <= tol {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                rotate(&mut a, &mut v, p, q);
            }
        }
    }
    if !converged && off_diagonal_norm(&a) > tol {
        return Err(CstError::NoConvergence(JACOBI_MAX_SWEEPS));
    }

    let mut order: Vec<usize> = (0..n).collect();
    // stable sort keeps the original order among equal eigenvalues
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));
    let eigenvalues = DVector::from_iterator(n, order.iter().map(|&i| a[(i, i)]));
    let mut eigenvectors = v.select_columns(order.iter());
    for mut col in eigenvectors.column_iter_mut() {
        let mut lead = 0;
        for i in 1..n {
            if col[i].abs() > col[lead].abs() {
                lead = i;
            }
        }
        if col[lead] < 0.0 {
            col.neg_mut();
        }
    }
    Ok(SpectralDecomposition {
        eigenvectors,
        eigenvalues,
    })
}

fn off_diagonal_norm(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut sum = 0.0;
    for j in 0..n {
        for i in 0..n {
            if i != j {
                sum += a[(i, j)] * a[(i, j)];
            }
        }
    }
    libm::sqrt(sum)
}

// Annihilates a[p,q] with A <- Jᵀ A J and accumulates V <- V J.
fn rotate(a: &mut DMatrix<f64>, v: &mut DMatrix<f64>, p: usize, q: usize) {
    let apq = a[(p, q)];
    if apq == 0.0 {
        return;
    }
    let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
    let t = if theta.abs() > 1e150 {
        0.5 / theta
    } else {
        let t = 1.0 / (theta.abs() + libm::sqrt(theta * theta + 1.0));
        if theta < 0.0 {
            -t
        } else {
            t
        }
    };
    let c = 1.0 / libm::sqrt(t * t + 1.0);
    let s = t * c;
    let n = a.nrows();
    for k in 0..n {
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        a[(k, p)] = c * akp - s * akq;
        a[(k, q)] = s * akp + c * akq;
    }
    for k in 0..n {
        let apk = a[(p, k)];
        let aqk = a[(q, k)];
        a[(p, k)] = c * apk - s * aqk;
        a[(q, k)] = s * apk + c * aqk;
    }
    a[(p, q)] = 0.0;
    a[(q, p)] = 0.0;
    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}

/// Which rescaling of the covariance the wavelets act on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OperatorKind {
    /// `γ C / w₁`
    Normalized,
    /// `γ (I - C / w₁)`, which reverses the spectrum.
    Inverted,
}

impl OperatorKind {
    pub fn name(self) -> &'static str {
        match self {
            OperatorKind::Normalized => "normalized",
            OperatorKind::Inverted => "inverted",
        }
    }
}

impl core::str::FromStr for OperatorKind {
    type Err = CstError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normalized" | "N" | "C_N" => Ok(OperatorKind::Normalized),
            "inverted" | "I" | "C_I" => Ok(OperatorKind::Inverted),
            other => Err(CstError::InvalidParameter(format!(
                "unknown operator kind '{other}'"
            ))),
        }
    }
}

/// The matrix whose spectrum the covariance wavelets act on.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletOperator {
    kind: OperatorKind,
    gamma: f64,
    matrix: DMatrix<f64>,
    decomposition: SpectralDecomposition,
}

impl WaveletOperator {
    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn decomposition(&self) -> &SpectralDecomposition {
        &self.decomposition
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        self.decomposition.eigenvalues()
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

pub fn wavelet_operator(
    cov: &SampleCovariance,
    kind: OperatorKind,
    gamma: f64,
) -> Result<WaveletOperator> {
    let decomposition = cov.decompose()?;
    wavelet_operator_from_parts(cov, &decomposition, kind, gamma)
}

/// Builds the operator from an already computed decomposition of `cov`.
pub fn wavelet_operator_from_parts(
    cov: &SampleCovariance,
    cov_decomposition: &SpectralDecomposition,
    kind: OperatorKind,
    gamma: f64,
) -> Result<WaveletOperator> {
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(CstError::InvalidParameter(format!(
            "gamma must be positive, got {gamma}"
        )));
    }
    let n = cov.dim();
    if cov_decomposition.dim() != n {
        return Err(CstError::ShapeError {
            expected: n,
            found: cov_decomposition.dim(),
        });
    }
    let w1 = cov_decomposition.eigenvalues()[0];
    if !(w1 > 0.0) {
        return Err(CstError::DegenerateCovariance(w1));
    }
    let w = cov_decomposition.eigenvalues();
    let v = cov_decomposition.eigenvectors();
    let clamp = |x: f64| x.clamp(0.0, gamma);

    let (matrix, eigenvalues, eigenvectors) = match kind {
        OperatorKind::Normalized => {
            let matrix = cov.matrix() * (gamma / w1);
            let lambdas = w.map(|wi| clamp(gamma * wi / w1));
            (matrix, lambdas, v.clone())
        }
        OperatorKind::Inverted => {
            let mut matrix = cov.matrix() * (-gamma / w1);
            for i in 0..n {
                matrix[(i, i)] += gamma;
            }
            // reversed so the operator spectrum stays descending
            let order: Vec<usize> = (0..n).rev().collect();
            let lambdas =
                DVector::from_iterator(n, order.iter().map(|&i| clamp(gamma * (1.0 - w[i] / w1))));
            (matrix, lambdas, v.select_columns(order.iter()))
        }
    };
    Ok(WaveletOperator {
        kind,
        gamma,
        matrix: symmetrize(matrix),
        decomposition: SpectralDecomposition {
            eigenvectors,
            eigenvalues,
        },
    })
}
