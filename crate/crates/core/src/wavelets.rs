//! Covariance wavelet kernels, filterbanks and wavelet matrices.
//!
//! Three kernel families act on the eigenvalues of a [`WaveletOperator`]:
//!
//! * diffusion, `h_0(λ) = 1 - λ` and `h_j(λ) = λ^(2^(j-1)) - λ^(2^j)`;
//! * tight Hann windows translated across the spectrum, optionally on a
//!   log-warped spectrum;
//! * monic cubic kernels `h(t_j λ)` with a power rise, a cubic spline and a
//!   power decay, at log-spaced scales `t_j`.
//!
//! Every family exposes exactly `J` kernels indexed `0..J`.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use alloc::{format, vec};
use core::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Matrix4, Vector4};

use crate::error::{CstError, Result};
use crate::spectral::WaveletOperator;

/// Relative slack accepted on the kernel domain `[0, γ]`.
const DOMAIN_SLACK: f64 = 1e-10;

/// Shape family of the covariance wavelets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelFamily {
    Diffusion,
    /// Translated Hann windows with overlap `overlap` (the `R` parameter).
    Hann {
        overlap: f64,
        warp: bool,
    },
    /// Monic cubic kernels; `resolution` is the ratio `K` between the
    /// largest and smallest scale.
    Monic {
        alpha: f64,
        beta: f64,
        resolution: f64,
    },
}

impl KernelFamily {
    /// Hann windows with `R = 3` on the log-warped spectrum.
    pub fn hann() -> Self {
        KernelFamily::Hann {
            overlap: 3.0,
            warp: true,
        }
    }

    /// Monic cubic kernels with `α = β = 2`, `K = 20`.
    pub fn monic() -> Self {
        KernelFamily::Monic {
            alpha: 2.0,
            beta: 2.0,
            resolution: 20.0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            KernelFamily::Diffusion => "diffusion",
            KernelFamily::Hann { .. } => "hann",
            KernelFamily::Monic { .. } => "monic",
        }
    }

    /// The operator scale `γ` each family is designed for.
    pub fn default_gamma(&self, scales: usize) -> Result<f64> {
        match self {
            KernelFamily::Diffusion => diffusion_gamma(scales),
            KernelFamily::Hann { .. } => Ok(10.0),
            KernelFamily::Monic { .. } => Ok(1.0),
        }
    }

    fn validate(&self, scales: usize) -> Result<()> {
        if scales < 2 {
            return Err(CstError::InvalidScaleCount(scales));
        }
        match *self {
            KernelFamily::Diffusion => Ok(()),
            KernelFamily::Hann { overlap, .. } => {
                if !(overlap.is_finite() && overlap > 0.0 && overlap < scales as f64 + 1.0) {
                    return Err(CstError::InvalidParameter(format!(
                        "Hann overlap R must lie in (0, J+1) = (0, {}), got {overlap}",
                        scales + 1
                    )));
                }
                Ok(())
            }
            KernelFamily::Monic {
                alpha,
                beta,
                resolution,
            } => {
                if !(alpha >= 1.0 && beta >= 1.0 && alpha.is_finite() && beta.is_finite()) {
                    return Err(CstError::InvalidParameter(format!(
                        "monic exponents must be >= 1, got alpha={alpha}, beta={beta}"
                    )));
                }
                if !(resolution.is_finite() && resolution > 0.0) {
                    return Err(CstError::InvalidParameter(format!(
                        "monic resolution K must be positive, got {resolution}"
                    )));
                }
                Ok(())
            }
        }
    }
}

/// `γ = (1/2)^(1/2^(J-2))`, which puts the peak of the coarsest diffusion
/// kernel on the top of the spectrum.
pub fn diffusion_gamma(scales: usize) -> Result<f64> {
    if scales < 2 {
        return Err(CstError::InvalidScaleCount(scales));
    }
    let exponent = libm::ldexp(1.0, -(scales as i32 - 2));
    Ok(libm::pow(0.5, exponent))
}

/// `λ^(2^k)` by repeated squaring.
fn dyadic_power(lambda: f64, k: usize) -> f64 {
    let mut p = lambda;
    for _ in 0..k {
        p *= p;
    }
    p
}

fn diffusion_kernel(j: usize, lambda: f64) -> f64 {
    if j == 0 {
        1.0 - lambda
    } else {
        let low = dyadic_power(lambda, j - 1);
        low - low * low
    }
}

/// Log map of the spectrum `[lo, hi]` onto `[0, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct LogWarp {
    offset: f64,
    log_lo: f64,
    log_span: f64,
    hi: f64,
}

impl LogWarp {
    fn new(lo: f64, hi: f64) -> Option<Self> {
        let offset = 1e-6 * hi;
        let log_lo = libm::log(lo + offset);
        let log_span = libm::log(hi + offset) - log_lo;
        (log_span > 0.0).then_some(LogWarp {
            offset,
            log_lo,
            log_span,
            hi,
        })
    }

    fn map(&self, lambda: f64) -> f64 {
        self.hi * (libm::log(lambda + self.offset) - self.log_lo) / self.log_span
    }

    /// Largest slope of the map on `[lo, hi]`, attained at `lo`.
    fn max_slope(&self, lo: f64) -> f64 {
        self.hi / (self.log_span * (lo + self.offset))
    }
}

#[derive(Debug, Clone, PartialEq)]
enum KernelShape {
    Diffusion,
    Hann {
        /// `(J + 1 - R) / (R λ_max)`
        frequency: f64,
        translations: Vec<f64>,
        warp: Option<LogWarp>,
    },
    Monic {
        alpha: f64,
        beta: f64,
        lower_break: f64,
        upper_break: f64,
        /// `s(u) = a u³ + b u² + c u + d`
        cubic: [f64; 4],
        dilations: Vec<f64>,
    },
}

fn monic_profile(
    u: f64,
    alpha: f64,
    beta: f64,
    lower_break: f64,
    upper_break: f64,
    cubic: &[f64; 4],
) -> f64 {
    if u < lower_break {
        libm::pow(u / lower_break, alpha)
    } else if u <= upper_break {
        let [a, b, c, d] = *cubic;
        ((a * u + b) * u + c) * u + d
    } else {
        libm::pow(upper_break / u, beta)
    }
}

/// Coefficients of the cubic with `s(l1) = s(l2) = 1`, `s'(l1) = α/l1` and
/// `s'(l2) = -β/l2`.
fn monic_cubic(alpha: f64, beta: f64, l1: f64, l2: f64) -> Result<[f64; 4]> {
    #[rustfmt::skip]
    let system = Matrix4::new(
        l1 * l1 * l1, l1 * l1, l1, 1.0,
        l2 * l2 * l2, l2 * l2, l2, 1.0,
        3.0 * l1 * l1, 2.0 * l1, 1.0, 0.0,
        3.0 * l2 * l2, 2.0 * l2, 1.0, 0.0,
    );
    let rhs = Vector4::new(1.0, 1.0, alpha / l1, -beta / l2);
    let coef = system
        .lu()
        .solve(&rhs)
        .ok_or(CstError::DegenerateSpectrum)?;
    Ok([coef[0], coef[1], coef[2], coef[3]])
}

/// A bank of `J` kernels fitted to one operator spectrum, with its frame
/// bounds and per-kernel Lipschitz constants.
#[derive(Debug, Clone, PartialEq)]
pub struct Filterbank {
    family: KernelFamily,
    scales: usize,
    dim: usize,
    gamma: f64,
    spectrum_min: f64,
    spectrum_max: f64,
    shape: KernelShape,
    frame_lower: f64,
    frame_upper: f64,
    spectral_frame: (f64, f64),
    lipschitz: Vec<f64>,
}

impl Filterbank {
    pub fn family(&self) -> KernelFamily {
        self.family
    }

    /// Number of kernels `J`.
    pub fn scales(&self) -> usize {
        self.scales
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Lower frame bound `A`.
    pub fn frame_lower(&self) -> f64 {
        self.frame_lower
    }

    /// Upper frame bound `B`.
    pub fn frame_upper(&self) -> f64 {
        self.frame_upper
    }

    /// `(sqrt(min G(λ_i)), sqrt(max G(λ_i)))` over the operator eigenvalues.
    /// Equal to the reported bounds except for diffusion, whose reported
    /// bounds are the closed-form `A = 1 - γ`, `B = 1`.
    pub fn spectral_frame(&self) -> (f64, f64) {
        self.spectral_frame
    }

    pub fn lipschitz(&self) -> &[f64] {
        &self.lipschitz
    }

    /// Interval of eigenvalues on which the Lipschitz constants hold.
    pub fn lipschitz_domain(&self) -> (f64, f64) {
        match &self.shape {
            KernelShape::Hann { warp: Some(_), .. } => (self.spectrum_min, self.spectrum_max),
            _ => (0.0, self.gamma),
        }
    }

    /// Per-kernel parameters: Hann translations `t_j` or monic dilations
    /// `t_j`; empty for diffusion.
    pub fn scale_parameters(&self) -> &[f64] {
        match &self.shape {
            KernelShape::Diffusion => &[],
            KernelShape::Hann { translations, .. } => translations,
            KernelShape::Monic { dilations, .. } => dilations,
        }
    }

    /// Monic breakpoints `(λ̄₁, λ̄₂)`.
    pub fn monic_breakpoints(&self) -> Option<(f64, f64)> {
        match self.shape {
            KernelShape::Monic {
                lower_break,
                upper_break,
                ..
            } => Some((lower_break, upper_break)),
            _ => None,
        }
    }

    /// Monic cubic coefficients `[a, b, c, d]`.
    pub fn monic_cubic(&self) -> Option<[f64; 4]> {
        match self.shape {
            KernelShape::Monic { cubic, .. } => Some(cubic),
            _ => None,
        }
    }

    /// Kernel `j` at `λ` with no domain check.
    pub fn response(&self, j: usize, lambda: f64) -> f64 {
        match &self.shape {
            KernelShape::Diffusion => diffusion_kernel(j, lambda),
            KernelShape::Hann {
                frequency,
                translations,
                warp,
            } => {
                let mu = warp.as_ref().map_or(lambda, |w| w.map(lambda));
                let arg = 2.0 * PI * frequency * (mu - translations[j]) + PI;
                if (-PI..=PI).contains(&arg) {
                    0.5 + 0.5 * libm::cos(arg)
                } else {
                    0.0
                }
            }
            KernelShape::Monic {
                alpha,
                beta,
                lower_break,
                upper_break,
                cubic,
                dilations,
            } => monic_profile(
                dilations[j] * lambda,
                *alpha,
                *beta,
                *lower_break,
                *upper_break,
                cubic,
            ),
        }
    }

    /// `G(λ) = Σ_j h_j(λ)²`.
    pub fn frame_function(&self, lambda: f64) -> f64 {
        (0..self.scales)
            .map(|j| {
                let h = self.response(j, lambda);
                h * h
            })
            .sum()
    }

    /// Descriptor lines for provenance logs.
    pub fn descriptor(&self) -> Vec<(String, String)> {
        let mut out = vec![
            ("family".to_string(), self.family.name().to_string()),
            ("scales".to_string(), self.scales.to_string()),
            ("gamma".to_string(), format!("{}", self.gamma)),
        ];
        match self.family {
            KernelFamily::Diffusion => {}
            KernelFamily::Hann { overlap, warp } => {
                out.push(("hann_overlap".into(), format!("{overlap}")));
                out.push(("hann_warp".into(), warp.to_string()));
            }
            KernelFamily::Monic {
                alpha,
                beta,
                resolution,
            } => {
                out.push(("monic_alpha".into(), format!("{alpha}")));
                out.push(("monic_beta".into(), format!("{beta}")));
                out.push(("monic_resolution".into(), format!("{resolution}")));
            }
        }
        if let Some((l1, l2)) = self.monic_breakpoints() {
            out.push(("monic_breakpoints".into(), join(&[l1, l2])));
        }
        if let Some(c) = self.monic_cubic() {
            out.push(("monic_cubic".into(), join(&c)));
        }
        out.push(("scale_parameters".into(), join(self.scale_parameters())));
        out.push(("frame_lower".into(), format!("{}", self.frame_lower)));
        out.push(("frame_upper".into(), format!("{}", self.frame_upper)));
        out.push(("lipschitz".into(), join(&self.lipschitz)));
        out
    }
}

fn join(values: &[f64]) -> String {
    let parts: Vec<String> = values.iter().map(|v| format!("{v}")).collect();
    parts.join(";")
}

/// Evaluates kernel `j` at `λ`, rejecting eigenvalues outside `[0, γ]`.
pub fn kernel_eval(filterbank: &Filterbank, j: usize, lambda: f64) -> Result<f64> {
    if j >= filterbank.scales {
        return Err(CstError::IndexError {
            index: j,
            len: filterbank.scales,
        });
    }
    let upper = filterbank.gamma;
    let slack = DOMAIN_SLACK * upper;
    if !(lambda >= -slack && lambda <= upper + slack) {
        return Err(CstError::DomainError {
            value: lambda,
            upper,
        });
    }
    Ok(filterbank.response(j, lambda))
}

/// Fits `scales` kernels of `family` to the spectrum of `operator`.
pub fn build_filterbank(
    operator: &WaveletOperator,
    family: KernelFamily,
    scales: usize,
) -> Result<Filterbank> {
    family.validate(scales)?;
    let eig = operator.eigenvalues();
    let n = eig.len();
    let gamma = operator.gamma();
    let spectrum_max = eig.max();
    let spectrum_min = eig.min();
    let j_count = scales as f64;

    let (shape, lipschitz) = match family {
        KernelFamily::Diffusion => {
            let lipschitz = (0..scales).map(|j| diffusion_lipschitz(j, gamma)).collect();
            (KernelShape::Diffusion, lipschitz)
        }
        KernelFamily::Hann { overlap, warp } => {
            if !(spectrum_max > 0.0) {
                return Err(CstError::DegenerateSpectrum);
            }
            let spacing = spectrum_max / (j_count + 1.0 - overlap);
            let translations = (1..=scales).map(|j| j as f64 * spacing).collect();
            let frequency = (j_count + 1.0 - overlap) / (overlap * spectrum_max);
            let warp = if warp {
                LogWarp::new(spectrum_min, spectrum_max)
            } else {
                None
            };
            let slope = warp.map_or(1.0, |w| w.max_slope(spectrum_min));
            let p = PI * frequency * slope;
            (
                KernelShape::Hann {
                    frequency,
                    translations,
                    warp,
                },
                vec![p; scales],
            )
        }
        KernelFamily::Monic {
            alpha,
            beta,
            resolution,
        } => {
            if !(spectrum_max > 0.0) {
                return Err(CstError::DegenerateSpectrum);
            }
            let mut ascending: Vec<f64> = eig.iter().copied().collect();
            ascending.sort_by(f64::total_cmp);
            // 1-based quartile positions floor(N/4) and ceil(3N/4)
            let q1 = (n / 4).max(1);
            let q3 = (3 * n).div_ceil(4).clamp(1, n);
            let mut lower_break = ascending[q1 - 1].max(1e-3 * spectrum_max);
            let mut upper_break = ascending[q3 - 1];
            if upper_break <= lower_break * (1.0 + 1e-6) {
                lower_break = lower_break.min(0.5 * spectrum_max);
                upper_break = (2.0 * lower_break).max(upper_break);
            }
            let cubic = monic_cubic(alpha, beta, lower_break, upper_break)?;
            let base = upper_break / spectrum_max;
            let dilations: Vec<f64> = (1..=scales)
                .map(|j| base * libm::pow(resolution, (j_count - j as f64) / (j_count - 1.0)))
                .collect();
            let [a, b, c, _] = cubic;
            let cubic_slope =
                3.0 * a.abs() * upper_break * upper_break + 2.0 * b.abs() * upper_break + c.abs();
            let piece_max = (alpha / lower_break)
                .max(cubic_slope)
                .max(beta / upper_break);
            let lipschitz = dilations.iter().map(|t| t * piece_max).collect();
            (
                KernelShape::Monic {
                    alpha,
                    beta,
                    lower_break,
                    upper_break,
                    cubic,
                    dilations,
                },
                lipschitz,
            )
        }
    };

    let mut fb = Filterbank {
        family,
        scales,
        dim: n,
        gamma,
        spectrum_min,
        spectrum_max,
        shape,
        frame_lower: 0.0,
        frame_upper: 0.0,
        spectral_frame: (0.0, 0.0),
        lipschitz,
    };
    let (g_min, g_max) = eig.iter().fold((f64::INFINITY, 0.0_f64), |(lo, hi), &l| {
        let g = fb.frame_function(l);
        (lo.min(g), hi.max(g))
    });
    fb.spectral_frame = (libm::sqrt(g_min), libm::sqrt(g_max));
    (fb.frame_lower, fb.frame_upper) = match family {
        // G(λ) ≥ (1-λ)² and the band-pass terms telescope to at most 1 on [0, 1]
        KernelFamily::Diffusion if gamma <= 1.0 => (1.0 - gamma, 1.0),
        _ => fb.spectral_frame,
    };
    Ok(fb)
}

fn diffusion_lipschitz(j: usize, gamma: f64) -> f64 {
    if j == 0 {
        return 1.0;
    }
    let a = libm::ldexp(1.0, j as i32 - 1);
    if gamma <= 1.0 {
        a
    } else {
        // crude bound on |a λ^(a-1) - 2a λ^(2a-1)| for λ in [0, γ]
        a * libm::pow(gamma, a - 1.0) + 2.0 * a * libm::pow(gamma, 2.0 * a - 1.0)
    }
}

/// The dense wavelet matrices `H_j = V diag(h_j(λ)) Vᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletMatrixSet {
    matrices: Vec<DMatrix<f64>>,
    family: KernelFamily,
    operator: WaveletOperator,
}

impl WaveletMatrixSet {
    pub fn matrices(&self) -> &[DMatrix<f64>] {
        &self.matrices
    }

    pub fn matrix(&self, j: usize) -> &DMatrix<f64> {
        &self.matrices[j]
    }

    pub fn operator(&self) -> &WaveletOperator {
        &self.operator
    }

    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }

    pub fn apply(&self, j: usize, x: &DVector<f64>) -> DVector<f64> {
        &self.matrices[j] * x
    }
}

pub fn wavelet_matrices(
    filterbank: &Filterbank,
    operator: &WaveletOperator,
) -> Result<WaveletMatrixSet> {
    if filterbank.dim() != operator.dim() {
        return Err(CstError::ShapeError {
            expected: filterbank.dim(),
            found: operator.dim(),
        });
    }
    let decomposition = operator.decomposition();
    let matrices = (0..filterbank.scales())
        .map(|j| decomposition.apply_function(|l| filterbank.response(j, l)))
        .collect();
    Ok(WaveletMatrixSet {
        matrices,
        family: filterbank.family(),
        operator: operator.clone(),
    })
}

/// `H_j x` for every diffusion scale `j < scales`, computed from repeated
/// products with the operator matrix instead of its eigendecomposition.
pub fn diffusion_polynomial_apply(
    operator: &DMatrix<f64>,
    scales: usize,
    x: &DVector<f64>,
) -> Result<Vec<DVector<f64>>> {
    if scales < 2 {
        return Err(CstError::InvalidScaleCount(scales));
    }
    if operator.nrows() != x.len() || operator.ncols() != x.len() {
        return Err(CstError::ShapeError {
            expected: operator.nrows(),
            found: x.len(),
        });
    }
    // dyadic[k] = T^(2^k) x for k = 0..scales-1, plus x itself in front
    let mut dyadic = Vec::with_capacity(scales + 1);
    dyadic.push(x.clone());
    let mut current = x.clone();
    let mut power = 0usize;
    for k in 0..scales {
        let target = 1usize << k;
        while power < target {
            current = operator * &current;
            power += 1;
        }
        dyadic.push(current.clone());
    }
    let mut out = Vec::with_capacity(scales);
    out.push(&dyadic[0] - &dyadic[1]);
    for j in 1..scales {
        out.push(&dyadic[j] - &dyadic[j + 1]);
    }
    Ok(out)
}

/// A wavelet centered on one feature and, for diffusion kernels, the
/// covariance-path distances that bound it.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationProfile {
    pub center: usize,
    pub scale: usize,
    /// `h_j^a = H_j δ_a`
    pub wavelet: DVector<f64>,
    /// `|[T^(2^(j-1))]_ab|`, the inverse distance at the lower power.
    pub inverse_distance_low: Option<DVector<f64>>,
    /// `|[T^(2^j)]_ab|`
    pub inverse_distance_high: Option<DVector<f64>>,
}

impl LocalizationProfile {
    /// `d_T^s(a, b) = |[T^s]_ab|^-1` at `s = 2^(j-1)`; infinite when the
    /// entry vanishes.
    pub fn distance_low(&self, b: usize) -> Option<f64> {
        self.inverse_distance_low.as_ref().map(|d| 1.0 / d[b])
    }

    pub fn distance_high(&self, b: usize) -> Option<f64> {
        self.inverse_distance_high.as_ref().map(|d| 1.0 / d[b])
    }

    /// Features `b` where `|[h_j^a]_b| > d^(2^(j-1))(a,b)^-1 + d^(2^j)(a,b)^-1`.
    /// Empty when no bound applies.
    pub fn violations(&self, tol: f64) -> Vec<usize> {
        match (&self.inverse_distance_low, &self.inverse_distance_high) {
            (Some(low), Some(high)) => (0..self.wavelet.len())
                .filter(|&b| self.wavelet[b].abs() > low[b] + high[b] + tol)
                .collect(),
            _ => Vec::new(),
        }
    }

    pub fn bound_holds(&self, tol: f64) -> bool {
        self.violations(tol).is_empty()
    }
}

pub fn localization_profile(
    set: &WaveletMatrixSet,
    center: usize,
    scale: usize,
) -> Result<LocalizationProfile> {
    let n = set.operator.dim();
    if center >= n {
        return Err(CstError::IndexError {
            index: center,
            len: n,
        });
    }
    if scale >= set.len() {
        return Err(CstError::IndexError {
            index: scale,
            len: set.len(),
        });
    }
    let wavelet = set.matrices[scale].column(center).into_owned();
    let (low, high) = if set.family == KernelFamily::Diffusion && scale >= 1 {
        let t = set.operator.matrix();
        let low_power = 1usize << (scale - 1);
        let mut column = DVector::zeros(n);
        column[center] = 1.0;
        for _ in 0..low_power {
            column = t * column;
        }
        let low = column.abs();
        for _ in 0..low_power {
            column = t * column;
        }
        (Some(low), Some(column.abs()))
    } else {
        (None, None)
    };
    Ok(LocalizationProfile {
        center,
        scale,
        wavelet,
        inverse_distance_low: low,
        inverse_distance_high: high,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{wavelet_operator, OperatorKind, SampleCovariance};

    fn operator_from_diag(diag: &[f64], kind: OperatorKind, gamma: f64) -> WaveletOperator {
        let cov = SampleCovariance::known(DMatrix::from_diagonal(&DVector::from_row_slice(diag)))
            .unwrap();
        wavelet_operator(&cov, kind, gamma).unwrap()
    }

    #[test]
    fn diffusion_gamma_values() {
        assert_eq!(diffusion_gamma(2).unwrap(), 0.5);
        assert!((diffusion_gamma(3).unwrap() - core::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert!((diffusion_gamma(4).unwrap() - 0.840_896_415_253_714_6).abs() < 1e-15);
        assert_eq!(diffusion_gamma(1), Err(CstError::InvalidScaleCount(1)));
    }

    #[test]
    fn diffusion_kernel_values() {
        assert_eq!(diffusion_kernel(1, 0.5), 0.25);
        for j in 1..6 {
            let peak = libm::pow(0.5, 1.0 / libm::ldexp(1.0, j as i32 - 1));
            assert!((diffusion_kernel(j, peak) - 0.25).abs() < 1e-15);
            assert_eq!(diffusion_kernel(j, 0.0), 0.0);
            assert_eq!(diffusion_kernel(j, 1.0), 0.0);
        }
        assert_eq!(diffusion_kernel(0, 0.0), 1.0);
    }

    #[test]
    fn kernel_eval_checks_domain_and_index() {
        let op = operator_from_diag(&[2.0, 1.0], OperatorKind::Normalized, 0.5);
        let fb = build_filterbank(&op, KernelFamily::Diffusion, 3).unwrap();
        assert!(kernel_eval(&fb, 1, 0.25).is_ok());
        assert!(matches!(
            kernel_eval(&fb, 1, 0.75),
            Err(CstError::DomainError { .. })
        ));
        assert!(matches!(
            kernel_eval(&fb, 3, 0.1),
            Err(CstError::IndexError { .. })
        ));
    }

    #[test]
    fn diffusion_frame_and_lipschitz() {
        let gamma = diffusion_gamma(4).unwrap();
        let op = operator_from_diag(&[3.0, 2.0, 0.5, 0.1], OperatorKind::Normalized, gamma);
        let fb = build_filterbank(&op, KernelFamily::Diffusion, 4).unwrap();
        assert_eq!(fb.frame_upper(), 1.0);
        assert_eq!(fb.frame_lower(), 1.0 - gamma);
        assert_eq!(fb.lipschitz(), &[1.0, 1.0, 2.0, 4.0]);
        let (lo, hi) = fb.spectral_frame();
        assert!(lo >= fb.frame_lower() && hi <= fb.frame_upper());
    }

    #[test]
    fn hann_peak_and_edges() {
        let op = operator_from_diag(&[4.0, 3.0, 2.0, 1.0], OperatorKind::Normalized, 10.0);
        let fam = KernelFamily::Hann {
            overlap: 3.0,
            warp: false,
        };
        let fb = build_filterbank(&op, fam, 5).unwrap();
        let width = 3.0 * 10.0 / (5.0 + 1.0 - 3.0);
        for (j, &t) in fb.scale_parameters().iter().enumerate() {
            assert!(fb.response(j, t).abs() < 1e-15);
            assert!(fb.response(j, t - width).abs() < 1e-15);
            assert!((fb.response(j, t - width / 2.0) - 1.0).abs() < 1e-15);
            assert_eq!(fb.response(j, t + 0.1), 0.0);
        }
        assert!(fb.response(0, 0.0) > 0.0);
    }

    #[test]
    fn hann_is_tight_on_interior_spectrum() {
        let diag: Vec<f64> = (1..=12).map(|i| i as f64 * 0.37).collect();
        for warp in [false, true] {
            let op = operator_from_diag(&diag, OperatorKind::Normalized, 10.0);
            let fb = build_filterbank(&op, KernelFamily::Hann { overlap: 3.0, warp }, 6).unwrap();
            let target = libm::sqrt(3.0 * 3.0 / 8.0);
            assert!((fb.frame_lower() - target).abs() < 1e-12);
            assert!((fb.frame_upper() - target).abs() < 1e-12);
        }
    }

    #[test]
    fn hann_rejects_wide_overlap() {
        let op = operator_from_diag(&[2.0, 1.0], OperatorKind::Normalized, 10.0);
        let fam = KernelFamily::Hann {
            overlap: 5.0,
            warp: false,
        };
        assert!(matches!(
            build_filterbank(&op, fam, 4),
            Err(CstError::InvalidParameter(_))
        ));
    }

    #[test]
    fn monic_normalization_and_continuity() {
        let diag: Vec<f64> = (1..=16).map(|i| 0.2 + i as f64 * 0.31).collect();
        let op = operator_from_diag(&diag, OperatorKind::Normalized, 1.0);
        let fb = build_filterbank(&op, KernelFamily::monic(), 4).unwrap();
        let (l1, l2) = fb.monic_breakpoints().unwrap();
        assert!(l1 < l2);
        let [a, b, c, d] = fb.monic_cubic().unwrap();
        let s = |u: f64| ((a * u + b) * u + c) * u + d;
        let ds = |u: f64| (3.0 * a * u + 2.0 * b) * u + c;
        assert!((s(l1) - 1.0).abs() < 1e-10 && (s(l2) - 1.0).abs() < 1e-10);
        assert!((ds(l1) - 2.0 / l1).abs() < 1e-8 && (ds(l2) + 2.0 / l2).abs() < 1e-8);
        for (j, t) in fb.scale_parameters().iter().enumerate() {
            assert!((fb.response(j, l1 / t) - 1.0).abs() < 1e-10);
            assert!((fb.response(j, l2 / t) - 1.0).abs() < 1e-10);
        }
        // dilations are log-spaced from K λ̄₂/λ₁ down to λ̄₂/λ₁
        let t = fb.scale_parameters();
        assert!((t[0] / t[3] - 20.0).abs() < 1e-10);
        assert!((t[3] - l2 / 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_operator_diffusion_matrices() {
        let cov = SampleCovariance::known(DMatrix::identity(3, 3)).unwrap();
        let op =
            wavelet_operator(&cov, OperatorKind::Inverted, diffusion_gamma(3).unwrap()).unwrap();
        let fb = build_filterbank(&op, KernelFamily::Diffusion, 3).unwrap();
        let set = wavelet_matrices(&fb, &op).unwrap();
        assert_eq!(set.matrix(0), &DMatrix::identity(3, 3));
        assert!(set
            .matrix(1)
            .iter()
            .chain(set.matrix(2).iter())
            .all(|&v| v == 0.0));
        assert!(matches!(
            build_filterbank(&op, KernelFamily::monic(), 3),
            Err(CstError::DegenerateSpectrum)
        ));
    }

    #[test]
    fn identity_operator_kills_every_diffusion_kernel() {
        let cov = SampleCovariance::known(DMatrix::identity(4, 4)).unwrap();
        let op = wavelet_operator(&cov, OperatorKind::Normalized, 1.0).unwrap();
        let fb = build_filterbank(&op, KernelFamily::Diffusion, 4).unwrap();
        let set = wavelet_matrices(&fb, &op).unwrap();
        assert!(set.matrices().iter().all(|h| h.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn diagonal_operator_localizes_on_center() {
        let op = operator_from_diag(&[0.9, 0.6, 0.4, 0.2], OperatorKind::Normalized, 0.8);
        let fb = build_filterbank(&op, KernelFamily::Diffusion, 3).unwrap();
        let set = wavelet_matrices(&fb, &op).unwrap();
        for a in 0..4 {
            for j in 1..3 {
                let p = localization_profile(&set, a, j).unwrap();
                for b in 0..4 {
                    if b != a {
                        assert_eq!(p.wavelet[b], 0.0);
                        assert_eq!(p.distance_low(b), Some(f64::INFINITY));
                    }
                }
                assert!(p.bound_holds(1e-14));
            }
        }
        assert!(matches!(
            localization_profile(&set, 4, 1),
            Err(CstError::IndexError { .. })
        ));
    }

    #[test]
    fn descriptor_lists_bounds() {
        let op = operator_from_diag(&[2.0, 1.0, 0.5], OperatorKind::Normalized, 1.0);
        let fb = build_filterbank(&op, KernelFamily::monic(), 3).unwrap();
        let d = fb.descriptor();
        let keys: Vec<&str> = d.iter().map(|(k, _)| k.as_str()).collect();
        for k in [
            "family",
            "scales",
            "gamma",
            "frame_lower",
            "frame_upper",
            "lipschitz",
        ] {
            assert!(keys.contains(&k));
        }
    }
}
