//! Covariance scattering transforms on dense sample covariances.
//!
//! `no_std` with `alloc`. File formats, the experiment harness and the CLI
//! live in the `cst` crate.
#![no_std]
// `!(x > 0.0)` is used on purpose so NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod bounds;
pub mod error;
pub mod readout;
pub mod rng;
pub mod scattering;
pub mod spectral;
pub mod synthdata;
pub mod wavelets;

pub use bounds::{
    cst_stability_bound, estimate_kmax, measured_delta, pca_gap_scale, pruning_preserved,
    signal_stability_bound, wavelet_delta, BoundConstants,
};
pub use error::{CstError, Result};
pub use readout::{
    mae, mse, mse_matrix, pca_fit_transform, ridge_fit, select_ridge, PcaModel, RidgeModel,
    RIDGE_GRID,
};
pub use scattering::{
    all_paths, cst_transform_batch, feature_count, Aggregation, CstConfig, CstModel, FeatureLayout,
    FeatureMatrix, FeatureVector, Nonlinearity, Pruning, ScatterPath, ScatterTree,
};
pub use spectral::{
    eig_sym, sample_covariance, wavelet_operator, DataMatrix, OperatorKind, SampleCovariance,
    SpectralDecomposition, WaveletOperator,
};
pub use synthdata::{synth_generate, SynthDataset, SynthSpec};
pub use wavelets::{
    build_filterbank, diffusion_gamma, kernel_eval, wavelet_matrices, Filterbank, KernelFamily,
    WaveletMatrixSet,
};
