//! The pruned covariance scattering transform.
//!
//! A node at depth `ℓ` is indexed by the scale tuple `(j_1, …, j_ℓ)` and holds
//! `ρ(H_{j_ℓ} … ρ(H_{j_1} x))`. The root is the input signal itself. A child
//! survives when its energy ratio to the parent is strictly above `τ`.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use alloc::{format, vec};
use core::cmp::Ordering;
use core::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{CstError, Result};
use crate::spectral::{
    sample_covariance, wavelet_operator, DataMatrix, OperatorKind, SampleCovariance,
    WaveletOperator,
};
use crate::wavelets::{
    build_filterbank, wavelet_matrices, Filterbank, KernelFamily, WaveletMatrixSet,
};

/// Pointwise nonlinearity applied after every wavelet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Nonlinearity {
    #[default]
    Abs,
}

impl Nonlinearity {
    pub fn apply(self, v: &mut DVector<f64>) {
        match self {
            Nonlinearity::Abs => v.apply(|e| *e = e.abs()),
        }
    }

    fn apply_matrix(self, m: &mut DMatrix<f64>) {
        match self {
            Nonlinearity::Abs => m.apply(|e| *e = e.abs()),
        }
    }

    pub fn name(self) -> &'static str {
        "abs"
    }
}

/// Readout `U` applied to every retained node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregation {
    /// All `N` entries.
    #[default]
    Identity,
    /// Average over the `N` entries.
    Mean,
}

impl Aggregation {
    pub fn name(self) -> &'static str {
        match self {
            Aggregation::Identity => "identity",
            Aggregation::Mean => "mean",
        }
    }

    /// Entries emitted per path for signals of length `n`.
    pub fn width(self, n: usize) -> usize {
        match self {
            Aggregation::Identity => n,
            Aggregation::Mean => 1,
        }
    }

    /// Operator norm of `U` for signals of length `n`.
    pub fn operator_norm(self, n: usize) -> f64 {
        match self {
            Aggregation::Identity => 1.0,
            Aggregation::Mean => 1.0 / libm::sqrt(n as f64),
        }
    }
}

impl core::str::FromStr for Aggregation {
    type Err = CstError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Aggregation::Identity),
            "mean" => Ok(Aggregation::Mean),
            other => Err(CstError::InvalidParameter(format!(
                "unknown aggregation '{other}'"
            ))),
        }
    }
}

/// Energy pruning rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pruning {
    /// Keep every path, including zero-energy ones, so layouts never depend
    /// on the data.
    Disabled,
    /// Keep a child iff `‖child‖ / ‖parent‖ > τ`.
    Threshold(f64),
}

impl Pruning {
    pub fn threshold(tau: f64) -> Self {
        Pruning::Threshold(tau)
    }

    fn validate(self) -> Result<()> {
        match self {
            Pruning::Threshold(tau) if !(0.0..1.0).contains(&tau) => Err(
                CstError::InvalidParameter(format!("tau must lie in [0, 1), got {tau}")),
            ),
            _ => Ok(()),
        }
    }

    /// Whether a child with energy ratio `ratio` survives. `None` means the
    /// parent had zero energy.
    fn keeps(self, ratio: Option<f64>) -> bool {
        match self {
            Pruning::Disabled => true,
            Pruning::Threshold(tau) => ratio.is_some_and(|r| r > tau),
        }
    }

    pub fn tau(self) -> Option<f64> {
        match self {
            Pruning::Threshold(tau) => Some(tau),
            Pruning::Disabled => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CstConfig {
    pub family: KernelFamily,
    pub scales: usize,
    pub layers: usize,
    pub pruning: Pruning,
    pub nonlinearity: Nonlinearity,
    pub aggregation: Aggregation,
    pub operator_kind: OperatorKind,
    pub gamma_override: Option<f64>,
}

impl CstConfig {
    /// `J` scales, `L` layers, no pruning threshold (`τ = 0`), identity
    /// readout on the normalized operator.
    pub fn new(family: KernelFamily, scales: usize, layers: usize) -> Self {
        CstConfig {
            family,
            scales,
            layers,
            pruning: Pruning::Threshold(0.0),
            nonlinearity: Nonlinearity::Abs,
            aggregation: Aggregation::Identity,
            operator_kind: OperatorKind::Normalized,
            gamma_override: None,
        }
    }

    pub fn with_pruning(mut self, pruning: Pruning) -> Self {
        self.pruning = pruning;
        self
    }

    pub fn with_tau(self, tau: f64) -> Self {
        self.with_pruning(Pruning::Threshold(tau))
    }

    pub fn with_aggregation(mut self, aggregation: Aggregation) -> Self {
        self.aggregation = aggregation;
        self
    }

    pub fn with_operator(mut self, kind: OperatorKind) -> Self {
        self.operator_kind = kind;
        self
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma_override = Some(gamma);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.scales < 2 {
            return Err(CstError::InvalidScaleCount(self.scales));
        }
        if self.layers < 1 {
            return Err(CstError::InvalidParameter(
                "layers must be at least 1".into(),
            ));
        }
        self.pruning.validate()?;
        if let Some(g) = self.gamma_override {
            if !(g.is_finite() && g > 0.0) {
                return Err(CstError::InvalidParameter(format!(
                    "gamma override must be positive, got {g}"
                )));
            }
        }
        Ok(())
    }

    pub fn gamma(&self) -> Result<f64> {
        match self.gamma_override {
            Some(g) => Ok(g),
            None => self.family.default_gamma(self.scales),
        }
    }

    /// Short label such as `diffusion-J7-L2-normalized`.
    pub fn label(&self) -> String {
        format!(
            "{}-J{}-L{}-{}",
            self.family.name(),
            self.scales,
            self.layers,
            self.operator_kind.name()
        )
    }
}

/// Scale tuple `(j_1, …, j_ℓ)` in application order. Ordered by length,
/// then lexicographically.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct ScatterPath(Vec<usize>);

impl ScatterPath {
    pub fn root() -> Self {
        ScatterPath(Vec::new())
    }

    pub fn new(scales: Vec<usize>) -> Self {
        ScatterPath(scales)
    }

    pub fn scales(&self) -> &[usize] {
        &self.0
    }

    pub fn depth(&self) -> usize {
        self.0.len()
    }

    pub fn is_root(&self) -> bool {
        self.0.is_empty()
    }

    pub fn child(&self, j: usize) -> Self {
        let mut s = self.0.clone();
        s.push(j);
        ScatterPath(s)
    }

    pub fn parent(&self) -> Option<Self> {
        (!self.0.is_empty()).then(|| ScatterPath(self.0[..self.0.len() - 1].to_vec()))
    }

    /// Column name: `p_root` or `p_j1.j2…`.
    pub fn name(&self) -> String {
        format!("p_{self}")
    }
}

impl fmt::Display for ScatterPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("root");
        }
        for (i, j) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(".")?;
            }
            write!(f, "{j}")?;
        }
        Ok(())
    }
}

impl core::str::FromStr for ScatterPath {
    type Err = CstError;

    fn from_str(s: &str) -> Result<Self> {
        let body = s.strip_prefix("p_").unwrap_or(s);
        if body == "root" {
            return Ok(ScatterPath::root());
        }
        body.split('.')
            .map(|part| {
                part.parse::<usize>()
                    .map_err(|_| CstError::InvalidParameter(format!("bad path '{s}'")))
            })
            .collect::<Result<Vec<_>>>()
            .map(ScatterPath)
    }
}

impl Ord for ScatterPath {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0
            .len()
            .cmp(&other.0.len())
            .then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for ScatterPath {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScatterNode {
    pub signal: DVector<f64>,
    pub energy: f64,
}

/// Retained nodes of one transform plus the pruned children and the ratio
/// that removed them (`NaN` when the parent had zero energy).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScatterTree {
    pub nodes: BTreeMap<ScatterPath, ScatterNode>,
    pub pruned: BTreeMap<ScatterPath, f64>,
}

impl ScatterTree {
    pub fn retained_paths(&self) -> Vec<ScatterPath> {
        self.nodes.keys().cloned().collect()
    }
}

/// Retained paths in layout order with per-path width.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureLayout {
    paths: Vec<ScatterPath>,
    width: usize,
}

impl FeatureLayout {
    pub fn new(paths: Vec<ScatterPath>, width: usize) -> Self {
        FeatureLayout { paths, width }
    }

    pub fn paths(&self) -> &[ScatterPath] {
        &self.paths
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.paths.len() * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    /// Retained path count at each depth `0..layers`.
    pub fn layer_counts(&self, layers: usize) -> Vec<usize> {
        let mut counts = vec![0; layers];
        for p in &self.paths {
            if p.depth() < layers {
                counts[p.depth()] += 1;
            }
        }
        counts
    }

    /// Column names: `p_…` per path, with `[i]` suffixes when a path spans
    /// several entries.
    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.len());
        for p in &self.paths {
            if self.width == 1 {
                out.push(p.name());
            } else {
                out.extend((0..self.width).map(|i| format!("{}[{i}]", p.name())));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub coefficients: DVector<f64>,
    pub layout: FeatureLayout,
}

impl FeatureVector {
    pub fn layer_counts(&self, layers: usize) -> Vec<usize> {
        self.layout.layer_counts(layers)
    }

    /// Coefficients of one path, if retained.
    pub fn path_block(&self, path: &ScatterPath) -> Option<&[f64]> {
        let pos = self.layout.paths.iter().position(|p| p == path)?;
        let w = self.layout.width;
        Some(&self.coefficients.as_slice()[pos * w..(pos + 1) * w])
    }
}

/// Features of a batch, one column per sample (`D × T`).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub values: DMatrix<f64>,
    pub layout: FeatureLayout,
}

/// `(J^L - 1) / (J - 1)`, the number of paths of an unpruned transform.
pub fn feature_count(scales: usize, layers: usize) -> Result<usize> {
    if scales < 2 {
        return Err(CstError::InvalidScaleCount(scales));
    }
    if layers < 1 {
        return Err(CstError::InvalidParameter(
            "layers must be at least 1".into(),
        ));
    }
    let overflow =
        || CstError::InvalidParameter(format!("J^L overflows for J={scales}, L={layers}"));
    let mut total = 0usize;
    let mut level = 1usize;
    for _ in 0..layers {
        total = total.checked_add(level).ok_or_else(overflow)?;
        level = level.checked_mul(scales).ok_or_else(overflow)?;
    }
    Ok(total)
}

fn aggregate(aggregation: Aggregation, signal: &DVector<f64>) -> DVector<f64> {
    match aggregation {
        Aggregation::Identity => signal.clone(),
        Aggregation::Mean => DVector::from_element(1, signal.mean()),
    }
}

/// Operator, filterbank and wavelet matrices fitted to one covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct CstModel {
    config: CstConfig,
    filterbank: Filterbank,
    matrices: WaveletMatrixSet,
}

impl CstModel {
    pub fn fit(cov: &SampleCovariance, config: CstConfig) -> Result<Self> {
        config.validate()?;
        let operator = wavelet_operator(cov, config.operator_kind, config.gamma()?)?;
        Self::from_operator(&operator, config)
    }

    pub fn fit_data(data: &DataMatrix, config: CstConfig) -> Result<Self> {
        Self::fit(&sample_covariance(data)?, config)
    }

    pub fn from_operator(operator: &WaveletOperator, config: CstConfig) -> Result<Self> {
        config.validate()?;
        let filterbank = build_filterbank(operator, config.family, config.scales)?;
        let matrices = wavelet_matrices(&filterbank, operator)?;
        Ok(CstModel {
            config,
            filterbank,
            matrices,
        })
    }

    pub fn config(&self) -> &CstConfig {
        &self.config
    }

    pub fn filterbank(&self) -> &Filterbank {
        &self.filterbank
    }

    pub fn matrices(&self) -> &WaveletMatrixSet {
        &self.matrices
    }

    pub fn operator(&self) -> &WaveletOperator {
        self.matrices.operator()
    }

    pub fn dim(&self) -> usize {
        self.matrices.operator().dim()
    }

    /// Operator norm `B_U` of the readout.
    pub fn readout_norm(&self) -> f64 {
        self.config.aggregation.operator_norm(self.dim())
    }

    fn check_dim(&self, n: usize) -> Result<()> {
        if n != self.dim() {
            return Err(CstError::ShapeError {
                expected: self.dim(),
                found: n,
            });
        }
        Ok(())
    }

    /// Transform with the configured pruning rule.
    pub fn transform(&self, x: &DVector<f64>) -> Result<(ScatterTree, FeatureVector)> {
        self.transform_with(x, self.config.pruning)
    }

    pub fn transform_with(
        &self,
        x: &DVector<f64>,
        pruning: Pruning,
    ) -> Result<(ScatterTree, FeatureVector)> {
        self.check_dim(x.len())?;
        pruning.validate()?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(CstError::InvalidData(
                "signal has non-finite entries".into(),
            ));
        }
        let mut tree = ScatterTree::default();
        tree.nodes.insert(
            ScatterPath::root(),
            ScatterNode {
                signal: x.clone(),
                energy: x.norm(),
            },
        );
        let mut frontier = vec![ScatterPath::root()];
        for _ in 1..self.config.layers {
            let mut next = Vec::new();
            for parent in &frontier {
                let (parent_signal, parent_energy) = {
                    let node = &tree.nodes[parent];
                    (node.signal.clone(), node.energy)
                };
                for j in 0..self.config.scales {
                    let mut child = self.matrices.apply(j, &parent_signal);
                    self.config.nonlinearity.apply(&mut child);
                    let energy = child.norm();
                    let ratio = (parent_energy > 0.0).then(|| energy / parent_energy);
                    let path = parent.child(j);
                    if pruning.keeps(ratio) {
                        tree.nodes.insert(
                            path.clone(),
                            ScatterNode {
                                signal: child,
                                energy,
                            },
                        );
                        next.push(path);
                    } else {
                        tree.pruned.insert(path, ratio.unwrap_or(f64::NAN));
                    }
                }
            }
            frontier = next;
        }
        let width = self.config.aggregation.width(self.dim());
        let paths = tree.retained_paths();
        let mut coefficients = DVector::zeros(paths.len() * width);
        for (k, p) in paths.iter().enumerate() {
            let block = aggregate(self.config.aggregation, &tree.nodes[p].signal);
            coefficients.rows_mut(k * width, width).copy_from(&block);
        }
        Ok((
            tree,
            FeatureVector {
                coefficients,
                layout: FeatureLayout::new(paths, width),
            },
        ))
    }

    fn check_batch(&self, data: &DataMatrix) -> Result<()> {
        self.check_dim(data.n_features())
    }

    /// Shared pruning decision for a batch: a path survives iff the mean over
    /// samples of its child-to-parent energy ratio exceeds `τ`. Samples whose
    /// parent has zero energy contribute a ratio of zero.
    pub fn select_paths(&self, data: &DataMatrix) -> Result<Vec<ScatterPath>> {
        self.select_paths_with(data, self.config.pruning)
    }

    pub fn select_paths_with(
        &self,
        data: &DataMatrix,
        pruning: Pruning,
    ) -> Result<Vec<ScatterPath>> {
        self.check_batch(data)?;
        pruning.validate()?;
        if pruning == Pruning::Disabled {
            return Ok(all_paths(self.config.scales, self.config.layers));
        }
        let t = data.n_samples();
        let mut kept = vec![ScatterPath::root()];
        let mut frontier = vec![(ScatterPath::root(), data.values().clone())];
        for _ in 1..self.config.layers {
            let mut next = Vec::new();
            for (parent, signals) in &frontier {
                let parent_norms: Vec<f64> = signals.column_iter().map(|c| c.norm()).collect();
                for j in 0..self.config.scales {
                    let mut child = self.matrices.matrix(j) * signals;
                    self.config.nonlinearity.apply_matrix(&mut child);
                    let ratio_sum: f64 = child
                        .column_iter()
                        .zip(&parent_norms)
                        .map(|(c, &p)| if p > 0.0 { c.norm() / p } else { 0.0 })
                        .sum();
                    let mean_ratio = ratio_sum / t as f64;
                    if pruning.keeps(Some(mean_ratio)) {
                        let path = parent.child(j);
                        kept.push(path.clone());
                        next.push((path, child));
                    }
                }
            }
            frontier = next;
        }
        kept.sort();
        Ok(kept)
    }

    /// Features of every sample on a fixed, prefix-closed set of paths.
    pub fn transform_paths(
        &self,
        data: &DataMatrix,
        paths: &[ScatterPath],
    ) -> Result<FeatureMatrix> {
        self.check_batch(data)?;
        let mut layout: Vec<ScatterPath> = paths.to_vec();
        layout.sort();
        layout.dedup();
        for p in &layout {
            if p.depth() >= self.config.layers
                || p.scales().iter().any(|&j| j >= self.config.scales)
            {
                return Err(CstError::InvalidParameter(format!(
                    "path {p} does not fit J={}, L={}",
                    self.config.scales, self.config.layers
                )));
            }
        }
        let n = self.dim();
        let t = data.n_samples();
        let width = self.config.aggregation.width(n);
        let mut values = DMatrix::zeros(layout.len() * width, t);
        // signals of every node computed so far, including non-listed parents
        let mut cache: BTreeMap<ScatterPath, DMatrix<f64>> = BTreeMap::new();
        cache.insert(ScatterPath::root(), data.values().clone());
        for (k, path) in layout.iter().enumerate() {
            let signals = self.batch_signals(path, &mut cache);
            match self.config.aggregation {
                Aggregation::Identity => values.rows_mut(k * width, width).copy_from(&signals),
                Aggregation::Mean => {
                    for c in 0..t {
                        values[(k, c)] = signals.column(c).mean();
                    }
                }
            }
        }
        Ok(FeatureMatrix {
            values,
            layout: FeatureLayout::new(layout, width),
        })
    }

    fn batch_signals(
        &self,
        path: &ScatterPath,
        cache: &mut BTreeMap<ScatterPath, DMatrix<f64>>,
    ) -> DMatrix<f64> {
        if let Some(s) = cache.get(path) {
            return s.clone();
        }
        let parent = path.parent().expect("root is always cached");
        let parent_signals = self.batch_signals(&parent, cache);
        let j = *path.scales().last().expect("non-root path");
        let mut child = self.matrices.matrix(j) * parent_signals;
        self.config.nonlinearity.apply_matrix(&mut child);
        cache.insert(path.clone(), child.clone());
        child
    }

    /// Batch transform with a shared layout.
    pub fn transform_batch(&self, data: &DataMatrix) -> Result<FeatureMatrix> {
        let paths = self.select_paths(data)?;
        self.transform_paths(data, &paths)
    }
}

/// Every path of depth `< layers` over `scales` kernels, in layout order.
pub fn all_paths(scales: usize, layers: usize) -> Vec<ScatterPath> {
    let mut out = vec![ScatterPath::root()];
    let mut level = vec![ScatterPath::root()];
    for _ in 1..layers {
        level = level
            .iter()
            .flat_map(|p| (0..scales).map(move |j| p.child(j)))
            .collect();
        out.extend(level.iter().cloned());
    }
    out
}

pub fn cst_transform_batch(model: &CstModel, data: &DataMatrix) -> Result<FeatureMatrix> {
    model.transform_batch(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wavelets::diffusion_gamma;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_data(n: usize, t: usize, seed: u64) -> DataMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // correlated features so the spectrum is spread out
        let mix = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let z = DMatrix::from_fn(n, t, |_, _| rng.sample::<f64, _>(StandardNormal));
        DataMatrix::new(mix * z).unwrap()
    }

    fn random_signal(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
        DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    #[test]
    fn feature_count_values() {
        assert_eq!(feature_count(4, 2).unwrap(), 5);
        assert_eq!(feature_count(3, 3).unwrap(), 13);
        assert_eq!(feature_count(7, 4).unwrap(), 400);
        assert_eq!(feature_count(5, 1).unwrap(), 1);
        assert!(feature_count(1, 3).is_err());
        assert!(feature_count(2, 0).is_err());
    }

    #[test]
    fn path_order_is_breadth_first() {
        let mut paths = [
            ScatterPath::new(vec![1, 0]),
            ScatterPath::new(vec![2]),
            ScatterPath::root(),
            ScatterPath::new(vec![0, 2]),
            ScatterPath::new(vec![0]),
        ];
        paths.sort();
        let names: Vec<String> = paths.iter().map(|p| p.name()).collect();
        assert_eq!(names, ["p_root", "p_0", "p_2", "p_0.2", "p_1.0"]);
        assert_eq!("p_1.0".parse::<ScatterPath>().unwrap(), paths[4]);
        assert_eq!(all_paths(3, 3).len(), 13);
    }

    #[test]
    fn config_rejects_bad_tau() {
        let data = random_data(5, 30, 1);
        for tau in [-0.1, 1.0, 1.5] {
            let cfg = CstConfig::new(KernelFamily::Diffusion, 3, 2).with_tau(tau);
            assert!(matches!(
                CstModel::fit_data(&data, cfg),
                Err(CstError::InvalidParameter(_))
            ));
        }
    }

    #[test]
    fn single_layer_is_readout_only() {
        let data = random_data(6, 40, 2);
        let model =
            CstModel::fit_data(&data, CstConfig::new(KernelFamily::Diffusion, 3, 1)).unwrap();
        let x = data.sample(0);
        let (_, fv) = model.transform(&x).unwrap();
        assert_eq!(fv.coefficients, x);
        assert_eq!(fv.layout.names()[0], "p_root[0]");
    }

    #[test]
    fn zero_signal_keeps_only_root() {
        let data = random_data(6, 40, 3);
        let model =
            CstModel::fit_data(&data, CstConfig::new(KernelFamily::Diffusion, 3, 3)).unwrap();
        let (tree, fv) = model.transform(&DVector::zeros(6)).unwrap();
        assert_eq!(tree.nodes.len(), 1);
        assert_eq!(tree.pruned.len(), 3);
        assert!(fv.coefficients.iter().all(|&v| v == 0.0));
        let (tree, fv) = model
            .transform_with(&DVector::zeros(6), Pruning::Disabled)
            .unwrap();
        assert_eq!(tree.nodes.len(), 13);
        assert_eq!(fv.coefficients.len(), 13 * 6);
    }

    #[test]
    fn generic_input_reaches_full_count() {
        let data = random_data(10, 80, 4);
        for (j, l) in [(3, 3), (4, 2)] {
            let model =
                CstModel::fit_data(&data, CstConfig::new(KernelFamily::Diffusion, j, l)).unwrap();
            let (_, fv) = model.transform(&data.sample(5)).unwrap();
            assert_eq!(fv.layout.paths().len(), feature_count(j, l).unwrap());
        }
    }

    /// Independent enumeration: every scale tuple applied left to right.
    fn brute_force(model: &CstModel, x: &DVector<f64>) -> Vec<f64> {
        let (j, l) = (model.config().scales, model.config().layers);
        let mut tuples: Vec<Vec<usize>> = vec![vec![]];
        for depth in 1..l {
            let count = j.pow(depth as u32);
            for code in 0..count {
                let mut digits = vec![0; depth];
                let mut c = code;
                for d in (0..depth).rev() {
                    digits[d] = c % j;
                    c /= j;
                }
                tuples.push(digits);
            }
        }
        let mut out = Vec::new();
        for tuple in tuples {
            let mut v = x.clone();
            for &s in &tuple {
                v = (model.matrices().matrix(s) * v).abs();
            }
            out.extend(v.iter().copied());
        }
        out
    }

    #[test]
    fn recursive_matches_brute_force() {
        let data = random_data(16, 100, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for family in [
            KernelFamily::Diffusion,
            KernelFamily::hann(),
            KernelFamily::monic(),
        ] {
            let model = CstModel::fit_data(&data, CstConfig::new(family, 3, 3)).unwrap();
            let x = random_signal(16, &mut rng);
            let (_, fv) = model.transform(&x).unwrap();
            let oracle = brute_force(&model, &x);
            assert_eq!(fv.coefficients.len(), oracle.len());
            for (a, b) in fv.coefficients.iter().zip(&oracle) {
                assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()));
            }
        }
    }

    #[test]
    fn identical_columns_give_identical_rows() {
        let data = random_data(6, 30, 5);
        let model = CstModel::fit_data(&data, CstConfig::new(KernelFamily::hann(), 4, 2)).unwrap();
        let x = data.sample(3);
        let batch = DataMatrix::new(DMatrix::from_fn(6, 4, |i, _| x[i])).unwrap();
        let fm = model.transform_batch(&batch).unwrap();
        for c in 1..4 {
            assert_eq!(fm.values.column(c), fm.values.column(0));
        }
    }

    #[test]
    fn batch_matches_single_at_zero_tau() {
        let data = random_data(8, 25, 6);
        let cfg = CstConfig::new(KernelFamily::Diffusion, 3, 3).with_aggregation(Aggregation::Mean);
        let model = CstModel::fit_data(&data, cfg).unwrap();
        let fm = model.transform_batch(&data).unwrap();
        for t in 0..data.n_samples() {
            let (_, fv) = model.transform(&data.sample(t)).unwrap();
            assert_eq!(fv.layout, fm.layout);
            for (a, b) in fv.coefficients.iter().zip(fm.values.column(t).iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn batch_selection_matches_stored_energies() {
        let data = random_data(20, 200, 7);
        let cfg = CstConfig::new(KernelFamily::Diffusion, 4, 3).with_tau(0.1);
        let model = CstModel::fit_data(&data, cfg).unwrap();
        let selected = model.select_paths(&data).unwrap();
        // recompute from per-sample unpruned trees
        let trees: Vec<ScatterTree> = (0..data.n_samples())
            .map(|t| {
                model
                    .transform_with(&data.sample(t), Pruning::Disabled)
                    .unwrap()
                    .0
            })
            .collect();
        let mut expected = vec![ScatterPath::root()];
        for path in all_paths(4, 3).into_iter().skip(1) {
            let parent = path.parent().unwrap();
            if !expected.contains(&parent) {
                continue;
            }
            let mean: f64 = trees
                .iter()
                .map(|tr| {
                    let p = tr.nodes[&parent].energy;
                    if p > 0.0 {
                        tr.nodes[&path].energy / p
                    } else {
                        0.0
                    }
                })
                .sum::<f64>()
                / trees.len() as f64;
            if mean > 0.1 {
                expected.push(path);
            }
        }
        expected.sort();
        assert_eq!(selected, expected);
        assert!(selected.len() < feature_count(4, 3).unwrap());
    }

    #[test]
    fn retained_nodes_obey_norm_growth() {
        let data = random_data(12, 60, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for family in [
            KernelFamily::Diffusion,
            KernelFamily::hann(),
            KernelFamily::monic(),
        ] {
            let model = CstModel::fit_data(&data, CstConfig::new(family, 4, 3)).unwrap();
            let b = model.filterbank().frame_upper();
            let x = random_signal(12, &mut rng);
            let (tree, _) = model.transform(&x).unwrap();
            for (path, node) in &tree.nodes {
                let bound = libm::pow(b, path.depth() as f64) * x.norm() + 1e-8;
                assert!(node.energy <= bound, "{path}: {} > {bound}", node.energy);
            }
        }
    }

    #[test]
    fn inverted_identity_covariance_model() {
        let cov = SampleCovariance::known(DMatrix::identity(3, 3)).unwrap();
        let cfg =
            CstConfig::new(KernelFamily::Diffusion, 3, 2).with_operator(OperatorKind::Inverted);
        let model = CstModel::fit(&cov, cfg).unwrap();
        assert_eq!(model.operator().matrix(), &DMatrix::zeros(3, 3));
        assert_eq!(model.matrices().matrix(0), &DMatrix::identity(3, 3));
        assert_eq!(model.filterbank().gamma(), diffusion_gamma(3).unwrap());
    }

    fn pruned_set(model: &CstModel, x: &DVector<f64>, tau: f64) -> Vec<ScatterPath> {
        model
            .transform_with(x, Pruning::Threshold(tau))
            .unwrap()
            .0
            .retained_paths()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn abs_is_non_expansive(a in prop::collection::vec(-1e3..1e3f64, 1..20), shift in prop::collection::vec(-1e3..1e3f64, 20)) {
            let a = DVector::from_vec(a);
            let b = DVector::from_iterator(a.len(), shift.iter().take(a.len()).copied());
            let (mut ra, mut rb) = (a.clone(), b.clone());
            Nonlinearity::Abs.apply(&mut ra);
            Nonlinearity::Abs.apply(&mut rb);
            prop_assert!((ra - rb).norm() <= (a - b).norm());
        }

        #[test]
        fn pruning_is_monotone(seed in 0u64..1000, t1 in 0.0..0.9f64, dt in 0.0..0.1f64) {
            let data = random_data(8, 40, seed);
            let model = CstModel::fit_data(&data, CstConfig::new(KernelFamily::Diffusion, 3, 3)).unwrap();
            let x = data.sample(0);
            let loose = pruned_set(&model, &x, t1);
            let strict = pruned_set(&model, &x, t1 + dt);
            prop_assert!(strict.iter().all(|p| loose.contains(p)));
            let (tree, _) = model.transform_with(&x, Pruning::Threshold(t1)).unwrap();
            for p in tree.nodes.keys() {
                if let Some(parent) = p.parent() {
                    prop_assert!(tree.nodes.contains_key(&parent));
                    prop_assert!(tree.nodes[p].energy > t1 * tree.nodes[&parent].energy);
                }
            }
        }
    }
}
