//! Experiment protocols: covariance-perturbation stability, pruning sweeps,
//! labeled-size sweeps and grid search.
//!
//! Every protocol standardizes features with statistics of the fit pool
//! `𝒰 = unlabeled ∪ train`, fits representations on `𝒰`, trains a ridge
//! readout on the training split (alpha picked by validation MAE) and scores
//! the test split.

use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use cst_core::bounds::{cst_stability_bound, measured_delta};
use cst_core::readout::{mae, mse_matrix, select_ridge, PcaModel, RidgeModel, RIDGE_GRID};
use cst_core::rng::rng_for;
use cst_core::{
    all_paths, sample_covariance, Aggregation, CstConfig, CstError, CstModel, DataMatrix,
    KernelFamily, OperatorKind, Pruning, ScatterPath,
};
use nalgebra::{DMatrix, DVector};
use rand::seq::index;

type Result<T> = std::result::Result<T, CstError>;

/// Subsample fractions of `𝒰` used when none are given.
pub const DEFAULT_FRACTIONS: [f64; 6] = [0.05, 0.1, 0.2, 0.4, 0.7, 1.0];

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub data: DataMatrix,
    pub targets: DVector<f64>,
}

impl Dataset {
    pub fn new(data: DataMatrix, targets: DVector<f64>) -> Result<Self> {
        if targets.len() != data.n_samples() {
            return Err(CstError::ShapeError {
                expected: data.n_samples(),
                found: targets.len(),
            });
        }
        Ok(Dataset { data, targets })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub unlabeled: f64,
    pub train: f64,
    pub valid: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            unlabeled: 0.5,
            train: 0.1,
            valid: 0.2,
            test: 0.2,
            seed: 0,
        }
    }
}

/// Sorted sample indices of each part.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub unlabeled: Vec<usize>,
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// `unlabeled ∪ train`, sorted.
    pub fn fit_pool(&self) -> Vec<usize> {
        let mut pool: Vec<usize> = self.unlabeled.iter().chain(&self.train).copied().collect();
        pool.sort_unstable();
        pool
    }
}

impl SplitSpec {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.unlabeled, self.train, self.valid, self.test];
        if parts.iter().any(|f| !(f.is_finite() && *f >= 0.0)) {
            return Err(CstError::InvalidParameter(format!(
                "split fractions must be non-negative, got {parts:?}"
            )));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(CstError::InvalidParameter(format!(
                "split fractions must sum to 1, got {sum}"
            )));
        }
        if self.test <= 0.0 {
            return Err(CstError::InvalidParameter(
                "test fraction must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Partitions `0..t` after a seeded shuffle. Test and validation are cut
    /// first, so for a fixed seed they do not depend on the train fraction,
    /// and training sets grow by extension.
    pub fn split(&self, t: usize) -> Result<Split> {
        self.validate()?;
        let mut rng = rng_for(self.seed, "split");
        let order = index::sample(&mut rng, t, t).into_vec();
        let count = |f: f64| (f * t as f64 + 1e-9).floor() as usize;
        let n_test = count(self.test).max(1);
        let n_valid = count(self.valid);
        let n_train = count(self.train);
        if n_test + n_valid + n_train > t {
            return Err(CstError::InsufficientSamples(t));
        }
        let mut cuts = order.into_iter();
        let mut take = |n: usize| {
            let mut v: Vec<usize> = cuts.by_ref().take(n).collect();
            v.sort_unstable();
            v
        };
        let test = take(n_test);
        let valid = take(n_valid);
        let train = take(n_train);
        let unlabeled = take(t);
        Ok(Split {
            unlabeled,
            train,
            valid,
            test,
        })
    }
}

/// A representation to compare.
#[derive(Debug, Clone, PartialEq)]
pub enum Method {
    Cst(CstConfig),
    Pca(usize),
    Raw,
}

impl Method {
    pub fn label(&self) -> String {
        match self {
            Method::Cst(cfg) => {
                let mut s = cfg.label();
                if cfg.aggregation == Aggregation::Mean {
                    s.push_str("-mean");
                }
                s
            }
            Method::Pca(k) => format!("pca-k{k}"),
            Method::Raw => "raw".into(),
        }
    }
}

/// `raw`, `pca:K`, or `FAMILY:J:L[:OPERATOR][:AGGREGATION]` with family
/// `diffusion`, `hann` or `monic` and operator `N` or `I`.
impl FromStr for Method {
    type Err = CstError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || CstError::InvalidParameter(format!("cannot parse method '{s}'"));
        let parts: Vec<&str> = s.trim().split(':').collect();
        match parts.as_slice() {
            ["raw"] => Ok(Method::Raw),
            ["pca", k] => k.parse().map(Method::Pca).map_err(|_| bad()),
            [family, j, l, rest @ ..] if rest.len() <= 2 => {
                let family = parse_family(family)?;
                let j = j.parse().map_err(|_| bad())?;
                let l = l.parse().map_err(|_| bad())?;
                let mut cfg = CstConfig::new(family, j, l);
                for part in rest {
                    if let Ok(kind) = part.parse::<OperatorKind>() {
                        cfg.operator_kind = kind;
                    } else {
                        cfg.aggregation = part.parse()?;
                    }
                }
                Ok(Method::Cst(cfg))
            }
            _ => Err(bad()),
        }
    }
}

pub fn parse_family(s: &str) -> Result<KernelFamily> {
    match s {
        "diffusion" | "diff" => Ok(KernelFamily::Diffusion),
        "hann" => Ok(KernelFamily::hann()),
        "monic" => Ok(KernelFamily::monic()),
        other => Err(CstError::InvalidParameter(format!(
            "unknown kernel family '{other}'"
        ))),
    }
}

/// The configurations used on the synthetic stability study.
pub fn synthetic_methods() -> Vec<Method> {
    vec![
        Method::Cst(CstConfig::new(KernelFamily::Diffusion, 7, 2)),
        Method::Cst(CstConfig::new(KernelFamily::hann(), 4, 2)),
        Method::Cst(CstConfig::new(KernelFamily::monic(), 4, 2)),
        Method::Pca(20),
    ]
}

#[derive(Debug, Clone)]
enum Fitted {
    Cst {
        model: Box<CstModel>,
        paths: Vec<ScatterPath>,
    },
    Pca(PcaModel),
    Raw,
}

impl Fitted {
    /// `fixed_layout` keeps every path regardless of the pruning setting.
    fn fit(method: &Method, pool: &DataMatrix, fixed_layout: bool) -> Result<Self> {
        match method {
            Method::Cst(cfg) => {
                let model = CstModel::fit_data(pool, cfg.clone())?;
                let paths = if fixed_layout {
                    all_paths(cfg.scales, cfg.layers)
                } else {
                    model.select_paths(pool)?
                };
                Ok(Fitted::Cst {
                    model: Box::new(model),
                    paths,
                })
            }
            Method::Pca(k) => Ok(Fitted::Pca(PcaModel::fit(&sample_covariance(pool)?, *k)?)),
            Method::Raw => Ok(Fitted::Raw),
        }
    }

    fn embed(&self, data: &DataMatrix) -> Result<DMatrix<f64>> {
        match self {
            Fitted::Cst { model, paths } => Ok(model.transform_paths(data, paths)?.values),
            Fitted::Pca(p) => p.transform(data),
            Fitted::Raw => Ok(data.values().clone()),
        }
    }

    fn feature_count(&self, n: usize) -> usize {
        match self {
            Fitted::Cst { model, paths } => paths.len() * model.config().aggregation.width(n),
            Fitted::Pca(p) => p.k(),
            Fitted::Raw => n,
        }
    }
}

/// Data after the split and pool standardization.
#[derive(Debug, Clone)]
struct Prepared {
    pool: DataMatrix,
    train: DataMatrix,
    valid: DataMatrix,
    test: DataMatrix,
    y_train: DVector<f64>,
    y_valid: DVector<f64>,
    y_test: DVector<f64>,
}

fn pick(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
}

fn prepare(dataset: &Dataset, split: &Split) -> Result<Prepared> {
    if split.train.len() < 2 || split.valid.is_empty() || split.test.is_empty() {
        return Err(CstError::InsufficientSamples(split.train.len()));
    }
    let pool_idx = split.fit_pool();
    let raw_pool = dataset.data.select_samples(&pool_idx)?;
    let (mean, sd) = raw_pool.feature_moments();
    let data = dataset.data.standardized_with(&mean, &sd)?;
    Ok(Prepared {
        pool: data.select_samples(&pool_idx)?,
        train: data.select_samples(&split.train)?,
        valid: data.select_samples(&split.valid)?,
        test: data.select_samples(&split.test)?,
        y_train: pick(&dataset.targets, &split.train),
        y_valid: pick(&dataset.targets, &split.valid),
        y_test: pick(&dataset.targets, &split.test),
    })
}

struct Evaluation {
    ridge: RidgeModel,
    valid_mae: f64,
    test_mae: f64,
    test_features: DMatrix<f64>,
}

fn evaluate(fitted: &Fitted, prep: &Prepared, alphas: &[f64]) -> Result<Evaluation> {
    let z_train = fitted.embed(&prep.train)?;
    let z_valid = fitted.embed(&prep.valid)?;
    let test_features = fitted.embed(&prep.test)?;
    let (ridge, valid_mae) =
        select_ridge(&z_train, &prep.y_train, &z_valid, &prep.y_valid, alphas)?;
    let test_mae = mae(
        ridge.predict(&test_features)?.as_slice(),
        prep.y_test.as_slice(),
    )?;
    Ok(Evaluation {
        ridge,
        valid_mae,
        test_mae,
        test_features,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

/// Median of the finite values; `None` when there are none.
pub fn median(values: &[f64]) -> Option<f64> {
    quantile(values, 0.5)
}

/// Linear-interpolated quantile of the finite values.
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

/// `x,y,series,err_low,err_high` rows: the median and interquartile range of
/// `y` per `(series, x)`, in first-seen order.
pub fn plotdata(points: &[(String, f64, f64)]) -> String {
    let mut keys: Vec<(String, f64)> = Vec::new();
    for (s, x, _) in points {
        if !keys.iter().any(|(ks, kx)| ks == s && kx == x) {
            keys.push((s.clone(), *x));
        }
    }
    let mut out = String::from("x,y,series,err_low,err_high\n");
    for (s, x) in keys {
        let ys: Vec<f64> = points
            .iter()
            .filter(|(ps, px, _)| *ps == s && *px == x)
            .map(|p| p.2)
            .collect();
        if let (Some(m), Some(lo), Some(hi)) =
            (median(&ys), quantile(&ys, 0.25), quantile(&ys, 0.75))
        {
            let _ = writeln!(out, "{x},{m},{s},{lo},{hi}");
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityOptions {
    pub fractions: Vec<f64>,
    pub repeats: usize,
    pub alphas: Vec<f64>,
    pub split: SplitSpec,
}

impl Default for StabilityOptions {
    fn default() -> Self {
        StabilityOptions {
            fractions: DEFAULT_FRACTIONS.to_vec(),
            repeats: 10,
            alphas: RIDGE_GRID.to_vec(),
            split: SplitSpec::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowStatus {
    Ok,
    Skipped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityRow {
    pub method: String,
    pub fraction: f64,
    pub repeat: usize,
    pub subsample_size: usize,
    pub status: RowStatus,
    pub mae: Option<f64>,
    pub embedding_mse: Option<f64>,
    /// `max_j ‖H_j(T̂) - H_j(T)‖₂`, CST methods only.
    pub measured_delta: Option<f64>,
    /// Upper bound on the embedding MSE implied by `measured_delta`.
    pub mse_bound: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    /// Test MAE of each method with the full-pool covariance.
    pub clean: Vec<(String, f64)>,
    pub rows: Vec<StabilityRow>,
}

impl StabilityReport {
    pub const HEADER: &'static str =
        "method,fraction,repeat,subsample_size,status,mae,embedding_mse,measured_delta,mse_bound";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::HEADER);
        for r in &self.rows {
            let status = match r.status {
                RowStatus::Ok => "ok",
                RowStatus::Skipped => "skipped",
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.method,
                r.fraction,
                r.repeat,
                r.subsample_size,
                status,
                fmt_opt(r.mae),
                fmt_opt(r.embedding_mse),
                fmt_opt(r.measured_delta),
                fmt_opt(r.mse_bound)
            );
        }
        out
    }

    /// Embedding MSE values of one method at one fraction.
    pub fn mse_values(&self, method: &str, fraction: f64) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.method == method && r.fraction == fraction)
            .filter_map(|r| r.embedding_mse)
            .collect()
    }

    pub fn median_mse(&self, method: &str, fraction: f64) -> Option<f64> {
        median(&self.mse_values(method, fraction))
    }

    pub fn mse_plotdata(&self) -> String {
        plotdata(
            &self
                .rows
                .iter()
                .filter_map(|r| r.embedding_mse.map(|m| (r.method.clone(), r.fraction, m)))
                .collect::<Vec<_>>(),
        )
    }

    pub fn mae_plotdata(&self) -> String {
        plotdata(
            &self
                .rows
                .iter()
                .filter_map(|r| r.mae.map(|m| (r.method.clone(), r.fraction, m)))
                .collect::<Vec<_>>(),
        )
    }
}

/// Covariance-perturbation stability.
///
/// Representations and the ridge readout are fitted on the full pool, then
/// the readout is frozen. For each fraction and repeat the representation is
/// refitted on a subsample of the pool (drawn without replacement, indices
/// sorted) and the test set is re-embedded. CST layouts are fixed to every
/// path so clean and perturbed features always align. The fraction 1.0 row
/// is always present.
pub fn run_stability(
    dataset: &Dataset,
    methods: &[Method],
    opts: &StabilityOptions,
) -> Result<StabilityReport> {
    if opts.repeats == 0 {
        return Err(CstError::InvalidParameter(
            "repeats must be at least 1".into(),
        ));
    }
    let mut fractions = opts.fractions.clone();
    if let Some(f) = fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
        return Err(CstError::InvalidParameter(format!(
            "subsample fractions must lie in (0, 1], got {f}"
        )));
    }
    if !fractions.contains(&1.0) {
        fractions.push(1.0);
    }
    fractions.sort_by(f64::total_cmp);
    fractions.dedup();

    let split = opts.split.split(dataset.data.n_samples())?;
    let prep = prepare(dataset, &split)?;
    let pool_len = prep.pool.n_samples();
    let n = dataset.data.n_features();
    let test_sq_norm = prep
        .test
        .values()
        .column_iter()
        .map(|c| c.norm_squared())
        .sum::<f64>()
        / prep.test.n_samples() as f64;

    let mut clean_rows = Vec::new();
    let mut rows = Vec::new();
    for method in methods {
        let method = match method {
            Method::Cst(cfg) => Method::Cst(cfg.clone().with_pruning(Pruning::Disabled)),
            other => other.clone(),
        };
        let label = method.label();
        let clean = Fitted::fit(&method, &prep.pool, true)?;
        let eval = evaluate(&clean, &prep, &opts.alphas)?;
        clean_rows.push((label.clone(), eval.test_mae));
        let feature_count = clean.feature_count(n);

        for &fraction in &fractions {
            let size = (fraction * pool_len as f64).round() as usize;
            for repeat in 0..opts.repeats {
                let mut row = StabilityRow {
                    method: label.clone(),
                    fraction,
                    repeat,
                    subsample_size: size,
                    status: RowStatus::Skipped,
                    mae: None,
                    embedding_mse: None,
                    measured_delta: None,
                    mse_bound: None,
                };
                if size < 2 {
                    rows.push(row);
                    continue;
                }
                let mut rng = rng_for(opts.split.seed, &format!("subsample/{fraction}/{repeat}"));
                let mut idx = index::sample(&mut rng, pool_len, size).into_vec();
                idx.sort_unstable();
                let sub = prep.pool.select_samples(&idx)?;
                let perturbed = Fitted::fit(&method, &sub, true)?;
                let z = perturbed.embed(&prep.test)?;
                let pred = eval.ridge.predict(&z)?;
                row.status = RowStatus::Ok;
                row.mae = Some(mae(pred.as_slice(), prep.y_test.as_slice())?);
                row.embedding_mse = Some(mse_matrix(&z, &eval.test_features)?);
                if let (Fitted::Cst { model: a, .. }, Fitted::Cst { model: b, .. }) =
                    (&clean, &perturbed)
                {
                    let delta = measured_delta(a.matrices(), b.matrices())?;
                    let frame = a
                        .filterbank()
                        .frame_upper()
                        .max(b.filterbank().frame_upper());
                    let counts: Vec<usize> = (0..a.config().layers)
                        .map(|l| a.config().scales.pow(l as u32))
                        .collect();
                    let per_unit =
                        cst_stability_bound(delta, frame, a.readout_norm(), 1.0, &counts);
                    row.measured_delta = Some(delta);
                    row.mse_bound = Some(per_unit * per_unit * test_sq_norm / feature_count as f64);
                }
                rows.push(row);
            }
        }
    }
    Ok(StabilityReport {
        clean: clean_rows,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruningRow {
    pub tau: f64,
    pub seed: u64,
    pub path_count: usize,
    pub feature_count: usize,
    pub mae: f64,
    pub transform_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruningReport {
    pub rows: Vec<PruningRow>,
}

impl PruningReport {
    pub const HEADER: &'static str = "tau,seed,path_count,feature_count,mae,transform_seconds";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::HEADER);
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.tau, r.seed, r.path_count, r.feature_count, r.mae, r.transform_seconds
            );
        }
        out
    }

    pub fn taus(&self) -> Vec<f64> {
        let mut t: Vec<f64> = self.rows.iter().map(|r| r.tau).collect();
        t.dedup();
        t
    }

    pub fn median_mae(&self, tau: f64) -> Option<f64> {
        median(
            &self
                .rows
                .iter()
                .filter(|r| r.tau == tau)
                .map(|r| r.mae)
                .collect::<Vec<_>>(),
        )
    }

    pub fn median_feature_count(&self, tau: f64) -> Option<f64> {
        median(
            &self
                .rows
                .iter()
                .filter(|r| r.tau == tau)
                .map(|r| r.feature_count as f64)
                .collect::<Vec<_>>(),
        )
    }

    pub fn plotdata(&self) -> String {
        plotdata(
            &self
                .rows
                .iter()
                .map(|r| ("mae".to_string(), r.tau, r.mae))
                .collect::<Vec<_>>(),
        )
    }
}

/// Batch-pruned CST at each `τ`. The pruning decision is taken on the fit
/// pool; the timing covers the transforms of the train, validation and test
/// splits.
pub fn run_pruning_sweep(
    dataset: &Dataset,
    config: &CstConfig,
    taus: &[f64],
    split: &SplitSpec,
    seeds: &[u64],
    alphas: &[f64],
) -> Result<PruningReport> {
    if taus.windows(2).any(|w| w[1] < w[0]) {
        return Err(CstError::InvalidParameter("taus must be ascending".into()));
    }
    let n = dataset.data.n_features();
    let mut rows = Vec::new();
    for &seed in seeds {
        let parts = split.with_seed(seed).split(dataset.data.n_samples())?;
        let prep = prepare(dataset, &parts)?;
        let model = CstModel::fit_data(&prep.pool, config.clone())?;
        for &tau in taus {
            let paths = model.select_paths_with(&prep.pool, Pruning::Threshold(tau))?;
            let start = Instant::now();
            let z_train = model.transform_paths(&prep.train, &paths)?.values;
            let z_valid = model.transform_paths(&prep.valid, &paths)?.values;
            let z_test = model.transform_paths(&prep.test, &paths)?.values;
            let transform_seconds = start.elapsed().as_secs_f64();
            let (ridge, _) =
                select_ridge(&z_train, &prep.y_train, &z_valid, &prep.y_valid, alphas)?;
            let err = mae(ridge.predict(&z_test)?.as_slice(), prep.y_test.as_slice())?;
            rows.push(PruningRow {
                tau,
                seed,
                path_count: paths.len(),
                feature_count: paths.len() * config.aggregation.width(n),
                mae: err,
                transform_seconds,
            });
        }
    }
    rows.sort_by(|a, b| a.tau.total_cmp(&b.tau).then(a.seed.cmp(&b.seed)));
    Ok(PruningReport { rows })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledRow {
    pub method: String,
    pub train_fraction: f64,
    pub seed: u64,
    pub train_size: usize,
    pub feature_count: usize,
    pub mae: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledReport {
    pub rows: Vec<LabeledRow>,
}

impl LabeledReport {
    pub const HEADER: &'static str = "method,train_fraction,seed,train_size,feature_count,mae";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::HEADER);
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.method,
                r.train_fraction,
                r.seed,
                r.train_size,
                r.feature_count,
                fmt_opt(r.mae)
            );
        }
        out
    }

    pub fn median_mae(&self, method: &str, train_fraction: f64) -> Option<f64> {
        median(
            &self
                .rows
                .iter()
                .filter(|r| r.method == method && r.train_fraction == train_fraction)
                .filter_map(|r| r.mae)
                .collect::<Vec<_>>(),
        )
    }

    pub fn plotdata(&self) -> String {
        plotdata(
            &self
                .rows
                .iter()
                .filter_map(|r| r.mae.map(|m| (r.method.clone(), r.train_fraction, m)))
                .collect::<Vec<_>>(),
        )
    }
}

/// Methods for the labeled-size study: the CST with identity and mean
/// readouts, PCA with `k` components and the raw features.
pub fn labeled_methods(config: &CstConfig, k: usize) -> Vec<Method> {
    vec![
        Method::Cst(config.clone().with_aggregation(Aggregation::Identity)),
        Method::Cst(config.clone().with_aggregation(Aggregation::Mean)),
        Method::Pca(k),
        Method::Raw,
    ]
}

/// Validation and test stay at `valid` and `test` of the samples; the
/// training share varies and the rest is unlabeled.
pub fn run_labeled_sweep(
    dataset: &Dataset,
    methods: &[Method],
    train_fractions: &[f64],
    template: &SplitSpec,
    seeds: &[u64],
    alphas: &[f64],
) -> Result<LabeledReport> {
    let n = dataset.data.n_features();
    let mut rows = Vec::new();
    for method in methods {
        for &tf in train_fractions {
            let spec = SplitSpec {
                unlabeled: 1.0 - template.valid - template.test - tf,
                train: tf,
                ..*template
            };
            if spec.unlabeled < -1e-12 {
                return Err(CstError::InvalidParameter(format!(
                    "train fraction {tf} leaves no room for validation and test"
                )));
            }
            let spec = SplitSpec {
                unlabeled: spec.unlabeled.max(0.0),
                ..spec
            };
            for &seed in seeds {
                let parts = spec.with_seed(seed).split(dataset.data.n_samples())?;
                let mut row = LabeledRow {
                    method: method.label(),
                    train_fraction: tf,
                    seed,
                    train_size: parts.train.len(),
                    feature_count: 0,
                    mae: None,
                };
                if parts.train.len() >= 2 {
                    let prep = prepare(dataset, &parts)?;
                    let fitted = Fitted::fit(method, &prep.pool, false)?;
                    row.feature_count = fitted.feature_count(n);
                    row.mae = Some(evaluate(&fitted, &prep, alphas)?.test_mae);
                }
                rows.push(row);
            }
        }
    }
    Ok(LabeledReport { rows })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub method: String,
    pub alpha: f64,
    pub feature_count: usize,
    pub valid_mae: f64,
    pub test_mae: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridReport {
    pub rows: Vec<GridRow>,
    /// Index of the row with the lowest validation MAE, ties broken by
    /// smaller feature count.
    pub best: usize,
}

impl GridReport {
    pub const HEADER: &'static str = "method,alpha,feature_count,valid_mae,test_mae,selected";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::HEADER);
        for (i, r) in self.rows.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.method,
                r.alpha,
                r.feature_count,
                r.valid_mae,
                r.test_mae,
                i == self.best
            );
        }
        out
    }
}

/// Every CST combination of `scales × layers × operators` for one family,
/// plus PCA at each `k`.
pub fn grid_methods(
    family: KernelFamily,
    scales: &[usize],
    layers: &[usize],
    operators: &[OperatorKind],
    aggregation: Aggregation,
    pca_ks: &[usize],
) -> Vec<Method> {
    let mut out = Vec::new();
    for &j in scales {
        for &l in layers {
            for &op in operators {
                out.push(Method::Cst(
                    CstConfig::new(family, j, l)
                        .with_operator(op)
                        .with_aggregation(aggregation),
                ));
            }
        }
    }
    out.extend(pca_ks.iter().map(|&k| Method::Pca(k)));
    out
}

pub fn run_grid_search(
    dataset: &Dataset,
    methods: &[Method],
    split: &SplitSpec,
    alphas: &[f64],
) -> Result<GridReport> {
    if methods.is_empty() {
        return Err(CstError::InvalidParameter("empty search grid".into()));
    }
    let parts = split.split(dataset.data.n_samples())?;
    let prep = prepare(dataset, &parts)?;
    let n = dataset.data.n_features();
    let mut rows = Vec::with_capacity(methods.len());
    for method in methods {
        let fitted = Fitted::fit(method, &prep.pool, false)?;
        let eval = evaluate(&fitted, &prep, alphas)?;
        rows.push(GridRow {
            method: method.label(),
            alpha: eval.ridge.alpha(),
            feature_count: fitted.feature_count(n),
            valid_mae: eval.valid_mae,
            test_mae: eval.test_mae,
        });
    }
    let best = (0..rows.len())
        .min_by(|&a, &b| {
            rows[a]
                .valid_mae
                .total_cmp(&rows[b].valid_mae)
                .then(rows[a].feature_count.cmp(&rows[b].feature_count))
        })
        .unwrap_or(0);
    Ok(GridReport { rows, best })
}
