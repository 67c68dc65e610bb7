//! Command-line surface.
//!
//! Every command resolves its settings from an optional flat `key = value`
//! config file and then from flags, flags winning. Unknown config keys are
//! rejected, and input paths are checked before any computation starts.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use cst_core::bounds::{
    cst_stability_bound, estimate_kmax, pca_gap_scale, signal_stability_bound, wavelet_delta,
};
use cst_core::readout::{PcaModel, RIDGE_GRID};
use cst_core::rng::derive_seed;
use cst_core::{
    sample_covariance, synth_generate, Aggregation, BoundConstants, CstConfig, CstModel,
    DataMatrix, OperatorKind, Pruning, SynthSpec,
};

use crate::error::{AppError, AppResult};
use crate::harness::{
    grid_methods, labeled_methods, parse_family, run_grid_search, run_labeled_sweep,
    run_pruning_sweep, run_stability, synthetic_methods, Dataset, Method, SplitSpec,
    StabilityOptions, DEFAULT_FRACTIONS,
};
use crate::io;

#[derive(Debug, Parser)]
#[command(
    name = "cst",
    version,
    about = "Covariance scattering transforms and stability experiments"
)]
pub struct Cli {
    /// Data CSV: header of feature names, one observation per row.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Target CSV with a single column.
    #[arg(long, global = true)]
    pub targets: Option<PathBuf>,
    /// Output directory, created when missing.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Flat `key = value` file; flags override its entries.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic regression dataset.
    Synth(SynthArgs),
    /// Scattering features of every observation in --data.
    Transform(CstArgs),
    /// PCA embedding of every observation in --data.
    Pca(PcaArgs),
    /// Covariance-perturbation stability study.
    Stability(StabilityArgs),
    /// Pruning threshold sweep.
    PruneSweep(PruneArgs),
    /// Labeled training-set size sweep.
    LabeledSweep(LabeledArgs),
    /// Evaluate the stability bounds for a fitted model.
    Bounds(BoundsArgs),
    /// Validation-MAE grid search over CST and PCA settings.
    GridSearch(GridArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub features: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub tail: Option<f64>,
    #[arg(long)]
    pub effective_rank: Option<f64>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
}

#[derive(Debug, Args, Default)]
pub struct CstArgs {
    /// diffusion, hann or monic.
    #[arg(long)]
    pub family: Option<String>,
    #[arg(long)]
    pub scales: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    /// N (normalized) or I (inverted).
    #[arg(long)]
    pub operator: Option<String>,
    /// identity or mean.
    #[arg(long)]
    pub aggregation: Option<String>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PcaArgs {
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct SplitArgs {
    #[arg(long)]
    pub unlabeled_frac: Option<f64>,
    #[arg(long)]
    pub train_frac: Option<f64>,
    #[arg(long)]
    pub valid_frac: Option<f64>,
    #[arg(long)]
    pub test_frac: Option<f64>,
}

#[derive(Debug, Args)]
pub struct StabilityArgs {
    /// Comma-separated methods: `raw`, `pca:K`, `FAMILY:J:L[:N|I][:identity|mean]`.
    #[arg(long)]
    pub methods: Option<String>,
    /// Comma-separated subsample fractions of the fit pool.
    #[arg(long)]
    pub fractions: Option<String>,
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Comma-separated ridge penalties.
    #[arg(long)]
    pub alphas: Option<String>,
    #[command(flatten)]
    pub split: SplitArgs,
}

#[derive(Debug, Args)]
pub struct PruneArgs {
    #[command(flatten)]
    pub cst: CstArgs,
    /// Comma-separated ascending thresholds.
    #[arg(long)]
    pub taus: Option<String>,
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long)]
    pub alphas: Option<String>,
    #[command(flatten)]
    pub split: SplitArgs,
}

#[derive(Debug, Args)]
pub struct LabeledArgs {
    #[command(flatten)]
    pub cst: CstArgs,
    #[arg(long)]
    pub pca_k: Option<usize>,
    /// Comma-separated training fractions.
    #[arg(long)]
    pub train_fracs: Option<String>,
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long)]
    pub alphas: Option<String>,
    #[arg(long)]
    pub valid_frac: Option<f64>,
    #[arg(long)]
    pub test_frac: Option<f64>,
}

#[derive(Debug, Args)]
pub struct BoundsArgs {
    #[command(flatten)]
    pub cst: CstArgs,
    #[arg(long)]
    pub q: Option<f64>,
    #[arg(long)]
    pub g: Option<f64>,
    /// Estimated from --data when absent.
    #[arg(long)]
    pub k_max: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub u: Option<f64>,
    /// Sample count T used for the estimation error; defaults to the rows of --data.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Also report the PCA gap scale for this many components.
    #[arg(long)]
    pub pca_k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[arg(long)]
    pub family: Option<String>,
    /// Comma-separated scale counts.
    #[arg(long)]
    pub scales: Option<String>,
    /// Comma-separated layer counts.
    #[arg(long)]
    pub layers: Option<String>,
    /// Comma-separated operator kinds.
    #[arg(long)]
    pub operators: Option<String>,
    #[arg(long)]
    pub aggregation: Option<String>,
    /// Comma-separated PCA component counts; those above the feature count are dropped.
    #[arg(long)]
    pub pca_ks: Option<String>,
    #[arg(long)]
    pub alphas: Option<String>,
    #[command(flatten)]
    pub split: SplitArgs,
}

const GLOBAL_KEYS: [&str; 4] = ["data", "targets", "out", "seed"];
const SPLIT_KEYS: [&str; 4] = ["unlabeled_frac", "train_frac", "valid_frac", "test_frac"];

type Pairs = Vec<(&'static str, Option<String>)>;

fn text<T: Display>(v: &Option<T>) -> Option<String> {
    v.as_ref().map(|x| x.to_string())
}

fn path_text(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|x| x.display().to_string())
}

impl CstArgs {
    fn pairs(&self) -> Pairs {
        vec![
            ("family", self.family.clone()),
            ("scales", text(&self.scales)),
            ("layers", text(&self.layers)),
            ("operator", self.operator.clone()),
            ("aggregation", self.aggregation.clone()),
            ("gamma", text(&self.gamma)),
            ("tau", text(&self.tau)),
        ]
    }
}

impl SplitArgs {
    fn pairs(&self) -> Pairs {
        vec![
            ("unlabeled_frac", text(&self.unlabeled_frac)),
            ("train_frac", text(&self.train_frac)),
            ("valid_frac", text(&self.valid_frac)),
            ("test_frac", text(&self.test_frac)),
        ]
    }
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Transform(_) => "transform",
            Command::Pca(_) => "pca",
            Command::Stability(_) => "stability",
            Command::PruneSweep(_) => "prune-sweep",
            Command::LabeledSweep(_) => "labeled-sweep",
            Command::Bounds(_) => "bounds",
            Command::GridSearch(_) => "grid-search",
        }
    }

    /// Keys this command accepts beyond the global ones.
    pub fn keys(&self) -> Vec<&'static str> {
        self.pairs().into_iter().map(|(k, _)| k).collect()
    }

    fn pairs(&self) -> Pairs {
        match self {
            Command::Synth(a) => vec![
                ("features", text(&a.features)),
                ("samples", text(&a.samples)),
                ("tail", text(&a.tail)),
                ("effective_rank", text(&a.effective_rank)),
                ("noise_sigma", text(&a.noise_sigma)),
            ],
            Command::Transform(a) => a.pairs(),
            Command::Pca(a) => vec![("k", text(&a.k))],
            Command::Stability(a) => {
                let mut v = vec![
                    ("methods", a.methods.clone()),
                    ("fractions", a.fractions.clone()),
                    ("repeats", text(&a.repeats)),
                    ("alphas", a.alphas.clone()),
                ];
                v.extend(a.split.pairs());
                v
            }
            Command::PruneSweep(a) => {
                let mut v: Pairs = a
                    .cst
                    .pairs()
                    .into_iter()
                    .filter(|(k, _)| *k != "tau")
                    .collect();
                v.extend([
                    ("taus", a.taus.clone()),
                    ("repeats", text(&a.repeats)),
                    ("alphas", a.alphas.clone()),
                ]);
                v.extend(a.split.pairs());
                v
            }
            Command::LabeledSweep(a) => {
                let mut v = a.cst.pairs();
                v.extend([
                    ("pca_k", text(&a.pca_k)),
                    ("train_fracs", a.train_fracs.clone()),
                    ("repeats", text(&a.repeats)),
                    ("alphas", a.alphas.clone()),
                    ("valid_frac", text(&a.valid_frac)),
                    ("test_frac", text(&a.test_frac)),
                ]);
                v
            }
            Command::Bounds(a) => {
                let mut v = a.cst.pairs();
                v.extend([
                    ("q", text(&a.q)),
                    ("g", text(&a.g)),
                    ("k_max", text(&a.k_max)),
                    ("epsilon", text(&a.epsilon)),
                    ("u", text(&a.u)),
                    ("samples", text(&a.samples)),
                    ("pca_k", text(&a.pca_k)),
                ]);
                v
            }
            Command::GridSearch(a) => {
                let mut v = vec![
                    ("family", a.family.clone()),
                    ("scales", a.scales.clone()),
                    ("layers", a.layers.clone()),
                    ("operators", a.operators.clone()),
                    ("aggregation", a.aggregation.clone()),
                    ("pca_ks", a.pca_ks.clone()),
                    ("alphas", a.alphas.clone()),
                ];
                v.extend(a.split.pairs());
                v
            }
        }
    }

    fn stochastic(&self) -> bool {
        !matches!(
            self,
            Command::Transform(_) | Command::Pca(_) | Command::Bounds(_)
        )
    }
}

/// Resolved `key -> value` settings of one run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    /// Config entries first, then flags. Keys outside `allowed` are usage errors.
    pub fn resolve(
        config: &[(String, String)],
        flags: &[(&str, Option<String>)],
        allowed: &[&str],
    ) -> AppResult<Self> {
        let mut values = BTreeMap::new();
        for (k, v) in config {
            if !allowed.contains(&k.as_str()) {
                return Err(AppError::Usage(format!(
                    "unknown config key '{k}' (accepted: {})",
                    allowed.join(", ")
                )));
            }
            values.insert(k.clone(), v.clone());
        }
        for (k, v) in flags {
            if let Some(v) = v {
                values.insert(k.to_string(), v.clone());
            }
        }
        Ok(Settings { values })
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> AppResult<Option<T>> {
        self.raw(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| AppError::Usage(format!("invalid value for {key}: '{v}'")))
            })
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> AppResult<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> AppResult<T> {
        self.get(key)?
            .ok_or_else(|| AppError::Usage(format!("missing required setting '{key}'")))
    }

    pub fn list<T: FromStr>(&self, key: &str) -> AppResult<Option<Vec<T>>> {
        self.raw(key)
            .map(|v| {
                v.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        s.parse()
                            .map_err(|_| AppError::Usage(format!("invalid entry for {key}: '{s}'")))
                    })
                    .collect()
            })
            .transpose()
    }

    pub fn entries(&self) -> Vec<(String, String)> {
        self.values
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }
}

/// Parses arguments, runs the command, prints errors and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(outputs) => {
            for p in outputs {
                println!("{}", p.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs a parsed command and returns the files it wrote.
pub fn execute(cli: &Cli) -> AppResult<Vec<PathBuf>> {
    let config = match &cli.config {
        Some(p) => io::read_kv(p)?,
        None => Vec::new(),
    };
    let mut flags: Pairs = vec![
        ("data", path_text(&cli.data)),
        ("targets", path_text(&cli.targets)),
        ("out", path_text(&cli.out)),
        ("seed", text(&cli.seed)),
    ];
    flags.extend(cli.command.pairs());
    let mut allowed: Vec<&str> = GLOBAL_KEYS.to_vec();
    allowed.extend(cli.command.keys());
    let settings = Settings::resolve(&config, &flags, &allowed)?;

    if cli.command.stochastic() && settings.raw("seed").is_none() {
        return Err(AppError::Usage(format!(
            "{} requires --seed",
            cli.command.name()
        )));
    }
    let mut ctx = Context::new(cli.command.name(), settings)?;
    match &cli.command {
        Command::Synth(_) => cmd_synth(&mut ctx)?,
        Command::Transform(_) => cmd_transform(&mut ctx)?,
        Command::Pca(_) => cmd_pca(&mut ctx)?,
        Command::Stability(_) => cmd_stability(&mut ctx)?,
        Command::PruneSweep(_) => cmd_prune(&mut ctx)?,
        Command::LabeledSweep(_) => cmd_labeled(&mut ctx)?,
        Command::Bounds(_) => cmd_bounds(&mut ctx)?,
        Command::GridSearch(_) => cmd_grid(&mut ctx)?,
    }
    ctx.finish()
}

/// Settings plus the output bookkeeping of one run.
struct Context {
    command: &'static str,
    settings: Settings,
    out: PathBuf,
    written: Vec<PathBuf>,
    extra: Vec<(String, String)>,
}

impl Context {
    fn new(command: &'static str, settings: Settings) -> AppResult<Self> {
        for key in ["data", "targets"] {
            if let Some(p) = settings.raw(key) {
                if !Path::new(p).is_file() {
                    return Err(AppError::data(p, format!("{key} file not found")));
                }
            }
        }
        if let Some(p) = settings.raw("config") {
            return Err(AppError::Usage(format!(
                "nested config '{p}' is not supported"
            )));
        }
        let out = PathBuf::from(settings.raw("out").unwrap_or("."));
        if out.exists() && !out.is_dir() {
            return Err(AppError::Usage(format!(
                "--out {} is not a directory",
                out.display()
            )));
        }
        fs::create_dir_all(&out).map_err(|e| AppError::io(&out, e))?;
        Ok(Context {
            command,
            settings,
            out,
            written: Vec::new(),
            extra: Vec::new(),
        })
    }

    fn seed(&self) -> AppResult<u64> {
        self.settings.require("seed")
    }

    fn data(&self) -> AppResult<DataMatrix> {
        let p: PathBuf = self.settings.require("data")?;
        io::read_data(&p)
    }

    fn dataset(&self) -> AppResult<Dataset> {
        let data = self.data()?;
        let p: PathBuf = self.settings.require("targets")?;
        let targets = io::read_targets(&p)?;
        if targets.len() != data.n_samples() {
            return Err(AppError::data(
                &p,
                format!(
                    "{} targets for {} observations",
                    targets.len(),
                    data.n_samples()
                ),
            ));
        }
        Ok(Dataset::new(data, targets)?)
    }

    fn repeat_seeds(&self) -> AppResult<Vec<u64>> {
        let seed = self.seed()?;
        let repeats: usize = self.settings.get_or("repeats", 5)?;
        if repeats == 0 {
            return Err(AppError::Usage("repeats must be at least 1".into()));
        }
        Ok((0..repeats)
            .map(|i| derive_seed(seed, &format!("repeat/{i}")))
            .collect())
    }

    fn alphas(&self) -> AppResult<Vec<f64>> {
        Ok(self
            .settings
            .list("alphas")?
            .unwrap_or_else(|| RIDGE_GRID.to_vec()))
    }

    fn cst_config(&self) -> AppResult<CstConfig> {
        let s = &self.settings;
        let family = parse_family(s.raw("family").unwrap_or("diffusion"))?;
        let mut cfg = CstConfig::new(family, s.get_or("scales", 4)?, s.get_or("layers", 2)?);
        if let Some(op) = s.get::<OperatorKind>("operator")? {
            cfg = cfg.with_operator(op);
        }
        if let Some(agg) = s.get::<Aggregation>("aggregation")? {
            cfg = cfg.with_aggregation(agg);
        }
        if let Some(g) = s.get("gamma")? {
            cfg = cfg.with_gamma(g);
        }
        if let Some(tau) = s.get("tau")? {
            cfg = cfg.with_tau(tau);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn split(&self) -> AppResult<SplitSpec> {
        let d = SplitSpec::default();
        let s = &self.settings;
        let spec = SplitSpec {
            unlabeled: s.get_or(SPLIT_KEYS[0], d.unlabeled)?,
            train: s.get_or(SPLIT_KEYS[1], d.train)?,
            valid: s.get_or(SPLIT_KEYS[2], d.valid)?,
            test: s.get_or(SPLIT_KEYS[3], d.test)?,
            seed: self.seed()?,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn write(&mut self, name: &str, text: &str) -> AppResult<()> {
        let path = self.out.join(name);
        io::write_text(&path, text)?;
        self.written.push(path);
        Ok(())
    }

    fn note(&mut self, entries: impl IntoIterator<Item = (String, String)>) {
        self.extra.extend(entries);
    }

    /// Writes `<command>.provenance` next to the outputs.
    fn finish(mut self) -> AppResult<Vec<PathBuf>> {
        let mut entries = vec![
            ("command".to_string(), self.command.to_string()),
            ("version".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ];
        entries.extend(
            self.settings
                .entries()
                .into_iter()
                .map(|(k, v)| (format!("setting.{k}"), v)),
        );
        entries.append(&mut self.extra);
        let outputs: Vec<String> = self
            .written
            .iter()
            .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .collect();
        entries.push(("outputs".to_string(), outputs.join(";")));
        let path = self.out.join(format!("{}.provenance", self.command));
        io::write_kv(&path, &entries)?;
        self.written.push(path);
        Ok(self.written)
    }
}

fn cmd_synth(ctx: &mut Context) -> AppResult<()> {
    let s = &ctx.settings;
    let mut spec = SynthSpec::new(
        s.get_or("features", 20)?,
        s.get_or("samples", 1000)?,
        s.get_or("tail", 0.5)?,
        ctx.seed()?,
    );
    spec.effective_rank = s.get("effective_rank")?;
    if let Some(sigma) = s.get("noise_sigma")? {
        spec.noise_sigma = sigma;
    }
    spec.validate()?;
    let ds = synth_generate(&spec)?;
    let data_path = ctx.out.join("data.csv");
    io::write_data(&data_path, &ds.data)?;
    ctx.written.push(data_path);
    let targets_path = ctx.out.join("targets.csv");
    io::write_targets(&targets_path, &ds.targets)?;
    ctx.written.push(targets_path);
    let mut eig = String::from("index,eigenvalue\n");
    for (i, v) in ds.eigenvalues.iter().enumerate() {
        eig.push_str(&format!("{i},{v}\n"));
    }
    ctx.write("eigenvalues.csv", &eig)?;
    ctx.note(
        spec.descriptor()
            .into_iter()
            .map(|(k, v)| (format!("synth.{k}"), v)),
    );
    Ok(())
}

fn cmd_transform(ctx: &mut Context) -> AppResult<()> {
    let data = ctx.data()?;
    let cfg = ctx.cst_config()?;
    let model = CstModel::fit_data(&data, cfg)?;
    let features = model.transform_batch(&data)?;
    let header = features.layout.names();
    ctx.write("features.csv", &io::columns_csv(&header, &features.values))?;
    ctx.note([
        ("model.label".to_string(), model.config().label()),
        (
            "model.paths".to_string(),
            features.layout.paths().len().to_string(),
        ),
        (
            "model.width".to_string(),
            features.layout.width().to_string(),
        ),
    ]);
    ctx.note(
        model
            .filterbank()
            .descriptor()
            .into_iter()
            .map(|(k, v)| (format!("filterbank.{k}"), v)),
    );
    Ok(())
}

fn cmd_pca(ctx: &mut Context) -> AppResult<()> {
    let data = ctx.data()?;
    let k = ctx.settings.get_or("k", data.n_features())?;
    let model = PcaModel::fit(&sample_covariance(&data)?, k)?;
    let z = model.transform(&data)?;
    let header: Vec<String> = (0..k).map(|i| format!("pc{i}")).collect();
    ctx.write("pca.csv", &io::columns_csv(&header, &z))?;
    let eig: Vec<String> = model
        .source_eigenvalues()
        .iter()
        .map(|v| v.to_string())
        .collect();
    ctx.note([("pca.eigenvalues".to_string(), eig.join(";"))]);
    Ok(())
}

fn cmd_stability(ctx: &mut Context) -> AppResult<()> {
    let dataset = ctx.dataset()?;
    let methods = match ctx.settings.raw("methods") {
        Some(_) => ctx.settings.list::<Method>("methods")?.unwrap_or_default(),
        None => synthetic_methods()
            .into_iter()
            .map(|m| match m {
                Method::Pca(k) => Method::Pca(k.min(dataset.data.n_features())),
                other => other,
            })
            .collect(),
    };
    if methods.is_empty() {
        return Err(AppError::Usage("no methods given".into()));
    }
    let opts = StabilityOptions {
        fractions: ctx
            .settings
            .list("fractions")?
            .unwrap_or_else(|| DEFAULT_FRACTIONS.to_vec()),
        repeats: ctx.settings.get_or("repeats", 10)?,
        alphas: ctx.alphas()?,
        split: ctx.split()?,
    };
    let report = run_stability(&dataset, &methods, &opts)?;
    ctx.write("stability.csv", &report.to_csv())?;
    ctx.write("stability_mse.plotdata", &report.mse_plotdata())?;
    ctx.write("stability_mae.plotdata", &report.mae_plotdata())?;
    ctx.note(
        report
            .clean
            .iter()
            .map(|(m, v)| (format!("clean_mae.{m}"), v.to_string())),
    );
    Ok(())
}

fn cmd_prune(ctx: &mut Context) -> AppResult<()> {
    let dataset = ctx.dataset()?;
    let cfg = ctx.cst_config()?;
    let taus = ctx
        .settings
        .list("taus")?
        .unwrap_or_else(|| (0..10).map(|i| i as f64 / 10.0).collect());
    let seeds = ctx.repeat_seeds()?;
    let split = ctx.split()?;
    let report = run_pruning_sweep(&dataset, &cfg, &taus, &split, &seeds, &ctx.alphas()?)?;
    ctx.write("pruning.csv", &report.to_csv())?;
    ctx.write("pruning.plotdata", &report.plotdata())?;
    Ok(())
}

fn cmd_labeled(ctx: &mut Context) -> AppResult<()> {
    let dataset = ctx.dataset()?;
    let cfg = ctx.cst_config()?;
    let n = dataset.data.n_features();
    let k = ctx.settings.get_or("pca_k", n.min(20))?;
    let fracs = ctx
        .settings
        .list("train_fracs")?
        .unwrap_or_else(|| vec![0.006, 0.01, 0.05, 0.1, 0.2, 0.4]);
    let d = SplitSpec::default();
    let template = SplitSpec {
        valid: ctx.settings.get_or("valid_frac", d.valid)?,
        test: ctx.settings.get_or("test_frac", d.test)?,
        ..d
    };
    let seeds = ctx.repeat_seeds()?;
    let report = run_labeled_sweep(
        &dataset,
        &labeled_methods(&cfg, k),
        &fracs,
        &template,
        &seeds,
        &ctx.alphas()?,
    )?;
    ctx.write("labeled.csv", &report.to_csv())?;
    ctx.write("labeled.plotdata", &report.plotdata())?;
    Ok(())
}

fn cmd_bounds(ctx: &mut Context) -> AppResult<()> {
    let data = ctx.data()?;
    let cfg = ctx.cst_config()?;
    let s = &ctx.settings;
    let cov = sample_covariance(&data)?;
    let decomposition = cov.decompose()?;
    let k_max = match s.get("k_max")? {
        Some(v) => v,
        None => estimate_kmax(&data, &decomposition)?,
    };
    let d = BoundConstants::default();
    let constants = BoundConstants {
        q: s.get_or("q", d.q)?,
        g: s.get_or("g", d.g)?,
        k_max,
        epsilon: s.get_or("epsilon", d.epsilon)?,
        u: s.get_or("u", d.u)?,
    };
    constants.validate()?;
    let t = s.get_or("samples", data.n_samples())?;
    let pca_k: Option<usize> = s.get("pca_k")?;

    let model = CstModel::fit(&cov, cfg.clone())?;
    let n = model.dim();
    let fb = model.filterbank();
    let lipschitz = fb.lipschitz().iter().copied().fold(0.0, f64::max);
    let w1 = decomposition.eigenvalues()[0];
    let delta = wavelet_delta(lipschitz, n, t, &constants, fb.gamma(), w1, w1);
    let b = fb.frame_upper();
    let b_u = model.readout_norm();
    let counts = if matches!(cfg.pruning, Pruning::Disabled) {
        (0..cfg.layers).map(|l| cfg.scales.pow(l as u32)).collect()
    } else {
        model
            .transform_batch(&data)?
            .layout
            .layer_counts(cfg.layers)
    };

    let mut rows: Vec<(String, f64)> = vec![
        ("samples".into(), t as f64),
        ("features".into(), n as f64),
        ("w1".into(), w1),
        ("k_max".into(), k_max),
        ("lipschitz_max".into(), lipschitz),
        ("frame_lower".into(), fb.frame_lower()),
        ("frame_upper".into(), b),
        ("readout_norm".into(), b_u),
        ("confidence".into(), constants.confidence()),
        ("wavelet_delta".into(), delta),
        (
            "cst_bound_per_unit_norm".into(),
            cst_stability_bound(delta, b, b_u, 1.0, &counts),
        ),
        (
            "signal_bound_per_unit_norm".into(),
            signal_stability_bound(b, b_u, 1.0, &counts),
        ),
    ];
    if let Some(k) = pca_k {
        rows.push((
            "pca_gap_scale".into(),
            pca_gap_scale(decomposition.eigenvalues().as_slice(), k)?,
        ));
    }
    let mut out = String::from("quantity,value\n");
    for (name, v) in &rows {
        out.push_str(&format!("{name},{v}\n"));
    }
    for (l, c) in counts.iter().enumerate() {
        out.push_str(&format!("layer_count_{l},{c}\n"));
    }
    ctx.write("bounds.csv", &out)?;
    ctx.note([("model.label".to_string(), cfg.label())]);
    Ok(())
}

fn cmd_grid(ctx: &mut Context) -> AppResult<()> {
    let dataset = ctx.dataset()?;
    let s = &ctx.settings;
    let n = dataset.data.n_features();
    let family = parse_family(s.raw("family").unwrap_or("diffusion"))?;
    let scales = s.list("scales")?.unwrap_or_else(|| vec![4, 5, 6, 7]);
    let layers = s.list("layers")?.unwrap_or_else(|| vec![2, 3, 4]);
    let operators = s
        .list("operators")?
        .unwrap_or_else(|| vec![OperatorKind::Normalized, OperatorKind::Inverted]);
    let aggregation = s.get_or("aggregation", Aggregation::Identity)?;
    let pca_ks: Vec<usize> = s
        .list("pca_ks")?
        .unwrap_or_else(|| vec![10, 20, 50])
        .into_iter()
        .filter(|&k| k <= n)
        .collect();
    let methods = grid_methods(family, &scales, &layers, &operators, aggregation, &pca_ks);
    let report = run_grid_search(&dataset, &methods, &ctx.split()?, &ctx.alphas()?)?;
    let best = &report.rows[report.best];
    let selected = [
        ("selected.method".to_string(), best.method.clone()),
        ("selected.alpha".to_string(), best.alpha.to_string()),
        ("selected.valid_mae".to_string(), best.valid_mae.to_string()),
    ];
    ctx.write("grid.csv", &report.to_csv())?;
    ctx.note(selected);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_config() {
        let config = vec![
            ("tail".to_string(), "0.2".to_string()),
            ("samples".to_string(), "50".to_string()),
        ];
        let flags: Pairs = vec![("tail", Some("0.7".into())), ("samples", None)];
        let s = Settings::resolve(&config, &flags, &["tail", "samples"]).unwrap();
        assert_eq!(s.get::<f64>("tail").unwrap(), Some(0.7));
        assert_eq!(s.get::<usize>("samples").unwrap(), Some(50));
    }

    #[test]
    fn unknown_config_key_is_usage_error() {
        let config = vec![("colour".to_string(), "red".to_string())];
        let err = Settings::resolve(&config, &[], &["tail"]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn lists_parse_and_reject_garbage() {
        let config = vec![("alphas".to_string(), "1, 10,100".to_string())];
        let s = Settings::resolve(&config, &[], &["alphas"]).unwrap();
        assert_eq!(
            s.list::<f64>("alphas").unwrap(),
            Some(vec![1.0, 10.0, 100.0])
        );
        let config = vec![("alphas".to_string(), "1,x".to_string())];
        let s = Settings::resolve(&config, &[], &["alphas"]).unwrap();
        assert!(s.list::<f64>("alphas").is_err());
    }

    #[test]
    fn every_command_accepts_its_documented_keys() {
        let cli = Cli::try_parse_from(["cst", "stability", "--seed", "1"]).unwrap();
        let keys = cli.command.keys();
        for k in ["methods", "fractions", "repeats", "alphas"]
            .iter()
            .chain(&SPLIT_KEYS)
        {
            assert!(keys.contains(k), "{k}");
        }
        let cli = Cli::try_parse_from(["cst", "transform"]).unwrap();
        assert_eq!(
            cli.command.keys(),
            [
                "family",
                "scales",
                "layers",
                "operator",
                "aggregation",
                "gamma",
                "tau"
            ]
        );
    }
}
