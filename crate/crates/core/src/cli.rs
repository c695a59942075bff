//! Command-line front end: `train`, `eval`, `audit`, `noise-test`, `l-sweep`.
//!
//! Configuration is a flat `key = value` file (`#` starts a comment); flags
//! override file keys. Exit codes: 0 success, 2 configuration or usage error,
//! 3 data error, 4 training failure.

use crate::cheb_approx::ApproximatorKind;
use crate::data_io::{
    csv_schema_from_header, load_csv, load_mnist, load_model, normalize, save_model, DataError, NormalizationMode,
    RawDataset,
};
use crate::functional_mech::laplace_self_test;
use crate::network::{
    audit, evaluate, l_sweep, train, LabeledGrids, LayerSpec, NetworkError, NetworkSpec, Readout, SensitivityRule,
};
use clap::{Args, Parser, Subcommand};
use serde_json::json;
use std::ffi::OsString;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_TRAIN: i32 = 4;

/// Smallest sample accepted by `noise-test`.
pub const NOISE_TEST_MIN_N: usize = 10_000;

#[derive(Debug, Parser)]
#[command(name = "pcdbn", version, about = "Differentially private convolutional deep belief networks")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Train a private model and write model.bin and metrics.jsonl.
    Train(RunArgs),
    /// Evaluate a saved model on a labeled test set.
    Eval(EvalArgs),
    /// Write per-layer sensitivities and error bounds to audit.jsonl.
    Audit(RunArgs),
    /// Kolmogorov-Smirnov check of the Laplace sampler.
    NoiseTest(NoiseArgs),
    /// Train and evaluate once per Chebyshev degree L; writes sweep.csv.
    LSweep(SweepArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, allow_hyphen_values = true)]
    epsilon: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Extra `key=value` override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Debug, Args)]
struct NoiseArgs {
    #[arg(long, allow_hyphen_values = true)]
    epsilon: f64,
    #[arg(long, allow_hyphen_values = true)]
    delta: f64,
    #[arg(long, default_value_t = 100_000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.01)]
    alpha: f64,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long = "l-values", value_name = "CSV")]
    l_values: Option<String>,
}

/// Failure carrying its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        Self { code: EXIT_CONFIG, message: message.into() }
    }
    fn data(message: impl ToString) -> Self {
        Self { code: EXIT_DATA, message: message.to_string() }
    }
    fn training(message: impl ToString) -> Self {
        Self { code: EXIT_TRAIN, message: message.to_string() }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        Self::data(e)
    }
}

/// Where a dataset comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Idx { images: PathBuf, labels: PathBuf },
    Csv { path: PathBuf, label: String },
}

/// Parsed configuration: dataset paths, network settings and output location.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub spec: NetworkSpec,
    pub train: Option<DataSource>,
    pub test: Option<DataSource>,
    pub normalization: NormalizationMode,
    pub out: PathBuf,
    pub l_values: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            spec: NetworkSpec::default(),
            train: None,
            test: None,
            normalization: NormalizationMode::PerPixel,
            out: PathBuf::from("out"),
            l_values: vec![3, 5, 7],
        }
    }
}

/// `key = value` pairs in file order. Blank lines and `#` comments are skipped.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::config(format!("line {}: expected key = value", i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, CliError> {
    v.parse().map_err(|_| CliError::config(format!("invalid value {v:?} for key {key}")))
}

fn boolean(key: &str, v: &str) -> Result<bool, CliError> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(CliError::config(format!("invalid value {v:?} for key {key}"))),
    }
}

/// Parses `chebyshev7`, `steep7`, `tanh5` or `linear(c1,c2)`.
pub fn parse_approximator(v: &str) -> Option<ApproximatorKind> {
    if let Some(l) = v.strip_prefix("chebyshev") {
        return l.parse().ok().map(ApproximatorKind::ChebyshevTruncated);
    }
    match v {
        "steep7" => return Some(ApproximatorKind::PaperSteepSigmoidL7),
        "tanh5" => return Some(ApproximatorKind::TaylorTanh5),
        "linear" => return Some(ApproximatorKind::linear_default()),
        _ => {}
    }
    let inner = v.strip_prefix("linear(")?.strip_suffix(')')?;
    let (a, b) = inner.split_once(',')?;
    Some(ApproximatorKind::LinearPiecewise(a.trim().parse().ok()?, b.trim().parse().ok()?))
}

/// `K/N_W/pool/approximator` entries separated by `;`.
fn parse_layers(v: &str) -> Result<Vec<LayerSpec>, CliError> {
    let bad = || CliError::config(format!("invalid value {v:?} for key layers (expected K/N_W/pool/approximator;...)"));
    v.split(';')
        .map(|item| {
            let parts: Vec<&str> = item.trim().split('/').map(str::trim).collect();
            let [k, n_w, pool, approx] = parts[..] else { return Err(bad()) };
            Ok(LayerSpec {
                k: k.parse().map_err(|_| bad())?,
                n_w: n_w.parse().map_err(|_| bad())?,
                pool: pool.parse().map_err(|_| bad())?,
                approximator: parse_approximator(approx).ok_or_else(bad)?,
            })
        })
        .collect()
}

fn parse_readout(v: &str) -> Option<Readout> {
    match v {
        "flatten" => Some(Readout::Flatten),
        "group-mean" => Some(Readout::GroupMean),
        "center-surround" => Some(Readout::CenterSurround),
        _ => v.strip_prefix("grid").and_then(|g| g.parse().ok()).map(Readout::Grid),
    }
}

fn parse_epsilon(v: &str) -> Result<Option<f64>, CliError> {
    if v == "none" || v == "inf" {
        return Ok(None);
    }
    let e: f64 = num("epsilon", v)?;
    if !(e > 0.0) || !e.is_finite() {
        return Err(CliError::config(format!("epsilon must be positive and finite, got {v}")));
    }
    Ok(Some(e))
}

/// Parses a comma-separated list of `L` values.
pub fn parse_l_values(v: &str) -> Result<Vec<usize>, CliError> {
    let ls: Vec<usize> = v.split(',').map(|x| num("l_values", x.trim())).collect::<Result<_, _>>()?;
    for (i, l) in ls.iter().enumerate() {
        if ls[..i].contains(l) {
            return Err(CliError::config(format!("duplicate value {l} in l_values")));
        }
    }
    Ok(ls)
}

impl RunConfig {
    /// Applies one key. Unknown keys are errors naming the key.
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), CliError> {
        let s = &mut self.spec;
        let bad = || CliError::config(format!("invalid value {v:?} for key {key}"));
        match key {
            "train_images" | "train_labels" => {
                let (mut images, mut labels) = match self.train.take() {
                    Some(DataSource::Idx { images, labels }) => (images, labels),
                    _ => (PathBuf::new(), PathBuf::new()),
                };
                if key == "train_images" { images = v.into() } else { labels = v.into() }
                self.train = Some(DataSource::Idx { images, labels });
            }
            "test_images" | "test_labels" => {
                let (mut images, mut labels) = match self.test.take() {
                    Some(DataSource::Idx { images, labels }) => (images, labels),
                    _ => (PathBuf::new(), PathBuf::new()),
                };
                if key == "test_images" { images = v.into() } else { labels = v.into() }
                self.test = Some(DataSource::Idx { images, labels });
            }
            "train_csv" => self.train = Some(DataSource::Csv { path: v.into(), label: "label".into() }),
            "test_csv" => self.test = Some(DataSource::Csv { path: v.into(), label: "label".into() }),
            "csv_label" => {
                for src in [&mut self.train, &mut self.test].into_iter().flatten() {
                    if let DataSource::Csv { label, .. } = src {
                        *label = v.to_string();
                    }
                }
            }
            "normalization" => {
                self.normalization = match v {
                    "per-pixel" => NormalizationMode::PerPixel,
                    "l2" => NormalizationMode::L2,
                    _ => return Err(bad()),
                }
            }
            "out" => self.out = v.into(),
            "l_values" => self.l_values = parse_l_values(v)?,
            "epsilon" => s.epsilon_total = parse_epsilon(v)?,
            "split" => {
                s.split = if v.is_empty() {
                    Vec::new()
                } else {
                    v.split(',').map(|x| num(key, x.trim())).collect::<Result<_, _>>()?
                }
            }
            "layers" => s.layers = parse_layers(v)?,
            "readout" => s.readout = parse_readout(v).ok_or_else(bad)?,
            "readout_bias" => s.readout_bias = boolean(key, v)?,
            "classes" => s.classes = num(key, v)?,
            "lr" => s.lr = num(key, v)?,
            "epochs" => s.epochs = num(key, v)?,
            "softmax_lr" => s.softmax_lr = num(key, v)?,
            "softmax_epochs" => s.softmax_epochs = num(key, v)?,
            "batch_size" => s.batch_size = num(key, v)?,
            "lrn_q" => s.lrn.q = num(key, v)?,
            "lrn_span" => s.lrn.l_span = num(key, v)?,
            "lrn_alpha" => s.lrn.alpha = num(key, v)?,
            "lrn_beta" => s.lrn.beta = num(key, v)?,
            "sensitivity" => {
                s.sensitivity = match v {
                    "lemma2" => SensitivityRule::Lemma2,
                    "all-groups" => SensitivityRule::AllGroups,
                    "lemma2-domain" => SensitivityRule::Lemma2Domain,
                    "all-groups-domain" => SensitivityRule::AllGroupsDomain,
                    _ => return Err(bad()),
                }
            }
            "param_bound" => s.param_bound = if v == "auto" { None } else { Some(num(key, v)?) },
            "dropout" => s.dropout = num(key, v)?,
            "unit_box" => s.unit_box = boolean(key, v)?,
            _ => return Err(CliError::config(format!("unknown key {key}"))),
        }
        Ok(())
    }

    /// Reads the file (if any), then applies `overrides` in order.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        if let Some(p) = path {
            let text = fs::read_to_string(p).map_err(|e| CliError::config(format!("config {}: {e}", p.display())))?;
            for (k, v) in parse_pairs(&text)? {
                cfg.set(&k, &v)?;
            }
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        if cfg.spec.lrn.validate().is_err() {
            return Err(CliError::config("invalid LRN settings (lrn_q, lrn_span, lrn_alpha, lrn_beta)"));
        }
        Ok(cfg)
    }
}

fn overrides(args: &RunArgs) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for s in &args.set {
        let (k, v) = s.split_once('=').ok_or_else(|| CliError::config(format!("--set {s}: expected KEY=VALUE")))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    if let Some(e) = &args.epsilon {
        out.push(("epsilon".into(), e.clone()));
    }
    if let Some(o) = &args.out {
        out.push(("out".into(), o.display().to_string()));
    }
    Ok(out)
}

/// Loads and normalizes a labeled dataset.
pub fn load_source(src: &DataSource, mode: NormalizationMode, classes: usize) -> Result<LabeledGrids, CliError> {
    let raw: RawDataset = match src {
        DataSource::Idx { images, labels } => {
            if images.as_os_str().is_empty() || labels.as_os_str().is_empty() {
                return Err(CliError::config("IDX data needs both *_images and *_labels"));
            }
            load_mnist(images, labels)?
        }
        DataSource::Csv { path, label } => load_csv(path, &csv_schema_from_header(path, Some(label))?)?,
    };
    Ok(normalize(&raw, mode)?.to_labeled_grids(classes)?)
}

/// Exclusive claim on an output directory, released on drop.
struct OutLock {
    path: PathBuf,
}

impl OutLock {
    fn acquire(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::config(format!("out {}: {e}", dir.display())))?;
        let path = dir.join(".pcdbn.lock");
        OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|_| CliError::config(format!("output directory {} is locked by {}", dir.display(), path.display())))?;
        Ok(Self { path })
    }
}

impl Drop for OutLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let mut f = File::create(path).map_err(|e| CliError::training(format!("{}: {e}", path.display())))?;
    f.write_all(bytes).map_err(|e| CliError::training(format!("{}: {e}", path.display())))
}

fn require_seed(seed: Option<u64>) -> Result<u64, CliError> {
    seed.ok_or_else(|| CliError::config("--seed is required"))
}

fn network_config_error(e: NetworkError) -> CliError {
    CliError::config(e.to_string())
}

/// Loads the training set and fixes the spec's input side and seed.
pub fn prepare(cfg: &mut RunConfig, seed: u64) -> Result<LabeledGrids, CliError> {
    cfg.spec.seed = seed;
    cfg.spec.validate().map_err(network_config_error)?;
    let src = cfg.train.clone().ok_or_else(|| CliError::config("missing key train_images/train_csv"))?;
    let data = load_source(&src, cfg.normalization, cfg.spec.classes)?;
    if data.is_empty() {
        return Err(CliError::data("training set is empty"));
    }
    cfg.spec.input_side = data.grids[0].side();
    cfg.spec.validate().map_err(network_config_error)?;
    Ok(data)
}

fn cmd_train(args: RunArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let seed = require_seed(args.seed)?;
    let mut cfg = RunConfig::load(args.config.as_deref(), &overrides(&args)?)?;
    let data = prepare(&mut cfg, seed)?;
    let test = cfg.test.as_ref().map(|s| load_source(s, cfg.normalization, cfg.spec.classes)).transpose()?;
    let _lock = OutLock::acquire(&cfg.out)?;
    let model = train(&cfg.spec, &data).map_err(CliError::training)?;
    save_model(&model, &cfg.out.join("model.bin")).map_err(CliError::training)?;
    let mut lines = String::new();
    for m in &model.metrics {
        lines.push_str(&serde_json::to_string(m).expect("metric json"));
        lines.push('\n');
    }
    if let Some(t) = &test {
        let ev = evaluate(&model, t).map_err(CliError::data)?;
        let row = json!({"stage": "eval", "accuracy": ev.accuracy, "correct": ev.correct, "total": ev.total, "loss": ev.loss});
        lines.push_str(&row.to_string());
        lines.push('\n');
        let _ = writeln!(out, "test accuracy: {:.4}", ev.accuracy);
    }
    write_file(&cfg.out.join("metrics.jsonl"), lines.as_bytes())?;
    let _ = write!(out, "{}", model.accountant.render());
    Ok(())
}

fn cmd_eval(args: EvalArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let pairs = args
        .set
        .iter()
        .map(|s| {
            s.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| CliError::config(format!("--set {s}: expected KEY=VALUE")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let cfg = RunConfig::load(args.config.as_deref(), &pairs)?;
    let model = load_model(&args.model)?;
    let src = cfg.test.clone().ok_or_else(|| CliError::config("missing key test_images/test_csv"))?;
    let test = load_source(&src, cfg.normalization, model.spec.classes)?;
    let ev = evaluate(&model, &test).map_err(CliError::data)?;
    let _ = writeln!(out, "{}", serde_json::to_string(&ev).expect("metrics json"));
    let _ = writeln!(out, "ε spent: 0");
    Ok(())
}

fn cmd_audit(args: RunArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let seed = require_seed(args.seed)?;
    let mut cfg = RunConfig::load(args.config.as_deref(), &overrides(&args)?)?;
    let data = prepare(&mut cfg, seed)?;
    let _lock = OutLock::acquire(&cfg.out)?;
    let rows = audit(&cfg.spec, &data).map_err(CliError::data)?;
    let mut lines = String::new();
    for r in &rows {
        lines.push_str(&serde_json::to_string(r).expect("audit json"));
        lines.push('\n');
    }
    write_file(&cfg.out.join("audit.jsonl"), lines.as_bytes())?;
    let _ = write!(out, "{lines}");
    let _ = writeln!(out, "ε spent: 0");
    Ok(())
}

fn cmd_noise_test(args: NoiseArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if args.n < NOISE_TEST_MIN_N {
        return Err(CliError::config(format!("n must be at least {NOISE_TEST_MIN_N}, got {}", args.n)));
    }
    let r = laplace_self_test(args.epsilon, args.delta, args.n, args.seed)
        .map_err(|e| CliError::config(format!("epsilon/delta: {e}")))?;
    let pass = r.p_value >= args.alpha;
    let row = json!({
        "n": r.n,
        "scale": args.delta / args.epsilon,
        "statistic": r.statistic,
        "p_value": r.p_value,
        "alpha": args.alpha,
        "pass": pass,
    });
    let _ = writeln!(out, "{row}");
    let _ = writeln!(out, "ε spent: 0");
    Ok(())
}

fn cmd_l_sweep(args: SweepArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let seed = require_seed(args.run.seed)?;
    let mut pairs = overrides(&args.run)?;
    if let Some(l) = &args.l_values {
        pairs.push(("l_values".into(), l.clone()));
    }
    let mut cfg = RunConfig::load(args.run.config.as_deref(), &pairs)?;
    if let Some(&l) = cfg.l_values.iter().find(|&&l| l == 0 || l > crate::functional_mech::MAX_EXPANSION_DEGREE) {
        return Err(CliError::config(format!("invalid value {l} in l_values")));
    }
    let data = prepare(&mut cfg, seed)?;
    let src = cfg.test.clone().ok_or_else(|| CliError::config("missing key test_images/test_csv"))?;
    let test = load_source(&src, cfg.normalization, cfg.spec.classes)?;
    let _lock = OutLock::acquire(&cfg.out)?;
    let rows = l_sweep(&cfg.spec, &data, &test, &cfg.l_values).map_err(|e| match e {
        NetworkError::InvalidL(_) | NetworkError::DuplicateL(_) => CliError::config(e.to_string()),
        e => CliError::training(e),
    })?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &rows {
        w.serialize(r).map_err(CliError::training)?;
    }
    let bytes = w.into_inner().map_err(CliError::training)?;
    write_file(&cfg.out.join("sweep.csv"), &bytes)?;
    let _ = out.write_all(&bytes);
    for r in &rows {
        let _ = writeln!(out, "L={}", r.l);
        let _ = write!(out, "{}", r.accountant.render());
    }
    Ok(())
}

fn set_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("DP_ENERGY_THREADS") else { return Ok(()) };
    let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CliError::config(format!("DP_ENERGY_THREADS must be a positive integer, got {v:?}"))
    })?;
    // A pool already built by an earlier call in the same process is kept.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Runs the CLI on `args` (program name first), writing reports to `out` and
/// errors to stderr. Returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    let result = set_threads().and_then(|()| match cli.cmd {
        Cmd::Train(a) => cmd_train(a, out),
        Cmd::Eval(a) => cmd_eval(a, out),
        Cmd::Audit(a) => cmd_audit(a, out),
        Cmd::NoiseTest(a) => cmd_noise_test(a, out),
        Cmd::LSweep(a) => cmd_l_sweep(a, out),
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}
