//! Command-line driver for dataset simulation, model fitting, prediction,
//! bootstrap bands, and replicated benchmark runs.
//!
//! Every command can read its settings from a JSON file (`--config`);
//! explicit flags override the file. The fully resolved configuration is
//! embedded in each output artifact (a `# config:` comment in CSV files,
//! a `config` field in JSON files), so any artifact can be reproduced
//! bit-exactly by re-running its command with the embedded config.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on usage errors
//! (including missing input files).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::parser::ValueSource;
use clap::{ArgAction, ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use catelab::data::{load_dataset, CsvSchema};
use catelab::nuisance::NuisanceConfig;
use catelab::pipeline::{
    bootstrap_ci, decision_rule, fit_cate, fit_qlearner, CateModel, Direction, FitConfig, NisMode,
    QlBaseline,
};
use catelab::simlab::{
    generate, replicate, render_results_csv, Method, MethodSpec, ReplicateConfig, SimSetting,
    ValidationSet,
};
use catelab::splines::GramKind;
use catelab::{Dataset, Learner, Loss};

#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    fn runtime(msg: impl std::fmt::Display) -> Self {
        CliError::Runtime(msg.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "catelab",
    version,
    about = "Robust heterogeneous treatment effect estimation",
    propagate_version = true
)]
struct Cli {
    /// Cap on worker threads (0 uses every core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Draw a benchmark training set plus a validation set with the true effect.
    Simulate(SimulateArgs),
    /// Fit an effect model from a CSV dataset and save it as JSON.
    Fit(FitArgs),
    /// Evaluate a saved model on new covariate rows.
    Predict(PredictArgs),
    /// Pointwise bootstrap confidence band for the fitted effect.
    Bootstrap(BootstrapArgs),
    /// Replicated generate/fit/evaluate benchmark producing a results table.
    Replicate(ReplicateArgs),
}

/// Copies every field the user explicitly passed on the command line from
/// `$src` onto `$base` (which usually came from a config file).
macro_rules! apply_overrides {
    ($base:expr, $src:expr, $m:expr, [$($f:ident),* $(,)?]) => {
        $(
            if matches!($m.value_source(stringify!($f)), Some(ValueSource::CommandLine)) {
                $base.$f = $src.$f.clone();
            }
        )*
    };
}

fn load_config<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|_| CliError::usage(format!("config file not found: {}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::usage(format!("bad config {}: {e}", path.display())))
}

fn config_line<T: Serialize>(cfg: &T) -> String {
    serde_json::to_string(cfg).expect("config serializes")
}

fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::usage(format!(
            "{what} file not found: {}",
            path.display()
        )))
    }
}

fn write_artifact(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents)
        .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// Shared fitting options
// ---------------------------------------------------------------------------

/// Fitting knobs shared by `fit`, `bootstrap`, and `replicate`.
#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
struct FitOpts {
    /// B-spline degree.
    #[arg(long, default_value_t = 3)]
    degree: usize,
    /// Interior intervals per covariate; omitted means the sqrt(n)/2 rule.
    #[arg(long)]
    intervals: Option<usize>,
    /// Curvature penalty grid, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 1e-4, 1e-3, 1e-2])]
    lambda2: Vec<f64>,
    /// Number of sparsity penalty grid points.
    #[arg(long, default_value_t = 20)]
    n_lambda1: usize,
    /// Smallest grid point as a fraction of the full-shrinkage penalty.
    #[arg(long, default_value_t = 1e-3)]
    lambda1_min_ratio: f64,
    /// Cross-validation folds.
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Prefer sparser fits within one standard error of the best.
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    one_se: bool,
    /// Marginal screening before fitting: off, auto, or a kept-covariate count.
    #[arg(long, default_value = "off")]
    nis: String,
    /// Group-norm convention: empirical or integral.
    #[arg(long, default_value = "empirical")]
    gram: String,
    /// Boosting rounds for nuisance fits.
    #[arg(long, default_value_t = 500)]
    trees: usize,
    /// Cross-validation folds inside nuisance fits.
    #[arg(long, default_value_t = 5)]
    nuisance_folds: usize,
    /// Propensity clipping bound.
    #[arg(long, default_value_t = 0.01)]
    clip: f64,
    /// Hold-out nuisance predictions (fold-wise refitting).
    #[arg(long, default_value_t = false, action = ArgAction::Set)]
    cross_fit: bool,
    /// Master seed for fold assignment and nuisance fitting.
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

impl Default for FitOpts {
    fn default() -> Self {
        FitOpts {
            degree: 3,
            intervals: None,
            lambda2: vec![0.0, 1e-4, 1e-3, 1e-2],
            n_lambda1: 20,
            lambda1_min_ratio: 1e-3,
            folds: 5,
            one_se: true,
            nis: "off".into(),
            gram: "empirical".into(),
            trees: 500,
            nuisance_folds: 5,
            clip: 0.01,
            cross_fit: false,
            seed: 7,
        }
    }
}

impl FitOpts {
    fn to_fit_config(&self, ql_baseline: &str) -> Result<FitConfig, CliError> {
        let nis = match self.nis.to_ascii_lowercase().as_str() {
            "off" => NisMode::Off,
            "auto" => NisMode::Auto,
            other => match other.parse::<usize>() {
                Ok(k) if k >= 1 => NisMode::Keep(k),
                _ => {
                    return Err(CliError::usage(format!(
                        "--nis takes off, auto, or a positive count, got '{}'",
                        self.nis
                    )))
                }
            },
        };
        let gram = match self.gram.to_ascii_lowercase().as_str() {
            "empirical" => GramKind::Empirical,
            "integral" => GramKind::Integral,
            other => {
                return Err(CliError::usage(format!(
                    "--gram takes empirical or integral, got '{other}'"
                )))
            }
        };
        let ql_baseline = match ql_baseline.to_ascii_lowercase().as_str() {
            "spline" => QlBaseline::Spline,
            "linear" => QlBaseline::Linear,
            other => {
                return Err(CliError::usage(format!(
                    "--ql-baseline takes spline or linear, got '{other}'"
                )))
            }
        };
        let mut cfg = FitConfig::default();
        cfg.degree = self.degree;
        cfg.n_intervals = self.intervals;
        cfg.lambda2_grid = self.lambda2.clone();
        cfg.n_lambda1 = self.n_lambda1;
        cfg.lambda1_min_ratio = self.lambda1_min_ratio;
        cfg.n_folds = self.folds;
        cfg.one_se = self.one_se;
        cfg.nis = nis;
        cfg.gram = gram;
        cfg.seed = self.seed;
        cfg.ql_baseline = ql_baseline;
        cfg.nuisance = NuisanceConfig {
            max_trees: self.trees,
            folds: self.nuisance_folds,
            clip: self.clip,
            cross_fit: self.cross_fit,
            seed: self.seed ^ 0xb005,
            ..NuisanceConfig::default()
        };
        Ok(cfg)
    }
}

fn parse_loss(s: &str) -> Result<Loss, CliError> {
    s.parse().map_err(CliError::Usage)
}

fn parse_direction(s: &str) -> Result<Direction, CliError> {
    s.parse().map_err(CliError::Usage)
}

fn build_setting(name: &str, n: usize, p: usize, xi: f64) -> Result<SimSetting, CliError> {
    let made = match name.to_ascii_lowercase().as_str() {
        "s1" | "s2" | "s3" | "s4" | "standard" => SimSetting::standard(n, p, xi),
        "s5" | "univariate" => SimSetting::univariate(n),
        "s6" | "misspecified" => SimSetting::misspecified(n, p, xi),
        other => {
            return Err(CliError::usage(format!(
                "unknown setting '{other}'; expected s1, s5, or s6"
            )))
        }
    };
    made.map_err(|e| CliError::usage(e.to_string()))
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
struct SimulateArgs {
    /// JSON file with this command's settings; explicit flags override it.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Benchmark setting: s1 (standard), s5 (univariate), s6 (shifted baseline).
    #[arg(long, default_value = "s1")]
    setting: String,
    /// Training rows.
    #[arg(long, default_value_t = 1000)]
    n: usize,
    /// Covariates (ignored by s5, which is univariate).
    #[arg(long, default_value_t = 10)]
    p: usize,
    /// Contamination proportion in [0, 1] (s5 fixes its own).
    #[arg(long, default_value_t = 0.05)]
    xi: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Training CSV path.
    #[arg(long, default_value = "train.csv")]
    train_out: PathBuf,
    /// Validation CSV path (includes the true effect column).
    #[arg(long, default_value = "validation.csv")]
    val_out: PathBuf,
}

impl Default for SimulateArgs {
    fn default() -> Self {
        SimulateArgs {
            config: None,
            setting: "s1".into(),
            n: 1000,
            p: 10,
            xi: 0.05,
            seed: 7,
            train_out: "train.csv".into(),
            val_out: "validation.csv".into(),
        }
    }
}

fn resolve_simulate(parsed: &SimulateArgs, m: &ArgMatches) -> Result<SimulateArgs, CliError> {
    let mut args = match &parsed.config {
        Some(path) => load_config::<SimulateArgs>(path)?,
        None => parsed.clone(),
    };
    apply_overrides!(
        args,
        parsed,
        m,
        [setting, n, p, xi, seed, train_out, val_out]
    );
    Ok(args)
}

fn dataset_csv(d: &Dataset, tau: Option<&[f64]>, header_comment: &str) -> String {
    let mut out = String::new();
    out.push_str("# config: ");
    out.push_str(header_comment);
    out.push('\n');
    out.push('y');
    out.push_str(",t");
    for name in d.col_names() {
        out.push(',');
        out.push_str(name);
    }
    if tau.is_some() {
        out.push_str(",tau");
    }
    out.push('\n');
    for i in 0..d.n() {
        out.push_str(&format!("{},{}", d.y()[i], d.t()[i]));
        for j in 0..d.p() {
            out.push_str(&format!(",{}", d.x()[(i, j)]));
        }
        if let Some(tau) = tau {
            out.push_str(&format!(",{}", tau[i]));
        }
        out.push('\n');
    }
    out
}

fn cmd_simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let setting = build_setting(&args.setting, args.n, args.p, args.xi)?;
    let (train, val): (Dataset, ValidationSet) =
        generate(&setting, args.seed).map_err(CliError::runtime)?;
    let echo = config_line(args);
    write_artifact(&args.train_out, &dataset_csv(&train, None, &echo))?;
    write_artifact(&args.val_out, &dataset_csv(&val.data, Some(&val.tau), &echo))?;
    println!(
        "wrote {} ({} rows) and {} ({} rows)",
        args.train_out.display(),
        train.n(),
        args.val_out.display(),
        val.data.n()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
struct FitArgs {
    /// JSON file with this command's settings; explicit flags override it.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Training CSV.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Outcome column name.
    #[arg(long, default_value = "y")]
    outcome: String,
    /// Treatment column name (values -1/+1 or 0/1).
    #[arg(long, default_value = "t")]
    treatment: String,
    /// Estimator: mcm, mcm_ea, rl, al, ipw, aipw, or ql.
    #[arg(long, default_value = "rl")]
    learner: String,
    /// l1 (robust) or l2 (squared error).
    #[arg(long, default_value = "l1")]
    loss: String,
    /// Baseline block for the ql learner: spline or linear.
    #[arg(long, default_value = "spline")]
    ql_baseline: String,
    #[command(flatten)]
    #[serde(flatten)]
    opts: FitOpts,
    /// Model JSON path.
    #[arg(long, default_value = "model.json")]
    model_out: PathBuf,
    /// Fit report JSON path.
    #[arg(long, default_value = "report.json")]
    report_out: PathBuf,
}

impl Default for FitArgs {
    fn default() -> Self {
        FitArgs {
            config: None,
            input: None,
            outcome: "y".into(),
            treatment: "t".into(),
            learner: "rl".into(),
            loss: "l1".into(),
            ql_baseline: "spline".into(),
            opts: FitOpts::default(),
            model_out: "model.json".into(),
            report_out: "report.json".into(),
        }
    }
}

fn resolve_fit(parsed: &FitArgs, m: &ArgMatches) -> Result<FitArgs, CliError> {
    let mut args = match &parsed.config {
        Some(path) => load_config::<FitArgs>(path)?,
        None => parsed.clone(),
    };
    apply_overrides!(
        args,
        parsed,
        m,
        [input, outcome, treatment, learner, loss, ql_baseline, model_out, report_out]
    );
    apply_fit_opts(&mut args.opts, &parsed.opts, m);
    Ok(args)
}

fn apply_fit_opts(base: &mut FitOpts, src: &FitOpts, m: &ArgMatches) {
    apply_overrides!(
        base,
        src,
        m,
        [
            degree,
            intervals,
            lambda2,
            n_lambda1,
            lambda1_min_ratio,
            folds,
            one_se,
            nis,
            gram,
            trees,
            nuisance_folds,
            clip,
            cross_fit,
            seed,
        ]
    );
}

fn fit_model(d: &Dataset, args: &FitArgs) -> Result<CateModel, CliError> {
    let loss = parse_loss(&args.loss)?;
    let cfg = args.opts.to_fit_config(&args.ql_baseline)?;
    let learner_name = args.learner.to_ascii_lowercase();
    let model = if learner_name == "ql" {
        fit_qlearner(d, loss, &cfg)
    } else {
        let learner: Learner = args.learner.parse().map_err(CliError::Usage)?;
        fit_cate(d, learner, loss, &cfg)
    };
    model.map_err(CliError::runtime)
}

fn cmd_fit(args: &FitArgs) -> Result<(), CliError> {
    let input = args
        .input
        .as_ref()
        .ok_or_else(|| CliError::usage("fit needs --input (or input in the config)"))?;
    require_file(input, "input")?;
    let schema = CsvSchema::new(&args.outcome, &args.treatment);
    let d = load_dataset(input, &schema).map_err(CliError::runtime)?;
    let model = fit_model(&d, args)?;

    let echo = serde_json::to_value(args).expect("config serializes");
    let model_doc = serde_json::json!({
        "config": echo,
        "model": serde_json::from_str::<serde_json::Value>(
            &model.to_json().map_err(CliError::runtime)?
        ).expect("model JSON parses"),
    });
    write_artifact(&args.model_out, &serde_json::to_string(&model_doc).unwrap())?;

    let report_doc = serde_json::json!({
        "config": echo,
        "report": model.report,
    });
    write_artifact(
        &args.report_out,
        &serde_json::to_string_pretty(&report_doc).unwrap(),
    )?;
    println!(
        "fit {} rows; selected [{}]; lambda1 {:.6e}, lambda2 {:.6e}",
        model.report.n,
        model.report.selected.join(", "),
        model.lambda1,
        model.lambda2
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// predict
// ---------------------------------------------------------------------------

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
struct PredictArgs {
    /// JSON file with this command's settings; explicit flags override it.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Model JSON produced by fit.
    #[arg(long)]
    model: Option<PathBuf>,
    /// CSV with covariate columns (outcome/treatment columns are ignored).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Outcome column to ignore if present.
    #[arg(long, default_value = "y")]
    outcome: String,
    /// Treatment column to ignore if present.
    #[arg(long, default_value = "t")]
    treatment: String,
    /// Recommend the arm that maximizes or minimizes the outcome.
    #[arg(long, default_value = "maximize")]
    direction: String,
    /// Predictions CSV path.
    #[arg(long, default_value = "predictions.csv")]
    out: PathBuf,
}

impl Default for PredictArgs {
    fn default() -> Self {
        PredictArgs {
            config: None,
            model: None,
            input: None,
            outcome: "y".into(),
            treatment: "t".into(),
            direction: "maximize".into(),
            out: "predictions.csv".into(),
        }
    }
}

fn resolve_predict(parsed: &PredictArgs, m: &ArgMatches) -> Result<PredictArgs, CliError> {
    let mut args = match &parsed.config {
        Some(path) => load_config::<PredictArgs>(path)?,
        None => parsed.clone(),
    };
    apply_overrides!(
        args,
        parsed,
        m,
        [model, input, outcome, treatment, direction, out]
    );
    Ok(args)
}

/// Reads a saved model, accepting both the CLI artifact (with its embedded
/// config) and a bare model document.
fn load_model(path: &Path) -> Result<CateModel, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::runtime(format!("cannot read {}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::runtime(format!("bad model JSON {}: {e}", path.display())))?;
    let inner = value.get("model").unwrap_or(&value);
    CateModel::from_json(&serde_json::to_string(inner).unwrap()).map_err(CliError::runtime)
}

/// Reads covariate rows: every column except the named outcome/treatment
/// ones, in header order.
fn load_covariates(
    path: &Path,
    outcome: &str,
    treatment: &str,
) -> Result<(Array2<f64>, usize), CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| CliError::runtime(format!("cannot read {}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| CliError::runtime(format!("bad CSV header in {}: {e}", path.display())))?
        .clone();
    let keep: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| *h != outcome && *h != treatment)
        .map(|(i, _)| i)
        .collect();
    if keep.is_empty() {
        return Err(CliError::runtime(format!(
            "no covariate columns in {}",
            path.display()
        )));
    }
    let mut values = Vec::new();
    let mut rows = 0usize;
    for record in reader.records() {
        let record =
            record.map_err(|e| CliError::runtime(format!("bad CSV row in input: {e}")))?;
        for &i in &keep {
            let field = record.get(i).unwrap_or("");
            let v: f64 = field.trim().parse().map_err(|_| {
                CliError::runtime(format!("non-numeric value '{field}' in row {}", rows + 1))
            })?;
            values.push(v);
        }
        rows += 1;
    }
    let x = Array2::from_shape_vec((rows, keep.len()), values)
        .map_err(|e| CliError::runtime(format!("ragged CSV: {e}")))?;
    Ok((x, keep.len()))
}

fn cmd_predict(args: &PredictArgs) -> Result<(), CliError> {
    let model_path = args
        .model
        .as_ref()
        .ok_or_else(|| CliError::usage("predict needs --model (or model in the config)"))?;
    let input = args
        .input
        .as_ref()
        .ok_or_else(|| CliError::usage("predict needs --input (or input in the config)"))?;
    require_file(model_path, "model")?;
    require_file(input, "input")?;
    let direction = parse_direction(&args.direction)?;
    let model = load_model(model_path)?;
    let (x, _) = load_covariates(input, &args.outcome, &args.treatment)?;
    let tau = model.predict(&x).map_err(CliError::runtime)?.tau;
    let arms: Vec<i8> = tau.iter().map(|&t| decision_rule(t, direction)).collect();

    let mut out = String::new();
    out.push_str("# config: ");
    out.push_str(&config_line(args));
    out.push('\n');
    out.push_str("row,tau,arm\n");
    for i in 0..tau.len() {
        out.push_str(&format!("{},{},{}\n", i, tau[i], arms[i]));
    }
    write_artifact(&args.out, &out)?;
    println!("wrote {} predictions to {}", tau.len(), args.out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// bootstrap
// ---------------------------------------------------------------------------

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
struct BootstrapArgs {
    /// JSON file with this command's settings; explicit flags override it.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Training CSV.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, default_value = "y")]
    outcome: String,
    #[arg(long, default_value = "t")]
    treatment: String,
    /// Estimator to resample (ql is not supported here).
    #[arg(long, default_value = "rl")]
    learner: String,
    #[arg(long, default_value = "l1")]
    loss: String,
    /// Evaluation points for a single-covariate model, comma separated.
    #[arg(long, value_delimiter = ',')]
    eval: Vec<f64>,
    /// CSV of evaluation rows for multi-covariate models.
    #[arg(long)]
    eval_csv: Option<PathBuf>,
    /// Bootstrap replicates.
    #[arg(long, default_value_t = 200)]
    b: usize,
    /// Band level in (0, 1).
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[command(flatten)]
    #[serde(flatten)]
    opts: FitOpts,
    /// Band CSV path.
    #[arg(long, default_value = "band.csv")]
    out: PathBuf,
}

impl Default for BootstrapArgs {
    fn default() -> Self {
        BootstrapArgs {
            config: None,
            input: None,
            outcome: "y".into(),
            treatment: "t".into(),
            learner: "rl".into(),
            loss: "l1".into(),
            eval: Vec::new(),
            eval_csv: None,
            b: 200,
            level: 0.95,
            opts: FitOpts::default(),
            out: "band.csv".into(),
        }
    }
}

fn resolve_bootstrap(parsed: &BootstrapArgs, m: &ArgMatches) -> Result<BootstrapArgs, CliError> {
    let mut args = match &parsed.config {
        Some(path) => load_config::<BootstrapArgs>(path)?,
        None => parsed.clone(),
    };
    apply_overrides!(
        args,
        parsed,
        m,
        [input, outcome, treatment, learner, loss, eval, eval_csv, b, level, out]
    );
    apply_fit_opts(&mut args.opts, &parsed.opts, m);
    Ok(args)
}

fn cmd_bootstrap(args: &BootstrapArgs) -> Result<(), CliError> {
    let input = args
        .input
        .as_ref()
        .ok_or_else(|| CliError::usage("bootstrap needs --input (or input in the config)"))?;
    require_file(input, "input")?;
    let learner: Learner = args.learner.parse().map_err(CliError::Usage)?;
    let loss = parse_loss(&args.loss)?;
    let cfg = args.opts.to_fit_config("spline")?;
    let schema = CsvSchema::new(&args.outcome, &args.treatment);
    let d = load_dataset(input, &schema).map_err(CliError::runtime)?;

    let eval = match (&args.eval_csv, args.eval.is_empty()) {
        (Some(path), _) => {
            require_file(path, "eval")?;
            load_covariates(path, &args.outcome, &args.treatment)?.0
        }
        (None, false) => {
            if d.p() != 1 {
                return Err(CliError::usage(
                    "--eval only works for single-covariate data; use --eval-csv",
                ));
            }
            Array2::from_shape_vec((args.eval.len(), 1), args.eval.clone())
                .expect("eval points reshape")
        }
        (None, true) => {
            return Err(CliError::usage(
                "bootstrap needs evaluation points: --eval or --eval-csv",
            ))
        }
    };

    let band = bootstrap_ci(&d, learner, loss, &cfg, &eval, args.b, args.level)
        .map_err(CliError::runtime)?;

    let mut out = String::new();
    out.push_str("# config: ");
    out.push_str(&config_line(args));
    out.push('\n');
    let statuses: Vec<&str> = band
        .statuses
        .iter()
        .map(|ok| if *ok { "ok" } else { "skip" })
        .collect();
    out.push_str(&format!("# replicate_status: {}\n", statuses.join(",")));
    out.push_str(&format!(
        "# b_requested: {}, b_used: {}, level: {}\n",
        band.b_requested, band.b_used, band.level
    ));
    for j in 0..eval.ncols() {
        out.push_str(&format!("x{},", j + 1));
    }
    out.push_str("estimate,lower,upper\n");
    for i in 0..eval.nrows() {
        for j in 0..eval.ncols() {
            out.push_str(&format!("{},", eval[(i, j)]));
        }
        out.push_str(&format!(
            "{},{},{}\n",
            band.estimate[i], band.lower[i], band.upper[i]
        ));
    }
    write_artifact(&args.out, &out)?;
    println!(
        "bootstrap band at {} points ({} of {} replicates used) in {}",
        eval.nrows(),
        band.b_used,
        band.b_requested,
        args.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// replicate
// ---------------------------------------------------------------------------

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
struct ReplicateArgs {
    /// JSON file with this command's settings; explicit flags override it.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Benchmark setting: s1, s5, or s6.
    #[arg(long, default_value = "s1")]
    setting: String,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 10)]
    p: usize,
    #[arg(long, default_value_t = 0.05)]
    xi: f64,
    /// Replications.
    #[arg(long, default_value_t = 50)]
    r: usize,
    /// Methods as loss:method pairs; defaults to the full benchmark grid.
    #[arg(long, value_delimiter = ',')]
    methods: Vec<String>,
    /// Monte-Carlo draws for each fitted rule's value.
    #[arg(long, default_value_t = 100_000)]
    n_mc: usize,
    #[command(flatten)]
    #[serde(flatten)]
    opts: FitOpts,
    /// Results CSV path.
    #[arg(long, default_value = "results.csv")]
    out: PathBuf,
}

impl Default for ReplicateArgs {
    fn default() -> Self {
        ReplicateArgs {
            config: None,
            setting: "s1".into(),
            n: 1000,
            p: 10,
            xi: 0.05,
            r: 50,
            methods: Vec::new(),
            n_mc: 100_000,
            opts: FitOpts::default(),
            out: "results.csv".into(),
        }
    }
}

fn resolve_replicate(parsed: &ReplicateArgs, m: &ArgMatches) -> Result<ReplicateArgs, CliError> {
    let mut args = match &parsed.config {
        Some(path) => load_config::<ReplicateArgs>(path)?,
        None => parsed.clone(),
    };
    apply_overrides!(
        args,
        parsed,
        m,
        [setting, n, p, xi, r, methods, n_mc, out]
    );
    apply_fit_opts(&mut args.opts, &parsed.opts, m);
    Ok(args)
}

fn parse_methods(specs: &[String]) -> Result<Vec<MethodSpec>, CliError> {
    if specs.is_empty() {
        return Ok(MethodSpec::benchmark_grid());
    }
    specs
        .iter()
        .map(|s| {
            let (loss, method) = s
                .split_once([':', '-'])
                .ok_or_else(|| CliError::usage(format!("method '{s}' is not loss:method")))?;
            Ok(MethodSpec {
                loss: parse_loss(loss)?,
                method: method
                    .parse::<Method>()
                    .map_err(|e| CliError::usage(e.to_string()))?,
            })
        })
        .collect()
}

fn cmd_replicate(args: &ReplicateArgs) -> Result<(), CliError> {
    let setting = build_setting(&args.setting, args.n, args.p, args.xi)?;
    let methods = parse_methods(&args.methods)?;
    let mut cfg = ReplicateConfig::new(setting, args.r, args.opts.seed);
    cfg.methods = methods;
    cfg.n_mc_value = args.n_mc;
    cfg.fit = args.opts.to_fit_config("spline")?;
    let result = replicate(&cfg).map_err(CliError::runtime)?;
    let failed = result.failed;
    let rows = result.summaries.len();
    let csv = render_results_csv(&[result], &[format!("config: {}", config_line(args))]);
    write_artifact(&args.out, &csv)?;
    println!(
        "replicated {} methods x {} runs into {}{}",
        rows,
        args.r,
        args.out.display(),
        if failed { " (scenario FAILED: too many lost replications)" } else { "" }
    );
    if failed {
        return Err(CliError::Runtime("scenario failed".into()));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// entry
// ---------------------------------------------------------------------------

fn run(cli: &Cli, matches: &ArgMatches) -> Result<(), CliError> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .ok();
    }
    let (name, sub) = matches.subcommand().expect("subcommand required");
    debug_assert!(["simulate", "fit", "predict", "bootstrap", "replicate"].contains(&name));
    match &cli.cmd {
        Cmd::Simulate(parsed) => cmd_simulate(&resolve_simulate(parsed, sub)?),
        Cmd::Fit(parsed) => cmd_fit(&resolve_fit(parsed, sub)?),
        Cmd::Predict(parsed) => cmd_predict(&resolve_predict(parsed, sub)?),
        Cmd::Bootstrap(parsed) => cmd_bootstrap(&resolve_bootstrap(parsed, sub)?),
        Cmd::Replicate(parsed) => cmd_replicate(&resolve_replicate(parsed, sub)?),
    }
}

fn main() -> ExitCode {
    let matches = Cli::command().get_matches();
    let cli = Cli::from_arg_matches(&matches).expect("parsed matches convert");
    match run(&cli, &matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sub_matches<'a>(m: &'a ArgMatches) -> &'a ArgMatches {
        m.subcommand().unwrap().1
    }

    #[test]
    fn defaults_match_clap_defaults() {
        let m = Cli::command().get_matches_from(["catelab", "simulate"]);
        let cli = Cli::from_arg_matches(&m).unwrap();
        let Cmd::Simulate(parsed) = &cli.cmd else { panic!() };
        assert_eq!(
            serde_json::to_string(parsed).unwrap(),
            serde_json::to_string(&SimulateArgs::default()).unwrap()
        );

        let m = Cli::command().get_matches_from(["catelab", "fit"]);
        let cli = Cli::from_arg_matches(&m).unwrap();
        let Cmd::Fit(parsed) = &cli.cmd else { panic!() };
        assert_eq!(
            serde_json::to_string(parsed).unwrap(),
            serde_json::to_string(&FitArgs::default()).unwrap()
        );

        let m = Cli::command().get_matches_from(["catelab", "predict"]);
        let cli = Cli::from_arg_matches(&m).unwrap();
        let Cmd::Predict(parsed) = &cli.cmd else { panic!() };
        assert_eq!(
            serde_json::to_string(parsed).unwrap(),
            serde_json::to_string(&PredictArgs::default()).unwrap()
        );

        let m = Cli::command().get_matches_from(["catelab", "bootstrap"]);
        let cli = Cli::from_arg_matches(&m).unwrap();
        let Cmd::Bootstrap(parsed) = &cli.cmd else { panic!() };
        assert_eq!(
            serde_json::to_string(parsed).unwrap(),
            serde_json::to_string(&BootstrapArgs::default()).unwrap()
        );

        let m = Cli::command().get_matches_from(["catelab", "replicate"]);
        let cli = Cli::from_arg_matches(&m).unwrap();
        let Cmd::Replicate(parsed) = &cli.cmd else { panic!() };
        assert_eq!(
            serde_json::to_string(parsed).unwrap(),
            serde_json::to_string(&ReplicateArgs::default()).unwrap()
        );
    }

    #[test]
    fn explicit_flags_override_config_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        let mut base = SimulateArgs::default();
        base.n = 300;
        base.seed = 99;
        std::fs::write(&path, serde_json::to_string(&base).unwrap()).unwrap();

        let m = Cli::command().get_matches_from([
            "catelab",
            "simulate",
            "--config",
            path.to_str().unwrap(),
            "--seed",
            "123",
        ]);
        let cli = Cli::from_arg_matches(&m).unwrap();
        let Cmd::Simulate(parsed) = &cli.cmd else { panic!() };
        let resolved = resolve_simulate(parsed, sub_matches(&m)).unwrap();
        assert_eq!(resolved.n, 300);
        assert_eq!(resolved.seed, 123);
    }

    #[test]
    fn partial_configs_fall_back_to_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"n": 42}"#).unwrap();
        let m = Cli::command().get_matches_from([
            "catelab",
            "simulate",
            "--config",
            path.to_str().unwrap(),
        ]);
        let cli = Cli::from_arg_matches(&m).unwrap();
        let Cmd::Simulate(parsed) = &cli.cmd else { panic!() };
        let resolved = resolve_simulate(parsed, sub_matches(&m)).unwrap();
        assert_eq!(resolved.n, 42);
        assert_eq!(resolved.setting, "s1");
    }

    #[test]
    fn method_lists_parse_both_separators() {
        let specs = parse_methods(&["l1:rl".into(), "l2-ql".into()]).unwrap();
        assert_eq!(specs.len(), 2);
        assert_eq!(specs[0].method, Method::Rl);
        assert_eq!(specs[0].loss, Loss::L1);
        assert_eq!(specs[1].method, Method::Ql);
        assert_eq!(specs[1].loss, Loss::L2);
        assert_eq!(parse_methods(&[]).unwrap().len(), 8);
        assert!(parse_methods(&["rl".into()]).is_err());
        assert!(parse_methods(&["l1:nope".into()]).is_err());
    }

    #[test]
    fn nis_and_gram_flags_validate() {
        let mut opts = FitOpts::default();
        opts.nis = "auto".into();
        assert!(matches!(
            opts.to_fit_config("spline").unwrap().nis,
            NisMode::Auto
        ));
        opts.nis = "25".into();
        assert!(matches!(
            opts.to_fit_config("spline").unwrap().nis,
            NisMode::Keep(25)
        ));
        opts.nis = "zero".into();
        assert!(opts.to_fit_config("spline").is_err());
        opts.nis = "off".into();
        opts.gram = "integral".into();
        assert!(matches!(
            opts.to_fit_config("spline").unwrap().gram,
            GramKind::Integral
        ));
        assert!(opts.to_fit_config("curvy").is_err());
    }

    #[test]
    fn setting_names_map_to_families() {
        assert_eq!(build_setting("s1", 100, 5, 0.1).unwrap().label(), "s1");
        assert_eq!(build_setting("s5", 100, 9, 0.9).unwrap().p, 1);
        assert_eq!(build_setting("s6", 100, 5, 0.1).unwrap().label(), "s6");
        assert!(build_setting("s7", 100, 5, 0.1).is_err());
        assert!(build_setting("s1", 100, 5, 1.5).is_err());
    }
}
