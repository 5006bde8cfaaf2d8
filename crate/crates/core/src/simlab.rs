//! Synthetic-data laboratory: generators for the benchmark settings, the
//! validation metrics, and the Monte-Carlo value function. The replication
//! runner at the bottom drives the full generate/fit/evaluate loop and
//! writes one CSV row per method.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ColKind, Dataset, DatasetError};
use crate::learners::{Learner, NuisanceValues};
use crate::nuisance::{fit_mean, fit_propensity, BoostLoss, NuisanceError};
use crate::pipeline::{
    decision_rule, fit_cate_with_nuisance, fit_qlearner, linear_mean, CateModel, Direction,
    FitConfig, PipelineError, QlBaseline,
};
use crate::Loss;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid simulation setting: {0}")]
    BadSetting(String),
    #[error("invalid replication scenario: {0}")]
    BadScenario(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Nuisance(#[from] NuisanceError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

/// Which data-generating family a setting uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SettingFamily {
    /// Correlated Gaussian covariates, linear baseline, smooth sparse
    /// effect; outliers from a Laplace contamination of the noise.
    Standard,
    /// One uniform covariate, sinusoidal effect, heavy right-skewed
    /// contamination.
    Univariate,
    /// Like [`SettingFamily::Standard`] but with a quadratic term in the
    /// baseline, so a linear baseline model is mis-specified.
    Misspecified,
}

/// A fully specified data-generating configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimSetting {
    pub family: SettingFamily,
    pub n: usize,
    pub p: usize,
    /// Contamination proportion of the noise mixture.
    pub xi: f64,
}

/// Validation rows with the true effect attached.
#[derive(Debug, Clone)]
pub struct ValidationSet {
    pub data: Dataset,
    pub tau: Vec<f64>,
}

impl SimSetting {
    pub fn standard(n: usize, p: usize, xi: f64) -> Result<Self, SimError> {
        if p < 3 {
            return Err(SimError::BadSetting(format!(
                "the multivariate families need p >= 3, got {p}"
            )));
        }
        if !(0.0..=1.0).contains(&xi) {
            return Err(SimError::BadSetting(format!("xi = {xi}")));
        }
        if n < 10 {
            return Err(SimError::BadSetting(format!("n = {n}")));
        }
        Ok(SimSetting {
            family: SettingFamily::Standard,
            n,
            p,
            xi,
        })
    }

    pub fn univariate(n: usize) -> Result<Self, SimError> {
        if n < 10 {
            return Err(SimError::BadSetting(format!("n = {n}")));
        }
        Ok(SimSetting {
            family: SettingFamily::Univariate,
            n,
            p: 1,
            xi: 0.1,
        })
    }

    pub fn misspecified(n: usize, p: usize, xi: f64) -> Result<Self, SimError> {
        let mut s = SimSetting::standard(n, p, xi)?;
        s.family = SettingFamily::Misspecified;
        Ok(s)
    }

    /// Short name used in output tables.
    pub fn label(&self) -> &'static str {
        match self.family {
            SettingFamily::Standard => "s1",
            SettingFamily::Univariate => "s5",
            SettingFamily::Misspecified => "s6",
        }
    }

    /// True propensity from raw covariates.
    pub fn propensity(&self, row: &[f64]) -> f64 {
        let logit = match self.family {
            SettingFamily::Univariate => row[0],
            _ => row[0] - row[1],
        };
        1.0 / (1.0 + (-logit).exp())
    }

    /// True baseline outcome from raw covariates.
    pub fn baseline(&self, row: &[f64]) -> f64 {
        match self.family {
            SettingFamily::Standard => 0.5 + 4.0 * row[0] + row[1] - 3.0 * row[2],
            SettingFamily::Univariate => 1.0,
            SettingFamily::Misspecified => 0.5 + row[0] + row[1] * row[1] - 6.0 * row[2],
        }
    }

    /// True treatment effect from raw covariates.
    pub fn effect(&self, row: &[f64]) -> f64 {
        match self.family {
            SettingFamily::Univariate => 3.0 * (9.0 * (row[0] - 0.5)).sin(),
            _ => {
                2.0 * (2.0 * row[0]).sin() - row[1] + 3.0 * (0.5 * row[2]).tanh()
            }
        }
    }

    /// Indices of covariates the true effect depends on, when selection
    /// metrics make sense for this family.
    pub fn truth_support(&self) -> Option<Vec<usize>> {
        match self.family {
            SettingFamily::Univariate => None,
            _ => Some(vec![0, 1, 2]),
        }
    }

    fn draw_covariates(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self.family {
            SettingFamily::Univariate => vec![rng.gen_range(0.0..1.0)],
            _ => {
                // AR(1) recursion gives Corr(X_j, X_k) = 0.5^{|j-k|} with
                // unit marginal variance
                let mut row = Vec::with_capacity(self.p);
                let mut prev: f64 = StandardNormal.sample(rng);
                row.push(prev);
                for _ in 1..self.p {
                    let z: f64 = StandardNormal.sample(rng);
                    prev = 0.5 * prev + 0.75f64.sqrt() * z;
                    row.push(prev);
                }
                row
            }
        }
    }

    fn draw_error(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self.family {
            SettingFamily::Univariate => {
                if rng.gen_bool(0.1) {
                    let z: f64 = StandardNormal.sample(rng);
                    (4.0 * z).exp()
                } else {
                    StandardNormal.sample(rng)
                }
            }
            _ => {
                if self.xi > 0.0 && rng.gen_bool(self.xi) {
                    // Laplace(0, scale 10) by inverse transform
                    let u: f64 = rng.gen_range(-0.5..0.5);
                    -10.0 * u.signum() * (1.0 - 2.0 * u.abs()).ln()
                } else {
                    StandardNormal.sample(rng)
                }
            }
        }
    }

    fn draw_rows(
        &self,
        count: usize,
        rng: &mut ChaCha8Rng,
    ) -> (Vec<f64>, Vec<i8>, Array2<f64>, Vec<f64>) {
        let mut x = Array2::zeros((count, self.p));
        let mut y = Vec::with_capacity(count);
        let mut t = Vec::with_capacity(count);
        let mut tau = Vec::with_capacity(count);
        for i in 0..count {
            let row = self.draw_covariates(rng);
            for (j, v) in row.iter().enumerate() {
                x[(i, j)] = *v;
            }
            let p = self.propensity(&row);
            let ti: i8 = if rng.gen_bool(p) { 1 } else { -1 };
            let eff = self.effect(&row);
            let eps = self.draw_error(rng);
            y.push(self.baseline(&row) + f64::from(ti) / 2.0 * eff + eps);
            t.push(ti);
            tau.push(eff);
        }
        (y, t, x, tau)
    }
}

/// Number of validation rows attached to every generated dataset.
pub const VALIDATION_SIZE: usize = 200;

/// Draws a training set and an independent validation set with the true
/// effect attached. Pure function of `(setting, seed)`.
pub fn generate(setting: &SimSetting, seed: u64) -> Result<(Dataset, ValidationSet), SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = (1..=setting.p).map(|j| format!("x{j}")).collect();
    let kinds = vec![ColKind::Continuous; setting.p];

    let (y, t, x, _) = setting.draw_rows(setting.n, &mut rng);
    let train = Dataset::new(y, t, x, kinds.clone(), names.clone())?;

    let (vy, vt, vx, vtau) = setting.draw_rows(VALIDATION_SIZE, &mut rng);
    let vdata = Dataset::new(vy, vt, vx, kinds, names)?;
    Ok((
        train,
        ValidationSet {
            data: vdata,
            tau: vtau,
        },
    ))
}

/// Draws a stand-alone validation set. The replication runner uses one of
/// these, held fixed while the training draws vary.
pub fn generate_validation(setting: &SimSetting, seed: u64) -> Result<ValidationSet, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = (1..=setting.p).map(|j| format!("x{j}")).collect();
    let kinds = vec![ColKind::Continuous; setting.p];
    let (vy, vt, vx, vtau) = setting.draw_rows(VALIDATION_SIZE, &mut rng);
    Ok(ValidationSet {
        data: Dataset::new(vy, vt, vx, kinds, names)?,
        tau: vtau,
    })
}

/// Pointwise-then-averaged accuracy of an ensemble of effect estimates on a
/// fixed validation set.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EnsembleMetrics {
    pub bias_sq: f64,
    pub var: f64,
    pub mse: f64,
    pub mae: f64,
}

/// Aggregates replicated predictions `preds[r][v]` against the truth.
///
/// At every validation point the squared error decomposes exactly:
/// `mse_v = bias_v^2 + var_v` with the population variance convention.
pub fn ensemble_metrics(tau: &[f64], preds: &[Vec<f64>]) -> EnsembleMetrics {
    let r = preds.len();
    let nv = tau.len();
    assert!(r > 0, "no replications");
    assert!(preds.iter().all(|p| p.len() == nv), "ragged predictions");
    let rf = r as f64;
    let mut bias_sq = 0.0;
    let mut var = 0.0;
    let mut mse = 0.0;
    let mut mae = 0.0;
    for v in 0..nv {
        let mean: f64 = preds.iter().map(|p| p[v]).sum::<f64>() / rf;
        let mse_v: f64 = preds.iter().map(|p| (p[v] - tau[v]).powi(2)).sum::<f64>() / rf;
        let mae_v: f64 = preds.iter().map(|p| (p[v] - tau[v]).abs()).sum::<f64>() / rf;
        let var_v: f64 = preds.iter().map(|p| (p[v] - mean).powi(2)).sum::<f64>() / rf;
        bias_sq += (mean - tau[v]).powi(2);
        var += var_v;
        mse += mse_v;
        mae += mae_v;
    }
    let nvf = nv as f64;
    EnsembleMetrics {
        bias_sq: bias_sq / nvf,
        var: var / nvf,
        mse: mse / nvf,
        mae: mae / nvf,
    }
}

/// Per-run covariate selection quality against a known support.
/// Empty denominators count as perfect.
pub fn selection_rates(active: &[bool], support: &[usize]) -> (f64, f64) {
    let in_support = |j: usize| support.contains(&j);
    let mut tp = 0usize;
    let mut fn_ = 0usize;
    let mut tn = 0usize;
    let mut fp = 0usize;
    for (j, &a) in active.iter().enumerate() {
        match (in_support(j), a) {
            (true, true) => tp += 1,
            (true, false) => fn_ += 1,
            (false, true) => fp += 1,
            (false, false) => tn += 1,
        }
    }
    let sens = if tp + fn_ == 0 {
        1.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    let spec = if tn + fp == 0 {
        1.0
    } else {
        tn as f64 / (tn + fp) as f64
    };
    (sens, spec)
}

/// Monte-Carlo estimate of the mean outcome under a treatment rule.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ValueEstimate {
    pub q: f64,
    pub se: f64,
}

/// Simulates fresh rows and averages the outcome the rule would produce.
/// The rule sees raw covariates and returns a treatment in {-1, +1}.
pub fn value_function(
    policy: &dyn Fn(&[f64]) -> i8,
    setting: &SimSetting,
    n_mc: usize,
    seed: u64,
) -> ValueEstimate {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..n_mc {
        let row = setting.draw_covariates(&mut rng);
        let eta = f64::from(policy(&row).signum());
        let y = setting.baseline(&row) + eta / 2.0 * setting.effect(&row)
            + setting.draw_error(&mut rng);
        sum += y;
        sum_sq += y * y;
    }
    let nf = n_mc as f64;
    let mean = sum / nf;
    let var = (sum_sq / nf - mean * mean).max(0.0);
    ValueEstimate {
        q: mean,
        se: (var / nf).sqrt(),
    }
}

/// The oracle rule: treat when the true effect is positive.
pub fn optimal_value(setting: &SimSetting, n_mc: usize, seed: u64) -> ValueEstimate {
    let s = setting.clone();
    value_function(
        &move |row: &[f64]| if s.effect(row) > 0.0 { 1 } else { -1 },
        setting,
        n_mc,
        seed,
    )
}

/// Monte-Carlo value of the rule "treat when the fitted effect is positive",
/// drawing fresh rows from the setting. Batched so prediction is amortized.
pub fn policy_value(
    m: &CateModel,
    setting: &SimSetting,
    n_mc: usize,
    seed: u64,
) -> Result<ValueEstimate, SimError> {
    const BATCH: usize = 4096;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut left = n_mc;
    while left > 0 {
        let b = left.min(BATCH);
        let mut x = Array2::zeros((b, setting.p));
        let mut rows = Vec::with_capacity(b);
        for i in 0..b {
            let row = setting.draw_covariates(&mut rng);
            for (j, v) in row.iter().enumerate() {
                x[(i, j)] = *v;
            }
            rows.push(row);
        }
        let pred = m.predict(&x)?;
        for (i, row) in rows.iter().enumerate() {
            let eta = f64::from(decision_rule(pred.tau[i], Direction::Maximize));
            let y = setting.baseline(row)
                + eta / 2.0 * setting.effect(row)
                + setting.draw_error(&mut rng);
            sum += y;
            sum_sq += y * y;
        }
        left -= b;
    }
    let nf = n_mc as f64;
    let mean = sum / nf;
    let var = (sum_sq / nf - mean * mean).max(0.0);
    Ok(ValueEstimate {
        q: mean,
        se: (var / nf).sqrt(),
    })
}

/// One estimator in the benchmark grid: a score route, or the joint
/// outcome-regression baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    McmEa,
    Rl,
    Al,
    Ql,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::McmEa => "mcm_ea",
            Method::Rl => "rl",
            Method::Al => "al",
            Method::Ql => "ql",
        }
    }

    /// The score route behind this method; `None` for the joint baseline.
    fn learner(self) -> Option<Learner> {
        match self {
            Method::McmEa => Some(Learner::McmEa),
            Method::Rl => Some(Learner::Rl),
            Method::Al => Some(Learner::Al),
            Method::Ql => None,
        }
    }
}

impl std::str::FromStr for Method {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "mcm_ea" | "mcmea" => Ok(Method::McmEa),
            "rl" => Ok(Method::Rl),
            "al" => Ok(Method::Al),
            "ql" => Ok(Method::Ql),
            other => Err(SimError::BadScenario(format!("unknown method '{other}'"))),
        }
    }
}

/// A method paired with the loss driving both its fit and its selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub method: Method,
    pub loss: Loss,
}

impl MethodSpec {
    /// The eight benchmark combinations, robust loss first.
    pub fn benchmark_grid() -> Vec<MethodSpec> {
        let mut out = Vec::new();
        for &loss in &[Loss::L1, Loss::L2] {
            for &method in &[Method::McmEa, Method::Rl, Method::Al, Method::Ql] {
                out.push(MethodSpec { method, loss });
            }
        }
        out
    }
}

/// Scenario description for [`replicate`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicateConfig {
    pub setting: SimSetting,
    pub methods: Vec<MethodSpec>,
    pub replications: usize,
    pub seed: u64,
    /// Monte-Carlo draws behind each fitted rule's value estimate.
    pub n_mc_value: usize,
    pub fit: FitConfig,
}

impl ReplicateConfig {
    pub fn new(setting: SimSetting, replications: usize, seed: u64) -> Self {
        ReplicateConfig {
            setting,
            methods: MethodSpec::benchmark_grid(),
            replications,
            seed,
            n_mc_value: 100_000,
            fit: FitConfig::default(),
        }
    }
}

/// Cross-replication summary for one method.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodSummary {
    pub spec: MethodSpec,
    pub metrics: EnsembleMetrics,
    /// Mean per-run selection rates; absent when the setting has no known
    /// sparse support to score against.
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    /// Mean fitted-rule value across replications, and its spread-based
    /// standard error.
    pub q_hat: f64,
    pub q_se: f64,
    pub r_used: usize,
}

/// Everything [`replicate`] produces for one scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub setting: SimSetting,
    pub replications: usize,
    pub summaries: Vec<MethodSummary>,
    /// Set when any method lost more than a fifth of its replications.
    pub failed: bool,
}

/// Per-replication record for one method.
#[derive(Clone)]
struct RepRecord {
    tau_hat: Vec<f64>,
    active: Vec<bool>,
    q: f64,
}

fn stream_seed(seed: u64, k: u64) -> u64 {
    (seed ^ k.wrapping_mul(0x9e37_79b9_7f4a_7c15)).wrapping_add(k)
}

/// Fits every requested method on one fresh training draw. Nuisance fits
/// are shared across the routes that need the same ones. A `None` entry
/// means that method failed on this draw.
fn run_replication(
    cfg: &ReplicateConfig,
    val: &ValidationSet,
    rep: usize,
) -> Vec<Option<RepRecord>> {
    let fail_all = || vec![None; cfg.methods.len()];
    let seed_r = stream_seed(cfg.seed, rep as u64 + 1);
    let train = match generate(&cfg.setting, seed_r) {
        Ok((train, _)) => train,
        Err(_) => return fail_all(),
    };

    let mut fit_cfg = cfg.fit.clone();
    fit_cfg.seed = seed_r;
    fit_cfg.nuisance.seed = seed_r ^ 0xb005;
    fit_cfg.ql_baseline = match cfg.setting.family {
        SettingFamily::Misspecified => QlBaseline::Linear,
        _ => QlBaseline::Spline,
    };

    let p_hat = if cfg.methods.iter().any(|s| s.method != Method::Ql) {
        match fit_propensity(&train, &fit_cfg.nuisance) {
            Ok(f) => Some(f.p_hat),
            Err(_) => None,
        }
    } else {
        None
    };
    let mut mean_cache: [Option<Option<Vec<f64>>>; 2] = [None, None];
    let mut linear_cache: Option<Vec<f64>> = None;
    let q_seed = seed_r ^ 0x5eed_c0de;

    let mut out = Vec::with_capacity(cfg.methods.len());
    for spec in &cfg.methods {
        let model = match spec.method.learner() {
            None => fit_qlearner(&train, spec.loss, &fit_cfg).ok(),
            Some(learner) => {
                let mu = match spec.method {
                    Method::Al => Some(
                        linear_cache
                            .get_or_insert_with(|| linear_mean(&train).0)
                            .clone(),
                    ),
                    _ => {
                        let slot = match spec.loss {
                            Loss::L1 => &mut mean_cache[0],
                            Loss::L2 => &mut mean_cache[1],
                        };
                        let boost = match spec.loss {
                            Loss::L1 => BoostLoss::Absolute,
                            Loss::L2 => BoostLoss::Squared,
                        };
                        slot.get_or_insert_with(|| {
                            fit_mean(&train, boost, &fit_cfg.nuisance)
                                .ok()
                                .map(|f| f.mu)
                        })
                        .clone()
                    }
                };
                match (&p_hat, mu) {
                    (Some(p), Some(mu)) => {
                        let mut nv = NuisanceValues::new(p.clone()).with_mean(mu);
                        nv.clip = fit_cfg.nuisance.clip;
                        fit_cate_with_nuisance(&train, learner, spec.loss, &fit_cfg, Some(&nv))
                            .ok()
                    }
                    _ => None,
                }
            }
        };
        let rec = model.and_then(|m| {
            let pred = m.predict(val.data.x()).ok()?;
            let q = policy_value(&m, &cfg.setting, cfg.n_mc_value, q_seed).ok()?;
            Some(RepRecord {
                tau_hat: pred.tau,
                active: m.selected_mask(),
                q: q.q,
            })
        });
        out.push(rec);
    }
    out
}

/// Runs the full generate/fit/evaluate loop: `replications` independent
/// training draws against one fixed validation set, each fitted with every
/// requested method. Replications run in parallel on counter-derived seeds,
/// so results are a pure function of the config. A failed fit is skipped
/// and recorded; the scenario is marked failed when any method loses more
/// than a fifth of its replications.
pub fn replicate(cfg: &ReplicateConfig) -> Result<ScenarioResult, SimError> {
    if cfg.replications < 2 {
        return Err(SimError::BadScenario(format!(
            "need at least 2 replications, got {}",
            cfg.replications
        )));
    }
    if cfg.methods.is_empty() {
        return Err(SimError::BadScenario("no methods requested".into()));
    }
    let val = generate_validation(&cfg.setting, stream_seed(cfg.seed, 0))?;
    let records: Vec<Vec<Option<RepRecord>>> = (0..cfg.replications)
        .into_par_iter()
        .map(|rep| run_replication(cfg, &val, rep))
        .collect();
    Ok(summarize(cfg, &val, records))
}

fn summarize(
    cfg: &ReplicateConfig,
    val: &ValidationSet,
    records: Vec<Vec<Option<RepRecord>>>,
) -> ScenarioResult {
    let support = cfg.setting.truth_support();
    let mut summaries = Vec::with_capacity(cfg.methods.len());
    let mut failed = false;
    for (mi, spec) in cfg.methods.iter().enumerate() {
        let used: Vec<&RepRecord> = records.iter().filter_map(|r| r[mi].as_ref()).collect();
        let r_used = used.len();
        if (cfg.replications - r_used) * 5 > cfg.replications {
            failed = true;
        }
        let summary = if used.is_empty() {
            MethodSummary {
                spec: *spec,
                metrics: EnsembleMetrics {
                    bias_sq: f64::NAN,
                    var: f64::NAN,
                    mse: f64::NAN,
                    mae: f64::NAN,
                },
                sensitivity: None,
                specificity: None,
                q_hat: f64::NAN,
                q_se: f64::NAN,
                r_used,
            }
        } else {
            let preds: Vec<Vec<f64>> = used.iter().map(|r| r.tau_hat.clone()).collect();
            let metrics = ensemble_metrics(&val.tau, &preds);
            let (sensitivity, specificity) = match &support {
                Some(support) => {
                    let mut sens = 0.0;
                    let mut spec_ = 0.0;
                    for r in &used {
                        let (s, p) = selection_rates(&r.active, support);
                        sens += s;
                        spec_ += p;
                    }
                    let rf = r_used as f64;
                    (Some(sens / rf), Some(spec_ / rf))
                }
                None => (None, None),
            };
            let rf = r_used as f64;
            let q_hat = used.iter().map(|r| r.q).sum::<f64>() / rf;
            let q_se = if r_used > 1 {
                let ss = used.iter().map(|r| (r.q - q_hat).powi(2)).sum::<f64>();
                (ss / (rf - 1.0) / rf).sqrt()
            } else {
                0.0
            };
            MethodSummary {
                spec: *spec,
                metrics,
                sensitivity,
                specificity,
                q_hat,
                q_se,
                r_used,
            }
        };
        summaries.push(summary);
    }
    ScenarioResult {
        setting: cfg.setting.clone(),
        replications: cfg.replications,
        summaries,
        failed,
    }
}

fn csv_num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

/// Renders scenario results as CSV: optional leading `#` comment lines,
/// a fixed header, then one row per method per scenario. Uses the shortest
/// round-trip float formatting, so equal results render identically.
pub fn render_results_csv(results: &[ScenarioResult], comments: &[String]) -> String {
    let mut out = String::new();
    for c in comments {
        out.push_str("# ");
        out.push_str(c);
        out.push('\n');
    }
    out.push_str(
        "setting,xi_o,n,p,method,loss,bias_sq,var,mse,mae,sensitivity,specificity,q_hat,r_used\n",
    );
    for res in results {
        let s = &res.setting;
        for m in &res.summaries {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                s.label(),
                s.xi,
                s.n,
                s.p,
                m.spec.method.label(),
                m.spec.loss,
                csv_num(m.metrics.bias_sq),
                csv_num(m.metrics.var),
                csv_num(m.metrics.mse),
                csv_num(m.metrics.mae),
                m.sensitivity.map(csv_num).unwrap_or_default(),
                m.specificity.map(csv_num).unwrap_or_default(),
                csv_num(m.q_hat),
                m.r_used,
            ));
        }
    }
    out
}
