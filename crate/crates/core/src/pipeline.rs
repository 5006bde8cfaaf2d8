//! End-to-end effect estimation: optional marginal screening, nuisance
//! fits, the score transformation, penalized spline solve with
//! cross-validated regularization, prediction and treatment
//! recommendation, bootstrap bands, and a Q-learning baseline.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{standardize, Dataset, DatasetError, Standardizer};
use crate::learners::{
    transform_samples, Learner, LearnerError, NuisanceValues, Requirement, ScoreFns,
};
use crate::nuisance::{
    fit_arm_means, fit_mean, fit_propensity, BoostLoss, BoostModel, NuisanceConfig, NuisanceError,
    PropensityModel,
};
use crate::solver::{
    cross_validate, default_lambda1_grid, lambda_max, solve_l1, solve_l2, Coefs, CvCell, CvConfig,
    PenalizedFit, PenalizedProblem, SolverConfig, SolverError,
};
use crate::splines::{GramKind, SplineError, SplineSystem};
use crate::Loss;

/// Model document version written into JSON artifacts.
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Data(#[from] DatasetError),
    #[error(transparent)]
    Spline(#[from] SplineError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Nuisance(#[from] NuisanceError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("invalid fit configuration: {0}")]
    BadConfig(String),
    #[error("prediction input has {got} columns, model expects {expected}")]
    SchemaMismatch { expected: usize, got: usize },
    #[error("{skipped} of {requested} bootstrap replicates failed; data too degenerate to resample")]
    TooManySkips { skipped: usize, requested: usize },
    #[error("model JSON malformed: {0}")]
    BadModel(String),
    #[error("model format version {got} is newer than supported version {current}")]
    BadVersion { got: u32, current: u32 },
}

/// Marginal screening policy applied before fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NisMode {
    Off,
    /// Keep `floor(n / ln n)` covariates, capped at `n - 1`.
    Auto,
    Keep(usize),
}

impl NisMode {
    /// Target size of the kept set, or `None` when screening is off or
    /// cannot drop anything.
    pub fn resolve(&self, n: usize, p: usize) -> Option<usize> {
        let d = match self {
            NisMode::Off => return None,
            NisMode::Keep(k) => *k,
            NisMode::Auto => ((n as f64) / (n as f64).ln()).floor() as usize,
        };
        let d = d.clamp(1, n.saturating_sub(1).max(1));
        if d >= p {
            None
        } else {
            Some(d)
        }
    }
}

/// Baseline block used by the Q-learning fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QlBaseline {
    /// Penalized additive splines for the baseline, like the effect block.
    Spline,
    /// Unpenalized linear baseline; deliberately rigid, used to study
    /// baseline mis-specification.
    Linear,
}

/// Everything `fit_cate` and `fit_qlearner` need besides the data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitConfig {
    pub degree: usize,
    /// Spline intervals per covariate; `None` applies the sample-size rule.
    pub n_intervals: Option<usize>,
    pub lambda2_grid: Vec<f64>,
    pub n_lambda1: usize,
    pub lambda1_min_ratio: f64,
    pub n_folds: usize,
    pub one_se: bool,
    pub gram: GramKind,
    pub nis: NisMode,
    pub seed: u64,
    pub ql_baseline: QlBaseline,
    pub nuisance: NuisanceConfig,
    /// Tight settings for the final cold solve.
    pub solver: SolverConfig,
    /// Looser settings used inside cross-validation paths.
    pub cv_solver: SolverConfig,
    /// Skip selection and solve at exactly these `(lambda1, lambda2)`.
    pub fixed_lambda: Option<(f64, f64)>,
}

impl Default for FitConfig {
    fn default() -> Self {
        let solver = SolverConfig::default();
        let cv_solver = SolverConfig {
            tol: 1e-5,
            max_outer: 40,
            max_inner: 80,
            eta_min: 1e-5,
            ..solver.clone()
        };
        FitConfig {
            degree: 3,
            n_intervals: None,
            lambda2_grid: vec![0.0, 1e-4, 1e-3, 1e-2],
            n_lambda1: 20,
            lambda1_min_ratio: 1e-3,
            n_folds: 5,
            one_se: true,
            gram: GramKind::Empirical,
            nis: NisMode::Off,
            seed: 0xca7e,
            ql_baseline: QlBaseline::Spline,
            nuisance: NuisanceConfig::default(),
            solver,
            cv_solver,
            fixed_lambda: None,
        }
    }
}

impl FitConfig {
    fn validate(&self) -> Result<(), PipelineError> {
        if self.lambda2_grid.is_empty() && self.fixed_lambda.is_none() {
            return Err(PipelineError::BadConfig("empty lambda2 grid".into()));
        }
        if self.lambda2_grid.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(PipelineError::BadConfig("lambda2 must be >= 0".into()));
        }
        if self.n_lambda1 == 0 {
            return Err(PipelineError::BadConfig("need at least one lambda1".into()));
        }
        if self.n_folds < 2 {
            return Err(PipelineError::BadConfig("need at least two folds".into()));
        }
        if let Some((l1, l2)) = self.fixed_lambda {
            if !(l1.is_finite() && l2.is_finite()) || l1 < 0.0 || l2 < 0.0 {
                return Err(PipelineError::BadConfig(format!(
                    "fixed lambdas ({l1}, {l2}) out of range"
                )));
            }
        }
        self.solver.validate()?;
        self.cv_solver.validate()?;
        Ok(())
    }
}

/// Fitted nuisance components kept with the model for inspection.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct NuisanceModels {
    pub propensity: Option<PropensityModel>,
    pub mean: Option<BoostModel>,
    /// Intercept-first least-squares coefficients when the mean is linear.
    pub mean_linear: Option<Vec<f64>>,
    pub arm_treated: Option<BoostModel>,
    pub arm_control: Option<BoostModel>,
}

/// Summary of one fitting run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub n: usize,
    pub kept_names: Vec<String>,
    pub selected: Vec<String>,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda_max: f64,
    pub cv_table: Vec<CvCell>,
    pub converged: bool,
    pub iterations: usize,
    pub objective: f64,
}

/// A fitted effect model, serializable to JSON and sufficient to predict.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CateModel {
    pub version: u32,
    pub learner: String,
    pub loss: Loss,
    /// Number of covariate columns the model expects as input.
    pub p_input: usize,
    /// Input columns kept after screening, ascending.
    pub kept: Vec<usize>,
    pub col_names: Vec<String>,
    pub standardizer: Standardizer,
    pub splines: SplineSystem,
    pub coefs: Coefs,
    pub active: Vec<bool>,
    /// Index into `coefs.alpha` holding the effect intercept.
    pub effect_intercept: usize,
    /// `(coefficient group, kept covariate)` pairs making up the effect.
    pub effect_groups: Vec<(usize, usize)>,
    pub lambda1: f64,
    pub lambda2: f64,
    pub nuisance: NuisanceModels,
    pub report: FitReport,
}

/// Predictions plus how many input values fell outside the training range.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub tau: Vec<f64>,
    pub clamped: usize,
}

impl CateModel {
    /// Effect estimates for new covariate rows (original column layout).
    pub fn predict(&self, x: &Array2<f64>) -> Result<Prediction, PipelineError> {
        if x.ncols() != self.p_input {
            return Err(PipelineError::SchemaMismatch {
                expected: self.p_input,
                got: x.ncols(),
            });
        }
        let sub = gather_columns(x, &self.kept);
        let (std, clamped) = self.standardizer.transform(&sub);
        let mut tau = Vec::with_capacity(std.nrows());
        for i in 0..std.nrows() {
            let mut v = self.coefs.alpha[self.effect_intercept];
            for &(g, c) in &self.effect_groups {
                v += self.splines.groups[c].component(std[(i, c)], &self.coefs.beta[g]);
            }
            tau.push(v);
        }
        Ok(Prediction { tau, clamped })
    }

    /// Which original input columns carry a nonzero effect component.
    pub fn selected_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.p_input];
        for &(g, c) in &self.effect_groups {
            if self.active[g] {
                mask[self.kept[c]] = true;
            }
        }
        mask
    }

    pub fn to_json(&self) -> Result<String, PipelineError> {
        serde_json::to_string(self).map_err(|e| PipelineError::BadModel(e.to_string()))
    }

    /// Parses a model document and rebuilds transient spline state.
    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let mut m: CateModel =
            serde_json::from_str(text).map_err(|e| PipelineError::BadModel(e.to_string()))?;
        if m.version > FORMAT_VERSION {
            return Err(PipelineError::BadVersion {
                got: m.version,
                current: FORMAT_VERSION,
            });
        }
        m.splines.restore();
        Ok(m)
    }
}

fn gather_columns(x: &Array2<f64>, keep: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((x.nrows(), keep.len()));
    for (jj, &j) in keep.iter().enumerate() {
        for i in 0..x.nrows() {
            out[(i, jj)] = x[(i, j)];
        }
    }
    out
}

/// Ranks covariates by how much a marginal spline regression of Y on each
/// single covariate reduces the training loss over an intercept-only fit,
/// then keeps the best `d_keep`. Returned indices are ascending.
pub fn nis_screen(d: &Dataset, d_keep: usize, loss: Loss) -> Result<Vec<usize>, PipelineError> {
    if d_keep == 0 {
        return Err(PipelineError::BadConfig("d_keep must be >= 1".into()));
    }
    if d.p() <= d_keep {
        return Ok((0..d.p()).collect());
    }
    let n = d.n();
    let y = d.y().to_vec();
    let base_loss = match loss {
        Loss::L1 => {
            let mut s = y.clone();
            s.sort_by(f64::total_cmp);
            let med = 0.5 * (s[(n - 1) / 2] + s[n / 2]);
            y.iter().map(|v| (v - med).abs()).sum::<f64>() / n as f64
        }
        Loss::L2 => {
            let mean = y.iter().sum::<f64>() / n as f64;
            y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64
        }
    };
    let cfg = SolverConfig {
        tol: 1e-4,
        max_outer: 25,
        max_inner: 60,
        eta_min: 1e-4,
        ..SolverConfig::default()
    };
    let basis = crate::splines::SplineBasis::new(3, 6)?;
    let reductions: Vec<(f64, usize)> = (0..d.p())
        .into_par_iter()
        .map(|j| {
            let col: Vec<f64> = d.x().column(j).to_vec();
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let range = hi - lo;
            if !(range > 0.0) {
                return (f64::NEG_INFINITY, j);
            }
            let m = basis.dim();
            let mut cols = vec![0.0; m * n];
            for i in 0..n {
                let z = ((col[i] - lo) / range).clamp(0.0, 1.0);
                let row = basis.eval(z);
                for (k, v) in row.iter().enumerate() {
                    cols[k * n + i] = *v;
                }
            }
            let prob = match PenalizedProblem::new(y.clone(), vec![vec![1.0; n]], vec![(m, cols)], 0.0)
            {
                Ok(p) => p,
                Err(_) => return (f64::NEG_INFINITY, j),
            };
            let fit = match loss {
                Loss::L1 => solve_l1(&prob, 0.0, &cfg, None),
                Loss::L2 => solve_l2(&prob, 0.0, &cfg, None),
            };
            match fit {
                Ok(f) => (base_loss - f.objective.loss_term, j),
                Err(_) => (f64::NEG_INFINITY, j),
            }
        })
        .collect();
    let mut ranked = reductions;
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut kept: Vec<usize> = ranked.iter().take(d_keep).map(|(_, j)| *j).collect();
    kept.sort_unstable();
    Ok(kept)
}

fn boost_loss_for(loss: Loss) -> BoostLoss {
    match loss {
        Loss::L1 => BoostLoss::Absolute,
        Loss::L2 => BoostLoss::Squared,
    }
}

/// Least-squares fit of y on an intercept plus all covariates.
/// Returns fitted values and intercept-first coefficients.
pub fn linear_mean(d: &Dataset) -> (Vec<f64>, Vec<f64>) {
    let n = d.n();
    let k = d.p() + 1;
    let mut xtx = nalgebra::DMatrix::<f64>::zeros(k, k);
    let mut xty = nalgebra::DVector::<f64>::zeros(k);
    let row_of = |i: usize| {
        let mut r = Vec::with_capacity(k);
        r.push(1.0);
        for j in 0..d.p() {
            r.push(d.x()[(i, j)]);
        }
        r
    };
    for i in 0..n {
        let r = row_of(i);
        for a in 0..k {
            xty[a] += r[a] * d.y()[i];
            for b in a..k {
                xtx[(a, b)] += r[a] * r[b];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            xtx[(a, b)] = xtx[(b, a)];
        }
    }
    let ridge = 1e-10 * (1.0 + xtx.diagonal().max());
    for a in 0..k {
        xtx[(a, a)] += ridge;
    }
    let coefs = xtx
        .cholesky()
        .map(|ch| ch.solve(&xty))
        .unwrap_or_else(|| nalgebra::DVector::zeros(k));
    let fitted = (0..n)
        .map(|i| {
            let r = row_of(i);
            r.iter().zip(coefs.iter()).map(|(a, b)| a * b).sum()
        })
        .collect();
    (fitted, coefs.iter().copied().collect())
}

fn fit_nuisance(
    d: &Dataset,
    learner: Learner,
    loss: Loss,
    cfg: &NuisanceConfig,
) -> Result<(NuisanceValues, NuisanceModels), PipelineError> {
    let prop = fit_propensity(d, cfg)?;
    let mut nv = NuisanceValues::new(prop.p_hat.clone());
    nv.clip = cfg.clip;
    let mut models = NuisanceModels {
        propensity: Some(prop.model),
        ..NuisanceModels::default()
    };
    for req in learner.requires() {
        match req {
            Requirement::Propensity => {}
            Requirement::Mean => {
                if learner == Learner::Al {
                    let (fitted, coefs) = linear_mean(d);
                    nv = nv.with_mean(fitted);
                    models.mean_linear = Some(coefs);
                } else {
                    let fit = fit_mean(d, boost_loss_for(loss), cfg)?;
                    nv = nv.with_mean(fit.mu);
                    models.mean = Some(fit.model);
                }
            }
            Requirement::ArmMeans => {
                let fit = fit_arm_means(d, boost_loss_for(loss), cfg)?;
                nv = nv.with_arm_means(fit.mu_treated, fit.mu_control);
                models.arm_treated = Some(fit.model_treated);
                models.arm_control = Some(fit.model_control);
            }
        }
    }
    Ok((nv, models))
}

/// Design for the transformed regression: response `y_star`, one
/// unpenalized intercept column equal to `w_star`, and per-covariate
/// rotated spline groups scaled row-wise by `w_star`.
fn weighted_problem(
    d: &Dataset,
    sys: &SplineSystem,
    y_star: &[f64],
    w_star: &[f64],
) -> Result<PenalizedProblem, SolverError> {
    let n = d.n();
    let mut groups = Vec::with_capacity(sys.groups.len());
    for (j, g) in sys.groups.iter().enumerate() {
        let m = g.dim();
        let mut cols = vec![0.0; m * n];
        for i in 0..n {
            let row = g.design_row(d.x()[(i, j)]);
            for (k, v) in row.iter().enumerate() {
                cols[k * n + i] = w_star[i] * v;
            }
        }
        groups.push((m, cols));
    }
    PenalizedProblem::new(y_star.to_vec(), vec![w_star.to_vec()], groups, sys.lambda2)
}

struct Chosen {
    fit: PenalizedFit,
    sys_index: usize,
    lambda1: f64,
    lambda2: f64,
    lambda_max: f64,
    cv_table: Vec<CvCell>,
}

/// Runs CV over prebuilt problems (or honors a fixed choice), then solves
/// the winner cold with the tight solver settings.
fn choose_and_solve(
    problems: &[(f64, PenalizedProblem)],
    loss: Loss,
    cfg: &FitConfig,
) -> Result<Chosen, PipelineError> {
    let mut lmax = 0.0f64;
    for (_, p) in problems {
        lmax = lmax.max(lambda_max(p, loss, &cfg.solver)?);
    }
    let (l1, l2, table) = match cfg.fixed_lambda {
        Some((l1, l2)) => (l1, l2, Vec::new()),
        None => {
            let grid = default_lambda1_grid(lmax, cfg.n_lambda1, cfg.lambda1_min_ratio);
            let cv = cross_validate(
                problems,
                &grid,
                loss,
                &CvConfig {
                    n_folds: cfg.n_folds,
                    seed: cfg.seed,
                    one_se: cfg.one_se,
                    solver: cfg.cv_solver.clone(),
                },
            )?;
            (cv.lambda1, cv.lambda2, cv.table)
        }
    };
    let sys_index = problems
        .iter()
        .position(|(tag, _)| *tag == l2)
        .ok_or_else(|| PipelineError::BadConfig(format!("no design built for lambda2 = {l2}")))?;
    let problem = &problems[sys_index].1;
    let fit = match loss {
        Loss::L1 => solve_l1(problem, l1, &cfg.solver, None)?,
        Loss::L2 => solve_l2(problem, l1, &cfg.solver, None)?,
    };
    Ok(Chosen {
        fit,
        sys_index,
        lambda1: l1,
        lambda2: l2,
        lambda_max: lmax,
        cv_table: table,
    })
}

fn lambda2_values(cfg: &FitConfig) -> Vec<f64> {
    match cfg.fixed_lambda {
        Some((_, l2)) => vec![l2],
        None => cfg.lambda2_grid.clone(),
    }
}

/// Fits an effect model with internally estimated nuisance components.
pub fn fit_cate(
    d: &Dataset,
    learner: Learner,
    loss: Loss,
    cfg: &FitConfig,
) -> Result<CateModel, PipelineError> {
    fit_cate_with_nuisance(d, learner, loss, cfg, None)
}

/// Like [`fit_cate`] but accepts externally supplied per-row nuisance
/// values (for example exact ones in simulations); nuisance models are
/// then not stored.
pub fn fit_cate_with_nuisance(
    d: &Dataset,
    learner: Learner,
    loss: Loss,
    cfg: &FitConfig,
    oracle: Option<&NuisanceValues>,
) -> Result<CateModel, PipelineError> {
    cfg.validate()?;
    let kept = match cfg.nis.resolve(d.n(), d.p()) {
        Some(d_keep) => nis_screen(d, d_keep, loss)?,
        None => (0..d.p()).collect(),
    };
    let screened;
    let d_kept = if kept.len() < d.p() {
        screened = d.select_columns(&kept)?;
        &screened
    } else {
        d
    };
    let (d_std, standardizer) = standardize(d_kept)?;
    let (nv, models) = match oracle {
        Some(nv) => (nv.clone(), NuisanceModels::default()),
        None => fit_nuisance(&d_std, learner, loss, &cfg.nuisance)?,
    };
    let g = learner.augmentation(&nv, d_std.n())?;
    let ts = transform_samples(&d_std, &learner, &g, &nv, loss)?;

    let mut systems = Vec::new();
    let mut problems = Vec::new();
    for &l2 in &lambda2_values(cfg) {
        let sys = SplineSystem::build(&d_std, cfg.degree, cfg.n_intervals, l2, cfg.gram)?;
        let prob = weighted_problem(&d_std, &sys, &ts.y_star, &ts.w_star)?;
        systems.push(sys);
        problems.push((l2, prob));
    }
    let chosen = choose_and_solve(&problems, loss, cfg)?;
    let splines = systems.swap_remove(chosen.sys_index);
    let effect_groups: Vec<(usize, usize)> = (0..d_std.p()).map(|j| (j, j)).collect();
    let selected: Vec<String> = effect_groups
        .iter()
        .filter(|(g, _)| chosen.fit.active[*g])
        .map(|(_, c)| d_std.col_names()[*c].clone())
        .collect();
    Ok(CateModel {
        version: FORMAT_VERSION,
        learner: learner.label(),
        loss,
        p_input: d.p(),
        kept,
        col_names: d_std.col_names().to_vec(),
        standardizer,
        splines,
        coefs: chosen.fit.coefs.clone(),
        active: chosen.fit.active.clone(),
        effect_intercept: 0,
        effect_groups,
        lambda1: chosen.lambda1,
        lambda2: chosen.lambda2,
        nuisance: models,
        report: FitReport {
            n: d.n(),
            kept_names: d_std.col_names().to_vec(),
            selected,
            lambda1: chosen.lambda1,
            lambda2: chosen.lambda2,
            lambda_max: chosen.lambda_max,
            cv_table: chosen.cv_table,
            converged: chosen.fit.converged,
            iterations: chosen.fit.iterations,
            objective: chosen.fit.objective.total,
        },
    })
}

/// Joint outcome-regression baseline: models Y directly from a baseline
/// block plus a treatment-interaction spline block and reads the effect
/// off the interaction. No nuisance estimates are involved.
pub fn fit_qlearner(d: &Dataset, loss: Loss, cfg: &FitConfig) -> Result<CateModel, PipelineError> {
    cfg.validate()?;
    let kept = match cfg.nis.resolve(d.n(), d.p()) {
        Some(d_keep) => nis_screen(d, d_keep, loss)?,
        None => (0..d.p()).collect(),
    };
    let screened;
    let d_kept = if kept.len() < d.p() {
        screened = d.select_columns(&kept)?;
        &screened
    } else {
        d
    };
    let (d_std, standardizer) = standardize(d_kept)?;
    let n = d_std.n();
    let p = d_std.p();
    let t_half: Vec<f64> = d_std.t().iter().map(|&t| f64::from(t) / 2.0).collect();

    let mut systems = Vec::new();
    let mut problems = Vec::new();
    for &l2 in &lambda2_values(cfg) {
        let sys = SplineSystem::build(&d_std, cfg.degree, cfg.n_intervals, l2, cfg.gram)?;
        let mut unpen = vec![vec![1.0; n], t_half.clone()];
        let mut groups = Vec::new();
        match cfg.ql_baseline {
            QlBaseline::Spline => {
                for (j, g) in sys.groups.iter().enumerate() {
                    let m = g.dim();
                    let mut cols = vec![0.0; m * n];
                    for i in 0..n {
                        let row = g.design_row(d_std.x()[(i, j)]);
                        for (k, v) in row.iter().enumerate() {
                            cols[k * n + i] = *v;
                        }
                    }
                    groups.push((m, cols));
                }
            }
            QlBaseline::Linear => {
                for j in 0..p {
                    unpen.push(d_std.x().column(j).to_vec());
                }
            }
        }
        let effect_offset = groups.len();
        for (j, g) in sys.groups.iter().enumerate() {
            let m = g.dim();
            let mut cols = vec![0.0; m * n];
            for i in 0..n {
                let row = g.design_row(d_std.x()[(i, j)]);
                for (k, v) in row.iter().enumerate() {
                    cols[k * n + i] = t_half[i] * v;
                }
            }
            groups.push((m, cols));
        }
        debug_assert!(effect_offset == 0 || effect_offset == p);
        let prob = PenalizedProblem::new(d_std.y().to_vec(), unpen, groups, l2)?;
        systems.push(sys);
        problems.push((l2, prob));
    }
    let chosen = choose_and_solve(&problems, loss, cfg)?;
    let splines = systems.swap_remove(chosen.sys_index);
    let effect_offset = match cfg.ql_baseline {
        QlBaseline::Spline => p,
        QlBaseline::Linear => 0,
    };
    let effect_groups: Vec<(usize, usize)> =
        (0..p).map(|j| (effect_offset + j, j)).collect();
    let selected: Vec<String> = effect_groups
        .iter()
        .filter(|(g, _)| chosen.fit.active[*g])
        .map(|(_, c)| d_std.col_names()[*c].clone())
        .collect();
    Ok(CateModel {
        version: FORMAT_VERSION,
        learner: "ql".into(),
        loss,
        p_input: d.p(),
        kept,
        col_names: d_std.col_names().to_vec(),
        standardizer,
        splines,
        coefs: chosen.fit.coefs.clone(),
        active: chosen.fit.active.clone(),
        effect_intercept: 1,
        effect_groups,
        lambda1: chosen.lambda1,
        lambda2: chosen.lambda2,
        nuisance: NuisanceModels::default(),
        report: FitReport {
            n: d.n(),
            kept_names: d_std.col_names().to_vec(),
            selected,
            lambda1: chosen.lambda1,
            lambda2: chosen.lambda2,
            lambda_max: chosen.lambda_max,
            cv_table: chosen.cv_table,
            converged: chosen.fit.converged,
            iterations: chosen.fit.iterations,
            objective: chosen.fit.objective.total,
        },
    })
}

/// Effect predictions for new rows; thin wrapper over [`CateModel::predict`].
pub fn predict_cate(m: &CateModel, x_new: &Array2<f64>) -> Result<Prediction, PipelineError> {
    m.predict(x_new)
}

/// Whether a positive effect should map to treatment or to control.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Maximize,
    Minimize,
}

impl std::str::FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "maximize" | "max" => Ok(Direction::Maximize),
            "minimize" | "min" => Ok(Direction::Minimize),
            other => Err(format!("unknown direction `{other}`")),
        }
    }
}

/// Sign rule for one effect estimate; exact zero maps to control.
pub fn decision_rule(tau: f64, direction: Direction) -> i8 {
    let favorable = match direction {
        Direction::Maximize => tau > 0.0,
        Direction::Minimize => tau < 0.0,
    };
    if favorable {
        1
    } else {
        -1
    }
}

/// Treatment recommendations for new rows.
pub fn recommend(
    m: &CateModel,
    x_new: &Array2<f64>,
    direction: Direction,
) -> Result<Vec<i8>, PipelineError> {
    let pred = m.predict(x_new)?;
    Ok(pred.tau.iter().map(|&t| decision_rule(t, direction)).collect())
}

/// Pointwise bootstrap confidence band for the effect at fixed rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BootstrapBand {
    pub estimate: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub level: f64,
    pub b_requested: usize,
    pub b_used: usize,
    /// Outcome of each replicate in order; `false` marks a skipped one.
    pub statuses: Vec<bool>,
    pub lambda1: f64,
    pub lambda2: f64,
}

/// Linear-interpolation quantile of a sorted slice.
fn quantile_sorted(v: &[f64], q: f64) -> f64 {
    let n = v.len();
    if n == 1 {
        return v[0];
    }
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 >= n {
        v[n - 1]
    } else {
        v[lo] + frac * (v[lo + 1] - v[lo])
    }
}

fn replicate_seed(seed: u64, r: usize) -> u64 {
    (seed ^ (r as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)).wrapping_add(r as u64)
}

/// Pairs bootstrap for the effect at `eval_points`.
///
/// The model is first fit normally; every replicate then resamples rows
/// with replacement and refits (nuisance included) at the original
/// `(lambda1, lambda2)`. Degenerate resamples are skipped and counted;
/// more than 10% skipped is an error.
pub fn bootstrap_ci(
    d: &Dataset,
    learner: Learner,
    loss: Loss,
    cfg: &FitConfig,
    eval_points: &Array2<f64>,
    b: usize,
    level: f64,
) -> Result<BootstrapBand, PipelineError> {
    if b < 50 {
        return Err(PipelineError::BadConfig(format!(
            "need at least 50 bootstrap replicates, got {b}"
        )));
    }
    if !(0.0 < level && level < 1.0) {
        return Err(PipelineError::BadConfig(format!("level {level} not in (0, 1)")));
    }
    let original = fit_cate(d, learner, loss, cfg)?;
    let estimate = original.predict(eval_points)?.tau;
    let mut boot_cfg = cfg.clone();
    boot_cfg.fixed_lambda = Some((original.lambda1, original.lambda2));

    let replicates: Vec<Option<Vec<f64>>> = (0..b)
        .into_par_iter()
        .map(|r| {
            let seed = replicate_seed(cfg.seed, r + 1);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows: Vec<usize> = (0..d.n()).map(|_| rng.gen_range(0..d.n())).collect();
            let mut cfg_r = boot_cfg.clone();
            cfg_r.seed = seed;
            cfg_r.nuisance.seed = seed ^ 0xb005;
            d.select_rows(&rows)
                .ok()
                .and_then(|dr| fit_cate(&dr, learner, loss, &cfg_r).ok())
                .and_then(|m| m.predict(eval_points).ok().map(|p| p.tau))
        })
        .collect();

    let statuses: Vec<bool> = replicates.iter().map(Option::is_some).collect();
    let used: Vec<&Vec<f64>> = replicates.iter().flatten().collect();
    let skipped = b - used.len();
    if skipped * 10 > b {
        return Err(PipelineError::TooManySkips {
            skipped,
            requested: b,
        });
    }
    let alpha = 1.0 - level;
    let n_pts = estimate.len();
    let mut lower = Vec::with_capacity(n_pts);
    let mut upper = Vec::with_capacity(n_pts);
    for k in 0..n_pts {
        let mut vals: Vec<f64> = used.iter().map(|t| t[k]).collect();
        vals.sort_by(f64::total_cmp);
        lower.push(quantile_sorted(&vals, alpha / 2.0));
        upper.push(quantile_sorted(&vals, 1.0 - alpha / 2.0));
    }
    Ok(BootstrapBand {
        estimate,
        lower,
        upper,
        level,
        b_requested: b,
        b_used: used.len(),
        statuses,
        lambda1: original.lambda1,
        lambda2: original.lambda2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ColKind;
    use crate::simlab::{generate, SimSetting};
    use rand::Rng;

    fn quick_cfg() -> FitConfig {
        FitConfig {
            n_intervals: Some(4),
            lambda2_grid: vec![0.0, 1e-3],
            n_lambda1: 8,
            lambda1_min_ratio: 1e-2,
            n_folds: 3,
            nuisance: NuisanceConfig {
                max_trees: 60,
                folds: 3,
                ..NuisanceConfig::default()
            },
            ..FitConfig::default()
        }
    }

    fn toy_dataset(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Array2::zeros((n, 2));
        let mut y = Vec::with_capacity(n);
        let mut t = Vec::with_capacity(n);
        for i in 0..n {
            let x1: f64 = rng.gen_range(-1.0..1.0);
            let x2: f64 = rng.gen_range(-1.0..1.0);
            x[(i, 0)] = x1;
            x[(i, 1)] = x2;
            let ti: i8 = if rng.gen_bool(0.5) { 1 } else { -1 };
            let tau = 2.0 * x1;
            y.push(0.5 * x2 + f64::from(ti) / 2.0 * tau + 0.2 * rng.gen_range(-1.0..1.0));
            t.push(ti);
        }
        Dataset::new(
            y,
            t,
            x,
            vec![ColKind::Continuous; 2],
            vec!["x1".into(), "x2".into()],
        )
        .unwrap()
    }

    fn oracle_for(d: &Dataset) -> NuisanceValues {
        let n = d.n();
        let mu: Vec<f64> = (0..n).map(|i| 0.5 * d.x()[(i, 1)]).collect();
        let mut nv = NuisanceValues::new(vec![0.5; n]);
        nv = nv.with_mean(mu);
        nv
    }

    #[test]
    fn nis_keeps_everything_when_small() {
        let d = toy_dataset(80, 1);
        assert_eq!(nis_screen(&d, 5, Loss::L1).unwrap(), vec![0, 1]);
        assert_eq!(nis_screen(&d, 2, Loss::L2).unwrap(), vec![0, 1]);
    }

    #[test]
    fn nis_ranks_signal_above_noise() {
        for seed in 0..10u64 {
            let n = 250;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut x = Array2::zeros((n, 5));
            let mut y = Vec::with_capacity(n);
            let t: Vec<i8> = (0..n).map(|i| if i % 2 == 0 { 1 } else { -1 }).collect();
            for i in 0..n {
                for j in 0..5 {
                    x[(i, j)] = rng.gen_range(-1.0..1.0);
                }
                let signal: f64 = 3.0 * x[(i, 1)];
                y.push(signal.sin() * 2.0 + 0.05 * rng.gen_range(-1.0..1.0));
            }
            let d = Dataset::new(y, t, x, vec![ColKind::Continuous; 5], vec![]).unwrap();
            let kept = nis_screen(&d, 1, Loss::L1).unwrap();
            assert_eq!(kept, vec![1], "seed {seed}");
        }
    }

    #[test]
    fn decision_rules_follow_the_sign() {
        let taus = [2.0, -1.0, 0.0];
        let max: Vec<i8> = taus.iter().map(|&t| decision_rule(t, Direction::Maximize)).collect();
        let min: Vec<i8> = taus.iter().map(|&t| decision_rule(t, Direction::Minimize)).collect();
        assert_eq!(max, vec![1, -1, -1]);
        assert_eq!(min, vec![-1, 1, -1]);
    }

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 1.0), 4.0);
        assert!((quantile_sorted(&v, 0.5) - 2.5).abs() < 1e-12);
        assert_eq!(quantile_sorted(&[7.0], 0.3), 7.0);
    }

    #[test]
    fn fit_is_deterministic() {
        let d = toy_dataset(150, 2);
        let cfg = quick_cfg();
        let a = fit_cate(&d, Learner::Rl, Loss::L1, &cfg).unwrap();
        let b = fit_cate(&d, Learner::Rl, Loss::L1, &cfg).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    }

    #[test]
    fn model_round_trips_through_json() {
        let d = toy_dataset(150, 3);
        let m = fit_cate(&d, Learner::Rl, Loss::L2, &quick_cfg()).unwrap();
        let back = CateModel::from_json(&m.to_json().unwrap()).unwrap();
        let grid = toy_dataset(40, 4);
        let a = m.predict(grid.x()).unwrap().tau;
        let b = back.predict(grid.x()).unwrap().tau;
        for (u, v) in a.iter().zip(&b) {
            assert_eq!(u.to_bits(), v.to_bits());
        }
    }

    #[test]
    fn version_from_the_future_is_rejected() {
        let d = toy_dataset(120, 17);
        let mut m = fit_cate(&d, Learner::Rl, Loss::L2, &quick_cfg()).unwrap();
        m.version = FORMAT_VERSION + 1;
        let err = CateModel::from_json(&m.to_json().unwrap()).unwrap_err();
        assert!(matches!(err, PipelineError::BadVersion { .. }));
    }

    #[test]
    fn predict_rejects_wrong_width() {
        let d = toy_dataset(120, 5);
        let m = fit_cate(&d, Learner::Mcm, Loss::L1, &quick_cfg()).unwrap();
        let bad = Array2::zeros((3, 4));
        assert!(matches!(
            m.predict(&bad),
            Err(PipelineError::SchemaMismatch { expected: 2, got: 4 })
        ));
    }

    #[test]
    fn out_of_range_rows_clamp_to_the_boundary() {
        let d = toy_dataset(150, 6);
        let m = fit_cate(&d, Learner::Rl, Loss::L2, &quick_cfg()).unwrap();
        let lo = d.x().column(0).iter().copied().fold(f64::INFINITY, f64::min);
        let hi1 = d.x().column(1).iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut far = Array2::zeros((1, 2));
        far[(0, 0)] = lo - 100.0;
        far[(0, 1)] = hi1 + 5.0;
        let mut edge = Array2::zeros((1, 2));
        edge[(0, 0)] = lo;
        edge[(0, 1)] = hi1;
        let pf = m.predict(&far).unwrap();
        let pe = m.predict(&edge).unwrap();
        assert_eq!(pf.tau[0].to_bits(), pe.tau[0].to_bits());
        assert_eq!(pf.clamped, 2);
        assert_eq!(pe.clamped, 0);
    }

    #[test]
    fn recommendations_flip_with_direction() {
        let d = toy_dataset(200, 7);
        let m = fit_cate(&d, Learner::Rl, Loss::L1, &quick_cfg()).unwrap();
        let grid = toy_dataset(30, 8);
        let up = recommend(&m, grid.x(), Direction::Maximize).unwrap();
        let down = recommend(&m, grid.x(), Direction::Minimize).unwrap();
        let tau = m.predict(grid.x()).unwrap().tau;
        for ((u, d_), t) in up.iter().zip(&down).zip(&tau) {
            if *t != 0.0 {
                assert_eq!(*u, -*d_);
            }
            if *t > 0.5 {
                assert_eq!(*u, 1);
            }
        }
    }

    #[test]
    fn full_shrinkage_returns_the_transformed_intercept() {
        let d = toy_dataset(150, 9);
        let nv = oracle_for(&d);
        let mut cfg = quick_cfg();
        let probe = fit_cate_with_nuisance(&d, Learner::Rl, Loss::L1, &cfg, Some(&nv)).unwrap();
        cfg.fixed_lambda = Some((probe.report.lambda_max * 10.0, 0.0));
        let m = fit_cate_with_nuisance(&d, Learner::Rl, Loss::L1, &cfg, Some(&nv)).unwrap();
        assert!(m.active.iter().all(|a| !a), "groups should all be shrunk away");
        let tau = m.predict(d.x()).unwrap().tau;
        for v in &tau {
            assert_eq!(v.to_bits(), tau[0].to_bits());
        }
        // the constant must be an optimal weighted absolute-error
        // intercept; the minimizer can be an interval, so compare
        // objective values rather than coefficients
        let (d_std, _) = standardize(&d).unwrap();
        let g = Learner::Rl.augmentation(&nv, d.n()).unwrap();
        let ts = transform_samples(&d_std, &Learner::Rl, &g, &nv, Loss::L1).unwrap();
        let exact =
            crate::solver::solve_exact_lad(&[ts.w_star.clone()], &ts.y_star).unwrap();
        let j_model = ts
            .y_star
            .iter()
            .zip(&ts.w_star)
            .map(|(y, w)| (y - w * tau[0]).abs())
            .sum::<f64>()
            / ts.y_star.len() as f64;
        let gap = j_model - exact.mean_abs_residual;
        assert!(
            (-1e-9..1e-5).contains(&gap),
            "intercept objective {} vs exact {}",
            j_model,
            exact.mean_abs_residual
        );
    }

    #[test]
    fn outcome_shift_leaves_the_effect_bit_identical() {
        let n = 200;
        let mut d = toy_dataset(n, 10);
        // snap outcomes and the oracle mean to dyadic values so the
        // shifted subtraction cancels exactly in floating point
        let snap = |v: f64| (v * 1024.0).round() / 1024.0;
        let y: Vec<f64> = d.y().iter().map(|v| snap(*v)).collect();
        d = Dataset::new(
            y.clone(),
            d.t().to_vec(),
            d.x().clone(),
            d.col_kind().to_vec(),
            d.col_names().to_vec(),
        )
        .unwrap();
        let mu: Vec<f64> = (0..n).map(|i| snap(0.5 * d.x()[(i, 1)])).collect();
        let k = 64.0;
        let shifted = Dataset::new(
            y.iter().map(|v| v + k).collect(),
            d.t().to_vec(),
            d.x().clone(),
            d.col_kind().to_vec(),
            d.col_names().to_vec(),
        )
        .unwrap();
        let cfg = quick_cfg();
        for learner in [Learner::McmEa, Learner::Rl] {
            let nv = NuisanceValues::new(vec![0.5; n]).with_mean(mu.clone());
            let nv_shift =
                NuisanceValues::new(vec![0.5; n]).with_mean(mu.iter().map(|v| v + k).collect());
            let a = fit_cate_with_nuisance(&d, learner, Loss::L1, &cfg, Some(&nv)).unwrap();
            let b =
                fit_cate_with_nuisance(&shifted, learner, Loss::L1, &cfg, Some(&nv_shift)).unwrap();
            let pa = a.predict(d.x()).unwrap().tau;
            let pb = b.predict(d.x()).unwrap().tau;
            for (u, v) in pa.iter().zip(&pb) {
                assert_eq!(u.to_bits(), v.to_bits(), "learner {learner}");
            }
        }
    }

    #[test]
    fn relabeling_treatment_negates_the_effect() {
        let d = toy_dataset(200, 11);
        let n = d.n();
        let nv = oracle_for(&d);
        let cfg = quick_cfg();
        let a = fit_cate_with_nuisance(&d, Learner::Rl, Loss::L1, &cfg, Some(&nv)).unwrap();
        let flipped = Dataset::new(
            d.y().to_vec(),
            d.t().iter().map(|t| -t).collect(),
            d.x().clone(),
            d.col_kind().to_vec(),
            d.col_names().to_vec(),
        )
        .unwrap();
        let nv_flip = {
            let mut v = oracle_for(&d);
            v.p_hat = (0..n).map(|i| 1.0 - nv.p_hat[i]).collect();
            v
        };
        let mut cfg_b = cfg.clone();
        cfg_b.fixed_lambda = Some((a.lambda1, a.lambda2));
        let b = fit_cate_with_nuisance(&flipped, Learner::Rl, Loss::L1, &cfg_b, Some(&nv_flip))
            .unwrap();
        let pa = a.predict(d.x()).unwrap().tau;
        let pb = b.predict(d.x()).unwrap().tau;
        for (u, v) in pa.iter().zip(&pb) {
            assert!((u + v).abs() < 1e-6, "tau {u} vs flipped {v}");
        }
    }

    #[test]
    fn qlearner_recovers_a_simple_effect() {
        let d = toy_dataset(300, 12);
        let m = fit_qlearner(&d, Loss::L2, &quick_cfg()).unwrap();
        let val = toy_dataset(60, 13);
        let tau = m.predict(val.x()).unwrap().tau;
        let mse = (0..val.n())
            .map(|i| (tau[i] - 2.0 * val.x()[(i, 0)]).powi(2))
            .sum::<f64>()
            / val.n() as f64;
        assert!(mse < 0.3, "qlearner mse {mse}");
        assert_eq!(m.learner, "ql");
        let mask = m.selected_mask();
        assert!(mask[0], "effect covariate not selected");
    }

    #[test]
    fn qlearner_linear_baseline_builds_and_predicts() {
        let d = toy_dataset(250, 14);
        let mut cfg = quick_cfg();
        cfg.ql_baseline = QlBaseline::Linear;
        let m = fit_qlearner(&d, Loss::L1, &cfg).unwrap();
        // baseline intercept, effect intercept, two linear columns
        assert_eq!(m.coefs.alpha.len(), 4);
        assert_eq!(m.effect_intercept, 1);
        let tau = m.predict(d.x()).unwrap().tau;
        assert!(tau.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn oracle_nuisance_path_runs_on_generated_data() {
        let s = SimSetting::standard(400, 4, 0.05).unwrap();
        let (train, val) = generate(&s, 21).unwrap();
        let nv = crate::nuisance::oracle_nuisance(&s, &train);
        let m =
            fit_cate_with_nuisance(&train, Learner::Rl, Loss::L1, &quick_cfg(), Some(&nv)).unwrap();
        let tau = m.predict(val.data.x()).unwrap().tau;
        let mse = tau
            .iter()
            .zip(&val.tau)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / tau.len() as f64;
        let null_mse = val.tau.iter().map(|b| b * b).sum::<f64>() / val.tau.len() as f64;
        assert!(
            mse < 0.7 * null_mse,
            "oracle-nuisance mse {mse} vs always-zero {null_mse}"
        );
    }

    #[test]
    fn bad_configs_are_rejected() {
        let d = toy_dataset(100, 15);
        let mut cfg = quick_cfg();
        cfg.lambda2_grid.clear();
        assert!(matches!(
            fit_cate(&d, Learner::Rl, Loss::L1, &cfg),
            Err(PipelineError::BadConfig(_))
        ));
        let mut cfg = quick_cfg();
        cfg.n_folds = 1;
        assert!(fit_cate(&d, Learner::Rl, Loss::L1, &cfg).is_err());
        let cfg = quick_cfg();
        let pts = Array2::zeros((2, 2));
        assert!(matches!(
            bootstrap_ci(&d, Learner::Rl, Loss::L1, &cfg, &pts, 10, 0.95),
            Err(PipelineError::BadConfig(_))
        ));
        assert!(bootstrap_ci(&d, Learner::Rl, Loss::L1, &cfg, &pts, 50, 1.5).is_err());
    }

    #[test]
    #[ignore]
    fn debug_cv_blowup() {
        use crate::nuisance::NuisanceConfig;
        use crate::solver::{default_lambda1_grid, lambda_max, solve_l2};

        let setting = SimSetting::standard(1000, 10, 0.0).unwrap();
        let (d, _) = generate(&setting, 11).unwrap();
        let (d_std, _) = standardize(&d).unwrap();
        let ncfg = NuisanceConfig {
            max_trees: 300,
            folds: 5,
            seed: 11 ^ 0xb005,
            ..NuisanceConfig::default()
        };
        let (nv, _) = fit_nuisance(&d_std, Learner::McmEa, Loss::L2, &ncfg).unwrap();
        let g = Learner::McmEa.augmentation(&nv, d_std.n()).unwrap();
        let ts = transform_samples(&d_std, &Learner::McmEa, &g, &nv, Loss::L2).unwrap();
        let sys = SplineSystem::build(&d_std, 3, Some(8), 0.001, GramKind::Empirical).unwrap();
        let prob = weighted_problem(&d_std, &sys, &ts.y_star, &ts.w_star).unwrap();

        let fcfg = FitConfig::default();
        let lmax = lambda_max(&prob, Loss::L2, &fcfg.cv_solver).unwrap();
        let grid = default_lambda1_grid(lmax, 12, 0.01);
        let n = prob.n();
        for fold in 0..5 {
            let train: Vec<usize> = (0..n).filter(|i| i % 5 != fold).collect();
            let test: Vec<usize> = (0..n).filter(|i| i % 5 == fold).collect();
            let p_tr = prob.subset(&train).unwrap();
            let p_te = prob.subset(&test).unwrap();
            let mut warm = None;
            for &l1 in &grid {
                let fit = solve_l2(&p_tr, l1, &fcfg.cv_solver, warm.as_ref()).unwrap();
                let pred = p_te.predictions(&fit.coefs);
                let loss: f64 = p_te
                    .y()
                    .iter()
                    .zip(&pred)
                    .map(|(y, f)| (y - f) * (y - f))
                    .sum::<f64>()
                    / test.len() as f64;
                let norms = fit.coefs.group_norms();
                let gmax = norms.iter().cloned().fold(0.0f64, f64::max);
                if loss > 20.0 {
                    println!(
                        "fold {fold} l1={l1:.4} loss={loss:.1} alpha={:?} gmax={gmax:.1} norms={:?}",
                        fit.coefs.alpha,
                        norms.iter().map(|v| (v * 10.0).round() / 10.0).collect::<Vec<_>>()
                    );
                } else {
                    println!("fold {fold} l1={l1:.4} loss={loss:.3} gmax={gmax:.2}");
                }
                warm = Some(fit.coefs);
            }
        }
    }
}
