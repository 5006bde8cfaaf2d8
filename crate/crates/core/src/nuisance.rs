//! Gradient-boosted regression trees for the nuisance quantities: the
//! propensity p(x), the conditional mean mu(x), and the per-arm means.
//! Small stagewise trees with cross-validated stopping; an oracle path
//! injects exact values in simulations so solver behavior can be studied
//! without nuisance error.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::learners::NuisanceValues;
use crate::simlab::SimSetting;

#[derive(Debug, thiserror::Error)]
pub enum NuisanceError {
    #[error("invalid boosting configuration: {0}")]
    BadConfig(String),
    #[error("need at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("bad boosting target: {0}")]
    BadTarget(String),
    #[error("treatment arm {arm} has only {n} rows")]
    ArmTooSmall { arm: i8, n: usize },
}

/// Loss functions the booster can follow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoostLoss {
    Squared,
    Absolute,
    Logistic,
}

/// One regression tree, depth-limited at fit time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Tree {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Tree>,
        right: Box<Tree>,
    },
}

impl Tree {
    fn eval(&self, row: &[f64]) -> f64 {
        match self {
            Tree::Leaf { value } => *value,
            Tree::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if row[*feature] <= *threshold {
                    left.eval(row)
                } else {
                    right.eval(row)
                }
            }
        }
    }
}

/// A fitted boosting model: constant start plus shrunken tree increments.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoostModel {
    pub loss: BoostLoss,
    pub f0: f64,
    pub shrinkage: f64,
    pub trees: Vec<Tree>,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl BoostModel {
    /// Raw additive score before any link function.
    pub fn raw(&self, row: &[f64]) -> f64 {
        self.raw_truncated(row, self.trees.len())
    }

    fn raw_truncated(&self, row: &[f64], n_trees: usize) -> f64 {
        let mut f = self.f0;
        for t in self.trees.iter().take(n_trees) {
            f += self.shrinkage * t.eval(row);
        }
        f
    }

    /// Prediction on the response scale; logistic models return a
    /// probability in (0, 1).
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        match self.loss {
            BoostLoss::Logistic => sigmoid(self.raw(row)),
            _ => self.raw(row),
        }
    }

    pub fn predict(&self, x: &Array2<f64>) -> Vec<f64> {
        let mut buf = vec![0.0; x.ncols()];
        (0..x.nrows())
            .map(|i| {
                for (j, b) in buf.iter_mut().enumerate() {
                    *b = x[(i, j)];
                }
                self.predict_row(&buf)
            })
            .collect()
    }
}

/// Settings for boosted nuisance fits.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NuisanceConfig {
    pub max_trees: usize,
    pub depth: usize,
    pub shrinkage: f64,
    pub folds: usize,
    pub subsample: f64,
    /// Probabilities are clipped to `[clip, 1 - clip]`.
    pub clip: f64,
    pub min_leaf: usize,
    pub seed: u64,
    /// Return out-of-fold fitted values instead of in-sample ones.
    pub cross_fit: bool,
}

impl Default for NuisanceConfig {
    fn default() -> Self {
        NuisanceConfig {
            max_trees: 500,
            depth: 2,
            shrinkage: 0.1,
            folds: 5,
            subsample: 0.8,
            clip: 0.01,
            min_leaf: 10,
            seed: 0xb005,
            cross_fit: false,
        }
    }
}

impl NuisanceConfig {
    fn validate(&self) -> Result<(), NuisanceError> {
        if self.folds < 2 {
            return Err(NuisanceError::BadConfig(format!("{} folds", self.folds)));
        }
        if self.depth == 0 {
            return Err(NuisanceError::BadConfig("depth 0".into()));
        }
        if !(self.shrinkage > 0.0 && self.shrinkage <= 1.0) {
            return Err(NuisanceError::BadConfig(format!(
                "shrinkage {}",
                self.shrinkage
            )));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return Err(NuisanceError::BadConfig(format!(
                "subsample {}",
                self.subsample
            )));
        }
        if !(self.clip > 0.0 && self.clip < 0.5) {
            return Err(NuisanceError::BadConfig(format!("clip {}", self.clip)));
        }
        if self.max_trees == 0 {
            return Err(NuisanceError::BadConfig("max_trees 0".into()));
        }
        if self.min_leaf == 0 {
            return Err(NuisanceError::BadConfig("min_leaf 0".into()));
        }
        Ok(())
    }
}

/// A boosted fit plus its cross-validation record.
#[derive(Debug, Clone)]
pub struct BoostFit {
    pub model: BoostModel,
    /// Fitted values on the training rows: in-sample by default,
    /// out-of-fold when `cross_fit` is set.
    pub fitted: Vec<f64>,
    /// Mean held-out loss at the selected tree count.
    pub cv_loss: f64,
    /// Mean held-out loss of the tree-free constant model.
    pub constant_cv_loss: f64,
}

fn median_of(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn initial_constant(y: &[f64], loss: BoostLoss) -> f64 {
    match loss {
        BoostLoss::Squared => y.iter().sum::<f64>() / y.len() as f64,
        BoostLoss::Absolute => median_of(y.to_vec()),
        BoostLoss::Logistic => {
            let p = (y.iter().sum::<f64>() / y.len() as f64).clamp(1e-6, 1.0 - 1e-6);
            (p / (1.0 - p)).ln()
        }
    }
}

fn held_out_loss(y: &[f64], raw: &[f64], loss: BoostLoss) -> f64 {
    let n = y.len() as f64;
    match loss {
        BoostLoss::Squared => y.iter().zip(raw).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n,
        BoostLoss::Absolute => y.iter().zip(raw).map(|(a, b)| (a - b).abs()).sum::<f64>() / n,
        BoostLoss::Logistic => {
            y.iter()
                .zip(raw)
                .map(|(a, z)| {
                    let p = sigmoid(*z).clamp(1e-12, 1.0 - 1e-12);
                    -(a * p.ln() + (1.0 - a) * (1.0 - p).ln())
                })
                .sum::<f64>()
                / n
        }
    }
}

/// Stagewise tree fitting state for one data subset.
struct Grower<'a> {
    x: &'a Array2<f64>,
    rows: Vec<usize>,
    y: Vec<f64>,
    loss: BoostLoss,
    cfg: &'a NuisanceConfig,
    /// Per feature: positions into `rows`, ordered by feature value.
    sorted: Vec<Vec<usize>>,
    /// Raw score per entry of `rows`.
    f: Vec<f64>,
    f0: f64,
    trees: Vec<Tree>,
    rng: ChaCha8Rng,
}

impl<'a> Grower<'a> {
    fn new(
        x: &'a Array2<f64>,
        all_y: &[f64],
        rows: Vec<usize>,
        loss: BoostLoss,
        cfg: &'a NuisanceConfig,
        seed: u64,
    ) -> Self {
        let y: Vec<f64> = rows.iter().map(|&i| all_y[i]).collect();
        let f0 = initial_constant(&y, loss);
        let sorted: Vec<Vec<usize>> = (0..x.ncols())
            .map(|j| {
                let mut idx: Vec<usize> = (0..rows.len()).collect();
                idx.sort_by(|&a, &b| {
                    x[(rows[a], j)]
                        .partial_cmp(&x[(rows[b], j)])
                        .unwrap()
                        .then(a.cmp(&b))
                });
                idx
            })
            .collect();
        let n = rows.len();
        Grower {
            x,
            rows,
            y,
            loss,
            cfg,
            sorted,
            f: vec![f0; n],
            f0,
            trees: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn feature(&self, pos: usize, j: usize) -> f64 {
        self.x[(self.rows[pos], j)]
    }

    /// Split-search target and leaf-value residual for position `pos`.
    fn gradient(&self, pos: usize) -> f64 {
        match self.loss {
            BoostLoss::Squared => self.y[pos] - self.f[pos],
            BoostLoss::Absolute => (self.y[pos] - self.f[pos]).signum(),
            BoostLoss::Logistic => self.y[pos] - sigmoid(self.f[pos]),
        }
    }

    fn leaf_value(&self, members: &[usize]) -> f64 {
        match self.loss {
            BoostLoss::Squared => {
                members.iter().map(|&p| self.y[p] - self.f[p]).sum::<f64>() / members.len() as f64
            }
            BoostLoss::Absolute => {
                median_of(members.iter().map(|&p| self.y[p] - self.f[p]).collect())
            }
            BoostLoss::Logistic => {
                let mut num = 0.0;
                let mut den = 0.0;
                for &p in members {
                    let prob = sigmoid(self.f[p]);
                    num += self.y[p] - prob;
                    den += prob * (1.0 - prob);
                }
                (num / den.max(1e-6)).clamp(-4.0, 4.0)
            }
        }
    }

    /// Best squared-error split of `members` (positions) on any feature.
    fn best_split(&self, in_node: &[bool], n_node: usize) -> Option<(usize, f64, f64)> {
        let mut total_sum = 0.0;
        for (pos, flag) in in_node.iter().enumerate() {
            if *flag {
                total_sum += self.gradient(pos);
            }
        }
        let nf = n_node as f64;
        let base = total_sum * total_sum / nf;
        let mut best: Option<(usize, f64, f64)> = None;
        for j in 0..self.x.ncols() {
            let mut left_sum = 0.0;
            let mut left_n = 0usize;
            let mut prev_val: Option<f64> = None;
            for &pos in &self.sorted[j] {
                if !in_node[pos] {
                    continue;
                }
                let val = self.feature(pos, j);
                if let Some(pv) = prev_val {
                    if val > pv
                        && left_n >= self.cfg.min_leaf
                        && n_node - left_n >= self.cfg.min_leaf
                    {
                        let right_sum = total_sum - left_sum;
                        let right_n = (n_node - left_n) as f64;
                        let gain = left_sum * left_sum / left_n as f64
                            + right_sum * right_sum / right_n
                            - base;
                        if gain > 1e-12 && best.as_ref().map_or(true, |b| gain > b.2) {
                            best = Some((j, 0.5 * (pv + val), gain));
                        }
                    }
                }
                left_sum += self.gradient(pos);
                left_n += 1;
                prev_val = Some(val);
            }
        }
        best
    }

    fn grow_node(&self, in_node: &mut Vec<bool>, n_node: usize, depth_left: usize) -> Tree {
        let members: Vec<usize> = (0..in_node.len()).filter(|&p| in_node[p]).collect();
        if depth_left == 0 || n_node < 2 * self.cfg.min_leaf {
            return Tree::Leaf {
                value: self.leaf_value(&members),
            };
        }
        let Some((feature, threshold, _)) = self.best_split(in_node, n_node) else {
            return Tree::Leaf {
                value: self.leaf_value(&members),
            };
        };
        let mut left_mask = vec![false; in_node.len()];
        let mut right_mask = vec![false; in_node.len()];
        let mut n_left = 0usize;
        for &pos in &members {
            if self.feature(pos, feature) <= threshold {
                left_mask[pos] = true;
                n_left += 1;
            } else {
                right_mask[pos] = true;
            }
        }
        let left = self.grow_node(&mut left_mask, n_left, depth_left - 1);
        let right = self.grow_node(&mut right_mask, n_node - n_left, depth_left - 1);
        Tree::Split {
            feature,
            threshold,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    /// Fits one more tree on a fresh subsample and applies it to all rows.
    /// Returns false when no split was found, in which case nothing changed.
    fn add_tree(&mut self) -> bool {
        let n = self.rows.len();
        let n_sub = ((self.cfg.subsample * n as f64).floor() as usize).clamp(1, n);
        let mut in_node = vec![false; n];
        if n_sub == n {
            in_node.iter_mut().for_each(|b| *b = true);
        } else {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut self.rng);
            for &p in order.iter().take(n_sub) {
                in_node[p] = true;
            }
        }
        let tree = self.grow_node(&mut in_node.clone(), n_sub, self.cfg.depth);
        if matches!(tree, Tree::Leaf { .. }) {
            return false;
        }
        let mut buf = vec![0.0; self.x.ncols()];
        for pos in 0..n {
            for (j, b) in buf.iter_mut().enumerate() {
                *b = self.x[(self.rows[pos], j)];
            }
            self.f[pos] += self.cfg.shrinkage * tree.eval(&buf);
        }
        self.trees.push(tree);
        true
    }

    fn into_model(self) -> BoostModel {
        BoostModel {
            loss: self.loss,
            f0: self.f0,
            shrinkage: self.cfg.shrinkage,
            trees: self.trees,
        }
    }
}

fn fold_labels(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut labels = vec![0usize; n];
    for (pos, &row) in order.iter().enumerate() {
        labels[row] = pos % folds;
    }
    labels
}

/// Fits a boosting model to `target`, choosing the tree count by K-fold
/// cross-validation and refitting at that count on all rows.
pub fn fit_boost(
    x: &Array2<f64>,
    target: &[f64],
    loss: BoostLoss,
    cfg: &NuisanceConfig,
) -> Result<BoostFit, NuisanceError> {
    cfg.validate()?;
    let n = x.nrows();
    if target.len() != n {
        return Err(NuisanceError::BadTarget(format!(
            "{} targets for {} rows",
            target.len(),
            n
        )));
    }
    if n < 2 * cfg.folds {
        return Err(NuisanceError::TooFewRows {
            needed: 2 * cfg.folds,
            got: n,
        });
    }
    if target.iter().any(|v| !v.is_finite()) {
        return Err(NuisanceError::BadTarget("non-finite target".into()));
    }
    if loss == BoostLoss::Logistic && target.iter().any(|v| *v != 0.0 && *v != 1.0) {
        return Err(NuisanceError::BadTarget(
            "logistic targets must be 0 or 1".into(),
        ));
    }

    let first = target[0];
    if target.iter().all(|v| *v == first) {
        let f0 = initial_constant(target, loss);
        let model = BoostModel {
            loss,
            f0,
            shrinkage: cfg.shrinkage,
            trees: Vec::new(),
        };
        let raw = vec![f0; n];
        let flat = held_out_loss(target, &raw, loss);
        let fitted = model.predict(x);
        return Ok(BoostFit {
            model,
            fitted,
            cv_loss: flat,
            constant_cv_loss: flat,
        });
    }

    let labels = fold_labels(n, cfg.folds, cfg.seed);
    // loss_at[m][fold]: held-out loss with m trees
    let mut loss_at = vec![vec![0.0f64; cfg.folds]; cfg.max_trees + 1];
    let mut fold_models: Vec<BoostModel> = Vec::with_capacity(cfg.folds);
    for fold in 0..cfg.folds {
        let train: Vec<usize> = (0..n).filter(|i| labels[*i] != fold).collect();
        let test: Vec<usize> = (0..n).filter(|i| labels[*i] == fold).collect();
        let test_y: Vec<f64> = test.iter().map(|&i| target[i]).collect();
        let mut grower = Grower::new(x, target, train, loss, cfg, cfg.seed ^ (fold as u64 + 1));
        let mut buf = vec![0.0; x.ncols()];
        let mut test_raw: Vec<f64> = vec![grower.f0; test.len()];
        loss_at[0][fold] = held_out_loss(&test_y, &test_raw, loss);
        let mut stalled_at: Option<usize> = None;
        for m in 1..=cfg.max_trees {
            if !grower.add_tree() {
                stalled_at = Some(m);
                break;
            }
            let tree = grower.trees.last().expect("just pushed");
            for (k, &i) in test.iter().enumerate() {
                for (j, b) in buf.iter_mut().enumerate() {
                    *b = x[(i, j)];
                }
                test_raw[k] += cfg.shrinkage * tree.eval(&buf);
            }
            loss_at[m][fold] = held_out_loss(&test_y, &test_raw, loss);
        }
        if let Some(m0) = stalled_at {
            let carry = loss_at[m0 - 1][fold];
            for m in m0..=cfg.max_trees {
                loss_at[m][fold] = carry;
            }
        }
        fold_models.push(grower.into_model());
    }

    let mean_at: Vec<f64> = loss_at
        .iter()
        .map(|per_fold| per_fold.iter().sum::<f64>() / cfg.folds as f64)
        .collect();
    let mut best_m = 0usize;
    for (m, &v) in mean_at.iter().enumerate() {
        if v < mean_at[best_m] {
            best_m = m;
        }
    }

    let mut grower = Grower::new(x, target, (0..n).collect(), loss, cfg, cfg.seed ^ 0x00f1);
    for _ in 0..best_m {
        if !grower.add_tree() {
            break;
        }
    }
    let model = grower.into_model();
    let fitted = if cfg.cross_fit {
        let mut buf = vec![0.0; x.ncols()];
        let mut out = vec![0.0; n];
        for (i, o) in out.iter_mut().enumerate() {
            for (j, b) in buf.iter_mut().enumerate() {
                *b = x[(i, j)];
            }
            let fm = &fold_models[labels[i]];
            let m_avail = best_m.min(fm.trees.len());
            let raw = fm.raw_truncated(&buf, m_avail);
            *o = match loss {
                BoostLoss::Logistic => sigmoid(raw),
                _ => raw,
            };
        }
        out
    } else {
        model.predict(x)
    };
    Ok(BoostFit {
        model,
        fitted,
        cv_loss: mean_at[best_m],
        constant_cv_loss: mean_at[0],
    })
}

/// A propensity model: logistic booster plus the clipping bound applied to
/// every prediction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PropensityModel {
    pub model: BoostModel,
    pub clip: f64,
}

impl PropensityModel {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.model.predict_row(row).clamp(self.clip, 1.0 - self.clip)
    }

    pub fn predict(&self, x: &Array2<f64>) -> Vec<f64> {
        self.model
            .predict(x)
            .into_iter()
            .map(|p| p.clamp(self.clip, 1.0 - self.clip))
            .collect()
    }
}

/// Propensity estimates for a dataset.
#[derive(Debug, Clone)]
pub struct PropensityFit {
    pub p_hat: Vec<f64>,
    pub model: PropensityModel,
    pub cv_loss: f64,
    pub constant_cv_loss: f64,
}

/// Boosts the treatment indicator `(T+1)/2` on the covariates and clips the
/// fitted probabilities.
pub fn fit_propensity(d: &Dataset, cfg: &NuisanceConfig) -> Result<PropensityFit, NuisanceError> {
    let target: Vec<f64> = d.t().iter().map(|&t| f64::from(t + 1) / 2.0).collect();
    let fit = fit_boost(d.x(), &target, BoostLoss::Logistic, cfg)?;
    let p_hat: Vec<f64> = fit
        .fitted
        .iter()
        .map(|p| p.clamp(cfg.clip, 1.0 - cfg.clip))
        .collect();
    Ok(PropensityFit {
        p_hat,
        model: PropensityModel {
            model: fit.model,
            clip: cfg.clip,
        },
        cv_loss: fit.cv_loss,
        constant_cv_loss: fit.constant_cv_loss,
    })
}

/// Marginal-mean estimates for a dataset.
#[derive(Debug, Clone)]
pub struct MeanFit {
    pub mu: Vec<f64>,
    pub model: BoostModel,
    pub cv_loss: f64,
    pub constant_cv_loss: f64,
}

/// Boosts the outcome on the covariates, ignoring treatment. Use absolute
/// loss when the downstream effect model is absolute-error based.
pub fn fit_mean(
    d: &Dataset,
    loss: BoostLoss,
    cfg: &NuisanceConfig,
) -> Result<MeanFit, NuisanceError> {
    if loss == BoostLoss::Logistic {
        return Err(NuisanceError::BadConfig(
            "mean fits use squared or absolute loss".into(),
        ));
    }
    let fit = fit_boost(d.x(), d.y(), loss, cfg)?;
    Ok(MeanFit {
        mu: fit.fitted,
        model: fit.model,
        cv_loss: fit.cv_loss,
        constant_cv_loss: fit.constant_cv_loss,
    })
}

/// Per-arm mean estimates, each predicted on every row.
#[derive(Debug, Clone)]
pub struct ArmMeansFit {
    pub mu_treated: Vec<f64>,
    pub mu_control: Vec<f64>,
    pub model_treated: BoostModel,
    pub model_control: BoostModel,
}

/// Fits one booster per treatment arm and predicts both on all rows.
pub fn fit_arm_means(
    d: &Dataset,
    loss: BoostLoss,
    cfg: &NuisanceConfig,
) -> Result<ArmMeansFit, NuisanceError> {
    if loss == BoostLoss::Logistic {
        return Err(NuisanceError::BadConfig(
            "arm-mean fits use squared or absolute loss".into(),
        ));
    }
    let mut out: Vec<(Vec<f64>, BoostModel)> = Vec::with_capacity(2);
    for arm in [1i8, -1i8] {
        let rows: Vec<usize> = (0..d.n()).filter(|&i| d.t()[i] == arm).collect();
        if rows.len() < 2 * cfg.folds {
            return Err(NuisanceError::ArmTooSmall {
                arm,
                n: rows.len(),
            });
        }
        let mut x_sub = Array2::zeros((rows.len(), d.p()));
        let mut y_sub = Vec::with_capacity(rows.len());
        for (k, &i) in rows.iter().enumerate() {
            for j in 0..d.p() {
                x_sub[(k, j)] = d.x()[(i, j)];
            }
            y_sub.push(d.y()[i]);
        }
        let fit = fit_boost(&x_sub, &y_sub, loss, cfg)?;
        // in-arm rows keep their (possibly out-of-fold) fitted values; the
        // other arm is always scored by the full-arm model
        let mut preds = fit.model.predict(d.x());
        for (k, &i) in rows.iter().enumerate() {
            preds[i] = fit.fitted[k];
        }
        out.push((preds, fit.model));
    }
    let (mu_control, model_control) = out.pop().expect("two arms fitted");
    let (mu_treated, model_treated) = out.pop().expect("two arms fitted");
    Ok(ArmMeansFit {
        mu_treated,
        mu_control,
        model_treated,
        model_control,
    })
}

/// Exact nuisance values computed from a simulation setting's true
/// functions; lets tests separate solver error from nuisance error.
pub fn oracle_nuisance(setting: &SimSetting, d: &Dataset) -> NuisanceValues {
    let n = d.n();
    let mut p_hat = Vec::with_capacity(n);
    let mut mu = Vec::with_capacity(n);
    let mut mu_treated = Vec::with_capacity(n);
    let mut mu_control = Vec::with_capacity(n);
    let mut row = vec![0.0; d.p()];
    for i in 0..n {
        for (j, r) in row.iter_mut().enumerate() {
            *r = d.x()[(i, j)];
        }
        let p = setting.propensity(&row);
        let b = setting.baseline(&row);
        let tau = setting.effect(&row);
        p_hat.push(p);
        mu.push(b + (p - 0.5) * tau);
        mu_treated.push(b + 0.5 * tau);
        mu_control.push(b - 0.5 * tau);
    }
    NuisanceValues::new(p_hat)
        .with_mean(mu)
        .with_arm_means(mu_treated, mu_control)
}
