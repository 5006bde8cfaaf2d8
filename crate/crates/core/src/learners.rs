//! Score-function presets and the transformed-regression construction.
//!
//! Every estimator here is defined by a weight `w(x, t)` and a centering
//! factor `c(x, t)` entering the score
//! `w * c * (Y - g(X) - c * tau(X))`, together with an augmentation `g`.
//! The pair must satisfy, at every propensity value `p`:
//!
//! - C1: `p*w(1)*c(1) + (1-p)*w(-1)*c(-1) = 0` (scores are conditionally
//!   unbiased),
//! - C2: `c(1) - c(-1) = 1` (the coefficient of `tau` picks up the full
//!   treatment contrast),
//! - C3: `w*c != 0` (no subject is silently dropped).
//!
//! Solving the score equation is equivalent to a weighted regression with
//! outcome `w*(Y - g)` and regression weight `w*c` under absolute error, or
//! `sqrt(w)*(Y - g)` against `sqrt(w)*c` under squared error, which is how
//! [`transform_samples`] hands the problem to the solver.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::Loss;

#[derive(Debug, thiserror::Error)]
pub enum LearnerError {
    #[error("{learner} needs nuisance values `{field}` but they were not provided")]
    MissingNuisance {
        learner: String,
        field: &'static str,
    },
    #[error("nuisance vector `{field}` has {got} entries, dataset has {expected}")]
    LengthMismatch {
        field: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("weight function returned {value} at row {row}; weights must be positive")]
    BadWeight { row: usize, value: f64 },
    #[error("transformed sample at row {row} is not finite")]
    NonFinite { row: usize },
}

/// Plug-in nuisance estimates evaluated at the sample points.
///
/// `p_hat` is always required. The mean fields are optional and only
/// checked when a learner actually uses them. Propensities are clipped to
/// `[clip, 1 - clip]` wherever they are consumed.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct NuisanceValues {
    pub p_hat: Vec<f64>,
    pub mu: Option<Vec<f64>>,
    pub mu_treated: Option<Vec<f64>>,
    pub mu_control: Option<Vec<f64>>,
    pub clip: f64,
}

impl NuisanceValues {
    pub fn new(p_hat: Vec<f64>) -> Self {
        NuisanceValues {
            p_hat,
            mu: None,
            mu_treated: None,
            mu_control: None,
            clip: 0.01,
        }
    }

    pub fn with_mean(mut self, mu: Vec<f64>) -> Self {
        self.mu = Some(mu);
        self
    }

    pub fn with_arm_means(mut self, treated: Vec<f64>, control: Vec<f64>) -> Self {
        self.mu_treated = Some(treated);
        self.mu_control = Some(control);
        self
    }

    /// Propensity at row `i`, clipped away from 0 and 1.
    pub fn propensity(&self, i: usize) -> f64 {
        self.p_hat[i].clamp(self.clip, 1.0 - self.clip)
    }
}

/// Nuisance quantities a learner needs before it can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Requirement {
    Propensity,
    Mean,
    ArmMeans,
}

/// A weight/centering pair defining a score-equation estimator.
pub trait ScoreFns {
    fn weight(&self, t: i8, p: f64) -> f64;
    fn center(&self, t: i8, p: f64) -> f64;
    fn label(&self) -> String;
}

/// The named estimators.
///
/// - `Mcm`: modified covariates, weight `1/(tp + (1-t)/2)`, no augmentation
/// - `McmEa`: MCM with the outcome centered at the overall mean `mu`
/// - `Rl`: R-learning; unit weight, centering `(t - 2p + 1)/2`, centered at `mu`
/// - `Al`: A-learning; same score as `Rl` but `mu` approximated by a linear fit
/// - `Ipw`: inverse propensity weighting of the modified outcome
/// - `Aipw`: IPW augmented with `(1-p)*mu1 + p*mu-1` for double robustness
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Learner {
    Mcm,
    McmEa,
    Rl,
    Al,
    Ipw,
    Aipw,
}

impl Learner {
    pub fn all() -> [Learner; 6] {
        [
            Learner::Mcm,
            Learner::McmEa,
            Learner::Rl,
            Learner::Al,
            Learner::Ipw,
            Learner::Aipw,
        ]
    }

    /// Which nuisance estimates must be present in [`NuisanceValues`].
    ///
    /// `Al` lists `Mean` like `Rl` does; the pipeline fills it with a linear
    /// fit instead of a boosted one.
    pub fn requires(&self) -> &'static [Requirement] {
        match self {
            Learner::Mcm | Learner::Ipw => &[Requirement::Propensity],
            Learner::McmEa | Learner::Rl | Learner::Al => {
                &[Requirement::Propensity, Requirement::Mean]
            }
            Learner::Aipw => &[Requirement::Propensity, Requirement::ArmMeans],
        }
    }

    /// Augmentation `g` evaluated at every sample point.
    pub fn augmentation(&self, nv: &NuisanceValues, n: usize) -> Result<Vec<f64>, LearnerError> {
        let need = |field: Option<&Vec<f64>>, name: &'static str| -> Result<Vec<f64>, LearnerError> {
            let v = field.ok_or_else(|| LearnerError::MissingNuisance {
                learner: self.label(),
                field: name,
            })?;
            if v.len() != n {
                return Err(LearnerError::LengthMismatch {
                    field: name,
                    got: v.len(),
                    expected: n,
                });
            }
            Ok(v.clone())
        };
        match self {
            Learner::Mcm | Learner::Ipw => Ok(vec![0.0; n]),
            Learner::McmEa | Learner::Rl | Learner::Al => need(nv.mu.as_ref(), "mu"),
            Learner::Aipw => {
                let mu1 = need(nv.mu_treated.as_ref(), "mu_treated")?;
                let mu0 = need(nv.mu_control.as_ref(), "mu_control")?;
                Ok((0..n)
                    .map(|i| {
                        let p = nv.propensity(i);
                        (1.0 - p) * mu1[i] + p * mu0[i]
                    })
                    .collect())
            }
        }
    }
}

impl ScoreFns for Learner {
    fn weight(&self, t: i8, p: f64) -> f64 {
        let t = t as f64;
        match self {
            Learner::Mcm | Learner::McmEa => 1.0 / (t * p + (1.0 - t) / 2.0),
            Learner::Rl | Learner::Al => 1.0,
            Learner::Ipw | Learner::Aipw => {
                let d = (t + 1.0) / 2.0;
                let v = d / p - (1.0 - d) / (1.0 - p);
                v * v
            }
        }
    }

    fn center(&self, t: i8, p: f64) -> f64 {
        let t = t as f64;
        match self {
            Learner::Mcm | Learner::McmEa => t / 2.0,
            Learner::Rl | Learner::Al => (t - 2.0 * p + 1.0) / 2.0,
            Learner::Ipw | Learner::Aipw => 2.0 * p * (1.0 - p) / (t - 2.0 * p + 1.0),
        }
    }

    fn label(&self) -> String {
        self.to_string()
    }
}

impl std::fmt::Display for Learner {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Learner::Mcm => "MCM",
            Learner::McmEa => "MCM-EA",
            Learner::Rl => "RL",
            Learner::Al => "AL",
            Learner::Ipw => "IPW",
            Learner::Aipw => "AIPW",
        };
        write!(f, "{name}")
    }
}

impl std::str::FromStr for Learner {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "mcm" => Ok(Learner::Mcm),
            "mcm_ea" | "mcmea" => Ok(Learner::McmEa),
            "rl" => Ok(Learner::Rl),
            "al" => Ok(Learner::Al),
            "ipw" => Ok(Learner::Ipw),
            "aipw" => Ok(Learner::Aipw),
            other => Err(format!(
                "unknown learner `{other}`; expected one of mcm, mcm_ea, rl, al, ipw, aipw"
            )),
        }
    }
}

/// A user-supplied weight/centering pair, mainly for constraint exploration.
#[derive(Clone)]
pub struct CustomScore {
    pub name: String,
    pub w: fn(i8, f64) -> f64,
    pub c: fn(i8, f64) -> f64,
}

impl CustomScore {
    pub fn new(name: impl Into<String>, w: fn(i8, f64) -> f64, c: fn(i8, f64) -> f64) -> Self {
        CustomScore {
            name: name.into(),
            w,
            c,
        }
    }

    /// The half-contrast centering `c = t/2` with the weight chosen so that
    /// the combined factor `w*c` equals `t - 2p + 1`, which balances the two
    /// arms for any propensity. Pairs with an arbitrary augmentation.
    pub fn propensity_balanced() -> Self {
        CustomScore::new(
            "custom-balanced",
            |t, p| {
                if t == 1 {
                    4.0 * (1.0 - p)
                } else {
                    4.0 * p
                }
            },
            |t, _| t as f64 / 2.0,
        )
    }
}

impl ScoreFns for CustomScore {
    fn weight(&self, t: i8, p: f64) -> f64 {
        (self.w)(t, p)
    }

    fn center(&self, t: i8, p: f64) -> f64 {
        (self.c)(t, p)
    }

    fn label(&self) -> String {
        self.name.clone()
    }
}

/// Worst-case constraint violations over a propensity grid.
#[derive(Debug, Clone)]
pub struct ConstraintReport {
    pub label: String,
    /// Largest absolute value of `p*w(1)*c(1) + (1-p)*w(-1)*c(-1)`.
    pub max_c1_residual: f64,
    /// Largest absolute value of `c(1) - c(-1) - 1`.
    pub max_c2_residual: f64,
    /// Smallest `|w*c|` seen over both arms.
    pub min_abs_wc: f64,
}

impl ConstraintReport {
    pub fn satisfied(&self, tol: f64, floor: f64) -> bool {
        self.max_c1_residual < tol && self.max_c2_residual < tol && self.min_abs_wc > floor
    }
}

/// Evaluates the three score constraints on a propensity grid
/// (default `0.01, 0.02, ..., 0.99` when `grid` is empty).
pub fn check_constraints<S: ScoreFns>(spec: &S, grid: &[f64]) -> ConstraintReport {
    let default_grid: Vec<f64>;
    let grid = if grid.is_empty() {
        default_grid = (1..100).map(|k| k as f64 / 100.0).collect();
        &default_grid
    } else {
        grid
    };
    let mut c1 = 0.0f64;
    let mut c2 = 0.0f64;
    let mut wc_min = f64::INFINITY;
    for &p in grid {
        let w1 = spec.weight(1, p);
        let w0 = spec.weight(-1, p);
        let c_1 = spec.center(1, p);
        let c_0 = spec.center(-1, p);
        c1 = c1.max((p * w1 * c_1 + (1.0 - p) * w0 * c_0).abs());
        c2 = c2.max((c_1 - c_0 - 1.0).abs());
        wc_min = wc_min.min((w1 * c_1).abs()).min((w0 * c_0).abs());
    }
    ConstraintReport {
        label: spec.label(),
        max_c1_residual: c1,
        max_c2_residual: c2,
        min_abs_wc: wc_min,
    }
}

/// Outcome and weight columns of the transformed regression.
///
/// The fitted function solves
/// `min (1/n) sum rho(y_star_i - w_star_i * tau(x_i))`
/// where `rho` is the loss the pair was built for.
#[derive(Debug, Clone)]
pub struct TransformedSamples {
    pub y_star: Vec<f64>,
    pub w_star: Vec<f64>,
}

/// Builds the transformed outcome/weight pair for a dataset.
///
/// Under absolute error the score is folded as `(w*(y-g), w*c)`; under
/// squared error as `(sqrt(w)*(y-g), sqrt(w)*c)`, so that the squared
/// objective carries weight `w` exactly once.
pub fn transform_samples<S: ScoreFns>(
    d: &Dataset,
    spec: &S,
    g: &[f64],
    nv: &NuisanceValues,
    loss: Loss,
) -> Result<TransformedSamples, LearnerError> {
    let n = d.n();
    if nv.p_hat.len() != n {
        return Err(LearnerError::LengthMismatch {
            field: "p_hat",
            got: nv.p_hat.len(),
            expected: n,
        });
    }
    if g.len() != n {
        return Err(LearnerError::LengthMismatch {
            field: "g",
            got: g.len(),
            expected: n,
        });
    }
    let mut y_star = Vec::with_capacity(n);
    let mut w_star = Vec::with_capacity(n);
    for i in 0..n {
        let p = nv.propensity(i);
        let t = d.t()[i];
        let w = spec.weight(t, p);
        if !(w.is_finite() && w > 0.0) {
            return Err(LearnerError::BadWeight { row: i, value: w });
        }
        let c = spec.center(t, p);
        let centered = d.y()[i] - g[i];
        let (ys, ws) = match loss {
            Loss::L1 => (w * centered, w * c),
            Loss::L2 => {
                let s = w.sqrt();
                (s * centered, s * c)
            }
        };
        if !(ys.is_finite() && ws.is_finite()) {
            return Err(LearnerError::NonFinite { row: i });
        }
        y_star.push(ys);
        w_star.push(ws);
    }
    Ok(TransformedSamples { y_star, w_star })
}
