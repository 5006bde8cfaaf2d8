//! Robust estimation of heterogeneous treatment effects.
//!
//! The crate fits conditional average treatment effect (CATE) models of the
//! form `Y = b0(X) + (T/2) tau(X) + noise` for a binary treatment `T` coded as
//! -1/+1. The effect function `tau` is represented as an additive B-spline
//! expansion and estimated by minimizing a weighted absolute (or squared) loss
//! built from a score transformation of the outcome, with a group SCAD penalty
//! for covariate selection and an optional curvature penalty for smoothness.
//!
//! Module layout:
//! - [`data`]: dataset container, CSV ingestion, covariate standardization
//! - [`splines`]: B-spline bases, Gram/curvature matrices, group transforms
//! - [`learners`]: weighting/centering presets (MCM, MCM-EA, RL, AL, IPW, AIPW)
//!   and the transformed-regression construction
//! - [`nuisance`]: gradient-boosted estimators for propensity and mean outcomes
//! - [`solver`]: penalized least-absolute-deviation and least-squares solvers,
//!   cross-validation, and an exact LP-based LAD reference
//! - [`pipeline`]: end-to-end fitting, prediction, Q-learning baseline,
//!   marginal screening, bootstrap confidence bands
//! - [`simlab`]: synthetic data generators, evaluation metrics, value
//!   functions, replication harness

use serde::{Deserialize, Serialize};

pub mod data;
pub mod learners;
pub mod nuisance;
pub mod pipeline;
pub mod simlab;
pub mod solver;
pub mod splines;

pub use data::{load_dataset, standardize, ColKind, Dataset, DatasetError, Standardizer};
pub use learners::{check_constraints, transform_samples, Learner, NuisanceValues};
pub use pipeline::{
    bootstrap_ci, fit_cate, fit_cate_with_nuisance, fit_qlearner, predict_cate, recommend,
    BootstrapBand, CateModel, Direction, FitConfig, FitReport, NisMode, PipelineError, Prediction,
    QlBaseline,
};
pub use simlab::{
    ensemble_metrics, generate, generate_validation, optimal_value, policy_value, render_results_csv,
    replicate, selection_rates, value_function, EnsembleMetrics, Method, MethodSpec,
    MethodSummary, ReplicateConfig, ScenarioResult, SimError, SimSetting, ValidationSet,
    ValueEstimate,
};

/// Which loss drives an estimator: absolute error or squared error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    L1,
    L2,
}

impl std::fmt::Display for Loss {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Loss::L1 => write!(f, "l1"),
            Loss::L2 => write!(f, "l2"),
        }
    }
}

impl std::str::FromStr for Loss {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "l1" | "lad" | "absolute" => Ok(Loss::L1),
            "l2" | "ls" | "squared" => Ok(Loss::L2),
            other => Err(format!("unknown loss `{other}`; expected l1 or l2")),
        }
    }
}
