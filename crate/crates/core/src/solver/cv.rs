//! K-fold cross-validation over a two-dimensional penalty grid. The caller
//! supplies one problem per roughness level (the rotation folded into the
//! group bases differs), plus a shared sparsity grid; folds are identical
//! across problems so the cells are comparable.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{solve_l1, solve_l2, Coefs, PenalizedProblem, SolverConfig, SolverError};
use crate::Loss;

/// Settings for [`cross_validate`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvConfig {
    pub n_folds: usize,
    /// Seed for the fold shuffle; folds depend only on this and `n`.
    pub seed: u64,
    /// Apply the one-standard-error rule toward stronger shrinkage.
    pub one_se: bool,
    /// Solver settings used for the fold fits. Loosening these speeds up
    /// the search; the final refit should use tight settings.
    pub solver: SolverConfig,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            n_folds: 5,
            seed: 0x5eed,
            one_se: true,
            solver: SolverConfig::default(),
        }
    }
}

/// One grid cell of the search.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvCell {
    pub lambda1: f64,
    pub lambda2: f64,
    /// Held-out loss averaged over folds.
    pub mean_loss: f64,
    /// Standard error of the fold means.
    pub se_loss: f64,
}

/// Outcome of the grid search.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvResult {
    pub lambda1: f64,
    pub lambda2: f64,
    pub table: Vec<CvCell>,
}

/// Log-spaced descending sparsity grid from `lambda_max` down to
/// `lambda_max * min_ratio`.
pub fn default_lambda1_grid(lambda_max: f64, n_points: usize, min_ratio: f64) -> Vec<f64> {
    if !(lambda_max > 0.0) || !lambda_max.is_finite() || n_points == 0 {
        return vec![0.0];
    }
    if n_points == 1 {
        return vec![lambda_max];
    }
    let lo = lambda_max * min_ratio.max(1e-12);
    let log_hi = lambda_max.ln();
    let log_lo = lo.ln();
    (0..n_points)
        .map(|i| {
            let t = i as f64 / (n_points - 1) as f64;
            (log_hi + t * (log_lo - log_hi)).exp()
        })
        .collect()
}

/// Deterministic round-robin fold labels after a seeded shuffle.
fn fold_labels(n: usize, n_folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut labels = vec![0usize; n];
    for (pos, &row) in order.iter().enumerate() {
        labels[row] = pos % n_folds;
    }
    labels
}

fn held_out_loss(p_test: &PenalizedProblem, coefs: &Coefs, loss: Loss) -> f64 {
    let preds = p_test.predictions(coefs);
    let n = p_test.n() as f64;
    p_test
        .y()
        .iter()
        .zip(&preds)
        .map(|(y, f)| match loss {
            Loss::L1 => (y - f).abs(),
            Loss::L2 => (y - f) * (y - f),
        })
        .sum::<f64>()
        / n
}

/// Searches the `(lambda1, lambda2)` grid by K-fold cross-validation.
///
/// `problems` pairs each roughness level with its problem; all must share
/// the same number of rows. Fits along each fold's sparsity path are warm
/// started from the previous (larger) value; the `(problem, fold)` paths
/// run in parallel and are aggregated in a fixed order, so results do not
/// depend on the thread schedule.
///
/// Selection takes the cell with the smallest mean held-out loss, then
/// optionally moves toward larger `lambda1` within the winning roughness
/// level. The move uses the standard error of the per-fold paired loss
/// difference against the minimizing cell, not the marginal cell error:
/// fold noise is shared across cells, so marginal errors grossly overstate
/// the uncertainty of comparisons and would shrink real signal away.
pub fn cross_validate(
    problems: &[(f64, PenalizedProblem)],
    lambda1_grid: &[f64],
    loss: Loss,
    cfg: &CvConfig,
) -> Result<CvResult, SolverError> {
    if problems.is_empty() {
        return Err(SolverError::BadProblem("no problems to cross-validate".into()));
    }
    if lambda1_grid.is_empty() {
        return Err(SolverError::BadProblem("empty lambda1 grid".into()));
    }
    let n = problems[0].1.n();
    if problems.iter().any(|(_, p)| p.n() != n) {
        return Err(SolverError::BadProblem(
            "problems disagree on the number of rows".into(),
        ));
    }
    if cfg.n_folds < 2 || cfg.n_folds > n {
        return Err(SolverError::BadProblem(format!(
            "{} folds for {} rows",
            cfg.n_folds, n
        )));
    }
    let mut grid: Vec<f64> = lambda1_grid.to_vec();
    if grid.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(SolverError::BadProblem("bad lambda1 grid".into()));
    }
    grid.sort_by(|a, b| b.partial_cmp(a).unwrap());
    grid.dedup();

    let labels = fold_labels(n, cfg.n_folds, cfg.seed);
    let folds: Vec<(Vec<usize>, Vec<usize>)> = (0..cfg.n_folds)
        .map(|fold| {
            let train: Vec<usize> = (0..n).filter(|i| labels[*i] != fold).collect();
            let test: Vec<usize> = (0..n).filter(|i| labels[*i] == fold).collect();
            (train, test)
        })
        .collect();
    if folds.iter().any(|(tr, te)| tr.is_empty() || te.is_empty()) {
        return Err(SolverError::BadProblem("empty cross-validation fold".into()));
    }

    let tasks: Vec<(usize, usize)> = (0..problems.len())
        .flat_map(|pi| (0..cfg.n_folds).map(move |fold| (pi, fold)))
        .collect();
    // path_losses[(pi, fold)] -> held-out loss per grid point
    let path_losses: Result<Vec<Vec<f64>>, SolverError> = tasks
        .par_iter()
        .map(|&(pi, fold)| {
            let problem = &problems[pi].1;
            let (train, test) = &folds[fold];
            let p_train = problem.subset(train)?;
            let p_test = problem.subset(test)?;
            let mut warm: Option<Coefs> = None;
            let mut losses = Vec::with_capacity(grid.len());
            for &l1 in &grid {
                let fit = match loss {
                    Loss::L1 => solve_l1(&p_train, l1, &cfg.solver, warm.as_ref())?,
                    Loss::L2 => solve_l2(&p_train, l1, &cfg.solver, warm.as_ref())?,
                };
                losses.push(held_out_loss(&p_test, &fit.coefs, loss));
                warm = Some(fit.coefs);
            }
            Ok(losses)
        })
        .collect();
    let path_losses = path_losses?;

    // fold_losses[cell][f]; cells ordered problem-major then grid order
    let mut fold_losses: Vec<Vec<f64>> = vec![vec![0.0; cfg.n_folds]; problems.len() * grid.len()];
    for (t, &(pi, fold)) in tasks.iter().enumerate() {
        for (g, &l) in path_losses[t].iter().enumerate() {
            fold_losses[pi * grid.len() + g][fold] = l;
        }
    }
    let k = cfg.n_folds as f64;
    let mut table = Vec::with_capacity(fold_losses.len());
    for (cell, losses) in fold_losses.iter().enumerate() {
        let mean = losses.iter().sum::<f64>() / k;
        let var = losses.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1.0);
        table.push(CvCell {
            lambda1: grid[cell % grid.len()],
            lambda2: problems[cell / grid.len()].0,
            mean_loss: mean,
            se_loss: (var / k).sqrt(),
        });
    }

    let best = table
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| a.mean_loss.partial_cmp(&b.mean_loss).unwrap())
        .map(|(i, _)| i)
        .expect("table is nonempty");
    let best_lambda2 = table[best].lambda2;
    let mut chosen1 = table[best].lambda1;
    if cfg.one_se {
        let mut above: Vec<usize> = table
            .iter()
            .enumerate()
            .filter(|(_, c)| c.lambda2 == best_lambda2 && c.lambda1 > chosen1)
            .map(|(i, _)| i)
            .collect();
        above.sort_by(|a, b| table[*a].lambda1.partial_cmp(&table[*b].lambda1).unwrap());
        // Walk upward one cell at a time and stop at the first cell whose
        // paired difference exceeds its standard error; scanning every cell
        // instead would hand the pick to whichever far cell drew a lucky
        // fold split.
        for i in above {
            let diffs: Vec<f64> = fold_losses[i]
                .iter()
                .zip(&fold_losses[best])
                .map(|(a, b)| a - b)
                .collect();
            let mean_diff = diffs.iter().sum::<f64>() / k;
            let var_diff = diffs
                .iter()
                .map(|v| (v - mean_diff) * (v - mean_diff))
                .sum::<f64>()
                / (k - 1.0);
            let se_diff = (var_diff / k).sqrt();
            if mean_diff > se_diff + 1e-12 {
                break;
            }
            chosen1 = table[i].lambda1;
        }
    }
    Ok(CvResult {
        lambda1: chosen1,
        lambda2: best_lambda2,
        table,
    })
}
