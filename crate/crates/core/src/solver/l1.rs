//! Absolute-error path: smoothed block coordinate descent inside an outer
//! loop that re-linearizes the SCAD penalty and only ever accepts iterates
//! that do not increase the true objective.

use nalgebra::{DMatrix, DVector};

use super::{
    objective, scad_deriv, Coefs, PenalizedFit, PenalizedProblem, SolverConfig, SolverError,
};
use crate::Loss;

/// Huber-style smoothing of `|r|` with width `eta`.
fn smooth_abs(r: f64, eta: f64) -> f64 {
    let a = r.abs();
    if a <= eta {
        r * r / (2.0 * eta)
    } else {
        a - 0.5 * eta
    }
}

/// Derivative of [`smooth_abs`]: the clipped residual `clamp(r/eta, -1, 1)`.
fn psi(r: f64, eta: f64) -> f64 {
    (r / eta).clamp(-1.0, 1.0)
}

fn smoothed_loss(r: &[f64], eta: f64) -> f64 {
    r.iter().map(|&v| smooth_abs(v, eta)).sum::<f64>() / r.len() as f64
}

/// Robust scale of the response, used to pick the initial smoothing width.
fn response_scale(y: &[f64]) -> f64 {
    let mut sorted: Vec<f64> = y.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let med = sorted[sorted.len() / 2];
    let mut dev: Vec<f64> = y.iter().map(|v| (v - med).abs()).collect();
    dev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mad = dev[dev.len() / 2];
    if mad > 0.0 {
        mad
    } else {
        let mean_abs = y.iter().map(|v| v.abs()).sum::<f64>() / y.len() as f64;
        if mean_abs > 0.0 {
            mean_abs
        } else {
            1.0
        }
    }
}

struct Workspace {
    r_trial: Vec<f64>,
    psi_buf: Vec<f64>,
}

/// One damped Newton step on the smoothed loss in the unpenalized block.
/// Returns true if the state moved.
fn unpen_newton_step(
    p: &PenalizedProblem,
    coefs: &mut Coefs,
    r: &mut Vec<f64>,
    eta: f64,
    ws: &mut Workspace,
) -> bool {
    let n = p.n();
    let nf = n as f64;
    let k0 = p.n_unpen();
    let mut grad = DVector::zeros(k0);
    for k in 0..k0 {
        let col = p.unpen_col(k);
        let mut acc = 0.0;
        for i in 0..n {
            acc += col[i] * psi(r[i], eta);
        }
        grad[k] = -acc / nf;
    }
    let mut hess = DMatrix::zeros(k0, k0);
    let mut band = 0usize;
    for i in 0..n {
        if r[i].abs() <= eta {
            band += 1;
            for a in 0..k0 {
                let ua = p.unpen_col(a)[i];
                for b in a..k0 {
                    hess[(a, b)] += ua * p.unpen_col(b)[i];
                }
            }
        }
    }
    if band == 0 {
        // outside every kink the loss is locally linear; fall back to the
        // global curvature bound so the step stays sane
        hess = DMatrix::identity(k0, k0) * (p.unpen_spectral() / eta) * nf * eta;
    }
    for a in 0..k0 {
        for b in 0..a {
            hess[(a, b)] = hess[(b, a)];
        }
        hess[(a, a)] += 1e-9 * p.unpen_spectral() * nf * eta + 1e-300;
    }
    hess /= nf * eta;
    let dir = match hess.clone().cholesky() {
        Some(ch) => ch.solve(&(-grad.clone())),
        None => -grad.clone() * (eta / p.unpen_spectral()),
    };
    let slope: f64 = grad.dot(&dir);
    if !slope.is_finite() || slope >= 0.0 {
        return false;
    }
    let base = smoothed_loss(r, eta);
    let mut t = 1.0f64;
    for _ in 0..40 {
        let trial = &mut ws.r_trial;
        trial.copy_from_slice(r);
        for k in 0..k0 {
            let step = t * dir[k];
            if step != 0.0 {
                let col = p.unpen_col(k);
                for i in 0..n {
                    trial[i] -= step * col[i];
                }
            }
        }
        let cand = smoothed_loss(trial, eta);
        if cand <= base + 1e-4 * t * slope {
            for k in 0..k0 {
                coefs.alpha[k] += t * dir[k];
            }
            std::mem::swap(r, &mut ws.r_trial);
            return true;
        }
        t *= 0.5;
    }
    false
}

/// Proximal step on one group: gradient of the smoothed loss, conservative
/// curvature bound, group soft-threshold. Monotone by majorization.
fn group_prox_step(
    p: &PenalizedProblem,
    j: usize,
    coefs: &mut Coefs,
    r: &mut [f64],
    nu: f64,
    eta: f64,
    ws: &mut Workspace,
) -> bool {
    let n = p.n();
    let nf = n as f64;
    let g = p.group(j);
    let w = g.width();
    for i in 0..n {
        ws.psi_buf[i] = psi(r[i], eta);
    }
    let lip = g.spectral_bound() / eta;
    let b = &coefs.beta[j];
    let mut u = vec![0.0; w];
    for k in 0..w {
        let col = g.col(k, n);
        let mut acc = 0.0;
        for i in 0..n {
            acc += col[i] * ws.psi_buf[i];
        }
        u[k] = b[k] + acc / (nf * lip);
    }
    let unorm: f64 = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    let thr = nu / lip;
    let shrink = if unorm <= thr { 0.0 } else { 1.0 - thr / unorm };
    let mut moved = false;
    for k in 0..w {
        let nb = u[k] * shrink;
        let delta = nb - coefs.beta[j][k];
        if delta != 0.0 {
            moved = true;
            let col = g.col(k, n);
            for i in 0..n {
                r[i] -= delta * col[i];
            }
            coefs.beta[j][k] = nb;
        }
    }
    moved
}

/// Inner solve at fixed smoothing width and fixed penalty linearization.
fn inner_descent(
    p: &PenalizedProblem,
    coefs: &mut Coefs,
    r: &mut Vec<f64>,
    nu: &[f64],
    eta: f64,
    cfg: &SolverConfig,
    ws: &mut Workspace,
) {
    let surrogate = |coefs: &Coefs, r: &[f64]| -> f64 {
        let pen: f64 = coefs
            .beta
            .iter()
            .zip(nu)
            .map(|(b, &v)| v * b.iter().map(|x| x * x).sum::<f64>().sqrt())
            .sum();
        smoothed_loss(r, eta) + pen
    };
    let mut prev = surrogate(coefs, r);
    for _ in 0..cfg.max_inner {
        unpen_newton_step(p, coefs, r, eta, ws);
        for j in 0..p.n_groups() {
            group_prox_step(p, j, coefs, r, nu[j], eta, ws);
        }
        let now = surrogate(coefs, r);
        if prev - now <= 0.1 * cfg.tol * (1.0 + now.abs()) {
            break;
        }
        prev = now;
    }
}

fn residuals(p: &PenalizedProblem, coefs: &Coefs) -> Vec<f64> {
    let preds = p.predictions(coefs);
    p.y().iter().zip(&preds).map(|(y, f)| y - f).collect()
}

/// Best unpenalized-block-only fit (all groups pinned at zero), used for
/// the penalty ceiling `lambda_max` and the full-shrinkage shortcut.
pub(super) fn fit_unpen_only(
    p: &PenalizedProblem,
    cfg: &SolverConfig,
) -> Result<Vec<f64>, SolverError> {
    let mut coefs = p.zero_coefs();
    let mut r = p.y().to_vec();
    let scale = response_scale(p.y());
    let eta0 = (cfg.eta0_frac * scale).max(cfg.eta_min);
    let mut ws = Workspace {
        r_trial: vec![0.0; p.n()],
        psi_buf: vec![0.0; p.n()],
    };
    let mut prev = smoothed_loss(&r, eta0);
    for k in 0..cfg.max_outer {
        let eta = (eta0 * 0.5f64.powi(k as i32)).max(cfg.eta_min);
        for _ in 0..cfg.max_inner {
            if !unpen_newton_step(p, &mut coefs, &mut r, eta, &mut ws) {
                break;
            }
        }
        let now = smoothed_loss(&r, eta);
        if !now.is_finite() {
            return Err(SolverError::NonFinite("unpenalized block fit"));
        }
        if eta <= cfg.eta_min * (1.0 + 1e-9) && (prev - now).abs() <= cfg.tol * (1.0 + now.abs()) {
            break;
        }
        prev = now;
    }
    Ok(coefs.alpha)
}

/// Minimizes the group-SCAD-penalized absolute-error objective.
///
/// `warm` seeds the coefficients (shapes must match the problem). The
/// returned trace holds the true objective after every outer iteration and
/// never increases: an outer candidate that would raise it is discarded.
pub fn solve_l1(
    p: &PenalizedProblem,
    lambda1: f64,
    cfg: &SolverConfig,
    warm: Option<&Coefs>,
) -> Result<PenalizedFit, SolverError> {
    cfg.validate()?;
    if lambda1 < 0.0 || !lambda1.is_finite() {
        return Err(SolverError::BadProblem(format!("lambda1 = {lambda1}")));
    }
    let n = p.n();
    let mut coefs = match warm {
        Some(c) => {
            if c.alpha.len() != p.n_unpen()
                || c.beta.len() != p.n_groups()
                || c.beta
                    .iter()
                    .enumerate()
                    .any(|(j, b)| b.len() != p.group(j).width())
            {
                return Err(SolverError::BadProblem(
                    "warm-start coefficients do not match the problem shape".into(),
                ));
            }
            c.clone()
        }
        None => p.zero_coefs(),
    };
    let scale = response_scale(p.y());
    let cold_eta0 = (cfg.eta0_frac * scale).max(cfg.eta_min);
    let eta0 = if warm.is_some() {
        (cfg.eta_min * 256.0).min(cold_eta0)
    } else {
        cold_eta0
    };
    let mut ws = Workspace {
        r_trial: vec![0.0; n],
        psi_buf: vec![0.0; n],
    };

    // full-shrinkage shortcut: with a zero start and a penalty at or above
    // the subgradient ceiling, the zero solution is already stationary
    if coefs.beta.iter().all(|b| b.iter().all(|v| *v == 0.0)) {
        coefs.alpha = fit_unpen_only(p, cfg)?;
        let r = residuals(p, &coefs);
        let nf = n as f64;
        let mut ceiling = 0.0f64;
        for j in 0..p.n_groups() {
            let g = p.group(j);
            let mut sq = 0.0;
            for k in 0..g.width() {
                let dot: f64 = g
                    .col(k, n)
                    .iter()
                    .zip(&r)
                    .map(|(z, ri)| z * ri.signum())
                    .sum();
                sq += (dot / nf) * (dot / nf);
            }
            ceiling = ceiling.max(sq.sqrt());
        }
        if lambda1 >= ceiling * (1.0 - 1e-10) {
            let parts = objective(p, &coefs, lambda1, cfg.gamma, Loss::L1);
            return Ok(PenalizedFit {
                active: vec![false; p.n_groups()],
                coefs,
                objective: parts,
                trace: vec![parts.total],
                converged: true,
                iterations: 0,
            });
        }
    }

    let mut true_parts = objective(p, &coefs, lambda1, cfg.gamma, Loss::L1);
    if !true_parts.total.is_finite() {
        return Err(SolverError::NonFinite("initial objective"));
    }
    let mut trace = vec![true_parts.total];
    let mut converged = false;
    let mut iterations = 0;
    for k in 0..cfg.max_outer {
        iterations = k + 1;
        let eta = (eta0 * 0.5f64.powi(k as i32)).max(cfg.eta_min);
        let norms = coefs.group_norms();
        let nu: Vec<f64> = norms
            .iter()
            .map(|&nrm| scad_deriv(nrm, lambda1, cfg.gamma))
            .collect();
        let mut cand = coefs.clone();
        let mut r_cand = residuals(p, &cand);
        inner_descent(p, &mut cand, &mut r_cand, &nu, eta, cfg, &mut ws);
        let cand_parts = objective(p, &cand, lambda1, cfg.gamma, Loss::L1);
        if !cand_parts.total.is_finite() {
            return Err(SolverError::NonFinite("outer iteration"));
        }
        let improved = true_parts.total - cand_parts.total;
        if cand_parts.total <= true_parts.total + 1e-12 * (1.0 + true_parts.total.abs()) {
            coefs = cand;
            true_parts = cand_parts;
        }
        trace.push(true_parts.total);
        if eta <= cfg.eta_min * (1.0 + 1e-9)
            && improved.max(0.0) <= cfg.tol * (1.0 + true_parts.total.abs())
        {
            converged = true;
            break;
        }
    }
    let active: Vec<bool> = coefs
        .beta
        .iter()
        .map(|b| b.iter().any(|v| *v != 0.0))
        .collect();
    Ok(PenalizedFit {
        active,
        coefs,
        objective: true_parts,
        trace,
        converged,
        iterations,
    })
}
