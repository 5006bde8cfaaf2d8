//! Squared-error path: exact block coordinate descent. Each group update
//! solves its stationarity system in the eigenbasis of the group Gram
//! matrix, so no step sizes or smoothing are involved. All penalized solves
//! carry the small `ridge` stabilizer from [`SolverConfig`]: without it a
//! saturated penalty leaves rank-deficient directions entirely unpriced and
//! the exact solves drift to astronomical coefficients along them.

use nalgebra::{DMatrix, DVector};

use super::{
    objective, scad_deriv, Coefs, PenalizedFit, PenalizedProblem, SolverConfig, SolverError,
};
use crate::Loss;

/// Eigendecomposition of `2 * (1/n) Z_j' Z_j`, fixed for the whole solve.
struct GroupEig {
    q: DMatrix<f64>,
    lambda: DVector<f64>,
}

fn group_eigs(p: &PenalizedProblem) -> Vec<GroupEig> {
    (0..p.n_groups())
        .map(|j| {
            let a = p.group(j).gram() * 2.0;
            let eig = a.symmetric_eigen();
            let mut lambda = eig.eigenvalues;
            for v in lambda.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            GroupEig {
                q: eig.eigenvectors,
                lambda,
            }
        })
        .collect()
}

/// Root of `sum_k u_k^2 / ((lambda_k + two_rho) s + nu)^2 = 1` in `s > 0`,
/// reached by monotone Newton with a bisection bracket as a safety net.
fn secular_root(u: &DVector<f64>, lambda: &DVector<f64>, two_rho: f64, nu: f64) -> f64 {
    let h = |s: f64| -> f64 {
        u.iter()
            .zip(lambda.iter())
            .map(|(&uk, &lk)| {
                let d = (lk + two_rho) * s + nu;
                uk * uk / (d * d)
            })
            .sum::<f64>()
    };
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    while h(hi) > 1.0 {
        lo = hi;
        hi *= 2.0;
        if hi > 1e300 {
            return hi;
        }
    }
    let mut s = lo;
    for _ in 0..200 {
        let hs = h(s);
        if (hs - 1.0).abs() < 1e-13 {
            break;
        }
        if hs > 1.0 {
            lo = s;
        } else {
            hi = s;
        }
        let dh: f64 = u
            .iter()
            .zip(lambda.iter())
            .map(|(&uk, &lk)| {
                let d = (lk + two_rho) * s + nu;
                -2.0 * uk * uk * (lk + two_rho) / (d * d * d)
            })
            .sum();
        let mut next = if dh < 0.0 { s - (hs - 1.0) / dh } else { hi };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - s).abs() < 1e-15 * (1.0 + s) {
            s = next;
            break;
        }
        s = next;
    }
    s
}

/// Exact minimizer of `(1/n)||r_j - Z_j b||^2 + rho ||b||^2 + nu ||b||`
/// for one group.
fn group_update(
    p: &PenalizedProblem,
    j: usize,
    eig: &GroupEig,
    coefs: &mut Coefs,
    r: &mut [f64],
    rho: f64,
    nu: f64,
) {
    let n = p.n();
    let nf = n as f64;
    let g = p.group(j);
    let w = g.width();
    let b_old = coefs.beta[j].clone();
    // v = (2/n) Z_j' r_j with r_j the partial residual including this group
    let mut v = DVector::zeros(w);
    for k in 0..w {
        let col = g.col(k, n);
        let mut acc = 0.0;
        for i in 0..n {
            acc += col[i] * r[i];
        }
        let mut gram_part = 0.0;
        for l in 0..w {
            gram_part += g.gram()[(k, l)] * b_old[l];
        }
        v[k] = 2.0 * acc / nf + 2.0 * gram_part;
    }
    let new_b: Vec<f64> = if nu == 0.0 {
        let mut a = g.gram() * 2.0;
        for kk in 0..w {
            a[(kk, kk)] += 2.0 * rho + 1e-12 * (1.0 + g.spectral_bound());
        }
        match a.cholesky() {
            Some(ch) => ch.solve(&v).iter().copied().collect(),
            None => b_old.clone(),
        }
    } else {
        let u = eig.q.transpose() * &v;
        if u.norm() <= nu {
            vec![0.0; w]
        } else {
            let s = secular_root(&u, &eig.lambda, 2.0 * rho, nu);
            let d = DVector::from_iterator(
                w,
                u.iter()
                    .zip(eig.lambda.iter())
                    .map(|(&uk, &lk)| s * uk / ((lk + 2.0 * rho) * s + nu)),
            );
            (&eig.q * d).iter().copied().collect()
        }
    };
    for k in 0..w {
        let delta = new_b[k] - b_old[k];
        if delta != 0.0 {
            let col = g.col(k, n);
            for i in 0..n {
                r[i] -= delta * col[i];
            }
        }
    }
    coefs.beta[j] = new_b;
}

/// Exact unpenalized-block solve given the current residual.
fn unpen_solve(p: &PenalizedProblem, coefs: &mut Coefs, r: &mut [f64]) -> Result<(), SolverError> {
    let n = p.n();
    let nf = n as f64;
    let k0 = p.n_unpen();
    let mut rhs = DVector::zeros(k0);
    for k in 0..k0 {
        let col = p.unpen_col(k);
        let mut acc = 0.0;
        for i in 0..n {
            acc += col[i] * r[i];
        }
        let mut gram_part = 0.0;
        for l in 0..k0 {
            gram_part += p.unpen_gram()[(k, l)] * coefs.alpha[l];
        }
        rhs[k] = acc / nf + gram_part;
    }
    let mut gram = p.unpen_gram().clone();
    for k in 0..k0 {
        gram[(k, k)] += 1e-12 * (1.0 + p.unpen_spectral());
    }
    let sol = gram
        .cholesky()
        .ok_or(SolverError::NonFinite("unpenalized block normal equations"))?
        .solve(&rhs);
    for k in 0..k0 {
        let delta = sol[k] - coefs.alpha[k];
        if delta != 0.0 {
            let col = p.unpen_col(k);
            for i in 0..n {
                r[i] -= delta * col[i];
            }
            coefs.alpha[k] = sol[k];
        }
    }
    Ok(())
}

fn sq_loss(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum::<f64>() / r.len() as f64
}

/// Joint ridge-stabilized least-squares solve over the unpenalized block
/// and every group, used whenever the linearized penalty vanishes entirely.
/// Returns `None` if the stacked normal equations are too ill-conditioned.
fn joint_least_squares(p: &PenalizedProblem, rhos: &[f64]) -> Option<Coefs> {
    let n = p.n();
    let k0 = p.n_unpen();
    let total: usize = k0 + (0..p.n_groups()).map(|j| p.group(j).width()).sum::<usize>();
    let col = |c: usize| -> &[f64] {
        if c < k0 {
            p.unpen_col(c)
        } else {
            let mut off = k0;
            for j in 0..p.n_groups() {
                let w = p.group(j).width();
                if c < off + w {
                    return p.group(j).col(c - off, n);
                }
                off += w;
            }
            unreachable!()
        }
    };
    let mut gram = DMatrix::zeros(total, total);
    let mut rhs = DVector::zeros(total);
    for a in 0..total {
        let ca = col(a);
        rhs[a] = ca.iter().zip(p.y()).map(|(x, y)| x * y).sum::<f64>();
        for b in a..total {
            let dot: f64 = ca.iter().zip(col(b)).map(|(x, z)| x * z).sum();
            gram[(a, b)] = dot;
            gram[(b, a)] = dot;
        }
    }
    let scale = gram.diagonal().max();
    for a in 0..total {
        gram[(a, a)] += 1e-12 * (1.0 + scale);
    }
    let mut off = k0;
    for (j, &rho) in rhos.iter().enumerate() {
        let w = p.group(j).width();
        for k in 0..w {
            gram[(off + k, off + k)] += n as f64 * rho;
        }
        off += w;
    }
    let sol = gram.cholesky()?.solve(&rhs);
    let mut coefs = p.zero_coefs();
    for k in 0..k0 {
        coefs.alpha[k] = sol[k];
    }
    let mut off = k0;
    for j in 0..p.n_groups() {
        for k in 0..p.group(j).width() {
            coefs.beta[j][k] = sol[off + k];
        }
        off += p.group(j).width();
    }
    Some(coefs)
}

/// Least-squares fit of the unpenalized block alone, used for the penalty
/// ceiling `lambda_max` and the full-shrinkage shortcut.
pub(super) fn fit_unpen_only(
    p: &PenalizedProblem,
    _cfg: &SolverConfig,
) -> Result<Vec<f64>, SolverError> {
    let mut coefs = p.zero_coefs();
    let mut r = p.y().to_vec();
    unpen_solve(p, &mut coefs, &mut r)?;
    Ok(coefs.alpha)
}

/// Minimizes the group-SCAD-penalized squared-error objective.
pub fn solve_l2(
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
    let mut r: Vec<f64> = {
        let preds = p.predictions(&coefs);
        p.y().iter().zip(&preds).map(|(y, f)| y - f).collect()
    };

    if coefs.beta.iter().all(|b| b.iter().all(|v| *v == 0.0)) {
        coefs.alpha = fit_unpen_only(p, cfg)?;
        let preds = p.predictions(&coefs);
        r = p.y().iter().zip(&preds).map(|(y, f)| y - f).collect();
        let nf = n as f64;
        let mut ceiling = 0.0f64;
        for j in 0..p.n_groups() {
            let g = p.group(j);
            let mut sq = 0.0;
            for k in 0..g.width() {
                let dot: f64 = g.col(k, n).iter().zip(&r).map(|(z, ri)| z * ri).sum();
                let score = 2.0 * dot / nf;
                sq += score * score;
            }
            ceiling = ceiling.max(sq.sqrt());
        }
        if lambda1 >= ceiling * (1.0 - 1e-10) {
            let parts = objective(p, &coefs, lambda1, cfg.gamma, Loss::L2);
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

    let eigs = group_eigs(p);
    let rhos: Vec<f64> = (0..p.n_groups())
        .map(|j| {
            if lambda1 > 0.0 {
                cfg.ridge * p.group(j).spectral_bound()
            } else {
                0.0
            }
        })
        .collect();
    let stab = |c: &Coefs| -> f64 {
        c.beta
            .iter()
            .zip(&rhos)
            .map(|(b, &rho)| rho * b.iter().map(|x| x * x).sum::<f64>())
            .sum()
    };
    let mut true_parts = objective(p, &coefs, lambda1, cfg.gamma, Loss::L2);
    if !true_parts.total.is_finite() {
        return Err(SolverError::NonFinite("initial objective"));
    }
    let mut cur_total = true_parts.total + stab(&coefs);
    let mut trace = vec![cur_total];
    let mut converged = false;
    let mut iterations = 0;
    for k in 0..cfg.max_outer {
        iterations = k + 1;
        let norms = coefs.group_norms();
        let nu: Vec<f64> = norms
            .iter()
            .map(|&nrm| scad_deriv(nrm, lambda1, cfg.gamma))
            .collect();
        let surrogate = |coefs: &Coefs, r: &[f64]| -> f64 {
            let pen: f64 = coefs
                .beta
                .iter()
                .zip(&nu)
                .map(|(b, &v)| v * b.iter().map(|x| x * x).sum::<f64>().sqrt())
                .sum();
            sq_loss(r) + pen + stab(coefs)
        };
        let mut cand = coefs.clone();
        let mut r_cand = r.clone();
        let mut joint_done = false;
        if nu.iter().all(|&v| v == 0.0) {
            // the linearized penalty is gone, so this outer step is plain
            // (stabilized) least squares and can be solved in one shot
            if let Some(ls) = joint_least_squares(p, &rhos) {
                let preds = p.predictions(&ls);
                r_cand = p.y().iter().zip(&preds).map(|(y, f)| y - f).collect();
                cand = ls;
                joint_done = true;
            }
        }
        if !joint_done {
            let mut prev = surrogate(&cand, &r_cand);
            for _ in 0..cfg.max_inner {
                unpen_solve(p, &mut cand, &mut r_cand)?;
                for j in 0..p.n_groups() {
                    group_update(p, j, &eigs[j], &mut cand, &mut r_cand, rhos[j], nu[j]);
                }
                let now = surrogate(&cand, &r_cand);
                if prev - now <= 0.1 * cfg.tol * (1.0 + now.abs()) {
                    break;
                }
                prev = now;
            }
        }
        let cand_parts = objective(p, &cand, lambda1, cfg.gamma, Loss::L2);
        if !cand_parts.total.is_finite() {
            return Err(SolverError::NonFinite("outer iteration"));
        }
        let cand_total = cand_parts.total + stab(&cand);
        let improved = cur_total - cand_total;
        if cand_total <= cur_total + 1e-12 * (1.0 + cur_total.abs()) {
            coefs = cand;
            r = r_cand;
            true_parts = cand_parts;
            cur_total = cand_total;
        }
        trace.push(cur_total);
        if improved.max(0.0) <= cfg.tol * (1.0 + cur_total.abs()) {
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
