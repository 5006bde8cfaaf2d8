//! Exact least-absolute-deviations fit by linear programming. Small and
//! deliberately simple: this is the reference the iterative path is checked
//! against, so clarity beats speed.
//!
//! The LP uses split coefficients and split residuals,
//! `minimize sum(u) + sum(v)` subject to `X b+ - X b- + u - v = y`, with a
//! starting basis read off the signs of `y`. Bland's rule guarantees
//! termination.

use nalgebra::{DMatrix, DVector};

use super::SolverError;

/// Output of [`solve_exact_lad`].
#[derive(Debug, Clone)]
pub struct ExactLad {
    /// One coefficient per design column.
    pub coefs: Vec<f64>,
    /// `(1/n) sum_i |y_i - x_i' coefs|` at the optimum.
    pub mean_abs_residual: f64,
}

const RC_TOL: f64 = 1e-11;

/// Column `j` of the LP constraint matrix, written into `out`.
fn lp_column(columns: &[Vec<f64>], n: usize, j: usize, out: &mut DVector<f64>) {
    let m = columns.len();
    out.fill(0.0);
    if j < m {
        for i in 0..n {
            out[i] = columns[j][i];
        }
    } else if j < 2 * m {
        for i in 0..n {
            out[i] = -columns[j - m][i];
        }
    } else if j < 2 * m + n {
        out[j - 2 * m] = 1.0;
    } else {
        out[j - 2 * m - n] = -1.0;
    }
}

fn lp_cost(m: usize, j: usize) -> f64 {
    if j < 2 * m {
        0.0
    } else {
        1.0
    }
}

/// Minimizes `sum_i |y_i - x_i' b|` exactly. `columns` is the design matrix
/// stored one column per entry; every column must have length `y.len()`.
pub fn solve_exact_lad(columns: &[Vec<f64>], y: &[f64]) -> Result<ExactLad, SolverError> {
    let n = y.len();
    let m = columns.len();
    if n == 0 {
        return Err(SolverError::BadProblem("empty response".into()));
    }
    for (j, c) in columns.iter().enumerate() {
        if c.len() != n {
            return Err(SolverError::BadProblem(format!(
                "column {j} has {} rows, expected {n}",
                c.len()
            )));
        }
        if c.iter().any(|v| !v.is_finite()) {
            return Err(SolverError::NonFinite("design column"));
        }
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(SolverError::NonFinite("response"));
    }

    let total_vars = 2 * m + 2 * n;
    // basis[i] = variable index occupying row i
    let mut basis: Vec<usize> = (0..n)
        .map(|i| if y[i] >= 0.0 { 2 * m + i } else { 2 * m + n + i })
        .collect();
    let mut binv = DMatrix::zeros(n, n);
    for i in 0..n {
        binv[(i, i)] = if y[i] >= 0.0 { 1.0 } else { -1.0 };
    }
    let yv = DVector::from_column_slice(y);
    let mut col_buf = DVector::zeros(n);
    let pivot_cap = 10 * (n + m) + 1000;
    let mut pivots = 0usize;

    loop {
        if pivots > pivot_cap {
            return Err(SolverError::SimplexStalled(pivots));
        }
        if pivots > 0 && pivots % 50 == 0 {
            // refactorize to shed accumulated roundoff
            let mut b = DMatrix::zeros(n, n);
            for (i, &var) in basis.iter().enumerate() {
                lp_column(columns, n, var, &mut col_buf);
                b.set_column(i, &col_buf);
            }
            binv = b
                .try_inverse()
                .ok_or_else(|| SolverError::BadProblem("singular working basis".into()))?;
        }
        let x_b = &binv * &yv;
        // pi' = c_B' B^-1
        let c_b = DVector::from_iterator(n, basis.iter().map(|&v| lp_cost(m, v)));
        let pi = binv.transpose() * c_b;
        // Bland: smallest-index nonbasic column with negative reduced cost
        let mut entering = None;
        for j in 0..total_vars {
            if basis.contains(&j) {
                continue;
            }
            lp_column(columns, n, j, &mut col_buf);
            let rc = lp_cost(m, j) - pi.dot(&col_buf);
            if rc < -RC_TOL {
                entering = Some(j);
                break;
            }
        }
        let Some(e) = entering else {
            // optimal
            let mut coefs = vec![0.0; m];
            for (i, &var) in basis.iter().enumerate() {
                if var < m {
                    coefs[var] += x_b[i];
                } else if var < 2 * m {
                    coefs[var - m] -= x_b[i];
                }
            }
            let mut abs_sum = 0.0;
            for i in 0..n {
                let fit: f64 = columns.iter().zip(&coefs).map(|(c, b)| c[i] * b).sum();
                abs_sum += (y[i] - fit).abs();
            }
            return Ok(ExactLad {
                coefs,
                mean_abs_residual: abs_sum / n as f64,
            });
        };
        lp_column(columns, n, e, &mut col_buf);
        let d = &binv * &col_buf;
        // ratio test; Bland tie-break on smallest leaving variable index
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..n {
            if d[i] > RC_TOL {
                let ratio = x_b[i].max(0.0) / d[i];
                match leave {
                    None => leave = Some((i, ratio)),
                    Some((li, lr)) => {
                        if ratio < lr - 1e-12
                            || ((ratio - lr).abs() <= 1e-12 && basis[i] < basis[li])
                        {
                            leave = Some((i, ratio));
                        }
                    }
                }
            }
        }
        let Some((row, _)) = leave else {
            return Err(SolverError::BadProblem(
                "descent direction is unbounded".into(),
            ));
        };
        // pivot: replace basis[row] with e and update the inverse in place
        let pivot_val = d[row];
        basis[row] = e;
        for c in 0..n {
            binv[(row, c)] /= pivot_val;
        }
        for i in 0..n {
            if i != row {
                let factor = d[i];
                if factor != 0.0 {
                    for c in 0..n {
                        binv[(i, c)] -= factor * binv[(row, c)];
                    }
                }
            }
        }
        pivots += 1;
    }
}
