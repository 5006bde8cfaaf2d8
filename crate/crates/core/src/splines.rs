//! B-spline bases on [0, 1] and the per-covariate group transforms.
//!
//! Each continuous covariate gets the same uniform-knot basis of degree `q`
//! with `K` subintervals, so `K + q` basis functions. The group norm used by
//! the penalty is `sqrt(beta' M beta)` with `M = G + lambda2 * Omega + eps*I`,
//! where `G` is a Gram matrix of the basis, `Omega` integrates products of
//! second derivatives, and `eps` is a tiny ridge so `M` is always positive
//! definite. Factoring `M = R'R` turns the group norm into a plain Euclidean
//! norm of the rotated coefficients `R beta`, which is what the solver sees.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::data::{ColKind, Dataset};

/// Ridge added to every norm matrix before factoring.
pub const NORM_RIDGE: f64 = 1e-8;

/// Fraction of the mean diagonal added as ridge when a norm matrix is built
/// from data. A basis direction with almost no sample support has a near-zero
/// Gram eigenvalue; the inverse-root rotation would scale it up to unit size,
/// making it penalty-cheap to interpolate single rows and wildly wrong away
/// from them. A ridge proportional to the matrix scale keeps such directions
/// expensive.
pub const RIDGE_FRAC: f64 = 1e-3;

/// Default spline degree (cubic).
pub const DEFAULT_DEGREE: usize = 3;

/// Nodes and weights of 5-point Gauss-Legendre quadrature on [0, 1].
/// Exact for polynomials up to degree 9, which covers products of two
/// basis functions (degree 2q <= 6) and of two second derivatives.
const GL5: [(f64, f64); 5] = [
    (0.046910077030668004, 0.11846344252809454),
    (0.23076534494715845, 0.23931433524968324),
    (0.5, 0.28444444444444444),
    (0.7692346550528415, 0.23931433524968324),
    (0.9530899229693319, 0.11846344252809454),
];

#[derive(Debug, thiserror::Error)]
pub enum SplineError {
    #[error("spline degree {0} is not supported (use 0 through 5)")]
    BadDegree(usize),
    #[error("need at least 2 subintervals, got {0}")]
    TooFewIntervals(usize),
    #[error("norm matrix for column `{col}` is not positive definite")]
    NotPositiveDefinite { col: String },
    #[error("covariates must be standardized to [0,1]; column `{col}` has value {value}")]
    NotStandardized { col: String, value: f64 },
}

/// Number of knot subintervals used at sample size `n`: `max(2, round(sqrt(n)/2))`.
pub fn intervals_for_sample_size(n: usize) -> usize {
    let k = ((n as f64).sqrt() / 2.0).round() as usize;
    k.max(2)
}

/// A B-spline basis of degree `q` on `[0, 1]` with `K` equal subintervals.
///
/// Interior knots sit at `k/K`; the boundary knots are repeated `q + 1`
/// times, giving `K + q` basis functions that sum to one everywhere.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplineBasis {
    degree: usize,
    n_intervals: usize,
    #[serde(skip)]
    knots: Vec<f64>,
}

impl SplineBasis {
    pub fn new(degree: usize, n_intervals: usize) -> Result<Self, SplineError> {
        if degree > 5 {
            return Err(SplineError::BadDegree(degree));
        }
        if n_intervals < 2 {
            return Err(SplineError::TooFewIntervals(n_intervals));
        }
        Ok(SplineBasis {
            degree,
            n_intervals,
            knots: make_knots(degree, n_intervals),
        })
    }

    /// Rebuilds the knot vector after deserialization.
    pub fn restore(&mut self) {
        if self.knots.is_empty() {
            self.knots = make_knots(self.degree, self.n_intervals);
        }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn n_intervals(&self) -> usize {
        self.n_intervals
    }

    /// Number of basis functions, `K + q`.
    pub fn dim(&self) -> usize {
        self.n_intervals + self.degree
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// All basis values at `x`. Inputs are clamped to [0, 1]; at most
    /// `q + 1` consecutive entries are nonzero and the values sum to one.
    pub fn eval(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(x, &mut out);
        out
    }

    /// Writes all basis values at `x` into `out` (length `dim`).
    pub fn eval_into(&self, x: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim());
        out.fill(0.0);
        let x = x.clamp(0.0, 1.0);
        let q = self.degree;
        let span = self.span_of(x);
        // local triangular recurrence over the q+1 active functions
        let mut vals = [0.0f64; 8];
        let mut left = [0.0f64; 8];
        let mut right = [0.0f64; 8];
        vals[0] = 1.0;
        for j in 1..=q {
            left[j] = x - self.knots[span + 1 - j];
            right[j] = self.knots[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom == 0.0 { 0.0 } else { vals[r] / denom };
                vals[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            vals[j] = saved;
        }
        for (r, &v) in vals.iter().take(q + 1).enumerate() {
            out[span - q + r] = v;
        }
    }

    /// Index of the first basis function that is nonzero at `x`.
    pub fn support_start(&self, x: f64) -> usize {
        self.interval_of(x.clamp(0.0, 1.0))
    }

    /// Second derivatives of all basis functions at `x` (zeros for `q < 2`).
    pub fn eval_deriv2(&self, x: f64) -> Vec<f64> {
        let q = self.degree;
        let dim = self.dim();
        if q < 2 {
            return vec![0.0; dim];
        }
        let x = x.clamp(0.0, 1.0);
        // values of the degree q-2 functions on the same knot vector,
        // then two applications of the derivative recurrence
        let low = self.eval_all_at_degree(x, q - 2);
        let n_d1 = self.knots.len() - q; // count of degree q-1 functions
        let mut d1 = vec![0.0; n_d1];
        for (i, slot) in d1.iter_mut().enumerate() {
            *slot =
                (q - 1) as f64 * (self.ratio(&low, i, q - 1) - self.ratio(&low, i + 1, q - 1));
        }
        let mut d2 = vec![0.0; dim];
        for (i, slot) in d2.iter_mut().enumerate() {
            *slot = q as f64 * (self.ratio(&d1, i, q) - self.ratio(&d1, i + 1, q));
        }
        d2
    }

    fn ratio(&self, lower: &[f64], i: usize, d: usize) -> f64 {
        if i >= lower.len() {
            return 0.0;
        }
        let denom = self.knots[i + d] - self.knots[i];
        if denom == 0.0 {
            0.0
        } else {
            lower[i] / denom
        }
    }

    /// Bottom-up evaluation of every degree-`d` function on the knot vector.
    fn eval_all_at_degree(&self, x: f64, d: usize) -> Vec<f64> {
        let knots = &self.knots;
        let m = knots.len();
        let last = *knots.last().unwrap();
        let mut vals = vec![0.0; m - 1];
        for i in 0..m - 1 {
            let hit = (knots[i] <= x && x < knots[i + 1])
                || (x == last && knots[i] < last && knots[i + 1] == last);
            vals[i] = if hit { 1.0 } else { 0.0 };
        }
        for deg in 1..=d {
            let count = m - deg - 1;
            let mut next = vec![0.0; count];
            for (i, slot) in next.iter_mut().enumerate() {
                let mut v = 0.0;
                let den_a = knots[i + deg] - knots[i];
                if den_a > 0.0 {
                    v += (x - knots[i]) / den_a * vals[i];
                }
                let den_b = knots[i + deg + 1] - knots[i + 1];
                if den_b > 0.0 {
                    v += (knots[i + deg + 1] - x) / den_b * vals[i + 1];
                }
                *slot = v;
            }
            vals = next;
        }
        vals
    }

    /// Knot subinterval containing `x` (the last one is right-closed).
    fn interval_of(&self, x: f64) -> usize {
        let k = (x * self.n_intervals as f64).floor() as usize;
        k.min(self.n_intervals - 1)
    }

    fn span_of(&self, x: f64) -> usize {
        self.interval_of(x) + self.degree
    }

    /// Empirical Gram matrix `(1/n) sum B(x_i) B(x_i)'` over the given values.
    pub fn empirical_gram(&self, values: &[f64]) -> DMatrix<f64> {
        let dim = self.dim();
        let mut g = DMatrix::zeros(dim, dim);
        let mut row = vec![0.0; dim];
        for &x in values {
            self.eval_into(x, &mut row);
            let start = self.support_start(x);
            let end = (start + self.degree + 1).min(dim);
            for a in start..end {
                for b in start..end {
                    g[(a, b)] += row[a] * row[b];
                }
            }
        }
        g /= values.len() as f64;
        g
    }

    /// Exact Gram matrix `integral of B B'` over [0, 1].
    pub fn integral_gram(&self) -> DMatrix<f64> {
        self.quadrature_gram(|x| self.eval(x))
    }

    /// Curvature matrix `integral of B'' B''^T` over [0, 1].
    ///
    /// The integrand is polynomial inside each subinterval, so fixed-order
    /// Gauss-Legendre per subinterval is exact.
    pub fn curvature_matrix(&self) -> DMatrix<f64> {
        self.quadrature_gram(|x| self.eval_deriv2(x))
    }

    fn quadrature_gram<F: Fn(f64) -> Vec<f64>>(&self, f: F) -> DMatrix<f64> {
        let dim = self.dim();
        let k = self.n_intervals as f64;
        let mut m = DMatrix::zeros(dim, dim);
        for interval in 0..self.n_intervals {
            let a = interval as f64 / k;
            let h = 1.0 / k;
            for &(node, weight) in &GL5 {
                let x = a + node * h;
                let vals = f(x);
                let scale = weight * h;
                for i in 0..dim {
                    if vals[i] == 0.0 {
                        continue;
                    }
                    for j in 0..dim {
                        if vals[j] != 0.0 {
                            m[(i, j)] += scale * vals[i] * vals[j];
                        }
                    }
                }
            }
        }
        m
    }
}

fn make_knots(degree: usize, n_intervals: usize) -> Vec<f64> {
    let mut knots = Vec::with_capacity(n_intervals + 2 * degree + 1);
    for _ in 0..=degree {
        knots.push(0.0);
    }
    for k in 1..n_intervals {
        knots.push(k as f64 / n_intervals as f64);
    }
    for _ in 0..=degree {
        knots.push(1.0);
    }
    knots
}

/// Which Gram matrix enters the group norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GramKind {
    /// Sample average of `B(x_i) B(x_i)'`; the group norm is then the
    /// empirical L2 norm of the fitted component.
    #[default]
    Empirical,
    /// Exact integral over [0, 1]; useful as a data-free sensitivity check.
    Integral,
}

/// Cholesky-based change of coordinates that turns a group norm into a
/// Euclidean norm: with `M = R'R`, `|R beta|` equals `sqrt(beta' M beta)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupTransform {
    r: DMatrix<f64>,
    r_inv: DMatrix<f64>,
}

impl GroupTransform {
    /// Factors a symmetric positive definite norm matrix.
    pub fn new(m: DMatrix<f64>) -> Option<Self> {
        let chol: Cholesky<f64, Dyn> = Cholesky::new(m)?;
        let l = chol.l();
        let r = l.transpose();
        let r_inv = r.clone().try_inverse()?;
        Some(GroupTransform { r, r_inv })
    }

    pub fn dim(&self) -> usize {
        self.r.nrows()
    }

    /// Rotated coefficients `R beta`.
    pub fn rotate_coefs(&self, beta: &[f64]) -> Vec<f64> {
        let v = DVector::from_column_slice(beta);
        (&self.r * v).data.into()
    }

    /// Original coefficients from rotated ones, `R^{-1} beta~`.
    pub fn unrotate_coefs(&self, beta_tilde: &[f64]) -> Vec<f64> {
        let v = DVector::from_column_slice(beta_tilde);
        (&self.r_inv * v).data.into()
    }

    /// Rotated basis row `R^{-T} b`, so that `beta~ . b~ = beta . b`.
    pub fn rotate_basis(&self, b: &[f64]) -> Vec<f64> {
        let dim = self.dim();
        debug_assert_eq!(b.len(), dim);
        // R^{-T} is lower triangular; multiply directly
        let mut out = vec![0.0; dim];
        for i in 0..dim {
            let mut acc = 0.0;
            for j in 0..=i {
                acc += self.r_inv[(j, i)] * b[j];
            }
            out[i] = acc;
        }
        out
    }
}

/// Basis and norm transform for one covariate group.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum GroupBasis {
    /// Continuous covariate: spline expansion with rotated coordinates.
    Spline {
        basis: SplineBasis,
        transform: GroupTransform,
    },
    /// Binary covariate: single column with scalar norm `scale`.
    Linear { scale: f64 },
}

impl GroupBasis {
    pub fn dim(&self) -> usize {
        match self {
            GroupBasis::Spline { basis, .. } => basis.dim(),
            GroupBasis::Linear { .. } => 1,
        }
    }

    /// Rotated design row for one covariate value.
    pub fn design_row(&self, x: f64) -> Vec<f64> {
        match self {
            GroupBasis::Spline { basis, transform } => transform.rotate_basis(&basis.eval(x)),
            GroupBasis::Linear { scale } => vec![x / scale],
        }
    }

    /// Fitted component value at `x` given rotated coefficients.
    pub fn component(&self, x: f64, coefs: &[f64]) -> f64 {
        self.design_row(x)
            .iter()
            .zip(coefs)
            .map(|(b, c)| b * c)
            .sum()
    }
}

/// All group bases for a standardized dataset, sharing one `lambda2`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplineSystem {
    pub groups: Vec<GroupBasis>,
    pub lambda2: f64,
    pub gram: GramKind,
}

impl SplineSystem {
    /// Builds per-covariate bases and norm transforms from standardized data.
    ///
    /// `n_intervals` defaults to `max(2, round(sqrt(n)/2))` when `None`.
    pub fn build(
        d: &Dataset,
        degree: usize,
        n_intervals: Option<usize>,
        lambda2: f64,
        gram: GramKind,
    ) -> Result<Self, SplineError> {
        let k = n_intervals.unwrap_or_else(|| intervals_for_sample_size(d.n()));
        let mut groups = Vec::with_capacity(d.p());
        for j in 0..d.p() {
            let col: Vec<f64> = d.x().column(j).to_vec();
            match d.col_kind()[j] {
                ColKind::Binary => {
                    let msq = col.iter().map(|v| v * v).sum::<f64>() / col.len() as f64;
                    groups.push(GroupBasis::Linear {
                        scale: (msq + NORM_RIDGE).sqrt(),
                    });
                }
                ColKind::Continuous => {
                    if let Some(bad) = col.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                        return Err(SplineError::NotStandardized {
                            col: d.col_names()[j].clone(),
                            value: *bad,
                        });
                    }
                    let basis = SplineBasis::new(degree, k)?;
                    let g = match gram {
                        GramKind::Empirical => basis.empirical_gram(&col),
                        GramKind::Integral => basis.integral_gram(),
                    };
                    let mut m = g;
                    if lambda2 > 0.0 && degree >= 2 {
                        m += basis.curvature_matrix() * lambda2;
                    }
                    let mean_diag =
                        (0..m.nrows()).map(|i| m[(i, i)]).sum::<f64>() / m.nrows() as f64;
                    let ridge = (RIDGE_FRAC * mean_diag).max(NORM_RIDGE);
                    for i in 0..m.nrows() {
                        m[(i, i)] += ridge;
                    }
                    let transform = GroupTransform::new(m).ok_or_else(|| {
                        SplineError::NotPositiveDefinite {
                            col: d.col_names()[j].clone(),
                        }
                    })?;
                    groups.push(GroupBasis::Spline { basis, transform });
                }
            }
        }
        Ok(SplineSystem {
            groups,
            lambda2,
            gram,
        })
    }

    /// Rebuilds transient state (knot vectors) after deserialization.
    pub fn restore(&mut self) {
        for g in &mut self.groups {
            if let GroupBasis::Spline { basis, .. } = g {
                basis.restore();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn interval_count_follows_sample_size() {
        assert_eq!(intervals_for_sample_size(1000), 16);
        assert_eq!(intervals_for_sample_size(400), 10);
        assert_eq!(intervals_for_sample_size(16), 2);
        assert_eq!(intervals_for_sample_size(4), 2);
    }

    #[test]
    fn dimensions_and_knots() {
        let b = SplineBasis::new(3, 16).unwrap();
        assert_eq!(b.dim(), 19);
        let b = SplineBasis::new(0, 2).unwrap();
        assert_eq!(b.dim(), 2);
        assert_eq!(b.knots(), &[0.0, 0.5, 1.0]);
        let b = SplineBasis::new(3, 10).unwrap();
        assert_eq!(b.dim(), 13);
    }

    #[test]
    fn degree_zero_is_interval_indicator() {
        let b = SplineBasis::new(0, 2).unwrap();
        assert_eq!(b.eval(0.25), vec![1.0, 0.0]);
        assert_eq!(b.eval(0.75), vec![0.0, 1.0]);
        // half-open intervals: 0.5 belongs to the second one
        assert_eq!(b.eval(0.5), vec![0.0, 1.0]);
        // the last interval is closed on the right
        assert_eq!(b.eval(1.0), vec![0.0, 1.0]);
    }

    #[test]
    fn partition_of_unity_and_local_support() {
        for q in 0..=3 {
            let b = SplineBasis::new(q, 7).unwrap();
            for i in 0..=200 {
                let x = i as f64 / 200.0;
                let vals = b.eval(x);
                let sum: f64 = vals.iter().sum();
                assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-12);
                let nonzero = vals.iter().filter(|v| **v != 0.0).count();
                assert!(nonzero <= q + 1, "q={q} x={x}: {nonzero} nonzero");
                assert!(vals.iter().all(|v| *v >= 0.0));
            }
        }
    }

    #[test]
    fn second_derivative_matches_finite_differences() {
        let b = SplineBasis::new(3, 5).unwrap();
        let h = 1e-5;
        for &x in &[0.13, 0.31, 0.49, 0.77, 0.93] {
            let d2 = b.eval_deriv2(x);
            let up = b.eval(x + h);
            let mid = b.eval(x);
            let down = b.eval(x - h);
            for i in 0..b.dim() {
                let fd = (up[i] - 2.0 * mid[i] + down[i]) / (h * h);
                assert_abs_diff_eq!(d2[i], fd, epsilon = 1e-3);
            }
        }
    }

    #[test]
    fn curvature_annihilates_affine_functions() {
        let b = SplineBasis::new(3, 6).unwrap();
        let omega = b.curvature_matrix();
        // coefficients reproducing 2 + 3x via Greville abscissae
        let knots = b.knots();
        let q = b.degree();
        let beta: Vec<f64> = (0..b.dim())
            .map(|i| {
                let greville: f64 = (1..=q).map(|k| knots[i + k]).sum::<f64>() / q as f64;
                2.0 + 3.0 * greville
            })
            .collect();
        // confirm the coefficients really give an affine function
        for i in 0..=50 {
            let x = i as f64 / 50.0;
            let fit: f64 = b.eval(x).iter().zip(&beta).map(|(v, c)| v * c).sum();
            assert_abs_diff_eq!(fit, 2.0 + 3.0 * x, epsilon = 1e-10);
        }
        let v = DVector::from_column_slice(&beta);
        let quad = (v.transpose() * &omega * &v)[(0, 0)];
        assert!(quad.abs() < 1e-8, "curvature on affine function: {quad}");
    }

    #[test]
    fn empirical_gram_of_two_point_sample() {
        let b = SplineBasis::new(0, 2).unwrap();
        let g = b.empirical_gram(&[0.0, 1.0]);
        assert_abs_diff_eq!(g[(0, 0)], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(g[(1, 1)], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(g[(0, 1)], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn transform_scales_basis_by_inverse_root() {
        let b = SplineBasis::new(0, 2).unwrap();
        let mut m = b.empirical_gram(&[0.0, 1.0]);
        for i in 0..2 {
            m[(i, i)] += NORM_RIDGE;
        }
        let t = GroupTransform::new(m).unwrap();
        let row = t.rotate_basis(&b.eval(0.0));
        assert_abs_diff_eq!(row[0], 2f64.sqrt(), epsilon = 1e-6);
        assert_abs_diff_eq!(row[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn rotation_is_an_isometry_for_the_norm() {
        let b = SplineBasis::new(3, 5).unwrap();
        let xs: Vec<f64> = (0..40).map(|i| (i as f64 + 0.5) / 40.0).collect();
        let mut m = b.empirical_gram(&xs) + b.curvature_matrix() * 1e-3;
        for i in 0..m.nrows() {
            m[(i, i)] += NORM_RIDGE;
        }
        let t = GroupTransform::new(m.clone()).unwrap();
        let mut state = 42u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        for _ in 0..100 {
            let beta: Vec<f64> = (0..b.dim()).map(|_| next() * 4.0).collect();
            let rotated = t.rotate_coefs(&beta);
            let lhs: f64 = rotated.iter().map(|v| v * v).sum();
            let v = DVector::from_column_slice(&beta);
            let rhs = (v.transpose() * &m * &v)[(0, 0)];
            assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-10 * (1.0 + rhs.abs()));
        }
        // rotated basis row keeps inner products: beta~ . b~ = beta . b
        let beta: Vec<f64> = (0..b.dim()).map(|_| next() * 2.0).collect();
        let rotated = t.rotate_coefs(&beta);
        for &x in &[0.0, 0.21, 0.5, 0.88, 1.0] {
            let raw = b.eval(x);
            let dot_raw: f64 = raw.iter().zip(&beta).map(|(a, c)| a * c).sum();
            let row = t.rotate_basis(&raw);
            let dot_rot: f64 = row.iter().zip(&rotated).map(|(a, c)| a * c).sum();
            assert_abs_diff_eq!(dot_raw, dot_rot, epsilon = 1e-9);
        }
    }

    #[test]
    fn unrotate_inverts_rotate() {
        let b = SplineBasis::new(2, 4).unwrap();
        let xs: Vec<f64> = (0..25).map(|i| i as f64 / 24.0).collect();
        let mut m = b.empirical_gram(&xs);
        for i in 0..m.nrows() {
            m[(i, i)] += NORM_RIDGE;
        }
        let t = GroupTransform::new(m).unwrap();
        let beta: Vec<f64> = (0..b.dim()).map(|i| (i as f64).sin()).collect();
        let back = t.unrotate_coefs(&t.rotate_coefs(&beta));
        for (a, b) in beta.iter().zip(&back) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
    }
}
