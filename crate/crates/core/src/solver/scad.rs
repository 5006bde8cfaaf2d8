//! The SCAD penalty in closed form.
//!
//! The penalty is defined through its derivative
//! `P'(x) = lambda` on `[0, lambda]`, decaying linearly to zero on
//! `(lambda, gamma*lambda]`, and zero beyond, with `P(0) = 0`. Integrating:
//!
//! ```text
//! P(x) = lambda * x                                         x <= lambda
//!      = (2*gamma*lambda*x - x^2 - lambda^2) / (2(gamma-1)) lambda < x <= gamma*lambda
//!      = lambda^2 * (gamma + 1) / 2                         x > gamma*lambda
//! ```
//!
//! Small thresholds are penalized like a lasso, large ones not at all.

/// Penalty value at `x >= 0`.
pub fn scad(x: f64, lambda: f64, gamma: f64) -> f64 {
    debug_assert!(x >= 0.0 && lambda >= 0.0 && gamma > 2.0);
    if lambda == 0.0 {
        return 0.0;
    }
    if x <= lambda {
        lambda * x
    } else if x <= gamma * lambda {
        (2.0 * gamma * lambda * x - x * x - lambda * lambda) / (2.0 * (gamma - 1.0))
    } else {
        lambda * lambda * (gamma + 1.0) / 2.0
    }
}

/// Derivative `P'(x)` at `x >= 0`.
pub fn scad_deriv(x: f64, lambda: f64, gamma: f64) -> f64 {
    debug_assert!(x >= 0.0 && lambda >= 0.0 && gamma > 2.0);
    if lambda == 0.0 {
        return 0.0;
    }
    if x <= lambda {
        lambda
    } else {
        (gamma * lambda - x).max(0.0) / (gamma - 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const LAMBDA: f64 = 0.37;
    const GAMMA: f64 = 3.7;

    #[test]
    fn zero_at_origin_and_flat_tail() {
        assert_eq!(scad(0.0, LAMBDA, GAMMA), 0.0);
        let cap = LAMBDA * LAMBDA * (GAMMA + 1.0) / 2.0;
        assert!((scad(GAMMA * LAMBDA, LAMBDA, GAMMA) - cap).abs() < 1e-15);
        assert_eq!(scad(10.0, LAMBDA, GAMMA), cap);
        assert!((cap - 2.35 * LAMBDA * LAMBDA).abs() < 1e-12);
    }

    #[test]
    fn derivative_plateaus_then_vanishes() {
        for x in [0.0, 0.1, 0.25, LAMBDA] {
            assert_eq!(scad_deriv(x, LAMBDA, GAMMA), LAMBDA);
        }
        assert_eq!(scad_deriv(GAMMA * LAMBDA, LAMBDA, GAMMA), 0.0);
        assert_eq!(scad_deriv(5.0, LAMBDA, GAMMA), 0.0);
        // midpoint of the taper
        let mid = (1.0 + GAMMA) / 2.0 * LAMBDA;
        let expect = (GAMMA * LAMBDA - mid) / (GAMMA - 1.0);
        assert!((scad_deriv(mid, LAMBDA, GAMMA) - expect).abs() < 1e-15);
    }

    #[test]
    fn value_is_continuous_at_both_joins() {
        let eps = 1e-9;
        let at = |x: f64| scad(x, LAMBDA, GAMMA);
        assert!((at(LAMBDA - eps) - at(LAMBDA + eps)).abs() < 1e-8);
        assert!((at(GAMMA * LAMBDA - eps) - at(GAMMA * LAMBDA + eps)).abs() < 1e-8);
        // exact continuity of the closed forms at the joins
        assert!((LAMBDA * LAMBDA
            - (2.0 * GAMMA * LAMBDA * LAMBDA - LAMBDA * LAMBDA - LAMBDA * LAMBDA)
                / (2.0 * (GAMMA - 1.0)))
        .abs()
            < 1e-15);
    }

    #[test]
    fn value_matches_numeric_integral_of_derivative() {
        // trapezoid integration of P' reproduces P
        let xs = [0.2, 0.37, 0.6, 1.0, 1.3690000000000002, 2.0];
        for &x in &xs {
            let steps = 200_000;
            let mut acc = 0.0;
            let h = x / steps as f64;
            for i in 0..steps {
                let a = i as f64 * h;
                let b = a + h;
                acc += 0.5 * h * (scad_deriv(a, LAMBDA, GAMMA) + scad_deriv(b, LAMBDA, GAMMA));
            }
            assert!(
                (acc - scad(x, LAMBDA, GAMMA)).abs() < 1e-9,
                "x={x}: {acc} vs {}",
                scad(x, LAMBDA, GAMMA)
            );
        }
    }

    #[test]
    fn zero_lambda_disables_the_penalty() {
        assert_eq!(scad(1.0, 0.0, GAMMA), 0.0);
        assert_eq!(scad_deriv(1.0, 0.0, GAMMA), 0.0);
    }
}
