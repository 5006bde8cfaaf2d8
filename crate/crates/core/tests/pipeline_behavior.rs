//! Behavioral checks for the end-to-end fitting pipeline that are too heavy
//! for inline unit tests: null-effect designs, screening at extreme
//! dimension, bootstrap coverage on a known truth, and selection behavior
//! on pure noise.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use catelab::data::{ColKind, Dataset};
use catelab::pipeline::nis_screen;
use catelab::solver::{
    cross_validate, lambda_max, CvConfig, PenalizedProblem, SolverConfig,
};
use catelab::{
    bootstrap_ci, fit_cate_with_nuisance, fit_qlearner, FitConfig, Learner, Loss, NuisanceValues,
    SimSetting,
};

fn quick_cfg() -> FitConfig {
    let mut cfg = FitConfig::default();
    cfg.n_intervals = Some(4);
    cfg.lambda2_grid = vec![0.0, 1e-3];
    cfg.n_lambda1 = 8;
    cfg.lambda1_min_ratio = 1e-2;
    cfg.n_folds = 3;
    cfg.nuisance.max_trees = 40;
    cfg.nuisance.folds = 3;
    cfg
}

/// Three uniform covariates, a linear baseline, and no treatment effect.
fn null_effect_data(n: usize, seed: u64) -> (Dataset, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Array2::zeros((n, 3));
    let mut y = Vec::with_capacity(n);
    let mut t = Vec::with_capacity(n);
    let mut b0 = Vec::with_capacity(n);
    for i in 0..n {
        for j in 0..3 {
            x[(i, j)] = rng.gen_range(-1.0..1.0);
        }
        let b = 0.5 + x[(i, 1)] - 0.8 * x[(i, 2)];
        let ti: i8 = if rng.gen_bool(0.5) { 1 } else { -1 };
        y.push(b + 0.3 * rng.gen_range(-1.0..1.0));
        t.push(ti);
        b0.push(b);
    }
    let d = Dataset::new(
        y,
        t,
        x,
        vec![ColKind::Continuous; 3],
        vec!["x1".into(), "x2".into(), "x3".into()],
    )
    .unwrap();
    (d, b0)
}

#[test]
fn null_effect_fit_stays_flat() {
    let (d, b0) = null_effect_data(1000, 41);
    let nv = NuisanceValues::new(vec![0.5; 1000]).with_mean(b0);
    let cfg = quick_cfg();
    let m = fit_cate_with_nuisance(&d, Learner::Rl, Loss::L1, &cfg, Some(&nv)).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    let mut xv = Array2::zeros((200, 3));
    for i in 0..200 {
        for j in 0..3 {
            xv[(i, j)] = rng.gen_range(-1.0..1.0);
        }
    }
    let pred = m.predict(&xv).unwrap();
    let mean_abs: f64 = pred.tau.iter().map(|v| v.abs()).sum::<f64>() / 200.0;
    assert!(mean_abs < 0.3, "null effect estimated as {mean_abs}");
}

#[test]
fn qlearner_ignores_noise_interactions() {
    let mut spec_sum = 0.0;
    let seeds = [3u64, 17, 29, 55, 90];
    for &seed in &seeds {
        let (d, _) = null_effect_data(400, seed);
        let cfg = quick_cfg();
        let m = fit_qlearner(&d, Loss::L2, &cfg).unwrap();
        let active = m.selected_mask();
        let inactive = active.iter().filter(|a| !**a).count();
        spec_sum += inactive as f64 / active.len() as f64;
    }
    let specificity = spec_sum / seeds.len() as f64;
    assert!(
        specificity >= 0.7,
        "effect-half specificity {specificity} under a null effect"
    );
}

#[test]
fn screening_keeps_signal_among_a_thousand_covariates() {
    let setting = SimSetting::standard(1000, 1000, 0.05).unwrap();
    let d_keep = (1000.0 / 1000.0f64.ln()).floor() as usize;
    let mut hits = 0;
    for seed in 0..20u64 {
        let (train, _) = catelab::generate(&setting, 1000 + seed).unwrap();
        let kept = nis_screen(&train, d_keep, Loss::L1).unwrap();
        if [0usize, 1, 2].iter().all(|j| kept.contains(j)) {
            hits += 1;
        }
    }
    assert!(hits >= 19, "signal covariates fully kept in {hits}/20 runs");
}

#[test]
fn screening_ranks_noise_below_signal_every_time() {
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(7_000 + seed);
        let n = 200;
        let mut x = Array2::zeros((n, 2));
        let mut y = Vec::with_capacity(n);
        let mut t = Vec::with_capacity(n);
        for i in 0..n {
            x[(i, 0)] = rng.gen_range(-1.0..1.0);
            x[(i, 1)] = rng.gen_range(-1.0..1.0);
            y.push(2.0 * x[(i, 0)]);
            t.push(if rng.gen_bool(0.5) { 1 } else { -1 });
        }
        let d = Dataset::new(
            y,
            t,
            x,
            vec![ColKind::Continuous; 2],
            vec!["signal".into(), "noise".into()],
        )
        .unwrap();
        let kept = nis_screen(&d, 1, Loss::L1).unwrap();
        assert_eq!(kept, vec![0], "seed {seed} kept the noise covariate");
    }
}

/// One irrelevant covariate, a constant effect of 1, and a constant baseline.
fn constant_effect_data(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Array2::zeros((n, 1));
    let mut y = Vec::with_capacity(n);
    let mut t = Vec::with_capacity(n);
    for i in 0..n {
        x[(i, 0)] = rng.gen_range(0.0..1.0);
        let ti: i8 = if rng.gen_bool(0.55) { 1 } else { -1 };
        y.push(0.3 + f64::from(ti) / 2.0 + 0.25 * rng.gen_range(-1.0..1.0));
        t.push(ti);
    }
    Dataset::new(
        y,
        t,
        x,
        vec![ColKind::Continuous],
        vec!["x1".into()],
    )
    .unwrap()
}

fn cheap_bootstrap_cfg(seed: u64) -> FitConfig {
    let mut cfg = FitConfig::default();
    cfg.n_intervals = Some(4);
    cfg.lambda2_grid = vec![0.0];
    cfg.n_lambda1 = 6;
    cfg.lambda1_min_ratio = 1e-2;
    cfg.n_folds = 3;
    cfg.seed = seed;
    cfg.nuisance.max_trees = 10;
    cfg.nuisance.folds = 2;
    cfg.nuisance.min_leaf = 20;
    cfg
}

#[test]
fn bootstrap_band_covers_a_constant_effect() {
    let eval = Array2::from_shape_vec((3, 1), vec![0.2, 0.5, 0.8]).unwrap();
    let mut covered = 0;
    for seed in 0..20u64 {
        let d = constant_effect_data(500, 100 + seed);
        let cfg = cheap_bootstrap_cfg(seed);
        let band = bootstrap_ci(&d, Learner::Mcm, Loss::L2, &cfg, &eval, 50, 0.95).unwrap();
        assert_eq!(band.b_used + (50 - band.b_used), 50);
        let all_in = (0..3).all(|i| band.lower[i] <= 1.0 && 1.0 <= band.upper[i]);
        if all_in {
            covered += 1;
        }
    }
    assert!(covered >= 18, "constant effect covered in {covered}/20 runs");
}

#[test]
fn narrower_bootstrap_level_nests_inside_wider() {
    let eval = Array2::from_shape_vec((3, 1), vec![0.2, 0.5, 0.8]).unwrap();
    let d = constant_effect_data(500, 9);
    let cfg = cheap_bootstrap_cfg(77);
    let wide = bootstrap_ci(&d, Learner::Mcm, Loss::L2, &cfg, &eval, 50, 0.95).unwrap();
    let narrow = bootstrap_ci(&d, Learner::Mcm, Loss::L2, &cfg, &eval, 50, 0.80).unwrap();
    assert_eq!(wide.b_used, narrow.b_used);
    for i in 0..3 {
        assert!(wide.lower[i] <= narrow.lower[i] + 1e-12);
        assert!(narrow.upper[i] <= wide.upper[i] + 1e-12);
        assert!((wide.estimate[i] - narrow.estimate[i]).abs() < 1e-12);
    }
}

#[test]
fn pure_noise_selection_prefers_the_largest_penalty() {
    let solver_cfg = SolverConfig {
        tol: 1e-5,
        max_outer: 40,
        max_inner: 80,
        eta_min: 1e-5,
        ..SolverConfig::default()
    };
    let mut wins = 0;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(31_000 + seed);
        let n = 150;
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut groups = Vec::new();
        for _ in 0..2 {
            let cols: Vec<f64> = (0..4 * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            groups.push((4usize, cols));
        }
        let prob = PenalizedProblem::new(y, vec![vec![1.0; n]], groups, 0.0).unwrap();
        let lmax = lambda_max(&prob, Loss::L1, &solver_cfg).unwrap();
        let grid: Vec<f64> = (0..8)
            .map(|k| lmax * 1e-2f64.powf(k as f64 / 7.0))
            .collect();
        let cv_cfg = CvConfig {
            n_folds: 5,
            seed,
            one_se: true,
            solver: solver_cfg.clone(),
        };
        let res = cross_validate(&[(0.0, prob)], &grid, Loss::L1, &cv_cfg).unwrap();
        if (res.lambda1 - grid[0]).abs() < 1e-12 {
            wins += 1;
        }
    }
    assert!(wins >= 40, "largest penalty chosen in {wins}/50 noise runs");
}
