use std::time::Instant;

use excellence_core::glmm::{
    eb_estimates, fit_model, fit_model_traced, linear_predictor, raw_residual_logit, Design, FitOptions, FitSpec,
};
use excellence_core::inference::deviance_bic;
use excellence_core::simulate::{simulate_clusters, ClusterSimParams};

fn sim(seed: u64, n_clusters: usize, beta1: f64, sigma2: f64) -> excellence_core::simulate::SimulatedClusters {
    simulate_clusters(&ClusterSimParams { seed, n_clusters, beta1, sigma2, ..Default::default() }).unwrap()
}

#[test]
fn recovers_default_truth_on_one_dataset() {
    let s = sim(11, 600, 0.53, 0.28);
    let spec = s.spec(true, FitOptions::default()).unwrap();
    let start = Instant::now();
    let fit = fit_model(&spec).unwrap();
    let elapsed = start.elapsed();
    assert!(fit.converged && !fit.at_boundary);
    for (j, truth) in [(0, -2.03), (1, 0.53)] {
        assert!((fit.beta[j] - truth).abs() < 3.0 * fit.beta_se(j), "beta{j} = {}", fit.beta[j]);
    }
    assert!((fit.sigma2 - 0.28).abs() < 3.0 * fit.sigma2_se(), "sigma2 = {}", fit.sigma2);
    assert!(elapsed.as_secs_f64() < 5.0, "fit took {elapsed:?}");
    assert_eq!(fit.n_clusters, 600);
    assert_eq!(fit.columns, ["(Intercept)", "x"]);
}

#[test]
fn log_likelihood_never_decreases_along_the_optimizer_path() {
    for seed in 0..5 {
        let s = sim(100 + seed, 80, 0.3, 0.5);
        let (_, trace) = fit_model_traced(&s.spec(true, FitOptions::default()).unwrap()).unwrap();
        assert!(trace.len() > 1);
        for w in trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9 * w[0].abs(), "seed {seed}: {} -> {}", w[0], w[1]);
        }
    }
}

#[test]
fn eb_estimates_shrink_towards_zero() {
    let s = sim(5, 200, 0.4, 0.3);
    let spec = s.spec(true, FitOptions::default()).unwrap();
    let fit = fit_model(&spec).unwrap();
    let eb = eb_estimates(&spec, &fit).unwrap();
    let eta = linear_predictor(&spec, &fit.beta);
    for ((c, e), est) in spec.clusters.iter().zip(eta.iter()).zip(&eb) {
        let raw = raw_residual_logit(c.n_trials, c.n_success, *e);
        assert!(est.u_mode * raw > 0.0, "{}: sign differs", c.id);
        assert!(est.u_mode.abs() < raw.abs(), "{}: |{}| >= |{}|", c.id, est.u_mode, raw);
        assert!(est.u_se > 0.0 && est.u_se < fit.sigma2.sqrt());
    }
}

#[test]
fn zero_variance_forces_zero_eb_estimates() {
    let s = sim(6, 60, 0.0, 0.2);
    let options = FitOptions { fixed_sigma2: Some(0.0), ..FitOptions::default() };
    let spec = s.spec(false, options).unwrap();
    let fit = fit_model(&spec).unwrap();
    assert_eq!(fit.sigma2, 0.0);
    assert!(eb_estimates(&spec, &fit).unwrap().iter().all(|e| e.u_mode == 0.0 && e.u_se == 0.0));
}

#[test]
fn boundary_fit_when_clusters_are_homogeneous() {
    // Identical rates in every cluster: the ML variance is zero.
    let clusters: Vec<_> = (0..40)
        .map(|i| excellence_core::glmm::Cluster { id: format!("c{i}"), n_trials: 1000, n_success: 100 })
        .collect();
    let spec = FitSpec::new(clusters, Design::intercept_only(40), FitOptions::default()).unwrap();
    let fit = fit_model(&spec).unwrap();
    assert!(fit.at_boundary);
    assert_eq!(fit.sigma2, 0.0);
    assert!((fit.beta[0] - (0.1f64 / 0.9).ln()).abs() < 1e-9);
}

#[test]
fn covariate_shift_only_moves_the_intercept() {
    let s = sim(21, 150, 0.5, 0.3);
    let spec = s.spec(true, FitOptions::default()).unwrap();
    let shifted_x: Vec<f64> = s.x.iter().map(|v| v + 2.5).collect();
    let shifted = FitSpec::new(
        s.clusters.clone(),
        Design::with_covariate("x", &shifted_x).unwrap(),
        FitOptions::default(),
    )
    .unwrap();
    let a = fit_model(&spec).unwrap();
    let b = fit_model(&shifted).unwrap();
    assert!((b.beta[0] - (a.beta[0] - 2.5 * a.beta[1])).abs() < 1e-4);
    assert!((b.beta[1] - a.beta[1]).abs() < 1e-4);
    assert!((b.sigma2 - a.sigma2).abs() < 1e-4);
    let ea = eb_estimates(&spec, &a).unwrap();
    let eb = eb_estimates(&shifted, &b).unwrap();
    for (x, y) in ea.iter().zip(&eb) {
        assert!((x.u_mode - y.u_mode).abs() < 1e-4);
    }
    let order = |e: &[excellence_core::EBEstimate]| {
        let mut idx: Vec<usize> = (0..e.len()).collect();
        idx.sort_by(|i, j| e[*j].u_mode.total_cmp(&e[*i].u_mode));
        idx
    };
    assert_eq!(order(&ea), order(&eb));
}

#[test]
fn adding_a_covariate_never_increases_deviance() {
    for seed in 0..4 {
        let s = sim(300 + seed, 100, 0.2 * seed as f64, 0.4);
        let m0 = fit_model(&s.spec(false, FitOptions::default()).unwrap()).unwrap();
        let m1 = fit_model(&s.spec(true, FitOptions::default()).unwrap()).unwrap();
        assert!(deviance_bic(&m1).0 <= deviance_bic(&m0).0 + 1e-6, "seed {seed}");
    }
}

#[test]
fn rank_deficient_design_is_rejected() {
    let s = sim(1, 20, 0.0, 0.2);
    let x = vec![1.0; 20];
    let spec = FitSpec::new(s.clusters, Design::with_covariate("x", &x).unwrap(), FitOptions::default()).unwrap();
    assert!(matches!(fit_model(&spec), Err(excellence_core::Error::RankDeficient { .. })));
}
