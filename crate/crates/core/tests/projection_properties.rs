use projexp_core::divergence::{information_loss, relative_power};
use projexp_core::models::{fit_bayes_logistic, BuiltinModel};
use projexp_core::perturb::{interpretable_rep, sample_perturbations};
use projexp_core::projection::{
    fit_null, fit_path, lambda_max, power_curve, project, project_ensemble, select_complexity, LambdaGrid,
};
use projexp_core::rng::rng_from_seed;
use projexp_core::{
    Family, Instance, LocalityConfig, PerturbationBatch, PredictionMatrix, Predictive, Representation, SolverConfig,
};
use proptest::prelude::*;
use rand::Rng;

fn logistic_model(seed: u64, d: usize) -> BuiltinModel {
    let mut rng = rng_from_seed(seed);
    let x: Vec<Vec<f64>> =
        (0..100).map(|_| (0..d).map(|_| f64::from(u8::from(rng.random::<f64>() < 0.5))).collect()).collect();
    let y: Vec<f64> =
        x.iter().map(|r| f64::from(u8::from(r[0] + 0.5 * r[1] - r[2] > rng.random_range(-1.0..1.0)))).collect();
    BuiltinModel::Logistic(fit_bayes_logistic(&x, &y, 1.0).unwrap())
}

fn image_like_instance(seed: u64, d: usize) -> Instance {
    let mut rng = rng_from_seed(seed);
    let mut features: Vec<f64> = (0..d).map(|_| f64::from(u8::from(rng.random::<f64>() < 0.6))).collect();
    features[0] = 1.0;
    Instance::new(features, 0.0, None).unwrap()
}

fn batch_and_preds(seed: u64, d: usize, n: usize, l: usize) -> (PerturbationBatch, PredictionMatrix) {
    let instance = image_like_instance(seed, d);
    let rep = interpretable_rep(&instance);
    let config = LocalityConfig { num_samples: n, seed, ..Default::default() };
    let batch = sample_perturbations(&instance, &rep, &config).unwrap();
    let preds = logistic_model(seed + 1, d).predict(&batch.original_rows(), l, seed + 2).unwrap();
    (batch, preds)
}

#[test]
fn path_matches_cold_start_fits_and_loss_is_monotone() {
    let (batch, preds) = batch_and_preds(1, 8, 300, 1);
    let targets = preds.row(0);
    let config = SolverConfig {
        lambda_grid: LambdaGrid::Auto { num_lambdas: 20, min_ratio: 1e-3 },
        tol: 1e-10,
        ..SolverConfig::default()
    };
    let path = fit_path(&batch, targets, &config).unwrap();
    for pair in path.windows(2) {
        assert!(pair[1].kl_loss <= pair[0].kl_loss + 1e-8, "{} then {}", pair[0].kl_loss, pair[1].kl_loss);
    }
    for warm in &path {
        let cold = project(&batch, targets, warm.lambda, &config).unwrap();
        assert!((cold.kl_loss - warm.kl_loss).abs() < 1e-8, "lambda {}", warm.lambda);
    }
}

#[test]
fn ensemble_aggregates_are_exact_means_and_variances() {
    let (batch, preds) = batch_and_preds(2, 10, 200, 7);
    let config = SolverConfig { lambda_grid: LambdaGrid::Auto { num_lambdas: 12, min_ratio: 1e-2 }, ..Default::default() };
    let ens = project_ensemble(&batch, &preds, &config).unwrap();
    let l = ens.num_samples() as f64;
    for k in 0..ens.lambda_grid.len() {
        for j in 0..ens.dim {
            let vals: Vec<f64> = (0..ens.num_samples()).map(|s| ens.sample_map(s, k)[j]).collect();
            let mean = vals.iter().sum::<f64>() / l;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / l;
            assert!((ens.mean_coefficients[k][j] - mean).abs() < 1e-12);
            assert!((ens.var_coefficients[k][j] - var).abs() < 1e-12);
        }
        let nnz = ens.per_sample_paths.iter().map(|p| p[k].nnz() as f64).sum::<f64>() / l;
        assert!((ens.mean_complexity[k] - nnz).abs() < 1e-12);
    }
}

#[test]
fn ensemble_is_independent_of_draw_batching() {
    let (batch, preds) = batch_and_preds(3, 6, 150, 4);
    let config = SolverConfig::default();
    let ens = project_ensemble(&batch, &preds, &config).unwrap();
    // Every per-draw path equals a standalone fit on the pooled grid.
    let grid = SolverConfig { lambda_grid: LambdaGrid::Explicit { values: ens.lambda_grid.clone() }, ..config };
    for l in 0..preds.num_samples() {
        let solo = fit_path(&batch, preds.row(l), &grid).unwrap();
        assert_eq!(solo, ens.per_sample_paths[l]);
    }
}

#[test]
fn inactive_positions_never_receive_weight() {
    let features = vec![1.0, 0.0, 0.7, 0.0, 0.0, 0.3, 1.0, 0.0];
    let instance = Instance::new(features, 0.0, None).unwrap();
    let rep = interpretable_rep(&instance);
    for representation in [Representation::BinaryPresence, Representation::Identity] {
        let config = LocalityConfig { num_samples: 200, seed: 9, representation, ..Default::default() };
        let batch = sample_perturbations(&instance, &rep, &config).unwrap();
        let preds = logistic_model(4, 8).predict(&batch.original_rows(), 5, 1).unwrap();
        let ens = project_ensemble(&batch, &preds, &SolverConfig::default()).unwrap();
        for path in &ens.per_sample_paths {
            for m in path {
                assert!(m.coefficients.keys().all(|j| rep.active()[*j]), "{:?}", m.coefficients);
            }
        }
        for k in 0..ens.lambda_grid.len() {
            for j in [1, 3, 4, 7] {
                assert_eq!(ens.mean_coefficients[k][j], 0.0);
                assert_eq!(ens.var_coefficients[k][j], 0.0);
            }
        }
    }
}

#[test]
fn power_curve_agrees_with_information_loss() {
    let (batch, preds) = batch_and_preds(5, 8, 250, 6);
    let null = fit_null(&batch, &preds).unwrap();
    let ens = project_ensemble(&batch, &preds, &SolverConfig::default()).unwrap();
    let curve = power_curve(&ens, null.delta_0).unwrap();
    assert_eq!(curve.points[0].relative_power, 0.0);
    let batch = &batch;
    for (k, pt) in curve.points.iter().enumerate() {
        let values: Vec<Predictive> = (0..preds.num_samples())
            .flat_map(|l| {
                let m = &ens.per_sample_paths[l][k];
                (0..batch.len()).map(move |i| m.predictive(batch.rep_row(i)))
            })
            .collect();
        let expl = PredictionMatrix::new(Family::Bernoulli, preds.num_samples(), batch.len(), values).unwrap();
        let delta = information_loss(&preds, &expl, batch.weights()).unwrap();
        let expected = relative_power(delta, null.delta_0).unwrap();
        assert!((pt.relative_power - expected).abs() < 1e-9, "k={k}: {} vs {expected}", pt.relative_power);
    }
    let sel = select_complexity(&curve, 0.5).unwrap();
    assert!(curve.points[sel.index].relative_power >= 0.5 || !sel.attained);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn lambda_max_separates_null_and_nonnull(seed in 0u64..10_000, n in 10usize..60, d in 1usize..6, gaussian in any::<bool>()) {
        let mut rng = rng_from_seed(seed);
        let reps: Vec<f64> = (0..n * d).map(|_| f64::from(u8::from(rng.random::<f64>() < 0.5))).collect();
        let batch = PerturbationBatch::from_design(n, d, reps, (0..d).collect()).unwrap();
        let targets: Vec<Predictive> = (0..n)
            .map(|_| if gaussian {
                Predictive::gaussian(rng.random_range(-1.0..1.0), 0.5).unwrap()
            } else {
                Predictive::bernoulli(rng.random_range(0.05..0.95)).unwrap()
            })
            .collect();
        let family = if gaussian { Family::Gaussian } else { Family::Bernoulli };
        let lmax = lambda_max(&batch, &targets, family).unwrap();
        prop_assume!(lmax > 1e-9);
        let cfg = SolverConfig::default();
        prop_assert_eq!(project(&batch, &targets, lmax * 1.01, &cfg).unwrap().nnz(), 0);
        prop_assert!(project(&batch, &targets, lmax * 0.5, &cfg).unwrap().nnz() >= 1);
    }

    #[test]
    fn power_is_monotone_and_bounded(seed in 0u64..1_000) {
        let (batch, preds) = batch_and_preds(seed, 6, 80, 3);
        let null = fit_null(&batch, &preds).unwrap();
        prop_assume!(null.delta_0 > 1e-12);
        let cfg = SolverConfig { lambda_grid: LambdaGrid::Auto { num_lambdas: 15, min_ratio: 1e-3 }, ..Default::default() };
        let ens = project_ensemble(&batch, &preds, &cfg).unwrap();
        let curve = power_curve(&ens, null.delta_0).unwrap();
        prop_assert!(curve.points[0].relative_power.abs() <= 1e-9);
        for w in curve.points.windows(2) {
            prop_assert!(w[1].relative_power >= w[0].relative_power - 1e-6);
            prop_assert!(w[1].relative_power <= 1.0);
        }
    }
}
