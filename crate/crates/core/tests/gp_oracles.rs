use lfd_core::dataset::RegressionSet;
use lfd_core::gp_baseline::{fit, kernel_eval, predict_gp, FitOptions, KernelConfig};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_set(n: usize, d: usize, seed: u64) -> RegressionSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let ys: Vec<Vec<f64>> = xs.iter().map(|x| vec![x.iter().map(|v| v.sin()).sum::<f64>()]).collect();
    RegressionSet::from_rows(&xs, &ys).unwrap()
}

fn no_fit() -> FitOptions {
    FitOptions {
        steps: 0,
        ..FitOptions::default()
    }
}

fn ard(d: usize) -> KernelConfig {
    KernelConfig {
        signal_variance: 1.3,
        lengthscales: (0..d).map(|i| 0.7 + 0.3 * i as f64).collect(),
        noise_variance: 0.05,
        mean_constant: 0.0,
    }
}

#[test]
fn cholesky_solution_matches_dense_inverse() {
    for (n, d, seed) in [(1, 1, 0), (4, 2, 1), (7, 3, 2), (10, 2, 3)] {
        let data = random_set(n, d, seed);
        let model = fit(&data, &ard(d), no_fit()).unwrap();
        let cfg = &model.configs[0];
        let rows: Vec<Vec<f64>> = (0..n).map(|i| data.inputs.row(i).iter().copied().collect()).collect();
        let k = DMatrix::from_fn(n, n, |i, j| kernel_eval(cfg, &rows[i], &rows[j]))
            + DMatrix::identity(n, n) * cfg.noise_variance;
        let inv = k.clone().try_inverse().unwrap();
        let resid = DVector::from_fn(n, |i, _| data.targets[(i, 0)] - cfg.mean_constant);
        let alpha = &inv * &resid;
        let diff = (&alpha - model.alpha(0)).amax();
        assert!(diff < 1e-8, "n={n}: alpha differs by {diff}");

        let x: Vec<f64> = (0..d).map(|i| 0.3 - 0.2 * i as f64).collect();
        let kstar = DVector::from_fn(n, |i, _| kernel_eval(cfg, &rows[i], &x));
        let mean = cfg.mean_constant + kstar.dot(&alpha);
        let var = cfg.signal_variance - (kstar.transpose() * &inv * &kstar)[(0, 0)] + cfg.noise_variance;
        let (m, v) = model.moments(&x).unwrap()[0];
        assert!((m - mean).abs() < 1e-8, "mean {m} vs {mean}");
        assert!((v - var).abs() < 1e-8, "variance {v} vs {var}");
    }
}

#[test]
fn interpolates_training_targets_at_near_zero_noise() {
    let xs: Vec<Vec<f64>> = (0..9).map(|i| vec![-2.0 + 0.5 * i as f64]).collect();
    let ys: Vec<Vec<f64>> = xs.iter().map(|x| vec![x[0].sin()]).collect();
    let data = RegressionSet::from_rows(&xs, &ys).unwrap();
    let cfg = KernelConfig::isotropic(1, 1.0, 0.8, 1e-8);
    let model = fit(&data, &cfg, no_fit()).unwrap();
    for (x, y) in xs.iter().zip(&ys) {
        let p = predict_gp(&model, x).unwrap();
        assert!((p.mean[0] - y[0]).abs() < 1e-2, "at {x:?}: {} vs {}", p.mean[0], y[0]);
    }
}

proptest! {
    #[test]
    fn posterior_variance_never_exceeds_prior(
        n in 1usize..10,
        d in 1usize..4,
        seed in any::<u64>(),
        query in prop::collection::vec(-5.0f64..5.0, 3),
    ) {
        let data = random_set(n, d, seed);
        let model = fit(&data, &ard(d), no_fit()).unwrap();
        let (_, var) = model.moments(&query[..d]).unwrap()[0];
        prop_assert!(var <= model.prior_variance(0) + 1e-12);
    }
}
