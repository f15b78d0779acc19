//! Behaviour of maximum-likelihood fits on simulated data.

use glmm_mispredict::fit::{fit_from, fit_ml, LikelihoodMethod};
use glmm_mispredict::model::Dataset;
use glmm_mispredict::rng::stream;
use glmm_mispredict::simlab::{find_scenario, generate, ClusterSize};
use glmm_mispredict::{FamilyKind, FitConfig};

fn lmm_data(name: &str, m: usize, seed: u64) -> Dataset {
    let mut s = find_scenario(name).unwrap();
    s.m = m;
    generate(&s, &mut stream(seed, "data", 0)).unwrap().dataset
}

#[test]
fn mixture_fit_nests_normal_fit() {
    let ds = lmm_data("tableS1:lmm:distII:m100:n5", 100, 31);
    let one = fit_ml(&ds, FamilyKind::Gaussian, &FitConfig::with_components(1), &mut stream(31, "fit", 1)).unwrap();
    let two = fit_ml(&ds, FamilyKind::Gaussian, &FitConfig::with_components(2), &mut stream(31, "fit", 2)).unwrap();
    assert!(two.loglik >= one.loglik - 1e-6, "{} < {}", two.loglik, one.loglik);
    let means = two.theta_hat.re_mixture.means_1d();
    assert!(means[0] < means[1]);
    assert_eq!(one.per_cluster.len(), 100);
    assert_eq!(one.theta_hat.re_mixture.weights, vec![1.0]);
}

#[test]
fn refit_from_optimum_is_stationary() {
    let ds = lmm_data("tableS1:lmm:distI:m50:n5", 50, 32);
    let cfg = FitConfig::with_components(2);
    let fitted = fit_ml(&ds, FamilyKind::Gaussian, &cfg, &mut stream(32, "fit", 0)).unwrap();
    let again = fit_from(&ds, &cfg, std::slice::from_ref(&fitted.theta_hat)).unwrap();
    let rel = (again.loglik - fitted.loglik).abs() / fitted.loglik.abs();
    assert!(again.loglik >= fitted.loglik - 1e-9);
    assert!(rel < 1e-6, "{rel}");
}

#[test]
fn cluster_order_does_not_matter() {
    let ds = lmm_data("tableS1:lmm:distII:m50:n5", 50, 33);
    let mut rev = ds.clusters.clone();
    rev.reverse();
    let rev = Dataset::new(rev).unwrap();
    let cfg = FitConfig::default();
    let a = fit_ml(&ds, FamilyKind::Gaussian, &cfg, &mut stream(33, "fit", 0)).unwrap();
    let b = fit_ml(&rev, FamilyKind::Gaussian, &cfg, &mut stream(33, "fit", 0)).unwrap();
    assert!((a.loglik - b.loglik).abs() < 1e-6);
    for (x, y) in a.theta_hat.beta.iter().zip(b.theta_hat.beta.iter()) {
        assert!((x - y).abs() < 1e-3);
    }
    assert!((a.theta_hat.scale_1d() - b.theta_hat.scale_1d()).abs() < 1e-3);
}

#[test]
fn exact_and_quadrature_likelihoods_agree() {
    let ds = lmm_data("tableS1:lmm:distII:m100:n5", 100, 34);
    let exact = FitConfig::default();
    let quad = FitConfig { likelihood: LikelihoodMethod::Quadrature, ..exact };
    let a = fit_ml(&ds, FamilyKind::Gaussian, &exact, &mut stream(34, "fit", 0)).unwrap();
    let b = fit_ml(&ds, FamilyKind::Gaussian, &quad, &mut stream(34, "fit", 0)).unwrap();
    for (x, y) in a.theta_hat.beta.iter().zip(b.theta_hat.beta.iter()) {
        assert!((x - y).abs() < 1e-4, "{x} vs {y}");
    }
    assert!((a.theta_hat.scale_1d() - b.theta_hat.scale_1d()).abs() < 1e-4);
    assert!((a.theta_hat.family.dispersion - b.theta_hat.family.dispersion).abs() < 1e-4);
}

#[test]
fn mixture_means_recovered_at_large_m() {
    let mut s = find_scenario("tableS1:lmm:distII:m100:n5").unwrap();
    s.m = 1000;
    s.cluster_size = ClusterSize::Constant(10);
    let data = generate(&s, &mut stream(35, "data", 0)).unwrap();
    let fitted =
        fit_ml(&data.dataset, FamilyKind::Gaussian, &FitConfig::with_components(2), &mut stream(35, "fit", 0)).unwrap();
    // the truth stores raw component means with L = 1
    let truth = s.truth_theta().unwrap();
    let l = fitted.theta_hat.scale_1d();
    for (k, m) in fitted.theta_hat.re_mixture.means_1d().iter().enumerate() {
        let true_mean = truth.re_mixture.means_1d()[k] * truth.scale_1d();
        assert!((m * l - true_mean).abs() < 0.15, "component {k}: {} vs {true_mean}", m * l);
    }
}

#[test]
fn bernoulli_and_poisson_fits_run() {
    for (name, kind) in
        [("table2:poisson:distI:m50:n5", FamilyKind::Poisson), ("table1:bernoulli:distII:m100:n20", FamilyKind::Bernoulli)]
    {
        let s = find_scenario(name).unwrap();
        let data = generate(&s, &mut stream(36, "data", 0)).unwrap();
        let cfg = FitConfig { n_starts: 1, ..FitConfig::default() };
        let f = fit_ml(&data.dataset, kind, &cfg, &mut stream(36, "fit", 0)).unwrap();
        assert!(f.loglik.is_finite());
        assert!((f.theta_hat.beta[1] - 1.0).abs() < 0.5, "{name}: {}", f.theta_hat.beta[1]);
        let mean_w = f.per_cluster.iter().map(|p| p.w).sum::<f64>() / f.per_cluster.len() as f64;
        assert!(mean_w.abs() < 0.3);
    }
}
