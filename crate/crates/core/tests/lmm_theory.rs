//! Closed-form LMM quantities against simulation and their qualitative shape.

mod common;

use common::*;
use glmm_mispredict::lmm::{blup_normal, c1_normal, kl_objective, u1_normal, CmsepGammas, LmmClusterMats};
use glmm_mispredict::model::{standardize_mixture, ClusterData, Family, FamilyKind, MixtureSpec, Theta};
use glmm_mispredict::rng::stream;
use glmm_mispredict::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

fn lmm_theta(spec: MixtureSpec, beta: [f64; 2], l: f64, tau2: f64) -> Theta {
    Theta::new(
        DVector::from_vec(beta.to_vec()),
        Family::gaussian(tau2).unwrap(),
        DMatrix::from_element(1, 1, l),
        spec,
    )
    .unwrap()
}

fn design(n: usize, rng: &mut impl Rng) -> ClusterData {
    let x = DMatrix::from_fn(n, 2, |_, j| if j == 0 { 1.0 } else { rng.random_range(0.0..1.0) });
    ClusterData::intercept_only("d", vec![0.0; n], x).unwrap()
}

#[test]
fn c1_normal_agrees_with_simulation() {
    let mut rng = stream(21, "c1", 0);
    for _ in 0..5 {
        let theta = toy_theta(FamilyKind::Gaussian, MixtureSpec::standard_normal(1), &mut rng);
        let d = design(rng.random_range(2..=8), &mut rng);
        let u = DVector::from_element(1, rng.random_range(-2.0..2.0));
        let stats = LmmClusterMats::from_theta(&d, &theta).unwrap();
        let c1 = c1_normal(&stats, &u).unwrap()[(0, 0)];
        let tau = theta.family.dispersion.sqrt();
        let reps = 20_000;
        let sq: Vec<f64> = (0..reps)
            .map(|_| {
                let y = &d.x * &theta.beta
                    + &d.z * &u
                    + DVector::from_fn(d.n(), |_, _| tau * rng.sample::<f64, _>(StandardNormal));
                let c = ClusterData::new("d", y, d.x.clone(), d.z.clone()).unwrap();
                let w = blup_normal(&LmmClusterMats::from_theta(&c, &theta).unwrap()).unwrap();
                (w[0] - u[0]).powi(2)
            })
            .collect();
        let mean = sq.iter().sum::<f64>() / reps as f64;
        let se = (sq.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (reps as f64 - 1.0) / reps as f64).sqrt();
        assert!((mean - c1).abs() < 4.0 * se, "{mean} vs {c1} (se {se})");
    }
}

#[test]
fn gammas_reconstruct_the_gap() {
    let mut rng = stream(22, "gamma", 0);
    let theta = lmm_theta(MixtureSpec::standard_normal(1), [0.3, -0.2], 0.8, 0.6);
    let d = design(5, &mut rng);
    let u = DVector::from_element(1, 1.3);
    let eps = DVector::from_fn(5, |_, _| rng.sample::<f64, _>(StandardNormal));
    let y = &d.x * &theta.beta + &d.z * &u + &eps;
    let c = ClusterData::new("d", y, d.x.clone(), d.z.clone()).unwrap();
    let stats = LmmClusterMats::from_theta(&c, &theta).unwrap();
    let g = CmsepGammas::new(&c.z, &stats).unwrap();
    let gap = blup_normal(&stats).unwrap() - &u;
    let rebuilt = &g.gamma1 * &u + &g.gamma2 * &eps;
    assert!((gap[0] - rebuilt[0]).abs() < 1e-12);
}

#[test]
fn c1_normal_is_smallest_at_zero() {
    let mut rng = stream(23, "c1min", 0);
    let theta = lmm_theta(MixtureSpec::standard_normal(1), [0.0, 1.0], 1.0, 1.0);
    let stats = LmmClusterMats::from_theta(&design(5, &mut rng), &theta).unwrap();
    let at = |u: f64| c1_normal(&stats, &DVector::from_element(1, u)).unwrap()[(0, 0)];
    let zero = at(0.0);
    for i in 1..=40 {
        let u = i as f64 * 0.1;
        assert!(at(u) > zero && at(-u) > zero);
        assert!((at(u) - at(-u)).abs() < 1e-14);
    }
    // only the noise term survives at u = 0
    let a = u1_normal(&stats).unwrap();
    let noise = (&a * &stats.ztz * &a)[(0, 0)] / stats.tau2;
    assert!((zero - noise).abs() < 1e-15);
}

#[test]
fn u1_shrinks_with_cluster_size() {
    let theta = lmm_theta(MixtureSpec::standard_normal(1), [0.0, 1.0], 1.0, 1.0);
    let mut rng = stream(24, "u1", 0);
    let mut prev = f64::INFINITY;
    for n in [1, 2, 5, 10, 20, 80] {
        let stats = LmmClusterMats::from_theta(&design(n, &mut rng), &theta).unwrap();
        let u1 = u1_normal(&stats).unwrap()[(0, 0)];
        assert!((u1 - 1.0 / (1.0 + n as f64)).abs() < 1e-14);
        assert!(u1 < prev);
        prev = u1;
    }
}

#[test]
fn blup_approaches_truth_as_clusters_grow() {
    let theta = lmm_theta(MixtureSpec::standard_normal(1), [0.0, 1.0], 1.0, 1.0);
    let mut rng = stream(25, "shrink", 0);
    let u = DVector::from_element(1, 1.5);
    let mut prev = f64::INFINITY;
    for n in [5, 20, 80] {
        let mean_abs: f64 = (0..200)
            .map(|_| {
                let d = design(n, &mut rng);
                let y = &d.x * &theta.beta
                    + &d.z * &u
                    + DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
                let c = ClusterData::new("d", y, d.x.clone(), d.z.clone()).unwrap();
                (blup_normal(&LmmClusterMats::from_theta(&c, &theta).unwrap()).unwrap()[0] - u[0]).abs()
            })
            .sum::<f64>()
            / 200.0;
        assert!(mean_abs < prev);
        prev = mean_abs;
    }
}

fn kl_design() -> Vec<ClusterData> {
    let mut rng = stream(26, "kl", 0);
    (0..30).map(|i| design(2 + i % 6, &mut rng)).collect()
}

#[test]
fn kl_objective_minimized_at_truth() {
    let spec = standardize_mixture(&dist_ii()).unwrap();
    let truth = lmm_theta(spec, [0.0, 1.0], 2.0, 1.0);
    let star = |b0: f64, b1: f64, l: f64, tau2: f64| {
        lmm_theta(MixtureSpec::standard_normal(1), [b0, b1], l, tau2)
    };
    let ds = kl_design();
    let k0 = kl_objective(&star(0.0, 1.0, 2.0, 1.0), &truth, &ds).unwrap();
    let mut rng = stream(26, "perturb", 0);
    for _ in 0..50 {
        let mut d: Vec<f64> = (0..4).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        d.iter_mut().for_each(|v| *v *= 0.05 / norm);
        let k = kl_objective(&star(d[0], 1.0 + d[1], 2.0 + d[2], 1.0 + d[3]), &truth, &ds).unwrap();
        assert!(k > k0);
    }
}

#[test]
fn kl_objective_is_stationary_for_normal_truth() {
    let truth = lmm_theta(MixtureSpec::standard_normal(1), [0.0, 1.0], 1.0, 1.0);
    let ds = kl_design();
    let h = 1e-5;
    let f = |p: [f64; 4]| {
        let t = lmm_theta(MixtureSpec::standard_normal(1), [p[0], p[1]], p[2], p[3]);
        kl_objective(&t, &truth, &ds).unwrap()
    };
    let base = [0.0, 1.0, 1.0, 1.0];
    for j in 0..4 {
        let (mut up, mut dn) = (base, base);
        up[j] += h;
        dn[j] -= h;
        let g = (f(up) - f(dn)) / (2.0 * h);
        assert!(g.abs() < 1e-6, "component {j}: {g}");
    }
}

#[test]
fn kl_objective_rises_away_from_true_tau2() {
    let spec = standardize_mixture(&dist_i()).unwrap();
    let truth = lmm_theta(spec, [0.0, 1.0], 1.0, 1.0);
    let ds = kl_design();
    let at = |tau2: f64| {
        kl_objective(&lmm_theta(MixtureSpec::standard_normal(1), [0.0, 1.0], 1.0, tau2), &truth, &ds).unwrap()
    };
    let mut prev = at(1.0);
    for i in 1..=10 {
        let k = at(1.0 + 0.1 * i as f64);
        assert!(k > prev);
        prev = k;
    }
    let mut prev = at(1.0);
    for i in 1..=9 {
        let k = at(1.0 - 0.1 * i as f64);
        assert!(k > prev);
        prev = k;
    }
}
