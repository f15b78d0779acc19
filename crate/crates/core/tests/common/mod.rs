#![allow(dead_code)]

use glmm_mispredict::model::{ClusterData, Family, FamilyKind, MixtureSpec, Theta};
use glmm_mispredict::rng::StreamRng;
use glmm_mispredict::simlab::{draw_random_effect, draw_response};
use glmm_mispredict::{DMatrix, DVector};
use rand::Rng;

pub fn dist_i() -> MixtureSpec {
    MixtureSpec::univariate(&[0.9, 0.1], &[-0.28, 2.56], &[0.28, 1.42]).unwrap()
}

pub fn dist_ii() -> MixtureSpec {
    MixtureSpec::univariate(&[0.5, 0.5], &[-1.77, 1.77], &[0.59, 1.18]).unwrap()
}

pub fn family(kind: FamilyKind, rng: &mut StreamRng) -> Family {
    match kind {
        FamilyKind::Gaussian => Family::gaussian(rng.random_range(0.3..2.0)).unwrap(),
        k => Family::of_kind(k),
    }
}

/// Random-intercept theta with `beta = (b0, b1)`.
pub fn toy_theta(kind: FamilyKind, spec: MixtureSpec, rng: &mut StreamRng) -> Theta {
    let beta = DVector::from_vec(vec![rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)]);
    let l = DMatrix::from_element(1, 1, rng.random_range(0.3..1.0));
    Theta::new(beta, family(kind, rng), l, spec).unwrap()
}

/// Cluster of size `n` drawn from `theta` with covariate in (-1, 1).
pub fn toy_cluster(theta: &Theta, n: usize, rng: &mut StreamRng) -> (ClusterData, f64) {
    let t: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { t[i] });
    let z = DMatrix::from_element(n, 1, 1.0);
    let u = draw_random_effect(theta, rng);
    let eta = &x * &theta.beta + &z * &u;
    let y = draw_response(&theta.family, &eta, rng);
    (ClusterData::new("toy", y, x, z).unwrap(), u[0])
}

pub fn all_families() -> [FamilyKind; 3] {
    [FamilyKind::Gaussian, FamilyKind::Bernoulli, FamilyKind::Poisson]
}
