//! Closed-form linear mixed model algebra.
//!
//! For the gaussian family the component posteriors are conjugate, so the
//! best predictors, posterior variances and the prediction-error term of the
//! conditional MSEP are available in closed form. All solves go through the
//! Cholesky factor of `I + τ⁻² SᵀZᵀZS`, where `S` is the Cholesky factor of
//! a component's random-effects covariance.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{ClusterData, FamilyKind, MixtureSpec, Theta};
use crate::normal::{log_sum_exp, LN_SQRT_2PI};
use crate::simlab::draw_random_effect;

/// Sufficient statistics of one cluster at fixed `β`, `τ²` and `L`.
#[derive(Clone, Debug, PartialEq)]
pub struct LmmClusterMats {
    pub ztz: DMatrix<f64>,
    /// `Zᵀ(y − Xβ)`
    pub zty_resid: DVector<f64>,
    /// `(y − Xβ)ᵀ(y − Xβ)`
    pub resid_ss: f64,
    pub n: usize,
    pub tau2: f64,
    pub l: DMatrix<f64>,
}

impl LmmClusterMats {
    pub fn new(
        cluster: &ClusterData,
        beta: &DVector<f64>,
        tau2: f64,
        l: &DMatrix<f64>,
    ) -> Result<Self> {
        if cluster.x.ncols() != beta.len() {
            return Err(Error::Dimension(format!(
                "X has {} columns, beta has {}",
                cluster.x.ncols(),
                beta.len()
            )));
        }
        if l.nrows() != cluster.z.ncols() || l.ncols() != cluster.z.ncols() {
            return Err(Error::Dimension("L must be q_r x q_r".into()));
        }
        if !(tau2 > 0.0) {
            return Err(Error::InvalidParameter(format!("tau2 must be positive, got {tau2}")));
        }
        let resid = &cluster.y - &cluster.x * beta;
        Ok(LmmClusterMats {
            ztz: cluster.z.transpose() * &cluster.z,
            zty_resid: cluster.z.transpose() * &resid,
            resid_ss: resid.norm_squared(),
            n: cluster.n(),
            tau2,
            l: l.clone(),
        })
    }

    pub fn from_theta(cluster: &ClusterData, theta: &Theta) -> Result<Self> {
        if theta.family.kind != FamilyKind::Gaussian {
            return Err(Error::Unsupported("closed-form LMM algebra needs the gaussian family".into()));
        }
        Self::new(cluster, &theta.beta, theta.family.dispersion, &theta.re_scale)
    }

    pub fn dim(&self) -> usize {
        self.ztz.nrows()
    }
}

/// Conjugate posterior of one mixture component.
#[derive(Clone, Debug, PartialEq)]
pub struct LmmComponent {
    /// `log pₖ(yᵢ)`
    pub log_marginal: f64,
    /// `mₖ`
    pub mean: DVector<f64>,
    /// `vₖ = {(LΣₖLᵀ)⁻¹ + τ⁻²ZᵀZ}⁻¹`
    pub cov: DMatrix<f64>,
}

/// Posterior under a prior `N(a, SSᵀ)` with `S` lower triangular.
fn conjugate_component(
    mats: &LmmClusterMats,
    prior_mean: &DVector<f64>,
    prior_chol: &DMatrix<f64>,
) -> Result<LmmComponent> {
    let d = mats.dim();
    let inv_tau2 = 1.0 / mats.tau2;
    let inner = DMatrix::identity(d, d) + prior_chol.transpose() * &mats.ztz * prior_chol * inv_tau2;
    let chol = inner
        .cholesky()
        .ok_or_else(|| Error::Singular("posterior precision".into()))?;
    let inner_inv = chol.inverse();
    let cov = prior_chol * &inner_inv * prior_chol.transpose();
    let ztr = &mats.zty_resid - &mats.ztz * prior_mean;
    // standardized posterior mean v; the quadratic form is evaluated at
    // a + Sv so a huge prior mean does not cancel against the data terms
    let v = &inner_inv * (prior_chol.transpose() * &ztr) * inv_tau2;
    let mean = prior_mean + prior_chol * &v;

    let rss = mats.resid_ss - 2.0 * mean.dot(&mats.zty_resid) + mean.dot(&(&mats.ztz * &mean));
    let quad = rss.max(0.0) * inv_tau2 + v.norm_squared();
    let log_det_inner = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let n = mats.n as f64;
    let log_marginal =
        -n * LN_SQRT_2PI - 0.5 * n * mats.tau2.ln() - 0.5 * log_det_inner - 0.5 * quad;
    Ok(LmmComponent { log_marginal, mean, cov })
}

/// Conjugate posteriors for every component of `L · spec`.
pub fn lmm_components(mats: &LmmClusterMats, spec: &MixtureSpec) -> Result<Vec<LmmComponent>> {
    if spec.dim() != mats.dim() {
        return Err(Error::Dimension("mixture and Z dimensions differ".into()));
    }
    (0..spec.components())
        .map(|k| {
            let a = &mats.l * &spec.means[k];
            let s = &mats.l * &spec.scales[k];
            conjugate_component(mats, &a, &s)
        })
        .collect()
}

/// BLUP under a normal random effect: `{(LLᵀ)⁻¹ + τ⁻²ZᵀZ}⁻¹ τ⁻² Zᵀ(y − Xβ)`.
pub fn blup_normal(mats: &LmmClusterMats) -> Result<DVector<f64>> {
    let d = mats.dim();
    Ok(conjugate_component(mats, &DVector::zeros(d), &mats.l)?.mean)
}

/// Best predictor under the mixture law.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureBp {
    pub w: DVector<f64>,
    pub comp_means: Vec<DVector<f64>>,
    pub comp_weights: Vec<f64>,
    pub log_marginals: Vec<f64>,
}

fn posterior_weights(spec: &MixtureSpec, log_marginals: &[f64]) -> Vec<f64> {
    let logs: Vec<f64> = spec
        .weights
        .iter()
        .zip(log_marginals)
        .map(|(p, l)| if *p > 0.0 { p.ln() + l } else { f64::NEG_INFINITY })
        .collect();
    let lse = log_sum_exp(&logs);
    logs.iter().map(|l| (l - lse).exp()).collect()
}

/// `w₀ᵢ = Σ πₖ pₖ(yᵢ) mₖ / Σ πₖ pₖ(yᵢ)` with closed-form `pₖ(yᵢ)` and `mₖ`.
pub fn bp_mixture_lmm(mats: &LmmClusterMats, spec: &MixtureSpec) -> Result<MixtureBp> {
    let comps = lmm_components(mats, spec)?;
    Ok(mixture_bp_from(&comps, spec))
}

fn mixture_bp_from(comps: &[LmmComponent], spec: &MixtureSpec) -> MixtureBp {
    let log_marginals: Vec<f64> = comps.iter().map(|c| c.log_marginal).collect();
    let comp_weights = posterior_weights(spec, &log_marginals);
    let mut w = DVector::zeros(spec.dim());
    for (a, c) in comp_weights.iter().zip(comps) {
        w += &c.mean * *a;
    }
    MixtureBp {
        w,
        comp_means: comps.iter().map(|c| c.mean.clone()).collect(),
        comp_weights,
        log_marginals,
    }
}

/// `v₀ᵢ = Σ ωₖ(vₖ + mₖmₖᵀ) − w₀ᵢw₀ᵢᵀ` with `ωₖ ∝ πₖ pₖ(yᵢ)`.
pub fn posterior_var_mixture_lmm(mats: &LmmClusterMats, spec: &MixtureSpec) -> Result<DMatrix<f64>> {
    let comps = lmm_components(mats, spec)?;
    let bp = mixture_bp_from(&comps, spec);
    Ok(mixture_var_from(&comps, &bp))
}

fn mixture_var_from(comps: &[LmmComponent], bp: &MixtureBp) -> DMatrix<f64> {
    let d = bp.w.len();
    let mut v = DMatrix::zeros(d, d);
    for (a, c) in bp.comp_weights.iter().zip(comps) {
        let dm = &c.mean - &bp.w;
        v += (&c.cov + &dm * dm.transpose()) * *a;
    }
    (&v + v.transpose()) * 0.5
}

/// Best predictor, posterior covariance and component weights in one pass.
pub fn mixture_posterior_lmm(
    mats: &LmmClusterMats,
    spec: &MixtureSpec,
) -> Result<(MixtureBp, DMatrix<f64>)> {
    let comps = lmm_components(mats, spec)?;
    let bp = mixture_bp_from(&comps, spec);
    let v = mixture_var_from(&comps, &bp);
    Ok((bp, v))
}

/// `log p(yᵢ)` under the mixture, in closed form.
pub fn lmm_log_marginal(mats: &LmmClusterMats, spec: &MixtureSpec) -> Result<f64> {
    let comps = lmm_components(mats, spec)?;
    let logs: Vec<f64> = spec
        .weights
        .iter()
        .zip(&comps)
        .map(|(p, c)| if *p > 0.0 { p.ln() + c.log_marginal } else { f64::NEG_INFINITY })
        .collect();
    Ok(log_sum_exp(&logs))
}

/// Prediction-error term of the UMSEP under a normal random effect,
/// `{(LLᵀ)⁻¹ + τ⁻²ZᵀZ}⁻¹`.
pub fn u1_normal(mats: &LmmClusterMats) -> Result<DMatrix<f64>> {
    let d = mats.dim();
    Ok(conjugate_component(mats, &DVector::zeros(d), &mats.l)?.cov)
}

/// Monte-Carlo matrix estimate with elementwise standard errors.
#[derive(Clone, Debug, PartialEq)]
pub struct McMatrix {
    pub mean: DMatrix<f64>,
    pub se: DMatrix<f64>,
    pub reps: usize,
}

struct MatrixAccumulator {
    sum: DMatrix<f64>,
    sum_sq: DMatrix<f64>,
    n: usize,
}

impl MatrixAccumulator {
    fn new(d: usize) -> Self {
        MatrixAccumulator { sum: DMatrix::zeros(d, d), sum_sq: DMatrix::zeros(d, d), n: 0 }
    }

    fn push(&mut self, m: &DMatrix<f64>) {
        self.sum += m;
        self.sum_sq += m.component_mul(m);
        self.n += 1;
    }

    fn finish(self) -> McMatrix {
        let n = self.n as f64;
        let mean = &self.sum / n;
        let se = if self.n > 1 {
            let var = (&self.sum_sq / n - mean.component_mul(&mean)) * (n / (n - 1.0));
            var.map(|v| (v.max(0.0) / n).sqrt())
        } else {
            DMatrix::from_element(mean.nrows(), mean.ncols(), f64::INFINITY)
        };
        McMatrix { mean, se, reps: self.n }
    }
}

fn check_lmm_design(theta: &Theta, design: &ClusterData) -> Result<()> {
    if theta.family.kind != FamilyKind::Gaussian {
        return Err(Error::Unsupported("closed-form LMM algebra needs the gaussian family".into()));
    }
    if design.x.ncols() != theta.beta.len() || design.z.ncols() != theta.re_dim() {
        return Err(Error::Dimension("design does not conform to theta".into()));
    }
    Ok(())
}

fn draw_noise<R: Rng + ?Sized>(n: usize, tau2: f64, rng: &mut R) -> DVector<f64> {
    let tau = tau2.sqrt();
    DVector::from_fn(n, |_, _| tau * rng.sample::<f64, _>(StandardNormal))
}

fn with_response(design: &ClusterData, y: DVector<f64>) -> ClusterData {
    ClusterData { id: design.id.clone(), y, x: design.x.clone(), z: design.z.clone() }
}

/// `E[v₀ᵢ]` over responses drawn from the true marginal at a fixed design.
pub fn u1_mixture_mc<R: Rng + ?Sized>(
    theta: &Theta,
    design: &ClusterData,
    reps: usize,
    rng: &mut R,
) -> Result<McMatrix> {
    check_lmm_design(theta, design)?;
    if reps == 0 {
        return Err(Error::InvalidParameter("reps must be at least 1".into()));
    }
    let mut acc = MatrixAccumulator::new(theta.re_dim());
    let fixed = &design.x * &theta.beta;
    for _ in 0..reps {
        let u = draw_random_effect(theta, rng);
        let y = &fixed + &design.z * &u + draw_noise(design.n(), theta.family.dispersion, rng);
        let mats = LmmClusterMats::from_theta(&with_response(design, y), theta)?;
        acc.push(&posterior_var_mixture_lmm(&mats, &theta.re_mixture)?);
    }
    Ok(acc.finish())
}

/// `Γ₁ = Aτ⁻²ZᵀZ − I` and `Γ₂ = Aτ⁻²Zᵀ`, where `A = {(LLᵀ)⁻¹ + τ⁻²ZᵀZ}⁻¹`,
/// so that `w*ᵢ − uᵢ = Γ₁uᵢ + Γ₂εᵢ`.
#[derive(Clone, Debug, PartialEq)]
pub struct CmsepGammas {
    pub gamma1: DMatrix<f64>,
    pub gamma2: DMatrix<f64>,
}

impl CmsepGammas {
    pub fn new(z: &DMatrix<f64>, mats: &LmmClusterMats) -> Result<Self> {
        if z.nrows() != mats.n || z.ncols() != mats.dim() {
            return Err(Error::Dimension("Z does not match the cluster statistics".into()));
        }
        let a = u1_normal(mats)?;
        let d = mats.dim();
        let inv_tau2 = 1.0 / mats.tau2;
        Ok(CmsepGammas {
            gamma1: &a * &mats.ztz * inv_tau2 - DMatrix::identity(d, d),
            gamma2: &a * z.transpose() * inv_tau2,
        })
    }
}

/// `C₁ = Γ₁uuᵀΓ₁ᵀ + τ²Γ₂Γ₂ᵀ` for the normal-law BLUP.
pub fn c1_normal(mats: &LmmClusterMats, u: &DVector<f64>) -> Result<DMatrix<f64>> {
    if u.len() != mats.dim() {
        return Err(Error::Dimension("u does not match q_r".into()));
    }
    let a = u1_normal(mats)?;
    let d = mats.dim();
    let inv_tau2 = 1.0 / mats.tau2;
    let g1 = &a * &mats.ztz * inv_tau2 - DMatrix::identity(d, d);
    let g1u = &g1 * u;
    // τ²Γ₂Γ₂ᵀ = τ⁻² A ZᵀZ A
    let noise = &a * &mats.ztz * &a * inv_tau2;
    let c1 = &g1u * g1u.transpose() + noise;
    Ok((&c1 + c1.transpose()) * 0.5)
}

/// `E[(w₀ᵢ − u)(w₀ᵢ − u)ᵀ | u]` for the mixture best predictor, by
/// simulating `ε` at fixed `u`.
pub fn c1_mixture_mc<R: Rng + ?Sized>(
    theta: &Theta,
    design: &ClusterData,
    u: &DVector<f64>,
    reps: usize,
    rng: &mut R,
) -> Result<McMatrix> {
    check_lmm_design(theta, design)?;
    if reps == 0 {
        return Err(Error::InvalidParameter("reps must be at least 1".into()));
    }
    let mut acc = MatrixAccumulator::new(theta.re_dim());
    let signal = &design.x * &theta.beta + &design.z * u;
    for _ in 0..reps {
        let y = &signal + draw_noise(design.n(), theta.family.dispersion, rng);
        let mats = LmmClusterMats::from_theta(&with_response(design, y), theta)?;
        let gap = bp_mixture_lmm(&mats, &theta.re_mixture)?.w - u;
        acc.push(&(&gap * gap.transpose()));
    }
    Ok(acc.finish())
}

/// The mixture prediction gap `w₀ᵢ − u` for `y = Xβ + Zu + ε`, computed both
/// directly from the best predictor and through the data-weighted expansion
/// `Σ ζₖ{τ⁻²ZᵀZu + (LΣₖLᵀ)⁻¹Lμₖ + τ⁻²Zᵀε} − u` with
/// `ζₖ = ωₖ{(LΣₖLᵀ)⁻¹ + τ⁻²ZᵀZ}⁻¹`. Returns `(direct, expanded)`.
pub fn mixture_gap_expansion(
    theta: &Theta,
    design: &ClusterData,
    u: &DVector<f64>,
    eps: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    check_lmm_design(theta, design)?;
    if eps.len() != design.n() {
        return Err(Error::Dimension("eps length differs from cluster size".into()));
    }
    let y = &design.x * &theta.beta + &design.z * u + eps;
    let mats = LmmClusterMats::from_theta(&with_response(design, y), theta)?;
    let bp = bp_mixture_lmm(&mats, &theta.re_mixture)?;
    let direct = &bp.w - u;

    let d = theta.re_dim();
    let inv_tau2 = 1.0 / mats.tau2;
    let zte = design.z.transpose() * eps;
    let mut expanded = -u.clone();
    for k in 0..theta.components() {
        let cov_k = &theta.re_scale
            * &theta.re_mixture.scales[k]
            * theta.re_mixture.scales[k].transpose()
            * theta.re_scale.transpose();
        let prec_k = cov_k
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Singular(format!("component {k} covariance")))?;
        let zeta = (&prec_k + &mats.ztz * inv_tau2)
            .try_inverse()
            .ok_or_else(|| Error::Singular("posterior precision".into()))?
            * bp.comp_weights[k];
        let prior_mean = &theta.re_scale * &theta.re_mixture.means[k];
        let bracket = &mats.ztz * u * inv_tau2 + &prec_k * prior_mean + &zte * inv_tau2;
        expanded += zeta * bracket;
    }
    debug_assert_eq!(expanded.len(), d);
    Ok((direct, expanded))
}

/// Cross-entropy of the normal working model at `theta_star` under the true
/// mixture marginal of `y`, summed over the design's clusters and with
/// `theta_star`-free constants dropped. Minimized at the pseudo-true
/// parameter.
pub fn kl_objective(theta_star: &Theta, truth: &Theta, design: &[ClusterData]) -> Result<f64> {
    if theta_star.components() != 1 {
        return Err(Error::InvalidParameter("working model must have c = 1".into()));
    }
    for t in [theta_star, truth] {
        if t.family.kind != FamilyKind::Gaussian {
            return Err(Error::Unsupported("KL objective is defined for LMMs".into()));
        }
    }
    let star_chol = &theta_star.re_scale * &theta_star.re_mixture.scales[0];
    let star_shift = &theta_star.re_scale * &theta_star.re_mixture.means[0];
    let mut total = 0.0;
    for cluster in design {
        check_lmm_design(theta_star, cluster)?;
        check_lmm_design(truth, cluster)?;
        let n = cluster.n();
        if n == 0 {
            continue;
        }
        let zs = &cluster.z * &star_chol;
        let sigma_star =
            &zs * zs.transpose() + DMatrix::identity(n, n) * theta_star.family.dispersion;
        let mu_star = &cluster.x * &theta_star.beta + &cluster.z * &star_shift;
        let chol = sigma_star
            .cholesky()
            .ok_or_else(|| Error::Singular("working marginal covariance".into()))?;
        let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let mut k_sum = 0.0;
        for k in 0..truth.components() {
            let s = &truth.re_scale * &truth.re_mixture.scales[k];
            let zs0 = &cluster.z * s;
            let sigma_k = &zs0 * zs0.transpose() + DMatrix::identity(n, n) * truth.family.dispersion;
            let mu_k = &cluster.x * &truth.beta
                + &cluster.z * (&truth.re_scale * &truth.re_mixture.means[k]);
            let trace = chol.solve(&sigma_k).trace();
            let diff = &mu_star - mu_k;
            let quad = diff.dot(&chol.solve(&diff));
            k_sum += truth.re_mixture.weights[k] * (trace + quad + log_det);
        }
        total += 0.5 * k_sum;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{standardize_mixture, Family};

    fn cluster(y: &[f64], x2: &[f64]) -> ClusterData {
        let n = y.len();
        let mut x = DMatrix::from_element(n, 2, 1.0);
        for (i, v) in x2.iter().enumerate() {
            x[(i, 1)] = *v;
        }
        ClusterData::intercept_only("c", y.to_vec(), x).unwrap()
    }

    fn dist_ii_theta(tau2: f64, l: f64) -> Theta {
        let spec = standardize_mixture(
            &MixtureSpec::univariate(&[0.5, 0.5], &[-1.77, 1.77], &[0.59, 1.18]).unwrap(),
        )
        .unwrap();
        Theta::new(
            DVector::from_vec(vec![0.0, 1.0]),
            Family::gaussian(tau2).unwrap(),
            DMatrix::from_element(1, 1, l),
            spec,
        )
        .unwrap()
    }

    #[test]
    fn log_marginal_stable_for_huge_prior() {
        let y = [0.3, -1.2, 2.0, 0.7, 1.1];
        let c = cluster(&y, &[0.0; 5]);
        let tau2 = 1.2;
        for (mu, s) in [(0.4, 1.5), (8.5e10, 1e10), (-3e12, 2e11)] {
            let m = LmmClusterMats::new(&c, &DVector::from_vec(vec![0.0, 0.0]), tau2, &DMatrix::from_element(1, 1, 1.0))
                .unwrap();
            let got = conjugate_component(&m, &DVector::from_element(1, mu), &DMatrix::from_element(1, 1, s))
                .unwrap()
                .log_marginal;
            let n = y.len() as f64;
            let ybar = y.iter().sum::<f64>() / n;
            let within: f64 = y.iter().map(|v| (v - ybar).powi(2)).sum();
            let big = tau2 + n * s * s;
            let want = -n * LN_SQRT_2PI - 0.5 * (n - 1.0) * tau2.ln() - 0.5 * big.ln()
                - 0.5 * within / tau2
                - 0.5 * n * (ybar - mu).powi(2) / big;
            assert!((got - want).abs() < 1e-8 * want.abs().max(1.0), "{mu} {s}: {got} vs {want}");
        }
    }

    #[test]
    fn empty_cluster_blup_is_zero() {
        let c = cluster(&[], &[]);
        let m = LmmClusterMats::new(&c, &DVector::from_vec(vec![0.0, 1.0]), 1.0, &DMatrix::from_element(1, 1, 1.0))
            .unwrap();
        assert_eq!(blup_normal(&m).unwrap()[0], 0.0);
        let theta = dist_ii_theta(1.0, 1.3);
        let m = LmmClusterMats::from_theta(&c, &theta).unwrap();
        let bp = bp_mixture_lmm(&m, &theta.re_mixture).unwrap();
        assert!(bp.w[0].abs() < 1e-12);
        let v = posterior_var_mixture_lmm(&m, &theta.re_mixture).unwrap();
        assert!((v[(0, 0)] - 1.69).abs() < 1e-12);
    }

    #[test]
    fn huge_noise_gives_total_shrinkage() {
        let c = cluster(&[3.0, 2.5, 4.0], &[0.1, 0.2, 0.3]);
        let m = LmmClusterMats::new(&c, &DVector::from_vec(vec![0.0, 1.0]), 1e12, &DMatrix::from_element(1, 1, 1.0))
            .unwrap();
        assert!(blup_normal(&m).unwrap()[0].abs() < 1e-6);
    }

    #[test]
    fn blup_closed_form_scalar() {
        // intercept-only Z: w = n L² r̄ / (τ² + n L²)
        let c = cluster(&[1.0, 2.0, 0.5, 1.5], &[0.0; 4]);
        let beta = DVector::from_vec(vec![0.3, 0.0]);
        let (tau2, l) = (0.8, 1.7);
        let m = LmmClusterMats::new(&c, &beta, tau2, &DMatrix::from_element(1, 1, l)).unwrap();
        let rbar = (1.0 + 2.0 + 0.5 + 1.5) / 4.0 - 0.3;
        let expect = 4.0 * l * l * rbar / (tau2 + 4.0 * l * l);
        assert!((blup_normal(&m).unwrap()[0] - expect).abs() < 1e-13);
        assert!((u1_normal(&m).unwrap()[(0, 0)] - l * l * tau2 / (tau2 + 4.0 * l * l)).abs() < 1e-13);
    }

    #[test]
    fn c1_normal_properties() {
        let c = cluster(&[0.0; 5], &[0.1, 0.5, 0.9, 0.2, 0.7]);
        let m = LmmClusterMats::new(&c, &DVector::from_vec(vec![0.0, 1.0]), 1.0, &DMatrix::from_element(1, 1, 1.0))
            .unwrap();
        let g = CmsepGammas::new(&c.z, &m).unwrap();
        let c0 = c1_normal(&m, &DVector::zeros(1)).unwrap();
        let noise = (&g.gamma2 * g.gamma2.transpose()) * m.tau2;
        assert!((c0[(0, 0)] - noise[(0, 0)]).abs() < 1e-14);
        for u in [0.3, 1.0, 2.5] {
            let a = c1_normal(&m, &DVector::from_element(1, u)).unwrap();
            let b = c1_normal(&m, &DVector::from_element(1, -u)).unwrap();
            assert!((a[(0, 0)] - b[(0, 0)]).abs() < 1e-15);
            assert!(a[(0, 0)] > c0[(0, 0)]);
        }
        // Γ₁ = Aτ⁻²ZᵀZ − I reconstructs from u1_normal
        let a = u1_normal(&m).unwrap();
        assert!((g.gamma1[(0, 0)] - (a[(0, 0)] * 5.0 - 1.0)).abs() < 1e-14);
    }

    #[test]
    fn kl_rejects_mixture_working_model() {
        let t = dist_ii_theta(1.0, 1.0);
        assert!(kl_objective(&t, &t, &[cluster(&[0.0], &[0.0])]).is_err());
    }
}
