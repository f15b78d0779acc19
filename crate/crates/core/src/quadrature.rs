//! Gauss-Hermite integration over a scalar random effect.
//!
//! Each mixture component is integrated separately with its own adaptive
//! recentring: the nodes are shifted to the mode of
//! `Π p(yⱼ | u) · N(u; Lμₖ, (Lσₖ)²)` and scaled by its curvature.

use std::f64::consts::{PI, SQRT_2};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{mixture_moments, ClusterData, Family, Theta};
use crate::normal::{log_sum_exp, LN_SQRT_2PI};

pub const MAX_ORDER: usize = 200;
pub const DEFAULT_ORDER: usize = 25;
const NEWTON_MAX_ITER: usize = 100;
const NEWTON_GRAD_TOL: f64 = 1e-10;

/// Nodes and weights for `∫ f(x) exp(−x²) dx ≈ Σ wᵢ f(xᵢ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GhRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    /// `ln wᵢ + xᵢ²`, used when the rule is applied to un-weighted integrands.
    log_adj: Vec<f64>,
}

impl GhRule {
    pub fn order(&self) -> usize {
        self.nodes.len()
    }
}

/// Gauss-Hermite rule of the given order.
///
/// Nodes start from the eigenvalues of the symmetric Jacobi matrix and are
/// polished by Newton steps on the orthonormal Hermite recurrence; weights
/// come from the derivative at each root, which keeps full relative accuracy
/// in the tails.
pub fn gh_rule(order: usize) -> Result<GhRule> {
    if !(1..=MAX_ORDER).contains(&order) {
        return Err(Error::InvalidParameter(format!(
            "Gauss-Hermite order must be in 1..={MAX_ORDER}, got {order}"
        )));
    }
    let n = order;
    let jacobi = DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64 / 2.0).sqrt()
        } else {
            0.0
        }
    });
    let mut x: Vec<f64> = jacobi.symmetric_eigenvalues().iter().copied().collect();
    x.sort_by(f64::total_cmp);
    let mut w = vec![0.0; n];
    for (xi, wi) in x.iter_mut().zip(w.iter_mut()) {
        let mut z = *xi;
        let mut pp = 0.0;
        for _ in 0..10 {
            let (p, dp) = hermite_orthonormal(n, z);
            pp = dp;
            let step = p / dp;
            z -= step;
            if step.abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        *xi = z;
        *wi = 2.0 / (pp * pp);
    }
    // exact symmetry
    for i in 0..n / 2 {
        let a = 0.5 * (x[n - 1 - i] - x[i]);
        let b = 0.5 * (w[i] + w[n - 1 - i]);
        x[i] = -a;
        x[n - 1 - i] = a;
        w[i] = b;
        w[n - 1 - i] = b;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    let log_adj = x.iter().zip(&w).map(|(xi, wi)| wi.ln() + xi * xi).collect();
    Ok(GhRule { nodes: x, weights: w, log_adj })
}

/// Orthonormal Hermite polynomial of degree `n` at `z` and its derivative
/// `√(2n) pₙ₋₁(z)`.
fn hermite_orthonormal(n: usize, z: f64) -> (f64, f64) {
    let mut p1 = PI.powf(-0.25);
    let mut p2 = 0.0;
    for j in 0..n {
        let p3 = p2;
        p2 = p1;
        let jf = j as f64;
        p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
    }
    (p1, (2.0 * n as f64).sqrt() * p2)
}

/// Posterior summary of `u` under one mixture component.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ComponentPosterior {
    /// `log pₖ(yᵢ)`
    pub log_marginal: f64,
    pub mean: f64,
    pub variance: f64,
    /// False when the mode search failed and the prior-centred rule was used.
    pub adaptive: bool,
}

/// Mixture posterior of the random intercept.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorSummary {
    /// Best predictor `E[u | y]`.
    pub w: f64,
    /// `Var[u | y]`.
    pub v: f64,
    /// Posterior component probabilities, proportional to `πₖ pₖ(y)`.
    pub comp_weights: Vec<f64>,
    /// `log p(y)` under the full mixture.
    pub log_marginal: f64,
    pub adaptive: bool,
}

/// Per-cluster quantities that do not depend on the random effect.
pub(crate) struct ClusterKernel<'a> {
    family: Family,
    y: &'a [f64],
    offset: Vec<f64>,
    z: Vec<f64>,
    base: f64,
}

impl<'a> ClusterKernel<'a> {
    pub(crate) fn new(cluster: &'a ClusterData, theta: &Theta) -> Result<Self> {
        if cluster.z.ncols() != 1 {
            return Err(Error::Unsupported(format!(
                "quadrature needs a scalar random effect, cluster '{}' has q_r = {}",
                cluster.id,
                cluster.z.ncols()
            )));
        }
        if cluster.x.ncols() != theta.beta.len() {
            return Err(Error::Dimension(format!(
                "cluster '{}' has {} fixed-effect columns, beta has {}",
                cluster.id,
                cluster.x.ncols(),
                theta.beta.len()
            )));
        }
        let offset = (&cluster.x * &theta.beta).iter().copied().collect();
        let y = cluster.y.as_slice();
        Ok(ClusterKernel {
            family: theta.family,
            y,
            offset,
            z: cluster.z.column(0).iter().copied().collect(),
            base: theta.family.log_base_measure(y),
        })
    }

    /// `Σ log p(yⱼ | u)` up to the base measure.
    #[inline]
    fn loglik(&self, u: f64) -> f64 {
        let mut s = 0.0;
        for j in 0..self.y.len() {
            s += self.family.kernel(self.y[j], self.offset[j] + self.z[j] * u);
        }
        s
    }

    /// First and second derivative of the log-likelihood in `u`.
    #[inline]
    fn derivs(&self, u: f64) -> (f64, f64) {
        let phi = self.family.dispersion;
        let (mut g, mut h) = (0.0, 0.0);
        for j in 0..self.y.len() {
            let mu = self.family.mean(self.offset[j] + self.z[j] * u);
            g += self.z[j] * (self.y[j] - mu);
            h -= self.z[j] * self.z[j] * self.family.variance_fn(mu);
        }
        (g / phi, h / phi)
    }
}

fn log_normal(u: f64, mean: f64, sd: f64) -> f64 {
    let z = (u - mean) / sd;
    -LN_SQRT_2PI - sd.ln() - 0.5 * z * z
}

/// Mode of `loglik(u) + log N(u; mean, sd²)` by safeguarded Newton.
fn find_mode(kernel: &ClusterKernel<'_>, mean: f64, sd: f64) -> Option<(f64, f64)> {
    let prec = 1.0 / (sd * sd);
    let objective = |u: f64| kernel.loglik(u) - 0.5 * (u - mean) * (u - mean) * prec;
    let mut u = mean;
    let mut f = objective(u);
    for _ in 0..NEWTON_MAX_ITER {
        let (g, h) = kernel.derivs(u);
        let grad = g - (u - mean) * prec;
        let hess = h - prec;
        if grad.abs() < NEWTON_GRAD_TOL {
            return Some((u, hess));
        }
        let step = -grad / hess;
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand = u + t * step;
            let fc = objective(cand);
            if fc.is_finite() && fc >= f - 1e-12 * f.abs().max(1.0) {
                if (cand - u).abs() <= 1e-15 * u.abs().max(1.0) {
                    let (_, h) = kernel.derivs(cand);
                    return Some((cand, h - prec));
                }
                u = cand;
                f = fc;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            let (_, h) = kernel.derivs(u);
            return if grad.abs() < 1e-6 { Some((u, h - prec)) } else { None };
        }
    }
    None
}

fn integrate(
    kernel: &ClusterKernel<'_>,
    rule: &GhRule,
    center: f64,
    scale: f64,
    mean: f64,
    sd: f64,
) -> (f64, f64, f64) {
    let mut logw = Vec::with_capacity(rule.order());
    let mut us = Vec::with_capacity(rule.order());
    for (x, adj) in rule.nodes.iter().zip(&rule.log_adj) {
        let u = center + SQRT_2 * scale * x;
        us.push(u);
        logw.push(adj + kernel.loglik(u) + log_normal(u, mean, sd));
    }
    let lse = log_sum_exp(&logw);
    let mut m = 0.0;
    let mut probs = Vec::with_capacity(logw.len());
    for (lw, u) in logw.iter().zip(&us) {
        let p = (lw - lse).exp();
        m += p * u;
        probs.push(p);
    }
    let var: f64 = probs.iter().zip(&us).map(|(p, u)| p * (u - m) * (u - m)).sum();
    let log_marginal = lse + (SQRT_2 * scale).ln() + kernel.base;
    (log_marginal, m, var)
}

fn component_posterior_inner(
    kernel: &ClusterKernel<'_>,
    mean: f64,
    sd: f64,
    rule: &GhRule,
    adaptive: bool,
) -> ComponentPosterior {
    if kernel.y.is_empty() {
        return ComponentPosterior { log_marginal: 0.0, mean, variance: sd * sd, adaptive: true };
    }
    let mode = if adaptive { find_mode(kernel, mean, sd) } else { None };
    let (center, scale, adaptive) = match mode {
        Some((u, hess)) if hess < 0.0 && hess.is_finite() => (u, (-1.0 / hess).sqrt(), true),
        _ => (mean, sd, false),
    };
    let (log_marginal, m, v) = integrate(kernel, rule, center, scale, mean, sd);
    ComponentPosterior { log_marginal, mean: m, variance: v.max(0.0), adaptive }
}

/// Marginal likelihood and posterior moments of `u` for component `k`.
pub fn component_posterior(
    cluster: &ClusterData,
    theta: &Theta,
    k: usize,
    rule: &GhRule,
) -> Result<ComponentPosterior> {
    component_posterior_with(cluster, theta, k, rule, true)
}

/// As [`component_posterior`], optionally skipping the adaptive recentring.
pub fn component_posterior_with(
    cluster: &ClusterData,
    theta: &Theta,
    k: usize,
    rule: &GhRule,
    adaptive: bool,
) -> Result<ComponentPosterior> {
    if k >= theta.components() {
        return Err(Error::InvalidParameter(format!(
            "component {k} out of range for c = {}",
            theta.components()
        )));
    }
    let kernel = ClusterKernel::new(cluster, theta)?;
    let (mean, sd) = theta.component_prior_1d(k);
    Ok(component_posterior_inner(&kernel, mean, sd, rule, adaptive))
}

/// Combine per-component posteriors into the mixture posterior.
pub fn combine_components(weights: &[f64], comps: &[ComponentPosterior]) -> PosteriorSummary {
    let logs: Vec<f64> = weights
        .iter()
        .zip(comps)
        .map(|(p, c)| if *p > 0.0 { p.ln() + c.log_marginal } else { f64::NEG_INFINITY })
        .collect();
    let lse = log_sum_exp(&logs);
    let comp_weights: Vec<f64> = logs.iter().map(|l| (l - lse).exp()).collect();
    let w: f64 = comp_weights.iter().zip(comps).map(|(a, c)| a * c.mean).sum();
    let second: f64 = comp_weights
        .iter()
        .zip(comps)
        .map(|(a, c)| a * (c.variance + (c.mean - w) * (c.mean - w)))
        .sum();
    PosteriorSummary {
        w,
        v: second.max(0.0),
        comp_weights,
        log_marginal: lse,
        adaptive: comps.iter().all(|c| c.adaptive),
    }
}

/// Best predictor and posterior variance of the random intercept under the
/// full mixture law.
pub fn posterior_summary(
    cluster: &ClusterData,
    theta: &Theta,
    rule: &GhRule,
) -> Result<PosteriorSummary> {
    let kernel = ClusterKernel::new(cluster, theta)?;
    let comps: Vec<ComponentPosterior> = (0..theta.components())
        .map(|k| {
            let (mean, sd) = theta.component_prior_1d(k);
            component_posterior_inner(&kernel, mean, sd, rule, true)
        })
        .collect();
    Ok(combine_components(&theta.re_mixture.weights, &comps))
}

/// `log p(yᵢ)` for one cluster by adaptive quadrature.
pub fn cluster_log_marginal(cluster: &ClusterData, theta: &Theta, rule: &GhRule) -> Result<f64> {
    Ok(posterior_summary(cluster, theta, rule)?.log_marginal)
}

/// Posterior mean and variance on a uniform trapezoid grid.
///
/// The grid spans `half_width_sds` prior standard deviations beyond the
/// smallest and largest of 0 and the component means.
pub fn grid_posterior_oracle(
    cluster: &ClusterData,
    theta: &Theta,
    half_width_sds: f64,
    points: usize,
) -> Result<(f64, f64)> {
    let (w, v, _) = grid_posterior_full(cluster, theta, half_width_sds, points)?;
    Ok((w, v))
}

/// Grid posterior mean, variance and `log p(yᵢ)`.
pub fn grid_posterior_full(
    cluster: &ClusterData,
    theta: &Theta,
    half_width_sds: f64,
    points: usize,
) -> Result<(f64, f64, f64)> {
    if points < 3 || points.is_multiple_of(2) {
        return Err(Error::InvalidParameter(format!("grid needs an odd point count, got {points}")));
    }
    let kernel = ClusterKernel::new(cluster, theta)?;
    let (_, cov) = mixture_moments(&theta.re_mixture, &theta.re_scale);
    let sd = cov[(0, 0)].sqrt();
    let comps: Vec<(f64, f64, f64)> = (0..theta.components())
        .map(|k| {
            let (m, s) = theta.component_prior_1d(k);
            (theta.re_mixture.weights[k].ln(), m, s)
        })
        .collect();
    let lo = comps.iter().fold(0.0f64, |a, c| a.min(c.1)) - half_width_sds * sd;
    let hi = comps.iter().fold(0.0f64, |a, c| a.max(c.1)) + half_width_sds * sd;
    let h = (hi - lo) / (points - 1) as f64;
    let mut logf = Vec::with_capacity(points);
    let mut terms = vec![0.0; comps.len()];
    for i in 0..points {
        let u = lo + i as f64 * h;
        for (t, (lw, m, s)) in terms.iter_mut().zip(&comps) {
            *t = lw + log_normal(u, *m, *s);
        }
        logf.push(kernel.loglik(u) + log_sum_exp(&terms));
    }
    let max = logf.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut s0, mut s1) = (0.0, 0.0);
    let mut f = Vec::with_capacity(points);
    for (i, lf) in logf.iter().enumerate() {
        let wt = if i == 0 || i == points - 1 { 0.5 } else { 1.0 };
        let v = wt * (lf - max).exp();
        let u = lo + i as f64 * h;
        s0 += v;
        s1 += v * u;
        f.push(v);
    }
    let mean = s1 / s0;
    let var = f
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let d = lo + i as f64 * h - mean;
            v * d * d
        })
        .sum::<f64>()
        / s0;
    let log_marginal = max + (s0 * h).ln() + kernel.base;
    Ok((mean, var, log_marginal))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MixtureSpec;
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn order_one_rule() {
        let r = gh_rule(1).unwrap();
        assert_eq!(r.nodes, vec![0.0]);
        assert!((r.weights[0] - PI.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn order_five_integrates_quartic() {
        let r = gh_rule(5).unwrap();
        let s: f64 = r.nodes.iter().zip(&r.weights).map(|(x, w)| w * x.powi(4)).sum();
        assert!((s - 0.75 * PI.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn rule_invariants_across_orders() {
        for order in [2, 3, 10, 25, 64, 101, 150, 200] {
            let r = gh_rule(order).unwrap();
            let total: f64 = r.weights.iter().sum();
            assert!((total - PI.sqrt()).abs() < 1e-10, "order {order}: {total}");
            assert!(r.weights.iter().all(|&w| w > 0.0));
            for i in 0..order {
                assert!((r.nodes[i] + r.nodes[order - 1 - i]).abs() < 1e-12);
            }
            assert!(r.nodes.windows(2).all(|p| p[0] < p[1]));
        }
        let r = gh_rule(25).unwrap();
        assert!((r.weights.iter().sum::<f64>() - PI.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn order_out_of_range() {
        assert!(gh_rule(0).is_err());
        assert!(gh_rule(201).is_err());
    }

    fn theta_1d(family: Family, sd: f64, spec: MixtureSpec) -> Theta {
        Theta::new(DVector::from_vec(vec![0.2, -0.5]), family, DMatrix::from_element(1, 1, sd), spec)
            .unwrap()
    }

    #[test]
    fn empty_cluster_returns_prior() {
        let spec = crate::model::standardize_mixture(
            &MixtureSpec::univariate(&[0.5, 0.5], &[-1.77, 1.77], &[0.59, 1.18]).unwrap(),
        )
        .unwrap();
        let theta = theta_1d(Family::poisson(), 1.3, spec);
        let empty = ClusterData::new("e", DVector::zeros(0), DMatrix::zeros(0, 2), DMatrix::zeros(0, 1))
            .unwrap();
        let rule = gh_rule(25).unwrap();
        for k in 0..2 {
            let cp = component_posterior(&empty, &theta, k, &rule).unwrap();
            let (m, s) = theta.component_prior_1d(k);
            assert_eq!(cp.log_marginal, 0.0);
            assert_eq!(cp.mean, m);
            assert!((cp.variance - s * s).abs() < 1e-15);
        }
        let (w, _) = grid_posterior_oracle(&empty, &theta, 10.0, 20001).unwrap();
        assert!(w.abs() < 1e-9);
    }

    #[test]
    fn single_component_weights() {
        let theta = theta_1d(Family::bernoulli(), 1.0, MixtureSpec::standard_normal(1));
        let c = ClusterData::intercept_only(
            "a",
            vec![1.0, 0.0, 1.0],
            DMatrix::from_row_slice(3, 2, &[1.0, 0.3, 1.0, -1.2, 1.0, 2.0]),
        )
        .unwrap();
        let rule = gh_rule(25).unwrap();
        let s = posterior_summary(&c, &theta, &rule).unwrap();
        assert_eq!(s.comp_weights, vec![1.0]);
        let cp = component_posterior(&c, &theta, 0, &rule).unwrap();
        assert_eq!(s.w, cp.mean);
    }

    #[test]
    fn bad_component_index() {
        let theta = theta_1d(Family::bernoulli(), 1.0, MixtureSpec::standard_normal(1));
        let c = ClusterData::intercept_only("a", vec![1.0], DMatrix::from_row_slice(1, 2, &[1.0, 0.0]))
            .unwrap();
        assert!(component_posterior(&c, &theta, 1, &gh_rule(5).unwrap()).is_err());
    }
}
