//! Marginal maximum likelihood for normal and mixture random intercepts.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lmm::{lmm_log_marginal, LmmClusterMats};
use crate::model::{standardize_mixture, Dataset, Family, FamilyKind, MixtureSpec, Theta};
use crate::optim::{bfgs, nelder_mead, OptimOptions, OptimResult};
use crate::predict::{ebp_dataset, Prediction};
use crate::quadrature::{component_posterior, gh_rule, posterior_summary, GhRule, DEFAULT_ORDER};

/// Objective value reported at infeasible parameter vectors.
pub const PENALTY: f64 = -1e10;
/// Smallest admissible standardized component standard deviation.
pub const SD_FLOOR: f64 = 1e-3;
/// Smallest admissible mixture weight.
pub const WEIGHT_FLOOR: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    /// Nelder-Mead with two restarts, then a quasi-Newton polish.
    NelderMead,
    QuasiNewtonNumeric,
}

/// How the gaussian marginal likelihood is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LikelihoodMethod {
    /// Closed form for gaussian responses, adaptive quadrature otherwise.
    Auto,
    Quadrature,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub re_components: usize,
    pub gh_order: usize,
    pub max_iter: usize,
    pub tol_rel_loglik: f64,
    pub n_starts: usize,
    pub optimizer: Optimizer,
    pub likelihood: LikelihoodMethod,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            re_components: 1,
            gh_order: DEFAULT_ORDER,
            max_iter: 2000,
            tol_rel_loglik: 1e-8,
            n_starts: 3,
            optimizer: Optimizer::NelderMead,
            likelihood: LikelihoodMethod::Auto,
        }
    }
}

impl FitConfig {
    pub fn with_components(c: usize) -> Self {
        FitConfig { re_components: c, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.re_components == 0 {
            return Err(Error::InvalidParameter("need at least one mixture component".into()));
        }
        if !(self.tol_rel_loglik > 0.0) {
            return Err(Error::InvalidParameter("tol_rel_loglik must be positive".into()));
        }
        if self.n_starts == 0 || self.max_iter == 0 {
            return Err(Error::InvalidParameter("n_starts and max_iter must be positive".into()));
        }
        gh_rule(self.gh_order).map(|_| ())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FittedModel {
    pub theta_hat: Theta,
    pub loglik: f64,
    pub converged: bool,
    pub n_evals: usize,
    pub per_cluster: Vec<Prediction>,
    pub gh_order: usize,
}

/// Per-cluster cross products for the closed-form gaussian likelihood.
struct GaussStats {
    n: usize,
    yty: f64,
    xty: DVector<f64>,
    xtx: DMatrix<f64>,
    zty: DVector<f64>,
    ztx: DMatrix<f64>,
    ztz: DMatrix<f64>,
}

/// Marginal log-likelihood with the per-dataset work done once.
pub struct LoglikEvaluator<'a> {
    dataset: &'a Dataset,
    rule: GhRule,
    gauss: Option<Vec<GaussStats>>,
}

impl<'a> LoglikEvaluator<'a> {
    pub fn new(dataset: &'a Dataset, family: FamilyKind, config: &FitConfig) -> Result<Self> {
        let rule = gh_rule(config.gh_order)?;
        let gauss = (family == FamilyKind::Gaussian && config.likelihood == LikelihoodMethod::Auto)
            .then(|| {
                dataset
                    .clusters
                    .iter()
                    .map(|c| GaussStats {
                        n: c.n(),
                        yty: c.y.norm_squared(),
                        xty: c.x.transpose() * &c.y,
                        xtx: c.x.transpose() * &c.x,
                        zty: c.z.transpose() * &c.y,
                        ztx: c.z.transpose() * &c.x,
                        ztz: c.z.transpose() * &c.z,
                    })
                    .collect()
            });
        Ok(LoglikEvaluator { dataset, rule, gauss })
    }

    pub fn evaluate(&self, theta: &Theta) -> Result<f64> {
        let terms: Vec<Result<f64>> = match &self.gauss {
            Some(stats) if theta.family.kind == FamilyKind::Gaussian => stats
                .par_iter()
                .with_min_len(64)
                .map(|s| {
                    let b = &theta.beta;
                    let mats = LmmClusterMats {
                        ztz: s.ztz.clone(),
                        zty_resid: &s.zty - &s.ztx * b,
                        resid_ss: s.yty - 2.0 * b.dot(&s.xty) + b.dot(&(&s.xtx * b)),
                        n: s.n,
                        tau2: theta.family.dispersion,
                        l: theta.re_scale.clone(),
                    };
                    lmm_log_marginal(&mats, &theta.re_mixture)
                })
                .collect(),
            _ => self
                .dataset
                .clusters
                .par_iter()
                .with_min_len(16)
                .map(|c| Ok(posterior_summary(c, theta, &self.rule)?.log_marginal))
                .collect(),
        };
        let mut total = 0.0;
        for (i, t) in terms.into_iter().enumerate() {
            let v = t?;
            if !v.is_finite() {
                return Err(Error::NonFinite { cluster: i });
            }
            total += v;
        }
        Ok(total)
    }
}

/// `Σᵢ log ∫ Πⱼ p(yᵢⱼ | u) p(u) du`.
pub fn marginal_loglik(dataset: &Dataset, theta: &Theta, config: &FitConfig) -> Result<f64> {
    LoglikEvaluator::new(dataset, theta.family.kind, config)?.evaluate(theta)
}

/// Layout of the unconstrained parameter vector for a random-intercept model:
/// `β`, `log τ²` (gaussian only), `log L`, then for `c ≥ 2` the weight logits
/// `log(πₖ/π₁)` for `k = 2..c`, the standardized means `μₖ` for `k < c` and
/// `log σₖ` for `k < c`. The last component's mean and standard deviation
/// follow from the zero-mean and unit-variance constraints.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamLayout {
    pub family: FamilyKind,
    pub q_f: usize,
    pub c: usize,
}

impl ParamLayout {
    pub fn new(family: FamilyKind, q_f: usize, c: usize) -> Result<Self> {
        if c == 0 {
            return Err(Error::InvalidParameter("need at least one mixture component".into()));
        }
        Ok(ParamLayout { family, q_f, c })
    }

    pub fn of_theta(theta: &Theta) -> Result<Self> {
        if theta.re_dim() != 1 {
            return Err(Error::Unsupported("fitting supports a scalar random intercept only".into()));
        }
        Self::new(theta.family.kind, theta.beta.len(), theta.components())
    }

    fn has_tau(&self) -> bool {
        self.family == FamilyKind::Gaussian
    }

    pub fn dim(&self) -> usize {
        self.q_f + usize::from(self.has_tau()) + 1 + 3 * (self.c - 1)
    }

    /// Map a parameter to unconstrained coordinates.
    pub fn to_vector(&self, theta: &Theta) -> Result<Vec<f64>> {
        if Self::of_theta(theta)? != *self {
            return Err(Error::Dimension("theta does not match the parameter layout".into()));
        }
        let mut v: Vec<f64> = theta.beta.iter().copied().collect();
        if self.has_tau() {
            v.push(theta.family.dispersion.ln());
        }
        v.push(theta.scale_1d().ln());
        let spec = &theta.re_mixture;
        let w0 = spec.weights[0];
        for k in 1..self.c {
            v.push((spec.weights[k] / w0).ln());
        }
        for k in 0..self.c - 1 {
            v.push(spec.means[k][0]);
        }
        for k in 0..self.c - 1 {
            v.push(spec.scales[k][(0, 0)].ln());
        }
        Ok(v)
    }

    /// Map unconstrained coordinates back to a parameter; `None` when the
    /// implied last component violates the floors.
    pub fn to_theta(&self, v: &[f64]) -> Option<Theta> {
        if v.len() != self.dim() || v.iter().any(|x| !x.is_finite()) {
            return None;
        }
        let mut it = v.iter().copied();
        let beta = DVector::from_iterator(self.q_f, it.by_ref().take(self.q_f));
        let family = if self.has_tau() {
            Family::gaussian(it.next()?.exp()).ok()?
        } else {
            Family::of_kind(self.family)
        };
        let l = it.next()?.exp();
        let c = self.c;
        let mut logits = vec![0.0];
        logits.extend(it.by_ref().take(c - 1));
        let lmax = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let expd: Vec<f64> = logits.iter().map(|x| (x - lmax).exp()).collect();
        let total: f64 = expd.iter().sum();
        let weights: Vec<f64> = expd.iter().map(|e| e / total).collect();
        let mut means: Vec<f64> = it.by_ref().take(c - 1).collect();
        let mut sds: Vec<f64> = it.by_ref().map(f64::exp).collect();
        if weights.iter().any(|&w| w < WEIGHT_FLOOR) || sds.iter().any(|&s| s < SD_FLOOR) {
            return None;
        }
        let pc = weights[c - 1];
        let mu_c = -means.iter().zip(&weights).map(|(m, w)| m * w).sum::<f64>() / pc;
        let second: f64 = (0..c - 1).map(|k| weights[k] * (sds[k] * sds[k] + means[k] * means[k])).sum();
        let var_c = (1.0 - second - pc * mu_c * mu_c) / pc;
        if !(var_c >= SD_FLOOR * SD_FLOOR) || !l.is_finite() || l <= 0.0 {
            return None;
        }
        means.push(mu_c);
        sds.push(var_c.sqrt());
        let spec = MixtureSpec::univariate(&weights, &means, &sds).ok()?;
        Theta::new(beta, family, DMatrix::from_element(1, 1, l), spec).ok()
    }
}

/// Log-likelihood at unconstrained coordinates, or [`PENALTY`] when infeasible.
pub fn penalized_loglik(eval: &LoglikEvaluator<'_>, layout: &ParamLayout, v: &[f64]) -> f64 {
    match layout.to_theta(v) {
        Some(theta) => match eval.evaluate(&theta) {
            Ok(ll) if ll.is_finite() => ll,
            _ => PENALTY,
        },
        None => PENALTY,
    }
}

/// Sort components by ascending mean.
pub fn relabel_by_mean(theta: &Theta) -> Theta {
    let spec = &theta.re_mixture;
    let mut order: Vec<usize> = (0..spec.components()).collect();
    order.sort_by(|&a, &b| spec.means[a][0].total_cmp(&spec.means[b][0]));
    let mut out = theta.clone();
    out.re_mixture = MixtureSpec {
        weights: order.iter().map(|&k| spec.weights[k]).collect(),
        means: order.iter().map(|&k| spec.means[k].clone()).collect(),
        scales: order.iter().map(|&k| spec.scales[k].clone()).collect(),
    };
    out
}

fn check_dataset(dataset: &Dataset, family: &Family) -> Result<()> {
    if dataset.m() == 0 || dataset.n_obs() == 0 {
        return Err(Error::InvalidParameter("dataset has no observations".into()));
    }
    if dataset.re_dim() != 1 {
        return Err(Error::Unsupported(format!(
            "fitting supports a scalar random intercept only, data have q_r = {}",
            dataset.re_dim()
        )));
    }
    let mut row = 0;
    for c in &dataset.clusters {
        family.validate_response(c.y.as_slice()).map_err(|e| match e {
            Error::InvalidResponse { family, value, row: r } => {
                Error::InvalidResponse { family, value, row: row + r }
            }
            other => other,
        })?;
        row += c.n();
    }
    let first = dataset.clusters.iter().flat_map(|c| c.y.iter()).next().copied();
    if dataset.clusters.iter().flat_map(|c| c.y.iter()).all(|&y| Some(y) == first) {
        return Err(Error::InvalidParameter("response is constant; nothing to fit".into()));
    }
    Ok(())
}

/// GLM fit ignoring the random effects, by iteratively reweighted least squares.
pub fn glm_irls(dataset: &Dataset, family: FamilyKind) -> Result<DVector<f64>> {
    let q = dataset.fixed_dim();
    let fam = Family::of_kind(family);
    let mut beta = DVector::zeros(q);
    for iter in 0..50 {
        let mut xtwx = DMatrix::zeros(q, q);
        let mut xtwz = DVector::zeros(q);
        for c in &dataset.clusters {
            for j in 0..c.n() {
                let x = c.x.row(j).transpose();
                let y = c.y[j];
                let (w, z) = match family {
                    FamilyKind::Gaussian => (1.0, y),
                    _ if iter == 0 => {
                        let mu = match family {
                            FamilyKind::Bernoulli => (y + 0.5) / 2.0,
                            _ => y + 0.5,
                        };
                        let eta = match family {
                            FamilyKind::Bernoulli => (mu / (1.0 - mu)).ln(),
                            _ => mu.ln(),
                        };
                        let w = fam.variance_fn(mu);
                        (w, eta + (y - mu) / w)
                    }
                    _ => {
                        let eta = x.dot(&beta);
                        let mu = fam.mean(eta);
                        let w = fam.variance_fn(mu).max(1e-10);
                        (w, eta + (y - mu) / w)
                    }
                };
                xtwx += &x * x.transpose() * w;
                xtwz += &x * (w * z);
            }
        }
        let chol = xtwx
            .cholesky()
            .ok_or_else(|| Error::Singular("fixed-effect design is rank deficient".into()))?;
        let next = chol.solve(&xtwz);
        let change = (&next - &beta).amax();
        beta = next;
        if family == FamilyKind::Gaussian || change < 1e-10 {
            break;
        }
    }
    Ok(beta)
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var)
}

/// Per-cluster effects under a weak `N(0, 5²)` prior with the GLM `β`, and
/// their approximate sampling variances.
fn crude_effects(dataset: &Dataset, beta: &DVector<f64>, family: &Family) -> Result<(Vec<f64>, Vec<f64>)> {
    let wide = Theta::normal_intercept(beta.as_slice(), *family, 5.0)?;
    let rule = gh_rule(DEFAULT_ORDER)?;
    let mut effects = Vec::new();
    let mut noise = Vec::new();
    for c in dataset.clusters.iter().filter(|c| c.n() > 0) {
        let p = component_posterior(c, &wide, 0, &rule)?;
        effects.push(p.mean);
        noise.push(p.variance);
    }
    Ok((effects, noise))
}

/// Starting parameter: GLM `β`, moment estimates of `τ²` and `L`, and for
/// `c ≥ 2` equal-weight components centred at quantiles of the crude effects.
pub fn init_params(dataset: &Dataset, config: &FitConfig, family: FamilyKind) -> Result<Theta> {
    config.validate()?;
    let fam0 = match family {
        FamilyKind::Gaussian => Family::gaussian(1.0)?,
        other => Family::of_kind(other),
    };
    check_dataset(dataset, &fam0)?;
    let beta = glm_irls(dataset, family)?;

    let family_hat = if family == FamilyKind::Gaussian {
        let (mut ss, mut dof) = (0.0, 0usize);
        let mut total = Vec::new();
        for c in &dataset.clusters {
            let r = &c.y - &c.x * &beta;
            total.extend(r.iter().copied());
            if c.n() >= 2 {
                let m = r.mean();
                ss += r.iter().map(|v| (v - m).powi(2)).sum::<f64>();
                dof += c.n() - 1;
            }
        }
        let tau2 = if dof > 0 && ss > 0.0 { ss / dof as f64 } else { 0.5 * mean_var(&total).1 };
        Family::gaussian(tau2.max(1e-8))?
    } else {
        fam0
    };

    let (effects, noise) = crude_effects(dataset, &beta, &family_hat)?;
    let (_, between) = mean_var(&effects);
    let (avg_noise, _) = mean_var(&noise);
    let l2 = (between - avg_noise).max(0.1 * between).max(1e-4);
    let l = l2.sqrt();

    let c = config.re_components;
    let spec = if c == 1 {
        MixtureSpec::standard_normal(1)
    } else {
        let mut sorted = effects.clone();
        sorted.sort_by(f64::total_cmp);
        let (mu, var) = mean_var(&sorted);
        let sd = var.sqrt().max(1e-8);
        let quant = |p: f64| {
            let pos = p * (sorted.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(sorted.len() - 1);
            let t = pos - lo as f64;
            ((1.0 - t) * sorted[lo] + t * sorted[hi] - mu) / sd
        };
        let mut means: Vec<f64> = (1..=c).map(|k| quant(k as f64 / (c + 1) as f64)).collect();
        for k in 1..c {
            if means[k] <= means[k - 1] + 0.1 {
                means[k] = means[k - 1] + 0.1;
            }
        }
        raw_mixture(&means, 0.5)?
    };
    Theta::new(beta, family_hat, DMatrix::from_element(1, 1, l), spec)
}

fn raw_mixture(means: &[f64], sd: f64) -> Result<MixtureSpec> {
    let c = means.len();
    let raw = MixtureSpec::univariate(&vec![1.0 / c as f64; c], means, &vec![sd; c])?;
    standardize_mixture(&raw)
}

/// `n_starts` distinct starting parameters: the base start first, then
/// copies with component means jittered by up to ±0.5 (or `log L` for `c = 1`).
pub fn initial_points<R: Rng + ?Sized>(
    base: &Theta,
    n_starts: usize,
    rng: &mut R,
) -> Result<Vec<Theta>> {
    let mut out = vec![base.clone()];
    while out.len() < n_starts {
        let mut t = base.clone();
        if t.components() == 1 {
            let j: f64 = rng.random_range(-0.5..0.5);
            t.re_scale[(0, 0)] *= j.exp();
        } else {
            let spec = &base.re_mixture;
            let mut means: Vec<f64> =
                spec.means_1d().iter().map(|m| m + rng.random_range(-0.5..0.5)).collect();
            means.sort_by(f64::total_cmp);
            let raw = MixtureSpec::univariate(&spec.weights, &means, &spec.sds())?;
            t.re_mixture = standardize_mixture(&raw)?;
        }
        out.push(t);
    }
    Ok(out)
}

fn optimize<F: FnMut(&[f64]) -> f64>(mut f: F, x0: &[f64], config: &FitConfig) -> OptimResult {
    let opts = OptimOptions { max_iter: config.max_iter, tol: config.tol_rel_loglik, step: 0.5 };
    let mut evals = 0;
    let mut best = OptimResult { x: x0.to_vec(), f: f(x0), n_evals: 1, iterations: 0, converged: false };
    if config.optimizer == Optimizer::NelderMead {
        for restart in 0..3 {
            let step = 0.5 / (1 << restart) as f64;
            let r = nelder_mead(&mut f, &best.x, &OptimOptions { step, ..opts });
            evals += r.n_evals;
            let improved = best.f - r.f;
            if r.f <= best.f {
                best = r;
            }
            if restart > 0 && improved.abs() <= config.tol_rel_loglik * best.f.abs().max(1.0) {
                break;
            }
        }
    }
    let polished = bfgs(&mut f, &best.x, &opts);
    evals += polished.n_evals;
    let converged = polished.converged;
    let mut out = if polished.f <= best.f { polished } else { best };
    out.converged = converged;
    out.n_evals = evals + 1;
    out
}

/// Maximum-likelihood fit with `config.n_starts` starts.
pub fn fit_ml<R: Rng + ?Sized>(
    dataset: &Dataset,
    family: FamilyKind,
    config: &FitConfig,
    rng: &mut R,
) -> Result<FittedModel> {
    let base = init_params(dataset, config, family)?;
    let starts = initial_points(&base, config.n_starts, rng)?;
    fit_from(dataset, config, &starts)
}

/// Maximum-likelihood fit from the given starting parameters.
pub fn fit_from(dataset: &Dataset, config: &FitConfig, starts: &[Theta]) -> Result<FittedModel> {
    config.validate()?;
    let first = starts
        .first()
        .ok_or_else(|| Error::InvalidParameter("no starting values".into()))?;
    check_dataset(dataset, &first.family)?;
    let layout = ParamLayout::of_theta(first)?;
    if layout.c != config.re_components {
        return Err(Error::InvalidParameter(format!(
            "start has {} components, config asks for {}",
            layout.c, config.re_components
        )));
    }
    let eval = LoglikEvaluator::new(dataset, layout.family, config)?;
    let mut best: Option<OptimResult> = None;
    let mut evals = 0;
    for start in starts {
        let x0 = layout.to_vector(start)?;
        let r = optimize(|v| -penalized_loglik(&eval, &layout, v), &x0, config);
        evals += r.n_evals;
        if best.as_ref().is_none_or(|b| r.f < b.f) {
            best = Some(r);
        }
    }
    let r = best.expect("at least one start");
    let theta = layout
        .to_theta(&r.x)
        .filter(|_| -r.f > PENALTY)
        .ok_or_else(|| Error::InvalidParameter("optimizer found no feasible point".into()))?;
    let theta = relabel_by_mean(&theta);
    let loglik = eval.evaluate(&theta)?;
    let per_cluster = ebp_dataset(&theta, dataset, config.gh_order)?;
    Ok(FittedModel {
        theta_hat: theta,
        loglik,
        converged: r.converged,
        n_evals: evals,
        per_cluster,
        gh_order: config.gh_order,
    })
}
