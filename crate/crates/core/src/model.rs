//! Domain types: response families, the mixture-of-normals random-effects
//! law, model parameters and clustered data.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use libm::lgamma as ln_gamma;

use crate::error::{Error, Result};
use crate::normal::{log_sum_exp, LN_SQRT_2PI};

/// Linear predictors are clamped to this range when converted to Bernoulli
/// probabilities. Log-densities use the unclamped value.
pub const LOGIT_CLAMP: f64 = 30.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyKind {
    /// Normal response, identity link.
    Gaussian,
    /// Binary response, logit link.
    Bernoulli,
    /// Count response, log link.
    Poisson,
}

impl FamilyKind {
    pub fn name(self) -> &'static str {
        match self {
            FamilyKind::Gaussian => "gaussian",
            FamilyKind::Bernoulli => "bernoulli",
            FamilyKind::Poisson => "poisson",
        }
    }
}

impl std::str::FromStr for FamilyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "normal" | "lmm" => Ok(FamilyKind::Gaussian),
            "bernoulli" | "binomial" | "logit" => Ok(FamilyKind::Bernoulli),
            "poisson" => Ok(FamilyKind::Poisson),
            other => Err(Error::InvalidParameter(format!("unknown family '{other}'"))),
        }
    }
}

/// Exponential-family response law with its canonical link.
///
/// `dispersion` is the residual variance τ² for the gaussian family and is
/// fixed at 1 for bernoulli and poisson.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Family {
    pub kind: FamilyKind,
    pub dispersion: f64,
}

impl Family {
    pub fn gaussian(tau2: f64) -> Result<Self> {
        if !(tau2 > 0.0 && tau2.is_finite()) {
            return Err(Error::InvalidParameter(format!("tau2 must be positive, got {tau2}")));
        }
        Ok(Family { kind: FamilyKind::Gaussian, dispersion: tau2 })
    }

    pub fn bernoulli() -> Self {
        Family { kind: FamilyKind::Bernoulli, dispersion: 1.0 }
    }

    pub fn poisson() -> Self {
        Family { kind: FamilyKind::Poisson, dispersion: 1.0 }
    }

    /// Family of `kind` with default dispersion 1.
    pub fn of_kind(kind: FamilyKind) -> Self {
        Family { kind, dispersion: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            FamilyKind::Gaussian if !(self.dispersion > 0.0 && self.dispersion.is_finite()) => Err(
                Error::InvalidParameter(format!("tau2 must be positive, got {}", self.dispersion)),
            ),
            FamilyKind::Bernoulli | FamilyKind::Poisson if self.dispersion != 1.0 => {
                Err(Error::InvalidParameter(format!(
                    "{} dispersion is fixed at 1, got {}",
                    self.kind.name(),
                    self.dispersion
                )))
            }
            _ => Ok(()),
        }
    }

    /// Check that every response is in the support of the family.
    pub fn validate_response(&self, y: &[f64]) -> Result<()> {
        for (row, &v) in y.iter().enumerate() {
            let ok = match self.kind {
                FamilyKind::Gaussian => v.is_finite(),
                FamilyKind::Bernoulli => v == 0.0 || v == 1.0,
                FamilyKind::Poisson => v >= 0.0 && v.fract() == 0.0 && v.is_finite(),
            };
            if !ok {
                return Err(Error::InvalidResponse { family: self.kind.name(), value: v, row });
            }
        }
        Ok(())
    }

    /// Inverse link, `μ = g⁻¹(η)`.
    #[inline]
    pub fn mean(&self, eta: f64) -> f64 {
        match self.kind {
            FamilyKind::Gaussian => eta,
            FamilyKind::Bernoulli => {
                let e = eta.clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
                1.0 / (1.0 + (-e).exp())
            }
            FamilyKind::Poisson => eta.exp(),
        }
    }

    /// `Var(y | η) / φ` under the canonical link (the derivative `dμ/dη`).
    #[inline]
    pub fn variance_fn(&self, mu: f64) -> f64 {
        match self.kind {
            FamilyKind::Gaussian => 1.0,
            FamilyKind::Bernoulli => mu * (1.0 - mu),
            FamilyKind::Poisson => mu,
        }
    }

    /// The η-dependent part of `log p(y | η)`.
    #[inline]
    pub fn kernel(&self, y: f64, eta: f64) -> f64 {
        match self.kind {
            FamilyKind::Gaussian => {
                let r = y - eta;
                -0.5 * r * r / self.dispersion
            }
            FamilyKind::Bernoulli => y * eta - softplus(eta),
            FamilyKind::Poisson => y * eta - eta.exp(),
        }
    }

    /// The η-free part `Σ b(yⱼ, φ)` of the log density.
    pub fn log_base_measure(&self, y: &[f64]) -> f64 {
        match self.kind {
            FamilyKind::Gaussian => {
                -(y.len() as f64) * (LN_SQRT_2PI + 0.5 * self.dispersion.ln())
            }
            FamilyKind::Bernoulli => 0.0,
            FamilyKind::Poisson => -y.iter().map(|&v| ln_gamma(v + 1.0)).sum::<f64>(),
        }
    }
}

/// `log(1 + exp(x))` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Sum of exact exponential-family log densities of `y` given linear predictor `eta`.
pub fn cond_loglik(family: &Family, y: &[f64], eta: &[f64]) -> Result<f64> {
    if y.len() != eta.len() {
        return Err(Error::Dimension(format!("y has {} rows, eta has {}", y.len(), eta.len())));
    }
    family.validate_response(y)?;
    let k: f64 = y.iter().zip(eta).map(|(&yy, &e)| family.kernel(yy, e)).sum();
    Ok(k + family.log_base_measure(y))
}

/// Finite mixture of normals `Σ πₖ N(μₖ, SₖSₖᵀ)` with `Sₖ` lower triangular.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureSpec {
    pub weights: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub scales: Vec<DMatrix<f64>>,
}

impl MixtureSpec {
    pub fn new(
        weights: Vec<f64>,
        means: Vec<DVector<f64>>,
        scales: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let spec = MixtureSpec { weights, means, scales };
        spec.validate()?;
        Ok(spec)
    }

    /// One-dimensional mixture from weights, means and standard deviations.
    pub fn univariate(weights: &[f64], means: &[f64], sds: &[f64]) -> Result<Self> {
        if weights.len() != means.len() || weights.len() != sds.len() {
            return Err(Error::Dimension("mixture weights/means/sds lengths differ".into()));
        }
        Self::new(
            weights.to_vec(),
            means.iter().map(|&m| DVector::from_element(1, m)).collect(),
            sds.iter().map(|&s| DMatrix::from_element(1, 1, s)).collect(),
        )
    }

    /// The c = 1 standardized mixture, i.e. `N(0, I)`.
    pub fn standard_normal(dim: usize) -> Self {
        MixtureSpec {
            weights: vec![1.0],
            means: vec![DVector::zeros(dim)],
            scales: vec![DMatrix::identity(dim, dim)],
        }
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, |m| m.len())
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.weights.len();
        if c == 0 {
            return Err(Error::InvalidParameter("mixture needs at least one component".into()));
        }
        if self.means.len() != c || self.scales.len() != c {
            return Err(Error::Dimension("mixture weights/means/scales lengths differ".into()));
        }
        if self.weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidParameter("mixture weights must be non-negative".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!("mixture weights sum to {total}")));
        }
        let d = self.dim();
        for (m, s) in self.means.iter().zip(&self.scales) {
            if m.len() != d || s.nrows() != d || s.ncols() != d {
                return Err(Error::Dimension("mixture component dimensions differ".into()));
            }
            for i in 0..d {
                if !(s[(i, i)] > 0.0) || !s[(i, i)].is_finite() {
                    return Err(Error::InvalidParameter(
                        "component scale needs a positive diagonal".into(),
                    ));
                }
                for j in (i + 1)..d {
                    if s[(i, j)] != 0.0 {
                        return Err(Error::InvalidParameter(
                            "component scale must be lower triangular".into(),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Residuals of the two standardization constraints: the largest absolute
    /// entry of `Σ πₖμₖ` and of `Σ πₖ(Σₖ + μₖμₖᵀ) − I`.
    pub fn constraint_residuals(&self) -> (f64, f64) {
        let (mean, second) = self.raw_moments();
        let d = self.dim();
        let mean_res = mean.amax();
        let cov_res = (second - DMatrix::identity(d, d)).amax();
        (mean_res, cov_res)
    }

    pub fn is_standardized(&self, tol: f64) -> bool {
        let (a, b) = self.constraint_residuals();
        a <= tol && b <= tol
    }

    /// `(Σ πₖμₖ, Σ πₖ(Σₖ + μₖμₖᵀ))`
    fn raw_moments(&self) -> (DVector<f64>, DMatrix<f64>) {
        let d = self.dim();
        let mut mean = DVector::zeros(d);
        let mut second = DMatrix::zeros(d, d);
        for ((w, m), s) in self.weights.iter().zip(&self.means).zip(&self.scales) {
            mean += m * *w;
            second += (s * s.transpose() + m * m.transpose()) * *w;
        }
        (mean, second)
    }

    /// Component standard deviations (q_r = 1 only).
    pub fn sds(&self) -> Vec<f64> {
        self.scales.iter().map(|s| s[(0, 0)]).collect()
    }

    /// Component means (q_r = 1 only).
    pub fn means_1d(&self) -> Vec<f64> {
        self.means.iter().map(|m| m[0]).collect()
    }
}

/// Log density of `Σ πₖ N(u; Lμₖ, LΣₖLᵀ)`.
pub fn mixture_logpdf(spec: &MixtureSpec, l: &DMatrix<f64>, u: &DVector<f64>) -> Result<f64> {
    let d = spec.dim();
    if l.nrows() != d || l.ncols() != d || u.len() != d {
        return Err(Error::Dimension(format!(
            "mixture dim {d}, L is {}x{}, u has {}",
            l.nrows(),
            l.ncols(),
            u.len()
        )));
    }
    let mut terms = Vec::with_capacity(spec.components());
    for k in 0..spec.components() {
        let chol = l * &spec.scales[k];
        let mut log_det = 0.0;
        for i in 0..d {
            let v = chol[(i, i)];
            if !(v.abs() > 0.0) || !v.is_finite() {
                return Err(Error::Singular(format!("component {k} covariance")));
            }
            log_det += v.abs().ln();
        }
        let centered = u - l * &spec.means[k];
        let z = chol
            .solve_lower_triangular(&centered)
            .ok_or_else(|| Error::Singular(format!("component {k} covariance")))?;
        let lp = -(d as f64) * LN_SQRT_2PI - log_det - 0.5 * z.norm_squared();
        terms.push(spec.weights[k].ln() + lp);
    }
    Ok(log_sum_exp(&terms))
}

/// Mean and covariance of the random-effects law `L · (mixture)`.
pub fn mixture_moments(spec: &MixtureSpec, l: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let (mean, second) = spec.raw_moments();
    let m = l * mean;
    let cov = l * second * l.transpose() - &m * m.transpose();
    (m, cov)
}

/// Recentre and rescale a mixture so that it has mean zero and identity covariance.
pub fn standardize_mixture(raw: &MixtureSpec) -> Result<MixtureSpec> {
    raw.validate()?;
    let d = raw.dim();
    let (mean, cov) = mixture_moments(raw, &DMatrix::identity(d, d));
    let chol = cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("mixture has zero overall variance".into()))?;
    let c = chol.l();
    if (0..d).any(|i| !(c[(i, i)] > 1e-300)) {
        return Err(Error::Singular("mixture has zero overall variance".into()));
    }
    let solve = |m: &DMatrix<f64>| -> Result<DMatrix<f64>> {
        c.solve_lower_triangular(m)
            .ok_or_else(|| Error::Singular("mixture has zero overall variance".into()))
    };
    let mut means = Vec::with_capacity(raw.components());
    let mut scales = Vec::with_capacity(raw.components());
    for k in 0..raw.components() {
        let centered = &raw.means[k] - &mean;
        let m = solve(&DMatrix::from_column_slice(d, 1, centered.as_slice()))?;
        means.push(DVector::from_column_slice(m.as_slice()));
        scales.push(solve(&raw.scales[k])?);
    }
    MixtureSpec::new(raw.weights.clone(), means, scales)
}

/// Full GLMM parameter: fixed effects, response family (with dispersion),
/// overall random-effects scale `L` and the standardized mixture shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Theta {
    pub beta: DVector<f64>,
    pub family: Family,
    pub re_scale: DMatrix<f64>,
    pub re_mixture: MixtureSpec,
}

impl Theta {
    pub fn new(
        beta: DVector<f64>,
        family: Family,
        re_scale: DMatrix<f64>,
        re_mixture: MixtureSpec,
    ) -> Result<Self> {
        let theta = Theta { beta, family, re_scale, re_mixture };
        theta.validate()?;
        Ok(theta)
    }

    /// Random-intercept model with a normal random effect of standard deviation `sd`.
    pub fn normal_intercept(beta: &[f64], family: Family, sd: f64) -> Result<Self> {
        Self::new(
            DVector::from_column_slice(beta),
            family,
            DMatrix::from_element(1, 1, sd),
            MixtureSpec::standard_normal(1),
        )
    }

    pub fn validate(&self) -> Result<()> {
        self.family.validate()?;
        self.re_mixture.validate()?;
        let d = self.re_mixture.dim();
        if self.re_scale.nrows() != d || self.re_scale.ncols() != d {
            return Err(Error::Dimension("L must be q_r x q_r".into()));
        }
        for i in 0..d {
            if !(self.re_scale[(i, i)] > 0.0) {
                return Err(Error::InvalidParameter("diag(L) must be positive".into()));
            }
            for j in (i + 1)..d {
                if self.re_scale[(i, j)] != 0.0 {
                    return Err(Error::InvalidParameter("L must be lower triangular".into()));
                }
            }
        }
        Ok(())
    }

    pub fn re_dim(&self) -> usize {
        self.re_scale.nrows()
    }

    pub fn components(&self) -> usize {
        self.re_mixture.components()
    }

    /// Scalar `L` for random-intercept models.
    pub fn scale_1d(&self) -> f64 {
        self.re_scale[(0, 0)]
    }

    /// Mean and standard deviation of component `k` on the random-effect scale (q_r = 1).
    pub fn component_prior_1d(&self, k: usize) -> (f64, f64) {
        let l = self.scale_1d();
        (l * self.re_mixture.means[k][0], l * self.re_mixture.scales[k][(0, 0)])
    }

    /// Log density of the random-effects law at `u`.
    pub fn re_logpdf(&self, u: &DVector<f64>) -> Result<f64> {
        mixture_logpdf(&self.re_mixture, &self.re_scale, u)
    }
}

/// One cluster: responses with fixed- and random-effect design matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterData {
    pub id: String,
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
    pub z: DMatrix<f64>,
}

impl ClusterData {
    pub fn new(
        id: impl Into<String>,
        y: DVector<f64>,
        x: DMatrix<f64>,
        z: DMatrix<f64>,
    ) -> Result<Self> {
        let n = y.len();
        if x.nrows() != n || z.nrows() != n {
            return Err(Error::Dimension(format!(
                "y has {n} rows, X has {}, Z has {}",
                x.nrows(),
                z.nrows()
            )));
        }
        Ok(ClusterData { id: id.into(), y, x, z })
    }

    /// Random-intercept cluster: `Z` is a column of ones.
    pub fn intercept_only(id: impl Into<String>, y: Vec<f64>, x: DMatrix<f64>) -> Result<Self> {
        let n = y.len();
        Self::new(id, DVector::from_vec(y), x, DMatrix::from_element(n, 1, 1.0))
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// True when the first columns of `X` and `Z` are all ones.
    pub fn has_intercepts(&self) -> bool {
        let ones = |m: &DMatrix<f64>| m.ncols() > 0 && m.column(0).iter().all(|&v| v == 1.0);
        ones(&self.x) && ones(&self.z)
    }
}

/// Ordered list of independent clusters.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Dataset {
    pub clusters: Vec<ClusterData>,
}

impl Dataset {
    pub fn new(clusters: Vec<ClusterData>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for c in &clusters {
            if !seen.insert(c.id.as_str()) {
                return Err(Error::InvalidParameter(format!("duplicate cluster id '{}'", c.id)));
            }
        }
        if let Some(first) = clusters.first() {
            let (qf, qr) = (first.x.ncols(), first.z.ncols());
            if clusters.iter().any(|c| c.x.ncols() != qf || c.z.ncols() != qr) {
                return Err(Error::Dimension("clusters have differing design widths".into()));
            }
        }
        Ok(Dataset { clusters })
    }

    pub fn m(&self) -> usize {
        self.clusters.len()
    }

    pub fn n_obs(&self) -> usize {
        self.clusters.iter().map(ClusterData::n).sum()
    }

    pub fn fixed_dim(&self) -> usize {
        self.clusters.first().map_or(0, |c| c.x.ncols())
    }

    pub fn re_dim(&self) -> usize {
        self.clusters.first().map_or(0, |c| c.z.ncols())
    }
}

/// `η = Xβ + Zu`.
pub fn linear_predictor(
    cluster: &ClusterData,
    beta: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<DVector<f64>> {
    if cluster.x.ncols() != beta.len() || cluster.z.ncols() != u.len() {
        return Err(Error::Dimension(format!(
            "X is {}x{} with beta of length {}; Z is {}x{} with u of length {}",
            cluster.x.nrows(),
            cluster.x.ncols(),
            beta.len(),
            cluster.z.nrows(),
            cluster.z.ncols(),
            u.len()
        )));
    }
    Ok(&cluster.x * beta + &cluster.z * u)
}
