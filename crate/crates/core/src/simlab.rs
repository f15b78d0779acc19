//! Simulation scenarios and data-generating processes.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    standardize_mixture, ClusterData, Dataset, Family, FamilyKind, MixtureSpec, Theta,
};

/// Distribution I: right-skewed, variance ≈ 1.
pub const DIST_I: ([f64; 2], [f64; 2], [f64; 2]) = ([0.9, 0.1], [-0.28, 2.56], [0.28, 1.42]);
/// Distribution II: bimodal, variance ≈ 4.
pub const DIST_II: ([f64; 2], [f64; 2], [f64; 2]) = ([0.5, 0.5], [-1.77, 1.77], [0.59, 1.18]);

/// Cluster sizes: a constant, an explicit list, or uniform draws on `min..=max`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClusterSize {
    Constant(usize),
    PerCluster(Vec<usize>),
    Uniform { min: usize, max: usize },
}

/// How the fixed-effect design is drawn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovariateLaw {
    /// Intercept column plus `x₂ ~ U(a, b)`.
    Uniform { a: f64, b: f64 },
    /// Intercept, tenure, race indicator and education.
    WagesLike,
}

/// Univariate random-intercept law `u = scale · v` with `v` a normal mixture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomEffectLaw {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

impl RandomEffectLaw {
    pub fn mixture(&self) -> Result<MixtureSpec> {
        MixtureSpec::univariate(&self.weights, &self.means, &self.sds)
    }

    fn from_const(d: ([f64; 2], [f64; 2], [f64; 2]), scale: f64) -> Self {
        RandomEffectLaw { weights: d.0.to_vec(), means: d.1.to_vec(), sds: d.2.to_vec(), scale }
    }

    pub fn dist_i() -> Self {
        Self::from_const(DIST_I, 1.0)
    }

    pub fn dist_ii() -> Self {
        Self::from_const(DIST_II, 1.0)
    }

    pub fn normal(sd: f64) -> Self {
        RandomEffectLaw { weights: vec![1.0], means: vec![0.0], sds: vec![1.0], scale: sd }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub family: FamilyKind,
    pub m: usize,
    pub cluster_size: ClusterSize,
    pub beta: Vec<f64>,
    pub covariates: CovariateLaw,
    pub truth: RandomEffectLaw,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau2: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::InvalidParameter("scenario needs m >= 1".into()));
        }
        match &self.cluster_size {
            ClusterSize::Constant(_) => {}
            ClusterSize::PerCluster(v) if v.len() != self.m => {
                return Err(Error::Dimension(format!(
                    "{} cluster sizes given for m = {}",
                    v.len(),
                    self.m
                )))
            }
            ClusterSize::PerCluster(_) => {}
            ClusterSize::Uniform { min, max } if min > max => {
                return Err(Error::InvalidParameter("cluster size range is empty".into()))
            }
            ClusterSize::Uniform { .. } => {}
        }
        let q_f = match self.covariates {
            CovariateLaw::Uniform { a, b } => {
                if !(a < b) {
                    return Err(Error::InvalidParameter("uniform covariate needs a < b".into()));
                }
                2
            }
            CovariateLaw::WagesLike => 4,
        };
        if self.beta.len() != q_f {
            return Err(Error::Dimension(format!("beta needs {q_f} entries, got {}", self.beta.len())));
        }
        if !(self.truth.scale > 0.0) {
            return Err(Error::InvalidParameter("truth scale must be positive".into()));
        }
        self.family()?;
        self.truth.mixture()?;
        Ok(())
    }

    pub fn family(&self) -> Result<Family> {
        match self.family {
            FamilyKind::Gaussian => Family::gaussian(self.tau2.ok_or_else(|| {
                Error::InvalidParameter("gaussian scenario needs tau2".into())
            })?),
            other => Ok(Family::of_kind(other)),
        }
    }

    /// The data-generating parameter.
    pub fn truth_theta(&self) -> Result<Theta> {
        Theta::new(
            DVector::from_column_slice(&self.beta),
            self.family()?,
            DMatrix::from_element(1, 1, self.truth.scale),
            self.truth.mixture()?,
        )
    }
}

/// One simulated data set together with the random effects that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedData {
    pub dataset: Dataset,
    pub u_true: Vec<f64>,
    pub scenario: Scenario,
}

fn dist_label(d: usize) -> &'static str {
    if d == 1 {
        "distI"
    } else {
        "distII"
    }
}

fn dist_law(d: usize) -> RandomEffectLaw {
    if d == 1 {
        RandomEffectLaw::dist_i()
    } else {
        RandomEffectLaw::dist_ii()
    }
}

fn grid_scenario(
    prefix: &str,
    family: FamilyKind,
    d: usize,
    m: usize,
    n: usize,
    a: f64,
    b: f64,
) -> Scenario {
    let fam = match family {
        FamilyKind::Gaussian => "lmm",
        other => other.name(),
    };
    Scenario {
        name: format!("{prefix}:{fam}:{}:m{m}:n{n}", dist_label(d)),
        family,
        m,
        cluster_size: ClusterSize::Constant(n),
        beta: vec![0.0, 1.0],
        covariates: CovariateLaw::Uniform { a, b },
        truth: dist_law(d),
        tau2: (family == FamilyKind::Gaussian).then_some(1.0),
        seed: 0,
    }
}

/// Synthetic stand-in for a wages panel: gaussian log-wage response with a
/// skewed, standardized random intercept.
pub fn wages_scenario(m: usize) -> Scenario {
    let raw = MixtureSpec::univariate(&DIST_I.0, &DIST_I.1, &DIST_I.2).expect("valid constant");
    let std = standardize_mixture(&raw).expect("valid constant");
    Scenario {
        name: format!("wages-like:m{m}"),
        family: FamilyKind::Gaussian,
        m,
        cluster_size: ClusterSize::Uniform { min: 1, max: 13 },
        beta: vec![1.7, 0.045, -0.1, 0.06],
        covariates: CovariateLaw::WagesLike,
        truth: RandomEffectLaw {
            weights: std.weights.clone(),
            means: std.means_1d(),
            sds: std.sds(),
            scale: 0.3,
        },
        tau2: Some(0.09),
        seed: 0,
    }
}

/// Every named scenario.
pub fn builtin_scenarios() -> Vec<Scenario> {
    let mut out = Vec::new();
    for d in [1, 2] {
        for m in [100, 200] {
            for n in [20, 40, 60, 80] {
                out.push(grid_scenario("table1", FamilyKind::Bernoulli, d, m, n, -5.0, 5.0));
            }
        }
    }
    for d in [1, 2] {
        for m in [50, 100] {
            for n in [5, 10, 20, 40] {
                out.push(grid_scenario("table2", FamilyKind::Poisson, d, m, n, 0.0, 1.0));
            }
        }
    }
    for d in [1, 2] {
        for m in [25, 50, 100] {
            for n in [5, 10, 20, 40] {
                out.push(grid_scenario("tableS1", FamilyKind::Gaussian, d, m, n, 0.0, 1.0));
            }
        }
    }
    for d in [1, 2] {
        out.push(grid_scenario("cmsep", FamilyKind::Bernoulli, d, 400, 40, -5.0, 5.0));
        out.push(grid_scenario("cmsep", FamilyKind::Poisson, d, 400, 5, 0.0, 1.0));
        out.push(grid_scenario("cmsep", FamilyKind::Gaussian, d, 400, 5, 0.0, 1.0));
    }
    let normal = |m: usize, n: usize| Scenario {
        name: format!("normal:lmm:m{m}:n{n}"),
        family: FamilyKind::Gaussian,
        m,
        cluster_size: ClusterSize::Constant(n),
        beta: vec![0.0, 1.0],
        covariates: CovariateLaw::Uniform { a: 0.0, b: 1.0 },
        truth: RandomEffectLaw::normal(1.0),
        tau2: Some(1.0),
        seed: 0,
    };
    out.push(normal(400, 5));
    out.push(normal(200, 7));
    out.push(wages_scenario(888));
    out.push(wages_scenario(200));
    out
}

pub fn find_scenario(name: &str) -> Result<Scenario> {
    let all = builtin_scenarios();
    all.iter().find(|s| s.name == name).cloned().ok_or_else(|| Error::UnknownScenario {
        name: name.to_string(),
        available: all.iter().map(|s| s.name.clone()).collect::<Vec<_>>().join(", "),
    })
}

/// Draw one random effect `u = L(μₖ + Sₖξ)` with `k` chosen by weight.
pub fn draw_random_effect<R: Rng + ?Sized>(theta: &Theta, rng: &mut R) -> DVector<f64> {
    let spec = &theta.re_mixture;
    let k = draw_component(&spec.weights, rng);
    let xi = DVector::from_fn(spec.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
    &theta.re_scale * (&spec.means[k] + &spec.scales[k] * xi)
}

fn draw_component<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let t: f64 = rng.random();
    let mut acc = 0.0;
    for (k, w) in weights.iter().enumerate() {
        acc += w;
        if t < acc {
            return k;
        }
    }
    weights.len() - 1
}

/// Draw a response vector given the linear predictor.
pub fn draw_response<R: Rng + ?Sized>(family: &Family, eta: &DVector<f64>, rng: &mut R) -> DVector<f64> {
    eta.map(|e| match family.kind {
        FamilyKind::Gaussian => e + family.dispersion.sqrt() * rng.sample::<f64, _>(StandardNormal),
        FamilyKind::Bernoulli => {
            if rng.random::<f64>() < family.mean(e) {
                1.0
            } else {
                0.0
            }
        }
        FamilyKind::Poisson => {
            let lambda = family.mean(e);
            if lambda > 0.0 {
                Poisson::new(lambda).map_or(lambda.round(), |p| p.sample(rng))
            } else {
                0.0
            }
        }
    })
}

/// Redraw the responses of every cluster of `dataset` from `theta` with the
/// random effects held at `u`.
pub fn simulate_responses<R: Rng + ?Sized>(
    theta: &Theta,
    dataset: &Dataset,
    u: &[DVector<f64>],
    rng: &mut R,
) -> Result<Dataset> {
    if u.len() != dataset.m() {
        return Err(Error::Dimension(format!("{} random effects for m = {}", u.len(), dataset.m())));
    }
    let clusters = dataset
        .clusters
        .iter()
        .zip(u)
        .map(|(c, ui)| {
            let eta = crate::model::linear_predictor(c, &theta.beta, ui)?;
            let y = draw_response(&theta.family, &eta, rng);
            Ok(ClusterData { id: c.id.clone(), y, x: c.x.clone(), z: c.z.clone() })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { clusters })
}

fn draw_sizes<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> Vec<usize> {
    match &scenario.cluster_size {
        ClusterSize::Constant(n) => vec![*n; scenario.m],
        ClusterSize::PerCluster(v) => v.clone(),
        ClusterSize::Uniform { min, max } => (0..scenario.m).map(|_| rng.random_range(*min..=*max)).collect(),
    }
}

fn draw_design<R: Rng + ?Sized>(law: &CovariateLaw, n: usize, rng: &mut R) -> DMatrix<f64> {
    match *law {
        CovariateLaw::Uniform { a, b } => {
            let mut x = DMatrix::from_element(n, 2, 1.0);
            for i in 0..n {
                x[(i, 1)] = rng.random_range(a..b);
            }
            x
        }
        CovariateLaw::WagesLike => {
            let mut x = DMatrix::from_element(n, 4, 1.0);
            let race = if rng.random::<f64>() < 0.25 { 1.0 } else { 0.0 };
            let educ = (12.0 + 2.0 * rng.sample::<f64, _>(StandardNormal)).clamp(6.0, 18.0);
            let mut tenure = rng.random_range(0.0..3.0);
            for i in 0..n {
                x[(i, 1)] = tenure;
                x[(i, 2)] = race;
                x[(i, 3)] = educ;
                tenure += rng.random_range(0.5..1.5);
            }
            x
        }
    }
}

fn generate_inner<R: Rng + ?Sized>(
    scenario: &Scenario,
    fixed_u: Option<&[f64]>,
    rng: &mut R,
) -> Result<GeneratedData> {
    scenario.validate()?;
    if let Some(u) = fixed_u {
        if u.len() != scenario.m {
            return Err(Error::Dimension(format!("{} fixed effects for m = {}", u.len(), scenario.m)));
        }
    }
    let theta = scenario.truth_theta()?;
    let sizes = draw_sizes(scenario, rng);
    let width = (scenario.m.max(1) - 1).to_string().len();
    let mut clusters = Vec::with_capacity(scenario.m);
    let mut u_true = Vec::with_capacity(scenario.m);
    for (i, &n) in sizes.iter().enumerate() {
        let u = match fixed_u {
            Some(v) => DVector::from_element(1, v[i]),
            None => draw_random_effect(&theta, rng),
        };
        let x = draw_design(&scenario.covariates, n, rng);
        let z = DMatrix::from_element(n, 1, 1.0);
        let eta = &x * &theta.beta + &z * &u;
        let y = draw_response(&theta.family, &eta, rng);
        clusters.push(ClusterData::new(format!("c{i:0width$}"), y, x, z)?);
        u_true.push(u[0]);
    }
    Ok(GeneratedData { dataset: Dataset::new(clusters)?, u_true, scenario: scenario.clone() })
}

/// Draw random effects, covariates and responses for one data set.
pub fn generate<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> Result<GeneratedData> {
    generate_inner(scenario, None, rng)
}

/// As [`generate`] with the random effects held at `u`.
pub fn generate_conditional<R: Rng + ?Sized>(
    scenario: &Scenario,
    u: &[f64],
    rng: &mut R,
) -> Result<GeneratedData> {
    generate_inner(scenario, Some(u), rng)
}

pub fn wages_like<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Result<GeneratedData> {
    if m < 10 {
        return Err(Error::InvalidParameter(format!("wages-like generator needs m >= 10, got {m}")));
    }
    generate(&wages_scenario(m), rng)
}
