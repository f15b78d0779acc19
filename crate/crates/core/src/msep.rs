//! Simulated and bootstrap mean squared prediction errors.
//!
//! Every replicate draws from its own stream `stream(seed, tag, index)` and
//! results are gathered in replicate order, so output does not depend on the
//! number of worker threads.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{fit_from, fit_ml, FitConfig, FittedModel};
use crate::lmm::{u1_mixture_mc, u1_normal, LmmClusterMats};
use crate::model::{Dataset, FamilyKind, Theta};
use crate::rng::stream;
use crate::simlab::{draw_random_effect, generate, generate_conditional, simulate_responses, Scenario};

/// Largest tolerated share of failed replicate fits.
pub const MAX_FAILURE_RATE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MsepKind {
    Unconditional,
    Conditional,
}

/// MSEP of one target with its bias/variance split (`msep = bias² + variance`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MsepRecord {
    /// Cluster id.
    pub target: String,
    /// True (or conditioning) random effect, when there is a single one.
    pub u: Option<f64>,
    pub msep: f64,
    pub bias: f64,
    pub variance: f64,
    pub mc_se: f64,
    pub n_reps: usize,
}

impl MsepRecord {
    /// Summaries of the prediction gaps `ŵ − u` over replicates.
    pub fn from_gaps(target: impl Into<String>, u: Option<f64>, gaps: &[f64]) -> Self {
        let n = gaps.len() as f64;
        let bias = gaps.iter().sum::<f64>() / n;
        let variance = gaps.iter().map(|g| (g - bias).powi(2)).sum::<f64>() / n;
        let sq: Vec<f64> = gaps.iter().map(|g| g * g).collect();
        let msep = bias * bias + variance;
        let mc_se = if gaps.len() > 1 {
            let mean_sq = sq.iter().sum::<f64>() / n;
            (sq.iter().map(|s| (s - mean_sq).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
        } else {
            f64::INFINITY
        };
        MsepRecord { target: target.into(), u, msep, bias, variance, mc_se, n_reps: gaps.len() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MsepResult {
    pub kind: MsepKind,
    pub per_target: Vec<MsepRecord>,
    /// Mean over targets, with the standard error taken across replicates.
    pub grand_mean: f64,
    pub grand_se: f64,
    pub failures: usize,
    pub attempted: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caveat: Option<String>,
}

fn check_failures(failed: usize, total: usize) -> Result<()> {
    if failed as f64 > MAX_FAILURE_RATE * total as f64 {
        Err(Error::TooManyFailures { failed, total })
    } else {
        Ok(())
    }
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::INFINITY);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Builds per-target records from a replicate × target matrix of gaps.
fn summarize(
    kind: MsepKind,
    ids: &[String],
    us: &[Option<f64>],
    gaps: &[Vec<f64>],
    failures: usize,
    attempted: usize,
) -> MsepResult {
    let m = ids.len();
    let per_target: Vec<MsepRecord> = (0..m)
        .map(|i| {
            let col: Vec<f64> = gaps.iter().map(|g| g[i]).collect();
            MsepRecord::from_gaps(ids[i].clone(), us[i], &col)
        })
        .collect();
    let per_rep: Vec<f64> = gaps.iter().map(|g| g.iter().map(|x| x * x).sum::<f64>() / m as f64).collect();
    let (_, grand_se) = mean_se(&per_rep);
    let grand_mean = per_target.iter().map(|r| r.msep).sum::<f64>() / m as f64;
    MsepResult { kind, per_target, grand_mean, grand_se, failures, attempted, caveat: None }
}

/// One replicate of an unconditional simulation: `m⁻¹Σ(ŵᵢ − uᵢ)²` per fit
/// configuration, `None` where the fit failed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UmsepReplicate {
    pub rep: usize,
    pub umsep: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UmsepSummary {
    pub config: usize,
    pub components: usize,
    pub mean: f64,
    pub mc_se: f64,
    pub n_reps: usize,
    pub failures: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UmsepRun {
    pub replicates: Vec<UmsepReplicate>,
    pub summaries: Vec<UmsepSummary>,
}

fn fit_tag(k: usize) -> String {
    format!("fit{k}")
}

/// Simulated UMSEP: fresh random effects and responses in every replicate.
pub fn simulated_umsep(
    scenario: &Scenario,
    fit_configs: &[FitConfig],
    reps: usize,
    seed: u64,
) -> Result<UmsepRun> {
    if reps < 2 {
        return Err(Error::InvalidParameter("simulated UMSEP needs at least 2 replicates".into()));
    }
    scenario.validate()?;
    for c in fit_configs {
        c.validate()?;
    }
    let replicates: Vec<UmsepReplicate> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let data = generate(scenario, &mut stream(seed, "data", rep as u64))?;
            let umsep = fit_configs
                .iter()
                .enumerate()
                .map(|(k, cfg)| {
                    let mut rng = stream(seed, &fit_tag(k), rep as u64);
                    fit_ml(&data.dataset, scenario.family, cfg, &mut rng).ok().map(|f| {
                        let m = data.u_true.len() as f64;
                        f.per_cluster.iter().zip(&data.u_true).map(|(p, u)| (p.w - u).powi(2)).sum::<f64>() / m
                    })
                })
                .collect();
            Ok(UmsepReplicate { rep, umsep })
        })
        .collect::<Result<_>>()?;
    let summaries = fit_configs
        .iter()
        .enumerate()
        .map(|(k, cfg)| {
            let vals: Vec<f64> = replicates.iter().filter_map(|r| r.umsep[k]).collect();
            let failures = reps - vals.len();
            check_failures(failures, reps)?;
            let (mean, mc_se) = mean_se(&vals);
            Ok(UmsepSummary { config: k, components: cfg.re_components, mean, mc_se, n_reps: vals.len(), failures })
        })
        .collect::<Result<_>>()?;
    Ok(UmsepRun { replicates, summaries })
}

/// Conditional simulation output for one fit configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct CmsepRun {
    pub result: MsepResult,
    /// EBPs of every successful replicate, one row per replicate.
    pub predictions: Vec<Vec<f64>>,
}

/// Simulated CMSEP with the random effects held at `fixed_u`.
pub fn simulated_cmsep(
    scenario: &Scenario,
    fixed_u: &[f64],
    fit_configs: &[FitConfig],
    reps: usize,
    seed: u64,
) -> Result<Vec<CmsepRun>> {
    if reps < 2 {
        return Err(Error::InvalidParameter("simulated CMSEP needs at least 2 replicates".into()));
    }
    if fixed_u.len() != scenario.m {
        return Err(Error::Dimension(format!("{} fixed effects for m = {}", fixed_u.len(), scenario.m)));
    }
    for c in fit_configs {
        c.validate()?;
    }
    let per_rep: Vec<(Vec<String>, Vec<Option<Vec<f64>>>)> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let data = generate_conditional(scenario, fixed_u, &mut stream(seed, "data", rep as u64))?;
            let ids = data.dataset.clusters.iter().map(|c| c.id.clone()).collect();
            let preds = fit_configs
                .iter()
                .enumerate()
                .map(|(k, cfg)| {
                    let mut rng = stream(seed, &fit_tag(k), rep as u64);
                    fit_ml(&data.dataset, scenario.family, cfg, &mut rng)
                        .ok()
                        .map(|f| f.per_cluster.iter().map(|p| p.w).collect())
                })
                .collect();
            Ok((ids, preds))
        })
        .collect::<Result<_>>()?;
    let ids = per_rep[0].0.clone();
    let us: Vec<Option<f64>> = fixed_u.iter().map(|&u| Some(u)).collect();
    fit_configs
        .iter()
        .enumerate()
        .map(|(k, _)| {
            let predictions: Vec<Vec<f64>> = per_rep.iter().filter_map(|(_, p)| p[k].clone()).collect();
            let failures = reps - predictions.len();
            check_failures(failures, reps)?;
            let gaps: Vec<Vec<f64>> = predictions
                .iter()
                .map(|w| w.iter().zip(fixed_u).map(|(w, u)| w - u).collect())
                .collect();
            let result = summarize(MsepKind::Conditional, &ids, &us, &gaps, failures, reps);
            Ok(CmsepRun { result, predictions })
        })
        .collect()
}

/// Parametric bootstrap MSEP of the EBPs.
///
/// Each bootstrap sample keeps the observed design, draws the random effects
/// from the fitted law (unconditional) or fixes them at the EBPs
/// (conditional), simulates responses, refits from `θ̂` and records
/// `ŵᵢ,ᵦ − uᵢ,ᵦ`.
pub fn bootstrap_msep(
    fitted: &FittedModel,
    dataset: &Dataset,
    config: &FitConfig,
    b: usize,
    mode: MsepKind,
    seed: u64,
) -> Result<MsepResult> {
    if b < 50 {
        return Err(Error::InvalidParameter(format!("bootstrap needs B >= 50, got {b}")));
    }
    if fitted.per_cluster.len() != dataset.m() {
        return Err(Error::Dimension("fitted model and dataset have different m".into()));
    }
    let theta = &fitted.theta_hat;
    let ebps: Vec<f64> = fitted.per_cluster.iter().map(|p| p.w).collect();
    let config = FitConfig { re_components: theta.components(), gh_order: fitted.gh_order, ..*config };
    let results: Vec<Option<Vec<f64>>> = (0..b)
        .into_par_iter()
        .map(|bi| {
            let mut rng = stream(seed, "bootstrap", bi as u64);
            let u: Vec<DVector<f64>> = match mode {
                MsepKind::Unconditional => (0..dataset.m()).map(|_| draw_random_effect(theta, &mut rng)).collect(),
                MsepKind::Conditional => ebps.iter().map(|&w| DVector::from_element(1, w)).collect(),
            };
            let data = simulate_responses(theta, dataset, &u, &mut rng).ok()?;
            let refit = fit_from(&data, &config, std::slice::from_ref(theta)).ok()?;
            Some(refit.per_cluster.iter().zip(&u).map(|(p, ui)| p.w - ui[0]).collect())
        })
        .collect();
    let gaps: Vec<Vec<f64>> = results.into_iter().flatten().collect();
    let failures = b - gaps.len();
    check_failures(failures, b)?;
    let ids: Vec<String> = dataset.clusters.iter().map(|c| c.id.clone()).collect();
    let us: Vec<Option<f64>> = match mode {
        MsepKind::Unconditional => vec![None; ids.len()],
        MsepKind::Conditional => ebps.iter().map(|&w| Some(w)).collect(),
    };
    let mut out = summarize(mode, &ids, &us, &gaps, failures, b);
    if mode == MsepKind::Conditional {
        out.caveat = Some(
            "conditions on the EBPs, which are shrunk towards the prior; per-cluster values inherit that bias"
                .into(),
        );
    }
    Ok(out)
}

/// Mean over clusters of the prediction-error term `U₁` at `theta`:
/// closed form for `c = 1`, Monte Carlo (`reps` draws per cluster) otherwise.
pub fn mean_u1(theta: &Theta, dataset: &Dataset, reps: usize, seed: u64) -> Result<f64> {
    if theta.family.kind != FamilyKind::Gaussian {
        return Err(Error::Unsupported(
            "U1 is available for gaussian models only; use the bootstrap for other families".into(),
        ));
    }
    if dataset.m() == 0 {
        return Err(Error::InvalidParameter("dataset has no clusters".into()));
    }
    let vals: Vec<f64> = dataset
        .clusters
        .par_iter()
        .enumerate()
        .map(|(i, c)| {
            if theta.components() == 1 {
                Ok(u1_normal(&LmmClusterMats::from_theta(c, theta)?)?[(0, 0)])
            } else {
                let mut rng = stream(seed, "u1", i as u64);
                Ok(u1_mixture_mc(theta, c, reps, &mut rng)?.mean[(0, 0)])
            }
        })
        .collect::<Result<_>>()?;
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

/// `U₁` averaged over clusters at the fitted parameter.
pub fn u1_report(fitted: &FittedModel, dataset: &Dataset, reps: usize, seed: u64) -> Result<f64> {
    mean_u1(&fitted.theta_hat, dataset, reps, seed)
}
