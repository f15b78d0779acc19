//! Empirical best prediction of random intercepts.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::FittedModel;
use crate::lmm::{mixture_posterior_lmm, LmmClusterMats};
use crate::model::{ClusterData, Dataset, FamilyKind, Theta};
use crate::quadrature::{gh_rule, posterior_summary, GhRule, DEFAULT_ORDER};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub cluster_id: String,
    /// `E[u | y]` at the plug-in parameter.
    pub w: f64,
    /// `Var[u | y]` at the plug-in parameter.
    pub v: f64,
    pub comp_weights: Vec<f64>,
}

/// EBP of one cluster with the default quadrature order.
pub fn ebp(theta: &Theta, cluster: &ClusterData) -> Result<Prediction> {
    ebp_with_rule(theta, cluster, &gh_rule(DEFAULT_ORDER)?)
}

/// EBP of one cluster. Gaussian models use the conjugate closed forms and
/// ignore `rule`.
pub fn ebp_with_rule(theta: &Theta, cluster: &ClusterData, rule: &GhRule) -> Result<Prediction> {
    if theta.re_dim() != 1 || cluster.z.ncols() != 1 {
        return Err(Error::Unsupported("prediction supports a scalar random effect only".into()));
    }
    if theta.family.kind == FamilyKind::Gaussian {
        let mats = LmmClusterMats::from_theta(cluster, theta)?;
        let (bp, v) = mixture_posterior_lmm(&mats, &theta.re_mixture)?;
        return Ok(Prediction {
            cluster_id: cluster.id.clone(),
            w: bp.w[0],
            v: v[(0, 0)].max(0.0),
            comp_weights: bp.comp_weights,
        });
    }
    let s = posterior_summary(cluster, theta, rule)?;
    Ok(Prediction { cluster_id: cluster.id.clone(), w: s.w, v: s.v, comp_weights: s.comp_weights })
}

/// EBPs of every cluster at `theta`, in dataset order.
pub fn ebp_dataset(theta: &Theta, dataset: &Dataset, gh_order: usize) -> Result<Vec<Prediction>> {
    let rule = gh_rule(gh_order)?;
    dataset
        .clusters
        .par_iter()
        .with_min_len(16)
        .enumerate()
        .map(|(i, c)| ebp_with_rule(theta, c, &rule).map_err(|e| with_cluster(e, i, &c.id)))
        .collect()
}

/// EBPs of every cluster at the fitted parameter, with the fit's quadrature order.
pub fn ebp_all(fitted: &FittedModel, dataset: &Dataset) -> Result<Vec<Prediction>> {
    ebp_dataset(&fitted.theta_hat, dataset, fitted.gh_order)
}

fn with_cluster(e: Error, index: usize, id: &str) -> Error {
    match e {
        Error::NonFinite { .. } => Error::NonFinite { cluster: index },
        other => Error::InvalidParameter(format!("cluster {index} ('{id}'): {other}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Family, MixtureSpec};
    use crate::quadrature::grid_posterior_oracle;
    use nalgebra::{DMatrix, DVector};

    fn cluster(id: &str, y: &[f64], x2: &[f64]) -> ClusterData {
        let mut x = DMatrix::from_element(y.len(), 2, 1.0);
        for (i, v) in x2.iter().enumerate() {
            x[(i, 1)] = *v;
        }
        ClusterData::intercept_only(id, y.to_vec(), x).unwrap()
    }

    #[test]
    fn gaussian_normal_route_is_blup() {
        let theta = Theta::normal_intercept(&[0.2, 1.0], Family::gaussian(0.5).unwrap(), 1.3).unwrap();
        let c = cluster("a", &[1.0, 2.0, 0.0], &[0.5, 0.1, 0.9]);
        let p = ebp(&theta, &c).unwrap();
        let r: f64 = [1.0 - 0.7, 2.0 - 0.3, 0.0 - 1.1].iter().sum();
        let expect = 1.69 * r / (0.5 + 3.0 * 1.69);
        assert!((p.w - expect).abs() < 1e-13);
        assert_eq!(p.comp_weights, vec![1.0]);
        assert!(p.w > 0.0 && p.w < r / 3.0);
    }

    #[test]
    fn bernoulli_matches_grid() {
        let spec = MixtureSpec::univariate(&[0.5, 0.5], &[-0.9, 0.9], &[0.43589, 0.43589]).unwrap();
        let theta = Theta::new(
            DVector::from_vec(vec![0.0, 1.0]),
            Family::bernoulli(),
            DMatrix::from_element(1, 1, 1.5),
            spec,
        )
        .unwrap();
        let c = cluster("b", &[1.0, 0.0, 1.0, 1.0], &[0.3, -2.0, 1.5, -0.2]);
        let p = ebp(&theta, &c).unwrap();
        let (w, v) = grid_posterior_oracle(&c, &theta, 12.0, 20001).unwrap();
        assert!((p.w - w).abs() < 1e-6 && (p.v - v).abs() < 1e-6);
    }

    #[test]
    fn identical_clusters_identical_predictions() {
        let theta = Theta::normal_intercept(&[0.0, 1.0], Family::poisson(), 0.8).unwrap();
        let a = cluster("a", &[1.0, 3.0], &[0.2, 0.4]);
        let b = cluster("b", &[1.0, 3.0], &[0.2, 0.4]);
        let ds = Dataset::new(vec![a, b]).unwrap();
        let p = ebp_dataset(&theta, &ds, 25).unwrap();
        assert_eq!(p[0].w, p[1].w);
        assert_eq!(p[0].cluster_id, "a");
    }
}
