//! Normal-theory prediction intervals and their empirical coverage.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal::quantile;

/// Number of equal-count bins used for conditional coverage by default.
pub const DEFAULT_BINS: usize = 20;

/// `w ± Φ⁻¹(1 − α/2) √msep`.
pub fn prediction_interval(w: f64, msep: f64, alpha: f64) -> Result<(f64, f64)> {
    let h = half_width(msep, alpha)?;
    Ok((w - h, w + h))
}

fn half_width(msep: f64, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if !(msep >= 0.0) {
        return Err(Error::InvalidParameter(format!("msep must be non-negative, got {msep}")));
    }
    Ok(quantile(1.0 - alpha / 2.0) * msep.sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageDraw {
    pub u_true: f64,
    pub w: f64,
    pub msep: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalRow {
    pub w: f64,
    pub half_width: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageBin {
    /// Mean true random effect in the bin.
    pub center: f64,
    pub lo: f64,
    pub hi: f64,
    pub coverage: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalReport {
    pub alpha: f64,
    pub per_cluster: Vec<IntervalRow>,
    pub coverage_marginal: f64,
    pub coverage_by_bin: Vec<CoverageBin>,
}

/// Marginal coverage and coverage within equal-count bins of the true
/// random effect. Tied values never straddle a bin edge, so fewer bins than
/// requested are returned when there are not enough distinct values.
pub fn coverage_eval(draws: &[CoverageDraw], alpha: f64, bins: usize) -> Result<IntervalReport> {
    if draws.is_empty() {
        return Err(Error::InvalidParameter("coverage needs at least one draw".into()));
    }
    if bins == 0 {
        return Err(Error::InvalidParameter("need at least one bin".into()));
    }
    let per_cluster: Vec<IntervalRow> = draws
        .iter()
        .map(|d| {
            let h = half_width(d.msep, alpha)?;
            Ok(IntervalRow { w: d.w, half_width: h, lo: d.w - h, hi: d.w + h })
        })
        .collect::<Result<_>>()?;
    let hit: Vec<bool> =
        draws.iter().zip(&per_cluster).map(|(d, r)| d.u_true >= r.lo && d.u_true <= r.hi).collect();
    let covered = hit.iter().filter(|&&h| h).count();
    let coverage_marginal = covered as f64 / draws.len() as f64;

    let mut order: Vec<usize> = (0..draws.len()).collect();
    order.sort_by(|&a, &b| draws[a].u_true.total_cmp(&draws[b].u_true));
    let n = order.len();
    let mut coverage_by_bin = Vec::new();
    let mut start = 0;
    for b in 1..=bins {
        if start >= n {
            break;
        }
        let mut end = (b * n / bins).max(start + 1);
        if b == bins {
            end = n;
        }
        while end < n && draws[order[end]].u_true == draws[order[end - 1]].u_true {
            end += 1;
        }
        let idx = &order[start..end];
        let k = idx.len();
        let hits = idx.iter().filter(|&&i| hit[i]).count();
        coverage_by_bin.push(CoverageBin {
            center: idx.iter().map(|&i| draws[i].u_true).sum::<f64>() / k as f64,
            lo: draws[idx[0]].u_true,
            hi: draws[idx[k - 1]].u_true,
            coverage: hits as f64 / k as f64,
            n: k,
        });
        start = end;
    }
    Ok(IntervalReport { alpha, per_cluster, coverage_marginal, coverage_by_bin })
}
