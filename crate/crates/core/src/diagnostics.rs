//! Normality diagnostics for predicted random effects.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::model::Theta;
use crate::normal::{quantile, sf};
use crate::predict::Prediction;

/// Sorted sample paired with normal scores `Φ⁻¹((i − 0.5)/n)`.
pub fn qq_data(values: &[f64]) -> Result<Vec<(f64, f64)>> {
    if values.len() < 3 {
        return Err(Error::InvalidParameter("QQ data need at least 3 values".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("QQ data need finite values".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    Ok(sorted.iter().enumerate().map(|(i, &v)| (quantile((i as f64 + 0.5) / n), v)).collect())
}

fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ci| acc * x + ci)
}

/// Shapiro-Wilk `W` and its p-value by Royston's approximation (AS R94),
/// valid for `3 <= n <= 5000`.
pub fn shapiro_wilk(values: &[f64]) -> Result<(f64, f64)> {
    let n = values.len();
    if !(3..=5000).contains(&n) {
        return Err(Error::InvalidParameter(format!(
            "Shapiro-Wilk needs 3 <= n <= 5000, got {n}; inspect the QQ data instead"
        )));
    }
    let mut x = values.to_vec();
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("Shapiro-Wilk needs finite values".into()));
    }
    x.sort_by(f64::total_cmp);
    let range = x[n - 1] - x[0];
    if range < 1e-19 || range < 1e-12 * x[0].abs().max(x[n - 1].abs()) {
        return Err(Error::InvalidParameter("Shapiro-Wilk needs non-constant data".into()));
    }

    const C1: [f64; 6] = [0.0, 0.221157, -0.147981, -2.07119, 4.434685, -2.706056];
    const C2: [f64; 6] = [0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633];
    const C3: [f64; 4] = [0.544, -0.39978, 0.025054, -6.714e-4];
    const C4: [f64; 4] = [1.3822, -0.77857, 0.062767, -0.0020322];
    const C5: [f64; 4] = [-1.5861, -0.31082, -0.083751, 0.0038915];
    const C6: [f64; 3] = [-0.4803, -0.082676, 0.0030302];
    const G: [f64; 2] = [-2.273, 0.459];

    let nn2 = n / 2;
    let an = n as f64;
    // half coefficient vector, largest first
    let mut a = vec![0.0; nn2];
    if n == 3 {
        a[0] = 0.5f64.sqrt();
    } else {
        let an25 = an + 0.25;
        let m: Vec<f64> = (1..=nn2).map(|i| quantile((i as f64 - 0.375) / an25)).collect();
        let summ2 = 2.0 * m.iter().map(|v| v * v).sum::<f64>();
        let ssumm2 = summ2.sqrt();
        let rsn = 1.0 / an.sqrt();
        let a1 = poly(&C1, rsn) - m[0] / ssumm2;
        let (i1, fac) = if n > 5 {
            let a2 = -m[1] / ssumm2 + poly(&C2, rsn);
            a[1] = a2;
            let fac = ((summ2 - 2.0 * m[0] * m[0] - 2.0 * m[1] * m[1]) / (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2)).sqrt();
            (2, fac)
        } else {
            (1, ((summ2 - 2.0 * m[0] * m[0]) / (1.0 - 2.0 * a1 * a1)).sqrt())
        };
        a[0] = a1;
        for i in i1..nn2 {
            a[i] = -m[i] / fac;
        }
    }

    let coef = |i: usize| -> f64 {
        let j = n - 1 - i;
        match i.cmp(&j) {
            std::cmp::Ordering::Less => -a[i],
            std::cmp::Ordering::Greater => a[j],
            std::cmp::Ordering::Equal => 0.0,
        }
    };
    let xs: Vec<f64> = x.iter().map(|v| v / range).collect();
    let mean_x = xs.iter().sum::<f64>() / an;
    let mean_a = (0..n).map(coef).sum::<f64>() / an;
    let (mut ssa, mut ssx, mut sax) = (0.0, 0.0, 0.0);
    for (i, xi) in xs.iter().enumerate() {
        let asa = coef(i) - mean_a;
        let xsx = xi - mean_x;
        ssa += asa * asa;
        ssx += xsx * xsx;
        sax += asa * xsx;
    }
    let ssassx = (ssa * ssx).sqrt();
    let w1 = (ssassx - sax) * (ssassx + sax) / (ssa * ssx);
    let w = 1.0 - w1;

    if n == 3 {
        let pi6 = 6.0 / std::f64::consts::PI;
        let stqr = std::f64::consts::FRAC_PI_3;
        let p = (pi6 * (w.sqrt().asin() - stqr)).max(0.0);
        return Ok((w, p.min(1.0)));
    }
    let mut y = w1.ln();
    let xx = an.ln();
    let (mean, sd) = if n <= 11 {
        let gamma = poly(&G, an);
        if y >= gamma {
            return Ok((w, 1e-99));
        }
        y = -(gamma - y).ln();
        (poly(&C3, an), poly(&C4, an).exp())
    } else {
        (poly(&C5, xx), poly(&C6, xx).exp())
    };
    Ok((w, sf((y - mean) / sd)))
}

/// Density of the fitted random-effects law on a grid.
pub fn density_curve(theta: &Theta, grid: &[f64]) -> Result<Vec<f64>> {
    if theta.re_dim() != 1 {
        return Err(Error::Unsupported("density curves are for a scalar random effect".into()));
    }
    grid.iter().map(|&u| Ok(theta.re_logpdf(&DVector::from_element(1, u))?.exp())).collect()
}

/// Paired EBPs of two fits of the same data, matched by cluster id.
pub fn ebp_comparison(a: &[Prediction], b: &[Prediction]) -> Result<Vec<(String, f64, f64)>> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!("{} vs {} predictions", a.len(), b.len())));
    }
    a.iter()
        .zip(b)
        .map(|(p, q)| {
            if p.cluster_id != q.cluster_id {
                return Err(Error::InvalidParameter(format!(
                    "cluster order differs: '{}' vs '{}'",
                    p.cluster_id, q.cluster_id
                )));
            }
            Ok((p.cluster_id.clone(), p.w, q.w))
        })
        .collect()
}
