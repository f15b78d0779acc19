//! Unconstrained minimizers: Nelder-Mead and BFGS with numerical gradients.
//!
//! Objectives may return `+inf` or NaN at infeasible points; both are
//! treated as `+inf`.

use nalgebra::{DMatrix, DVector};

#[derive(Clone, Debug, PartialEq)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub n_evals: usize,
    pub iterations: usize,
    /// True when the relative-improvement criterion was met before `max_iter`.
    pub converged: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimOptions {
    pub max_iter: usize,
    /// Relative improvement of the objective that counts as stalled.
    pub tol: f64,
    /// Initial simplex edge (Nelder-Mead) or finite-difference scale (BFGS).
    pub step: f64,
}

impl Default for OptimOptions {
    fn default() -> Self {
        OptimOptions { max_iter: 2000, tol: 1e-8, step: 0.5 }
    }
}

struct Counted<F> {
    f: F,
    n: usize,
}

impl<F: FnMut(&[f64]) -> f64> Counted<F> {
    fn eval(&mut self, x: &[f64]) -> f64 {
        self.n += 1;
        let v = (self.f)(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }
}

fn rel_change(old: f64, new: f64) -> f64 {
    if old == new {
        return 0.0;
    }
    (old - new).abs() / old.abs().max(new.abs()).max(1e-300)
}

/// Tracks the best value over a sliding window of iterations.
struct StallWindow {
    history: Vec<f64>,
    len: usize,
}

impl StallWindow {
    fn new(len: usize) -> Self {
        StallWindow { history: Vec::new(), len: len.max(1) }
    }

    fn push(&mut self, best: f64, tol: f64) -> bool {
        self.history.push(best);
        if self.history.len() <= self.len {
            return false;
        }
        let old = self.history[self.history.len() - 1 - self.len];
        best.is_finite() && rel_change(old, best) < tol
    }
}

/// Nelder-Mead simplex search with the dimension-adaptive coefficients of
/// Gao and Han.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(f: F, x0: &[f64], opts: &OptimOptions) -> OptimResult {
    let mut obj = Counted { f, n: 0 };
    let d = x0.len();
    if d == 0 {
        let v = obj.eval(x0);
        return OptimResult { x: vec![], f: v, n_evals: 1, iterations: 0, converged: true };
    }
    let df = d as f64;
    let (alpha, gamma) = (1.0, 1.0 + 2.0 / df);
    let (rho, sigma) = (0.75 - 0.5 / df, 1.0 - 1.0 / df);

    let mut pts: Vec<Vec<f64>> = Vec::with_capacity(d + 1);
    pts.push(x0.to_vec());
    for i in 0..d {
        let mut p = x0.to_vec();
        p[i] += opts.step;
        pts.push(p);
    }
    let mut vals: Vec<f64> = pts.iter().map(|p| obj.eval(p)).collect();
    let mut window = StallWindow::new(2 * d);
    let mut converged = false;
    let mut iter = 0;
    while iter < opts.max_iter {
        iter += 1;
        let mut order: Vec<usize> = (0..=d).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        pts = order.iter().map(|&i| pts[i].clone()).collect();
        vals = order.iter().map(|&i| vals[i]).collect();

        let spread = rel_change(vals[0], vals[d]);
        if window.push(vals[0], opts.tol) && spread < opts.tol.sqrt() {
            converged = true;
            break;
        }

        let mut centroid = vec![0.0; d];
        for p in &pts[..d] {
            for (c, v) in centroid.iter_mut().zip(p) {
                *c += v / df;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            centroid.iter().zip(&pts[d]).map(|(c, w)| c + t * (c - w)).collect()
        };
        let xr = along(alpha);
        let fr = obj.eval(&xr);
        if fr < vals[0] {
            let xe = along(alpha * gamma);
            let fe = obj.eval(&xe);
            if fe < fr {
                pts[d] = xe;
                vals[d] = fe;
            } else {
                pts[d] = xr;
                vals[d] = fr;
            }
            continue;
        }
        if fr < vals[d - 1] {
            pts[d] = xr;
            vals[d] = fr;
            continue;
        }
        let (xc, fc) = if fr < vals[d] {
            let xc = along(alpha * rho);
            let fc = obj.eval(&xc);
            (xc, if fc <= fr { fc } else { f64::INFINITY })
        } else {
            let xc = along(-rho);
            let fc = obj.eval(&xc);
            (xc, if fc < vals[d] { fc } else { f64::INFINITY })
        };
        if fc.is_finite() {
            pts[d] = xc;
            vals[d] = fc;
            continue;
        }
        let best = pts[0].clone();
        for i in 1..=d {
            pts[i] = best.iter().zip(&pts[i]).map(|(b, p)| b + sigma * (p - b)).collect();
            vals[i] = obj.eval(&pts[i]);
        }
    }
    let best = (0..=d).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap_or(0);
    OptimResult { x: pts[best].clone(), f: vals[best], n_evals: obj.n, iterations: iter, converged }
}

/// Central-difference gradient; falls back to a one-sided difference when
/// one neighbour is infeasible, and to zero when both are.
pub fn numeric_gradient<F: FnMut(&[f64]) -> f64>(f: &mut F, x: &[f64], fx: f64, scale: f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let h = scale * x[i].abs().max(1.0);
        xp[i] = x[i] + h;
        let fp = f(&xp);
        xp[i] = x[i] - h;
        let fm = f(&xp);
        xp[i] = x[i];
        g[i] = match (fp.is_finite(), fm.is_finite()) {
            (true, true) => (fp - fm) / (2.0 * h),
            (true, false) => (fp - fx) / h,
            (false, true) => (fx - fm) / h,
            (false, false) => 0.0,
        };
    }
    g
}

/// BFGS with central-difference gradients and a backtracking Armijo search.
pub fn bfgs<F: FnMut(&[f64]) -> f64>(f: F, x0: &[f64], opts: &OptimOptions) -> OptimResult {
    let mut obj = Counted { f, n: 0 };
    let d = x0.len();
    let mut x = DVector::from_column_slice(x0);
    let mut fx = obj.eval(x.as_slice());
    if d == 0 || !fx.is_finite() {
        return OptimResult { x: x0.to_vec(), f: fx, n_evals: obj.n, iterations: 0, converged: d == 0 };
    }
    let fd_scale = 1e-5 * opts.step.max(1e-3) / 0.5;
    let grad = |obj: &mut Counted<F>, x: &DVector<f64>, fx: f64| {
        DVector::from_vec(numeric_gradient(&mut |p: &[f64]| obj.eval(p), x.as_slice(), fx, fd_scale))
    };
    let mut g = grad(&mut obj, &x, fx);
    let mut h = DMatrix::<f64>::identity(d, d);
    let mut window = StallWindow::new(2 * d);
    let mut converged = false;
    let mut iter = 0;
    while iter < opts.max_iter {
        iter += 1;
        if g.amax() < 1e-10 * fx.abs().max(1.0) {
            converged = true;
            break;
        }
        let mut dir = -(&h * &g);
        let mut slope = g.dot(&dir);
        if slope >= 0.0 {
            h = DMatrix::identity(d, d);
            dir = -g.clone();
            slope = -g.norm_squared();
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let xn = &x + &dir * t;
            let fn_ = obj.eval(xn.as_slice());
            if fn_.is_finite() && fn_ <= fx + 1e-4 * t * slope {
                accepted = Some((xn, fn_));
                break;
            }
            t *= 0.5;
        }
        let Some((xn, fnew)) = accepted else {
            // No descent along the quasi-Newton direction: treat as stationary.
            converged = true;
            break;
        };
        let gn = grad(&mut obj, &xn, fnew);
        let s = &xn - &x;
        let y = &gn - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            let rho = 1.0 / sy;
            let eye = DMatrix::<f64>::identity(d, d);
            let left = &eye - &s * y.transpose() * rho;
            let right = &eye - &y * s.transpose() * rho;
            h = &left * &h * &right + &s * s.transpose() * rho;
        }
        x = xn;
        fx = fnew;
        g = gn;
        if window.push(fx, opts.tol) {
            converged = true;
            break;
        }
    }
    OptimResult { x: x.as_slice().to_vec(), f: fx, n_evals: obj.n, iterations: iter, converged }
}
