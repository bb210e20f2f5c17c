//! Least-squares fit of the accuracy model to `(alpha, accuracy)` points.
//!
//! The model is over-parameterised: `kappa1*log2(kappa2/alpha - kappa3) + kappa4`
//! equals `kappa1*log2(1/alpha - kappa3/kappa2) + kappa1*log2(kappa2) + kappa4`,
//! so data constrain `kappa1`, the ratio `kappa3/kappa2` and one offset, but
//! not `kappa2` itself. The fit holds `kappa2` at a chosen scale and solves
//! for the other three. For fixed `kappa3` the problem is linear in
//! `(kappa1, kappa4)`, leaving a one-dimensional search.

use serde::Serialize;

use super::AccuracyModel;
use crate::error::{Error, Result};

/// Scale used by [`fit_kappa`], matching the default model.
pub const DEFAULT_KAPPA2: f64 = 19.221;

const GRID_POINTS: usize = 4000;
const GOLDEN_ITERS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FitReport {
    pub model: AccuracyModel,
    /// Sum of squared residuals.
    pub rss: f64,
    /// Root mean square residual.
    pub rms: f64,
}

/// Fits with `kappa2` fixed at [`DEFAULT_KAPPA2`].
pub fn fit_kappa(points: &[(f64, f64)]) -> Result<FitReport> {
    fit_kappa_with_scale(points, DEFAULT_KAPPA2)
}

/// Fits `(kappa1, kappa3, kappa4)` with `kappa2` held at `kappa2`.
pub fn fit_kappa_with_scale(points: &[(f64, f64)], kappa2: f64) -> Result<FitReport> {
    if !(kappa2 > 0.0 && kappa2.is_finite()) {
        return Err(Error::Fit(format!("kappa2 must be positive, got {kappa2}")));
    }
    if points.len() < 4 {
        return Err(Error::Fit(format!("need at least 4 points, got {}", points.len())));
    }
    for &(a, y) in points {
        if !(a >= 1.0 && a.is_finite()) || !(0.0..=1.0).contains(&y) {
            return Err(Error::Fit(format!("invalid point ({a}, {y})")));
        }
    }
    let mut alphas: Vec<f64> = points.iter().map(|p| p.0).collect();
    alphas.sort_by(f64::total_cmp);
    alphas.dedup();
    if alphas.len() < 4 {
        return Err(Error::Fit(format!(
            "need at least 4 distinct ratios, got {}",
            alphas.len()
        )));
    }

    let eps = AccuracyModel::default().clamp_epsilon;
    // The log argument must stay above the clamp floor at the largest ratio.
    let k3_max = kappa2 / alphas[alphas.len() - 1] - eps;
    if k3_max <= 0.0 {
        return Err(Error::Fit(format!(
            "ratios up to {} leave no unclamped region at kappa2 = {kappa2}",
            alphas[alphas.len() - 1]
        )));
    }

    // Search over u = ln(k3_max - kappa3 + eps), which spreads the grid
    // toward the pole of the log.
    let u_hi = (k3_max + eps).ln();
    let u_lo = eps.ln();
    let k3_of = |u: f64| (k3_max + eps - u.exp()).clamp(0.0, k3_max);
    let sse = |u: f64| linear_fit(points, kappa2, k3_of(u)).2;

    let mut best = (f64::INFINITY, u_hi);
    let step = (u_hi - u_lo) / GRID_POINTS as f64;
    for i in 0..=GRID_POINTS {
        let u = u_lo + step * i as f64;
        let s = sse(u);
        if s < best.0 {
            best = (s, u);
        }
    }
    let (lo, hi) = ((best.1 - step).max(u_lo), (best.1 + step).min(u_hi));
    let u = golden_section(sse, lo, hi);
    let u = if sse(u) <= best.0 { u } else { best.1 };

    let kappa3 = k3_of(u);
    let (kappa1, kappa4, rss) = linear_fit(points, kappa2, kappa3);
    let model = AccuracyModel::new(kappa1, kappa2, kappa3, kappa4, eps).map_err(|e| Error::Fit(e.to_string()))?;
    Ok(FitReport {
        model,
        rss,
        rms: (rss / points.len() as f64).sqrt(),
    })
}

/// Least squares for `y = kappa1 * x + kappa4` with `kappa1 >= 0`.
fn linear_fit(points: &[(f64, f64)], kappa2: f64, kappa3: f64) -> (f64, f64, f64) {
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|&(a, _)| (kappa2 / a - kappa3).log2()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (x, &(_, y)) in xs.iter().zip(points) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    let k1 = if sxx > 0.0 { (sxy / sxx).max(0.0) } else { 0.0 };
    let k4 = my - k1 * mx;
    let rss = xs
        .iter()
        .zip(points)
        .map(|(x, &(_, y))| (k1 * x + k4 - y).powi(2))
        .sum();
    (k1, k4, rss)
}

fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..GOLDEN_ITERS {
        if (b - a).abs() <= 1e-15 * (1.0 + a.abs()) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}
