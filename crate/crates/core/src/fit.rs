//! Log-log least-squares power laws `value ~ C N^k`.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerLawFit {
    pub exponent: f64,
    /// `ln C`.
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares on `(ln N, ln value)`.
pub fn fit_power_law(points: &[(f64, f64)]) -> Result<PowerLawFit> {
    if points.len() < 3 {
        return Err(Error::Domain(format!("power-law fit needs at least 3 points, got {}", points.len())));
    }
    if let Some(&(n, v)) = points.iter().find(|(n, v)| !(*n > 0.0 && *v > 0.0)) {
        return Err(Error::Domain(format!("power-law fit needs positive data, got ({n}, {v})")));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Domain("power-law fit needs at least two distinct N".into()));
    }
    let exponent = sxy / sxx;
    let intercept = my - exponent * mx;
    let sse: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - exponent * x).powi(2))
        .sum();
    // A constant series is fitted exactly by a zero slope.
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    Ok(PowerLawFit {
        exponent,
        intercept,
        r_squared,
    })
}

/// Slopes of consecutive `window`-point fits, tagged with the median `N` of
/// each window. Points are taken in the given order.
pub fn windowed_slope(points: &[(f64, f64)], window: usize) -> Result<Vec<(f64, f64)>> {
    if window < 3 {
        return Err(Error::Domain(format!("window must be at least 3, got {window}")));
    }
    if points.len() < window {
        return Err(Error::Domain(format!(
            "window of {window} is longer than the {} points",
            points.len()
        )));
    }
    points
        .windows(window)
        .map(|w| {
            let mut ns: Vec<f64> = w.iter().map(|p| p.0).collect();
            ns.sort_by(f64::total_cmp);
            let center = if window % 2 == 1 {
                ns[window / 2]
            } else {
                0.5 * (ns[window / 2 - 1] + ns[window / 2])
            };
            Ok((center, fit_power_law(w)?.exponent))
        })
        .collect()
}
