//! Weighted log-log slope fits.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitPoint {
    pub gamma: f64,
    pub distance: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    /// Bootstrap interval for the slope at `level`.
    pub ci: (f64, f64),
    pub level: f64,
    pub points: usize,
    /// Factor applied to the stated log-scale errors,
    /// `max(1, sqrt(chi^2 / (n - 2)))`.
    pub scale_factor: f64,
}

fn wls(x: &[f64], y: &[f64], w: &[f64]) -> (f64, f64) {
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let my = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for ((xi, yi), wi) in x.iter().zip(y).zip(w) {
        sxy += wi * (xi - mx) * (yi - my);
        sxx += wi * (xi - mx) * (xi - mx);
    }
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let f = pos - lo as f64;
    sorted[lo] * (1.0 - f) + sorted[hi] * f
}

/// [`rate_fit_with`] at 95% with 2000 resamples.
pub fn rate_fit(points: &[FitPoint]) -> Result<RateFit> {
    rate_fit_with(points, 0.95, 2000, 0)
}

/// Weighted least squares of `ln distance` on `ln gamma`, weights
/// `(distance / stderr)^2`. The interval comes from a parametric bootstrap
/// over the log-scale errors, inflated when the residuals are larger than
/// the stated errors. Points with zero stderr get unit weight and the
/// residual scale.
pub fn rate_fit_with(points: &[FitPoint], level: f64, resamples: usize, seed: u64) -> Result<RateFit> {
    if points.len() < 3 {
        return Err(Error::InsufficientData {
            got: points.len(),
            need: 3,
        });
    }
    if points
        .iter()
        .any(|p| !(p.gamma > 0.0 && p.distance > 0.0 && p.stderr >= 0.0 && p.stderr.is_finite()))
    {
        return Err(Error::InvalidArgument(
            "fit points need positive gamma and distance and finite stderr".into(),
        ));
    }
    let x: Vec<f64> = points.iter().map(|p| p.gamma.ln()).collect();
    if x.iter().all(|v| (v - x[0]).abs() < 1e-12) {
        return Err(Error::InvalidArgument("all gammas coincide".into()));
    }
    let y: Vec<f64> = points.iter().map(|p| p.distance.ln()).collect();
    let weighted = points.iter().all(|p| p.stderr > 0.0);
    let sigma: Vec<f64> = points
        .iter()
        .map(|p| if weighted { p.stderr / p.distance } else { 1.0 })
        .collect();
    let w: Vec<f64> = sigma.iter().map(|s| 1.0 / (s * s)).collect();
    let (slope, intercept) = wls(&x, &y, &w);
    let n = points.len();
    let chi2: f64 = (0..n)
        .map(|i| ((y[i] - intercept - slope * x[i]) / sigma[i]).powi(2))
        .sum();
    let birge = (chi2 / (n - 2) as f64).sqrt();
    let scale_factor = if weighted { birge.max(1.0) } else { birge };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut slopes = Vec::with_capacity(resamples);
    let mut yb = vec![0.0; n];
    for _ in 0..resamples.max(2) {
        for i in 0..n {
            let e: f64 = StandardNormal.sample(&mut rng);
            yb[i] = intercept + slope * x[i] + scale_factor * sigma[i] * e;
        }
        slopes.push(wls(&x, &yb, &w).0);
    }
    slopes.sort_by(f64::total_cmp);
    let tail = 0.5 * (1.0 - level);
    Ok(RateFit {
        slope,
        intercept,
        ci: (quantile(&slopes, tail), quantile(&slopes, 1.0 - tail)),
        level,
        points: n,
        scale_factor,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synth(c: f64, p: f64, noise: &[f64]) -> Vec<FitPoint> {
        (0..noise.len())
            .map(|i| {
                let gamma = 0.5f64.powi(i as i32 + 2);
                let d = c * gamma.powf(p) * (1.0 + noise[i]);
                FitPoint {
                    gamma,
                    distance: d,
                    stderr: 0.05 * d,
                }
            })
            .collect()
    }

    #[test]
    fn exact_power_laws() {
        let f = rate_fit(&synth(3.0, 1.0, &[0.0; 6])).unwrap();
        assert!((f.slope - 1.0).abs() < 1e-12);
        assert!((f.intercept - 3.0f64.ln()).abs() < 1e-10);
        let f = rate_fit(&synth(0.2, 0.5, &[0.0; 6])).unwrap();
        assert!((f.slope - 0.5).abs() < 1e-12);
    }

    #[test]
    fn too_few_points() {
        let pts = synth(1.0, 1.0, &[0.0; 2]);
        assert!(matches!(rate_fit(&pts), Err(Error::InsufficientData { got: 2, need: 3 })));
    }

    #[test]
    fn unweighted_when_stderr_missing() {
        let mut pts = synth(1.0, 1.0, &[0.0, 0.01, -0.02, 0.0]);
        pts.iter_mut().for_each(|p| p.stderr = 0.0);
        let f = rate_fit(&pts).unwrap();
        assert!((f.slope - 1.0).abs() < 0.05 && f.ci.0 < f.slope && f.slope < f.ci.1);
    }

    #[test]
    fn coverage_under_multiplicative_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut covered = 0;
        for r in 0..200 {
            let noise: Vec<f64> = (0..7)
                .map(|_| 0.05 * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                .collect();
            let f = rate_fit_with(&synth(2.0, 1.0, &noise), 0.95, 1000, r).unwrap();
            if f.ci.0 <= 1.0 && 1.0 <= f.ci.1 {
                covered += 1;
            }
        }
        assert!(covered >= 190, "covered {covered} of 200");
    }
}
