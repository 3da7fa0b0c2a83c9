//! Advisory checks of the structural assumptions on a model. Nothing here
//! refuses to simulate; failures are reported with diagnostics.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::{JumpModel, TailTable};
use crate::error::Result;
use crate::quad::{self, sphere_area};
use crate::steps::{default_omega_window, omega_bar, StepSequence};

#[derive(Debug, Clone, Serialize)]
pub struct GrowthSample {
    pub u: f64,
    /// `mu_bar { c_floor >= 1/u }`.
    pub measure: f64,
    /// `measure / ln u`.
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GrowthReport {
    pub samples: Vec<GrowthSample>,
    /// `"growth: unbounded"`, `"growth: plateau"` or `"growth: none"`.
    pub classification: String,
    /// Over the last third of the grid the ratio ends no higher than it
    /// starts. Shell discretisation makes the ratio a staircase, so
    /// step-by-step monotonicity is not required.
    pub non_increasing_tail: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct HypothesisReport {
    pub model: String,
    pub dim: usize,
    pub theta: Option<f64>,
    pub theta_error: Option<String>,
    /// `(alpha, beta)` in `L|x|^2 <= beta - alpha |x|^2`.
    pub lyapunov: Option<(f64, f64)>,
    pub hyp24a: GrowthReport,
    pub checks: Vec<Check>,
}

/// Default `u` grid: `10^{1/2}, 10, ..., 10^12`.
pub fn default_u_grid() -> Vec<f64> {
    (1..=24).map(|k| 10f64.powf(k as f64 / 2.0)).collect()
}

/// Sub-intervals of `[a, b]` where `f >= level`, located by a grid scan
/// refined with bisection.
fn superlevel_intervals<F: Fn(f64) -> f64>(f: F, level: f64, a: f64, b: f64) -> Vec<(f64, f64)> {
    const SCAN: usize = 64;
    let above = |r: f64| f(r) >= level;
    let crossing = |mut lo: f64, mut hi: f64| {
        let lo_above = above(lo);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if above(mid) == lo_above {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let mut out = Vec::new();
    let mut start = if above(a) { Some(a) } else { None };
    let mut prev = a;
    for i in 1..=SCAN {
        let r = a + (b - a) * i as f64 / SCAN as f64;
        let now = above(r);
        match (start, now) {
            (None, true) => start = Some(crossing(prev, r)),
            (Some(s), false) => {
                out.push((s, crossing(prev, r)));
                start = None;
            }
            _ => {}
        }
        prev = r;
    }
    if let Some(s) = start {
        out.push((s, b));
    }
    out
}

/// Growth of `mu_bar { c_floor >= 1/u } / ln u` along `u_grid`, where
/// `mu_bar` keeps the shells `k - 3/4 <= |z| <= k - 1/4`.
pub fn check_hyp24a(model: &JumpModel, u_grid: &[f64]) -> GrowthReport {
    let d = model.dim();
    let radial = model.floor().is_radial() && model.density().is_radial();
    let (gl_x, gl_w) = quad::gauss_legendre(20);
    let area = sphere_area(d);
    let directions: Vec<Vec<f64>> = if radial {
        Vec::new()
    } else {
        quad::sphere_directions(d, 512, &[])
    };

    let measure_for = |u: f64| -> f64 {
        let level = 1.0 / u;
        let mut total = 0.0;
        let mut empty_run = 0;
        let mut k = 1usize;
        while empty_run < 8 && k < 1_000_000 {
            let (a, b) = (k as f64 - 0.75, k as f64 - 0.25);
            let mut shell = 0.0;
            if radial {
                let fl = |r: f64| {
                    let mut z = vec![0.0; d];
                    z[0] = r;
                    model.c_floor(&z)
                };
                for (lo, hi) in superlevel_intervals(fl, level, a, b) {
                    let half = 0.5 * (hi - lo);
                    let mid = 0.5 * (hi + lo);
                    for (x, w) in gl_x.iter().zip(&gl_w) {
                        let r = mid + half * x;
                        let mut z = vec![0.0; d];
                        z[0] = r;
                        shell += w * half * area * model.h(&z) * r.powi(d as i32 - 1);
                    }
                }
            } else {
                let half = 0.5 * (b - a);
                let mid = 0.5 * (a + b);
                let wdir = area / directions.len() as f64;
                let mut z = vec![0.0; d];
                for (x, w) in gl_x.iter().zip(&gl_w) {
                    let r = mid + half * x;
                    for dir in &directions {
                        for (zi, di) in z.iter_mut().zip(dir) {
                            *zi = r * di;
                        }
                        if model.c_floor(&z) >= level {
                            shell += w * half * wdir * model.h(&z) * r.powi(d as i32 - 1);
                        }
                    }
                }
            }
            if shell > 0.0 {
                empty_run = 0;
            } else {
                empty_run += 1;
            }
            total += shell;
            k += 1;
        }
        total
    };

    let samples: Vec<GrowthSample> = u_grid
        .iter()
        .filter(|&&u| u > 1.0)
        .map(|&u| {
            let measure = measure_for(u);
            GrowthSample {
                u,
                measure,
                ratio: measure / u.ln(),
            }
        })
        .collect();

    let ratios: Vec<f64> = samples.iter().map(|s| s.ratio).collect();
    let n = ratios.len();
    let tail = &ratios[(2 * n / 3).min(n.saturating_sub(1))..];
    let non_increasing_tail = tail.last() <= tail.first();
    let classification = if ratios.iter().all(|&r| r == 0.0) {
        "growth: none"
    } else if n >= 3 && ratios[n - 1] > 1.5 * ratios[n / 2] && tail.windows(2).all(|w| w[1] >= w[0]) {
        "growth: unbounded"
    } else {
        "growth: plateau"
    };
    GrowthReport {
        samples,
        classification: classification.to_string(),
        non_increasing_tail,
    }
}

struct Sampler {
    rng: ChaCha8Rng,
    d: usize,
}

impl Sampler {
    fn mark(&mut self, r_max: f64) -> Vec<f64> {
        let r = self.rng.gen::<f64>() * r_max;
        let mut v: Vec<f64> = (0..self.d).map(|_| self.rng.sample(StandardNormal)).collect();
        let n = super::norm(&v).max(1e-300);
        v.iter_mut().for_each(|x| *x *= r / n);
        v
    }

    fn state(&mut self, half_width: f64) -> Vec<f64> {
        (0..self.d)
            .map(|_| (2.0 * self.rng.gen::<f64>() - 1.0) * half_width)
            .collect()
    }
}

fn matrix(d: usize, data: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(d, d, data)
}

/// Runs every predicate with `samples` random `(z, x)` pairs.
pub fn check_hypotheses(
    model: &JumpModel,
    steps: Option<&StepSequence>,
    u_grid: &[f64],
    samples: usize,
) -> HypothesisReport {
    let d = model.dim();
    let mut checks = Vec::new();
    let mut s = Sampler {
        rng: ChaCha8Rng::seed_from_u64(0x5eed_cafe),
        d,
    };

    let table = TailTable::build(model, 4);
    let (theta, theta_error, lyapunov) = match &table {
        Ok(t) => {
            let th = t.theta(model.b_bar()).ok();
            let lin = t.tail_linear(0).unwrap_or(f64::NAN);
            let sq = t.tail_square(0).unwrap_or(f64::NAN);
            (th, None, Some((2.0 * model.b_bar() - lin, lin + sq)))
        }
        Err(e) => (None, Some(e.to_string()), None),
    };

    checks.push(Check {
        name: "envelope-integrability".into(),
        passed: table.is_ok(),
        detail: match &table {
            Ok(t) => format!(
                "int c_bar dmu = {:.6e}, int c_bar^2 dmu = {:.6e}",
                t.tail_linear(0).unwrap_or(f64::NAN),
                t.tail_square(0).unwrap_or(f64::NAN)
            ),
            Err(e) => e.to_string(),
        },
    });

    let mut worst_bound: f64 = 0.0;
    let mut worst_inverse: f64 = 0.0;
    let mut singular = 0usize;
    let mut worst_ellipticity: f64 = f64::INFINITY;
    let mut floor_violations = 0usize;
    let mut worst_dissipation: f64 = f64::NEG_INFINITY;
    let mut worst_lipschitz: f64 = 0.0;
    let mut log_h_grad: f64 = 0.0;
    let mut h_zero = 0usize;
    let mut c = vec![0.0; d];
    let mut c2 = vec![0.0; d];
    let mut g = vec![0.0; d * d];
    let mut bx = vec![0.0; d];
    let mut by = vec![0.0; d];
    for _ in 0..samples {
        let z = s.mark(8.0);
        let x = s.state(3.0);
        let y = s.state(3.0);
        let cb = model.c_bar(&z);
        let hz = model.h(&z);
        if hz <= 0.0 {
            h_zero += 1;
            continue;
        }
        model.jump(&z, &x, &mut c);
        worst_bound = worst_bound.max(super::norm(&c) - cb);

        model.jump_grad_x(&z, &x, &mut g);
        let gm = matrix(d, &g);
        let im = DMatrix::identity(d, d) + &gm;
        match im.clone().try_inverse() {
            Some(inv) => {
                let prod = &gm * inv;
                worst_inverse = worst_inverse.max(prod.norm() - cb);
            }
            None => singular += 1,
        }

        model.jump_grad_z(&z, &x, &mut g);
        let jz = matrix(d, &g);
        let gram = &jz * jz.transpose();
        let lam = gram.symmetric_eigenvalues().min();
        let fl = model.c_floor(&z);
        worst_ellipticity = worst_ellipticity.min(lam - fl);
        if fl > cb * cb * (1.0 + 1e-12) {
            floor_violations += 1;
        }

        model.drift(&x, &mut bx);
        model.drift(&y, &mut by);
        let diff2: f64 = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum();
        let inner: f64 = x
            .iter()
            .zip(&y)
            .zip(bx.iter().zip(&by))
            .map(|((a, b), (fa, fb))| (a - b) * (fa - fb))
            .sum();
        if diff2 > 0.0 {
            worst_dissipation = worst_dissipation.max(inner / diff2 + model.b_bar());
            model.jump(&z, &y, &mut c2);
            let dc: f64 = c.iter().zip(&c2).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            worst_lipschitz = worst_lipschitz.max(dc / diff2.sqrt() - cb);
        }

        let mut zz = z.clone();
        let eps = 1e-6;
        for j in 0..d {
            zz[j] = z[j] + eps;
            let hp = model.h(&zz);
            zz[j] = z[j] - eps;
            let hm = model.h(&zz);
            zz[j] = z[j];
            if hp > 0.0 && hm > 0.0 {
                log_h_grad = log_h_grad.max(((hp.ln() - hm.ln()) / (2.0 * eps)).abs());
            }
        }
    }
    let tol = 1e-9;
    checks.push(Check {
        name: "jump-envelope: |c(z, x)| <= c_bar(z)".into(),
        passed: worst_bound <= tol,
        detail: format!("max excess {worst_bound:.3e} over {samples} samples"),
    });
    checks.push(Check {
        name: "inverse-jacobian: |grad_x c (I + grad_x c)^-1| <= c_bar(z)".into(),
        passed: singular == 0 && worst_inverse <= tol,
        detail: format!("max excess {worst_inverse:.3e}, {singular} singular samples"),
    });
    checks.push(Check {
        name: "ellipticity-floor".into(),
        passed: floor_violations == 0 && worst_ellipticity >= -tol,
        detail: format!(
            "min (lambda_min(grad_z c grad_z c^T) - c_floor) = {worst_ellipticity:.3e}, \
             {floor_violations} samples with c_floor > c_bar^2"
        ),
    });
    let growth = check_hyp24a(model, u_grid);
    checks.push(Check {
        name: "floor-growth: superlevel mass over ln u".into(),
        passed: growth.classification == "growth: unbounded",
        detail: growth.classification.clone(),
    });
    checks.push(Check {
        name: "density: smooth and positive".into(),
        passed: h_zero == 0 && log_h_grad.is_finite(),
        detail: format!("max |grad ln h| = {log_h_grad:.3e}, {h_zero} samples with h = 0"),
    });
    checks.push(Check {
        name: "dissipative-drift".into(),
        passed: worst_dissipation <= tol,
        detail: format!("max of <x - y, b(x) - b(y)> / |x - y|^2 + b_bar = {worst_dissipation:.3e}"),
    });
    checks.push(Check {
        name: "lipschitz-jumps".into(),
        passed: worst_lipschitz <= tol,
        detail: format!("max excess of |c(z,x) - c(z,y)| / |x - y| over c_bar: {worst_lipschitz:.3e}"),
    });
    checks.push(Check {
        name: "contraction: theta > 0".into(),
        passed: theta.is_some_and(|t| t > 0.0),
        detail: match theta {
            Some(t) => format!("theta = {t:.6}"),
            None => theta_error.clone().unwrap_or_default(),
        },
    });
    if let Some(seq) = steps {
        let detail;
        let passed;
        if !seq.is_decreasing_kind() {
            passed = false;
            detail = "steps do not decrease to zero".to_string();
        } else {
            let (from, to) = default_omega_window(100_000);
            match (omega_bar(seq, from, to), theta) {
                (Ok(w), Some(t)) => {
                    passed = w < t / 2.0;
                    detail = format!("omega_bar = {w:.6} on [{from}, {to}], theta / 2 = {:.6}", t / 2.0);
                }
                (Err(e), _) => {
                    passed = false;
                    detail = e.to_string();
                }
                (_, None) => {
                    passed = false;
                    detail = "theta unavailable".into();
                }
            }
        }
        checks.push(Check {
            name: "steps: decreasing with omega_bar < theta / 2".into(),
            passed,
            detail,
        });
    }

    HypothesisReport {
        model: model.name().to_string(),
        dim: d,
        theta,
        theta_error,
        lyapunov,
        hyp24a: growth,
        checks,
    }
}

/// Convenience wrapper returning an error only when the model itself is unusable.
pub fn report(model: &JumpModel, steps: Option<&StepSequence>) -> Result<HypothesisReport> {
    Ok(check_hypotheses(model, steps, &default_u_grid(), 10_000))
}
