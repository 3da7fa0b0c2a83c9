//! Polynomial-times-Gaussian kernels with vanishing moments, and the
//! regularisation `f_delta = f * phi_delta`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::quad::{gauss_legendre, integrate, Tolerance};

const MAX_ORDER: usize = 12;
const SUPPORT: f64 = 12.0;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// `phi(y) = P(y^2) N(y)` in one dimension, `prod_j phi(y_j)` in `dim`
/// dimensions. `P(s) = sum_i c_i s^i` is chosen so that the moments of
/// orders `1..=order` vanish and the mass is one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuperKernel {
    pub order: usize,
    pub dim: usize,
    /// Coefficients `c_i` of `y^{2i}`.
    pub coefficients: Vec<f64>,
    /// `residuals[k]` is `int y^k phi - [k = 0]` for the 1-D profile,
    /// `k = 0..=order`, evaluated from exact Gaussian moments.
    pub residuals: Vec<f64>,
}

/// `(2n - 1)!!`, the `2n`-th moment of the standard normal law.
fn gaussian_moment(n: usize) -> f64 {
    (1..=n).map(|j| (2 * j - 1) as f64).product()
}

fn kahan_sum(terms: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for t in terms {
        let y = t - c;
        let u = s + y;
        c = (u - s) - y;
        s = u;
    }
    s
}

/// Kernel of order `q`: solves the `(m+1) x (m+1)` moment system with
/// `m = floor(q / 2)`. Odd moments vanish by symmetry.
pub fn build_superkernel(q: usize) -> Result<SuperKernel> {
    if q == 0 {
        return Err(Error::InvalidArgument("kernel order must be at least 1".into()));
    }
    if q > MAX_ORDER {
        return Err(Error::OrderTooHigh(q));
    }
    let m = q / 2;
    let a = DMatrix::from_fn(m + 1, m + 1, |r, i| gaussian_moment(r + i));
    let mut rhs = DVector::zeros(m + 1);
    rhs[0] = 1.0;
    let c = a
        .lu()
        .solve(&rhs)
        .ok_or(Error::OrderTooHigh(q))?;
    let coefficients: Vec<f64> = c.iter().copied().collect();
    let residuals = (0..=q)
        .map(|k| {
            if k % 2 == 1 {
                return 0.0;
            }
            let r = k / 2;
            let target = if r == 0 { 1.0 } else { 0.0 };
            kahan_sum(
                coefficients
                    .iter()
                    .enumerate()
                    .map(|(i, ci)| ci * gaussian_moment(i + r))
                    .chain(std::iter::once(-target)),
            )
        })
        .collect();
    Ok(SuperKernel {
        order: q,
        dim: 1,
        coefficients,
        residuals,
    })
}

impl SuperKernel {
    /// Same profile used as a product kernel on `R^dim`.
    pub fn product(mut self, dim: usize) -> Self {
        self.dim = dim.max(1);
        self
    }

    /// One-dimensional profile `phi(y)`.
    pub fn profile(&self, y: f64) -> f64 {
        let s = y * y;
        let p = self.coefficients.iter().rev().fold(0.0, |acc, c| acc * s + c);
        p * INV_SQRT_2PI * (-0.5 * s).exp()
    }

    /// `phi(y)` on `R^dim`.
    pub fn eval(&self, y: &[f64]) -> f64 {
        y.iter().map(|v| self.profile(*v)).product()
    }

    /// `delta^{-dim} phi(y / delta)`.
    pub fn scaled(&self, delta: f64, y: &[f64]) -> f64 {
        y.iter().map(|v| self.profile(v / delta) / delta).product()
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    /// `(y, phi(y))` on `n` equispaced points of `[-half_width, half_width]`.
    pub fn sampled_profile(&self, n: usize, half_width: f64) -> Vec<(f64, f64)> {
        let n = n.max(2);
        (0..n)
            .map(|i| {
                let y = -half_width + 2.0 * half_width * i as f64 / (n - 1) as f64;
                (y, self.profile(y))
            })
            .collect()
    }

    /// `int |y|^p |phi(y)| dy` of the 1-D profile.
    pub fn absolute_moment(&self, p: f64) -> f64 {
        let tol = Tolerance {
            abs: 1e-14,
            rel: 1e-12,
            max_intervals: 4000,
        };
        let f = |y: f64| y.abs().powf(p) * self.profile(y).abs();
        match integrate(f, -SUPPORT - 8.0, SUPPORT + 8.0, tol) {
            Ok(e) | Err(e) => e.value,
        }
    }
}

/// `f_delta(x) = int f(x - delta u) phi(u) du` over `[-12, 12]^d`, where
/// the kernel mass outside is below double precision. Adaptive in `d = 1`,
/// a composite Gauss-Legendre tensor rule otherwise.
pub fn convolve_kernel<F>(f: F, kernel: &SuperKernel, delta: f64, x: &[f64]) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
{
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "delta must lie in (0, 1], got {delta}"
        )));
    }
    let d = x.len();
    if d == 0 {
        return Err(Error::InvalidArgument("x must be non-empty".into()));
    }
    if d == 1 {
        let g = |u: f64| {
            let w = kernel.profile(u);
            if w == 0.0 {
                0.0
            } else {
                f(&[x[0] - delta * u]) * w
            }
        };
        // cancelling integrands (odd moments) have a rounding floor set by the L1 mass
        let (gx, gw) = gauss_legendre(16);
        let width = 2.0 * SUPPORT / 8.0;
        let mut mass = 0.0;
        for p in 0..8 {
            let mid = -SUPPORT + (p as f64 + 0.5) * width;
            for (t, w) in gx.iter().zip(&gw) {
                mass += 0.5 * width * w * g(mid + 0.5 * width * t).abs();
            }
        }
        let tol = Tolerance {
            abs: 1e-12 * mass.max(1.0),
            rel: 1e-12,
            max_intervals: 4000,
        };
        return integrate(g, -SUPPORT, SUPPORT, tol).map(|e| e.value).map_err(|e| {
            Error::Integrability {
                what: "kernel convolution".into(),
                estimate: e.value,
                error: e.error,
            }
        });
    }

    let (panels, per_panel) = if d == 2 { (8, 16) } else { (8, 10) };
    let (gx, gw) = gauss_legendre(per_panel);
    let width = 2.0 * SUPPORT / panels as f64;
    let mut nodes = Vec::with_capacity(panels * per_panel);
    let mut weights = Vec::with_capacity(panels * per_panel);
    for p in 0..panels {
        let mid = -SUPPORT + (p as f64 + 0.5) * width;
        for (t, w) in gx.iter().zip(&gw) {
            let u = mid + 0.5 * width * t;
            nodes.push(u);
            weights.push(0.5 * width * w * kernel.profile(u));
        }
    }
    let n = nodes.len();
    let mut idx = vec![0usize; d];
    let mut y = vec![0.0; d];
    let mut total = 0.0;
    'outer: loop {
        let mut w = 1.0;
        for j in 0..d {
            w *= weights[idx[j]];
            y[j] = x[j] - delta * nodes[idx[j]];
        }
        if w != 0.0 {
            total += w * f(&y);
        }
        for j in (0..d).rev() {
            idx[j] += 1;
            if idx[j] < n {
                continue 'outer;
            }
            idx[j] = 0;
        }
        break;
    }
    if !total.is_finite() {
        return Err(Error::Integrability {
            what: "kernel convolution".into(),
            estimate: total,
            error: f64::INFINITY,
        });
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Probabilists' Hermite polynomials at `y`, degrees `0..=n`.
    fn hermite(n: usize, y: f64) -> Vec<f64> {
        let mut h = vec![1.0, y];
        for k in 1..n {
            let next = y * h[k] - k as f64 * h[k - 1];
            h.push(next);
        }
        h.truncate(n + 1);
        h
    }

    /// The reproducing kernel of polynomials of degree `<= q` in
    /// `L^2(N(0,1))`, evaluated at `(0, y)`, times the Gaussian density.
    fn hermite_kernel(q: usize, y: f64) -> f64 {
        let h0 = hermite(q, 0.0);
        let hy = hermite(q, y);
        let mut fact = 1.0;
        let mut s = 0.0;
        for k in 0..=q {
            if k > 0 {
                fact *= k as f64;
            }
            s += h0[k] * hy[k] / fact;
        }
        s * INV_SQRT_2PI * (-0.5 * y * y).exp()
    }

    fn gl_moment(kernel: &SuperKernel, k: i32) -> f64 {
        let (x, w) = gauss_legendre(40);
        let panels = 80;
        let width = 80.0 / panels as f64;
        let mut s = 0.0;
        for p in 0..panels {
            let mid = -40.0 + (p as f64 + 0.5) * width;
            for (t, wt) in x.iter().zip(&w) {
                let y = mid + 0.5 * width * t;
                s += 0.5 * width * wt * y.powi(k) * kernel.profile(y);
            }
        }
        s
    }

    #[test]
    fn order_one_is_the_gaussian() {
        let k = build_superkernel(1).unwrap();
        assert_eq!(k.coefficients, vec![1.0]);
        let k2 = build_superkernel(2).unwrap();
        assert!(k2.coefficients.len() == 2);
    }

    #[test]
    fn order_three_has_one_correction() {
        let k = build_superkernel(3).unwrap();
        // P(y) = (3 - y^2) / 2.
        assert!((k.coefficients[0] - 1.5).abs() < 1e-14);
        assert!((k.coefficients[1] + 0.5).abs() < 1e-14);
        assert!(k.max_residual() < 1e-8);
        assert!(gl_moment(&k, 2).abs() < 1e-8);
    }

    #[test]
    fn matches_hermite_reproducing_kernel() {
        for q in 1..=MAX_ORDER {
            let k = build_superkernel(q).unwrap();
            let q_even = 2 * (q / 2);
            for y in [0.0, 0.3, 1.0, 2.5, 4.0] {
                let a = k.profile(y);
                let b = hermite_kernel(q_even, y);
                assert!((a - b).abs() < 1e-8 * (1.0 + b.abs()), "q={q} y={y}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn mass_and_moments_by_quadrature() {
        for q in 1..=10 {
            let k = build_superkernel(q).unwrap();
            assert!((gl_moment(&k, 0) - 1.0).abs() < 1e-10, "q={q}");
            for j in 1..=q as i32 {
                let m = gl_moment(&k, j);
                assert!(m.abs() < 1e-8, "q={q} moment {j} = {m}");
            }
            assert!(k.max_residual() < 1e-8);
            assert!(k.absolute_moment(q as f64 + 1.0).is_finite());
        }
    }

    #[test]
    fn rejects_bad_orders() {
        assert!(matches!(build_superkernel(13), Err(Error::OrderTooHigh(13))));
        assert!(build_superkernel(0).is_err());
        assert!(build_superkernel(12).is_ok());
    }

    #[test]
    fn constants_and_polynomials_are_reproduced() {
        let k = build_superkernel(4).unwrap();
        for delta in [1.0, 0.5, 0.1] {
            let c = convolve_kernel(|_| 2.5, &k, delta, &[0.7]).unwrap();
            assert!((c - 2.5).abs() < 1e-10);
            for p in 0..=4 {
                let v = convolve_kernel(|y| y[0].powi(p), &k, delta, &[1.3]).unwrap();
                let exact = 1.3f64.powi(p);
                assert!((v - exact).abs() < 1e-8 * exact.abs().max(1.0), "p={p}: {v}");
            }
        }
        // Moment of order q + 1 is not cancelled.
        let k3 = build_superkernel(3).unwrap();
        let v = convolve_kernel(|y| y[0].powi(4), &k3, 1.0, &[0.0]).unwrap();
        assert!((v - gl_moment(&k3, 4)).abs() < 1e-8 && v.abs() > 0.1);
    }

    #[test]
    fn product_kernel_reproduces_in_two_dimensions() {
        let k = build_superkernel(3).unwrap().product(2);
        let f = |y: &[f64]| y[0] * y[0] * y[1] + 3.0 * y[1].powi(3) - y[0];
        let x = [0.4, -1.2];
        let v = convolve_kernel(f, &k, 0.5, &x).unwrap();
        assert!((v - f(&x)).abs() < 1e-8, "{v} vs {}", f(&x));
    }

    #[test]
    fn half_line_indicator() {
        let k = build_superkernel(2).unwrap();
        let ind = |y: &[f64]| if y[0] >= 0.0 { 1.0 } else { 0.0 };
        let at0 = convolve_kernel(ind, &k, 0.5, &[0.0]).unwrap();
        // Even kernel of unit mass: exactly half the mass on each side.
        assert!((at0 - 0.5).abs() < 1e-10);
        for delta in [0.2, 0.05, 0.01] {
            let v = convolve_kernel(ind, &k, delta, &[0.5]).unwrap();
            assert!((v - 1.0).abs() < (-(0.5 / delta).powi(2) / 4.0).exp() + 1e-10, "{delta}: {v}");
        }
        assert!(convolve_kernel(ind, &k, 0.0, &[0.0]).is_err());
        assert!(convolve_kernel(ind, &k, 1.5, &[0.0]).is_err());
    }
}
