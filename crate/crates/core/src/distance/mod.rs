//! Distances between empirical laws: exact Wasserstein-1 on the line, its
//! sliced average in higher dimension, and total variation between
//! kernel-smoothed densities.

mod kernel;

pub use kernel::{build_superkernel, convolve_kernel, SuperKernel};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::quad::sphere_directions;

/// Weighted point cloud in `R^d`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmpiricalMeasure {
    dim: usize,
    points: Vec<f64>,
    weights: Option<Vec<f64>>,
}

impl EmpiricalMeasure {
    /// Uniform weights over the rows of `points` (`n x dim`, row-major).
    pub fn new(dim: usize, points: Vec<f64>) -> Result<Self> {
        if dim == 0 || points.is_empty() || points.len() % dim != 0 {
            return Err(Error::InvalidArgument(format!(
                "need a non-empty n x {dim} point array, got {} values",
                points.len()
            )));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("points must be finite".into()));
        }
        Ok(Self {
            dim,
            points,
            weights: None,
        })
    }

    /// Weights are normalised to sum to one.
    pub fn weighted(dim: usize, points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let mut m = Self::new(dim, points)?;
        if weights.len() != m.len() {
            return Err(Error::DimensionMismatch {
                expected: m.len(),
                got: weights.len(),
            });
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(*w >= 0.0)) || !(total > 0.0 && total.is_finite()) {
            return Err(Error::InvalidArgument(
                "weights must be non-negative with positive finite sum".into(),
            ));
        }
        m.weights = Some(weights.iter().map(|w| w / total).collect());
        Ok(m)
    }

    pub fn from_scalars(values: Vec<f64>) -> Result<Self> {
        Self::new(1, values)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weight(&self, i: usize) -> f64 {
        match &self.weights {
            Some(w) => w[i],
            None => 1.0 / self.len() as f64,
        }
    }

    /// Resample with replacement, uniform weights.
    pub fn bootstrap<R: Rng>(&self, rng: &mut R) -> Self {
        let n = self.len();
        let mut points = Vec::with_capacity(self.points.len());
        for _ in 0..n {
            let i = rng.gen_range(0..n);
            points.extend_from_slice(self.point(i));
        }
        Self {
            dim: self.dim,
            points,
            weights: None,
        }
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for i in 0..self.len() {
            let w = self.weight(i);
            for (mj, x) in m.iter_mut().zip(self.point(i)) {
                *mj += w * x;
            }
        }
        m
    }

    /// Per-coordinate variance.
    pub fn variance(&self) -> Vec<f64> {
        let mean = self.mean();
        let mut v = vec![0.0; self.dim];
        for i in 0..self.len() {
            let w = self.weight(i);
            for ((vj, x), m) in v.iter_mut().zip(self.point(i)).zip(&mean) {
                *vj += w * (x - m) * (x - m);
            }
        }
        v
    }

    fn project(&self, dir: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let values = (0..self.len())
            .map(|i| self.point(i).iter().zip(dir).map(|(a, b)| a * b).sum())
            .collect();
        let weights = (0..self.len()).map(|i| self.weight(i)).collect();
        (values, weights)
    }
}

/// `int_0^1 |F_a^{-1}(u) - F_b^{-1}(u)| du` for weighted samples on the line.
fn quantile_l1(mut a: Vec<(f64, f64)>, mut b: Vec<(f64, f64)>) -> f64 {
    a.sort_by(|x, y| x.0.total_cmp(&y.0));
    b.sort_by(|x, y| x.0.total_cmp(&y.0));
    let (mut i, mut j) = (0, 0);
    let (mut ra, mut rb) = (a[0].1, b[0].1);
    let mut total = 0.0;
    loop {
        let step = ra.min(rb);
        total += step * (a[i].0 - b[j].0).abs();
        ra -= step;
        rb -= step;
        if ra <= 1e-15 {
            i += 1;
            if i == a.len() {
                break;
            }
            ra += a[i].1;
        }
        if rb <= 1e-15 {
            j += 1;
            if j == b.len() {
                break;
            }
            rb += b[j].1;
        }
    }
    total
}

/// Exact Wasserstein-1 distance between one-dimensional empirical measures.
pub fn w1_1d(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Result<f64> {
    for m in [a, b] {
        if m.dim != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: m.dim,
            });
        }
    }
    if a.weights.is_none() && b.weights.is_none() && a.len() == b.len() {
        let mut x = a.points.clone();
        let mut y = b.points.clone();
        x.sort_by(f64::total_cmp);
        y.sort_by(f64::total_cmp);
        let s: f64 = x.iter().zip(&y).map(|(p, q)| (p - q).abs()).sum();
        return Ok(s / x.len() as f64);
    }
    let pa = (0..a.len()).map(|i| (a.points[i], a.weight(i))).collect();
    let pb = (0..b.len()).map(|i| (b.points[i], b.weight(i))).collect();
    Ok(quantile_l1(pa, pb))
}

/// Mean of one-dimensional W1 over `n_directions` quasi-random projections,
/// the low-discrepancy set rotated by a shift drawn from `seed`.
pub fn w1_sliced(
    a: &EmpiricalMeasure,
    b: &EmpiricalMeasure,
    n_directions: usize,
    seed: u64,
) -> Result<f64> {
    if a.dim != b.dim {
        return Err(Error::DimensionMismatch {
            expected: a.dim,
            got: b.dim,
        });
    }
    if n_directions == 0 {
        return Err(Error::InvalidArgument("need at least one direction".into()));
    }
    if a.dim == 1 {
        return w1_1d(a, b);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift: Vec<f64> = (0..a.dim + 1).map(|_| rng.gen()).collect();
    let dirs = sphere_directions(a.dim, n_directions, &shift);
    let mut total = 0.0;
    for dir in &dirs {
        let (va, wa) = a.project(dir);
        let (vb, wb) = b.project(dir);
        total += quantile_l1(
            va.into_iter().zip(wa).collect(),
            vb.into_iter().zip(wb).collect(),
        );
    }
    Ok(total / dirs.len() as f64)
}

/// W1 in dimension one, sliced W1 with `n_directions` otherwise.
pub fn w1(a: &EmpiricalMeasure, b: &EmpiricalMeasure, n_directions: usize, seed: u64) -> Result<f64> {
    if a.dim == 1 && b.dim == 1 {
        w1_1d(a, b)
    } else {
        w1_sliced(a, b, n_directions, seed)
    }
}

/// Silverman-type rule `sigma (4 / ((d + 2) n))^{1/(d+4)}`, with `sigma` the
/// mean coordinate standard deviation of the pooled samples.
pub fn default_bandwidth(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> f64 {
    let d = a.dim as f64;
    let n = (a.len() + b.len()) as f64 / 2.0;
    let sd = |m: &EmpiricalMeasure| {
        m.variance().iter().map(|v| v.sqrt()).sum::<f64>() / m.dim as f64
    };
    let sigma = 0.5 * (sd(a) + sd(b));
    let sigma = if sigma > 0.0 { sigma } else { 1.0 };
    sigma * (4.0 / ((d + 2.0) * n)).powf(1.0 / (d + 4.0))
}

/// Result of [`smoothed_tv`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SmoothedTv {
    pub value: f64,
    pub bandwidth: f64,
    pub resolution: usize,
}

struct DensityGrid {
    lo: Vec<f64>,
    step: Vec<f64>,
    n: usize,
    d: usize,
}

impl DensityGrid {
    fn size(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    /// Linear binning: each point spreads its weight over the 2^d
    /// surrounding nodes.
    fn bin(&self, m: &EmpiricalMeasure) -> Vec<f64> {
        let d = self.d;
        let mut out = vec![0.0; self.size()];
        let mut base = vec![0usize; d];
        let mut frac = vec![0.0; d];
        for p in 0..m.len() {
            let x = m.point(p);
            for j in 0..d {
                let g = ((x[j] - self.lo[j]) / self.step[j]).clamp(0.0, (self.n - 1) as f64 - 1e-9);
                base[j] = g.floor() as usize;
                frac[j] = g - base[j] as f64;
            }
            let w = m.weight(p);
            for corner in 0..(1usize << d) {
                let mut idx = 0;
                let mut cw = w;
                for j in 0..d {
                    let up = (corner >> j) & 1;
                    cw *= if up == 1 { frac[j] } else { 1.0 - frac[j] };
                    idx = idx * self.n + base[j] + up;
                }
                out[idx] += cw;
            }
        }
        out
    }

    /// Separable Gaussian smoothing of binned masses, axis by axis.
    fn smooth(&self, mut f: Vec<f64>, h: f64) -> Vec<f64> {
        let n = self.n;
        for axis in 0..self.d {
            let s = h / self.step[axis];
            let half = (5.0 * s).ceil() as usize;
            let taps: Vec<f64> = (0..=half)
                .map(|k| (-0.5 * (k as f64 / s).powi(2)).exp())
                .collect();
            let norm = taps[0] + 2.0 * taps[1..].iter().sum::<f64>();
            let stride = n.pow((self.d - 1 - axis) as u32);
            let mut out = vec![0.0; f.len()];
            for (idx, o) in out.iter_mut().enumerate() {
                let pos = (idx / stride) % n;
                let mut acc = taps[0] * f[idx];
                for (k, tap) in taps.iter().enumerate().skip(1) {
                    if pos >= k {
                        acc += tap * f[idx - k * stride];
                    }
                    if pos + k < n {
                        acc += tap * f[idx + k * stride];
                    }
                }
                *o = acc / norm;
            }
            f = out;
        }
        f
    }
}

/// Half the L1 distance between Gaussian kernel density estimates of `a`
/// and `b` on a common grid of `resolution` nodes per axis. The grid spans
/// both samples padded by five bandwidths, and each estimate is
/// renormalised to unit mass on it.
pub fn smoothed_tv(
    a: &EmpiricalMeasure,
    b: &EmpiricalMeasure,
    bandwidth: f64,
    resolution: usize,
) -> Result<SmoothedTv> {
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "bandwidth must be positive, got {bandwidth}"
        )));
    }
    if a.dim != b.dim {
        return Err(Error::DimensionMismatch {
            expected: a.dim,
            got: b.dim,
        });
    }
    let d = a.dim;
    if d > 3 {
        return Err(Error::InvalidArgument(format!(
            "smoothed total variation supports d <= 3, got {d}"
        )));
    }
    if resolution < 8 {
        return Err(Error::InvalidArgument("resolution must be at least 8".into()));
    }
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for m in [a, b] {
        for i in 0..m.len() {
            for (j, x) in m.point(i).iter().enumerate() {
                lo[j] = lo[j].min(*x);
                hi[j] = hi[j].max(*x);
            }
        }
    }
    for j in 0..d {
        lo[j] -= 5.0 * bandwidth;
        hi[j] += 5.0 * bandwidth;
    }
    let step: Vec<f64> = (0..d)
        .map(|j| (hi[j] - lo[j]) / (resolution - 1) as f64)
        .collect();
    let grid = DensityGrid {
        lo,
        step,
        n: resolution,
        d,
    };
    let fa = grid.smooth(grid.bin(a), bandwidth);
    let fb = grid.smooth(grid.bin(b), bandwidth);
    let (sa, sb): (f64, f64) = (fa.iter().sum(), fb.iter().sum());
    let value = 0.5
        * fa
            .iter()
            .zip(&fb)
            .map(|(p, q)| (p / sa - q / sb).abs())
            .sum::<f64>();
    Ok(SmoothedTv {
        value: value.clamp(0.0, 1.0),
        bandwidth,
        resolution,
    })
}
