//! One-dimensional adaptive quadrature, Gauss-Legendre rules and the
//! low-discrepancy direction sets used for angular averages.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::PI;

/// A quadrature value with its estimated absolute error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

impl Estimate {
    pub const ZERO: Estimate = Estimate {
        value: 0.0,
        error: 0.0,
    };

    pub fn add(self, other: Estimate) -> Estimate {
        Estimate {
            value: self.value + other.value,
            error: self.error + other.error,
        }
    }

    pub fn scale(self, s: f64) -> Estimate {
        Estimate {
            value: self.value * s,
            error: self.error * s.abs(),
        }
    }
}

/// Stopping rule for [`integrate`]: stop once `error <= max(abs, rel * |value|)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
    pub max_intervals: usize,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            abs: 1e-10,
            rel: 1e-10,
            max_intervals: 2000,
        }
    }
}

impl Tolerance {
    fn met(&self, e: &Estimate) -> bool {
        e.error <= self.abs.max(self.rel * e.value.abs())
    }
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
// Gauss weights for the nodes XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Single 15-point Gauss-Kronrod panel with the QUADPACK error heuristic.
fn kronrod15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Estimate {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut resk = fc * WGK[7];
    let mut resg = fc * WG[3];
    let mut resabs = resk.abs();
    let mut fv1 = [0.0; 7];
    let mut fv2 = [0.0; 7];
    for j in 0..7 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        fv1[j] = f1;
        fv2[j] = f2;
        resk += WGK[j] * (f1 + f2);
        resabs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            resg += WG[j / 2] * (f1 + f2);
        }
    }
    let reskh = 0.5 * resk;
    let mut resasc = WGK[7] * (fc - reskh).abs();
    for j in 0..7 {
        resasc += WGK[j] * ((fv1[j] - reskh).abs() + (fv2[j] - reskh).abs());
    }
    let value = resk * half;
    resabs *= half.abs();
    resasc *= half.abs();
    let mut error = ((resk - resg) * half).abs();
    if resasc != 0.0 && error != 0.0 {
        error = resasc * (200.0 * error / resasc).powf(1.5).min(1.0);
    }
    if resabs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        error = error.max(50.0 * f64::EPSILON * resabs);
    }
    Estimate { value, error }
}

struct Panel {
    a: f64,
    b: f64,
    est: Estimate,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.est.error == other.est.error
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.est.error.total_cmp(&other.est.error)
    }
}

fn total(heap: &BinaryHeap<Panel>) -> Estimate {
    let mut value = 0.0;
    let mut comp = 0.0;
    let mut error = 0.0;
    for p in heap.iter() {
        let t = value + p.est.value;
        if f64::abs(value) >= p.est.value.abs() {
            comp += (value - t) + p.est.value;
        } else {
            comp += (p.est.value - t) + value;
        }
        value = t;
        error += p.est.error;
    }
    Estimate {
        value: value + comp,
        error,
    }
}

/// Adaptive Gauss-Kronrod integration of `f` over `[a, b]`.
///
/// On failure to meet `tol` the best partial estimate is returned in `Err`.
pub fn integrate<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    tol: Tolerance,
) -> std::result::Result<Estimate, Estimate> {
    if a == b {
        return Ok(Estimate::ZERO);
    }
    let first = kronrod15(&f, a, b);
    if !first.value.is_finite() {
        return Err(first);
    }
    let mut heap = BinaryHeap::new();
    heap.push(Panel { a, b, est: first });
    let mut running = first;
    while !tol.met(&running) {
        if heap.len() >= tol.max_intervals {
            return Err(total(&heap));
        }
        let worst = heap.pop().expect("heap is non-empty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a.min(worst.b) || mid >= worst.a.max(worst.b) {
            heap.push(worst);
            return Err(total(&heap));
        }
        let left = kronrod15(&f, worst.a, mid);
        let right = kronrod15(&f, mid, worst.b);
        if !(left.value.is_finite() && right.value.is_finite()) {
            heap.push(worst);
            return Err(total(&heap));
        }
        running.value += left.value + right.value - worst.est.value;
        running.error += left.error + right.error - worst.est.error;
        heap.push(Panel {
            a: worst.a,
            b: mid,
            est: left,
        });
        heap.push(Panel {
            a: mid,
            b: worst.b,
            est: right,
        });
        if heap.len() % 64 == 0 {
            running = total(&heap);
        }
    }
    Ok(total(&heap))
}

/// Integral of `f` over `[a, inf)` through the map `x = a + (t / (1 - t))^3`.
///
/// The cubic map keeps the transformed integrand bounded at `t = 1` for
/// tails decaying faster than `1 / x`, which covers the power-law envelopes.
pub fn integrate_to_infinity<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    tol: Tolerance,
) -> std::result::Result<Estimate, Estimate> {
    integrate(
        |t| {
            let s = 1.0 - t;
            let u = t / s;
            let v = f(a + u * u * u);
            if v == 0.0 {
                0.0
            } else {
                v * 3.0 * u * u / (s * s)
            }
        },
        0.0,
        1.0,
        tol,
    )
}

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 0 { 1.0 } else { p1 };
            let pm1 = if n <= 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * p - pm1) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Surface measure of the unit sphere in `R^d` (2 points for `d = 1`).
pub fn sphere_area(d: usize) -> f64 {
    match d {
        0 => 0.0,
        1 => 2.0,
        2 => 2.0 * PI,
        _ => 2.0 * PI / (d - 2) as f64 * sphere_area(d - 2),
    }
}

/// Volume of the unit ball in `R^d`.
pub fn ball_volume(d: usize) -> f64 {
    sphere_area(d) / d as f64
}

/// Additive recurrence constants of the `dim`-dimensional Roberts sequence.
pub fn roberts_alphas(dim: usize) -> Vec<f64> {
    // Unique positive root of x^(dim+1) = x + 1.
    let mut phi = 2.0_f64;
    for _ in 0..60 {
        phi = (1.0 + phi).powf(1.0 / (dim as f64 + 1.0));
    }
    (1..=dim).map(|j| phi.powi(-(j as i32)).fract()).collect()
}

/// `n` quasi-random unit vectors in `R^d`, Cranley-Patterson shifted by `shift`.
///
/// Uniform points are mapped through Box-Muller and normalized.
pub fn sphere_directions(d: usize, n: usize, shift: &[f64]) -> Vec<Vec<f64>> {
    if d == 1 {
        return (0..n)
            .map(|i| vec![if i % 2 == 0 { 1.0 } else { -1.0 }])
            .collect();
    }
    let dims = d + d % 2;
    let alphas = roberts_alphas(dims);
    let mut out = Vec::with_capacity(n);
    let mut u = vec![0.0; dims];
    for i in 0..n {
        for (j, uj) in u.iter_mut().enumerate() {
            let s = shift.get(j).copied().unwrap_or(0.5);
            *uj = (s + (i as f64 + 1.0) * alphas[j]).fract();
        }
        let mut v = Vec::with_capacity(dims);
        for pair in u.chunks(2) {
            let r = (-2.0 * (1.0 - pair[0]).max(f64::MIN_POSITIVE).ln()).sqrt();
            let a = 2.0 * PI * pair[1];
            v.push(r * a.cos());
            v.push(r * a.sin());
        }
        v.truncate(d);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
            out.push(v);
        } else {
            let mut e = vec![0.0; d];
            e[0] = 1.0;
            out.push(e);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tight() -> Tolerance {
        Tolerance {
            abs: 1e-14,
            rel: 1e-13,
            max_intervals: 2000,
        }
    }

    #[test]
    fn polynomial_exact() {
        let e = integrate(|x| x.powi(5) - 3.0 * x * x + 1.0, -1.0, 2.0, tight()).unwrap();
        let exact = (64.0 - 1.0) / 6.0 - (8.0 + 1.0) + 3.0;
        assert!((e.value - exact).abs() < 1e-13);
    }

    #[test]
    fn exponential_tail() {
        let e = integrate_to_infinity(|x| (-x).exp(), 3.0, tight()).unwrap();
        assert!((e.value - (-3.0f64).exp()).abs() < 1e-15);
        let e = integrate_to_infinity(|x| x.powi(-3), 2.0, tight()).unwrap();
        assert!((e.value - 0.125).abs() < 1e-13);
    }

    #[test]
    fn divergent_tail_fails() {
        assert!(integrate_to_infinity(|x| x.powf(-0.75), 1.0, Tolerance::default()).is_err());
        assert!(integrate_to_infinity(|x| 1.0 / x, 1.0, Tolerance::default()).is_err());
    }

    #[test]
    fn integrable_endpoint_singularity() {
        let e = integrate(|x| x.powf(-0.5), 0.0, 1.0, Tolerance::default()).unwrap();
        assert!((e.value - 2.0).abs() < 1e-8);
    }

    #[test]
    fn legendre_rule_integrates_high_degree() {
        let (x, w) = gauss_legendre(12);
        let s: f64 = w.iter().sum();
        assert!((s - 2.0).abs() < 1e-14);
        let m: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(22)).sum();
        assert!((m - 2.0 / 23.0).abs() < 1e-14);
        let (x, _) = gauss_legendre(5);
        assert!(x[2].abs() < 1e-16);
    }

    #[test]
    fn sphere_constants() {
        assert_eq!(sphere_area(1), 2.0);
        assert!((sphere_area(3) - 4.0 * PI).abs() < 1e-14);
        assert!((ball_volume(2) - PI).abs() < 1e-14);
        assert!((ball_volume(4) - PI * PI / 2.0).abs() < 1e-13);
    }

    #[test]
    fn directions_are_unit_and_balanced() {
        let dirs = sphere_directions(3, 4096, &[0.1, 0.2, 0.3, 0.4]);
        let mut mean = [0.0; 3];
        for v in &dirs {
            let n: f64 = v.iter().map(|x| x * x).sum();
            assert!((n - 1.0).abs() < 1e-12);
            for j in 0..3 {
                mean[j] += v[j] / dirs.len() as f64;
            }
        }
        assert!(mean.iter().all(|m| m.abs() < 0.02), "{mean:?}");
    }
}
