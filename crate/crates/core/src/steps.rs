//! Decreasing step sequences, the cumulative time grid and the numerical
//! step-size lemmas used to control the accumulated one-step error.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A non-increasing sequence of positive time steps `gamma_1, gamma_2, ...`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StepSequence {
    /// `gamma_n = min(cap, scale / n)`.
    Harmonic { scale: f64, cap: Option<f64> },
    /// `gamma_n = min(cap, scale / n^exponent)` with `exponent` in `(0, 1]`.
    Power {
        scale: f64,
        exponent: f64,
        cap: Option<f64>,
    },
    /// A finite list of steps, used verbatim.
    Explicit { values: Vec<f64> },
    /// `gamma_n = step` for every `n`; used by the reference schemes.
    Constant { step: f64 },
}

impl StepSequence {
    pub fn harmonic(scale: f64) -> Result<Self> {
        Self::Harmonic { scale, cap: None }.validated()
    }

    pub fn power(scale: f64, exponent: f64) -> Result<Self> {
        Self::Power {
            scale,
            exponent,
            cap: None,
        }
        .validated()
    }

    pub fn explicit(values: Vec<f64>) -> Result<Self> {
        Self::Explicit { values }.validated()
    }

    pub fn constant(step: f64) -> Result<Self> {
        Self::Constant { step }.validated()
    }

    /// Returns the same sequence with steps capped at `cap`.
    pub fn with_cap(self, cap: f64) -> Result<Self> {
        match self {
            Self::Harmonic { scale, .. } => Self::Harmonic {
                scale,
                cap: Some(cap),
            },
            Self::Power {
                scale, exponent, ..
            } => Self::Power {
                scale,
                exponent,
                cap: Some(cap),
            },
            other => {
                return Err(Error::InvalidArgument(format!(
                    "a cap only applies to harmonic or power steps, not {other:?}"
                )))
            }
        }
        .validated()
    }

    /// Checks the constructor invariants: positive, finite and non-increasing.
    pub fn validated(self) -> Result<Self> {
        let positive = |v: f64, name: &str| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")))
            }
        };
        match &self {
            Self::Harmonic { scale, cap } => {
                positive(*scale, "step scale")?;
                if let Some(c) = cap {
                    positive(*c, "step cap")?;
                }
            }
            Self::Power {
                scale,
                exponent,
                cap,
            } => {
                positive(*scale, "step scale")?;
                if !(*exponent > 0.0 && *exponent <= 1.0) {
                    return Err(Error::InvalidArgument(format!(
                        "power exponent must lie in (0, 1], got {exponent}"
                    )));
                }
                if let Some(c) = cap {
                    positive(*c, "step cap")?;
                }
            }
            Self::Explicit { values } => {
                if values.is_empty() {
                    return Err(Error::InvalidArgument("explicit step list is empty".into()));
                }
                for v in values {
                    positive(*v, "explicit step")?;
                }
                if values.windows(2).any(|w| w[1] > w[0]) {
                    return Err(Error::InvalidArgument(
                        "explicit step list must be non-increasing".into(),
                    ));
                }
            }
            Self::Constant { step } => positive(*step, "constant step")?,
        }
        Ok(self)
    }

    /// `gamma_n`, for `n >= 1`.
    pub fn gamma(&self, n: usize) -> Result<f64> {
        if n == 0 {
            return Err(Error::Domain("step index starts at 1".into()));
        }
        let capped = |v: f64, cap: &Option<f64>| cap.map_or(v, |c| v.min(c));
        Ok(match self {
            Self::Harmonic { scale, cap } => capped(scale / n as f64, cap),
            Self::Power {
                scale,
                exponent,
                cap,
            } => capped(scale / (n as f64).powf(*exponent), cap),
            Self::Explicit { values } => *values.get(n - 1).ok_or(Error::OutOfRange {
                index: n,
                available: values.len(),
            })?,
            Self::Constant { step } => *step,
        })
    }

    /// Number of available steps; `None` for unbounded sequences.
    pub fn len(&self) -> Option<usize> {
        match self {
            Self::Explicit { values } => Some(values.len()),
            _ => None,
        }
    }

    /// Whether `sum gamma_n` diverges. Decided by kind, not numerically.
    pub fn diverges(&self) -> bool {
        !matches!(self, Self::Explicit { .. })
    }

    /// True when the steps actually decrease to zero.
    pub fn is_decreasing_kind(&self) -> bool {
        matches!(self, Self::Harmonic { .. } | Self::Power { .. })
    }
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.compensation += (self.sum - t) + v;
        } else {
            self.compensation += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

/// Cached cumulative times `Gamma_0 = 0`, `Gamma_n = gamma_1 + ... + gamma_n`.
///
/// The grid is pre-sized at construction; [`TimeGrid::extend_to`] grows it
/// through `&mut self`, so shared readers never observe a partial extension.
#[derive(Debug, Clone)]
pub struct TimeGrid {
    sequence: StepSequence,
    gammas: Vec<f64>,
    times: Vec<f64>,
    acc: CompensatedSum,
}

impl TimeGrid {
    /// Grid holding `Gamma_0 ..= Gamma_steps`.
    pub fn with_steps(sequence: StepSequence, steps: usize) -> Result<Self> {
        let mut grid = Self {
            sequence,
            gammas: Vec::with_capacity(steps),
            times: Vec::with_capacity(steps + 1),
            acc: CompensatedSum::default(),
        };
        grid.times.push(0.0);
        grid.push_steps(steps)?;
        Ok(grid)
    }

    /// Grid whose last cached time strictly exceeds `horizon`.
    pub fn covering(sequence: StepSequence, horizon: f64) -> Result<Self> {
        let mut grid = Self::with_steps(sequence, 0)?;
        grid.extend_to(horizon)?;
        Ok(grid)
    }

    fn push_steps(&mut self, count: usize) -> Result<()> {
        for _ in 0..count {
            let n = self.gammas.len() + 1;
            let g = self.sequence.gamma(n)?;
            self.acc.add(g);
            self.gammas.push(g);
            self.times.push(self.acc.value());
        }
        Ok(())
    }

    /// Extends the grid until `Gamma_last > t`.
    pub fn extend_to(&mut self, t: f64) -> Result<()> {
        if !t.is_finite() {
            return Err(Error::Domain(format!("cannot extend grid to {t}")));
        }
        while *self.times.last().expect("grid has Gamma_0") <= t {
            let chunk = (self.gammas.len() / 2).max(64);
            for _ in 0..chunk {
                self.push_steps(1)?;
                if *self.times.last().expect("nonempty") > t {
                    break;
                }
            }
        }
        Ok(())
    }

    pub fn sequence(&self) -> &StepSequence {
        &self.sequence
    }

    /// Number of cached steps.
    pub fn steps(&self) -> usize {
        self.gammas.len()
    }

    /// `gamma_n` for `1 <= n <= steps()`.
    pub fn gamma(&self, n: usize) -> f64 {
        self.gammas[n - 1]
    }

    /// `Gamma_n` for `0 <= n <= steps()`.
    pub fn time(&self, n: usize) -> f64 {
        self.times[n]
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Largest cached time.
    pub fn last_time(&self) -> f64 {
        *self.times.last().expect("grid has Gamma_0")
    }

    /// `(N(t), tau(t))`: the unique `i` with `Gamma_i <= t < Gamma_{i+1}`.
    pub fn locate(&self, t: f64) -> Result<(usize, f64)> {
        if t.is_nan() || t < 0.0 {
            return Err(Error::Domain(format!("time must be non-negative, got {t}")));
        }
        if t >= self.last_time() {
            return Err(Error::OutOfRange {
                index: self.steps() + 1,
                available: self.steps(),
            });
        }
        let i = self.times.partition_point(|&g| g <= t) - 1;
        Ok((i, self.times[i]))
    }

    /// Interval index `n` with `Gamma_n < t <= Gamma_{n+1}` (right-closed),
    /// the convention jump times are assigned with.
    pub fn interval_of_jump(&self, t: f64) -> Option<usize> {
        if t <= 0.0 || t > self.last_time() {
            return None;
        }
        Some(self.times.partition_point(|&g| g < t) - 1)
    }
}

/// Windowed supremum of `(gamma_n - gamma_{n+1}) / gamma_{n+1}^2` over
/// `n` in `[n_from, n_to]`, used in place of the lim sup.
pub fn omega_bar(seq: &StepSequence, n_from: usize, n_to: usize) -> Result<f64> {
    if n_from < 1 || n_to <= n_from {
        return Err(Error::InvalidArgument(format!(
            "omega_bar window must satisfy 1 <= from < to, got [{n_from}, {n_to}]"
        )));
    }
    let mut sup: f64 = 0.0;
    let mut current = seq.gamma(n_from)?;
    for n in n_from..=n_to {
        let next = seq.gamma(n + 1)?;
        sup = sup.max((current - next) / (next * next));
        current = next;
    }
    Ok(sup)
}

/// Default tail window `[n_max / 10, n_max]` for [`omega_bar`].
pub fn default_omega_window(n_max: usize) -> (usize, usize) {
    let from = (n_max / 10).max(1);
    let to = n_max.max(from + 1);
    (from, to)
}

/// Empirical check of the two step-size inequalities.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepLemmaReport {
    pub rho: f64,
    pub alpha: f64,
    pub n_max: usize,
    pub omega_bar: f64,
    pub omega_window: (usize, usize),
    /// `rho > alpha * omega_bar`.
    pub rate_condition: bool,
    /// `u_n = sum_{i<=n} gamma_i^{1+alpha} exp(-rho (Gamma_n - Gamma_i))`.
    pub u: Vec<f64>,
    /// `u_n / gamma_n^alpha`.
    pub ratios: Vec<f64>,
    pub max_ratio: f64,
    /// Max ratio over `[n_max/100, n_max/10]`, when that window is non-empty.
    pub mid_decade_max: Option<f64>,
    /// Max ratio over `[n_max/10, n_max]`.
    pub last_decade_max: Option<f64>,
    /// `last_decade_max <= 1.05 * mid_decade_max`.
    pub bounded: Option<bool>,
    /// Smallest `n_*` such that `gamma_i <= exp(2 omega (Gamma_n - Gamma_i)) gamma_n`
    /// for all `n_* <= i <= n <= n_max`.
    pub n_star: Option<usize>,
}

pub fn check_step_lemma(
    seq: &StepSequence,
    rho: f64,
    alpha: f64,
    n_max: usize,
) -> Result<StepLemmaReport> {
    if n_max < 1 {
        return Err(Error::InvalidArgument("n_max must be at least 1".into()));
    }
    if !(rho > 0.0 && alpha > 0.0) {
        return Err(Error::InvalidArgument("rho and alpha must be positive".into()));
    }
    let window = default_omega_window(n_max);
    let omega = match seq.len() {
        Some(len) if len <= window.1 => {
            if len < 2 {
                0.0
            } else {
                omega_bar(seq, window.0.min(len - 1), len - 1)?
            }
        }
        _ => omega_bar(seq, window.0, window.1)?,
    };
    let grid = TimeGrid::with_steps(seq.clone(), n_max)?;

    let mut u = Vec::with_capacity(n_max);
    let mut ratios = Vec::with_capacity(n_max);
    let mut prev = 0.0;
    for n in 1..=n_max {
        let g = grid.gamma(n);
        let un = prev * (-rho * g).exp() + g.powf(1.0 + alpha);
        u.push(un);
        ratios.push(un / g.powf(alpha));
        prev = un;
    }
    let max_over = |lo: usize, hi: usize| -> Option<f64> {
        let lo = lo.max(1);
        if hi < lo || hi > n_max {
            return None;
        }
        ratios[lo - 1..hi].iter().copied().reduce(f64::max)
    };
    let mid = if n_max >= 100 {
        max_over(n_max / 100, n_max / 10)
    } else {
        None
    };
    let last = if n_max >= 10 {
        max_over(n_max / 10, n_max)
    } else {
        None
    };
    let bounded = match (mid, last) {
        (Some(m), Some(l)) => Some(l <= 1.05 * m),
        _ => None,
    };

    // gamma_i <= e^{2w(G_n - G_i)} gamma_n  <=>  g(i) <= g(n) with
    // g(n) = ln gamma_n + 2 w Gamma_n.
    let g: Vec<f64> = (1..=n_max)
        .map(|n| grid.gamma(n).ln() + 2.0 * omega * grid.time(n))
        .collect();
    let mut suffix_min = vec![f64::INFINITY; n_max + 1];
    for n in (0..n_max).rev() {
        suffix_min[n] = suffix_min[n + 1].min(g[n]);
    }
    let mut n_star = Some(1);
    for i in (0..n_max).rev() {
        let tol = 1e-12 * g[i].abs().max(1.0);
        if g[i] > suffix_min[i] + tol {
            n_star = if i + 2 <= n_max { Some(i + 2) } else { None };
            break;
        }
    }

    Ok(StepLemmaReport {
        rho,
        alpha,
        n_max,
        omega_bar: omega,
        omega_window: window,
        rate_condition: rho > alpha * omega,
        max_ratio: ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        u,
        ratios,
        mid_decade_max: mid,
        last_decade_max: last,
        bounded,
        n_star,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn gamma_examples() {
        assert_eq!(StepSequence::harmonic(1.0).unwrap().gamma(3).unwrap(), 1.0 / 3.0);
        assert_eq!(StepSequence::power(1.0, 0.5).unwrap().gamma(4).unwrap(), 0.5);
        let e = StepSequence::explicit(vec![0.5, 0.25]).unwrap();
        assert_eq!(e.gamma(2).unwrap(), 0.25);
        assert!(matches!(e.gamma(3), Err(Error::OutOfRange { index: 3, available: 2 })));
        assert!(StepSequence::harmonic(1.0).unwrap().gamma(0).is_err());
    }

    #[test]
    fn cap_limits_early_steps() {
        let s = StepSequence::harmonic(8.0).unwrap().with_cap(0.25).unwrap();
        assert_eq!(s.gamma(1).unwrap(), 0.25);
        assert_eq!(s.gamma(64).unwrap(), 0.125);
    }

    #[test]
    fn rejects_bad_sequences() {
        assert!(StepSequence::explicit(vec![0.1, 0.2]).is_err());
        assert!(StepSequence::explicit(vec![]).is_err());
        assert!(StepSequence::power(1.0, 1.5).is_err());
        assert!(StepSequence::harmonic(-1.0).is_err());
        assert!(StepSequence::constant(0.1).unwrap().with_cap(0.05).is_err());
    }

    #[test]
    fn locate_examples() {
        let grid = TimeGrid::with_steps(StepSequence::harmonic(1.0).unwrap(), 10).unwrap();
        assert_eq!(grid.locate(1.4).unwrap(), (1, 1.0));
        assert_eq!(grid.locate(0.0).unwrap(), (0, 0.0));
        let g3 = grid.time(3);
        assert_eq!(grid.locate(g3).unwrap(), (3, g3));
        assert!(matches!(grid.locate(-0.1), Err(Error::Domain(_))));
        assert!(grid.locate(100.0).is_err());
    }

    #[test]
    fn jump_interval_is_right_closed() {
        let grid = TimeGrid::with_steps(StepSequence::harmonic(1.0).unwrap(), 10).unwrap();
        assert_eq!(grid.interval_of_jump(1.0), Some(0));
        assert_eq!(grid.interval_of_jump(1.2), Some(1));
        assert_eq!(grid.interval_of_jump(0.0), None);
    }

    #[test]
    fn covering_grid_exceeds_horizon() {
        let grid = TimeGrid::covering(StepSequence::harmonic(1.0).unwrap(), 4.0).unwrap();
        assert!(grid.last_time() > 4.0);
        assert!(grid.time(grid.steps() - 1) <= 4.0);
        let err = TimeGrid::covering(StepSequence::explicit(vec![0.5, 0.25]).unwrap(), 2.0);
        assert!(err.is_err());
    }

    #[test]
    fn prefix_sums_stay_accurate() {
        // 10^6 constant steps of 0.1 accumulate to 10^5 within a few ulps.
        let grid = TimeGrid::with_steps(StepSequence::constant(0.1).unwrap(), 1_000_000).unwrap();
        let exact = 100_000.0_f64;
        assert!((grid.last_time() - exact).abs() <= 4.0 * f64::EPSILON * exact);
    }

    #[test]
    fn omega_bar_examples() {
        let h = StepSequence::harmonic(1.0).unwrap();
        let w = omega_bar(&h, 100, 10_000).unwrap();
        assert!((1.0..=1.03).contains(&w), "{w}");
        let c = StepSequence::explicit(vec![0.1; 20]).unwrap();
        assert_eq!(omega_bar(&c, 1, 18).unwrap(), 0.0);
        // Power a = 1/2: brute-force quotient sequence, evaluated independently.
        let p = StepSequence::power(1.0, 0.5).unwrap();
        let brute = (1000..=100_000usize)
            .map(|n| {
                let a = 1.0 / (n as f64).sqrt();
                let b = 1.0 / ((n + 1) as f64).sqrt();
                (a - b) / (b * b)
            })
            .fold(0.0_f64, f64::max);
        let got = omega_bar(&p, 1000, 100_000).unwrap();
        assert!((got - brute).abs() <= 1e-12 * brute);
        assert!(omega_bar(&h, 5, 5).is_err());
    }

    #[test]
    fn step_lemma_single_term() {
        let s = StepSequence::harmonic(0.5).unwrap();
        let r = check_step_lemma(&s, 1.5, 1.0, 1).unwrap();
        assert_eq!(r.u, vec![0.25]);
        assert_eq!(r.ratios, vec![0.5]);
    }

    #[test]
    fn step_lemma_matches_direct_summation() {
        let s = StepSequence::harmonic(1.0).unwrap();
        let n_max = 300;
        let r = check_step_lemma(&s, 1.5, 1.0, n_max).unwrap();
        let gam: Vec<f64> = (1..=n_max).map(|n| 1.0 / n as f64).collect();
        let mut big_gamma = vec![0.0; n_max + 1];
        for n in 1..=n_max {
            big_gamma[n] = big_gamma[n - 1] + gam[n - 1];
        }
        for n in [1usize, 7, 50, 300] {
            let direct: f64 = (1..=n)
                .map(|i| gam[i - 1].powi(2) * (-1.5 * (big_gamma[n] - big_gamma[i])).exp())
                .sum();
            assert!((r.u[n - 1] - direct).abs() <= 1e-13 * direct, "n = {n}");
        }
        assert!(r.max_ratio < 10.0);
    }

    #[test]
    fn step_lemma_constant_steps_geometric_bound() {
        let gamma = 0.1;
        let s = StepSequence::explicit(vec![gamma; 500]).unwrap();
        let rho = 0.7;
        let r = check_step_lemma(&s, rho, 1.0, 500).unwrap();
        // Geometric series: u_n <= gamma^2 / (1 - e^{-rho gamma}).
        let bound = gamma * gamma / (1.0 - (-rho * gamma).exp()) / gamma;
        assert!(r.max_ratio <= bound * (1.0 + 1e-12));
        assert!(r.max_ratio > 0.99 * bound);
    }

    proptest! {
        #[test]
        fn monotone_and_grid_consistent(scale in 0.05f64..4.0, exponent in 0.1f64..1.0,
                                        n in 1usize..400, frac in 0.0f64..1.0) {
            let s = StepSequence::power(scale, exponent).unwrap();
            prop_assert!(s.gamma(n + 1).unwrap() <= s.gamma(n).unwrap());
            let grid = TimeGrid::with_steps(s, 450).unwrap();
            let eps = frac * grid.gamma(n + 1);
            let t = grid.time(n) + eps;
            if t < grid.time(n + 1) {
                prop_assert_eq!(grid.locate(t).unwrap(), (n, grid.time(n)));
            }
            prop_assert!((grid.time(n) - grid.time(n - 1) - grid.gamma(n)).abs()
                <= 4.0 * f64::EPSILON * grid.time(n));
        }
    }
}
