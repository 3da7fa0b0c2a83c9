//! Precomputed tail integrals of the envelope and floor, and the truncation
//! rule `M(gamma) = min { m : epsilon_m <= gamma^2 }`.

use serde::Serialize;

use super::JumpModel;
use crate::error::{Error, Result};

const MAX_LEVEL: usize = 1 << 24;

/// Unit-shell integrals over `j < |z| <= j + 1` for `j < m_max`, plus the
/// semi-infinite remainders beyond `m_max`. Tails are summed from the
/// outside in, so they are non-increasing in `m` by construction.
#[derive(Debug, Clone, Serialize)]
pub struct TailTable {
    m_max: usize,
    /// `int_{|z| > m} c_bar^2 dmu` for `m = 0..=m_max`.
    tail_sq: Vec<f64>,
    /// `int_{|z| > m} c_bar dmu`.
    tail_lin: Vec<f64>,
    /// `int_{|z| > m} c_floor dmu`.
    tail_floor: Vec<f64>,
    /// `mu(I_k)` at index `k - 1`.
    masses: Vec<f64>,
    /// Largest estimated quadrature error over all pieces.
    pub max_quadrature_error: f64,
    pub scheme: &'static str,
}

struct Shell {
    sq: f64,
    lin: f64,
    floor: f64,
    mass: f64,
    err: f64,
}

fn shell(model: &JumpModel, j: usize) -> Result<Shell> {
    let lo = j as f64;
    let hi = Some(lo + 1.0);
    let env = model.envelope();
    let floor = model.floor();
    let radial = env.is_radial() && floor.is_radial();
    let sq = model.integrate_radial_range(
        |z| env.eval(z).powi(2),
        radial,
        lo,
        hi,
        "c_bar^2 on a shell",
    )?;
    let lin = model.integrate_radial_range(|z| env.eval(z), radial, lo, hi, "c_bar on a shell")?;
    let fl = if floor.is_zero() {
        crate::quad::Estimate::ZERO
    } else {
        model.integrate_radial_range(|z| floor.eval(z), radial, lo, hi, "c_floor on a shell")?
    };
    let mass = model.integrate_radial_range(|_| 1.0, true, lo, hi, "mu on a shell")?;
    Ok(Shell {
        sq: sq.value.max(0.0),
        lin: lin.value.max(0.0),
        floor: fl.value.max(0.0),
        mass: mass.value.max(0.0),
        err: sq.error.max(lin.error).max(fl.error).max(mass.error),
    })
}

impl TailTable {
    /// Table covering `m = 0..=m_max`.
    pub fn build(model: &JumpModel, m_max: usize) -> Result<Self> {
        let m_max = m_max.max(1);
        let shells = (0..m_max)
            .map(|j| shell(model, j))
            .collect::<Result<Vec<_>>>()?;
        let env = model.envelope();
        let floor = model.floor();
        let radial = env.is_radial() && floor.is_radial();
        let lo = m_max as f64;
        let beyond_sq = model.integrate_radial_range(
            |z| env.eval(z).powi(2),
            radial,
            lo,
            None,
            "c_bar^2 over the tail",
        )?;
        let beyond_lin =
            model.integrate_radial_range(|z| env.eval(z), radial, lo, None, "c_bar over the tail")?;
        let beyond_floor = if floor.is_zero() {
            crate::quad::Estimate::ZERO
        } else {
            model.integrate_radial_range(
                |z| floor.eval(z),
                radial,
                lo,
                None,
                "c_floor over the tail",
            )?
        };

        let mut tail_sq = vec![0.0; m_max + 1];
        let mut tail_lin = vec![0.0; m_max + 1];
        let mut tail_floor = vec![0.0; m_max + 1];
        tail_sq[m_max] = beyond_sq.value.max(0.0);
        tail_lin[m_max] = beyond_lin.value.max(0.0);
        tail_floor[m_max] = beyond_floor.value.max(0.0);
        let mut max_err = beyond_sq
            .error
            .max(beyond_lin.error)
            .max(beyond_floor.error);
        for j in (0..m_max).rev() {
            tail_sq[j] = tail_sq[j + 1] + shells[j].sq;
            tail_lin[j] = tail_lin[j + 1] + shells[j].lin;
            tail_floor[j] = tail_floor[j + 1] + shells[j].floor;
            max_err = max_err.max(shells[j].err);
        }
        Ok(Self {
            m_max,
            tail_sq,
            tail_lin,
            tail_floor,
            masses: shells.iter().map(|s| s.mass).collect(),
            max_quadrature_error: max_err,
            scheme: if radial && model.density().is_radial() {
                "radial gauss-kronrod 7/15 on unit shells"
            } else {
                "angular product rule x gauss-kronrod 7/15 on unit shells"
            },
        })
    }

    pub fn m_max(&self) -> usize {
        self.m_max
    }

    fn check(&self, m: usize) -> Result<()> {
        if m > self.m_max {
            Err(Error::NeedsExtension {
                m_max: self.m_max,
                epsilon: self.epsilon_unchecked(self.m_max),
                threshold: f64::NAN,
            })
        } else {
            Ok(())
        }
    }

    fn epsilon_unchecked(&self, m: usize) -> f64 {
        self.tail_sq[m] + self.tail_lin[m] * self.tail_lin[m]
    }

    pub fn epsilon(&self, m: usize) -> Result<f64> {
        self.check(m)?;
        Ok(self.epsilon_unchecked(m))
    }

    pub fn tail_square(&self, m: usize) -> Result<f64> {
        self.check(m)?;
        Ok(self.tail_sq[m])
    }

    pub fn tail_linear(&self, m: usize) -> Result<f64> {
        self.check(m)?;
        Ok(self.tail_lin[m])
    }

    /// `int_{|z| >= m} c_floor dmu`.
    pub fn tail_floor(&self, m: usize) -> Result<f64> {
        self.check(m)?;
        Ok(self.tail_floor[m])
    }

    /// `mu(I_k)` for `1 <= k <= m_max`.
    pub fn annulus_mass(&self, k: usize) -> Result<f64> {
        if k == 0 {
            return Err(Error::Domain("annulus index starts at 1".into()));
        }
        self.check(k)?;
        Ok(self.masses[k - 1])
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn theta(&self, b_bar: f64) -> Result<f64> {
        Ok(2.0 * b_bar - 2.0 * self.tail_lin[0] - self.tail_sq[0])
    }

    /// `M(gamma)`, or a needs-extension error when `epsilon_{m_max} > gamma^2`.
    pub fn truncation_level(&self, gamma: f64) -> Result<usize> {
        if !(gamma > 0.0) {
            return Err(Error::Domain(format!("gamma must be positive, got {gamma}")));
        }
        let threshold = gamma * gamma;
        // epsilon is non-increasing, so bisect for the first m at or below
        // the threshold.
        let (mut lo, mut hi) = (1, self.m_max + 1);
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            if self.epsilon_unchecked(mid) > threshold {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        if lo > self.m_max {
            return Err(Error::NeedsExtension {
                m_max: self.m_max,
                epsilon: self.epsilon_unchecked(self.m_max),
                threshold,
            });
        }
        Ok(lo)
    }

    /// Rebuilds with doubled `m_max` until `M(gamma)` is reachable.
    pub fn ensure_level(&mut self, model: &JumpModel, gamma: f64) -> Result<usize> {
        loop {
            match self.truncation_level(gamma) {
                Err(Error::NeedsExtension { .. }) if self.m_max < MAX_LEVEL => {
                    *self = Self::build(model, self.m_max * 2)?;
                }
                other => return other,
            }
        }
    }

    /// Table large enough for `M(gamma_min)`.
    pub fn for_gamma(model: &JumpModel, gamma_min: f64) -> Result<Self> {
        let mut table = Self::build(model, 16)?;
        table.ensure_level(model, gamma_min)?;
        Ok(table)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Preset;
    use std::collections::BTreeMap;

    fn preset(s: &str) -> Preset {
        Preset::parse(s, &BTreeMap::new()).unwrap()
    }

    #[test]
    fn matches_exponential_closed_form() {
        let p = preset("additive-linear(1, 0.5, 2, 1)");
        let t = TailTable::build(&p.build().unwrap(), 12).unwrap();
        for m in 0..=12 {
            let exact = p.closed_form_epsilon(m).unwrap();
            let got = t.epsilon(m).unwrap();
            assert!((got - exact).abs() <= 1e-10 * exact, "m={m}: {got} vs {exact}");
        }
    }

    #[test]
    fn tails_are_non_increasing() {
        let t = TailTable::build(&preset("poly-decay(1, 1, 4)").build().unwrap(), 40).unwrap();
        for m in 1..=40 {
            assert!(t.epsilon(m).unwrap() <= t.epsilon(m - 1).unwrap());
            assert!(t.tail_floor(m).unwrap() <= t.tail_floor(m - 1).unwrap());
        }
        assert!(t.masses().iter().all(|&m| (m - 2.0).abs() < 1e-12));
    }

    #[test]
    fn truncation_level_is_minimal() {
        let model = preset("exp-decay(1, 1, 1, 1)").build().unwrap();
        let mut t = TailTable::build(&model, 2).unwrap();
        for gamma in [0.5, 0.1, 0.01, 1e-4] {
            let m = t.ensure_level(&model, gamma).unwrap();
            assert!(t.epsilon(m).unwrap() <= gamma * gamma);
            assert!(m == 1 || t.epsilon(m - 1).unwrap() > gamma * gamma);
        }
        assert!(t.truncation_level(0.0).is_err());
    }

    #[test]
    fn short_table_asks_for_extension() {
        let model = preset("poly-decay(1, 1, 4)").build().unwrap();
        let t = TailTable::build(&model, 2).unwrap();
        assert!(matches!(t.truncation_level(1e-3), Err(Error::NeedsExtension { .. })));
        assert!(t.epsilon(3).is_err());
    }
}
