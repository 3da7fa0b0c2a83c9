//! Jump-SDE model description: drift, jump coefficient, envelopes, Lévy
//! density, and the radial integrals built on them.

pub mod hypotheses;
pub mod presets;
pub mod tail;

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::quad::{self, Estimate, Tolerance};
use crate::steps::TimeGrid;

pub use presets::Preset;
pub use tail::TailTable;

/// `x -> out`, where `out` has length `d` (a vector field) or `d * d`
/// (a row-major Jacobian, `out[i * d + j] = d f_i / d x_j`).
pub type Field = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
/// `(z, x) -> out`, with the same output conventions as [`Field`].
pub type JumpField = Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;

/// A non-negative function of the jump mark.
#[derive(Clone)]
pub enum Profile {
    Zero,
    /// Depends on `|z|` only.
    Radial(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
    General(Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>),
}

impl Profile {
    pub fn radial(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self::Radial(Arc::new(f))
    }

    pub fn general(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self::General(Arc::new(f))
    }

    pub fn constant(c: f64) -> Self {
        if c == 0.0 {
            Self::Zero
        } else {
            Self::radial(move |_| c)
        }
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        match self {
            Self::Zero => 0.0,
            Self::Radial(f) => f(norm(z)),
            Self::General(f) => f(z),
        }
    }

    pub fn is_radial(&self) -> bool {
        !matches!(self, Self::General(_))
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Self::Zero)
    }
}

impl fmt::Debug for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Zero => "Zero",
            Self::Radial(_) => "Radial(..)",
            Self::General(_) => "General(..)",
        })
    }
}

pub fn norm(z: &[f64]) -> f64 {
    if z.len() == 1 {
        z[0].abs()
    } else {
        z.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// A jump SDE `dX = b(X) dt + int c(z, X_-) N(dz, dt)` with `N` a Poisson
/// measure of intensity `h(z) dz dt`.
#[derive(Clone)]
pub struct JumpModel {
    name: String,
    dim: usize,
    b_bar: f64,
    drift: Field,
    drift_jacobian: Option<Field>,
    jump: JumpField,
    jump_grad_x: Option<JumpField>,
    jump_grad_z: Option<JumpField>,
    envelope: Profile,
    floor: Profile,
    density: Profile,
    tolerance: Tolerance,
}

impl fmt::Debug for JumpModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("JumpModel")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("b_bar", &self.b_bar)
            .field("envelope", &self.envelope)
            .field("floor", &self.floor)
            .field("density", &self.density)
            .finish_non_exhaustive()
    }
}

/// Builder for [`JumpModel`]. Drift and jump default to zero.
pub struct ModelBuilder {
    model: JumpModel,
}

impl ModelBuilder {
    pub fn drift(mut self, f: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        self.model.drift = Arc::new(f);
        self
    }

    pub fn drift_jacobian(
        mut self,
        f: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.model.drift_jacobian = Some(Arc::new(f));
        self
    }

    /// Linear drift `b(x) = A x` with its exact Jacobian; `a` is row-major.
    pub fn linear_drift(self, a: Vec<f64>) -> Self {
        let d = self.model.dim;
        let a2 = a.clone();
        self.drift(move |x, out| {
            for i in 0..d {
                out[i] = (0..d).map(|j| a[i * d + j] * x[j]).sum();
            }
        })
        .drift_jacobian(move |_, out| out.copy_from_slice(&a2))
    }

    pub fn jump(
        mut self,
        f: impl Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.model.jump = Arc::new(f);
        self
    }

    pub fn jump_grad_x(
        mut self,
        f: impl Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.model.jump_grad_x = Some(Arc::new(f));
        self
    }

    pub fn jump_grad_z(
        mut self,
        f: impl Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.model.jump_grad_z = Some(Arc::new(f));
        self
    }

    pub fn envelope(mut self, p: Profile) -> Self {
        self.model.envelope = p;
        self
    }

    pub fn floor(mut self, p: Profile) -> Self {
        self.model.floor = p;
        self
    }

    pub fn density(mut self, p: Profile) -> Self {
        self.model.density = p;
        self
    }

    pub fn b_bar(mut self, b: f64) -> Self {
        self.model.b_bar = b;
        self
    }

    pub fn tolerance(mut self, tol: Tolerance) -> Self {
        self.model.tolerance = tol;
        self
    }

    pub fn build(self) -> Result<JumpModel> {
        let m = self.model;
        if m.dim == 0 {
            return Err(Error::InvalidArgument("dimension must be at least 1".into()));
        }
        if !m.b_bar.is_finite() {
            return Err(Error::InvalidArgument("b_bar must be finite".into()));
        }
        Ok(m)
    }
}

impl JumpModel {
    /// Starts a model of dimension `dim` with zero drift, zero jumps and
    /// Lebesgue intensity.
    pub fn builder(name: impl Into<String>, dim: usize) -> ModelBuilder {
        ModelBuilder {
            model: JumpModel {
                name: name.into(),
                dim,
                b_bar: 0.0,
                drift: Arc::new(|_, out: &mut [f64]| out.fill(0.0)),
                drift_jacobian: None,
                jump: Arc::new(|_, _, out: &mut [f64]| out.fill(0.0)),
                jump_grad_x: None,
                jump_grad_z: None,
                envelope: Profile::Zero,
                floor: Profile::Zero,
                density: Profile::constant(1.0),
                tolerance: Tolerance {
                    abs: 1e-200,
                    rel: 1e-12,
                    max_intervals: 600,
                },
            },
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Dissipativity constant of the drift.
    pub fn b_bar(&self) -> f64 {
        self.b_bar
    }

    pub fn tolerance(&self) -> Tolerance {
        self.tolerance
    }

    pub fn drift(&self, x: &[f64], out: &mut [f64]) {
        (self.drift)(x, out)
    }

    pub fn jump(&self, z: &[f64], x: &[f64], out: &mut [f64]) {
        (self.jump)(z, x, out)
    }

    pub fn envelope(&self) -> &Profile {
        &self.envelope
    }

    pub fn floor(&self) -> &Profile {
        &self.floor
    }

    pub fn density(&self) -> &Profile {
        &self.density
    }

    pub fn c_bar(&self, z: &[f64]) -> f64 {
        self.envelope.eval(z)
    }

    pub fn c_floor(&self, z: &[f64]) -> f64 {
        self.floor.eval(z)
    }

    pub fn h(&self, z: &[f64]) -> f64 {
        self.density.eval(z)
    }

    pub fn has_analytic_gradients(&self) -> bool {
        self.drift_jacobian.is_some() && self.jump_grad_x.is_some() && self.jump_grad_z.is_some()
    }

    /// `grad b(x)`, row-major; central differences when no Jacobian was supplied.
    pub fn drift_jacobian(&self, x: &[f64], out: &mut [f64]) {
        match &self.drift_jacobian {
            Some(j) => j(x, out),
            None => central_difference(self.dim, x, out, |y, o| (self.drift)(y, o)),
        }
    }

    /// `grad_x c(z, x)`, row-major.
    pub fn jump_grad_x(&self, z: &[f64], x: &[f64], out: &mut [f64]) {
        match &self.jump_grad_x {
            Some(j) => j(z, x, out),
            None => central_difference(self.dim, x, out, |y, o| (self.jump)(z, y, o)),
        }
    }

    /// `grad_z c(z, x)`, row-major: `out[i * d + j] = d c_i / d z_j`.
    pub fn jump_grad_z(&self, z: &[f64], x: &[f64], out: &mut [f64]) {
        match &self.jump_grad_z {
            Some(j) => j(z, x, out),
            None => central_difference(self.dim, z, out, |w, o| (self.jump)(w, x, o)),
        }
    }

    /// True when envelope, floor and density all depend on `|z|` only.
    pub fn is_radial(&self) -> bool {
        self.envelope.is_radial() && self.floor.is_radial() && self.density.is_radial()
    }

    /// `int_{lo < |z| <= hi} g(z) mu(dz)`, with `hi = None` meaning infinity.
    ///
    /// `g_radial` declares that `g` depends on `|z|` only; together with a
    /// radial density this takes the one-dimensional fast path.
    pub fn integrate_radial_range<G: Fn(&[f64]) -> f64>(
        &self,
        g: G,
        g_radial: bool,
        lo: f64,
        hi: Option<f64>,
        what: &str,
    ) -> Result<Estimate> {
        let d = self.dim;
        let area = quad::sphere_area(d);
        let tol = self.tolerance;
        let radial = g_radial && self.density.is_radial();
        let rule = if radial { None } else { Some(angular_rule(d)) };
        let integrand = |r: f64| -> f64 {
            let jac = if d == 1 { 1.0 } else { r.powi(d as i32 - 1) };
            match &rule {
                None => {
                    let mut z = vec![0.0; d];
                    z[0] = r;
                    let h = self.density.eval(&z);
                    if h == 0.0 {
                        return 0.0;
                    }
                    area * g(&z) * h * jac
                }
                Some(rule) => {
                    let mut z = vec![0.0; d];
                    let mut acc = 0.0;
                    for (dir, w) in rule.iter() {
                        for (zi, di) in z.iter_mut().zip(dir) {
                            *zi = r * di;
                        }
                        let h = self.density.eval(&z);
                        if h != 0.0 {
                            acc += w * g(&z) * h;
                        }
                    }
                    acc * jac
                }
            }
        };
        let fail = |e: Estimate| Error::Integrability {
            what: what.to_string(),
            estimate: e.value,
            error: e.error,
        };
        // Integrate integer-aligned pieces so that densities with breaks at
        // integer radii stay smooth on each panel.
        let mut total = Estimate::ZERO;
        let finite_end = hi.unwrap_or(lo.floor() + 1.0);
        let mut a = lo;
        while a < finite_end {
            let b = (a.floor() + 1.0).min(finite_end);
            total = total.add(quad::integrate(integrand, a, b, tol).map_err(fail)?);
            a = b;
        }
        if hi.is_none() {
            total = total.add(quad::integrate_to_infinity(integrand, a, tol).map_err(fail)?);
        }
        Ok(total)
    }

    /// `mu(I_k)` with `I_1 = B_1` and `I_k = B_k \ B_{k-1}`.
    pub fn annulus_mass(&self, k: usize) -> Result<f64> {
        if k == 0 {
            return Err(Error::Domain("annulus index starts at 1".into()));
        }
        let lo = (k - 1) as f64;
        Ok(self
            .integrate_radial_range(|_| 1.0, true, lo, Some(k as f64), &format!("mu(I_{k})"))?
            .value)
    }

    /// `epsilon_m = int_{|z|>m} c_bar^2 dmu + (int_{|z|>m} c_bar dmu)^2`.
    pub fn epsilon_m(&self, m: usize) -> Result<f64> {
        let table = TailTable::build(self, (m + 1).max(4))?;
        table.epsilon(m)
    }

    /// `theta = 2 b_bar - int (2 c_bar + c_bar^2) dmu`.
    pub fn theta(&self) -> Result<f64> {
        TailTable::build(self, 4)?.theta(self.b_bar)
    }

    /// Constants `(alpha, beta)` of the bound `L|x|^2 <= beta - alpha |x|^2`,
    /// valid for drifts with `<x, b(x)> <= -b_bar |x|^2`.
    pub fn lyapunov_constants(&self) -> Result<(f64, f64)> {
        let table = TailTable::build(self, 4)?;
        let lin = table.tail_linear(0)?;
        let sq = table.tail_square(0)?;
        Ok((2.0 * self.b_bar - lin, lin + sq))
    }
}

/// Central-difference Jacobian of `f` at `x`, row-major into `out`.
pub fn central_difference<F: Fn(&[f64], &mut [f64])>(d: usize, x: &[f64], out: &mut [f64], f: F) {
    let mut y = x.to_vec();
    let mut fp = vec![0.0; d];
    let mut fm = vec![0.0; d];
    for j in 0..d {
        let h = 1e-6 * x[j].abs().max(1.0);
        y[j] = x[j] + h;
        f(&y, &mut fp);
        y[j] = x[j] - h;
        f(&y, &mut fm);
        y[j] = x[j];
        for i in 0..d {
            out[i * d + j] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
}

/// Directions and weights (summing to the sphere area) for angular averages.
fn angular_rule(d: usize) -> Vec<(Vec<f64>, f64)> {
    use std::f64::consts::PI;
    match d {
        1 => vec![(vec![1.0], 1.0), (vec![-1.0], 1.0)],
        2 => {
            let n = 64;
            (0..n)
                .map(|i| {
                    let a = 2.0 * PI * i as f64 / n as f64;
                    (vec![a.cos(), a.sin()], 2.0 * PI / n as f64)
                })
                .collect()
        }
        3 => {
            let (nodes, weights) = quad::gauss_legendre(16);
            let nphi = 32;
            let mut rule = Vec::with_capacity(16 * nphi);
            for (ct, w) in nodes.iter().zip(&weights) {
                let st = (1.0 - ct * ct).sqrt();
                for k in 0..nphi {
                    let phi = 2.0 * PI * (k as f64 + 0.5) / nphi as f64;
                    rule.push((
                        vec![st * phi.cos(), st * phi.sin(), *ct],
                        w * 2.0 * PI / nphi as f64,
                    ));
                }
            }
            rule
        }
        _ => {
            let n = 1024;
            let w = quad::sphere_area(d) / n as f64;
            quad::sphere_directions(d, n, &[])
                .into_iter()
                .map(|v| (v, w))
                .collect()
        }
    }
}

/// Per-interval truncation levels and the Gaussian compensator they induce.
#[derive(Debug, Clone)]
pub struct Compensator {
    /// `levels[n] = M(gamma_{n+1})`, the truncation used on `(Gamma_n, Gamma_{n+1}]`.
    pub levels: Vec<usize>,
    /// `rates[n] = int_{|z| >= levels[n]} c_floor dmu`.
    pub rates: Vec<f64>,
    /// `cumulative[n] = sum_{i <= n} gamma_i rates[i - 1]`, i.e. `a^2` at `Gamma_n`.
    pub cumulative: Vec<f64>,
    times: Vec<f64>,
}

impl Compensator {
    /// Levels for the first `steps` intervals of `grid`, with `M` either
    /// from the table or fixed to `fixed_level`.
    pub fn new(
        grid: &TimeGrid,
        table: &TailTable,
        steps: usize,
        fixed_level: Option<usize>,
    ) -> Result<Self> {
        let steps = steps.min(grid.steps());
        let mut levels = Vec::with_capacity(steps);
        let mut rates = Vec::with_capacity(steps);
        let mut cumulative = Vec::with_capacity(steps + 1);
        cumulative.push(0.0);
        let mut acc = 0.0;
        for n in 0..steps {
            let g = grid.gamma(n + 1);
            let m = match fixed_level {
                Some(m) => m,
                None => table.truncation_level(g)?,
            };
            let rate = table.tail_floor(m)?;
            levels.push(m);
            rates.push(rate);
            acc += g * rate;
            cumulative.push(acc);
        }
        Ok(Self {
            levels,
            rates,
            cumulative,
            times: grid.times()[..=steps].to_vec(),
        })
    }

    /// `a_t^2` for `0 <= t <= Gamma_steps`, using `Gamma_n < t <= Gamma_{n+1}`.
    pub fn a_squared(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let n = self.times.partition_point(|&g| g < t).saturating_sub(1);
        let n = n.min(self.levels.len().saturating_sub(1));
        self.cumulative[n] + (t - self.times[n]) * self.rates[n]
    }

    pub fn a(&self, t: f64) -> f64 {
        self.a_squared(t).max(0.0).sqrt()
    }
}

/// `a^P_t` for the decreasing-step partition `grid`.
pub fn gaussian_compensator(grid: &TimeGrid, table: &TailTable, t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("compensator needs t > 0, got {t}")));
    }
    let n = grid
        .interval_of_jump(t)
        .ok_or(Error::OutOfRange {
            index: grid.steps() + 1,
            available: grid.steps(),
        })?;
    Ok(Compensator::new(grid, table, n + 1, None)?.a(t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn lebesgue(dim: usize) -> JumpModel {
        JumpModel::builder("lebesgue", dim).build().unwrap()
    }

    #[test]
    fn annulus_masses() {
        assert!((lebesgue(1).annulus_mass(1).unwrap() - 2.0).abs() < 1e-12);
        assert!((lebesgue(1).annulus_mass(3).unwrap() - 2.0).abs() < 1e-12);
        assert!((lebesgue(2).annulus_mass(2).unwrap() - 3.0 * PI).abs() < 1e-11);
        assert!(lebesgue(2).annulus_mass(0).is_err());
    }

    #[test]
    fn annuli_sum_to_ball() {
        let m = lebesgue(3);
        let total: f64 = (1..=5).map(|k| m.annulus_mass(k).unwrap()).sum();
        let ball = 4.0 / 3.0 * PI * 125.0;
        assert!((total - ball).abs() < 1e-9 * ball);
    }

    #[test]
    fn general_path_matches_radial_path() {
        // Radial functions written as general profiles must reproduce the
        // fast-path value.
        for d in [2usize, 3] {
            let radial = JumpModel::builder("r", d)
                .density(Profile::radial(|r| (-r).exp()))
                .build()
                .unwrap();
            let general = JumpModel::builder("g", d)
                .density(Profile::general(|z| (-norm(z)).exp()))
                .build()
                .unwrap();
            let a = radial
                .integrate_radial_range(norm, true, 1.0, None, "t")
                .unwrap()
                .value;
            let b = general
                .integrate_radial_range(norm, false, 1.0, None, "t")
                .unwrap()
                .value;
            assert!((a - b).abs() < 1e-9 * a, "d = {d}: {a} vs {b}");
        }
    }

    #[test]
    fn anisotropic_density_in_two_dimensions() {
        // int_{|z| <= 1} (1 + z_1^2) dz = pi + pi / 4.
        let m = JumpModel::builder("aniso", 2)
            .density(Profile::general(|z| 1.0 + z[0] * z[0]))
            .build()
            .unwrap();
        let v = m.annulus_mass(1).unwrap();
        assert!((v - 1.25 * PI).abs() < 1e-10);
    }

    #[test]
    fn finite_difference_jacobian() {
        let m = JumpModel::builder("fd", 2)
            .drift(|x, o| {
                o[0] = x[0] * x[1];
                o[1] = x[0].sin();
            })
            .build()
            .unwrap();
        let mut j = [0.0; 4];
        m.drift_jacobian(&[0.3, 2.0], &mut j);
        let expect = [2.0, 0.3, 0.3f64.cos(), 0.0];
        for (a, b) in j.iter().zip(expect) {
            assert!((a - b).abs() < 1e-8);
        }
    }
}
