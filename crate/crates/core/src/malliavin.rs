//! Pathwise Malliavin objects of the auxiliary scheme: localising weights,
//! tangent and inverse flows, derivatives in the jump marks and in the
//! Gaussian vector, the covariance matrix, and the `chi` functional with its
//! closed-form Laplace transform.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::integrator::{Event, SchemeKind, Scheme, Trajectory};
use crate::model::{norm, JumpModel};
use crate::sampler::NoiseRealization;

/// Bump `psi`: 1 on `[-1/4, 1/4]`, `exp(1 - 1/(1 - (4|y| - 1)^2))` on
/// `1/4 < |y| < 1/2`, 0 beyond.
pub fn psi(y: f64) -> f64 {
    psi_derivatives(y)[0]
}

/// `psi` and its first three derivatives at `y`. At `|y| = 1/4` the values
/// are the one-sided limits from inside the plateau.
pub fn psi_derivatives(y: f64) -> [f64; 4] {
    let ay = y.abs();
    if ay <= 0.25 {
        return [1.0, 0.0, 0.0, 0.0];
    }
    if ay >= 0.5 {
        return [0.0; 4];
    }
    let u = 4.0 * ay - 1.0;
    let q = 1.0 - u * u;
    let f = (1.0 - 1.0 / q).exp();
    if f < 1e-300 {
        return [0.0; 4];
    }
    // a(u) = 1 - 1/q; derivatives in u, then chain rule with du/dy = 4.
    let a1 = -2.0 * u / (q * q);
    let a2 = -2.0 / (q * q) - 8.0 * u * u / (q * q * q);
    let a3 = -24.0 * u / (q * q * q) - 48.0 * u * u * u / (q * q * q * q);
    let (a1, a2, a3) = (4.0 * a1, 16.0 * a2, 64.0 * a3);
    let sign = y.signum();
    [
        f,
        sign * f * a1,
        f * (a1 * a1 + a2),
        sign * f * (a1 * a1 * a1 + 3.0 * a1 * a2 + a3),
    ]
}

/// `Psi_k(z) = psi(|z| - (k - 1/2))`.
pub fn psi_k(k: usize, z: &[f64]) -> f64 {
    psi(norm(z) - (k as f64 - 0.5))
}

/// Weight `xi^k_i` of a mark in annulus `k`.
pub fn weight(k: usize, z: &[f64]) -> f64 {
    psi_k(k, z)
}

fn op_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 1 {
        return m[(0, 0)].abs();
    }
    m.clone().svd(false, false).singular_values.max()
}

/// Tangent flow `Y` and its inverse, sampled after every event.
#[derive(Debug, Clone)]
pub struct FlowPair {
    pub dim: usize,
    pub times: Vec<f64>,
    pub y: Vec<DMatrix<f64>>,
    pub y_inv: Vec<DMatrix<f64>>,
    /// `(k, i, index into times)` of each retained jump, at its post-jump sample.
    pub jumps: Vec<(usize, usize, usize)>,
    pub sup_y: f64,
    pub sup_y_inv: f64,
}

impl FlowPair {
    pub fn terminal(&self) -> (&DMatrix<f64>, &DMatrix<f64>) {
        (
            self.y.last().expect("flow has t = 0"),
            self.y_inv.last().expect("flow has t = 0"),
        )
    }

    /// `max_t || Y_t Y~_t - I ||_inf` over every sample.
    pub fn inversion_error(&self) -> f64 {
        let id = DMatrix::<f64>::identity(self.dim, self.dim);
        self.y
            .iter()
            .zip(&self.y_inv)
            .map(|(a, b)| (a * b - &id).amax())
            .fold(0.0, f64::max)
    }
}

/// Discrete Jacobian of one RK4 step of `x' = b(x)` from `x` with step `h`.
fn rk4_jacobian(model: &JumpModel, x: &[f64], h: f64) -> DMatrix<f64> {
    let d = x.len();
    let mut buf = vec![0.0; d * d];
    let mut jac = |p: &[f64]| {
        model.drift_jacobian(p, &mut buf);
        DMatrix::from_row_slice(d, d, &buf)
    };
    let mut k = vec![0.0; d];
    let stage = |base: &[f64], dir: &[f64], c: f64| -> Vec<f64> {
        base.iter().zip(dir).map(|(b, v)| b + c * v).collect()
    };
    let id = DMatrix::<f64>::identity(d, d);
    model.drift(x, &mut k);
    let j1 = jac(x);
    let x2 = stage(x, &k, 0.5 * h);
    let mut k2 = vec![0.0; d];
    model.drift(&x2, &mut k2);
    let j2 = jac(&x2) * (&id + &j1 * (0.5 * h));
    let x3 = stage(x, &k2, 0.5 * h);
    let mut k3 = vec![0.0; d];
    model.drift(&x3, &mut k3);
    let j3 = jac(&x3) * (&id + &j2 * (0.5 * h));
    let x4 = stage(x, &k3, h);
    let j4 = jac(&x4) * (&id + &j3 * h);
    &id + (j1 + j2 * 2.0 + j3 * 2.0 + j4) * (h / 6.0)
}

/// Replays the events of an auxiliary trajectory. Drift steps multiply by
/// the exact RK4 Jacobian; a jump multiplies `Y` by `I + G` and `Y~` by
/// `I - G (I + G)^{-1}` with `G = grad_x c(Z, X_{T-})`.
pub fn tangent_flows(
    model: &JumpModel,
    noise: &NoiseRealization,
    trajectory: &Trajectory,
) -> Result<FlowPair> {
    if trajectory.kind != SchemeKind::Auxiliary {
        return Err(Error::InvalidArgument(
            "tangent flows need an auxiliary trajectory".into(),
        ));
    }
    if trajectory.events.is_empty() {
        return Err(Error::InvalidArgument(
            "trajectory was simulated without event recording".into(),
        ));
    }
    let d = model.dim();
    let id = DMatrix::<f64>::identity(d, d);
    let mut y = id.clone();
    let mut yi = id.clone();
    let mut out = FlowPair {
        dim: d,
        times: vec![0.0],
        y: vec![y.clone()],
        y_inv: vec![yi.clone()],
        jumps: Vec::new(),
        sup_y: 1.0,
        sup_y_inv: 1.0,
    };
    let mut g = vec![0.0; d * d];
    for ev in &trajectory.events {
        let t = match ev {
            Event::Drift { t, h, x } => {
                let j = rk4_jacobian(model, x, *h);
                let j_inv = j.clone().try_inverse().ok_or_else(|| {
                    Error::Domain(format!("RK4 Jacobian is singular at t = {t}"))
                })?;
                y = &j * &y;
                yi = &yi * j_inv;
                t + h
            }
            Event::Jump { t, k, i, x } => {
                model.jump_grad_x(noise.mark(*k, *i), x, &mut g);
                let gm = DMatrix::from_row_slice(d, d, &g);
                let inv = (&id + &gm)
                    .try_inverse()
                    .ok_or(Error::NonInvertible { k: *k, i: *i, time: *t })?;
                y = (&id + &gm) * &y;
                yi = &yi - &yi * &gm * inv;
                out.jumps.push((*k, *i, out.times.len()));
                *t
            }
        };
        out.sup_y = out.sup_y.max(op_norm(&y));
        out.sup_y_inv = out.sup_y_inv.max(op_norm(&yi));
        out.times.push(t);
        out.y.push(y.clone());
        out.y_inv.push(yi.clone());
    }
    Ok(out)
}

/// Derivative of `X_t` in one retained mark.
#[derive(Debug, Clone, Serialize)]
pub struct MarkDerivative {
    pub k: usize,
    pub i: usize,
    pub time: f64,
    pub weight: f64,
    /// Column `j` holds `D^Z_{(k,i,j)} X_t`, stored row-major `d x d`.
    pub columns: Vec<f64>,
}

impl MarkDerivative {
    pub fn column(&self, j: usize, d: usize) -> Vec<f64> {
        (0..d).map(|r| self.columns[r * d + j]).collect()
    }
}

/// `D^Z_{(k,i,j)} X_t = xi Y_t Y~_T grad_{z_j} c(Z, X_{T-})` for every
/// retained jump; jumps that the truncation discards have zero derivative
/// and are omitted.
pub fn derivative_z(
    model: &JumpModel,
    noise: &NoiseRealization,
    trajectory: &Trajectory,
    flows: &FlowPair,
) -> Vec<MarkDerivative> {
    let d = model.dim();
    let (y_t, _) = flows.terminal();
    let mut gz = vec![0.0; d * d];
    let lefts = trajectory.events.iter().filter_map(|e| match e {
        Event::Jump { t, k, i, x } => Some((*t, *k, *i, x)),
        _ => None,
    });
    lefts
        .zip(&flows.jumps)
        .map(|((t, k, i, x), &(_, _, idx))| {
            let z = noise.mark(k, i);
            let xi = weight(k, z);
            model.jump_grad_z(z, x, &mut gz);
            let dz = DMatrix::from_row_slice(d, d, &gz);
            let m = (y_t * &flows.y_inv[idx] * dz) * xi;
            MarkDerivative {
                k,
                i,
                time: t,
                weight: xi,
                columns: m.transpose().as_slice().to_vec(),
            }
        })
        .collect()
}

/// Single entry of [`derivative_z`]; zero when `(k, i)` was not retained.
pub fn derivative_z_entry(
    model: &JumpModel,
    noise: &NoiseRealization,
    trajectory: &Trajectory,
    flows: &FlowPair,
    k: usize,
    i: usize,
    j: usize,
) -> Vec<f64> {
    let d = model.dim();
    derivative_z(model, noise, trajectory, flows)
        .into_iter()
        .find(|m| m.k == k && m.i == i)
        .map(|m| m.column(j, d))
        .unwrap_or_else(|| vec![0.0; d])
}

/// `D^Delta_j X_t = a_t Y_t e_j`.
pub fn derivative_delta(flows: &FlowPair, a_t: f64, j: usize) -> Vec<f64> {
    let (y_t, _) = flows.terminal();
    y_t.column(j).iter().map(|v| a_t * v).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct MalliavinState {
    pub dim: usize,
    pub t: f64,
    pub marks: Vec<MarkDerivative>,
    /// Column `j` holds `D^Delta_j X_t`, row-major `d x d`.
    pub delta_block: Vec<f64>,
    pub a: f64,
    /// Row-major `d x d`.
    pub sigma: Vec<f64>,
    pub lambda_min: f64,
    pub chi: f64,
    /// `(sup ||Y~||)^{-2} (sup ||Y||)^{-2} (chi + a^2)`.
    pub eig_lower_bound: f64,
    /// `lambda_min - eig_lower_bound`.
    pub margin: f64,
    pub inversion_error: f64,
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn lambda_min(sigma: &DMatrix<f64>) -> f64 {
    if sigma.nrows() == 1 {
        return sigma[(0, 0)];
    }
    sigma.clone().symmetric_eigen().eigenvalues.min()
}

/// Covariance `sigma = sum_j D^Delta_j (D^Delta_j)^T + sum_{(k,i,j)} D^Z (D^Z)^T`
/// and its smallest eigenvalue.
pub fn covariance(d: usize, marks: &[MarkDerivative], delta_block: &[f64]) -> (DMatrix<f64>, f64) {
    let mut sigma = DMatrix::<f64>::zeros(d, d);
    let mut add = |m: DMatrix<f64>| sigma += &m * m.transpose();
    add(DMatrix::from_row_slice(d, d, delta_block));
    for m in marks {
        add(DMatrix::from_row_slice(d, d, &m.columns));
    }
    let sym = (&sigma + sigma.transpose()) * 0.5;
    let l = lambda_min(&sym);
    (sym, l)
}

/// `chi_t = sum over retained jumps in (0, t] of xi^2 c_floor(Z)`, using the
/// truncation levels of `scheme`.
pub fn chi(scheme: &Scheme, noise: &NoiseRealization, t: f64) -> f64 {
    let model = scheme.model();
    let mut total = 0.0;
    for (k0, a) in noise.annuli.iter().enumerate() {
        let k = k0 + 1;
        for (i, &tj) in a.times.iter().enumerate() {
            if tj > t {
                break;
            }
            match scheme.level_at(tj) {
                Some(level) if k <= level => {
                    let z = a.mark(i, noise.dim);
                    let xi = weight(k, z);
                    total += xi * xi * model.c_floor(z);
                }
                _ => {}
            }
        }
    }
    total
}

/// Full diagnostic bundle for one auxiliary path recorded with events,
/// evaluated at its horizon.
pub fn malliavin_state(
    scheme: &Scheme,
    noise: &NoiseRealization,
    trajectory: &Trajectory,
) -> Result<MalliavinState> {
    let model = scheme.model();
    let d = model.dim();
    let t = trajectory.horizon;
    let flows = tangent_flows(model, noise, trajectory)?;
    let marks = derivative_z(model, noise, trajectory, &flows);
    let a = scheme.compensator().a(t);
    let y_t = flows.terminal().0 * a;
    let delta_block = y_t.transpose().as_slice().to_vec();
    let (sigma, lmin) = covariance(d, &marks, &delta_block);
    let chi_t = chi(scheme, noise, t);
    let bound = (chi_t + a * a) / (flows.sup_y * flows.sup_y_inv).powi(2);
    Ok(MalliavinState {
        dim: d,
        t,
        marks,
        delta_block,
        a,
        sigma: sigma.transpose().as_slice().to_vec(),
        lambda_min: lmin,
        chi: chi_t,
        eig_lower_bound: bound,
        margin: lmin - bound,
        inversion_error: flows.inversion_error(),
    })
}

/// Per-annulus exponents `int_{I_k} (1 - exp(-s Psi_k^2 c_floor)) dmu`,
/// split where `Psi_k` changes regime so each piece is smooth.
pub fn laplace_exponents(model: &JumpModel, k_max: usize, s: f64) -> Result<Vec<f64>> {
    let radial = model.floor().is_radial();
    (1..=k_max)
        .map(|k| {
            let kf = k as f64;
            let cuts = [kf - 1.0, kf - 0.75, kf - 0.25, kf];
            let mut total = 0.0;
            for w in cuts.windows(2) {
                let e = model.integrate_radial_range(
                    |z| {
                        let p = psi_k(k, z);
                        -(-s * p * p * model.c_floor(z)).exp_m1()
                    },
                    radial,
                    w[0],
                    Some(w[1]),
                    "Laplace exponent of chi",
                )?;
                total += e.value;
            }
            Ok(total)
        })
        .collect()
}

/// `E exp(-s chi_t)` from the intensity formula
/// `exp(-sum_n ((Gamma_{n+1} ^ t) - Gamma_n) sum_{k <= M(gamma_{n+1})} L_k(s))`.
pub fn laplace_chi_closed_form(scheme: &Scheme, t: f64, s: f64) -> Result<f64> {
    if s < 0.0 {
        return Err(Error::Domain(format!("s must be non-negative, got {s}")));
    }
    if !(t > 0.0) || t > scheme.config().horizon {
        return Err(Error::Domain(format!(
            "t must lie in (0, {}], got {t}",
            scheme.config().horizon
        )));
    }
    if s == 0.0 {
        return Ok(1.0);
    }
    let levels = &scheme.compensator().levels;
    let k_max = levels.iter().copied().max().unwrap_or(0);
    let l = laplace_exponents(scheme.model(), k_max, s)?;
    let mut prefix = vec![0.0; k_max + 1];
    for k in 1..=k_max {
        prefix[k] = prefix[k - 1] + l[k - 1];
    }
    let grid = scheme.grid();
    let mut exponent = 0.0;
    for (n, &m) in levels.iter().enumerate() {
        let t0 = grid.time(n);
        if t0 >= t {
            break;
        }
        exponent += (grid.time(n + 1).min(t) - t0) * prefix[m];
    }
    Ok((-exponent).exp())
}

/// Finite-difference check of one mark derivative: rerun the path with
/// `Z^k_i` moved by `h` in coordinate `j` and return `(X^h_t - X_t) / h`.
pub fn finite_difference_mark(
    scheme: &Scheme,
    noise: &NoiseRealization,
    x0: &[f64],
    k: usize,
    i: usize,
    j: usize,
    h: f64,
) -> Result<Vec<f64>> {
    let base = scheme.run(noise, x0)?.terminal;
    let mut bumped = noise.clone();
    bumped.mark_mut(k, i)[j] += h;
    let moved = scheme.run(&bumped, x0)?.terminal;
    Ok(moved.iter().zip(&base).map(|(a, b)| (a - b) / h).collect())
}

/// Unit vector helper for callers building `zeta` directions.
pub fn quadratic_form(sigma: &DMatrix<f64>, zeta: &[f64]) -> f64 {
    let v = DVector::from_column_slice(zeta);
    (v.transpose() * sigma * v)[(0, 0)]
}
