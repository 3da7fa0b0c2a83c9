//! Built-in models selectable by name, e.g. `"exp-decay(1, 1, 1, 0.2)"`.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{norm, JumpModel, Profile};
use crate::error::{Error, Result};
use crate::quad::sphere_area;

/// A parametrized model family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "kebab-case")]
pub enum Preset {
    /// `b(x) = -b_bar x`, `c(z, x) = c_bar(z) e_1`, `c_bar = scale exp(-a |z|^p / 2)`, `h = 1`.
    AdditiveLinear {
        dim: usize,
        b_bar: f64,
        scale: f64,
        a: f64,
        p: f64,
    },
    /// `c_bar^2 = scale^2 exp(-a1 |z|^p)`, floor decaying like `exp(-a2 |z|^p)`, `h = 1`.
    ExpDecay {
        dim: usize,
        a1: f64,
        a2: f64,
        p: f64,
        scale: f64,
        b_bar: f64,
        eta: f64,
        kappa: f64,
    },
    /// `c_bar^2 = a1 / (1 + |z|^p)`, floor proportional to `a2`, `h = 1`.
    PolyDecay {
        dim: usize,
        a1: f64,
        a2: f64,
        p: f64,
        b_bar: f64,
        eta: f64,
    },
    /// One-dimensional `c(z, x) = sigma(x) / z` with `h(z) = |z|^(alpha - 1)` on `|z| >= 1`.
    TruncatedAlphaStable {
        alpha: f64,
        sigma_lo: f64,
        sigma_hi: f64,
        b_bar: f64,
    },
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::AdditiveLinear {
                b_bar, scale, a, p, ..
            } => write!(f, "additive-linear({b_bar}, {scale}, {a}, {p})"),
            Self::ExpDecay {
                a1, a2, p, scale, ..
            } => write!(f, "exp-decay({a1}, {a2}, {p}, {scale})"),
            Self::PolyDecay { a1, a2, p, .. } => write!(f, "poly-decay({a1}, {a2}, {p})"),
            Self::TruncatedAlphaStable {
                alpha,
                sigma_lo,
                sigma_hi,
                ..
            } => write!(f, "truncated-alpha-stable({alpha}, {sigma_lo}, {sigma_hi})"),
        }
    }
}

fn split_call(text: &str) -> Result<(String, Vec<f64>)> {
    let text = text.trim();
    let (name, args) = match text.find('(') {
        Some(open) => {
            let close = text
                .rfind(')')
                .filter(|&c| c > open && text[c + 1..].trim().is_empty())
                .ok_or_else(|| Error::Config(format!("unbalanced parentheses in preset {text:?}")))?;
            (&text[..open], &text[open + 1..close])
        }
        None => (text, ""),
    };
    let args = args
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| Error::Config(format!("preset argument {s:?} is not a number")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((name.trim().to_ascii_lowercase(), args))
}

struct Params<'a> {
    positional: Vec<f64>,
    names: &'static [&'static str],
    keyed: &'a BTreeMap<String, f64>,
}

impl Params<'_> {
    fn get(&self, key: &str, default: f64) -> f64 {
        if let Some(v) = self.keyed.get(key) {
            return *v;
        }
        self.names
            .iter()
            .position(|n| *n == key)
            .and_then(|i| self.positional.get(i).copied())
            .unwrap_or(default)
    }

    fn dim(&self) -> Result<usize> {
        let d = self.get("dim", 1.0);
        if d >= 1.0 && d.fract() == 0.0 && d <= 64.0 {
            Ok(d as usize)
        } else {
            Err(Error::Config(format!("dim must be a positive integer, got {d}")))
        }
    }
}

fn require(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Config(msg()))
    }
}

/// `Gamma(n, x) = (n - 1)! e^{-x} sum_{k < n} x^k / k!` for integer `n >= 1`.
pub fn upper_gamma_int(n: usize, x: f64) -> f64 {
    let mut term = 1.0;
    let mut sum = 0.0;
    let mut fact = 1.0;
    for k in 0..n {
        if k > 0 {
            term *= x / k as f64;
            fact *= k as f64;
        }
        sum += term;
    }
    fact * (-x).exp() * sum
}

/// `int_{|z| > m} (s e^{-a |z| / 2})^q dz` in `R^d` for `q = 1, 2`.
fn exp_tail(d: usize, s: f64, a: f64, q: i32, m: f64) -> f64 {
    let rate = a * q as f64 / 2.0;
    s.powi(q) * sphere_area(d) * upper_gamma_int(d, rate * m) / rate.powi(d as i32)
}

impl Preset {
    /// Parses `"name(args)"`; `keyed` entries override positional arguments
    /// and supply the extra parameters (`dim`, `b_bar`, `eta`, `kappa`).
    pub fn parse(text: &str, keyed: &BTreeMap<String, f64>) -> Result<Self> {
        let (name, positional) = split_call(text)?;
        let known: &[&str] = match name.as_str() {
            "additive-linear" => &["b_bar", "scale", "a", "p"],
            "exp-decay" => &["a1", "a2", "p", "scale"],
            "poly-decay" => &["a1", "a2", "p"],
            "truncated-alpha-stable" => &["alpha", "sigma_lo", "sigma_hi"],
            other => return Err(Error::Config(format!("unknown model preset {other:?}"))),
        };
        if positional.len() > known.len() {
            return Err(Error::Config(format!(
                "{name} takes at most {} positional arguments ({}), got {}",
                known.len(),
                known.join(", "),
                positional.len()
            )));
        }
        let p = Params {
            positional,
            names: known,
            keyed,
        };
        let preset = match name.as_str() {
            "additive-linear" => Self::AdditiveLinear {
                dim: p.dim()?,
                b_bar: p.get("b_bar", 1.0),
                scale: p.get("scale", 1.0),
                a: p.get("a", 1.0),
                p: p.get("p", 1.0),
            },
            "exp-decay" => Self::ExpDecay {
                dim: p.dim()?,
                a1: p.get("a1", 1.0),
                a2: p.get("a2", p.get("a1", 1.0)),
                p: p.get("p", 1.0),
                scale: p.get("scale", 1.0),
                b_bar: p.get("b_bar", 1.0),
                eta: p.get("eta", 0.5),
                kappa: p.get("kappa", 0.0),
            },
            "poly-decay" => Self::PolyDecay {
                dim: p.dim()?,
                a1: p.get("a1", 1.0),
                a2: p.get("a2", p.get("a1", 1.0)),
                p: p.get("p", 4.0),
                b_bar: p.get("b_bar", 1.0),
                eta: p.get("eta", 0.5),
            },
            _ => {
                require(p.dim()? == 1, || {
                    "truncated-alpha-stable is one-dimensional".to_string()
                })?;
                Self::TruncatedAlphaStable {
                    alpha: p.get("alpha", 0.5),
                    sigma_lo: p.get("sigma_lo", 0.5),
                    sigma_hi: p.get("sigma_hi", 1.0),
                    b_bar: p.get("b_bar", 1.0),
                }
            }
        };
        preset.validate()?;
        Ok(preset)
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        match *self {
            Self::AdditiveLinear {
                b_bar, scale, a, p, ..
            } => {
                require(pos(b_bar) && pos(scale) && pos(a) && pos(p), || {
                    "additive-linear parameters must be positive".into()
                })
            }
            Self::ExpDecay {
                a1,
                a2,
                p,
                scale,
                b_bar,
                eta,
                kappa,
                ..
            } => {
                require(pos(a1) && pos(p) && pos(scale) && pos(b_bar), || {
                    "exp-decay parameters must be positive".into()
                })?;
                require(a2 >= a1, || format!("exp-decay needs a1 <= a2, got {a1} > {a2}"))?;
                require((0.0..1.0).contains(&eta), || format!("eta must lie in [0, 1), got {eta}"))?;
                require(scale * eta / 2.0 < 1.0, || {
                    "scale * eta / 2 must be below 1 so that I + grad_x c stays invertible".into()
                })?;
                require(kappa >= 0.0, || "kappa must be non-negative".into())
            }
            Self::PolyDecay {
                a1,
                a2,
                p,
                b_bar,
                eta,
                ..
            } => {
                require(pos(a1) && pos(a2) && pos(p) && pos(b_bar), || {
                    "poly-decay parameters must be positive".into()
                })?;
                require(a2 <= a1, || format!("poly-decay needs a2 <= a1, got {a2} > {a1}"))?;
                require((0.0..1.0).contains(&eta), || format!("eta must lie in [0, 1), got {eta}"))?;
                require(a1.sqrt() * eta / 2.0 < 1.0, || {
                    "sqrt(a1) * eta / 2 must be below 1 so that I + grad_x c stays invertible".into()
                })
            }
            Self::TruncatedAlphaStable {
                alpha,
                sigma_lo,
                sigma_hi,
                b_bar,
            } => {
                require((0.0..1.0).contains(&alpha), || {
                    format!("alpha must lie in [0, 1), got {alpha}")
                })?;
                require(pos(sigma_lo) && sigma_lo <= sigma_hi, || {
                    "need 0 < sigma_lo <= sigma_hi".into()
                })?;
                require((sigma_hi - sigma_lo) / 2.0 < 1.0, || {
                    "sigma' must stay above -1: need (sigma_hi - sigma_lo) / 2 < 1".into()
                })?;
                require(pos(b_bar), || "b_bar must be positive".into())
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::AdditiveLinear { .. } => "additive-linear",
            Self::ExpDecay { .. } => "exp-decay",
            Self::PolyDecay { .. } => "poly-decay",
            Self::TruncatedAlphaStable { .. } => "truncated-alpha-stable",
        }
    }

    pub fn dim(&self) -> usize {
        match *self {
            Self::AdditiveLinear { dim, .. }
            | Self::ExpDecay { dim, .. }
            | Self::PolyDecay { dim, .. } => dim,
            Self::TruncatedAlphaStable { .. } => 1,
        }
    }

    /// Closed-form `epsilon_m` where one exists (exponential tails with
    /// `p = 1`, and the alpha-stable family for `m >= 1`).
    pub fn closed_form_epsilon(&self, m: usize) -> Option<f64> {
        let m = m as f64;
        match *self {
            Self::AdditiveLinear {
                dim, scale, a, p, ..
            } if p == 1.0 => Some(
                exp_tail(dim, scale, a, 2, m) + exp_tail(dim, scale, a, 1, m).powi(2),
            ),
            Self::ExpDecay {
                dim, scale, a1, p, ..
            } if p == 1.0 => Some(
                exp_tail(dim, scale, a1, 2, m) + exp_tail(dim, scale, a1, 1, m).powi(2),
            ),
            Self::TruncatedAlphaStable {
                alpha, sigma_hi, ..
            } => {
                let m = m.max(1.0);
                let sq = 2.0 * sigma_hi * sigma_hi * m.powf(alpha - 2.0) / (2.0 - alpha);
                let lin = 2.0 * sigma_hi * m.powf(alpha - 1.0) / (1.0 - alpha);
                Some(sq + lin * lin)
            }
            _ => None,
        }
    }

    /// Closed-form `theta` where the envelope integrals are explicit.
    pub fn closed_form_theta(&self) -> Option<f64> {
        match *self {
            Self::AdditiveLinear {
                dim,
                b_bar,
                scale,
                a,
                p,
            } if p == 1.0 => Some(
                2.0 * b_bar - 2.0 * exp_tail(dim, scale, a, 1, 0.0) - exp_tail(dim, scale, a, 2, 0.0),
            ),
            Self::ExpDecay {
                dim,
                b_bar,
                scale,
                a1,
                p,
                ..
            } if p == 1.0 => Some(
                2.0 * b_bar
                    - 2.0 * exp_tail(dim, scale, a1, 1, 0.0)
                    - exp_tail(dim, scale, a1, 2, 0.0),
            ),
            Self::TruncatedAlphaStable {
                alpha,
                sigma_hi,
                b_bar,
                ..
            } => Some(
                2.0 * b_bar
                    - 4.0 * sigma_hi / (1.0 - alpha)
                    - 2.0 * sigma_hi * sigma_hi / (2.0 - alpha),
            ),
            _ => None,
        }
    }

    /// Stationary mean (first coordinate) and variance of the additive
    /// linear model: `int c_bar dmu / b_bar` and `int c_bar^2 dmu / (2 b_bar)`.
    pub fn stationary_moments(&self) -> Option<(f64, f64)> {
        match *self {
            Self::AdditiveLinear {
                dim,
                b_bar,
                scale,
                a,
                p,
            } if p == 1.0 => Some((
                exp_tail(dim, scale, a, 1, 0.0) / b_bar,
                exp_tail(dim, scale, a, 2, 0.0) / (2.0 * b_bar),
            )),
            _ => None,
        }
    }

    pub fn build(&self) -> Result<JumpModel> {
        self.validate()?;
        let name = self.to_string();
        match *self {
            Self::AdditiveLinear {
                dim,
                b_bar,
                scale,
                a,
                p,
            } => additive_linear(name, dim, b_bar, scale, a, p),
            Self::ExpDecay {
                dim,
                a1,
                a2,
                p,
                scale,
                b_bar,
                eta,
                kappa,
            } => {
                let env = move |r: f64| scale * (-a1 * r.powf(p) / 2.0).exp();
                let denv = move |r: f64| {
                    if r == 0.0 && p < 1.0 {
                        0.0
                    } else {
                        -scale * (a1 * p / 2.0) * r.powf(p - 1.0) * (-a1 * r.powf(p) / 2.0).exp()
                    }
                };
                let rho_min = 1.0 - eta;
                let floor = move |r: f64| {
                    let radial = (a1 * p / 2.0).powi(2) * r.powf(2.0 * p - 2.0);
                    let tangential = if dim > 1 { r.powi(-2) } else { f64::INFINITY };
                    scale * scale
                        * rho_min
                        * rho_min
                        * radial.min(tangential).min(1.0)
                        * (-a2 * r.powf(p)).exp()
                };
                modulated(name, dim, b_bar, kappa, eta, env, denv, floor, Profile::constant(1.0))
            }
            Self::PolyDecay {
                dim,
                a1,
                a2,
                p,
                b_bar,
                eta,
            } => {
                let env = move |r: f64| (a1 / (1.0 + r.powf(p))).sqrt();
                let denv = move |r: f64| {
                    if r == 0.0 {
                        0.0
                    } else {
                        -a1.sqrt() * (p / 2.0) * r.powf(p - 1.0) * (1.0 + r.powf(p)).powf(-1.5)
                    }
                };
                let rho_min = 1.0 - eta;
                let floor = move |r: f64| {
                    let rp = r.powf(p);
                    let radial = (p * p / 4.0) * r.powf(2.0 * p - 2.0) / (1.0 + rp).powi(3);
                    let tangential = if dim > 1 {
                        1.0 / (r * r * (1.0 + rp))
                    } else {
                        f64::INFINITY
                    };
                    a2 * rho_min * rho_min * radial.min(tangential).min(1.0 / (1.0 + rp))
                };
                modulated(name, dim, b_bar, 0.0, eta, env, denv, floor, Profile::constant(1.0))
            }
            Self::TruncatedAlphaStable {
                alpha,
                sigma_lo,
                sigma_hi,
                b_bar,
            } => alpha_stable(name, alpha, sigma_lo, sigma_hi, b_bar),
        }
    }
}

fn additive_linear(name: String, dim: usize, b_bar: f64, scale: f64, a: f64, p: f64) -> Result<JumpModel> {
    let env = move |r: f64| scale * (-a * r.powf(p) / 2.0).exp();
    let floor = move |r: f64| {
        if dim > 1 {
            return 0.0;
        }
        let radial = (a * p / 2.0).powi(2) * r.powf(2.0 * p - 2.0);
        scale * scale * radial.min(1.0) * (-a * r.powf(p)).exp()
    };
    let dc = move |r: f64| -scale * (a * p / 2.0) * r.powf(p - 1.0) * (-a * r.powf(p) / 2.0).exp();
    let floor_profile = if dim > 1 {
        Profile::Zero
    } else {
        Profile::radial(floor)
    };
    JumpModel::builder(name, dim)
        .b_bar(b_bar)
        .linear_drift(diag(dim, -b_bar))
        .jump(move |z, _, out| {
            out.fill(0.0);
            out[0] = env(norm(z));
        })
        .jump_grad_x(|_, _, out| out.fill(0.0))
        .jump_grad_z(move |z, _, out| {
            out.fill(0.0);
            let r = norm(z);
            if r > 0.0 {
                let g = dc(r);
                for j in 0..dim {
                    out[j] = g * z[j] / r;
                }
            }
        })
        .envelope(Profile::radial(env))
        .floor(floor_profile)
        .density(Profile::constant(1.0))
        .build()
}

fn diag(dim: usize, v: f64) -> Vec<f64> {
    let mut a = vec![0.0; dim * dim];
    for i in 0..dim {
        a[i * dim + i] = v;
    }
    a
}

/// `c(z, x) = c_bar(|z|) u(z) rho(x)` with `u = z / |z|` and
/// `rho(x) = 1 - eta / 2 + (eta / 2) cos(x_1)`; drift `-b_bar x - kappa |x|^2 x`.
#[allow(clippy::too_many_arguments)]
fn modulated(
    name: String,
    dim: usize,
    b_bar: f64,
    kappa: f64,
    eta: f64,
    env: impl Fn(f64) -> f64 + Send + Sync + Clone + 'static,
    denv: impl Fn(f64) -> f64 + Send + Sync + Clone + 'static,
    floor: impl Fn(f64) -> f64 + Send + Sync + 'static,
    density: Profile,
) -> Result<JumpModel> {
    let rho = move |x: &[f64]| 1.0 - eta / 2.0 + eta / 2.0 * x[0].cos();
    let drho = move |x: &[f64]| -eta / 2.0 * x[0].sin();
    let (env1, env2, env3) = (env.clone(), env.clone(), env.clone());
    JumpModel::builder(name, dim)
        .b_bar(b_bar)
        .drift(move |x, out| {
            let r2: f64 = x.iter().map(|v| v * v).sum();
            for i in 0..x.len() {
                out[i] = -b_bar * x[i] - kappa * r2 * x[i];
            }
        })
        .drift_jacobian(move |x, out| {
            let d = x.len();
            let r2: f64 = x.iter().map(|v| v * v).sum();
            for i in 0..d {
                for j in 0..d {
                    let id = if i == j { 1.0 } else { 0.0 };
                    out[i * d + j] = -(b_bar + kappa * r2) * id - 2.0 * kappa * x[i] * x[j];
                }
            }
        })
        .jump(move |z, x, out| {
            let r = norm(z);
            if r == 0.0 {
                out.fill(0.0);
                return;
            }
            let s = env1(r) * rho(x) / r;
            for (o, zi) in out.iter_mut().zip(z) {
                *o = s * zi;
            }
        })
        .jump_grad_x(move |z, x, out| {
            out.fill(0.0);
            let d = x.len();
            let r = norm(z);
            if r == 0.0 {
                return;
            }
            let s = env2(r) * drho(x) / r;
            for i in 0..d {
                out[i * d] = s * z[i];
            }
        })
        .jump_grad_z(move |z, x, out| {
            out.fill(0.0);
            let d = z.len();
            let r = norm(z);
            if r == 0.0 {
                return;
            }
            let rx = rho(x);
            let radial = denv(r) * rx;
            let tangential = env3(r) * rx / r;
            for i in 0..d {
                for j in 0..d {
                    let proj = z[i] * z[j] / (r * r);
                    let id = if i == j { 1.0 } else { 0.0 };
                    out[i * d + j] = radial * proj + tangential * (id - proj);
                }
            }
        })
        .envelope(Profile::radial(env))
        .floor(Profile::radial(floor))
        .density(density)
        .build()
}

fn alpha_stable(name: String, alpha: f64, lo: f64, hi: f64, b_bar: f64) -> Result<JumpModel> {
    let mid = (hi + lo) / 2.0;
    let amp = (hi - lo) / 2.0;
    let sigma = move |x: f64| mid + amp * x.cos();
    let dsigma = move |x: f64| -amp * x.sin();
    let inv = |z: f64| if z == 0.0 { 0.0 } else { 1.0 / z };
    JumpModel::builder(name, 1)
        .b_bar(b_bar)
        .linear_drift(vec![-b_bar])
        .jump(move |z, x, out| out[0] = sigma(x[0]) * inv(z[0]))
        .jump_grad_x(move |z, x, out| out[0] = dsigma(x[0]) * inv(z[0]))
        .jump_grad_z(move |z, x, out| out[0] = -sigma(x[0]) * inv(z[0]).powi(2))
        .envelope(Profile::radial(move |r| if r == 0.0 { 0.0 } else { hi / r }))
        .floor(Profile::radial(move |r| {
            if r < 1.0 {
                0.0
            } else {
                lo * lo / r.powi(4)
            }
        }))
        .density(Profile::radial(move |r| {
            if r >= 1.0 {
                r.powf(alpha - 1.0)
            } else {
                0.0
            }
        }))
        .build()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Preset {
        Preset::parse(s, &BTreeMap::new()).unwrap()
    }

    #[test]
    fn parses_positional_and_keyed() {
        let p = parse("exp-decay(1, 2, 1, 0.2)");
        assert!(matches!(p, Preset::ExpDecay { a1, a2, scale, .. } if a1 == 1.0 && a2 == 2.0 && scale == 0.2));
        let mut keyed = BTreeMap::new();
        keyed.insert("dim".to_string(), 2.0);
        keyed.insert("scale".to_string(), 0.3);
        let p = Preset::parse("additive-linear(3)", &keyed).unwrap();
        assert_eq!(
            p,
            Preset::AdditiveLinear {
                dim: 2,
                b_bar: 3.0,
                scale: 0.3,
                a: 1.0,
                p: 1.0
            }
        );
        assert!(Preset::parse("nope(1)", &keyed).is_err());
        assert!(Preset::parse("exp-decay(1", &keyed).is_err());
        assert!(Preset::parse("exp-decay(2, 1)", &BTreeMap::new()).is_err());
        assert!(Preset::parse("poly-decay(1,1,4,5)", &BTreeMap::new()).is_err());
    }

    #[test]
    fn upper_gamma_matches_integration() {
        // Gamma(3, 2) = 2 e^{-2} (1 + 2 + 2).
        assert!((upper_gamma_int(3, 2.0) - 10.0 * (-2.0f64).exp()).abs() < 1e-15);
        assert!((upper_gamma_int(1, 0.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn floor_below_envelope_squared() {
        for text in [
            "additive-linear(3, 0.5, 1, 1)",
            "exp-decay(1, 1.5, 0.7, 0.8)",
            "exp-decay(1, 1, 2, 1)",
            "poly-decay(1, 0.5, 4)",
            "poly-decay(2, 1, 0.8)",
            "truncated-alpha-stable(0.5, 0.3, 1.2)",
        ] {
            let m = parse(text).build().unwrap();
            for i in 0..2000 {
                let r = 1e-3 + i as f64 * 0.01;
                let z = [r];
                if m.h(&z) > 0.0 {
                    assert!(m.c_floor(&z) <= m.c_bar(&z).powi(2) * (1.0 + 1e-12), "{text} at {r}");
                }
            }
        }
    }

    #[test]
    fn analytic_gradients_match_differences() {
        let mut keyed = BTreeMap::new();
        keyed.insert("dim".to_string(), 3.0);
        for text in ["exp-decay(1, 1, 1, 0.5)", "poly-decay(1, 1, 9)", "additive-linear(2)"] {
            let m = Preset::parse(text, &keyed).unwrap().build().unwrap();
            let z = [0.7, -1.1, 0.4];
            let x = [0.3, 0.2, -0.5];
            let mut exact = [0.0; 9];
            let mut fd = [0.0; 9];
            m.jump_grad_z(&z, &x, &mut exact);
            super::super::central_difference(3, &z, &mut fd, |w, o| m.jump(w, &x, o));
            for (a, b) in exact.iter().zip(&fd) {
                assert!((a - b).abs() < 1e-7, "{text}: {exact:?} vs {fd:?}");
            }
            m.jump_grad_x(&z, &x, &mut exact);
            super::super::central_difference(3, &x, &mut fd, |y, o| m.jump(&z, y, o));
            for (a, b) in exact.iter().zip(&fd) {
                assert!((a - b).abs() < 1e-7);
            }
        }
    }
}
