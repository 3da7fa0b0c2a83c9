//! Reference runs, convergence studies and their on-disk reports.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::ExperimentConfig;
use super::fit::{rate_fit_with, FitPoint, RateFit};
use crate::distance::{default_bandwidth, smoothed_tv, w1, EmpiricalMeasure};
use crate::error::{Error, Result};
use crate::integrator::{Record, Scheme, SchemeConfig, SchemeKind};
use crate::model::JumpModel;
use crate::sampler::derive_path_seed;
use crate::steps::{StepSequence, TimeGrid};

pub const REPORT_SCHEMA: &str = "jumpsde.convergence/1";

/// Path ids of burn-in runs start here so they never share noise with the
/// coupled window, which uses ids `0..paths`.
const BURN_IN_OFFSET: u64 = 1 << 40;

/// Samples standing in for the invariant law.
#[derive(Debug, Clone, Serialize)]
pub struct Reference {
    #[serde(skip)]
    pub samples: EmpiricalMeasure,
    pub step: f64,
    pub horizon: f64,
    pub paths: usize,
    pub x0: Vec<f64>,
    pub theta: Option<f64>,
    pub warnings: Vec<String>,
}

fn theta_of(model: &JumpModel) -> Option<f64> {
    model.theta().ok().filter(|t| t.is_finite())
}

fn reference_step(config: &ExperimentConfig) -> Result<f64> {
    let n_max = config.n_max();
    let gamma_last = config.steps.gamma(n_max)?;
    let step = config.reference.step.unwrap_or(gamma_last / 4.0);
    if step > gamma_last / 4.0 * (1.0 + 1e-12) {
        return Err(Error::Config(format!(
            "reference step {step} exceeds gamma_{n_max} / 4 = {}",
            gamma_last / 4.0
        )));
    }
    Ok(step)
}

fn reference_scheme(model: &JumpModel, config: &ExperimentConfig, step: f64, horizon: f64, record: Record) -> Result<Scheme> {
    let sc = SchemeConfig::new(
        SchemeKind::ConstantStepReference,
        StepSequence::constant(step)?,
        horizon,
        config.x0()?,
    )
    .with_record(record);
    Scheme::new(model, sc)
}

/// Terminal states of `reference.paths` independent constant-step runs of
/// length `reference.burn_in` from `x0`. Runs with a warning when `theta`
/// is not positive or the burn-in is shorter than `6 / theta`.
pub fn reference_invariant(config: &ExperimentConfig, threads: usize) -> Result<Reference> {
    let model = config.model.build()?;
    let step = reference_step(config)?;
    let horizon = config.reference.burn_in;
    let theta = theta_of(&model);
    let mut warnings = Vec::new();
    match theta {
        Some(t) if t > 0.0 => {
            if horizon < 6.0 / t {
                warnings.push(format!(
                    "burn-in {horizon} is shorter than 6 / theta = {:.4}",
                    6.0 / t
                ));
            }
        }
        Some(t) => warnings.push(format!(
            "theta = {t:.6} is not positive; contraction towards the invariant law is not guaranteed"
        )),
        None => warnings.push("theta could not be computed".into()),
    }
    let scheme = reference_scheme(&model, config, step, horizon, Record::Terminal)?;
    let x0 = config.x0()?;
    let n = config.reference_paths();
    let states = scheme.map_paths(n, config.seed, BURN_IN_OFFSET, threads, |_, noise| {
        Ok(scheme.run(noise, &x0)?.terminal)
    })?;
    let samples = EmpiricalMeasure::new(model.dim(), states.concat())?;
    Ok(Reference {
        samples,
        step,
        horizon,
        paths: n,
        x0,
        theta,
        warnings,
    })
}

/// A distance with its paired-bootstrap standard error.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Measured {
    pub value: f64,
    pub stderr: f64,
    pub in_window: bool,
    /// Why the row is out of the fit window.
    pub excluded: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub n: usize,
    pub gamma: f64,
    pub time: f64,
    /// `exp(-theta Gamma_n / 2) * diameter`.
    pub exp_term: Option<f64>,
    pub w1: Option<Measured>,
    pub tv: Option<Measured>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitOutcome {
    /// Checkpoints used.
    pub window: Vec<usize>,
    pub fit: Option<RateFit>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReferenceInfo {
    pub step: f64,
    pub burn_in: f64,
    pub paths: usize,
    /// 0.99 quantile of `|x - x0|` over the burned-in reference sample.
    pub diameter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub schema: String,
    pub model: String,
    pub dim: usize,
    pub seed: u64,
    pub paths: usize,
    pub theta: Option<f64>,
    pub x0: Vec<f64>,
    pub reference: ReferenceInfo,
    pub bandwidth: Option<f64>,
    pub exp_fraction: f64,
    pub max_rel_stderr: f64,
    pub rows: Vec<ConvergenceRow>,
    pub w1_fit: Option<FitOutcome>,
    pub tv_fit: Option<FitOutcome>,
    pub warnings: Vec<String>,
}

/// A finished study: the report plus the samples behind it.
#[derive(Debug, Clone)]
pub struct Convergence {
    pub report: ConvergenceReport,
    /// Burned-in reference states (the coupled window's starting points).
    pub reference: EmpiricalMeasure,
    /// Scheme and reference states at each checkpoint.
    pub scheme_states: Vec<EmpiricalMeasure>,
    pub reference_states: Vec<EmpiricalMeasure>,
}

fn select(m: &EmpiricalMeasure, idx: &[usize]) -> EmpiricalMeasure {
    let d = m.dim();
    let mut pts = Vec::with_capacity(idx.len() * d);
    for &i in idx {
        pts.extend_from_slice(m.point(i));
    }
    EmpiricalMeasure::new(d, pts).expect("non-empty selection")
}

fn std_dev(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

fn diameter(samples: &EmpiricalMeasure, x0: &[f64]) -> f64 {
    let mut r: Vec<f64> = (0..samples.len())
        .map(|i| {
            samples
                .point(i)
                .iter()
                .zip(x0)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    r.sort_by(f64::total_cmp);
    r[((r.len() - 1) as f64 * 0.99).round() as usize]
}

/// Marks each row in or out of the window. A row is kept when its bootstrap
/// error is at most `max_rel_stderr` of the value and, with `theta > 0`,
/// the exponential term is at most `exp_fraction` of the value. Without a
/// positive `theta` no row qualifies.
pub fn apply_window(m: &mut Measured, exp_term: Option<f64>, exp_fraction: f64, max_rel_stderr: f64) {
    m.excluded = if !(m.value > 0.0) {
        Some("distance is zero".into())
    } else if m.stderr > max_rel_stderr * m.value {
        Some(format!("under-resolved: stderr > {max_rel_stderr} x value"))
    } else {
        match exp_term {
            None => Some("no positive theta for the exponential term".into()),
            Some(e) if e > exp_fraction * m.value => {
                Some(format!("exponential term > {exp_fraction} x value"))
            }
            Some(_) => None,
        }
    };
    m.in_window = m.excluded.is_none();
}

fn fit_rows(rows: &[ConvergenceRow], pick: impl Fn(&ConvergenceRow) -> Option<&Measured>, seed: u64) -> FitOutcome {
    let used: Vec<&ConvergenceRow> = rows
        .iter()
        .filter(|r| pick(r).is_some_and(|m| m.in_window))
        .collect();
    let points: Vec<FitPoint> = used
        .iter()
        .map(|r| {
            let m = pick(r).expect("filtered");
            FitPoint {
                gamma: r.gamma,
                distance: m.value,
                stderr: m.stderr,
            }
        })
        .collect();
    let window = used.iter().map(|r| r.n).collect();
    match rate_fit_with(&points, 0.95, 2000, seed) {
        Ok(fit) => FitOutcome {
            window,
            fit: Some(fit),
            note: None,
        },
        Err(e) => FitOutcome {
            window,
            fit: None,
            note: Some(if points.is_empty() {
                "fit window is empty".into()
            } else {
                e.to_string()
            }),
        },
    }
}

/// Refits a report's slopes from its rows; used to check reports.
pub fn refit(report: &ConvergenceReport) -> (FitOutcome, FitOutcome) {
    (
        fit_rows(&report.rows, |r| r.w1.as_ref(), report.seed),
        fit_rows(&report.rows, |r| r.tv.as_ref(), report.seed),
    )
}

/// Decreasing-step ensembles at each checkpoint against the reference.
///
/// Each path `p` runs the configured steps from `x0` and, on the same
/// noise, the constant-step reference from the `p`-th burned-in reference
/// state. The reference marginal at every checkpoint is then a sample of
/// the reference law, and the shared noise removes most of the sampling
/// error from the distance between the two clouds.
pub fn run_convergence(config: &ExperimentConfig, threads: usize) -> Result<Convergence> {
    let model = config.model.build()?;
    let d = model.dim();
    let reference = reference_invariant(config, threads)?;
    let mut warnings = reference.warnings.clone();
    let n_max = config.n_max();
    let grid = TimeGrid::with_steps(config.steps.clone(), n_max)?;
    let times: Vec<f64> = config.checkpoints.iter().map(|&n| grid.time(n)).collect();
    let horizon = grid.time(n_max);
    let x0 = config.x0()?;

    let scheme = Scheme::new(
        &model,
        SchemeConfig::new(SchemeKind::TruncatedEuler, config.steps.clone(), horizon, x0.clone())
            .with_record(Record::Times(times.clone())),
    )?;
    let fine = reference_scheme(&model, config, reference.step, horizon, Record::Times(times.clone()))?;
    if fine.k_needed() < scheme.k_needed() {
        return Err(Error::InvalidArgument(
            "reference truncation is coarser than the scheme's".into(),
        ));
    }
    let n_ref = reference.samples.len();
    let runs = fine.map_paths(config.paths, config.seed, 0, threads, |id, noise| {
        let y0 = reference.samples.point(id as usize % n_ref);
        Ok((scheme.run(noise, &x0)?.states, fine.run(noise, y0)?.states))
    })?;
    if config.paths > n_ref {
        warnings.push(format!(
            "{} paths share {n_ref} reference starting points",
            config.paths
        ));
    }

    let n_cp = times.len();
    let gather = |which: usize| -> Result<Vec<EmpiricalMeasure>> {
        (0..n_cp)
            .map(|c| {
                let mut pts = Vec::with_capacity(config.paths * d);
                for r in &runs {
                    let s = if which == 0 { &r.0 } else { &r.1 };
                    pts.extend_from_slice(&s[c * d..(c + 1) * d]);
                }
                EmpiricalMeasure::new(d, pts)
            })
            .collect()
    };
    let scheme_states = gather(0)?;
    let reference_states = gather(1)?;

    let dist = &config.distance;
    let tv_enabled = dist.tv && d <= 3;
    if dist.tv && !tv_enabled {
        warnings.push(format!("smoothed TV skipped in dimension {d}"));
    }
    let bandwidth = tv_enabled.then(|| {
        dist.bandwidth
            .unwrap_or_else(|| default_bandwidth(&reference.samples, &reference.samples))
    });
    let diam = diameter(&reference.samples, &x0);
    let theta = reference.theta.filter(|t| *t > 0.0);

    let mut rows = Vec::with_capacity(n_cp);
    for (c, &n) in config.checkpoints.iter().enumerate() {
        let a = &scheme_states[c];
        let b = &reference_states[c];
        let w1_of = |a: &EmpiricalMeasure, b: &EmpiricalMeasure| w1(a, b, dist.directions, config.seed);
        let tv_of = |a: &EmpiricalMeasure, b: &EmpiricalMeasure| {
            smoothed_tv(a, b, bandwidth.expect("tv enabled"), dist.resolution).map(|r| r.value)
        };
        let w1_value = if dist.w1 { Some(w1_of(a, b)?) } else { None };
        let tv_value = if tv_enabled { Some(tv_of(a, b)?) } else { None };
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(c as u64 + 1);
        let mut w1_boot = Vec::with_capacity(dist.bootstrap);
        let mut tv_boot = Vec::with_capacity(dist.bootstrap);
        let n_paths = a.len();
        for _ in 0..dist.bootstrap {
            let idx: Vec<usize> = (0..n_paths).map(|_| rng.gen_range(0..n_paths)).collect();
            let (ab, bb) = (select(a, &idx), select(b, &idx));
            if dist.w1 {
                w1_boot.push(w1_of(&ab, &bb)?);
            }
            if tv_enabled {
                tv_boot.push(tv_of(&ab, &bb)?);
            }
        }
        let exp_term = theta.map(|t| (-t * times[c] / 2.0).exp() * diam);
        let measured = |value: Option<f64>, boot: &[f64]| {
            value.map(|v| {
                let mut m = Measured {
                    value: v,
                    stderr: std_dev(boot),
                    in_window: false,
                    excluded: None,
                };
                apply_window(&mut m, exp_term, config.window.exp_fraction, config.window.max_rel_stderr);
                m
            })
        };
        rows.push(ConvergenceRow {
            n,
            gamma: grid.gamma(n),
            time: times[c],
            exp_term,
            w1: measured(w1_value, &w1_boot),
            tv: measured(tv_value, &tv_boot),
        });
    }

    let w1_fit = dist.w1.then(|| fit_rows(&rows, |r| r.w1.as_ref(), config.seed));
    let tv_fit = tv_enabled.then(|| fit_rows(&rows, |r| r.tv.as_ref(), config.seed));
    let report = ConvergenceReport {
        schema: REPORT_SCHEMA.into(),
        model: model.name().to_string(),
        dim: d,
        seed: config.seed,
        paths: config.paths,
        theta: reference.theta,
        x0,
        reference: ReferenceInfo {
            step: reference.step,
            burn_in: reference.horizon,
            paths: reference.paths,
            diameter: diam,
        },
        bandwidth,
        exp_fraction: config.window.exp_fraction,
        max_rel_stderr: config.window.max_rel_stderr,
        rows,
        w1_fit,
        tv_fit,
        warnings,
    };
    Ok(Convergence {
        report,
        reference: reference.samples,
        scheme_states,
        reference_states,
    })
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `report.json`, `rows.csv`, `reference.csv` and `seeds.csv` under `dir`.
pub fn write_report(dir: &Path, run: &Convergence) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let report = &run.report;
    let mut w = create(dir, "report.json")?;
    serde_json::to_writer_pretty(&mut w, report).map_err(std::io::Error::from)?;
    writeln!(w)?;
    w.flush()?;

    let mut w = create(dir, "rows.csv")?;
    writeln!(
        w,
        "n,gamma,time,exp_term,w1,w1_stderr,w1_in_window,tv,tv_stderr,tv_in_window"
    )?;
    for r in &report.rows {
        let fields = |m: &Option<Measured>| match m {
            Some(m) => format!("{},{},{}", m.value, m.stderr, m.in_window),
            None => ",,".into(),
        };
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.n,
            r.gamma,
            r.time,
            opt(r.exp_term),
            fields(&r.w1),
            fields(&r.tv)
        )?;
    }
    w.flush()?;

    let d = run.reference.dim();
    let mut w = create(dir, "reference.csv")?;
    let header: Vec<String> = (1..=d).map(|j| format!("x{j}")).collect();
    writeln!(w, "path,{}", header.join(","))?;
    for p in 0..run.reference.len() {
        let xs: Vec<String> = run.reference.point(p).iter().map(|v| v.to_string()).collect();
        writeln!(w, "{p},{}", xs.join(","))?;
    }
    w.flush()?;

    let mut w = create(dir, "seeds.csv")?;
    writeln!(w, "path,role,master,stream")?;
    for p in 0..report.paths as u64 {
        let s = derive_path_seed(report.seed, p);
        writeln!(w, "{p},coupled,{},{}", s.master, s.path)?;
    }
    for p in 0..report.reference.paths as u64 {
        let s = derive_path_seed(report.seed, BURN_IN_OFFSET + p);
        writeln!(w, "{p},burn-in,{},{}", s.master, s.path)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn measured(value: f64, stderr: f64) -> Measured {
        Measured {
            value,
            stderr,
            in_window: false,
            excluded: None,
        }
    }

    #[test]
    fn window_rule() {
        let mut m = measured(0.1, 0.01);
        apply_window(&mut m, Some(0.01), 0.2, 0.5);
        assert!(m.in_window);
        apply_window(&mut m, Some(0.03), 0.2, 0.5);
        assert!(!m.in_window);
        apply_window(&mut m, None, 0.2, 0.5);
        assert!(!m.in_window);
        let mut m = measured(0.1, 0.06);
        apply_window(&mut m, Some(0.0), 0.2, 0.5);
        assert!(m.excluded.unwrap().contains("under-resolved"));
    }

    #[test]
    fn diameter_is_a_high_quantile() {
        let s = EmpiricalMeasure::from_scalars((0..=100).map(f64::from).collect()).unwrap();
        assert_eq!(diameter(&s, &[0.0]), 99.0);
    }
}
