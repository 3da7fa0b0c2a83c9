//! Experiment orchestration: configuration, reference samples, convergence
//! studies and the smaller diagnostics behind the CLI subcommands.

mod config;
mod convergence;
mod fit;

pub use config::{
    AuditConfig, DistanceConfig, ExperimentConfig, MalliavinConfig, ModelSpec, ReferenceConfig,
    SimulateConfig, WindowConfig,
};
pub use convergence::{
    apply_window, reference_invariant, refit, run_convergence, write_report, Convergence,
    ConvergenceReport, ConvergenceRow, FitOutcome, Measured, Reference, ReferenceInfo,
    REPORT_SCHEMA,
};
pub use fit::{rate_fit, rate_fit_with, FitPoint, RateFit};

use std::io::Write;

use serde::Serialize;

use crate::error::Result;
use crate::integrator::{Ensemble, Record, Scheme, SchemeConfig, SchemeKind};
use crate::malliavin::malliavin_state;
use crate::steps::TimeGrid;

/// Horizon of the `simulate` subcommand: `[simulate] horizon` or `Gamma_{n_max}`.
pub fn simulate_horizon(config: &ExperimentConfig) -> Result<f64> {
    match config.simulate.horizon {
        Some(h) => Ok(h),
        None => Ok(TimeGrid::with_steps(config.steps.clone(), config.n_max())?.last_time()),
    }
}

/// Terminal states of `config.paths` runs of the `[simulate]` scheme.
pub fn simulate_ensemble(config: &ExperimentConfig, threads: usize) -> Result<Ensemble> {
    let model = config.model.build()?;
    let sc = SchemeConfig::new(
        config.simulate.scheme,
        config.steps.clone(),
        simulate_horizon(config)?,
        config.x0()?,
    );
    Scheme::new(&model, sc)?.ensemble(config.paths, config.seed, threads)
}

/// `path,x1..xd` rows of an ensemble's terminal states.
pub fn write_ensemble_csv<W: Write>(ensemble: &Ensemble, mut w: W) -> Result<()> {
    let header: Vec<String> = (1..=ensemble.dim).map(|j| format!("x{j}")).collect();
    writeln!(w, "path,{}", header.join(","))?;
    for p in 0..ensemble.n_paths {
        let xs: Vec<String> = ensemble.terminal_state(p).iter().map(|v| v.to_string()).collect();
        writeln!(w, "{p},{}", xs.join(","))?;
    }
    Ok(())
}

/// Per-path Malliavin summary at time `[malliavin] t`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticRow {
    pub path: usize,
    pub retained_jumps: usize,
    pub chi: f64,
    pub a: f64,
    pub lambda_min: f64,
    pub eig_lower_bound: f64,
    pub margin: f64,
    pub inversion_error: f64,
}

pub fn malliavin_diagnostics(config: &ExperimentConfig, threads: usize) -> Result<Vec<DiagnosticRow>> {
    let model = config.model.build()?;
    let t = config.malliavin.t;
    let sc = SchemeConfig::new(SchemeKind::Auxiliary, config.steps.clone(), t, config.x0()?)
        .with_record(Record::Terminal)
        .with_events();
    let scheme = Scheme::new(&model, sc)?;
    let x0 = config.x0()?;
    scheme.map_paths(config.malliavin.paths, config.seed, 0, threads, |id, noise| {
        let traj = scheme.run(noise, &x0)?;
        let s = malliavin_state(&scheme, noise, &traj)?;
        Ok(DiagnosticRow {
            path: id as usize,
            retained_jumps: s.marks.len(),
            chi: s.chi,
            a: s.a,
            lambda_min: s.lambda_min,
            eig_lower_bound: s.eig_lower_bound,
            margin: s.margin,
            inversion_error: s.inversion_error,
        })
    })
}

pub fn write_diagnostics_csv<W: Write>(rows: &[DiagnosticRow], mut w: W) -> Result<()> {
    writeln!(
        w,
        "path,retained_jumps,chi,a,lambda_min,eig_lower_bound,margin,inversion_error"
    )?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.path, r.retained_jumps, r.chi, r.a, r.lambda_min, r.eig_lower_bound, r.margin, r.inversion_error
        )?;
    }
    Ok(())
}
