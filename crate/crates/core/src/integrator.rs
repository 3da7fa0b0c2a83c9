//! The truncated Euler scheme on a decreasing-step grid, the auxiliary
//! process with Gaussian compensation of the discarded jumps, constant-step
//! reference runs, synchronous coupling and path ensembles.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Compensator, JumpModel, TailTable};
use crate::sampler::{derive_path_seed, JumpRef, NoiseRealization, NoiseSampler, SeedSpec};
use crate::steps::{StepSequence, TimeGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeKind {
    /// Frozen pre-interval state for drift and every retained jump.
    TruncatedEuler,
    /// Exact jump times, RK4 drift sub-steps and the `a_t Delta` shift.
    Auxiliary,
    /// Truncated Euler on a constant grid with the level fixed at `M(gamma)`.
    ConstantStepReference,
}

/// Which states a trajectory keeps.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Record {
    #[default]
    Terminal,
    /// `t = 0`, every grid time before the horizon, and the horizon.
    Grid,
    /// The given non-decreasing times in `[0, horizon]`.
    Times(Vec<f64>),
}

fn default_substeps() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeConfig {
    pub kind: SchemeKind,
    pub steps: StepSequence,
    pub horizon: f64,
    pub x0: Vec<f64>,
    /// RK4 sub-steps per grid interval for the auxiliary scheme.
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    #[serde(default)]
    pub record: Record,
    /// Keep the drift and jump events needed to replay tangent flows.
    #[serde(default)]
    pub record_events: bool,
}

impl SchemeConfig {
    pub fn new(kind: SchemeKind, steps: StepSequence, horizon: f64, x0: Vec<f64>) -> Self {
        Self {
            kind,
            steps,
            horizon,
            x0,
            substeps: default_substeps(),
            record: Record::Terminal,
            record_events: false,
        }
    }

    pub fn with_record(mut self, record: Record) -> Self {
        self.record = record;
        self
    }

    pub fn with_events(mut self) -> Self {
        self.record_events = true;
        self
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "horizon must be positive, got {}",
                self.horizon
            )));
        }
        if self.x0.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: self.x0.len(),
            });
        }
        if self.substeps == 0 {
            return Err(Error::InvalidArgument("substeps must be at least 1".into()));
        }
        if self.kind == SchemeKind::ConstantStepReference
            && !matches!(self.steps, StepSequence::Constant { .. })
        {
            return Err(Error::InvalidArgument(
                "the constant-step reference needs constant steps".into(),
            ));
        }
        if let Record::Times(ts) = &self.record {
            if ts.windows(2).any(|w| w[1] < w[0]) {
                return Err(Error::InvalidArgument("record times must be sorted".into()));
            }
            if ts
                .iter()
                .any(|&t| !(t >= 0.0 && t <= self.horizon))
            {
                return Err(Error::InvalidArgument(format!(
                    "record times must lie in [0, {}]",
                    self.horizon
                )));
            }
        }
        Ok(())
    }
}

/// One step of the auxiliary dynamics, kept for flow replay.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Event {
    /// RK4 step of length `h` from state `x` (shift already applied).
    Drift { t: f64, h: f64, x: Vec<f64> },
    /// Retained jump `(k, i)` at time `t` seen from left limit `x`.
    Jump { t: f64, k: usize, i: usize, x: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub dim: usize,
    pub kind: SchemeKind,
    pub times: Vec<f64>,
    /// Row-major, one row per entry of `times`.
    pub states: Vec<f64>,
    pub terminal: Vec<f64>,
    pub horizon: f64,
    pub events: Vec<Event>,
}

impl Trajectory {
    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `time,x1,...,xd` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let header: Vec<String> = (1..=self.dim).map(|i| format!("x{i}")).collect();
        writeln!(w, "time,{}", header.join(","))?;
        for (i, t) in self.times.iter().enumerate() {
            let row: Vec<String> = self.state(i).iter().map(|v| format!("{v:e}")).collect();
            writeln!(w, "{t:e},{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Grid reaching `horizon` and the number of intervals meeting `(0, horizon]`.
/// A finite step list may end exactly at the horizon.
fn grid_for(steps: &StepSequence, horizon: f64) -> Result<(TimeGrid, usize)> {
    let grid = match (TimeGrid::covering(steps.clone(), horizon), steps.len()) {
        (Ok(g), _) => g,
        (Err(Error::OutOfRange { .. }), Some(n)) => {
            let g = TimeGrid::with_steps(steps.clone(), n)?;
            if g.last_time() < horizon {
                return Err(Error::InvalidArgument(format!(
                    "step list sums to {}, short of the horizon {horizon}",
                    g.last_time()
                )));
            }
            g
        }
        (Err(e), _) => return Err(e),
    };
    let n = grid
        .interval_of_jump(horizon)
        .expect("grid covers the horizon");
    Ok((grid, n + 1))
}

/// A scheme bound to a model: grid, tail table, truncation levels and
/// sampler prepared once and shared by every path.
#[derive(Debug, Clone)]
pub struct Scheme {
    model: JumpModel,
    config: SchemeConfig,
    grid: TimeGrid,
    table: TailTable,
    compensator: Compensator,
    sampler: NoiseSampler,
    n_steps: usize,
    k_needed: usize,
    record_times: Vec<f64>,
}

impl Scheme {
    pub fn new(model: &JumpModel, config: SchemeConfig) -> Result<Self> {
        config.validate(model.dim())?;
        let (grid, n_steps) = grid_for(&config.steps, config.horizon)?;
        let gamma_min = (1..=n_steps)
            .map(|n| grid.gamma(n))
            .fold(f64::INFINITY, f64::min);
        let table = TailTable::for_gamma(model, gamma_min)?;
        Self::assemble(model, config, grid, table, n_steps)
    }

    /// As [`Scheme::new`] but reusing a table that already reaches
    /// `M(gamma_min)`.
    pub fn with_table(model: &JumpModel, config: SchemeConfig, table: &TailTable) -> Result<Self> {
        config.validate(model.dim())?;
        let (grid, n_steps) = grid_for(&config.steps, config.horizon)?;
        Self::assemble(model, config, grid, table.clone(), n_steps)
    }

    fn assemble(
        model: &JumpModel,
        config: SchemeConfig,
        grid: TimeGrid,
        table: TailTable,
        n_steps: usize,
    ) -> Result<Self> {
        let fixed = match (config.kind, &config.steps) {
            (SchemeKind::ConstantStepReference, StepSequence::Constant { step }) => {
                Some(table.truncation_level(*step)?)
            }
            _ => None,
        };
        let compensator = Compensator::new(&grid, &table, n_steps, fixed)?;
        let k_needed = compensator.levels.iter().copied().max().unwrap_or(1);
        let sampler = NoiseSampler::new(model, &table, k_needed)?;
        let record_times = match &config.record {
            Record::Terminal => vec![config.horizon],
            Record::Grid => {
                let mut ts = grid.times()[..n_steps].to_vec();
                ts.push(config.horizon);
                ts.dedup();
                ts
            }
            Record::Times(ts) => ts.clone(),
        };
        Ok(Self {
            model: model.clone(),
            config,
            grid,
            table,
            compensator,
            sampler,
            n_steps,
            k_needed,
            record_times,
        })
    }

    pub fn model(&self) -> &JumpModel {
        &self.model
    }

    pub fn config(&self) -> &SchemeConfig {
        &self.config
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn table(&self) -> &TailTable {
        &self.table
    }

    pub fn compensator(&self) -> &Compensator {
        &self.compensator
    }

    /// Grid intervals touched by `(0, horizon]`.
    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Largest truncation level over the horizon.
    pub fn k_needed(&self) -> usize {
        self.k_needed
    }

    pub fn record_times(&self) -> &[f64] {
        &self.record_times
    }

    /// Truncation level `M(gamma_{n+1})` in force at time `t`.
    pub fn level_at(&self, t: f64) -> Option<usize> {
        let n = self.grid.interval_of_jump(t)?;
        self.compensator.levels.get(n).copied()
    }

    pub fn noise(&self, seed: SeedSpec) -> Result<NoiseRealization> {
        self.sampler.sample(self.config.horizon, seed)
    }

    pub fn run(&self, noise: &NoiseRealization, x0: &[f64]) -> Result<Trajectory> {
        let d = self.model.dim();
        if x0.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: x0.len(),
            });
        }
        if noise.dim != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: noise.dim,
            });
        }
        noise.check_coverage(self.k_needed, self.config.horizon)?;
        let jumps = noise.merged(self.k_needed);
        match self.config.kind {
            SchemeKind::TruncatedEuler | SchemeKind::ConstantStepReference => {
                Ok(self.run_euler(noise, &jumps, x0))
            }
            SchemeKind::Auxiliary => Ok(self.run_auxiliary(noise, &jumps, x0)),
        }
    }

    /// Both starting points driven by the same noise.
    pub fn run_coupled(
        &self,
        noise: &NoiseRealization,
        x0: &[f64],
        y0: &[f64],
    ) -> Result<(Trajectory, Trajectory)> {
        Ok((self.run(noise, x0)?, self.run(noise, y0)?))
    }

    fn output(&self, times: Vec<f64>, states: Vec<f64>, terminal: Vec<f64>, events: Vec<Event>) -> Trajectory {
        Trajectory {
            dim: self.model.dim(),
            kind: self.config.kind,
            times,
            states,
            terminal,
            horizon: self.config.horizon,
            events,
        }
    }

    fn run_euler(&self, noise: &NoiseRealization, jumps: &[JumpRef], x0: &[f64]) -> Trajectory {
        let d = self.model.dim();
        let horizon = self.config.horizon;
        let rec = &self.record_times;
        let mut states = Vec::with_capacity(rec.len() * d);
        let mut rp = 0;
        while rp < rec.len() && rec[rp] <= 0.0 {
            states.extend_from_slice(x0);
            rp += 1;
        }
        let mut x = x0.to_vec();
        let mut drift = vec![0.0; d];
        let mut jump = vec![0.0; d];
        let mut acc = vec![0.0; d];
        let emit = |states: &mut Vec<f64>, x: &[f64], drift: &[f64], acc: &[f64], dt: f64| {
            states.extend((0..d).map(|i| x[i] + dt * drift[i] + acc[i]));
        };
        let mut jp = 0;
        for n in 0..self.n_steps {
            let t0 = self.grid.time(n);
            let t1 = self.grid.time(n + 1).min(horizon);
            let level = self.compensator.levels[n];
            self.model.drift(&x, &mut drift);
            acc.iter_mut().for_each(|a| *a = 0.0);
            while jp < jumps.len() && jumps[jp].time <= t1 {
                let j = jumps[jp];
                while rp < rec.len() && rec[rp] < j.time {
                    emit(&mut states, &x, &drift, &acc, rec[rp] - t0);
                    rp += 1;
                }
                if j.k as usize <= level {
                    self.model
                        .jump(noise.mark(j.k as usize, j.i as usize), &x, &mut jump);
                    acc.iter_mut().zip(&jump).for_each(|(a, v)| *a += v);
                }
                jp += 1;
            }
            while rp < rec.len() && rec[rp] <= t1 {
                emit(&mut states, &x, &drift, &acc, rec[rp] - t0);
                rp += 1;
            }
            let dt = t1 - t0;
            for i in 0..d {
                x[i] += dt * drift[i] + acc[i];
            }
        }
        self.output(rec.clone(), states, x, Vec::new())
    }

    fn run_auxiliary(&self, noise: &NoiseRealization, jumps: &[JumpRef], x0: &[f64]) -> Trajectory {
        let d = self.model.dim();
        let horizon = self.config.horizon;
        let rec = &self.record_times;
        let comp = &self.compensator;
        let keep_events = self.config.record_events;
        let mut events = Vec::new();
        let mut states = Vec::with_capacity(rec.len() * d);
        let mut rp = 0;
        while rp < rec.len() && rec[rp] <= 0.0 {
            states.extend_from_slice(x0);
            rp += 1;
        }
        let mut x = x0.to_vec();
        let mut rk = Rk4::new(d);
        let mut jump = vec![0.0; d];
        let mut jp = 0;
        let mut t = 0.0;
        let mut a_prev = 0.0;
        let substeps = self.config.substeps;
        for n in 0..self.n_steps {
            let t0 = self.grid.time(n);
            let full_end = self.grid.time(n + 1);
            let t1 = full_end.min(horizon);
            let h = (full_end - t0) / substeps as f64;
            let level = self.compensator.levels[n];
            let mut s = 0;
            loop {
                let sub_end = if s + 1 >= substeps {
                    t1
                } else {
                    (t0 + (s + 1) as f64 * h).min(t1)
                };
                // Discarded jumps must not split the drift sub-steps.
                while jp < jumps.len() && jumps[jp].time <= t1 && jumps[jp].k as usize > level {
                    jp += 1;
                }
                let next_jump = jumps
                    .get(jp)
                    .map(|j| j.time)
                    .filter(|&tj| tj <= t1)
                    .unwrap_or(f64::INFINITY);
                let next_rec = rec
                    .get(rp)
                    .copied()
                    .filter(|&tr| tr <= t1)
                    .unwrap_or(f64::INFINITY);
                let u = sub_end.min(next_jump).min(next_rec);
                if u > t {
                    let a_u = comp.a(u);
                    for (xi, dl) in x.iter_mut().zip(&noise.delta) {
                        *xi += (a_u - a_prev) * dl;
                    }
                    a_prev = a_u;
                    if keep_events {
                        events.push(Event::Drift {
                            t,
                            h: u - t,
                            x: x.clone(),
                        });
                    }
                    rk.step(&self.model, &mut x, u - t);
                    t = u;
                }
                if next_jump <= t {
                    let j = jumps[jp];
                    jp += 1;
                    let z = noise.mark(j.k as usize, j.i as usize);
                    if keep_events {
                        events.push(Event::Jump {
                            t,
                            k: j.k as usize,
                            i: j.i as usize,
                            x: x.clone(),
                        });
                    }
                    self.model.jump(z, &x, &mut jump);
                    x.iter_mut().zip(&jump).for_each(|(a, v)| *a += v);
                    continue;
                }
                if next_rec <= t {
                    states.extend_from_slice(&x);
                    rp += 1;
                    continue;
                }
                if t >= t1 {
                    break;
                }
                if t >= sub_end {
                    s += 1;
                }
            }
        }
        self.output(rec.clone(), states, x, events)
    }

    /// Runs `f` on paths `offset .. offset + n_paths` with noise from
    /// `derive_path_seed(master, id)`; results come back in path order
    /// whatever the thread count.
    pub fn map_paths<T, F>(
        &self,
        n_paths: usize,
        master: u64,
        offset: u64,
        threads: usize,
        f: F,
    ) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(u64, &NoiseRealization) -> Result<T> + Sync,
    {
        if n_paths == 0 {
            return Err(Error::InvalidArgument("n_paths must be at least 1".into()));
        }
        let work = |id: u64| -> std::result::Result<T, (u64, Error)> {
            let noise = self.noise(derive_path_seed(master, id)).map_err(|e| (id, e))?;
            f(id, &noise).map_err(|e| (id, e))
        };
        let ids = offset..offset + n_paths as u64;
        let results: Vec<_> = if threads <= 1 {
            ids.map(work).collect()
        } else {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?
                .install(|| ids.into_par_iter().map(work).collect())
        };
        let mut out = Vec::with_capacity(n_paths);
        let mut failures = Vec::new();
        for r in results {
            match r {
                Ok(v) => out.push(v),
                Err(e) => failures.push(e),
            }
        }
        if failures.is_empty() {
            Ok(out)
        } else {
            Err(Error::Paths(failures))
        }
    }

    pub fn ensemble(&self, n_paths: usize, master: u64, threads: usize) -> Result<Ensemble> {
        let x0 = self.config.x0.clone();
        let runs = self.map_paths(n_paths, master, 0, threads, |_, noise| self.run(noise, &x0))?;
        let d = self.model.dim();
        let mut terminal = Vec::with_capacity(n_paths * d);
        let mut records = Vec::with_capacity(n_paths * self.record_times.len() * d);
        for r in &runs {
            terminal.extend_from_slice(&r.terminal);
            records.extend_from_slice(&r.states);
        }
        Ok(Ensemble {
            dim: d,
            n_paths,
            record_times: self.record_times.clone(),
            terminal,
            records,
            seeds: (0..n_paths as u64).map(|i| derive_path_seed(master, i)).collect(),
        })
    }
}

/// Terminal and recorded states of independent paths, in path order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ensemble {
    pub dim: usize,
    pub n_paths: usize,
    pub record_times: Vec<f64>,
    /// `n_paths x dim`.
    pub terminal: Vec<f64>,
    /// `n_paths x record_times.len() x dim`.
    pub records: Vec<f64>,
    pub seeds: Vec<SeedSpec>,
}

impl Ensemble {
    pub fn terminal_state(&self, p: usize) -> &[f64] {
        &self.terminal[p * self.dim..(p + 1) * self.dim]
    }

    /// All paths' states at record index `r`, `n_paths x dim`.
    pub fn at_record(&self, r: usize) -> Vec<f64> {
        let nr = self.record_times.len();
        let d = self.dim;
        (0..self.n_paths)
            .flat_map(|p| {
                let base = (p * nr + r) * d;
                self.records[base..base + d].iter().copied()
            })
            .collect()
    }

    /// `path,master,stream` rows.
    pub fn write_seeds_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "path,master,stream")?;
        for (p, s) in self.seeds.iter().enumerate() {
            writeln!(w, "{p},{},{}", s.master, s.path)?;
        }
        Ok(())
    }
}

/// `n_paths` terminal states of `config` under `model`.
pub fn ensemble_terminal(
    model: &JumpModel,
    config: SchemeConfig,
    n_paths: usize,
    master_seed: u64,
    threads: usize,
) -> Result<Ensemble> {
    Scheme::new(model, config)?.ensemble(n_paths, master_seed, threads)
}

fn one_off(
    model: &JumpModel,
    kind: SchemeKind,
    grid: &TimeGrid,
    horizon: f64,
    noise: &NoiseRealization,
    x0: &[f64],
) -> Result<Trajectory> {
    let config = SchemeConfig::new(kind, grid.sequence().clone(), horizon, x0.to_vec())
        .with_record(Record::Grid);
    Scheme::new(model, config)?.run(noise, x0)
}

/// Truncated Euler path on the grid times up to `horizon`.
pub fn simulate_truncated_euler(
    model: &JumpModel,
    grid: &TimeGrid,
    horizon: f64,
    noise: &NoiseRealization,
    x0: &[f64],
) -> Result<Trajectory> {
    one_off(model, SchemeKind::TruncatedEuler, grid, horizon, noise, x0)
}

/// Auxiliary path on the grid times up to `horizon`.
pub fn simulate_auxiliary(
    model: &JumpModel,
    grid: &TimeGrid,
    horizon: f64,
    noise: &NoiseRealization,
    x0: &[f64],
) -> Result<Trajectory> {
    one_off(model, SchemeKind::Auxiliary, grid, horizon, noise, x0)
}

pub fn simulate_coupled(
    model: &JumpModel,
    config: &SchemeConfig,
    noise: &NoiseRealization,
    x0: &[f64],
    y0: &[f64],
) -> Result<(Trajectory, Trajectory)> {
    Scheme::new(model, config.clone())?.run_coupled(noise, x0, y0)
}

/// Classical RK4 with preallocated stages.
pub(crate) struct Rk4 {
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
}

impl Rk4 {
    pub(crate) fn new(d: usize) -> Self {
        Self {
            k: [vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]],
            tmp: vec![0.0; d],
        }
    }

    pub(crate) fn step(&mut self, model: &JumpModel, x: &mut [f64], h: f64) {
        let [k1, k2, k3, k4] = &mut self.k;
        let tmp = &mut self.tmp;
        model.drift(x, k1);
        for i in 0..x.len() {
            tmp[i] = x[i] + 0.5 * h * k1[i];
        }
        model.drift(tmp, k2);
        for i in 0..x.len() {
            tmp[i] = x[i] + 0.5 * h * k2[i];
        }
        model.drift(tmp, k3);
        for i in 0..x.len() {
            tmp[i] = x[i] + h * k3[i];
        }
        model.drift(tmp, k4);
        for i in 0..x.len() {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Preset, Profile};
    use crate::sampler::AnnulusJumps;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    fn preset(s: &str) -> JumpModel {
        Preset::parse(s, &BTreeMap::new()).unwrap().build().unwrap()
    }

    fn quiet_noise(d: usize, k: usize, horizon: f64) -> NoiseRealization {
        NoiseRealization {
            dim: d,
            horizon,
            seed: derive_path_seed(0, 0),
            annuli: vec![AnnulusJumps::default(); k],
            delta: vec![0.0; d],
        }
    }

    fn decaying(d: usize) -> JumpModel {
        let mut a = vec![0.0; d * d];
        for i in 0..d {
            a[i * d + i] = -1.0;
        }
        JumpModel::builder("ou", d)
            .linear_drift(a)
            .envelope(Profile::radial(|r| (-r).exp()))
            .build()
            .unwrap()
    }

    #[test]
    fn zero_drift_no_jumps_is_constant() {
        let m = JumpModel::builder("still", 2).build().unwrap();
        let cfg = SchemeConfig::new(
            SchemeKind::TruncatedEuler,
            StepSequence::harmonic(0.5).unwrap(),
            3.0,
            vec![1.0, -2.0],
        )
        .with_record(Record::Grid);
        let s = Scheme::new(&m, cfg).unwrap();
        let tr = s.run(&quiet_noise(2, s.k_needed(), 3.0), &[1.0, -2.0]).unwrap();
        assert!(tr.states.chunks(2).all(|x| x == [1.0, -2.0]));
    }

    #[test]
    fn one_euler_step() {
        let m = decaying(1);
        let cfg = SchemeConfig::new(
            SchemeKind::TruncatedEuler,
            StepSequence::explicit(vec![0.25]).unwrap(),
            0.25,
            vec![2.0],
        );
        let s = Scheme::new(&m, cfg).unwrap();
        let tr = s.run(&quiet_noise(1, s.k_needed(), 0.25), &[2.0]).unwrap();
        assert_eq!(tr.terminal, vec![2.0 * 0.75]);
    }

    #[test]
    fn auxiliary_solves_linear_ode() {
        let m = decaying(1);
        let cfg = SchemeConfig::new(
            SchemeKind::Auxiliary,
            StepSequence::harmonic(0.5).unwrap(),
            2.0,
            vec![1.0],
        );
        let s = Scheme::new(&m, cfg).unwrap();
        let tr = s.run(&quiet_noise(1, s.k_needed(), 2.0), &[1.0]).unwrap();
        assert!((tr.terminal[0] - (-2.0f64).exp()).abs() < 1e-7);
    }

    #[test]
    fn frozen_state_within_an_interval() {
        // c(z, x) = x z: both jumps of one interval see the same state.
        let m = JumpModel::builder("mult", 1)
            .jump(|z, x, out| out[0] = x[0] * z[0])
            .build()
            .unwrap();
        let cfg = SchemeConfig::new(
            SchemeKind::TruncatedEuler,
            StepSequence::explicit(vec![1.0]).unwrap(),
            1.0,
            vec![1.0],
        );
        let s = Scheme::new(&m, cfg).unwrap();
        let mut noise = quiet_noise(1, s.k_needed(), 1.0);
        noise.annuli[0] = AnnulusJumps {
            times: vec![0.2, 0.7],
            marks: vec![0.5, 0.5],
        };
        let tr = s.run(&noise, &[1.0]).unwrap();
        assert_eq!(tr.terminal, vec![2.0]);
    }

    #[test]
    fn jump_on_grid_time_belongs_to_earlier_interval() {
        let m = JumpModel::builder("mult", 1)
            .jump(|z, x, out| out[0] = x[0] * z[0])
            .build()
            .unwrap();
        let cfg = SchemeConfig::new(
            SchemeKind::TruncatedEuler,
            StepSequence::explicit(vec![0.5, 0.5]).unwrap(),
            1.0,
            vec![1.0],
        )
        .with_record(Record::Grid);
        let s = Scheme::new(&m, cfg).unwrap();
        let mut noise = quiet_noise(1, s.k_needed(), 1.0);
        noise.annuli[0] = AnnulusJumps {
            times: vec![0.5],
            marks: vec![1.0],
        };
        let tr = s.run(&noise, &[1.0]).unwrap();
        assert_eq!(tr.times, vec![0.0, 0.5, 1.0]);
        assert_eq!(tr.states, vec![1.0, 2.0, 2.0]);
    }

    #[test]
    fn under_covered_noise_is_rejected() {
        let m = preset("additive-linear(1, 1, 1, 1)");
        let cfg = SchemeConfig::new(
            SchemeKind::TruncatedEuler,
            StepSequence::harmonic(0.5).unwrap(),
            2.0,
            vec![0.0],
        );
        let s = Scheme::new(&m, cfg).unwrap();
        let noise = quiet_noise(1, s.k_needed() - 1, 2.0);
        assert!(matches!(s.run(&noise, &[0.0]), Err(Error::Coverage { .. })));
    }

    #[test]
    fn additive_coupling_difference_is_deterministic() {
        let m = preset("additive-linear(1.5, 1, 1, 1)");
        let seq = StepSequence::harmonic(0.5).unwrap();
        let cfg = SchemeConfig::new(SchemeKind::TruncatedEuler, seq.clone(), 4.0, vec![0.0])
            .with_record(Record::Grid);
        let s = Scheme::new(&m, cfg).unwrap();
        let noise = s.noise(derive_path_seed(3, 3)).unwrap();
        let (a, b) = s.run_coupled(&noise, &[0.0], &[1.0]).unwrap();
        let mut expected = 1.0;
        for (i, t) in a.times.iter().enumerate() {
            if i > 0 {
                let n = s.grid().interval_of_jump(*t).unwrap();
                let dt = t - s.grid().time(n);
                expected *= 1.0 - 1.5 * dt;
            }
            assert!(((b.state(i)[0] - a.state(i)[0]) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_starts_identical_paths() {
        let m = preset("exp-decay(1, 1, 1, 0.5)");
        let cfg = SchemeConfig::new(
            SchemeKind::Auxiliary,
            StepSequence::harmonic(0.5).unwrap(),
            1.0,
            vec![0.3],
        );
        let s = Scheme::new(&m, cfg).unwrap();
        let noise = s.noise(derive_path_seed(1, 2)).unwrap();
        let (a, b) = s.run_coupled(&noise, &[0.3], &[0.3]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ensembles_do_not_depend_on_threads() {
        let m = preset("exp-decay(1, 1, 1, 0.5)");
        let cfg = SchemeConfig::new(
            SchemeKind::TruncatedEuler,
            StepSequence::harmonic(0.5).unwrap(),
            2.0,
            vec![0.0],
        );
        let s = Scheme::new(&m, cfg.clone()).unwrap();
        let one = s.ensemble(64, 5, 1).unwrap();
        let eight = s.ensemble(64, 5, 8).unwrap();
        assert_eq!(one, eight);
        let single = s.run(&s.noise(derive_path_seed(5, 0)).unwrap(), &[0.0]).unwrap();
        assert_eq!(one.terminal_state(0), &single.terminal[..]);
    }

    #[test]
    fn euler_and_auxiliary_converge_together() {
        // Mean |X_1^euler - X_1^aux| under shared noise, for dyadic constant
        // steps.
        let m = preset("additive-linear(1, 1, 1, 1)");
        let mut errs = Vec::new();
        let gammas = [2f64.powi(-4), 2f64.powi(-6), 2f64.powi(-8)];
        for &g in &gammas {
            let seq = StepSequence::constant(g).unwrap();
            let e = Scheme::new(
                &m,
                SchemeConfig::new(SchemeKind::TruncatedEuler, seq.clone(), 1.0, vec![1.0]),
            )
            .unwrap();
            let a = Scheme::new(&m, SchemeConfig::new(SchemeKind::Auxiliary, seq, 1.0, vec![1.0]))
                .unwrap();
            let mut total = 0.0;
            let n = 400;
            for p in 0..n {
                let noise = a.noise(derive_path_seed(17, p)).unwrap();
                let xe = e.run(&noise, &[1.0]).unwrap().terminal[0];
                let xa = a.run(&noise, &[1.0]).unwrap().terminal[0];
                total += (xe - xa).abs();
            }
            errs.push(total / n as f64);
        }
        let slope = (errs[0] / errs[2]).ln() / (gammas[0] / gammas[2]).ln();
        assert!(slope >= 0.4, "{errs:?} slope {slope}");
    }

    #[test]
    fn euler_stationary_mean() {
        let p: Preset = Preset::parse("additive-linear(1, 1, 1, 1)", &BTreeMap::new()).unwrap();
        let m = p.build().unwrap();
        let (mean, var) = p.stationary_moments().unwrap();
        let cfg = SchemeConfig::new(
            SchemeKind::ConstantStepReference,
            StepSequence::constant(0.01).unwrap(),
            6.0,
            vec![mean],
        );
        let e = ensemble_terminal(&m, cfg, 4000, 9, 1).unwrap();
        let n = e.terminal.len() as f64;
        let m_hat = e.terminal.iter().sum::<f64>() / n;
        let se = (var / n).sqrt();
        assert!((m_hat - mean).abs() < 3.0 * se + 0.01 * mean.abs(), "{m_hat} vs {mean}");
    }

    #[test]
    fn record_times_match_terminal_runs() {
        let m = preset("exp-decay(1, 1, 1, 0.5)");
        let seq = StepSequence::harmonic(0.5).unwrap();
        for kind in [SchemeKind::TruncatedEuler, SchemeKind::Auxiliary] {
            let full = Scheme::new(
                &m,
                SchemeConfig::new(kind, seq.clone(), 2.0, vec![0.5])
                    .with_record(Record::Times(vec![0.0, 0.7, 2.0])),
            )
            .unwrap();
            let short = Scheme::new(&m, SchemeConfig::new(kind, seq.clone(), 0.7, vec![0.5])).unwrap();
            let noise = full.noise(derive_path_seed(4, 4)).unwrap();
            let a = full.run(&noise, &[0.5]).unwrap();
            assert_eq!(a.state(0), &[0.5]);
            assert_eq!(a.state(2), &a.terminal[..]);
            // Short run needs no more annuli than the long one.
            let b = short.run(&noise, &[0.5]).unwrap();
            assert!((a.state(1)[0] - b.terminal[0]).abs() < 1e-12, "{kind:?}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn zero_jumps_on_added_annuli_leave_path_unchanged(seed in any::<u64>()) {
            // c vanishes beyond |z| = 1: enlarging the retained set adds nothing.
            let m = JumpModel::builder("local", 1)
                .linear_drift(vec![-1.0])
                .jump(|z, _x, out| out[0] = if z[0].abs() <= 1.0 { z[0] } else { 0.0 })
                .envelope(Profile::radial(|r| (-r).exp()))
                .build()
                .unwrap();
            let seq = StepSequence::harmonic(0.5).unwrap();
            let coarse = Scheme::new(&m, SchemeConfig::new(SchemeKind::TruncatedEuler, seq.clone(), 1.0, vec![0.0])).unwrap();
            let noise = coarse.noise(derive_path_seed(seed, 0)).unwrap();
            let base = coarse.run(&noise, &[0.0]).unwrap().terminal[0];
            let mut trimmed = noise.clone();
            for a in trimmed.annuli.iter_mut().skip(1) {
                *a = AnnulusJumps::default();
            }
            let again = coarse.run(&trimmed, &[0.0]).unwrap().terminal[0];
            prop_assert_eq!(base, again);
        }
    }
}
