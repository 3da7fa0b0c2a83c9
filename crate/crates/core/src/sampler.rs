//! Driving randomness: per-annulus Poisson jump times and marks, and the
//! Gaussian vector of the compensated scheme.
//!
//! Every path draws from a ChaCha8 generator seeded by the master seed, with
//! the path id as stream number. Within a stream each (label, annulus) pair
//! owns a disjoint `2^40`-word window, so the randomness of annulus `k` does
//! not depend on how many annuli or which other labels were consumed.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{norm, JumpModel, TailTable};

/// Stream labels inside a path stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[repr(u8)]
pub enum StreamLabel {
    Times = 0,
    Marks = 1,
    Gaussian = 2,
}

/// Seed provenance of one path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedSpec {
    pub master: u64,
    pub path: u64,
}

impl SeedSpec {
    /// Generator positioned at the window of `(label, annulus)`.
    pub fn rng(&self, label: StreamLabel, annulus: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master);
        rng.set_stream(self.path);
        rng.set_word_pos(((label as u128) << 64) | ((annulus as u128) << 40));
        rng
    }
}

/// Counter-based split: the path id selects an independent ChaCha stream.
pub fn derive_path_seed(master: u64, path_id: u64) -> SeedSpec {
    SeedSpec {
        master,
        path: path_id,
    }
}

/// Jumps of one annulus: sorted times and row-major marks.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AnnulusJumps {
    pub times: Vec<f64>,
    pub marks: Vec<f64>,
}

impl AnnulusJumps {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn mark(&self, i: usize, d: usize) -> &[f64] {
        &self.marks[i * d..(i + 1) * d]
    }
}

/// One realization of the noise over `(0, horizon]` for annuli `1..=k_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRealization {
    pub dim: usize,
    pub horizon: f64,
    pub seed: SeedSpec,
    /// Index `k - 1` holds annulus `k`.
    pub annuli: Vec<AnnulusJumps>,
    pub delta: Vec<f64>,
}

/// A reference to jump `i` of annulus `k` (both 1-based `k`, 0-based `i`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpRef {
    pub time: f64,
    pub k: u32,
    pub i: u32,
}

impl NoiseRealization {
    pub fn k_max(&self) -> usize {
        self.annuli.len()
    }

    pub fn mark(&self, k: usize, i: usize) -> &[f64] {
        self.annuli[k - 1].mark(i, self.dim)
    }

    pub fn mark_mut(&mut self, k: usize, i: usize) -> &mut [f64] {
        let d = self.dim;
        &mut self.annuli[k - 1].marks[i * d..(i + 1) * d]
    }

    pub fn total_jumps(&self) -> usize {
        self.annuli.iter().map(|a| a.len()).sum()
    }

    /// Jumps of annuli `1..=k_max` merged in time order; ties broken by `(k, i)`.
    pub fn merged(&self, k_max: usize) -> Vec<JumpRef> {
        let k_max = k_max.min(self.annuli.len());
        let mut out: Vec<JumpRef> = Vec::with_capacity(
            self.annuli[..k_max].iter().map(|a| a.len()).sum(),
        );
        for (k, a) in self.annuli[..k_max].iter().enumerate() {
            for (i, &t) in a.times.iter().enumerate() {
                out.push(JumpRef {
                    time: t,
                    k: k as u32 + 1,
                    i: i as u32,
                });
            }
        }
        out.sort_unstable_by(|a, b| {
            a.time
                .total_cmp(&b.time)
                .then(a.k.cmp(&b.k))
                .then(a.i.cmp(&b.i))
        });
        out
    }

    /// Ensures the realization covers `k_needed` annuli up to `t_needed`.
    pub fn check_coverage(&self, k_needed: usize, t_needed: f64) -> Result<()> {
        if k_needed > self.annuli.len() || t_needed > self.horizon * (1.0 + 1e-12) {
            return Err(Error::Coverage {
                needed: k_needed,
                available: self.annuli.len(),
                needed_horizon: t_needed,
                horizon: self.horizon,
            });
        }
        Ok(())
    }

    const MAGIC: &'static [u8; 4] = b"JNRZ";
    const VERSION: u32 = 1;

    /// Binary dump, little-endian:
    ///
    /// ```text
    /// "JNRZ" | u32 version = 1 | u32 d | u32 k_max | f64 horizon | u64 master | u64 path
    /// | d x f64 delta
    /// | for k in 1..=k_max: u64 count | count x f64 times | count * d x f64 marks
    /// ```
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(Self::MAGIC)?;
        w.write_all(&Self::VERSION.to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.annuli.len() as u32).to_le_bytes())?;
        w.write_all(&self.horizon.to_le_bytes())?;
        w.write_all(&self.seed.master.to_le_bytes())?;
        w.write_all(&self.seed.path.to_le_bytes())?;
        for v in &self.delta {
            w.write_all(&v.to_le_bytes())?;
        }
        for a in &self.annuli {
            w.write_all(&(a.len() as u64).to_le_bytes())?;
            for v in a.times.iter().chain(&a.marks) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        fn take<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
            let mut b = [0u8; N];
            r.read_exact(&mut b)
                .map_err(|e| Error::Format(format!("truncated dump: {e}")))?;
            Ok(b)
        }
        let f64s = |r: &mut R, n: usize| -> Result<Vec<f64>> {
            (0..n).map(|_| Ok(f64::from_le_bytes(take::<8, R>(r)?))).collect()
        };
        if &take::<4, R>(&mut r)? != Self::MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = u32::from_le_bytes(take::<4, R>(&mut r)?);
        if version != Self::VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let dim = u32::from_le_bytes(take::<4, R>(&mut r)?) as usize;
        let k_max = u32::from_le_bytes(take::<4, R>(&mut r)?) as usize;
        if dim == 0 || dim > 1 << 16 {
            return Err(Error::Format(format!("implausible dimension {dim}")));
        }
        let horizon = f64::from_le_bytes(take::<8, R>(&mut r)?);
        let master = u64::from_le_bytes(take::<8, R>(&mut r)?);
        let path = u64::from_le_bytes(take::<8, R>(&mut r)?);
        let delta = f64s(&mut r, dim)?;
        let mut annuli = Vec::with_capacity(k_max.min(1 << 20));
        for _ in 0..k_max {
            let count = u64::from_le_bytes(take::<8, R>(&mut r)?) as usize;
            if count > 1 << 32 {
                return Err(Error::Format(format!("implausible jump count {count}")));
            }
            let times = f64s(&mut r, count)?;
            let marks = f64s(&mut r, count * dim)?;
            annuli.push(AnnulusJumps { times, marks });
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes", rest.len())));
        }
        Ok(Self {
            dim,
            horizon,
            seed: SeedSpec { master, path },
            annuli,
            delta,
        })
    }
}

/// Per-annulus intensities and rejection envelopes for one model.
#[derive(Debug, Clone)]
pub struct NoiseSampler {
    dim: usize,
    masses: Vec<f64>,
    envelopes: Vec<f64>,
    model: JumpModel,
}

const MAX_REJECTIONS: usize = 1_000_000;

impl NoiseSampler {
    /// Prepares annuli `1..=k_max`; masses come from `table`.
    pub fn new(model: &JumpModel, table: &TailTable, k_max: usize) -> Result<Self> {
        if k_max == 0 {
            return Err(Error::InvalidArgument("k_max must be at least 1".into()));
        }
        if k_max > table.m_max() {
            return Err(Error::Sampler(format!(
                "tail table covers {} annuli, sampler needs {k_max}",
                table.m_max()
            )));
        }
        let d = model.dim();
        let mut envelopes = Vec::with_capacity(k_max);
        let directions = if model.density().is_radial() {
            vec![{
                let mut e = vec![0.0; d];
                e[0] = 1.0;
                e
            }]
        } else {
            crate::quad::sphere_directions(d, 256, &[])
        };
        for k in 1..=k_max {
            let (lo, hi) = ((k - 1) as f64, k as f64);
            let mut sup: f64 = 0.0;
            let mut z = vec![0.0; d];
            for j in 0..=256 {
                let r = lo + (hi - lo) * j as f64 / 256.0;
                for dir in &directions {
                    for (zi, di) in z.iter_mut().zip(dir) {
                        *zi = r * di;
                    }
                    sup = sup.max(model.h(&z));
                }
            }
            if !sup.is_finite() {
                return Err(Error::Sampler(format!(
                    "density is unbounded on annulus {k}"
                )));
            }
            envelopes.push(1.05 * sup);
        }
        Ok(Self {
            dim: d,
            masses: table.masses()[..k_max].to_vec(),
            envelopes,
            model: model.clone(),
        })
    }

    pub fn k_max(&self) -> usize {
        self.masses.len()
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    /// Uniform point of the annulus `lo < |z| <= hi`.
    fn uniform_annulus<R: Rng>(&self, rng: &mut R, lo: f64, hi: f64, out: &mut [f64]) {
        let d = self.dim;
        let u: f64 = rng.gen();
        if d == 1 {
            let r = lo + (hi - lo) * (1.0 - u);
            let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            out[0] = sign * r;
            return;
        }
        let df = d as i32;
        let r = (lo.powi(df) + (1.0 - u) * (hi.powi(df) - lo.powi(df))).powf(1.0 / d as f64);
        loop {
            for o in out.iter_mut() {
                *o = rng.sample(StandardNormal);
            }
            let n = norm(out);
            if n > 0.0 {
                out.iter_mut().for_each(|o| *o *= r / n);
                return;
            }
        }
    }

    /// Samples the noise of one path over `(0, horizon]`.
    pub fn sample(&self, horizon: f64, seed: SeedSpec) -> Result<NoiseRealization> {
        self.sample_k(horizon, self.k_max(), seed)
    }

    /// As [`NoiseSampler::sample`] but only for annuli `1..=k_max`.
    pub fn sample_k(&self, horizon: f64, k_max: usize, seed: SeedSpec) -> Result<NoiseRealization> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        if k_max > self.k_max() {
            return Err(Error::Sampler(format!(
                "sampler prepared for {} annuli, asked for {k_max}",
                self.k_max()
            )));
        }
        let d = self.dim;
        let mut annuli = Vec::with_capacity(k_max);
        for k in 1..=k_max {
            let lambda = horizon * self.masses[k - 1];
            let mut times_rng = seed.rng(StreamLabel::Times, k as u64);
            let count = if lambda > 0.0 {
                Poisson::new(lambda)
                    .map_err(|e| Error::Sampler(format!("Poisson({lambda}): {e}")))?
                    .sample(&mut times_rng) as usize
            } else {
                0
            };
            let mut times: Vec<f64> = (0..count)
                .map(|_| horizon * (1.0 - times_rng.gen::<f64>()))
                .collect();
            times.sort_unstable_by(f64::total_cmp);
            let mut marks = vec![0.0; count * d];
            if count > 0 {
                let mut marks_rng = seed.rng(StreamLabel::Marks, k as u64);
                let env = self.envelopes[k - 1];
                let (lo, hi) = ((k - 1) as f64, k as f64);
                for i in 0..count {
                    let z = &mut marks[i * d..(i + 1) * d];
                    let mut tries = 0;
                    loop {
                        self.uniform_annulus(&mut marks_rng, lo, hi, z);
                        let accept = self.model.h(z) / env;
                        if marks_rng.gen::<f64>() < accept {
                            break;
                        }
                        tries += 1;
                        if tries > MAX_REJECTIONS {
                            return Err(Error::Sampler(format!(
                                "rejection sampler stalled on annulus {k}"
                            )));
                        }
                    }
                }
            }
            annuli.push(AnnulusJumps { times, marks });
        }
        let mut g = seed.rng(StreamLabel::Gaussian, 0);
        let delta = (0..d).map(|_| g.sample(StandardNormal)).collect();
        Ok(NoiseRealization {
            dim: d,
            horizon,
            seed,
            annuli,
            delta,
        })
    }
}

/// One-shot sampling: builds the table and sampler for `k_max` annuli.
pub fn sample_noise(
    model: &JumpModel,
    horizon: f64,
    k_max: usize,
    seed: SeedSpec,
) -> Result<NoiseRealization> {
    let table = TailTable::build(model, k_max.max(1))?;
    NoiseSampler::new(model, &table, k_max)?.sample(horizon, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use crate::model::Profile;
    use proptest::prelude::*;

    fn lebesgue(d: usize) -> JumpModel {
        JumpModel::builder("leb", d).build().unwrap()
    }

    #[test]
    fn identical_seed_identical_noise() {
        let m = lebesgue(2);
        let a = sample_noise(&m, 3.0, 4, derive_path_seed(9, 4)).unwrap();
        let b = sample_noise(&m, 3.0, 4, derive_path_seed(9, 4)).unwrap();
        assert_eq!(a, b);
        assert_eq!(derive_path_seed(0, 1), derive_path_seed(0, 1));
        let c = sample_noise(&m, 3.0, 4, derive_path_seed(0, 4)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn prefix_annuli_do_not_depend_on_k_max() {
        let m = lebesgue(1);
        let a = sample_noise(&m, 2.0, 3, derive_path_seed(1, 2)).unwrap();
        let b = sample_noise(&m, 2.0, 6, derive_path_seed(1, 2)).unwrap();
        assert_eq!(a.annuli[..], b.annuli[..3]);
        assert_eq!(a.delta, b.delta);
    }

    #[test]
    fn tiny_horizon_has_no_jumps() {
        let m = lebesgue(1);
        let n = sample_noise(&m, 1e-12, 3, derive_path_seed(5, 0)).unwrap();
        assert_eq!(n.total_jumps(), 0);
        assert_eq!(n.delta.len(), 1);
    }

    #[test]
    fn mean_count_is_poisson() {
        let m = lebesgue(1);
        let table = TailTable::build(&m, 2).unwrap();
        let s = NoiseSampler::new(&m, &table, 1).unwrap();
        let n = 100_000;
        let total: usize = (0..n)
            .map(|p| s.sample(1.0, derive_path_seed(3, p)).unwrap().annuli[0].len())
            .sum();
        let mean = total as f64 / n as f64;
        let sigma = (2.0f64).sqrt() / (n as f64).sqrt();
        assert!((mean - 2.0).abs() < 3.0 * sigma, "{mean}");
    }

    #[test]
    fn uniform_marks_on_second_annulus() {
        let m = lebesgue(1);
        let table = TailTable::build(&m, 2).unwrap();
        let s = NoiseSampler::new(&m, &table, 2).unwrap();
        let mut sum = 0.0;
        let mut count = 0usize;
        let mut p = 0;
        while count < 50_000 {
            let n = s.sample(10.0, derive_path_seed(8, p)).unwrap();
            for z in n.annuli[1].marks.iter() {
                assert!(z.abs() > 1.0 && z.abs() <= 2.0);
                sum += z.abs();
                count += 1;
            }
            p += 1;
        }
        let mean = sum / count as f64;
        let se = (1.0f64 / 12.0).sqrt() / (count as f64).sqrt();
        assert!((mean - 1.5).abs() < 4.0 * se, "{mean}");
    }

    #[test]
    fn rejection_marks_follow_density() {
        // h(z) = e^{-|z|} on the first annulus: E|Z| = (1 - 2/e) / (1 - 1/e).
        let m = JumpModel::builder("e", 1)
            .density(Profile::radial(|r| (-r).exp()))
            .build()
            .unwrap();
        let table = TailTable::build(&m, 1).unwrap();
        let s = NoiseSampler::new(&m, &table, 1).unwrap();
        let mut sum = 0.0;
        let mut count = 0;
        for p in 0..20_000 {
            let n = s.sample(5.0, derive_path_seed(2, p)).unwrap();
            for z in &n.annuli[0].marks {
                sum += z.abs();
                count += 1;
            }
        }
        let e = std::f64::consts::E;
        let exact = (1.0 - 2.0 / e) / (1.0 - 1.0 / e);
        assert!((sum / count as f64 - exact).abs() < 0.005);
    }

    #[test]
    fn independent_streams_are_uncorrelated() {
        let mut a = derive_path_seed(11, 0).rng(StreamLabel::Times, 1);
        let mut b = derive_path_seed(11, 1).rng(StreamLabel::Times, 1);
        let n = 1_000_000;
        let mut sab = 0.0;
        let mut sa = 0.0;
        let mut sb = 0.0;
        let mut saa = 0.0;
        let mut sbb = 0.0;
        for _ in 0..n {
            let x: f64 = a.gen();
            let y: f64 = b.gen();
            sa += x;
            sb += y;
            sab += x * y;
            saa += x * x;
            sbb += y * y;
        }
        let nf = n as f64;
        let cov = sab / nf - sa * sb / nf / nf;
        let corr = cov / ((saa / nf - (sa / nf).powi(2)) * (sbb / nf - (sb / nf).powi(2))).sqrt();
        assert!(corr.abs() < 4.0 / nf.sqrt(), "{corr}");
    }

    #[test]
    fn dump_round_trip_and_rejects_garbage() {
        let m = lebesgue(2);
        let n = sample_noise(&m, 2.5, 3, derive_path_seed(42, 7)).unwrap();
        let mut buf = Vec::new();
        n.write_to(&mut buf).unwrap();
        let back = NoiseRealization::read_from(&buf[..]).unwrap();
        assert_eq!(n, back);
        assert!(NoiseRealization::read_from(&buf[..buf.len() - 3]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(NoiseRealization::read_from(&bad[..]).is_err());
    }

    #[test]
    fn merged_is_time_sorted() {
        let m = lebesgue(1);
        let n = sample_noise(&m, 5.0, 4, derive_path_seed(1, 1)).unwrap();
        let all = n.merged(4);
        assert_eq!(all.len(), n.total_jumps());
        assert!(all.windows(2).all(|w| w[0].time <= w[1].time));
        assert!(n.merged(2).iter().all(|j| j.k <= 2));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn marks_lie_in_their_annulus(seed in any::<u64>(), d in 1usize..4) {
            let m = lebesgue(d);
            let n = sample_noise(&m, 1.0, 3, derive_path_seed(seed, 0)).unwrap();
            for (k, a) in n.annuli.iter().enumerate() {
                prop_assert!(a.times.windows(2).all(|w| w[0] <= w[1]));
                prop_assert!(a.times.iter().all(|&t| t > 0.0 && t <= 1.0));
                for i in 0..a.len() {
                    let r = norm(a.mark(i, d));
                    prop_assert!(r <= (k + 1) as f64 && (k == 0 || r > k as f64));
                }
            }
        }
    }
}
