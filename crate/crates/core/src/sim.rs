//! Monte Carlo paths of `X` and `Y` observed at generations `A(n t_i)`.
//!
//! [`ForwardSampler`] runs the process generation by generation with
//! cached inverse-CDF tables. [`ConditionedSampler`] samples `X` given
//! `X_{A(n)} > 0` exactly by jumping between checkpoints with transition
//! rows reweighted by `h_c(x) = 1 - f_{c,A(n)}(0)^x`.

use alloc::vec::Vec;

use rand_chacha::rand_core::RngCore;
use rand_distr::{Binomial, Distribution};

use crate::environment::{EnvironmentSpec, ScalingTable};
use crate::error::{Error, Result};
use crate::exact::CompositionChain;
use crate::math;
use crate::stream::{uniform, SeededStream};

/// Populations above this are flagged as overflow and discarded.
pub const POPULATION_CAP: u64 = 1_000_000;

/// Above this many parents the generation total is drawn as one multinomial.
pub const COMPOUND_THRESHOLD: u64 = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct PathSample {
    pub times: Vec<f64>,
    /// State at generation `A(floor(n t_i))`; empty when `overflow` is set.
    pub states: Vec<u64>,
    pub n: u64,
    pub conditioned: bool,
    pub overflow: bool,
}

impl PathSample {
    fn overflowed(times: &[f64], n: u64, conditioned: bool) -> Self {
        Self {
            times: times.to_vec(),
            states: Vec::new(),
            n,
            conditioned,
            overflow: true,
        }
    }
}

/// Inverse-CDF table of a law on `{0, 1, ...}`; draws past the table land on
/// `len`, the first state of the truncated tail.
#[derive(Debug, Clone, PartialEq)]
pub struct CdfTable {
    cdf: Vec<f64>,
}

impl CdfTable {
    pub fn new(pmf: &[f64]) -> Self {
        let len = pmf.iter().rposition(|&p| p > 0.0).map_or(1, |i| i + 1);
        let mut acc = 0.0;
        let cdf = pmf[..len]
            .iter()
            .map(|&p| {
                acc += p;
                acc
            })
            .collect();
        Self { cdf }
    }

    pub fn len(&self) -> usize {
        self.cdf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cdf.is_empty()
    }

    /// Smallest `k` with `u <= cdf[k]`; linear because mass sits near zero.
    #[inline]
    pub fn invert(&self, u: f64) -> usize {
        self.cdf.iter().position(|&c| u <= c).unwrap_or(self.cdf.len())
    }

    /// Same as [`invert`](Self::invert) by bisection, for wide rows.
    #[inline]
    pub fn invert_bisect(&self, u: f64) -> usize {
        self.cdf.partition_point(|&c| c < u)
    }

    fn prob(&self, k: usize) -> f64 {
        if k == 0 {
            self.cdf[0]
        } else {
            self.cdf[k] - self.cdf[k - 1]
        }
    }

    /// Sum of `x` independent draws.
    pub fn sum_of<R: RngCore + ?Sized>(&self, x: u64, rng: &mut R) -> u64 {
        if x <= COMPOUND_THRESHOLD {
            return (0..x).map(|_| self.invert(uniform(rng)) as u64).sum();
        }
        // multinomial counts by sequential binomials
        let mut remaining = x;
        let mut mass = 1.0;
        let mut total = 0;
        for k in 0..self.cdf.len() {
            if remaining == 0 {
                break;
            }
            let p = self.prob(k);
            let ratio = if mass > 0.0 { (p / mass).clamp(0.0, 1.0) } else { 1.0 };
            let count = Binomial::new(remaining, ratio)
                .expect("ratio lies in [0, 1]")
                .sample(rng);
            total += k as u64 * count;
            remaining -= count;
            mass -= p;
        }
        total + remaining * self.cdf.len() as u64
    }
}

/// Observation generations for a grid of scaled times.
pub fn grid_generations(table: &ScalingTable, n: u64, times: &[f64]) -> Result<Vec<u64>> {
    if times.is_empty() {
        return Err(Error::InvalidGrid("empty time grid".into()));
    }
    for pair in times.windows(2) {
        if !(pair[0] < pair[1]) {
            return Err(Error::InvalidGrid("time grid must be strictly increasing".into()));
        }
    }
    times.iter().map(|&t| table.generation_at(n, t)).collect()
}

fn max_time(times: &[f64]) -> f64 {
    times.iter().copied().fold(1.0, f64::max)
}

/// Generation-by-generation sampler with per-generation tables.
#[derive(Debug, Clone)]
pub struct ForwardSampler {
    n: u64,
    times: Vec<f64>,
    generations: Vec<u64>,
    start: u64,
    offspring: Vec<CdfTable>,
    immigration: Option<Vec<CdfTable>>,
}

impl ForwardSampler {
    /// `with_immigration` selects `Y` (started at 0) instead of `X` (started at 1).
    pub fn new(
        spec: &EnvironmentSpec,
        n: u64,
        times: &[f64],
        order: usize,
        with_immigration: bool,
    ) -> Result<Self> {
        let reach = math::floor(n as f64 * max_time(times)) as u64;
        let table = ScalingTable::covering(spec, reach.max(1))?;
        let generations = grid_generations(&table, n, times)?;
        let last = *generations.iter().max().expect("grid is nonempty");
        let start = spec.start_index();
        let mut offspring = Vec::new();
        let mut immigration = Vec::new();
        for l in start..=last {
            offspring.push(CdfTable::new(spec.offspring_law(l).to_series(order).coeffs()));
            if with_immigration {
                immigration.push(CdfTable::new(spec.immigration_law(l).probs()));
            }
        }
        Ok(Self {
            n,
            times: times.to_vec(),
            generations,
            start,
            offspring,
            immigration: with_immigration.then_some(immigration),
        })
    }

    pub fn generations(&self) -> &[u64] {
        &self.generations
    }

    pub fn sample<R: RngCore + ?Sized>(&self, rng: &mut R) -> PathSample {
        let mut x: u64 = if self.immigration.is_some() { 0 } else { 1 };
        let mut states = Vec::with_capacity(self.times.len());
        let mut next = 0;
        let mut generation = 0;
        while next < self.generations.len() {
            while next < self.generations.len() && self.generations[next] == generation {
                states.push(x);
                next += 1;
            }
            if next == self.generations.len() {
                break;
            }
            generation += 1;
            if generation < self.start {
                continue;
            }
            let idx = (generation - self.start) as usize;
            if x > 0 {
                x = self.offspring[idx].sum_of(x, rng);
            }
            if let Some(imm) = &self.immigration {
                x += imm[idx].invert(uniform(rng)) as u64;
            }
            if x > POPULATION_CAP {
                return PathSample::overflowed(&self.times, self.n, false);
            }
            if x == 0 && self.immigration.is_none() {
                states.resize(self.times.len(), 0);
                break;
            }
        }
        PathSample {
            times: self.times.clone(),
            states,
            n: self.n,
            conditioned: false,
            overflow: false,
        }
    }
}

/// Unconditioned path of `X` started from one individual.
pub fn simulate_x(
    spec: &EnvironmentSpec,
    n: u64,
    times: &[f64],
    stream: SeededStream,
    order: usize,
) -> Result<PathSample> {
    Ok(ForwardSampler::new(spec, n, times, order, false)?.sample(&mut stream.rng()))
}

/// Path of `Y` started from zero.
pub fn simulate_y(
    spec: &EnvironmentSpec,
    n: u64,
    times: &[f64],
    stream: SeededStream,
    order: usize,
) -> Result<PathSample> {
    Ok(ForwardSampler::new(spec, n, times, order, true)?.sample(&mut stream.rng()))
}

/// Exact sampler of `X` at grid generations given survival to `A(n)`.
/// Beyond `A(n)` the path continues unconditioned.
#[derive(Debug, Clone)]
pub struct ConditionedSampler {
    n: u64,
    times: Vec<f64>,
    /// checkpoint index recorded for each grid time
    record: Vec<usize>,
    /// reweighted transition rows per window, indexed by starting state
    steps: Vec<Vec<CdfTable>>,
    survival: f64,
}

impl ConditionedSampler {
    pub fn new(spec: &EnvironmentSpec, n: u64, times: &[f64], order: usize) -> Result<Self> {
        let no_imm = spec.clone().with_immigration(Vec::new())?;
        let reach = math::floor(n as f64 * max_time(times)) as u64;
        let table = ScalingTable::covering(&no_imm, reach.max(n))?;
        let generations = grid_generations(&table, n, times)?;
        let target = table.a(n)?;
        let mut points = generations.clone();
        points.push(target);
        let chain = CompositionChain::new(&no_imm, &points, order)?;
        let checkpoints = chain.checkpoints();
        let t_idx = checkpoints
            .binary_search(&target)
            .expect("target is a checkpoint");
        let extinction = chain.extinction_by(target)?;
        // h at checkpoint i; identically one after the target
        let h = |i: usize, x: usize| -> f64 {
            if i > t_idx {
                1.0
            } else {
                let v = extinction[i];
                if v <= 0.0 {
                    if x > 0 { 1.0 } else { 0.0 }
                } else {
                    -math::expm1(x as f64 * math::ln(v))
                }
            }
        };
        let survival = h(0, 1);
        if survival <= 0.0 {
            return Err(Error::CertainExtinction { generation: target });
        }
        let mut steps = Vec::with_capacity(chain.segments().len());
        for (i, seg) in chain.segments().iter().enumerate() {
            let rows = seg.rows_x(order);
            let weights: Vec<f64> = (0..=order).map(|y| h(i + 1, y)).collect();
            let row_tables = rows
                .iter()
                .enumerate()
                .map(|(x, row)| {
                    let hx = h(i, x);
                    if hx <= 0.0 {
                        return CdfTable::new(&[1.0]);
                    }
                    let pmf: Vec<f64> = row
                        .coeffs()
                        .iter()
                        .zip(&weights)
                        .map(|(p, w)| p * w / hx)
                        .collect();
                    CdfTable::new(&pmf)
                })
                .collect();
            steps.push(row_tables);
        }
        let record = generations
            .iter()
            .map(|g| checkpoints.binary_search(g).expect("grid generation is a checkpoint"))
            .collect();
        Ok(Self {
            n,
            times: times.to_vec(),
            record,
            steps,
            survival,
        })
    }

    /// `P(X_{A(n)} > 0)`.
    pub fn survival(&self) -> f64 {
        self.survival
    }

    pub fn sample<R: RngCore + ?Sized>(&self, rng: &mut R) -> PathSample {
        let mut at_checkpoint = Vec::with_capacity(self.steps.len() + 1);
        let mut x = 1usize;
        at_checkpoint.push(x);
        for rows in &self.steps {
            if x >= rows.len() {
                return PathSample::overflowed(&self.times, self.n, true);
            }
            let row = &rows[x];
            x = row.invert_bisect(uniform(rng));
            if x >= row.len() {
                return PathSample::overflowed(&self.times, self.n, true);
            }
            at_checkpoint.push(x);
        }
        PathSample {
            times: self.times.clone(),
            states: self.record.iter().map(|&i| at_checkpoint[i] as u64).collect(),
            n: self.n,
            conditioned: true,
            overflow: false,
        }
    }
}

/// One conditioned path; builds the sampler each call.
pub fn simulate_x_conditioned(
    spec: &EnvironmentSpec,
    n: u64,
    times: &[f64],
    stream: SeededStream,
    order: usize,
) -> Result<PathSample> {
    Ok(ConditionedSampler::new(spec, n, times, order)?.sample(&mut stream.rng()))
}
