//! Parallel replicate runner with a fixed chunking, so results do not depend
//! on the worker count.

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use bpve_core::sim::PathSample;
use bpve_core::stats::{EmpiricalDistribution, JointEmpirical};

use crate::LabError;

/// Replicates per shard.
pub const CHUNK: u64 = 4_096;

pub trait Merge {
    fn merge_from(&mut self, other: Self);
}

impl Merge for EmpiricalDistribution {
    fn merge_from(&mut self, other: Self) {
        self.merge(&other);
    }
}

pub struct Runner {
    pool: rayon::ThreadPool,
    seed: u64,
}

impl Runner {
    pub fn new(workers: usize, seed: u64) -> Result<Self, LabError> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| LabError::Config(e.to_string()))?;
        Ok(Self { pool, seed })
    }

    /// Seed of the stream family used by one named check.
    pub fn seed_for(&self, tag: &str) -> u64 {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(tag.as_bytes());
        let d = h.finalize();
        u64::from_le_bytes(d[..8].try_into().expect("digest is 32 bytes"))
    }

    /// Folds `step(acc, index)` over `0..replicates` in shards and merges
    /// the shards in index order.
    pub fn run<A, M, F>(&self, replicates: u64, make: M, step: F) -> A
    where
        A: Merge + Send,
        M: Fn() -> A + Sync,
        F: Fn(&mut A, u64) + Sync,
    {
        let chunks = replicates.div_ceil(CHUNK);
        let shards: Vec<A> = self.pool.install(|| {
            (0..chunks)
                .into_par_iter()
                .map(|c| {
                    let mut acc = make();
                    for i in c * CHUNK..((c + 1) * CHUNK).min(replicates) {
                        step(&mut acc, i);
                    }
                    acc
                })
                .collect()
        });
        let mut iter = shards.into_iter();
        let mut total = iter.next().unwrap_or_else(&make);
        for s in iter {
            total.merge_from(s);
        }
        total
    }
}

/// Joint and per-time tallies of grid paths.
#[derive(Debug, Clone, PartialEq)]
pub struct PathTally {
    pub joint: JointEmpirical,
    pub marginals: Vec<EmpiricalDistribution>,
}

impl PathTally {
    pub fn new(points: usize, cap: u64) -> Self {
        Self {
            joint: JointEmpirical::new(cap),
            marginals: vec![EmpiricalDistribution::new(); points],
        }
    }

    pub fn record(&mut self, path: &PathSample) {
        if path.overflow {
            self.joint.record_overflow();
            for m in &mut self.marginals {
                m.record_overflow();
            }
        } else {
            self.joint.record(&path.states);
            for (m, &s) in self.marginals.iter_mut().zip(&path.states) {
                m.record(s);
            }
        }
    }

    pub fn overflow(&self) -> u64 {
        self.marginals.first().map_or(0, EmpiricalDistribution::overflow)
    }
}

impl Merge for PathTally {
    fn merge_from(&mut self, other: Self) {
        self.joint.merge(&other.joint);
        for (a, b) in self.marginals.iter_mut().zip(&other.marginals) {
            a.merge(b);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use bpve_core::stream::{uniform, SeededStream};

    fn tally(workers: usize) -> EmpiricalDistribution {
        let runner = Runner::new(workers, 7).unwrap();
        let seed = runner.seed_for("t");
        runner.run(10_000, EmpiricalDistribution::new, |acc, i| {
            let mut rng = SeededStream::new(seed, i).rng();
            acc.record((uniform(&mut rng) * 10.0) as u64);
        })
    }

    #[test]
    fn worker_count_does_not_change_results() {
        assert_eq!(tally(1), tally(3));
        assert_eq!(tally(1).total(), 10_000);
    }

    #[test]
    fn tags_separate_streams() {
        let r = Runner::new(1, 1).unwrap();
        assert_ne!(r.seed_for("a"), r.seed_for("b"));
    }
}
