//! Empirical laws, total variation and confidence radii.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::gf::TruncatedSeries;
use crate::math;

/// Failure probability of every confidence radius.
pub const CONFIDENCE_DELTA: f64 = 0.01;

/// Counts of observed states. Overflowed samples are kept apart.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EmpiricalDistribution {
    counts: BTreeMap<u64, u64>,
    total: u64,
    overflow: u64,
}

impl EmpiricalDistribution {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, state: u64) {
        *self.counts.entry(state).or_insert(0) += 1;
        self.total += 1;
    }

    pub fn record_overflow(&mut self) {
        self.overflow += 1;
        self.total += 1;
    }

    /// Commutative and associative merge of two shards.
    pub fn merge(&mut self, other: &Self) {
        for (&k, &c) in &other.counts {
            *self.counts.entry(k).or_insert(0) += c;
        }
        self.total += other.total;
        self.overflow += other.overflow;
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn overflow(&self) -> u64 {
        self.overflow
    }

    pub fn count(&self, state: u64) -> u64 {
        self.counts.get(&state).copied().unwrap_or(0)
    }

    pub fn counts(&self) -> &BTreeMap<u64, u64> {
        &self.counts
    }

    pub fn frequency(&self, state: u64) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.count(state) as f64 / self.total as f64
        }
    }

    pub fn mean(&self) -> f64 {
        let recorded = self.total - self.overflow;
        if recorded == 0 {
            return 0.0;
        }
        self.counts.iter().map(|(&k, &c)| k as f64 * c as f64).sum::<f64>() / recorded as f64
    }

    /// Frequencies of `0..=cap` followed by one cell for states above `cap`
    /// together with overflowed samples.
    pub fn to_pmf(&self, cap: usize) -> Vec<f64> {
        let mut out = vec![0.0; cap + 2];
        if self.total == 0 {
            return out;
        }
        let n = self.total as f64;
        for (&k, &c) in &self.counts {
            let idx = (k as usize).min(cap + 1);
            out[idx] += c as f64 / n;
        }
        out[cap + 1] += self.overflow as f64 / n;
        out
    }
}

/// A truncated law folded onto `0..=cap` plus one cell above `cap`.
pub fn capped_pmf(series: &TruncatedSeries, cap: usize) -> Vec<f64> {
    let mut out = vec![0.0; cap + 2];
    for (k, &c) in series.coeffs().iter().enumerate() {
        out[k.min(cap + 1)] += c;
    }
    out[cap + 1] += series.tail_mass();
    out
}

/// `(1/2) sum |p - q|` over aligned cells; shorter inputs are zero padded.
pub fn total_variation(p: &[f64], q: &[f64]) -> Result<f64> {
    for v in [p, q] {
        let sum: f64 = v.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Unnormalized { sum });
        }
    }
    let len = p.len().max(q.len());
    let mut total = 0.0;
    for i in 0..len {
        let a = p.get(i).copied().unwrap_or(0.0);
        let b = q.get(i).copied().unwrap_or(0.0);
        total += (a - b).abs();
    }
    Ok((0.5 * total).min(1.0))
}

fn deviation_slack(total: u64) -> f64 {
    // one sample moves the empirical TV by at most 1/total
    math::sqrt(math::ln(1.0 / CONFIDENCE_DELTA) / (2.0 * total as f64))
}

/// Radius `r` with `P(TV(empirical, truth) > r) <= 1%` for any law on
/// `support_size` cells: `(1/2) sqrt(k / n) + sqrt(ln(100) / (2 n))`.
pub fn tv_confidence_radius(total: u64, support_size: usize) -> f64 {
    if total == 0 {
        return 1.0;
    }
    let mean_bound = 0.5 * math::sqrt(support_size as f64 / total as f64);
    (mean_bound + deviation_slack(total)).min(1.0)
}

/// `E|Bin(n, p) - n p|` by De Moivre's formula
/// `2 k C(n, k) p^k (1 - p)^{n - k + 1}` with `k = floor(n p) + 1`.
pub fn binomial_mean_abs_deviation(n: u64, p: f64) -> f64 {
    if !(p > 0.0 && p < 1.0) || n == 0 {
        return 0.0;
    }
    let nf = n as f64;
    let k = math::floor(nf * p) + 1.0;
    if k > nf {
        return 0.0;
    }
    let ln_choose = math::lgamma(nf + 1.0) - math::lgamma(k + 1.0) - math::lgamma(nf - k + 1.0);
    2.0 * k * math::exp(ln_choose + k * math::ln(p) + (nf - k + 1.0) * math::ln_1p(-p))
}

/// Sharper radius for a known reference law: the exact mean
/// `(1/2) sum E|p_hat_i - p_i|` plus `sqrt(ln(100) / (2 n))`.
pub fn tv_confidence_radius_for(pmf: &[f64], total: u64) -> f64 {
    if total == 0 {
        return 1.0;
    }
    let n = total as f64;
    let mean: f64 = 0.5
        * pmf
            .iter()
            .map(|&p| binomial_mean_abs_deviation(total, p) / n)
            .sum::<f64>();
    (mean + deviation_slack(total)).min(1.0)
}

/// Counts of tuples of states on a fixed grid; a tuple with any coordinate
/// above `cap` lands in one shared cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JointEmpirical {
    cap: u64,
    counts: BTreeMap<Vec<u64>, u64>,
    above_cap: u64,
    total: u64,
}

impl JointEmpirical {
    pub fn new(cap: u64) -> Self {
        Self {
            cap,
            counts: BTreeMap::new(),
            above_cap: 0,
            total: 0,
        }
    }

    pub fn record(&mut self, states: &[u64]) {
        self.total += 1;
        if states.iter().any(|&s| s > self.cap) {
            self.above_cap += 1;
        } else {
            *self.counts.entry(states.to_vec()).or_insert(0) += 1;
        }
    }

    /// Overflowed samples count toward the shared cell.
    pub fn record_overflow(&mut self) {
        self.total += 1;
        self.above_cap += 1;
    }

    pub fn merge(&mut self, other: &Self) {
        for (k, &c) in &other.counts {
            *self.counts.entry(k.clone()).or_insert(0) += c;
        }
        self.above_cap += other.above_cap;
        self.total += other.total;
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn to_law(&self) -> JointLaw {
        let n = self.total.max(1) as f64;
        JointLaw {
            cells: self.counts.iter().map(|(k, &c)| (k.clone(), c as f64 / n)).collect(),
            above_cap: self.above_cap as f64 / n,
        }
    }
}

/// Exact or empirical joint law over tuples, with the mass of tuples
/// leaving `0..=cap` collected in `above_cap`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct JointLaw {
    pub cells: BTreeMap<Vec<u64>, f64>,
    pub above_cap: f64,
}

impl JointLaw {
    pub fn total_mass(&self) -> f64 {
        self.cells.values().sum::<f64>() + self.above_cap
    }

    /// Law of the coordinates listed in `keep`.
    pub fn marginal(&self, keep: &[usize]) -> JointLaw {
        let mut cells = BTreeMap::new();
        for (k, &p) in &self.cells {
            let key: Vec<u64> = keep.iter().map(|&i| k[i]).collect();
            *cells.entry(key).or_insert(0.0) += p;
        }
        JointLaw {
            cells,
            above_cap: self.above_cap,
        }
    }

    pub fn total_variation(&self, other: &JointLaw) -> f64 {
        let mut sum = (self.above_cap - other.above_cap).abs();
        for (k, &p) in &self.cells {
            sum += (p - other.cells.get(k).copied().unwrap_or(0.0)).abs();
        }
        for (k, &q) in &other.cells {
            if !self.cells.contains_key(k) {
                sum += q;
            }
        }
        (0.5 * sum).min(1.0)
    }

    /// Radius as in [`tv_confidence_radius_for`] with this law as reference.
    pub fn confidence_radius(&self, total: u64) -> f64 {
        let mut pmf: Vec<f64> = self.cells.values().copied().collect();
        pmf.push(self.above_cap);
        tv_confidence_radius_for(&pmf, total)
    }
}

/// Exact joint law of a Markov chain on the grid: initial law, then one
/// kernel per consecutive pair. `kernels[i][x]` is the row from state `x`.
pub fn joint_pmf_from_kernels(
    initial: &TruncatedSeries,
    kernels: &[Vec<TruncatedSeries>],
    cap: usize,
) -> Result<JointLaw> {
    if cap > initial.order() {
        return Err(Error::StateCap {
            state: cap,
            cap: initial.order(),
        });
    }
    for (i, k) in kernels.iter().enumerate() {
        if k.len() <= cap {
            return Err(Error::InvalidGrid(format!(
                "kernel {i} has {} rows, cap {cap} needs {}",
                k.len(),
                cap + 1
            )));
        }
    }
    let mut cells = BTreeMap::new();
    let mut prefix = Vec::with_capacity(kernels.len() + 1);
    for x in 0..=cap {
        let p = initial.coeff(x);
        if p == 0.0 {
            continue;
        }
        prefix.push(x as u64);
        extend(&mut cells, &mut prefix, p, kernels, cap);
        prefix.pop();
    }
    let inside: f64 = cells.values().sum();
    Ok(JointLaw {
        cells,
        above_cap: (1.0 - inside).max(0.0),
    })
}

fn extend(
    cells: &mut BTreeMap<Vec<u64>, f64>,
    prefix: &mut Vec<u64>,
    mass: f64,
    kernels: &[Vec<TruncatedSeries>],
    cap: usize,
) {
    let depth = prefix.len() - 1;
    if depth == kernels.len() {
        cells.insert(prefix.clone(), mass);
        return;
    }
    let row = &kernels[depth][*prefix.last().expect("nonempty prefix") as usize];
    for y in 0..=cap {
        let p = row.coeff(y);
        if p == 0.0 {
            continue;
        }
        prefix.push(y as u64);
        extend(cells, prefix, mass * p, kernels, cap);
        prefix.pop();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gf::{lf_gf, LinearFractionalParams};

    #[test]
    fn tv_examples() {
        let p = [0.2, 0.5, 0.3];
        assert_eq!(total_variation(&p, &p).unwrap(), 0.0);
        assert_eq!(total_variation(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        let g = TruncatedSeries::geometric(0.5, 256).unwrap();
        let full: Vec<f64> = (0..=400)
            .map(|k| if k == 0 { 0.0 } else { 0.5f64.powi(k) })
            .collect();
        let d = total_variation(&g.to_pmf(), &full).unwrap();
        assert!(d <= 2f64.powi(-256) + 1e-15);
        assert!(total_variation(&[0.5], &[1.0]).is_err());
    }

    #[test]
    fn binomial_deviation_matches_direct_sum() {
        for (n, p) in [(10u64, 0.3f64), (7, 0.5), (100, 0.013), (5, 0.99)] {
            let mut direct = 0.0;
            let mut c = 1.0;
            for x in 0..=n {
                if x > 0 {
                    c = c * (n - x + 1) as f64 / x as f64;
                }
                let w = c * p.powi(x as i32) * (1.0 - p).powi((n - x) as i32);
                direct += w * (x as f64 - n as f64 * p).abs();
            }
            assert!((binomial_mean_abs_deviation(n, p) - direct).abs() < 1e-12, "n={n} p={p}");
        }
        assert_eq!(binomial_mean_abs_deviation(10, 0.0), 0.0);
    }

    #[test]
    fn radius_examples() {
        assert!(tv_confidence_radius(u64::MAX / 2, 64) < 1e-8);
        let r = tv_confidence_radius(100_000, 64);
        assert!((r - 0.018).abs() < 0.001, "{r}");
        assert!(tv_confidence_radius(1, 2) >= 0.5);
        let g = TruncatedSeries::geometric(0.5, 256).unwrap();
        assert!(tv_confidence_radius_for(&capped_pmf(&g, 64), 100_000) < r);
    }

    #[test]
    fn empirical_merge_and_pmf() {
        let mut a = EmpiricalDistribution::new();
        let mut b = EmpiricalDistribution::new();
        for x in [0, 1, 1, 5] {
            a.record(x);
        }
        b.record(70);
        b.record_overflow();
        let mut ab = a.clone();
        ab.merge(&b);
        let mut ba = b.clone();
        ba.merge(&a);
        assert_eq!(ab, ba);
        assert_eq!(ab.total(), 6);
        let pmf = ab.to_pmf(64);
        assert!((pmf.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((pmf[65] - 2.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn joint_examples() {
        let g = TruncatedSeries::geometric(0.5, 64).unwrap();
        let single = joint_pmf_from_kernels(&g, &[], 64).unwrap();
        assert!((single.cells[&vec![3]] - 0.125).abs() < 1e-15);
        let identity: Vec<TruncatedSeries> =
            (0..=64).map(|x| TruncatedSeries::point_mass(x, 64)).collect();
        let diag = joint_pmf_from_kernels(&g, &[identity], 64).unwrap();
        assert!(diag.cells.keys().all(|k| k[0] == k[1]));
        let rows = |a: f64| -> Vec<TruncatedSeries> {
            let base = lf_gf(&LinearFractionalParams::new(a, 2.0).unwrap(), 64);
            (0..=64).map(|x| base.power(x)).collect()
        };
        let three = joint_pmf_from_kernels(&g, &[rows(0.8), rows(0.5)], 64).unwrap();
        let two = joint_pmf_from_kernels(&g, &[rows(0.4)], 64).unwrap();
        let folded = three.marginal(&[0, 2]);
        let mut worst: f64 = 0.0;
        for (k, &p) in &two.cells {
            worst = worst.max((p - folded.cells.get(k).copied().unwrap_or(0.0)).abs());
        }
        assert!(worst < 1e-10, "{worst}");
    }

    #[test]
    fn joint_empirical_counts() {
        let mut j = JointEmpirical::new(10);
        j.record(&[1, 2]);
        j.record(&[1, 2]);
        j.record(&[1, 11]);
        j.record_overflow();
        let law = j.to_law();
        assert_eq!(law.cells[&vec![1, 2]], 0.5);
        assert_eq!(law.above_cap, 0.5);
        assert!((law.total_mass() - 1.0).abs() < 1e-15);
    }
}
