//! Varying environments with means `1 - alpha/n`, optional immigration,
//! the scaling sequence `A(n)` and numeric checks of the regularity
//! conditions.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::gf::{poly, LinearFractionalLaw, TruncatedSeries};
use crate::math;

/// Longest composition chain any computation may request.
pub const HORIZON_CAP: u64 = 1_000_000;

/// Relative slack in the `A(n)` threshold test; absorbs rounding in the
/// running product of means.
pub const SCALING_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OffspringFamily {
    /// `1 - m + m s`; only compatible with `nu = 0`.
    Bernoulli,
    /// Linear-fractional law with mean `m` and `f''(1) = nu (1 - m)`.
    LinearFractional,
}

/// One support point of the immigration law: `P(eps_n = value) = weight (1 - mean_n)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImmigrationAtom {
    pub value: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentSpec {
    family: OffspringFamily,
    alpha: f64,
    nu: f64,
    immigration: Vec<ImmigrationAtom>,
    start_index: u64,
}

impl EnvironmentSpec {
    pub fn new(family: OffspringFamily, alpha: f64, nu: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidEnvironment(format!(
                "alpha must be positive and finite, got {alpha}"
            )));
        }
        if !(nu >= 0.0 && nu.is_finite()) {
            return Err(Error::InvalidEnvironment(format!(
                "nu must be nonnegative and finite, got {nu}"
            )));
        }
        if family == OffspringFamily::Bernoulli && nu != 0.0 {
            return Err(Error::InvalidEnvironment(format!(
                "bernoulli offspring has no second moment, nu must be 0 (got {nu})"
            )));
        }
        Ok(Self {
            family,
            alpha,
            nu,
            immigration: Vec::new(),
            start_index: math::floor(alpha) as u64 + 1,
        })
    }

    /// Overrides the first generation with mean below one. It must exceed
    /// `alpha` so every mean stays positive.
    pub fn with_start_index(mut self, start: u64) -> Result<Self> {
        if (start as f64) <= self.alpha {
            return Err(Error::InvalidEnvironment(format!(
                "start index {start} must exceed alpha = {}",
                self.alpha
            )));
        }
        self.start_index = start;
        self.check_immigration()?;
        Ok(self)
    }

    pub fn with_immigration(mut self, atoms: Vec<ImmigrationAtom>) -> Result<Self> {
        let mut atoms: Vec<ImmigrationAtom> =
            atoms.into_iter().filter(|a| a.weight != 0.0).collect();
        atoms.sort_by_key(|a| a.value);
        for pair in atoms.windows(2) {
            if pair[0].value == pair[1].value {
                return Err(Error::InvalidImmigration(format!(
                    "duplicate support point {}",
                    pair[0].value
                )));
            }
        }
        for a in &atoms {
            if a.value == 0 {
                return Err(Error::InvalidImmigration(
                    "support points must be at least 1".into(),
                ));
            }
            if !(a.weight > 0.0 && a.weight.is_finite()) {
                return Err(Error::InvalidImmigration(format!(
                    "weight of {} must be positive, got {}",
                    a.value, a.weight
                )));
            }
        }
        self.immigration = atoms;
        self.check_immigration()?;
        Ok(self)
    }

    fn check_immigration(&self) -> Result<()> {
        // 1 - mean_n is largest at the start index
        let worst = self.total_weight() * (1.0 - self.mean(self.start_index));
        if worst > 1.0 + 1e-12 {
            return Err(Error::InvalidImmigration(format!(
                "P(eps_n > 0) = {worst} exceeds 1 at n = {}",
                self.start_index
            )));
        }
        Ok(())
    }

    pub fn family(&self) -> OffspringFamily {
        self.family
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn start_index(&self) -> u64 {
        self.start_index
    }

    pub fn immigration(&self) -> &[ImmigrationAtom] {
        &self.immigration
    }

    pub fn has_immigration(&self) -> bool {
        !self.immigration.is_empty()
    }

    /// Largest immigration support point, zero without immigration.
    pub fn max_immigrants(&self) -> usize {
        self.immigration.last().map_or(0, |a| a.value)
    }

    fn total_weight(&self) -> f64 {
        self.immigration.iter().map(|a| a.weight).sum()
    }

    /// Offspring mean in generation `n`.
    pub fn mean(&self, n: u64) -> f64 {
        if n < self.start_index {
            1.0
        } else {
            1.0 - self.alpha / n as f64
        }
    }

    /// Offspring law of generation `n` in mean/shape form. Bernoulli laws
    /// are the zero-shape members of the family.
    pub fn offspring_law(&self, n: u64) -> LinearFractionalLaw {
        let m = self.mean(n);
        let shape = match self.family {
            OffspringFamily::Bernoulli => 0.0,
            OffspringFamily::LinearFractional => 0.5 * self.nu * (1.0 - m) / (m * m),
        };
        LinearFractionalLaw { mean: m, shape }
    }

    /// Immigration law of generation `n`.
    pub fn immigration_law(&self, n: u64) -> ImmigrationLaw {
        let scale = 1.0 - self.mean(n);
        let mut probs = vec![0.0; self.max_immigrants() + 1];
        for a in &self.immigration {
            probs[a.value] = a.weight * scale;
        }
        probs[0] = (1.0 - self.total_weight() * scale).max(0.0);
        ImmigrationLaw { probs }
    }

    /// `lambda_j = sum_k c_k binom(k, j)` for `j = 1..=max k`; these are the
    /// limits of `m_{n,j} / (j! (1 - mean_n))`.
    pub fn lambdas(&self) -> Vec<f64> {
        let kappa = self.max_immigrants();
        (1..=kappa)
            .map(|j| {
                self.immigration
                    .iter()
                    .map(|a| a.weight * binomial(a.value, j))
                    .sum()
            })
            .collect()
    }
}

fn binomial(k: usize, j: usize) -> f64 {
    if j > k {
        return 0.0;
    }
    (0..j).fold(1.0, |acc, i| acc * (k - i) as f64 / (i + 1) as f64)
}

/// Law of the number of immigrants in one generation.
#[derive(Debug, Clone, PartialEq)]
pub struct ImmigrationLaw {
    probs: Vec<f64>,
}

impl ImmigrationLaw {
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// True when no immigrant can arrive.
    pub fn is_trivial(&self) -> bool {
        self.probs.iter().skip(1).all(|&p| p == 0.0)
    }

    pub fn eval(&self, s: f64) -> f64 {
        poly::eval(&self.probs, s)
    }

    /// `h(g)` given the powers `g^1..g^kappa` (index 0 of `powers` is `g`).
    pub fn apply_powers(&self, powers: &[Vec<f64>], len: usize) -> Vec<f64> {
        let mut out = vec![0.0; len];
        out[0] = self.probs[0];
        for (k, &p) in self.probs.iter().enumerate().skip(1) {
            if p == 0.0 {
                continue;
            }
            for (o, &v) in out.iter_mut().zip(&powers[k - 1]) {
                *o += p * v;
            }
        }
        out
    }
}

/// Offspring generating function of generation `n` (`n >= 1`).
pub fn offspring_gf(spec: &EnvironmentSpec, n: u64, order: usize) -> TruncatedSeries {
    spec.offspring_law(n).to_series(order)
}

/// Immigration generating function of generation `n`; constant one without
/// immigration.
pub fn immigration_gf(spec: &EnvironmentSpec, n: u64, order: usize) -> Result<TruncatedSeries> {
    let law = spec.immigration_law(n);
    let mut coeffs = vec![0.0; order + 1];
    for (c, &p) in coeffs.iter_mut().zip(law.probs()) {
        *c = p;
    }
    TruncatedSeries::from_coeffs(coeffs)
}

/// `mean_{j+1} ... mean_n`.
pub fn cumulative_mean(spec: &EnvironmentSpec, j: u64, n: u64) -> f64 {
    let from = (j + 1).max(spec.start_index());
    (from..=n).map(|k| spec.mean(k)).product()
}

/// `A(n) = min { m >= 1 : mean_{0,m} <= 1/n }`, searched up to [`HORIZON_CAP`].
pub fn scaling_a(spec: &EnvironmentSpec, n: u64) -> Result<u64> {
    if n == 0 {
        return Err(Error::InvalidGrid("scale parameter must be at least 1".into()));
    }
    let target = (1.0 + SCALING_SLACK) / n as f64;
    let mut prod = 1.0;
    for m in 1..=HORIZON_CAP {
        prod *= spec.mean(m);
        if prod <= target {
            return Ok(m);
        }
    }
    Err(Error::HorizonExhausted {
        n,
        horizon: HORIZON_CAP as usize,
    })
}

/// Cumulative means `mean_{0,m}` up to a horizon, answering `A(n)` queries
/// by binary search.
#[derive(Debug, Clone)]
pub struct ScalingTable {
    products: Vec<f64>,
}

impl ScalingTable {
    /// Table covering generations `0..=horizon`.
    pub fn new(spec: &EnvironmentSpec, horizon: u64) -> Result<Self> {
        if horizon > HORIZON_CAP {
            return Err(Error::HorizonExhausted {
                n: horizon,
                horizon: HORIZON_CAP as usize,
            });
        }
        let mut products = Vec::with_capacity(horizon as usize + 1);
        let mut prod = 1.0;
        products.push(prod);
        for m in 1..=horizon {
            prod *= spec.mean(m);
            products.push(prod);
        }
        Ok(Self { products })
    }

    /// Smallest table with `A(n_max)` inside it.
    pub fn covering(spec: &EnvironmentSpec, n_max: u64) -> Result<Self> {
        let horizon = scaling_a(spec, n_max)?;
        Self::new(spec, horizon)
    }

    pub fn horizon(&self) -> u64 {
        self.products.len() as u64 - 1
    }

    /// `mean_{0,m}`.
    pub fn cumulative(&self, m: u64) -> f64 {
        self.products[m as usize]
    }

    /// `mean_{j,n}` as a ratio of table entries.
    pub fn cumulative_between(&self, j: u64, n: u64) -> f64 {
        self.products[n as usize] / self.products[j as usize]
    }

    pub fn a(&self, n: u64) -> Result<u64> {
        if n == 0 {
            return Err(Error::InvalidGrid("scale parameter must be at least 1".into()));
        }
        let target = (1.0 + SCALING_SLACK) / n as f64;
        // products is nonincreasing; find the first index m >= 1 below target
        let idx = self.products[1..].partition_point(|&p| p > target) + 1;
        if idx >= self.products.len() {
            return Err(Error::HorizonExhausted {
                n,
                horizon: self.horizon() as usize,
            });
        }
        Ok(idx as u64)
    }

    /// Generation `A(floor(n t))` observed at scaled time `t`.
    pub fn generation_at(&self, n: u64, t: f64) -> Result<u64> {
        self.a(scaled_index(n, t)?)
    }
}

/// `floor(n t)`, which must be at least one.
pub fn scaled_index(n: u64, t: f64) -> Result<u64> {
    let nt = math::floor(n as f64 * t * (1.0 + 1e-12));
    if !(nt >= 1.0) {
        return Err(Error::InvalidGrid(format!(
            "time {t} at scale {n} maps below generation index 1"
        )));
    }
    Ok(nt as u64)
}

/// `phi(s) = 1/(1 - f(s)) - 1/(mean (1 - s))`, with `phi(1) = f''(1) / (2 mean^2)`.
pub fn shape_function(f: &TruncatedSeries, s: f64) -> Result<f64> {
    let m = f.mean();
    if !(m > 0.0) {
        return Err(Error::DegenerateOffspring);
    }
    if s == 1.0 {
        return Ok(f.factorial_moment(2)? / (2.0 * m * m));
    }
    let fs = f.eval(s)?;
    let gap = 1.0 - fs;
    if gap <= 0.0 {
        return Err(Error::DegenerateOffspring);
    }
    Ok(1.0 / gap - 1.0 / (m * (1.0 - s)))
}

/// Residual of the shape-function telescoping identity on the chain
/// `f_{j+1} o ... o f_n` at point `s`:
/// `1/(1 - f_{j,n}(s)) - 1/(mean_{j,n} (1 - s)) - sum_k phi_k(f_{k,n}(s)) / mean_{j,k-1}`.
pub fn shape_telescoping_residual(
    spec: &EnvironmentSpec,
    j: u64,
    n: u64,
    s: f64,
    order: usize,
) -> Result<f64> {
    if !(0.0..1.0).contains(&s) {
        return Err(Error::OutOfDomain {
            what: "s",
            value: s,
            domain: "[0, 1)",
        });
    }
    // values f_{k,n}(s) for k = n, n-1, ..., j and the shape terms
    let mut v = s;
    let mut terms = Vec::with_capacity((n - j) as usize);
    for k in (j + 1..=n).rev() {
        let f = offspring_gf(spec, k, order);
        terms.push((k, shape_function(&f, v)?));
        v = f.eval(v)?;
    }
    let mut sum = 0.0;
    for (k, phi) in terms {
        sum += phi / cumulative_mean(spec, j, k - 1);
    }
    let lhs = 1.0 / (1.0 - v) - 1.0 / (cumulative_mean(spec, j, n) * (1.0 - s));
    Ok(lhs - sum)
}

/// Numeric view of the regularity conditions up to a horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionDiagnostics {
    pub horizon: u64,
    /// `sum_j a^{(k)}_{n,j} x_j` for `k = 1, 2` with `x_j = f_j''(1) / (2 (1 - mean_j))`;
    /// limits are `nu / (2k)`.
    pub toeplitz: [f64; 2],
    /// `sup_s |phi_n(1) - phi_n(s)| / (1 - mean_n)` at `n = horizon` over 100 points of `[0, 1)`.
    pub shape_sup_ratio: f64,
    /// `sum_{j <= horizon} (1 - mean_j)`.
    pub variance_sum: f64,
}

pub fn condition_diagnostics(
    spec: &EnvironmentSpec,
    horizon: u64,
    order: usize,
) -> Result<ConditionDiagnostics> {
    if horizon == 0 || horizon > HORIZON_CAP {
        return Err(Error::HorizonExhausted {
            n: horizon,
            horizon: HORIZON_CAP as usize,
        });
    }
    let mut toeplitz = [0.0; 2];
    // backward so mean_{j,n} accumulates as a running product
    let mut tail = 1.0;
    for j in (1..=horizon).rev() {
        let m = spec.mean(j);
        let defect = 1.0 - m;
        if defect > 0.0 {
            let x = spec.offspring_law(j).second_factorial_moment() / (2.0 * defect);
            toeplitz[0] += defect * tail * x;
            toeplitz[1] += defect * tail * tail * x;
        }
        tail *= m;
    }
    let variance_sum = (1..=horizon).map(|j| 1.0 - spec.mean(j)).sum();
    let defect = 1.0 - spec.mean(horizon);
    let shape_sup_ratio = if defect > 0.0 {
        let f = offspring_gf(spec, horizon, order);
        let at_one = shape_function(&f, 1.0)?;
        let mut sup: f64 = 0.0;
        for i in 0..100 {
            let s = i as f64 / 100.0;
            sup = sup.max((at_one - shape_function(&f, s)?).abs());
        }
        sup / defect
    } else {
        0.0
    };
    Ok(ConditionDiagnostics {
        horizon,
        toeplitz,
        shape_sup_ratio,
        variance_sum,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gf::{lf_gf, LinearFractionalParams};

    fn lf(nu: f64) -> EnvironmentSpec {
        EnvironmentSpec::new(OffspringFamily::LinearFractional, 1.0, nu).unwrap()
    }

    fn bern() -> EnvironmentSpec {
        EnvironmentSpec::new(OffspringFamily::Bernoulli, 1.0, 0.0).unwrap()
    }

    #[test]
    fn offspring_examples() {
        let f = offspring_gf(&bern(), 4, 8);
        assert!((f.coeff(0) - 0.25).abs() < 1e-15);
        assert!((f.coeff(1) - 0.75).abs() < 1e-15);
        assert_eq!(offspring_gf(&lf(2.0), 1, 8), TruncatedSeries::identity(8));
        let spec = lf(2.0);
        for n in [10, 1000, 100_000] {
            let f = offspring_gf(&spec, n, 256);
            let ratio = f.factorial_moment(2).unwrap() / (1.0 - spec.mean(n));
            assert!((ratio - 2.0).abs() < 1e-8, "n={n} ratio={ratio}");
            assert!((f.mean() - spec.mean(n)).abs() < 1e-12);
        }
    }

    #[test]
    fn bernoulli_rejects_positive_nu() {
        assert!(EnvironmentSpec::new(OffspringFamily::Bernoulli, 1.0, 1.0).is_err());
        assert!(EnvironmentSpec::new(OffspringFamily::LinearFractional, 0.0, 1.0).is_err());
        assert!(lf(1.0).with_start_index(1).is_err());
    }

    #[test]
    fn immigration_examples() {
        let c1 = bern()
            .with_immigration(vec![ImmigrationAtom { value: 1, weight: 1.0 }])
            .unwrap();
        assert_eq!(
            immigration_gf(&c1, 1, 8).unwrap(),
            TruncatedSeries::constant_one(8)
        );
        let g = immigration_gf(&c1, 2, 8).unwrap();
        assert_eq!(g.coeff(0), 0.5);
        assert_eq!(g.coeff(1), 0.5);
        let c2 = lf(2.0)
            .with_immigration(vec![ImmigrationAtom { value: 2, weight: 1.0 }])
            .unwrap();
        assert_eq!(c2.lambdas(), vec![2.0, 1.0]);
        // factorial moments scaled by j! (1 - mean_n)
        let n = 50;
        let h = immigration_gf(&c2, n, 16).unwrap();
        let d = 1.0 - c2.mean(n);
        assert!((h.factorial_moment(1).unwrap() / d - 2.0).abs() < 1e-12);
        assert!((h.factorial_moment(2).unwrap() / (2.0 * d) - 1.0).abs() < 1e-12);
        assert_eq!(h.factorial_moment(3).unwrap(), 0.0);
        let too_heavy = lf(2.0).with_immigration(vec![ImmigrationAtom { value: 1, weight: 3.0 }]);
        assert!(too_heavy.is_err());
    }

    #[test]
    fn cumulative_mean_examples() {
        let spec = bern();
        assert!((cumulative_mean(&spec, 0, 10) - 0.1).abs() < 1e-15);
        assert_eq!(cumulative_mean(&spec, 7, 7), 1.0);
        let table = ScalingTable::covering(&spec, 10_000).unwrap();
        let n = 10_000;
        let ratio = table.cumulative_between(
            table.generation_at(n, 0.5).unwrap(),
            table.generation_at(n, 1.0).unwrap(),
        );
        assert!((ratio - 0.5).abs() < 1e-3);
    }

    #[test]
    fn scaling_examples() {
        let spec = lf(2.0);
        assert_eq!(scaling_a(&spec, 100).unwrap(), 100);
        assert_eq!(scaling_a(&spec, 1).unwrap(), 1);
        let table = ScalingTable::covering(&spec, 5000).unwrap();
        for n in [1, 2, 3, 17, 100, 4999, 5000] {
            assert_eq!(table.a(n).unwrap(), n);
        }
        assert!(table.a(5001).is_err());
    }

    #[test]
    fn scaling_square_root_growth() {
        // mean_{0,m} ~ c / m^2 with c = 2 for alpha = 2, so A(n) ~ sqrt(2 n)
        let spec = EnvironmentSpec::new(OffspringFamily::LinearFractional, 2.0, 1.0).unwrap();
        let mut last = 0.0;
        for n in [100_000u64, 1_000_000, 10_000_000, 100_000_000] {
            let r = scaling_a(&spec, n).unwrap() as f64 / (n as f64).sqrt();
            last = r;
        }
        assert!((last - 2f64.sqrt()).abs() < 1e-3, "ratio {last}");
    }

    #[test]
    fn scaling_sandwich() {
        let spec = EnvironmentSpec::new(OffspringFamily::LinearFractional, 1.5, 2.0).unwrap();
        let table = ScalingTable::covering(&spec, 3000).unwrap();
        let lower = (1..=table.horizon()).map(|m| spec.mean(m)).fold(1.0, f64::min);
        let mut prev = 0;
        for n in 1..=3000 {
            let a = table.a(n).unwrap();
            let v = n as f64 * table.cumulative(a);
            assert!(v > lower && v <= 1.0 + 1e-8, "n={n} v={v}");
            assert!(a >= prev);
            prev = a;
        }
    }

    #[test]
    fn shape_function_examples() {
        let b = TruncatedSeries::bernoulli(0.6, 16).unwrap();
        for s in [0.0, 0.3, 0.9, 1.0] {
            assert!(shape_function(&b, s).unwrap().abs() < 1e-12);
        }
        let p = LinearFractionalParams::new(0.4, 2.0).unwrap();
        let h = lf_gf(&p, 256);
        let at0 = shape_function(&h, 0.0).unwrap();
        assert!((at0 - (1.0 / (1.0 - p.zero_value()) - 1.0 / 0.4)).abs() < 1e-12);
        let at1 = shape_function(&h, 1.0).unwrap();
        let want = h.factorial_moment(2).unwrap() / (2.0 * 0.16);
        assert!((at1 - want).abs() < 1e-12);
        // constant shape function for linear-fractional laws
        assert!((at0 - at1).abs() < 1e-10);
        assert!(shape_function(&TruncatedSeries::constant_one(4), 0.5).is_err());
    }

    #[test]
    fn telescoping_identity() {
        for spec in [lf(2.0), lf(0.7), bern()] {
            for s in [0.0, 0.4, 0.9] {
                let r = shape_telescoping_residual(&spec, 2, 50, s, 256).unwrap();
                assert!(r.abs() < 1e-8, "residual {r}");
            }
        }
    }

    #[test]
    fn diagnostics_examples() {
        let d = condition_diagnostics(&bern(), 1000, 16).unwrap();
        assert_eq!(d.toeplitz, [0.0, 0.0]);
        assert!(d.shape_sup_ratio < 1e-6);
        let horizon = 100_000;
        let lfd = condition_diagnostics(&lf(2.0), horizon, 256).unwrap();
        assert!((0.95..=1.05).contains(&lfd.toeplitz[0]), "{:?}", lfd);
        assert!((lfd.toeplitz[1] - 0.5).abs() < 0.05);
        assert!(lfd.shape_sup_ratio <= 0.05);
        let harmonic = (horizon as f64).ln();
        assert!((lfd.variance_sum - harmonic).abs() <= 2.0);
    }
}
