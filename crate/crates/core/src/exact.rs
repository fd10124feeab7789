//! Exact laws of `X_n` and `Y_n` through backward composition.
//!
//! For a window `(j, n]` one sweep from `l = n` down to `l = j + 1` keeps
//! `F = f_{l,n}` and the running product `G = prod h_l(f_{l,n})`, so both
//! `f_{j,n}` and `g_{j,n}` come out of the same pass. Windows glue as
//! `(F1, G1) + (F2, G2) = (F1 o F2, (G1 o F2) G2)`.

use alloc::vec;
use alloc::vec::Vec;

use crate::environment::{cumulative_mean, EnvironmentSpec, HORIZON_CAP};
use crate::error::{Error, Result};
use crate::gf::{poly, LinearFractionalLaw, TruncatedSeries};

/// Generating functions of one window `(from, to]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub from: u64,
    pub to: u64,
    /// `f_{from,to}`: offspring of one individual alive at `from`.
    pub f: TruncatedSeries,
    /// `g_{from,to}`: descendants at `to` of immigrants arriving in the window.
    pub g: TruncatedSeries,
}

impl Segment {
    pub fn identity(at: u64, order: usize) -> Self {
        Self {
            from: at,
            to: at,
            f: TruncatedSeries::identity(order),
            g: TruncatedSeries::constant_one(order),
        }
    }

    /// Window `(j, n]` by one backward sweep.
    pub fn build(spec: &EnvironmentSpec, j: u64, n: u64, order: usize) -> Result<Self> {
        if j > n {
            return Err(Error::InvalidGrid(alloc::format!(
                "window start {j} exceeds end {n}"
            )));
        }
        if n > HORIZON_CAP {
            return Err(Error::HorizonExhausted {
                n,
                horizon: HORIZON_CAP as usize,
            });
        }
        let len = order + 1;
        let kappa = spec.max_immigrants();
        let mut f = TruncatedSeries::identity(order);
        let mut g = TruncatedSeries::constant_one(order);
        let first = (j + 1).max(spec.start_index());
        for l in (first..=n).rev() {
            if kappa > 0 {
                let h = spec.immigration_law(l);
                let mut powers = Vec::with_capacity(kappa);
                powers.push(f.coeffs().to_vec());
                for k in 1..kappa {
                    let next = poly::mul(&powers[k - 1], f.coeffs(), len);
                    powers.push(next);
                }
                let hf = h.apply_powers(&powers, len);
                g = TruncatedSeries::from_coeffs(poly::mul(g.coeffs(), &hf, len))?;
            }
            f = spec.offspring_law(l).apply(&f);
        }
        Ok(Self {
            from: j,
            to: n,
            f,
            g,
        })
    }

    /// The window `(self.from, next.to]`.
    pub fn then(&self, next: &Self) -> Result<Self> {
        if self.to != next.from {
            return Err(Error::InvalidGrid(alloc::format!(
                "windows ({}, {}] and ({}, {}] do not meet",
                self.from,
                self.to,
                next.from,
                next.to
            )));
        }
        Ok(Self {
            from: self.from,
            to: next.to,
            f: self.f.compose(&next.f)?,
            g: self.g.compose(&next.f)?.mul(&next.g)?,
        })
    }

    /// Law at `to` of `X` started from `x` individuals at `from`.
    pub fn transition_x(&self, x: u64) -> TruncatedSeries {
        self.f.power(x)
    }

    /// Law at `to` of `Y` started from `y` individuals at `from`.
    pub fn transition_y(&self, y: u64) -> Result<TruncatedSeries> {
        self.g.mul(&self.f.power(y))
    }

    /// Rows `x = 0..=max_state` of the transition matrix of `X`.
    pub fn rows_x(&self, max_state: usize) -> Vec<TruncatedSeries> {
        self.rows_from(TruncatedSeries::constant_one(self.f.order()), max_state)
    }

    /// Rows `y = 0..=max_state` of the transition matrix of `Y`.
    pub fn rows_y(&self, max_state: usize) -> Vec<TruncatedSeries> {
        self.rows_from(self.g.clone(), max_state)
    }

    fn rows_from(&self, start: TruncatedSeries, max_state: usize) -> Vec<TruncatedSeries> {
        let len = self.f.coeffs().len();
        let mut rows = Vec::with_capacity(max_state + 1);
        rows.push(start);
        for x in 1..=max_state {
            let next = poly::mul(rows[x - 1].coeffs(), self.f.coeffs(), len);
            rows.push(
                TruncatedSeries::from_coeffs(next).expect("products of pmfs stay valid"),
            );
        }
        rows
    }
}

/// Cached windows between sorted checkpoints `0 = c_0 < c_1 < ...`.
#[derive(Debug, Clone)]
pub struct CompositionChain {
    spec: EnvironmentSpec,
    order: usize,
    checkpoints: Vec<u64>,
    segments: Vec<Segment>,
}

impl CompositionChain {
    pub fn new(spec: &EnvironmentSpec, checkpoints: &[u64], order: usize) -> Result<Self> {
        let mut points: Vec<u64> = checkpoints.to_vec();
        points.push(0);
        points.sort_unstable();
        points.dedup();
        let mut segments = Vec::with_capacity(points.len() - 1);
        for pair in points.windows(2) {
            segments.push(Segment::build(spec, pair[0], pair[1], order)?);
        }
        Ok(Self {
            spec: spec.clone(),
            order,
            checkpoints: points,
            segments,
        })
    }

    pub fn spec(&self) -> &EnvironmentSpec {
        &self.spec
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Checkpoints including the leading zero.
    pub fn checkpoints(&self) -> &[u64] {
        &self.checkpoints
    }

    /// Window between consecutive checkpoints `i` and `i + 1`.
    pub fn segment(&self, i: usize) -> &Segment {
        &self.segments[i]
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    fn index_of(&self, generation: u64) -> Result<usize> {
        self.checkpoints
            .binary_search(&generation)
            .map_err(|_| Error::InvalidGrid(alloc::format!("{generation} is not a checkpoint")))
    }

    /// Window between two checkpoints, glued from cached pieces.
    pub fn window(&self, j: u64, n: u64) -> Result<Segment> {
        let (a, b) = (self.index_of(j)?, self.index_of(n)?);
        if a > b {
            return Err(Error::InvalidGrid(alloc::format!(
                "window start {j} exceeds end {n}"
            )));
        }
        let mut acc = Segment::identity(j, self.order);
        for seg in &self.segments[a..b] {
            acc = acc.then(seg)?;
        }
        Ok(acc)
    }

    /// `f_{c,T}(0)` for every checkpoint `c <= T`, where `T` is a checkpoint.
    pub fn extinction_by(&self, target: u64) -> Result<Vec<f64>> {
        let b = self.index_of(target)?;
        let mut out = vec![0.0; b + 1];
        let mut v = 0.0;
        for i in (0..b).rev() {
            v = self.segments[i].f.eval(v)?;
            out[i] = v;
        }
        Ok(out)
    }
}

/// Closed-form `f_{j,n}` when every offspring law is linear-fractional.
pub fn closed_form_chain(spec: &EnvironmentSpec, j: u64, n: u64) -> LinearFractionalLaw {
    let mut acc = LinearFractionalLaw::IDENTITY;
    for l in (j + 1).max(spec.start_index())..=n {
        acc = acc.compose(&spec.offspring_law(l));
    }
    acc
}

/// Law of `X_n` with `X_0 = 1`.
pub fn marginal_pmf_x(spec: &EnvironmentSpec, n: u64, order: usize) -> Result<TruncatedSeries> {
    Ok(Segment::build(&offspring_only(spec), 0, n, order)?.f)
}

/// `P(X_n > 0)`.
pub fn survival_probability(spec: &EnvironmentSpec, n: u64, order: usize) -> Result<f64> {
    Ok(1.0 - marginal_pmf_x(spec, n, order)?.coeff(0))
}

/// Law of `X_n` given `X_n > 0`.
pub fn conditional_pmf_survival(
    spec: &EnvironmentSpec,
    n: u64,
    order: usize,
) -> Result<TruncatedSeries> {
    marginal_pmf_x(spec, n, order)?
        .conditioned_positive()
        .map_err(|_| Error::CertainExtinction { generation: n })
}

/// Law of `X_n` given `X_j = x`.
pub fn transition_pmf_x(
    spec: &EnvironmentSpec,
    j: u64,
    n: u64,
    x: u64,
    order: usize,
) -> Result<TruncatedSeries> {
    Ok(Segment::build(&offspring_only(spec), j, n, order)?.transition_x(x))
}

/// Law of `Y_n` with `Y_0 = 0`.
pub fn marginal_pmf_y(spec: &EnvironmentSpec, n: u64, order: usize) -> Result<TruncatedSeries> {
    Ok(Segment::build(spec, 0, n, order)?.g)
}

/// Law of `Y_n` given `Y_j = y`.
pub fn transition_pmf_y(
    spec: &EnvironmentSpec,
    j: u64,
    n: u64,
    y: u64,
    order: usize,
) -> Result<TruncatedSeries> {
    Segment::build(spec, j, n, order)?.transition_y(y)
}

/// `E[X_n | X_j > 0] = mean_{0,n} / P(X_j > 0)` for `j <= n`.
pub fn conditional_mean_x(spec: &EnvironmentSpec, j: u64, n: u64, order: usize) -> Result<f64> {
    if j > n {
        return Err(Error::InvalidGrid(alloc::format!(
            "conditioning time {j} exceeds {n}"
        )));
    }
    let survival = survival_probability(spec, j, order)?;
    if survival <= 0.0 {
        return Err(Error::CertainExtinction { generation: j });
    }
    Ok(cumulative_mean(spec, 0, n) / survival)
}

/// Laws of `X_c` given `X_target > 0` for each generation `c`.
/// Past the target the conditioned law at `target` is pushed forward freely.
pub fn conditioned_marginals_x(
    spec: &EnvironmentSpec,
    target: u64,
    generations: &[u64],
    order: usize,
) -> Result<Vec<TruncatedSeries>> {
    let mut points = generations.to_vec();
    points.push(target);
    let chain = CompositionChain::new(&offspring_only(spec), &points, order)?;
    let extinction = chain.extinction_by(target)?;
    let survival = 1.0 - extinction[0];
    if survival <= 0.0 {
        return Err(Error::CertainExtinction { generation: target });
    }
    let at_target = chain.window(0, target)?.f.conditioned_positive()?;
    generations
        .iter()
        .map(|&c| {
            if c <= target {
                let i = chain.index_of(c)?;
                let law = chain.window(0, c)?.f;
                let v = extinction[i];
                let coeffs = law
                    .coeffs()
                    .iter()
                    .enumerate()
                    .map(|(x, p)| {
                        if x == 0 {
                            0.0
                        } else {
                            p * -crate::math::expm1(x as f64 * crate::math::ln(v)) / survival
                        }
                    })
                    .collect();
                TruncatedSeries::from_coeffs(coeffs)
            } else {
                let rows = chain.window(target, c)?.rows_x(order);
                let mut out = vec![0.0; order + 1];
                for (x, w) in at_target.coeffs().iter().enumerate() {
                    for (o, r) in out.iter_mut().zip(rows[x].coeffs()) {
                        *o += w * r;
                    }
                }
                TruncatedSeries::from_coeffs(out)
            }
        })
        .collect()
}

fn offspring_only(spec: &EnvironmentSpec) -> EnvironmentSpec {
    if spec.has_immigration() {
        spec.clone()
            .with_immigration(Vec::new())
            .expect("empty immigration is valid")
    } else {
        spec.clone()
    }
}
