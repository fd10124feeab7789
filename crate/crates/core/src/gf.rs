//! Truncated probability generating functions.
//!
//! A [`TruncatedSeries`] stores `P(value = k)` for `k = 0..=N` and keeps the
//! mass above `N` as an explicit `tail_mass`. Every operation keeps the
//! identity `sum(coeffs) + tail_mass = 1`; mass that an operation cannot
//! place below `N` lands in the tail instead of being renormalized away.
//!
//! The linear-fractional family is available both as the one-parameter
//! family `h_a` ([`LinearFractionalParams`]) and in the general
//! mean/shape form ([`LinearFractionalLaw`]), which is closed under
//! composition and therefore gives closed-form oracles for composition
//! chains.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

/// Default truncation order shared by all series in one computation.
pub const DEFAULT_ORDER: usize = 256;

/// Coefficients in `[-COEFF_TOL, 0)` are clamped to zero; anything lower is an error.
pub const COEFF_TOL: f64 = 1e-12;

/// Allowed excess of `sum(coeffs)` over one.
pub const MASS_TOL: f64 = 1e-10;

/// Raw coefficient-vector arithmetic, truncated to a fixed length.
pub mod poly {
    use alloc::vec;
    use alloc::vec::Vec;

    /// Product of `a` and `b` keeping terms of degree `< len`.
    pub fn mul(a: &[f64], b: &[f64], len: usize) -> Vec<f64> {
        let mut out = vec![0.0; len];
        let da = effective_len(a).min(len);
        let db = effective_len(b).min(len);
        for (i, &ai) in a[..da].iter().enumerate() {
            if ai == 0.0 {
                continue;
            }
            let upto = (len - i).min(db);
            for (o, &bj) in out[i..i + upto].iter_mut().zip(&b[..upto]) {
                *o += ai * bj;
            }
        }
        out
    }

    /// Quotient `a / b` as a power series; requires `b[0] != 0`.
    pub fn div(a: &[f64], b: &[f64], len: usize) -> Vec<f64> {
        let b0 = b[0];
        let db = effective_len(b).min(len);
        let mut q = vec![0.0; len];
        for k in 0..len {
            let mut acc = a.get(k).copied().unwrap_or(0.0);
            let upper = k.min(db.saturating_sub(1));
            for i in 1..=upper {
                acc -= b[i] * q[k - i];
            }
            q[k] = acc / b0;
        }
        q
    }

    /// `f(g(s))` truncated to `len` terms.
    ///
    /// Baby-step/giant-step Horner: the powers `g^0..g^m` are formed once
    /// with `m ~ sqrt(deg f)`, inner blocks are linear combinations of
    /// them and the outer Horner loop runs in `g^m`.
    pub fn compose(f: &[f64], g: &[f64], len: usize) -> Vec<f64> {
        let df = effective_len(f);
        if df == 0 {
            return vec![0.0; len];
        }
        if df <= 2 {
            let mut out = vec![0.0; len];
            let f1 = if df == 2 { f[1] } else { 0.0 };
            for (o, &gk) in out.iter_mut().zip(g) {
                *o = f1 * gk;
            }
            out[0] += f[0];
            return out;
        }
        let mut m = 1;
        while m * m < df {
            m += 1;
        }
        let mut powers: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
        let mut one = vec![0.0; len];
        one[0] = 1.0;
        powers.push(one);
        let mut g_trunc = vec![0.0; len];
        for (o, &gk) in g_trunc.iter_mut().zip(g) {
            *o = gk;
        }
        powers.push(g_trunc);
        for i in 2..=m {
            let next = mul(&powers[i - 1], &powers[1], len);
            powers.push(next);
        }
        let blocks = df.div_ceil(m);
        let block = |j: usize| -> Vec<f64> {
            let mut out = vec![0.0; len];
            for i in 0..m {
                let idx = j * m + i;
                if idx >= df {
                    break;
                }
                let c = f[idx];
                if c == 0.0 {
                    continue;
                }
                for (o, &p) in out.iter_mut().zip(&powers[i]) {
                    *o += c * p;
                }
            }
            out
        };
        let giant = &powers[m];
        let mut acc = block(blocks - 1);
        for j in (0..blocks - 1).rev() {
            let mut next = mul(&acc, giant, len);
            for (n, b) in next.iter_mut().zip(block(j)) {
                *n += b;
            }
            acc = next;
        }
        acc
    }

    /// Formal logarithm; requires `f[0] > 0`.
    pub fn log(f: &[f64], len: usize) -> Vec<f64> {
        let f0 = f[0];
        let mut out = vec![0.0; len];
        out[0] = crate::math::ln(f0);
        // k L_k = k f_k / f_0 - sum_{i=1}^{k-1} i L_i f_{k-i} / f_0
        for k in 1..len {
            let mut acc = k as f64 * f.get(k).copied().unwrap_or(0.0);
            for i in 1..k {
                acc -= i as f64 * out[i] * f.get(k - i).copied().unwrap_or(0.0);
            }
            out[k] = acc / (k as f64 * f0);
        }
        out
    }

    /// Formal exponential.
    pub fn exp(c: &[f64], len: usize) -> Vec<f64> {
        let mut out = vec![0.0; len];
        out[0] = crate::math::exp(c.first().copied().unwrap_or(0.0));
        let dc = effective_len(c);
        // k E_k = sum_{i=1}^{k} i c_i E_{k-i}
        for k in 1..len {
            let mut acc = 0.0;
            for i in 1..=k.min(dc.saturating_sub(1)) {
                acc += i as f64 * c[i] * out[k - i];
            }
            out[k] = acc / k as f64;
        }
        out
    }

    /// Re-expand `sum_k c_k (s - 1)^k` as a polynomial in `s`.
    pub fn from_shifted(c: &[f64]) -> Vec<f64> {
        let d = c.len();
        let mut out = vec![0.0; d];
        for (k, &ck) in c.iter().enumerate() {
            if ck == 0.0 {
                continue;
            }
            // (s-1)^k = sum_j binom(k,j) s^j (-1)^{k-j}
            let mut binom = 1.0;
            for j in 0..=k {
                let sign = if (k - j) % 2 == 0 { 1.0 } else { -1.0 };
                out[j] += ck * sign * binom;
                binom = binom * (k - j) as f64 / (j + 1) as f64;
            }
        }
        out
    }

    /// Horner evaluation at `s`.
    pub fn eval(c: &[f64], s: f64) -> f64 {
        c.iter().rev().fold(0.0, |acc, &ck| acc * s + ck)
    }

    /// Length after dropping trailing exact zeros.
    pub fn effective_len(c: &[f64]) -> usize {
        c.iter().rposition(|&x| x != 0.0).map_or(0, |i| i + 1)
    }
}

/// Declares which variable a formal coefficient vector is expanded in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Basis {
    /// `sum_k c_k s^k`
    Powers,
    /// `sum_k c_k (s - 1)^k`
    ShiftedPowers,
}

/// Probability generating function truncated at order `N` with tracked tail.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedSeries {
    coeffs: Vec<f64>,
    tail_mass: f64,
}

impl TruncatedSeries {
    /// Validates and wraps `coeffs` (length `N + 1`). Tiny negative values
    /// from cancellation are clamped; the tail is whatever mass is missing.
    pub fn from_coeffs(mut coeffs: Vec<f64>) -> Result<Self> {
        assert!(!coeffs.is_empty(), "truncation order must be at least 0");
        let mut sum = 0.0;
        for (index, c) in coeffs.iter_mut().enumerate() {
            if !c.is_finite() || *c < -COEFF_TOL {
                return Err(Error::NegativeCoefficient { index, value: *c });
            }
            if *c > 1.0 + COEFF_TOL {
                return Err(Error::MassExceeded { sum: *c });
            }
            if *c < 0.0 {
                *c = 0.0;
            }
            sum += *c;
        }
        if sum > 1.0 + MASS_TOL {
            return Err(Error::MassExceeded { sum });
        }
        Ok(Self {
            coeffs,
            tail_mass: (1.0 - sum).max(0.0),
        })
    }

    /// Point mass at `k`; if `k > order` all mass sits in the tail.
    pub fn point_mass(k: usize, order: usize) -> Self {
        let mut coeffs = vec![0.0; order + 1];
        let tail_mass = if k <= order {
            coeffs[k] = 1.0;
            0.0
        } else {
            1.0
        };
        Self { coeffs, tail_mass }
    }

    /// The identity generating function `s`.
    pub fn identity(order: usize) -> Self {
        Self::point_mass(1, order)
    }

    /// The constant generating function `1` (point mass at zero).
    pub fn constant_one(order: usize) -> Self {
        Self::point_mass(0, order)
    }

    /// `1 - m + m s`.
    pub fn bernoulli(m: f64, order: usize) -> Result<Self> {
        check_unit("bernoulli mean", m)?;
        let mut coeffs = vec![0.0; order + 1];
        coeffs[0] = 1.0 - m;
        if order >= 1 {
            coeffs[1] = m;
        }
        Self::from_coeffs(coeffs)
    }

    /// Geometric law on `{1, 2, ...}` with `P(k) = (1-p)^{k-1} p`.
    pub fn geometric(p: f64, order: usize) -> Result<Self> {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::OutOfDomain {
                what: "geometric parameter",
                value: p,
                domain: "(0, 1]",
            });
        }
        let q = 1.0 - p;
        let mut coeffs = vec![0.0; order + 1];
        let mut term = p;
        for c in coeffs.iter_mut().skip(1) {
            *c = term;
            term *= q;
        }
        Self::from_coeffs(coeffs)
    }

    /// Poisson law with mean `lambda`.
    pub fn poisson(lambda: f64, order: usize) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::OutOfDomain {
                what: "poisson mean",
                value: lambda,
                domain: "[0, inf)",
            });
        }
        let mut coeffs = vec![0.0; order + 1];
        let mut term = math::exp(-lambda);
        for (k, c) in coeffs.iter_mut().enumerate() {
            *c = term;
            term *= lambda / (k + 1) as f64;
        }
        Self::from_coeffs(coeffs)
    }

    /// Negative binomial law `P(k) = Gamma(k+r)/(Gamma(r) k!) p^r (1-p)^k`,
    /// generating function `(p / (1 - (1-p) s))^r`.
    pub fn negative_binomial(r: f64, p: f64, order: usize) -> Result<Self> {
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::OutOfDomain {
                what: "negative binomial size",
                value: r,
                domain: "(0, inf)",
            });
        }
        check_unit("negative binomial success probability", p)?;
        let q = 1.0 - p;
        let mut coeffs = vec![0.0; order + 1];
        let mut term = math::powf(p, r);
        for (k, c) in coeffs.iter_mut().enumerate() {
            *c = term;
            term *= q * (k as f64 + r) / (k + 1) as f64;
        }
        Self::from_coeffs(coeffs)
    }

    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// `P(value = k)`, zero beyond the truncation order.
    pub fn coeff(&self, k: usize) -> f64 {
        self.coeffs.get(k).copied().unwrap_or(0.0)
    }

    pub fn tail_mass(&self) -> f64 {
        self.tail_mass
    }

    /// `sum(coeffs)`, i.e. `1 - tail_mass` up to rounding.
    pub fn total_mass(&self) -> f64 {
        self.coeffs.iter().sum()
    }

    /// Probabilities with the tail appended as state `N + 1`.
    pub fn to_pmf(&self) -> Vec<f64> {
        let mut out = self.coeffs.clone();
        out.push(self.tail_mass);
        out
    }

    /// `sum_k coeffs[k] s^k` for `s` in `[0, 1]`.
    pub fn eval(&self, s: f64) -> Result<f64> {
        check_unit("s", s)?;
        Ok(poly::eval(&self.coeffs, s).clamp(0.0, 1.0))
    }

    /// `self(g(s))`, both truncated at the same order.
    pub fn compose(&self, g: &Self) -> Result<Self> {
        self.same_order(g)?;
        let len = self.coeffs.len();
        Self::from_coeffs(poly::compose(&self.coeffs, &g.coeffs, len))
    }

    /// Generating function of the sum of two independent variables.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.same_order(other)?;
        let len = self.coeffs.len();
        Self::from_coeffs(poly::mul(&self.coeffs, &other.coeffs, len))
    }

    /// Generating function of the sum of `x` independent copies.
    pub fn power(&self, mut x: u64) -> Self {
        let len = self.coeffs.len();
        let mut acc = vec![0.0; len];
        acc[0] = 1.0;
        let mut base = self.coeffs.clone();
        while x > 0 {
            if x & 1 == 1 {
                acc = poly::mul(&acc, &base, len);
            }
            x >>= 1;
            if x > 0 {
                base = poly::mul(&base, &base, len);
            }
        }
        Self::from_coeffs(acc).expect("products of probability vectors stay valid")
    }

    /// `f^{(k)}(1-)` from the stored coefficients. `k = 1` is the mean.
    pub fn factorial_moment(&self, k: usize) -> Result<f64> {
        if k == 0 || k > self.order() {
            return Err(Error::MomentOrder {
                k,
                order: self.order(),
            });
        }
        let mut total = 0.0;
        for (j, &c) in self.coeffs.iter().enumerate().skip(k) {
            let falling: f64 = (0..k).map(|i| (j - i) as f64).product();
            total += falling * c;
        }
        Ok(total)
    }

    pub fn mean(&self) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(j, &c)| j as f64 * c)
            .sum()
    }

    /// Law conditioned on a positive value: drops the atom at zero and
    /// renormalizes by `1 - coeffs[0]`.
    pub fn conditioned_positive(&self) -> Result<Self> {
        let positive = 1.0 - self.coeffs[0];
        if positive <= 0.0 {
            return Err(Error::CertainExtinction { generation: 0 });
        }
        let mut coeffs: Vec<f64> = self.coeffs.iter().map(|&c| c / positive).collect();
        coeffs[0] = 0.0;
        Ok(Self {
            coeffs,
            tail_mass: self.tail_mass / positive,
        })
    }

    fn same_order(&self, other: &Self) -> Result<()> {
        if self.order() != other.order() {
            return Err(Error::OrderMismatch {
                left: self.order(),
                right: other.order(),
            });
        }
        Ok(())
    }
}

/// Formal logarithm of a generating function with positive constant term.
pub fn series_log(f: &TruncatedSeries) -> Result<Vec<f64>> {
    let f0 = f.coeff(0);
    if f0 <= 0.0 {
        return Err(Error::LogOfNonPositive { value: f0 });
    }
    Ok(poly::log(f.coeffs(), f.coeffs().len()))
}

/// Formal exponential of a coefficient vector expanded in `basis`,
/// re-expanded in powers of `s` and truncated at `order`.
pub fn series_exp(c: &[f64], basis: Basis, order: usize) -> Result<TruncatedSeries> {
    let in_s = match basis {
        Basis::Powers => c.to_vec(),
        Basis::ShiftedPowers => poly::from_shifted(c),
    };
    TruncatedSeries::from_coeffs(poly::exp(&in_s, order + 1))
}

fn check_unit(what: &'static str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::OutOfDomain {
            what,
            value: v,
            domain: "[0, 1]",
        })
    }
}

/// The pair `(a, nu)` naming `h_a(s) = 1 - a (1/(1-s) + (nu/2)(1-a))^{-1}`,
/// the linear-fractional generating function with mean `a`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFractionalParams {
    a: f64,
    nu: f64,
}

impl LinearFractionalParams {
    pub fn new(a: f64, nu: f64) -> Result<Self> {
        check_unit("a", a)?;
        if !(nu >= 0.0 && nu.is_finite()) {
            return Err(Error::OutOfDomain {
                what: "nu",
                value: nu,
                domain: "[0, inf)",
            });
        }
        Ok(Self { a, nu })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    /// `h_a(s)`, written so that `s = 1` needs no division by zero.
    pub fn eval(&self, s: f64) -> f64 {
        let u = 1.0 - s;
        1.0 - self.a * u / (1.0 + 0.5 * self.nu * (1.0 - self.a) * u)
    }

    /// `h_a'(s)`.
    pub fn derivative(&self, s: f64) -> f64 {
        let d = 1.0 + 0.5 * self.nu * (1.0 - self.a) * (1.0 - s);
        self.a / (d * d)
    }

    /// `h_a(0)`, the extinction probability.
    pub fn zero_value(&self) -> f64 {
        self.eval(0.0)
    }

    /// The same law in mean/shape form.
    pub fn to_law(&self) -> LinearFractionalLaw {
        if self.a == 0.0 {
            LinearFractionalLaw::EXTINCT
        } else {
            LinearFractionalLaw {
                mean: self.a,
                shape: 0.5 * self.nu * (1.0 - self.a) / self.a,
            }
        }
    }
}

/// Expands `h_a` into coefficients; `nu = 0` gives Bernoulli(`a`).
pub fn lf_gf(p: &LinearFractionalParams, order: usize) -> TruncatedSeries {
    p.to_law().to_series(order)
}

/// `h_a o h_b = h_{ab}`.
pub fn lf_compose(
    p: &LinearFractionalParams,
    q: &LinearFractionalParams,
) -> Result<LinearFractionalParams> {
    if p.nu != q.nu {
        return Err(Error::NuMismatch {
            left: p.nu,
            right: q.nu,
        });
    }
    LinearFractionalParams::new(p.a * q.a, p.nu)
}

/// General linear-fractional generating function in mean/shape form:
/// `1/(1 - F(s)) = 1/(mean (1 - s)) + shape`.
///
/// The shape is the (constant) shape function of `F`, so composition acts
/// affinely: `(m1, phi1) o (m2, phi2) = (m1 m2, phi1 + phi2 / m1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFractionalLaw {
    pub mean: f64,
    pub shape: f64,
}

impl LinearFractionalLaw {
    /// The constant generating function 1.
    pub const EXTINCT: Self = Self {
        mean: 0.0,
        shape: 0.0,
    };

    pub const IDENTITY: Self = Self {
        mean: 1.0,
        shape: 0.0,
    };

    pub fn new(mean: f64, shape: f64) -> Result<Self> {
        check_unit("linear-fractional mean", mean)?;
        if !(shape >= 0.0 && shape.is_finite()) {
            return Err(Error::OutOfDomain {
                what: "linear-fractional shape",
                value: shape,
                domain: "[0, inf)",
            });
        }
        Ok(Self { mean, shape })
    }

    /// The geometric-tail parameter `c = mean * shape`, so that
    /// `F(s) = 1 - mean (1-s) / (1 + c (1-s))`.
    pub fn tail_scale(&self) -> f64 {
        self.mean * self.shape
    }

    pub fn eval(&self, s: f64) -> f64 {
        let u = 1.0 - s;
        1.0 - self.mean * u / (1.0 + self.tail_scale() * u)
    }

    /// `F''(1) = 2 mean^2 shape`.
    pub fn second_factorial_moment(&self) -> f64 {
        2.0 * self.mean * self.mean * self.shape
    }

    /// `self o inner`.
    pub fn compose(&self, inner: &Self) -> Self {
        if self.mean == 0.0 || inner.mean == 0.0 {
            return Self::EXTINCT;
        }
        Self {
            mean: self.mean * inner.mean,
            shape: self.shape + inner.shape / self.mean,
        }
    }

    /// Coefficients: `F[0] = 1 - m/(1+c)`, `F[k] = m r^{k-1} / (1+c)^2` with
    /// `r = c/(1+c)`.
    pub fn to_series(&self, order: usize) -> TruncatedSeries {
        let mut coeffs = vec![0.0; order + 1];
        let m = self.mean;
        let c = self.tail_scale();
        coeffs[0] = 1.0 - m / (1.0 + c);
        let r = c / (1.0 + c);
        let mut term = m / ((1.0 + c) * (1.0 + c));
        for coeff in coeffs.iter_mut().skip(1) {
            *coeff = term;
            term *= r;
            if term == 0.0 {
                break;
            }
        }
        TruncatedSeries::from_coeffs(coeffs).expect("linear-fractional coefficients are a pmf")
    }

    /// `self(g(s))` for a truncated series `g`, by one series division:
    /// `1 - m (1-g) / (1 + c (1-g))`.
    pub fn apply(&self, g: &TruncatedSeries) -> TruncatedSeries {
        let len = g.coeffs().len();
        if self.mean == 0.0 {
            return TruncatedSeries::constant_one(len - 1);
        }
        let c = self.tail_scale();
        let mut num = vec![0.0; len];
        let mut den = vec![0.0; len];
        for (k, &gk) in g.coeffs().iter().enumerate() {
            let u = if k == 0 { 1.0 - gk } else { -gk };
            num[k] = self.mean * u;
            den[k] = c * u;
        }
        den[0] += 1.0;
        let mut out = poly::div(&num, &den, len);
        for (k, v) in out.iter_mut().enumerate() {
            *v = if k == 0 { 1.0 - *v } else { -*v };
        }
        TruncatedSeries::from_coeffs(out).expect("composition of pmfs stays a pmf")
    }
}
