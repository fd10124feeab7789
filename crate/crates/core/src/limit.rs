//! Continuous-time limit objects.
//!
//! * `Z`: birth-death process with birth rate `nu/2` and death rate
//!   `1 + nu/2`, transition generating function `h_{e^{-t}}`.
//! * `U(t) = Z(log t)` started from `Geom(p)` at `log eps` and conditioned
//!   on `Z(0) > 0`; its kernels on `(0, 1]` and entrance law `g_t`.
//! * `W`: branching process with immigration, offspring law
//!   `f(s) = (1 + nu/2 + (nu/2) s^2) / (1 + nu)` at rate `1 + nu` and
//!   immigration batches with law `h` at rate `beta`; stationary law `f_Y`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::rand_core::RngCore;

use crate::environment::EnvironmentSpec;
use crate::error::{Error, Result};
use crate::gf::{lf_gf, poly, series_exp, Basis, LinearFractionalParams, TruncatedSeries};
use crate::math;
use crate::sim::{CdfTable, PathSample};
use crate::stream::{exponential, geometric, uniform};

/// `h_a(s)` for any `a > 0`, including `a > 1` as needed by finite differences.
fn lf_raw(a: f64, nu: f64, s: f64) -> f64 {
    let u = 1.0 - s;
    1.0 - a * u / (1.0 + 0.5 * nu * (1.0 - a) * u)
}

/// `1 - h_a(0)`, without the cancellation of evaluating `h_a(0)` first.
fn gap_at_zero(a: f64, nu: f64) -> f64 {
    a / (1.0 + 0.5 * nu * (1.0 - a))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LimitSpec {
    nu: f64,
    lambdas: Vec<f64>,
    order: usize,
    beta: f64,
    /// batch-size law `h` in powers of `s`
    batch: Vec<f64>,
    fy: Option<TruncatedSeries>,
    /// `log f_Y` in powers of `s`
    log_fy: Option<Vec<f64>>,
}

impl LimitSpec {
    /// Validates `lambdas` eagerly: `beta > 0`, and both `h` and `f_Y` must
    /// be probability generating functions.
    pub fn new(nu: f64, lambdas: Vec<f64>, order: usize) -> Result<Self> {
        if !(nu >= 0.0 && nu.is_finite()) {
            return Err(Error::OutOfDomain {
                what: "nu",
                value: nu,
                domain: "[0, inf)",
            });
        }
        let mut lambdas = lambdas;
        while lambdas.last() == Some(&0.0) {
            lambdas.pop();
        }
        if lambdas.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(Error::InvalidImmigration(
                "immigration factorial moments must be nonnegative".into(),
            ));
        }
        let mut spec = Self {
            nu,
            lambdas,
            order,
            beta: 0.0,
            batch: vec![1.0],
            fy: None,
            log_fy: None,
        };
        if spec.lambdas.is_empty() {
            return Ok(spec);
        }
        let beta: f64 = spec
            .lambdas
            .iter()
            .enumerate()
            .map(|(i, l)| if i % 2 == 0 { *l } else { -*l })
            .sum();
        if beta <= 0.0 {
            return Err(Error::InvalidImmigration(format!(
                "immigration rate beta = {beta} must be positive"
            )));
        }
        let mut shifted = vec![1.0];
        shifted.extend(spec.lambdas.iter().map(|l| l / beta));
        let batch = poly::from_shifted(&shifted);
        let batch = TruncatedSeries::from_coeffs(batch).map_err(|e| {
            Error::InvalidImmigration(format!("batch law h is not a pmf: {e}"))
        })?;
        spec.batch = batch.coeffs().to_vec();
        spec.batch[0] = 0.0;
        spec.beta = beta;
        let log_fy = spec.log_fy_series();
        let fy = series_exp(&log_fy, Basis::Powers, order).map_err(|e| {
            Error::InvalidImmigration(format!("stationary law f_Y is not a pmf: {e}"))
        })?;
        spec.log_fy = Some(log_fy);
        spec.fy = Some(fy);
        Ok(spec)
    }

    pub fn from_environment(env: &EnvironmentSpec, order: usize) -> Result<Self> {
        Self::new(env.nu(), env.lambdas(), order)
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn has_immigration(&self) -> bool {
        !self.lambdas.is_empty()
    }

    /// Success probability of the quasi-stationary geometric law.
    pub fn p(&self) -> f64 {
        2.0 / (2.0 + self.nu)
    }

    pub fn q(&self) -> f64 {
        self.nu / (2.0 + self.nu)
    }

    /// Total event rate per individual.
    pub fn alpha_rate(&self) -> f64 {
        1.0 + self.nu
    }

    /// Rate of immigration events.
    pub fn beta_rate(&self) -> f64 {
        self.beta
    }

    pub fn birth_rate(&self) -> f64 {
        0.5 * self.nu
    }

    pub fn death_rate(&self) -> f64 {
        1.0 + 0.5 * self.nu
    }

    /// Offspring law of one individual at its death: atoms at 0 and 2.
    pub fn offspring_gf(&self) -> TruncatedSeries {
        let mut c = vec![0.0; self.order.max(2) + 1];
        c[0] = self.death_rate() / self.alpha_rate();
        c[2] = self.birth_rate() / self.alpha_rate();
        TruncatedSeries::from_coeffs(c).expect("two-atom law")
    }

    /// Batch-size law `h`, coefficients in powers of `s`.
    pub fn batch_law(&self) -> &[f64] {
        &self.batch
    }

    pub fn lf(&self, a: f64) -> Result<LinearFractionalParams> {
        LinearFractionalParams::new(a, self.nu)
    }

    /// `log f_Y` expanded in powers of `s`. Each term uses
    /// `log(1 + x(1 - s)) = log(1 + x) + log(1 - q s)` with `x = nu/2`.
    fn log_fy_series(&self) -> Vec<f64> {
        let len = self.order + 1;
        let mut out = vec![0.0; len];
        if self.nu == 0.0 {
            let mut shifted = vec![0.0; self.lambdas.len() + 1];
            for (k, l) in self.lambdas.iter().enumerate() {
                shifted[k + 1] = l / (k + 1) as f64;
            }
            for (o, c) in out.iter_mut().zip(poly::from_shifted(&shifted)) {
                *o = c;
            }
            return out;
        }
        let x = 0.5 * self.nu;
        let q = self.q();
        let mut log_term = vec![0.0; len];
        log_term[0] = math::ln_1p(x);
        let mut qj = 1.0;
        for (j, v) in log_term.iter_mut().enumerate().skip(1) {
            qj *= q;
            *v = -qj / j as f64;
        }
        for (k0, &lambda) in self.lambdas.iter().enumerate() {
            let k = k0 + 1;
            if lambda == 0.0 {
                continue;
            }
            let weight = -lambda / math::powf(x, k as f64);
            let mut shifted = vec![0.0; k];
            let mut xi = 1.0;
            for (i, v) in shifted.iter_mut().enumerate().skip(1) {
                xi *= x;
                *v = xi / i as f64;
            }
            let polynomial = poly::from_shifted(&shifted);
            for (i, o) in out.iter_mut().enumerate() {
                let p = polynomial.get(i).copied().unwrap_or(0.0);
                *o += weight * (log_term[i] + p);
            }
        }
        out
    }

    /// `log f_Y(s)` in closed form.
    pub fn log_fy(&self, s: f64) -> f64 {
        if self.nu == 0.0 {
            return self
                .lambdas
                .iter()
                .enumerate()
                .map(|(k0, l)| l / (k0 + 1) as f64 * math::powf(s - 1.0, (k0 + 1) as f64))
                .sum();
        }
        let x = 0.5 * self.nu;
        let log_term = math::ln_1p(x * (1.0 - s));
        let mut total = 0.0;
        for (k0, &lambda) in self.lambdas.iter().enumerate() {
            let k = k0 + 1;
            let mut poly_part = 0.0;
            for i in 1..k {
                poly_part += math::powf(x, i as f64) / i as f64 * math::powf(s - 1.0, i as f64);
            }
            total -= lambda / math::powf(x, k as f64) * (log_term + poly_part);
        }
        total
    }

    /// Cached coefficients of `f_Y`; `None` without immigration.
    pub fn fy(&self) -> Option<&TruncatedSeries> {
        self.fy.as_ref()
    }

    fn require_fy(&self) -> Result<&TruncatedSeries> {
        self.fy.as_ref().ok_or_else(|| {
            Error::InvalidImmigration("the limit has no immigration component".into())
        })
    }
}

/// `F(s, t) = h_{e^{-t}}(s)`, the transition generating function of `Z`.
pub fn bd_transition_gf(spec: &LimitSpec, s: f64, t: f64) -> f64 {
    lf_raw(math::exp(-t), spec.nu, s)
}

/// Coefficients of `k_{u,t;x0}`, the law of `U(t)` given `U(u) = x0` under
/// the conditioning `U(1) > 0`:
/// `[h_{u/t}(s)^{x0} - h_{u/t}(h_t(0) s)^{x0}] / [1 - h_u(0)^{x0}]`.
pub fn conditioned_kernel(spec: &LimitSpec, u: f64, t: f64, x0: u64) -> Result<TruncatedSeries> {
    check_times(u, t)?;
    if x0 < 1 {
        return Err(Error::OutOfDomain {
            what: "x0",
            value: x0 as f64,
            domain: "[1, inf)",
        });
    }
    let base = lf_gf(&spec.lf(u / t)?, spec.order);
    Ok(kernel_row(spec, &base.power(x0), u, t, x0))
}

fn check_times(u: f64, t: f64) -> Result<()> {
    if !(u > 0.0 && u < t && t <= 1.0) {
        return Err(Error::InvalidGrid(format!(
            "conditioned kernel needs 0 < u < t <= 1, got u = {u}, t = {t}"
        )));
    }
    Ok(())
}

fn kernel_row(spec: &LimitSpec, a: &TruncatedSeries, u: f64, t: f64, x0: u64) -> TruncatedSeries {
    let ln_rho = math::ln_1p(-gap_at_zero(t, spec.nu));
    let norm = -math::expm1(x0 as f64 * math::ln_1p(-gap_at_zero(u, spec.nu)));
    let coeffs = a
        .coeffs()
        .iter()
        .enumerate()
        .map(|(k, &c)| if k == 0 { 0.0 } else { c * -math::expm1(k as f64 * ln_rho) / norm })
        .collect();
    TruncatedSeries::from_coeffs(coeffs).expect("conditioned kernel row is a pmf")
}

/// Rows `x0 = 0..=cap` of the conditioned kernel; row 0 is a point mass at 0.
pub fn conditioned_kernel_matrix(
    spec: &LimitSpec,
    u: f64,
    t: f64,
    cap: usize,
) -> Result<Vec<TruncatedSeries>> {
    check_times(u, t)?;
    let base = lf_gf(&spec.lf(u / t)?, spec.order);
    let len = spec.order + 1;
    let mut rows = vec![TruncatedSeries::constant_one(spec.order)];
    let mut power = base.clone();
    for x0 in 1..=cap {
        if x0 > 1 {
            power = TruncatedSeries::from_coeffs(poly::mul(power.coeffs(), base.coeffs(), len))?;
        }
        rows.push(kernel_row(spec, &power, u, t, x0 as u64));
    }
    Ok(rows)
}

/// Rows `x = 0..=cap` of the unconditioned kernel of `U` from `u` to `t`:
/// `h_{u/t}(s)^x`.
pub fn free_kernel_matrix(spec: &LimitSpec, u: f64, t: f64, cap: usize) -> Result<Vec<TruncatedSeries>> {
    if !(u > 0.0 && u <= t) {
        return Err(Error::InvalidGrid(format!("need 0 < u <= t, got u = {u}, t = {t}")));
    }
    let base = lf_gf(&spec.lf(u / t)?, spec.order);
    Ok(powers_upto(&base, cap))
}

fn powers_upto(base: &TruncatedSeries, cap: usize) -> Vec<TruncatedSeries> {
    let len = base.coeffs().len();
    let mut rows = vec![TruncatedSeries::constant_one(len - 1)];
    for x in 1..=cap {
        let next = poly::mul(rows[x - 1].coeffs(), base.coeffs(), len);
        rows.push(TruncatedSeries::from_coeffs(next).expect("products of pmfs stay valid"));
    }
    rows
}

/// `g_t[x] = p q^{x-1} t^{-1} (1 - h_t(0)^x)` for `x >= 1`.
pub fn entrance_law(spec: &LimitSpec, t: f64) -> Result<TruncatedSeries> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::OutOfDomain {
            what: "t",
            value: t,
            domain: "(0, 1]",
        });
    }
    let (p, q) = (spec.p(), spec.q());
    let ln_rho = math::ln_1p(-gap_at_zero(t, spec.nu));
    let mut coeffs = vec![0.0; spec.order + 1];
    let mut geo = p;
    for (x, c) in coeffs.iter_mut().enumerate().skip(1) {
        let survive = if t == 1.0 { 1.0 } else { -math::expm1(x as f64 * ln_rho) };
        *c = geo * survive / t;
        geo *= q;
    }
    TruncatedSeries::from_coeffs(coeffs)
}

/// `Geom(p)` on `{1, 2, ...}`.
pub fn quasi_stationary_pmf(spec: &LimitSpec) -> TruncatedSeries {
    TruncatedSeries::geometric(spec.p(), spec.order).expect("p lies in (0, 1]")
}

/// `P(U(1) > 0)` from `U(eps) ~ Geom(p)`, summed until the terms vanish.
pub fn survival_from_geom(spec: &LimitSpec, eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::OutOfDomain {
            what: "eps",
            value: eps,
            domain: "(0, 1]",
        });
    }
    let (p, q) = (spec.p(), spec.q());
    let rho = 1.0 - gap_at_zero(eps, spec.nu);
    let mut total = 0.0;
    let mut geo = p;
    let mut rho_x = 1.0;
    for _ in 0..10_000_000u64 {
        rho_x *= rho;
        let term = geo * (1.0 - rho_x);
        total += term;
        geo *= q;
        if geo < 1e-20 {
            break;
        }
    }
    Ok(total)
}

/// Limit law of `k_{alpha t, t; x0}` as `t -> 0`:
/// `alpha^{-1} s h_alpha'(s) h_alpha(s)^{x0 - 1}`.
pub fn kernel_small_time_limit(spec: &LimitSpec, alpha: f64, x0: u64, s: f64) -> f64 {
    let u = 1.0 - s;
    let d = 1.0 + 0.5 * spec.nu * (1.0 - alpha) * u;
    let deriv = alpha / (d * d);
    s * deriv * math::powf(lf_raw(alpha, spec.nu, s), (x0 - 1) as f64) / alpha
}

/// Limit of `g_t` as `t -> 0`: `(p s / (1 - q s)) (p / (1 - q s))`.
pub fn entrance_small_time_limit(spec: &LimitSpec, s: f64) -> f64 {
    let (p, q) = (spec.p(), spec.q());
    p * s / (1.0 - q * s) * p / (1.0 - q * s)
}

/// Coefficients of the stationary law `f_Y`.
pub fn stationary_fy(spec: &LimitSpec) -> Result<TruncatedSeries> {
    spec.require_fy().cloned()
}

/// `G_y(s, t) = [f_Y(s) / f_Y(h_{e^{-t}}(s))] h_{e^{-t}}(s)^y`.
pub fn w_transition_gf(spec: &LimitSpec, y: u64, s: f64, t: f64) -> f64 {
    let h = bd_transition_gf(spec, s, t);
    let ratio = if spec.has_immigration() {
        math::exp(spec.log_fy(s) - spec.log_fy(h))
    } else {
        1.0
    };
    ratio * math::powf(h, y as f64)
}

/// Coefficients of `G_0(., t) = f_Y / f_Y o h_{e^{-t}}`.
pub fn w_immigration_series(spec: &LimitSpec, t: f64) -> Result<TruncatedSeries> {
    let len = spec.order + 1;
    let Some(log_fy) = spec.log_fy.as_ref() else {
        return Ok(TruncatedSeries::constant_one(spec.order));
    };
    let h = lf_gf(&spec.lf(math::exp(-t))?, spec.order);
    let inner = poly::compose(log_fy, h.coeffs(), len);
    let diff: Vec<f64> = log_fy.iter().zip(&inner).map(|(a, b)| a - b).collect();
    series_exp(&diff, Basis::Powers, spec.order)
}

/// Coefficients of `G_y(., t)`.
pub fn w_transition_series(spec: &LimitSpec, y: u64, t: f64) -> Result<TruncatedSeries> {
    let g0 = w_immigration_series(spec, t)?;
    let h = lf_gf(&spec.lf(math::exp(-t))?, spec.order);
    g0.mul(&h.power(y))
}

/// Rows `y = 0..=cap` of the transition matrix of `W` over time `t`.
pub fn w_transition_matrix(spec: &LimitSpec, t: f64, cap: usize) -> Result<Vec<TruncatedSeries>> {
    let g0 = w_immigration_series(spec, t)?;
    let h = lf_gf(&spec.lf(math::exp(-t))?, spec.order);
    let len = spec.order + 1;
    let mut rows = vec![g0];
    for y in 1..=cap {
        let next = poly::mul(rows[y - 1].coeffs(), h.coeffs(), len);
        rows.push(TruncatedSeries::from_coeffs(next)?);
    }
    Ok(rows)
}

/// `a(s) = (1 - s)(1 + (nu/2)(1 - s))`.
pub fn generator_a(spec: &LimitSpec, s: f64) -> f64 {
    (1.0 - s) * (1.0 + 0.5 * spec.nu * (1.0 - s))
}

/// `b(s) = sum_k lambda_k (s - 1)^k`.
pub fn generator_b(spec: &LimitSpec, s: f64) -> f64 {
    spec.lambdas
        .iter()
        .enumerate()
        .map(|(k0, l)| l * math::powf(s - 1.0, (k0 + 1) as f64))
        .sum()
}

/// Central differences at `t = 0` of `h_{e^{-t}}(s)` and of
/// `f_Y(s) / f_Y(h_{e^{-t}}(s))`; estimates of `a(s)` and `b(s)`.
pub fn generator_rates_fd(spec: &LimitSpec, s: f64, dt: f64) -> (f64, f64) {
    let fwd = lf_raw(math::exp(-dt), spec.nu, s);
    let back = lf_raw(math::exp(dt), spec.nu, s);
    let a = (fwd - back) / (2.0 * dt);
    let b = if spec.has_immigration() {
        let lf_ = spec.log_fy(s);
        let up = math::exp(lf_ - spec.log_fy(fwd));
        let down = math::exp(lf_ - spec.log_fy(back));
        (up - down) / (2.0 * dt)
    } else {
        0.0
    };
    (a, b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Birth,
    Death,
    Immigration(u64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub t0: f64,
    pub initial: u64,
    pub times: Vec<f64>,
    pub states: Vec<u64>,
    pub kinds: Vec<EventKind>,
}

impl Trajectory {
    /// State at time `t` (right-continuous).
    pub fn state_at(&self, t: f64) -> u64 {
        let idx = self.times.partition_point(|&e| e <= t);
        if idx == 0 {
            self.initial
        } else {
            self.states[idx - 1]
        }
    }

    /// `integral of the state over [t0, t1]`.
    pub fn occupation(&self, t1: f64) -> f64 {
        let mut total = 0.0;
        let mut last_t = self.t0;
        let mut last_x = self.initial;
        for (&t, &x) in self.times.iter().zip(&self.states) {
            if t > t1 {
                break;
            }
            total += last_x as f64 * (t - last_t);
            last_t = t;
            last_x = x;
        }
        total + last_x as f64 * (t1 - last_t)
    }
}

/// Exact simulation driver shared by `Z` and `W`.
struct Dynamics<'a> {
    rate: f64,
    birth_prob: f64,
    beta: f64,
    batch: Option<&'a CdfTable>,
}

impl Dynamics<'_> {
    /// Advances from `(t, x)` to the next event before `t1`, if any.
    #[inline]
    fn step<R: RngCore + ?Sized>(&self, t: f64, x: u64, t1: f64, rng: &mut R) -> Option<(f64, u64, EventKind)> {
        let individual = self.rate * x as f64;
        let total = individual + self.beta;
        if total <= 0.0 {
            return None;
        }
        let next = t + exponential(rng, total);
        if next > t1 {
            return None;
        }
        let u = uniform(rng) * total;
        if u <= individual {
            if uniform(rng) <= self.birth_prob {
                Some((next, x + 1, EventKind::Birth))
            } else {
                Some((next, x - 1, EventKind::Death))
            }
        } else {
            let batch = self.batch.map_or(1, |b| b.invert(uniform(rng)) as u64);
            Some((next, x + batch, EventKind::Immigration(batch)))
        }
    }

    fn run_to<R: RngCore + ?Sized>(&self, mut x: u64, t0: f64, t1: f64, rng: &mut R) -> u64 {
        let mut t = t0;
        while let Some((nt, nx, _)) = self.step(t, x, t1, rng) {
            t = nt;
            x = nx;
        }
        x
    }

    fn trajectory<R: RngCore + ?Sized>(&self, x0: u64, t0: f64, t1: f64, rng: &mut R) -> Trajectory {
        let mut traj = Trajectory {
            t0,
            initial: x0,
            times: Vec::new(),
            states: Vec::new(),
            kinds: Vec::new(),
        };
        let (mut t, mut x) = (t0, x0);
        while let Some((nt, nx, kind)) = self.step(t, x, t1, rng) {
            t = nt;
            x = nx;
            traj.times.push(t);
            traj.states.push(x);
            traj.kinds.push(kind);
        }
        traj
    }
}

fn z_dynamics(spec: &LimitSpec) -> Dynamics<'static> {
    Dynamics {
        rate: spec.alpha_rate(),
        birth_prob: spec.birth_rate() / spec.alpha_rate(),
        beta: 0.0,
        batch: None,
    }
}

/// Sampler for `W` with its batch table cached.
#[derive(Debug, Clone)]
pub struct WSampler {
    rate: f64,
    birth_prob: f64,
    beta: f64,
    batch: CdfTable,
}

impl WSampler {
    pub fn new(spec: &LimitSpec) -> Self {
        Self {
            rate: spec.alpha_rate(),
            birth_prob: spec.birth_rate() / spec.alpha_rate(),
            beta: spec.beta_rate(),
            batch: CdfTable::new(spec.batch_law()),
        }
    }

    fn dynamics(&self) -> Dynamics<'_> {
        Dynamics {
            rate: self.rate,
            birth_prob: self.birth_prob,
            beta: self.beta,
            batch: Some(&self.batch),
        }
    }

    pub fn run_to<R: RngCore + ?Sized>(&self, x0: u64, t0: f64, t1: f64, rng: &mut R) -> u64 {
        self.dynamics().run_to(x0, t0, t1, rng)
    }

    pub fn trajectory<R: RngCore + ?Sized>(&self, x0: u64, t0: f64, t1: f64, rng: &mut R) -> Trajectory {
        self.dynamics().trajectory(x0, t0, t1, rng)
    }
}

/// Event-driven path of `Z` on `[t0, t1]`.
pub fn simulate_z<R: RngCore + ?Sized>(spec: &LimitSpec, init: u64, t0: f64, t1: f64, rng: &mut R) -> Trajectory {
    z_dynamics(spec).trajectory(init, t0, t1, rng)
}

/// State of `Z` at `t1` without storing the path.
pub fn run_z<R: RngCore + ?Sized>(spec: &LimitSpec, init: u64, t0: f64, t1: f64, rng: &mut R) -> u64 {
    z_dynamics(spec).run_to(init, t0, t1, rng)
}

/// Event-driven path of `W` on `[t0, t1]`.
pub fn simulate_w<R: RngCore + ?Sized>(spec: &LimitSpec, init: u64, t0: f64, t1: f64, rng: &mut R) -> Trajectory {
    WSampler::new(spec).trajectory(init, t0, t1, rng)
}

/// Path of `U` at `grid` (which may extend past 1) for `U(eps) ~ Geom(p)`
/// conditioned on `U(1) > 0`, by rejection. Returns the path and the number
/// of attempts used.
pub fn sample_u_conditioned<R: RngCore + ?Sized>(
    spec: &LimitSpec,
    eps: f64,
    grid: &[f64],
    rng: &mut R,
) -> Result<(PathSample, u64)> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::OutOfDomain {
            what: "eps",
            value: eps,
            domain: "(0, 1]",
        });
    }
    if grid.iter().any(|&t| t < eps) || grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidGrid(
            "grid must be increasing and start at or after eps".into(),
        ));
    }
    let dynamics = z_dynamics(spec);
    let mut attempts = 0;
    loop {
        attempts += 1;
        let mut x = geometric(rng, spec.p());
        let mut now = math::ln(eps);
        let mut states = Vec::with_capacity(grid.len());
        let mut checked = false;
        let mut rejected = false;
        for &t in grid {
            let at = math::ln(t);
            if !checked && t > 1.0 {
                x = dynamics.run_to(x, now, 0.0, rng);
                now = 0.0;
                checked = true;
                if x == 0 {
                    rejected = true;
                    break;
                }
            }
            x = dynamics.run_to(x, now, at, rng);
            now = at;
            if t == 1.0 {
                checked = true;
                if x == 0 {
                    rejected = true;
                    break;
                }
            }
            states.push(x);
        }
        if !rejected && !checked {
            rejected = dynamics.run_to(x, now, 0.0, rng) == 0;
        }
        if !rejected {
            return Ok((
                PathSample {
                    times: grid.to_vec(),
                    states,
                    n: 0,
                    conditioned: true,
                    overflow: false,
                },
                attempts,
            ));
        }
    }
}

/// Re-indexes samples by `t -> 1/t`: the reversed state at `t` is the
/// forward state at `1/t`.
pub fn reverse_marginals(samples: &[PathSample]) -> Result<Vec<PathSample>> {
    samples
        .iter()
        .map(|s| {
            let lookup = inversion_map(&s.times)?;
            Ok(PathSample {
                times: s.times.clone(),
                states: if s.overflow {
                    Vec::new()
                } else {
                    lookup.iter().map(|&i| s.states[i]).collect()
                },
                n: s.n,
                conditioned: s.conditioned,
                overflow: s.overflow,
            })
        })
        .collect()
}

/// For each grid index, the index of its reciprocal.
pub fn inversion_map(times: &[f64]) -> Result<Vec<usize>> {
    times
        .iter()
        .map(|&t| {
            let target = 1.0 / t;
            times
                .iter()
                .position(|&s| (s - target).abs() <= 1e-12 * target.max(1.0))
                .ok_or_else(|| Error::InvalidGrid(format!("grid lacks 1/{t}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::SeededStream;

    const N: usize = 256;

    fn spec(nu: f64) -> LimitSpec {
        LimitSpec::new(nu, vec![], N).unwrap()
    }

    fn tv(a: &TruncatedSeries, b: &TruncatedSeries) -> f64 {
        0.5 * a
            .to_pmf()
            .iter()
            .zip(b.to_pmf())
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>()
    }

    #[test]
    fn bd_examples() {
        let z = spec(2.0);
        assert!((bd_transition_gf(&z, 0.37, 0.0) - 0.37).abs() < 1e-15);
        let t = 0.8;
        assert!((bd_transition_gf(&spec(0.0), 0.0, t) - (1.0 - (-t).exp())).abs() < 1e-15);
        assert!((bd_transition_gf(&z, 0.0, 2f64.ln()) - 2.0 / 3.0).abs() < 1e-15);
        for (s, t1, t2) in [(0.1, 0.3, 0.9), (0.8, 1.5, 0.2)] {
            let lhs = bd_transition_gf(&z, bd_transition_gf(&z, s, t1), t2);
            assert!((lhs - bd_transition_gf(&z, s, t1 + t2)).abs() < 1e-12);
        }
    }

    #[test]
    fn conditioned_kernel_examples() {
        let z = spec(2.0);
        let k = conditioned_kernel(&z, 0.3, 0.7, 3).unwrap();
        assert!((k.eval(1.0).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(k.coeff(0), 0.0);
        // pure death with U(1) > 0 forces U(t) = 1 from U(u) = 1
        let d = conditioned_kernel(&spec(0.0), 0.3, 0.7, 1).unwrap();
        assert!((d.coeff(1) - 1.0).abs() < 1e-14);
        assert!(conditioned_kernel(&z, 0.7, 0.3, 1).is_err());
        assert!(conditioned_kernel(&z, 0.3, 0.7, 0).is_err());
    }

    #[test]
    fn kernel_small_time() {
        let z = spec(2.0);
        let alpha = 0.4;
        for x0 in [1u64, 2, 3] {
            let t = 1e-6;
            let k = conditioned_kernel(&z, alpha * t, t, x0).unwrap();
            for s in [0.2, 0.5, 0.9] {
                let want = kernel_small_time_limit(&z, alpha, x0, s);
                assert!((k.eval(s).unwrap() - want).abs() < 1e-4, "x0={x0} s={s}");
            }
            assert!((kernel_small_time_limit(&z, alpha, x0, 1.0) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn entrance_examples() {
        let z = spec(2.0);
        let g1 = entrance_law(&z, 1.0).unwrap();
        assert!(tv(&g1, &quasi_stationary_pmf(&z)) < 1e-15);
        for t in [0.1, 0.5, 0.9] {
            let lhs = (1.0 - lf_raw(t, 2.0, 0.0)) / t;
            assert!((lhs - z.p() / (1.0 - z.q() * t)).abs() < 1e-14);
        }
        let g = entrance_law(&z, 1e-7).unwrap();
        for s in [0.3, 0.7] {
            assert!((g.eval(s).unwrap() - entrance_small_time_limit(&z, s)).abs() < 1e-6);
        }
        assert!(entrance_law(&z, 0.0).is_err());
        assert!(entrance_law(&z, 1.2).is_err());
    }

    #[test]
    fn quasi_stationary_examples() {
        assert_eq!(quasi_stationary_pmf(&spec(0.0)), TruncatedSeries::identity(N));
        let g = quasi_stationary_pmf(&spec(2.0));
        assert_eq!(g.coeff(1), 0.5);
        assert_eq!(g.coeff(2), 0.25);
        // Geom(p) at 0.2, run freely to 1, then conditioned on survival
        let rows = free_kernel_matrix(&spec(2.0), 0.2, 1.0, N).unwrap();
        let mut pushed = vec![0.0; N + 1];
        for (x, row) in rows.iter().enumerate().skip(1) {
            for (y, c) in row.coeffs().iter().enumerate() {
                pushed[y] += g.coeff(x) * c;
            }
        }
        let pushed = TruncatedSeries::from_coeffs(pushed)
            .unwrap()
            .conditioned_positive()
            .unwrap();
        let dist: f64 = pushed
            .coeffs()
            .iter()
            .zip(g.coeffs())
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(dist < 1e-10, "{dist}");
    }

    #[test]
    fn survival_examples() {
        assert!((survival_from_geom(&spec(2.0), 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((survival_from_geom(&spec(2.0), 0.5).unwrap() - 0.5).abs() < 1e-12);
        assert!((survival_from_geom(&spec(0.0), 0.25).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn fy_examples() {
        let pois = LimitSpec::new(0.0, vec![1.3], N).unwrap();
        let want = TruncatedSeries::poisson(1.3, N).unwrap();
        assert!(tv(pois.fy().unwrap(), &want) < 1e-12);
        for nu in [0.5, 2.0, 5.0] {
            let l1 = 0.8;
            let nb = LimitSpec::new(nu, vec![l1], N).unwrap();
            let want = TruncatedSeries::negative_binomial(2.0 * l1 / nu, 2.0 / (2.0 + nu), N).unwrap();
            assert!(tv(nb.fy().unwrap(), &want) < 1e-12, "nu={nu}");
            assert!((nb.fy().unwrap().eval(1.0).unwrap() - 1.0).abs() < 1e-10);
        }
        let k3 = LimitSpec::new(2.0, vec![1.5, 0.5], N).unwrap();
        let fy = k3.fy().unwrap();
        for s in [0.0, 0.3, 0.8] {
            assert!((fy.eval(s).unwrap() - k3.log_fy(s).exp()).abs() < 1e-12);
        }
        assert!(LimitSpec::new(2.0, vec![1.0, 2.0], N).is_err());
        assert!(stationary_fy(&spec(2.0)).is_err());
    }

    #[test]
    fn w_transition_examples() {
        let w = LimitSpec::new(2.0, vec![1.5, 0.5], N).unwrap();
        assert!((w_transition_gf(&w, 3, 0.4, 0.0) - 0.4f64.powi(3)).abs() < 1e-14);
        assert!((w_transition_gf(&w, 3, 1.0, 0.7) - 1.0).abs() < 1e-14);
        let fy = w.fy().unwrap();
        for s in [0.0, 0.25, 0.5, 0.9] {
            let t = 0.6;
            let mixed: f64 = (0..=N)
                .map(|y| w_transition_gf(&w, y as u64, s, t) * fy.coeff(y))
                .sum();
            assert!((mixed - fy.eval(s).unwrap()).abs() < 1e-8);
        }
        let series = w_transition_series(&w, 2, 0.6).unwrap();
        for s in [0.1, 0.6] {
            assert!((series.eval(s).unwrap() - w_transition_gf(&w, 2, s, 0.6)).abs() < 1e-12);
        }
    }

    #[test]
    fn generator_recovery() {
        let w = LimitSpec::new(2.0, vec![1.5, 0.5], N).unwrap();
        for s in [0.0, 0.3, 0.7, 0.95] {
            let (a, b) = generator_rates_fd(&w, s, 1e-4);
            assert!((a - generator_a(&w, s)).abs() < 1e-6);
            assert!((b - generator_b(&w, s)).abs() < 1e-6);
        }
    }

    #[test]
    fn z_examples() {
        let z = spec(2.0);
        let mut rng = SeededStream::new(1, 0).rng();
        let still = simulate_z(&z, 0, 0.0, 5.0, &mut rng);
        assert!(still.times.is_empty());
        let death = simulate_z(&spec(0.0), 1, 0.0, 50.0, &mut rng);
        assert_eq!(death.states, vec![0]);
        assert_eq!(death.kinds, vec![EventKind::Death]);
        let path = simulate_z(&z, 3, 0.0, 2.0, &mut rng);
        for pair in path.states.windows(2) {
            assert_eq!(pair[0].abs_diff(pair[1]), 1);
        }
    }

    #[test]
    fn z_marginal_matches_transition() {
        let z = spec(2.0);
        let t = 2f64.ln();
        let reps = 100_000;
        let mut counts = vec![0u64; N + 2];
        for i in 0..reps {
            let x = run_z(&z, 1, 0.0, t, &mut SeededStream::new(2, i).rng()) as usize;
            counts[x.min(N + 1)] += 1;
        }
        let want = lf_gf(&z.lf(0.5).unwrap(), N).to_pmf();
        let d: f64 = 0.5
            * counts
                .iter()
                .zip(&want)
                .map(|(&c, w)| (c as f64 / reps as f64 - w).abs())
                .sum::<f64>();
        assert!(d < 0.02, "{d}");
    }

    #[test]
    fn u_conditioned_accepts_about_eps() {
        let z = spec(2.0);
        let mut rng = SeededStream::new(4, 0).rng();
        let mut attempts = 0;
        let reps = 20_000;
        for _ in 0..reps {
            let (path, a) = sample_u_conditioned(&z, 0.25, &[0.25, 0.5, 1.0, 2.0], &mut rng).unwrap();
            attempts += a;
            assert!(path.states[..3].iter().all(|&x| x > 0));
        }
        let rate = reps as f64 / attempts as f64;
        assert!((rate - 0.25).abs() < 0.01, "{rate}");
    }

    #[test]
    fn reverse_examples() {
        let s = PathSample {
            times: vec![1.0],
            states: vec![4],
            n: 10,
            conditioned: true,
            overflow: false,
        };
        assert_eq!(reverse_marginals(std::slice::from_ref(&s)).unwrap(), vec![s]);
        let s = PathSample {
            times: vec![0.5, 1.0, 2.0],
            states: vec![3, 2, 7],
            n: 10,
            conditioned: true,
            overflow: false,
        };
        assert_eq!(reverse_marginals(&[s]).unwrap()[0].states, vec![7, 2, 3]);
        let bad = PathSample {
            times: vec![0.5, 1.0],
            states: vec![1, 1],
            n: 10,
            conditioned: true,
            overflow: false,
        };
        assert!(reverse_marginals(&[bad]).is_err());
    }
}
