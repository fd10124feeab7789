//! Verification experiments. Each returns a report of named checks plus
//! the pmf tables behind them.

use bpve_core::environment::{
    condition_diagnostics, shape_telescoping_residual, EnvironmentSpec, ScalingTable,
};
use bpve_core::exact::{
    conditional_mean_x, conditional_pmf_survival, conditioned_marginals_x, marginal_pmf_y,
    survival_probability,
};
use bpve_core::gf::{lf_compose, lf_gf, LinearFractionalParams, TruncatedSeries};
use bpve_core::limit::{
    conditioned_kernel, conditioned_kernel_matrix, entrance_law, entrance_small_time_limit,
    free_kernel_matrix, generator_a, generator_b, generator_rates_fd, kernel_small_time_limit,
    quasi_stationary_pmf, reverse_marginals, run_z, sample_u_conditioned, stationary_fy,
    survival_from_geom, w_transition_matrix, EventKind, LimitSpec, WSampler,
};
use bpve_core::sim::{grid_generations, CdfTable, ConditionedSampler, ForwardSampler};
use bpve_core::stats::{
    capped_pmf, joint_pmf_from_kernels, total_variation, tv_confidence_radius_for,
    EmpiricalDistribution, JointLaw,
};
use bpve_core::stream::{uniform, SeededStream};

use crate::config::{ScenarioConfig, Tolerances};
use crate::mc::{Merge, PathTally, Runner};
use crate::report::{timed, CheckKind, CheckRecord, PmfTable, VerificationReport};
use crate::LabError;

/// States `0..=CAP` are compared cell by cell; the rest share one cell.
pub const CAP: usize = 64;

type Result<T> = std::result::Result<T, LabError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Yaglom,
    Fdd,
    Entrance,
    Theorem2,
    Reverse,
    Diagnostics,
    All,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Self::Yaglom => "yaglom",
            Self::Fdd => "fdd",
            Self::Entrance => "entrance",
            Self::Theorem2 => "theorem2",
            Self::Reverse => "reverse",
            Self::Diagnostics => "diag",
            Self::All => "all",
        }
    }
}

/// A validated config with its environment, limit and replicate runner.
pub struct Scenario {
    pub cfg: ScenarioConfig,
    pub env: EnvironmentSpec,
    pub limit: LimitSpec,
    runner: Runner,
}

impl Scenario {
    pub fn new(cfg: ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let env = cfg.environment_spec()?;
        let limit = LimitSpec::from_environment(&env, cfg.mc.truncation)?;
        let runner = Runner::new(cfg.mc.workers, cfg.mc.seed)?;
        Ok(Self {
            cfg,
            env,
            limit,
            runner,
        })
    }

    fn order(&self) -> usize {
        self.cfg.mc.truncation
    }

    fn tol(&self) -> &Tolerances {
        &self.cfg.tolerances
    }

    fn times(&self) -> &[f64] {
        &self.cfg.grid.times
    }

    fn generations(&self, n: u64) -> Result<Vec<u64>> {
        let reach = (n as f64 * self.times().iter().copied().fold(1.0, f64::max)).ceil() as u64;
        let table = ScalingTable::covering(&self.env, reach)?;
        Ok(grid_generations(&table, n, self.times())?)
    }
}

pub fn run(sc: &Scenario, exp: Experiment) -> Result<VerificationReport> {
    match exp {
        Experiment::Yaglom => yaglom(sc),
        Experiment::Fdd => fdd(sc),
        Experiment::Entrance => entrance(sc),
        Experiment::Theorem2 => theorem2(sc),
        Experiment::Reverse => reverse(sc),
        Experiment::Diagnostics => diagnostics(sc),
        Experiment::All => run_all(sc),
    }
}

/// Every experiment the scenario supports.
pub fn run_all(sc: &Scenario) -> Result<VerificationReport> {
    let mut rep = VerificationReport::new("all", &sc.cfg);
    rep.extend(yaglom(sc)?);
    rep.extend(fdd(sc)?);
    rep.extend(entrance(sc)?);
    if sc.env.has_immigration() {
        rep.extend(theorem2(sc)?);
    }
    if sc.cfg.inversion_closed() {
        rep.extend(reverse(sc)?);
    }
    rep.extend(diagnostics(sc)?);
    Ok(rep)
}

fn label(t: f64) -> String {
    format!("{t}")
}

fn push(init: &TruncatedSeries, rows: &[TruncatedSeries]) -> Result<TruncatedSeries> {
    let mut out = vec![0.0; init.coeffs().len()];
    for (x, &w) in init.coeffs().iter().enumerate().take(rows.len()) {
        if w == 0.0 {
            continue;
        }
        for (o, c) in out.iter_mut().zip(rows[x].coeffs()) {
            *o += w * c;
        }
    }
    Ok(TruncatedSeries::from_coeffs(out)?)
}

fn series_tv(a: &TruncatedSeries, b: &TruncatedSeries) -> Result<f64> {
    Ok(total_variation(&a.to_pmf(), &b.to_pmf())?)
}

/// Law of the conditioned limit `U(t)`: the entrance law up to 1, then free.
pub fn u_marginal(limit: &LimitSpec, t: f64) -> Result<TruncatedSeries> {
    if t <= 1.0 {
        Ok(entrance_law(limit, t)?)
    } else {
        push(
            &quasi_stationary_pmf(limit),
            &free_kernel_matrix(limit, 1.0, t, limit.order())?,
        )
    }
}

/// Rows `0..=rows` of the kernel of the conditioned limit from `u` to `t`.
pub fn u_kernel(limit: &LimitSpec, u: f64, t: f64, rows: usize) -> Result<Vec<TruncatedSeries>> {
    if t <= 1.0 {
        Ok(conditioned_kernel_matrix(limit, u, t, rows)?)
    } else if u >= 1.0 {
        Ok(free_kernel_matrix(limit, u, t, rows)?)
    } else {
        let first = conditioned_kernel_matrix(limit, u, 1.0, rows)?;
        let second = free_kernel_matrix(limit, 1.0, t, limit.order())?;
        first.iter().map(|r| push(r, &second)).collect()
    }
}

/// Joint law of `U` on the grid, folded at [`CAP`].
pub fn u_joint(limit: &LimitSpec, times: &[f64]) -> Result<JointLaw> {
    let init = u_marginal(limit, times[0])?;
    let kernels = times
        .windows(2)
        .map(|w| u_kernel(limit, w[0], w[1], CAP))
        .collect::<Result<Vec<_>>>()?;
    Ok(joint_pmf_from_kernels(&init, &kernels, CAP)?)
}

/// Joint law of stationary `W` at `ln t_i`, folded at [`CAP`].
pub fn w_joint(limit: &LimitSpec, times: &[f64]) -> Result<JointLaw> {
    let init = stationary_fy(limit)?;
    let kernels = times
        .windows(2)
        .map(|w| w_transition_matrix(limit, (w[1] / w[0]).ln(), CAP))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(joint_pmf_from_kernels(&init, &kernels, CAP)?)
}

struct PathComparison<'a> {
    prefix: &'a str,
    joint_tol: f64,
    marginal_tol: f64,
    /// Test marginals against the exact finite-`n` laws instead of the limits.
    against_exact: bool,
}

impl PathComparison<'_> {
    /// Joint, pairwise and per-time checks of a tally against limit laws.
    fn compare(
        &self,
        tally: &PathTally,
        times: &[f64],
        joint: Option<&JointLaw>,
        limits: &[TruncatedSeries],
        exact: Option<&[TruncatedSeries]>,
        tables: &mut Vec<PmfTable>,
    ) -> Result<Vec<CheckRecord>> {
        let total = tally.joint.total();
        let overflow = tally.overflow();
        let mut out = Vec::new();
        if let Some(joint) = joint.filter(|_| times.len() > 1) {
            let emp = tally.joint.to_law();
            out.push(
                CheckRecord::monte_carlo(
                    format!("{}_joint", self.prefix),
                    emp.total_variation(joint),
                    self.joint_tol,
                    joint.confidence_radius(total),
                    total,
                )
                .with_overflow(overflow),
            );
            if times.len() == 3 {
                for keep in [[0usize, 1], [0, 2], [1, 2]] {
                    let lim = joint.marginal(&keep);
                    out.push(
                        CheckRecord::monte_carlo(
                            format!(
                                "{}_pair_t{}_t{}",
                                self.prefix,
                                label(times[keep[0]]),
                                label(times[keep[1]])
                            ),
                            emp.marginal(&keep).total_variation(&lim),
                            self.joint_tol,
                            lim.confidence_radius(total),
                            total,
                        )
                        .with_overflow(overflow),
                    );
                }
            }
        }
        for (i, &t) in times.iter().enumerate() {
            let emp = tally.marginals[i].to_pmf(CAP);
            let lim = capped_pmf(&limits[i], CAP);
            let ex = exact.map(|e| capped_pmf(&e[i], CAP));
            let (reference, tail) = match (self.against_exact, exact) {
                (true, Some(e)) => (ex.clone().expect("exact given"), e[i].tail_mass()),
                _ => (lim.clone(), limits[i].tail_mass()),
            };
            let radius = tv_confidence_radius_for(&reference, total);
            let name = format!("{}_t{}", self.prefix, label(t));
            out.push(
                CheckRecord::monte_carlo(
                    name.clone(),
                    total_variation(&emp, &reference)?,
                    self.marginal_tol,
                    radius,
                    total,
                )
                .with_overflow(overflow)
                .with_tail(tail),
            );
            tables.push(PmfTable::from_columns(
                name,
                ex.as_deref(),
                Some(&lim),
                Some((&emp, radius)),
            ));
        }
        Ok(out)
    }
}

/// Conditional law at `A(n)` against `Geom(p)`, survival scaling and the
/// conditional mean between two scaled times.
pub fn yaglom(sc: &Scenario) -> Result<VerificationReport> {
    let mut rep = VerificationReport::new("yaglom", &sc.cfg);
    let tol = sc.tol().clone();
    let order = sc.order();
    let ns = &sc.cfg.grid.n_values;
    let n_max = *ns.last().expect("validated nonempty");
    let [eps, m] = sc.cfg.limit.mean_window;
    let reach = (n_max as f64 * m.max(1.0)).ceil() as u64;
    let table = ScalingTable::covering(&sc.env, reach)?;
    let geom = quasi_stationary_pmf(&sc.limit);
    let p = sc.limit.p();
    let mut tables = Vec::new();
    rep.checks = timed(|| {
        let mut tvs = Vec::new();
        let mut last = None;
        for &n in ns {
            let a = table.a(n)?;
            let cond = conditional_pmf_survival(&sc.env, a, order)?;
            tvs.push((n, a, series_tv(&cond, &geom)?));
            last = Some(cond);
        }
        let last = last.expect("validated nonempty");
        let detail = tvs
            .iter()
            .map(|(n, a, tv)| format!("n={n} A={a} tv={tv:.3e}"))
            .collect::<Vec<_>>()
            .join("; ");
        let rise = tvs
            .windows(2)
            .map(|w| (w[1].2 - w[0].2).max(0.0))
            .fold(0.0, f64::max);
        tables.push(PmfTable::from_columns(
            "yaglom",
            Some(&capped_pmf(&last, CAP)),
            Some(&capped_pmf(&geom, CAP)),
            None,
        ));
        let a_max = table.a(n_max)?;
        let scaled = n_max as f64 * survival_probability(&sc.env, a_max, order)?;
        let j = table.generation_at(n_max, eps)?;
        let k = table.generation_at(n_max, m)?;
        let mean = conditional_mean_x(&sc.env, j, k, order)?;
        let want = eps / (m * p);
        Ok(vec![
            CheckRecord::exact("yaglom_tv", tvs.last().expect("nonempty").2, tol.yaglom_tv)
                .with_tail(last.tail_mass())
                .with_detail(detail.clone()),
            CheckRecord::exact("yaglom_monotone", rise, tol.identity).with_detail(detail),
            CheckRecord::exact("survival_scaling", (scaled / p - 1.0).abs(), tol.survival_rel)
                .with_detail(format!("n P(survive) = {scaled:.6}, p = {p:.6}")),
            CheckRecord::exact("conditional_mean", (mean / want - 1.0).abs(), tol.mean_rel)
                .with_detail(format!("mean = {mean:.6}, limit = {want:.6}")),
        ])
    })?;
    rep.tables = tables;
    Ok(rep)
}

/// Conditioned paths at `n_mc` against the limit joint law, and the
/// continuous-time `Z` simulator against its closed-form marginal.
pub fn fdd(sc: &Scenario) -> Result<VerificationReport> {
    let mut rep = VerificationReport::new("fdd", &sc.cfg);
    let mut tables = Vec::new();
    let mut checks = timed(|| fdd_paths(sc, &mut tables))?;
    checks.extend(timed(|| z_marginal(sc, &mut tables))?);
    rep.checks = checks;
    rep.tables = tables;
    Ok(rep)
}

/// Conditioned sampler at `n_mc` on the grid: joint, pairwise and marginal
/// laws against the limit, plus the exact finite-`n` bias of each marginal.
pub fn fdd_paths(sc: &Scenario, tables: &mut Vec<PmfTable>) -> Result<Vec<CheckRecord>> {
    let tol = sc.tol();
    let order = sc.order();
    let times = sc.times().to_vec();
    let n = sc.cfg.grid.n_mc;
    let sampler = ConditionedSampler::new(&sc.env, n, &times, order)?;
    let seed = sc.runner.seed_for("fdd");
    let tally = sc.runner.run(
        sc.cfg.mc.replicates,
        || PathTally::new(times.len(), CAP as u64),
        |acc, i| acc.record(&sampler.sample(&mut SeededStream::new(seed, i).rng())),
    );
    let target = ScalingTable::covering(&sc.env, n)?.a(n)?;
    let exact = conditioned_marginals_x(&sc.env, target, &sc.generations(n)?, order)?;
    let limits = times
        .iter()
        .map(|&t| u_marginal(&sc.limit, t))
        .collect::<Result<Vec<_>>>()?;
    let joint = u_joint(&sc.limit, &times)?;
    let cmp = PathComparison {
        prefix: "fdd",
        joint_tol: tol.fdd_tv,
        marginal_tol: tol.fdd_tv,
        against_exact: false,
    };
    let mut out = cmp.compare(&tally, &times, Some(&joint), &limits, Some(&exact), tables)?;
    for (i, &t) in times.iter().enumerate() {
        out.push(CheckRecord::exact(
            format!("fdd_bias_t{}", label(t)),
            series_tv(&exact[i], &limits[i])?,
            tol.yaglom_tv,
        ));
    }
    Ok(out)
}

/// `Z(ln 2)` from one individual against `h_{1/2}`.
pub fn z_marginal(sc: &Scenario, tables: &mut Vec<PmfTable>) -> Result<Vec<CheckRecord>> {
    let reps = sc.cfg.mc.z_replicates;
    let horizon = 2f64.ln();
    let seed = sc.runner.seed_for("z");
    let emp = sc.runner.run(reps, EmpiricalDistribution::new, |acc, i| {
        acc.record(run_z(&sc.limit, 1, 0.0, horizon, &mut SeededStream::new(seed, i).rng()));
    });
    let law = lf_gf(&sc.limit.lf(0.5)?, sc.order());
    let lim = capped_pmf(&law, CAP);
    let got = emp.to_pmf(CAP);
    let radius = tv_confidence_radius_for(&lim, reps);
    tables.push(PmfTable::from_columns("z_log2", None, Some(&lim), Some((&got, radius))));
    Ok(vec![CheckRecord::monte_carlo(
        "z_log2",
        total_variation(&got, &lim)?,
        sc.tol().z_tv,
        radius,
        reps,
    )])
}

/// Identities of the conditioned limit: entrance law, survival from
/// `Geom(p)`, Chapman-Kolmogorov, small-time limits, and the rejection
/// sampler of `U`.
pub fn entrance(sc: &Scenario) -> Result<VerificationReport> {
    let mut rep = VerificationReport::new("entrance", &sc.cfg);
    let mut tables = Vec::new();
    let mut checks = timed(|| {
        Ok(vec![
            check_survival_from_geom(sc)?,
            check_entrance_bayes(sc)?,
            check_entrance_at_one(sc)?,
            check_entrance_propagation(sc)?,
            check_conditioned_ck(sc)?,
            check_kernel_small_time(sc)?,
            check_entrance_small_time(sc)?,
        ])
    })?;
    checks.extend(timed(|| u_rejection(sc, &mut tables))?);
    rep.checks = checks;
    rep.tables = tables;
    Ok(rep)
}

/// `P(U(1) > 0) = eps` for `U(eps) ~ Geom(p)`, `eps` in `{0.1, ..., 1}`.
pub fn check_survival_from_geom(sc: &Scenario) -> Result<CheckRecord> {
    let mut worst: f64 = 0.0;
    for i in 1..=10 {
        let e = i as f64 / 10.0;
        worst = worst.max((survival_from_geom(&sc.limit, e)? - e).abs());
    }
    Ok(CheckRecord::exact("survival_from_geom", worst, sc.tol().identity))
}

/// `Geom(p)` at `eps` reweighted by survival to 1 is `g_eps`.
pub fn check_entrance_bayes(sc: &Scenario) -> Result<CheckRecord> {
    let limit = &sc.limit;
    let eps = sc.cfg.limit.eps;
    let geom = quasi_stationary_pmf(limit);
    let ln0 = lf_gf(&limit.lf(eps)?, 1).coeff(0).ln();
    let bayes = TruncatedSeries::from_coeffs(
        geom.coeffs()
            .iter()
            .enumerate()
            .map(|(x, &g)| if x == 0 { 0.0 } else { g * -(x as f64 * ln0).exp_m1() / eps })
            .collect(),
    )?;
    Ok(CheckRecord::exact(
        "entrance_bayes",
        series_tv(&bayes, &entrance_law(limit, eps)?)?,
        sc.tol().exact,
    ))
}

pub fn check_entrance_at_one(sc: &Scenario) -> Result<CheckRecord> {
    Ok(CheckRecord::exact(
        "entrance_at_one",
        series_tv(&entrance_law(&sc.limit, 1.0)?, &quasi_stationary_pmf(&sc.limit))?,
        sc.tol().identity,
    ))
}

/// `g_u` pushed through the conditioned kernel to `t` is `g_t`.
pub fn check_entrance_propagation(sc: &Scenario) -> Result<CheckRecord> {
    let limit = &sc.limit;
    let eps = sc.cfg.limit.eps;
    let mut points: Vec<f64> = vec![0.1, eps];
    points.extend(sc.times().iter().copied().filter(|&t| t > eps && t <= 1.0));
    points.extend([0.9, 1.0]);
    points.sort_by(f64::total_cmp);
    points.dedup();
    let mut worst: f64 = 0.0;
    for (i, &u) in points.iter().enumerate() {
        let g_u = entrance_law(limit, u)?;
        for &t in &points[i + 1..] {
            let pushed = push(&g_u, &conditioned_kernel_matrix(limit, u, t, limit.order())?)?;
            worst = worst.max(series_tv(&pushed, &entrance_law(limit, t)?)?);
        }
    }
    Ok(CheckRecord::exact("entrance_propagation", worst, sc.tol().exact)
        .with_detail(format!("times {points:?}")))
}

/// `k_{u,t} k_{t,v} = k_{u,v}` on rows and columns up to [`CAP`].
pub fn check_conditioned_ck(sc: &Scenario) -> Result<CheckRecord> {
    let limit = &sc.limit;
    let mut worst: f64 = 0.0;
    for (u, t, v) in [(0.1, 0.4, 1.0), (sc.cfg.limit.eps, 0.5, 0.75), (0.3, 0.6, 0.9)] {
        let ut = conditioned_kernel_matrix(limit, u, t, limit.order())?;
        let tv = conditioned_kernel_matrix(limit, t, v, limit.order())?;
        let uv = conditioned_kernel_matrix(limit, u, v, CAP)?;
        for x in 1..=CAP {
            let via = push(&ut[x], &tv)?;
            for y in 0..=CAP {
                worst = worst.max((via.coeff(y) - uv[x].coeff(y)).abs());
            }
        }
    }
    Ok(CheckRecord::exact("conditioned_chapman_kolmogorov", worst, sc.tol().exact))
}

const SMALL_TIME: f64 = 1e-6;

/// `k_{alpha t, t; x0}(s)` against its `t -> 0` limit.
pub fn check_kernel_small_time(sc: &Scenario) -> Result<CheckRecord> {
    let mut worst: f64 = 0.0;
    for s in [0.2, 0.5, 0.8] {
        for alpha in [0.3, 0.7] {
            for x0 in [1, 3] {
                let k = conditioned_kernel(&sc.limit, alpha * SMALL_TIME, SMALL_TIME, x0)?;
                let lim = kernel_small_time_limit(&sc.limit, alpha, x0, s);
                worst = worst.max((k.eval(s)? - lim).abs());
            }
        }
    }
    Ok(CheckRecord::exact("kernel_small_time", worst, sc.tol().small_time))
}

pub fn check_entrance_small_time(sc: &Scenario) -> Result<CheckRecord> {
    let g = entrance_law(&sc.limit, SMALL_TIME)?;
    let mut worst: f64 = 0.0;
    for s in [0.2, 0.5, 0.8] {
        worst = worst.max((g.eval(s)? - entrance_small_time_limit(&sc.limit, s)).abs());
    }
    Ok(CheckRecord::exact("entrance_small_time", worst, sc.tol().small_time))
}

struct RejectionTally {
    paths: PathTally,
    attempts: u64,
}

impl Merge for RejectionTally {
    fn merge_from(&mut self, other: Self) {
        self.paths.merge_from(other.paths);
        self.attempts += other.attempts;
    }
}

/// Rejection sampler of the conditioned limit against its exact laws.
pub fn u_rejection(sc: &Scenario, tables: &mut Vec<PmfTable>) -> Result<Vec<CheckRecord>> {
    let eps = sc.cfg.limit.eps;
    let times: Vec<f64> = sc.times().iter().copied().filter(|&t| t >= eps).collect();
    if times.is_empty() {
        return Ok(Vec::new());
    }
    let reps = sc.cfg.mc.replicates;
    let seed = sc.runner.seed_for("u-rejection");
    let limit = &sc.limit;
    let tally = sc.runner.run(
        reps,
        || RejectionTally {
            paths: PathTally::new(times.len(), CAP as u64),
            attempts: 0,
        },
        |acc, i| {
            let mut rng = SeededStream::new(seed, i).rng();
            let (path, attempts) =
                sample_u_conditioned(limit, eps, &times, &mut rng).expect("grid validated");
            acc.paths.record(&path);
            acc.attempts += attempts;
        },
    );
    let limits = times
        .iter()
        .map(|&t| u_marginal(limit, t))
        .collect::<Result<Vec<_>>>()?;
    let joint = u_joint(limit, &times)?;
    let cmp = PathComparison {
        prefix: "u_rejection",
        joint_tol: sc.tol().fdd_tv,
        marginal_tol: sc.tol().fdd_tv,
        against_exact: false,
    };
    let mut out = cmp.compare(&tally.paths, &times, Some(&joint), &limits, None, tables)?;
    let rate = reps as f64 / tally.attempts as f64;
    let radius = 2.576 * (eps * (1.0 - eps) / tally.attempts as f64).sqrt();
    out.push(
        CheckRecord::monte_carlo(
            "u_acceptance_rate",
            (rate - eps).abs(),
            sc.tol().acceptance_abs,
            radius,
            tally.attempts,
        )
        .with_detail(format!("accepted {reps} of {} attempts", tally.attempts)),
    );
    Ok(out)
}

/// Immigration: the exact law of `Y` against `f_Y`, stationarity of `W`,
/// generator rates, and Monte Carlo of `Y` and of the `W` simulator.
pub fn theorem2(sc: &Scenario) -> Result<VerificationReport> {
    if !sc.env.has_immigration() {
        return Err(LabError::Config(format!(
            "scenario {} has no immigration",
            sc.cfg.name
        )));
    }
    let mut rep = VerificationReport::new("theorem2", &sc.cfg);
    let fy = stationary_fy(&sc.limit)?;
    let mut tables = Vec::new();
    let mut checks = timed(|| {
        Ok(vec![
            check_theorem2_marginal(sc, &mut tables)?,
            check_w_stationarity(sc)?,
            check_generator_rates(sc)?,
        ])
    })?;
    checks.extend(timed(|| y_paths(sc, &fy, &mut tables))?);
    checks.extend(timed(|| w_simulator(sc, &fy, &mut tables))?);
    checks.extend(timed(|| w_event_rates(sc, &fy))?);
    rep.checks = checks;
    rep.tables = tables;
    Ok(rep)
}

/// Exact law of `Y_{A(n)}` against `f_Y` at the largest `n`.
pub fn check_theorem2_marginal(sc: &Scenario, tables: &mut Vec<PmfTable>) -> Result<CheckRecord> {
    let fy = stationary_fy(&sc.limit)?;
    let ns = &sc.cfg.grid.n_values;
    let table = ScalingTable::covering(&sc.env, *ns.last().expect("nonempty"))?;
    let mut detail = Vec::new();
    let mut last = None;
    for &n in ns {
        let a = table.a(n)?;
        let law = marginal_pmf_y(&sc.env, a, sc.order())?;
        let tv = series_tv(&law, &fy)?;
        detail.push(format!("n={n} A={a} tv={tv:.3e}"));
        last = Some((tv, law));
    }
    let (tv, law) = last.expect("nonempty");
    tables.push(PmfTable::from_columns(
        "theorem2_marginal",
        Some(&capped_pmf(&law, CAP)),
        Some(&capped_pmf(&fy, CAP)),
        None,
    ));
    Ok(CheckRecord::exact("theorem2_marginal", tv, sc.tol().theorem2_tv)
        .with_tail(law.tail_mass())
        .with_detail(detail.join("; ")))
}

/// `f_Y` is invariant under the transition matrices of `W`.
pub fn check_w_stationarity(sc: &Scenario) -> Result<CheckRecord> {
    let fy = stationary_fy(&sc.limit)?;
    let mut worst: f64 = 0.0;
    for t in [0.1, 0.5, 1.0, 2.0] {
        let moved = push(&fy, &w_transition_matrix(&sc.limit, t, sc.order())?)?;
        for y in 0..=CAP {
            worst = worst.max((moved.coeff(y) - fy.coeff(y)).abs());
        }
    }
    Ok(CheckRecord::exact("w_stationarity", worst, sc.tol().exact))
}

/// `a(s)` and `b(s)` recovered by central differences of the transition
/// generating functions at `t = 0`.
pub fn check_generator_rates(sc: &Scenario) -> Result<CheckRecord> {
    let mut worst: f64 = 0.0;
    for i in 1..10 {
        let s = i as f64 / 10.0;
        let (a, b) = generator_rates_fd(&sc.limit, s, 1e-5);
        worst = worst
            .max((a - generator_a(&sc.limit, s)).abs())
            .max((b - generator_b(&sc.limit, s)).abs());
    }
    Ok(CheckRecord::exact("generator_rates", worst, sc.tol().rate_fd))
}

/// Forward sampler of `Y` at `n_mc` against the stationary `W` joint law.
pub fn y_paths(sc: &Scenario, fy: &TruncatedSeries, tables: &mut Vec<PmfTable>) -> Result<Vec<CheckRecord>> {
    let times = sc.times().to_vec();
    let n = sc.cfg.grid.n_mc;
    let sampler = ForwardSampler::new(&sc.env, n, &times, sc.order(), true)?;
    let seed = sc.runner.seed_for("theorem2-y");
    let tally = sc.runner.run(
        sc.cfg.mc.replicates,
        || PathTally::new(times.len(), CAP as u64),
        |acc, i| acc.record(&sampler.sample(&mut SeededStream::new(seed, i).rng())),
    );
    let exact = sampler
        .generations()
        .iter()
        .map(|&g| marginal_pmf_y(&sc.env, g, sc.order()))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let limits = vec![fy.clone(); times.len()];
    let joint = w_joint(&sc.limit, &times)?;
    let cmp = PathComparison {
        prefix: "theorem2_y",
        joint_tol: sc.tol().fdd_tv,
        marginal_tol: sc.tol().theorem2_tv,
        against_exact: false,
    };
    cmp.compare(&tally, &times, Some(&joint), &limits, Some(&exact), tables)
}

/// `W` started from `f_Y`, observed at 0.5 and 1.
pub fn w_simulator(sc: &Scenario, fy: &TruncatedSeries, tables: &mut Vec<PmfTable>) -> Result<Vec<CheckRecord>> {
    let times = [0.5, 1.0];
    let start = CdfTable::new(fy.coeffs());
    let w = WSampler::new(&sc.limit);
    let seed = sc.runner.seed_for("w-simulator");
    let tally = sc.runner.run(
        sc.cfg.mc.replicates,
        || PathTally::new(times.len(), CAP as u64),
        |acc, i| {
            let mut rng = SeededStream::new(seed, i).rng();
            let x0 = start.invert_bisect(uniform(&mut rng)) as u64;
            let a = w.run_to(x0, 0.0, times[0], &mut rng);
            let b = w.run_to(a, times[0], times[1], &mut rng);
            acc.record(&bpve_core::sim::PathSample {
                times: times.to_vec(),
                states: vec![a, b],
                n: 0,
                conditioned: false,
                overflow: false,
            });
        },
    );
    let cmp = PathComparison {
        prefix: "w_stationary",
        joint_tol: sc.tol().w_tv,
        marginal_tol: sc.tol().w_tv,
        against_exact: false,
    };
    cmp.compare(&tally, &times, None, &[fy.clone(), fy.clone()], None, tables)
}

/// Per-path sums and squares of compensated event counts.
#[derive(Clone)]
struct Moments {
    sum: Vec<f64>,
    sq: Vec<f64>,
    n: u64,
}

impl Moments {
    fn new(k: usize) -> Self {
        Self {
            sum: vec![0.0; k],
            sq: vec![0.0; k],
            n: 0,
        }
    }

    fn record(&mut self, v: &[f64]) {
        for (i, x) in v.iter().enumerate() {
            self.sum[i] += x;
            self.sq[i] += x * x;
        }
        self.n += 1;
    }

    fn z_scores(&self) -> Vec<f64> {
        let n = self.n as f64;
        self.sum
            .iter()
            .zip(&self.sq)
            .map(|(s, q)| {
                let mean = s / n;
                let var = (q / n - mean * mean).max(1e-300);
                mean.abs() / (var / n).sqrt()
            })
            .collect()
    }
}

impl Merge for Moments {
    fn merge_from(&mut self, other: Self) {
        for i in 0..self.sum.len() {
            self.sum[i] += other.sum[i];
            self.sq[i] += other.sq[i];
        }
        self.n += other.n;
    }
}

/// Births, deaths and immigration batches of `W` on `[0, 1]` minus their
/// compensators; every mean must be within a few standard errors of 0.
pub fn w_event_rates(sc: &Scenario, fy: &TruncatedSeries) -> Result<Vec<CheckRecord>> {
    let limit = &sc.limit;
    let batch = limit.batch_law().to_vec();
    let start = CdfTable::new(fy.coeffs());
    let w = WSampler::new(limit);
    let (birth, death, beta) = (limit.birth_rate(), limit.death_rate(), limit.beta_rate());
    let seed = sc.runner.seed_for("w-events");
    let reps = sc.cfg.mc.replicates;
    let kinds = 2 + batch.len();
    let m = sc.runner.run(
        reps,
        || Moments::new(kinds),
        |acc, i| {
            let mut rng = SeededStream::new(seed, i).rng();
            let x0 = start.invert_bisect(uniform(&mut rng)) as u64;
            let path = w.trajectory(x0, 0.0, 1.0, &mut rng);
            let occupied = path.occupation(1.0);
            let mut v = vec![0.0; kinds];
            v[0] = -birth * occupied;
            v[1] = -death * occupied;
            for (k, h) in batch.iter().enumerate() {
                v[2 + k] = -beta * h;
            }
            for kind in &path.kinds {
                match kind {
                    EventKind::Birth => v[0] += 1.0,
                    EventKind::Death => v[1] += 1.0,
                    EventKind::Immigration(b) => v[2 + *b as usize] += 1.0,
                }
            }
            acc.record(&v);
        },
    );
    let z: Vec<f64> = m
        .z_scores()
        .into_iter()
        .enumerate()
        .map(|(i, z)| if i >= 2 && batch[i - 2] == 0.0 { 0.0 } else { z })
        .collect();
    let worst = z.iter().copied().fold(0.0, f64::max);
    let mut rec = CheckRecord::exact("w_event_rates", worst, sc.tol().event_rate_se)
        .with_detail(format!("z-scores (birth, death, batches 0..): {z:.2?}"));
    rec.kind = CheckKind::MonteCarlo;
    rec.samples = Some(reps);
    Ok(vec![rec])
}

/// Time reversal `t -> 1/t` of sampled paths of `X` and `Y`.
pub fn reverse(sc: &Scenario) -> Result<VerificationReport> {
    if !sc.cfg.inversion_closed() {
        return Err(LabError::Config(format!(
            "grid {:?} is not closed under t -> 1/t",
            sc.times()
        )));
    }
    let mut rep = VerificationReport::new("reverse", &sc.cfg);
    let times = sc.times().to_vec();
    let inverse: Vec<f64> = times.iter().map(|t| 1.0 / t).collect();
    let order = sc.order();
    let n = sc.cfg.grid.n_mc;
    let reps = sc.cfg.mc.replicates;
    let mut tables = Vec::new();
    let mut checks = timed(|| {
        let sampler = ConditionedSampler::new(&sc.env, n, &times, order)?;
        let seed = sc.runner.seed_for("reverse-x");
        let tally = sc.runner.run(
            reps,
            || PathTally::new(times.len(), CAP as u64),
            |acc, i| {
                let path = sampler.sample(&mut SeededStream::new(seed, i).rng());
                let back = reverse_marginals(std::slice::from_ref(&path)).expect("grid is closed");
                acc.record(&back[0]);
            },
        );
        let target = ScalingTable::covering(&sc.env, n)?.a(n)?;
        let gens = sc.generations(n)?;
        let lookup = bpve_core::limit::inversion_map(&times)?;
        let forward = conditioned_marginals_x(&sc.env, target, &gens, order)?;
        let exact: Vec<TruncatedSeries> = lookup.iter().map(|&j| forward[j].clone()).collect();
        let limits = inverse
            .iter()
            .map(|&t| u_marginal(&sc.limit, t))
            .collect::<Result<Vec<_>>>()?;
        let cmp = PathComparison {
            prefix: "reverse_x",
            joint_tol: sc.tol().reverse_tv,
            marginal_tol: sc.tol().reverse_tv,
            against_exact: true,
        };
        cmp.compare(&tally, &times, None, &limits, Some(&exact), &mut tables)
    })?;
    if sc.env.has_immigration() {
        checks.extend(timed(|| {
            let sampler = ForwardSampler::new(&sc.env, n, &times, order, true)?;
            let seed = sc.runner.seed_for("reverse-y");
            let tally = sc.runner.run(
                reps,
                || PathTally::new(times.len(), CAP as u64),
                |acc, i| {
                    let path = sampler.sample(&mut SeededStream::new(seed, i).rng());
                    let back = reverse_marginals(std::slice::from_ref(&path)).expect("grid is closed");
                    acc.record(&back[0]);
                },
            );
            let lookup = bpve_core::limit::inversion_map(&times)?;
            let exact = lookup
                .iter()
                .map(|&j| marginal_pmf_y(&sc.env, sampler.generations()[j], order))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let fy = stationary_fy(&sc.limit)?;
            let cmp = PathComparison {
                prefix: "reverse_y",
                joint_tol: sc.tol().reverse_tv,
                marginal_tol: sc.tol().reverse_tv,
                against_exact: true,
            };
            cmp.compare(&tally, &times, None, &vec![fy; times.len()], Some(&exact), &mut tables)
        })?);
    }
    rep.checks = checks;
    rep.tables = tables;
    Ok(rep)
}

/// Regularity of the environment and the algebra of linear-fractional laws.
pub fn diagnostics(sc: &Scenario) -> Result<VerificationReport> {
    let mut rep = VerificationReport::new("diag", &sc.cfg);
    let tol = sc.tol().clone();
    let env = &sc.env;
    let order = sc.order();
    rep.checks = timed(|| {
        let mut out = Vec::new();
        let horizon = sc.cfg.grid.diag_horizon;
        let d = condition_diagnostics(env, horizon, order)?;
        let nu = sc.limit.nu();
        for (k, v) in d.toeplitz.iter().enumerate() {
            let want = nu / (2.0 * (k + 1) as f64);
            out.push(
                CheckRecord::exact(format!("toeplitz_k{}", k + 1), (v - want).abs(), tol.toeplitz)
                    .with_detail(format!("sum = {v:.6}, limit = {want:.6}, horizon = {horizon}")),
            );
        }
        out.push(CheckRecord::exact("shape_sup_ratio", d.shape_sup_ratio, tol.shape_sup));
        let log_h = env.alpha() * (horizon as f64).ln();
        out.push(
            CheckRecord::exact("variance_sum", (d.variance_sum - log_h).abs(), tol.variance_sum)
                .with_detail(format!("sum = {:.4}, alpha ln H = {log_h:.4}", d.variance_sum)),
        );

        let n = *sc.cfg.grid.n_values.last().expect("nonempty");
        let mut points = vec![sc.cfg.limit.eps];
        points.extend(sc.times());
        points.sort_by(f64::total_cmp);
        points.dedup();
        let reach = (n as f64 * points.last().copied().unwrap_or(1.0).max(1.0)).ceil() as u64;
        let table = ScalingTable::covering(env, reach)?;
        let mut ratio_gap: f64 = 0.0;
        for (i, &u) in points.iter().enumerate() {
            for &t in &points[i + 1..] {
                let (a, b) = (table.generation_at(n, u)?, table.generation_at(n, t)?);
                ratio_gap = ratio_gap.max((table.cumulative_between(a, b) / (u / t) - 1.0).abs());
            }
        }
        out.push(CheckRecord::exact("scaling_ratio", ratio_gap, tol.scaling_ratio));

        let mut telescoping: f64 = 0.0;
        for (j, m) in [(0, 50), (10, 400)] {
            for s in [0.0, 0.5, 0.9] {
                telescoping = telescoping.max(shape_telescoping_residual(env, j, m, s, order)?.abs());
            }
        }
        out.push(CheckRecord::exact("shape_telescoping", telescoping, tol.exact));

        out.push(check_lf_roundtrip(sc)?);
        out.push(check_lf_identity(sc)?);
        Ok(out)
    })?;
    Ok(rep)
}

/// `h_a o h_b = h_{ab}` coefficientwise for 1000 random `(a, b, nu)`.
pub fn check_lf_roundtrip(sc: &Scenario) -> Result<CheckRecord> {
    let mut rng = SeededStream::new(sc.runner.seed_for("lf-roundtrip"), 0).rng();
    let len = 128;
    let mut worst: f64 = 0.0;
    for _ in 0..1_000 {
        let (a, b) = (uniform(&mut rng), uniform(&mut rng));
        let nu = 6.0 * uniform(&mut rng);
        let p = LinearFractionalParams::new(a, nu)?;
        let q = LinearFractionalParams::new(b, nu)?;
        let direct = lf_gf(&p, len).compose(&lf_gf(&q, len))?;
        let closed = lf_gf(&lf_compose(&p, &q)?, len);
        for (x, y) in direct.coeffs().iter().zip(closed.coeffs()) {
            worst = worst.max((x - y).abs());
        }
    }
    Ok(CheckRecord::exact("lf_roundtrip", worst, sc.tol().series))
}

/// `p h_a / (1 - q h_a) = 1 - a (1 + nu/2) / (1/(1 - s) + nu/2)` on a grid.
pub fn check_lf_identity(sc: &Scenario) -> Result<CheckRecord> {
    let mut worst: f64 = 0.0;
    for nu in [0.0, 0.5, sc.limit.nu(), 7.0] {
        let (p, q) = (2.0 / (2.0 + nu), nu / (2.0 + nu));
        for i in 0..100 {
            for j in 0..100 {
                let a = i as f64 / 99.0;
                let s = j as f64 / 100.0;
                let h = LinearFractionalParams::new(a, nu)?.eval(s);
                let lhs = p * h / (1.0 - q * h);
                let rhs = 1.0 - a * (1.0 + nu / 2.0) / (1.0 / (1.0 - s) + nu / 2.0);
                worst = worst.max((lhs - rhs).abs());
            }
        }
    }
    Ok(CheckRecord::exact("lf_geometric_identity", worst, sc.tol().identity))
}
