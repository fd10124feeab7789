use bpve_core::environment::{
    cumulative_mean, offspring_gf, EnvironmentSpec, ImmigrationAtom, OffspringFamily,
};
use bpve_core::exact::{closed_form_chain, marginal_pmf_x, CompositionChain, Segment};
use bpve_core::gf::{lf_compose, lf_gf, LinearFractionalParams, TruncatedSeries};
use bpve_core::limit::{
    conditioned_kernel_matrix, entrance_law, w_transition_matrix, LimitSpec,
};
use bpve_core::stats::{total_variation, EmpiricalDistribution};
use proptest::prelude::*;

const N: usize = 256;

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn push(init: &[f64], rows: &[TruncatedSeries]) -> Vec<f64> {
    let len = rows[0].coeffs().len();
    let mut out = vec![0.0; len];
    for (x, &w) in init.iter().enumerate().take(rows.len()) {
        if w == 0.0 {
            continue;
        }
        for (o, c) in out.iter_mut().zip(rows[x].coeffs()) {
            *o += w * c;
        }
    }
    out
}

fn to_pmf(v: &[f64]) -> Vec<f64> {
    let mut p = v.to_vec();
    p.push((1.0 - v.iter().sum::<f64>()).max(0.0));
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn lf_composition_round_trip(a in 0.0f64..=1.0, b in 0.0f64..=1.0, nu in 0.0f64..6.0) {
        let p = LinearFractionalParams::new(a, nu).unwrap();
        let q = LinearFractionalParams::new(b, nu).unwrap();
        let composed = lf_gf(&p, N).compose(&lf_gf(&q, N)).unwrap();
        let closed = lf_gf(&lf_compose(&p, &q).unwrap(), N);
        prop_assert!(max_diff(composed.coeffs(), closed.coeffs()) <= 1e-10);
    }

    #[test]
    fn mass_is_conserved(a in 0.05f64..=1.0, nu in 0.0f64..4.0, x in 0u64..40, steps in 1usize..6) {
        let f = lf_gf(&LinearFractionalParams::new(a, nu).unwrap(), 64);
        let mut g = f.power(x);
        for _ in 0..steps {
            g = g.compose(&f).unwrap();
            prop_assert!((g.total_mass() + g.tail_mass() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn mean_chain_rule(m1 in 0.0f64..=1.0, m2 in 0.0f64..=1.0, s1 in 0.0f64..0.5, s2 in 0.0f64..0.5) {
        let f = bpve_core::gf::LinearFractionalLaw::new(m1, s1).unwrap().to_series(N);
        let g = bpve_core::gf::LinearFractionalLaw::new(m2, s2).unwrap().to_series(N);
        prop_assume!(f.tail_mass() < 1e-15 && g.tail_mass() < 1e-15);
        let fg = f.compose(&g).unwrap();
        let lhs = fg.factorial_moment(1).unwrap();
        prop_assert!((lhs - f.factorial_moment(1).unwrap() * g.factorial_moment(1).unwrap()).abs() <= 1e-10);
    }

    #[test]
    fn tv_is_a_metric(raw in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0), 1..30)) {
        let norm = |v: Vec<f64>| -> Vec<f64> {
            let s: f64 = v.iter().sum();
            if s == 0.0 { let mut z = vec![0.0; v.len()]; z[0] = 1.0; z } else { v.iter().map(|x| x / s).collect() }
        };
        let p = norm(raw.iter().map(|t| t.0).collect());
        let q = norm(raw.iter().map(|t| t.1).collect());
        let r = norm(raw.iter().map(|t| t.2).collect());
        let pq = total_variation(&p, &q).unwrap();
        prop_assert!((pq - total_variation(&q, &p).unwrap()).abs() <= 1e-12);
        prop_assert!(pq <= total_variation(&p, &r).unwrap() + total_variation(&r, &q).unwrap() + 1e-12);
    }

    #[test]
    fn merge_is_associative(a in proptest::collection::vec(0u64..20, 0..50),
                            b in proptest::collection::vec(0u64..20, 0..50),
                            c in proptest::collection::vec(0u64..20, 0..50)) {
        let build = |v: &[u64]| { let mut e = EmpiricalDistribution::new(); for &x in v { e.record(x) } e };
        let (ea, eb, ec) = (build(&a), build(&b), build(&c));
        let mut left = ea.clone(); left.merge(&eb); left.merge(&ec);
        let mut bc = eb.clone(); bc.merge(&ec);
        let mut right = bc; right.merge(&ea);
        let all: Vec<u64> = a.iter().chain(&b).chain(&c).copied().collect();
        prop_assert_eq!(&left, &right);
        prop_assert_eq!(&left, &build(&all));
    }

    #[test]
    fn chain_windows_are_consistent(j in 0u64..600, d1 in 1u64..700, d2 in 1u64..700) {
        let spec = EnvironmentSpec::new(OffspringFamily::LinearFractional, 1.0, 2.0).unwrap();
        let (k, n) = (j + d1, j + d1 + d2);
        let left = Segment::build(&spec, j, k, N).unwrap();
        let right = Segment::build(&spec, k, n, N).unwrap();
        let whole = Segment::build(&spec, j, n, N).unwrap();
        prop_assert!(max_diff(left.f.compose(&right.f).unwrap().coeffs(), whole.f.coeffs()) <= 1e-9);
        let closed = closed_form_chain(&spec, j, n).to_series(N);
        prop_assert!(max_diff(whole.f.coeffs(), closed.coeffs()) <= 1e-9);
    }
}

#[test]
fn linear_fractional_identity_grid() {
    for nu in [0.0, 0.5, 2.0, 7.0] {
        let p = 2.0 / (2.0 + nu);
        let q = 1.0 - p;
        for i in 0..100 {
            for j in 0..100 {
                let a = i as f64 / 99.0;
                let s = j as f64 / 100.0;
                let h = LinearFractionalParams::new(a, nu).unwrap().eval(s);
                let lhs = p * h / (1.0 - q * h);
                let rhs = 1.0 - a * (1.0 + nu / 2.0) / (1.0 / (1.0 - s) + nu / 2.0);
                assert!((lhs - rhs).abs() <= 1e-12, "nu={nu} a={a} s={s}");
            }
        }
    }
}

#[test]
fn bernoulli_chain_is_affine() {
    let spec = EnvironmentSpec::new(OffspringFamily::Bernoulli, 1.7, 0.0).unwrap();
    for n in [1, 5, 40, 333] {
        let got = marginal_pmf_x(&spec, n, N).unwrap();
        let want = TruncatedSeries::bernoulli(cumulative_mean(&spec, 0, n), N).unwrap();
        assert!(max_diff(got.coeffs(), want.coeffs()) <= 1e-10);
    }
}

#[test]
fn law_of_total_probability() {
    let spec = EnvironmentSpec::new(OffspringFamily::LinearFractional, 1.0, 2.0).unwrap();
    let (j, n) = (40, 300);
    let at_j = marginal_pmf_x(&spec, j, N).unwrap();
    let seg = Segment::build(&spec, j, n, N).unwrap();
    let mixed = push(at_j.coeffs(), &seg.rows_x(N));
    let direct = marginal_pmf_x(&spec, n, N).unwrap();
    assert!(max_diff(&mixed, direct.coeffs()) <= 1e-8 + at_j.tail_mass());
}

#[test]
fn law_of_total_probability_with_immigration() {
    let spec = EnvironmentSpec::new(OffspringFamily::LinearFractional, 1.0, 2.0)
        .unwrap()
        .with_immigration(vec![
            ImmigrationAtom { value: 1, weight: 0.5 },
            ImmigrationAtom { value: 2, weight: 0.5 },
        ])
        .unwrap();
    let chain = CompositionChain::new(&spec, &[50, 400], N).unwrap();
    let at_j = &chain.segment(0).g;
    let mixed = push(at_j.coeffs(), &chain.segment(1).rows_y(N));
    let direct = chain.window(0, 400).unwrap().g;
    assert!(max_diff(&mixed, direct.coeffs()) <= 1e-8);
}

#[test]
fn shape_of_offspring_is_exact() {
    let spec = EnvironmentSpec::new(OffspringFamily::LinearFractional, 1.0, 3.0).unwrap();
    for n in [2, 10, 1000] {
        let f = offspring_gf(&spec, n, N);
        let m = spec.mean(n);
        assert!((f.factorial_moment(2).unwrap() - 3.0 * (1.0 - m)).abs() < 1e-10);
    }
}

#[test]
fn conditioned_kernels_chapman_kolmogorov() {
    let cap = 64;
    for nu in [0.0, 2.0] {
        let z = LimitSpec::new(nu, vec![], N).unwrap();
        for (u, t, v) in [(0.1, 0.4, 1.0), (0.25, 0.5, 0.75), (0.3, 0.6, 0.9)] {
            let ut = conditioned_kernel_matrix(&z, u, t, N).unwrap();
            let tv_ = conditioned_kernel_matrix(&z, t, v, N).unwrap();
            let uv = conditioned_kernel_matrix(&z, u, v, cap).unwrap();
            for x in 1..=cap {
                let via = push(ut[x].coeffs(), &tv_);
                let d = max_diff(&via[..=cap], &uv[x].coeffs()[..=cap]);
                assert!(d <= 1e-8, "nu={nu} x={x} d={d}");
            }
        }
    }
}

#[test]
fn entrance_law_propagates() {
    let z = LimitSpec::new(2.0, vec![], N).unwrap();
    for (u, t) in [(0.1, 0.3), (0.25, 0.5), (0.5, 1.0), (0.05, 0.9)] {
        let rows = conditioned_kernel_matrix(&z, u, t, N).unwrap();
        let pushed = push(entrance_law(&z, u).unwrap().coeffs(), &rows);
        let want = entrance_law(&z, t).unwrap();
        let d = total_variation(&to_pmf(&pushed), &want.to_pmf()).unwrap();
        assert!(d <= 1e-8, "u={u} t={t} d={d}");
    }
}

#[test]
fn w_kernels_chapman_kolmogorov() {
    let w = LimitSpec::new(2.0, vec![1.5, 0.5], N).unwrap();
    let (t1, t2) = (0.3, 0.5);
    let a = w_transition_matrix(&w, t1, N).unwrap();
    let b = w_transition_matrix(&w, t2, N).unwrap();
    let ab = w_transition_matrix(&w, t1 + t2, 64).unwrap();
    for y in 0..=64 {
        let via = push(a[y].coeffs(), &b);
        assert!(max_diff(&via[..=64], &ab[y].coeffs()[..=64]) <= 1e-8, "y={y}");
    }
}
