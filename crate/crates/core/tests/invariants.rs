use convid_core::ecf::{ecf, oracle_moments, Model};
use convid_core::families::{Family, ProductLaw};
use convid_core::grid::{
    cumulative_segment, fourier_forward, fourier_inverse, weak_distance, GridFn, GridSpec, TestBank, C64,
};
use convid_core::ident::{solve_case_a, solve_case_b, threshold_support, Case};
use convid_core::regular::{make_weight, solve_regularized, Profile, WeightParams};
use convid_core::sim::{generate, ModelSpec};
use convid_core::wellposed::log_sum_exp;
use proptest::prelude::*;

fn line() -> GridSpec {
    GridSpec::line(-8.0, 8.0, 256).unwrap()
}

fn gaussian() -> impl Strategy<Value = Family> {
    (-1.0..1.0f64, 0.1..1.0f64).prop_map(|(mean, var)| Family::Gaussian { mean, var })
}

fn laplace() -> impl Strategy<Value = Family> {
    (-1.0..1.0f64, 0.2..1.5f64).prop_map(|(loc, scale)| Family::Laplace { loc, scale })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn cf_is_one_at_origin_and_bounded(f in prop_oneof![gaussian(), laplace()], t in -20.0..20.0f64) {
        prop_assert!((f.cf(0.0) - C64::new(1.0, 0.0)).norm() < 1e-15);
        prop_assert!(f.cf(t).norm() <= 1.0 + 1e-12);
        prop_assert!((f.cf(-t) - f.cf(t).conj()).norm() < 1e-14);
    }

    #[test]
    fn transform_round_trip(mean in -2.0..2.0f64, var in 0.2..2.0f64) {
        let sp = GridSpec::line(-16.0, 16.0, 256).unwrap();
        let g = Family::Gaussian { mean, var };
        let f = GridFn::from_real(&sp, "g", |x| g.density(x[0]).unwrap());
        let back = fourier_inverse(&fourier_forward(&f));
        for (a, b) in back.values.iter().zip(&f.values) {
            prop_assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn ecf_is_hermitian_and_bounded(z in prop::collection::vec(-5.0..5.0f64, 2..200)) {
        let g = line();
        let e = ecf(&z, &g).unwrap();
        let o = g.origin_flat();
        prop_assert_eq!(e.values[o], C64::new(1.0, 0.0));
        for j in 1..g.n(0) / 2 {
            prop_assert!((e.values[o + j] - e.values[o - j].conj()).norm() < 1e-12);
        }
        prop_assert!(e.values.iter().all(|v| v.norm() <= 1.0 + 1e-12));
    }

    #[test]
    fn oracle_solutions_reproduce_the_system(g in gaussian(), f in laplace()) {
        let m = oracle_moments(&ProductLaw::univariate(g), &ProductLaw::univariate(f), &line()).unwrap();
        for s in [solve_case_a(&m, 1e-6).unwrap(), solve_case_b(&m, 1e-6).unwrap()] {
            prop_assert!(s.residual < 1e-10);
            prop_assert!((s.gamma.at_origin() - C64::new(1.0, 0.0)).norm() < 1e-14);
        }
    }

    #[test]
    fn mask_shrinks_as_threshold_grows(g in gaussian(), f in laplace(), t1 in 1e-6..0.1f64, t2 in 1e-6..0.1f64) {
        let m = oracle_moments(&ProductLaw::univariate(g), &ProductLaw::univariate(f), &line()).unwrap();
        let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
        let big = threshold_support(&m.eps1, lo).unwrap();
        let small = threshold_support(&m.eps1, hi).unwrap();
        prop_assert!(small.contains(line().origin_flat()));
        for i in 0..big.inside.len() {
            prop_assert!(!small.inside[i] || big.inside[i]);
        }
    }

    #[test]
    fn cumulative_integral_of_cubic(a in -1.0..1.0f64, b in -1.0..1.0f64, c in -1.0..1.0f64) {
        let n = 129;
        let h = 0.05;
        let o = 64;
        let x = |i: usize| (i as f64 - o as f64) * h;
        let f: Vec<C64> = (0..n).map(|i| C64::new(a + b * x(i) + c * x(i).powi(3), 0.0)).collect();
        let out = cumulative_segment(&f, h, o, 0, n - 1);
        for (i, v) in out.iter().enumerate() {
            let t = x(i);
            let exact = a * t + b * t * t / 2.0 + c * t.powi(4) / 4.0;
            prop_assert!((v.re - exact).abs() < 1e-10, "{} vs {}", v.re, exact);
        }
        prop_assert_eq!(out[o], C64::new(0.0, 0.0));
    }

    #[test]
    fn weak_distance_is_a_pseudometric(s1 in 0.2..2.0f64, s2 in 0.2..2.0f64, s3 in 0.2..2.0f64) {
        let g = line();
        let bank = TestBank::default_for(&g);
        let f = |s: f64| GridFn::from_real(&g, "f", move |t| (-s * t[0] * t[0]).exp());
        let (a, b, c) = (f(s1), f(s2), f(s3));
        prop_assert_eq!(weak_distance(&a, &a, &bank).unwrap(), 0.0);
        let ab = weak_distance(&a, &b, &bank).unwrap();
        prop_assert!((ab - weak_distance(&b, &a, &bank).unwrap()).abs() < 1e-14);
        let ac = weak_distance(&a, &c, &bank).unwrap();
        let bc = weak_distance(&b, &c, &bank).unwrap();
        prop_assert!(ac <= ab + bc + 1e-12);
    }

    #[test]
    fn profiles_stay_in_unit_interval(a in -2.0..2.0f64) {
        for p in [Profile::Bump, Profile::RaisedCosine] {
            let v = p.eval(a);
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert_eq!(v, p.eval(-a));
        }
    }

    #[test]
    fn weight_params_round_trip(c in 0.1..10.0f64, rc in any::<bool>()) {
        let profile = if rc { Profile::RaisedCosine } else { Profile::Bump };
        let w: WeightParams = format!("{c}:{profile}").parse().unwrap();
        prop_assert_eq!(w, WeightParams { cutoff: c, profile });
    }

    #[test]
    fn log_sum_exp_matches_direct_sum(v in prop::collection::vec(-30.0..30.0f64, 1..20)) {
        let direct = v.iter().map(|x| x.exp()).sum::<f64>().ln();
        prop_assert!((log_sum_exp(&v) - direct).abs() < 1e-12);
    }

    #[test]
    fn samples_are_reproducible(seed in any::<u64>(), g in gaussian(), f in laplace()) {
        let spec = ModelSpec::classical(Model::Example1, ProductLaw::univariate(g), ProductLaw::univariate(f), 50, seed);
        prop_assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
    }

    #[test]
    fn regularized_residual_on_oracle(g in gaussian(), f in laplace(), c in 1.0..6.0f64) {
        let grid = line();
        let m = oracle_moments(&ProductLaw::univariate(g), &ProductLaw::univariate(f), &grid).unwrap();
        let w = make_weight(c, Profile::Bump, &grid).unwrap();
        for case in [Case::A, Case::B] {
            let s = solve_regularized(&m, &w, case, 1e-8).unwrap();
            prop_assert!(s.residual < 1e-8);
        }
    }
}
