use meltpinn_core::dataset::{subsample_times, CollocationSet, SampleConfig};
use meltpinn_core::difftape::{Input, Jet2, Tape};
use meltpinn_core::evaluation::{compare_pressure, relative_l2};
use meltpinn_core::network::{architecture, MlpParams};
use meltpinn_core::physics::NondimParams;
use meltpinn_core::refsolver::{run_to_steady, MaskedGrid, SnapshotSet};
use proptest::prelude::*;
use std::sync::OnceLock;

fn field() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0..10.0f64, 2..200).prop_filter("needs spread", |v| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64 > 1e-3
    })
}

fn variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n
}

fn small_snapshots() -> &'static SnapshotSet {
    static S: OnceLock<SnapshotSet> = OnceLock::new();
    S.get_or_init(|| run_to_steady(MaskedGrid::half_disk(16).unwrap(), NondimParams::new(100.0, 20.0).unwrap(), 14).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn relative_l2_of_shift_is_c2_over_var(exact in field(), c in -5.0..5.0f64) {
        let pred: Vec<f64> = exact.iter().map(|e| e + c).collect();
        let got = relative_l2(&pred, &exact).unwrap();
        let want = c * c / variance(&exact);
        prop_assert!((got - want).abs() <= 1e-9 * want.max(1e-12));
    }

    #[test]
    fn relative_l2_is_permutation_and_scale_invariant(
        exact in field(), noise in prop::collection::vec(-1.0..1.0f64, 200), k in 0.1..10.0f64, rot in 0usize..200,
    ) {
        let pred: Vec<f64> = exact.iter().zip(&noise).map(|(e, n)| e + n).collect();
        let base = relative_l2(&pred, &exact).unwrap();
        prop_assert!(base >= 0.0);
        let r = rot % exact.len();
        let (mut pe, mut ee) = (pred.clone(), exact.clone());
        pe.rotate_left(r);
        ee.rotate_left(r);
        prop_assert!((relative_l2(&pe, &ee).unwrap() - base).abs() <= 1e-10 * base.max(1e-12));
        let ps: Vec<f64> = pred.iter().map(|x| k * x).collect();
        let es: Vec<f64> = exact.iter().map(|x| k * x).collect();
        prop_assert!((relative_l2(&ps, &es).unwrap() - base).abs() <= 1e-9 * base.max(1e-12));
    }

    #[test]
    fn compare_pressure_ignores_constant_offsets(
        exact in field(), noise in prop::collection::vec(-1.0..1.0f64, 200), a in -50.0..50.0f64, b in -50.0..50.0f64,
    ) {
        let pred: Vec<f64> = exact.iter().zip(&noise).map(|(e, n)| 0.8 * e + n).collect();
        let base = compare_pressure(&pred, &exact).unwrap();
        let ps: Vec<f64> = pred.iter().map(|x| x + a).collect();
        let es: Vec<f64> = exact.iter().map(|x| x + b).collect();
        prop_assert!((compare_pressure(&ps, &es).unwrap() - base).abs() <= 1e-8 * base.max(1e-12));
    }

    #[test]
    fn time_subsets_keep_endpoints_and_are_sorted(available in 2usize..40, frac in 0.0..1.0f64) {
        let count = 2 + ((available - 2) as f64 * frac) as usize;
        let idx = subsample_times(available, count).unwrap();
        prop_assert_eq!(idx.len(), count);
        prop_assert_eq!(idx[0], 0);
        prop_assert_eq!(*idx.last().unwrap(), available - 1);
        prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn jet_product_and_swish_follow_calculus(a in -3.0..3.0f64, b in -3.0..3.0f64, x in -2.0..2.0f64) {
        // f(x) = swish(a x) * (b + x), checked against central differences
        let jx = Jet2::seed(Input::X, x);
        let f = jx.scale(a).swish().mul(&jx.add(&Jet2::constant(b)));
        let g = |x: f64| { let z = a * x; z / (1.0 + (-z).exp()) * (b + x) };
        let h = 1e-4;
        let d1 = (g(x + h) - g(x - h)) / (2.0 * h);
        let d2 = (g(x + h) - 2.0 * g(x) + g(x - h)) / (h * h);
        prop_assert!((f.v - g(x)).abs() <= 1e-14 * g(x).abs().max(1.0));
        prop_assert!((f.d_x - d1).abs() <= 1e-6 * d1.abs().max(1.0));
        prop_assert!((f.d_xx - d2).abs() <= 1e-4 * d2.abs().max(1.0));
        prop_assert_eq!(f.d_t, 0.0);
        prop_assert_eq!(f.d_yy, 0.0);
    }

    #[test]
    fn tape_gradient_of_polynomial_matches_hand_derivative(x in -2.0..2.0f64, y in -2.0..2.0f64, c in -3.0..3.0f64) {
        // f = x^2 y + c x - y^3
        let mut tape = Tape::new();
        let (vx, vy) = (tape.leaf(x).unwrap(), tape.leaf(y).unwrap());
        let xx = tape.mul(vx, vx).unwrap();
        let xxy = tape.mul(xx, vy).unwrap();
        let cx = tape.scale(vx, c).unwrap();
        let yy = tape.mul(vy, vy).unwrap();
        let yyy = tape.mul(yy, vy).unwrap();
        let s = tape.add(xxy, cx).unwrap();
        let f = tape.sub(s, yyy).unwrap();
        let g = tape.backward(f, &[vx, vy]).unwrap();
        prop_assert!((tape.value(f) - (x * x * y + c * x - y * y * y)).abs() <= 1e-12);
        prop_assert!((g[0] - (2.0 * x * y + c)).abs() <= 1e-12);
        prop_assert!((g[1] - (x * x - 3.0 * y * y)).abs() <= 1e-12);
    }

    #[test]
    fn forward_and_jet_values_agree(seed in 0u64..1000, t in 0.0..5.0f64, r in 0.0..0.5f64, th in 0.0..1.0f64) {
        let p = MlpParams::init(&architecture(2, 6), seed).unwrap();
        let ang = std::f64::consts::PI * (1.0 + th);
        let pt = [t, r * ang.cos(), r * ang.sin()];
        let a = p.forward(pt).unwrap();
        let j = p.forward_jet(pt).unwrap();
        prop_assert_eq!(a, [j.temp.v, j.u.v, j.v.v, j.p.v]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn sampled_sets_nest_and_stay_in_domain(seed in 0u64..50, small in 5usize..40, extra in 1usize..40) {
        let snaps = small_snapshots();
        let cells = snaps.header.interior_count;
        let big = (small + extra).min(cells);
        let a = CollocationSet::sample(snaps, &SampleConfig::new(small, 7, seed)).unwrap();
        let b = CollocationSet::sample(snaps, &SampleConfig::new(big, 7, seed)).unwrap();
        for p in &a.interior {
            prop_assert!(b.interior.contains(p));
        }
        let domain = snaps.header.domain;
        for p in a.interior.iter().map(|p| [p[1], p[2]]).chain(a.bottom.iter().map(|p| [p[1], p[2]])) {
            prop_assert!(domain.contains(p[0], p[1], 1e-9));
        }
        prop_assert!(a.interior.iter().all(|p| (0.0..=1.0).contains(&p[3])));
    }
}
