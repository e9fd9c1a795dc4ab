//! Property-based invariants across model-core, planning, inference and
//! diagnostics.

use edpm_core::diagnostics::{batch_summaries, quantile};
use edpm_core::gibbs::{gibbs_sweep, prior_joint_draw};
use edpm_core::model::{
    expected_y_given_x, sticks_from_weights, weights_from_sticks, AtomState, Dataset, Hyperparams,
    TruncationLevels, WeightState,
};
use edpm_core::rng;
use edpm_core::truncation::{error_bound, plan, AlphaSchedule, ErrorBudget};
use edpm_core::vb::{cavi_step, init_variational, CaviOptions, InitStrategy};
use proptest::prelude::*;

fn stick_row() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..0.999, 0..12).prop_map(|mut v| {
        v.push(1.0);
        v
    })
}

fn levels() -> impl Strategy<Value = TruncationLevels> {
    prop::collection::vec(1usize..4, 1..4).prop_map(|m| TruncationLevels::new(m).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stick_weight_round_trip(v in stick_row()) {
        let p = weights_from_sticks(&v).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|w| *w >= 0.0));
        let back = sticks_from_weights(&p).unwrap();
        let p2 = weights_from_sticks(&back).unwrap();
        for (a, b) in p.iter().zip(&p2) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn regression_is_relabeling_invariant(lv in levels(), seed in any::<u64>(), x in -3.0f64..3.0) {
        let h = Hyperparams::standard(&lv, 1);
        let (s, _) = prior_joint_draw(&lv, &h, 0, 1, &mut rng::seeded(seed)).unwrap();
        let base = expected_y_given_x(&s.weights, &s.atoms, &[x]).value;
        // Reverse θ-rows and reverse ψ within each row.
        let rev = |v: &Vec<Vec<f64>>| -> Vec<Vec<f64>> { v.iter().rev().map(|r| r.iter().rev().cloned().collect()).collect() };
        let weights = WeightState {
            theta: s.weights.theta.iter().rev().cloned().collect(),
            psi: rev(&s.weights.psi),
        };
        let atoms = AtomState {
            theta: s.atoms.theta.iter().rev().cloned().collect(),
            psi: s.atoms.psi.iter().rev().map(|r| r.iter().rev().cloned().collect()).collect(),
            ..s.atoms.clone()
        };
        let other = expected_y_given_x(&weights, &atoms, &[x]).value;
        prop_assert!((base - other).abs() <= 1e-10 * (1.0 + base.abs()));
    }

    #[test]
    fn responsibilities_stay_normalized(lv in levels(), seed in 0u64..1000, n in 1usize..8) {
        let h = Hyperparams::standard(&lv, 2);
        let (_, data) = prior_joint_draw(&lv, &h, n, 2, &mut rng::seeded(seed)).unwrap();
        let opts = CaviOptions { seed, strategy: InitStrategy::RandomResp, ..CaviOptions::default() };
        let mut s = init_variational(&data, &lv, &h, &opts).unwrap();
        for _ in 0..3 {
            s = cavi_step(&data, &s, &h).unwrap();
            for i in 0..n {
                prop_assert!((s.resp_row(i).iter().sum::<f64>() - 1.0).abs() < 1e-10);
            }
            s.validate().unwrap();
        }
    }

    #[test]
    fn gibbs_sweep_keeps_weights_normalized(lv in levels(), seed in 0u64..1000) {
        let h = Hyperparams::standard(&lv, 1);
        let (mut s, data) = prior_joint_draw(&lv, &h, 5, 1, &mut rng::seeded(seed)).unwrap();
        let mut r = rng::seeded(seed ^ 0xabcd);
        for _ in 0..5 {
            s = gibbs_sweep(&s, &data, &h, &mut r).unwrap();
            prop_assert!((s.weights.theta.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for row in &s.weights.psi {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            s.validate().unwrap();
        }
    }

    #[test]
    fn planner_levels_respect_budget(
        n in 10usize..5000,
        alpha in 0.2f64..4.0,
        first in 0.2f64..3.0,
        step in 0.0f64..2.0,
    ) {
        let budget = ErrorBudget::new(1e-3, 1e-4).unwrap();
        let sched = AlphaSchedule::Arithmetic { first, step };
        let (lv, _, alphas) = plan(n, alpha, &sched, &budget).unwrap();
        prop_assert!(lv.n_theta() >= 2 && lv.m_all().iter().all(|m| *m >= 2));
        let b = error_bound(n, &lv, alpha, &alphas);
        prop_assert!(b.tv <= 2.0 * budget.eps * (1.0 + 1e-9));
        prop_assert_eq!(b.l1, 2.0 * b.tv);
    }

    #[test]
    fn quantile_is_bounded_and_monotone(v in prop::collection::vec(-1e6f64..1e6, 1..50), q1 in 0.0f64..1.0, q2 in 0.0f64..1.0) {
        let (lo, hi) = if q1 < q2 { (q1, q2) } else { (q2, q1) };
        let a = quantile(&v, lo).unwrap();
        let b = quantile(&v, hi).unwrap();
        let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(min <= a && a <= b && b <= max);
    }

    #[test]
    fn batch_summaries_ignore_trailing_values(
        v in prop::collection::vec(-10.0f64..10.0, 40..60),
        tail in prop::collection::vec(-1e3f64..1e3, 0..10),
    ) {
        let base = batch_summaries(&v, 4, 10).unwrap();
        let mut longer = v.clone();
        longer.extend(tail);
        prop_assert_eq!(base, batch_summaries(&longer, 4, 10).unwrap());
    }
}

#[test]
fn dataset_rejects_non_finite() {
    assert!(Dataset::new(vec![f64::NAN], vec![0.0], 1).is_err());
}
