use mvpb::bias::{
    begg_test, bonferroni_combine, egger_test, trim_fill, Detail, Estimator, Side, TestResult, UniSeries,
};
use proptest::prelude::*;

fn series_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (5..30usize).prop_flat_map(|m| {
        (
            proptest::collection::vec(-3.0..3.0f64, m),
            proptest::collection::vec(0.05..1.5f64, m),
        )
    })
}

fn all_tests(s: &UniSeries) -> Vec<Option<TestResult>> {
    vec![
        egger_test(s).ok(),
        begg_test(s).ok(),
        trim_fill(s, Estimator::L0, Side::Auto).ok(),
        trim_fill(s, Estimator::R0, Side::Auto).ok(),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn p_values_bounded_and_order_free((y, se) in series_strategy(), rot in 0usize..30) {
        let m = y.len();
        let s = UniSeries::new(y.clone(), se.clone()).unwrap();
        let k = rot % m;
        let mut y2 = y.clone();
        let mut se2 = se.clone();
        y2.rotate_left(k);
        se2.rotate_left(k);
        y2.reverse();
        se2.reverse();
        let t = UniSeries::new(y2, se2).unwrap();
        for (a, b) in all_tests(&s).into_iter().zip(all_tests(&t)) {
            match (a, b) {
                (Some(a), Some(b)) => {
                    prop_assert!((0.0..=1.0).contains(&a.p_value));
                    prop_assert!((a.p_value - b.p_value).abs() < 1e-9, "{} vs {}", a.p_value, b.p_value);
                    if let Detail::TrimFill(d) = &a.detail {
                        prop_assert!(d.k0 <= m);
                    }
                }
                (None, None) => {}
                _ => prop_assert!(false, "order changed success"),
            }
        }
    }

    #[test]
    fn bonferroni_of_a_result_with_itself((y, se) in series_strategy()) {
        let s = UniSeries::new(y, se).unwrap();
        if let Ok(r) = begg_test(&s) {
            let b = bonferroni_combine(&r, &r).unwrap();
            prop_assert!((b.p_value - (2.0 * r.p_value).min(1.0)).abs() < 1e-15);
        }
    }
}
