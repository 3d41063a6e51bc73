use approx::assert_relative_eq;
use mvpb::rst::{build_design, profile_b, rst_from_design, score_and_information, Normalization, Objective, RstDesign};
use mvpb::sim::generate_study;
use mvpb::{reml_fit, rst_test, BrmaParams, FitOptions, MetaDataset, RstOptions, Study};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn simulated(seed: u64, m: usize, rho_w: f64, rho_b: f64, partial_every: usize) -> MetaDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = BrmaParams::new([0.2, -0.3], [0.6, 0.9], rho_b).unwrap();
    let studies = (0..m)
        .map(|i| {
            let s = generate_study(format!("s{i}"), &p, rho_w, &mut rng);
            if partial_every > 0 && i % partial_every == partial_every - 1 {
                let j = rng.random_range(0..2);
                let o = *s.outcome(j).unwrap();
                Study::partial(s.id(), j, o.y, o.se).unwrap()
            } else {
                s
            }
        })
        .collect();
    MetaDataset::from_studies(studies).unwrap()
}

/// Log-likelihood of the standardized regression, written out per row.
fn objective(design: &RstDesign, theta: &[f64; 4]) -> f64 {
    let mut ll = 0.0;
    for row in design.rows() {
        let e: Vec<f64> = row
            .outcomes
            .iter()
            .enumerate()
            .map(|(k, &j)| row.snd[k] - theta[j] - theta[2 + j] * row.precision[k])
            .collect();
        ll -= 0.5
            * if e.len() == 1 {
                e[0] * e[0]
            } else {
                let r = row.sigma[(0, 1)];
                (e[0] * e[0] - 2.0 * r * e[0] * e[1] + e[1] * e[1]) / (1.0 - r * r)
            };
    }
    ll
}

fn design_for(data: &MetaDataset) -> RstDesign {
    let fit = reml_fit(data, &FitOptions::default()).unwrap();
    build_design(data, &fit).unwrap()
}

#[test]
fn score_and_hessian_match_finite_differences() {
    for seed in 0..10 {
        let data = simulated(seed, 8 + seed as usize, 0.4, 0.3, 4);
        let d = design_for(&data);
        assert_eq!(d.outcomes(), &[0, 1]);
        let b = profile_b(&d, Objective::Correlated).unwrap();
        let theta = [0.0, 0.0, b[0], b[1]];
        let (score, info) = score_and_information(&d, Objective::Correlated, &[0.0, 0.0], &b).unwrap();
        let h = 1e-5;
        for k in 0..4 {
            let (mut up, mut dn) = (theta, theta);
            up[k] += h;
            dn[k] -= h;
            let fd = (objective(&d, &up) - objective(&d, &dn)) / (2.0 * h);
            assert!((fd - score[k]).abs() <= 1e-6 * score[k].abs().max(1.0), "seed {seed} score {k}");
        }
        let h = 1e-3;
        for k in 0..4 {
            for l in 0..4 {
                let f = |dk: f64, dl: f64| {
                    let mut t = theta;
                    t[k] += dk;
                    t[l] += dl;
                    objective(&d, &t)
                };
                let fd = (f(h, h) - f(h, -h) - f(-h, h) + f(-h, -h)) / (4.0 * h * h);
                assert!((fd + info[(k, l)]).abs() <= 1e-5 * info[(k, l)].abs().max(1.0), "seed {seed} hess {k},{l}");
            }
        }
        // Slopes are profiled: the slope score vanishes.
        assert!(score[2].abs() < 1e-9 && score[3].abs() < 1e-9);
    }
}

#[test]
fn mirrored_pairs_have_zero_statistic() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut studies = Vec::new();
    for i in 0..10 {
        let y = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        let se = [rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)];
        studies.push(Study::complete(format!("a{i}"), y, se, 0.3).unwrap());
        studies.push(Study::complete(format!("b{i}"), [-y[0], -y[1]], se, 0.3).unwrap());
    }
    let data = MetaDataset::from_studies(studies).unwrap();
    let r = rst_test(&data, &RstOptions::default()).unwrap();
    assert!(r.statistic < 1e-12, "{}", r.statistic);
    assert_relative_eq!(r.p_value, 1.0, epsilon = 1e-9);
    assert!(r.b_profiled.iter().all(|b| b.abs() < 1e-9));
}

#[test]
fn independent_case_decomposes() {
    for seed in 0..5 {
        let data = simulated(100 + seed, 15, 0.0, 0.0, 0);
        let mut fit = reml_fit(&data, &FitOptions::default()).unwrap();
        fit.params.rho_b = 0.0;
        let d = build_design(&data, &fit).unwrap();
        let joint = rst_from_design(&d, Objective::Correlated, Normalization::Average).unwrap();
        let parts: f64 = (0..2)
            .map(|j| {
                let dj = d.restrict_to_outcome(j).unwrap();
                rst_from_design(&dj, Objective::Correlated, Normalization::Average)
                    .unwrap()
                    .statistic
            })
            .sum();
        assert!((joint.statistic - parts).abs() < 1e-8, "{} vs {}", joint.statistic, parts);
    }
}

#[test]
fn partial_studies_enter_score() {
    let data = simulated(7, 16, 0.4, 0.3, 3);
    assert!(data.m_partial() > 0);
    let d = design_for(&data);
    let full = rst_from_design(&d, Objective::Correlated, Normalization::Average).unwrap();
    assert_eq!(full.m, 16);
    assert_eq!(full.df, 2);
    assert!((0.0..=1.0).contains(&full.p_value));
}

#[test]
fn single_outcome_dataset_tests_one_intercept() {
    let studies = (0..8)
        .map(|i| Study::partial(format!("s{i}"), 1, 0.1 * i as f64 - 0.3, 0.1 + 0.07 * i as f64).unwrap())
        .collect();
    let data = MetaDataset::from_studies(studies).unwrap();
    let r = rst_test(&data, &RstOptions::default()).unwrap();
    assert_eq!(r.df, 1);
    assert_eq!(r.outcomes, vec![1]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn statistic_is_invariant_to_study_order(seed in 0u64..10_000, shuffle_seed in 0u64..10_000) {
        let data = simulated(seed, 12, 0.3, 0.2, 5);
        let mut studies = data.studies().to_vec();
        studies.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));
        let shuffled = MetaDataset::from_studies(studies).unwrap();
        let opts = RstOptions::default();
        match (rst_test(&data, &opts), rst_test(&shuffled, &opts)) {
            (Ok(a), Ok(b)) => {
                prop_assert!((a.statistic - b.statistic).abs() <= 1e-6 * a.statistic.max(1.0));
                prop_assert!(a.statistic >= 0.0);
                prop_assert!((0.0..=1.0).contains(&a.p_value));
            }
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "order changed the outcome: {:?} / {:?}", a.is_ok(), b.is_ok()),
        }
    }
}
