use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Selection;
use crate::model::{BrmaParams, Study};

/// Scale used to standardize effects inside the publication filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SndBasis {
    /// `Y / sqrt(s^2 + tau^2)` with the generating `tau^2`.
    #[default]
    Total,
    /// `Y / s`, the within-study z statistic.
    Within,
}

/// Study-level summary fed to the filter under whole-study selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyScore {
    /// `max_j |SND_ij|`.
    #[default]
    MaxAbs,
    /// `SND_ij` of the outcome with the larger `|SND_ij|`, sign kept.
    SignedAtMaxAbs,
    /// `max_j SND_ij`.
    Max,
}

/// Publication probability for a standardized deviate:
/// `logit p = (-2.5 + 0.1 z + 1.5 z^2) 1(z < 2) + 4 1(z >= 2)`.
pub fn retention_probability(snd: f64) -> f64 {
    let logit = if snd >= 2.0 {
        4.0
    } else {
        -2.5 + 0.1 * snd + 1.5 * snd * snd
    };
    1.0 / (1.0 + (-logit).exp())
}

/// Standardized deviate of outcome `j` of a complete simulated study.
pub fn selection_snd(study: &Study, j: usize, params: &BrmaParams, basis: SndBasis) -> f64 {
    let o = study.outcome(j).expect("simulated studies are complete");
    match basis {
        SndBasis::Total => o.y / (o.se * o.se + params.tau2[j]).sqrt(),
        SndBasis::Within => o.y / o.se,
    }
}

fn study_score(study: &Study, params: &BrmaParams, basis: SndBasis, score: StudyScore) -> f64 {
    let z = [
        selection_snd(study, 0, params, basis),
        selection_snd(study, 1, params, basis),
    ];
    match score {
        StudyScore::MaxAbs => z[0].abs().max(z[1].abs()),
        StudyScore::SignedAtMaxAbs => {
            if z[1].abs() > z[0].abs() {
                z[1]
            } else {
                z[0]
            }
        }
        StudyScore::Max => z[0].max(z[1]),
    }
}

/// Filters a pool of complete studies. Draws one uniform per decision, in
/// pool order, so results are reproducible from the stream state.
pub fn apply_selection<R: Rng + ?Sized>(
    studies: Vec<Study>,
    mode: Selection,
    params: &BrmaParams,
    basis: SndBasis,
    score: StudyScore,
    rng: &mut R,
) -> Vec<Study> {
    match mode {
        Selection::None => studies,
        Selection::CompleteMissing => studies
            .into_iter()
            .filter(|s| rng.random::<f64>() < retention_probability(study_score(s, params, basis, score)))
            .collect(),
        Selection::PartialMissing => studies
            .into_iter()
            .filter_map(|s| {
                let keep: Vec<bool> = (0..2)
                    .map(|j| rng.random::<f64>() < retention_probability(selection_snd(&s, j, params, basis)))
                    .collect();
                match (keep[0], keep[1]) {
                    (true, true) => Some(s),
                    (false, false) => None,
                    (k0, _) => {
                        let j = if k0 { 0 } else { 1 };
                        let o = s.outcome(j).unwrap();
                        Some(Study::partial(s.id().to_string(), j, o.y, o.se).expect("valid outcome"))
                    }
                }
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::generate_study;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn logistic(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    #[test]
    fn reference_probabilities() {
        assert_relative_eq!(retention_probability(2.0), logistic(4.0));
        assert_relative_eq!(retention_probability(7.5), 0.982_013_790_037_908_4, epsilon = 1e-15);
        assert_relative_eq!(retention_probability(0.0), 0.075_858_180_021_243_55, epsilon = 1e-15);
        assert_relative_eq!(retention_probability(-1.0), logistic(-2.5 - 0.1 + 1.5));
    }

    #[test]
    fn monotone_in_square_above_vertex() {
        // Vertex of the quadratic is at z = -1/30.
        let mut last = retention_probability(-1.0 / 30.0);
        for i in 1..200 {
            let z = -1.0 / 30.0 + i as f64 * 0.01;
            if z >= 2.0 {
                break;
            }
            let p = retention_probability(z);
            assert!(p >= last);
            last = p;
        }
    }

    #[test]
    fn none_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = BrmaParams::new([0.0, 0.0], [0.5, 0.5], 0.5).unwrap();
        let pool: Vec<Study> = (0..20).map(|i| generate_study(i.to_string(), &p, 0.5, &mut rng)).collect();
        let out = apply_selection(
            pool.clone(),
            Selection::None,
            &p,
            SndBasis::Total,
            StudyScore::MaxAbs,
            &mut rng,
        );
        assert_eq!(out, pool);
    }

    #[test]
    fn partial_selection_keeps_reported_outcomes() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = BrmaParams::new([0.0, 0.0], [0.5, 0.5], 0.5).unwrap();
        let pool: Vec<Study> = (0..2000).map(|i| generate_study(i.to_string(), &p, 0.5, &mut rng)).collect();
        let out = apply_selection(
            pool.clone(),
            Selection::PartialMissing,
            &p,
            SndBasis::Total,
            StudyScore::MaxAbs,
            &mut rng,
        );
        assert!(out.len() < pool.len());
        assert!(out.iter().any(|s| !s.is_complete()));
        for s in &out {
            let orig = pool.iter().find(|o| o.id() == s.id()).unwrap();
            for j in s.observed() {
                assert_eq!(s.outcome(j), orig.outcome(j));
            }
            if !s.is_complete() {
                assert_eq!(s.rho_w(), None);
            }
        }
    }
}
