use nalgebra::Matrix2;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::model::{BrmaParams, Study};

/// Within-study standard error `|Z|`, `Z ~ N(0.3, 0.5)`, so `E[s^2] = 0.34`.
pub fn draw_se<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let z: f64 = Normal::new(0.3, 0.5).expect("valid normal").sample(rng);
    // |Z| = 0 has probability zero; guard anyway so the study is valid.
    z.abs().max(f64::MIN_POSITIVE)
}

fn bivariate_normal<R: Rng + ?Sized>(rng: &mut R, mean: [f64; 2], cov: &Matrix2<f64>) -> [f64; 2] {
    let (a, c) = (cov[(0, 0)], cov[(1, 1)]);
    let l11 = a.sqrt();
    let l21 = if l11 > 0.0 { cov[(0, 1)] / l11 } else { 0.0 };
    let l22 = (c - l21 * l21).max(0.0).sqrt();
    let z1: f64 = StandardNormal.sample(rng);
    let z2: f64 = StandardNormal.sample(rng);
    [mean[0] + l11 * z1, mean[1] + l21 * z1 + l22 * z2]
}

/// One complete study: `theta ~ N(beta, Omega)`, `Y ~ N(theta, Delta)`, with
/// standard errors drawn by [`draw_se`].
pub fn generate_study<R: Rng + ?Sized>(id: String, params: &BrmaParams, rho_w: f64, rng: &mut R) -> Study {
    let s = [draw_se(rng), draw_se(rng)];
    generate_study_with_se(id, params, rho_w, s, rng)
}

/// As [`generate_study`] with given standard errors.
pub fn generate_study_with_se<R: Rng + ?Sized>(
    id: String,
    params: &BrmaParams,
    rho_w: f64,
    s: [f64; 2],
    rng: &mut R,
) -> Study {
    let theta = bivariate_normal(rng, params.beta, &params.omega());
    let c = rho_w * s[0] * s[1];
    let delta = Matrix2::new(s[0] * s[0], c, c, s[1] * s[1]);
    let y = bivariate_normal(rng, theta, &delta);
    Study::complete(id, y, s, rho_w).expect("simulated study is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn se_second_moment() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 1_000_000;
        let mean: f64 = (0..n).map(|_| draw_se(&mut rng).powi(2)).sum::<f64>() / n as f64;
        // E|N(0.3, 0.5)|^2 = 0.3^2 + 0.5^2.
        assert!((mean - 0.34).abs() < 0.002, "{mean}");
    }

    #[test]
    fn degenerate_random_effects_center_on_beta() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = BrmaParams::new([0.4, -1.0], [0.0, 0.0], 0.0).unwrap();
        let n = 100_000;
        let (mut s, mut var) = ([0.0; 2], [0.0; 2]);
        for i in 0..n {
            let st = generate_study(i.to_string(), &p, 0.0, &mut rng);
            for j in 0..2 {
                let o = st.outcome(j).unwrap();
                s[j] += o.y;
                var[j] += o.se * o.se;
            }
        }
        for j in 0..2 {
            let mean = s[j] / n as f64;
            let mc = (var[j] / n as f64 / n as f64).sqrt();
            assert!((mean - p.beta[j]).abs() < 3.0 * mc, "outcome {j}: {mean}");
        }
    }
}
