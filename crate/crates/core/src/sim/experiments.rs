use std::io::{self, Write};
use std::str::FromStr;

use super::run::{run_cell, RunOptions, SimCellResult};
use super::{Selection, SimScenario, N_GRID, TAU2_GRID};
use crate::error::{Error, Result};
use crate::suite::TestVariant;

/// Compute budget for the replication experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Budget {
    /// Reduced replicate counts on a subgrid; minutes on a laptop.
    #[default]
    Desk,
    /// The full grid at the reference replicate counts.
    Full,
}

impl FromStr for Budget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "desk" => Ok(Budget::Desk),
            "full" => Ok(Budget::Full),
            other => Err(Error::InvalidParams(format!("unknown budget '{other}' (expected desk or full)"))),
        }
    }
}

/// Reference Type I error rates (percent, 10% level) by `(tau2, n)`, in the
/// column order of [`TestVariant::all`].
pub const TABLE1_REFERENCE: [(f64, usize, [f64; 13]); 12] = [
    (0.5, 50, [10.3, 10.2, 10.7, 10.5, 43.0, 43.2, 13.2, 59.2, 11.6, 10.8, 11.1, 12.7, 13.3]),
    (0.5, 75, [10.4, 10.1, 10.2, 10.2, 53.1, 54.0, 17.4, 71.2, 11.5, 11.2, 10.9, 12.6, 12.6]),
    (0.5, 100, [10.2, 10.8, 9.8, 10.0, 59.5, 58.1, 21.7, 77.4, 10.7, 11.3, 10.2, 12.0, 12.2]),
    (1.1, 50, [10.3, 10.0, 10.6, 10.3, 44.6, 44.6, 14.0, 61.1, 10.5, 9.6, 9.8, 11.8, 12.7]),
    (1.1, 75, [10.6, 10.2, 10.0, 10.2, 54.2, 55.4, 18.7, 72.9, 10.0, 10.0, 9.7, 11.5, 12.1]),
    (1.1, 100, [10.2, 10.7, 9.9, 10.1, 60.8, 59.4, 23.0, 78.9, 9.9, 10.3, 9.7, 11.4, 11.4]),
    (1.5, 50, [10.2, 10.1, 10.5, 10.3, 44.9, 45.1, 14.2, 61.6, 9.8, 9.2, 9.3, 11.3, 12.6]),
    (1.5, 75, [10.5, 10.3, 9.9, 10.2, 54.6, 55.7, 19.1, 73.4, 9.4, 9.6, 9.3, 10.9, 11.9]),
    (1.5, 100, [10.3, 10.7, 9.9, 10.0, 61.1, 59.6, 23.3, 79.2, 9.5, 9.6, 9.5, 11.0, 11.4]),
    (1.9, 50, [10.2, 10.1, 10.6, 10.2, 45.2, 45.3, 14.3, 61.9, 9.4, 8.8, 8.9, 10.9, 12.4]),
    (1.9, 75, [10.5, 10.3, 9.9, 10.3, 54.8, 56.0, 19.2, 73.6, 9.1, 8.9, 8.9, 10.4, 11.8]),
    (1.9, 100, [10.3, 10.7, 10.0, 10.1, 61.3, 59.8, 23.5, 79.4, 9.1, 9.2, 9.2, 10.7, 11.3]),
];

/// Reference rate (as a fraction) for a null cell, if the grid has one.
pub fn reference_rate(tau2: f64, n: usize, variant: TestVariant) -> Option<f64> {
    let k = TestVariant::all().iter().position(|v| *v == variant)?;
    TABLE1_REFERENCE
        .iter()
        .find(|(t, m, _)| *t == tau2 && *m == n)
        .map(|(_, _, row)| row[k] / 100.0)
}

/// Decorrelated seed for cell `index` of an experiment.
fn cell_seed(seed: u64, index: u64) -> u64 {
    // SplitMix64 finalizer.
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Null cells over the Type I error grid. Desk: `tau2 in {0.5, 1.9}`,
/// `n in {50, 100}`, 500 replicates. Full: 4 x 3 grid, 5000 replicates.
/// Correlations, effects and selection settings come from `base`.
pub fn replicate_table1(budget: Budget, base: &SimScenario, opts: &RunOptions) -> Result<Vec<SimCellResult>> {
    let (tau2s, ns, reps): (Vec<f64>, Vec<usize>, usize) = match budget {
        Budget::Desk => (vec![0.5, 1.9], vec![50, 100], 500),
        Budget::Full => (TAU2_GRID.to_vec(), N_GRID.to_vec(), 5000),
    };
    let mut cells = Vec::new();
    for &tau2 in &tau2s {
        for &n in &ns {
            let scenario = SimScenario {
                tau2,
                n_published: n,
                replicates: reps,
                selection: Selection::None,
                seed: cell_seed(base.seed, cells.len() as u64),
                ..base.clone()
            };
            cells.push(run_cell(&scenario, opts)?);
        }
    }
    Ok(cells)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_default()
}

/// One row per (cell, variant).
pub fn write_cells_csv<W: Write>(mut w: W, cells: &[SimCellResult]) -> io::Result<()> {
    writeln!(w, "# mvpb-sim-cells v1")?;
    writeln!(
        w,
        "tau2,n,rho_w,rho_b,beta1,beta2,selection,seed,test,alpha,rejection_rate,mc_stderr,replicates,valid,failures,reference_rate"
    )?;
    for c in cells {
        let s = &c.scenario;
        for v in &c.summaries {
            let reference = if s.selection == Selection::None {
                reference_rate(s.tau2, s.n_published, v.variant)
            } else {
                None
            };
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{:.4},{:.4},{},{},{},{}",
                s.tau2,
                s.n_published,
                s.rho_w,
                s.rho_b,
                s.beta[0],
                s.beta[1],
                s.selection,
                s.seed,
                v.variant,
                c.alpha,
                v.rejection_rate,
                v.mc_stderr,
                s.replicates,
                v.valid,
                v.failures,
                fmt_opt(reference),
            )?;
        }
    }
    Ok(())
}

/// Size-adjusted power: the critical p-value `c` is the empirical
/// `alpha`-quantile of null p-values, and ties at `c` are rejected with the
/// probability `g` that makes the null rejection rate exactly `alpha`
/// (relevant for tests with discrete p-values). Returns `(c, power)`, or
/// `None` without valid p-values in either cell.
pub fn size_adjusted(null_p: &[Option<f64>], alt_p: &[Option<f64>], alpha: f64) -> Option<(f64, f64)> {
    let mut null: Vec<f64> = null_p.iter().flatten().copied().collect();
    let alt: Vec<f64> = alt_p.iter().flatten().copied().collect();
    if null.is_empty() || alt.is_empty() {
        return None;
    }
    null.sort_by(f64::total_cmp);
    let n = null.len() as f64;
    let k = ((alpha * n).ceil() as usize).clamp(1, null.len());
    let critical = null[k - 1];
    let below = null.iter().filter(|&&p| p < critical).count() as f64 / n;
    let at = null.iter().filter(|&&p| p == critical).count() as f64 / n;
    let g = ((alpha - below) / at).clamp(0.0, 1.0);
    let m = alt.len() as f64;
    let alt_below = alt.iter().filter(|&&p| p < critical).count() as f64 / m;
    let alt_at = alt.iter().filter(|&&p| p == critical).count() as f64 / m;
    Some((critical, alt_below + g * alt_at))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerPoint {
    pub tau2: f64,
    pub n: usize,
    pub selection: Selection,
    pub variant: TestVariant,
    pub replicates: usize,
    /// Rejection rate at nominal `alpha` without selection.
    pub null_rate: f64,
    /// Rejection rate at nominal `alpha` under selection.
    pub power: f64,
    pub mc_stderr: f64,
    /// Critical p-value giving empirical size `alpha` without selection.
    pub critical_p: f64,
    pub size_adjusted_power: f64,
}

/// For each `tau2`, runs a null cell and a selected cell with the same
/// settings and reports raw and size-adjusted power per variant.
pub fn power_sweep(
    selection: Selection,
    tau2s: &[f64],
    base: &SimScenario,
    opts: &RunOptions,
) -> Result<Vec<(SimCellResult, SimCellResult, Vec<PowerPoint>)>> {
    let opts = RunOptions {
        keep_raw: true,
        ..opts.clone()
    };
    let mut out = Vec::new();
    for (i, &tau2) in tau2s.iter().enumerate() {
        let null_s = SimScenario {
            tau2,
            selection: Selection::None,
            seed: cell_seed(base.seed, 2 * i as u64),
            ..base.clone()
        };
        let alt_s = SimScenario {
            selection,
            seed: cell_seed(base.seed, 2 * i as u64 + 1),
            ..null_s.clone()
        };
        let null = run_cell(&null_s, &opts)?;
        let alt = run_cell(&alt_s, &opts)?;
        let (nr, ar) = (null.raw.as_ref().unwrap(), alt.raw.as_ref().unwrap());
        let points = opts
            .variants
            .iter()
            .enumerate()
            .map(|(k, &variant)| {
                let np: Vec<Option<f64>> = nr.iter().map(|r| r.p_values[k]).collect();
                let ap: Vec<Option<f64>> = ar.iter().map(|r| r.p_values[k]).collect();
                let (critical_p, size_adjusted_power) = size_adjusted(&np, &ap, opts.alpha).unwrap_or((f64::NAN, f64::NAN));
                let a = &alt.summaries[k];
                PowerPoint {
                    tau2,
                    n: base.n_published,
                    selection,
                    variant,
                    replicates: base.replicates,
                    null_rate: null.summaries[k].rejection_rate,
                    power: a.rejection_rate,
                    mc_stderr: a.mc_stderr,
                    critical_p,
                    size_adjusted_power,
                }
            })
            .collect();
        out.push((null, alt, points));
    }
    Ok(out)
}

pub fn write_power_csv<W: Write>(mut w: W, points: &[PowerPoint], alpha: f64) -> io::Result<()> {
    writeln!(w, "# mvpb-power-curve v1")?;
    writeln!(
        w,
        "tau2,n,selection,test,alpha,replicates,null_rate,power,mc_stderr,critical_p,size_adjusted_power"
    )?;
    for p in points {
        writeln!(
            w,
            "{},{},{},{},{},{},{:.4},{:.4},{:.4},{:.6},{:.4}",
            p.tau2,
            p.n,
            p.selection,
            p.variant,
            alpha,
            p.replicates,
            p.null_rate,
            p.power,
            p.mc_stderr,
            p.critical_p,
            p.size_adjusted_power
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub n: usize,
    /// Largest distance between the empirical and the chi-square CDF.
    pub d: f64,
    /// Asymptotic Kolmogorov p-value.
    pub p_value: f64,
}

/// One-sample Kolmogorov-Smirnov test of `stats` against chi-square(`df`).
pub fn ks_chi_squared(stats: &[f64], df: f64) -> Result<KsResult> {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    if stats.is_empty() {
        return Err(Error::InsufficientData("no statistics to test".into()));
    }
    let dist = ChiSquared::new(df).map_err(|e| Error::InvalidParams(e.to_string()))?;
    let mut x = stats.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    let d = x
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = dist.cdf(v);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max);
    let sn = n.sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    Ok(KsResult {
        n: x.len(),
        d,
        p_value: kolmogorov_sf(lambda),
    })
}

/// `P(K > lambda)` for the Kolmogorov distribution.
fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bias::{Method, Scope};
    use approx::assert_relative_eq;

    #[test]
    fn reference_lookup() {
        let rst = TestVariant::new(Method::Rst, Scope::Joint);
        assert_eq!(reference_rate(1.1, 100, rst), Some(0.114));
        let egger_c = TestVariant::new(Method::Egger, Scope::Combined);
        assert_eq!(reference_rate(0.5, 50, egger_c), Some(0.107));
        assert_eq!(reference_rate(0.7, 50, egger_c), None);
    }

    #[test]
    fn kolmogorov_tail_values() {
        // Standard critical values: P(K > 1.358) = 0.05, P(K > 1.628) = 0.01.
        assert_relative_eq!(kolmogorov_sf(1.358), 0.05, epsilon = 5e-4);
        assert_relative_eq!(kolmogorov_sf(1.628), 0.01, epsilon = 2e-4);
    }

    #[test]
    fn ks_accepts_exact_quantiles() {
        // Midpoint quantiles of chi-square(2): -2 ln(1 - u).
        let n = 400;
        let x: Vec<f64> = (0..n).map(|i| -2.0 * (1.0 - (i as f64 + 0.5) / n as f64).ln()).collect();
        let r = ks_chi_squared(&x, 2.0).unwrap();
        assert_relative_eq!(r.d, 0.5 / n as f64, epsilon = 1e-12);
        assert!(r.p_value > 0.99);
        let shifted: Vec<f64> = x.iter().map(|v| v * 1.5).collect();
        assert!(ks_chi_squared(&shifted, 2.0).unwrap().p_value < 1e-6);
    }

    #[test]
    fn size_adjustment_uses_null_quantile() {
        let null: Vec<Option<f64>> = (1..=100).map(|i| Some(i as f64 / 100.0)).collect();
        let alt: Vec<Option<f64>> = (1..=100).map(|i| Some(i as f64 / 200.0)).collect();
        let (crit, power) = size_adjusted(&null, &alt, 0.1).unwrap();
        assert_relative_eq!(crit, 0.10);
        assert_relative_eq!(power, 0.20);
        // The null cell itself is rejected at exactly alpha.
        assert_relative_eq!(size_adjusted(&null, &null, 0.1).unwrap().1, 0.1);
    }

    #[test]
    fn size_adjustment_randomizes_discrete_ties() {
        // Null: 5% at 0.0625, 20% at 0.125, the rest at 0.5.
        let mut null = vec![Some(0.0625); 5];
        null.extend(vec![Some(0.125); 20]);
        null.extend(vec![Some(0.5); 75]);
        let (crit, size) = size_adjusted(&null, &null, 0.1).unwrap();
        assert_eq!(crit, 0.125);
        assert_relative_eq!(size, 0.1, epsilon = 1e-12);
        // Alternative with 10% below and 40% at the critical value: 0.1 + 0.25 * 0.4.
        let mut alt = vec![Some(0.0625); 10];
        alt.extend(vec![Some(0.125); 40]);
        alt.extend(vec![Some(0.5); 50]);
        assert_relative_eq!(size_adjusted(&null, &alt, 0.1).unwrap().1, 0.2, epsilon = 1e-12);
    }

    #[test]
    fn seeds_differ_between_cells() {
        let a: Vec<u64> = (0..8).map(|i| cell_seed(42, i)).collect();
        let mut b = a.clone();
        b.dedup();
        assert_eq!(a.len(), b.len());
        assert_eq!(cell_seed(42, 3), cell_seed(42, 3));
    }
}
