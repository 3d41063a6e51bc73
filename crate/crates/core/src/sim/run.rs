use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{apply_selection, generate_study, Selection, SimScenario};
use crate::bias::{Estimator, TrimFillOptions};
use crate::error::{Error, Result};
use crate::model::{MetaDataset, Study};
use crate::suite::{run_suite, SuiteOptions, TestVariant};

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub alpha: f64,
    pub variants: Vec<TestVariant>,
    pub suite: SuiteOptions,
    /// Keep per-replicate p-values and statistics in the result.
    pub keep_raw: bool,
    /// Pool regenerations allowed when selection leaves fewer than `n` studies.
    pub max_retries: usize,
}

impl Default for RunOptions {
    /// Nominal level 0.10, all variants, and trim-and-fill with the R0
    /// estimator, whose exact null `P(R0 >= k) = 2^-(k+1)` keeps the
    /// significance test calibrated; the L0 normal approximation is not
    /// calibrated after iteration.
    fn default() -> Self {
        Self {
            alpha: 0.10,
            variants: TestVariant::all(),
            suite: SuiteOptions {
                trimfill: TrimFillOptions {
                    estimator: Estimator::R0,
                    ..Default::default()
                },
                ..Default::default()
            },
            keep_raw: false,
            max_retries: 100,
        }
    }
}

/// Per-replicate outputs, one entry per variant (`None` when the test failed).
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateRecord {
    pub p_values: Vec<Option<f64>>,
    pub statistics: Vec<Option<f64>>,
    /// Pools drawn before `n` studies survived selection.
    pub attempts: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantSummary {
    pub variant: TestVariant,
    pub rejections: usize,
    /// Replicates where the test produced a p-value.
    pub valid: usize,
    pub failures: usize,
    pub rejection_rate: f64,
    /// `sqrt(r (1 - r) / valid)`.
    pub mc_stderr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimCellResult {
    pub scenario: SimScenario,
    pub alpha: f64,
    pub summaries: Vec<VariantSummary>,
    pub raw: Option<Vec<ReplicateRecord>>,
}

impl SimCellResult {
    pub fn summary(&self, variant: TestVariant) -> Option<&VariantSummary> {
        self.summaries.iter().find(|s| s.variant == variant)
    }
}

/// Rejects when `p <= alpha`, so `alpha = 1` rejects every valid p-value.
fn rejects(p: f64, alpha: f64) -> bool {
    p <= alpha
}

fn summarize(variant: TestVariant, k: usize, records: &[ReplicateRecord], alpha: f64) -> VariantSummary {
    let valid: Vec<f64> = records.iter().filter_map(|r| r.p_values[k]).collect();
    let rejections = valid.iter().filter(|&&p| rejects(p, alpha)).count();
    let n = valid.len();
    let rate = if n > 0 { rejections as f64 / n as f64 } else { 0.0 };
    VariantSummary {
        variant,
        rejections,
        valid: n,
        failures: records.len() - n,
        rejection_rate: rate,
        mc_stderr: if n > 0 { (rate * (1.0 - rate) / n as f64).sqrt() } else { 0.0 },
    }
}

/// Draws the published studies of replicate `r`.
fn published(scenario: &SimScenario, r: usize, max_retries: usize) -> Result<(MetaDataset, usize)> {
    let params = scenario.params()?;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    rng.set_stream(r as u64);
    let n = scenario.n_published;
    for attempt in 1..=max_retries.max(1) {
        if scenario.selection == Selection::None {
            let studies = (0..n)
                .map(|i| generate_study(format!("r{r}-{i}"), &params, scenario.rho_w, &mut rng))
                .collect();
            return Ok((MetaDataset::from_studies(studies)?, attempt));
        }
        let pool: Vec<Study> = (0..scenario.pool_size())
            .map(|i| generate_study(format!("r{r}-{i}"), &params, scenario.rho_w, &mut rng))
            .collect();
        let survivors = apply_selection(
            pool,
            scenario.selection,
            &params,
            scenario.snd_basis,
            scenario.study_score,
            &mut rng,
        );
        if survivors.len() >= n {
            let mut idx = sample(&mut rng, survivors.len(), n).into_vec();
            idx.sort_unstable();
            let studies = idx.into_iter().map(|i| survivors[i].clone()).collect();
            return Ok((MetaDataset::from_studies(studies)?, attempt));
        }
    }
    Err(Error::Simulation(format!(
        "replicate {r}: fewer than {n} of {} studies survived selection after {max_retries} attempts",
        scenario.pool_size()
    )))
}

fn replicate(scenario: &SimScenario, r: usize, opts: &RunOptions) -> Result<ReplicateRecord> {
    let (data, attempts) = published(scenario, r, opts.max_retries)?;
    let results = run_suite(&data, &opts.variants, &opts.suite);
    let (p_values, statistics) = results
        .into_iter()
        .map(|res| match res {
            Ok(t) if (0.0..=1.0).contains(&t.p_value) => (Some(t.p_value), Some(t.statistic)),
            _ => (None, None),
        })
        .unzip();
    Ok(ReplicateRecord {
        p_values,
        statistics,
        attempts,
    })
}

/// Runs every replicate of a cell (in parallel) and aggregates rejection rates.
pub fn run_cell(scenario: &SimScenario, opts: &RunOptions) -> Result<SimCellResult> {
    scenario.validate()?;
    if !(opts.alpha > 0.0 && opts.alpha <= 1.0) {
        return Err(Error::InvalidParams(format!("alpha must lie in (0, 1], got {}", opts.alpha)));
    }
    let records = (0..scenario.replicates)
        .into_par_iter()
        .map(|r| replicate(scenario, r, opts))
        .collect::<Result<Vec<_>>>()?;
    let summaries = opts
        .variants
        .iter()
        .enumerate()
        .map(|(k, &v)| summarize(v, k, &records, opts.alpha))
        .collect();
    Ok(SimCellResult {
        scenario: scenario.clone(),
        alpha: opts.alpha,
        summaries,
        raw: opts.keep_raw.then_some(records),
    })
}
