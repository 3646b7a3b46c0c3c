//! Subject-level (cluster) bootstrap percentile intervals.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::estimators::{estimate, EstimationError, EstimatorSpec};
use crate::panel::{PanelDataset, PanelRecord, SubjectId};
use crate::rng::{derive_seed, CounterRng};
use crate::stats::nearest_rank;

pub const DEFAULT_REPLICATES: usize = 500;
/// Largest tolerated share of failed bootstrap fits.
pub const MAX_FAILURE_RATE: f64 = 0.10;

const TAG_DRAW: u32 = 1;

#[derive(Debug, Error)]
pub enum BootstrapError {
    #[error("invalid bootstrap request: {0}")]
    Config(String),
    #[error("point estimate failed: {0}")]
    Point(#[source] EstimationError),
    #[error("{failed} of {total} bootstrap fits failed (first: {first_error})")]
    TooManyFailures {
        failed: usize,
        total: usize,
        first_error: String,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BootstrapResult {
    /// `log_or_higher` on the original data.
    pub point: f64,
    /// `log_or_higher` of each successful resample, in replicate order.
    pub replicates: Vec<f64>,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub level: f64,
    pub n_failed: usize,
}

/// Draws subjects with replacement. The `k`-th draw of subject `s` becomes
/// a new subject `s#bk`, so repeated draws stay distinct clusters.
pub fn cluster_resample(data: &PanelDataset, seed: u64) -> PanelDataset {
    let subjects = data.subjects();
    let n = subjects.len();
    let rng = CounterRng::new(seed);
    let mut records: Vec<PanelRecord> = Vec::with_capacity(data.records().len());
    for k in 0..n {
        let u = rng.uniform_at(k as u32, 0, TAG_DRAW);
        let pick = ((u * n as f64) as usize).min(n - 1);
        let source = subjects[pick];
        let id = SubjectId(format!("{}#b{k}", source[0].subject.0));
        records.extend(source.iter().map(|r| PanelRecord {
            subject: id.clone(),
            ..r.clone()
        }));
    }
    PanelDataset::from_parts_unchecked(
        records,
        data.n_categories(),
        data.covariate_names().to_vec(),
        data.tau(),
    )
}

/// Percentile interval of `log_or_higher` from `n_replicates` cluster
/// resamples. Deterministic in `seed` for any thread count.
pub fn bootstrap_ci(
    data: &PanelDataset,
    spec: &EstimatorSpec,
    n_replicates: usize,
    level: f64,
    seed: u64,
) -> Result<BootstrapResult, BootstrapError> {
    if n_replicates < 2 {
        return Err(BootstrapError::Config("at least two replicates are needed".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(BootstrapError::Config(format!("level {level} is not in (0, 1)")));
    }
    if data.n_subjects() == 0 {
        return Err(BootstrapError::Config("dataset has no subjects".into()));
    }
    let point = estimate(data, spec).map_err(BootstrapError::Point)?.log_or_higher;
    let fits: Vec<Result<f64, String>> = (0..n_replicates)
        .into_par_iter()
        .map(|b| {
            let resample = cluster_resample(data, derive_seed(seed, b as u64));
            estimate(&resample, spec)
                .map(|r| r.log_or_higher)
                .map_err(|e| e.to_string())
        })
        .collect();
    let mut replicates: Vec<f64> = fits.iter().filter_map(|r| r.as_ref().ok().copied()).collect();
    let n_failed = n_replicates - replicates.len();
    if n_failed as f64 > MAX_FAILURE_RATE * n_replicates as f64 || replicates.is_empty() {
        return Err(BootstrapError::TooManyFailures {
            failed: n_failed,
            total: n_replicates,
            first_error: fits.iter().find_map(|r| r.clone().err()).unwrap_or_default(),
        });
    }
    let mut sorted = replicates.clone();
    sorted.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    let ci_lower = nearest_rank(&sorted, alpha);
    let ci_upper = nearest_rank(&sorted, 1.0 - alpha);
    replicates.shrink_to_fit();
    Ok(BootstrapResult {
        point,
        replicates,
        ci_lower,
        ci_upper,
        level,
        n_failed,
    })
}
