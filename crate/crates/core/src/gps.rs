//! Generalized propensity scores for a continuous exposure.
//!
//! Two linear exposure models are fitted: a conditional one on the
//! confounders and an intercept-only marginal one. The stabilized weight is
//! the marginal normal density of the observed exposure over its conditional
//! density. The binned alternative cuts the exposure into ordered categories
//! and models bin membership with a proportional-odds model.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::pom::{fit_pom, PomError, PomFit};
use crate::stats::{nearest_rank, normal_pdf};

/// Conditional bin probabilities below this value raise a positivity flag.
pub const POSITIVITY_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GpsError {
    #[error("exposure design is rank deficient")]
    Collinear,
    #[error("degenerate exposure model: {0}")]
    Degenerate(String),
    #[error("binning error: {0}")]
    Binning(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("bin model: {0}")]
    Pom(#[from] PomError),
}

/// Least-squares fit `D = intercept + slopes'K + e`, `Var(e)` with divisor `n`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LinearFit {
    pub intercept: f64,
    pub slopes: Vec<f64>,
    pub residual_variance: f64,
}

impl LinearFit {
    pub fn predict(&self, k: &[f64]) -> f64 {
        self.intercept + self.slopes.iter().zip(k).map(|(a, b)| a * b).sum::<f64>()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GpsFit {
    pub conditional: LinearFit,
    pub marginal: LinearFit,
}

fn weighted_least_squares(d: &[f64], k: &DMatrix<f64>, w: &[f64]) -> Result<LinearFit, GpsError> {
    let n = d.len();
    let q = k.ncols();
    let design = DMatrix::from_fn(n, q + 1, |i, j| {
        let s = w[i].sqrt();
        if j == 0 {
            s
        } else {
            s * k[(i, j - 1)]
        }
    });
    let rhs = DVector::from_iterator(n, d.iter().zip(w).map(|(a, b)| a * b.sqrt()));
    let qr = design.clone().qr();
    let r = qr.r();
    let scale = r.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if r.diagonal().iter().any(|v| v.abs() <= 1e-10 * scale) {
        return Err(GpsError::Collinear);
    }
    let qty = qr.q().transpose() * &rhs;
    let coef = r.solve_upper_triangular(&qty).ok_or(GpsError::Collinear)?;
    let resid = &rhs - &design * &coef;
    let total: f64 = w.iter().sum();
    let residual_variance = resid.norm_squared() / total;
    Ok(LinearFit {
        intercept: coef[0],
        slopes: coef.iter().skip(1).copied().collect(),
        residual_variance,
    })
}

/// Fits the conditional (on `k`) and marginal exposure models by (weighted)
/// least squares.
pub fn fit_exposure_models(d: &[f64], k: &DMatrix<f64>, weights: Option<&[f64]>) -> Result<GpsFit, GpsError> {
    if d.len() != k.nrows() {
        return Err(GpsError::Domain(format!(
            "{} exposures but {} confounder rows",
            d.len(),
            k.nrows()
        )));
    }
    let ones;
    let w = match weights {
        Some(w) => {
            if w.len() != d.len() || w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(GpsError::Domain("weights must be finite, nonnegative and one per row".into()));
            }
            w
        }
        None => {
            ones = vec![1.0; d.len()];
            &ones
        }
    };
    if d.iter().any(|v| !v.is_finite()) {
        return Err(GpsError::Domain("non-finite exposure".into()));
    }
    let first = d.first().copied();
    if first.is_none() || d.iter().all(|&v| Some(v) == first) {
        return Err(GpsError::Degenerate("fewer than two distinct exposure values".into()));
    }
    let marginal = weighted_least_squares(d, &DMatrix::zeros(d.len(), 0), w)?;
    let conditional = weighted_least_squares(d, k, w)?;
    if !(conditional.residual_variance > 1e-12 * marginal.residual_variance) {
        return Err(GpsError::Degenerate("zero residual variance in the conditional model".into()));
    }
    Ok(GpsFit { conditional, marginal })
}

impl GpsFit {
    /// Stabilized weight `N(d; marginal) / N(d; conditional at k)`.
    pub fn weight(&self, d: f64, k: &[f64]) -> f64 {
        assert_eq!(k.len(), self.conditional.slopes.len(), "confounder dimension");
        let num = normal_pdf(d, self.marginal.intercept, self.marginal.residual_variance);
        let den = normal_pdf(d, self.conditional.predict(k), self.conditional.residual_variance);
        if num == 0.0 && den == 0.0 {
            // Both densities underflow: compare in log space.
            let lr = |m: f64, v: f64| -((d - m) * (d - m)) / (2.0 * v) - 0.5 * v.ln();
            return (lr(self.marginal.intercept, self.marginal.residual_variance)
                - lr(self.conditional.predict(k), self.conditional.residual_variance))
            .exp();
        }
        num / den
    }
}

/// How to cut the exposure into ordered bins `(e_{b-1}, e_b]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum BinSpec {
    /// Equal-count bins at nearest-rank quantiles.
    Quantiles(usize),
    /// Explicit interior upper edges, ascending.
    Edges(Vec<f64>),
    /// `{<= 0}`, `(0, 1]`, then tertiles of the exposures above 1.
    ZeroOneTertiles,
}

impl std::str::FromStr for BinSpec {
    type Err = GpsError;

    /// `quantiles:5`, `edges:0,1,2.5`, or `zero-one-tertiles`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || GpsError::Binning(format!("cannot parse bin spec `{s}`"));
        if s == "zero-one-tertiles" {
            return Ok(BinSpec::ZeroOneTertiles);
        }
        if let Some(n) = s.strip_prefix("quantiles:") {
            return n.trim().parse().map(BinSpec::Quantiles).map_err(|_| bad());
        }
        if let Some(list) = s.strip_prefix("edges:") {
            return list
                .split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|_| bad()))
                .collect::<Result<Vec<_>, _>>()
                .map(BinSpec::Edges);
        }
        Err(bad())
    }
}

impl BinSpec {
    /// Interior upper edges for the given exposure sample.
    pub fn edges(&self, d: &[f64]) -> Result<Vec<f64>, GpsError> {
        let mut sorted = d.to_vec();
        sorted.sort_by(f64::total_cmp);
        let edges = match self {
            BinSpec::Quantiles(0) => return Err(GpsError::Binning("need at least one bin".into())),
            BinSpec::Quantiles(n) => {
                if sorted.is_empty() {
                    return Err(GpsError::Binning("no exposures to bin".into()));
                }
                (1..*n).map(|b| nearest_rank(&sorted, b as f64 / *n as f64)).collect()
            }
            BinSpec::Edges(e) => e.clone(),
            BinSpec::ZeroOneTertiles => {
                let rest: Vec<f64> = sorted.iter().copied().filter(|&v| v > 1.0).collect();
                if rest.is_empty() {
                    return Err(GpsError::Binning("no exposures above 1 to split in tertiles".into()));
                }
                vec![
                    0.0,
                    1.0,
                    nearest_rank(&rest, 1.0 / 3.0),
                    nearest_rank(&rest, 2.0 / 3.0),
                ]
            }
        };
        if edges.windows(2).any(|w| !(w[0] < w[1])) || edges.iter().any(|e| !e.is_finite()) {
            return Err(GpsError::Binning(format!("edges not strictly increasing: {edges:?}")));
        }
        Ok(edges)
    }
}

/// One-based bin of `d` under interior upper edges.
pub fn bin_index(upper_edges: &[f64], d: f64) -> usize {
    1 + upper_edges.partition_point(|&e| e < d)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BinnedGpsFit {
    /// Interior upper edges; bin `b` is `(e_{b-1}, e_b]` with open outer ends.
    pub upper_edges: Vec<f64>,
    /// Model of bin membership on the confounders; absent with a single bin.
    pub category_model: Option<PomFit>,
    pub marginal_frequencies: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BinnedWeight {
    pub weight: f64,
    /// Conditional probability of the observed bin fell below the positivity threshold.
    pub positivity_warning: bool,
}

/// Bins the exposure and fits a proportional-odds model of the bin on `k`.
pub fn fit_binned_gps(d: &[f64], k: &DMatrix<f64>, spec: &BinSpec) -> Result<BinnedGpsFit, GpsError> {
    if d.len() != k.nrows() {
        return Err(GpsError::Domain(format!(
            "{} exposures but {} confounder rows",
            d.len(),
            k.nrows()
        )));
    }
    let upper_edges = spec.edges(d)?;
    let n_bins = upper_edges.len() + 1;
    let bins: Vec<usize> = d.iter().map(|&v| bin_index(&upper_edges, v)).collect();
    let mut counts = vec![0usize; n_bins];
    for &b in &bins {
        counts[b - 1] += 1;
    }
    if let Some(b) = counts.iter().position(|&c| c == 0) {
        return Err(GpsError::Binning(format!("bin {} is empty", b + 1)));
    }
    let marginal_frequencies = counts.iter().map(|&c| c as f64 / d.len() as f64).collect();
    let category_model = if n_bins == 1 {
        None
    } else {
        Some(fit_pom(k, &bins, &vec![1.0; d.len()], n_bins)?)
    };
    Ok(BinnedGpsFit {
        upper_edges,
        category_model,
        marginal_frequencies,
    })
}

impl BinnedGpsFit {
    pub fn n_bins(&self) -> usize {
        self.marginal_frequencies.len()
    }

    /// `f_b / P(b | k)` for the bin `b` holding `d`.
    pub fn weight(&self, d: f64, k: &[f64]) -> Result<BinnedWeight, GpsError> {
        let b = bin_index(&self.upper_edges, d);
        let Some(model) = &self.category_model else {
            return Ok(BinnedWeight {
                weight: 1.0,
                positivity_warning: false,
            });
        };
        let p = model.category_prob(k, b)?;
        Ok(BinnedWeight {
            weight: self.marginal_frequencies[b - 1] / p,
            positivity_warning: p < POSITIVITY_THRESHOLD,
        })
    }
}

/// Clamps weights to their nearest-rank `lower` and `upper` percentiles
/// (fractions in `[0, 1]`).
pub fn truncate_weights(weights: &mut [f64], lower: f64, upper: f64) -> Result<(), GpsError> {
    if !(0.0..=1.0).contains(&lower) || !(0.0..=1.0).contains(&upper) || lower >= upper {
        return Err(GpsError::Domain(format!("bad truncation percentiles ({lower}, {upper})")));
    }
    if weights.is_empty() {
        return Ok(());
    }
    let mut sorted = weights.to_vec();
    sorted.sort_by(f64::total_cmp);
    let lo = nearest_rank(&sorted, lower);
    let hi = nearest_rank(&sorted, upper);
    for w in weights.iter_mut() {
        *w = w.clamp(lo, hi);
    }
    Ok(())
}
