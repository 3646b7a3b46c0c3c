//! Weighted proportional-odds (cumulative logit) model.
//!
//! `P(Y <= j | x) = expit(alpha_j - beta'x)` for `j < J`, with strictly
//! increasing intercepts. The solver works in packed coordinates
//! `(alpha_1, log(alpha_2 - alpha_1), ..., log(alpha_{J-1} - alpha_{J-2}), beta)`
//! so monotonicity holds by construction.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::numopt::{newton_maximize, NewtonOptions, ObjectiveEvaluation, OptimError, SolverResult};
use crate::stats::{expit, log_expit, logit};

/// Slopes beyond this magnitude during fitting are treated as separation.
pub const SEPARATION_BOUND: f64 = 50.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PomError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("complete separation: slope {index} reached {value}")]
    Separation { index: usize, value: f64 },
    #[error("no positive-weight observation in extreme category {0}")]
    EmptyExtremeCategory(usize),
    #[error("solver did not converge (gradient norm {0:e})")]
    NotConverged(f64),
    #[error(transparent)]
    Optim(#[from] OptimError),
}

/// Packed parameter layout helper.
fn unpack_alphas(params: &[f64], n_intercepts: usize) -> Vec<f64> {
    let mut alphas = Vec::with_capacity(n_intercepts);
    let mut a = params[0];
    alphas.push(a);
    for inc in &params[1..n_intercepts] {
        a += inc.exp();
        alphas.push(a);
    }
    alphas
}

/// Packs increasing intercepts and slopes into solver coordinates.
pub fn pack_params(alphas: &[f64], beta: &[f64]) -> Result<Vec<f64>, PomError> {
    if alphas.is_empty() {
        return Err(PomError::Domain("need at least one intercept".into()));
    }
    let mut p = vec![alphas[0]];
    for w in alphas.windows(2) {
        let inc = w[1] - w[0];
        if !(inc > 0.0) {
            return Err(PomError::Domain("intercepts must be strictly increasing".into()));
        }
        p.push(inc.ln());
    }
    p.extend_from_slice(beta);
    Ok(p)
}

fn check_inputs(x: &DMatrix<f64>, y: &[usize], w: &[f64], n_categories: usize) -> Result<(), PomError> {
    if n_categories < 2 {
        return Err(PomError::Domain(format!("need J >= 2, got {n_categories}")));
    }
    if x.nrows() != y.len() || y.len() != w.len() {
        return Err(PomError::Domain(format!(
            "length mismatch: design {} rows, {} outcomes, {} weights",
            x.nrows(),
            y.len(),
            w.len()
        )));
    }
    if let Some(bad) = y.iter().find(|&&v| v < 1 || v > n_categories) {
        return Err(PomError::Domain(format!("outcome {bad} outside 1..={n_categories}")));
    }
    if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(PomError::Domain("weights must be finite and nonnegative".into()));
    }
    if !(w.iter().sum::<f64>() > 0.0) {
        return Err(PomError::Domain("all weights are zero".into()));
    }
    Ok(())
}

/// Weighted log-likelihood with analytic gradient and Hessian in packed
/// coordinates. Zero-weight rows are skipped.
pub fn pom_objective(
    params: &[f64],
    x: &DMatrix<f64>,
    y: &[usize],
    w: &[f64],
    n_categories: usize,
) -> Result<ObjectiveEvaluation, PomError> {
    check_inputs(x, y, w, n_categories)?;
    let k = n_categories - 1;
    let p = x.ncols();
    if params.len() != k + p {
        return Err(PomError::Domain(format!(
            "expected {} parameters, got {}",
            k + p,
            params.len()
        )));
    }
    let alphas = unpack_alphas(params, k);
    let beta = &params[k..];
    let dim = k + p;

    let mut value = 0.0;
    let mut g = DVector::<f64>::zeros(dim);
    let mut h = DMatrix::<f64>::zeros(dim, dim);
    let mut xi = vec![0.0; p];
    for i in 0..y.len() {
        let wi = w[i];
        if wi == 0.0 {
            continue;
        }
        for c in 0..p {
            xi[c] = x[(i, c)];
        }
        let lin: f64 = xi.iter().zip(beta).map(|(a, b)| a * b).sum();
        let yi = y[i];
        let upper = (yi < n_categories).then(|| alphas[yi - 1] - lin);
        let lower = (yi > 1).then(|| alphas[yi - 2] - lin);
        let log_p = match (upper, lower) {
            (Some(u), None) => log_expit(u),
            (None, Some(l)) => log_expit(-l),
            (Some(u), Some(l)) => log_expit(u) + log_expit(-l) + (-(l - u).exp_m1()).ln(),
            (None, None) => unreachable!("J >= 2"),
        };
        if !log_p.is_finite() {
            return Err(PomError::Domain(format!("log-probability not finite at observation {i}")));
        }
        value += wi * log_p;

        let (r_u, f_u) = match upper {
            Some(u) => ((log_expit(u) + log_expit(-u) - log_p).exp(), expit(u)),
            None => (0.0, 1.0),
        };
        let (r_l, f_l) = match lower {
            Some(l) => ((log_expit(l) + log_expit(-l) - log_p).exp(), expit(l)),
            None => (0.0, 0.0),
        };
        let l_u = r_u;
        let l_l = -r_l;
        let l_uu = r_u * (1.0 - 2.0 * f_u) - r_u * r_u;
        let l_ll = -r_l * (1.0 - 2.0 * f_l) - r_l * r_l;
        let l_ul = r_u * r_l;
        let ia = upper.map(|_| yi - 1);
        let ib = lower.map(|_| yi - 2);

        if let Some(a) = ia {
            g[a] += wi * l_u;
            h[(a, a)] += wi * l_uu;
        }
        if let Some(b) = ib {
            g[b] += wi * l_l;
            h[(b, b)] += wi * l_ll;
        }
        if let (Some(a), Some(b)) = (ia, ib) {
            h[(a, b)] += wi * l_ul;
            h[(b, a)] += wi * l_ul;
        }
        let s_beta = l_uu + 2.0 * l_ul + l_ll;
        for c in 0..p {
            g[k + c] -= wi * xi[c] * (l_u + l_l);
            if let Some(a) = ia {
                let v = -wi * xi[c] * (l_uu + l_ul);
                h[(a, k + c)] += v;
                h[(k + c, a)] += v;
            }
            if let Some(b) = ib {
                let v = -wi * xi[c] * (l_ul + l_ll);
                h[(b, k + c)] += v;
                h[(k + c, b)] += v;
            }
            for d in 0..p {
                h[(k + c, k + d)] += wi * xi[c] * xi[d] * s_beta;
            }
        }
    }

    // Chain rule to packed coordinates: alpha_j = p_0 + sum_{m=1..j} exp(p_m).
    let mut jac = DMatrix::<f64>::identity(dim, dim);
    for j in 0..k {
        jac[(j, 0)] = 1.0;
        for m in 1..k {
            jac[(j, m)] = if m <= j { params[m].exp() } else { 0.0 };
        }
    }
    let gradient = jac.transpose() * &g;
    let mut hessian = jac.transpose() * &h * &jac;
    for m in 1..k {
        let tail: f64 = (m..k).map(|j| g[j]).sum();
        hessian[(m, m)] += tail * params[m].exp();
    }
    if !value.is_finite() {
        return Err(PomError::Domain("log-likelihood not finite".into()));
    }
    Ok(ObjectiveEvaluation {
        value,
        gradient,
        hessian,
    })
}

/// Odds ratios of a `delta` increase in one regressor, in both directions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OddsRatioPair {
    /// Odds of `{Y <= j}`: `exp(-beta_k * delta)`.
    pub or_leq: f64,
    /// Odds of a higher category: `exp(beta_k * delta)`.
    pub or_higher: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PomFit {
    pub alphas: Vec<f64>,
    pub beta: Vec<f64>,
    pub n_categories: usize,
    pub loglik: f64,
    pub solver: SolverResult,
}

impl PomFit {
    /// Wraps known parameters (no fitting); intercepts must increase.
    pub fn from_parameters(alphas: Vec<f64>, beta: Vec<f64>) -> Result<Self, PomError> {
        let packed = pack_params(&alphas, &beta)?;
        let n_categories = alphas.len() + 1;
        Ok(Self {
            alphas,
            beta,
            n_categories,
            loglik: f64::NAN,
            solver: SolverResult {
                argmax: packed,
                value: f64::NAN,
                iterations: 0,
                converged: true,
                final_gradient_norm: 0.0,
                warnings: Vec::new(),
            },
        })
    }

    fn linear(&self, x: &[f64]) -> Result<f64, PomError> {
        if x.len() != self.beta.len() {
            return Err(PomError::Domain(format!(
                "covariate vector has length {}, model has {} slopes",
                x.len(),
                self.beta.len()
            )));
        }
        Ok(x.iter().zip(&self.beta).map(|(a, b)| a * b).sum())
    }

    /// `P(Y <= j | x)`; exactly 1 for `j = J`.
    pub fn cumulative_prob(&self, x: &[f64], j: usize) -> Result<f64, PomError> {
        if j < 1 || j > self.n_categories {
            return Err(PomError::Domain(format!("category {j} outside 1..={}", self.n_categories)));
        }
        let lin = self.linear(x)?;
        if j == self.n_categories {
            return Ok(1.0);
        }
        Ok(expit(self.alphas[j - 1] - lin))
    }

    /// `P(Y = j | x)`.
    pub fn category_prob(&self, x: &[f64], j: usize) -> Result<f64, PomError> {
        let upper = self.cumulative_prob(x, j)?;
        let lower = if j > 1 { self.cumulative_prob(x, j - 1)? } else { 0.0 };
        Ok(upper - lower)
    }

    pub fn marginal_or(&self, regressor: usize, delta: f64) -> Result<OddsRatioPair, PomError> {
        let b = *self
            .beta
            .get(regressor)
            .ok_or_else(|| PomError::Domain(format!("no regressor {regressor}")))?;
        Ok(OddsRatioPair {
            or_leq: (-b * delta).exp(),
            or_higher: (b * delta).exp(),
        })
    }

    /// `P(Y >= threshold)` as one regressor sweeps `grid`, the others held
    /// at `reference`.
    pub fn probability_curve(
        &self,
        regressor: usize,
        reference: &[f64],
        grid: &[f64],
        threshold: usize,
    ) -> Result<Vec<f64>, PomError> {
        if threshold < 2 || threshold > self.n_categories {
            return Err(PomError::Domain(format!(
                "threshold {threshold} outside 2..={}",
                self.n_categories
            )));
        }
        if regressor >= reference.len() {
            return Err(PomError::Domain(format!("no regressor {regressor}")));
        }
        let mut x = reference.to_vec();
        grid.iter()
            .map(|&v| {
                x[regressor] = v;
                Ok(1.0 - self.cumulative_prob(&x, threshold - 1)?)
            })
            .collect()
    }
}

/// Fits the weighted model by Newton's method from the weighted empirical
/// cumulative frequencies (slopes start at zero).
pub fn fit_pom(
    x: &DMatrix<f64>,
    y: &[usize],
    w: &[f64],
    n_categories: usize,
) -> Result<PomFit, PomError> {
    check_inputs(x, y, w, n_categories)?;
    let k = n_categories - 1;
    let p = x.ncols();
    let total: f64 = w.iter().sum();
    let mut by_category = vec![0.0; n_categories];
    for (&yi, &wi) in y.iter().zip(w) {
        by_category[yi - 1] += wi;
    }
    if by_category[0] <= 0.0 {
        return Err(PomError::EmptyExtremeCategory(1));
    }
    if by_category[n_categories - 1] <= 0.0 {
        return Err(PomError::EmptyExtremeCategory(n_categories));
    }
    let mut warnings = Vec::new();
    for (j, &c) in by_category.iter().enumerate().take(k).skip(1) {
        if c <= 0.0 {
            warnings.push(format!("category {} has no positive-weight observation", j + 1));
        }
    }

    let mut init = Vec::with_capacity(k + p);
    let mut cum = 0.0;
    let mut prev_alpha = f64::NEG_INFINITY;
    for (j, &c) in by_category.iter().enumerate().take(k) {
        cum += c;
        let alpha = logit((cum / total).clamp(0.01, 0.99));
        if j == 0 {
            init.push(alpha);
        } else {
            init.push((alpha - prev_alpha).max(1e-3).ln());
        }
        prev_alpha = if j == 0 { alpha } else { prev_alpha + init[j].exp() };
    }
    init.extend(std::iter::repeat_n(0.0, p));

    let opts = NewtonOptions {
        divergence_guard: Some(((k..k + p).collect(), SEPARATION_BOUND)),
        ..NewtonOptions::default()
    };
    let scale = 1.0 / total;
    let objective = |params: &[f64]| -> Result<ObjectiveEvaluation, PomError> {
        let mut e = pom_objective(params, x, y, w, n_categories)?;
        e.value *= scale;
        e.gradient *= scale;
        e.hessian *= scale;
        Ok(e)
    };
    let mut solver = newton_maximize(objective, &init, &opts).map_err(|e| match e {
        PomError::Optim(OptimError::Diverged { index, value }) => PomError::Separation {
            index: index - k,
            value,
        },
        other => other,
    })?;
    if !solver.converged {
        return Err(PomError::NotConverged(solver.final_gradient_norm));
    }
    solver.warnings = warnings;
    let alphas = unpack_alphas(&solver.argmax, k);
    let beta = solver.argmax[k..].to_vec();
    Ok(PomFit {
        alphas,
        beta,
        n_categories,
        loglik: solver.value * total,
        solver,
    })
}
