//! Proportional visit-intensity (Andersen–Gill) model and inverse intensity
//! of visit weights.
//!
//! The visit rate is `xi(t) exp(gamma'Z(t)) lambda_0(t)`. Only `gamma` is
//! estimated, by the Breslow partial likelihood on the time-since-entry axis;
//! the baseline cancels from the weights.
//!
//! Risk-set convention: a subject's covariates and at-risk flag at time `t`
//! are taken from its last record at or before `t` (last observation carried
//! forward), and a subject leaves follow-up after its last record.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::numopt::{newton_maximize, NewtonOptions, ObjectiveEvaluation, OptimError, SolverResult};
use crate::panel::{CovariateSelector, PanelDataset, PanelError};

pub const SEPARATION_BOUND: f64 = 50.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntensityError {
    #[error("{0}")]
    Schema(String),
    #[error("subject {subject} has no record at or before event time {time}")]
    Coverage { subject: String, time: f64 },
    #[error("no visit events")]
    NoEvents,
    #[error("monotone partial likelihood: coefficient `{name}` reached {value}")]
    Separation { name: String, value: f64 },
    #[error("partial likelihood solver did not converge (gradient norm {0:e})")]
    NotConverged(f64),
    #[error("domain error: {0}")]
    Domain(String),
    #[error(transparent)]
    Optim(#[from] OptimError),
}

impl From<PanelError> for IntensityError {
    fn from(e: PanelError) -> Self {
        IntensityError::Schema(e.to_string())
    }
}

#[derive(Clone, Debug, PartialEq)]
struct EventTime {
    time: f64,
    n_events: f64,
    event_sum: Vec<f64>,
    risk_start: usize,
    risk_end: usize,
}

/// Event times, per-event covariate sums and risk sets, built once.
#[derive(Clone, Debug, PartialEq)]
pub struct CountingProcessData {
    names: Vec<String>,
    events: Vec<EventTime>,
    /// Row-major covariates of at-risk subjects, grouped by event time.
    risk_covariates: Vec<f64>,
    events_per_subject: Vec<usize>,
}

impl CountingProcessData {
    /// Builds the counting-process view. Events are records with a visit.
    pub fn from_panel<S: AsRef<str>>(data: &PanelDataset, names: &[S]) -> Result<Self, IntensityError> {
        let selector = CovariateSelector::resolve(data, names)?;
        let p = selector.len();
        let subjects = data.subjects();

        let mut times: Vec<f64> = data.records().iter().filter(|r| r.visit).map(|r| r.time).collect();
        times.sort_by(f64::total_cmp);
        times.dedup();

        let mut events: Vec<EventTime> = times
            .iter()
            .map(|&time| EventTime {
                time,
                n_events: 0.0,
                event_sum: vec![0.0; p],
                risk_start: 0,
                risk_end: 0,
            })
            .collect();
        let mut events_per_subject = vec![0; subjects.len()];
        let mut z = vec![0.0; p];
        for (s, recs) in subjects.iter().enumerate() {
            for r in recs.iter().filter(|r| r.visit) {
                let e = times.binary_search_by(|t| t.total_cmp(&r.time)).expect("event time indexed");
                selector.fill(r, &mut z);
                events[e].n_events += 1.0;
                for (acc, v) in events[e].event_sum.iter_mut().zip(&z) {
                    *acc += v;
                }
                events_per_subject[s] += 1;
            }
        }

        let mut risk_covariates = Vec::new();
        let mut cursor = vec![0usize; subjects.len()];
        for ev in events.iter_mut() {
            ev.risk_start = risk_covariates.len() / p.max(1);
            let mut rows = 0;
            for (s, recs) in subjects.iter().enumerate() {
                while cursor[s] < recs.len() && recs[cursor[s]].time <= ev.time {
                    cursor[s] += 1;
                }
                if cursor[s] == 0 {
                    return Err(IntensityError::Coverage {
                        subject: recs[0].subject.to_string(),
                        time: ev.time,
                    });
                }
                if cursor[s] == recs.len() && recs[recs.len() - 1].time < ev.time {
                    continue;
                }
                let r = &recs[cursor[s] - 1];
                if r.at_risk {
                    selector.fill(r, &mut z);
                    risk_covariates.extend_from_slice(&z);
                    rows += 1;
                }
            }
            ev.risk_end = ev.risk_start + rows;
        }

        Ok(Self {
            names: selector.names().to_vec(),
            events,
            risk_covariates,
            events_per_subject,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn dimension(&self) -> usize {
        self.names.len()
    }

    pub fn n_events(&self) -> usize {
        self.events_per_subject.iter().sum()
    }

    /// Distinct event times in increasing order.
    pub fn event_times(&self) -> Vec<f64> {
        self.events.iter().map(|e| e.time).collect()
    }

    /// Event counts per subject, in dataset subject order.
    pub fn events_per_subject(&self) -> &[usize] {
        &self.events_per_subject
    }

    /// Log partial likelihood with Breslow ties, its gradient and Hessian.
    pub fn log_partial_likelihood(&self, gamma: &[f64]) -> Result<ObjectiveEvaluation, IntensityError> {
        let p = self.dimension();
        if gamma.len() != p {
            return Err(IntensityError::Domain(format!(
                "expected {p} coefficients, got {}",
                gamma.len()
            )));
        }
        let mut value = 0.0;
        let mut grad = DVector::<f64>::zeros(p);
        let mut hess = DMatrix::<f64>::zeros(p, p);
        let mut eta = Vec::new();
        let mut s1 = vec![0.0; p];
        let mut s2 = vec![0.0; p * p];
        for ev in &self.events {
            let rows = &self.risk_covariates[ev.risk_start * p..ev.risk_end * p];
            let n_rows = ev.risk_end - ev.risk_start;
            if n_rows == 0 {
                return Err(IntensityError::Domain(format!("empty risk set at time {}", ev.time)));
            }
            eta.clear();
            eta.extend((0..n_rows).map(|k| {
                rows[k * p..(k + 1) * p]
                    .iter()
                    .zip(gamma)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
            }));
            let shift = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s0 = 0.0;
            s1.iter_mut().for_each(|v| *v = 0.0);
            for k in 0..n_rows {
                let wk = (eta[k] - shift).exp();
                eta[k] = wk;
                s0 += wk;
                for (acc, z) in s1.iter_mut().zip(&rows[k * p..(k + 1) * p]) {
                    *acc += wk * z;
                }
            }
            s1.iter_mut().for_each(|v| *v /= s0);
            // Centered second moment; the uncentered form cancels badly when
            // one subject dominates the risk set.
            s2.iter_mut().for_each(|v| *v = 0.0);
            for k in 0..n_rows {
                let zk = &rows[k * p..(k + 1) * p];
                for a in 0..p {
                    let da = zk[a] - s1[a];
                    for b in 0..=a {
                        s2[a * p + b] += eta[k] * da * (zk[b] - s1[b]);
                    }
                }
            }
            let lin: f64 = ev.event_sum.iter().zip(gamma).map(|(a, b)| a * b).sum();
            value += lin - ev.n_events * (shift + s0.ln());
            // S - d * zbar as a weighted sum, exact when one subject dominates.
            for k in 0..n_rows {
                let zk = &rows[k * p..(k + 1) * p];
                let share = eta[k] / s0;
                for a in 0..p {
                    grad[a] += share * (ev.event_sum[a] - ev.n_events * zk[a]);
                }
            }
            for a in 0..p {
                for b in 0..=a {
                    let v = -ev.n_events * s2[a * p + b] / s0;
                    hess[(a, b)] += v;
                    if a != b {
                        hess[(b, a)] += v;
                    }
                }
            }
        }
        if !value.is_finite() {
            return Err(IntensityError::Domain("partial likelihood not finite".into()));
        }
        Ok(ObjectiveEvaluation {
            value,
            gradient: grad,
            hessian: hess,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IntensityFit {
    pub gamma: Vec<f64>,
    pub names: Vec<String>,
    /// Log partial likelihood at `gamma`.
    pub loglik: f64,
    pub solver: SolverResult,
}

impl IntensityFit {
    /// A fit with `gamma = 0`, which turns inverse intensity weighting off.
    pub fn null(names: Vec<String>) -> Self {
        let gamma = vec![0.0; names.len()];
        Self {
            solver: SolverResult {
                argmax: gamma.clone(),
                value: f64::NAN,
                iterations: 0,
                converged: true,
                final_gradient_norm: 0.0,
                warnings: vec!["coefficients fixed at zero".into()],
            },
            gamma,
            names,
            loglik: f64::NAN,
        }
    }

    /// `exp(gamma'z)`.
    pub fn iiv_weight(&self, z: &[f64]) -> f64 {
        assert_eq!(z.len(), self.gamma.len(), "covariate dimension");
        z.iter().zip(&self.gamma).map(|(a, b)| a * b).sum::<f64>().exp()
    }

    /// `(name, exp(gamma_k))` per covariate.
    pub fn rate_ratios(&self) -> Vec<(String, f64)> {
        self.names.iter().cloned().zip(self.gamma.iter().map(|g| g.exp())).collect()
    }
}

/// Maximizes the partial likelihood from `gamma = 0`.
pub fn fit_proportional_intensity(cp: &CountingProcessData) -> Result<IntensityFit, IntensityError> {
    let n_events = cp.n_events();
    if n_events == 0 {
        return Err(IntensityError::NoEvents);
    }
    let p = cp.dimension();
    let scale = 1.0 / n_events as f64;
    let opts = NewtonOptions {
        divergence_guard: Some(((0..p).collect(), SEPARATION_BOUND)),
        ..NewtonOptions::default()
    };
    let solver = newton_maximize(
        |g: &[f64]| {
            let mut e = cp.log_partial_likelihood(g)?;
            e.value *= scale;
            e.gradient *= scale;
            e.hessian *= scale;
            Ok::<_, IntensityError>(e)
        },
        &vec![0.0; p],
        &opts,
    )
    .map_err(|e| match e {
        IntensityError::Optim(OptimError::Diverged { index, value }) => IntensityError::Separation {
            name: cp.names[index].clone(),
            value,
        },
        other => other,
    })?;
    if !solver.converged {
        return Err(IntensityError::NotConverged(solver.final_gradient_norm));
    }
    Ok(IntensityFit {
        gamma: solver.argmax.clone(),
        names: cp.names.clone(),
        loglik: solver.value * n_events as f64,
        solver,
    })
}
