//! Simulation of covariate-driven monitoring, the replicated four-estimator
//! study, and the Monte Carlo target.
//!
//! Per subject: `K1 ~ N(1, 1)`, `K2 ~ Bernoulli(0.55)`, `K3 ~ N(0, 1)` and a
//! frailty `eta ~ Gamma(mean 1, variance v)`. At each grid time
//! `t = step, 2 step, ..., tau`:
//!
//! * exposure `D ~ N(-0.5 + 0.5 K1 + K2 - 0.05 K3, sd^2)` when confounded,
//!   else `N(-0.5, sd^2)` (optionally exponentiated);
//! * mediator `Z ~ Bernoulli(0.3)` if `D > 0.5`, else `Bernoulli(0.8)`;
//! * visit with probability `min(1, 0.01 eta exp(gamma_D D + gamma_Z Z))`;
//! * latent `U = b'(D, Z, K1, K2, K3) + Logistic(0, 1)`, cut at the two
//!   thresholds into categories 1..3, recorded only at visits.
//!
//! Every draw is addressed by `(replicate seed, subject, grid index, tag)`,
//! so results do not depend on scheduling or on which draws are needed.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimators::{estimate_all_four, simulation_roles, Estimator, EstimatorSpec, GpsRecords, IptKind};
use crate::gps::BinSpec;
use crate::panel::{PanelDataset, PanelRecord, SubjectId};
use crate::pom::fit_pom;
use crate::rng::{derive_seed, CounterRng};
use crate::stats::{mean, variance};

/// Largest tolerated share of failed replicates in a study.
pub const MAX_FAILURE_RATE: f64 = 0.05;
/// Share of clamped visit probabilities above which a replicate is flagged.
pub const CLAMP_WARNING_RATE: f64 = 0.01;

/// Monte Carlo target (higher-category log odds ratio per unit exposure) of
/// the default outcome model, from 1000 replicates of 10 000 subjects with
/// seed 20_240_601.
pub const DEFAULT_TARGET_LOG_OR: f64 = -1.411_861_747_809_749_7;

const TAG_K1: u32 = 1;
const TAG_K2: u32 = 2;
const TAG_K3: u32 = 3;
const TAG_FRAILTY: u32 = 4;
const TAG_EXPOSURE: u32 = 10;
const TAG_MEDIATOR: u32 = 11;
const TAG_VISIT: u32 = 12;
const TAG_OUTCOME: u32 = 13;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StudyError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{failed} of {total} replicates failed (first: {first_error})")]
    TooManyFailures {
        failed: usize,
        total: usize,
        first_error: String,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExposureLaw {
    Normal,
    /// `exp` of the normal draw; a right-skewed positive exposure.
    ExpNormal,
}

impl fmt::Display for ExposureLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExposureLaw::Normal => "normal",
            ExposureLaw::ExpNormal => "exp-normal",
        })
    }
}

impl FromStr for ExposureLaw {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "normal" => Ok(ExposureLaw::Normal),
            "exp-normal" => Ok(ExposureLaw::ExpNormal),
            _ => Err(format!("unknown exposure law `{s}`")),
        }
    }
}

/// Scenario of the simulation study, including the analysis options used
/// by [`run_study`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub n_subjects: usize,
    pub confounded: bool,
    pub gamma_d: f64,
    pub gamma_z: f64,
    pub tau: f64,
    pub grid_step: f64,
    pub outcome_thresholds: (f64, f64),
    /// Coefficients of `(D, Z, K1, K2, K3)` in the latent outcome.
    pub outcome_coefficients: [f64; 5],
    pub exposure_sd: f64,
    pub frailty_variance: f64,
    pub exposure_law: ExposureLaw,
    pub seed: u64,
    /// `continuous` or `binned`.
    pub ipt: String,
    /// Bin specification for binned IPT weights.
    pub bins: String,
    /// Records used to fit the exposure models: `visits` or `at-risk`.
    pub gps_records: String,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n_subjects: 250,
            confounded: false,
            gamma_d: 0.0,
            gamma_z: 0.0,
            tau: 2.0,
            grid_step: 0.01,
            outcome_thresholds: (5.0, 8.0),
            outcome_coefficients: [-2.0, 5.0, 0.4, 0.05, -0.6],
            exposure_sd: 0.5,
            frailty_variance: 0.01,
            exposure_law: ExposureLaw::Normal,
            seed: 1,
            ipt: "continuous".into(),
            bins: "quantiles:5".into(),
            gps_records: "visits".into(),
        }
    }
}

fn parse_list(value: &str) -> Result<Vec<f64>, String> {
    value
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| format!("`{v}` is not a number")))
        .collect()
}

impl ScenarioConfig {
    pub const KEYS: [&'static str; 15] = [
        "n_subjects",
        "confounded",
        "gamma_d",
        "gamma_z",
        "tau",
        "grid_step",
        "outcome_thresholds",
        "outcome_coefficients",
        "exposure_sd",
        "frailty_variance",
        "exposure_law",
        "seed",
        "ipt",
        "bins",
        "gps_records",
    ];

    /// Sets one field from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), StudyError> {
        let value = value.trim();
        let err = |m: String| StudyError::Config(format!("{key}: {m}"));
        let num = |v: &str| v.parse::<f64>().map_err(|_| err(format!("`{v}` is not a number")));
        match key {
            "n_subjects" => self.n_subjects = value.parse().map_err(|_| err(format!("`{value}` is not a count")))?,
            "confounded" => {
                self.confounded = match value {
                    "true" | "1" | "yes" => true,
                    "false" | "0" | "no" => false,
                    _ => return Err(err(format!("`{value}` is not a boolean"))),
                }
            }
            "gamma_d" => self.gamma_d = num(value)?,
            "gamma_z" => self.gamma_z = num(value)?,
            "tau" => self.tau = num(value)?,
            "grid_step" => self.grid_step = num(value)?,
            "outcome_thresholds" => {
                let v = parse_list(value).map_err(err)?;
                if v.len() != 2 {
                    return Err(err("expected two thresholds".into()));
                }
                self.outcome_thresholds = (v[0], v[1]);
            }
            "outcome_coefficients" => {
                let v = parse_list(value).map_err(err)?;
                self.outcome_coefficients = v
                    .try_into()
                    .map_err(|_| err("expected five coefficients (D, Z, K1, K2, K3)".into()))?;
            }
            "exposure_sd" => self.exposure_sd = num(value)?,
            "frailty_variance" => self.frailty_variance = num(value)?,
            "exposure_law" => self.exposure_law = value.parse().map_err(err)?,
            "seed" => self.seed = value.parse().map_err(|_| err(format!("`{value}` is not a seed")))?,
            "ipt" => self.ipt = value.to_owned(),
            "bins" => self.bins = value.to_owned(),
            "gps_records" => self.gps_records = value.to_owned(),
            _ => return Err(StudyError::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults; `#` starts a comment.
    pub fn from_kv_str(text: &str) -> Result<Self, StudyError> {
        let mut config = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| StudyError::Config(format!("line {}: expected key = value", i + 1)))?;
            config.set(key.trim(), value)?;
        }
        config.validate()?;
        Ok(config)
    }

    /// Every field as `key = value`, in [`Self::KEYS`] order.
    pub fn to_kv_string(&self) -> String {
        let f = crate::fmt_f64;
        let c = &self.outcome_coefficients;
        let values = [
            self.n_subjects.to_string(),
            self.confounded.to_string(),
            f(self.gamma_d),
            f(self.gamma_z),
            f(self.tau),
            f(self.grid_step),
            format!("{},{}", f(self.outcome_thresholds.0), f(self.outcome_thresholds.1)),
            c.iter().map(|v| f(*v)).collect::<Vec<_>>().join(","),
            f(self.exposure_sd),
            f(self.frailty_variance),
            self.exposure_law.to_string(),
            self.seed.to_string(),
            self.ipt.clone(),
            self.bins.clone(),
            self.gps_records.clone(),
        ];
        Self::KEYS
            .iter()
            .zip(values)
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn n_grid(&self) -> usize {
        (self.tau / self.grid_step).round() as usize
    }

    pub fn validate(&self) -> Result<(), StudyError> {
        let bad = |m: &str| Err(StudyError::Config(m.to_owned()));
        if self.n_subjects == 0 {
            return bad("n_subjects must be positive");
        }
        if !(self.grid_step > 0.0) || !(self.tau > 0.0) {
            return bad("tau and grid_step must be positive");
        }
        let steps = self.tau / self.grid_step;
        if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) || steps.round() < 1.0 {
            return bad("tau must be a positive multiple of grid_step");
        }
        if self.n_grid() > u32::MAX as usize || self.n_subjects > u32::MAX as usize {
            return bad("grid or subject count too large");
        }
        if !(self.outcome_thresholds.0 < self.outcome_thresholds.1) {
            return bad("outcome thresholds must be strictly increasing");
        }
        if !(self.exposure_sd > 0.0) || !(self.frailty_variance >= 0.0) {
            return bad("exposure_sd must be positive and frailty_variance nonnegative");
        }
        let finite = [self.gamma_d, self.gamma_z, self.tau, self.grid_step, self.exposure_sd, self.frailty_variance];
        if finite.iter().chain(&self.outcome_coefficients).any(|v| !v.is_finite()) {
            return bad("parameters must be finite");
        }
        self.estimator_spec()?;
        Ok(())
    }

    /// Analysis options as an estimator template.
    pub fn estimator_spec(&self) -> Result<EstimatorSpec, StudyError> {
        let mut spec = EstimatorSpec::new(Estimator::Iptmp, simulation_roles());
        spec.ipt_kind = match self.ipt.as_str() {
            "continuous" => IptKind::Continuous,
            "binned" => IptKind::Binned(
                self.bins
                    .parse::<BinSpec>()
                    .map_err(|e| StudyError::Config(e.to_string()))?,
            ),
            other => return Err(StudyError::Config(format!("unknown ipt kind `{other}`"))),
        };
        spec.gps_records = match self.gps_records.as_str() {
            "visits" => GpsRecords::Visits,
            "at-risk" => GpsRecords::AtRisk,
            other => return Err(StudyError::Config(format!("unknown gps_records `{other}`"))),
        };
        Ok(spec)
    }
}

/// Keyed draws of one replicate.
struct Draws<'a> {
    config: &'a ScenarioConfig,
    rng: CounterRng,
    frailty: Option<Gamma<f64>>,
}

struct Baseline {
    k: [f64; 3],
    frailty: f64,
}

struct Cell {
    exposure: f64,
    mediator: f64,
}

impl<'a> Draws<'a> {
    fn new(config: &'a ScenarioConfig, replicate_seed: u64) -> Self {
        let v = config.frailty_variance;
        Self {
            config,
            rng: CounterRng::new(replicate_seed),
            frailty: (v > 0.0).then(|| Gamma::new(1.0 / v, v).expect("valid gamma")),
        }
    }

    fn normal(&self, subject: u32, index: u32, tag: u32) -> f64 {
        StandardNormal.sample(&mut self.rng.stream(subject, index, tag))
    }

    fn baseline(&self, s: u32) -> Baseline {
        let k1 = 1.0 + self.normal(s, 0, TAG_K1);
        let k2 = if self.rng.uniform_at(s, 0, TAG_K2) < 0.55 { 1.0 } else { 0.0 };
        let k3 = self.normal(s, 0, TAG_K3);
        let frailty = match &self.frailty {
            Some(g) => g.sample(&mut self.rng.stream(s, 0, TAG_FRAILTY)),
            None => 1.0,
        };
        Baseline {
            k: [k1, k2, k3],
            frailty,
        }
    }

    fn cell(&self, s: u32, g: u32, b: &Baseline) -> Cell {
        let c = self.config;
        let mean = if c.confounded {
            -0.5 + 0.5 * b.k[0] + b.k[1] - 0.05 * b.k[2]
        } else {
            -0.5
        };
        let mut exposure = mean + c.exposure_sd * self.normal(s, g, TAG_EXPOSURE);
        if c.exposure_law == ExposureLaw::ExpNormal {
            exposure = exposure.exp();
        }
        let p_z = if exposure > 0.5 { 0.3 } else { 0.8 };
        let mediator = if self.rng.uniform_at(s, g, TAG_MEDIATOR) < p_z { 1.0 } else { 0.0 };
        Cell { exposure, mediator }
    }

    /// Visit indicator and whether the probability was clamped at one.
    fn visit(&self, s: u32, g: u32, b: &Baseline, cell: Option<&Cell>) -> (bool, bool) {
        let c = self.config;
        let lin = cell.map_or(0.0, |x| c.gamma_d * x.exposure + c.gamma_z * x.mediator);
        let p = 0.01 * b.frailty * lin.exp();
        (self.rng.uniform_at(s, g, TAG_VISIT) < p.min(1.0), p > 1.0)
    }

    fn outcome(&self, s: u32, g: u32, b: &Baseline, cell: &Cell) -> usize {
        let c = self.config;
        let beta = &c.outcome_coefficients;
        let u = self.rng.uniform_at(s, g, TAG_OUTCOME);
        let latent = beta[0] * cell.exposure
            + beta[1] * cell.mediator
            + beta[2] * b.k[0]
            + beta[3] * b.k[1]
            + beta[4] * b.k[2]
            + (u / (1.0 - u)).ln();
        if latent <= c.outcome_thresholds.0 {
            1
        } else if latent <= c.outcome_thresholds.1 {
            2
        } else {
            3
        }
    }
}

/// Covariate columns of simulated datasets.
pub fn simulated_covariate_names() -> Vec<String> {
    ["k1", "k2", "k3", "z"].iter().map(|s| s.to_string()).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulatedPanel {
    pub data: PanelDataset,
    /// Subject-time cells whose visit probability exceeded one.
    pub clamp_count: usize,
    pub warnings: Vec<String>,
}

impl SimulatedPanel {
    pub fn clamp_rate(&self) -> f64 {
        self.clamp_count as f64 / self.data.records().len() as f64
    }
}

/// Simulates one replicate dataset on the full grid.
pub fn simulate_dataset(config: &ScenarioConfig, replicate_seed: u64) -> Result<SimulatedPanel, StudyError> {
    config.validate()?;
    let draws = Draws::new(config, replicate_seed);
    let n_grid = config.n_grid();
    let mut records = Vec::with_capacity(config.n_subjects * n_grid);
    let mut clamp_count = 0;
    for s in 0..config.n_subjects as u32 {
        let b = draws.baseline(s);
        let id = SubjectId(format!("s{s}"));
        for g in 1..=n_grid as u32 {
            let cell = draws.cell(s, g, &b);
            let (visit, clamped) = draws.visit(s, g, &b, Some(&cell));
            clamp_count += usize::from(clamped);
            let outcome = visit.then(|| draws.outcome(s, g, &b, &cell));
            records.push(PanelRecord {
                subject: id.clone(),
                time: g as f64 * config.grid_step,
                at_risk: true,
                visit,
                exposure: cell.exposure,
                covariates: vec![b.k[0], b.k[1], b.k[2], cell.mediator],
                outcome,
            });
        }
    }
    let tau = n_grid as f64 * config.grid_step;
    let data = PanelDataset::from_parts_unchecked(records, 3, simulated_covariate_names(), tau);
    let mut warnings = Vec::new();
    let rate = clamp_count as f64 / data.records().len() as f64;
    if rate > CLAMP_WARNING_RATE {
        warnings.push(format!("visit probability clamped at 1 in {:.2}% of cells", 100.0 * rate));
    }
    Ok(SimulatedPanel {
        data,
        clamp_count,
        warnings,
    })
}

/// Visit records only, drawing exposure, mediator and outcome just where a
/// visit occurs. Requires a visit law free of the exposure and mediator
/// (`gamma = 0`); yields the same records as the full grid path.
pub fn simulate_visits_only(config: &ScenarioConfig, replicate_seed: u64) -> Result<Vec<PanelRecord>, StudyError> {
    config.validate()?;
    if config.gamma_d != 0.0 || config.gamma_z != 0.0 {
        return Err(StudyError::Config("visit-only simulation needs gamma = 0".into()));
    }
    let draws = Draws::new(config, replicate_seed);
    let mut records = Vec::new();
    for s in 0..config.n_subjects as u32 {
        let b = draws.baseline(s);
        for g in 1..=config.n_grid() as u32 {
            if !draws.visit(s, g, &b, None).0 {
                continue;
            }
            let cell = draws.cell(s, g, &b);
            records.push(PanelRecord {
                subject: SubjectId(format!("s{s}")),
                time: g as f64 * config.grid_step,
                at_risk: true,
                visit: true,
                exposure: cell.exposure,
                covariates: vec![b.k[0], b.k[1], b.k[2], cell.mediator],
                outcome: Some(draws.outcome(s, g, &b, &cell)),
            });
        }
    }
    Ok(records)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisitStats {
    pub mean: f64,
    pub min: usize,
    pub max: usize,
}

fn visit_stats(data: &PanelDataset) -> VisitStats {
    let counts: Vec<usize> = data
        .subjects()
        .iter()
        .map(|recs| recs.iter().filter(|r| r.visit).count())
        .collect();
    VisitStats {
        mean: counts.iter().sum::<usize>() as f64 / counts.len() as f64,
        min: counts.iter().copied().min().unwrap_or(0),
        max: counts.iter().copied().max().unwrap_or(0),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReplicateOutcome {
    pub replicate: usize,
    pub seed: u64,
    /// `log_or_higher` per estimator in [`Estimator::ALL`] order.
    pub estimates: Option<[f64; 4]>,
    pub error: Option<String>,
    pub visits: VisitStats,
    pub clamp_count: usize,
}

/// Simulates and analyses replicate `index` of a study.
pub fn run_replicate(config: &ScenarioConfig, index: usize) -> Result<ReplicateOutcome, StudyError> {
    let seed = derive_seed(config.seed, index as u64);
    let sim = simulate_dataset(config, seed)?;
    let spec = config.estimator_spec()?;
    let (estimates, error) = match estimate_all_four(&sim.data, &spec) {
        Ok(results) => {
            let mut out = [0.0; 4];
            for (i, (_, r)) in results.iter().enumerate() {
                out[i] = r.log_or_higher;
            }
            (Some(out), None)
        }
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(ReplicateOutcome {
        replicate: index,
        seed,
        estimates,
        error,
        visits: visit_stats(&sim.data),
        clamp_count: sim.clamp_count,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub estimator: Estimator,
    pub mean: f64,
    /// `|mean - target|`.
    pub bias: f64,
    /// Empirical variance, divisor = number of successful replicates.
    pub variance: f64,
    /// Mean squared error about the target; equals `bias^2 + variance`.
    pub mse: f64,
}

impl EstimatorSummary {
    pub fn from_estimates(estimator: Estimator, values: &[f64], target: f64) -> Self {
        let m = mean(values);
        Self {
            estimator,
            mean: m,
            bias: (m - target).abs(),
            variance: variance(values),
            mse: values.iter().map(|v| (v - target) * (v - target)).sum::<f64>() / values.len() as f64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub config: ScenarioConfig,
    pub n_replicates: usize,
    pub n_failed: usize,
    pub target: f64,
    pub estimators: Vec<EstimatorSummary>,
    /// Visits per subject: mean over all subjects and replicates, extremes over all.
    pub visits: VisitStats,
    /// Share of clamped visit probabilities over all cells.
    pub clamp_rate: f64,
    pub warnings: Vec<String>,
}

impl ScenarioSummary {
    pub fn get(&self, estimator: Estimator) -> &EstimatorSummary {
        self.estimators
            .iter()
            .find(|s| s.estimator == estimator)
            .expect("all estimators summarized")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StudyOutput {
    pub summary: ScenarioSummary,
    pub replicates: Vec<ReplicateOutcome>,
}

impl StudyOutput {
    /// `(replicate, estimator, log_or_higher)` rows of successful replicates.
    pub fn rows(&self) -> Vec<(usize, Estimator, f64)> {
        self.replicates
            .iter()
            .filter_map(|r| r.estimates.map(|e| (r.replicate, e)))
            .flat_map(|(i, e)| Estimator::ALL.into_iter().zip(e).map(move |(est, v)| (i, est, v)))
            .collect()
    }
}

/// Aggregates per-replicate estimates into a summary.
pub fn summarize(
    config: &ScenarioConfig,
    replicates: &[ReplicateOutcome],
    target: f64,
) -> Result<ScenarioSummary, StudyError> {
    let total = replicates.len();
    let ok: Vec<&[f64; 4]> = replicates.iter().filter_map(|r| r.estimates.as_ref()).collect();
    let n_failed = total - ok.len();
    if n_failed as f64 > MAX_FAILURE_RATE * total as f64 || ok.is_empty() {
        return Err(StudyError::TooManyFailures {
            failed: n_failed,
            total,
            first_error: replicates
                .iter()
                .find_map(|r| r.error.clone())
                .unwrap_or_default(),
        });
    }
    let estimators = Estimator::ALL
        .iter()
        .enumerate()
        .map(|(i, &est)| {
            let values: Vec<f64> = ok.iter().map(|e| e[i]).collect();
            EstimatorSummary::from_estimates(est, &values, target)
        })
        .collect();
    let n_cells = (config.n_subjects * config.n_grid() * total) as f64;
    let clamp_rate = replicates.iter().map(|r| r.clamp_count).sum::<usize>() as f64 / n_cells;
    let mut warnings = Vec::new();
    if n_failed > 0 {
        warnings.push(format!("{n_failed} of {total} replicates failed and were excluded"));
    }
    let flagged = replicates
        .iter()
        .filter(|r| r.clamp_count as f64 > CLAMP_WARNING_RATE * (config.n_subjects * config.n_grid()) as f64)
        .count();
    if flagged > 0 {
        warnings.push(format!(
            "{flagged} replicates clamped more than {}% of visit probabilities",
            100.0 * CLAMP_WARNING_RATE
        ));
    }
    Ok(ScenarioSummary {
        config: config.clone(),
        n_replicates: total,
        n_failed,
        target,
        estimators,
        visits: VisitStats {
            mean: mean(&replicates.iter().map(|r| r.visits.mean).collect::<Vec<_>>()),
            min: replicates.iter().map(|r| r.visits.min).min().unwrap_or(0),
            max: replicates.iter().map(|r| r.visits.max).max().unwrap_or(0),
        },
        clamp_rate,
        warnings,
    })
}

/// Runs `n_replicates` replicates in parallel and summarizes them against
/// `target` (a higher-category log odds ratio).
pub fn run_study(config: &ScenarioConfig, n_replicates: usize, target: f64) -> Result<StudyOutput, StudyError> {
    config.validate()?;
    if n_replicates < 2 {
        return Err(StudyError::Config("a study needs at least two replicates".into()));
    }
    let replicates = (0..n_replicates)
        .into_par_iter()
        .map(|i| run_replicate(config, i))
        .collect::<Result<Vec<_>, _>>()?;
    let summary = summarize(config, &replicates, target)?;
    Ok(StudyOutput { summary, replicates })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TargetResult {
    /// Mean fitted `beta_D` (higher-category direction).
    pub log_or_higher: f64,
    pub log_or_leq: f64,
    /// `sd / sqrt(replicates)` of the replicate estimates.
    pub mc_standard_error: f64,
    pub replicates: Vec<f64>,
    pub n_failed: usize,
    pub n_patients: usize,
    pub seed: u64,
}

/// Scenario used for the target: no confounding and uninformative visits.
pub fn target_config(n_patients: usize, seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        n_subjects: n_patients,
        confounded: false,
        gamma_d: 0.0,
        gamma_z: 0.0,
        seed,
        ..ScenarioConfig::default()
    }
}

/// Mean unweighted proportional-odds slope of the outcome on the exposure
/// over replicates of the unconfounded, uninformatively monitored scenario.
pub fn monte_carlo_target(n_patients: usize, n_replicates: usize, seed: u64) -> Result<TargetResult, StudyError> {
    monte_carlo_target_for(&target_config(n_patients, seed), n_replicates)
}

/// As [`monte_carlo_target`] for an arbitrary `gamma = 0` scenario.
pub fn monte_carlo_target_for(config: &ScenarioConfig, n_replicates: usize) -> Result<TargetResult, StudyError> {
    config.validate()?;
    if n_replicates == 0 {
        return Err(StudyError::Config("n_replicates must be positive".into()));
    }
    let fits: Vec<Result<f64, String>> = (0..n_replicates)
        .into_par_iter()
        .map(|i| {
            let records = simulate_visits_only(config, derive_seed(config.seed, i as u64)).map_err(|e| e.to_string())?;
            let x = DMatrix::from_iterator(records.len(), 1, records.iter().map(|r| r.exposure));
            let y: Vec<usize> = records.iter().map(|r| r.outcome.expect("visit outcome")).collect();
            fit_pom(&x, &y, &vec![1.0; y.len()], 3)
                .map(|f| f.beta[0])
                .map_err(|e| e.to_string())
        })
        .collect();
    let replicates: Vec<f64> = fits.iter().filter_map(|r| r.as_ref().ok().copied()).collect();
    let n_failed = n_replicates - replicates.len();
    if n_failed as f64 > MAX_FAILURE_RATE * n_replicates as f64 || replicates.is_empty() {
        return Err(StudyError::TooManyFailures {
            failed: n_failed,
            total: n_replicates,
            first_error: fits.iter().find_map(|r| r.clone().err()).unwrap_or_default(),
        });
    }
    let m = mean(&replicates);
    let r = replicates.len() as f64;
    let sd = if replicates.len() > 1 {
        (variance(&replicates) * r / (r - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(TargetResult {
        log_or_higher: m,
        log_or_leq: -m,
        mc_standard_error: sd / r.sqrt(),
        replicates,
        n_failed,
        n_patients: config.n_subjects,
        seed: config.seed,
    })
}

/// Per-estimator replicate values keyed by estimator name, for reports.
pub fn group_rows(rows: &[(usize, Estimator, f64)]) -> BTreeMap<Estimator, Vec<f64>> {
    let mut out: BTreeMap<Estimator, Vec<f64>> = BTreeMap::new();
    for &(_, e, v) in rows {
        out.entry(e).or_default().push(v);
    }
    out
}
