//! The four weighted proportional-odds estimators.
//!
//! Each is a proportional-odds fit of the outcome on the exposure alone at
//! visit records, weighted by `e / phi` where `e` is the exposure (IPT)
//! weight and `phi` the visit-intensity (IIV) weight:
//!
//! | estimator | IPT | IIV |
//! |-----------|-----|-----|
//! | POM       | no  | no  |
//! | IPTP      | yes | no  |
//! | IIVP      | no  | yes |
//! | IPTMP     | yes | yes |
//!
//! Records are pooled with working independence; no weight products are
//! taken over a subject's history.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gps::{fit_binned_gps, fit_exposure_models, truncate_weights, BinSpec, BinnedGpsFit, GpsError, GpsFit};
use crate::intensity::{fit_proportional_intensity, CountingProcessData, IntensityError, IntensityFit};
use crate::panel::{CovariateSelector, PanelDataset, PanelRecord, EXPOSURE_NAME};
use crate::pom::{fit_pom, PomError, PomFit};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Estimator {
    #[serde(rename = "POM")]
    Pom,
    #[serde(rename = "IPTP")]
    Iptp,
    #[serde(rename = "IIVP")]
    Iivp,
    #[serde(rename = "IPTMP")]
    Iptmp,
}

impl Estimator {
    pub const ALL: [Estimator; 4] = [Estimator::Pom, Estimator::Iptp, Estimator::Iivp, Estimator::Iptmp];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::Pom => "POM",
            Estimator::Iptp => "IPTP",
            Estimator::Iivp => "IIVP",
            Estimator::Iptmp => "IPTMP",
        }
    }

    /// `(use_ipt, use_iiv)`.
    pub fn components(self) -> (bool, bool) {
        match self {
            Estimator::Pom => (false, false),
            Estimator::Iptp => (true, false),
            Estimator::Iivp => (false, true),
            Estimator::Iptmp => (true, true),
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Estimator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Estimator::ALL
            .into_iter()
            .find(|e| e.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown estimator `{s}`"))
    }
}

/// Covariate roles by name; [`EXPOSURE_NAME`] selects the exposure field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Roles {
    pub exposure: String,
    /// Exposure-model covariates (K).
    pub confounders: Vec<String>,
    /// Visit-intensity covariates (Z); may include the exposure and mediators.
    pub monitoring: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum IptKind {
    Continuous,
    Binned(BinSpec),
}

/// Records used to fit the exposure models.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum GpsRecords {
    /// Visit records with an observed outcome.
    Visits,
    /// Every at-risk record.
    AtRisk,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EstimatorSpec {
    pub use_ipt: bool,
    pub ipt_kind: IptKind,
    pub use_iiv: bool,
    pub roles: Roles,
    pub gps_records: GpsRecords,
    /// Percentile truncation `(lower, upper)` of the IPT weights.
    pub truncation: Option<(f64, f64)>,
}

impl EstimatorSpec {
    /// Continuous IPT, exposure models on visit records, no truncation.
    pub fn new(estimator: Estimator, roles: Roles) -> Self {
        let (use_ipt, use_iiv) = estimator.components();
        Self {
            use_ipt,
            ipt_kind: IptKind::Continuous,
            use_iiv,
            roles,
            gps_records: GpsRecords::Visits,
            truncation: None,
        }
    }

    pub fn for_estimator(&self, estimator: Estimator) -> Self {
        let (use_ipt, use_iiv) = estimator.components();
        Self {
            use_ipt,
            use_iiv,
            ..self.clone()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct WeightSummary {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

impl WeightSummary {
    fn of(w: &[f64]) -> Self {
        let (mut min, mut max, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
        for &v in w {
            min = min.min(v);
            max = max.max(v);
            sum += v;
        }
        Self {
            min,
            mean: sum / w.len() as f64,
            max,
        }
    }
}

/// Fitted exposure model behind the IPT weights.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum ExposureModel {
    Continuous(GpsFit),
    Binned(BinnedGpsFit),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EstimatorResult {
    pub pom_fit: PomFit,
    /// `-beta_D`: log odds ratio of `{Y <= j}` per unit exposure.
    pub log_or_leq: f64,
    /// `beta_D`: log odds ratio of a higher category per unit exposure.
    pub log_or_higher: f64,
    pub weight_summary: WeightSummary,
    pub n_records: usize,
    pub intensity_fit: Option<IntensityFit>,
    pub exposure_model: Option<ExposureModel>,
    /// Visit records whose binned conditional probability fell below the positivity threshold.
    pub positivity_warnings: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Stage {
    Roles,
    Intensity,
    ExposureModel,
    Weights,
    OutcomeModel,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Roles => "role assignment",
            Stage::Intensity => "visit-intensity model",
            Stage::ExposureModel => "exposure model",
            Stage::Weights => "weights",
            Stage::OutcomeModel => "outcome model",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimationError {
    #[error("{stage}: {message}")]
    Config { stage: Stage, message: String },
    #[error("visit-intensity model: {0}")]
    Intensity(#[from] IntensityError),
    #[error("exposure model: {0}")]
    Exposure(#[from] GpsError),
    #[error("outcome model: {0}")]
    Outcome(#[from] PomError),
}

impl EstimationError {
    pub fn stage(&self) -> Stage {
        match self {
            EstimationError::Config { stage, .. } => *stage,
            EstimationError::Intensity(_) => Stage::Intensity,
            EstimationError::Exposure(_) => Stage::ExposureModel,
            EstimationError::Outcome(_) => Stage::OutcomeModel,
        }
    }

    /// True for errors caused by the inputs rather than by the numerics.
    pub fn is_config(&self) -> bool {
        matches!(self, EstimationError::Config { stage: Stage::Roles, .. })
            || matches!(self, EstimationError::Intensity(IntensityError::Schema(_)))
    }
}

fn config_error(stage: Stage, message: impl Into<String>) -> EstimationError {
    EstimationError::Config {
        stage,
        message: message.into(),
    }
}

/// Elementwise `e / phi`.
pub fn combined_weights(e: &[f64], phi: &[f64]) -> Result<Vec<f64>, EstimationError> {
    if e.len() != phi.len() {
        return Err(config_error(
            Stage::Weights,
            format!("{} IPT weights but {} IIV weights", e.len(), phi.len()),
        ));
    }
    if let Some(p) = phi.iter().find(|p| !(**p > 0.0)) {
        return Err(config_error(Stage::Weights, format!("nonpositive intensity weight {p}")));
    }
    Ok(e.iter().zip(phi).map(|(a, b)| a / b).collect())
}

fn selector(data: &PanelDataset, names: &[String]) -> Result<CovariateSelector, EstimationError> {
    CovariateSelector::resolve(data, names).map_err(|e| config_error(Stage::Roles, e.to_string()))
}

fn design(records: &[&PanelRecord], sel: &CovariateSelector) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(records.len(), sel.len());
    let mut buf = vec![0.0; sel.len()];
    for (i, r) in records.iter().enumerate() {
        sel.fill(r, &mut buf);
        for (j, v) in buf.iter().enumerate() {
            m[(i, j)] = *v;
        }
    }
    m
}

/// Fits the visit-intensity model on the full panel.
pub fn fit_intensity(data: &PanelDataset, roles: &Roles) -> Result<IntensityFit, EstimationError> {
    selector(data, &roles.monitoring)?;
    let cp = CountingProcessData::from_panel(data, &roles.monitoring)?;
    Ok(fit_proportional_intensity(&cp)?)
}

/// Fits the exposure model selected by `spec`.
pub fn fit_exposure_model(data: &PanelDataset, spec: &EstimatorSpec) -> Result<ExposureModel, EstimationError> {
    let k_sel = selector(data, &spec.roles.confounders)?;
    let d_sel = selector(data, std::slice::from_ref(&spec.roles.exposure))?;
    let records: Vec<&PanelRecord> = match spec.gps_records {
        GpsRecords::Visits => data.records().iter().filter(|r| r.is_observed_visit()).collect(),
        GpsRecords::AtRisk => data.records().iter().filter(|r| r.at_risk).collect(),
    };
    let k = design(&records, &k_sel);
    let d: Vec<f64> = records.iter().map(|r| d_sel.values(r)[0]).collect();
    Ok(match &spec.ipt_kind {
        IptKind::Continuous => ExposureModel::Continuous(fit_exposure_models(&d, &k, None)?),
        IptKind::Binned(bins) => ExposureModel::Binned(fit_binned_gps(&d, &k, bins)?),
    })
}

/// Runs one estimator.
pub fn estimate(data: &PanelDataset, spec: &EstimatorSpec) -> Result<EstimatorResult, EstimationError> {
    let intensity = if spec.use_iiv { Some(fit_intensity(data, &spec.roles)?) } else { None };
    let exposure = if spec.use_ipt { Some(fit_exposure_model(data, spec)?) } else { None };
    estimate_with(data, spec, intensity.as_ref(), exposure.as_ref())
}

/// Runs one estimator with pre-fitted weight models. A model is used only
/// when the matching component of `spec` is on.
pub fn estimate_with(
    data: &PanelDataset,
    spec: &EstimatorSpec,
    intensity: Option<&IntensityFit>,
    exposure: Option<&ExposureModel>,
) -> Result<EstimatorResult, EstimationError> {
    let d_sel = selector(data, std::slice::from_ref(&spec.roles.exposure))?;
    let visits: Vec<&PanelRecord> = data.records().iter().filter(|r| r.is_observed_visit()).collect();
    let n = visits.len();

    let phi = match (spec.use_iiv, intensity) {
        (false, _) => vec![1.0; n],
        (true, None) => return Err(config_error(Stage::Intensity, "intensity model required")),
        (true, Some(fit)) => {
            let z_sel = selector(data, &fit.names)?;
            let mut z = vec![0.0; z_sel.len()];
            visits
                .iter()
                .map(|r| {
                    z_sel.fill(r, &mut z);
                    fit.iiv_weight(&z)
                })
                .collect()
        }
    };

    let mut positivity_warnings = 0;
    let e = match (spec.use_ipt, exposure) {
        (false, _) => vec![1.0; n],
        (true, None) => return Err(config_error(Stage::ExposureModel, "exposure model required")),
        (true, Some(model)) => {
            let k_sel = selector(data, &spec.roles.confounders)?;
            let mut k = vec![0.0; k_sel.len()];
            let mut e = Vec::with_capacity(n);
            for r in &visits {
                k_sel.fill(r, &mut k);
                let d = d_sel.values(r)[0];
                e.push(match model {
                    ExposureModel::Continuous(fit) => fit.weight(d, &k),
                    ExposureModel::Binned(fit) => {
                        let w = fit.weight(d, &k)?;
                        positivity_warnings += usize::from(w.positivity_warning);
                        w.weight
                    }
                });
            }
            if let Some((lo, hi)) = spec.truncation {
                truncate_weights(&mut e, lo, hi)?;
            }
            e
        }
    };

    let w = combined_weights(&e, &phi)?;
    if w.iter().any(|v| !v.is_finite()) {
        return Err(config_error(Stage::Weights, "non-finite combined weight"));
    }
    let x = design(&visits, &d_sel);
    let y: Vec<usize> = visits.iter().map(|r| r.outcome.expect("observed visit")).collect();
    let pom_fit = fit_pom(&x, &y, &w, data.n_categories())?;
    let beta = pom_fit.beta[0];
    Ok(EstimatorResult {
        log_or_leq: -beta,
        log_or_higher: beta,
        weight_summary: WeightSummary::of(&w),
        n_records: n,
        intensity_fit: intensity.filter(|_| spec.use_iiv).cloned(),
        exposure_model: exposure.filter(|_| spec.use_ipt).cloned(),
        positivity_warnings,
        pom_fit,
    })
}

/// Runs all four estimators; the intensity and exposure models are each
/// fitted once and shared. `base` supplies roles and IPT options.
pub fn estimate_all_four(
    data: &PanelDataset,
    base: &EstimatorSpec,
) -> Result<Vec<(Estimator, EstimatorResult)>, EstimationError> {
    let intensity = fit_intensity(data, &base.roles)?;
    let exposure = fit_exposure_model(data, base)?;
    Estimator::ALL
        .into_iter()
        .map(|est| {
            let spec = base.for_estimator(est);
            estimate_with(data, &spec, Some(&intensity), Some(&exposure)).map(|r| (est, r))
        })
        .collect()
}

/// Default roles for simulated data: confounders `k1..k3`, monitoring on
/// the exposure and the mediator `z`.
pub fn simulation_roles() -> Roles {
    Roles {
        exposure: EXPOSURE_NAME.into(),
        confounders: vec!["k1".into(), "k2".into(), "k3".into()],
        monitoring: vec![EXPOSURE_NAME.into(), "z".into()],
    }
}
