use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use ordcausal::bootstrap::{bootstrap_ci, BootstrapError, BootstrapResult};
use ordcausal::estimators::{
    estimate_with, fit_exposure_model, fit_intensity, EstimationError, EstimatorResult, GpsRecords, WeightSummary,
};
use ordcausal::gps::BinSpec;
use ordcausal::panel::{load_csv, write_csv, CsvSchema, PanelError, EXPOSURE_NAME};
use ordcausal::rng::derive_seed;
use ordcausal::simulator::{
    monte_carlo_target, run_study, simulate_dataset, EstimatorSummary, ScenarioSummary, StudyError,
};
use ordcausal::{fmt_f64, Estimator, EstimatorSpec, IptKind, Roles, ScenarioConfig};
use serde::Serialize;

use crate::output::{Manifest, OutputDir};
use crate::{config_err, runtime_err, EstimateArgs, Failure, ReportArgs, SimulateArgs, TargetArgs};

fn study_err(e: StudyError) -> Failure {
    match e {
        StudyError::Config(_) => config_err(e),
        StudyError::TooManyFailures { .. } => runtime_err(e),
    }
}

fn estimation_err(e: EstimationError) -> Failure {
    if e.is_config() {
        config_err(e)
    } else {
        runtime_err(e)
    }
}

fn bootstrap_err(e: BootstrapError) -> Failure {
    match e {
        BootstrapError::Config(_) => config_err(e),
        BootstrapError::Point(inner) => estimation_err(inner),
        BootstrapError::TooManyFailures { .. } => runtime_err(e),
    }
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(config_err)
}

fn split_assignment(s: &str) -> Result<(&str, &str), Failure> {
    s.split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .ok_or_else(|| config_err(anyhow!("expected KEY=VALUE, got `{s}`")))
}

fn csv_err(e: impl Into<anyhow::Error>) -> Failure {
    runtime_err(e)
}

pub fn simulate(a: &SimulateArgs) -> Result<(), Failure> {
    let mut manifest = Manifest::start("simulate");
    let mut config = match &a.config {
        Some(path) => ScenarioConfig::from_kv_str(&read_text(path)?).map_err(study_err)?,
        None => ScenarioConfig::default(),
    };
    for s in &a.set {
        let (k, v) = split_assignment(s)?;
        config.set(k, v).map_err(study_err)?;
    }
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    if let Some(ipt) = &a.ipt {
        config.ipt = ipt.clone();
    }
    if let Some(bins) = &a.bins {
        config.bins = bins.clone();
    }
    config.validate().map_err(study_err)?;
    if a.reps < 2 {
        return Err(config_err(anyhow!("--reps must be at least 2")));
    }
    if !a.target.is_finite() {
        return Err(config_err(anyhow!("--target must be finite")));
    }

    let study = run_study(&config, a.reps, a.target).map_err(study_err)?;

    let mut out = OutputDir::create(&a.out)?;
    out.write_text("scenario.conf", &config.to_kv_string())?;
    out.write_json("summary.json", &study.summary)?;
    let mut w = out.csv("replicates.csv")?;
    w.write_record(["replicate", "estimator", "log_or_higher"]).map_err(csv_err)?;
    for (r, est, v) in study.rows() {
        w.write_record([r.to_string(), est.to_string(), fmt_f64(v)]).map_err(csv_err)?;
    }
    w.flush().map_err(csv_err)?;
    let mut w = out.csv("replicate_diagnostics.csv")?;
    w.write_record(["replicate", "seed", "status", "mean_visits", "min_visits", "max_visits", "clamped_cells", "error"])
        .map_err(csv_err)?;
    for r in &study.replicates {
        w.write_record([
            r.replicate.to_string(),
            r.seed.to_string(),
            if r.estimates.is_some() { "ok" } else { "failed" }.to_string(),
            fmt_f64(r.visits.mean),
            r.visits.min.to_string(),
            r.visits.max.to_string(),
            r.clamp_count.to_string(),
            r.error.clone().unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(csv_err)?;
    if let Some(r) = a.export_dataset {
        let sim = simulate_dataset(&config, derive_seed(config.seed, r as u64)).map_err(study_err)?;
        let path = out.path(&format!("dataset_replicate_{r}.csv"));
        write_csv(&sim.data, &path).map_err(runtime_err)?;
    }

    let s = &study.summary;
    println!(
        "{} replicates ({} failed), target {}, visits per subject {:.2} ({}-{})",
        s.n_replicates, s.n_failed, s.target, s.visits.mean, s.visits.min, s.visits.max
    );
    println!("{:<6} {:>10} {:>10} {:>10} {:>10}", "", "mean", "bias", "variance", "mse");
    for e in &s.estimators {
        println!(
            "{:<6} {:>10.4} {:>10.4} {:>10.4} {:>10.4}",
            e.estimator.name(),
            e.mean,
            e.bias,
            e.variance,
            e.mse
        );
    }
    for warning in &s.warnings {
        eprintln!("warning: {warning}");
    }

    manifest.configuration = serde_json::to_value(&config).map_err(runtime_err)?;
    manifest.seeds = vec![config.seed];
    out.finish(manifest)?;
    Ok(())
}

pub fn target(a: &TargetArgs) -> Result<(), Failure> {
    let mut manifest = Manifest::start("target");
    if a.n == 0 || a.reps == 0 {
        return Err(config_err(anyhow!("--n and --reps must be positive")));
    }
    let t = monte_carlo_target(a.n, a.reps, a.seed).map_err(study_err)?;
    println!("log OR, higher category:  {}", fmt_f64(t.log_or_higher));
    println!("log OR, Y <= j:           {}", fmt_f64(t.log_or_leq));
    println!("Monte Carlo standard error: {}", fmt_f64(t.mc_standard_error));
    println!("replicates: {} ({} failed)", t.replicates.len(), t.n_failed);
    if let Some(dir) = &a.out {
        let mut out = OutputDir::create(dir)?;
        out.write_json("target.json", &t)?;
        manifest.configuration = serde_json::json!({ "n": a.n, "reps": a.reps, "seed": a.seed });
        manifest.seeds = vec![a.seed];
        out.finish(manifest)?;
    }
    Ok(())
}

/// Column names and roles for `estimate`.
#[derive(Clone, Debug, Serialize)]
struct EstimateConfig {
    id: String,
    time: String,
    at_risk: String,
    visit: String,
    exposure: String,
    outcome: String,
    n_categories: Option<usize>,
    confounders: Vec<String>,
    monitoring: Vec<String>,
    ipt: String,
    bins: String,
    gps_records: String,
    truncate: Option<(f64, f64)>,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        let s = CsvSchema::default();
        Self {
            id: s.id,
            time: s.time,
            at_risk: s.at_risk,
            visit: s.visit,
            exposure: s.exposure,
            outcome: s.outcome,
            n_categories: None,
            confounders: Vec::new(),
            monitoring: Vec::new(),
            ipt: "continuous".into(),
            bins: "quantiles:5".into(),
            gps_records: "visits".into(),
            truncate: None,
        }
    }
}

fn name_list(v: &str) -> Vec<String> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
}

impl EstimateConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<(), Failure> {
        let value = value.trim();
        match key {
            "id" => self.id = value.into(),
            "time" => self.time = value.into(),
            "at_risk" => self.at_risk = value.into(),
            "visit" => self.visit = value.into(),
            "exposure" => self.exposure = value.into(),
            "outcome" => self.outcome = value.into(),
            "n_categories" => {
                self.n_categories = Some(
                    value
                        .parse()
                        .map_err(|_| config_err(anyhow!("n_categories: `{value}` is not a count")))?,
                )
            }
            "confounders" => self.confounders = name_list(value),
            "monitoring" => self.monitoring = name_list(value),
            "ipt" => self.ipt = value.into(),
            "bins" => self.bins = value.into(),
            "gps_records" => self.gps_records = value.into(),
            "truncate" => {
                let v: Vec<f64> = value
                    .split(',')
                    .map(|x| x.trim().parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| config_err(anyhow!("truncate: expected two percentiles")))?;
                let [lo, hi] = v[..] else {
                    return Err(config_err(anyhow!("truncate: expected two percentiles")));
                };
                self.truncate = Some((lo, hi));
            }
            _ => return Err(config_err(anyhow!("unknown roles key `{key}`"))),
        }
        Ok(())
    }

    fn parse(text: &str) -> Result<Self, Failure> {
        let mut c = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| config_err(anyhow!("line {}: expected key = value", i + 1)))?;
            c.set(k.trim(), v)?;
        }
        Ok(c)
    }

    fn schema(&self) -> CsvSchema {
        CsvSchema {
            id: self.id.clone(),
            time: self.time.clone(),
            at_risk: self.at_risk.clone(),
            visit: self.visit.clone(),
            exposure: self.exposure.clone(),
            outcome: self.outcome.clone(),
            n_categories: self.n_categories,
        }
    }

    fn role(&self, name: &str) -> String {
        if name == self.exposure {
            EXPOSURE_NAME.into()
        } else {
            name.into()
        }
    }

    fn spec(&self) -> Result<EstimatorSpec, Failure> {
        let roles = Roles {
            exposure: EXPOSURE_NAME.into(),
            confounders: self.confounders.iter().map(|n| self.role(n)).collect(),
            monitoring: self.monitoring.iter().map(|n| self.role(n)).collect(),
        };
        let mut spec = EstimatorSpec::new(Estimator::Iptmp, roles);
        spec.ipt_kind = match self.ipt.as_str() {
            "continuous" => IptKind::Continuous,
            "binned" => IptKind::Binned(self.bins.parse::<BinSpec>().map_err(config_err)?),
            other => return Err(config_err(anyhow!("unknown ipt kind `{other}`"))),
        };
        spec.gps_records = match self.gps_records.as_str() {
            "visits" => GpsRecords::Visits,
            "at-risk" => GpsRecords::AtRisk,
            other => return Err(config_err(anyhow!("unknown gps_records `{other}`"))),
        };
        spec.truncation = self.truncate;
        Ok(spec)
    }
}

fn parse_estimators(s: &str) -> Result<Vec<Estimator>, Failure> {
    let mut out: Vec<Estimator> = Vec::new();
    for name in name_list(s) {
        let e: Estimator = name.parse().map_err(|m: String| config_err(anyhow!(m)))?;
        if !out.contains(&e) {
            out.push(e);
        }
    }
    if out.is_empty() {
        return Err(config_err(anyhow!("no estimators selected")));
    }
    Ok(out)
}

#[derive(Serialize)]
struct IntervalReport {
    replicates: usize,
    n_failed: usize,
    level: f64,
    /// Percentile bounds of `log_or_higher`.
    ci_lower: f64,
    ci_upper: f64,
}

#[derive(Serialize)]
struct EstimateReport {
    estimator: Estimator,
    log_or_higher: f64,
    log_or_leq: f64,
    or_higher: f64,
    or_leq: f64,
    alphas: Vec<f64>,
    n_visit_records: usize,
    weights: WeightSummary,
    positivity_warnings: usize,
    bootstrap: Option<IntervalReport>,
}

#[derive(Serialize)]
struct IntensityReport {
    names: Vec<String>,
    gamma: Vec<f64>,
    rate_ratios: Vec<f64>,
}

#[derive(Serialize)]
struct EstimateOutput {
    data: String,
    exposure_transform: &'static str,
    n_subjects: usize,
    n_records: usize,
    n_categories: usize,
    intensity: Option<IntensityReport>,
    estimates: Vec<EstimateReport>,
}

pub fn estimate(a: &EstimateArgs) -> Result<(), Failure> {
    let mut manifest = Manifest::start("estimate");
    let mut config = match &a.config {
        Some(path) => EstimateConfig::parse(&read_text(path)?)?,
        None => EstimateConfig::default(),
    };
    for s in &a.set {
        let (k, v) = split_assignment(s)?;
        config.set(k, v)?;
    }
    if let Some(ipt) = &a.ipt {
        config.ipt = ipt.clone();
    }
    if let Some(bins) = &a.bins {
        config.bins = bins.clone();
    }
    let estimators = parse_estimators(&a.estimators)?;
    let units: Vec<f64> = name_list(&a.or_units)
        .iter()
        .map(|u| u.parse::<f64>().ok().filter(|v| v.is_finite()))
        .collect::<Option<_>>()
        .ok_or_else(|| config_err(anyhow!("--or-units must be a list of numbers")))?;
    if a.curve_points < 2 {
        return Err(config_err(anyhow!("--curve-points must be at least 2")));
    }
    if let Some(b) = a.bootstrap {
        if b < 2 {
            return Err(config_err(anyhow!("--bootstrap needs at least 2 replicates")));
        }
        if !(a.level > 0.0 && a.level < 1.0) {
            return Err(config_err(anyhow!("--level must lie in (0, 1)")));
        }
    }
    let base = config.spec()?;

    let mut data = load_csv(&a.data, &config.schema()).map_err(|e: PanelError| config_err(e))?;
    if a.log2_exposure {
        data = data.with_log2_exposure().map_err(config_err)?;
    }

    let specs: Vec<(Estimator, EstimatorSpec)> = estimators.iter().map(|&e| (e, base.for_estimator(e))).collect();
    let intensity = if specs.iter().any(|(_, s)| s.use_iiv) {
        Some(fit_intensity(&data, &base.roles).map_err(estimation_err)?)
    } else {
        None
    };
    let exposure = if specs.iter().any(|(_, s)| s.use_ipt) {
        Some(fit_exposure_model(&data, &base).map_err(estimation_err)?)
    } else {
        None
    };
    let mut results: Vec<(Estimator, EstimatorResult, Option<BootstrapResult>)> = Vec::new();
    for (est, spec) in &specs {
        let r = estimate_with(&data, spec, intensity.as_ref(), exposure.as_ref()).map_err(estimation_err)?;
        let boot = match a.bootstrap {
            Some(b) => Some(bootstrap_ci(&data, spec, b, a.level, a.seed).map_err(bootstrap_err)?),
            None => None,
        };
        results.push((*est, r, boot));
    }

    let mut out = OutputDir::create(&a.out)?;
    let report = EstimateOutput {
        data: a.data.display().to_string(),
        exposure_transform: if a.log2_exposure { "log2(x + 1)" } else { "identity" },
        n_subjects: data.n_subjects(),
        n_records: data.records().len(),
        n_categories: data.n_categories(),
        intensity: intensity.as_ref().map(|f| IntensityReport {
            names: f.names.clone(),
            gamma: f.gamma.clone(),
            rate_ratios: f.rate_ratios().into_iter().map(|(_, r)| r).collect(),
        }),
        estimates: results
            .iter()
            .map(|(est, r, boot)| EstimateReport {
                estimator: *est,
                log_or_higher: r.log_or_higher,
                log_or_leq: r.log_or_leq,
                or_higher: r.log_or_higher.exp(),
                or_leq: r.log_or_leq.exp(),
                alphas: r.pom_fit.alphas.clone(),
                n_visit_records: r.n_records,
                weights: r.weight_summary,
                positivity_warnings: r.positivity_warnings,
                bootstrap: boot.as_ref().map(|b| IntervalReport {
                    replicates: b.replicates.len(),
                    n_failed: b.n_failed,
                    level: b.level,
                    ci_lower: b.ci_lower,
                    ci_upper: b.ci_upper,
                }),
            })
            .collect(),
    };
    out.write_json("results.json", &report)?;

    if let Some(fit) = &intensity {
        let mut w = out.csv("rate_ratios.csv")?;
        w.write_record(["covariate", "log_rate_ratio", "rate_ratio"]).map_err(csv_err)?;
        for (name, g) in fit.names.iter().zip(&fit.gamma) {
            w.write_record([name.clone(), fmt_f64(*g), fmt_f64(g.exp())]).map_err(csv_err)?;
        }
        w.flush().map_err(csv_err)?;
    }

    let mut w = out.csv("odds_ratios.csv")?;
    w.write_record([
        "estimator",
        "units",
        "or_higher",
        "or_leq",
        "or_higher_ci_lower",
        "or_higher_ci_upper",
    ])
    .map_err(csv_err)?;
    for (est, r, boot) in &results {
        for &k in &units {
            let pair = r.pom_fit.marginal_or(0, k).map_err(runtime_err)?;
            let (lo, hi) = match boot {
                Some(b) => {
                    let (x, y) = ((b.ci_lower * k).exp(), (b.ci_upper * k).exp());
                    (fmt_f64(x.min(y)), fmt_f64(x.max(y)))
                }
                None => (String::new(), String::new()),
            };
            w.write_record([est.to_string(), fmt_f64(k), fmt_f64(pair.or_higher), fmt_f64(pair.or_leq), lo, hi])
                .map_err(csv_err)?;
        }
    }
    w.flush().map_err(csv_err)?;

    let exposures: Vec<f64> = data
        .records()
        .iter()
        .filter(|r| r.is_observed_visit())
        .map(|r| r.exposure)
        .collect();
    let lo = exposures.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = exposures.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let n = a.curve_points;
    let grid: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
    let mut w = out.csv("probability_curves.csv")?;
    w.write_record(["estimator", "exposure", "threshold", "probability_at_least"])
        .map_err(csv_err)?;
    for (est, r, _) in &results {
        for threshold in 2..=data.n_categories() {
            let curve = r.pom_fit.probability_curve(0, &[0.0], &grid, threshold).map_err(runtime_err)?;
            for (x, p) in grid.iter().zip(curve) {
                w.write_record([est.to_string(), fmt_f64(*x), threshold.to_string(), fmt_f64(p)])
                    .map_err(csv_err)?;
            }
        }
    }
    w.flush().map_err(csv_err)?;

    if a.bootstrap.is_some() {
        let mut w = out.csv("bootstrap_replicates.csv")?;
        w.write_record(["estimator", "draw", "log_or_higher"]).map_err(csv_err)?;
        for (est, _, boot) in &results {
            for (i, v) in boot.iter().flat_map(|b| b.replicates.iter().enumerate()) {
                w.write_record([est.to_string(), i.to_string(), fmt_f64(*v)]).map_err(csv_err)?;
            }
        }
        w.flush().map_err(csv_err)?;
    }

    for e in &report.estimates {
        let ci = e
            .bootstrap
            .as_ref()
            .map(|b| format!("  [{:.4}, {:.4}]", b.ci_lower, b.ci_upper))
            .unwrap_or_default();
        println!("{:<6} log OR (higher) {:>9.4}{ci}", e.estimator.name(), e.log_or_higher);
    }

    manifest.configuration = serde_json::json!({
        "roles": config,
        "estimators": estimators,
        "log2_exposure": a.log2_exposure,
        "bootstrap": a.bootstrap,
        "level": a.level,
        "or_units": units,
        "curve_points": a.curve_points,
    });
    manifest.seeds = vec![a.seed];
    out.finish(manifest)?;
    Ok(())
}

fn summary_files(inputs: &[PathBuf]) -> Result<Vec<PathBuf>, Failure> {
    let mut files = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let own = input.join("summary.json");
            if own.is_file() {
                files.push(own);
            }
            let mut subdirs: Vec<PathBuf> = fs::read_dir(input)
                .with_context(|| format!("reading {}", input.display()))
                .map_err(config_err)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.join("summary.json").is_file())
                .collect();
            subdirs.sort();
            files.extend(subdirs.into_iter().map(|p| p.join("summary.json")));
        } else if input.is_file() {
            files.push(input.clone());
        } else {
            return Err(config_err(anyhow!("{} does not exist", input.display())));
        }
    }
    if files.is_empty() {
        return Err(config_err(anyhow!("no study summaries found")));
    }
    Ok(files)
}

fn scenario_label(file: &Path) -> String {
    if file.file_name().is_some_and(|n| n == "summary.json") {
        if let Some(dir) = file.parent().and_then(Path::file_name) {
            return dir.to_string_lossy().into_owned();
        }
    }
    file.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn read_replicates(path: &Path) -> Result<Vec<(usize, Estimator, f64)>, Failure> {
    let mut reader = csv::Reader::from_path(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(config_err)?;
    let mut rows = Vec::new();
    for row in reader.records() {
        let row = row.map_err(config_err)?;
        let bad = || config_err(anyhow!("{}: malformed row", path.display()));
        let r: usize = row.get(0).and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        let e: Estimator = row.get(1).and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        let v: f64 = row.get(2).and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        rows.push((r, e, v));
    }
    Ok(rows)
}

const TABLE_ORDER: [Estimator; 4] = [Estimator::Iptmp, Estimator::Iivp, Estimator::Iptp, Estimator::Pom];
const AGREEMENT: f64 = 1e-12;

type Scenario = (String, ScenarioSummary, Vec<(usize, Estimator, f64)>);

pub fn report(a: &ReportArgs) -> Result<(), Failure> {
    let mut manifest = Manifest::start("report");
    let files = summary_files(&a.inputs)?;
    let mut scenarios: Vec<Scenario> = Vec::new();
    for file in &files {
        let summary: ScenarioSummary = serde_json::from_str(&read_text(file)?)
            .with_context(|| format!("parsing {}", file.display()))
            .map_err(config_err)?;
        let csv_path = file.with_file_name("replicates.csv");
        let rows = if csv_path.is_file() { read_replicates(&csv_path)? } else { Vec::new() };
        if !rows.is_empty() {
            let mut grouped: BTreeMap<Estimator, Vec<f64>> = BTreeMap::new();
            for &(_, e, v) in &rows {
                grouped.entry(e).or_default().push(v);
            }
            for s in &summary.estimators {
                let values = grouped.get(&s.estimator).map(Vec::as_slice).unwrap_or(&[]);
                let again = EstimatorSummary::from_estimates(s.estimator, values, summary.target);
                let close = |x: f64, y: f64| (x - y).abs() <= AGREEMENT * (1.0 + y.abs());
                if values.is_empty()
                    || !close(again.bias, s.bias)
                    || !close(again.variance, s.variance)
                    || !close(again.mse, s.mse)
                {
                    return Err(runtime_err(anyhow!(
                        "{}: replicate estimates of {} disagree with the summary",
                        csv_path.display(),
                        s.estimator
                    )));
                }
            }
        }
        scenarios.push((scenario_label(file), summary, rows));
    }

    let mut out = OutputDir::create(&a.out)?;
    let mut w = out.csv("table.csv")?;
    let mut header: Vec<String> = [
        "scenario",
        "confounded",
        "gamma_d",
        "gamma_z",
        "n_subjects",
        "n_replicates",
        "mean_visits",
        "min_visits",
        "max_visits",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for stat in ["bias", "variance", "mse"] {
        header.extend(TABLE_ORDER.iter().map(|e| format!("{stat}_{e}")));
    }
    w.write_record(&header).map_err(csv_err)?;
    for (label, s, _) in &scenarios {
        let mut row = vec![
            label.clone(),
            s.config.confounded.to_string(),
            fmt_f64(s.config.gamma_d),
            fmt_f64(s.config.gamma_z),
            s.config.n_subjects.to_string(),
            s.n_replicates.to_string(),
            fmt_f64(s.visits.mean),
            s.visits.min.to_string(),
            s.visits.max.to_string(),
        ];
        for stat in 0..3 {
            for e in TABLE_ORDER {
                let es = s
                    .estimators
                    .iter()
                    .find(|x| x.estimator == e)
                    .ok_or_else(|| config_err(anyhow!("scenario {label} lacks estimator {e}")))?;
                row.push(fmt_f64([es.bias, es.variance, es.mse][stat]));
            }
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(csv_err)?;

    let mut w = out.csv("boxplot.csv")?;
    w.write_record(["scenario", "confounded", "n_subjects", "replicate", "estimator", "log_or_higher", "target"])
        .map_err(csv_err)?;
    for (label, s, rows) in &scenarios {
        for (r, e, v) in rows {
            w.write_record([
                label.clone(),
                s.config.confounded.to_string(),
                s.config.n_subjects.to_string(),
                r.to_string(),
                e.to_string(),
                fmt_f64(*v),
                fmt_f64(s.target),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(csv_err)?;

    println!("{} scenarios written to {}", scenarios.len(), a.out.display());
    manifest.configuration = serde_json::json!({
        "inputs": files.iter().map(|f| f.display().to_string()).collect::<Vec<_>>(),
    });
    out.finish(manifest)?;
    Ok(())
}
