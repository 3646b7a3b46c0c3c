//! Acceptance suite: one PASS/FAIL line per criterion.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use ordcausal::bootstrap::{bootstrap_ci, cluster_resample};
use ordcausal::estimators::{fit_exposure_model, fit_intensity, simulation_roles, ExposureModel};
use ordcausal::gps::{bin_index, fit_exposure_models, BinSpec};
use ordcausal::numopt::{finite_diff_gradient, finite_diff_jacobian};
use ordcausal::pom::{pack_params, pom_objective};
use ordcausal::simulator::{
    monte_carlo_target, simulate_dataset, ExposureLaw, ScenarioSummary, StudyOutput, DEFAULT_TARGET_LOG_OR,
};
use ordcausal::{
    estimate_all_four, fit_pom, run_study, Estimator, EstimatorSpec, IptKind, PanelDataset, PanelRecord,
    PomFit, Roles, ScenarioConfig, SubjectId,
};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

const REFERENCE_TARGET: f64 = -1.061;
const TARGET_SEED: u64 = 20_240_601;

struct Report {
    failures: usize,
}

impl Report {
    fn line(&mut self, id: &str, pass: bool, text: String) {
        if !pass {
            self.failures += 1;
        }
        println!("[{}] {id}: {text}", if pass { "PASS" } else { "FAIL" });
    }

    fn note(&self, text: String) {
        println!("       {text}");
    }
}

fn within(x: f64, lo: f64, hi: f64) -> bool {
    (lo..=hi).contains(&x)
}

fn study(confounded: bool, gamma: (f64, f64), n: usize, reps: usize, seed: u64, target: f64) -> (StudyOutput, Duration) {
    let config = ScenarioConfig {
        n_subjects: n,
        confounded,
        gamma_d: gamma.0,
        gamma_z: gamma.1,
        seed,
        ..ScenarioConfig::default()
    };
    let t = Instant::now();
    let out = run_study(&config, reps, target).expect("study runs");
    (out, t.elapsed())
}

fn describe(s: &ScenarioSummary) -> String {
    s.estimators
        .iter()
        .map(|e| {
            format!(
                "{} bias {:.3} var {:.3} mse {:.3}",
                e.estimator, e.bias, e.variance, e.mse
            )
        })
        .collect::<Vec<_>>()
        .join("; ")
}

fn bias(s: &ScenarioSummary, e: Estimator) -> f64 {
    s.get(e).bias
}

fn criterion_1(r: &mut Report) -> f64 {
    let small = monte_carlo_target(2000, 100, TARGET_SEED).expect("target");
    r.line(
        "1a target n=2000 reps=100",
        (small.log_or_higher - REFERENCE_TARGET).abs() <= 0.03,
        format!(
            "log OR {:.4} (MC se {:.4}) vs {REFERENCE_TARGET} +/- 0.03",
            small.log_or_higher, small.mc_standard_error
        ),
    );
    let t = Instant::now();
    let full = monte_carlo_target(10_000, 1000, TARGET_SEED).expect("target");
    let elapsed = t.elapsed();
    r.line(
        "1b target n=10000 reps=1000",
        (full.log_or_higher - REFERENCE_TARGET).abs() <= 0.01,
        format!(
            "log OR {:.4} (MC se {:.4}) vs {REFERENCE_TARGET} +/- 0.01",
            full.log_or_higher, full.mc_standard_error
        ),
    );
    r.line(
        "1c target runtime",
        elapsed < Duration::from_secs(600),
        format!("{:.1} s (limit 600 s)", elapsed.as_secs_f64()),
    );
    r.note(format!(
        "pinned default target {DEFAULT_TARGET_LOG_OR:.6}, recomputed {:.6}",
        full.log_or_higher
    ));
    full.log_or_higher
}

fn criterion_2(r: &mut Report, target: f64) -> ScenarioSummary {
    let (out, elapsed) = study(false, (0.2, 1.0), 250, 300, 2_001, target);
    let s = out.summary;
    r.note(format!(
        "no confounding, gamma (0.2, 1): visits {:.2} ({}-{}); {}",
        s.visits.mean,
        s.visits.min,
        s.visits.max,
        describe(&s)
    ));
    r.line(
        "2a weighted-for-monitoring bias",
        bias(&s, Estimator::Iptmp) <= 0.03 && bias(&s, Estimator::Iivp) <= 0.03,
        format!(
            "IPTMP {:.4}, IIVP {:.4} (limit 0.03)",
            bias(&s, Estimator::Iptmp),
            bias(&s, Estimator::Iivp)
        ),
    );
    r.line(
        "2b unweighted-for-monitoring bias",
        within(bias(&s, Estimator::Pom), 0.25, 0.39) && within(bias(&s, Estimator::Iptp), 0.25, 0.39),
        format!(
            "POM {:.4}, IPTP {:.4} (range [0.25, 0.39])",
            bias(&s, Estimator::Pom),
            bias(&s, Estimator::Iptp)
        ),
    );
    let vars: Vec<f64> = s.estimators.iter().map(|e| e.variance).collect();
    r.line(
        "2c variances",
        vars.iter().all(|&v| within(v, 0.01, 0.04)),
        format!("{vars:.4?} (range [0.01, 0.04])"),
    );
    r.line(
        "2d study runtime",
        elapsed < Duration::from_secs(900),
        format!("{:.1} s (limit 900 s)", elapsed.as_secs_f64()),
    );
    s
}

fn criterion_3(r: &mut Report, target: f64) {
    let (out, _) = study(true, (0.0, 0.0), 250, 300, 3_001, target);
    let s = out.summary;
    r.note(format!("confounding, gamma (0, 0): {}", describe(&s)));
    r.line(
        "3a doubly weighted bias",
        bias(&s, Estimator::Iptmp) <= 0.15,
        format!("IPTMP {:.4} (limit 0.15)", bias(&s, Estimator::Iptmp)),
    );
    r.line(
        "3b unweighted-for-confounding bias",
        within(bias(&s, Estimator::Iivp), 0.20, 0.36) && within(bias(&s, Estimator::Pom), 0.20, 0.36),
        format!(
            "IIVP {:.4}, POM {:.4} (range [0.20, 0.36])",
            bias(&s, Estimator::Iivp),
            bias(&s, Estimator::Pom)
        ),
    );
    let (a, b) = (s.get(Estimator::Iptmp).variance, s.get(Estimator::Iivp).variance);
    r.line(
        "3c variance inflation",
        a >= 5.0 * b,
        format!("var IPTMP {a:.4} vs 5 x var IIVP {:.4}", 5.0 * b),
    );
}

fn criterion_4_5(r: &mut Report, target: f64, no_conf: &ScenarioSummary) {
    let (large, _) = study(true, (0.1, 0.5), 1000, 200, 4_001, target);
    let s = large.summary;
    r.note(format!("confounding, gamma (0.1, 0.5), n=1000: {}", describe(&s)));
    let best = bias(&s, Estimator::Iptmp);
    let others = [Estimator::Pom, Estimator::Iptp, Estimator::Iivp].map(|e| bias(&s, e));
    r.line(
        "4 consistency at scale",
        others.iter().all(|&o| best < o),
        format!("IPTMP {best:.4} vs POM/IPTP/IIVP {others:.4?}"),
    );

    let mse = |s: &ScenarioSummary, e| s.get(e).mse;
    r.line(
        "5a MSE ordering without confounding",
        mse(no_conf, Estimator::Iptmp) <= mse(no_conf, Estimator::Pom)
            && mse(no_conf, Estimator::Iptmp) <= mse(no_conf, Estimator::Iptp),
        format!(
            "IPTMP {:.4}, POM {:.4}, IPTP {:.4}",
            mse(no_conf, Estimator::Iptmp),
            mse(no_conf, Estimator::Pom),
            mse(no_conf, Estimator::Iptp)
        ),
    );
    let (small, _) = study(true, (0.1, 0.5), 250, 300, 5_001, target);
    let ratio = |s: &ScenarioSummary| mse(s, Estimator::Iptmp) / mse(s, Estimator::Iivp);
    let (r250, r1000) = (ratio(&small.summary), ratio(&s));
    r.line(
        "5b MSE gap shrinks with n under confounding",
        r1000 < r250,
        format!("MSE(IPTMP)/MSE(IIVP): n=250 {r250:.3}, n=1000 {r1000:.3}"),
    );
}

fn random_pom_instance(rng: &mut StdRng, n: usize, p: usize, j: usize) -> (DMatrix<f64>, Vec<usize>, Vec<f64>) {
    let x = DMatrix::from_fn(n, p, |_, _| rng.random_range(-2.0..2.0));
    let y = (0..n).map(|_| rng.random_range(1..=j)).collect();
    let w = (0..n).map(|_| rng.random_range(0.2..2.0)).collect();
    (x, y, w)
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

fn check_derivatives() -> (f64, f64) {
    let mut rng = StdRng::seed_from_u64(61);
    let (mut worst_g, mut worst_h) = (0.0f64, 0.0f64);
    for case in 0..10 {
        let j = 3 + case % 2;
        let (x, y, w) = random_pom_instance(&mut rng, 40, 2, j);
        let alphas: Vec<f64> = (0..j - 1).map(|i| -1.0 + i as f64 + rng.random_range(0.0..0.5)).collect();
        let beta = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let params = pack_params(&alphas, &beta).unwrap();
        let eval = pom_objective(&params, &x, &y, &w, j).unwrap();
        let g = finite_diff_gradient(|p| pom_objective(p, &x, &y, &w, j).unwrap().value, &params, 1e-5).unwrap();
        let h = finite_diff_jacobian(
            |p| pom_objective(p, &x, &y, &w, j).unwrap().gradient.as_slice().to_vec(),
            &params,
            1e-5,
        )
        .unwrap();
        worst_g = worst_g.max(rel_err(&g, eval.gradient.as_slice()));
        worst_h = worst_h.max(rel_err(h.as_slice(), eval.hessian.as_slice()));
    }
    (worst_g, worst_h)
}

/// Weighted logistic regression of `1{y = 1}` by IRLS; returns `(intercept, slopes)`.
fn logistic_irls(x: &DMatrix<f64>, y: &[usize], w: &[f64]) -> (f64, Vec<f64>) {
    let (n, p) = x.shape();
    let design = DMatrix::from_fn(n, p + 1, |i, c| if c == 0 { 1.0 } else { x[(i, c - 1)] });
    let mut theta = DVector::zeros(p + 1);
    for _ in 0..100 {
        let eta = &design * &theta;
        let mut grad = DVector::zeros(p + 1);
        let mut info = DMatrix::zeros(p + 1, p + 1);
        for i in 0..n {
            let mu = 1.0 / (1.0 + (-eta[i]).exp());
            let t = if y[i] == 1 { 1.0 } else { 0.0 };
            let row = design.row(i).transpose();
            grad += &row * (w[i] * (t - mu));
            info += &row * row.transpose() * (w[i] * mu * (1.0 - mu));
        }
        let step = info.cholesky().unwrap().solve(&grad);
        theta += &step;
        if step.amax() < 1e-14 {
            break;
        }
    }
    (theta[0], theta.iter().skip(1).map(|v| -v).collect())
}

fn check_logistic_oracle() -> f64 {
    let mut rng = StdRng::seed_from_u64(62);
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let (x, y, w) = random_pom_instance(&mut rng, 200, 2, 2);
        let fit = fit_pom(&x, &y, &w, 2).unwrap();
        let (a, b) = logistic_irls(&x, &y, &w);
        worst = worst.max((fit.alphas[0] - a).abs());
        for (u, v) in fit.beta.iter().zip(&b) {
            worst = worst.max((u - v).abs());
        }
    }
    worst
}

fn grid_maximize(x: &DMatrix<f64>, y: &[usize], start: [f64; 3]) -> [f64; 3] {
    let loglik = |a1: f64, a2: f64, b: f64| -> f64 {
        if a2 <= a1 {
            return f64::NEG_INFINITY;
        }
        let cdf = |a: f64, lin: f64| 1.0 / (1.0 + (lin - a).exp());
        (0..y.len())
            .map(|i| {
                let lin = b * x[(i, 0)];
                let p = match y[i] {
                    1 => cdf(a1, lin),
                    2 => cdf(a2, lin) - cdf(a1, lin),
                    _ => 1.0 - cdf(a2, lin),
                };
                p.ln()
            })
            .sum()
    };
    let mut center = start;
    let mut half = 4.0;
    for _ in 0..40 {
        let mut best = (f64::NEG_INFINITY, center);
        for i in -10..=10 {
            for j in -10..=10 {
                for k in -10..=10 {
                    let c = [
                        center[0] + half * i as f64 / 10.0,
                        center[1] + half * j as f64 / 10.0,
                        center[2] + half * k as f64 / 10.0,
                    ];
                    let v = loglik(c[0], c[1], c[2]);
                    if v > best.0 {
                        best = (v, c);
                    }
                }
            }
        }
        center = best.1;
        half *= 0.6;
    }
    center
}

fn check_grid_oracle() -> (usize, f64) {
    let mut rng = StdRng::seed_from_u64(63);
    let (mut checked, mut worst) = (0, 0.0f64);
    while checked < 5 {
        let x = DMatrix::from_fn(8, 1, |_, _| rng.random_range(-2.0..2.0));
        let y: Vec<usize> = (0..8).map(|_| rng.random_range(1..=3)).collect();
        let Ok(fit) = fit_pom(&x, &y, &[1.0; 8], 3) else {
            continue;
        };
        if (1..=3).any(|c| !y.contains(&c)) || fit.beta[0].abs() > 5.0 {
            continue;
        }
        let g = grid_maximize(&x, &y, [-1.0, 1.0, 0.0]);
        let fitted = [fit.alphas[0], fit.alphas[1], fit.beta[0]];
        worst = worst.max(g.iter().zip(&fitted).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())));
        checked += 1;
    }
    (checked, worst)
}

fn check_or_identity() -> (f64, bool) {
    let fit = PomFit::from_parameters(vec![-0.4, 1.1], vec![-1.061]).unwrap();
    let one = fit.marginal_or(0, 1.0).unwrap();
    let mut worst = 0.0f64;
    for k in 2..=10 {
        let kth = fit.marginal_or(0, k as f64).unwrap();
        worst = worst.max((kth.or_higher / one.or_higher.powi(k) - 1.0).abs());
        worst = worst.max((kth.or_leq / one.or_leq.powi(k) - 1.0).abs());
    }
    let data = simulate_dataset(
        &ScenarioConfig {
            n_subjects: 200,
            ..ScenarioConfig::default()
        },
        5,
    )
    .unwrap()
    .data;
    let results = estimate_all_four(&data, &EstimatorSpec::new(Estimator::Iptmp, simulation_roles())).unwrap();
    let exact = results.iter().all(|(_, r)| r.log_or_leq == -r.log_or_higher);
    (worst, exact)
}

fn check_intensity_recovery() -> Vec<f64> {
    let config = ScenarioConfig {
        n_subjects: 2000,
        gamma_d: 0.2,
        gamma_z: 1.0,
        seed: 6_001,
        ..ScenarioConfig::default()
    };
    let data = simulate_dataset(&config, 6_001).unwrap().data;
    fit_intensity(&data, &simulation_roles()).unwrap().gamma
}

fn weighted_corr(x: &[f64], y: &[f64], w: &[f64]) -> f64 {
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let my = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for ((a, b), c) in x.iter().zip(y).zip(w) {
        sxy += c * (a - mx) * (b - my);
        sxx += c * (a - mx) * (a - mx);
        syy += c * (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// One record per subject (the first grid time) of a confounded dataset.
fn first_records(n: usize, law: ExposureLaw, seed: u64) -> (Vec<f64>, DMatrix<f64>) {
    let config = ScenarioConfig {
        n_subjects: n,
        confounded: true,
        exposure_law: law,
        tau: 0.01,
        ..ScenarioConfig::default()
    };
    let data = simulate_dataset(&config, seed).unwrap().data;
    let d = data.records().iter().map(|r| r.exposure).collect();
    let k = DMatrix::from_fn(n, 3, |i, j| data.records()[i].covariates[j]);
    (d, k)
}

fn check_ipt_weights() -> (f64, Vec<f64>) {
    let (d, k) = first_records(5000, ExposureLaw::Normal, 7_001);
    let fit = fit_exposure_models(&d, &k, None).unwrap();
    let w: Vec<f64> = (0..d.len())
        .map(|i| fit.weight(d[i], &[k[(i, 0)], k[(i, 1)], k[(i, 2)]]))
        .collect();
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    let corr = (0..3)
        .map(|j| weighted_corr(&d, k.column(j).as_slice(), &w).abs())
        .collect();
    (mean, corr)
}

fn one_record_panel(n: usize) -> PanelDataset {
    let records = (0..n)
        .map(|i| PanelRecord {
            subject: SubjectId(format!("p{i:04}")),
            time: 1.0,
            at_risk: true,
            visit: true,
            exposure: i as f64 / n as f64,
            covariates: vec![],
            outcome: Some(1 + i % 3),
        })
        .collect();
    PanelDataset::new(records, 3, vec![]).unwrap()
}

fn check_bootstrap() -> (f64, bool) {
    let data = one_record_panel(500);
    let draws = 10_000;
    let mut included = 0usize;
    for b in 0..draws {
        let resample = cluster_resample(&data, 90_000 + b as u64);
        let mut seen = vec![false; 500];
        for r in resample.records() {
            let id = r.subject.0.split('#').next().unwrap();
            seen[id[1..].parse::<usize>().unwrap()] = true;
        }
        included += seen.iter().filter(|&&s| s).count();
    }
    let freq = included as f64 / (draws * 500) as f64;

    let small = simulate_dataset(
        &ScenarioConfig {
            n_subjects: 120,
            ..ScenarioConfig::default()
        },
        8,
    )
    .unwrap()
    .data;
    let spec = EstimatorSpec::new(
        Estimator::Pom,
        Roles {
            exposure: "exposure".into(),
            confounders: vec![],
            monitoring: vec![],
        },
    );
    let res = bootstrap_ci(&small, &spec, 60, 0.9, 4).unwrap();
    let mut sorted = res.replicates.clone();
    sorted.sort_by(f64::total_cmp);
    let b = sorted.len();
    let lower = sorted[((0.05 * b as f64) - 1e-9).ceil() as usize - 1];
    let upper = sorted[((0.95 * b as f64) - 1e-9).ceil() as usize - 1];
    (freq, lower == res.ci_lower && upper == res.ci_upper)
}

fn check_determinism() -> bool {
    let config = ScenarioConfig {
        n_subjects: 80,
        confounded: true,
        gamma_d: 0.2,
        gamma_z: 1.0,
        seed: 99,
        ..ScenarioConfig::default()
    };
    let spec = EstimatorSpec::new(Estimator::Iptmp, simulation_roles());
    let run = || {
        let study = serde_json::to_string(&run_study(&config, 4, -1.4).unwrap()).unwrap();
        let target = serde_json::to_string(&monte_carlo_target(300, 4, 7).unwrap()).unwrap();
        let data = simulate_dataset(&config, 12).unwrap().data;
        let boot = serde_json::to_string(&bootstrap_ci(&data, &spec, 8, 0.95, 3).unwrap()).unwrap();
        (study, target, boot, data)
    };
    let pool = |n| rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
    let a = pool(1).install(run);
    let b = pool(1).install(run);
    let c = pool(4).install(run);
    a == b && a == c
}

fn criterion_6(r: &mut Report) {
    let mut all = true;
    let mut sub = |r: &mut Report, id: &str, pass: bool, text: String| {
        all &= pass;
        r.line(id, pass, text);
    };
    let (g, h) = check_derivatives();
    sub(
        r,
        "6a POM derivatives",
        g < 1e-5 && h < 1e-3,
        format!("gradient rel err {g:.2e} (< 1e-5), Hessian rel err {h:.2e} (< 1e-3), 10 instances"),
    );
    let l = check_logistic_oracle();
    sub(r, "6b two-category logistic oracle", l <= 1e-6, format!("max coefficient difference {l:.2e} (limit 1e-6)"));
    let (n, gdiff) = check_grid_oracle();
    sub(
        r,
        "6c brute-force grid oracle",
        gdiff <= 1e-3,
        format!("{n} instances of n=8, max difference {gdiff:.2e} (limit 1e-3)"),
    );
    let (or_err, exact) = check_or_identity();
    sub(
        r,
        "6d odds ratio identities",
        or_err <= 1e-12 && exact,
        format!("max relative error of OR(k)/OR(1)^k {or_err:.1e}; log_or_leq = -log_or_higher exactly: {exact}"),
    );
    let gamma = check_intensity_recovery();
    sub(
        r,
        "6e visit-intensity recovery",
        (gamma[0] - 0.2).abs() <= 0.05 && (gamma[1] - 1.0).abs() <= 0.05,
        format!("gamma {gamma:.4?} vs (0.2, 1) +/- 0.05 at n=2000"),
    );
    let (mean, corr) = check_ipt_weights();
    sub(
        r,
        "6f stabilized weights mean",
        within(mean, 0.95, 1.05),
        format!("mean {mean:.4} (range [0.95, 1.05]) at n=5000"),
    );
    sub(
        r,
        "6g stabilized weights balance",
        corr.iter().all(|&c| c <= 0.05),
        format!("|weighted corr(D, K)| {corr:.4?} (limit 0.05)"),
    );
    let (freq, order_stats) = check_bootstrap();
    sub(
        r,
        "6h cluster bootstrap",
        (freq - 0.632).abs() <= 0.01 && order_stats,
        format!("inclusion frequency {freq:.4} (0.632 +/- 0.01); bounds equal order statistics: {order_stats}"),
    );
    let det = check_determinism();
    sub(r, "6i determinism", det, format!("identical across runs and 1 vs 4 workers: {det}"));
    r.line("6 property suite", all, "all sub-checks above".into());
}

fn criterion_7(r: &mut Report) {
    let config = ScenarioConfig {
        n_subjects: 250,
        confounded: true,
        gamma_d: 0.2,
        gamma_z: 1.0,
        exposure_law: ExposureLaw::ExpNormal,
        seed: 7_101,
        ipt: "binned".into(),
        bins: "quantiles:5".into(),
        ..ScenarioConfig::default()
    };
    let data = simulate_dataset(&config, 7_101).unwrap().data;
    let spec = config.estimator_spec().unwrap();
    let completed = estimate_all_four(&data, &spec);
    let pipeline = completed.is_ok();

    let (d, k) = first_records(5000, ExposureLaw::ExpNormal, 7_201);
    let records: Vec<PanelRecord> = (0..d.len())
        .map(|i| PanelRecord {
            subject: SubjectId(format!("q{i:05}")),
            time: 0.01,
            at_risk: true,
            visit: true,
            exposure: d[i],
            covariates: vec![k[(i, 0)], k[(i, 1)], k[(i, 2)]],
            outcome: Some(1),
        })
        .collect();
    let panel = PanelDataset::new(records, 3, vec!["k1".into(), "k2".into(), "k3".into()]).unwrap();
    let mut bspec = EstimatorSpec::new(Estimator::Iptp, simulation_roles());
    bspec.ipt_kind = IptKind::Binned(BinSpec::Quantiles(5));
    let ExposureModel::Binned(fit) = fit_exposure_model(&panel, &bspec).unwrap() else {
        unreachable!("binned spec")
    };
    let w: Vec<f64> = (0..d.len())
        .map(|i| fit.weight(d[i], &[k[(i, 0)], k[(i, 1)], k[(i, 2)]]).unwrap().weight)
        .collect();
    let total: f64 = w.iter().sum();
    let gaps: Vec<f64> = (1..=fit.n_bins())
        .map(|b| {
            let share = d
                .iter()
                .zip(&w)
                .filter(|(v, _)| bin_index(&fit.upper_edges, **v) == b)
                .map(|(_, w)| w)
                .sum::<f64>()
                / total;
            (share - fit.marginal_frequencies[b - 1]).abs()
        })
        .collect();
    let bins: Vec<f64> = d.iter().map(|v| bin_index(&fit.upper_edges, *v) as f64).collect();
    let corr: Vec<f64> = (0..3)
        .map(|j| weighted_corr(&bins, k.column(j).as_slice(), &w).abs())
        .collect();
    r.note(format!("binned weights: |weighted corr(bin, K)| {corr:.4?}"));
    r.line(
        "7 binned exposure path",
        pipeline && gaps.iter().all(|&g| g <= 0.02),
        format!(
            "pipeline completes: {pipeline}; weighted bin share vs marginal frequency gaps {gaps:.4?} (limit 0.02)"
        ),
    );
    if let Err(e) = completed {
        r.note(format!("pipeline error: {e}"));
    }
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let mut r = Report { failures: 0 };
    let start = Instant::now();
    let target = criterion_1(&mut r);
    let no_conf = criterion_2(&mut r, target);
    criterion_3(&mut r, target);
    criterion_4_5(&mut r, target, &no_conf);
    criterion_6(&mut r);
    criterion_7(&mut r);
    println!(
        "acceptance: {} failing line(s), {:.1} s",
        r.failures,
        start.elapsed().as_secs_f64()
    );
    if r.failures > 0 {
        std::process::exit(1);
    }
}
