use ordcausal::simulator::{
    run_replicate, simulate_visits_only, summarize, EstimatorSummary, ExposureLaw, ScenarioConfig,
};
use ordcausal::{run_study, simulate_dataset, Estimator};
use proptest::prelude::*;

fn config(n: usize) -> ScenarioConfig {
    ScenarioConfig {
        n_subjects: n,
        confounded: true,
        gamma_d: 0.2,
        gamma_z: 1.0,
        seed: 31,
        ..ScenarioConfig::default()
    }
}

#[test]
fn study_is_identical_across_worker_counts() {
    let c = config(100);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_study(&c, 6, -1.4).unwrap())
    };
    let one = run(1);
    let four = run(4);
    assert_eq!(one, four);
    assert_eq!(
        serde_json::to_string(&one.summary).unwrap(),
        serde_json::to_string(&four.summary).unwrap()
    );
}

#[test]
fn rows_reproduce_the_summary() {
    let c = config(100);
    let out = run_study(&c, 5, -1.4).unwrap();
    let rows = out.rows();
    assert_eq!(rows.len(), 4 * (5 - out.summary.n_failed));
    for s in &out.summary.estimators {
        let values: Vec<f64> = rows.iter().filter(|r| r.1 == s.estimator).map(|r| r.2).collect();
        assert_eq!(&EstimatorSummary::from_estimates(s.estimator, &values, -1.4), s);
    }
    let again = summarize(&c, &out.replicates, -1.4).unwrap();
    assert_eq!(again, out.summary);
}

#[test]
fn informative_monitoring_raises_visit_counts() {
    let base = ScenarioConfig {
        n_subjects: 400,
        ..ScenarioConfig::default()
    };
    let mut informative = base.clone();
    informative.gamma_z = 1.0;
    let visits = |c: &ScenarioConfig| simulate_dataset(c, 3).unwrap().data.visit_records().records().len();
    assert!(visits(&informative) as f64 > 2.0 * visits(&base) as f64);
}

#[test]
fn skewed_exposure_is_positive_and_binned_study_runs() {
    let mut c = config(150);
    c.exposure_law = ExposureLaw::ExpNormal;
    c.ipt = "binned".into();
    c.bins = "quantiles:5".into();
    let sim = simulate_dataset(&c, 8).unwrap();
    assert!(sim.data.records().iter().all(|r| r.exposure > 0.0));
    let rep = run_replicate(&c, 0).unwrap();
    assert!(rep.estimates.is_some(), "{:?}", rep.error);
}

#[test]
fn unweighted_estimates_match_visit_only_simulation() {
    let c = ScenarioConfig {
        n_subjects: 300,
        ..ScenarioConfig::default()
    };
    let seed = 17;
    let full = simulate_dataset(&c, seed).unwrap().data;
    let lazy = simulate_visits_only(&c, seed).unwrap();
    assert_eq!(full.visit_records().records(), &lazy[..]);
    let rep = run_replicate(&c, 2).unwrap();
    let [pom, iptp, ..] = rep.estimates.unwrap();
    assert!(pom.is_finite() && iptp.is_finite());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mse_decomposes(values in prop::collection::vec(-5.0f64..5.0, 1..60), target in -3.0f64..3.0) {
        let s = EstimatorSummary::from_estimates(Estimator::Iptmp, &values, target);
        prop_assert!((s.mse - (s.bias * s.bias + s.variance)).abs() <= 1e-10);
        prop_assert!(s.variance >= 0.0);
    }

    #[test]
    fn scenario_text_round_trips(
        n in 1usize..5000,
        confounded in any::<bool>(),
        gd in -2.0f64..2.0,
        gz in -2.0f64..2.0,
        sd in 0.01f64..3.0,
        seed in any::<u64>(),
    ) {
        let c = ScenarioConfig {
            n_subjects: n,
            confounded,
            gamma_d: gd,
            gamma_z: gz,
            exposure_sd: sd,
            seed,
            ..ScenarioConfig::default()
        };
        prop_assert_eq!(ScenarioConfig::from_kv_str(&c.to_kv_string()).unwrap(), c);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn simulation_is_a_function_of_its_seed(seed in any::<u64>(), n in 1usize..6) {
        let c = ScenarioConfig { n_subjects: n, ..config(n) };
        let a = simulate_dataset(&c, seed).unwrap();
        let b = simulate_dataset(&c, seed).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.data.validate().is_valid());
        for r in a.data.records() {
            prop_assert_eq!(r.outcome.is_some(), r.visit);
            prop_assert!(r.covariates[3] == 0.0 || r.covariates[3] == 1.0);
        }
    }
}
