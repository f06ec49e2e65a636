use sigcorr::estimators::{
    ensemble_estimate, ergodic_estimate, importance_estimate, povm_extrapolated, povm_oracle,
    EnsembleConfig, ErgodicConfig, EstimateWithError,
};
use sigcorr::exact::{CorrelatorSpec, Engine, InitialState};
use sigcorr::filters::TestFunction;
use sigcorr::model::pauli;
use sigcorr::reference::{kxminus_filtered, QubitExampleParams, DETECTOR_MINUS, DETECTOR_X};
use sigcorr::trajectories::Scheme;
use sigcorr::{MeasurementChannel, Operator, SystemModel};

fn example() -> QubitExampleParams {
    QubitExampleParams::figure_defaults()
}

fn expo(center: f64, lambda: f64) -> TestFunction {
    TestFunction::exponential(center, lambda).unwrap()
}

#[test]
fn white_noise_variance_from_the_ensemble() {
    let model = SystemModel::new(
        2,
        None,
        vec![pauli::sigma_minus()],
        vec![MeasurementChannel::new("null", Operator::zeros(2, 2), 1.0).unwrap()],
    )
    .unwrap();
    let spec = CorrelatorSpec::filters(
        InitialState::Stationary,
        vec![(0, expo(0.0, 10.0)), (0, expo(0.0, 10.0))],
    );
    let est = ensemble_estimate(&model, &spec, &EnsembleConfig::new(10_000, 1e-3, 11)).unwrap();
    assert!(est.within(1.25, 4.0), "{est:?}");
}

#[test]
fn ensemble_matches_the_exact_cross_correlator() {
    let p = example();
    let model = p.model().unwrap();
    let spec = CorrelatorSpec::filters(
        InitialState::Stationary,
        vec![(DETECTOR_X, expo(1.0, 10.0)), (DETECTOR_MINUS, expo(0.0, 10.0))],
    );
    let exact = Engine::new(&model).full_correlator(&spec).unwrap();
    let cfg = EnsembleConfig::new(10_000, 1e-3, 5).with_scheme(Scheme::Kraus);
    let est = ensemble_estimate(&model, &spec, &cfg).unwrap();
    assert!(est.within(exact, 4.0), "{est:?} vs {exact}");
    assert!((exact - kxminus_filtered(&p, 1.0, 10.0).unwrap()).abs() < 1e-9);
}

#[test]
fn halving_dt_moves_the_ensemble_estimate_within_noise() {
    let p = example();
    let model = p.model().unwrap();
    let spec = CorrelatorSpec::filters(
        InitialState::Density(p.initial_state()),
        vec![
            (DETECTOR_X, TestFunction::boxcar(0.8, 1.3, 2.0).unwrap()),
            (DETECTOR_MINUS, TestFunction::boxcar(0.2, 0.7, 2.0).unwrap()),
        ],
    );
    let run = |dt: f64| {
        let cfg = EnsembleConfig::new(10_000, dt, 8).with_scheme(Scheme::Kraus);
        ensemble_estimate(&model, &spec, &cfg).unwrap()
    };
    let coarse = run(1e-3);
    let fine = run(5e-4);
    let combined = (coarse.stderr.powi(2) + fine.stderr.powi(2)).sqrt();
    assert!((coarse.value - fine.value).abs() < 2.0 * combined, "{coarse:?} {fine:?}");
}

#[test]
fn importance_sampling_single_point() {
    // ρ0 with an x coherence so that K_x(f) is nonzero
    let p = example();
    let model = p.model().unwrap();
    let rho0 = (Operator::identity(2, 2) + pauli::sigma_x().scale(0.8)).scale(0.5);
    let spec = CorrelatorSpec::filters(
        InitialState::Density(rho0),
        vec![(DETECTOR_X, TestFunction::boxcar(0.1, 0.6, 2.0).unwrap())],
    );
    let exact = Engine::new(&model).full_correlator(&spec).unwrap();
    let est = importance_estimate(&model, &spec, &EnsembleConfig::new(10_000, 1e-3, 21)).unwrap();
    assert!(exact.abs() > 5.0 * est.stderr, "signal too weak for the test: {exact} {est:?}");
    assert!(est.within(exact, 4.0), "{est:?} vs {exact}");
}

#[test]
fn ergodic_estimate_decorrelates_at_long_lags() {
    let p = example();
    let model = p.model().unwrap();
    let cfg = ErgodicConfig {
        pairs: vec![(DETECTOR_X, DETECTOR_MINUS)],
        bandwidth: 10.0,
        lags: vec![25.0],
        record_interval: 0.1,
        duration: 2000.0,
        dt: 1e-3,
        seed: 3,
        burn_in: 10.0,
        sample_stride: None,
        batches: None,
        positivity_tol: -1e-3,
        scheme: Scheme::Kraus,
    };
    let res = ergodic_estimate(&model, None, &cfg).unwrap();
    let est = res.curves[0].estimates[0];
    // the product of the single-point means is 0 here
    assert!(kxminus_filtered(&p, 25.0, 10.0).unwrap().abs() < 1e-5);
    assert!(est.within(0.0, 4.0), "{est:?}");
    assert_eq!(res.batches, 44);
    assert!(res.positivity.worst_eigenvalue > -1e-9);
}

/// Mean over many short runs of the per-run ergodic estimate, and the exact
/// expectation of that estimate for the given start state.
fn short_run_average(burn_in: f64, duration: f64, runs: u64) -> (EstimateWithError, f64, f64) {
    let p = QubitExampleParams {
        z0: -1.0,
        ..example()
    };
    let model = p.model().unwrap();
    let (lambda, tau) = (40.0, 0.1);
    let cfg = |seed| ErgodicConfig {
        pairs: vec![(DETECTOR_X, DETECTOR_MINUS)],
        bandwidth: lambda,
        lags: vec![tau],
        record_interval: 0.01,
        duration,
        dt: 1e-3,
        seed,
        burn_in,
        sample_stride: Some(0.01),
        batches: Some(2),
        positivity_tol: -1e-3,
        scheme: Scheme::Kraus,
    };
    let rho0 = p.initial_state();
    let mut values = Vec::new();
    let mut last = None;
    for seed in 0..runs {
        let r = ergodic_estimate(&model, Some(&rho0), &cfg(seed)).unwrap();
        values.push(r.curves[0].estimates[0].value);
        last = Some(r);
    }
    let r = last.unwrap();
    let engine = Engine::new(&model);
    let transient = (0..r.sample_times)
        .map(|k| {
            let t = r.first_sample + k as f64 * r.sample_spacing;
            engine
                .full_correlator(&CorrelatorSpec::filters(
                    InitialState::Density(rho0.clone()),
                    vec![(DETECTOR_X, expo(t + tau, lambda)), (DETECTOR_MINUS, expo(t, lambda))],
                ))
                .unwrap()
        })
        .sum::<f64>()
        / r.sample_times as f64;
    let stationary = kxminus_filtered(&p, tau, lambda).unwrap();
    (EstimateWithError::from_samples(&values).unwrap(), transient, stationary)
}

#[test]
fn burn_in_removes_the_initial_state_bias() {
    let (early, transient, stationary) = short_run_average(0.0, 2.0, 4000);
    assert!(early.within(transient, 4.0), "{early:?} vs {transient}");
    assert!(!early.within(stationary, 3.0), "bias not visible: {early:?} vs {stationary}");

    let (late, transient, stationary) = short_run_average(4.0, 6.0, 2000);
    assert!((transient - stationary).abs() < 1e-4);
    assert!(late.within(stationary, 4.0), "{late:?} vs {stationary}");
}

#[test]
fn povm_oracle_converges_quadratically() {
    let p = example();
    let model = p.model().unwrap();
    let spec = CorrelatorSpec::points(
        InitialState::Density(p.initial_state()),
        &[(DETECTOR_X, 0.0), (DETECTOR_MINUS, 1.0)],
    );
    let exact = Engine::new(&model).pointwise_correlator(&spec).unwrap();
    let errs: Vec<f64> = [0.1, 0.05, 0.025]
        .iter()
        .map(|&d| (povm_oracle(&model, &spec, d).unwrap() - exact).abs())
        .collect();
    for w in errs.windows(2) {
        let ratio = w[0] / w[1];
        assert!((3.5..4.5).contains(&ratio), "{errs:?}");
    }
    let extrapolated = povm_extrapolated(&model, &spec, 0.05).unwrap();
    assert!((extrapolated - exact).abs() < 0.1 * errs[1]);
}
