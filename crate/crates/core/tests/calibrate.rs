use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sigcorr::calibrate::{
    fit, predict_curves, FitProblem, FreeParameter, ModelTemplate, Observation, ParameterTarget,
};
use sigcorr::model::pauli;
use sigcorr::reference::{DETECTOR_MINUS, DETECTOR_X};
use sigcorr::{MeasurementChannel, SystemModel};

const LAMBDA: f64 = 10.0;

fn template(initial: [f64; 3]) -> ModelTemplate {
    let base = SystemModel::new(
        2,
        None,
        vec![],
        vec![
            MeasurementChannel::new("x", pauli::sigma_x(), 1.0).unwrap(),
            MeasurementChannel::new("minus", pauli::sigma_minus(), 1.0).unwrap(),
        ],
    )
    .unwrap();
    ModelTemplate::new(
        base,
        vec![
            FreeParameter::new("gamma_minus", ParameterTarget::Rate { channel: "minus".into() }, 0.2, 3.0, initial[0]),
            FreeParameter::new("gamma_x", ParameterTarget::Rate { channel: "x".into() }, 0.1, 2.0, initial[1]),
            FreeParameter::new("eta_x", ParameterTarget::Efficiency { channel: "x".into() }, 0.2, 1.0, initial[2]),
        ],
    )
    .unwrap()
}

/// 20 lags in [-1.5, 1.5] for each pair.
fn grid(pairs: &[(usize, usize)]) -> Vec<Observation> {
    pairs
        .iter()
        .flat_map(|&(a, b)| {
            (0..20).map(move |i| Observation::new(a, b, LAMBDA, -1.5 + 3.0 * i as f64 / 19.0, 0.0, 1.0))
        })
        .collect()
}

/// Noiseless synthetic data with a 1% relative error bar.
fn synthetic(truth: [f64; 3], pairs: &[(usize, usize)]) -> Vec<Observation> {
    let model = template(truth).instantiate(&truth).unwrap();
    let mut obs = grid(pairs);
    let values = predict_curves(&model, &obs, &None).unwrap();
    for (o, v) in obs.iter_mut().zip(values) {
        o.value = v;
        o.stderr = 0.01 * v.abs() + 1e-4;
    }
    obs
}

const BOTH: [(usize, usize); 2] = [(DETECTOR_X, DETECTOR_MINUS), (DETECTOR_X, DETECTOR_X)];

fn assert_recovers(truth: [f64; 3], start: [f64; 3]) {
    let problem = FitProblem::new(template(start), synthetic(truth, &BOTH)).unwrap();
    let res = fit(&problem, 3000).unwrap();
    assert!(res.converged, "{res:?}");
    for (p, t) in res.parameters.iter().zip(truth) {
        assert!(((p.value - t) / t).abs() < 1e-3, "{} = {} vs {t}: {res:?}", p.name, p.value);
        assert!(p.identifiable);
    }
    assert!(res.residual < 1e-6, "{res:?}");
}

#[test]
fn recovers_the_figure_parameters_from_noiseless_curves() {
    assert_recovers([1.0, 0.5, 1.0], [1.6, 1.0, 0.6]);
}

#[test]
fn recovers_random_parameter_draws() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..10 {
        let truth = [
            rng.random_range(0.4..2.5),
            rng.random_range(0.2..1.6),
            rng.random_range(0.3..1.0),
        ];
        assert_recovers(truth, [1.6, 1.0, 0.6]);
    }
}

#[test]
fn efficiency_is_unidentifiable_from_cross_detector_data() {
    let obs = synthetic([1.0, 0.5, 1.0], &[(DETECTOR_X, DETECTOR_MINUS)]);
    let problem = FitProblem::new(template([1.6, 1.0, 0.6]), obs).unwrap();
    let res = fit(&problem, 3000).unwrap();
    assert!(!res.get("eta_x").unwrap().identifiable, "{res:?}");
    assert_eq!(res.get("eta_x").unwrap().curvature, 0.0);
    assert!(res.get("gamma_minus").unwrap().identifiable);
    assert!(res.get("gamma_x").unwrap().identifiable);
    assert!((res.get("gamma_minus").unwrap().value - 1.0).abs() < 1e-3);
}

#[test]
fn objective_ignores_observation_order() {
    let t = template([1.0, 0.5, 1.0]);
    let mut obs = synthetic([0.9, 0.6, 0.8], &BOTH);
    let model = t.instantiate(&[1.0, 0.5, 1.0]).unwrap();
    let a = FitProblem::new(t.clone(), obs.clone()).unwrap();
    let pa = predict_curves(&model, &a.observations, &None).unwrap();
    obs.reverse();
    let b = FitProblem::new(t, obs).unwrap();
    let pb = predict_curves(&model, &b.observations, &None).unwrap();
    let (fa, fb) = (a.objective(&pa), b.objective(&pb));
    assert!((fa - fb).abs() <= 1e-12 * fa, "{fa} {fb}");
    assert!(fa > 0.0);
}

#[test]
fn budget_exhaustion_reports_non_convergence() {
    let problem = FitProblem::new(template([1.6, 1.0, 0.6]), synthetic([1.0, 0.5, 1.0], &BOTH)).unwrap();
    let res = fit(&problem, 10).unwrap();
    assert!(!res.converged);
    assert!(res.residual >= 0.0);
    for p in &res.parameters {
        assert!(p.value >= p.lower && p.value <= p.upper);
    }
}
