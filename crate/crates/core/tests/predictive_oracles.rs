mod common;

use parapost::design::FitSettings;
use parapost::model::{Discretization, ObservationSet, SpatialMesh, TimeGrid};
use parapost::posterior_scalar::{sample_posterior, LaplacePosterior};
use parapost::predictive::{
    boundary_estimates, conditional_path, fit_history, predictive_density, predictive_summary, PredictiveQuery,
};
use parapost::model::BoundaryPrior;
use parapost::synth_data::{make_dataset, DatasetSpec, RobinProblem};
use rand_distr::{Distribution, Normal};

fn setup() -> (ObservationSet, Discretization, FitSettings, PredictiveQuery) {
    let settings = FitSettings::default();
    let obs = make_dataset(&RobinProblem::dataset_a(), &DatasetSpec::dataset_a(1))
        .unwrap()
        .with_noise_sd(settings.noise_sd)
        .unwrap();
    let disc = Discretization::new(SpatialMesh::uniform(0.0, 1.0, 6).unwrap(), TimeGrid::new(1.0, 60).unwrap(), false);
    let query = PredictiveQuery {
        history_steps: 30,
        steps_ahead: 2,
        future_left: obs.left_row()[30..32].to_vec(),
        future_right: obs.right_row()[30..32].to_vec(),
        sensors: vec![2, 3, 4],
    };
    (obs, disc, settings, query)
}

#[test]
fn mixture_moments_match_simulated_readings() {
    let (obs, disc, settings, query) = setup();
    let post = fit_history(&obs, &disc, &settings, 30).unwrap();
    let table = predictive_density(&query, &obs, &disc, &settings, &post, 200, 5, 2001).unwrap();
    let summary = predictive_summary(&table);

    // simulate: same posterior draws, then fresh reading noise
    let history = obs.truncated(30).unwrap();
    let prior = BoundaryPrior::from_spline_fit(&history, &disc.grid.truncated(30), settings.boundary_sd, settings.spline_intervals).unwrap();
    let est = boundary_estimates(&history, &prior).unwrap();
    let thetas = sample_posterior(&post, 200, 5).unwrap();
    let noise = Normal::new(0.0, settings.noise_sd).unwrap();
    let mut rng = common::rng(6);
    for (k, s) in summary.iter().enumerate() {
        let mut sims = Vec::new();
        for &t in &thetas {
            let path = conditional_path(t, &history, &disc, &est, &query).unwrap();
            for _ in 0..50 {
                sims.push(path[1][query.sensors[k] - 2] + noise.sample(&mut rng));
            }
        }
        let n = sims.len() as f64;
        let mean = sims.iter().sum::<f64>() / n;
        let sd = (sims.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((s.mean - mean).abs() < 4.0 * sd / n.sqrt(), "TC{}: {} vs {mean}", s.sensor, s.mean);
        assert!((s.sd - sd).abs() < 0.03 * sd, "TC{}: sd {} vs {sd}", s.sensor, s.sd);
        assert!((s.mass - 1.0).abs() < 1e-6);
    }
}

#[test]
fn collapsed_posterior_gives_a_single_gaussian() {
    let (obs, disc, settings, query) = setup();
    let post = LaplacePosterior {
        theta_hat: 1.0,
        variance: 1e-16,
        log_norm_const: 0.0,
    };
    let table = predictive_density(&query, &obs, &disc, &settings, &post, 10, 1, 4001).unwrap();
    let history = obs.truncated(30).unwrap();
    let prior = BoundaryPrior::from_spline_fit(&history, &disc.grid.truncated(30), settings.boundary_sd, settings.spline_intervals).unwrap();
    let est = boundary_estimates(&history, &prior).unwrap();
    let path = conditional_path(1.0, &history, &disc, &est, &query).unwrap();
    for s in predictive_summary(&table) {
        let m = path[1][s.sensor - 2];
        assert!((s.mean - m).abs() < 1e-6, "{} vs {m}", s.mean);
        assert!((s.sd - settings.noise_sd).abs() < 1e-5);
        assert!((s.upper95 - s.lower95 - 2.0 * 1.959_963_985 * settings.noise_sd).abs() < 1e-3);
    }
}

#[test]
fn too_few_draws_and_long_horizons_are_rejected() {
    let (obs, disc, settings, mut query) = setup();
    let post = fit_history(&obs, &disc, &settings, 30).unwrap();
    assert!(predictive_density(&query, &obs, &disc, &settings, &post, 9, 1, 401).is_err());
    query.steps_ahead = 31;
    query.future_left = vec![20.0; 31];
    query.future_right = vec![20.0; 31];
    assert!(predictive_density(&query, &obs, &disc, &settings, &post, 50, 1, 401).is_err());
}
