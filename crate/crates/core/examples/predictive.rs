//! One-step-ahead predictive densities for three interior thermocouples,
//! from the first half of a synthetic record.

use parapost::design::FitSettings;
use parapost::model::{Discretization, SpatialMesh, TimeGrid};
use parapost::predictive::{fit_history, predictive_density, predictive_summary, PredictiveQuery};
use parapost::synth_data::{make_dataset, DatasetSpec, RobinProblem};

fn main() -> parapost::Result<()> {
    let settings = FitSettings::default();
    let obs = make_dataset(&RobinProblem::dataset_a(), &DatasetSpec::dataset_a(1))?.with_noise_sd(settings.noise_sd)?;
    let disc = Discretization::new(SpatialMesh::uniform(0.0, 1.0, 6)?, TimeGrid::new(1.0, 60)?, false);
    let n = 30;
    let query = PredictiveQuery {
        history_steps: n,
        steps_ahead: 1,
        future_left: vec![obs.left_row()[n]],
        future_right: vec![obs.right_row()[n]],
        sensors: vec![2, 3, 4],
    };
    let post = fit_history(&obs, &disc, &settings, n)?;
    println!("theta from t_1..t_{n}: {:.4} +- {:.4}", post.theta_hat, post.sd());
    let table = predictive_density(&query, &obs, &disc, &settings, &post, 200, 1, 801)?;
    for s in predictive_summary(&table) {
        println!(
            "TC{} at t = {:.4}: mean {:.3}, sd {:.3}, 95% [{:.3}, {:.3}], observed {:.3}",
            s.sensor,
            disc.grid.time(n + 1),
            s.mean,
            s.sd,
            s.lower95,
            s.upper95,
            obs.readings()[(s.sensor - 1, n)]
        );
    }
    Ok(())
}
