//! Log-likelihood of a constant diffusivity on synthetic data, with the
//! boundary readings treated as exact or integrated out under a spline prior.

use parapost::likelihood::{known_boundary_log_likelihood, marginal_log_likelihood};
use parapost::model::{BoundaryPrior, BoundarySeries, CoefficientField, Discretization, SpatialMesh, TimeGrid};
use parapost::synth_data::{make_dataset, DatasetSpec, RobinProblem};

fn main() -> parapost::Result<()> {
    let obs = make_dataset(&RobinProblem::dataset_a(), &DatasetSpec::dataset_a(7))?.with_noise_sd(0.5)?;
    let disc = Discretization::new(SpatialMesh::uniform(0.0, 1.0, 6)?, TimeGrid::new(1.0, 60)?, false);
    let prior = BoundaryPrior::from_spline_fit(&obs, &disc.grid, 0.5, 8)?;
    let g = obs.initial();
    let known = BoundarySeries::new(obs.left_row(), obs.right_row(), g.left(), g.right())?;

    println!("{:>6} {:>14} {:>14}", "theta", "known bc", "marginal");
    for theta in [0.8, 0.9, 0.95, 1.0, 1.05, 1.1, 1.2] {
        let c = CoefficientField::constant(theta, 6);
        println!(
            "{theta:6.2} {:14.4} {:14.4}",
            known_boundary_log_likelihood(&c, &obs, &known, &disc)?,
            marginal_log_likelihood(&c, &obs, &prior, &disc)?
        );
    }
    Ok(())
}
