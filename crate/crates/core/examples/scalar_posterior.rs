//! Posterior of a constant diffusivity: MAP, Laplace approximation, and a
//! grid check of the Gaussian shape.

use parapost::model::{BoundaryPrior, Discretization, SpatialMesh, TimeGrid};
use parapost::posterior_scalar::{fit_scalar, BoundaryTreatment, LognormalPrior, ScalarPosterior};
use parapost::synth_data::{make_dataset, DatasetSpec, RobinProblem};

fn main() -> parapost::Result<()> {
    let obs = make_dataset(&RobinProblem::dataset_a(), &DatasetSpec::dataset_a(1))?.with_noise_sd(0.5)?;
    let disc = Discretization::new(SpatialMesh::uniform(0.0, 1.0, 6)?, TimeGrid::new(1.0, 60)?, false);
    let boundary = BoundaryTreatment::Marginal(BoundaryPrior::from_spline_fit(&obs, &disc.grid, 0.5, 8)?);
    let post = ScalarPosterior {
        obs: &obs,
        disc: &disc,
        boundary: &boundary,
        prior: LognormalPrior::new(0.1, 0.1)?,
    };
    let fit = fit_scalar(|t| post.log_posterior(t), 0.3, 2.0, 10.0, 401)?;
    println!("MAP            {:.5}", fit.laplace.theta_hat);
    println!("Laplace sd     {:.5}", fit.laplace.sd());
    println!("grid mean, sd  {:.5}, {:.5}", fit.grid.mean(), fit.grid.sd());
    println!("TV(Laplace, grid) = {:.4}", fit.total_variation);
    println!("log evidence   {:.4}", fit.grid.log_evidence);
    Ok(())
}
