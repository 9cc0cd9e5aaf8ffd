//! Hyperposterior of the lognormal diffusivity field on a small (mu, eta)
//! grid, with the field and length scale integrated out by Monte Carlo.

use parapost::field_hyper::{hyper_laplace, hyper_log_posterior_grid, HyperPrior};
use parapost::model::{BoundaryPrior, Discretization, SpatialMesh, TimeGrid};
use parapost::numerics::linspace;
use parapost::synth_data::{make_dataset_b, DatasetSpec, FieldHyper, RobinProblem};

fn main() -> parapost::Result<()> {
    let (obs, field) = make_dataset_b(&RobinProblem::dataset_a(), FieldHyper::dataset_b(), &DatasetSpec::dataset_a(1), 5)?;
    let obs = obs.with_noise_sd(0.56)?;
    let disc = Discretization::new(SpatialMesh::uniform(0.0, 1.0, 6)?, TimeGrid::new(1.0, 60)?, false);
    let boundary = BoundaryPrior::from_spline_fit(&obs, &disc.grid, 0.5, 8)?;
    let hp = HyperPrior::dataset_b();
    let mu = linspace(-0.25, 0.1, 8);
    let eta = linspace(0.005, 0.2, 6);
    let grid = hyper_log_posterior_grid(&obs, &disc, &boundary, &hp, &mu, &eta, 16, 32, 1)?;

    println!("generating field: {:?}", field.iter().map(|v| format!("{:.4}", v.ln())).collect::<Vec<_>>());
    print!("{:>8}", "mu\\eta");
    for e in &grid.eta {
        print!("{e:>8.3}");
    }
    println!();
    for (i, m) in grid.mu.iter().enumerate() {
        print!("{m:>8.3}");
        for v in &grid.log_density[i] {
            print!("{:>8.2}", v - grid.log_density[grid.map_index.0][grid.map_index.1]);
        }
        println!();
    }
    println!("MAP (mu, eta) = ({:.3}, {:.3}), local maxima {:?}", grid.map.0, grid.map.1, grid.local_maxima());
    match hyper_laplace(&grid) {
        Ok(l) => println!("Laplace mean ({:.4}, {:.4}), sd ({:.4}, {:.4})", l.mean[0], l.mean[1], l.sd()[0], l.sd()[1]),
        Err(e) => println!("no Laplace fit: {e}"),
    }
    Ok(())
}
