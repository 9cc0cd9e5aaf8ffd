//! Finite differences and lumped-mass finite elements give the same
//! propagators on a uniform mesh with constant diffusivity.

use parapost::forward_fd::FdSystem;
use parapost::forward_fem::{assemble, build_propagators};
use parapost::model::{CoefficientField, SpatialMesh};

fn main() -> parapost::Result<()> {
    let (elements, steps, theta, dt) = (10, 12, 0.7, 0.01);
    let mesh = SpatialMesh::uniform(0.0, 1.0, elements)?;
    let fem = build_propagators(&assemble(&mesh, &CoefficientField::constant(theta, elements), dt, true)?, steps)?;
    let fd = FdSystem::new(&mesh, theta, dt)?.fd_propagators(steps)?;
    for n in [1, steps / 2, steps] {
        let gap = |a: &nalgebra::DMatrix<f64>, b: &nalgebra::DMatrix<f64>| (a - b).abs().max();
        println!(
            "n = {n:2}: powers = {:.1e}  |A_L| = {:.1e}  |A_R| = {:.1e}",
            gap(&fd.b_power(n), &fem.b_power(n)),
            gap(&fd.al(n), &fem.al(n)),
            gap(&fd.ar(n), &fem.ar(n)),
        );
    }
    Ok(())
}
