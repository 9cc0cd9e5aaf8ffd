//! Solve a heat problem by backward Euler stepping and by the propagator
//! representation, and check that the two agree.

use parapost::forward_fem::{assemble, build_propagators, solve_full};
use parapost::model::{BoundarySeries, CoefficientField, InitialCondition, SpatialMesh};

fn main() -> parapost::Result<()> {
    let elements = 8;
    let steps = 20;
    let dt = 0.02;
    let mesh = SpatialMesh::uniform(0.0, 1.0, elements)?;
    // a stiffer right half
    let coeffs = CoefficientField::diffusion_only((0..elements).map(|e| if e < 4 { 0.8 } else { 1.6 }).collect());
    let sys = assemble(&mesh, &coeffs, dt, false)?;

    let initial = InitialCondition::from_fn(&mesh, |x| 100.0 - 30.0 * x);
    let left: Vec<f64> = (1..=steps).map(|n| 100.0 - 2.0 * n as f64).collect();
    let right = vec![70.0; steps];
    let boundary = BoundarySeries::new(left, right, 100.0, 70.0)?;

    let stepped = solve_full(&sys, &initial, &boundary)?;
    let props = build_propagators(&sys, steps)?;
    let propagated = props.evaluate(&initial, &boundary)?;

    let gap = stepped.iter().zip(propagated.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("interior temperatures at t = {:.2}:", dt * steps as f64);
    for (j, v) in stepped.column(steps - 1).iter().enumerate() {
        println!("  x = {:.3}  T = {v:.4}", mesh.nodes()[j + 1]);
    }
    println!("max |stepping - propagators| = {gap:.2e}");
    Ok(())
}
