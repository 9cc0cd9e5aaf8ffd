//! Synthetic thermocouple data from the Robin-boundary reference solver, for
//! a constant diffusivity and for a random lognormal field.

use parapost::synth_data::{
    make_dataset, make_dataset_b, reference_solve, sample_reference, DatasetSpec, FieldHyper, ReferenceSolution, RobinProblem,
};

fn main() -> parapost::Result<()> {
    let prob = RobinProblem::dataset_a();
    let spec = DatasetSpec::dataset_a(1);

    // self-convergence of the reference solver at one point in space-time
    let coarse = reference_solve(&RobinProblem { refinement: 4, ..prob.clone() }, 60)?;
    let fine = reference_solve(&prob, 60)?;
    let at = |s: &ReferenceSolution| sample_reference(s, &[0.5], 60).map(|m| m[(0, 29)]);
    println!("T(x=0.5, t=0.5): refinement 4 -> {:.6}, refinement 8 -> {:.6}", at(&coarse)?, at(&fine)?);

    let a = make_dataset(&prob, &spec)?;
    println!("dataset A, readings at t_30:");
    println!("  {:?}", a.readings().column(29).iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>());

    let (b, field) = make_dataset_b(&prob, FieldHyper::dataset_b(), &spec, 99)?;
    println!("dataset B diffusivity per element: {:?}", field.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>());
    println!("  {:?}", b.readings().column(29).iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>());
    Ok(())
}
