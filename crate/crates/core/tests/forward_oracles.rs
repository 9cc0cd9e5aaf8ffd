mod common;

use parapost::forward_fem::{assemble, build_propagators, solve_full};
use parapost::model::{BoundarySeries, CoefficientField, InitialCondition, SpatialMesh};
use rand::Rng;

#[test]
fn propagators_match_sequential_stepping() {
    let mut rng = common::rng(11);
    for _ in 0..20 {
        let inst = common::random_instance(&mut rng, 32, 40);
        let gap = common::propagator_stepping_gap(&inst);
        assert!(gap <= 1e-10, "gap {gap}");
    }
}

#[test]
fn solutions_superpose() {
    let mut rng = common::rng(12);
    for _ in 0..20 {
        let inst = common::random_instance(&mut rng, 32, 40);
        let gap = common::superposition_gap(&inst, &mut rng);
        assert!(gap <= 1e-12, "gap {gap}");
    }
}

#[test]
fn fd_and_lumped_fem_agree() {
    let mut rng = common::rng(13);
    for _ in 0..10 {
        let elements = rng.random_range(2..=16);
        let steps = rng.random_range(1..=20);
        let gap = common::fd_fem_gap(elements, steps, rng.random_range(0.2..3.0), rng.random_range(0.001..0.1));
        assert!(gap <= 1e-12, "I={elements} N={steps}: {gap}");
    }
}

#[test]
fn constant_data_stay_constant_under_propagators() {
    let mesh = SpatialMesh::uniform(0.0, 2.0, 9).unwrap();
    let sys = assemble(&mesh, &CoefficientField::constant(0.7, 9), 0.03, false).unwrap();
    let props = build_propagators(&sys, 12).unwrap();
    let t = props.evaluate(&InitialCondition::constant(3.5, 10), &BoundarySeries::constant(3.5, 12)).unwrap();
    assert!(t.iter().all(|v| (v - 3.5).abs() < 1e-12));
}

#[test]
fn mirrored_problem_mirrors_solution() {
    let mut rng = common::rng(14);
    let inst = common::random_instance(&mut rng, 12, 10);
    let sys = inst.system();
    let u = solve_full(&sys, &inst.initial, &inst.boundary).unwrap();
    let mesh = inst.mesh.mirrored();
    let coeffs = inst.coeffs.mirrored();
    let sys_m = assemble(&mesh, &coeffs, inst.dt, inst.lumped).unwrap();
    let g: Vec<f64> = inst.initial.values.iter().rev().copied().collect();
    let um = solve_full(&sys_m, &InitialCondition::new(g), &inst.boundary.swapped()).unwrap();
    let m = u.nrows();
    for n in 0..u.ncols() {
        for j in 0..m {
            assert!((u[(j, n)] - um[(m - 1 - j, n)]).abs() < 1e-10 * u.abs().max().max(1.0));
        }
    }
}
