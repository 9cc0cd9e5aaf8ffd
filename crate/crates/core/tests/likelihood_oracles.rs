mod common;

use nalgebra::DMatrix;
use parapost::forward_fem::{assemble, build_propagators};
use parapost::likelihood::{joint_log_likelihood, marginal_log_likelihood, marginal_parts};
use parapost::model::{
    BoundaryPrior, BoundarySeries, CoefficientField, Discretization, InitialCondition,
    ObservationSet, SpatialMesh, TimeGrid,
};

fn dataset(elements: usize, steps: usize, seed: u64) -> (Discretization, ObservationSet, BoundaryPrior) {
    let mesh = SpatialMesh::uniform(0.0, 3.0, elements).unwrap();
    let grid = TimeGrid::new(2.0, steps).unwrap();
    let mut rng = common::rng(seed);
    let y = DMatrix::from_fn(elements + 1, steps, |i, n| {
        60.0 + 10.0 * ((i as f64) * 0.7 + n as f64 * 0.3).cos() + common::gaussian_noise(&mut rng, 1.0)
    });
    let g = InitialCondition::from_fn(&mesh, |x| 80.0 - 5.0 * x);
    let obs = ObservationSet::new(y, 0.8, g).unwrap();
    let prior = BoundaryPrior::new(
        (0..steps).map(|n| 70.0 - n as f64).collect(),
        (0..steps).map(|n| 55.0 + 0.5 * n as f64).collect(),
        1.7,
    )
    .unwrap();
    (Discretization::new(mesh, grid, false), obs, prior)
}

#[test]
fn closed_form_matches_stacked_gaussian() {
    for (elements, steps, lumped, theta) in [(3, 1, false, 1.0), (4, 3, false, 0.6), (6, 8, true, 1.4), (5, 12, false, 0.9)] {
        let (mut disc, obs, prior) = dataset(elements, steps, 7 + steps as u64);
        disc.lumped_mass = lumped;
        let sys = assemble(&disc.mesh, &CoefficientField::constant(theta, elements), disc.grid.dt(), lumped).unwrap();
        let props = build_propagators(&sys, steps).unwrap();
        let closed = marginal_parts(&props, &obs, &prior).unwrap().log_value;
        let oracle = common::stacked_gaussian_log_marginal(&props, &obs, &prior);
        assert!(
            (closed - oracle).abs() < 1e-8 * oracle.abs().max(1.0),
            "I={elements} N={steps}: {closed} vs {oracle}"
        );
    }
}

#[test]
fn masked_closed_form_matches_stacked_gaussian() {
    let (disc, obs, prior) = dataset(6, 9, 3);
    let mask = DMatrix::from_fn(5, 9, |j, n| (j + n) % 3 != 0);
    let obs = obs.with_mask(mask).unwrap();
    let sys = assemble(&disc.mesh, &CoefficientField::constant(1.1, 6), disc.grid.dt(), false).unwrap();
    let props = build_propagators(&sys, 9).unwrap();
    let closed = marginal_parts(&props, &obs, &prior).unwrap().log_value;
    let oracle = common::stacked_gaussian_log_marginal(&props, &obs, &prior);
    assert!((closed - oracle).abs() < 1e-8 * oracle.abs(), "{closed} vs {oracle}");
}

#[test]
fn schur_quadratic_expands() {
    let (disc, obs, prior) = dataset(5, 6, 11);
    let sys = assemble(&disc.mesh, &CoefficientField::constant(0.8, 5), disc.grid.dt(), false).unwrap();
    let props = build_propagators(&sys, 6).unwrap();
    let p = marginal_parts(&props, &obs, &prior).unwrap();
    let l1 = &p.lambda1_inv;
    let q = |a: &nalgebra::DVector<f64>, b: &nalgebra::DVector<f64>| a.dot(&l1.solve(b));
    let split = 0.5 * (q(&p.t_r2, &p.t_r2) + 2.0 * q(&p.t_r3, &p.t_r2) + q(&p.t_r3, &p.t_r3));
    let joint = 0.5 * q(&p.t_r1, &p.t_r1);
    assert!((split - joint).abs() < 1e-10 * joint.abs().max(1.0));
}

#[test]
fn vanishing_prior_width_recovers_joint_likelihood() {
    let (disc, obs, prior) = dataset(4, 5, 5);
    let sys = assemble(&disc.mesh, &CoefficientField::constant(1.0, 4), disc.grid.dt(), false).unwrap();
    let props = build_propagators(&sys, 5).unwrap();
    let b = BoundarySeries::new(
        prior.mean_left.clone(),
        prior.mean_right.clone(),
        obs.initial().left(),
        obs.initial().right(),
    )
    .unwrap();
    let joint = joint_log_likelihood(&props, &obs, &b).unwrap();
    let narrow = BoundaryPrior { sd: 1e-4, ..prior };
    let marginal = marginal_parts(&props, &obs, &narrow).unwrap().log_value;
    assert!((marginal - joint).abs() < 1e-3, "{marginal} vs {joint}");
}

#[test]
fn no_observations_give_zero() {
    let mesh = SpatialMesh::uniform(0.0, 1.0, 3).unwrap();
    let disc = Discretization::new(mesh.clone(), TimeGrid::new(1.0, 4).unwrap(), false);
    let obs = ObservationSet::new(DMatrix::zeros(4, 0), 1.0, InitialCondition::constant(0.0, 4)).unwrap();
    let prior = BoundaryPrior::new(vec![], vec![], 1.0).unwrap();
    let ll = marginal_log_likelihood(&CoefficientField::constant(1.0, 3), &obs, &prior, &disc.truncated(0)).unwrap();
    assert_eq!(ll, 0.0);
}

#[test]
fn closed_form_matches_boundary_quadrature() {
    let mut rng = common::rng(2024);
    for case in 0..6 {
        let steps = 1 + case % 3;
        let (sys, obs, prior) = common::marginal_instance(&mut rng, 3, steps);
        let props = build_propagators(&sys, steps).unwrap();
        let closed = marginal_parts(&props, &obs, &prior).unwrap().log_value;
        let k = 8;
        let quad = common::quadrature_log_marginal(&sys, &obs, &prior, k);
        let coarse = common::quadrature_log_marginal(&sys, &obs, &prior, k - 4);
        println!("N={steps}: closed {closed:.12} quad {quad:.12} coarse {coarse:.12}");
        assert!((closed - quad).abs() < 1e-6, "N={steps}: {closed} vs {quad}");
    }
}
