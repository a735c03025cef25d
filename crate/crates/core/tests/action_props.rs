use proptest::prelude::*;
use ringroad::action::{eval_action, kinetic_value, prox_kinetic, ActionValue, ProxParams};
use ringroad::constraint::SpaceTimePath;
use ringroad::Geometry;

fn objective(r: f64, p: &[f64], rt: f64, pt: &[f64], sigma: f64) -> f64 {
    let a = kinetic_value(r, p).finite().unwrap_or(f64::INFINITY);
    let d2 = (r - rt).powi(2) + p.iter().zip(pt).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    a + d2 / (2.0 * sigma)
}

/// Path with positive densities and arbitrary momenta, so the action is finite.
fn finite_path(g: &Geometry, nt: usize, vals: &[f64]) -> SpaceTimePath {
    let mut p = SpaceTimePath::zeros(g, nt);
    let mut it = vals.iter().cycle();
    let [omega, flux, gamma, tangential, exchange] = p.fields_mut();
    omega.mapv_inplace(|_| 0.1 + it.next().unwrap().abs());
    gamma.mapv_inplace(|_| 0.1 + it.next().unwrap().abs());
    for f in [flux, tangential, exchange] {
        f.mapv_inplace(|_| *it.next().unwrap());
    }
    p
}

fn action(p: &SpaceTimePath, kappa: f64) -> f64 {
    eval_action(p, kappa).unwrap().finite().expect("finite action")
}

fn geometries() -> Vec<Geometry> {
    vec![
        Geometry::interval(6, 1.0).unwrap(),
        Geometry::strip(4, 3, 1.0, 0.5).unwrap(),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn prox_beats_reference_points(rt in -3.0..3.0f64, p0 in -3.0..3.0f64, p1 in -3.0..3.0f64, sigma in 0.1..5.0f64) {
        let params = ProxParams { sigma, ..ProxParams::default() };
        let out = prox_kinetic(rt, &[p0, p1], &params).unwrap();
        let at = objective(out.density, &out.momentum, rt, &[p0, p1], sigma);
        prop_assert!(at <= objective(rt.max(0.0), &[p0, p1], rt, &[p0, p1], sigma) + 1e-12);
        prop_assert!(at <= objective(0.0, &[0.0, 0.0], rt, &[p0, p1], sigma) + 1e-12);
        prop_assert!(out.density >= 0.0);
    }

    #[test]
    fn prox_satisfies_first_order_conditions(rt in -3.0..3.0f64, p0 in -3.0..3.0f64, sigma in 0.1..5.0f64) {
        let params = ProxParams { sigma, ..ProxParams::default() };
        let out = prox_kinetic(rt, &[p0], &params).unwrap();
        if out.density > 1e-9 {
            let (r, p) = (out.density, out.momentum[0]);
            // ∂ρ: −p²/(2ρ²) + (ρ−ρ̃)/σ = 0 ; ∂p: p/ρ + (p−p̃)/σ = 0
            prop_assert!((-p * p / (2.0 * r * r) + (r - rt) / sigma).abs() < 1e-9 * (1.0 + rt.abs()));
            prop_assert!((p / r + (p - p0) / sigma).abs() < 1e-9 * (1.0 + p0.abs()));
        } else {
            prop_assert_eq!(out.momentum[0], 0.0);
        }
    }

    #[test]
    fn action_is_homogeneous(vals in prop::collection::vec(-2.0..2.0f64, 64), lambda in 0.1..10.0f64, kappa in 0.1..5.0f64) {
        for g in geometries() {
            let p = finite_path(&g, 3, &vals);
            let mut q = p.clone();
            q.scale(lambda);
            let (a, b) = (action(&p, kappa), action(&q, kappa));
            prop_assert!((b - lambda * a).abs() <= 1e-10 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn action_is_convex(v1 in prop::collection::vec(-2.0..2.0f64, 64), v2 in prop::collection::vec(-2.0..2.0f64, 64), kappa in 0.1..5.0f64) {
        for g in geometries() {
            let p1 = finite_path(&g, 3, &v1);
            let p2 = finite_path(&g, 3, &v2);
            let mut mid = p1.clone();
            mid.axpy(1.0, &p2);
            mid.scale(0.5);
            let lhs = action(&mid, kappa);
            let rhs = 0.5 * action(&p1, kappa) + 0.5 * action(&p2, kappa);
            prop_assert!(lhs <= rhs + 1e-12 * (1.0 + rhs));
            prop_assert!(lhs >= 0.0);
        }
    }
}

#[test]
fn zero_momentum_has_zero_action() {
    for g in geometries() {
        let mut p = finite_path(&g, 3, &[0.5, 1.0, 0.2]);
        for f in [&mut p.flux, &mut p.tangential, &mut p.exchange] {
            f.fill(0.0);
        }
        assert_eq!(eval_action(&p, 1.0).unwrap(), ActionValue::Finite(0.0));
    }
}

#[test]
fn vacuum_with_flux_is_infinite() {
    let g = Geometry::interval(6, 1.0).unwrap();
    let mut p = SpaceTimePath::zeros(&g, 2);
    p.flux[[0, 2]] = 1.0;
    assert_eq!(eval_action(&p, 1.0).unwrap(), ActionValue::Infinite);
}
