use ringroad::measures::{gaussian_shape, mollified_dirac, MeasurePair, Side};
use ringroad::oracles;
use ringroad::solver::{geodesic_frames, solve_geodesic, sweep_kappa, SolverConfig};
use ringroad::Geometry;

fn bump_pair(n: usize, c0: f64, c1: f64) -> (MeasurePair, MeasurePair) {
    let g = Geometry::interval(n, 1.0).unwrap();
    let w = (0.08f64).max(2.0 / n as f64);
    let a = mollified_dirac(&g, [c0, 0.0], 1.0, w, Side::Interior).unwrap();
    let b = mollified_dirac(&g, [c1, 0.0], 1.0, w, Side::Interior).unwrap();
    (
        MeasurePair::new(g.clone(), a, vec![0.0, 0.0]).unwrap(),
        MeasurePair::new(g, b, vec![0.0, 0.0]).unwrap(),
    )
}

#[test]
fn identical_endpoints_cost_nothing() {
    let (a, _) = bump_pair(16, 0.4, 0.6);
    let cfg = SolverConfig {
        nt: 8,
        ..Default::default()
    };
    let r = solve_geodesic(&a, &a, &cfg).unwrap();
    assert!(r.primal_value <= cfg.stop_tol, "{}", r.primal_value);
    assert!(r.path.flux.iter().all(|v| v.abs() < 1e-6));
    assert!(r.dual_value <= r.primal_value);
}

#[test]
fn interior_bumps_match_quantile_oracle() {
    let (a, b) = bump_pair(32, 0.3, 0.65);
    let cfg = SolverConfig {
        nt: 32,
        ..Default::default()
    };
    let r = solve_geodesic(&a, &b, &cfg).unwrap();
    let w2 = oracles::wasserstein_1d(1.0, a.omega(), b.omega()).unwrap();
    assert!(r.converged);
    assert!((r.primal_value - w2).abs() <= 0.02 * w2, "{} vs {w2}", r.primal_value);
    assert!(r.dual_value <= r.primal_value);
    assert!(r.dual_value >= 0.9 * r.primal_value);
    let mean: f64 = r.action_slices.iter().sum::<f64>() / r.action_slices.len() as f64;
    assert!((mean - r.primal_value).abs() <= 1e-12 * r.primal_value.max(1.0));
}

#[test]
fn frames_pin_endpoints_and_are_probability_pairs() {
    let (a, b) = bump_pair(16, 0.3, 0.7);
    let cfg = SolverConfig {
        nt: 16,
        max_outer: 2000,
        ..Default::default()
    };
    let r = solve_geodesic(&a, &b, &cfg).unwrap();
    let frames = geodesic_frames(&r, &[0.0, 0.3, 0.5, 1.0]).unwrap();
    assert_eq!(frames[0].measure, a);
    assert_eq!(frames[3].measure, b);
    for f in &frames {
        assert!((f.measure.total_mass().total() - 1.0).abs() <= 1e-9);
        assert!(!f.flagged);
    }
    assert_eq!(frames[1].node_time, 5.0 / 16.0);
}

#[test]
fn strip_solve_respects_weak_duality_and_sandwich() {
    let g = Geometry::strip(8, 4, 1.0, 0.5).unwrap();
    let w0 = gaussian_shape(&g, [0.3, 0.2], 0.15, Side::Interior);
    let w1 = gaussian_shape(&g, [0.7, 0.3], 0.15, Side::Interior);
    let e0 = gaussian_shape(&g, [0.5, 0.0], 0.2, Side::Boundary);
    let e1 = gaussian_shape(&g, [0.1, 0.0], 0.2, Side::Boundary);
    let a = MeasurePair::from_shapes(g.clone(), w0, 0.7, e0, 0.3).unwrap();
    let b = MeasurePair::from_shapes(g.clone(), w1, 0.7, e1, 0.3).unwrap();
    let cfg = SolverConfig {
        nt: 8,
        kappa: 0.7,
        ..Default::default()
    };
    let r = solve_geodesic(&a, &b, &cfg).unwrap();
    assert!(r.dual_value <= r.primal_value);
    assert!(r.certificate.feasible);
    let lower = oracles::marginal_cost(
        &oracles::strip_marginals(&a).unwrap(),
        &oracles::strip_marginals(&b).unwrap(),
    )
    .unwrap();
    assert!(r.primal_value >= 0.95 * lower, "{} vs {lower}", r.primal_value);
}

#[test]
fn boundary_exchange_pays_the_fisher_rao_toll() {
    // mass sitting next to an atom has to cross the interface
    let g = Geometry::interval(16, 1.0).unwrap();
    let a = MeasurePair::new(g.clone(), vec![1.0; 16], vec![0.0, 0.0]).unwrap();
    let b = MeasurePair::from_shapes(g.clone(), vec![1.0; 16], 0.5, vec![1.0, 1.0], 0.5).unwrap();
    let cfg = SolverConfig {
        nt: 16,
        kappa: 0.5,
        ..Default::default()
    };
    let r = solve_geodesic(&a, &b, &cfg).unwrap();
    let lemma = 0.5 * 0.25 * 0.5 * 0.5;
    assert!(r.primal_value >= lemma);
}

#[test]
fn invalid_configs_are_rejected() {
    let (a, b) = bump_pair(8, 0.3, 0.7);
    for cfg in [
        SolverConfig {
            kappa: 0.0,
            ..Default::default()
        },
        SolverConfig {
            sigma: -1.0,
            ..Default::default()
        },
        SolverConfig {
            nt: 0,
            ..Default::default()
        },
        SolverConfig {
            relaxation: 2.0,
            ..Default::default()
        },
    ] {
        assert!(solve_geodesic(&a, &b, &cfg).is_err());
    }
    assert!(sweep_kappa(&a, &b, &[1.0, 0.5], &SolverConfig::default()).is_err());
}
