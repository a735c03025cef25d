//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p ringroad-cli --test acceptance`; pass criterion
//! numbers after `--` to run a subset.

use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ringroad::gradflow::{self, EnergySpec, FlowState};
use ringroad::measures::{mollified_dirac, MeasurePair, Side};
use ringroad::oracles;
use ringroad::solver::{self, GeodesicResult, SolverConfig};
use ringroad::Geometry;

type Outcome = Result<String, String>;

fn main() -> ExitCode {
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("closed-form oracles", oracle_values),
        ("point mass to the boundary", dirac_refinement),
        ("interior-only transport", interior_only),
        ("sandwich bounds", sandwich),
        ("toll monotonicity and limits", toll_limits),
        ("incompatible masses", incompatible_masses),
        ("duality gap", duality_gap),
        ("constant speed", constant_speed),
        ("metric axioms", metric_axioms),
        ("gradient flow", gradient_flow),
        ("bounded-Lipschitz estimate", bl_estimate),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {n:>2} {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {n:>2} {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn solve(a: &MeasurePair, b: &MeasurePair, nt: usize, kappa: f64) -> GeodesicResult {
    let cfg = SolverConfig {
        nt,
        kappa,
        ..Default::default()
    };
    solver::solve_geodesic(a, b, &cfg).expect("solver failed")
}

fn stop_tol() -> f64 {
    SolverConfig::default().stop_tol
}

fn scale(a: &MeasurePair, b: &MeasurePair) -> f64 {
    a.max_density().max(b.max_density())
}

fn interval_bump(n: usize, center: f64, mass: f64) -> Vec<f64> {
    let g = Geometry::interval(n, 1.0).unwrap();
    mollified_dirac(&g, [center, 0.0], mass, 0.08f64.max(2.0 / n as f64), Side::Interior).unwrap()
}

fn bump_pair(n: usize) -> (MeasurePair, MeasurePair) {
    let g = Geometry::interval(n, 1.0).unwrap();
    (
        MeasurePair::new(g.clone(), interval_bump(n, 0.3, 1.0), vec![0.0; 2]).unwrap(),
        MeasurePair::new(g, interval_bump(n, 0.65, 1.0), vec![0.0; 2]).unwrap(),
    )
}

/// Interior bumps plus fixed boundary atoms (0.3 left, 0.1 right).
fn atom_pair(n: usize) -> (MeasurePair, MeasurePair) {
    let g = Geometry::interval(n, 1.0).unwrap();
    (
        MeasurePair::new(g.clone(), interval_bump(n, 0.3, 0.6), vec![0.3, 0.1]).unwrap(),
        MeasurePair::new(g, interval_bump(n, 0.7, 0.6), vec![0.3, 0.1]).unwrap(),
    )
}

/// `1 + a cos + b sin + c cos(2·)` sampled at `n` cell centres of a period.
fn trig_profile(rng: &mut ChaCha8Rng, n: usize, periodic: bool) -> Vec<f64> {
    let (c1, s1, c2) = (
        rng.gen_range(-0.6..0.6),
        rng.gen_range(-0.6..0.6),
        rng.gen_range(-0.3..0.3),
    );
    let k = if periodic { 2.0 } else { 1.0 } * std::f64::consts::PI;
    let s1 = if periodic { s1 } else { 0.0 };
    (0..n)
        .map(|i| {
            let x = (i as f64 + 0.5) / n as f64;
            1.0 + c1 * (k * x).cos() + s1 * (k * x).sin() + c2 * (2.0 * k * x).cos()
        })
        .collect()
}

fn oracle_values() -> Outcome {
    let out = Command::new(env!("CARGO_BIN_EXE_ringroad"))
        .args(["oracle", "dirac", "--R", "1", "--kappa", "1"])
        .output()
        .map_err(|e| e.to_string())?;
    let text = String::from_utf8_lossy(&out.stdout);
    let printed: f64 = text.trim().parse().map_err(|_| format!("unparsable output {text:?}"))?;
    let dirac_err = (printed - (2f64.sqrt() + 1.5)).abs();
    let fr = oracles::fisher_rao_cost(0.25, 1.0, 1.0).map_err(|e| e.to_string())?;
    let fr_err = (fr - 0.5).abs();
    check(
        out.status.success() && dirac_err <= 1e-9 && fr_err <= 1e-12,
        format!("dirac printed {printed} (err {dirac_err:.1e}), fisher-rao {fr} (err {fr_err:.1e})"),
    )
}

fn dirac_run(n: usize) -> (f64, f64) {
    let g = Geometry::interval(n, 1.0).unwrap();
    let w = mollified_dirac(&g, [0.5, 0.0], 1.0, 4.0 / n as f64, Side::Interior).unwrap();
    let a = MeasurePair::new(g.clone(), w, vec![0.0; 2]).unwrap();
    let b = MeasurePair::new(g, vec![0.0; n], vec![0.0, 1.0]).unwrap();
    let cfg = SolverConfig {
        nt: n,
        max_outer: 50_000,
        stop_tol: 1e-9,
        ..Default::default()
    };
    let start = Instant::now();
    let r = solver::solve_geodesic(&a, &b, &cfg).expect("solver failed");
    (r.primal_value, start.elapsed().as_secs_f64())
}

fn dirac_refinement() -> Outcome {
    let exact = oracles::dirac_cost(0.5, 1.0).unwrap();
    let (p64, _) = dirac_run(64);
    let (p128, secs) = dirac_run(128);
    let (e64, e128) = ((p64 - exact).abs() / exact, (p128 - exact).abs() / exact);
    check(
        e128 <= 0.10 && e64 > e128 && secs < 300.0,
        format!(
            "oracle {exact:.6}, n=64 {p64:.6} ({:.2}%), n=128 {p128:.6} ({:.2}%) in {secs:.0}s",
            100.0 * e64,
            100.0 * e128
        ),
    )
}

fn interior_only() -> Outcome {
    let (a, b) = bump_pair(64);
    let r = solve(&a, &b, 64, 1.0);
    let w2 = oracles::wasserstein_1d(1.0, a.omega(), b.omega()).unwrap();
    let rel = (r.primal_value - w2).abs() / w2;
    check(
        rel <= 0.02,
        format!("primal {:.6} vs W2 {w2:.6} ({:.3}%)", r.primal_value, 100.0 * rel),
    )
}

/// Product-form pair on a thin strip with equal boundary mass.
fn random_strip_pair(seed: u64) -> (MeasurePair, MeasurePair) {
    let (nx, ny) = (32, 4);
    let g = Geometry::strip(nx, ny, 1.0, 0.125).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m: f64 = rng.gen_range(0.1..0.5);
    let mut make = || {
        let a = trig_profile(&mut rng, nx, true);
        let b = trig_profile(&mut rng, ny, false);
        let c = trig_profile(&mut rng, nx, true);
        let mut omega = vec![0.0; g.n_cells()];
        for j in 0..ny {
            for i in 0..nx {
                omega[g.cell(i, j)] = a[i] * b[j];
            }
        }
        MeasurePair::from_shapes(g.clone(), omega, 1.0 - m, c, m).unwrap()
    };
    let a = make();
    (a, make())
}

fn sandwich() -> Outcome {
    let mut worst: f64 = f64::INFINITY;
    let mut bad = Vec::new();
    for seed in 1..=20 {
        let (a, b) = random_strip_pair(seed);
        let lower = oracles::marginal_cost(
            &oracles::strip_marginals(&a).unwrap(),
            &oracles::strip_marginals(&b).unwrap(),
        )
        .unwrap();
        let upper = oracles::marginal_cost(
            &oracles::strip_interior_marginals(&a).unwrap(),
            &oracles::strip_interior_marginals(&b).unwrap(),
        )
        .unwrap()
            + oracles::wasserstein_line(&oracles::edge_line(&a).unwrap(), &oracles::edge_line(&b).unwrap()).unwrap();
        let r = solve(&a, &b, 32, 1.0);
        let slack = 3.0 * stop_tol() * scale(&a, &b);
        let p = r.primal_value;
        let margin = (p - (lower - slack)).min(upper + slack - p);
        worst = worst.min(margin);
        if margin < 0.0 {
            bad.push(format!("seed {seed}: {lower:.6} <= {p:.6} <= {upper:.6}"));
        }
    }
    check(
        bad.is_empty(),
        format!("20 strip pairs, smallest margin {worst:.2e} {}", bad.join("; ")),
    )
}

fn toll_limits() -> Outcome {
    let (a, b) = atom_pair(32);
    let kappas = [0.05, 0.2, 1.0, 5.0, 25.0];
    let cfg = SolverConfig {
        nt: 32,
        ..Default::default()
    };
    let rs = solver::sweep_kappa(&a, &b, &kappas, &cfg).expect("sweep failed");
    let primal: Vec<f64> = rs.iter().map(|r| r.primal_value).collect();
    let slack = 2.0 * stop_tol();
    let monotone = primal.windows(2).all(|w| w[1] >= w[0] - slack);
    let sum = oracles::wasserstein_1d(1.0, a.omega(), b.omega()).unwrap();
    let total =
        oracles::wasserstein_line(&oracles::total_line(&a).unwrap(), &oracles::total_line(&b).unwrap()).unwrap();
    let large = rs.last().unwrap();
    let small = &rs[0];
    let e_large = (large.primal_value - sum).abs() / sum;
    let e_small = (small.primal_value - total).abs() / total;
    let tv = large.exchange_tv();
    let tv_bound = 2f64.sqrt() / large.kappa * large.primal_value.sqrt();
    check(
        monotone && e_large <= 0.05 && tv <= tv_bound && e_small <= 0.05,
        format!(
            "primal {primal:.7?}; kappa=25 {:.2}% off, tv {tv:.2e} <= {tv_bound:.2e}; kappa=0.05 {:.2}% off",
            100.0 * e_large,
            100.0 * e_small
        ),
    )
}

fn incompatible_masses() -> Outcome {
    let n = 32;
    let g = Geometry::interval(n, 1.0).unwrap();
    let a = MeasurePair::new(g.clone(), interval_bump(n, 0.4, 0.8), vec![0.1, 0.1]).unwrap();
    let b = MeasurePair::new(g, interval_bump(n, 0.6, 0.3), vec![0.35, 0.35]).unwrap();
    let kappas = [0.2, 0.5, 1.0, 2.0];
    let cfg = SolverConfig {
        nt: n,
        ..Default::default()
    };
    let rs = solver::sweep_kappa(&a, &b, &kappas, &cfg).expect("sweep failed");
    let mut ok = true;
    let mut parts = Vec::new();
    for r in &rs {
        let bound = r.kappa * r.kappa / 8.0;
        ok &= r.primal_value >= bound;
        parts.push(format!("kappa {}: {:.5} >= {bound:.5}", r.kappa, r.primal_value));
    }
    check(ok, parts.join(", "))
}

/// Smooth endpoints at 64: interior bumps, and bumps with boundary atoms.
fn smooth_suite() -> Vec<(MeasurePair, MeasurePair, GeodesicResult)> {
    [bump_pair(64), atom_pair(64)]
        .into_iter()
        .map(|(a, b)| {
            let r = solve(&a, &b, 64, 1.0);
            (a, b, r)
        })
        .collect()
}

fn duality_gap() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (_, _, r) in smooth_suite() {
        ok &= r.dual_value >= 0.95 * r.primal_value && r.dual_value <= r.primal_value;
        parts.push(format!("dual/primal {:.4}", r.dual_value / r.primal_value));
    }
    check(ok, parts.join(", "))
}

fn constant_speed() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (_, _, r) in smooth_suite() {
        let s = &r.action_slices;
        let mean = s.iter().sum::<f64>() / s.len() as f64;
        let sd = (s.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / s.len() as f64).sqrt();
        ok &= r.converged && sd / mean <= 0.1;
        parts.push(format!("stddev/mean {:.4} (converged {})", sd / mean, r.converged));
    }
    check(ok, parts.join(", "))
}

fn random_interval_measure(rng: &mut ChaCha8Rng, n: usize) -> MeasurePair {
    let g = Geometry::interval(n, 1.0).unwrap();
    let omega = trig_profile(rng, n, false);
    let gamma = vec![rng.gen_range(0.2..1.0), rng.gen_range(0.2..1.0)];
    let m = rng.gen_range(0.1..0.4);
    MeasurePair::from_shapes(g, omega, 1.0 - m, gamma, m).unwrap()
}

fn metric_axioms() -> Outcome {
    let tol = stop_tol();
    let (a, b) = atom_pair(32);
    let (ab, ba) = (solve(&a, &b, 32, 1.0), solve(&b, &a, 32, 1.0));
    let sym = (ab.primal_value - ba.primal_value).abs();
    let sym_ok = sym <= 2.0 * tol * scale(&a, &b);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = f64::INFINITY;
    for _ in 0..10 {
        let m: Vec<MeasurePair> = (0..3).map(|_| random_interval_measure(&mut rng, 32)).collect();
        let d = |i: usize, j: usize| solve(&m[i], &m[j], 32, 1.0).primal_value.max(0.0).sqrt();
        let s = m.iter().map(|x| x.max_density()).fold(0.0, f64::max);
        worst = worst.min(d(0, 1) + d(1, 2) + 3.0 * tol * s - d(0, 2));
    }
    check(
        sym_ok && worst >= 0.0,
        format!("symmetry defect {sym:.2e}, smallest triangle margin {worst:.3e} over 10 triples"),
    )
}

fn flow_suite() -> Vec<(MeasurePair, EnergySpec, f64)> {
    let gi = Geometry::interval(32, 1.0).unwrap();
    let omega: Vec<f64> = (0..32)
        .map(|c| 1.0 + 0.6 * (2.0 * std::f64::consts::PI * (c as f64 + 0.5) / 32.0).cos())
        .collect();
    let a = MeasurePair::from_shapes(gi.clone(), omega, 0.8, vec![0.3, 0.7], 0.2).unwrap();
    let gs = Geometry::strip(16, 8, 1.0, 0.5).unwrap();
    let mut omega = vec![0.0; gs.n_cells()];
    for c in 0..gs.n_cells() {
        let [x, y] = gs.cell_center(c);
        omega[c] = 1.0 + 0.5 * (2.0 * std::f64::consts::PI * x).sin() * (2.0 * std::f64::consts::PI * y).cos();
    }
    let gamma: Vec<f64> = (0..16).map(|b| 1.0 + 0.4 * (b as f64).cos()).collect();
    let b = MeasurePair::from_shapes(gs.clone(), omega, 0.75, gamma, 0.25).unwrap();
    let tilt = |g: &Geometry| {
        let v = (0..g.n_cells()).map(|c| 0.8 * g.cell_center(c)[0]).collect();
        let vb = (0..g.n_boundary()).map(|k| 0.3 * (k as f64).sin()).collect();
        EnergySpec::boltzmann(g, v, vb).unwrap()
    };
    vec![
        (a.clone(), EnergySpec::boltzmann_flat(&gi), 1.0),
        (a.clone(), tilt(&gi), 0.3),
        (a, EnergySpec::renyi(&gi, 2.0, 3.0).unwrap(), 1.0),
        (b.clone(), EnergySpec::boltzmann_flat(&gs), 0.5),
        (b.clone(), tilt(&gs), 2.0),
        (b, EnergySpec::renyi(&gs, 1.5, 2.0).unwrap(), 1.0),
    ]
}

fn gradient_flow() -> Outcome {
    let suite = flow_suite();

    let mut gibbs_flux: f64 = 0.0;
    for (rho, spec, kappa) in &suite {
        if spec.kind == gradflow::EnergyKind::Boltzmann {
            let pi = gradflow::gibbs(rho.geometry(), spec).unwrap();
            gibbs_flux = gibbs_flux.max(gradflow::gradient_field(&pi, spec, *kappa).unwrap().max_abs());
        }
    }

    let (rho, spec, kappa) = &suite[1];
    let tau = gradflow::cfl_bound(rho, spec, *kappa).unwrap();
    let long = gradflow::run_recorded(rho, spec, *kappa, 10_000.0 * tau, tau, 100).unwrap();
    let drift = long.series.iter().map(|s| s.2).fold(0.0, f64::max);

    let mut monotone = true;
    let mut order = f64::INFINITY;
    for (rho, spec, kappa) in &suite {
        let tau = gradflow::cfl_bound(rho, spec, *kappa).unwrap();
        let traj = gradflow::run(rho, spec, *kappa, 500.0 * tau, tau).unwrap();
        monotone &= traj.series.windows(2).all(|w| w[1].1 <= w[0].1);

        let s0 = FlowState::new(rho.clone(), spec).unwrap();
        let d = gradflow::dissipation(rho, spec, *kappa).unwrap();
        let err = |t: f64| gradflow::step(&s0, spec, *kappa, t).unwrap().energy - s0.energy + t * d;
        order = order.min((err(tau / 4.0) / err(tau / 8.0)).abs().log2());
    }
    check(
        gibbs_flux <= 1e-12 && drift <= 1e-13 && long.steps >= 10_000 && monotone && order >= 1.9,
        format!(
            "gibbs flux {gibbs_flux:.1e}, drift {drift:.1e} over {} steps, monotone {monotone}, order {order:.3}",
            long.steps
        ),
    )
}

fn bl_estimate() -> Outcome {
    let times: Vec<f64> = (0..=8).map(|k| k as f64 / 8.0).collect();
    let mut cases = Vec::new();
    let (a, b) = bump_pair(32);
    cases.push(solve(&a, &b, 32, 1.0));
    let (a, b) = atom_pair(32);
    cases.push(solve(&a, &b, 32, 0.2));
    cases.push(solve(&a, &b, 32, 5.0));
    let g = Geometry::interval(32, 1.0).unwrap();
    let a = MeasurePair::new(g.clone(), interval_bump(32, 0.4, 0.8), vec![0.1, 0.1]).unwrap();
    let b = MeasurePair::new(g, interval_bump(32, 0.6, 0.6), vec![0.1, 0.3]).unwrap();
    cases.push(solve(&a, &b, 32, 0.5));
    let (a, b) = random_strip_pair(1);
    cases.push(solve(&a, &b, 32, 1.0));

    let mut worst: f64 = 0.0;
    let mut used = 0;
    for r in cases.iter().filter(|r| r.converged) {
        used += 1;
        let frames = solver::geodesic_frames(r, &times).unwrap();
        let c = 4.0 * 1f64.max(1.0 / r.kappa) * r.primal_value.max(0.0).sqrt();
        for i in 0..frames.len() {
            for j in i + 1..frames.len() {
                let d = oracles::bounded_lipschitz_pair(&frames[i].measure, &frames[j].measure).unwrap();
                let bound = c * (frames[j].time - frames[i].time).sqrt();
                worst = worst.max(d / bound);
            }
        }
    }
    check(
        used > 0 && worst <= 1.05,
        format!("{used} converged geodesics, largest d_BL / bound {worst:.3}"),
    )
}
