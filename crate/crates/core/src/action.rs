//! Kinetic Lagrangians `|p|²/(2ρ)` for the interior and the boundary, the
//! action of a discrete path, and their proximal maps.

use std::fmt;
use std::ops::Add;

use serde::{Deserialize, Serialize};

use crate::constraint::{interpolate_colocate, Colocated, SpaceTimePath};
use crate::error::{Error, Result};
use crate::geometry::Geometry;

/// Extended nonnegative value: finite or `+∞`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ActionValue {
    Finite(f64),
    Infinite,
}

impl ActionValue {
    pub fn is_finite(self) -> bool {
        matches!(self, ActionValue::Finite(_))
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            ActionValue::Finite(v) => Some(v),
            ActionValue::Infinite => None,
        }
    }

    /// Scale by a positive factor.
    pub fn scale(self, a: f64) -> ActionValue {
        match self {
            ActionValue::Finite(v) => ActionValue::Finite(a * v),
            ActionValue::Infinite => ActionValue::Infinite,
        }
    }
}

impl Add for ActionValue {
    type Output = ActionValue;
    fn add(self, rhs: ActionValue) -> ActionValue {
        match (self, rhs) {
            (ActionValue::Finite(a), ActionValue::Finite(b)) => ActionValue::Finite(a + b),
            _ => ActionValue::Infinite,
        }
    }
}

impl std::iter::Sum for ActionValue {
    fn sum<I: Iterator<Item = ActionValue>>(iter: I) -> Self {
        iter.fold(ActionValue::Finite(0.0), |a, b| a + b)
    }
}

impl fmt::Display for ActionValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActionValue::Finite(v) => write!(f, "{v}"),
            ActionValue::Infinite => write!(f, "inf"),
        }
    }
}

/// A density with its momentum. On the boundary the last momentum slot
/// holds `κ·f`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KineticPoint {
    pub density: f64,
    pub momentum: Vec<f64>,
}

impl KineticPoint {
    pub fn new(density: f64, momentum: Vec<f64>) -> Self {
        KineticPoint { density, momentum }
    }

    pub fn value(&self) -> ActionValue {
        kinetic_value(self.density, &self.momentum)
    }
}

/// `|p|²/(2ρ)`, with `0` at the origin and `+∞` off the closed cone.
pub fn kinetic_value(density: f64, momentum: &[f64]) -> ActionValue {
    let p2: f64 = momentum.iter().map(|v| v * v).sum();
    if density > 0.0 {
        ActionValue::Finite(0.5 * p2 / density)
    } else if density == 0.0 && momentum.iter().all(|&v| v == 0.0) {
        ActionValue::Finite(0.0)
    } else {
        ActionValue::Infinite
    }
}

/// Boundary Lagrangian `(|G|² + κ²f²)/(2γ)`.
pub fn boundary_value(gamma: f64, tangential: &[f64], exchange: f64, kappa: f64) -> ActionValue {
    let mut p = tangential.to_vec();
    p.push(kappa * exchange);
    kinetic_value(gamma, &p)
}

/// Parameters of the proximal map.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProxParams {
    pub sigma: f64,
    pub newton_tol: f64,
    pub max_newton: usize,
}

impl Default for ProxParams {
    fn default() -> Self {
        ProxParams {
            sigma: 1.0,
            newton_tol: 1e-12,
            max_newton: 100,
        }
    }
}

impl ProxParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        if !(self.newton_tol > 0.0) {
            return Err(Error::InvalidParameter("newton_tol must be positive".into()));
        }
        Ok(())
    }
}

/// Proximal map of `σ·|p|²/(2ρ)`, written into `momentum`; returns the density.
///
/// The optimal density is the root of `(ρ−ρ̃)(ρ+σ)² = σ|p̃|²/2` on
/// `[max(ρ̃,0), ∞)`, where the cubic is increasing and convex.
pub fn prox_kinetic_in_place(rho: f64, momentum: &mut [f64], params: &ProxParams) -> Result<f64> {
    let sigma = params.sigma;
    let p2: f64 = momentum.iter().map(|v| v * v).sum();
    let rhs = 0.5 * sigma * p2;
    let g = |r: f64| (r - rho) * (r + sigma) * (r + sigma) - rhs;
    let lo0 = rho.max(0.0);
    if g(lo0) >= 0.0 {
        // root at or below zero (or exactly ρ̃ ≥ 0 with p̃ = 0)
        if rho >= 0.0 && p2 == 0.0 {
            return Ok(rho);
        }
        momentum.iter_mut().for_each(|v| *v = 0.0);
        return Ok(0.0);
    }
    let (mut lo, mut hi) = (lo0, lo0 + p2 / (2.0 * sigma));
    let tol = params.newton_tol * (1.0 + rho.abs());
    let mut r = lo0 + sigma;
    if r > hi {
        r = 0.5 * (lo + hi);
    }
    let mut converged = false;
    let mut last = f64::INFINITY;
    for _ in 0..params.max_newton {
        let gr = g(r);
        last = gr;
        let scale = (r + sigma) * (r + sigma);
        if gr.abs() <= tol * scale.max(1.0) {
            converged = true;
            break;
        }
        if gr > 0.0 {
            hi = r;
        } else {
            lo = r;
        }
        let dg = (r + sigma) * (3.0 * r + sigma - 2.0 * rho);
        let mut next = r - gr / dg;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - r).abs() <= 1e-15 * (1.0 + r.abs()) || hi - lo <= 1e-15 * (1.0 + hi.abs()) {
            r = next;
            converged = true;
            break;
        }
        r = next;
    }
    if !converged {
        return Err(Error::NotConverged {
            what: "kinetic prox (Newton)",
            residual: last.abs(),
        });
    }
    if r <= 0.0 {
        momentum.iter_mut().for_each(|v| *v = 0.0);
        return Ok(0.0);
    }
    let s = r / (r + sigma);
    momentum.iter_mut().for_each(|v| *v *= s);
    Ok(r)
}

/// Proximal map of `σ·|p|²/(2ρ)` at `(ρ̃, p̃)`.
pub fn prox_kinetic(rho: f64, momentum: &[f64], params: &ProxParams) -> Result<KineticPoint> {
    params.validate()?;
    let mut p = momentum.to_vec();
    let d = prox_kinetic_in_place(rho, &mut p, params)?;
    Ok(KineticPoint::new(d, p))
}

/// Proximal map of `σ·(|G|²+κ²f²)/(2γ)`; returns `(γ, G, f)`.
pub fn prox_boundary(
    gamma: f64,
    tangential: &[f64],
    exchange: f64,
    kappa: f64,
    params: &ProxParams,
) -> Result<(f64, Vec<f64>, f64)> {
    params.validate()?;
    check_kappa(kappa)?;
    let mut p = tangential.to_vec();
    p.push(kappa * exchange);
    let d = prox_kinetic_in_place(gamma, &mut p, params)?;
    let f = p.pop().expect("packed slot") / kappa;
    Ok((d, p, f))
}

pub fn check_kappa(kappa: f64) -> Result<()> {
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(Error::InvalidParameter(format!("kappa must be positive, got {kappa}")));
    }
    Ok(())
}

/// Action of co-located fields, total and per time interval (the per-interval
/// values are spatial integrals, so the total is their mean).
pub fn colocated_action(v: &Colocated, geometry: &Geometry, kappa: f64) -> (ActionValue, Vec<ActionValue>) {
    let nt = v.nt();
    let dt = 1.0 / nt as f64;
    let vol = geometry.cell_volume();
    let len = geometry.boundary_length();
    let has_tan = v.tangential.ncols() > 0;
    let mut slices = Vec::with_capacity(nt);
    for k in 0..nt {
        let mut interior = ActionValue::Finite(0.0);
        for c in 0..v.density.ncols() {
            let m = v.momentum.slice(ndarray::s![k, c, ..]);
            interior = interior + kinetic_value(v.density[[k, c]], m.as_slice().expect("contiguous"));
        }
        let mut boundary = ActionValue::Finite(0.0);
        for b in 0..v.boundary_density.ncols() {
            let tan: &[f64] = if has_tan {
                std::slice::from_ref(&v.tangential[[k, b]])
            } else {
                &[]
            };
            boundary = boundary + boundary_value(v.boundary_density[[k, b]], tan, v.exchange[[k, b]], kappa);
        }
        slices.push(interior.scale(vol) + boundary.scale(len));
    }
    let total = slices.iter().copied().sum::<ActionValue>().scale(dt);
    (total, slices)
}

/// Action of a staggered path, evaluated after co-location.
pub fn eval_action(path: &SpaceTimePath, kappa: f64) -> Result<ActionValue> {
    check_kappa(kappa)?;
    let v = interpolate_colocate(path)?;
    Ok(colocated_action(&v, &path.geometry, kappa).0)
}

/// Apply the proximal map of `σ·A` cell by cell to co-located fields.
pub fn prox_colocated(v: &mut Colocated, kappa: f64, params: &ProxParams) -> Result<()> {
    prox_colocated_split(v, kappa, params, params)
}

/// As [`prox_colocated`] with a separate step for the boundary cells.
pub fn prox_colocated_split(v: &mut Colocated, kappa: f64, params: &ProxParams, boundary: &ProxParams) -> Result<()> {
    let nt = v.nt();
    let dim = v.momentum.shape()[2];
    let has_tan = v.tangential.ncols() > 0;
    let mut buf = [0.0; 3];
    for k in 0..nt {
        for c in 0..v.density.ncols() {
            for a in 0..dim {
                buf[a] = v.momentum[[k, c, a]];
            }
            let d = prox_kinetic_in_place(v.density[[k, c]], &mut buf[..dim], params)?;
            v.density[[k, c]] = d;
            for a in 0..dim {
                v.momentum[[k, c, a]] = buf[a];
            }
        }
        for b in 0..v.boundary_density.ncols() {
            let n = if has_tan {
                buf[0] = v.tangential[[k, b]];
                buf[1] = kappa * v.exchange[[k, b]];
                2
            } else {
                buf[0] = kappa * v.exchange[[k, b]];
                1
            };
            let d = prox_kinetic_in_place(v.boundary_density[[k, b]], &mut buf[..n], boundary)?;
            v.boundary_density[[k, b]] = d;
            if has_tan {
                v.tangential[[k, b]] = buf[0];
            }
            v.exchange[[k, b]] = buf[n - 1] / kappa;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn objective(r: f64, p: &[f64], rt: f64, pt: &[f64], sigma: f64) -> f64 {
        let a = match kinetic_value(r, p) {
            ActionValue::Finite(v) => v,
            ActionValue::Infinite => return f64::INFINITY,
        };
        let d2: f64 = (r - rt).powi(2) + p.iter().zip(pt).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        a + d2 / (2.0 * sigma)
    }

    /// Brute-force minimization over a grid refined around the best point.
    fn grid_prox(rt: f64, pt: &[f64], sigma: f64) -> (f64, Vec<f64>) {
        let n = pt.len();
        let mut center = vec![rt.max(0.0)];
        center.extend_from_slice(pt);
        let mut span = 4.0 + rt.abs() + pt.iter().map(|v| v.abs()).sum::<f64>();
        let steps = 24i32;
        for _ in 0..40 {
            let mut best = (f64::INFINITY, center.clone());
            let mut idx = vec![-steps; n + 1];
            loop {
                let x: Vec<f64> = idx
                    .iter()
                    .zip(&center)
                    .map(|(&i, &c)| c + span * i as f64 / steps as f64)
                    .collect();
                if x[0] >= 0.0 {
                    let v = objective(x[0], &x[1..], rt, pt, sigma);
                    if v < best.0 {
                        best = (v, x);
                    }
                }
                let mut d = 0;
                while d <= n {
                    idx[d] += 1;
                    if idx[d] <= steps {
                        break;
                    }
                    idx[d] = -steps;
                    d += 1;
                }
                if d > n {
                    break;
                }
            }
            center = best.1;
            span *= 0.25;
        }
        (center[0], center[1..].to_vec())
    }

    fn bisect_cubic(rt: f64, p2: f64, sigma: f64) -> f64 {
        let g = |r: f64| (r - rt) * (r + sigma) * (r + sigma) - 0.5 * sigma * p2;
        let (mut lo, mut hi) = (rt.max(0.0), rt.max(0.0) + 100.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) > 0.0 {
                hi = mid
            } else {
                lo = mid
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn value_rules() {
        assert_eq!(kinetic_value(0.0, &[0.0]), ActionValue::Finite(0.0));
        assert_eq!(kinetic_value(0.0, &[1e-300]), ActionValue::Infinite);
        assert_eq!(kinetic_value(-1e-12, &[0.0]), ActionValue::Infinite);
        assert_eq!(kinetic_value(2.0, &[2.0, 0.0]), ActionValue::Finite(1.0));
        assert_eq!(boundary_value(1.0, &[], 1.0, 2.0), ActionValue::Finite(2.0));
    }

    #[test]
    fn prox_at_minimizer_is_identity() {
        let p = prox_kinetic(1.0, &[0.0], &ProxParams::default()).unwrap();
        assert_eq!(p.density, 1.0);
        assert_eq!(p.momentum, vec![0.0]);
    }

    #[test]
    fn prox_clamps_negative_density() {
        let p = prox_kinetic(-1.0, &[0.0], &ProxParams::default()).unwrap();
        assert_eq!((p.density, p.momentum[0]), (0.0, 0.0));
        let (r, m) = grid_prox(-1.0, &[0.0], 1.0);
        assert!(r < 1e-6 && m[0].abs() < 1e-6);
    }

    #[test]
    fn prox_matches_cubic_and_grid_oracles() {
        let params = ProxParams::default();
        let p = prox_kinetic(0.0, &[2.0, 0.0], &params).unwrap();
        let root = bisect_cubic(0.0, 4.0, 1.0);
        assert_abs_diff_eq!(p.density, root, epsilon = 1e-12);
        assert_abs_diff_eq!(p.density * (p.density + 1.0).powi(2), 2.0, epsilon = 1e-10);
        let (r, m) = grid_prox(0.0, &[2.0, 0.0], 1.0);
        assert_abs_diff_eq!(p.density, r, epsilon = 1e-6);
        assert_abs_diff_eq!(p.momentum[0], m[0], epsilon = 1e-6);
        assert_abs_diff_eq!(p.momentum[1], m[1], epsilon = 1e-6);
    }

    #[test]
    fn boundary_prox_matches_grid_oracle() {
        let params = ProxParams::default();
        let (g, tan, f) = prox_boundary(1.0, &[], 1.0, 2.0, &params).unwrap();
        assert!(tan.is_empty());
        // oracle over (γ, f): the proximal distance is measured in the packed
        // coordinate κf, so the f term carries a factor κ²
        let obj = |gm: f64, ff: f64| {
            if gm <= 0.0 {
                return f64::INFINITY;
            }
            2.0 * ff * ff / gm + 0.5 * (gm - 1.0).powi(2) + 2.0 * (ff - 1.0).powi(2)
        };
        let (mut cg, mut cf, mut span) = (1.0, 0.5, 2.0);
        for _ in 0..40 {
            let mut best = (f64::INFINITY, cg, cf);
            for i in -20..=20 {
                for j in -20..=20 {
                    let (a, b) = (cg + span * i as f64 / 20.0, cf + span * j as f64 / 20.0);
                    let v = obj(a, b);
                    if v < best.0 {
                        best = (v, a, b);
                    }
                }
            }
            cg = best.1;
            cf = best.2;
            span *= 0.25;
        }
        assert_abs_diff_eq!(g, cg, epsilon = 1e-6);
        assert_abs_diff_eq!(f, cf, epsilon = 1e-6);
    }

    #[test]
    fn boundary_prox_with_unit_kappa_is_kinetic_prox() {
        let params = ProxParams::default();
        let (g, tan, f) = prox_boundary(0.3, &[0.7], -0.4, 1.0, &params).unwrap();
        let p = prox_kinetic(0.3, &[0.7, -0.4], &params).unwrap();
        assert_eq!(g, p.density);
        assert_eq!(tan[0], p.momentum[0]);
        assert_eq!(f, p.momentum[1]);
    }

    #[test]
    fn colocated_action_of_unit_flow() {
        let g = Geometry::interval(4, 1.0).unwrap();
        let mut v = Colocated::zeros(&g, 2);
        v.density.fill(1.0);
        v.momentum.fill(1.0);
        let (total, slices) = colocated_action(&v, &g, 1.0);
        assert_eq!(total, ActionValue::Finite(0.5));
        assert_eq!(slices.len(), 2);
        v.density[[1, 2]] = 0.0;
        assert_eq!(colocated_action(&v, &g, 1.0).0, ActionValue::Infinite);
    }

    #[test]
    fn bad_parameters_are_rejected() {
        let bad = ProxParams {
            sigma: 0.0,
            ..ProxParams::default()
        };
        assert!(prox_kinetic(1.0, &[1.0], &bad).is_err());
        assert!(prox_boundary(1.0, &[], 1.0, 0.0, &ProxParams::default()).is_err());
    }
}
