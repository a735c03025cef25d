//! Dual certificates: Hamilton–Jacobi residuals of candidate potentials,
//! repair into subsolutions, and the dual objective.
//!
//! Potentials live on time nodes × grid vertices (`φ`) and time nodes ×
//! boundary vertices (`ψ`). Derivatives are taken on space-time boxes: the
//! time difference of the spatial average, and the spatial difference of the
//! time average. With this choice the dual objective is bounded by the
//! action of every discretely feasible path, without discretization slack.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::action::check_kappa;
use crate::constraint::{interpolate_colocate, SpaceTimePath};
use crate::error::{Error, Result};
use crate::geometry::Geometry;
use crate::measures::MeasurePair;

/// Candidate dual potentials `(φ, ψ)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialPair {
    pub geometry: Geometry,
    /// `(nt + 1) × n_vertices`.
    pub phi: Array2<f64>,
    /// `(nt + 1) × n_boundary_vertices`.
    pub psi: Array2<f64>,
}

impl PotentialPair {
    pub fn zeros(geometry: &Geometry, nt: usize) -> Self {
        PotentialPair {
            geometry: geometry.clone(),
            phi: Array2::zeros((nt + 1, geometry.n_vertices())),
            psi: Array2::zeros((nt + 1, geometry.n_boundary_vertices())),
        }
    }

    /// Sample `φ(t, x)` and `ψ(t, x)` at the vertices.
    pub fn from_fn(
        geometry: &Geometry,
        nt: usize,
        phi: impl Fn(f64, [f64; 2]) -> f64,
        psi: impl Fn(f64, [f64; 2]) -> f64,
    ) -> Self {
        let mut p = PotentialPair::zeros(geometry, nt);
        for k in 0..=nt {
            let t = k as f64 / nt as f64;
            for v in 0..geometry.n_vertices() {
                p.phi[[k, v]] = phi(t, geometry.vertex_position(v));
            }
            for b in 0..geometry.n_boundary_vertices() {
                p.psi[[k, b]] = psi(t, geometry.boundary_vertex_position(b));
            }
        }
        p
    }

    pub fn nt(&self) -> usize {
        self.phi.nrows() - 1
    }

    pub fn check_shape(&self) -> Result<()> {
        let g = &self.geometry;
        if self.phi.nrows() < 2
            || self.phi.ncols() != g.n_vertices()
            || self.psi.nrows() != self.phi.nrows()
            || self.psi.ncols() != g.n_boundary_vertices()
        {
            return Err(Error::Dimension(format!(
                "potentials have shapes {:?} and {:?}, geometry expects ({{nt+1}}, {}) and ({{nt+1}}, {})",
                self.phi.dim(),
                self.psi.dim(),
                g.n_vertices(),
                g.n_boundary_vertices()
            )));
        }
        Ok(())
    }

    /// Add a common constant to both potentials.
    pub fn shifted(&self, k: f64) -> Self {
        let mut p = self.clone();
        p.phi.mapv_inplace(|v| v + k);
        p.psi.mapv_inplace(|v| v + k);
        p
    }

    fn scale(&self) -> f64 {
        1.0 + self
            .phi
            .iter()
            .chain(self.psi.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Vertex potentials from cell/interval values (e.g. constraint
    /// multipliers): averaged onto vertices and time nodes, with linear
    /// extrapolation at the ends.
    pub fn from_cell_values(geometry: &Geometry, interior: &Array2<f64>, boundary: &Array2<f64>) -> Result<Self> {
        let nt = interior.nrows();
        if nt == 0 || interior.ncols() != geometry.n_cells() || boundary.dim() != (nt, geometry.n_boundary()) {
            return Err(Error::Dimension("cell potentials do not match geometry".into()));
        }
        let nodes_i = time_nodes(interior);
        let nodes_b = time_nodes(boundary);
        let mut p = PotentialPair::zeros(geometry, nt);
        let (nx, ny) = (geometry.nx(), geometry.ny());
        for k in 0..=nt {
            let row = nodes_i.row(k);
            if geometry.is_strip() {
                // average in x (periodic), then extrapolate in y at the ends
                let xavg = |j: usize, i: usize| 0.5 * (row[geometry.cell(i + nx - 1, j)] + row[geometry.cell(i, j)]);
                for i in 0..nx {
                    for j in 0..=ny {
                        let v = if ny == 1 {
                            xavg(0, i)
                        } else if j == 0 {
                            1.5 * xavg(0, i) - 0.5 * xavg(1, i)
                        } else if j == ny {
                            1.5 * xavg(ny - 1, i) - 0.5 * xavg(ny - 2, i)
                        } else {
                            0.5 * (xavg(j - 1, i) + xavg(j, i))
                        };
                        p.phi[[k, geometry.vertex(i, j)]] = v;
                    }
                }
                let brow = nodes_b.row(k);
                for b in 0..nx {
                    p.psi[[k, b]] = 0.5 * (brow[(b + nx - 1) % nx] + brow[b]);
                }
            } else {
                for v in 0..=nx {
                    p.phi[[k, v]] = if v == 0 {
                        1.5 * row[0] - 0.5 * row[1]
                    } else if v == nx {
                        1.5 * row[nx - 1] - 0.5 * row[nx - 2]
                    } else {
                        0.5 * (row[v - 1] + row[v])
                    };
                }
                p.psi.row_mut(k).assign(&nodes_b.row(k));
            }
        }
        Ok(p)
    }
}

/// Interval values → node values, linear extrapolation at both ends.
fn time_nodes(a: &Array2<f64>) -> Array2<f64> {
    let (nt, n) = a.dim();
    let mut out = Array2::zeros((nt + 1, n));
    for c in 0..n {
        for k in 0..=nt {
            out[[k, c]] = if nt == 1 {
                a[[0, c]]
            } else if k == 0 {
                1.5 * a[[0, c]] - 0.5 * a[[1, c]]
            } else if k == nt {
                1.5 * a[[nt - 1, c]] - 0.5 * a[[nt - 2, c]]
            } else {
                0.5 * (a[[k - 1, c]] + a[[k, c]])
            };
        }
    }
    out
}

/// Vertices of each interior cell and of each boundary cell.
struct Stencil {
    /// Up to four vertices per cell (interval cells use the first two).
    cell_vertices: Vec<[usize; 4]>,
    /// Boundary vertices bounding each boundary cell (equal on the interval).
    boundary_vertices: Vec<[usize; 2]>,
    /// Interior vertices carrying the trace of `φ` under each boundary cell.
    trace_vertices: Vec<[usize; 2]>,
    strip: bool,
    hx: f64,
    hy: f64,
}

impl Stencil {
    fn new(g: &Geometry) -> Self {
        let nx = g.nx();
        let strip = g.is_strip();
        let cell_vertices = (0..g.n_cells())
            .map(|c| {
                let (i, j) = (c % nx, c / nx);
                if strip {
                    [
                        g.vertex(i, j),
                        g.vertex(i + 1, j),
                        g.vertex(i, j + 1),
                        g.vertex(i + 1, j + 1),
                    ]
                } else {
                    [c, c + 1, c, c + 1]
                }
            })
            .collect();
        let (boundary_vertices, trace_vertices) = (0..g.n_boundary())
            .map(|b| {
                if strip {
                    ([b, (b + 1) % nx], [g.vertex(b, 0), g.vertex(b + 1, 0)])
                } else {
                    let v = g.boundary_coupling(b).vertex;
                    ([b, b], [v, v])
                }
            })
            .unzip();
        Stencil {
            cell_vertices,
            boundary_vertices,
            trace_vertices,
            strip,
            hx: g.hx(),
            hy: g.hy(),
        }
    }

    /// `(∂_t, ∇)` of `φ` on the box of cell `c` over interval `k`.
    fn interior(&self, phi: &Array2<f64>, k: usize, c: usize, dt: f64) -> (f64, [f64; 2]) {
        let v = self.cell_vertices[c];
        let (p0, p1) = (phi.row(k), phi.row(k + 1));
        if self.strip {
            let avg = |r: &ndarray::ArrayView1<f64>| 0.25 * (r[v[0]] + r[v[1]] + r[v[2]] + r[v[3]]);
            let t = |i: usize| 0.5 * (p0[v[i]] + p1[v[i]]);
            let a = (avg(&p1) - avg(&p0)) / dt;
            let bx = ((t(1) - t(0)) + (t(3) - t(2))) / (2.0 * self.hx);
            let by = ((t(2) - t(0)) + (t(3) - t(1))) / (2.0 * self.hy);
            (a, [bx, by])
        } else {
            let a = 0.5 * ((p1[v[0]] + p1[v[1]]) - (p0[v[0]] + p0[v[1]])) / dt;
            let b = 0.5 * ((p0[v[1]] - p0[v[0]]) + (p1[v[1]] - p1[v[0]])) / self.hx;
            (a, [b, 0.0])
        }
    }

    /// `(∂_t ψ, ∇ψ, ψ − φ)` on boundary cell `b` over interval `k`.
    fn boundary(&self, phi: &Array2<f64>, psi: &Array2<f64>, k: usize, b: usize, dt: f64) -> (f64, f64, f64) {
        let [u0, u1] = self.boundary_vertices[b];
        let [w0, w1] = self.trace_vertices[b];
        let (s0, s1) = (psi.row(k), psi.row(k + 1));
        let (q0, q1) = (phi.row(k), phi.row(k + 1));
        let c = 0.5 * ((s1[u0] + s1[u1]) - (s0[u0] + s0[u1])) / dt;
        let d = if self.strip {
            0.5 * ((s0[u1] - s0[u0]) + (s1[u1] - s1[u0])) / self.hx
        } else {
            0.0
        };
        let psi_avg = 0.25 * (s0[u0] + s0[u1] + s1[u0] + s1[u1]);
        let phi_avg = 0.25 * (q0[w0] + q0[w1] + q1[w0] + q1[w1]);
        (c, d, psi_avg - phi_avg)
    }
}

fn interior_residual(a: f64, b: [f64; 2]) -> f64 {
    a + 0.5 * (b[0] * b[0] + b[1] * b[1])
}

fn boundary_residual(c: f64, d: f64, e: f64, kappa: f64) -> f64 {
    c + 0.5 * d * d + e * e / (2.0 * kappa * kappa)
}

/// Residual fields of the two Hamilton–Jacobi inequalities.
pub fn residual_fields(pot: &PotentialPair, kappa: f64) -> Result<(Array2<f64>, Array2<f64>)> {
    pot.check_shape()?;
    check_kappa(kappa)?;
    let g = &pot.geometry;
    let st = Stencil::new(g);
    let nt = pot.nt();
    let dt = 1.0 / nt as f64;
    let mut ri = Array2::zeros((nt, g.n_cells()));
    let mut rb = Array2::zeros((nt, g.n_boundary()));
    for k in 0..nt {
        for c in 0..g.n_cells() {
            let (a, b) = st.interior(&pot.phi, k, c, dt);
            ri[[k, c]] = interior_residual(a, b);
        }
        for b in 0..g.n_boundary() {
            let (c, d, e) = st.boundary(&pot.phi, &pot.psi, k, b, dt);
            rb[[k, b]] = boundary_residual(c, d, e, kappa);
        }
    }
    Ok((ri, rb))
}

/// Residuals and their size relative to a path's support.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HJReport {
    /// `∂_tφ + ½|∇φ|²` per (interval, cell). Positive values are violations.
    pub phi_residual: Array2<f64>,
    /// `∂_tψ + ½|∇ψ|² + (ψ−φ)²/(2κ²)` per (interval, boundary cell).
    pub psi_residual: Array2<f64>,
    pub support_violation: SupportViolation,
    /// Largest positive residual.
    pub max_violation: f64,
    pub dual_value: Option<f64>,
}

/// Weighted ℓ¹ norms of the residuals.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupportViolation {
    /// `∫ r⁺` over space-time (both residuals).
    pub positive_part: f64,
    /// `∫ |r|` over cells where the co-located density exceeds the threshold.
    pub on_support: f64,
    /// The density threshold used.
    pub threshold: f64,
}

/// Hamilton–Jacobi residuals of `pot`, with support diagnostics against
/// `path` (support = co-located density above `rel_threshold · max`).
pub fn hj_residuals(pot: &PotentialPair, path: &SpaceTimePath, kappa: f64, rel_threshold: f64) -> Result<HJReport> {
    let (ri, rb) = residual_fields(pot, kappa)?;
    path.check_shape()?;
    if path.geometry != pot.geometry || path.nt() != pot.nt() {
        return Err(Error::Dimension("path and potentials differ in grid".into()));
    }
    let g = &pot.geometry;
    let v = interpolate_colocate(path)?;
    let dmax = v
        .density
        .iter()
        .chain(v.boundary_density.iter())
        .fold(0.0f64, |m, x| m.max(*x));
    let threshold = rel_threshold * dmax;
    let dt = path.dt();
    let (wi, wb) = (g.cell_volume() * dt, g.boundary_length() * dt);
    let mut pos = 0.0;
    let mut sup = 0.0;
    for (r, d) in ri.iter().zip(v.density.iter()) {
        pos += wi * r.max(0.0);
        if *d > threshold {
            sup += wi * r.abs();
        }
    }
    for (r, d) in rb.iter().zip(v.boundary_density.iter()) {
        pos += wb * r.max(0.0);
        if *d > threshold {
            sup += wb * r.abs();
        }
    }
    let max_violation = ri.iter().chain(rb.iter()).fold(0.0f64, |m, r| m.max(*r));
    Ok(HJReport {
        phi_residual: ri,
        psi_residual: rb,
        support_violation: SupportViolation {
            positive_part: pos,
            on_support: sup,
            threshold,
        },
        max_violation,
        dual_value: None,
    })
}

/// Result of [`feasibilize`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Feasibilized {
    pub potentials: PotentialPair,
    /// True when both residuals are at most `1e-9 · scale` everywhere.
    pub feasible: bool,
    pub max_violation: f64,
}

/// Interval of shifts `t` with `t²/(8κ²) + (1/dt + e/(2κ²)) t + r ≤ 0`.
fn admissible_shift(c: f64, d: f64, e: f64, kappa: f64, dt: f64) -> Option<(f64, f64)> {
    let k2 = kappa * kappa;
    let r = boundary_residual(c, d, e, kappa);
    let qa = 1.0 / (8.0 * k2);
    let qb = 1.0 / dt + e / (2.0 * k2);
    let disc = qb * qb - 4.0 * qa * r;
    if !(disc > 0.0) {
        return None;
    }
    let q = -0.5 * (qb + qb.signum() * disc.sqrt());
    if q == 0.0 {
        return Some((0.0, 0.0));
    }
    let (t1, t2) = (q / qa, r / q);
    Some((t1.min(t2), t1.max(t2)))
}

/// Repair `pot` into a subsolution by marching forward in time.
///
/// At each interval `φ` at the later node is lowered, first vertex by vertex
/// by the positive residual of the adjacent cells (kept only when it helps)
/// and then uniformly by the remaining maximum; the uniform step leaves
/// gradients unchanged and so always succeeds. Then `ψ` at the later node is
/// moved by the smallest shift (per atom on the interval, uniform along the
/// edge of the strip) that makes its residual nonpositive against the
/// corrected `φ`. When no such shift exists, `φ` at the later node is lowered
/// further, which widens the admissible range. Shifts are carried to later
/// nodes so that the original time increments are preserved.
pub fn feasibilize(pot: &PotentialPair, kappa: f64) -> Result<Feasibilized> {
    feasibilize_with(pot, kappa, true)
}

/// As [`feasibilize`], optionally skipping the vertex-by-vertex lowering.
/// Without it the repair only ever shifts `φ` uniformly, which never adds
/// gradient but may lower more.
pub fn feasibilize_with(pot: &PotentialPair, kappa: f64, local: bool) -> Result<Feasibilized> {
    pot.check_shape()?;
    check_kappa(kappa)?;
    let g = pot.geometry.clone();
    let st = Stencil::new(&g);
    let nt = pot.nt();
    let dt = 1.0 / nt as f64;
    let k2 = kappa * kappa;
    let mut out = pot.clone();
    let nv = g.n_vertices();
    let nbv = g.n_boundary_vertices();
    let mut shift = vec![0.0; nv];
    let mut bshift = vec![0.0; nbv];
    let mut vert_need = vec![0.0f64; nv];
    let groups: Vec<Vec<usize>> = if g.is_strip() {
        vec![(0..g.n_boundary()).collect()]
    } else {
        (0..g.n_boundary()).map(|b| vec![b]).collect()
    };
    let mut ok = true;

    let lower_phi = |out: &mut PotentialPair, shift: &mut [f64], k: usize, u: f64| {
        for v in 0..nv {
            out.phi[[k + 1, v]] -= u;
            shift[v] += u;
        }
    };

    for k in 0..nt {
        for (v, s) in shift.iter().enumerate() {
            out.phi[[k + 1, v]] -= s;
        }
        for (b, s) in bshift.iter().enumerate() {
            out.psi[[k + 1, b]] -= s;
        }
        let worst_cell = |phi: &Array2<f64>| {
            (0..g.n_cells()).fold(0.0f64, |m, c| {
                let (a, b) = st.interior(phi, k, c, dt);
                m.max(interior_residual(a, b))
            })
        };
        let before = worst_cell(&out.phi);
        if before > 0.0 && local {
            vert_need.iter_mut().for_each(|x| *x = 0.0);
            for c in 0..g.n_cells() {
                let (a, b) = st.interior(&out.phi, k, c, dt);
                let r = interior_residual(a, b);
                if r > 0.0 {
                    for &v in &st.cell_vertices[c] {
                        vert_need[v] = vert_need[v].max(dt * r);
                    }
                }
            }
            for v in 0..nv {
                out.phi[[k + 1, v]] -= vert_need[v];
            }
            if worst_cell(&out.phi) < before {
                for v in 0..nv {
                    shift[v] += vert_need[v];
                }
            } else {
                for v in 0..nv {
                    out.phi[[k + 1, v]] += vert_need[v];
                }
            }
        }
        if before > 0.0 {
            let worst = worst_cell(&out.phi);
            if worst > 0.0 {
                // small margin against rounding in the difference quotient
                let mag = out.phi.row(k + 1).iter().fold(0.0f64, |m, x| m.max(x.abs()));
                let u = dt * worst * (1.0 + 1e-12) + 4.0 * f64::EPSILON * mag;
                lower_phi(&mut out, &mut shift, k, u);
            }
        }

        // each boundary cell's residual is a convex quadratic in a shift t of
        // ψ at node k+1 over its vertices: t²/(8κ²) + (1/dt + e/(2κ²)) t + r.
        // Lowering φ at node k+1 by u raises e by u/2, which moves every
        // admissible interval by the same amount and widens it, so the
        // smallest workable u is found by bisection.
        for group in &groups {
            let cells: Vec<(f64, f64, f64)> = group
                .iter()
                .map(|&b| st.boundary(&out.phi, &out.psi, k, b, dt))
                .collect();
            let range = |u: f64| -> Option<(f64, f64)> {
                let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
                for &(c, d, e) in &cells {
                    let (t1, t2) = admissible_shift(c, d, e + 0.5 * u, kappa, dt)?;
                    lo = lo.max(t1);
                    hi = hi.min(t2);
                }
                (lo <= hi).then_some((lo, hi))
            };
            let mut u = 0.0;
            if range(0.0).is_none() {
                let mut hi_u = dt * dt * k2.min(1.0);
                while range(hi_u).is_none() && hi_u.is_finite() {
                    hi_u *= 2.0;
                }
                let mut lo_u = 0.0;
                for _ in 0..100 {
                    let mid = 0.5 * (lo_u + hi_u);
                    if range(mid).is_some() {
                        hi_u = mid;
                    } else {
                        lo_u = mid;
                    }
                }
                // a little extra so the chosen shift sits strictly inside
                u = hi_u * (1.0 + 1e-6) + 1e-12 * (1.0 + hi_u);
                lower_phi(&mut out, &mut shift, k, u);
            }
            let Some((lo, hi)) = range(u) else {
                ok = false;
                continue;
            };
            let w = hi - lo;
            let t = 0.0f64.clamp(lo + 1e-9 * w, hi - 1e-9 * w);
            if t != 0.0 {
                let verts: Vec<usize> = if g.is_strip() {
                    (0..nbv).collect()
                } else {
                    group.iter().map(|&b| st.boundary_vertices[b][0]).collect()
                };
                for v in verts {
                    out.psi[[k + 1, v]] += t;
                    bshift[v] -= t;
                }
            }
        }
    }
    let (ri, rb) = residual_fields(&out, kappa)?;
    let max_violation = ri.iter().chain(rb.iter()).fold(0.0f64, |m, r| m.max(*r));
    let feasible = ok && max_violation <= 1e-9 * out.scale();
    Ok(Feasibilized {
        potentials: out,
        feasible,
        max_violation,
    })
}

/// `∫φ(1)dω₁ − ∫φ(0)dω₀ + ∫ψ(1)dγ₁ − ∫ψ(0)dγ₀` with cell averages of the
/// vertex potentials.
pub fn dual_objective(pot: &PotentialPair, rho0: &MeasurePair, rho1: &MeasurePair) -> Result<f64> {
    pot.check_shape()?;
    if rho0.geometry() != &pot.geometry || rho1.geometry() != &pot.geometry {
        return Err(Error::Dimension("potentials and endpoints differ in geometry".into()));
    }
    Ok(dual_objective_raw(
        pot,
        (rho0.omega(), rho0.gamma()),
        (rho1.omega(), rho1.gamma()),
    ))
}

pub(crate) fn dual_objective_raw(pot: &PotentialPair, r0: (&[f64], &[f64]), r1: (&[f64], &[f64])) -> f64 {
    let g = &pot.geometry;
    let st = Stencil::new(g);
    let nt = pot.nt();
    let side = |k: usize, om: &[f64], ga: &[f64]| -> f64 {
        let p = pot.phi.row(k);
        let s = pot.psi.row(k);
        let mut acc = 0.0;
        for c in 0..g.n_cells() {
            let v = st.cell_vertices[c];
            acc += g.cell_volume() * 0.25 * (p[v[0]] + p[v[1]] + p[v[2]] + p[v[3]]) * om[c];
        }
        for b in 0..g.n_boundary() {
            let [u0, u1] = st.boundary_vertices[b];
            acc += g.boundary_length() * 0.5 * (s[u0] + s[u1]) * ga[b];
        }
        acc
    };
    side(nt, r1.0, r1.1) - side(0, r0.0, r0.1)
}

/// Feasibilize and evaluate: a certified lower bound on the squared distance.
///
/// Both repair variants are tried; the larger feasible value wins.
pub fn certified_lower_bound(
    pot: &PotentialPair,
    rho0: &MeasurePair,
    rho1: &MeasurePair,
    kappa: f64,
) -> Result<(f64, Feasibilized)> {
    let mut best: Option<(f64, Feasibilized)> = None;
    for local in [true, false] {
        let fz = feasibilize_with(pot, kappa, local)?;
        let value = dual_objective(&fz.potentials, rho0, rho1)?;
        let better = match &best {
            None => true,
            Some((v, b)) => (fz.feasible, value) > (b.feasible, *v),
        };
        if better {
            best = Some((value, fz));
        }
    }
    Ok(best.expect("two candidates"))
}
