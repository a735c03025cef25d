//! Reference values: the explicit interior-to-boundary Dirac geodesic,
//! Fisher–Rao costs between co-located atoms, exact one-dimensional
//! Wasserstein distances and a bounded-Lipschitz linear program.

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{Geometry, GeometryKind};
use crate::measures::MeasurePair;

/// Mass mismatch beyond which a Wasserstein distance is infinite.
pub const MASS_MISMATCH: f64 = 1e-9;

/// Closed-form geodesic from `δ_{x0}` (interior) to `δ_{xR}` (boundary) at
/// distance `r` with toll `κ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DiracGeodesic {
    pub r: f64,
    pub kappa: f64,
    /// `1 + √(1 + r²/κ²)`.
    pub alpha: f64,
    pub cost: f64,
}

impl DiracGeodesic {
    pub fn new(r: f64, kappa: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::InvalidParameter(format!("kappa must be positive, got {kappa}")));
        }
        if !(r >= 0.0 && r.is_finite()) {
            return Err(Error::InvalidParameter(format!("R must be nonnegative, got {r}")));
        }
        let alpha = 1.0 + (1.0 + (r / kappa).powi(2)).sqrt();
        let cost = 0.5 * (r * r + kappa * kappa * alpha) * alpha / (alpha - 1.0);
        Ok(DiracGeodesic { r, kappa, alpha, cost })
    }

    /// Boundary mass `t^α` at time `t`.
    pub fn boundary_mass(&self, t: f64) -> f64 {
        t.powf(self.alpha)
    }

    /// Exchange flux `α t^{α−1}`.
    pub fn flux(&self, t: f64) -> f64 {
        self.alpha * t.powf(self.alpha - 1.0)
    }

    /// Interior velocity `r / t` at distance `r` from the start.
    pub fn velocity(&self, t: f64, r: f64) -> f64 {
        r / t
    }

    /// Interior density at distance `r` from the start, `0 < t ≤ 1`.
    pub fn density(&self, t: f64, r: f64) -> f64 {
        let rt = self.r * t;
        if r < rt || r > self.r || r <= 0.0 {
            0.0
        } else {
            self.alpha * (rt / r).powf(self.alpha) / r
        }
    }

    /// Interior mass in `[a, b]`.
    pub fn mass_between(&self, t: f64, a: f64, b: f64) -> f64 {
        let rt = self.r * t;
        let lo = a.max(rt);
        let hi = b.min(self.r);
        if !(hi > lo) {
            return 0.0;
        }
        (rt / lo).powf(self.alpha) - (rt / hi).powf(self.alpha)
    }

    /// Dual potentials along the geodesic: `φ = r²/(2t)` and
    /// `ψ = R²/(2t) + κ²α/t`.
    pub fn phi(&self, t: f64, r: f64) -> f64 {
        r * r / (2.0 * t)
    }

    pub fn psi(&self, t: f64) -> f64 {
        self.r * self.r / (2.0 * t) + self.kappa * self.kappa * self.alpha / t
    }
}

/// `W_κ²(δ_{x0}, δ_{xR})` for an interior point at distance `r` from a
/// boundary point.
pub fn dirac_cost(r: f64, kappa: f64) -> Result<f64> {
    Ok(DiracGeodesic::new(r, kappa)?.cost)
}

/// Snapshot of the Dirac geodesic on a uniform grid of `[0, R]`.
#[derive(Clone, Debug, Serialize)]
pub struct DiracFrame {
    pub t: f64,
    /// Bin width of `interior`.
    pub h: f64,
    /// Bin-averaged interior density.
    pub interior: Vec<f64>,
    pub boundary_mass: f64,
    pub flux: f64,
    /// Set for `t = 0`, where the frame is the initial atom itself.
    pub flagged: bool,
}

impl DiracFrame {
    pub fn interior_mass(&self) -> f64 {
        self.interior.iter().sum::<f64>() * self.h
    }
}

/// Exact bin averages of the Dirac geodesic at time `t ∈ [0, 1]`.
pub fn dirac_frame(r: f64, kappa: f64, t: f64, bins: usize) -> Result<DiracFrame> {
    let geo = DiracGeodesic::new(r, kappa)?;
    if !(r > 0.0) {
        return Err(Error::InvalidParameter("dirac_frame needs R > 0".into()));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidParameter(format!("t = {t} outside [0, 1]")));
    }
    if bins == 0 {
        return Err(Error::InvalidParameter("bins must be positive".into()));
    }
    let h = r / bins as f64;
    if t == 0.0 {
        let mut interior = vec![0.0; bins];
        interior[0] = 1.0 / h;
        return Ok(DiracFrame {
            t,
            h,
            interior,
            boundary_mass: 0.0,
            flux: 0.0,
            flagged: true,
        });
    }
    let interior = (0..bins)
        .map(|i| geo.mass_between(t, i as f64 * h, (i + 1) as f64 * h) / h)
        .collect();
    Ok(DiracFrame {
        t,
        h,
        interior,
        boundary_mass: geo.boundary_mass(t),
        flux: geo.flux(t),
        flagged: false,
    })
}

/// Fisher–Rao cost `2κ²(√m1 − √m0)²` between atoms at a common point.
pub fn fisher_rao_cost(m0: f64, m1: f64, kappa: f64) -> Result<f64> {
    if !(m0 >= 0.0 && m1 >= 0.0 && m0.is_finite() && m1.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "masses must be nonnegative, got {m0}, {m1}"
        )));
    }
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(Error::InvalidParameter(format!("kappa must be positive, got {kappa}")));
    }
    Ok(2.0 * kappa * kappa * (m1.sqrt() - m0.sqrt()).powi(2))
}

/// A nonnegative measure on a line segment or circle, built from uniform
/// pieces and atoms.
#[derive(Clone, Debug, Default)]
pub struct LineMeasure {
    /// `(left, right, mass)`; `left == right` for an atom.
    pieces: Vec<(f64, f64, f64)>,
    period: Option<f64>,
}

impl LineMeasure {
    /// Measure on a segment.
    pub fn new() -> Self {
        Self::default()
    }

    /// Measure on a circle of the given length, positions taken modulo it.
    pub fn periodic(length: f64) -> Result<Self> {
        if !(length > 0.0 && length.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "period must be positive, got {length}"
            )));
        }
        Ok(LineMeasure {
            pieces: Vec::new(),
            period: Some(length),
        })
    }

    /// Piecewise-constant density on consecutive cells `[x0 + i h, x0 + (i+1) h]`.
    pub fn with_cells(mut self, x0: f64, h: f64, density: &[f64]) -> Self {
        for (i, &d) in density.iter().enumerate() {
            self.pieces.push((x0 + i as f64 * h, x0 + (i + 1) as f64 * h, d * h));
        }
        self
    }

    pub fn with_atom(mut self, at: f64, mass: f64) -> Self {
        self.pieces.push((at, at, mass));
        self
    }

    pub fn mass(&self) -> f64 {
        self.pieces.iter().map(|p| p.2).sum()
    }

    /// Quantile function as linear segments `(s0, s1, q0, q1)` over `[0, mass]`.
    fn quantile(&self) -> Vec<(f64, f64, f64, f64)> {
        let mut pieces: Vec<(f64, f64, f64)> = self
            .pieces
            .iter()
            .filter(|p| p.2 > 0.0)
            .map(|&(a, b, m)| match self.period {
                Some(l) => {
                    let a2 = a.rem_euclid(l);
                    (a2, a2 + (b - a), m)
                }
                None => (a, b, m),
            })
            .collect();
        pieces.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)));
        let mut out = Vec::with_capacity(pieces.len());
        let mut s = 0.0;
        for (a, b, m) in pieces {
            out.push((s, s + m, a, b));
            s += m;
        }
        out
    }
}

/// Evaluate the linear formula of the quantile segment containing `s_mid`
/// at `s`, with the periodic lift `Q(s + k m) = Q(s) + k L`.
fn lifted(q: &[(f64, f64, f64, f64)], mass: f64, period: f64, s_mid: f64, s: f64) -> f64 {
    let k = (s_mid / mass).floor();
    let r = s_mid - k * mass;
    let i = q.partition_point(|seg| seg.1 <= r).min(q.len() - 1);
    let (s0, s1, q0, q1) = q[i];
    let local = s - k * mass;
    let slope = if s1 > s0 { (q1 - q0) / (s1 - s0) } else { 0.0 };
    q0 + slope * (local - s0) + k * period
}

/// `½∫₀^m |Q0(s) − Q1(s + shift)|² ds`, exact for piecewise-linear quantiles.
fn quantile_cost(q0: &[(f64, f64, f64, f64)], q1: &[(f64, f64, f64, f64)], mass: f64, period: f64, shift: f64) -> f64 {
    let mut cuts: Vec<f64> = Vec::with_capacity(q0.len() + q1.len() + 2);
    cuts.push(0.0);
    cuts.push(mass);
    cuts.extend(q0.iter().map(|s| s.0));
    let k0 = (shift / mass).floor() - 1.0;
    for k in 0..4 {
        let base = (k0 + k as f64) * mass - shift;
        cuts.extend(q1.iter().map(|s| s.0 + base).filter(|&c| c > 0.0 && c < mass));
    }
    cuts.sort_by(f64::total_cmp);
    let mut total = 0.0;
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if !(b > a) {
            continue;
        }
        let mid = 0.5 * (a + b);
        let da = lifted(q0, mass, period, mid, a) - lifted(q1, mass, period, mid + shift, a + shift);
        let db = lifted(q0, mass, period, mid, b) - lifted(q1, mass, period, mid + shift, b + shift);
        total += (b - a) * (da * da + da * db + db * db) / 3.0;
    }
    0.5 * total
}

/// Quadratic Wasserstein cost `½ min ∫ d²` between two measures of equal
/// mass on a segment, or on a circle when both are periodic. Returns `+∞`
/// when the masses differ by more than [`MASS_MISMATCH`].
pub fn wasserstein_line(a: &LineMeasure, b: &LineMeasure) -> Result<f64> {
    if a.period != b.period {
        return Err(Error::Dimension("measures live on different lines".into()));
    }
    let (ma, mb) = (a.mass(), b.mass());
    if (ma - mb).abs() > MASS_MISMATCH {
        return Ok(f64::INFINITY);
    }
    let mass = 0.5 * (ma + mb);
    if mass <= 0.0 {
        return Ok(0.0);
    }
    let (qa, qb) = (a.quantile(), b.quantile());
    match a.period {
        None => Ok(quantile_cost(&qa, &qb, mass, 0.0, 0.0)),
        Some(l) => {
            // the cost is convex in the shift of the lifted quantile
            let f = |shift: f64| quantile_cost(&qa, &qb, mass, l, shift);
            let (mut lo, mut hi) = (-mass, mass);
            let g = 0.5 * (5f64.sqrt() - 1.0);
            let mut x1 = hi - g * (hi - lo);
            let mut x2 = lo + g * (hi - lo);
            let (mut f1, mut f2) = (f(x1), f(x2));
            for _ in 0..200 {
                if f1 <= f2 {
                    hi = x2;
                    x2 = x1;
                    f2 = f1;
                    x1 = hi - g * (hi - lo);
                    f1 = f(x1);
                } else {
                    lo = x1;
                    x1 = x2;
                    f1 = f2;
                    x2 = lo + g * (hi - lo);
                    f2 = f(x2);
                }
                if hi - lo < 1e-15 * mass {
                    break;
                }
            }
            Ok(f1.min(f2).min(f(0.0)))
        }
    }
}

/// Quadratic Wasserstein cost between two cell densities on `[0, lx]`.
pub fn wasserstein_1d(lx: f64, d0: &[f64], d1: &[f64]) -> Result<f64> {
    if d0.len() != d1.len() || d0.is_empty() {
        return Err(Error::Dimension("densities must share a nonempty grid".into()));
    }
    let h = lx / d0.len() as f64;
    wasserstein_line(
        &LineMeasure::new().with_cells(0.0, h, d0),
        &LineMeasure::new().with_cells(0.0, h, d1),
    )
}

fn interval_only(g: &Geometry) -> Result<()> {
    if g.kind() != GeometryKind::Interval {
        return Err(Error::InvalidGeometry("expected the interval".into()));
    }
    Ok(())
}

/// Interior part as a line measure (interval: `[0, Lx]`).
pub fn interior_line(p: &MeasurePair) -> Result<LineMeasure> {
    let g = p.geometry();
    interval_only(g)?;
    Ok(LineMeasure::new().with_cells(0.0, g.hx(), p.omega()))
}

/// `ϱ = ω + γ` on `[0, Lx]` with the boundary atoms at the end points.
pub fn total_line(p: &MeasurePair) -> Result<LineMeasure> {
    let g = p.geometry();
    interval_only(g)?;
    let len = g.boundary_length();
    Ok(interior_line(p)?
        .with_atom(0.0, p.gamma()[0] * len)
        .with_atom(g.lx(), p.gamma()[1] * len))
}

/// Boundary density of the strip as a measure on the periodic edge.
pub fn edge_line(p: &MeasurePair) -> Result<LineMeasure> {
    let g = p.geometry();
    if !g.is_strip() {
        return Err(Error::InvalidGeometry("expected the strip".into()));
    }
    Ok(LineMeasure::periodic(g.lx())?.with_cells(0.0, g.hx(), p.gamma()))
}

/// Marginals of `ϱ = ω + γ` on the strip: along the periodic `x` axis and
/// along `y ∈ [0, Ly]` (the edge contributes an atom at `y = 0`).
pub fn strip_marginals(p: &MeasurePair) -> Result<(LineMeasure, LineMeasure)> {
    let g = p.geometry();
    if !g.is_strip() {
        return Err(Error::InvalidGeometry("expected the strip".into()));
    }
    let (nx, ny) = (g.nx(), g.ny());
    let (hx, hy) = (g.hx(), g.hy());
    let om = p.omega();
    let mut mx: Vec<f64> = (0..nx)
        .map(|i| (0..ny).map(|j| om[j * nx + i]).sum::<f64>() * hy)
        .collect();
    for (i, v) in mx.iter_mut().enumerate() {
        *v += p.gamma()[i];
    }
    let my: Vec<f64> = (0..ny)
        .map(|j| (0..nx).map(|i| om[j * nx + i]).sum::<f64>() * hx)
        .collect();
    let edge_mass: f64 = p.gamma().iter().sum::<f64>() * g.boundary_length();
    Ok((
        LineMeasure::periodic(g.lx())?.with_cells(0.0, hx, &mx),
        LineMeasure::new().with_cells(0.0, hy, &my).with_atom(0.0, edge_mass),
    ))
}

/// Interior part of the strip split into its marginals.
pub fn strip_interior_marginals(p: &MeasurePair) -> Result<(LineMeasure, LineMeasure)> {
    let g = p.geometry();
    if !g.is_strip() {
        return Err(Error::InvalidGeometry("expected the strip".into()));
    }
    let (nx, ny) = (g.nx(), g.ny());
    let om = p.omega();
    let mx: Vec<f64> = (0..nx)
        .map(|i| (0..ny).map(|j| om[j * nx + i]).sum::<f64>() * g.hy())
        .collect();
    let my: Vec<f64> = (0..ny)
        .map(|j| (0..nx).map(|i| om[j * nx + i]).sum::<f64>() * g.hx())
        .collect();
    Ok((
        LineMeasure::periodic(g.lx())?.with_cells(0.0, g.hx(), &mx),
        LineMeasure::new().with_cells(0.0, g.hy(), &my),
    ))
}

/// Sum of the marginal costs. A lower bound on the quadratic cost on the
/// strip, and equal to it when both measures are products `a(x) b(y)`.
pub fn marginal_cost(marginals0: &(LineMeasure, LineMeasure), marginals1: &(LineMeasure, LineMeasure)) -> Result<f64> {
    Ok(wasserstein_line(&marginals0.0, &marginals1.0)? + wasserstein_line(&marginals0.1, &marginals1.1)?)
}

/// Largest relative deviation of the interior density from the product
/// of its marginals (zero for product measures).
pub fn product_defect(p: &MeasurePair) -> f64 {
    let g = p.geometry();
    if !g.is_strip() {
        return 0.0;
    }
    let (nx, ny) = (g.nx(), g.ny());
    let om = p.omega();
    let total: f64 = om.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    let rows: Vec<f64> = (0..ny).map(|j| (0..nx).map(|i| om[j * nx + i]).sum()).collect();
    let cols: Vec<f64> = (0..nx).map(|i| (0..ny).map(|j| om[j * nx + i]).sum()).collect();
    let max = om.iter().cloned().fold(0.0, f64::max);
    let mut worst = 0.0f64;
    for j in 0..ny {
        for i in 0..nx {
            worst = worst.max((om[j * nx + i] - rows[j] * cols[i] / total).abs() / max);
        }
    }
    worst
}

/// Point cloud with a path metric for the bounded-Lipschitz program.
///
/// Lipschitz constraints are imposed along `edges` only, which is exact
/// when the metric is the shortest-path metric of that graph.
#[derive(Clone, Debug)]
pub struct BlSpace {
    /// Measure of each site (cell volume, edge length or atom weight).
    pub weights: Vec<f64>,
    /// `(i, j, distance)`.
    pub edges: Vec<(usize, usize, f64)>,
}

impl BlSpace {
    /// Cells of a segment.
    pub fn segment(n: usize, h: f64) -> Self {
        BlSpace {
            weights: vec![h; n],
            edges: (1..n).map(|i| (i - 1, i, h)).collect(),
        }
    }

    /// Cells of a circle.
    pub fn ring(n: usize, h: f64) -> Self {
        let mut s = Self::segment(n, h);
        if n > 2 {
            s.edges.push((n - 1, 0, h));
        }
        s
    }

    /// Interior cells of a geometry. On the strip neighbours are joined
    /// along the axes, so the metric is the ℓ¹ distance between centres;
    /// since that dominates the Euclidean one, the value is an upper bound.
    pub fn interior(g: &Geometry) -> Self {
        match g.kind() {
            GeometryKind::Interval => Self::segment(g.nx(), g.hx()),
            GeometryKind::Strip => {
                let (nx, ny) = (g.nx(), g.ny());
                let mut edges = Vec::new();
                for j in 0..ny {
                    for i in 0..nx {
                        let c = j * nx + i;
                        if nx > 1 && (nx > 2 || i + 1 < nx) {
                            edges.push((c, j * nx + (i + 1) % nx, g.hx()));
                        }
                        if j + 1 < ny {
                            edges.push((c, c + nx, g.hy()));
                        }
                    }
                }
                BlSpace {
                    weights: vec![g.cell_volume(); nx * ny],
                    edges,
                }
            }
        }
    }

    /// Boundary cells. The interval's two end points lie in different
    /// components of `Γ`, so no Lipschitz constraint joins them and the
    /// distance reduces to total variation.
    pub fn boundary(g: &Geometry) -> Self {
        match g.kind() {
            GeometryKind::Interval => BlSpace {
                weights: vec![g.boundary_length(); 2],
                edges: Vec::new(),
            },
            GeometryKind::Strip => Self::ring(g.nx(), g.hx()),
        }
    }
}

/// Bounded-Lipschitz distance `sup {∫Φ d(μ1 − μ0) : ‖Φ‖∞ + Lip(Φ) ≤ 1}`
/// between two densities on `space`, solved as a linear program.
pub fn bounded_lipschitz(space: &BlSpace, mu0: &[f64], mu1: &[f64]) -> Result<f64> {
    let n = space.weights.len();
    if mu0.len() != n || mu1.len() != n {
        return Err(Error::Dimension(format!(
            "densities have {} and {} entries, space has {n}",
            mu0.len(),
            mu1.len()
        )));
    }
    let mut lp = Problem::new(OptimizationDirection::Maximize);
    let phi: Vec<_> = (0..n)
        .map(|i| lp.add_var((mu1[i] - mu0[i]) * space.weights[i], (-1.0, 1.0)))
        .collect();
    let lip = lp.add_var(0.0, (0.0, 1.0));
    for &p in &phi {
        lp.add_constraint(&[(p, 1.0), (lip, 1.0)], ComparisonOp::Le, 1.0);
        lp.add_constraint(&[(p, -1.0), (lip, 1.0)], ComparisonOp::Le, 1.0);
    }
    for &(i, j, d) in &space.edges {
        lp.add_constraint(&[(phi[i], 1.0), (phi[j], -1.0), (lip, -d)], ComparisonOp::Le, 0.0);
        lp.add_constraint(&[(phi[j], 1.0), (phi[i], -1.0), (lip, -d)], ComparisonOp::Le, 0.0);
    }
    let sol = lp.solve().map_err(|e| Error::NotConverged {
        what: "bounded-Lipschitz linear program",
        residual: {
            log::warn!("bounded-Lipschitz LP failed: {e}");
            f64::NAN
        },
    })?;
    Ok(sol.objective().max(0.0))
}

/// `d_BL(ω0, ω1) + d_BL(γ0, γ1)` for two measure pairs on one geometry.
pub fn bounded_lipschitz_pair(a: &MeasurePair, b: &MeasurePair) -> Result<f64> {
    let g = a.geometry();
    if g != b.geometry() {
        return Err(Error::Dimension("pairs live on different geometries".into()));
    }
    Ok(bounded_lipschitz(&BlSpace::interior(g), a.omega(), b.omega())?
        + bounded_lipschitz(&BlSpace::boundary(g), a.gamma(), b.gamma())?)
}
