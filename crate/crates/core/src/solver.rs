//! Geodesic solver: Douglas–Rachford splitting between the pointwise action
//! prox on co-located fields and the affine set of discretely feasible paths
//! whose co-located fields are the interpolation of the staggered ones.
//!
//! Unknowns are pairs `(U, V)`: a staggered path `U` and co-located fields
//! `V`. The splitting is `f₁(U, V) = ι_CE(U) + A(V)` and `f₂ = ι{V = I U}`.
//! Both proximal maps are exact: a factored projection onto CE plus a cubic
//! solve per cell, and a well-conditioned linear solve for the graph.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::action::{check_kappa, colocated_action, prox_colocated, ActionValue, ProxParams};
use crate::certify::{self, Feasibilized, PotentialPair};
use crate::constraint::{CeOperator, CeProjector, Colocated, SpaceTimePath};
use crate::error::{Error, Result};
use crate::geometry::Geometry;
use crate::linalg::{BandCholesky, BandMatrix};
use crate::measures::MeasurePair;

/// Solver settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub nt: usize,
    pub kappa: f64,
    /// Prox step (applied to the rescaled problem).
    pub sigma: f64,
    /// Douglas–Rachford relaxation in `(0, 2)`.
    pub relaxation: f64,
    pub max_outer: usize,
    pub stop_tol: f64,
    /// Window for the relative primal change test.
    pub stop_window: usize,
    /// Rescale densities so the largest endpoint density is one.
    pub rescale: bool,
    /// Rebalance `sigma` every this many iterations from the ratio of primal
    /// and dual residuals; 0 keeps it fixed.
    pub adapt_every: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            nt: 32,
            kappa: 1.0,
            sigma: 1.0,
            relaxation: 1.0,
            max_outer: 20_000,
            stop_tol: 1e-6,
            stop_window: 20,
            rescale: true,
            adapt_every: 50,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        check_kappa(self.kappa)?;
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if self.nt == 0 {
            return bad("nt must be positive");
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad("sigma must be positive");
        }
        if !(self.relaxation > 0.0 && self.relaxation < 2.0) {
            return bad("relaxation must lie in (0, 2)");
        }
        if !(self.stop_tol > 0.0) {
            return bad("tolerances must be positive");
        }
        if self.stop_window == 0 {
            return bad("stop_window must be positive");
        }
        Ok(())
    }
}

/// One line of the convergence log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub primal: f64,
    pub feasibility: f64,
}

/// Douglas–Rachford state, reusable as a warm start.
#[derive(Clone, Debug)]
pub struct WarmStart {
    z_u: SpaceTimePath,
    z_v: Colocated,
    scale: f64,
}

/// Outcome of [`solve_geodesic`].
#[derive(Clone, Debug, Serialize)]
pub struct GeodesicResult {
    /// Discretely feasible path (endpoints pinned to the data).
    pub path: SpaceTimePath,
    /// Squared-distance estimate: action of the prox iterate.
    pub primal_value: f64,
    /// Certified lower bound from the feasibilized potentials.
    pub dual_value: f64,
    /// Spatially integrated action per time interval; their mean is the primal value.
    pub action_slices: Vec<f64>,
    /// Raw potentials reconstructed from the projection multipliers.
    pub potentials: PotentialPair,
    /// Feasibilized potentials behind `dual_value`.
    pub certificate: Feasibilized,
    pub iterations: usize,
    pub converged: bool,
    pub kappa: f64,
    /// Final feasibility residual `‖x − y‖` of the splitting.
    pub feasibility: f64,
    pub history: Vec<IterationRecord>,
    #[serde(skip)]
    pub warm: Option<WarmStart>,
}

impl GeodesicResult {
    pub fn gap(&self) -> f64 {
        self.primal_value - self.dual_value
    }

    /// `∫∫|f|` of the exchange flux along the returned path.
    pub fn exchange_tv(&self) -> f64 {
        self.path.exchange_tv()
    }
}

/// Weights of the metric on unknowns.
#[derive(Clone, Copy, Debug)]
struct Metric {
    wi: f64,
    wb: f64,
    /// Weight of the co-located exchange slot: `κ² wb`.
    wf: f64,
}

impl Metric {
    fn norm2_u(&self, u: &SpaceTimePath) -> f64 {
        u.weighted_dot(u)
    }

    fn norm2_v(&self, v: &Colocated) -> f64 {
        let sq = |a: &Array2<f64>| -> f64 { a.iter().map(|x| x * x).sum() };
        self.wi * (sq(&v.density) + v.momentum.iter().map(|x| x * x).sum::<f64>())
            + self.wb * (sq(&v.boundary_density) + sq(&v.tangential))
            + self.wf * sq(&v.exchange)
    }
}

/// Projection onto `{V = I U}` in the product metric, endpoints fixed.
///
/// The normal matrix `W_U + Iᵀ W_V I` couples each unknown only along one
/// time line, one face line or the boundary ring, so it splits into small
/// chains and cycles that are factored once.
struct GraphProjector {
    op: CeOperator,
    wu: Vec<f64>,
    wv: Vec<f64>,
    /// Co-location rows in CSR form.
    row_ptr: Vec<usize>,
    row_col: Vec<usize>,
    row_val: Vec<f64>,
    fixed: Vec<bool>,
    blocks: Vec<(Vec<usize>, BandCholesky)>,
}

fn path_weights(g: &Geometry, nt: usize, metric: &Metric) -> Vec<f64> {
    let z = SpaceTimePath::zeros(g, nt);
    let sizes: Vec<usize> = z.fields().iter().map(|f| f.len()).collect();
    let w = [metric.wi, metric.wi, metric.wb, metric.wb, metric.wb];
    sizes
        .iter()
        .zip(w)
        .flat_map(|(&n, w)| std::iter::repeat(w).take(n))
        .collect()
}

fn colocated_weights(g: &Geometry, nt: usize, metric: &Metric) -> Vec<f64> {
    let z = Colocated::zeros(g, nt);
    let sizes = [
        z.density.len(),
        z.momentum.len(),
        z.boundary_density.len(),
        z.tangential.len(),
        z.exchange.len(),
    ];
    let w = [metric.wi, metric.wi, metric.wb, metric.wb, metric.wf];
    sizes
        .iter()
        .zip(w)
        .flat_map(|(&n, w)| std::iter::repeat(w).take(n))
        .collect()
}

impl GraphProjector {
    fn new(op: CeOperator, metric: Metric) -> Result<Self> {
        let g = op.geometry().clone();
        let nt = op.nt();
        let wu = path_weights(&g, nt, &metric);
        let wv = colocated_weights(&g, nt, &metric);
        let n = wu.len();
        let (nc, nb) = (g.n_cells(), g.n_boundary());
        let mut fixed = vec![false; n];
        let o_ga = (nt + 1) * nc + nt * g.n_free_faces();
        for c in 0..nc {
            fixed[c] = true;
            fixed[nt * nc + c] = true;
        }
        for b in 0..nb {
            fixed[o_ga + b] = true;
            fixed[o_ga + nt * nb + b] = true;
        }

        let mut entries: Vec<(usize, usize, f64)> = Vec::new();
        let mut diag = wu.clone();
        let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        op.colocate_rows(|v, row| {
            let w = wv[v];
            for (a, &(ua, ca)) in row.iter().enumerate() {
                entries.push((v, ua, ca));
                if fixed[ua] {
                    continue;
                }
                diag[ua] += w * ca * ca;
                for &(ub, cb) in &row[..a] {
                    if fixed[ub] {
                        continue;
                    }
                    let val = w * ca * cb;
                    if ub == ua {
                        diag[ua] += 2.0 * val;
                        continue;
                    }
                    match adj[ua].iter_mut().find(|e| e.0 == ub) {
                        Some(e) => e.1 += val,
                        None => adj[ua].push((ub, val)),
                    }
                    match adj[ub].iter_mut().find(|e| e.0 == ua) {
                        Some(e) => e.1 += val,
                        None => adj[ub].push((ua, val)),
                    }
                }
            }
        });
        entries.sort_by_key(|e| e.0);
        let mut row_ptr = vec![0; wv.len() + 1];
        for &(v, _, _) in &entries {
            row_ptr[v + 1] += 1;
        }
        for v in 0..wv.len() {
            row_ptr[v + 1] += row_ptr[v];
        }
        let row_col = entries.iter().map(|e| e.1).collect();
        let row_val = entries.iter().map(|e| e.2).collect();

        // connected components in breadth-first order
        let mut pos = vec![usize::MAX; n];
        let mut blocks = Vec::new();
        for start in 0..n {
            if fixed[start] || pos[start] != usize::MAX {
                continue;
            }
            let mut order = vec![start];
            pos[start] = 0;
            let mut head = 0;
            while head < order.len() {
                let u = order[head];
                head += 1;
                for &(w, _) in &adj[u] {
                    if pos[w] == usize::MAX {
                        pos[w] = order.len();
                        order.push(w);
                    }
                }
            }
            let bw = order
                .iter()
                .flat_map(|&u| adj[u].iter().map(move |&(w, _)| (u, w)))
                .map(|(u, w)| pos[u].abs_diff(pos[w]))
                .max()
                .unwrap_or(0);
            let mut mat = BandMatrix::zeros(order.len(), bw);
            for (i, &u) in order.iter().enumerate() {
                mat.add(i, i, diag[u]);
                for &(w, val) in &adj[u] {
                    if pos[w] < i {
                        mat.add(i, pos[w], val);
                    }
                }
            }
            blocks.push((order, mat.cholesky()?));
        }
        Ok(GraphProjector {
            op,
            wu,
            wv,
            row_ptr,
            row_col,
            row_val,
            fixed,
            blocks,
        })
    }

    /// Project `(z_u, z_v)`; the endpoint densities of the result are those
    /// of `z_u`.
    fn project(&self, z_u: &SpaceTimePath, z_v: &Colocated, x: &mut SpaceTimePath) {
        let zu = z_u.flat();
        let zv = z_v.flat();
        // t = W_V (z_V − I e) with e the fixed part of z_U
        let mut t = zv;
        for (v, tv) in t.iter_mut().enumerate() {
            let mut ie = 0.0;
            for r in self.row_ptr[v]..self.row_ptr[v + 1] {
                let u = self.row_col[r];
                if self.fixed[u] {
                    ie += self.row_val[r] * zu[u];
                }
            }
            *tv = (*tv - ie) * self.wv[v];
        }
        let mut rhs: Vec<f64> = zu.iter().zip(&self.wu).map(|(a, w)| a * w).collect();
        for (v, tv) in t.iter().enumerate() {
            for r in self.row_ptr[v]..self.row_ptr[v + 1] {
                rhs[self.row_col[r]] += self.row_val[r] * tv;
            }
        }
        let mut out = zu;
        let mut buf = Vec::new();
        for (order, chol) in &self.blocks {
            buf.clear();
            buf.extend(order.iter().map(|&u| rhs[u]));
            chol.solve_in_place(&mut buf);
            for (&u, &val) in order.iter().zip(&buf) {
                out[u] = val;
            }
        }
        x.set_flat(&out);
    }

    fn colocate(&self, u: &SpaceTimePath) -> Colocated {
        self.op.colocate(u)
    }
}

/// Compute a geodesic between `rho0` and `rho1`.
pub fn solve_geodesic(rho0: &MeasurePair, rho1: &MeasurePair, config: &SolverConfig) -> Result<GeodesicResult> {
    solve_geodesic_warm(rho0, rho1, config, None)
}

/// As [`solve_geodesic`], optionally continuing from a previous solve on the
/// same grid (e.g. another `κ`).
pub fn solve_geodesic_warm(
    rho0: &MeasurePair,
    rho1: &MeasurePair,
    config: &SolverConfig,
    warm: Option<&WarmStart>,
) -> Result<GeodesicResult> {
    config.validate()?;
    if rho0.geometry() != rho1.geometry() {
        return Err(Error::Dimension("endpoints are defined on different geometries".into()));
    }
    let g = rho0.geometry().clone();
    let nt = config.nt;
    let kappa = config.kappa;
    let scale = if config.rescale {
        let m = rho0.max_density().max(rho1.max_density());
        if m > 0.0 {
            1.0 / m
        } else {
            1.0
        }
    } else {
        1.0
    };
    let projector = CeProjector::new(&g, nt)?;
    let op = projector.operator().clone();
    let dt = 1.0 / nt as f64;
    let metric = Metric {
        wi: g.cell_volume() * dt,
        wb: g.boundary_length() * dt,
        wf: kappa * kappa * g.boundary_length() * dt,
    };
    let graph = GraphProjector::new(op.clone(), metric)?;
    let mut sigma = config.sigma;
    let adapt = config.adapt_every;
    let mut x_prev = SpaceTimePath::zeros(&g, nt);
    let mut xv_prev = Colocated::zeros(&g, nt);

    let scaled = |p: &MeasurePair| -> (Vec<f64>, Vec<f64>) {
        (
            p.omega().iter().map(|v| v * scale).collect(),
            p.gamma().iter().map(|v| v * scale).collect(),
        )
    };
    let (o0, g0) = scaled(rho0);
    let (o1, g1) = scaled(rho1);
    let pin = |u: &mut SpaceTimePath| {
        u.omega.row_mut(0).assign(&ndarray::aview1(&o0));
        u.gamma.row_mut(0).assign(&ndarray::aview1(&g0));
        u.omega.row_mut(nt).assign(&ndarray::aview1(&o1));
        u.gamma.row_mut(nt).assign(&ndarray::aview1(&g1));
    };

    let (mut z_u, mut z_v) = match warm {
        Some(w) if w.z_u.geometry == g && w.z_u.nt() == nt => {
            let mut zu = w.z_u.clone();
            let mut zv = w.z_v.clone();
            let s = scale / w.scale;
            zu.scale(s);
            zv.scale(s);
            (zu, zv)
        }
        _ => {
            let mut zu = SpaceTimePath::linear(rho0, rho1, nt)?;
            zu.scale(scale);
            let zv = op.colocate(&zu);
            (zu, zv)
        }
    };
    pin(&mut z_u);

    let alpha = config.relaxation;
    let mut x_u = z_u.clone();
    let mut history: Vec<IterationRecord> = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut y_u = z_u.clone();
    let mut y_v = z_v.clone();
    let mut nu = vec![0.0; op.n_rows()];
    let mut primal = f64::INFINITY;
    let mut feas = f64::INFINITY;
    let mut slices: Vec<ActionValue> = Vec::new();

    for n in 0..config.max_outer {
        iterations = n + 1;
        graph.project(&z_u, &z_v, &mut x_u);
        let x_v = graph.colocate(&x_u);

        // reflected point
        y_u.clone_from(&x_u);
        y_u.scale(2.0);
        y_u.axpy(-1.0, &z_u);
        y_v.clone_from(&x_v);
        y_v.scale(2.0);
        y_v.axpy(-1.0, &z_v);

        nu = project_raw(&projector, &mut y_u, &pin);
        let prox = ProxParams {
            sigma,
            ..ProxParams::default()
        };
        prox_colocated(&mut y_v, kappa, &prox)?;

        // z ← z + α (y − x)
        let mut du = y_u.clone();
        du.axpy(-1.0, &x_u);
        let mut dv = y_v.clone();
        dv.axpy(-1.0, &x_v);
        z_u.axpy(alpha, &du);
        z_v.axpy(alpha, &dv);

        let (value, sl) = colocated_action(&y_v, &g, kappa);
        primal = value.finite().unwrap_or(f64::INFINITY);
        slices = sl;
        let xnorm = (metric.norm2_u(&x_u) + metric.norm2_v(&x_v)).sqrt();
        feas = (metric.norm2_u(&du) + metric.norm2_v(&dv)).sqrt() / xnorm.max(1.0);
        history.push(IterationRecord {
            iteration: n,
            primal: primal / scale,
            feasibility: feas,
        });
        if adapt > 0 && n % adapt == 0 && n > 0 {
            let mut a = x_u.clone();
            a.axpy(-1.0, &x_prev);
            let mut b = x_v.clone();
            b.axpy(-1.0, &xv_prev);
            let rd = (metric.norm2_u(&a) + metric.norm2_v(&b)).sqrt() / xnorm.max(1.0);
            let rp = feas;
            let factor = if rp > 10.0 * rd {
                0.5
            } else if rd > 10.0 * rp {
                2.0
            } else {
                1.0
            };
            if factor != 1.0 {
                // keep the dual variable (z − x)/σ
                let mut du = z_u.clone();
                du.axpy(-1.0, &x_u);
                z_u.clone_from(&x_u);
                z_u.axpy(factor, &du);
                let mut dv = z_v.clone();
                dv.axpy(-1.0, &x_v);
                z_v.clone_from(&x_v);
                z_v.axpy(factor, &dv);
                sigma *= factor;
            }
            log::trace!("iteration {n}: primal residual {rp:e}, dual residual {rd:e}, sigma {sigma}");
        }
        if adapt > 0 && (n + 1) % adapt == 0 {
            x_prev.clone_from(&x_u);
            xv_prev.clone_from(&x_v);
        }
        let w = config.stop_window;
        if history.len() > w && feas < config.stop_tol {
            let old = history[history.len() - 1 - w].primal * scale;
            let change = (primal - old).abs();
            if change <= config.stop_tol * primal.abs().max(config.stop_tol) {
                converged = true;
                break;
            }
        }
        if !primal.is_finite() && n > 0 {
            log::debug!("iteration {n}: prox iterate has infinite action");
        }
    }

    // unscale
    let inv = 1.0 / scale;
    let mut path = y_u.clone();
    path.scale(inv);
    path.pin_endpoints(rho0, rho1);
    let action_slices: Vec<f64> = slices
        .iter()
        .map(|s| s.finite().unwrap_or(f64::INFINITY) * inv)
        .collect();
    let primal_value = primal * inv;

    let potentials = potentials_from_multipliers(&op, &nu, sigma)?;
    let (dual_value, certificate) = certify::certified_lower_bound(&potentials, rho0, rho1, kappa)?;

    Ok(GeodesicResult {
        path,
        primal_value,
        dual_value,
        action_slices,
        potentials,
        certificate,
        iterations,
        converged,
        kappa,
        feasibility: feas,
        history,
        warm: Some(WarmStart { z_u, z_v, scale }),
    })
}

/// CE projection of a path in the rescaled problem; returns the multipliers.
fn project_raw(projector: &CeProjector, u: &mut SpaceTimePath, pin: &impl Fn(&mut SpaceTimePath)) -> Vec<f64> {
    pin(u);
    let op = projector.operator();
    let mut nu = op.weighted_residual(u);
    projector.solve_normal(&mut nu);
    u.axpy(-1.0, &op.adjoint_scaled(&nu));
    nu
}

/// Row potentials `φ = ν/σ` mapped to vertex potentials.
pub fn potentials_from_multipliers(op: &CeOperator, nu: &[f64], sigma: f64) -> Result<PotentialPair> {
    let rows = op.rows_view(nu);
    let g = op.geometry();
    let nc = g.n_cells();
    let interior: Array2<f64> = rows.slice(ndarray::s![.., ..nc]).mapv(|v| v / sigma);
    let boundary: Array2<f64> = rows.slice(ndarray::s![.., nc..]).mapv(|v| v / sigma);
    PotentialPair::from_cell_values(g, &interior, &boundary)
}

/// Solve for each `κ` in ascending order, warm-starting each solve from the
/// previous one.
pub fn sweep_kappa(
    rho0: &MeasurePair,
    rho1: &MeasurePair,
    kappas: &[f64],
    config: &SolverConfig,
) -> Result<Vec<GeodesicResult>> {
    if kappas.is_empty() {
        return Err(Error::InvalidParameter("empty kappa list".into()));
    }
    if kappas.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidParameter("kappas must be strictly ascending".into()));
    }
    let mut out: Vec<GeodesicResult> = Vec::with_capacity(kappas.len());
    for &kappa in kappas {
        let cfg = SolverConfig {
            kappa,
            ..config.clone()
        };
        let warm = out.last().and_then(|r| r.warm.as_ref());
        let res = solve_geodesic_warm(rho0, rho1, &cfg, warm)?;
        out.push(res);
    }
    Ok(out)
}

/// A frame of the geodesic at a requested time.
#[derive(Clone, Debug, Serialize)]
pub struct Frame {
    pub time: f64,
    /// Time of the node actually used.
    pub node_time: f64,
    pub measure: MeasurePair,
    /// Set when the raw slice's mass was off by more than `1e-6`.
    pub flagged: bool,
    pub raw_mass: f64,
}

/// Nearest time-node slices of the geodesic, clipped and renormalized.
pub fn geodesic_frames(result: &GeodesicResult, times: &[f64]) -> Result<Vec<Frame>> {
    path_frames(&result.path, times)
}

/// As [`geodesic_frames`] for any path.
pub fn path_frames(path: &SpaceTimePath, times: &[f64]) -> Result<Vec<Frame>> {
    let nt = path.nt();
    let g = &path.geometry;
    times
        .iter()
        .map(|&t| {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::InvalidParameter(format!("frame time {t} outside [0, 1]")));
            }
            let k = (t * nt as f64).round() as usize;
            let (mut om, mut ga) = path.slice(k);
            for v in om.iter_mut().chain(ga.iter_mut()) {
                if *v < 1e-12 {
                    *v = 0.0;
                }
            }
            let mass = crate::measures::interior_mass(g, &om) + crate::measures::boundary_mass(g, &ga);
            let flagged = (mass - 1.0).abs() > 1e-6;
            if mass <= 0.0 {
                return Err(Error::InvalidMeasure(format!("frame at t={t} has no mass")));
            }
            let s = 1.0 / mass;
            if (mass - 1.0).abs() > 1e-12 {
                om.iter_mut().for_each(|v| *v *= s);
                ga.iter_mut().for_each(|v| *v *= s);
            }
            let measure = if k == 0 || k == nt {
                // pinned endpoints are returned untouched
                let (o, gm) = path.slice(k);
                MeasurePair::new(g.clone(), o, gm)?
            } else {
                MeasurePair::new(g.clone(), om, ga)?
            };
            Ok(Frame {
                time: t,
                node_time: k as f64 / nt as f64,
                measure,
                flagged,
                raw_mass: mass,
            })
        })
        .collect()
}
