//! Discrete coupled continuity equations on a staggered space-time grid.
//!
//! Densities live at time nodes `k = 0..=nt` and cell centres, momenta at
//! time intervals `k + ½` and faces. The exchange flux `f` is both the
//! source of `γ` and the value of the interior momentum on the coupled faces,
//! so the normal-flux condition holds by substitution.
//!
//! Constraint rows are indexed time-major: row `k·m + r` with
//! `m = n_cells + n_boundary`, interior cells first.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Geometry;
use crate::linalg::{self, BandCholesky, BandMatrix};
use crate::measures::MeasurePair;

/// A discrete path `(ω, F, γ, G, f)` between two measure pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimePath {
    pub geometry: Geometry,
    /// `(nt + 1) × n_cells`.
    pub omega: Array2<f64>,
    /// `nt × n_free_faces`.
    pub flux: Array2<f64>,
    /// `(nt + 1) × n_boundary`.
    pub gamma: Array2<f64>,
    /// `nt × n_boundary_faces` (no columns on the interval).
    pub tangential: Array2<f64>,
    /// `nt × n_boundary`, positive when mass leaves the interior.
    pub exchange: Array2<f64>,
}

impl SpaceTimePath {
    pub fn zeros(geometry: &Geometry, nt: usize) -> Self {
        SpaceTimePath {
            geometry: geometry.clone(),
            omega: Array2::zeros((nt + 1, geometry.n_cells())),
            flux: Array2::zeros((nt, geometry.n_free_faces())),
            gamma: Array2::zeros((nt + 1, geometry.n_boundary())),
            tangential: Array2::zeros((nt, geometry.n_boundary_faces())),
            exchange: Array2::zeros((nt, geometry.n_boundary())),
        }
    }

    /// Linear interpolation of the densities, zero momenta, and a constant
    /// exchange flux carrying the boundary mass imbalance.
    pub fn linear(rho0: &MeasurePair, rho1: &MeasurePair, nt: usize) -> Result<Self> {
        check_endpoints(rho0, rho1)?;
        if nt == 0 {
            return Err(Error::InvalidParameter("nt must be positive".into()));
        }
        let g = rho0.geometry();
        let mut path = SpaceTimePath::zeros(g, nt);
        for k in 0..=nt {
            let t = k as f64 / nt as f64;
            for (c, v) in path.omega.row_mut(k).iter_mut().enumerate() {
                *v = (1.0 - t) * rho0.omega()[c] + t * rho1.omega()[c];
            }
            for (b, v) in path.gamma.row_mut(k).iter_mut().enumerate() {
                *v = (1.0 - t) * rho0.gamma()[b] + t * rho1.gamma()[b];
            }
        }
        for mut row in path.exchange.rows_mut() {
            for (b, v) in row.iter_mut().enumerate() {
                *v = rho1.gamma()[b] - rho0.gamma()[b];
            }
        }
        Ok(path)
    }

    pub fn nt(&self) -> usize {
        self.flux.nrows()
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.nt() as f64
    }

    pub fn check_shape(&self) -> Result<()> {
        let g = &self.geometry;
        let nt = self.nt();
        let expect = [
            ("omega", self.omega.dim(), (nt + 1, g.n_cells())),
            ("flux", self.flux.dim(), (nt, g.n_free_faces())),
            ("gamma", self.gamma.dim(), (nt + 1, g.n_boundary())),
            ("tangential", self.tangential.dim(), (nt, g.n_boundary_faces())),
            ("exchange", self.exchange.dim(), (nt, g.n_boundary())),
        ];
        for (name, got, want) in expect {
            if got != want {
                return Err(Error::Dimension(format!("{name} has shape {got:?}, expected {want:?}")));
            }
        }
        Ok(())
    }

    /// Overwrite the first and last time nodes with the endpoint data.
    pub fn pin_endpoints(&mut self, rho0: &MeasurePair, rho1: &MeasurePair) {
        let nt = self.nt();
        self.omega.row_mut(0).assign(&ndarray::aview1(rho0.omega()));
        self.gamma.row_mut(0).assign(&ndarray::aview1(rho0.gamma()));
        self.omega.row_mut(nt).assign(&ndarray::aview1(rho1.omega()));
        self.gamma.row_mut(nt).assign(&ndarray::aview1(rho1.gamma()));
    }

    /// All fields concatenated in [`SpaceTimePath::fields`] order.
    pub fn flat(&self) -> Vec<f64> {
        self.fields().iter().flat_map(|a| a.iter().copied()).collect()
    }

    /// Inverse of [`SpaceTimePath::flat`].
    pub fn set_flat(&mut self, v: &[f64]) {
        let mut it = v.iter();
        for f in self.fields_mut() {
            f.iter_mut().for_each(|x| *x = *it.next().expect("flat length"));
        }
    }

    pub fn fields(&self) -> [&Array2<f64>; 5] {
        [&self.omega, &self.flux, &self.gamma, &self.tangential, &self.exchange]
    }

    pub fn fields_mut(&mut self) -> [&mut Array2<f64>; 5] {
        [
            &mut self.omega,
            &mut self.flux,
            &mut self.gamma,
            &mut self.tangential,
            &mut self.exchange,
        ]
    }

    /// `self += a · other`.
    pub fn axpy(&mut self, a: f64, other: &SpaceTimePath) {
        for (x, y) in self.fields_mut().into_iter().zip(other.fields()) {
            x.scaled_add(a, y);
        }
    }

    pub fn scale(&mut self, a: f64) {
        for x in self.fields_mut() {
            x.mapv_inplace(|v| v * a);
        }
    }

    /// Plain Euclidean inner product over all stored entries.
    pub fn dot(&self, other: &SpaceTimePath) -> f64 {
        self.fields()
            .into_iter()
            .zip(other.fields())
            .map(|(x, y)| (x * y).sum())
            .sum()
    }

    /// Space-time weights `(interior, boundary)`: cell volume or boundary
    /// length times `Δt`.
    pub fn weights(&self) -> (f64, f64) {
        let dt = self.dt();
        (self.geometry.cell_volume() * dt, self.geometry.boundary_length() * dt)
    }

    /// Inner product weighted by space-time cell sizes.
    pub fn weighted_dot(&self, other: &SpaceTimePath) -> f64 {
        let (wi, wb) = self.weights();
        let f = self.fields();
        let o = other.fields();
        let mut s = 0.0;
        for i in 0..5 {
            let w = if i < 2 { wi } else { wb };
            s += w * (f[i] * o[i]).sum();
        }
        s
    }

    /// Interior and boundary mass at every time node.
    pub fn masses(&self) -> Vec<(f64, f64)> {
        let g = &self.geometry;
        self.omega
            .rows()
            .into_iter()
            .zip(self.gamma.rows())
            .map(|(w, gm)| (w.sum() * g.cell_volume(), gm.sum() * g.boundary_length()))
            .collect()
    }

    /// Time-node slice `k` as raw density vectors.
    pub fn slice(&self, k: usize) -> (Vec<f64>, Vec<f64>) {
        (self.omega.row(k).to_vec(), self.gamma.row(k).to_vec())
    }

    /// Full face momentum at interval `k`, coupled faces filled from `f`.
    pub fn full_faces(&self, k: usize) -> Vec<f64> {
        self.geometry
            .assemble_faces(
                self.flux.row(k).as_slice().expect("contiguous"),
                self.exchange.row(k).as_slice().expect("contiguous"),
            )
            .expect("shape checked")
    }

    /// Total variation of the exchange flux, `∫∫|f|`.
    pub fn exchange_tv(&self) -> f64 {
        self.exchange.iter().map(|v| v.abs()).sum::<f64>() * self.geometry.boundary_length() * self.dt()
    }
}

fn check_endpoints(rho0: &MeasurePair, rho1: &MeasurePair) -> Result<()> {
    if rho0.geometry() != rho1.geometry() {
        return Err(Error::Dimension("endpoints are defined on different geometries".into()));
    }
    Ok(())
}

/// Residual of the discrete coupled continuity equations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CEResidual {
    /// `nt × n_cells`: `(ω_{k+1} − ω_k)/Δt + div F`.
    pub interior: Array2<f64>,
    /// `nt × n_boundary`: `(γ_{k+1} − γ_k)/Δt + div G − f`.
    pub boundary: Array2<f64>,
    /// Endpoint mismatch `ω_0 − ω0, γ_0 − γ0, ω_nt − ω1, γ_nt − γ1`.
    pub endpoint: Vec<f64>,
}

impl CEResidual {
    pub fn norm(&self) -> f64 {
        let s: f64 = self.interior.iter().map(|v| v * v).sum::<f64>()
            + self.boundary.iter().map(|v| v * v).sum::<f64>()
            + self.endpoint.iter().map(|v| v * v).sum::<f64>();
        s.sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.interior
            .iter()
            .chain(self.boundary.iter())
            .chain(self.endpoint.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Pointwise residual of both discrete continuity equations and of the
/// endpoint conditions.
pub fn ce_residual(path: &SpaceTimePath, rho0: &MeasurePair, rho1: &MeasurePair) -> Result<CEResidual> {
    path.check_shape()?;
    check_endpoints(rho0, rho1)?;
    if rho0.geometry() != &path.geometry {
        return Err(Error::Dimension("path and endpoints differ in geometry".into()));
    }
    let op = CeOperator::new(&path.geometry, path.nt());
    let rows = op.residual_rows(path);
    let nc = op.nc;
    let interior = rows.slice(ndarray::s![.., ..nc]).to_owned();
    let boundary = rows.slice(ndarray::s![.., nc..]).to_owned();
    let nt = path.nt();
    let mut endpoint = Vec::with_capacity(2 * op.m);
    endpoint.extend(path.omega.row(0).iter().zip(rho0.omega()).map(|(a, b)| a - b));
    endpoint.extend(path.gamma.row(0).iter().zip(rho0.gamma()).map(|(a, b)| a - b));
    endpoint.extend(path.omega.row(nt).iter().zip(rho1.omega()).map(|(a, b)| a - b));
    endpoint.extend(path.gamma.row(nt).iter().zip(rho1.gamma()).map(|(a, b)| a - b));
    Ok(CEResidual {
        interior,
        boundary,
        endpoint,
    })
}

/// Where the value of a face comes from.
#[derive(Clone, Copy, Debug)]
enum FaceSource {
    Free(usize),
    Coupled { b: usize, sign: f64 },
    Wall,
}

/// Precomputed stencil of the constraint operator for one geometry and `nt`.
///
/// The operator acts on the interior time nodes and all momenta; endpoint
/// densities enter only through [`CeOperator::residual_rows`]. Rows are
/// weighted by their space-time cell size so that, with the weighted inner
/// product on unknowns, `A W⁻¹ Aᵀ` has the constant vector as its only null
/// direction.
#[derive(Clone, Debug)]
pub struct CeOperator {
    geometry: Geometry,
    nt: usize,
    dt: f64,
    nc: usize,
    nb: usize,
    m: usize,
    vol: f64,
    len: f64,
    /// Factor on the metric weight of boundary unknowns.
    boundary_metric: f64,
    /// `(minus, plus, 1/h)` per free face.
    free: Vec<(usize, usize, f64)>,
    /// `(cell, 1/h)` per boundary cell.
    coupled: Vec<(usize, f64)>,
    /// Per cell and axis, the two faces bounding it.
    cell_faces: Vec<[[FaceSource; 2]; 2]>,
    dim: usize,
}

impl CeOperator {
    pub fn new(geometry: &Geometry, nt: usize) -> Self {
        let free_faces = geometry.free_faces();
        let mut free_index = vec![usize::MAX; geometry.n_faces()];
        for (i, &f) in free_faces.iter().enumerate() {
            free_index[f] = i;
        }
        let free = free_faces
            .iter()
            .map(|&f| match geometry.face_cells(f) {
                (Some(m), Some(p)) => (m, p, geometry.face_inv_width(f)),
                _ => unreachable!("free faces are interior"),
            })
            .collect();
        let nb = geometry.n_boundary();
        let mut src = vec![FaceSource::Wall; geometry.n_faces()];
        for (f, s) in src.iter_mut().enumerate() {
            if free_index[f] != usize::MAX {
                *s = FaceSource::Free(free_index[f]);
            }
        }
        let coupled = (0..nb)
            .map(|b| {
                let c = geometry.boundary_coupling(b);
                src[c.face] = FaceSource::Coupled { b, sign: c.sign };
                (c.cell, geometry.face_inv_width(c.face))
            })
            .collect();
        let dim = geometry.dim();
        let cell_faces = (0..geometry.n_cells())
            .map(|c| {
                let (nx, i, j) = (geometry.nx(), c % geometry.nx(), c / geometry.nx());
                let xs = [
                    src[geometry.x_face(i, j)],
                    src[if geometry.is_strip() {
                        geometry.x_face((i + 1) % nx, j)
                    } else {
                        geometry.x_face(i + 1, j)
                    }],
                ];
                let ys = if geometry.is_strip() {
                    [src[geometry.y_face(i, j)], src[geometry.y_face(i, j + 1)]]
                } else {
                    [FaceSource::Wall; 2]
                };
                [xs, ys]
            })
            .collect();
        let nc = geometry.n_cells();
        CeOperator {
            geometry: geometry.clone(),
            nt,
            dt: 1.0 / nt as f64,
            nc,
            nb,
            m: nc + nb,
            vol: geometry.cell_volume(),
            len: geometry.boundary_length(),
            boundary_metric: 1.0,
            free,
            coupled,
            cell_faces,
            dim,
        }
    }

    /// Same operator with boundary unknowns weighted by `factor · len · dt`
    /// in the projection metric.
    pub fn with_boundary_metric(mut self, factor: f64) -> Self {
        self.boundary_metric = factor;
        self
    }

    pub fn boundary_metric(&self) -> f64 {
        self.boundary_metric
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    /// Constraint rows per time interval.
    pub fn rows_per_step(&self) -> usize {
        self.m
    }

    pub fn n_rows(&self) -> usize {
        self.nt * self.m
    }

    /// Unweighted residual rows `nt × m` of the full affine operator.
    pub fn residual_rows(&self, path: &SpaceTimePath) -> Array2<f64> {
        let (nc, nt, dt) = (self.nc, self.nt, self.dt);
        let mut r = Array2::zeros((nt, self.m));
        let nbf = path.tangential.ncols();
        let inv_hx = 1.0 / self.geometry.hx();
        for k in 0..nt {
            let mut row = r.row_mut(k);
            for c in 0..nc {
                row[c] = (path.omega[[k + 1, c]] - path.omega[[k, c]]) / dt;
            }
            for (i, &(mi, pl, inv)) in self.free.iter().enumerate() {
                let s = path.flux[[k, i]] * inv;
                row[mi] += s;
                row[pl] -= s;
            }
            for (b, &(c, inv)) in self.coupled.iter().enumerate() {
                let f = path.exchange[[k, b]];
                row[c] += f * inv;
                let mut v = (path.gamma[[k + 1, b]] - path.gamma[[k, b]]) / dt - f;
                if nbf > 0 {
                    v += (path.tangential[[k, (b + 1) % nbf]] - path.tangential[[k, b]]) * inv_hx;
                }
                row[nc + b] = v;
            }
        }
        r
    }

    /// Row weights: space-time size of the cell each row lives on.
    fn row_weight(&self, r: usize) -> f64 {
        if r < self.nc {
            self.vol * self.dt
        } else {
            self.len * self.dt
        }
    }

    /// Weighted residual `A x − b` (flattened, time-major).
    pub fn weighted_residual(&self, path: &SpaceTimePath) -> Vec<f64> {
        let rows = self.residual_rows(path);
        let mut out = Vec::with_capacity(self.n_rows());
        for k in 0..self.nt {
            for r in 0..self.m {
                out.push(rows[[k, r]] * self.row_weight(r));
            }
        }
        out
    }

    /// Visit every column of the weighted operator restricted to the free
    /// unknowns: `(entries, unknown weight)`.
    fn for_each_column(&self, mut visit: impl FnMut(&[(usize, f64)], f64)) {
        let (nt, nc, m, dt) = (self.nt, self.nc, self.m, self.dt);
        let wi = self.vol * dt;
        let wb = self.len * dt;
        let wm = self.boundary_metric * wb;
        for k in 1..nt {
            for c in 0..nc {
                visit(&[((k - 1) * m + c, self.vol), (k * m + c, -self.vol)], wi);
            }
            for b in 0..self.nb {
                visit(&[((k - 1) * m + nc + b, self.len), (k * m + nc + b, -self.len)], wm);
            }
        }
        let nbf = self.geometry.n_boundary_faces();
        let inv_hx = 1.0 / self.geometry.hx();
        for k in 0..nt {
            let base = k * m;
            for &(mi, pl, inv) in &self.free {
                visit(&[(base + mi, wi * inv), (base + pl, -wi * inv)], wi);
            }
            for e in 0..nbf {
                let left = (e + nbf - 1) % nbf;
                visit(&[(base + nc + left, wb * inv_hx), (base + nc + e, -wb * inv_hx)], wm);
            }
            for (b, &(c, inv)) in self.coupled.iter().enumerate() {
                visit(&[(base + c, wi * inv), (base + nc + b, -wb)], wm);
            }
        }
    }

    /// `W⁻¹ Aᵀ ν` on the free unknowns (endpoint densities stay zero).
    pub fn adjoint_scaled(&self, nu: &[f64]) -> SpaceTimePath {
        let mut out = SpaceTimePath::zeros(&self.geometry, self.nt);
        self.adjoint_into(nu, &mut out, true);
        out
    }

    /// `Aᵀ ν` on the free unknowns, unscaled.
    pub fn adjoint(&self, nu: &[f64]) -> SpaceTimePath {
        let mut out = SpaceTimePath::zeros(&self.geometry, self.nt);
        self.adjoint_into(nu, &mut out, false);
        out
    }

    fn adjoint_into(&self, nu: &[f64], out: &mut SpaceTimePath, scaled: bool) {
        let (nt, nc, m, dt) = (self.nt, self.nc, self.m, self.dt);
        let wi = self.vol * dt;
        let wb = self.len * dt;
        let (si, sb) = if scaled {
            (1.0 / wi, 1.0 / (self.boundary_metric * wb))
        } else {
            (1.0, 1.0)
        };
        for k in 1..nt {
            for c in 0..nc {
                out.omega[[k, c]] = si * self.vol * (nu[(k - 1) * m + c] - nu[k * m + c]);
            }
            for b in 0..self.nb {
                out.gamma[[k, b]] = sb * self.len * (nu[(k - 1) * m + nc + b] - nu[k * m + nc + b]);
            }
        }
        let nbf = self.geometry.n_boundary_faces();
        let inv_hx = 1.0 / self.geometry.hx();
        for k in 0..nt {
            let base = k * m;
            for (i, &(mi, pl, inv)) in self.free.iter().enumerate() {
                out.flux[[k, i]] = si * wi * inv * (nu[base + mi] - nu[base + pl]);
            }
            for e in 0..nbf {
                let left = (e + nbf - 1) % nbf;
                out.tangential[[k, e]] = sb * wb * inv_hx * (nu[base + nc + left] - nu[base + nc + e]);
            }
            for (b, &(c, inv)) in self.coupled.iter().enumerate() {
                out.exchange[[k, b]] = sb * (wi * inv * nu[base + c] - wb * nu[base + nc + b]);
            }
        }
    }

    /// Weighted operator applied to the free unknowns of `path` (endpoint
    /// densities treated as zero).
    pub fn apply_free(&self, path: &SpaceTimePath) -> Vec<f64> {
        let mut p = path.clone();
        let nt = self.nt;
        p.omega.row_mut(0).fill(0.0);
        p.omega.row_mut(nt).fill(0.0);
        p.gamma.row_mut(0).fill(0.0);
        p.gamma.row_mut(nt).fill(0.0);
        self.weighted_residual(&p)
    }

    /// Diagonal of `A W⁻¹ Aᵀ`.
    pub fn normal_diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n_rows()];
        self.for_each_column(|col, w| {
            for &(r, a) in col {
                d[r] += a * a / w;
            }
        });
        d
    }

    /// `A W⁻¹ Aᵀ` as a band matrix with the gauge row pinned.
    pub fn normal_matrix(&self) -> BandMatrix {
        let n = self.n_rows();
        let mut mat = BandMatrix::zeros(n, self.m);
        self.for_each_column(|col, w| {
            for (a, &(ra, va)) in col.iter().enumerate() {
                mat.add(ra, ra, va * va / w);
                for &(rb, vb) in &col[..a] {
                    mat.add(ra, rb, va * vb / w);
                }
            }
        });
        mat.pin(n - 1);
        mat
    }

    /// `A W⁻¹ Aᵀ ν` with the gauge row pinned, matrix free.
    fn normal_apply(&self, nu: &[f64], out: &mut [f64]) {
        let n = nu.len();
        let mut pinned = nu.to_vec();
        pinned[n - 1] = 0.0;
        let y = self.adjoint_scaled(&pinned);
        let r = self.apply_free(&y);
        out.copy_from_slice(&r);
        out[n - 1] = nu[n - 1];
    }

    /// `(nt, m)` view of a flattened row vector.
    pub fn rows_view(&self, v: &[f64]) -> Array2<f64> {
        Array2::from_shape_vec((self.nt, self.m), v.to_vec()).expect("row count")
    }
}

/// Projection onto the constraint set in the weighted metric, by conjugate
/// gradient on the normal equations.
///
/// Returns the projected path. The endpoint densities are pinned to the data
/// and the remaining unknowns move by the minimal weighted correction.
pub fn project_ce(
    path: &SpaceTimePath,
    rho0: &MeasurePair,
    rho1: &MeasurePair,
    cg_tol: f64,
    cg_max: usize,
) -> Result<SpaceTimePath> {
    Ok(project_ce_with_multipliers(path, rho0, rho1, cg_tol, cg_max)?.0)
}

/// As [`project_ce`], also returning the row multipliers `ν`.
pub fn project_ce_with_multipliers(
    path: &SpaceTimePath,
    rho0: &MeasurePair,
    rho1: &MeasurePair,
    cg_tol: f64,
    cg_max: usize,
) -> Result<(SpaceTimePath, Vec<f64>)> {
    path.check_shape()?;
    check_endpoints(rho0, rho1)?;
    if rho0.geometry() != &path.geometry {
        return Err(Error::Dimension("path and endpoints differ in geometry".into()));
    }
    if !(cg_tol > 0.0) {
        return Err(Error::InvalidParameter("cg_tol must be positive".into()));
    }
    let op = CeOperator::new(&path.geometry, path.nt());
    let mut y = path.clone();
    y.pin_endpoints(rho0, rho1);
    let mut rhs = op.weighted_residual(&y);
    let n = rhs.len();
    rhs[n - 1] = 0.0;
    let mut diag = op.normal_diagonal();
    diag[n - 1] = 1.0;
    let data_norm = linalg::norm(rho0.omega())
        + linalg::norm(rho0.gamma())
        + linalg::norm(rho1.omega())
        + linalg::norm(rho1.gamma());
    let (wi, wb) = y.weights();
    let tol = cg_tol * (1.0 + data_norm) * wi.min(wb);
    let mut nu = vec![0.0; n];
    let rep = linalg::pcg(|x, out| op.normal_apply(x, out), &diag, &rhs, &mut nu, tol, cg_max);
    if !rep.converged {
        return Err(Error::NotConverged {
            what: "constraint projection (CG)",
            residual: rep.residual,
        });
    }
    nu[n - 1] = 0.0;
    y.axpy(-1.0, &op.adjoint_scaled(&nu));
    Ok((y, nu))
}

/// Factored normal equations `A W⁻¹ Aᵀ = L ⊗ D + I ⊗ S`.
///
/// `L` is the path Laplacian in time (diagonalized by a DCT-II), `D` the
/// diagonal density term and `S` the spatial flux Laplacian. On the strip the
/// rows are further split into periodic columns and `S` is diagonalized by a
/// real Fourier transform along `x` (cosine and sine modes share one system
/// by reflection symmetry). What remains per mode is a small band system.
#[derive(Clone)]
struct SpectralFactor {
    nt: usize,
    m: usize,
    ncol: usize,
    nloc: usize,
    /// Global spatial row -> (column, local row).
    place: Vec<(usize, usize)>,
    /// Factors indexed by `j * n_modes + q`.
    modes: Vec<BandCholesky>,
    n_modes: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
    dct: std::sync::Arc<dyn rustdct::TransformType2And3<f64>>,
}

impl std::fmt::Debug for SpectralFactor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralFactor")
            .field("nt", &self.nt)
            .field("m", &self.m)
            .field("ncol", &self.ncol)
            .finish()
    }
}

impl SpectralFactor {
    fn new(op: &CeOperator) -> Result<Self> {
        let g = &op.geometry;
        let (nt, nc, nb, m) = (op.nt, op.nc, op.nb, op.m);
        let (ncol, nloc) = if g.is_strip() { (g.nx(), g.ny() + 1) } else { (1, m) };
        // local order keeps every spatial system tridiagonal:
        // strip: boundary cell, then cells bottom to top;
        // interval: left atom, cells, right atom.
        let mut place = vec![(0, 0); m];
        if g.is_strip() {
            let nx = g.nx();
            for c in 0..nc {
                place[c] = (c % nx, c / nx + 1);
            }
            for b in 0..nb {
                place[nc + b] = (b, 0);
            }
        } else {
            for c in 0..nc {
                place[c] = (0, c + 1);
            }
            for b in 0..nb {
                let cell = g.boundary_coupling(b).cell;
                place[nc + b] = (0, if cell == 0 { 0 } else { nc + 1 });
            }
        }
        let n_modes = ncol / 2 + 1;
        let mut cos = vec![0.0; n_modes * ncol];
        let mut sin = vec![0.0; n_modes * ncol];
        for q in 0..n_modes {
            for i in 0..ncol {
                let th = 2.0 * std::f64::consts::PI * ((q * i) % ncol) as f64 / ncol as f64;
                cos[q * ncol + i] = th.cos();
                sin[q * ncol + i] = th.sin();
            }
        }

        // density term and spatial Laplacian per Fourier mode
        let mut dens = vec![0.0; nloc];
        let mut spatial: Vec<BandMatrix> = (0..n_modes).map(|_| BandMatrix::zeros(nloc, 1)).collect();
        let per = 1.0 / ncol as f64;
        op.for_each_column(|col, w| {
            let k0 = col[0].0 / m;
            if col.iter().any(|&(r, _)| r / m != k0) {
                // time coupling: one entry in each of rows k-1 and k
                if k0 == 0 {
                    let (r, v) = col[0];
                    dens[place[r].1] += v * v / w * per;
                }
                return;
            }
            if k0 != 0 {
                return;
            }
            for (a, &(ra, va)) in col.iter().enumerate() {
                let (ia, pa) = place[ra];
                for (q, mat) in spatial.iter_mut().enumerate() {
                    mat.add(pa, pa, va * va / w * per);
                    for &(rb, vb) in &col[..a] {
                        let (ib, pb) = place[rb];
                        let v = va * vb / w * per * cos[q * ncol + (ib + ncol - ia) % ncol];
                        if pa == pb {
                            mat.add(pa, pa, 2.0 * v);
                        } else {
                            mat.add(pa, pb, v);
                        }
                    }
                }
            }
        });

        let mut modes = Vec::with_capacity(nt * n_modes);
        for j in 0..nt {
            let lam = 2.0 - 2.0 * (std::f64::consts::PI * j as f64 / nt as f64).cos();
            for (q, sm) in spatial.iter().enumerate() {
                let mut mat = sm.clone();
                for (p, d) in dens.iter().enumerate() {
                    mat.add(p, p, lam * d);
                }
                if j == 0 && q == 0 {
                    mat.pin(nloc - 1);
                }
                modes.push(mat.cholesky()?);
            }
        }
        let dct = rustdct::DctPlanner::new().plan_dct2(nt);
        Ok(SpectralFactor {
            nt,
            m,
            ncol,
            nloc,
            place,
            modes,
            n_modes,
            cos,
            sin,
            dct,
        })
    }

    fn solve(&self, rhs: &mut [f64]) {
        let (nt, m, ncol, nloc, n_modes) = (self.nt, self.m, self.ncol, self.nloc, self.n_modes);
        // time transform, one line per spatial row
        let mut line = vec![0.0; nt];
        let mut hat = vec![0.0; nt * m];
        for r in 0..m {
            for k in 0..nt {
                line[k] = rhs[k * m + r];
            }
            self.dct.process_dct2(&mut line);
            for j in 0..nt {
                hat[j * m + r] = line[j];
            }
        }
        // per time mode: Fourier along columns, band solves, inverse
        let mut grid = vec![0.0; ncol * nloc];
        let mut a = vec![0.0; nloc];
        let mut b = vec![0.0; nloc];
        for j in 0..nt {
            let row = &mut hat[j * m..(j + 1) * m];
            for (r, &(i, p)) in self.place.iter().enumerate() {
                grid[p * ncol + i] = row[r];
            }
            let mut out = vec![0.0; ncol * nloc];
            for q in 0..n_modes {
                let (c, s) = (&self.cos[q * ncol..(q + 1) * ncol], &self.sin[q * ncol..(q + 1) * ncol]);
                for p in 0..nloc {
                    let g = &grid[p * ncol..(p + 1) * ncol];
                    a[p] = g.iter().zip(c).map(|(x, y)| x * y).sum();
                    b[p] = g.iter().zip(s).map(|(x, y)| x * y).sum();
                }
                let singular = j == 0 && q == 0;
                if singular {
                    a[nloc - 1] = 0.0;
                }
                let f = &self.modes[j * n_modes + q];
                f.solve_in_place(&mut a);
                if singular {
                    a[nloc - 1] = 0.0;
                }
                let nyquist = 2 * q == ncol;
                if q > 0 && !nyquist {
                    f.solve_in_place(&mut b);
                }
                let w = if q == 0 || nyquist { 1.0 } else { 2.0 };
                for p in 0..nloc {
                    let o = &mut out[p * ncol..(p + 1) * ncol];
                    if q == 0 || nyquist {
                        for (i, v) in o.iter_mut().enumerate() {
                            *v += w * a[p] * c[i];
                        }
                    } else {
                        for (i, v) in o.iter_mut().enumerate() {
                            *v += w * (a[p] * c[i] + b[p] * s[i]);
                        }
                    }
                }
            }
            let inv = 1.0 / ncol as f64;
            for (r, &(i, p)) in self.place.iter().enumerate() {
                row[r] = out[p * ncol + i] * inv;
            }
        }
        // inverse time transform
        let scale = 2.0 / nt as f64;
        for r in 0..m {
            for j in 0..nt {
                line[j] = hat[j * m + r];
            }
            self.dct.process_dct3(&mut line);
            for k in 0..nt {
                rhs[k * m + r] = line[k] * scale;
            }
        }
    }
}

/// Direct projector: the normal matrix is factored once and reused.
#[derive(Clone, Debug)]
pub struct CeProjector {
    op: CeOperator,
    factor: SpectralFactor,
}

impl CeProjector {
    pub fn new(geometry: &Geometry, nt: usize) -> Result<Self> {
        Self::from_operator(CeOperator::new(geometry, nt))
    }

    /// Factor the normal equations of a prepared operator.
    pub fn from_operator(op: CeOperator) -> Result<Self> {
        if op.nt == 0 {
            return Err(Error::InvalidParameter("nt must be positive".into()));
        }
        let factor = SpectralFactor::new(&op)?;
        Ok(CeProjector { op, factor })
    }

    pub fn operator(&self) -> &CeOperator {
        &self.op
    }

    /// Solve `A W⁻¹ Aᵀ ν = r` for a consistent right-hand side; `ν` is
    /// determined up to an additive constant, fixed by a pinned row.
    pub fn solve_normal(&self, rhs: &mut [f64]) {
        self.factor.solve(rhs);
    }

    /// Project `path` in place; returns the multipliers `ν` (flattened rows).
    pub fn project(&self, path: &mut SpaceTimePath, rho0: &MeasurePair, rho1: &MeasurePair) -> Vec<f64> {
        path.pin_endpoints(rho0, rho1);
        let mut nu = self.op.weighted_residual(path);
        self.solve_normal(&mut nu);
        path.axpy(-1.0, &self.op.adjoint_scaled(&nu));
        nu
    }
}

/// Fields co-located on space-time cells (time interval × cell).
#[derive(Clone, Debug, PartialEq)]
pub struct Colocated {
    /// `nt × n_cells`.
    pub density: Array2<f64>,
    /// `nt × n_cells × dim`.
    pub momentum: Array3<f64>,
    /// `nt × n_boundary`.
    pub boundary_density: Array2<f64>,
    /// `nt × n_boundary` on the strip, `nt × 0` on the interval.
    pub tangential: Array2<f64>,
    /// `nt × n_boundary`.
    pub exchange: Array2<f64>,
}

impl Colocated {
    /// All fields concatenated: density, momentum, boundary density,
    /// tangential, exchange.
    pub fn flat(&self) -> Vec<f64> {
        self.density
            .iter()
            .chain(self.momentum.iter())
            .chain(self.boundary_density.iter())
            .chain(self.tangential.iter())
            .chain(self.exchange.iter())
            .copied()
            .collect()
    }

    pub fn zeros(geometry: &Geometry, nt: usize) -> Self {
        let nb = geometry.n_boundary();
        Colocated {
            density: Array2::zeros((nt, geometry.n_cells())),
            momentum: Array3::zeros((nt, geometry.n_cells(), geometry.dim())),
            boundary_density: Array2::zeros((nt, nb)),
            tangential: Array2::zeros((nt, geometry.n_boundary_faces())),
            exchange: Array2::zeros((nt, nb)),
        }
    }

    pub fn nt(&self) -> usize {
        self.density.nrows()
    }

    pub fn dot(&self, o: &Colocated) -> f64 {
        (&self.density * &o.density).sum()
            + (&self.momentum * &o.momentum).sum()
            + (&self.boundary_density * &o.boundary_density).sum()
            + (&self.tangential * &o.tangential).sum()
            + (&self.exchange * &o.exchange).sum()
    }

    pub fn axpy(&mut self, a: f64, o: &Colocated) {
        self.density.scaled_add(a, &o.density);
        self.momentum.scaled_add(a, &o.momentum);
        self.boundary_density.scaled_add(a, &o.boundary_density);
        self.tangential.scaled_add(a, &o.tangential);
        self.exchange.scaled_add(a, &o.exchange);
    }

    pub fn scale(&mut self, a: f64) {
        self.density.mapv_inplace(|v| v * a);
        self.momentum.mapv_inplace(|v| v * a);
        self.boundary_density.mapv_inplace(|v| v * a);
        self.tangential.mapv_inplace(|v| v * a);
        self.exchange.mapv_inplace(|v| v * a);
    }

    /// Inner product weighted by space-time cell sizes.
    pub fn weighted_dot(&self, o: &Colocated, geometry: &Geometry) -> f64 {
        let dt = 1.0 / self.nt() as f64;
        let wi = geometry.cell_volume() * dt;
        let wb = geometry.boundary_length() * dt;
        wi * ((&self.density * &o.density).sum() + (&self.momentum * &o.momentum).sum())
            + wb * ((&self.boundary_density * &o.boundary_density).sum()
                + (&self.tangential * &o.tangential).sum()
                + (&self.exchange * &o.exchange).sum())
    }
}

impl CeOperator {
    fn face_value(&self, path: &SpaceTimePath, k: usize, s: FaceSource) -> f64 {
        match s {
            FaceSource::Free(i) => path.flux[[k, i]],
            FaceSource::Coupled { b, sign } => sign * path.exchange[[k, b]],
            FaceSource::Wall => 0.0,
        }
    }

    /// Average densities in time and momenta in space onto space-time cells.
    pub fn colocate(&self, path: &SpaceTimePath) -> Colocated {
        let nt = self.nt;
        let mut out = Colocated::zeros(&self.geometry, nt);
        let nbf = self.geometry.n_boundary_faces();
        for k in 0..nt {
            for c in 0..self.nc {
                out.density[[k, c]] = 0.5 * (path.omega[[k, c]] + path.omega[[k + 1, c]]);
                for a in 0..self.dim {
                    let [lo, hi] = self.cell_faces[c][a];
                    out.momentum[[k, c, a]] = 0.5 * (self.face_value(path, k, lo) + self.face_value(path, k, hi));
                }
            }
            for b in 0..self.nb {
                out.boundary_density[[k, b]] = 0.5 * (path.gamma[[k, b]] + path.gamma[[k + 1, b]]);
                out.exchange[[k, b]] = path.exchange[[k, b]];
                if nbf > 0 {
                    out.tangential[[k, b]] = 0.5 * (path.tangential[[k, b]] + path.tangential[[k, (b + 1) % nbf]]);
                }
            }
        }
        out
    }

    /// Rows of [`CeOperator::colocate`] on flattened fields: each co-located
    /// slot (in [`Colocated::flat`] order) with the path slots it averages
    /// (in [`SpaceTimePath::flat`] order).
    pub(crate) fn colocate_rows(&self, mut visit: impl FnMut(usize, &[(usize, f64)])) {
        let (nt, nc, nb, dim) = (self.nt, self.nc, self.nb, self.dim);
        let nff = self.free.len();
        let nbf = self.geometry.n_boundary_faces();
        let o_fl = (nt + 1) * nc;
        let o_ga = o_fl + nt * nff;
        let o_ta = o_ga + (nt + 1) * nb;
        let o_ex = o_ta + nt * nbf;
        let v_mo = nt * nc;
        let v_bd = v_mo + nt * nc * dim;
        let v_ta = v_bd + nt * nb;
        let v_ex = v_ta + nt * nbf;
        let mut row: Vec<(usize, f64)> = Vec::with_capacity(2);
        for k in 0..nt {
            for c in 0..nc {
                visit(k * nc + c, &[(k * nc + c, 0.5), ((k + 1) * nc + c, 0.5)]);
                for a in 0..dim {
                    row.clear();
                    for s in self.cell_faces[c][a] {
                        match s {
                            FaceSource::Free(i) => row.push((o_fl + k * nff + i, 0.5)),
                            FaceSource::Coupled { b, sign } => row.push((o_ex + k * nb + b, 0.5 * sign)),
                            FaceSource::Wall => {}
                        }
                    }
                    visit(v_mo + (k * nc + c) * dim + a, &row);
                }
            }
            for b in 0..nb {
                visit(
                    v_bd + k * nb + b,
                    &[(o_ga + k * nb + b, 0.5), (o_ga + (k + 1) * nb + b, 0.5)],
                );
                visit(v_ex + k * nb + b, &[(o_ex + k * nb + b, 1.0)]);
            }
            for b in 0..nbf {
                let next = (b + 1) % nbf;
                if next == b {
                    visit(v_ta + k * nbf + b, &[(o_ta + k * nbf + b, 1.0)]);
                } else {
                    visit(
                        v_ta + k * nbf + b,
                        &[(o_ta + k * nbf + b, 0.5), (o_ta + k * nbf + next, 0.5)],
                    );
                }
            }
        }
    }

    /// Euclidean transpose of [`CeOperator::colocate`], including the
    /// endpoint density rows.
    pub fn colocate_transpose(&self, v: &Colocated) -> SpaceTimePath {
        let nt = self.nt;
        let mut out = SpaceTimePath::zeros(&self.geometry, nt);
        let nbf = self.geometry.n_boundary_faces();
        for k in 0..nt {
            for c in 0..self.nc {
                let d = 0.5 * v.density[[k, c]];
                out.omega[[k, c]] += d;
                out.omega[[k + 1, c]] += d;
                for a in 0..self.dim {
                    let h = 0.5 * v.momentum[[k, c, a]];
                    for s in self.cell_faces[c][a] {
                        match s {
                            FaceSource::Free(i) => out.flux[[k, i]] += h,
                            FaceSource::Coupled { b, sign } => out.exchange[[k, b]] += sign * h,
                            FaceSource::Wall => {}
                        }
                    }
                }
            }
            for b in 0..self.nb {
                let d = 0.5 * v.boundary_density[[k, b]];
                out.gamma[[k, b]] += d;
                out.gamma[[k + 1, b]] += d;
                out.exchange[[k, b]] += v.exchange[[k, b]];
                if nbf > 0 {
                    let h = 0.5 * v.tangential[[k, b]];
                    out.tangential[[k, b]] += h;
                    out.tangential[[k, (b + 1) % nbf]] += h;
                }
            }
        }
        out
    }
}

/// Co-locate a path's fields on space-time cells.
pub fn interpolate_colocate(path: &SpaceTimePath) -> Result<Colocated> {
    path.check_shape()?;
    Ok(CeOperator::new(&path.geometry, path.nt()).colocate(path))
}

/// Conservation residual of the total density `ϱ = ω + γ` with total flux
/// `H = F + Ḡ`, in mass units per unit time, on the extended cell set
/// (interior cells then boundary cells). Evaluated face by face from the
/// full momentum field, independently of [`CeOperator`].
pub fn total_density_residual(path: &SpaceTimePath) -> Result<Array2<f64>> {
    path.check_shape()?;
    let g = &path.geometry;
    let (nc, nb, nt) = (g.n_cells(), g.n_boundary(), path.nt());
    let dt = path.dt();
    let mut res = Array2::zeros((nt, nc + nb));
    let vol = g.cell_volume();
    let len = g.boundary_length();
    for k in 0..nt {
        let faces = path.full_faces(k);
        let mut row = res.row_mut(k);
        for c in 0..nc {
            row[c] = vol * (path.omega[[k + 1, c]] - path.omega[[k, c]]) / dt;
        }
        for b in 0..nb {
            row[nc + b] = len * (path.gamma[[k + 1, b]] - path.gamma[[k, b]]) / dt;
        }
        for (face, &v) in faces.iter().enumerate() {
            // mass rate through the face (area × normal momentum)
            let q = v * vol * g.face_inv_width(face);
            match g.face_cells(face) {
                (Some(m), Some(p)) => {
                    row[m] += q;
                    row[p] -= q;
                }
                (Some(m), None) | (None, Some(m)) if g.is_coupled_face(face) => {
                    let b = (0..nb).find(|&b| g.boundary_coupling(b).face == face).expect("coupled");
                    // outward mass moves from cell m to boundary cell b
                    let out = if g.face_cells(face).0.is_some() { q } else { -q };
                    row[m] += out;
                    row[nc + b] -= out;
                }
                _ => {}
            }
        }
        let nbf = g.n_boundary_faces();
        for e in 0..nbf {
            // boundary face e sits between boundary cells e-1 and e
            let q = path.tangential[[k, e]] * len / g.hx();
            let left = (e + nbf - 1) % nbf;
            row[nc + left] += q;
            row[nc + e] -= q;
        }
    }
    Ok(res)
}
