//! Uniform finite-volume grids for the two supported domains.
//!
//! * [`GeometryKind::Interval`]: `Ω = [0, Lx]`, the boundary is the pair of
//!   end points, each carried by a single atom of unit weight. There is no
//!   tangential transport on the boundary.
//! * [`GeometryKind::Strip`]: `Ω = [0, Lx) × [0, Ly]`, periodic in `x`. The
//!   boundary `Γ` is the edge `y = 0`, a periodic 1-D grid of `Nx` cells. The
//!   edge `y = Ly` is a closed wall.
//!
//! Face fields use a single flat layout. On the interval the faces are
//! numbered `0..=Nx` from left to right. On the strip the `Nx·Ny` faces
//! normal to `x` come first (face `(i, j)` sits on the left of cell
//! `(i, j)`), followed by the `Nx·(Ny+1)` faces normal to `y` (face `(i, j)`
//! is the bottom face of cell `(i, j)`; row `j = Ny` is the wall).
//! A positive face value is a flux in the positive coordinate direction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeometryKind {
    Interval,
    Strip,
}

/// How one boundary cell couples to the interior grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundaryCoupling {
    /// Index of the interior face carrying the exchange flux.
    pub face: usize,
    /// Outward normal orientation of that face: the face value equals
    /// `sign * f` where `f` is the flux leaving the interior.
    pub sign: f64,
    /// Interior cell adjacent to the boundary cell.
    pub cell: usize,
    /// Interior vertex sitting on the boundary (used by dual potentials).
    pub vertex: usize,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
struct GeometrySpec {
    kind: GeometryKind,
    nx: usize,
    #[serde(default)]
    ny: Option<usize>,
    lx: f64,
    #[serde(default)]
    ly: Option<f64>,
}

/// A discrete domain. Immutable after construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GeometrySpec", into = "GeometrySpec")]
pub struct Geometry {
    kind: GeometryKind,
    nx: usize,
    ny: usize,
    lx: f64,
    ly: f64,
}

impl TryFrom<GeometrySpec> for Geometry {
    type Error = Error;

    fn try_from(spec: GeometrySpec) -> Result<Self> {
        match spec.kind {
            GeometryKind::Interval => Geometry::interval(spec.nx, spec.lx),
            GeometryKind::Strip => {
                let ny = spec
                    .ny
                    .ok_or_else(|| Error::InvalidGeometry("strip requires `ny`".into()))?;
                let ly = spec
                    .ly
                    .ok_or_else(|| Error::InvalidGeometry("strip requires `ly`".into()))?;
                Geometry::strip(spec.nx, ny, spec.lx, ly)
            }
        }
    }
}

impl From<Geometry> for GeometrySpec {
    fn from(g: Geometry) -> Self {
        match g.kind {
            GeometryKind::Interval => GeometrySpec {
                kind: g.kind,
                nx: g.nx,
                ny: None,
                lx: g.lx,
                ly: None,
            },
            GeometryKind::Strip => GeometrySpec {
                kind: g.kind,
                nx: g.nx,
                ny: Some(g.ny),
                lx: g.lx,
                ly: Some(g.ly),
            },
        }
    }
}

fn check_length(name: &str, value: f64) -> Result<()> {
    if !(value.is_finite() && value > 0.0) {
        return Err(Error::InvalidGeometry(format!(
            "{name} must be positive and finite, got {value}"
        )));
    }
    Ok(())
}

impl Geometry {
    /// Uniform partition of `[0, lx]` into `nx >= 2` cells.
    pub fn interval(nx: usize, lx: f64) -> Result<Self> {
        if nx < 2 {
            return Err(Error::InvalidGeometry(format!(
                "interval needs at least 2 cells, got {nx}"
            )));
        }
        check_length("lx", lx)?;
        Ok(Geometry {
            kind: GeometryKind::Interval,
            nx,
            ny: 1,
            lx,
            ly: 1.0,
        })
    }

    /// Periodic strip `[0, lx) × [0, ly]` with `nx >= 3`, `ny >= 2`.
    pub fn strip(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        if nx < 3 {
            return Err(Error::InvalidGeometry(format!(
                "periodic direction needs at least 3 cells, got {nx}"
            )));
        }
        if ny < 2 {
            return Err(Error::InvalidGeometry(format!("strip needs at least 2 rows, got {ny}")));
        }
        check_length("lx", lx)?;
        check_length("ly", ly)?;
        Ok(Geometry {
            kind: GeometryKind::Strip,
            nx,
            ny,
            lx,
            ly,
        })
    }

    pub fn kind(&self) -> GeometryKind {
        self.kind
    }

    pub fn is_strip(&self) -> bool {
        self.kind == GeometryKind::Strip
    }

    /// Spatial dimension of the interior.
    pub fn dim(&self) -> usize {
        match self.kind {
            GeometryKind::Interval => 1,
            GeometryKind::Strip => 2,
        }
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    /// Number of rows (1 on the interval).
    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn lx(&self) -> f64 {
        self.lx
    }

    /// Height of the strip (1 on the interval, where it is unused).
    pub fn ly(&self) -> f64 {
        self.ly
    }

    pub fn hx(&self) -> f64 {
        self.lx / self.nx as f64
    }

    pub fn hy(&self) -> f64 {
        self.ly / self.ny as f64
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn cell_volume(&self) -> f64 {
        match self.kind {
            GeometryKind::Interval => self.hx(),
            GeometryKind::Strip => self.hx() * self.hy(),
        }
    }

    pub fn domain_volume(&self) -> f64 {
        match self.kind {
            GeometryKind::Interval => self.lx,
            GeometryKind::Strip => self.lx * self.ly,
        }
    }

    pub fn n_boundary(&self) -> usize {
        match self.kind {
            GeometryKind::Interval => 2,
            GeometryKind::Strip => self.nx,
        }
    }

    /// Measure of one boundary cell: unit atom weight on the interval.
    pub fn boundary_length(&self) -> f64 {
        match self.kind {
            GeometryKind::Interval => 1.0,
            GeometryKind::Strip => self.hx(),
        }
    }

    /// Total measure of the boundary.
    pub fn boundary_measure(&self) -> f64 {
        self.boundary_length() * self.n_boundary() as f64
    }

    /// Cell index of `(i, j)`; `i` wraps periodically on the strip.
    pub fn cell(&self, i: usize, j: usize) -> usize {
        j * self.nx + (i % self.nx)
    }

    pub fn cell_center(&self, c: usize) -> [f64; 2] {
        let (i, j) = (c % self.nx, c / self.nx);
        match self.kind {
            GeometryKind::Interval => [(i as f64 + 0.5) * self.hx(), 0.0],
            GeometryKind::Strip => [(i as f64 + 0.5) * self.hx(), (j as f64 + 0.5) * self.hy()],
        }
    }

    pub fn boundary_center(&self, b: usize) -> [f64; 2] {
        match self.kind {
            GeometryKind::Interval => [if b == 0 { 0.0 } else { self.lx }, 0.0],
            GeometryKind::Strip => [(b as f64 + 0.5) * self.hx(), 0.0],
        }
    }

    // ---- faces -------------------------------------------------------

    pub fn n_faces(&self) -> usize {
        match self.kind {
            GeometryKind::Interval => self.nx + 1,
            GeometryKind::Strip => self.nx * self.ny + self.nx * (self.ny + 1),
        }
    }

    /// Face normal to `x` on the left of cell `(i, j)`.
    pub fn x_face(&self, i: usize, j: usize) -> usize {
        match self.kind {
            GeometryKind::Interval => i,
            GeometryKind::Strip => j * self.nx + (i % self.nx),
        }
    }

    /// Face normal to `y` below cell `(i, j)` (strip only).
    pub fn y_face(&self, i: usize, j: usize) -> usize {
        debug_assert!(self.is_strip());
        self.nx * self.ny + j * self.nx + (i % self.nx)
    }

    /// Cells on the negative and positive side of a face.
    pub fn face_cells(&self, face: usize) -> (Option<usize>, Option<usize>) {
        match self.kind {
            GeometryKind::Interval => {
                let minus = if face >= 1 { Some(face - 1) } else { None };
                let plus = if face < self.nx { Some(face) } else { None };
                (minus, plus)
            }
            GeometryKind::Strip => {
                let nxy = self.nx * self.ny;
                if face < nxy {
                    let (i, j) = (face % self.nx, face / self.nx);
                    (Some(self.cell(i + self.nx - 1, j)), Some(self.cell(i, j)))
                } else {
                    let f = face - nxy;
                    let (i, j) = (f % self.nx, f / self.nx);
                    let minus = if j >= 1 { Some(self.cell(i, j - 1)) } else { None };
                    let plus = if j < self.ny { Some(self.cell(i, j)) } else { None };
                    (minus, plus)
                }
            }
        }
    }

    /// Area-to-volume ratio of a face, i.e. `1/h` in its normal direction.
    pub fn face_inv_width(&self, face: usize) -> f64 {
        match self.kind {
            GeometryKind::Interval => 1.0 / self.hx(),
            GeometryKind::Strip => {
                if face < self.nx * self.ny {
                    1.0 / self.hx()
                } else {
                    1.0 / self.hy()
                }
            }
        }
    }

    /// Coordinate axis a face is normal to (0 = x, 1 = y).
    pub fn face_axis(&self, face: usize) -> usize {
        match self.kind {
            GeometryKind::Interval => 0,
            GeometryKind::Strip => usize::from(face >= self.nx * self.ny),
        }
    }

    /// Coupling of each boundary cell to the interior.
    pub fn boundary_coupling(&self, b: usize) -> BoundaryCoupling {
        match self.kind {
            GeometryKind::Interval => {
                if b == 0 {
                    BoundaryCoupling {
                        face: 0,
                        sign: -1.0,
                        cell: 0,
                        vertex: 0,
                    }
                } else {
                    BoundaryCoupling {
                        face: self.nx,
                        sign: 1.0,
                        cell: self.nx - 1,
                        vertex: self.nx,
                    }
                }
            }
            GeometryKind::Strip => BoundaryCoupling {
                face: self.y_face(b, 0),
                sign: -1.0,
                cell: self.cell(b, 0),
                vertex: b,
            },
        }
    }

    /// True for closed-wall faces (the top edge of the strip).
    pub fn is_wall_face(&self, face: usize) -> bool {
        match self.kind {
            GeometryKind::Interval => false,
            GeometryKind::Strip => face >= self.nx * self.ny + self.nx * self.ny,
        }
    }

    /// True for faces whose value is the interior/boundary exchange flux.
    pub fn is_coupled_face(&self, face: usize) -> bool {
        match self.kind {
            GeometryKind::Interval => face == 0 || face == self.nx,
            GeometryKind::Strip => {
                let nxy = self.nx * self.ny;
                face >= nxy && face < nxy + self.nx
            }
        }
    }

    /// Faces carrying an independent momentum unknown, in face order.
    pub fn free_faces(&self) -> Vec<usize> {
        (0..self.n_faces())
            .filter(|&f| !self.is_wall_face(f) && !self.is_coupled_face(f))
            .collect()
    }

    pub fn n_free_faces(&self) -> usize {
        match self.kind {
            GeometryKind::Interval => self.nx - 1,
            GeometryKind::Strip => self.nx * self.ny + self.nx * (self.ny - 1),
        }
    }

    /// Expand free-face momenta and exchange fluxes into a full face field.
    pub fn assemble_faces(&self, free: &[f64], exchange: &[f64]) -> Result<Vec<f64>> {
        if free.len() != self.n_free_faces() || exchange.len() != self.n_boundary() {
            return Err(Error::Dimension(format!(
                "expected {} free faces and {} exchange values, got {} and {}",
                self.n_free_faces(),
                self.n_boundary(),
                free.len(),
                exchange.len()
            )));
        }
        let mut full = vec![0.0; self.n_faces()];
        for (&face, &v) in self.free_faces().iter().zip(free) {
            full[face] = v;
        }
        for (b, &f) in exchange.iter().enumerate() {
            let c = self.boundary_coupling(b);
            full[c.face] = c.sign * f;
        }
        Ok(full)
    }

    /// Finite-volume divergence: net outflux of each cell divided by its volume.
    pub fn divergence_interior(&self, faces: &[f64]) -> Result<Vec<f64>> {
        if faces.len() != self.n_faces() {
            return Err(Error::Dimension(format!(
                "face field has {} entries, geometry has {} faces",
                faces.len(),
                self.n_faces()
            )));
        }
        let mut div = vec![0.0; self.n_cells()];
        for (face, &flux) in faces.iter().enumerate() {
            if flux == 0.0 {
                continue;
            }
            let s = flux * self.face_inv_width(face);
            let (minus, plus) = self.face_cells(face);
            if let Some(c) = minus {
                div[c] += s;
            }
            if let Some(c) = plus {
                div[c] -= s;
            }
        }
        Ok(div)
    }

    /// Number of tangential faces on the boundary (0 on the interval).
    pub fn n_boundary_faces(&self) -> usize {
        match self.kind {
            GeometryKind::Interval => 0,
            GeometryKind::Strip => self.nx,
        }
    }

    /// Periodic divergence along the boundary. Boundary face `b` sits on the
    /// left of boundary cell `b`.
    pub fn divergence_boundary(&self, faces: &[f64]) -> Result<Vec<f64>> {
        if faces.len() != self.n_boundary_faces() {
            return Err(Error::Dimension(format!(
                "boundary face field has {} entries, geometry has {}",
                faces.len(),
                self.n_boundary_faces()
            )));
        }
        let n = self.n_boundary();
        let mut div = vec![0.0; n];
        if faces.is_empty() {
            return Ok(div);
        }
        let inv_h = 1.0 / self.hx();
        for b in 0..n {
            div[b] = (faces[(b + 1) % n] - faces[b]) * inv_h;
        }
        Ok(div)
    }

    /// Cell-to-face difference quotient, zero on coupled and wall faces.
    pub fn gradient_interior(&self, cells: &[f64]) -> Result<Vec<f64>> {
        if cells.len() != self.n_cells() {
            return Err(Error::Dimension(format!(
                "cell field has {} entries, geometry has {} cells",
                cells.len(),
                self.n_cells()
            )));
        }
        Ok((0..self.n_faces())
            .map(|face| match self.face_cells(face) {
                (Some(m), Some(p)) => (cells[p] - cells[m]) * self.face_inv_width(face),
                _ => 0.0,
            })
            .collect())
    }

    // ---- vertices (dual potentials) -------------------------------------

    /// Number of grid vertices carrying interior potentials.
    pub fn n_vertices(&self) -> usize {
        match self.kind {
            GeometryKind::Interval => self.nx + 1,
            GeometryKind::Strip => self.nx * (self.ny + 1),
        }
    }

    /// Vertex `(i, j)` at `x = i·hx`, `y = j·hy`.
    pub fn vertex(&self, i: usize, j: usize) -> usize {
        match self.kind {
            GeometryKind::Interval => i,
            GeometryKind::Strip => j * self.nx + (i % self.nx),
        }
    }

    pub fn vertex_position(&self, v: usize) -> [f64; 2] {
        match self.kind {
            GeometryKind::Interval => [v as f64 * self.hx(), 0.0],
            GeometryKind::Strip => [(v % self.nx) as f64 * self.hx(), (v / self.nx) as f64 * self.hy()],
        }
    }

    /// Number of boundary vertices carrying boundary potentials.
    pub fn n_boundary_vertices(&self) -> usize {
        self.n_boundary()
    }

    pub fn boundary_vertex_position(&self, b: usize) -> [f64; 2] {
        match self.kind {
            GeometryKind::Interval => [if b == 0 { 0.0 } else { self.lx }, 0.0],
            GeometryKind::Strip => [b as f64 * self.hx(), 0.0],
        }
    }
}
