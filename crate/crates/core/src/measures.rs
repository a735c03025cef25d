//! Pairs `ρ = (ω, γ)` of interior and boundary densities with unit total mass.
//!
//! Densities are stored per cell, relative to the cell volume (interior) or
//! the boundary cell length (boundary). All integrals are volume weighted.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Geometry, GeometryKind};

/// Largest mass defect accepted (and silently renormalized) on input.
pub const MASS_TOLERANCE: f64 = 1e-9;

/// Interior/boundary split of the unit mass.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MassBudget {
    pub interior: f64,
    pub boundary: f64,
}

impl MassBudget {
    pub fn total(&self) -> f64 {
        self.interior + self.boundary
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Interior,
    Boundary,
}

/// An element of the space of interior/boundary probability pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPair")]
pub struct MeasurePair {
    geometry: Geometry,
    omega: Vec<f64>,
    gamma: Vec<f64>,
}

#[derive(Deserialize)]
struct RawPair {
    geometry: Geometry,
    omega: Vec<f64>,
    gamma: Vec<f64>,
}

impl TryFrom<RawPair> for MeasurePair {
    type Error = Error;

    fn try_from(raw: RawPair) -> Result<Self> {
        MeasurePair::new(raw.geometry, raw.omega, raw.gamma)
    }
}

/// Volume-weighted integral of an interior density.
pub fn interior_mass(geometry: &Geometry, omega: &[f64]) -> f64 {
    omega.iter().sum::<f64>() * geometry.cell_volume()
}

/// Length-weighted integral of a boundary density.
pub fn boundary_mass(geometry: &Geometry, gamma: &[f64]) -> f64 {
    gamma.iter().sum::<f64>() * geometry.boundary_length()
}

fn check_entries(name: &str, values: &[f64]) -> Result<()> {
    for (i, &v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::InvalidMeasure(format!("{name}[{i}] is not finite")));
        }
        if v < 0.0 {
            return Err(Error::InvalidMeasure(format!("{name}[{i}] = {v} is negative")));
        }
    }
    Ok(())
}

impl MeasurePair {
    /// Validate and wrap a density pair.
    ///
    /// Entries must be finite and nonnegative. A total mass within
    /// [`MASS_TOLERANCE`] of one is rescaled to one; anything further off is
    /// rejected.
    pub fn new(geometry: Geometry, omega: Vec<f64>, gamma: Vec<f64>) -> Result<Self> {
        Self::new_reporting(geometry, omega, gamma).map(|(pair, _)| pair)
    }

    /// Like [`MeasurePair::new`], also returning the original total mass when
    /// it had to be renormalized.
    pub fn new_reporting(geometry: Geometry, mut omega: Vec<f64>, mut gamma: Vec<f64>) -> Result<(Self, Option<f64>)> {
        if omega.len() != geometry.n_cells() {
            return Err(Error::Dimension(format!(
                "omega has {} entries, geometry has {} cells",
                omega.len(),
                geometry.n_cells()
            )));
        }
        if gamma.len() != geometry.n_boundary() {
            return Err(Error::Dimension(format!(
                "gamma has {} entries, geometry has {} boundary cells",
                gamma.len(),
                geometry.n_boundary()
            )));
        }
        check_entries("omega", &omega)?;
        check_entries("gamma", &gamma)?;
        let total = interior_mass(&geometry, &omega) + boundary_mass(&geometry, &gamma);
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::InvalidMeasure(format!(
                "total mass {total} differs from 1 by more than {MASS_TOLERANCE:e}"
            )));
        }
        let mut renormalized = None;
        // rounding-level defects are left alone so that save/load is exact
        if (total - 1.0).abs() > 1e-12 {
            let s = 1.0 / total;
            omega.iter_mut().for_each(|v| *v *= s);
            gamma.iter_mut().for_each(|v| *v *= s);
            renormalized = Some(total);
        }
        Ok((MeasurePair { geometry, omega, gamma }, renormalized))
    }

    /// Build a pair from unnormalized shapes, rescaling each part to the
    /// requested mass. `interior_mass + boundary_mass` must be one.
    pub fn from_shapes(
        geometry: Geometry,
        omega_shape: Vec<f64>,
        interior: f64,
        gamma_shape: Vec<f64>,
        boundary: f64,
    ) -> Result<Self> {
        let rescale = |shape: Vec<f64>, have: f64, want: f64, name: &str| -> Result<Vec<f64>> {
            if want == 0.0 {
                return Ok(vec![0.0; shape.len()]);
            }
            if !(have > 0.0) {
                return Err(Error::InvalidMeasure(format!(
                    "{name} shape has no mass but {want} was requested"
                )));
            }
            Ok(shape.into_iter().map(|v| v * want / have).collect())
        };
        check_entries("omega", &omega_shape)?;
        check_entries("gamma", &gamma_shape)?;
        let wm = interior_mass(&geometry, &omega_shape);
        let gm = boundary_mass(&geometry, &gamma_shape);
        let omega = rescale(omega_shape, wm, interior, "interior")?;
        let gamma = rescale(gamma_shape, gm, boundary, "boundary")?;
        MeasurePair::new(geometry, omega, gamma)
    }

    /// Wrap densities that are already known to be valid.
    pub(crate) fn from_raw(geometry: Geometry, omega: Vec<f64>, gamma: Vec<f64>) -> Self {
        MeasurePair { geometry, omega, gamma }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn total_mass(&self) -> MassBudget {
        MassBudget {
            interior: interior_mass(&self.geometry, &self.omega),
            boundary: boundary_mass(&self.geometry, &self.gamma),
        }
    }

    /// Largest density value over both parts.
    pub fn max_density(&self) -> f64 {
        self.omega.iter().chain(&self.gamma).fold(0.0_f64, |m, &v| m.max(v))
    }

    /// Convex combination `(1-t)·self + t·other` on the same geometry.
    pub fn lerp(&self, other: &MeasurePair, t: f64) -> Result<MeasurePair> {
        if self.geometry != other.geometry {
            return Err(Error::Dimension("measures live on different geometries".into()));
        }
        let mix = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| (1.0 - t) * x + t * y).collect() };
        MeasurePair::new(
            self.geometry.clone(),
            mix(&self.omega, &other.omega),
            mix(&self.gamma, &other.gamma),
        )
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        serde_json::to_writer(&mut w, self)?;
        w.flush()?;
        Ok(())
    }

    /// Read a pair from JSON. Renormalization of a mass defect below
    /// [`MASS_TOLERANCE`] is reported in [`LoadedMeasure::renormalized_from`].
    pub fn load(path: impl AsRef<Path>) -> Result<LoadedMeasure> {
        let text = std::fs::read_to_string(path.as_ref())?;
        let raw: RawPair = serde_json::from_str(&text)?;
        let (pair, renormalized_from) = MeasurePair::new_reporting(raw.geometry, raw.omega, raw.gamma)?;
        if let Some(m) = renormalized_from {
            log::warn!("{}: total mass {m} renormalized to 1", path.as_ref().display());
        }
        Ok(LoadedMeasure {
            pair,
            renormalized_from,
        })
    }

    /// One CSV row per interior and boundary cell, with coordinates.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "side,index,x,y,density")?;
        for (c, v) in self.omega.iter().enumerate() {
            let [x, y] = self.geometry.cell_center(c);
            writeln!(w, "interior,{c},{x},{y},{v}")?;
        }
        for (b, v) in self.gamma.iter().enumerate() {
            let [x, y] = self.geometry.boundary_center(b);
            writeln!(w, "boundary,{b},{x},{y},{v}")?;
        }
        Ok(())
    }
}

/// Result of [`MeasurePair::load`].
#[derive(Clone, Debug)]
pub struct LoadedMeasure {
    pub pair: MeasurePair,
    /// Original total mass when it was rescaled on load.
    pub renormalized_from: Option<f64>,
}

fn periodic_delta(d: f64, period: f64) -> f64 {
    d - period * (d / period).round()
}

/// Unnormalized Gaussian profile sampled at cell centers (interior) or
/// boundary cell centers, truncated at three widths.
pub fn gaussian_shape(geometry: &Geometry, center: [f64; 2], width: f64, side: Side) -> Vec<f64> {
    let cutoff = 3.0 * width;
    let eval = |p: [f64; 2]| -> f64 {
        let (dx, dy) = match geometry.kind() {
            GeometryKind::Interval => (p[0] - center[0], 0.0),
            GeometryKind::Strip => (periodic_delta(p[0] - center[0], geometry.lx()), p[1] - center[1]),
        };
        let r2 = dx * dx + dy * dy;
        if r2 > cutoff * cutoff {
            0.0
        } else {
            (-0.5 * r2 / (width * width)).exp()
        }
    };
    match side {
        Side::Interior => (0..geometry.n_cells()).map(|c| eval(geometry.cell_center(c))).collect(),
        Side::Boundary => (0..geometry.n_boundary())
            .map(|b| eval(geometry.boundary_center(b)))
            .collect(),
    }
}

/// Density of a smoothed point mass.
///
/// Interior: a truncated Gaussian of standard deviation `width` centred at
/// `location`, renormalized on the grid to carry exactly `mass`. On the
/// interval with `side = Boundary` the result is an atom at the end point
/// `location[0] ∈ {0, Lx}`; on the strip it is a Gaussian along the edge.
pub fn mollified_dirac(geometry: &Geometry, location: [f64; 2], mass: f64, width: f64, side: Side) -> Result<Vec<f64>> {
    if !(mass > 0.0 && mass <= 1.0) {
        return Err(Error::InvalidParameter(format!("mass {mass} not in (0, 1]")));
    }
    let (x, y) = (location[0], location[1]);
    let inside_x = match geometry.kind() {
        GeometryKind::Interval => (0.0..=geometry.lx()).contains(&x),
        GeometryKind::Strip => x.is_finite(),
    };
    if !inside_x {
        return Err(Error::InvalidParameter(format!(
            "location {x} outside [0, {}]",
            geometry.lx()
        )));
    }
    if geometry.kind() == GeometryKind::Interval && side == Side::Boundary {
        let tol = 1e-12 * geometry.lx();
        let b = if x.abs() <= tol {
            0
        } else if (x - geometry.lx()).abs() <= tol {
            1
        } else {
            return Err(Error::InvalidParameter(format!(
                "boundary atoms sit at 0 or {}, got {x}",
                geometry.lx()
            )));
        };
        let mut gamma = vec![0.0; 2];
        gamma[b] = mass / geometry.boundary_length();
        return Ok(gamma);
    }
    let min_width = match (geometry.kind(), side) {
        (GeometryKind::Interval, _) | (GeometryKind::Strip, Side::Boundary) => 2.0 * geometry.hx(),
        (GeometryKind::Strip, Side::Interior) => 2.0 * geometry.hx().max(geometry.hy()),
    };
    if !(width >= min_width * (1.0 - 1e-12)) {
        return Err(Error::InvalidParameter(format!(
            "width {width} below two cell widths ({min_width})"
        )));
    }
    if geometry.is_strip() {
        let ok = match side {
            Side::Interior => (0.0..=geometry.ly()).contains(&y),
            Side::Boundary => y == 0.0,
        };
        if !ok {
            return Err(Error::InvalidParameter(format!("location y = {y} outside the domain")));
        }
    }
    let shape = gaussian_shape(geometry, location, width, side);
    let have = match side {
        Side::Interior => interior_mass(geometry, &shape),
        Side::Boundary => boundary_mass(geometry, &shape),
    };
    if !(have > 0.0) {
        return Err(Error::InvalidParameter("bump does not intersect the grid".into()));
    }
    Ok(shape.into_iter().map(|v| v * mass / have).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn interval() -> Geometry {
        Geometry::interval(8, 1.0).unwrap()
    }

    #[test]
    fn total_mass_splits() {
        let g = interval();
        let uniform = MeasurePair::new(g.clone(), vec![1.0; 8], vec![0.0; 2]).unwrap();
        let m = uniform.total_mass();
        assert!((m.interior - 1.0).abs() < 1e-15 && m.boundary == 0.0);

        let atom = MeasurePair::new(g.clone(), vec![0.0; 8], vec![1.0, 0.0]).unwrap();
        assert_eq!(
            atom.total_mass(),
            MassBudget {
                interior: 0.0,
                boundary: 1.0
            }
        );

        let half = MeasurePair::new(g, vec![0.5; 8], vec![0.25, 0.25]).unwrap();
        let m = half.total_mass();
        assert!((m.interior - 0.5).abs() < 1e-15 && (m.boundary - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_entries() {
        let g = interval();
        let mut omega = vec![1.0; 8];
        omega[3] = -0.1;
        assert!(MeasurePair::new(g.clone(), omega, vec![0.05, 0.05]).is_err());
        assert!(MeasurePair::new(g.clone(), vec![1.0; 7], vec![0.0; 2]).is_err());
        assert!(MeasurePair::new(g.clone(), vec![2.0; 8], vec![0.0; 2]).is_err());
        assert!(MeasurePair::new(g, vec![f64::NAN; 8], vec![0.0; 2]).is_err());
    }

    #[test]
    fn small_mass_defect_is_renormalized() {
        let g = interval();
        let (pair, from) = MeasurePair::new_reporting(g, vec![0.999999999; 8], vec![0.0; 2]).unwrap();
        assert!(from.is_some());
        assert!((pair.total_mass().total() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn mollified_dirac_mass_is_exact() {
        let g = Geometry::interval(64, 1.0).unwrap();
        let rho = mollified_dirac(&g, [0.5, 0.0], 1.0, 0.05, Side::Interior).unwrap();
        assert!((interior_mass(&g, &rho) - 1.0).abs() < 1e-14);
        let gamma = mollified_dirac(&g, [1.0, 0.0], 0.3, 0.05, Side::Boundary).unwrap();
        assert_eq!(gamma, vec![0.0, 0.3]);
    }

    #[test]
    fn mollified_dirac_first_moment() {
        let g = Geometry::interval(64, 1.0).unwrap();
        for &x0 in &[0.31, 0.5, 0.6473] {
            let rho = mollified_dirac(&g, [x0, 0.0], 0.7, 0.05, Side::Interior).unwrap();
            let mass = interior_mass(&g, &rho);
            let mean: f64 = rho
                .iter()
                .enumerate()
                .map(|(c, v)| v * g.cell_center(c)[0] * g.cell_volume())
                .sum::<f64>()
                / mass;
            assert!((mean - x0).abs() < 0.5 * g.hx(), "{mean} vs {x0}");
        }
    }

    #[test]
    fn mollified_dirac_errors() {
        let g = Geometry::interval(64, 1.0).unwrap();
        assert!(mollified_dirac(&g, [1.5, 0.0], 1.0, 0.05, Side::Interior).is_err());
        assert!(mollified_dirac(&g, [0.5, 0.0], 1.0, 0.01, Side::Interior).is_err());
        assert!(mollified_dirac(&g, [0.5, 0.0], 1.0, 0.05, Side::Boundary).is_err());
        assert!(mollified_dirac(&g, [0.5, 0.0], 0.0, 0.05, Side::Interior).is_err());
    }

    #[test]
    fn strip_boundary_bump_wraps() {
        let g = Geometry::strip(16, 4, 1.0, 1.0).unwrap();
        let gamma = mollified_dirac(&g, [0.0, 0.0], 0.4, 0.15, Side::Boundary).unwrap();
        assert!((boundary_mass(&g, &gamma) - 0.4).abs() < 1e-14);
        // symmetric around x = 0 through the periodic seam
        assert!((gamma[0] - gamma[15]).abs() < 1e-12);
        assert!((gamma[1] - gamma[14]).abs() < 1e-12);
    }

    #[test]
    fn save_load_roundtrip_is_bitwise() {
        let g = Geometry::strip(5, 3, 1.3, 0.7).unwrap();
        let omega: Vec<f64> = (0..15).map(|i| 0.1 + (i as f64 * 0.37).sin().abs()).collect();
        let gamma: Vec<f64> = (0..5).map(|i| 0.2 + (i as f64).cos().abs()).collect();
        let pair = MeasurePair::from_shapes(g, omega, 0.6, gamma, 0.4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        pair.save(&path).unwrap();
        let loaded = MeasurePair::load(&path).unwrap();
        assert!(loaded.renormalized_from.is_none());
        assert_eq!(loaded.pair, pair);
        for (a, b) in loaded.pair.omega().iter().zip(pair.omega()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn load_rejects_negative_entry() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(
            &path,
            r#"{"geometry":{"kind":"interval","nx":2,"lx":1.0},"omega":[2.5,-0.5],"gamma":[0.0,0.0]}"#,
        )
        .unwrap();
        assert!(MeasurePair::load(&path).is_err());
    }

    #[test]
    fn load_renormalizes_within_tolerance() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("near.json");
        std::fs::write(
            &path,
            r#"{"geometry":{"kind":"interval","nx":2,"lx":1.0},"omega":[0.999999999,0.999999999],"gamma":[0.0,0.0]}"#,
        )
        .unwrap();
        let loaded = MeasurePair::load(&path).unwrap();
        assert!(loaded.renormalized_from.is_some());
        assert!((loaded.pair.total_mass().total() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn csv_has_one_row_per_cell() {
        let g = interval();
        let pair = MeasurePair::new(g, vec![1.0; 8], vec![0.0; 2]).unwrap();
        let mut out = Vec::new();
        pair.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 1 + 8 + 2);
    }
}
