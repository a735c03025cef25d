//! Experiment configuration files.

use std::path::{Path, PathBuf};

use ringroad::gradflow::{EnergyKind, EnergySpec};
use ringroad::measures::{mollified_dirac, MeasurePair, Side};
use ringroad::solver::SolverConfig;
use ringroad::{Error, Geometry, GeometryKind, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub kind: GeometryKind,
    pub nx: usize,
    #[serde(default)]
    pub ny: Option<usize>,
    #[serde(default = "unit")]
    pub lx: f64,
    #[serde(default)]
    pub ly: Option<f64>,
}

fn unit() -> f64 {
    1.0
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig {
            kind: GeometryKind::Interval,
            nx: 64,
            ny: None,
            lx: 1.0,
            ly: None,
        }
    }
}

impl GeometryConfig {
    pub fn build(&self) -> Result<Geometry> {
        match self.kind {
            GeometryKind::Interval => {
                if self.ny.is_some() || self.ly.is_some() {
                    return Err(Error::InvalidGeometry("ny and ly apply to the strip only".into()));
                }
                Geometry::interval(self.nx, self.lx)
            }
            GeometryKind::Strip => {
                let ny = self.ny.ok_or_else(|| Error::InvalidGeometry("strip needs ny".into()))?;
                let ly = self.ly.ok_or_else(|| Error::InvalidGeometry("strip needs ly".into()))?;
                Geometry::strip(self.nx, ny, self.lx, ly)
            }
        }
    }
}

/// One smoothed point mass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Part {
    pub side: Side,
    pub center: [f64; 2],
    pub mass: f64,
    /// Gaussian width; the larger of 0.08 and four cells when omitted.
    #[serde(default)]
    pub width: Option<f64>,
}

/// How to obtain a measure pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum EndpointSpec {
    /// A measure file written by this tool.
    File { path: PathBuf },
    /// Uniform densities with the given boundary share of the mass.
    Uniform { boundary_mass: f64 },
    /// Sum of smoothed point masses.
    Bumps { parts: Vec<Part> },
    /// The Gibbs state of the gradient-flow energy.
    Gibbs,
}

impl EndpointSpec {
    pub fn build(&self, geometry: &Geometry, energy: Option<&EnergySpec>, base: &Path) -> Result<MeasurePair> {
        match self {
            EndpointSpec::File { path } => {
                let path = if path.is_absolute() {
                    path.clone()
                } else {
                    base.join(path)
                };
                let pair = MeasurePair::load(&path)?.pair;
                if pair.geometry() != geometry {
                    return Err(Error::InvalidMeasure(format!(
                        "{} is defined on a different geometry than the experiment",
                        path.display()
                    )));
                }
                Ok(pair)
            }
            EndpointSpec::Uniform { boundary_mass } => {
                let m = *boundary_mass;
                if !(0.0..=1.0).contains(&m) {
                    return Err(Error::InvalidParameter(format!("boundary mass {m} not in [0, 1]")));
                }
                MeasurePair::from_shapes(
                    geometry.clone(),
                    vec![1.0; geometry.n_cells()],
                    1.0 - m,
                    vec![1.0; geometry.n_boundary()],
                    m,
                )
            }
            EndpointSpec::Bumps { parts } => {
                if parts.is_empty() {
                    return Err(Error::InvalidMeasure("bumps need at least one part".into()));
                }
                let mut omega = vec![0.0; geometry.n_cells()];
                let mut gamma = vec![0.0; geometry.n_boundary()];
                for p in parts {
                    let cell = if geometry.is_strip() {
                        geometry.hx().max(geometry.hy())
                    } else {
                        geometry.hx()
                    };
                    let width = p.width.unwrap_or(0.08f64.max(4.0 * cell));
                    let d = mollified_dirac(geometry, p.center, p.mass, width, p.side)?;
                    let target = if p.side == Side::Interior {
                        &mut omega
                    } else {
                        &mut gamma
                    };
                    for (t, v) in target.iter_mut().zip(d) {
                        *t += v;
                    }
                }
                MeasurePair::new(geometry.clone(), omega, gamma)
            }
            EndpointSpec::Gibbs => {
                let spec =
                    energy.ok_or_else(|| Error::InvalidParameter("a gibbs endpoint needs a gradflow energy".into()))?;
                ringroad::gradflow::gibbs(geometry, spec)
            }
        }
    }
}

/// A potential field given by values or by an affine function of position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PotentialSpec {
    Values(Vec<f64>),
    Affine { offset: f64, slope: [f64; 2] },
}

impl Default for PotentialSpec {
    fn default() -> Self {
        PotentialSpec::Affine {
            offset: 0.0,
            slope: [0.0, 0.0],
        }
    }
}

impl PotentialSpec {
    fn sample(&self, points: impl Iterator<Item = [f64; 2]>) -> Vec<f64> {
        match self {
            PotentialSpec::Values(v) => v.clone(),
            PotentialSpec::Affine { offset, slope } => {
                points.map(|p| offset + slope[0] * p[0] + slope[1] * p[1]).collect()
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyConfig {
    pub kind: EnergyKind,
    #[serde(default)]
    pub v_omega: PotentialSpec,
    #[serde(default)]
    pub v_gamma: PotentialSpec,
    #[serde(default = "two")]
    pub m_omega: f64,
    #[serde(default = "two")]
    pub m_gamma: f64,
}

fn two() -> f64 {
    2.0
}

impl EnergyConfig {
    pub fn build(&self, g: &Geometry) -> Result<EnergySpec> {
        let spec = EnergySpec {
            kind: self.kind,
            v_omega: self.v_omega.sample((0..g.n_cells()).map(|c| g.cell_center(c))),
            v_gamma: self.v_gamma.sample((0..g.n_boundary()).map(|b| g.boundary_center(b))),
            m_omega: self.m_omega,
            m_gamma: self.m_gamma,
        };
        spec.validate(g)?;
        Ok(spec)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub energy: EnergyConfig,
    pub initial: EndpointSpec,
    pub t_end: f64,
    /// Largest step; the CFL bound of the initial state when omitted.
    #[serde(default)]
    pub tau: Option<f64>,
    /// Write every n-th state as a frame.
    #[serde(default = "hundred")]
    pub record_every: usize,
}

fn hundred() -> usize {
    100
}

/// Everything a command needs, read from one JSON file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub geometry: GeometryConfig,
    pub start: EndpointSpec,
    pub end: EndpointSpec,
    pub solver: SolverConfig,
    /// Toll values; the first one is used by single-solve commands.
    pub kappas: Vec<f64>,
    /// Times of the geodesic frames.
    pub frames: Vec<f64>,
    pub out: PathBuf,
    pub gradflow: Option<FlowConfig>,
    /// Directory against which relative paths are resolved.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn bump(center: f64) -> EndpointSpec {
    EndpointSpec::Bumps {
        parts: vec![Part {
            side: Side::Interior,
            center: [center, 0.0],
            mass: 1.0,
            width: None,
        }],
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            geometry: GeometryConfig::default(),
            start: bump(0.3),
            end: bump(0.65),
            solver: SolverConfig::default(),
            kappas: vec![1.0],
            frames: (0..=8).map(|k| k as f64 / 8.0).collect(),
            out: PathBuf::from("ringroad-out"),
            gradflow: None,
            base_dir: PathBuf::from("."),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidParameter(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: ExperimentConfig = serde_json::from_str(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        if cfg.out.is_relative() {
            cfg.out = cfg.base_dir.join(&cfg.out);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.build()?;
        self.solver.validate()?;
        if self.kappas.is_empty() {
            return Err(Error::InvalidParameter("kappas must not be empty".into()));
        }
        for &k in &self.kappas {
            ringroad::action::check_kappa(k)?;
        }
        if self.frames.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::InvalidParameter("frame times must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn endpoints(&self) -> Result<(MeasurePair, MeasurePair)> {
        let g = self.geometry.build()?;
        let energy = self.energy(&g)?;
        let a = self.start.build(&g, energy.as_ref(), &self.base_dir)?;
        let b = self.end.build(&g, energy.as_ref(), &self.base_dir)?;
        Ok((a, b))
    }

    pub fn energy(&self, g: &Geometry) -> Result<Option<EnergySpec>> {
        self.gradflow.as_ref().map(|f| f.energy.build(g)).transpose()
    }

    /// Solver settings for the first toll value.
    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            kappa: self.kappas[0],
            ..self.solver.clone()
        }
    }
}
