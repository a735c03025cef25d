//! Explicit finite-volume gradient flows of bulk + interface entropies.
//!
//! The flow is `∂ₜω = div(ω∇E'_Ω)`, `∂ₜγ = div_Γ(γ∇E'_Γ) − f` with the
//! exchange `f = γ(E'_Γ − E'_Ω)/κ²` also acting as the normal flux of the
//! interior field. Face densities are upwinded along the flow direction, so
//! the update is conservative and a Gibbs state has exactly zero flux.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Geometry;
use crate::measures::MeasurePair;

/// Below this density the logarithm is not evaluated.
const LOG_FLOOR: f64 = 1e-300;

/// Smallest time step `run` will try.
pub const MIN_STEP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnergyKind {
    /// `∫ ω log ω + V_Ω ω + ∫ γ log γ + V_Γ γ`.
    Boltzmann,
    /// `∫ ω^m_Ω/(m_Ω−1) + V_Ω ω + ∫ γ^m_Γ/(m_Γ−1) + V_Γ γ`.
    Renyi,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergySpec {
    pub kind: EnergyKind,
    /// Potential per interior cell.
    pub v_omega: Vec<f64>,
    /// Potential per boundary cell.
    pub v_gamma: Vec<f64>,
    #[serde(default = "default_exponent")]
    pub m_omega: f64,
    #[serde(default = "default_exponent")]
    pub m_gamma: f64,
}

fn default_exponent() -> f64 {
    2.0
}

impl EnergySpec {
    pub fn boltzmann(geometry: &Geometry, v_omega: Vec<f64>, v_gamma: Vec<f64>) -> Result<Self> {
        let spec = EnergySpec {
            kind: EnergyKind::Boltzmann,
            v_omega,
            v_gamma,
            m_omega: default_exponent(),
            m_gamma: default_exponent(),
        };
        spec.validate(geometry)?;
        Ok(spec)
    }

    /// Boltzmann entropy without potentials; its minimizer is uniform.
    pub fn boltzmann_flat(geometry: &Geometry) -> Self {
        EnergySpec {
            kind: EnergyKind::Boltzmann,
            v_omega: vec![0.0; geometry.n_cells()],
            v_gamma: vec![0.0; geometry.n_boundary()],
            m_omega: default_exponent(),
            m_gamma: default_exponent(),
        }
    }

    pub fn renyi(geometry: &Geometry, m_omega: f64, m_gamma: f64) -> Result<Self> {
        let spec = EnergySpec {
            kind: EnergyKind::Renyi,
            v_omega: vec![0.0; geometry.n_cells()],
            v_gamma: vec![0.0; geometry.n_boundary()],
            m_omega,
            m_gamma,
        };
        spec.validate(geometry)?;
        Ok(spec)
    }

    pub fn validate(&self, geometry: &Geometry) -> Result<()> {
        if self.v_omega.len() != geometry.n_cells() || self.v_gamma.len() != geometry.n_boundary() {
            return Err(Error::Dimension(format!(
                "potentials have {} and {} entries, geometry has {} cells and {} boundary cells",
                self.v_omega.len(),
                self.v_gamma.len(),
                geometry.n_cells(),
                geometry.n_boundary()
            )));
        }
        if self.v_omega.iter().chain(&self.v_gamma).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("potentials must be finite".into()));
        }
        if self.kind == EnergyKind::Renyi && !(self.m_omega > 1.0 && self.m_gamma > 1.0) {
            return Err(Error::InvalidParameter(format!(
                "Renyi exponents must exceed 1, got {} and {}",
                self.m_omega, self.m_gamma
            )));
        }
        if !(self.m_omega.is_finite() && self.m_gamma.is_finite()) {
            return Err(Error::InvalidParameter("exponents must be finite".into()));
        }
        Ok(())
    }

    fn density(&self, m: f64, x: f64) -> f64 {
        match self.kind {
            EnergyKind::Boltzmann => {
                if x > 0.0 {
                    x * x.ln()
                } else {
                    0.0
                }
            }
            EnergyKind::Renyi => x.powf(m) / (m - 1.0),
        }
    }

    /// `E'(x) + V`; `−∞` for Boltzmann below the log floor.
    fn first_variation(&self, m: f64, x: f64, v: f64) -> f64 {
        match self.kind {
            EnergyKind::Boltzmann => {
                if x > LOG_FLOOR {
                    x.ln() + v + 1.0
                } else {
                    f64::NEG_INFINITY
                }
            }
            EnergyKind::Renyi => m / (m - 1.0) * x.powf(m - 1.0) + v,
        }
    }

    /// Largest local diffusivity `x E''(x)`.
    fn diffusivity(&self, m: f64, x: f64) -> f64 {
        match self.kind {
            EnergyKind::Boltzmann => 1.0,
            EnergyKind::Renyi => m * x.max(0.0).powf(m - 1.0),
        }
    }
}

fn check(rho: &MeasurePair, spec: &EnergySpec, kappa: f64) -> Result<()> {
    spec.validate(rho.geometry())?;
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(Error::InvalidParameter(format!("kappa must be positive, got {kappa}")));
    }
    Ok(())
}

/// First variations `(E'_Ω + V_Ω, E'_Γ + V_Γ)` per cell.
pub fn first_variations(rho: &MeasurePair, spec: &EnergySpec) -> Result<(Vec<f64>, Vec<f64>)> {
    spec.validate(rho.geometry())?;
    let a = rho
        .omega()
        .iter()
        .zip(&spec.v_omega)
        .map(|(&w, &v)| spec.first_variation(spec.m_omega, w, v))
        .collect();
    let b = rho
        .gamma()
        .iter()
        .zip(&spec.v_gamma)
        .map(|(&g, &v)| spec.first_variation(spec.m_gamma, g, v))
        .collect();
    Ok((a, b))
}

/// Value of the energy.
pub fn energy(rho: &MeasurePair, spec: &EnergySpec) -> Result<f64> {
    spec.validate(rho.geometry())?;
    let g = rho.geometry();
    let vol = g.cell_volume();
    let len = g.boundary_length();
    let bulk: f64 = rho
        .omega()
        .iter()
        .zip(&spec.v_omega)
        .map(|(&w, &v)| spec.density(spec.m_omega, w) + v * w)
        .sum();
    let edge: f64 = rho
        .gamma()
        .iter()
        .zip(&spec.v_gamma)
        .map(|(&x, &v)| spec.density(spec.m_gamma, x) + v * x)
        .sum();
    Ok(vol * bulk + len * edge)
}

/// The Gibbs state `(e^{−V_Ω}, e^{−V_Γ})/Z` of a Boltzmann energy.
pub fn gibbs(geometry: &Geometry, spec: &EnergySpec) -> Result<MeasurePair> {
    spec.validate(geometry)?;
    if spec.kind != EnergyKind::Boltzmann {
        return Err(Error::InvalidParameter(
            "the Gibbs state is defined for the Boltzmann entropy".into(),
        ));
    }
    let omega: Vec<f64> = spec.v_omega.iter().map(|v| (-v).exp()).collect();
    let gamma: Vec<f64> = spec.v_gamma.iter().map(|v| (-v).exp()).collect();
    let z = geometry.cell_volume() * omega.iter().sum::<f64>() + geometry.boundary_length() * gamma.iter().sum::<f64>();
    MeasurePair::new(
        geometry.clone(),
        omega.into_iter().map(|w| w / z).collect(),
        gamma.into_iter().map(|x| x / z).collect(),
    )
}

/// Momenta of the gradient `grad E(ρ)`. The flow is `∂ₜω = div F`,
/// `∂ₜγ = div_Γ G − f`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradientField {
    /// `ω∇E'_Ω` on every interior face; a coupled face carries `sign·f`.
    pub interior: Vec<f64>,
    /// `γ∇E'_Γ` on the tangential boundary faces (empty on the interval).
    pub boundary: Vec<f64>,
    /// `f = γ(E'_Γ − E'_Ω)/κ²` per boundary cell: mass moved from `γ` into `ω`.
    pub transfer: Vec<f64>,
    /// Upwind density used on each interior face.
    pub interior_upwind: Vec<f64>,
    /// Upwind density used on each boundary face.
    pub boundary_upwind: Vec<f64>,
}

impl GradientField {
    pub fn max_abs(&self) -> f64 {
        self.interior
            .iter()
            .chain(&self.boundary)
            .chain(&self.transfer)
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Face momentum between cells `a` (minus side) and `b` (plus side).
fn face_momentum(
    spec: &EnergySpec,
    (xa, xb): (f64, f64),
    (ea, eb): (f64, f64),
    (va, vb): (f64, f64),
    inv_h: f64,
) -> (f64, f64) {
    if ea.is_finite() && eb.is_finite() {
        // the flow runs from high to low E'
        let up = if ea > eb { xa } else { xb };
        (up * (eb - ea) * inv_h, up)
    } else {
        // Boltzmann with an empty cell: ω∇log ω = ∇ω
        let up = if va > vb { xa } else { xb };
        debug_assert_eq!(spec.kind, EnergyKind::Boltzmann);
        ((xb - xa) * inv_h + up * (vb - va) * inv_h, up)
    }
}

pub fn gradient_field(rho: &MeasurePair, spec: &EnergySpec, kappa: f64) -> Result<GradientField> {
    check(rho, spec, kappa)?;
    let g = rho.geometry();
    let (omega, gamma) = (rho.omega(), rho.gamma());
    let (eo, eg) = first_variations(rho, spec)?;
    let vo = &spec.v_omega;
    let vg = &spec.v_gamma;

    let mut interior = vec![0.0; g.n_faces()];
    let mut interior_upwind = vec![0.0; g.n_faces()];
    for face in 0..g.n_faces() {
        if let (Some(a), Some(b)) = g.face_cells(face) {
            let (m, up) = face_momentum(
                spec,
                (omega[a], omega[b]),
                (eo[a], eo[b]),
                (vo[a], vo[b]),
                g.face_inv_width(face),
            );
            interior[face] = m;
            interior_upwind[face] = up;
        }
    }

    let nb = g.n_boundary();
    let mut transfer = vec![0.0; nb];
    for (b, t) in transfer.iter_mut().enumerate() {
        let c = g.boundary_coupling(b);
        let x = gamma[b];
        *t = if eg[b].is_finite() && eo[c.cell].is_finite() {
            x * (eg[b] - eo[c.cell]) / (kappa * kappa)
        } else {
            0.0
        };
        interior[c.face] = c.sign * *t;
        interior_upwind[c.face] = x;
    }

    let nbf = g.n_boundary_faces();
    let mut boundary = vec![0.0; nbf];
    let mut boundary_upwind = vec![0.0; nbf];
    if nbf > 0 {
        let inv_h = 1.0 / g.hx();
        for f in 0..nbf {
            let (a, b) = ((f + nb - 1) % nb, f);
            let (m, up) = face_momentum(spec, (gamma[a], gamma[b]), (eg[a], eg[b]), (vg[a], vg[b]), inv_h);
            boundary[f] = m;
            boundary_upwind[f] = up;
        }
    }

    Ok(GradientField {
        interior,
        boundary,
        transfer,
        interior_upwind,
        boundary_upwind,
    })
}

/// `½∫|F|²/ω + ½∫|G|²/γ + κ²/2 ∫|f|²/γ` on the emitted momenta, with the
/// upwind densities as weights.
pub fn metric_norm2(rho: &MeasurePair, field: &GradientField, kappa: f64) -> f64 {
    let g = rho.geometry();
    let vol = g.cell_volume();
    let len = g.boundary_length();
    let ratio = |m: f64, w: f64| if w > 0.0 { m * m / w } else { 0.0 };
    let mut bulk = 0.0;
    for face in 0..g.n_faces() {
        if let (Some(_), Some(_)) = g.face_cells(face) {
            bulk += ratio(field.interior[face], field.interior_upwind[face]);
        }
    }
    let tangential: f64 = field
        .boundary
        .iter()
        .zip(&field.boundary_upwind)
        .map(|(&m, &w)| ratio(m, w))
        .sum();
    let exchange: f64 = field.transfer.iter().zip(rho.gamma()).map(|(&f, &x)| ratio(f, x)).sum();
    0.5 * (vol * bulk + len * tangential + kappa * kappa * len * exchange)
}

/// Energy dissipation rate `−dE/dt` of the semi-discrete flow.
///
/// Equals twice [`metric_norm2`] because the metric carries a factor ½.
pub fn dissipation(rho: &MeasurePair, spec: &EnergySpec, kappa: f64) -> Result<f64> {
    let field = gradient_field(rho, spec, kappa)?;
    Ok(2.0 * metric_norm2(rho, &field, kappa))
}

/// Largest accepted explicit step: half the Euler stability limit `2/λ`,
/// with `λ = 4d·D_max/h² + 2|∇V|_max/h + 2r` summing the diffusive, drift
/// and exchange rates. `D_max` is the largest face diffusivity
/// `ω_up ΔE'/Δω` and `r` the largest relative mass loss rate through the
/// exchange on either side.
pub fn cfl_bound(rho: &MeasurePair, spec: &EnergySpec, kappa: f64) -> Result<f64> {
    let field = gradient_field(rho, spec, kappa)?;
    Ok(cfl_from_field(rho, spec, &field))
}

fn face_diffusivity(spec: &EnergySpec, m: f64, (xa, xb): (f64, f64), up: f64) -> f64 {
    let below = |x: f64| x <= LOG_FLOOR;
    if spec.kind == EnergyKind::Boltzmann && (below(xa) || below(xb)) {
        return 1.0;
    }
    let d = xb - xa;
    if d.abs() <= 1e-12 * xa.abs().max(xb.abs()) {
        return spec.diffusivity(m, up);
    }
    let e = |x: f64| spec.first_variation(m, x, 0.0);
    up * (e(xb) - e(xa)) / d
}

fn cfl_from_field(rho: &MeasurePair, spec: &EnergySpec, field: &GradientField) -> f64 {
    let g = rho.geometry();
    let (omega, gamma) = (rho.omega(), rho.gamma());
    let nb = g.n_boundary();
    let h = if g.is_strip() { g.hx().min(g.hy()) } else { g.hx() };
    let d = g.dim() as f64;

    let mut diff: f64 = 0.0;
    let mut drift: f64 = 0.0;
    for face in 0..g.n_faces() {
        if let (Some(a), Some(b)) = g.face_cells(face) {
            let up = field.interior_upwind[face];
            diff = diff.max(face_diffusivity(spec, spec.m_omega, (omega[a], omega[b]), up));
            drift = drift.max((spec.v_omega[b] - spec.v_omega[a]).abs() * g.face_inv_width(face));
        }
    }
    if g.n_boundary_faces() > 0 {
        for b in 0..nb {
            let a = (b + nb - 1) % nb;
            let up = field.boundary_upwind[b];
            diff = diff.max(face_diffusivity(spec, spec.m_gamma, (gamma[a], gamma[b]), up));
            drift = drift.max((spec.v_gamma[b] - spec.v_gamma[a]).abs() / g.hx());
        }
    }

    let (vol, len) = (g.cell_volume(), g.boundary_length());
    let mut rate: f64 = 0.0;
    for (b, &f) in field.transfer.iter().enumerate() {
        let x = gamma[b];
        if f == 0.0 || x == 0.0 {
            continue;
        }
        // relative rate on the γ side is |ΔE'|/κ²
        rate = rate.max((f / x).abs());
        if f < 0.0 {
            let w = omega[g.boundary_coupling(b).cell];
            rate = rate.max(if w > 0.0 { -f * len / (w * vol) } else { f64::INFINITY });
        }
    }
    let lambda = 4.0 * d * diff / (h * h) + 2.0 * drift / h + 2.0 * rate;
    if lambda > 0.0 {
        1.0 / lambda
    } else {
        f64::INFINITY
    }
}

/// Snapshot along a flow.
#[derive(Clone, Debug, Serialize)]
pub struct FlowState {
    pub rho: MeasurePair,
    pub time: f64,
    pub energy: f64,
    /// Total mass at the start of the flow.
    pub initial_mass: f64,
    /// `|mass − initial_mass| / initial_mass`.
    pub mass_drift: f64,
}

fn total_mass(g: &Geometry, omega: &[f64], gamma: &[f64]) -> f64 {
    g.cell_volume() * omega.iter().sum::<f64>() + g.boundary_length() * gamma.iter().sum::<f64>()
}

impl FlowState {
    pub fn new(rho: MeasurePair, spec: &EnergySpec) -> Result<Self> {
        let energy = energy(&rho, spec)?;
        let mass = total_mass(rho.geometry(), rho.omega(), rho.gamma());
        Ok(FlowState {
            rho,
            time: 0.0,
            energy,
            initial_mass: mass,
            mass_drift: 0.0,
        })
    }

    pub fn mass(&self) -> f64 {
        total_mass(self.rho.geometry(), self.rho.omega(), self.rho.gamma())
    }
}

/// One explicit Euler step of length `tau`.
pub fn step(state: &FlowState, spec: &EnergySpec, kappa: f64, tau: f64) -> Result<FlowState> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "time step must be positive, got {tau}"
        )));
    }
    let rho = &state.rho;
    let field = gradient_field(rho, spec, kappa)?;
    let bound = cfl_from_field(rho, spec, &field);
    if tau > bound {
        return Err(Error::StepTooLarge { step: tau, bound });
    }
    let g = rho.geometry();
    let div = g.divergence_interior(&field.interior)?;
    let div_b = g.divergence_boundary(&field.boundary)?;
    let omega: Vec<f64> = rho.omega().iter().zip(&div).map(|(w, d)| w + tau * d).collect();
    let gamma: Vec<f64> = rho
        .gamma()
        .iter()
        .zip(&div_b)
        .zip(&field.transfer)
        .map(|((x, d), f)| x + tau * (d - f))
        .collect();
    let low = omega.iter().chain(&gamma).fold(f64::INFINITY, |m, &v| m.min(v));
    if low < 0.0 || !low.is_finite() {
        return Err(Error::NegativeDensity { value: low });
    }
    let mass = total_mass(g, &omega, &gamma);
    let next = MeasurePair::from_raw(g.clone(), omega, gamma);
    Ok(FlowState {
        energy: energy(&next, spec)?,
        rho: next,
        time: state.time + tau,
        initial_mass: state.initial_mass,
        mass_drift: (mass - state.initial_mass).abs() / state.initial_mass,
    })
}

/// Output of [`run`].
#[derive(Clone, Debug, Serialize)]
pub struct Trajectory {
    /// Recorded states, the first and last always included.
    pub states: Vec<FlowState>,
    /// Time, energy and mass drift after every accepted step.
    pub series: Vec<(f64, f64, f64)>,
    pub steps: usize,
    /// Number of rejected attempts that led to a halved step.
    pub halvings: usize,
}

impl Trajectory {
    pub fn last(&self) -> &FlowState {
        self.states
            .last()
            .expect("a trajectory holds at least its initial state")
    }
}

/// Integrate to `t_end` with steps of at most `tau`, recording every state.
pub fn run(init: &MeasurePair, spec: &EnergySpec, kappa: f64, t_end: f64, tau: f64) -> Result<Trajectory> {
    run_recorded(init, spec, kappa, t_end, tau, 1)
}

/// As [`run`], keeping every `record_every`-th state.
///
/// Each step starts from `tau` (clipped to land on `t_end`) and is halved
/// while the step is rejected.
pub fn run_recorded(
    init: &MeasurePair,
    spec: &EnergySpec,
    kappa: f64,
    t_end: f64,
    tau: f64,
    record_every: usize,
) -> Result<Trajectory> {
    check(init, spec, kappa)?;
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "final time must be nonnegative, got {t_end}"
        )));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "time step must be positive, got {tau}"
        )));
    }
    let every = record_every.max(1);
    let mut state = FlowState::new(init.clone(), spec)?;
    let mut out = Trajectory {
        states: vec![state.clone()],
        series: vec![(0.0, state.energy, 0.0)],
        steps: 0,
        halvings: 0,
    };
    let mut recorded = true;
    while state.time < t_end {
        let remaining = t_end - state.time;
        let mut dt = tau.min(remaining);
        let next = loop {
            match step(&state, spec, kappa, dt) {
                Ok(s) => break s,
                Err(Error::StepTooLarge { .. } | Error::NegativeDensity { .. }) => {
                    dt *= 0.5;
                    out.halvings += 1;
                    if dt < MIN_STEP {
                        return Err(Error::StepUnderflow {
                            step: dt,
                            time: state.time,
                        });
                    }
                }
                Err(e) => return Err(e),
            }
        };
        state = next;
        if dt == remaining {
            state.time = t_end;
        }
        out.steps += 1;
        out.series.push((state.time, state.energy, state.mass_drift));
        recorded = out.steps % every == 0;
        if recorded {
            out.states.push(state.clone());
        }
    }
    if !recorded {
        out.states.push(state);
    }
    Ok(out)
}
