//! Browser bindings: closed-form Dirac frames, a steppable gradient flow and
//! a small geodesic solve. Results cross the boundary as JSON strings.

use ringroad::gradflow::{self, EnergySpec, FlowState};
use ringroad::measures::{mollified_dirac, MeasurePair, Side};
use ringroad::oracles;
use ringroad::solver::{self, SolverConfig};
use ringroad::Geometry;
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Largest grid the demo will solve on.
pub const MAX_CELLS: usize = 64;

fn js(e: impl ToString) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn check_cells(nx: usize) -> Result<(), String> {
    if nx < 4 || nx > MAX_CELLS {
        return Err(format!("nx must lie in [4, {MAX_CELLS}]"));
    }
    Ok(())
}

#[derive(Serialize)]
struct DiracView {
    cost: f64,
    frame: oracles::DiracFrame,
}

/// Closed-form frame of the point-mass geodesic as JSON.
pub fn dirac_frame_json(r: f64, kappa: f64, t: f64, bins: usize) -> Result<String, String> {
    let cost = oracles::dirac_cost(r, kappa).map_err(|e| e.to_string())?;
    let frame = oracles::dirac_frame(r, kappa, t, bins).map_err(|e| e.to_string())?;
    serde_json::to_string(&DiracView { cost, frame }).map_err(|e| e.to_string())
}

#[wasm_bindgen(js_name = diracFrame)]
pub fn dirac_frame(r: f64, kappa: f64, t: f64, bins: usize) -> Result<String, JsValue> {
    dirac_frame_json(r, kappa, t, bins).map_err(js)
}

#[derive(Serialize)]
struct FlowView<'a> {
    time: f64,
    energy: f64,
    mass_drift: f64,
    omega: &'a [f64],
    gamma: &'a [f64],
}

/// Entropy flow on the interval started from a bump over a small floor, with
/// `boundary_mass` split evenly between the end points.
#[wasm_bindgen]
pub struct Flow {
    spec: EnergySpec,
    kappa: f64,
    state: FlowState,
}

impl Flow {
    pub fn create(nx: usize, kappa: f64, tilt: f64, renyi: bool, boundary_mass: f64) -> Result<Flow, String> {
        check_cells(nx)?;
        let g = Geometry::interval(nx, 1.0).map_err(|e| e.to_string())?;
        let spec = if renyi {
            EnergySpec::renyi(&g, 2.0, 2.0)
        } else {
            let v = (0..nx).map(|c| tilt * g.cell_center(c)[0]).collect();
            EnergySpec::boltzmann(&g, v, vec![0.0, tilt])
        }
        .map_err(|e| e.to_string())?;
        if !(0.0..1.0).contains(&boundary_mass) {
            return Err("boundary mass must lie in [0, 1)".into());
        }
        let omega = mollified_dirac(&g, [0.3, 0.0], 1.0, 0.08f64.max(2.0 / nx as f64), Side::Interior)
            .map_err(|e| e.to_string())?
            .iter()
            .map(|w| w + 0.05)
            .collect();
        let m = boundary_mass.max(1e-3);
        let rho = MeasurePair::from_shapes(g, omega, 1.0 - m, vec![1.0, 1.0], m).map_err(|e| e.to_string())?;
        let state = FlowState::new(rho, &spec).map_err(|e| e.to_string())?;
        Ok(Flow { spec, kappa, state })
    }

    /// Advance by `duration`, in CFL-limited steps.
    pub fn advance_by(&mut self, duration: f64) -> Result<(), String> {
        let tau = gradflow::cfl_bound(&self.state.rho, &self.spec, self.kappa).map_err(|e| e.to_string())?;
        let traj = gradflow::run_recorded(&self.state.rho, &self.spec, self.kappa, duration, tau, usize::MAX)
            .map_err(|e| e.to_string())?;
        let t0 = self.state.time;
        let drift0 = self.state.mass_drift;
        self.state = traj.last().clone();
        self.state.time += t0;
        self.state.mass_drift = self.state.mass_drift.max(drift0);
        Ok(())
    }

    pub fn view_json(&self) -> String {
        serde_json::to_string(&FlowView {
            time: self.state.time,
            energy: self.state.energy,
            mass_drift: self.state.mass_drift,
            omega: self.state.rho.omega(),
            gamma: self.state.rho.gamma(),
        })
        .expect("plain numbers serialize")
    }
}

#[wasm_bindgen]
impl Flow {
    #[wasm_bindgen(constructor)]
    pub fn new(nx: usize, kappa: f64, tilt: f64, renyi: bool, boundary_mass: f64) -> Result<Flow, JsValue> {
        Flow::create(nx, kappa, tilt, renyi, boundary_mass).map_err(js)
    }

    pub fn advance(&mut self, duration: f64) -> Result<String, JsValue> {
        self.advance_by(duration).map_err(js)?;
        Ok(self.view_json())
    }

    pub fn view(&self) -> String {
        self.view_json()
    }
}

#[derive(Serialize)]
struct GeodesicView {
    primal: f64,
    dual: f64,
    converged: bool,
    iterations: usize,
    times: Vec<f64>,
    omega: Vec<Vec<f64>>,
    gamma: Vec<Vec<f64>>,
}

/// Geodesic from a bump at `from` to a bump at `to` with `boundary_mass`
/// moved onto the right end point.
pub fn geodesic_json(nx: usize, from: f64, to: f64, boundary_mass: f64, kappa: f64) -> Result<String, String> {
    check_cells(nx)?;
    if !(0.0..1.0).contains(&boundary_mass) {
        return Err("boundary mass must lie in [0, 1)".into());
    }
    let err = |e: ringroad::Error| e.to_string();
    let g = Geometry::interval(nx, 1.0).map_err(err)?;
    let width = 0.08f64.max(2.0 / nx as f64);
    let a = MeasurePair::new(
        g.clone(),
        mollified_dirac(&g, [from, 0.0], 1.0, width, Side::Interior).map_err(err)?,
        vec![0.0; 2],
    )
    .map_err(err)?;
    let omega1 = mollified_dirac(&g, [to, 0.0], 1.0 - boundary_mass, width, Side::Interior).map_err(err)?;
    let b = MeasurePair::new(g, omega1, vec![0.0, boundary_mass]).map_err(err)?;
    let cfg = SolverConfig {
        nt: nx,
        kappa,
        max_outer: 5000,
        stop_tol: 1e-5,
        ..Default::default()
    };
    let r = solver::solve_geodesic(&a, &b, &cfg).map_err(err)?;
    let times: Vec<f64> = (0..=8).map(|k| k as f64 / 8.0).collect();
    let frames = solver::geodesic_frames(&r, &times).map_err(err)?;
    serde_json::to_string(&GeodesicView {
        primal: r.primal_value,
        dual: r.dual_value,
        converged: r.converged,
        iterations: r.iterations,
        times,
        omega: frames.iter().map(|f| f.measure.omega().to_vec()).collect(),
        gamma: frames.iter().map(|f| f.measure.gamma().to_vec()).collect(),
    })
    .map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn geodesic(nx: usize, from: f64, to: f64, boundary_mass: f64, kappa: f64) -> Result<String, JsValue> {
    geodesic_json(nx, from, to, boundary_mass, kappa).map_err(js)
}
