mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ringroad::certify::{self, PotentialPair};
use ringroad::constraint::SpaceTimePath;
use ringroad::gradflow;
use ringroad::oracles;
use ringroad::solver::{self, GeodesicResult, IterationRecord};
use ringroad::{Error, MeasurePair, Result};
use serde::{Deserialize, Serialize};

use config::ExperimentConfig;
use output::Artifacts;

#[derive(Parser)]
#[command(name = "ringroad", version, about = "Optimal transport with a boundary toll")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Experiment file (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Toll value(s), comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    kappa: Vec<f64>,
    /// Number of time steps.
    #[arg(long)]
    nt: Option<usize>,
    /// Number of cells along x.
    #[arg(long)]
    nx: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Solver stopping tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Iteration cap of the solver.
    #[arg(long = "max-iter")]
    max_iter: Option<usize>,
    /// Worker processes for independent sweep points.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Squared distance with a certified lower bound.
    Distance(Common),
    /// Geodesic frames, path and potentials.
    Geodesic(Common),
    /// One solve per toll value, warm-started in ascending order.
    Sweep(Common),
    /// Closed-form reference values.
    Oracle {
        #[command(subcommand)]
        which: Oracle,
    },
    /// Hamilton-Jacobi residuals of a stored geodesic.
    Certify {
        /// Output directory of a `geodesic` run.
        #[arg(long)]
        input: PathBuf,
        /// Support threshold relative to the largest density.
        #[arg(long, default_value_t = 1e-6)]
        threshold: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Explicit gradient flow of an entropy.
    Gradflow(Common),
}

#[derive(Subcommand)]
enum Oracle {
    /// Cost of the interior-to-boundary point mass geodesic.
    Dirac {
        #[arg(long = "R", alias = "r")]
        r: f64,
        #[arg(long, default_value_t = 1.0)]
        kappa: f64,
    },
    /// Cost of growing an atom from mass m0 to m1 in place.
    FisherRao {
        #[arg(long)]
        m0: f64,
        #[arg(long)]
        m1: f64,
        #[arg(long, default_value_t = 1.0)]
        kappa: f64,
    },
    /// Quadratic transport bounds between the configured endpoints.
    Wasserstein(Common),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(Status::Done) => ExitCode::SUCCESS,
        Ok(Status::NotConverged) => ExitCode::from(1),
        Err(e) => {
            let kind = if e.is_input_error() { "input" } else { "numerical" };
            let report = serde_json::json!({ "error": { "kind": kind, "message": e.to_string() } });
            eprintln!("{report}");
            ExitCode::from(if e.is_input_error() { 2 } else { 3 })
        }
    }
}

enum Status {
    Done,
    NotConverged,
}

fn status(converged: bool) -> Status {
    if converged {
        Status::Done
    } else {
        Status::NotConverged
    }
}

fn run(command: Command) -> Result<Status> {
    match command {
        Command::Distance(c) => distance(&resolve(&c)?),
        Command::Geodesic(c) => geodesic(&resolve(&c)?),
        Command::Sweep(c) => sweep(&resolve(&c)?, &c),
        Command::Oracle { which } => oracle(which),
        Command::Certify { input, threshold, out } => certify_run(&input, threshold, out),
        Command::Gradflow(c) => flow(&resolve(&c)?),
    }
}

/// Merge flags over the config file over the defaults, then validate.
fn resolve(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if !c.kappa.is_empty() {
        cfg.kappas = c.kappa.clone();
    }
    if let Some(nt) = c.nt {
        cfg.solver.nt = nt;
    }
    if let Some(nx) = c.nx {
        cfg.geometry.nx = nx;
    }
    if let Some(out) = &c.out {
        cfg.out = out.clone();
    }
    if let Some(tol) = c.tol {
        cfg.solver.stop_tol = tol;
    }
    if let Some(m) = c.max_iter {
        cfg.solver.max_outer = m;
    }
    if c.jobs == 0 {
        return Err(Error::InvalidParameter("jobs must be at least 1".into()));
    }
    cfg.validate()?;
    if cfg.out.is_file() {
        return Err(Error::InvalidParameter(format!("{} is a file", cfg.out.display())));
    }
    Ok(cfg)
}

#[derive(Serialize, Deserialize)]
struct Summary {
    kappa: f64,
    primal: f64,
    dual: f64,
    gap: f64,
    iterations: usize,
    converged: bool,
    feasibility: f64,
    exchange_tv: f64,
}

impl Summary {
    fn of(r: &GeodesicResult) -> Self {
        Summary {
            kappa: r.kappa,
            primal: r.primal_value,
            dual: r.dual_value,
            gap: r.gap(),
            iterations: r.iterations,
            converged: r.converged,
            feasibility: r.feasibility,
            exchange_tv: r.exchange_tv(),
        }
    }
}

fn distance(cfg: &ExperimentConfig) -> Result<Status> {
    single_kappa(cfg)?;
    let (a, b) = cfg.endpoints()?;
    let r = solver::solve_geodesic(&a, &b, &cfg.solver_config())?;
    let mut art = Artifacts::new("distance");
    art.json("result.json", &Summary::of(&r))?;
    art.write(&cfg.out)?;
    println!("{}", serde_json::to_string(&Summary::of(&r))?);
    Ok(status(r.converged))
}

fn single_kappa(cfg: &ExperimentConfig) -> Result<()> {
    if cfg.kappas.len() != 1 {
        return Err(Error::InvalidParameter(
            "this command takes a single kappa; use sweep for several".into(),
        ));
    }
    Ok(())
}

#[derive(Serialize)]
struct GeodesicReport<'a> {
    #[serde(flatten)]
    summary: Summary,
    action_slices: &'a [f64],
    history: &'a [IterationRecord],
}

#[derive(Serialize, Deserialize)]
struct StoredPotentials {
    kappa: f64,
    raw: PotentialPair,
    feasibilized: PotentialPair,
    feasible: bool,
    max_violation: f64,
}

fn geodesic(cfg: &ExperimentConfig) -> Result<Status> {
    single_kappa(cfg)?;
    let (a, b) = cfg.endpoints()?;
    let r = solver::solve_geodesic(&a, &b, &cfg.solver_config())?;
    let frames = solver::geodesic_frames(&r, &cfg.frames)?;
    let mut art = Artifacts::new("geodesic");
    art.json(
        "result.json",
        &GeodesicReport {
            summary: Summary::of(&r),
            action_slices: &r.action_slices,
            history: &r.history,
        },
    )?;
    for (k, f) in frames.iter().enumerate() {
        art.json(&format!("frames/frame_{k:03}.json"), f)?;
    }
    art.json("path.json", &r.path)?;
    art.json(
        "potentials.json",
        &StoredPotentials {
            kappa: r.kappa,
            raw: r.potentials.clone(),
            feasibilized: r.certificate.potentials.clone(),
            feasible: r.certificate.feasible,
            max_violation: r.certificate.max_violation,
        },
    )?;
    art.write(&cfg.out)?;
    println!("{}", serde_json::to_string(&Summary::of(&r))?);
    Ok(status(r.converged))
}

#[derive(Serialize)]
struct SweepRow {
    #[serde(flatten)]
    summary: Summary,
    /// `(√2/κ)·√primal`.
    tv_bound: f64,
}

fn sweep(cfg: &ExperimentConfig, common: &Common) -> Result<Status> {
    let mut kappas = cfg.kappas.clone();
    kappas.sort_by(f64::total_cmp);
    kappas.dedup();
    let (a, b) = cfg.endpoints()?;
    let summaries: Vec<Summary> = if common.jobs > 1 {
        sweep_processes(cfg, &kappas, common.jobs)?
    } else {
        solver::sweep_kappa(&a, &b, &kappas, &cfg.solver)?
            .iter()
            .map(Summary::of)
            .collect()
    };
    let converged = summaries.iter().all(|s| s.converged);
    let rows: Vec<SweepRow> = summaries
        .into_iter()
        .map(|s| SweepRow {
            tv_bound: 2f64.sqrt() / s.kappa * s.primal.max(0.0).sqrt(),
            summary: s,
        })
        .collect();
    let mut csv = String::from("kappa,primal,dual,exchange_tv,tv_bound,iterations,converged\n");
    for r in &rows {
        let s = &r.summary;
        csv += &format!(
            "{},{},{},{},{},{},{}\n",
            s.kappa, s.primal, s.dual, s.exchange_tv, r.tv_bound, s.iterations, s.converged
        );
    }
    let mut art = Artifacts::new("sweep");
    art.json("sweep.json", &rows)?;
    art.text("sweep.csv", csv.clone());
    art.write(&cfg.out)?;
    print!("{csv}");
    Ok(status(converged))
}

/// Solve each toll value in its own `distance` process (cold starts).
fn sweep_processes(cfg: &ExperimentConfig, kappas: &[f64], jobs: usize) -> Result<Vec<Summary>> {
    let exe = std::env::current_exe()?;
    let scratch = std::env::temp_dir().join(format!("ringroad-sweep-{}", std::process::id()));
    std::fs::create_dir_all(&scratch)?;
    let mut point = cfg.clone();
    point.base_dir = PathBuf::from(".");
    let start = absolute_endpoint(&cfg.start, &cfg.base_dir);
    let end = absolute_endpoint(&cfg.end, &cfg.base_dir);
    point.start = start;
    point.end = end;
    let cfg_path = scratch.join("config.json");
    std::fs::write(&cfg_path, serde_json::to_vec(&point)?)?;

    let mut out = Vec::with_capacity(kappas.len());
    for chunk in kappas.chunks(jobs).enumerate() {
        let (c, ks) = chunk;
        let children: Vec<_> = ks
            .iter()
            .enumerate()
            .map(|(i, k)| {
                let dir = scratch.join(format!("point_{}", c * jobs + i));
                let child = std::process::Command::new(&exe)
                    .arg("distance")
                    .arg("--config")
                    .arg(&cfg_path)
                    .arg("--kappa")
                    .arg(k.to_string())
                    .arg("--out")
                    .arg(&dir)
                    .stdout(std::process::Stdio::null())
                    .spawn();
                child.map(|ch| (ch, dir))
            })
            .collect::<std::io::Result<_>>()?;
        for (mut ch, dir) in children {
            let code = ch.wait()?.code().unwrap_or(3);
            if code > 1 {
                return Err(Error::NotConverged {
                    what: "sweep point",
                    residual: f64::NAN,
                });
            }
            let text = std::fs::read_to_string(dir.join("result.json"))?;
            out.push(serde_json::from_str(&text)?);
        }
    }
    let _ = std::fs::remove_dir_all(&scratch);
    Ok(out)
}

fn absolute_endpoint(spec: &config::EndpointSpec, base: &Path) -> config::EndpointSpec {
    match spec {
        config::EndpointSpec::File { path } if path.is_relative() => config::EndpointSpec::File {
            path: std::path::absolute(base.join(path)).unwrap_or_else(|_| base.join(path)),
        },
        other => other.clone(),
    }
}

fn oracle(which: Oracle) -> Result<Status> {
    match which {
        Oracle::Dirac { r, kappa } => println!("{}", oracles::dirac_cost(r, kappa)?),
        Oracle::FisherRao { m0, m1, kappa } => println!("{}", oracles::fisher_rao_cost(m0, m1, kappa)?),
        Oracle::Wasserstein(c) => {
            let cfg = resolve(&c)?;
            let (a, b) = cfg.endpoints()?;
            let report = transport_bounds(&a, &b)?;
            println!("{}", serde_json::to_string(&report)?);
        }
    }
    Ok(Status::Done)
}

#[derive(Serialize)]
struct Bounds {
    /// `W²(ω0 + γ0, ω1 + γ1)` (a lower bound on the strip from marginals).
    lower: f64,
    /// `W²(ω0, ω1) + W²_Γ(γ0, γ1)`; infinite for incompatible masses.
    upper: f64,
    /// Whether both values are exact for these measures.
    exact: bool,
}

fn transport_bounds(a: &MeasurePair, b: &MeasurePair) -> Result<Bounds> {
    if a.geometry().is_strip() {
        let lower = oracles::marginal_cost(&oracles::strip_marginals(a)?, &oracles::strip_marginals(b)?)?;
        let upper = oracles::marginal_cost(
            &oracles::strip_interior_marginals(a)?,
            &oracles::strip_interior_marginals(b)?,
        )? + oracles::wasserstein_line(&oracles::edge_line(a)?, &oracles::edge_line(b)?)?;
        let exact = oracles::product_defect(a).max(oracles::product_defect(b)) <= 1e-12;
        Ok(Bounds { lower, upper, exact })
    } else {
        let lower = oracles::wasserstein_line(&oracles::total_line(a)?, &oracles::total_line(b)?)?;
        let upper = oracles::wasserstein_line(&oracles::interior_line(a)?, &oracles::interior_line(b)?)?
            + if a.gamma() == b.gamma() { 0.0 } else { f64::INFINITY };
        Ok(Bounds {
            lower,
            upper,
            exact: true,
        })
    }
}

fn certify_run(input: &Path, threshold: f64, out: Option<PathBuf>) -> Result<Status> {
    if !(threshold >= 0.0 && threshold < 1.0) {
        return Err(Error::InvalidParameter(format!("threshold {threshold} not in [0, 1)")));
    }
    let read = |name: &str| -> Result<String> {
        std::fs::read_to_string(input.join(name))
            .map_err(|e| Error::InvalidParameter(format!("cannot read {}: {e}", input.join(name).display())))
    };
    let path: SpaceTimePath = serde_json::from_str(&read("path.json")?)?;
    let pots: StoredPotentials = serde_json::from_str(&read("potentials.json")?)?;
    path.check_shape()?;
    let nt = path.nt();
    let slice = |k: usize| -> Result<MeasurePair> {
        let (w, g) = path.slice(k);
        MeasurePair::new(path.geometry.clone(), w, g)
    };
    let (a, b) = (slice(0)?, slice(nt)?);
    let mut report = certify::hj_residuals(&pots.feasibilized, &path, pots.kappa, threshold)?;
    report.dual_value = Some(certify::dual_objective(&pots.feasibilized, &a, &b)?);
    let raw = certify::hj_residuals(&pots.raw, &path, pots.kappa, threshold)?;
    let mut art = Artifacts::new("certify");
    art.json("certify.json", &report)?;
    art.json("certify_raw.json", &raw)?;
    let dir = out.unwrap_or_else(|| input.join("certify"));
    art.write(&dir)?;
    println!(
        "{}",
        serde_json::json!({
            "dual": report.dual_value,
            "max_violation": report.max_violation,
            "raw_max_violation": raw.max_violation,
            "on_support": raw.support_violation.on_support,
        })
    );
    Ok(Status::Done)
}

fn flow(cfg: &ExperimentConfig) -> Result<Status> {
    single_kappa(cfg)?;
    let fc = cfg
        .gradflow
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("the config has no gradflow section".into()))?;
    let g = cfg.geometry.build()?;
    let spec = fc.energy.build(&g)?;
    let init = fc.initial.build(&g, Some(&spec), &cfg.base_dir)?;
    let kappa = cfg.kappas[0];
    if !(fc.t_end >= 0.0 && fc.t_end.is_finite()) {
        return Err(Error::InvalidParameter("t_end must be nonnegative".into()));
    }
    let tau = match fc.tau {
        Some(t) => t,
        None => gradflow::cfl_bound(&init, &spec, kappa)?,
    };
    let traj = gradflow::run_recorded(&init, &spec, kappa, fc.t_end, tau, fc.record_every)?;
    let mut art = Artifacts::new("gradflow");
    let mut csv = String::from("step,time,energy,mass_drift\n");
    for (k, (t, e, d)) in traj.series.iter().enumerate() {
        csv += &format!("{k},{t},{e},{d}\n");
    }
    art.text("energy.csv", csv);
    for (k, s) in traj.states.iter().enumerate() {
        art.json(&format!("frames/flow_{k:04}.json"), s)?;
    }
    let monotone = traj.series.windows(2).all(|w| w[1].1 <= w[0].1 + 1e-12);
    let max_drift = traj.series.iter().fold(0.0f64, |m, s| m.max(s.2));
    let summary = serde_json::json!({
        "steps": traj.steps,
        "halvings": traj.halvings,
        "tau": tau,
        "initial_energy": traj.series[0].1,
        "final_energy": traj.last().energy,
        "energy_monotone": monotone,
        "max_mass_drift": max_drift,
    });
    art.json("summary.json", &summary)?;
    art.write(&cfg.out)?;
    println!("{summary}");
    Ok(Status::Done)
}
