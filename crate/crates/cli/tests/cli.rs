use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};

fn ringroad(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ringroad"))
        .args(args)
        .output()
        .unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn out_arg(dir: &Path) -> String {
    dir.to_str().unwrap().to_string()
}

#[test]
fn malformed_config_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(
        &cfg,
        r#"{"geometry": {"kind": "interval", "nx": 16}, "kappas": [1.0], "colour": 3}"#,
    )
    .unwrap();
    let out = ringroad(&["distance", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "input");

    let out = ringroad(&["distance", "--nx", "16", "--kappa=-1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn nothing_is_written_when_validation_fails() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("run");
    let out = ringroad(&["distance", "--nx", "16", "--nt", "0", "--out", &out_arg(&target)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!target.exists());
}

#[test]
fn iteration_cap_reports_non_convergence() {
    let dir = tempfile::tempdir().unwrap();
    let out = ringroad(&[
        "distance",
        "--nx",
        "16",
        "--nt",
        "16",
        "--max-iter",
        "5",
        "--out",
        &out_arg(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(read_json(&dir.path().join("result.json"))["converged"], false);
}

#[test]
fn reruns_are_byte_identical_and_hashed() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let out = ringroad(&["geodesic", "--nx", "16", "--nt", "16", "--out", &out_arg(d.path())]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let manifest = read_json(&dirs[0].path().join("manifest.json"));
    let files = manifest["files"].as_array().unwrap();
    assert!(files.iter().any(|f| f["path"] == "potentials.json"));
    for f in files {
        let rel = f["path"].as_str().unwrap();
        let a = std::fs::read(dirs[0].path().join(rel)).unwrap();
        let b = std::fs::read(dirs[1].path().join(rel)).unwrap();
        assert_eq!(a, b, "{rel} differs between runs");
        assert_eq!(f["sha256"].as_str().unwrap(), format!("{:x}", Sha256::digest(&a)));
        assert_eq!(f["bytes"].as_u64().unwrap(), a.len() as u64);
    }
    assert_eq!(
        std::fs::read(dirs[0].path().join("manifest.json")).unwrap(),
        std::fs::read(dirs[1].path().join("manifest.json")).unwrap()
    );
}

#[test]
fn certify_reads_a_geodesic_run() {
    let dir = tempfile::tempdir().unwrap();
    let run = ringroad(&["geodesic", "--nx", "16", "--nt", "16", "--out", &out_arg(dir.path())]);
    assert!(run.status.success());
    let primal = read_json(&dir.path().join("result.json"))["primal"].as_f64().unwrap();
    let out = ringroad(&["certify", "--input", &out_arg(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(&dir.path().join("certify/certify.json"));
    let dual = report["dual_value"].as_f64().unwrap();
    assert!(dual <= primal && dual > 0.9 * primal, "{dual} vs {primal}");
    assert!(report["max_violation"].as_f64().unwrap() <= 1e-9);
}

#[test]
fn sweep_with_processes_matches_in_process_rows() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let common = ["sweep", "--nx", "16", "--nt", "16", "--kappa", "5,0.5"];
    let one = ringroad(&[&common[..], &["--out", &out_arg(a.path())]].concat());
    let two = ringroad(&[&common[..], &["--jobs", "2", "--out", &out_arg(b.path())]].concat());
    assert!(one.status.success() && two.status.success());
    let (ra, rb) = (
        read_json(&a.path().join("sweep.json")),
        read_json(&b.path().join("sweep.json")),
    );
    let (ra, rb) = (ra.as_array().unwrap(), rb.as_array().unwrap());
    assert_eq!(ra.len(), 2);
    for (x, y) in ra.iter().zip(rb) {
        assert_eq!(x["kappa"], y["kappa"]);
        let (p, q) = (x["primal"].as_f64().unwrap(), y["primal"].as_f64().unwrap());
        assert!((p - q).abs() <= 1e-4 * p, "{p} vs {q}");
    }
    assert!(ra[0]["kappa"].as_f64().unwrap() < ra[1]["kappa"].as_f64().unwrap());
    assert!(
        std::fs::read_to_string(a.path().join("sweep.csv"))
            .unwrap()
            .lines()
            .count()
            == 3
    );
}

#[test]
fn gibbs_initial_state_gives_a_flat_energy_series() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("gibbs.json");
    std::fs::write(
        &cfg,
        r#"{
          "geometry": { "kind": "interval", "nx": 24 },
          "kappas": [0.7],
          "gradflow": {
            "energy": { "kind": "boltzmann", "v_omega": { "offset": 0.0, "slope": [1.5, 0.0] }, "v_gamma": [0.2, -0.1] },
            "initial": { "type": "gibbs" },
            "t_end": 0.01
          },
          "out": "run"
        }"#,
    )
    .unwrap();
    let out = ringroad(&["gradflow", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("run/energy.csv")).unwrap();
    let energies: Vec<f64> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert!(energies.len() > 10);
    for e in &energies {
        assert!((e - energies[0]).abs() <= 1e-12);
    }
}

#[test]
fn oracle_subcommands_print_numbers() {
    let out = ringroad(&["oracle", "fisher-rao", "--m0", "0.25", "--m1", "1"]);
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "0.5");
    let out = ringroad(&["oracle", "wasserstein", "--nx", "16"]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["lower"], v["upper"]);
    let out = ringroad(&["oracle", "dirac", "--R", "1", "--kappa", "0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            let out = ringroad(&["oracle", "wasserstein", "--config", path.to_str().unwrap()]);
            assert!(
                out.status.code() != Some(2),
                "{}: {}",
                path.display(),
                String::from_utf8_lossy(&out.stderr)
            );
            n += 1;
        }
    }
    assert!(n >= 6);
}
