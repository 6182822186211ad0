use std::path::Path;
use std::process::{Command, Output};

fn cli(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_conic-climb")).args(args).current_dir(dir).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn plan_pauli(dir: &Path, target: &str) -> Output {
    cli(
        &[
            "plan", "--target", target, "--start", "40,3", "--region", "disc:0,0,50", "--entry-radius", "20", "--exit-length", "20", "--approach", "0",
            "--out", "path.json",
        ],
        dir,
    )
}

#[test]
fn plan_rejects_unnormalized_target() {
    let dir = tempfile::tempdir().unwrap();
    let o = plan_pauli(dir.path(), "0.6,0.7");
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("sum of squared amplitudes must equal 1"), "{}", stderr(&o));
    assert!(!dir.path().join("path.json").exists());
}

#[test]
fn usage_error_prints_subcommand_help() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(&["plan", "--start", "1,1"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    assert!(e.contains("--target") && e.contains("Synthesize a control path"), "{e}");

    let o = cli(&["scan", "--region", "ellipse:1,2"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = cli(&["--tol-overrides", r#"{"no_such": 1}"#, "scan"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_model_file_is_a_domain_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(&["model", "inspect", "--model", "absent.json"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("absent.json"));
}

#[test]
fn model_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(&["model", "build", "--model", "builtin:three_level", "--out", "m.json"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let o = cli(&["model", "inspect", "--model", "m.json", "--at", "1.25,0"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["dim"], 3);
    assert!(v["gaps"][0].as_f64().unwrap() < 1e-12);
}

#[test]
fn galerkin_from_potential_file() {
    let dir = tempfile::tempdir().unwrap();
    let n = 65;
    let xs: Vec<f64> = (0..n).map(|i| std::f64::consts::PI * i as f64 / (n - 1) as f64).collect();
    let pot = serde_json::json!({
        "v0": xs.iter().map(|x| 0.0 * x).collect::<Vec<_>>(),
        "v1": xs.iter().map(|x| x.cos()).collect::<Vec<_>>(),
        "v2": xs.iter().map(|x| (2.0 * x).sin()).collect::<Vec<_>>(),
    });
    std::fs::write(dir.path().join("v.json"), pot.to_string()).unwrap();
    let o = cli(&["model", "galerkin", "--potentials", "v.json", "--modes", "4", "--out", "g.json"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let o = cli(&["model", "inspect", "--model", "g.json"], dir.path());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let values: Vec<f64> = v["eigenvalues"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    for (k, e) in values.iter().enumerate() {
        assert!((e - ((k + 1) * (k + 1)) as f64).abs() < 1e-12);
    }
}

#[test]
fn scan_and_find_on_three_level() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(&["scan", "--model", "builtin:three_level", "--region", "rect:-2,2,-1,1", "--nodes", "5"], dir.path());
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("u1,u2,lambda_0,lambda_1,lambda_2,gap_0,gap_1"));
    assert_eq!(lines.count(), 25);

    let o = cli(&["find", "--model", "builtin:three_level", "--lower", "0", "--region", "rect:-3,3,-2,2"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let found = v["intersections"].as_array().unwrap();
    assert_eq!(found.len(), 1);
    let p = &found[0]["point"];
    assert!((p[0].as_f64().unwrap() - 1.25).abs() < 1e-8 && p[1].as_f64().unwrap().abs() < 1e-8, "{p}");
}

#[test]
fn sweep_writes_csv_and_report_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let o = plan_pauli(dir.path(), "0,1");
    assert!(o.status.success(), "{}", stderr(&o));
    let sweep = |name: &str| {
        let o = cli(&["sweep", "--path", "path.json", "--eps-min", "3e-3", "--eps-max", "1e-1", "--points", "4", "--out", name], dir.path());
        assert!(o.status.success(), "{}", stderr(&o));
        (std::fs::read(dir.path().join(name)).unwrap(), std::fs::read(dir.path().join(name).with_extension("json")).unwrap())
    };
    let (csv_a, json_a) = sweep("a.csv");
    let (csv_b, json_b) = sweep("b.csv");
    assert_eq!(csv_a, csv_b);
    assert_eq!(json_a, json_b);

    let mut rdr = csv::Reader::from_reader(csv_a.as_slice());
    assert_eq!(rdr.headers().unwrap().iter().collect::<Vec<_>>(), ["epsilon", "error", "overlap_0", "overlap_1", "leak", "steps", "seconds"]);
    assert_eq!(rdr.records().count(), 4);
    let report: serde_json::Value = serde_json::from_slice(&json_a).unwrap();
    assert_eq!(report["schema"], "conic-climb/sweep/1");
    assert_eq!(report["rows"].as_array().unwrap().len(), 4);
}

#[test]
fn simulate_reports_overlaps() {
    let dir = tempfile::tempdir().unwrap();
    assert!(plan_pauli(dir.path(), "0.6,0.8").status.success());
    let o = cli(&["simulate", "--path", "path.json", "--epsilon", "0.02", "--method", "adiabatic"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["method"], "adiabatic");
    assert!(v["error"].as_f64().unwrap() < 1e-2);
    assert!(v.get("final_state").is_none());
}

#[test]
fn accept_on_pauli2_subset() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(&["accept", "--model", "builtin:pauli2", "--only", "1,2,9", "--out", "r.json"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(r["criteria"].as_array().unwrap().len(), 3);

    let o = cli(&["accept", "--sabotage", "--only", "3"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("[FAIL] criterion 3"));
}
