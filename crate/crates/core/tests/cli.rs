use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use trajrepair::export::{read_result_document, RESULT_FILE, STAGES_FILE};

fn shipped(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios")
        .join(format!("{name}.json"))
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trajrepair"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).trim().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).to_string()
}

#[test]
fn malformed_scenario_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    let text =
        fs::read_to_string(shipped("crossing"))
            .unwrap()
            .replacen("\"j_max_mps3\": 10.0", "\"j_max_mps3\": \"x\"", 1);
    fs::write(&path, text).unwrap();
    let o = run(&["validate", "--scenario", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("j_max_mps3"), "{}", stderr(&o));
}

#[test]
fn repair_time_must_lie_inside_the_horizon() {
    let path = shipped("crossing");
    let o = run(&["repair", "--scenario", path.to_str().unwrap(), "--t-rep", "100"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["repair", "--scenario", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn repair_on_empty_road_reports_unchanged() {
    let path = shipped("no_conflict");
    let o = run(&["repair", "--scenario", path.to_str().unwrap(), "--t-rep", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o), "status: unchanged t_rep: 1.0 feasible: true");
}

fn min_exported_speed(dir: &Path) -> f64 {
    let doc = read_result_document(&dir.join(RESULT_FILE)).unwrap();
    assert!(dir.join(STAGES_FILE).exists());
    doc.iterations[0].min_speed_mps.unwrap()
}

#[test]
fn later_repairs_brake_harder() {
    let path = shipped("crossing");
    let (early, late) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for (t_rep, dir) in [("0", &early), ("1.2", &late)] {
        let o = run(&[
            "repair",
            "--scenario",
            path.to_str().unwrap(),
            "--t-rep",
            t_rep,
            "--out",
            dir.path().to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    assert!(min_exported_speed(late.path()) < min_exported_speed(early.path()));
}

#[test]
fn tiny_budget_stops_the_search() {
    let path = shipped("crossing");
    let o = run(&["search", "--scenario", path.to_str().unwrap(), "--budget-s", "0.000001"]);
    assert!(stdout(&o).contains("terminated_by: time_budget"), "{}", stdout(&o));
}

#[test]
fn unresolved_search_exits_with_domain_code() {
    let path = shipped("crossing");
    let o = run(&[
        "search",
        "--scenario",
        path.to_str().unwrap(),
        "--set",
        "limits.a_max_mps2=0.3",
    ]);
    assert_eq!(o.status.code(), Some(3), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).ends_with("unresolved"));
}

#[test]
fn bench_prints_one_row() {
    let path = shipped("road_damage");
    let o = run(&["bench", "--scenario", path.to_str().unwrap(), "--runs", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 1);
    assert!(
        out.starts_with("road_damage | ") && out.matches('±').count() == 2,
        "{out}"
    );
}

#[test]
fn poor_reference_fit_only_warns() {
    let mut doc: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(shipped("no_conflict")).unwrap()).unwrap();
    // lateral zigzag every sample, far finer than the knot interval
    let samples: Vec<serde_json::Value> = (0..=80)
        .map(|k| {
            let t = 0.05 * k as f64;
            let l = if k % 2 == 0 { 0.5 } else { -0.5 };
            serde_json::json!({"t_s": t, "s_m": 10.0 * t, "l_m": l})
        })
        .collect();
    doc["reference"] = serde_json::json!({"kind": "samples", "degree": 3, "knot_interval_s": 0.4, "samples": samples});
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("zigzag.json");
    fs::write(&path, doc.to_string()).unwrap();
    let o = run(&["validate", "--scenario", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stderr(&o).contains("fit residual"), "{}", stderr(&o));
}

#[test]
fn search_output_is_reproducible() {
    let path = shipped("road_damage");
    let first = run(&["search", "--scenario", path.to_str().unwrap()]);
    let second = run(&["search", "--scenario", path.to_str().unwrap()]);
    assert_eq!(first.status.code(), Some(0));
    assert_eq!(stdout(&first), stdout(&second));
}
