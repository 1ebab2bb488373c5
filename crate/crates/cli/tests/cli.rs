use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn dcmg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dcmg")).args(args).output().unwrap()
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn small_sweep(dir: &Path) -> Output {
    dcmg(&[
        "sweep",
        "--trials",
        "50",
        "--delta",
        "0.001,0.5%",
        "--out",
        dir.to_str().unwrap(),
    ])
}

#[test]
fn sweep_writes_results_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = small_sweep(dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let sweep = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let crb = std::fs::read_to_string(dir.path().join("crb.csv")).unwrap();
    // Header plus 2 deltas x 10 parameters.
    assert_eq!(sweep.lines().count(), 21);
    assert_eq!(crb.lines().count(), 21);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["completed_points"], 2);
    assert_eq!(manifest["spec"]["trials"], 50);
}

#[test]
fn sweep_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(small_sweep(a.path()).status.success());
    assert!(small_sweep(b.path()).status.success());
    for file in ["sweep.csv", "crb.csv"] {
        assert_eq!(
            std::fs::read(a.path().join(file)).unwrap(),
            std::fs::read(b.path().join(file)).unwrap()
        );
    }
}

#[test]
fn too_few_slots_is_reported_as_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dcmg(&[
        "sweep",
        "--slots",
        "6",
        "--trials",
        "10",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.starts_with("error:"), "{err}");
    assert!(!err.contains("panicked"), "{err}");
}

#[test]
fn noiseless_single_run_has_full_rank() {
    let out = dcmg(&["single", "--noiseless", "--delta", "0.005"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("rank 7/7"), "{}", stdout(&out));
}

#[test]
fn single_json_report_is_valid() {
    let dir = tempfile::tempdir().unwrap();
    let out = dcmg(&[
        "single",
        "--json",
        "--delta",
        "0.005",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let printed: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let written: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(printed, written);
}

#[test]
fn bundled_scenarios_load_and_agree() {
    let toml = dcmg(&[
        "config",
        "--format",
        "json",
        "--config",
        scenario("reference.toml").to_str().unwrap(),
    ]);
    let json = dcmg(&[
        "config",
        "--format",
        "json",
        "--config",
        scenario("reference.json").to_str().unwrap(),
    ]);
    let default = dcmg(&["config", "--format", "json"]);
    assert!(toml.status.success(), "{}", stderr(&toml));
    assert!(json.status.success(), "{}", stderr(&json));
    assert_eq!(stdout(&toml), stdout(&json));
    assert_eq!(stdout(&toml), stdout(&default));
}

#[test]
fn unknown_config_extension_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scenario.yaml");
    std::fs::write(&path, "trials: 3\n").unwrap();
    let out = dcmg(&["config", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(
        stderr(&out).contains("expected a .toml or .json file"),
        "{}",
        stderr(&out)
    );
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scenario.toml");
    std::fs::write(&path, "trails = 3\n").unwrap();
    let out = dcmg(&["config", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn plan_prints_the_deviation_matrix() {
    let out = dcmg(&["plan", "--delta", "0.005"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(stdout(&out).lines().count(), 8);
    assert_eq!(stderr(&out).matches(": rank 7/7").count(), 5, "{}", stderr(&out));
}
