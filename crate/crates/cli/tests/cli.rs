use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.toml"))
}

fn scate(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scate")).args(args).output().expect("binary runs")
}

fn shorten(src: &Path, dir: &Path, horizon: usize, extra: &str) -> PathBuf {
    let text = std::fs::read_to_string(src).unwrap();
    let text = text.replace("horizon = 60", &format!("horizon = {horizon}"));
    let path = dir.join("scenario.toml");
    std::fs::write(&path, format!("{text}\n{extra}")).unwrap();
    path
}

#[test]
fn static_scenario_succeeds_and_writes_logs() {
    let out = tempfile::tempdir().unwrap();
    let o = scate(&["run", "--scenario", scenario("static").to_str().unwrap(), "--out", out.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("min clearance"));
    for f in ["episode.csv", "steps.json", "plans.json", "sdf.csv", "sdf.bin"] {
        assert!(out.path().join(f).exists(), "{f}");
    }
    let csv = std::fs::read_to_string(out.path().join("episode.csv")).unwrap();
    assert_eq!(csv.lines().count(), 60 * 100 + 2);
    let plans: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.path().join("plans.json")).unwrap()).unwrap();
    assert_eq!(plans.as_array().unwrap().len(), 61);
}

#[test]
fn predictive_mode_makes_no_replacements() {
    let dir = tempfile::tempdir().unwrap();
    let path = shorten(&scenario("reactive"), dir.path(), 20, "");
    let out = dir.path().join("out");
    let o = scate(&["run", "--scenario", path.to_str().unwrap(), "--mode", "predictive", "--seed", "3", "--out", out.to_str().unwrap()]);
    assert!(o.status.code() == Some(0) || o.status.code() == Some(1));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("steps.json")).unwrap()).unwrap();
    assert_eq!(json["mode"], "predictive");
    assert_eq!(json["seed"], 3);
    let steps = json["steps"].as_array().unwrap();
    assert_eq!(steps.len(), 21);
    assert!(steps.iter().all(|s| s["replacements"] == 0));
}

#[test]
fn obstacle_on_the_goal_fails_navigation() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(scenario("static")).unwrap();
    let text = text.replace("position = [2.0, 2.0]", "position = [3.5, 3.5]");
    assert!(text.contains("[3.5, 3.5]"));
    let path = dir.path().join("blocked.toml");
    std::fs::write(&path, text).unwrap();
    let o = scate(&["run", "--scenario", path.to_str().unwrap(), "--out", dir.path().join("out").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let path = shorten(&scenario("reactive"), dir.path(), 15, "");
    let read = |name: &str| {
        let out = dir.path().join(name);
        scate(&["run", "--scenario", path.to_str().unwrap(), "--seed", "9", "--out", out.to_str().unwrap()]);
        let mut json: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out.join("steps.json")).unwrap()).unwrap();
        json.as_object_mut().unwrap().remove("timing");
        (std::fs::read(out.join("episode.csv")).unwrap(), json, std::fs::read(out.join("plans.json")).unwrap())
    };
    assert_eq!(read("a"), read("b"));
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.toml");
    let o = scate(&["run", "--scenario", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let bad = shorten(&scenario("static"), dir.path(), 60, "");
    let text = std::fs::read_to_string(&bad).unwrap().replace("plant_rate = 100.0", "plant_rate = 0.5");
    std::fs::write(&bad, text).unwrap();
    assert_eq!(scate(&["run", "--scenario", bad.to_str().unwrap()]).status.code(), Some(2));

    let typo = dir.path().join("typo.toml");
    std::fs::write(&typo, "name = \"x\"\nstart = [0.5,0,0.5,0,0,0]\ngoal = [3.5,0,3.5,0,0,0]\nbogus = 1\n").unwrap();
    assert_eq!(scate(&["run", "--scenario", typo.to_str().unwrap()]).status.code(), Some(2));

    assert_eq!(scate(&["run", "--scenario", bad.to_str().unwrap(), "--mode", "sideways"]).status.code(), Some(2));
}

#[test]
fn verify_passes() {
    let o = scate(&["verify"]);
    assert_eq!(o.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("0 failed"));
    assert!(stdout.contains("jacobian / obstacle"));
}

#[test]
fn sweep_writes_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let path = shorten(&scenario("reactive"), dir.path(), 20, "");
    let out = dir.path().join("out");
    let o = scate(&["sweep", "--scenario", path.to_str().unwrap(), "--seeds", "2", "--out", out.to_str().unwrap()]);
    assert!(o.status.code() == Some(0) || o.status.code() == Some(1));
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4);
    assert!(String::from_utf8_lossy(&o.stdout).contains("seeds"));
}

#[test]
fn shipped_scenarios_match_presets() {
    for name in scate::scenario::PRESETS {
        let parsed = scate::Scenario::load(scenario(name)).unwrap();
        assert_eq!(parsed, scate::Scenario::preset(name).unwrap(), "{name}");
    }
}
