use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_powerstep"))
}

fn configs() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/configs"))
}

#[test]
fn run_writes_identical_csv_twice() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("quadratic_powerstep.toml");
    let mut outputs = Vec::new();
    for sub in ["a", "b"] {
        let out = dir.path().join(sub);
        let st = bin().args(["run", "--config"]).arg(&cfg).arg("--out").arg(&out).status().unwrap();
        assert!(st.success());
        outputs.push(std::fs::read(out.join("quadratic_powerstep.csv")).unwrap());
        assert!(out.join("quadratic_powerstep.manifest.json").exists());
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn bad_config_names_field_and_fails() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(configs().join("quadratic_powerstep.toml"))
        .unwrap()
        .replace("total_steps = 2000", "total_steps = 0");
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, text).unwrap();
    let out = bin().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("total_steps"));
}

#[test]
fn sweep_writes_one_csv_per_value_and_index() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["sweep", "--config"])
        .arg(configs().join("quadratic_powerstep.toml"))
        .args(["--axis", "beta", "--values", "0,0.1,0.2", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 4);
    for i in 0..3 {
        assert!(dir.path().join(format!("quadratic_powerstep_{i:03}.csv")).exists());
    }
    let index: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("quadratic_powerstep_index.json")).unwrap()).unwrap();
    assert_eq!(index["arms"].as_array().unwrap().len(), 3);

    let empty = bin()
        .args(["sweep", "--config"])
        .arg(configs().join("quadratic_powerstep.toml"))
        .args(["--axis", "beta", "--values", ""])
        .output()
        .unwrap();
    assert_eq!(empty.status.code(), Some(2));
}

#[test]
fn verify_exits_zero_with_json_report() {
    let out = bin().args(["verify", "--samples", "20"]).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["pass"], true);
    assert!(report["checks"].as_array().unwrap().len() > 12);
}

#[test]
fn rate_prints_slope() {
    let out = bin()
        .args(["rate", "--problem", "quadratic", "--horizons", "10,100", "--seeds", "2"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("slope"));
    let bad = bin().args(["rate", "--problem", "ackley"]).output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
}
