use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_fissile-uq");

fn tiny_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let text = format!(
        r#"{{
  "seed": 3,
  "output_dir": "{}",
  "dataset": {{"n": 30, "duration": 1.0, "n_test": 8, "histories": 2000}},
  "surrogates": {{
    "nsm": {{"restarts": 1, "max_iter": 30}},
    "gsm": {{"restarts": 1, "max_iter": 30}},
    "jsm": {{"latents": 2, "restarts": 1, "max_iter": 30}}
  }},
  "observations": {{"duration": 1.0, "neutron_replicates": 4, "joint_replicates": 4}},
  "inference": {{"am": {{"steps": 3000, "warmup": 500}}, "init_draws": 32, "map_restarts": 1}},
  "csq": {{"n_new": 1, "duration": 1.0, "csq": {{"restarts": 2, "steps": 50}},
          "matching": {{"iterations": 2, "search_histories": 2000, "final_histories": 5000}}}}{extra}
}}"#,
        dir.join("out").display()
    );
    let p = dir.join("config.json");
    std::fs::write(&p, text).unwrap();
    p
}

fn run(config: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .arg("--config")
        .arg(config)
        .args(args)
        .env("RUST_LOG", "off")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn unknown_flag_is_usage_error() {
    let o = Command::new(BIN).arg("--bogus").output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    let o = Command::new(BIN).arg("frobnicate").output().unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn unknown_config_key_is_named() {
    let d = tempfile::tempdir().unwrap();
    let c = tiny_config(d.path(), r#", "hh": 1"#);
    let o = run(&c, &["dataset"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("`hh`"), "{}", stderr(&o));
}

#[test]
fn reversed_bounds_name_the_parameter() {
    let d = tempfile::tempdir().unwrap();
    let c = tiny_config(d.path(), r#", "design": {"k_p": [0.9, 0.7], "eps_f": [0.005, 0.02], "s_intensity": [5000, 20000], "x_s": [0.2, 0.8], "m_gamma": [15, 35], "eps_gamma": [0.1, 0.3]}"#);
    let o = run(&c, &["dataset"]);
    assert_eq!(o.status.code(), Some(1));
    let e = stderr(&o);
    assert!(e.contains("k_p") && !e.contains("eps_f:"), "{e}");
}

#[test]
fn every_config_problem_is_reported() {
    let d = tempfile::tempdir().unwrap();
    let c = tiny_config(d.path(), r#", "hh": 1, "inference": {"zz": 2}"#);
    let e = stderr(&run(&c, &["dataset"]));
    assert!(e.contains("`hh`") && e.contains("`zz`"), "{e}");
}

#[test]
fn missing_inputs_fail_with_stage_name() {
    let d = tempfile::tempdir().unwrap();
    let c = tiny_config(d.path(), "");
    let o = run(&c, &["validate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("validate"), "{}", stderr(&o));
}

#[test]
fn dataset_has_requested_rows() {
    let d = tempfile::tempdir().unwrap();
    let c = tiny_config(d.path(), "");
    let o = run(&c, &["dataset", "--n", "12"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(d.path().join("out/dataset.csv")).unwrap();
    let rows = text.lines().filter(|l| !l.starts_with('#')).count() - 1;
    assert_eq!(rows, 12);
}

fn pipeline(dir: &Path) {
    let c = tiny_config(dir, "");
    for args in [
        &["simulate", "--duration", "1"][..],
        &["moments"],
        &["dataset"],
        &["train"],
        &["validate"],
        &["invert", "--mode", "neutron"],
        &["invert", "--mode", "sequential"],
        &["invert", "--mode", "joint"],
        &["sobol"],
        &["csq"],
        &["report"],
    ] {
        let o = run(&c, args);
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn pipeline_is_deterministic_and_manifest_complete() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    pipeline(a.path());
    pipeline(b.path());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.path().join("out/manifest.json")).unwrap()).unwrap();
    let mut listed: Vec<String> = vec!["manifest.json".into(), "config.json".into()];
    for run in manifest["runs"].as_object().unwrap().values() {
        assert_eq!(run["master_seed"], 3);
        listed.extend(run["artifacts"].as_array().unwrap().iter().map(|v| v.as_str().unwrap().to_string()));
    }
    for entry in std::fs::read_dir(a.path().join("out")).unwrap() {
        let name = entry.unwrap().file_name().into_string().unwrap();
        assert!(listed.contains(&name), "{name} not in manifest");
        if name == "manifest.json" || name == "config.json" {
            continue;
        }
        let x = std::fs::read(a.path().join("out").join(&name)).unwrap();
        let y = std::fs::read(b.path().join("out").join(&name)).unwrap();
        assert!(x == y, "{name} differs between identical runs");
    }
}

#[test]
fn report_reads_persisted_posteriors_only() {
    let d = tempfile::tempdir().unwrap();
    pipeline(d.path());
    let out = d.path().join("out");
    let before = std::fs::read(out.join("marginal_joint_kp_s.csv")).unwrap();
    for f in ["surrogate_jsm.json", "train.csv", "observations.json"] {
        std::fs::remove_file(out.join(f)).unwrap();
    }
    let o = run(&d.path().join("config.json"), &["report", "--bins", "40"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(before, std::fs::read(out.join("marginal_joint_kp_s.csv")).unwrap());
    let grid = String::from_utf8(before).unwrap();
    assert_eq!(grid.lines().count(), 1 + 40 * 40);
}
