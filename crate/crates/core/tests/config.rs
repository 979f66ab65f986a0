use fissile_uq::config::{parse_config, ExperimentConfig};
use fissile_uq::Error;

fn problems(text: &str) -> Vec<String> {
    match parse_config(text) {
        Err(Error::Config(p)) => p,
        other => panic!("expected a config error, got {other:?}"),
    }
}

#[test]
fn empty_object_gives_defaults() {
    assert_eq!(parse_config("{}").unwrap(), ExperimentConfig::default());
}

#[test]
fn nested_unknown_keys_are_named_with_their_path() {
    let p = problems(r#"{"dataset": {"nn": 3}, "surrogates": {"jsm": {"latent": 2}}}"#);
    assert!(p.iter().any(|m| m.contains("`nn`") && m.contains("`dataset`")), "{p:?}");
    assert!(p.iter().any(|m| m.contains("`latent`") && m.contains("`surrogates.jsm`")), "{p:?}");
}

#[test]
fn partial_sections_keep_other_defaults() {
    let cfg = parse_config(r#"{"seed": 9, "dataset": {"n": 50}}"#).unwrap();
    let d = ExperimentConfig::default();
    assert_eq!(cfg.seed, 9);
    assert_eq!(cfg.dataset.n, 50);
    assert_eq!(cfg.dataset.n_test, d.dataset.n_test);
    assert_eq!(cfg.surrogates, d.surrogates);
}

#[test]
fn reversed_and_unknown_design_bounds_rejected() {
    let p = problems(r#"{"design": {"kp": [0.9, 0.8], "zz": [0, 1]}}"#);
    assert!(p.iter().any(|m| m.contains("kp")), "{p:?}");
    assert!(p.iter().any(|m| m.contains("zz")), "{p:?}");
}

#[test]
fn truth_outside_box_rejected() {
    let p = problems(r#"{"observations": {"truth": {"kp": 0.99}}}"#);
    assert!(!p.is_empty());
}

#[test]
fn config_hash_tracks_content() {
    let a = parse_config("{}").unwrap();
    let b = parse_config(r#"{"seed": 1}"#).unwrap();
    assert_eq!(a.hash().unwrap(), ExperimentConfig::default().hash().unwrap());
    assert_ne!(a.hash().unwrap(), b.hash().unwrap());
}
