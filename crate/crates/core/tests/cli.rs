use std::process::Command;

fn cqhl(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_cqhl"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs");
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stdout).into_owned())
}

#[test]
fn bounds_subcommand_writes_report_with_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let (code, stdout) = cqhl(&["bounds", "--output-dir", dir.path().to_str().unwrap()]);
    assert_eq!(code, 0);
    assert!(stdout.contains("window_interaction_norm_exp"));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("bounds.json")).unwrap()).unwrap();
    assert_eq!(json["provenance"]["config"]["n"], 12);
    assert_eq!(json["provenance"]["config_sha256"].as_str().unwrap().len(), 64);
    assert_eq!(json["bounds"].as_array().unwrap().len(), 10);
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"n": 12, "a": 9, "w": 4}"#).unwrap();
    assert_eq!(cqhl(&["learn", "--config", bad.to_str().unwrap()]).0, 2);
    std::fs::write(&bad, "not json").unwrap();
    assert_eq!(cqhl(&["learn", "--config", bad.to_str().unwrap()]).0, 2);
    assert_eq!(cqhl(&["learn", "--config", "/nonexistent/config.json"]).0, 2);
    assert_eq!(cqhl(&["scaling", "--n-values", "1,8"]).0, 2);
    assert_eq!(cqhl(&["frobnicate"]).0, 2);
}

#[test]
fn shipped_configs_parse() {
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&root).unwrap() {
        let path = entry.unwrap().path();
        let cfg = cqhl::cli::RunConfig::load(&path).unwrap();
        cfg.validate().unwrap();
        seen += 1;
    }
    assert!(seen >= 2);
}

#[test]
fn empty_scaling_sweep_is_a_no_op() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"scaling": {"n_values": [], "repetitions": 3}}"#).unwrap();
    let (code, _) = cqhl(&["scaling", "--config", cfg.to_str().unwrap(), "--output-dir", dir.path().to_str().unwrap()]);
    assert_eq!(code, 0);
    assert!(dir.path().join("scaling.csv").exists());
}

#[test]
fn small_learn_run_is_reproducible() {
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    let args = |d: &tempfile::TempDir| {
        vec![
            "learn".to_string(),
            "--n".into(),
            "6".into(),
            "--a".into(),
            "2".into(),
            "--w".into(),
            "4".into(),
            "--particles".into(),
            "400".into(),
            "--experiments-per-scan".into(),
            "20".into(),
            "--threads".into(),
            "1".into(),
            "--output-dir".into(),
            d.path().to_str().unwrap().into(),
        ]
    };
    for d in [&d1, &d2] {
        let a = args(d);
        let refs: Vec<&str> = a.iter().map(String::as_str).collect();
        assert_eq!(cqhl(&refs).0, 0);
    }
    let read = |d: &tempfile::TempDir| std::fs::read(d.path().join("learn_trace.csv")).unwrap();
    assert_eq!(read(&d1), read(&d2));
}
