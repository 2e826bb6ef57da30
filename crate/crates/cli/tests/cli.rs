use std::path::Path;
use std::process::{Command, Output};

fn cli(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_anatomy-prior"))
        .current_dir(dir)
        .env("ANATOMY_PRIOR_WORKERS", "2")
        .args(args)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small_config(dir: &Path) -> String {
    let cfg = serde_json::json!({
        "seed": 3,
        "paths": { "cohort": dir.join("cohort"), "output": dir.join("out") },
        "registration": { "iteration_scale": 0.05, "samples": 1000 },
        "prior": { "ridge_lambda": 0.1 },
        "phantom": { "cohort_size": 8, "seed": 3, "skin_subdivisions": 3, "organ_subdivisions": 2 }
    });
    let path = dir.join("config.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    path.display().to_string()
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(cli(dir.path(), &["no-such-stage"]).status.code(), Some(2));
    assert_eq!(cli(dir.path(), &["init-targets", "--organ", "liver"]).status.code(), Some(2));
}

#[test]
fn targets_before_priors_name_the_missing_stage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let gen = cli(dir.path(), &["--config", &cfg, "phantom"]);
    assert!(gen.status.success(), "{}", stderr(&gen));
    assert!(dir.path().join("cohort/cohort.json").exists());
    let out = cli(dir.path(), &["--config", &cfg, "init-targets", "--case", "case_007", "--organ", "liver"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("fit-priors"), "{}", stderr(&out));
}

#[test]
fn ground_reads_a_units_file() {
    let dir = tempfile::tempdir().unwrap();
    let units = [
        (1, "jaundice and dark urine", "liver", "porta_hepatis"),
        (2, "flank pain radiating to the groin", "kidney_left", "lower_pole"),
        (3, "left upper quadrant pain after trauma", "spleen", "hilum"),
    ];
    let lines: Vec<String> = units
        .iter()
        .map(|(id, s, o, l)| {
            serde_json::json!({"id": id, "symptom": s, "diagnosis": "dx", "organ": o, "locations": [l], "basis": ""})
                .to_string()
        })
        .collect();
    std::fs::write(dir.path().join("units.jsonl"), lines.join("\n")).unwrap();
    let out = cli(dir.path(), &["ground", "--query", "dark urine and jaundice", "--units", "units.jsonl", "--k", "1"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["target"]["organ"]["name"], "liver");
    assert_eq!(v["retrieved"][0]["id"], 1);
    assert_eq!(v["target"]["evidence"], serde_json::json!([1]));
    assert!(stderr(&out).contains("seed:"));
}

#[test]
fn run_all_on_a_tiny_cohort() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    assert!(cli(dir.path(), &["--config", &cfg, "phantom"]).status.success());
    let out = cli(dir.path(), &["--config", &cfg, "run-all"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = String::from_utf8(out.stdout).unwrap();
    assert!(csv.starts_with("organ,method,cases,"));
    assert!(csv.lines().any(|l| l.starts_with("all,prior,")));
    let t = cli(dir.path(), &["--config", &cfg, "init-targets", "--case", "case_007", "--organ", "liver"]);
    assert!(t.status.success(), "{}", stderr(&t));
    let v: serde_json::Value = serde_json::from_slice(&t.stdout).unwrap();
    assert!(v["candidates"].as_array().is_some_and(|c| !c.is_empty()));
}
