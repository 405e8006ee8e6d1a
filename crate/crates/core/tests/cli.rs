use std::path::Path;
use std::process::{Command, Output, Stdio};

use std::io::Write;

const EXE: &str = env!("CARGO_BIN_EXE_lassornet");

fn config(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("configs")
        .join(name)
        .display()
        .to_string()
}

fn run(args: &[&str]) -> Output {
    Command::new(EXE).args(args).output().unwrap()
}

fn small_cohort(dir: &Path) -> String {
    let spec = dir.join("synth.json");
    std::fs::write(&spec, r#"{"n_people": 12, "n_genes": 30, "n_rhythmic": 8}"#).unwrap();
    let out = dir.join("cohort.csv");
    let o = run(&["synth", "--config", spec.to_str().unwrap(), "--seed", "4", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out.display().to_string()
}

#[test]
fn synth_output_embeds_provenance() {
    let o = run(&["synth", "--seed", "9"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let head: Vec<&str> = text.lines().take(4).collect();
    assert!(head[0].starts_with("# lassornet "));
    assert_eq!(head[1], "# seed 9");
    assert!(head[2].starts_with("# config_digest "));
    assert_eq!(head[3], "person_id,sample_index,zt,dlmo,gene_id,value");
    assert_eq!(text, String::from_utf8(run(&["synth", "--seed", "9"]).stdout).unwrap());
}

#[test]
fn version_is_machine_readable() {
    let o = run(&["--version"]);
    assert!(o.status.success());
    assert_eq!(String::from_utf8(o.stdout).unwrap().trim(), format!("lassornet {}", env!("CARGO_PKG_VERSION")));
}

#[test]
fn synth_pipes_into_train_and_predict_checks_genes() {
    let dir = tempfile::tempdir().unwrap();
    let cohort = small_cohort(dir.path());
    let csv = std::fs::read(&cohort).unwrap();
    let model = dir.path().join("model.json");
    let report = dir.path().join("report.jsonl");

    let mut child = Command::new(EXE)
        .args([
            "train",
            "--config",
            &config("protocol_quick.json"),
            "--data",
            "-",
            "--method",
            "lassornet",
            "--augmented",
            "--seed",
            "2",
            "--out",
            model.to_str().unwrap(),
            "--report",
            report.to_str().unwrap(),
        ])
        .stdin(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(&csv).unwrap();
    let o = child.wait_with_output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let saved: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&model).unwrap()).unwrap();
    assert_eq!(saved["seed"], 2);
    assert_eq!(saved["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(saved["config_digest"].as_str().unwrap().len(), 64);
    assert_eq!(std::fs::read_to_string(&report).unwrap().lines().count(), 1);

    let o = run(&["predict", "--model", model.to_str().unwrap(), "--data", &cohort]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("# seed 2"));
    let rows = text.lines().filter(|l| !l.starts_with('#')).count();
    assert_eq!(rows, 1 + 12 * 8);

    let renamed = dir.path().join("renamed.csv");
    std::fs::write(&renamed, String::from_utf8(csv).unwrap().replace("gene0007", "gene9999")).unwrap();
    let o = run(&["predict", "--model", model.to_str().unwrap(), "--data", renamed.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("gene0007"));
}

#[test]
fn search_writes_trial_log_and_report_renders() {
    let dir = tempfile::tempdir().unwrap();
    let cohort = small_cohort(dir.path());
    let model = dir.path().join("m.json");
    let trials = dir.path().join("trials.jsonl");
    let report = dir.path().join("r.jsonl");
    let o = run(&[
        "--threads",
        "2",
        "search",
        "--config",
        &config("protocol_quick.json"),
        "--data",
        &cohort,
        "--method",
        "lassornet",
        "--seed",
        "5",
        "--out",
        model.to_str().unwrap(),
        "--trials",
        trials.to_str().unwrap(),
        "--report",
        report.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let log = std::fs::read_to_string(&trials).unwrap();
    assert!(log.starts_with("# lassornet"));
    assert_eq!(log.lines().filter(|l| l.starts_with('{')).count(), 8);

    let o = run(&["report", "--input", report.to_str().unwrap()]);
    assert!(o.status.success());
    let table = String::from_utf8(o.stdout).unwrap();
    assert!(table.contains("LassoRNet"));
    assert!(table.contains("seeds [5]"));
}

#[test]
fn exit_codes_follow_error_class() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "person_id,zt\np1,3\n").unwrap();
    let o = run(&["evaluate", "--data", bad.to_str().unwrap(), "--out", dir.path().join("x").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(run(&["evaluate", "--seed", "x"]).status.code(), Some(1));
    let cohort = small_cohort(dir.path());
    let o = run(&[
        "train",
        "--data",
        &cohort,
        "--method",
        "plsr",
        "--at-lambda-max",
        "--out",
        dir.path().join("m").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}
