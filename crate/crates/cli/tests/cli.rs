use std::path::PathBuf;
use std::process::Command;

fn ape(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_ape")).args(args).env("RUST_BACKTRACE", "0").output().unwrap();
    (out.status.code().unwrap_or(-1), String::from_utf8(out.stdout).unwrap())
}

fn fixture(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name).display().to_string()
}

fn json(s: &str) -> serde_json::Value {
    serde_json::from_str(s).unwrap()
}

#[test]
fn run_reports_the_outcome_kind() {
    let (code, out) = ape(&["run", "--state", &fixture("guard.json")]);
    assert_eq!(code, 0);
    assert_eq!(json(&out)["kind"], "ape");
    let (code, out) = ape(&["run", "--state", &fixture("guard.json"), "--naive-only"]);
    assert_eq!(code, 0, "an aborted attack still completes");
    assert_eq!(json(&out)["kind"], "abort");
}

#[test]
fn analysis_subcommands_emit_json() {
    let g = fixture("relay.json");
    let (_, out) = ape(&["trace", "--state", &g]);
    assert!(json(&out)["dcfg"]["frames"].as_array().unwrap().len() >= 2);
    let (_, out) = ape(&["taint", "--state", &g]);
    assert_eq!(json(&out)["taintedBlocks"].as_array().unwrap().len(), 1);
    let (_, out) = ape(&["plan", "--state", &g, "--pretty"]);
    assert_eq!(json(&out)["replaceSet"].as_array().unwrap().len(), 2);
}

#[test]
fn synth_dump_writes_code_and_diff() {
    let dir = std::env::temp_dir().join(format!("ape-synth-{}", std::process::id()));
    let (code, out) = ape(&["synth-dump", "--state", &fixture("guard.json"), "--out", dir.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert_eq!(json(&out).as_array().unwrap().len(), 1);
    let names: Vec<String> =
        std::fs::read_dir(&dir).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    assert!(names.iter().any(|n| n.ends_with(".hex")) && names.iter().any(|n| n.ends_with(".diff")));
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn mempool_replaces_the_victim() {
    let (code, out) = ape(&[
        "mempool",
        "--state",
        &fixture("mempool/guard-state.json"),
        "--pool",
        &fixture("mempool/guard-pool.json"),
        "--adversary",
        "0xad5e000000000000000000000000000000000001",
        "--sequential",
    ]);
    assert_eq!(code, 0);
    let v = json(&out);
    assert_eq!(v["replaced"].as_array().unwrap().len(), 1);
    assert_eq!(v["dropped"].as_array().unwrap().len(), 2);
}

#[test]
fn report_runs_bundles_in_a_directory() {
    let (code, out) = ape(&["report", "--in", &fixture("")]);
    assert_eq!(code, 0);
    let v = json(&out);
    assert_eq!((v["total"].as_u64(), v["ape"].as_u64(), v["naive"].as_u64()), (Some(6), Some(4), Some(1)));
    let (_, table) = ape(&["report", "--in", &fixture(""), "--table"]);
    assert!(table.lines().any(|l| l.starts_with("Validation")));
}

#[test]
fn input_errors_exit_nonzero() {
    assert_ne!(ape(&["run", "--state", "/does/not/exist.json"]).0, 0);
    assert_ne!(ape(&["run", "--state", &fixture("mempool/guard-state.json")]).0, 0, "bare fixture needs --tx");
    assert_ne!(ape(&["run", "--state", &fixture("guard.json"), "--adversary", "0x12"]).0, 0);
}
