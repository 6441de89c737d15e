use std::fs;
use std::process::{Command, Output};

use serde_json::Value;

fn lazybatch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lazybatch")).args(args).output().unwrap()
}

fn json_of(args: &[&str]) -> Value {
    let out = lazybatch(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn launches_from_histogram(report: &Value) -> u64 {
    report["histogram"]
        .as_object()
        .unwrap()
        .iter()
        .filter(|(k, _)| !k.ends_with("/0"))
        .map(|(_, v)| v.as_array().unwrap().len() as u64)
        .sum()
}

fn sig_launches(report: &Value, name: &str) -> usize {
    let sigs = report["signatures"].as_array().unwrap();
    let id = sigs.iter().position(|s| s == name).unwrap();
    report["histogram"]
        .as_object()
        .unwrap()
        .iter()
        .filter(|(k, _)| k.rsplit('/').next() == Some(&id.to_string()))
        .map(|(_, v)| v.as_array().unwrap().len())
        .sum()
}

#[test]
fn run_rnn_counts_one_launch_per_batch_group() {
    let r = json_of(&["run", "--model", "rnn", "--batch", "8", "--scheduler", "depth"]);
    assert_eq!(r["equivalence"], true);
    assert_eq!(r["counters"]["kernel_launches"].as_u64().unwrap(), launches_from_histogram(&r));
    assert_eq!(r["config"]["batch_size"], 8);
}

#[test]
fn run_single_instance() {
    let r = json_of(&["run", "--model", "rnn", "--batch", "1"]);
    assert_eq!(r["equivalence"], true);
}

#[test]
fn run_drnn_syncs() {
    let r = json_of(&["run", "--model", "drnn", "--batch", "8", "--seed", "7"]);
    assert_eq!(r["equivalence"], true);
    assert!(r["counters"]["sync_points"].as_u64().unwrap() > 0);
}

#[test]
fn same_seed_same_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let paths: Vec<String> = (0..2).map(|i| dir.path().join(format!("r{i}.json")).display().to_string()).collect();
    for p in &paths {
        let out = lazybatch(&["run", "--model", "stackrnn", "--batch", "4", "--seed", "3", "--gather", "explicit", "--out", p]);
        assert!(out.status.success());
    }
    // the echoed output path differs, everything else must match
    let a = fs::read_to_string(&paths[0]).unwrap().replace(&paths[0], "OUT");
    let b = fs::read_to_string(&paths[1]).unwrap().replace(&paths[1], "OUT");
    assert_eq!(a, b);
    let c = lazybatch(&["run", "--model", "stackrnn", "--batch", "4", "--seed", "3", "--gather", "explicit"]);
    let d = lazybatch(&["run", "--model", "stackrnn", "--batch", "4", "--seed", "3", "--gather", "explicit"]);
    assert_eq!(c.stdout, d.stdout);
}

#[test]
fn compare_treelstm_coarsening_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("table.json");
    let out = lazybatch(&["compare", "--model", "treelstm", "--batch", "64", "--out", path.to_str().unwrap()]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().next().unwrap().starts_with("config"));
    assert_eq!(text.lines().count(), 7);
    let rows: Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    let launches = |label: &str| {
        rows.as_array()
            .unwrap()
            .iter()
            .find(|r| r["label"] == label)
            .unwrap()["report"]["counters"]["kernel_launches"]
            .as_u64()
            .unwrap()
    };
    assert!(launches("+coarsen") * 4 <= launches("+fusion"));
    assert!(rows.as_array().unwrap().iter().all(|r| r["report"]["equivalence"] == true));
}

#[test]
fn all_off_is_deterministic() {
    let args = [
        "run", "--model", "mvrnn", "--batch", "3", "--no-coarsen", "--no-ghost", "--no-phases", "--no-hoist", "--no-hfuse",
    ];
    assert_eq!(lazybatch(&args).stdout, lazybatch(&args).stdout);
}

#[test]
fn birnn_phases_batch_the_output() {
    let on = json_of(&["run", "--model", "birnn", "--batch", "8", "--seed", "2"]);
    let off = json_of(&["run", "--model", "birnn", "--batch", "8", "--seed", "2", "--no-phases"]);
    assert_eq!(sig_launches(&on, "relu_add_dense_concat"), 1);
    assert!(sig_launches(&off, "relu_add_dense_concat") > 1);
}

#[test]
fn profile_nestedrnn_ranks_inner_block_first() {
    let r = json_of(&["profile", "--model", "nestedrnn", "--batch", "4"]);
    let entries = r["entries"].as_array().unwrap();
    assert_eq!(entries[0]["rank"], 1);
    assert_eq!(entries[0]["nesting"], 2);
    let ratio = entries[0]["count"].as_f64().unwrap() / entries[1]["count"].as_f64().unwrap();
    assert!((20.0..=40.0).contains(&ratio), "{ratio}");
}

#[test]
fn analyze_and_kernels() {
    let a = json_of(&["analyze", "--model", "birnn"]);
    assert_eq!(a["duplication"]["clones"][0][1], serde_json::json!(["rnn#0", "rnn#1"]));
    assert!(a["phases"]["count"].as_u64().unwrap() >= 2);
    let k = json_of(&["kernels", "--model", "rnn"]);
    let rec = k.as_array().unwrap().iter().find(|s| s["name"] == "sigmoid_add_dense").unwrap();
    let shared: Vec<&Value> = rec["inputs"].as_array().unwrap().iter().filter(|i| i["shared"] == true).collect();
    assert_eq!(shared.len(), 1);
    assert_eq!(shared[0]["name"], "rnn_h_wt");
}

#[test]
fn fmt_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("m.mbir");
    fs::write(&src, "def @main(input x: Tensor[(1, 4)], w: Tensor[(4, 4)]) { tanh(nn.dense(x, w)) }").unwrap();
    let once = lazybatch(&["fmt", "--file", src.to_str().unwrap()]);
    assert!(once.status.success());
    fs::write(&src, &once.stdout).unwrap();
    let twice = lazybatch(&["fmt", "--file", src.to_str().unwrap()]);
    assert_eq!(once.stdout, twice.stdout);
    let k = json_of(&["kernels", "--file", src.to_str().unwrap()]);
    assert_eq!(k.as_array().unwrap().len(), 2);
}

#[test]
fn bad_arguments_fail() {
    assert!(!lazybatch(&["run", "--model", "nosuch"]).status.success());
    assert!(!lazybatch(&["run", "--model", "rnn", "--batch", "0"]).status.success());
    assert!(!lazybatch(&["analyze"]).status.success());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("bad.mbir");
    fs::write(&src, "def @main(").unwrap();
    let out = lazybatch(&["fmt", "--file", src.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}
