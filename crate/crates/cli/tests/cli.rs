use std::path::Path;
use std::process::{Command, Output};

use invflow_core::data::save_model;
use invflow_core::flow::{FlowConfig, FlowModel};
use serde_json::Value;

fn invflow(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_invflow"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn report(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn metric(report: &Value, name: &str) -> f64 {
    report["metrics"]
        .as_array()
        .unwrap()
        .iter()
        .find(|m| m["name"] == name)
        .unwrap_or_else(|| panic!("no metric {name}"))["value"]
        .as_f64()
        .unwrap()
}

const SMOKE: &str = r#"{
  "model": {"steps_per_block": 1, "blocks": 1, "input_shape": [1, 8, 8], "hidden_width": 8},
  "data": {"source": "synthetic", "kind": "constant", "count": 64},
  "train": {"epochs": 1, "log_every": 1}
}"#;

#[test]
fn verify_passes_and_lists_every_property() {
    let dir = tempfile::tempdir().unwrap();
    let out = invflow(&["verify", "--out", "v"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(&dir.path().join("v/report.json"));
    let props = r["properties"].as_array().unwrap();
    assert_eq!(props.len(), 7);
    for p in props {
        assert_eq!(p["passed"], true);
        assert!(p["max_error"].is_f64(), "{p}");
    }
}

#[test]
fn injected_mask_violation_fails_verification() {
    let dir = tempfile::tempdir().unwrap();
    let out = invflow(&["verify", "--inject-mask-violation", "--out", "v"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("FAIL round_trip"), "{stdout}");
    assert!(stdout.contains("FAIL unit_determinant"), "{stdout}");
    let r = report(&dir.path().join("v/report.json"));
    assert!(r["properties"].as_array().unwrap().iter().any(|p| p["passed"] == false));
}

#[test]
fn config_errors_list_every_key() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("bad.json"),
        r#"{"model": {"steps_per_block": 1, "blocks": 1, "input_shape": [1, 8, 8], "hidden": 3},
            "train": {"epochz": 2}, "extra": 1}"#,
    )
    .unwrap();
    let out = invflow(&["train", "--config", "bad.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    for key in ["model.hidden", "train.epochz", "extra"] {
        assert!(err.contains(key), "{key} not in {err}");
    }
    assert_eq!(invflow(&["train"], dir.path()).status.code(), Some(2));
    assert_eq!(invflow(&["frobnicate"], dir.path()).status.code(), Some(2));
}

#[test]
fn missing_inputs_are_io_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = invflow(&["sample", "nope.ivfl"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    std::fs::write(
        dir.path().join("c.json"),
        r#"{"model": {"steps_per_block": 1, "blocks": 1, "input_shape": [1, 28, 28]},
            "data": {"source": "mnist", "images": "absent-images-idx3-ubyte"}}"#,
    )
    .unwrap();
    assert_eq!(invflow(&["train", "--config", "c.json"], dir.path()).status.code(), Some(3));
}

#[test]
fn one_epoch_smoke_and_seed_repetition() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), SMOKE).unwrap();
    let a = invflow(&["train", "--config", "c.json", "--out", "a"], dir.path());
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    let b = invflow(&["train", "--config", "c.json", "--out", "b"], dir.path());
    assert_eq!(b.status.code(), Some(0));
    let ra = report(&dir.path().join("a/report.json"));
    let rb = report(&dir.path().join("b/report.json"));
    assert!(metric(&ra, "final_bpd") < metric(&ra, "initial_bpd"));
    assert_eq!(ra["series"], rb["series"]);
    assert_eq!(ra["config"]["model"]["learning_rate"].as_f64(), Some(1e-3));
    let ca = std::fs::read(dir.path().join("a/checkpoint.ivfl")).unwrap();
    let cb = std::fs::read(dir.path().join("b/checkpoint.ivfl")).unwrap();
    assert_eq!(ca, cb);

    // threads change scheduling only
    let c = invflow(&["train", "--config", "c.json", "--threads", "3", "--out", "c"], dir.path());
    assert_eq!(c.status.code(), Some(0));
    assert_eq!(std::fs::read(dir.path().join("c/checkpoint.ivfl")).unwrap(), ca);

    let s = invflow(&["sample", "a/checkpoint.ivfl", "--n", "9", "--out", "s"], dir.path());
    assert_eq!(s.status.code(), Some(0));
    let r = report(&dir.path().join("s/report.json"));
    let m = &r["metrics"][0];
    assert_eq!(m["name"], "sampling_ms");
    assert!(m["repeats"].as_u64().unwrap() >= 5);
}

#[test]
fn zero_temperature_on_identity_model_is_mid_gray() {
    let dir = tempfile::tempdir().unwrap();
    let model = FlowModel::identity(&FlowConfig::new(1, 1, [1, 8, 8])).unwrap();
    save_model(&model, &dir.path().join("id.ivfl")).unwrap();
    let out = invflow(&["sample", "id.ivfl", "--temperature", "0", "--out", "s"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let bytes = std::fs::read(dir.path().join("s/samples.pgm")).unwrap();
    // 100 samples in a 10x10 grid of 8x8 tiles with a one-pixel gutter
    let header = b"P5\n91 91\n255\n";
    assert_eq!(&bytes[..header.len()], header);
    let pixels = &bytes[header.len()..];
    for (i, &v) in pixels.iter().enumerate() {
        let (r, c) = (i / 91, i % 91);
        let gutter = r % 9 == 0 || c % 9 == 0;
        assert_eq!(v, if gutter { 0 } else { 128 }, "pixel ({r}, {c})");
    }
}

#[test]
fn bench_writes_csv_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = invflow(
        &["bench", "--sizes", "8,16", "--kernels", "2", "--threads", "1,2", "--out", "b"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("b/bench.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with(
        "input_size,kernel,batch,threads,sampling_ms_mean,sampling_ms_sd,forward_ms_mean,forward_ms_sd,peak_mem_bytes"
    ));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.ends_with(",ok")));
    let r = report(&dir.path().join("b/report.json"));
    assert!(r["metrics"].as_array().unwrap().iter().any(|m| m["name"]
        .as_str()
        .unwrap()
        .starts_with("forward_speedup")));

    let guarded = invflow(&["bench", "--sizes", "16", "--mem-limit-mb", "0", "--out", "g"], dir.path());
    assert_eq!(guarded.status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("g/bench.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().ends_with("skipped_memory_guard"), "{csv}");
}
