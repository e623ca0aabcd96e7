use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn oc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oc"))
        .args(args)
        .current_dir(dir)
        .env_remove("OC_OUT_DIR")
        .output()
        .expect("spawn oc")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn assert_code(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stderr:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

const SMOKE: &str = r#"{
    "train": {"max_iters": 10, "batch_size": 8, "holdout_size": 8, "val_every": 5},
    "baseline": {"iters": 20, "starts": 1}
}"#;

#[test]
fn corridor_default_width_has_1311_parameters() {
    let tmp = tempfile::tempdir().unwrap();
    let out = oc(
        tmp.path(),
        &["train", "--scenario", "corridor", "--iters", "1", "--batch-size", "4", "--out", "run", "--quiet"],
    );
    assert_code(&out, 0);
    let report = read_json(&tmp.path().join("run/train_report.json"));
    assert_eq!(report["params"], 1311);
    let ckpt = read_json(&tmp.path().join("run/checkpoint.json"));
    assert_eq!(ckpt["dims"]["m"], 32);
    assert_eq!(ckpt["params"]["K1"].as_array().unwrap().len(), 32 * 32);
}

#[test]
fn missing_checkpoint_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    assert_code(&oc(tmp.path(), &["eval", "--checkpoint", "absent.json"]), 2);
}

#[test]
fn unknown_config_keys_are_config_errors() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("a.json"), r#"{"bogus": 1}"#).unwrap();
    std::fs::write(tmp.path().join("b.json"), r#"{"train": {"widht": 8}}"#).unwrap();
    assert_code(&oc(tmp.path(), &["train", "--config", "a.json"]), 2);
    assert_code(&oc(tmp.path(), &["train", "--config", "b.json"]), 2);
    assert_code(&oc(tmp.path(), &["train", "--scenario", "swap_k9"]), 2);
}

#[test]
fn divergent_training_exits_1_and_keeps_partial_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(
        tmp.path().join("lr.json"),
        r#"{"train": {"lr_schedule": [[0, 1e8]], "max_iters": 20, "batch_size": 8, "holdout_size": 8, "width": 8}}"#,
    )
    .unwrap();
    let out = oc(tmp.path(), &["train", "--config", "lr.json", "--out", "run", "--quiet"]);
    assert_code(&out, 1);
    let manifest = read_json(&tmp.path().join("run/train.manifest.json"));
    assert_eq!(manifest["status"], "partial");
    assert!(tmp.path().join("run/checkpoint.json").exists());
}

#[test]
fn train_then_eval_succeeds_for_every_scenario() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("smoke.json"), SMOKE).unwrap();
    for (scenario, width) in [
        ("corridor", "32"),
        ("swap2", "16"),
        ("swap12", "32"),
        ("swarm", "16"),
        ("quadcopter", "16"),
    ] {
        let out = oc(
            tmp.path(),
            &["train", "--config", "smoke.json", "--scenario", scenario, "--width", width, "--out", scenario, "--quiet"],
        );
        assert_code(&out, 0);
        let ckpt = format!("{scenario}/checkpoint.json");
        let out = oc(tmp.path(), &["eval", "--config", "smoke.json", "--checkpoint", &ckpt, "--out", scenario]);
        assert_code(&out, 0);
        let report = read_json(&tmp.path().join(scenario).join("eval_report.json"));
        assert!(report["nn"]["objective"].as_f64().unwrap().is_finite(), "{scenario}");
        assert!(report["baseline"]["objective"].as_f64().unwrap().is_finite(), "{scenario}");
    }
}

#[test]
fn manifest_alone_reproduces_training() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("smoke.json"), SMOKE).unwrap();
    let first = oc(
        tmp.path(),
        &["train", "--config", "smoke.json", "--scenario", "swap2", "--seed", "3", "--out", "a", "--quiet"],
    );
    assert_code(&first, 0);
    let again = oc(tmp.path(), &["train", "--config", "a/train.manifest.json", "--out", "b", "--quiet"]);
    assert_code(&again, 0);
    let a = read_json(&tmp.path().join("a/checkpoint.json"));
    let b = read_json(&tmp.path().join("b/checkpoint.json"));
    assert_eq!(a, b);
}

#[test]
fn single_thread_training_matches_default_threads() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("smoke.json"), SMOKE).unwrap();
    let a = oc(tmp.path(), &["train", "--config", "smoke.json", "--out", "a", "--quiet"]);
    let b = oc(tmp.path(), &["--single-thread", "train", "--config", "smoke.json", "--out", "b", "--quiet"]);
    assert_code(&a, 0);
    assert_code(&b, 0);
    assert_eq!(
        read_json(&tmp.path().join("a/checkpoint.json")),
        read_json(&tmp.path().join("b/checkpoint.json"))
    );
    assert_eq!(read_json(&tmp.path().join("b/train.manifest.json"))["threads"], 1);
}

#[test]
fn env_var_sets_output_dir_and_flag_wins() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |extra: &[&str]| {
        let mut args = vec!["baseline", "--scenario", "corridor", "--iters", "5"];
        args.extend_from_slice(extra);
        Command::new(env!("CARGO_BIN_EXE_oc"))
            .args(&args)
            .current_dir(tmp.path())
            .env("OC_OUT_DIR", "from_env")
            .output()
            .unwrap()
    };
    assert_code(&run(&[]), 0);
    assert!(tmp.path().join("from_env/baseline_report.json").exists());
    assert_code(&run(&["--out", "from_flag"]), 0);
    assert!(tmp.path().join("from_flag/baseline_report.json").exists());
}

#[test]
fn rollout_plot_is_well_formed_with_one_polyline_per_agent() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("smoke.json"), SMOKE).unwrap();
    assert_code(
        &oc(tmp.path(), &["train", "--config", "smoke.json", "--scenario", "swap2", "--out", "r", "--quiet"]),
        0,
    );
    assert_code(
        &oc(tmp.path(), &["eval", "--checkpoint", "r/checkpoint.json", "--out", "r", "--no-baseline"]),
        0,
    );
    assert_code(&oc(tmp.path(), &["plot", "r/eval_rollout.csv", "-o", "r/paths.svg"]), 0);
    let svg = std::fs::read_to_string(tmp.path().join("r/paths.svg")).unwrap();
    let doc = roxmltree::Document::parse(&svg).expect("well-formed XML");
    assert_eq!(doc.root_element().tag_name().name(), "svg");
    let polylines = doc.descendants().filter(|n| n.has_tag_name("polyline")).count();
    assert_eq!(polylines, 2);
    assert!(tmp.path().join("r/paths.plot.manifest.json").exists());

    assert_code(
        &oc(tmp.path(), &["plot", "r/train_log.csv", "--kind", "scatter", "--x", "iter", "--y", "loss,ell"]),
        0,
    );
    let rows = std::fs::read_to_string(tmp.path().join("r/train_log.csv")).unwrap().lines().count() - 1;
    let svg = std::fs::read_to_string(tmp.path().join("r/train_log.svg")).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    assert_eq!(doc.descendants().filter(|n| n.has_tag_name("circle")).count(), 2 * rows);
}
