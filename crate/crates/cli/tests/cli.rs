use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use serde_json::Value;

const SMALL: &str = r#"
seed = 5
[data.transition]
n_segments = 10
[stage1]
max_rows = 600
[stage1.train]
epochs = 3
[stage2]
max_steps = 300
max_rows = 600
[stage2.attention_train]
epochs = 1
[stage2.refine]
epochs = 3
[snn]
max_rows = 200
[snn.train]
epochs = 2
[snn.lif]
t_sim = 20
"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_entroprog"));
    c.env_remove("ENTROPROG_OUT");
    c
}

fn run(out: &Path, config: &Path, args: &[&str]) -> Output {
    bin()
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .arg("--deterministic")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(o: Output) -> Output {
    assert!(
        o.status.success(),
        "exit {:?}: {}",
        o.status.code(),
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.toml");
    std::fs::write(&p, text).unwrap();
    p
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn error_line(o: &Output) -> Value {
    let text = String::from_utf8_lossy(&o.stderr);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1, "stderr: {text}");
    serde_json::from_str(lines[0]).expect("stderr is JSON")
}

/// A fully trained small run shared by read-only tests.
struct Run {
    _tmp: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
}

fn trained() -> &'static Run {
    static RUN: OnceLock<Run> = OnceLock::new();
    RUN.get_or_init(|| {
        let tmp = tempfile::tempdir().unwrap();
        let config = write_config(tmp.path(), SMALL);
        let root = tmp.path().join("out");
        for args in [
            &["generate"][..],
            &["features"],
            &["train", "--stage", "1"],
            &["train", "--stage", "2"],
            &["train", "--stage", "snn"],
            &["predict"],
            &["evaluate"],
        ] {
            ok(run(&root, &config, args));
        }
        Run { _tmp: tmp, root, config }
    })
}

#[test]
fn generate_is_reproducible_and_echoes_split() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), SMALL);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    ok(run(&a, &config, &["generate"]));
    ok(run(&b, &config, &["generate"]));
    let ma = json(&a.join("dataset/run_manifest.json"));
    let mb = json(&b.join("dataset/run_manifest.json"));
    assert_eq!(ma["manifest_sha256"], mb["manifest_sha256"]);
    assert_eq!(ma["outputs"], mb["outputs"]);
    assert_eq!(ma["details"]["split"], serde_json::json!([0.6, 0.2, 0.2]));
    assert!(ma["timings_ms"]["generate"].is_number());
}

#[test]
fn malformed_config_gives_one_json_error_line() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "seed = [1, 2\n");
    let o = run(&tmp.path().join("o"), &config, &["generate"]);
    assert_eq!(o.status.code(), Some(2));
    let e = error_line(&o);
    assert_eq!(e["exit_code"], 2);
    assert!(e["message"].as_str().unwrap().contains("config"));

    let bad_split = write_config(tmp.path(), "[data.transition.split]\ntrain = 0.9\nval = 0.2\ntest = 0.2\n");
    let o = run(&tmp.path().join("o"), &bad_split, &["generate"]);
    assert_eq!(o.status.code(), Some(2));
    error_line(&o);
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = bin().args(["generate", "--bogus"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_line(&o)["error"], "usage");
}

#[test]
fn feature_rows_have_71_columns_and_rerun_identically() {
    let r = trained();
    let text = std::fs::read_to_string(r.root.join("features/features_0000.csv")).unwrap();
    for line in text.lines() {
        assert_eq!(line.split(',').count(), 71);
    }
    let again = r.root.parent().unwrap().join("again");
    std::fs::create_dir_all(&again).unwrap();
    let feats = again.join("out");
    ok(run(&feats, &r.config, &["features", "--dataset", r.root.join("dataset").to_str().unwrap()]));
    let a = json(&r.root.join("features/run_manifest.json"));
    let b = json(&feats.join("features/run_manifest.json"));
    assert_eq!(a["outputs"], b["outputs"]);
}

#[test]
fn constant_grid_gives_zero_entropy_columns() {
    let tmp = tempfile::tempdir().unwrap();
    let text = "[data.normal]\nkind = \"linear\"\nm = 0.0\nc = 1.0\nsigma = 0.0\n\
                [data.transition]\nn_segments = 2\nnormal_only_fraction = 1.0\n";
    let config = write_config(tmp.path(), text);
    let out = tmp.path().join("o");
    ok(run(&out, &config, &["generate"]));
    ok(run(&out, &config, &["features"]));
    let text = std::fs::read_to_string(out.join("features/features_0000.csv")).unwrap();
    let mut rows = 0;
    // entropy-valued columns and their rates/gradients; synchrony, run
    // lengths and scale coupling are not entropies
    let entropy_cols = (0..40).chain(46..51).chain(55..58).chain(62..70);
    let entropy_cols: Vec<usize> = entropy_cols.collect();
    for line in text.lines().skip(1) {
        let v: Vec<f64> = line.split(',').skip(1).map(|v| v.parse().unwrap()).collect();
        assert!(entropy_cols.iter().all(|&c| v[c] == 0.0), "{line}");
        rows += 1;
    }
    assert!(rows > 0);
}

#[test]
fn snn_stage_before_stage1_is_an_ordering_error() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("o");
    let o = run(&out, &config, &["train", "--stage", "snn"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_line(&o)["error"], "ordering");
    let o = run(&out, &config, &["train", "--stage", "2"]);
    assert_eq!(error_line(&o)["error"], "ordering");
}

#[test]
fn history_csv_columns() {
    let r = trained();
    let head = |f: &str| {
        let t = std::fs::read_to_string(r.root.join("models").join(f)).unwrap();
        t.lines().next().unwrap().to_string()
    };
    assert_eq!(head("stage1_history.csv"), "epoch,loss_train,loss_val,lr,delta");
    assert_eq!(head("refine_history.csv"), "epoch,loss_train,loss_val,lr,delta");
    assert_eq!(head("attention_history.csv"), "epoch,loss_train,loss_val");
    assert_eq!(head("snn_history.csv"), "epoch,loss_snn,loss_joint,accuracy,lr");
}

fn epochs(path: &Path) -> Vec<usize> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap().parse().unwrap())
        .collect()
}

#[test]
fn resume_continues_the_epoch_counter() {
    let tmp = tempfile::tempdir().unwrap();
    let text = SMALL.replace("epochs = 3", "epochs = 2\npatience = 100");
    let config = write_config(tmp.path(), &text);
    let out = tmp.path().join("o");
    for args in [&["generate"][..], &["features"], &["train", "--stage", "1"]] {
        ok(run(&out, &config, args));
    }
    let hist = out.join("models/stage1_history.csv");
    assert_eq!(epochs(&hist), vec![0, 1]);
    ok(run(&out, &config, &["train", "--stage", "1", "--resume", "--epochs", "3"]));
    assert_eq!(epochs(&hist), vec![0, 1, 2, 3, 4]);
    let m = json(&out.join("models/run_manifest_stage1.json"));
    assert_eq!(m["details"]["last_epoch"], 4);
}

#[test]
fn resume_without_a_checkpoint_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), SMALL);
    let o = run(&tmp.path().join("o"), &config, &["train", "--stage", "1", "--resume"]);
    assert_eq!(o.status.code(), Some(2));
    error_line(&o);
}

#[test]
fn alerts_record_horizon_and_outputs_are_hashed() {
    let r = trained();
    let dir = r.root.join("predictions");
    let alerts = json(&dir.join("alerts.json"));
    for a in alerts.as_array().unwrap() {
        assert_eq!(a["horizon_steps"], 155);
    }
    let m = json(&dir.join("run_manifest.json"));
    let listed: BTreeMap<String, String> = m["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| (f["path"].as_str().unwrap().to_string(), f["sha256"].as_str().unwrap().to_string()))
        .collect();
    for name in ["alerts.json", "predictions.json", "scores_0008.csv", "risk_0008.csv", "snapshots/grid_0008_t00599.csv"] {
        let bytes = std::fs::read(dir.join(name)).unwrap();
        let want = system_sha256(&bytes);
        assert_eq!(listed.get(name), Some(&want), "{name}");
    }
    let snap = std::fs::read_to_string(dir.join("snapshots/grid_0008_t00599.csv")).unwrap();
    let mut lines = snap.lines();
    assert_eq!(lines.next(), Some("i,j,amplitude"));
    assert_eq!(lines.count(), 64);
}

/// Digest from the coreutils tool rather than the crate under test.
fn system_sha256(bytes: &[u8]) -> String {
    use std::io::Write;
    use std::process::Stdio;
    let mut child = Command::new("sha256sum")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .expect("sha256sum available");
    child.stdin.take().unwrap().write_all(bytes).unwrap();
    let out = child.wait_with_output().unwrap();
    String::from_utf8(out.stdout).unwrap().split_whitespace().next().unwrap().to_string()
}

#[test]
fn horizon_beyond_history_is_a_data_error() {
    let r = trained();
    let tmp = tempfile::tempdir().unwrap();
    let root = r.root.to_str().unwrap();
    let o = bin()
        .arg("--config")
        .arg(&r.config)
        .arg("--out")
        .arg(tmp.path())
        .args(["predict", "--horizon", "5000"])
        .args(["--dataset", &format!("{root}/dataset")])
        .args(["--features", &format!("{root}/features")])
        .args(["--models", &format!("{root}/models")])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(error_line(&o)["error"], "insufficient_data");
}

#[test]
fn normal_only_input_raises_no_alerts() {
    let r = trained();
    let tmp = tempfile::tempdir().unwrap();
    let text = format!("{SMALL}\n").replace("n_segments = 10", "n_segments = 4\nnormal_only_fraction = 1.0");
    let config = write_config(tmp.path(), &text);
    let out = tmp.path().join("o");
    ok(run(&out, &config, &["generate"]));
    ok(run(&out, &config, &["features"]));
    let models = r.root.join("models");
    ok(run(&out, &config, &["predict", "--part", "all", "--models", models.to_str().unwrap()]));
    let alerts = json(&out.join("predictions/alerts.json"));
    assert_eq!(alerts.as_array().unwrap().len(), 0);
}

#[test]
fn report_schema_and_reproducibility() {
    let r = trained();
    let report = json(&r.root.join("report/report.json"));
    let keys: Vec<&str> = report.as_object().unwrap().keys().map(String::as_str).collect();
    let mut want = vec!["accuracy", "fpr", "detection_rate", "mean_lead_time", "segments"];
    want.sort();
    let mut got = keys.clone();
    got.sort();
    assert_eq!(got, want);
    let summary = std::fs::read_to_string(r.root.join("report/summary.txt")).unwrap();
    assert!(summary.contains("accuracy") && summary.contains("segment"));

    let tmp = tempfile::tempdir().unwrap();
    let root = r.root.to_str().unwrap();
    let o = bin()
        .arg("--config")
        .arg(&r.config)
        .arg("--out")
        .arg(tmp.path())
        .args(["evaluate", "--dataset", &format!("{root}/dataset"), "--predictions", &format!("{root}/predictions")])
        .output()
        .unwrap();
    ok(o);
    let again = json(&tmp.path().join("report/report.json"));
    assert_eq!(again, report);
}

#[test]
fn mismatched_segments_are_rejected() {
    let r = trained();
    let tmp = tempfile::tempdir().unwrap();
    let mut set = json(&r.root.join("predictions/predictions.json"));
    set["segments"][0]["segment"] = 999.into();
    let pred = tmp.path().join("pred");
    std::fs::create_dir_all(&pred).unwrap();
    std::fs::write(pred.join("predictions.json"), set.to_string()).unwrap();
    let o = bin()
        .arg("--out")
        .arg(tmp.path())
        .args(["evaluate", "--dataset", r.root.join("dataset").to_str().unwrap()])
        .args(["--predictions", pred.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3));
    error_line(&o);
}

#[test]
fn perfect_predictions_score_full_accuracy() {
    let r = trained();
    let tmp = tempfile::tempdir().unwrap();
    let ds = json(&r.root.join("dataset/manifest.json"));
    let mut set = json(&r.root.join("predictions/predictions.json"));
    for seg in set["segments"].as_array_mut().unwrap() {
        let k = seg["segment"].as_u64().unwrap() as usize;
        let ts = ds["segments"][k]["transition_step"].as_u64();
        for s in seg["scores"].as_array_mut().unwrap() {
            let t = s[0].as_u64().unwrap();
            s[1] = if ts.is_some_and(|ts| t >= ts) { 1.0 } else { 0.0 }.into();
        }
    }
    let pred = tmp.path().join("pred");
    std::fs::create_dir_all(&pred).unwrap();
    std::fs::write(pred.join("predictions.json"), set.to_string()).unwrap();
    ok(bin()
        .arg("--out")
        .arg(tmp.path())
        .args(["evaluate", "--dataset", r.root.join("dataset").to_str().unwrap()])
        .args(["--predictions", pred.to_str().unwrap()])
        .output()
        .unwrap());
    assert_eq!(json(&tmp.path().join("report/report.json"))["accuracy"], 1.0);
}

#[test]
fn capacity_defaults_and_errors() {
    let tmp = tempfile::tempdir().unwrap();
    ok(bin().arg("--out").arg(tmp.path()).arg("capacity").output().unwrap());
    let plan = json(&tmp.path().join("capacity/plan.json"));
    assert!((plan["latency_ms"].as_f64().unwrap() - 459.0).abs() < 0.1);
    assert_eq!(plan["units"], 5);
    let o = bin().arg("--out").arg(tmp.path()).args(["capacity", "--n-max", "0"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_line(&o)["error"], "validation");
}

#[test]
fn capacity_units_match_counting_oracle() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
    let tmp = tempfile::tempdir().unwrap();
    for _ in 0..20 {
        let m: usize = rng.random_range(1..500);
        let n: usize = rng.random_range(1..40);
        ok(bin()
            .arg("--out")
            .arg(tmp.path())
            .args(["capacity", "--machines", &m.to_string(), "--n-max", &n.to_string()])
            .output()
            .unwrap());
        let plan = json(&tmp.path().join("capacity/plan.json"));
        // smallest unit count whose capacity covers every machine
        let mut units = 0;
        while units * n < m {
            units += 1;
        }
        assert_eq!(plan["units"].as_u64().unwrap() as usize, units, "M={m} N={n}");
    }
}

#[test]
fn env_var_sets_the_output_root_and_nothing_leaks() {
    let tmp = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_entroprog"))
        .env("ENTROPROG_OUT", tmp.path())
        .current_dir(tmp.path())
        .arg("capacity")
        .output()
        .unwrap();
    ok(o);
    let entries: Vec<String> = std::fs::read_dir(tmp.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert_eq!(entries, vec!["capacity".to_string()]);
}

#[test]
fn score_csv_round_trips() {
    let r = trained();
    let path = r.root.join("predictions/scores_0008.csv");
    let scores = entroprog::snn::read_scores_csv(&path).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let copy = tmp.path().join("s.csv");
    entroprog::snn::write_scores_csv(&copy, &scores).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&copy).unwrap());
}
