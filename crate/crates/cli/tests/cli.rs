use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use polyformer::graph::{grid_graph, write_edge_list};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_polyformer"))
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin().args(args).current_dir(dir).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn last_line(o: &Output) -> String {
    stdout(o).lines().last().unwrap_or("").to_string()
}

fn field<'a>(record: &'a str, key: &str) -> &'a str {
    record
        .split_whitespace()
        .find_map(|kv| kv.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        .unwrap_or_else(|| panic!("{key} missing from {record:?}"))
}

/// 6×6 grid, two feature channels and three classes decided by the first
/// channel.
fn toy_inputs(dir: &Path) {
    let g = grid_graph(6, 6).unwrap();
    let mut edges = Vec::new();
    write_edge_list(&g, &mut edges).unwrap();
    fs::write(dir.join("graph.txt"), edges).unwrap();
    let mut feats = String::from("f0,f1\n");
    let mut labels = String::from("node_id,label\n");
    for i in 0..36 {
        let a = ((i * 7) % 11) as f64 / 10.0;
        let b = ((i * 3) % 5) as f64 / 4.0;
        feats.push_str(&format!("{a},{b}\n"));
        let class = if a < 0.35 { 0 } else if a < 0.7 { 1 } else { 2 };
        labels.push_str(&format!("{i},{class}\n"));
    }
    fs::write(dir.join("features.csv"), feats).unwrap();
    fs::write(dir.join("labels.csv"), labels).unwrap();
}

const TRAIN_CONFIG: &str = r#"
[model]
basis = "monomial"
order = 3
input_dim = 2
hidden = 4
blocks = 1
heads = 2
ffn_dim = 8
classes = 3
readout_dim = 8

[train]
lr = 0.01
max_epochs = 30
patience = 10
batch_size = 16

[split]
train = 0.6
val = 0.2
test = 0.2
"#;

fn tokens_cache(dir: &Path, basis: &str) -> Output {
    run(
        &["tokens", "--graph", "graph.txt", "--features", "features.csv", "--basis", basis, "--K", "3", "--out", "toy.ptk"],
        dir,
    )
}

#[test]
fn tokens_grid_cache_size_and_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let g = grid_graph(24, 24).unwrap();
    let mut edges = Vec::new();
    write_edge_list(&g, &mut edges).unwrap();
    fs::write(dir.join("grid.txt"), edges).unwrap();
    let feats: String = (0..576).map(|i| format!("{}\n", (i % 17) as f64 / 16.0)).collect();
    fs::write(dir.join("x.csv"), feats).unwrap();
    let args = ["tokens", "--graph", "grid.txt", "--features", "x.csv", "--basis", "mono", "--K", "10", "--out", "a.ptk"];
    let o = run(&args, dir);
    assert!(o.status.success(), "{}", stderr(&o));
    let rec = last_line(&o);
    assert_eq!(field(&rec, "n"), "576");
    assert_eq!(field(&rec, "k"), "10");
    assert_eq!(field(&rec, "d"), "1");
    let first = fs::read(dir.join("a.ptk")).unwrap();
    assert_eq!(first.len(), 32 + 576 * 11 * 8);
    let o = run(&args, dir);
    assert!(o.status.success());
    assert_eq!(fs::read(dir.join("a.ptk")).unwrap(), first);
}

#[test]
fn missing_input_exits_2_naming_path() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(
        &["tokens", "--graph", "nowhere.txt", "--features", "absent.csv", "--basis", "cheb", "--K", "2", "--out", "o.ptk"],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("absent.csv"), "{}", stderr(&o));
}

#[test]
fn malformed_features_report_line() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    toy_inputs(dir);
    fs::write(dir.join("features.csv"), "0.1,0.2\n0.3,oops\n").unwrap();
    let o = tokens_cache(dir, "mono");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));
}

#[test]
fn train_is_deterministic_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    toy_inputs(dir);
    assert!(tokens_cache(dir, "mono").status.success());
    fs::write(dir.join("run.toml"), TRAIN_CONFIG).unwrap();
    let train = |seed: &str, out: &str| {
        run(
            &["train", "--config", "run.toml", "--tokens", "toy.ptk", "--labels", "labels.csv", "--seed", seed, "--out", out],
            dir,
        )
    };
    let a = train("1", "a");
    assert!(a.status.success(), "{}", stderr(&a));
    let b = train("2", "b");
    assert!(b.status.success(), "{}", stderr(&b));
    let a2 = train("1", "a2");
    assert_eq!(last_line(&a), last_line(&a2));
    for f in ["model.pfm", "history.csv", "config.toml"] {
        assert!(dir.join("a").join(f).exists(), "{f}");
    }
    let ca = fs::read(dir.join("a/model.pfm")).unwrap();
    assert_eq!(ca, fs::read(dir.join("a2/model.pfm")).unwrap());
    assert_ne!(ca, fs::read(dir.join("b/model.pfm")).unwrap());

    let replay = run(&["train", "--config", "a/config.toml", "--out", "replay"], dir);
    assert!(replay.status.success(), "{}", stderr(&replay));
    assert_eq!(last_line(&replay), last_line(&a));
    let rec = last_line(&a);
    for key in ["best_epoch", "best_val", "test", "epochs", "params"] {
        field(&rec, key);
    }
    assert_eq!(stdout(&a).lines().count(), 1);
}

#[test]
fn train_basis_mismatch_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    toy_inputs(dir);
    assert!(tokens_cache(dir, "bern").status.success());
    fs::write(dir.join("run.toml"), TRAIN_CONFIG).unwrap();
    let o = run(&["train", "--config", "run.toml", "--tokens", "toy.ptk", "--labels", "labels.csv", "--out", "o"], dir);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn invalid_config_rejected_before_training() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    toy_inputs(dir);
    assert!(tokens_cache(dir, "mono").status.success());
    fs::write(dir.join("bad.toml"), TRAIN_CONFIG.replace("heads = 2", "heads = 3")).unwrap();
    let o = run(&["train", "--config", "bad.toml", "--tokens", "toy.ptk", "--labels", "labels.csv", "--out", "o"], dir);
    assert_eq!(o.status.code(), Some(2));
    assert!(!dir.join("o/history.csv").exists());

    fs::write(dir.join("extra.toml"), TRAIN_CONFIG.replace("[train]", "[train]\nmomentum = 0.9")).unwrap();
    let o = run(&["train", "--config", "extra.toml", "--tokens", "toy.ptk", "--labels", "labels.csv", "--out", "o"], dir);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("momentum"), "{}", stderr(&o));
}

#[test]
fn divergence_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    toy_inputs(dir);
    assert!(tokens_cache(dir, "mono").status.success());
    fs::write(dir.join("run.toml"), TRAIN_CONFIG).unwrap();
    let o = run(
        &["train", "--config", "run.toml", "--tokens", "toy.ptk", "--labels", "labels.csv", "--lr", "1e300", "--out", "o"],
        dir,
    );
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn synth_small_grid_records_and_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let mut records = Vec::new();
    for model in ["polyattn", "unifilter", "selfattn"] {
        let o = run(
            &["synth", "--task", "low-and-high-pass", "--grid", "3x3", "--model", model, "--epochs", "50", "--out", model],
            dir,
        );
        assert!(o.status.success(), "{}", stderr(&o));
        let rec = last_line(&o);
        assert_eq!(field(&rec, "model"), model);
        let r2: f64 = field(&rec, "r2").parse().unwrap();
        assert!(r2.is_finite());
        for f in ["task.csv", "alpha.csv", "curves.csv", "config.toml"] {
            assert!(dir.join(model).join(f).exists(), "{model}/{f}");
        }
        records.push(rec);
    }
    let curves = fs::read_to_string(dir.join("polyattn/curves.csv")).unwrap();
    assert!(curves.starts_with("lambda,cluster_0,cluster_1"));
    assert_eq!(curves.lines().count(), 257);
    let task = fs::read_to_string(dir.join("polyattn/task.csv")).unwrap();
    assert!(task.starts_with("node_id,x,z,regime"));
    assert_eq!(task.lines().count(), 10);

    let replay = run(&["synth", "--config", "polyattn/config.toml", "--out", "replay"], dir);
    assert!(replay.status.success(), "{}", stderr(&replay));
    assert_eq!(last_line(&replay), records[0]);
}

#[test]
fn synth_unknown_task_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["synth", "--task", "sharpen", "--out", "o"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn verify_passes_and_names_injected_fault() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["verify", "--suite", "theorem"], tmp.path());
    assert!(o.status.success(), "{}", stdout(&o));
    assert_eq!(field(&last_line(&o), "failed"), "0");

    let o = run(&["verify", "--suite", "tokens", "--inject-fault"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("check=token-oracle suite=tokens status=FAIL"));
    assert!(stderr(&o).contains("token-oracle"));
}
