use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde_json::Value;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn pcdbn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pcdbn")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Headed CSV of `side×side` images with a `label` column.
fn write_csv(path: &Path, rows: &[(Vec<f64>, usize)]) {
    let n = rows.first().map_or(1, |r| r.0.len());
    let mut s: Vec<String> = (0..n).map(|i| format!("p{i}")).collect();
    s.push("label".into());
    let mut text = s.join(",") + "\n";
    for (x, y) in rows {
        let mut cells: Vec<String> = x.iter().map(|v| v.to_string()).collect();
        cells.push(y.to_string());
        text += &(cells.join(",") + "\n");
    }
    std::fs::write(path, text).unwrap();
}

/// Label 1: left half lit; label 0: top half lit.
fn toy_rows(n: usize, seed: u64) -> Vec<(Vec<f64>, usize)> {
    let side = 6;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (0..n)
        .map(|t| {
            let y = t % 2;
            let x = (0..side * side)
                .map(|i| {
                    let on = if y == 1 { i % side < side / 2 } else { i / side < side / 2 };
                    if on { 0.8 + 0.2 * rng.gen::<f64>() } else { 0.2 * rng.gen::<f64>() }
                })
                .collect();
            (x, y)
        })
        .collect()
}

struct Toy {
    dir: tempfile::TempDir,
    config: PathBuf,
}

impl Toy {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        write_csv(&dir.path().join("train.csv"), &toy_rows(40, 1));
        write_csv(&dir.path().join("test.csv"), &toy_rows(20, 2));
        let config = dir.path().join("toy.conf");
        let text = format!(
            "# toy run\ntrain_csv = {0}/train.csv\ntest_csv = {0}/test.csv\nlayers = 2/3/2/chebyshev3\nreadout = grid2\n\
             epsilon = 4\nepochs = 20\nsoftmax_epochs = 500\nout = {0}/out\n",
            dir.path().display()
        );
        std::fs::write(&config, text).unwrap();
        Self { dir, config }
    }

    fn path(&self, p: &str) -> String {
        self.dir.path().join(p).display().to_string()
    }

    fn conf(&self) -> &str {
        self.config.to_str().unwrap()
    }
}

#[test]
fn audit_matches_hand_computed_sensitivity() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("zero.csv");
    write_csv(&csv, &[(vec![0.0], 0), (vec![0.0], 1)]);
    let out = dir.path().join("out");
    let o = pcdbn(&[
        "audit",
        "--seed",
        "1",
        "--out",
        out.to_str().unwrap(),
        "--set",
        &format!("train_csv={}", csv.display()),
        "--set",
        "layers=1/1/1/linear",
        "--set",
        "lrn_q=2",
        "--set",
        "lrn_beta=1",
        "--set",
        "readout=flatten",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(out.join("audit.jsonl")).unwrap();
    let rows: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows[0]["data"]["delta_lemma2"].as_f64(), Some(1.25));
    assert_eq!(rows.last().unwrap()["delta_c"].as_f64(), Some(1.25));
    assert!(stdout(&o).ends_with("ε spent: 0\n"));
}

#[test]
fn audit_reports_softmax_sensitivity_for_25_features() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("d.csv");
    write_csv(&csv, &[(vec![0.5; 144], 0), (vec![0.25; 144], 1)]);
    let out = dir.path().join("out");
    let o = pcdbn(&[
        "audit",
        "--seed",
        "3",
        "--out",
        out.to_str().unwrap(),
        "--set",
        &format!("train_csv={}", csv.display()),
        "--set",
        "layers=1/3/2/linear",
        "--set",
        "readout=grid5",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let last: Value = serde_json::from_str(stdout(&o).lines().filter(|l| l.starts_with('{')).last().unwrap()).unwrap();
    assert_eq!(last["feature_dim"].as_u64(), Some(25));
    assert_eq!(last["delta_c"].as_f64(), Some(181.25));
}

#[test]
fn noise_test_command() {
    let a = pcdbn(&["noise-test", "--epsilon", "1", "--delta", "2", "--n", "100000", "--seed", "4"]);
    assert!(a.status.success());
    let row: Value = serde_json::from_str(stdout(&a).lines().next().unwrap()).unwrap();
    assert_eq!(row["pass"], Value::Bool(true));
    assert_eq!(row["scale"].as_f64(), Some(2.0));
    assert!(stdout(&a).contains("ε spent: 0"));
    let b = pcdbn(&["noise-test", "--epsilon", "1", "--delta", "2", "--n", "100000", "--seed", "4"]);
    assert_eq!(stdout(&a), stdout(&b));
    assert_eq!(pcdbn(&["noise-test", "--epsilon", "1", "--delta", "2", "--n", "100"]).status.code(), Some(2));
}

#[test]
fn config_errors_exit_two() {
    let toy = Toy::new();
    let o = pcdbn(&["train", "--config", toy.conf(), "--seed", "1", "--epsilon", "0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("epsilon"));
    let o = pcdbn(&["train", "--config", toy.conf(), "--seed", "1", "--set", "colour=blue"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("colour"));
    assert_eq!(pcdbn(&["train", "--config", toy.conf()]).status.code(), Some(2));
    assert_eq!(pcdbn(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn data_errors_exit_three() {
    let toy = Toy::new();
    let missing = format!("train_csv={}", toy.path("nope.csv"));
    assert_eq!(pcdbn(&["train", "--config", toy.conf(), "--seed", "1", "--set", &missing]).status.code(), Some(3));

    let trained = pcdbn(&["train", "--config", toy.conf(), "--seed", "1"]);
    assert!(trained.status.success(), "{}", stderr(&trained));
    let model = toy.path("out/model.bin");
    let bytes = std::fs::read(&model).unwrap();
    std::fs::write(toy.path("bad.bin"), &bytes[..bytes.len() / 2]).unwrap();
    assert_eq!(pcdbn(&["eval", "--model", &toy.path("bad.bin"), "--config", toy.conf()]).status.code(), Some(3));

    write_csv(&toy.dir.path().join("empty.csv"), &[]);
    let empty = format!("test_csv={}", toy.path("empty.csv"));
    assert_eq!(pcdbn(&["eval", "--model", &model, "--config", toy.conf(), "--set", &empty]).status.code(), Some(3));
}

#[test]
fn train_then_eval_on_toy_data() {
    let toy = Toy::new();
    let private = pcdbn(&["train", "--config", toy.conf(), "--seed", "5"]);
    assert!(private.status.success(), "{}", stderr(&private));
    let text = stdout(&private);
    assert!(text.contains("ε spent: 4 (sealed)"), "{text}");
    // 40 instances are far too few for a useful private model; the accuracy
    // check runs on the noiseless pipeline
    let o = pcdbn(&["train", "--config", toy.conf(), "--seed", "5", "--epsilon", "inf"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("ε spent: 0"));
    let metrics = std::fs::read_to_string(toy.path("out/metrics.jsonl")).unwrap();
    assert!(metrics.lines().all(|l| serde_json::from_str::<Value>(l).is_ok()));

    let train_set = format!("test_csv={}", toy.path("train.csv"));
    let e = pcdbn(&["eval", "--model", &toy.path("out/model.bin"), "--config", toy.conf(), "--set", &train_set]);
    assert!(e.status.success(), "{}", stderr(&e));
    let row: Value = serde_json::from_str(stdout(&e).lines().next().unwrap()).unwrap();
    assert!(row["accuracy"].as_f64().unwrap() >= 0.95, "{row}");
    assert!(stdout(&e).contains("ε spent: 0"));
}

#[test]
fn artifacts_are_byte_identical() {
    let toy = Toy::new();
    for out in ["a", "b"] {
        let dir = format!("out={}", toy.path(out));
        assert!(pcdbn(&["train", "--config", toy.conf(), "--seed", "6", "--set", &dir]).status.success());
        assert!(pcdbn(&["audit", "--config", toy.conf(), "--seed", "6", "--set", &dir]).status.success());
    }
    for f in ["model.bin", "audit.jsonl"] {
        assert_eq!(std::fs::read(toy.path(&format!("a/{f}"))).unwrap(), std::fs::read(toy.path(&format!("b/{f}"))).unwrap());
    }
}

#[test]
fn l_sweep_table() {
    let toy = Toy::new();
    let o = pcdbn(&["l-sweep", "--config", toy.conf(), "--seed", "7", "--l-values", "1,2,3", "--set", "epochs=5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut r = csv::Reader::from_path(toy.path("out/sweep.csv")).unwrap();
    assert_eq!(r.headers().unwrap().iter().collect::<Vec<_>>(), vec!["L", "accuracy", "wall_time"]);
    assert_eq!(r.records().count(), 3);
    let dup = pcdbn(&["l-sweep", "--config", toy.conf(), "--seed", "7", "--l-values", "3,3"]);
    assert_eq!(dup.status.code(), Some(2));
}

#[test]
fn held_lock_blocks_a_second_writer() {
    let toy = Toy::new();
    std::fs::create_dir_all(toy.path("out")).unwrap();
    std::fs::write(toy.path("out/.pcdbn.lock"), "").unwrap();
    let o = pcdbn(&["train", "--config", toy.conf(), "--seed", "1"]);
    assert!(!o.status.success());
    assert!(!Path::new(&toy.path("out/model.bin")).exists());
}
