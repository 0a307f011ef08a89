use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gatebench"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

const TINY: &[&str] = &[
    "--num-seq", "12", "--seq-len", "10", "--lag", "2", "--dim", "2", "--hidden", "4",
    "--max-epochs", "3", "--lr-candidates", "2", "--search-epochs", "1",
];

fn with<'a>(head: &[&'a str], tail: &[&'a str]) -> Vec<&'a str> {
    head.iter().chain(tail).copied().collect()
}

#[test]
fn count_params_matches_reference_sizes() {
    let o = run(&["count-params", "--dim", "20", "--hidden", "195", "--cell", "lstm"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("lstm\t195\t169065"));
    let o = run(&["count-params", "--dim", "20", "--budget", "168900"]);
    assert!(stdout(&o).contains("gru\t227\t168888"), "{}", stdout(&o));
    assert!(stdout(&o).contains("tanh\t"));
}

#[test]
fn configuration_errors_exit_2() {
    assert_eq!(code(&run(&["train", "--cell", "rnn"])), 2);
    assert_eq!(code(&run(&["train", "--hidden", "4", "--budget", "40"])), 2);
    assert_eq!(code(&run(&["count-params", "--dim", "3"])), 2);
    assert_eq!(code(&run(&["train", "--patience", "many"])), 2);
}

#[test]
fn data_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.pianoroll");
    let o = run(&["train", "--task", "pianoroll", "--data", missing.to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    let bad = dir.path().join("bad.pianoroll");
    std::fs::write(&bad, "pianoroll v1 dim=4\n0;9\n").unwrap();
    assert_eq!(code(&run(&["train", "--task", "pianoroll", "--data", bad.to_str().unwrap()])), 3);
}

#[test]
fn diverging_search_exits_4() {
    let o = run(&[
        "lr-search", "--task", "signal", "--num-seq", "6", "--seq-len", "40", "--components", "2",
        "--hidden", "3", "--noise-std", "0", "--lr-candidates", "2", "--lr-log-lo", "705",
        "--lr-log-hi", "709", "--clip", "1e300", "--search-epochs", "1",
    ]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn gradcheck_passes_on_small_instances() {
    let args = ["gradcheck", "--cell", "lstm", "--hidden", "3", "--dim", "2", "--steps", "3", "--seeds", "2"];
    let o = run(&with(&args, &["--atol", "1e-9"]));
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert_eq!(stdout(&o).lines().filter(|l| l.contains(" ok ")).count(), 2);
    let o = run(&with(&args, &["--head", "gmm", "--gru-variant", "projection", "--atol", "1e-9"]));
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let o = run(&["gradcheck", "--cell", "gru", "--tol", "0"]);
    assert_eq!(code(&o), 4);
}

#[test]
fn lr_search_marks_one_winner() {
    let o = run(&with(&["lr-search"], TINY));
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 3);
    assert_eq!(text.matches('*').count(), 1);
}

fn files_in(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
}

#[test]
fn train_writes_outputs_and_eval_reads_the_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let out_s = out.to_str().unwrap();
    let o = run(&with(&["train", "--out-dir", out_s, "--cells", "tanh,gru", "--seeds", "1,2"], TINY));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let names = files_in(&out);
    for expected in [
        "results.csv",
        "table.txt",
        "curve_lag2_gru_s1.csv",
        "curve_lag2_tanh_s2.csv",
        "lag2_gru_s2.ckpt",
        "config_lag2_tanh_s1.txt",
    ] {
        assert!(names.iter().any(|n| n == expected), "{expected} missing from {names:?}");
    }
    let results = std::fs::read_to_string(out.join("results.csv")).unwrap();
    assert_eq!(results.lines().count(), 5);
    assert!(stdout(&o).contains("tanh") && stdout(&o).contains("gru"));

    let ckpt = out.join("lag2_gru_s1.ckpt");
    let config = out.join("config_lag2_gru_s1.txt");
    let o = run(&[
        "eval", "--config", config.to_str().unwrap(), "--checkpoint", ckpt.to_str().unwrap(), "--on", "test",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let line = stdout(&o);
    let value: f64 = line.trim().strip_prefix("test\t").unwrap().parse().unwrap();
    let row = results.lines().find(|l| l.starts_with("lag2,gru,") && l.ends_with(",1")).unwrap();
    let test_col: f64 = row.split(',').nth(4).unwrap().parse().unwrap();
    assert!((value - test_col).abs() <= 1e-5 * value.abs(), "{value} vs {test_col}");

    // a checkpoint for other data dimensions is a contract error
    let o = run(&["eval", "--dim", "5", "--checkpoint", ckpt.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
}

#[test]
fn identical_runs_give_identical_results() {
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for (name, extra) in [("a", None), ("b", Some("--sequential"))] {
        let out = dir.path().join(name);
        let mut args = with(&["train", "--out-dir", out.to_str().unwrap()], TINY);
        args.extend(extra);
        assert_eq!(code(&run(&args)), 0);
        files.push(std::fs::read(out.join("results.csv")).unwrap());
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn generated_data_round_trips_through_training() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("lag.pianoroll");
    let o = run(&with(&["gen-data", "--out", file.to_str().unwrap()], TINY));
    assert_eq!(code(&o), 0);
    assert!(std::fs::read_to_string(&file).unwrap().starts_with("pianoroll v1"));

    let direct = dir.path().join("direct");
    let from_file = dir.path().join("file");
    assert_eq!(code(&run(&with(&["train", "--out-dir", direct.to_str().unwrap()], TINY))), 0);
    let args = with(
        &[
            "train", "--out-dir", from_file.to_str().unwrap(), "--task", "pianoroll", "--data",
            file.to_str().unwrap(), "--dataset-name", "lag2",
        ],
        TINY,
    );
    assert_eq!(code(&run(&args)), 0);
    assert_eq!(
        std::fs::read(direct.join("results.csv")).unwrap(),
        std::fs::read(from_file.join("results.csv")).unwrap()
    );

    let signal = dir.path().join("sig.bin");
    let o = run(&[
        "gen-data", "--task", "signal", "--num-seq", "3", "--seq-len", "50", "--format", "binary", "--out",
        signal.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    assert!(std::fs::read(&signal).unwrap().starts_with(b"GBSG"));
}

#[test]
fn convert_pianoroll_from_json() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("corpus.json");
    std::fs::write(
        &json,
        r#"{"train": [[[60, 64, 67], [], [21]], [[108], [60]]],
            "valid": [[[62], [65, 62]]],
            "test": [[[70], [71], [72]]]}"#,
    )
    .unwrap();
    let out = dir.path().join("rolls");
    let o = run(&["convert-pianoroll", "--input", json.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(files_in(&out), ["test.pianoroll", "train.pianoroll", "valid.pianoroll"]);
    let train = gatebench::data::load_pianoroll(out.join("train.pianoroll")).unwrap();
    assert_eq!(train.dim, 88);
    assert_eq!(train.sequences[0], vec![vec![39, 43, 46], vec![], vec![0]]);
    assert_eq!(train.sequences[1][0], vec![87]);

    let o = run(&[
        "train", "--task", "pianoroll", "--train-data", out.join("train.pianoroll").to_str().unwrap(),
        "--valid-data", out.join("valid.pianoroll").to_str().unwrap(), "--test-data",
        out.join("test.pianoroll").to_str().unwrap(), "--hidden", "3", "--lr", "0.001", "--max-epochs", "1",
        "--out-dir", dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    std::fs::write(&json, r#"{"train": [[[20], [30]]], "valid": [], "test": []}"#).unwrap();
    let o = run(&["convert-pianoroll", "--input", json.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    std::fs::write(&json, "not json").unwrap();
    let o = run(&["convert-pianoroll", "--input", json.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]);
    assert_eq!(code(&o), 3);
}
