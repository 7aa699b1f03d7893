use std::path::Path;
use std::process::{Command, Output};

use nmwpm::evaluator::{read_histogram_csv, read_results_csv};
use nmwpm::io::Dataset;

fn nmwpm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nmwpm"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn assert_ok(o: &Output) {
    assert!(
        o.status.success(),
        "exit {:?}\n{}",
        o.status.code(),
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn bench_at_zero_noise_reports_zero_rates() {
    let dir = tempfile::tempdir().unwrap();
    let o = nmwpm(
        dir.path(),
        &[
            "bench",
            "--out",
            "b",
            "--override",
            "p=0,0",
            "--override",
            "distances=4,5",
            "--override",
            "shots=50",
        ],
    );
    assert_ok(&o);
    let rows = read_results_csv(&dir.path().join("b/results.csv")).unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows
        .iter()
        .all(|r| r.failures == 0 && r.ler == 0.0 && r.decoder == "mwpm_manhattan"));
}

#[test]
fn decode_prints_the_single_pair() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("syn.txt"), "# two X defects\n0 1\n").unwrap();
    let o = nmwpm(dir.path(), &["decode", "--out", "d", "--override", "syndrome=syn.txt"]);
    assert_ok(&o);
    let out = stdout(&o);
    assert_eq!(out.lines().filter(|l| l.starts_with("pair ")).count(), 1, "{out}");
    assert!(out.contains("pair 0 1"));
    assert_eq!(std::fs::read_to_string(dir.path().join("d/decode.txt")).unwrap(), out);
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.cfg"), "shots = 10\nshotz = 3\n").unwrap();
    for args in [
        vec!["bench", "--config", "bad.cfg"],
        vec!["bench", "--override", "noise=quantum"],
        vec!["bench", "--override", "p=2"],
        vec!["bench", "--override", "decoders=nmwpm", "--override", "shots=5"],
        vec!["bench", "--config", "missing.cfg"],
        vec!["frobnicate"],
    ] {
        let o = nmwpm(dir.path(), &args);
        assert_eq!(
            o.status.code(),
            Some(2),
            "{args:?}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
}

#[test]
fn runtime_errors_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let o = nmwpm(
        dir.path(),
        &[
            "bench",
            "--override",
            "decoders=nmwpm",
            "--override",
            "checkpoint=nope.ckpt",
            "--override",
            "shots=5",
        ],
    );
    assert_eq!(o.status.code(), Some(3));
    std::fs::write(dir.path().join("syn.txt"), "0 999\n").unwrap();
    let o = nmwpm(dir.path(), &["decode", "--override", "syndrome=syn.txt"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn manifest_replays_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let o = nmwpm(
        dir.path(),
        &[
            "bench",
            "--out",
            "a",
            "--seed",
            "11",
            "--override",
            "shots=400",
            "--override",
            "p=0.08,0.1",
            "--override",
            "distances=4",
        ],
    );
    assert_ok(&o);
    let manifest = std::fs::read_to_string(dir.path().join("a/manifest.txt")).unwrap();
    assert!(manifest.contains("seed = 11"));
    std::fs::copy(dir.path().join("a/manifest.txt"), dir.path().join("replay.cfg")).unwrap();
    let o = nmwpm(
        dir.path(),
        &["bench", "--out", "b", "--threads", "1", "--config", "replay.cfg"],
    );
    assert_ok(&o);
    let a = std::fs::read(dir.path().join("a/results.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b/results.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn threshold_reports_a_crossing() {
    let dir = tempfile::tempdir().unwrap();
    let o = nmwpm(
        dir.path(),
        &[
            "threshold",
            "--out",
            "t",
            "--override",
            "distances=4,6",
            "--override",
            "p=0.04,0.08,0.12,0.16",
            "--override",
            "shots=3000",
        ],
    );
    assert_ok(&o);
    let text = std::fs::read_to_string(dir.path().join("t/threshold.txt")).unwrap();
    let p: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("threshold "))
        .and_then(|r| r.split_whitespace().next())
        .unwrap()
        .parse()
        .unwrap();
    assert!((0.06..0.14).contains(&p), "{text}");
    assert_eq!(read_results_csv(&dir.path().join("t/results.csv")).unwrap().len(), 8);
}

#[test]
fn labeling_commands_write_their_files() {
    let dir = tempfile::tempdir().unwrap();
    let o = nmwpm(dir.path(), &["gen-data", "--out", "g", "--override", "records=40"]);
    assert_ok(&o);
    let ds = Dataset::load(&dir.path().join("g/dataset.bin")).unwrap();
    assert!(ds.records.len() >= 38 && ds.distance == 4);
    let o = nmwpm(
        dir.path(),
        &[
            "gt-audit",
            "--out",
            "g",
            "--override",
            "p=0.05,0.1",
            "--override",
            "shots=200",
        ],
    );
    assert_ok(&o);
    let audit = std::fs::read_to_string(dir.path().join("g/gt_audit.csv")).unwrap();
    assert_eq!(audit.lines().count(), 3);
}

#[test]
fn train_then_hist_and_neural_decode() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("tiny.cfg"),
        "d_hidden = 8\ngnn_layers = 1\nheads = 2\nenc_layers = 1\nepochs = 2\nbatches_per_epoch = 2\nbatch_size = 4\nhist_bins = 5\neval_shots = 20\n",
    )
    .unwrap();
    let o = nmwpm(dir.path(), &["train", "--config", "tiny.cfg", "--out", "m"]);
    assert_ok(&o);
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("epoch")).count(), 2);
    let metrics = std::fs::read_to_string(dir.path().join("m/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 3);
    let ckpt = ["--override", "checkpoint=m/model.ckpt"];
    let o = nmwpm(
        dir.path(),
        &[&["hist", "--config", "tiny.cfg", "--out", "h"][..], &ckpt].concat(),
    );
    assert_ok(&o);
    assert_eq!(
        read_histogram_csv(&dir.path().join("h/histogram.csv")).unwrap().len(),
        5
    );
    std::fs::write(dir.path().join("syn.txt"), "0 1\n").unwrap();
    let o = nmwpm(
        dir.path(),
        &[
            &["decode", "--config", "tiny.cfg", "--override", "syndrome=syn.txt"][..],
            &ckpt,
        ]
        .concat(),
    );
    assert_ok(&o);
    assert!(stdout(&o).starts_with("decoder nmwpm\npair 0 1\n"));
    // A checkpoint for L=4 does not load on L=6.
    let o = nmwpm(
        dir.path(),
        &[&["hist", "--config", "tiny.cfg", "--override", "distance=6"][..], &ckpt].concat(),
    );
    assert_eq!(o.status.code(), Some(3));
}
