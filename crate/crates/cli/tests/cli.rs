use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn dockflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dockflow")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn text(out: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr))
}

fn small_corpus(root: &Path) -> PathBuf {
    let dir = root.join("corpus");
    let out = dockflow(&[
        "generate", "--out", dir.to_str().unwrap(), "--stations", "12", "--fleet", "100", "--weekdays", "3", "--weekends", "2",
    ]);
    assert_eq!(code(&out), 0, "{}", text(&out));
    dir
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(code(&dockflow(&["simulate", "--no-such-flag"])), 1);
    assert_eq!(code(&dockflow(&["simulate", "--corpus", "x", "--alpha", "-2"])), 1);
    assert_eq!(code(&dockflow(&["sweep", "--corpus", "x", "--seeds", "5-1"])), 1);
    assert_eq!(code(&dockflow(&["--help"])), 0);
}

#[test]
fn missing_cache_and_bad_data_exit_with_two() {
    let root = tempfile::tempdir().unwrap();
    let corpus = small_corpus(root.path());
    let out = dockflow(&["simulate", "--corpus", s(&corpus)]);
    assert_eq!(code(&out), 2);
    assert!(text(&out).contains("--fit-on-the-fly"), "{}", text(&out));

    let rides = corpus.join("rides.csv");
    let mut body = fs::read_to_string(&rides).unwrap();
    body.push_str("7,not a time,1,2010-07-30 06:22:00,1\n");
    fs::write(&rides, body).unwrap();
    let out = dockflow(&["fit", "--corpus", s(&corpus)]);
    assert_eq!(code(&out), 2);
    assert!(text(&out).contains("line"), "{}", text(&out));
}

#[test]
fn fit_cache_is_reused_and_invalidated_by_c_max() {
    let root = tempfile::tempdir().unwrap();
    let corpus = small_corpus(root.path());
    let first = dockflow(&["fit", "--corpus", s(&corpus)]);
    assert_eq!(code(&first), 0, "{}", text(&first));
    assert!(text(&first).contains("fitted models written"));
    let again = dockflow(&["fit", "--corpus", s(&corpus)]);
    assert!(text(&again).contains("models up to date"), "{}", text(&again));
    let changed = dockflow(&["fit", "--corpus", s(&corpus), "--c-max", "15"]);
    assert!(text(&changed).contains("fitted models written"), "{}", text(&changed));
    // simulate now needs the c_max it was fitted with
    assert_eq!(code(&dockflow(&["simulate", "--corpus", s(&corpus), "--c-max", "15", "--out", s(&root.path().join("a.csv"))])), 0);
    assert_eq!(code(&dockflow(&["simulate", "--corpus", s(&corpus), "--out", s(&root.path().join("b.csv"))])), 2);
}

#[test]
fn one_cell_sweep_matches_simulate_and_resumes() {
    let root = tempfile::tempdir().unwrap();
    let corpus = small_corpus(root.path());
    assert_eq!(code(&dockflow(&["fit", "--corpus", s(&corpus)])), 0);

    let single = root.path().join("single.csv");
    let out = dockflow(&["simulate", "--corpus", s(&corpus), "--trucks", "0", "--seed", "2", "--out", s(&single)]);
    assert_eq!(code(&out), 0, "{}", text(&out));
    assert!(single.with_file_name("single.csv.manifest.json").exists());

    let summary = root.path().join("grid.csv");
    let runs = root.path().join("grid.runs.csv");
    let out = dockflow(&["sweep", "--corpus", s(&corpus), "--trucks", "0", "--alpha", "inf", "--seeds", "1-2", "--out", s(&summary)]);
    assert_eq!(code(&out), 0, "{}", text(&out));
    let first = fs::read_to_string(&runs).unwrap();
    let simulated = fs::read_to_string(&single).unwrap();
    let row = simulated.lines().nth(1).unwrap();
    assert!(first.lines().any(|l| l == row), "{first}\n{row}");

    let out = dockflow(&[
        "sweep", "--corpus", s(&corpus), "--trucks", "0", "--alpha", "inf", "--seeds", "1-3", "--out", s(&summary), "--resume",
    ]);
    assert_eq!(code(&out), 0, "{}", text(&out));
    let resumed = fs::read_to_string(&runs).unwrap();
    assert_eq!(resumed.lines().count(), 4);
    for line in first.lines() {
        assert!(resumed.lines().any(|l| l == line));
    }

    let report = root.path().join("report.csv");
    let out = dockflow(&["report", "--runs", s(&runs), "--out", s(&report)]);
    assert_eq!(code(&out), 0, "{}", text(&out));
    assert_eq!(fs::read_to_string(&report).unwrap(), fs::read_to_string(&summary).unwrap());
}
