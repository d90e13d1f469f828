use std::fs;
use std::process::Command;

use steer::config::ExperimentConfig;
use steer::output::{append_rows, fmt_f64, trace_name, write_traces, CSV_HEADER, OUTPUT_ROOT_VAR};
use steer::run::{run_config, sweep};
use steer::toys;

fn small(text: &str, seeds: usize) -> ExperimentConfig {
    let mut cfg = toys::load(text);
    cfg.search.seeds = seeds;
    cfg.schedule.steps = 6;
    cfg
}

#[test]
fn floats_round_trip_through_the_csv_format() {
    for v in [0.1, -2.5e-300, 1.0 / 3.0, f64::MAX, 0.0] {
        assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
    }
}

#[test]
fn append_writes_one_header_then_rows() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested/results.csv");
    let records = run_config(&small(toys::TOKEN_COUNT, 3)).unwrap();
    append_rows(&path, records.iter().map(|r| &r.row)).unwrap();
    append_rows(&path, records.iter().map(|r| &r.row)).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], CSV_HEADER);
    assert_eq!(lines.len(), 7);
    assert_eq!(lines.iter().filter(|l| **l == CSV_HEADER).count(), 1);
    let first: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(first.len(), CSV_HEADER.split(',').count());
    assert_eq!(&first[..6], ["discrete-tabular/token-count", "sample-current", "1", "8", "16", "0"]);
    assert_eq!(first[6].parse::<f64>().unwrap(), records[0].row.final_fy);
}

#[test]
fn append_refuses_a_foreign_header() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("results.csv");
    fs::write(&path, "a,b,c\n1,2,3\n").unwrap();
    let records = run_config(&small(toys::TOKEN_COUNT, 1)).unwrap();
    let err = append_rows(&path, records.iter().map(|r| &r.row)).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert_eq!(fs::read_to_string(&path).unwrap(), "a,b,c\n1,2,3\n");
}

#[test]
fn traces_are_json_with_row_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let records = run_config(&small(toys::CONTINUOUS_COUNT, 2)).unwrap();
    write_traces(dir.path(), &records).unwrap();
    for r in &records {
        let text = fs::read_to_string(dir.path().join(trace_name(&r.row))).unwrap();
        let doc: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(doc["row"]["seed"], r.row.seed);
        assert_eq!(doc["trace"]["steps"].as_array().unwrap().len(), 6);
    }
}

#[test]
fn sweep_covers_every_split_and_picks_the_best() {
    let result = sweep(&small(toys::TOKEN_COUNT, 4), &[1, 4]).unwrap();
    let cells: Vec<(usize, usize, usize)> = result.cells.iter().map(|c| (c.budget, c.a, c.k)).collect();
    assert_eq!(cells, [(1, 1, 1), (4, 1, 4), (4, 2, 2), (4, 4, 1)]);
    assert_eq!(result.records.len(), 16);
    let frontier = result.frontier();
    assert_eq!(frontier.len(), 2);
    let best4 = result.cells[1..].iter().map(|c| c.mean_fy).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(frontier[1].mean_fy, best4);
}

fn steer() -> Command {
    Command::new(env!("CARGO_BIN_EXE_steer"))
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.toml");
    fs::write(&good, small(toys::TOKEN_COUNT, 2).to_toml()).unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[task]\nkind = \"nope\"\n").unwrap();

    let run = steer().env(OUTPUT_ROOT_VAR, dir.path()).arg("run").arg(&good).output().unwrap();
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    let csv = fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);

    let invalid = steer().env(OUTPUT_ROOT_VAR, dir.path()).arg("run").arg(&bad).output().unwrap();
    assert_eq!(invalid.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&invalid.stderr).contains("bad.toml"));

    let missing = steer().arg("run").arg(dir.path().join("missing.toml")).output().unwrap();
    assert_eq!(missing.status.code(), Some(1));

    assert_eq!(steer().args(["toy", "nope"]).output().unwrap().status.code(), Some(2));
    let toy = steer().args(["toy", "classifier"]).output().unwrap();
    assert_eq!(toy.status.code(), Some(0));
    assert_eq!(String::from_utf8(toy.stdout).unwrap(), toys::CLASSIFIER);
}

#[test]
fn verify_passes() {
    for check in steer::verify::run_all().unwrap() {
        assert!(check.passed, "{check}");
    }
}
