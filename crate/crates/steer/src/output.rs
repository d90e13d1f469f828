//! CSV results and JSON traces.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use crate::error::{HarnessError, Result};
use crate::run::{ResultRow, RunRecord, SweepCell};

/// Environment variable naming the directory all outputs go under.
pub const OUTPUT_ROOT_VAR: &str = "STEER_OUTPUT_ROOT";

pub const CSV_HEADER: &str = "task,family,A,K,N,seed,final_fy,mae,wall_s,model_calls,pred_calls,backprop_calls";

pub const SWEEP_HEADER: &str = "budget,A,K,seeds,mean_fy,sd_fy,se_fy,mean_mae,mean_wall_s,frontier";

/// `$STEER_OUTPUT_ROOT`, or `steer-out` in the working directory.
pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_VAR).map_or_else(|| PathBuf::from("steer-out"), PathBuf::from)
}

/// 17 significant digits, enough to round-trip an `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn row_fields(r: &ResultRow) -> [String; 12] {
    [
        r.task.clone(),
        r.family.clone(),
        r.a.to_string(),
        r.k.to_string(),
        r.n.to_string(),
        r.seed.to_string(),
        fmt_f64(r.final_fy),
        fmt_f64(r.mae),
        fmt_f64(r.wall_s),
        r.cost.model_calls.to_string(),
        r.cost.pred_calls.to_string(),
        r.cost.backprop_calls.to_string(),
    ]
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    Ok(())
}

/// Opens `path` for appending under `header`, writing the header to new or
/// empty files. An existing file with a different header is an error.
fn open_append(path: &Path, header: &str) -> Result<(csv::Writer<File>, bool)> {
    ensure_parent(path)?;
    let mut fresh = true;
    if let Ok(f) = File::open(path) {
        let mut first = String::new();
        BufReader::new(f).read_line(&mut first).map_err(|e| HarnessError::io(path, e))?;
        if !first.is_empty() {
            if first.trim_end() != header {
                return Err(HarnessError::config(format!(
                    "{}: existing CSV has a different header",
                    path.display()
                )));
            }
            fresh = false;
        }
    }
    let file = OpenOptions::new().create(true).append(true).open(path).map_err(|e| HarnessError::io(path, e))?;
    Ok((csv::WriterBuilder::new().has_headers(false).from_writer(file), fresh))
}

/// Appends rows to the results CSV.
pub fn append_rows<'a>(path: &Path, rows: impl IntoIterator<Item = &'a ResultRow>) -> Result<()> {
    let (mut w, fresh) = open_append(path, CSV_HEADER)?;
    if fresh {
        w.write_record(CSV_HEADER.split(','))?;
    }
    for r in rows {
        w.write_record(row_fields(r))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))?;
    Ok(())
}

/// Writes the sweep summary (one row per cell) to `path`, replacing it.
pub fn write_sweep(path: &Path, cells: &[SweepCell], frontier: &[&SweepCell]) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SWEEP_HEADER.split(','))?;
    for c in cells {
        let best = frontier.iter().any(|f| std::ptr::eq(*f, c));
        w.write_record([
            c.budget.to_string(),
            c.a.to_string(),
            c.k.to_string(),
            c.seeds.to_string(),
            fmt_f64(c.mean_fy),
            fmt_f64(c.sd_fy),
            fmt_f64(c.se_fy),
            fmt_f64(c.mean_mae),
            fmt_f64(c.mean_wall_s),
            best.to_string(),
        ])?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))?;
    Ok(())
}

/// File name of a run's trace.
pub fn trace_name(r: &ResultRow) -> String {
    let task: String = r.task.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect();
    format!("{task}-{}-A{}-K{}-seed{}.json", r.family, r.a, r.k, r.seed)
}

/// Writes `{row, trace}` JSON documents under `dir`.
pub fn write_traces(dir: &Path, records: &[RunRecord]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    for rec in records {
        let path = dir.join(trace_name(&rec.row));
        let doc = serde_json::json!({ "row": rec.row, "trace": rec.trace });
        let text = serde_json::to_string_pretty(&doc)?;
        fs::write(&path, text).map_err(|e| HarnessError::io(&path, e))?;
    }
    Ok(())
}
