use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::ExperimentConfig;
use super::run::{resolve_output_dir, run_experiment, ExitStatus, RunOptions};
use crate::error::{Error, Result};

pub const SWEEP_CSV_HEADER: &str =
    "value,status,exit_code,iterations,task_accuracy,mean_ssim,mean_psnr,mean_mse,feature_cosine,feature_mse,error";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: String,
    pub status: ExitStatus,
    pub iterations: usize,
    pub task_accuracy: Option<f64>,
    pub mean_ssim: Option<f64>,
    pub mean_psnr: Option<f64>,
    pub mean_mse: Option<f64>,
    pub feature_cosine: Option<f64>,
    pub feature_mse: Option<f64>,
    pub error: Option<String>,
}

/// Parse a CLI value list: either a TOML array (`[1, 2]`, `[[0, 1], [2]]`)
/// or comma-separated scalars (`512,256,102`).
pub fn parse_values(text: &str) -> Result<Vec<toml::Value>> {
    let text = text.trim();
    if text.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let parse_one = |s: &str| -> Result<toml::Value> {
        let wrapped = format!("v = {s}");
        match toml::from_str::<toml::Table>(&wrapped) {
            Ok(mut t) => Ok(t.remove("v").expect("key present")),
            Err(_) => Ok(toml::Value::String(s.to_string())),
        }
    };
    let values = if text.starts_with('[') {
        match parse_one(text)? {
            toml::Value::Array(a) => a,
            _ => return Err(Error::Config(format!("cannot parse value list {text}"))),
        }
    } else {
        text.split(',').map(|s| parse_one(s.trim())).collect::<Result<Vec<_>>>()?
    };
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    Ok(values)
}

/// Set the dotted `path` (e.g. `defense.sigma`) inside a TOML document,
/// creating intermediate tables as needed.
pub fn set_path(doc: &mut toml::Value, path: &str, value: toml::Value) -> Result<()> {
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("bad axis path '{path}'")));
    }
    let mut cur = doc;
    for k in &keys[..keys.len() - 1] {
        let table = cur.as_table_mut().ok_or_else(|| Error::Config(format!("'{k}' in '{path}' is not a table")))?;
        cur = table.entry(k.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    let table = cur.as_table_mut().ok_or_else(|| Error::Config(format!("parent of '{path}' is not a table")))?;
    table.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

fn value_label(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn dir_label(v: &toml::Value) -> String {
    value_label(v).chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' }).collect()
}

/// One sub-run per value, all with the base seed. Sub-run failures become
/// rows with status `error`; the sweep itself only fails on bad input.
/// Results go to `<output>/sweep.csv`, sub-runs to `<output>/<axis>=<value>/`.
pub fn run_sweep(base: &toml::Value, axis: &str, values: &[toml::Value], opts: &RunOptions) -> Result<(PathBuf, Vec<SweepRow>)> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let base_cfg = ExperimentConfig::from_toml_value(base.clone())?;
    let mut probe = base.clone();
    set_path(&mut probe, axis, values[0].clone())?;
    let root = resolve_output_dir(&base_cfg, opts.output_dir.as_deref());
    let jobs: Vec<(String, Result<ExperimentConfig>)> = values
        .iter()
        .map(|v| {
            let mut doc = base.clone();
            let cfg = set_path(&mut doc, axis, v.clone()).and_then(|_| ExperimentConfig::from_toml_value(doc));
            (value_label(v), cfg)
        })
        .collect();
    let dirs: Vec<PathBuf> = values.iter().map(|v| root.join(format!("{axis}={}", dir_label(v)))).collect();
    let threads = opts.threads.max(1).min(jobs.len());
    let mut rows: Vec<Option<SweepRow>> = vec![None; jobs.len()];
    let run_one = |i: usize| -> SweepRow {
        let (label, cfg) = &jobs[i];
        let sub_opts = RunOptions { output_dir: Some(dirs[i].clone()), threads: 1 };
        let result = cfg.as_ref().map_err(|e| Error::Config(e.to_string())).and_then(|c| run_experiment(c, &sub_opts));
        match result {
            Ok(out) => SweepRow {
                value: label.clone(),
                status: out.status,
                iterations: out.report.iterations,
                task_accuracy: out.report.task_accuracy,
                mean_ssim: out.report.reconstruction.map(|r| r.mean_ssim),
                mean_psnr: out.report.reconstruction.map(|r| r.mean_psnr),
                mean_mse: out.report.reconstruction.map(|r| r.mean_mse),
                feature_cosine: out.report.feature_similarity.map(|f| f.cosine),
                feature_mse: out.report.feature_similarity.map(|f| f.mse),
                error: out.report.error.clone(),
            },
            Err(e) => SweepRow {
                value: label.clone(),
                status: ExitStatus::Error,
                iterations: 0,
                task_accuracy: None,
                mean_ssim: None,
                mean_psnr: None,
                mean_mse: None,
                feature_cosine: None,
                feature_mse: None,
                error: Some(e.to_string()),
            },
        }
    };
    if threads <= 1 {
        for (i, slot) in rows.iter_mut().enumerate() {
            *slot = Some(run_one(i));
        }
    } else {
        let next = std::sync::atomic::AtomicUsize::new(0);
        let done = std::sync::Mutex::new(&mut rows);
        std::thread::scope(|s| {
            for _ in 0..threads {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                    if i >= jobs.len() {
                        break;
                    }
                    let row = run_one(i);
                    done.lock().expect("sweep results lock")[i] = Some(row);
                });
            }
        });
    }
    let rows: Vec<SweepRow> = rows.into_iter().map(|r| r.expect("every job ran")).collect();
    fs::create_dir_all(&root)?;
    write_sweep_csv(&root.join("sweep.csv"), &rows)?;
    Ok((root, rows))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut s = String::from(SWEEP_CSV_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            csv_field(&r.value),
            r.status.label(),
            r.status.code(),
            r.iterations,
            opt(r.task_accuracy),
            opt(r.mean_ssim),
            opt(r.mean_psnr),
            opt(r.mean_mse),
            opt(r.feature_cosine),
            opt(r.feature_mse),
            csv_field(r.error.as_deref().unwrap_or("")),
        );
    }
    fs::write(path, s)?;
    Ok(())
}
