//! Data files derived from finished or partial run directories.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::envs::TaskId;
use crate::eval::compute_sne;
use crate::evolution::{OperatorTag, ReportRow, REPORT_HEADER};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{0}: not a run directory")]
    NotARun(PathBuf),
    #[error("{path}: {message}")]
    Malformed { path: PathBuf, message: String },
    #[error("SNE: {0}")]
    Sne(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Rows of a run's report.csv.
pub fn read_report(run: &Path) -> Result<Vec<ReportRow>, ReportError> {
    let path = run.join("report.csv");
    let text = fs::read_to_string(&path).map_err(|_| ReportError::NotARun(run.to_path_buf()))?;
    let mut lines = text.lines();
    if lines.next() != Some(REPORT_HEADER) {
        return Err(ReportError::Malformed {
            path,
            message: "unexpected header".into(),
        });
    }
    let bad = |n: usize, m: &str| ReportError::Malformed {
        path: path.clone(),
        message: format!("line {}: {m}", n + 2),
    };
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(bad(n, "expected 6 fields"));
        }
        rows.push(ReportRow {
            generation: f[0].parse().map_err(|_| bad(n, "generation"))?,
            task: f[1].parse().map_err(|_| bad(n, "task"))?,
            best_fitness: f[2].parse().map_err(|_| bad(n, "best_fitness"))?,
            mean_fitness: f[3].parse().map_err(|_| bad(n, "mean_fitness"))?,
            invalid_count: f[4].parse().map_err(|_| bad(n, "invalid_count"))?,
            kt_count: f[5].parse().map_err(|_| bad(n, "kt_count"))?,
        });
    }
    Ok(rows)
}

/// Best-so-far fitness per generation and task, generations 1 onwards.
pub fn trajectory_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from("generation,task,best_so_far\n");
    for r in rows.iter().filter(|r| r.generation >= 1) {
        out.push_str(&format!("{},{},{}\n", r.generation, r.task, r.best_fitness));
    }
    out
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct OperatorStats {
    pub offspring: usize,
    pub invalid: usize,
    /// Valid individuals not eliminated in the generation they were born.
    pub survived: usize,
}

/// Offspring and first-selection survival per operator, counted from the
/// individual files and the elimination log.
pub fn operator_stats(run: &Path) -> Result<BTreeMap<OperatorTag, OperatorStats>, ReportError> {
    let mut early: std::collections::BTreeSet<String> = Default::default();
    let archive = run.join("archive.jsonl");
    for line in fs::read_to_string(&archive).unwrap_or_default().lines() {
        let v: serde_json::Value = serde_json::from_str(line).map_err(|e| ReportError::Malformed {
            path: archive.clone(),
            message: e.to_string(),
        })?;
        if v["eliminated_in"] == v["generation"] {
            early.insert(v["id"].as_str().unwrap_or_default().to_string());
        }
    }
    let mut stats: BTreeMap<OperatorTag, OperatorStats> = BTreeMap::new();
    let niches = run.join("niches");
    if !niches.is_dir() {
        return Err(ReportError::NotARun(run.to_path_buf()));
    }
    for task in fs::read_dir(&niches)?.flatten() {
        for generation in fs::read_dir(task.path())?.flatten() {
            for file in fs::read_dir(generation.path())?.flatten() {
                let path = file.path();
                if path.extension().is_none_or(|e| e != "json") {
                    continue;
                }
                let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path)?).map_err(|e| ReportError::Malformed {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
                let op: OperatorTag = serde_json::from_value(v["lineage"]["operator"].clone()).map_err(|e| ReportError::Malformed {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
                let s = stats.entry(op).or_default();
                s.offspring += 1;
                if v["status"] == "invalid" {
                    s.invalid += 1;
                } else if !early.contains(v["id"].as_str().unwrap_or_default()) {
                    s.survived += 1;
                }
            }
        }
    }
    Ok(stats)
}

pub fn operators_csv(stats: &BTreeMap<OperatorTag, OperatorStats>) -> String {
    let mut out = String::from("operator,offspring,invalid,survived,survival_rate\n");
    for (op, s) in stats {
        let rate = if s.offspring == 0 { 0.0 } else { s.survived as f64 / s.offspring as f64 };
        out.push_str(&format!("{op},{},{},{},{rate}\n", s.offspring, s.invalid, s.survived));
    }
    out
}

/// Final best fitness per task.
pub fn final_best(rows: &[ReportRow]) -> BTreeMap<TaskId, f64> {
    let mut best = BTreeMap::new();
    for r in rows {
        best.insert(r.task, r.best_fitness);
    }
    best
}

/// SNE of `ready` against each variant over their shared tasks, with the per-task ratios.
pub fn sne_csv(ready: &Path, variants: &[PathBuf]) -> Result<String, ReportError> {
    let base = final_best(&read_report(ready)?);
    let mut out = String::from("variant,task,ready_fitness,variant_fitness,ratio\n");
    for v in variants {
        let other = final_best(&read_report(v)?);
        let tasks: Vec<TaskId> = base.keys().filter(|t| other.contains_key(t)).copied().collect();
        let r: Vec<f64> = tasks.iter().map(|t| base[t]).collect();
        let b: Vec<f64> = tasks.iter().map(|t| other[t]).collect();
        let sne = compute_sne(&r, &b).map_err(|e| ReportError::Sne(format!("{}: {e}", v.display())))?;
        for (i, t) in tasks.iter().enumerate() {
            out.push_str(&format!("{},{t},{},{},{}\n", v.display(), r[i], b[i], r[i] / b[i]));
        }
        out.push_str(&format!("{},all,,,{sne}\n", v.display()));
    }
    Ok(out)
}

/// Writes trajectory.csv, operators.csv and, with variants, sne.csv into `out`.
pub fn write_reports(run: &Path, variants: &[PathBuf], out: &Path) -> Result<Vec<PathBuf>, ReportError> {
    let rows = read_report(run)?;
    fs::create_dir_all(out)?;
    let mut written = vec![out.join("trajectory.csv"), out.join("operators.csv")];
    fs::write(&written[0], trajectory_csv(&rows))?;
    fs::write(&written[1], operators_csv(&operator_stats(run)?))?;
    if !variants.is_empty() {
        let p = out.join("sne.csv");
        fs::write(&p, sne_csv(run, variants)?)?;
        written.push(p);
    }
    Ok(written)
}
