//! Fitness of reward programs: train a policy with the reward, test it on
//! held-out instances, aggregate normalized final costs.

mod fitness;
mod scheduler;

use thiserror::Error;

pub use fitness::{evaluate_fitness, BudgetUsed, EvalBudget, FitnessReport, Profile, RunBudget, REPORT_VERSION};
pub use scheduler::{cache_key, suite_digest, workers_from_env, CacheStats, EvalJob, Evaluator, FitnessCache, WORKERS_ENV};

use crate::envs::EnvError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("evaluation setup: {0}")]
    Env(EnvError),
    #[error("invalid budget: {0}")]
    Budget(String),
    #[error("evaluation worker crashed twice: {0}")]
    WorkerCrash(String),
    #[error("SNE: {0}")]
    Sne(String),
    #[error("fitness cache: {0}")]
    Cache(#[from] std::io::Error),
}

/// `(y_final - y_star) / (y_initial - y_star)`, 0 when the start already sits
/// on the optimum, never negative.
pub fn normalized_score(y_initial: f64, y_final: f64, y_star: f64) -> f64 {
    let span = y_initial - y_star;
    if span == 0.0 {
        return 0.0;
    }
    ((y_final - y_star) / span).max(0.0)
}

/// Median with the lower-middle element for even lengths. `None` when empty.
pub fn lower_median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(v[(v.len() - 1) / 2])
}

/// Per-row medians and their mean. Rows are instances, columns runs.
pub fn aggregate(score_matrix: &[Vec<f64>]) -> (Vec<f64>, f64) {
    let medians: Vec<f64> = score_matrix
        .iter()
        .map(|row| lower_median(row).unwrap_or(f64::INFINITY))
        .collect();
    let fitness = if medians.is_empty() {
        f64::INFINITY
    } else {
        medians.iter().sum::<f64>() / medians.len() as f64
    };
    (medians, fitness)
}

/// Mean over tasks of `ready / baseline`.
pub fn compute_sne(ready: &[f64], baseline: &[f64]) -> Result<f64, EvalError> {
    if ready.len() != baseline.len() {
        return Err(EvalError::Sne(format!(
            "{} ready scores against {} baseline scores",
            ready.len(),
            baseline.len()
        )));
    }
    if ready.is_empty() {
        return Err(EvalError::Sne("no tasks".into()));
    }
    let mut sum = 0.0;
    for (k, (r, b)) in ready.iter().zip(baseline).enumerate() {
        if !r.is_finite() || !b.is_finite() {
            return Err(EvalError::Sne(format!("task {k} has a non-finite score")));
        }
        if *b == 0.0 {
            return Err(EvalError::Sne(format!("task {k} has a zero baseline score")));
        }
        sum += r / b;
    }
    Ok(sum / ready.len() as f64)
}

/// Serializes non-finite fitness as `null` and reads `null` back as `+inf`.
pub mod sentinel {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}
