use std::collections::HashMap;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::{evaluate_fitness, EvalError, FitnessReport, RunBudget, REPORT_VERSION};
use crate::envs::MetaTask;
use crate::problems::ProblemSuite;
use crate::rsl::RewardProgram;

/// Environment variable overriding the worker count.
pub const WORKERS_ENV: &str = "REWARD_DISCOVERY_WORKERS";

/// SHA-256 of the suite manifest.
pub fn suite_digest(suite: &ProblemSuite) -> String {
    let json = serde_json::to_vec(&suite.manifest()).expect("manifest serializes");
    hex::encode(Sha256::digest(&json))
}

#[derive(Serialize)]
struct KeyParts<'a> {
    version: u32,
    reward: &'a str,
    task: &'a MetaTask,
    schema_version: u32,
    seed: u64,
    budget: RunBudget,
    suite: &'a str,
}

/// Content address of one evaluation.
pub fn cache_key(reward: &RewardProgram, task: &MetaTask, seed: u64, budget: RunBudget, suite_digest: &str) -> String {
    let parts = KeyParts {
        version: REPORT_VERSION,
        reward: reward.content_hash(),
        task,
        schema_version: task.task_id.schema_version(),
        seed,
        budget,
        suite: suite_digest,
    };
    hex::encode(Sha256::digest(serde_json::to_vec(&parts).expect("key serializes")))
}

/// Reports by cache key, in memory and optionally under `<dir>/<key>.json`.
#[derive(Debug, Default)]
pub struct FitnessCache {
    dir: Option<PathBuf>,
    mem: RwLock<HashMap<String, FitnessReport>>,
}

impl FitnessCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn persistent(dir: &Path) -> Result<Self, EvalError> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: Some(dir.to_path_buf()),
            mem: RwLock::default(),
        })
    }

    pub fn get(&self, key: &str) -> Option<FitnessReport> {
        if let Some(r) = self.mem.read().unwrap().get(key) {
            return Some(r.clone());
        }
        let path = self.dir.as_ref()?.join(format!("{key}.json"));
        let report: FitnessReport = serde_json::from_slice(&fs::read(path).ok()?).ok()?;
        if report.version != REPORT_VERSION {
            return None;
        }
        self.mem.write().unwrap().insert(key.to_string(), report.clone());
        Some(report)
    }

    pub fn insert(&self, key: &str, report: &FitnessReport) -> Result<(), EvalError> {
        let mut mem = self.mem.write().unwrap();
        if mem.contains_key(key) {
            return Ok(());
        }
        if let Some(dir) = &self.dir {
            let tmp = dir.join(format!("{key}.json.tmp"));
            fs::write(&tmp, serde_json::to_vec_pretty(report).expect("report serializes"))?;
            fs::rename(&tmp, dir.join(format!("{key}.json")))?;
        }
        mem.insert(key.to_string(), report.clone());
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.mem.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One evaluation request.
#[derive(Clone)]
pub struct EvalJob {
    pub reward: RewardProgram,
    pub task: MetaTask,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
}

type Runner = dyn Fn(&EvalJob) -> Result<FitnessReport, EvalError> + Send + Sync;

/// Evaluates batches of jobs on a bounded pool, consulting the cache first.
pub struct Evaluator {
    suite: Arc<ProblemSuite>,
    suite_digest: String,
    budget: RunBudget,
    cache: FitnessCache,
    pool: rayon::ThreadPool,
    workers: usize,
    hits: AtomicU64,
    misses: AtomicU64,
    runner: Option<Arc<Runner>>,
}

impl Evaluator {
    pub fn new(suite: Arc<ProblemSuite>, budget: RunBudget, workers: usize) -> Result<Self, EvalError> {
        if budget.gamma == 0 {
            return Err(EvalError::Budget("gamma must be at least 1".into()));
        }
        let workers = workers.max(1);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| EvalError::Budget(format!("worker pool: {e}")))?;
        Ok(Self {
            suite_digest: suite_digest(&suite),
            suite,
            budget,
            cache: FitnessCache::in_memory(),
            pool,
            workers,
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
            runner: None,
        })
    }

    pub fn with_cache(mut self, cache: FitnessCache) -> Self {
        self.cache = cache;
        self
    }

    /// Replaces the measurement itself, for tests and dry runs. The cache and
    /// the crash policy still apply.
    pub fn with_runner(mut self, runner: impl Fn(&EvalJob) -> Result<FitnessReport, EvalError> + Send + Sync + 'static) -> Self {
        self.runner = Some(Arc::new(runner));
        self
    }

    pub fn budget(&self) -> RunBudget {
        self.budget
    }

    pub fn suite(&self) -> &ProblemSuite {
        &self.suite
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
        }
    }

    pub fn key(&self, job: &EvalJob) -> String {
        cache_key(&job.reward, &job.task, job.seed, self.budget, &self.suite_digest)
    }

    fn run_once(&self, job: &EvalJob) -> Result<FitnessReport, EvalError> {
        match &self.runner {
            Some(r) => r(job),
            None => evaluate_fitness(&job.reward, &job.task, &self.suite, self.budget, job.seed),
        }
    }

    /// Runs a job, retrying once if the worker panics.
    fn run_guarded(&self, job: &EvalJob) -> Result<FitnessReport, EvalError> {
        let mut last = String::new();
        for attempt in 0..2 {
            match panic::catch_unwind(AssertUnwindSafe(|| self.run_once(job))) {
                Ok(r) => return r,
                Err(p) => {
                    last = p
                        .downcast_ref::<String>()
                        .cloned()
                        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                        .unwrap_or_else(|| "unknown panic".into());
                    log::warn!("evaluation worker crashed (attempt {}): {last}", attempt + 1);
                }
            }
        }
        Err(EvalError::WorkerCrash(last))
    }

    pub fn evaluate(&self, job: &EvalJob) -> Result<FitnessReport, EvalError> {
        self.schedule(std::slice::from_ref(job)).pop().expect("one result per job")
    }

    /// Results in request order. Duplicate jobs in a batch run once and share
    /// the result; cached jobs are not run at all.
    pub fn schedule(&self, jobs: &[EvalJob]) -> Vec<Result<FitnessReport, EvalError>> {
        let keys: Vec<String> = jobs.iter().map(|j| self.key(j)).collect();
        let mut first: HashMap<&str, usize> = HashMap::new();
        let mut todo = Vec::new();
        for (i, k) in keys.iter().enumerate() {
            if first.contains_key(k.as_str()) {
                continue;
            }
            first.insert(k, i);
            if self.cache.get(k).is_some() {
                self.hits.fetch_add(1, Ordering::Relaxed);
            } else {
                self.misses.fetch_add(1, Ordering::Relaxed);
                todo.push(i);
            }
        }
        let fresh: Vec<(usize, Result<FitnessReport, EvalError>)> = self.pool.install(|| {
            todo.par_iter()
                .map(|&i| (i, self.run_guarded(&jobs[i])))
                .collect()
        });
        let mut computed: HashMap<usize, Result<FitnessReport, EvalError>> = HashMap::new();
        for (i, r) in fresh {
            if let Ok(report) = &r {
                if let Err(e) = self.cache.insert(&keys[i], report) {
                    log::warn!("could not persist fitness report: {e}");
                }
            }
            computed.insert(i, r);
        }
        keys.iter()
            .map(|k| {
                let i = first[k.as_str()];
                match computed.get(&i) {
                    Some(Ok(r)) => Ok(r.clone()),
                    Some(Err(e)) => Err(clone_error(e)),
                    None => Ok(self.cache.get(k).expect("cached before dispatch")),
                }
            })
            .collect()
    }
}

fn clone_error(e: &EvalError) -> EvalError {
    match e {
        EvalError::Env(e) => EvalError::Env(e.clone()),
        EvalError::Budget(s) => EvalError::Budget(s.clone()),
        EvalError::WorkerCrash(s) => EvalError::WorkerCrash(s.clone()),
        EvalError::Sne(s) => EvalError::Sne(s.clone()),
        EvalError::Cache(e) => EvalError::Cache(std::io::Error::new(e.kind(), e.to_string())),
    }
}

/// Worker count from the override variable, else `default`.
pub fn workers_from_env(default: usize) -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|n| *n > 0)
        .unwrap_or(default)
}
