use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{aggregate, normalized_score, sentinel, EvalError};
use crate::envs::{run_episode, train_policy, EnvError, MetaTask, TaskId, TrainingBudget};
use crate::problems::ProblemSuite;
use crate::rsl::RewardProgram;
use crate::seeding::mix_seed;

/// Bumped whenever the report layout or the measurement protocol changes.
pub const REPORT_VERSION: u32 = 1;

const STREAM_TRAINING: u64 = 0x7472_6169_6e;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// Cheap settings used while searching.
    Search,
    /// Longer training and more test runs for reporting.
    Final,
}

impl std::str::FromStr for Profile {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, EvalError> {
        match s {
            "search" => Ok(Profile::Search),
            "final" => Ok(Profile::Final),
            _ => Err(EvalError::Budget(format!("unknown profile `{s}`"))),
        }
    }
}

/// Budgets of both profiles.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalBudget {
    pub gamma_search: usize,
    pub gamma_final: usize,
    /// Function evaluations per episode, training and testing alike.
    pub fe_budget: u64,
    /// Training episodes per candidate under the search profile.
    pub train_episodes: u64,
    /// Training episodes per candidate under the final profile.
    pub train_episodes_final: u64,
}

impl Default for EvalBudget {
    fn default() -> Self {
        Self {
            gamma_search: 3,
            gamma_final: 51,
            fe_budget: 5_000,
            train_episodes: 20,
            train_episodes_final: 100,
        }
    }
}

impl EvalBudget {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.gamma_search == 0 || self.gamma_final == 0 {
            return Err(EvalError::Budget("the number of test runs must be at least 1".into()));
        }
        if self.fe_budget == 0 {
            return Err(EvalError::Budget("fe_budget must be positive".into()));
        }
        Ok(())
    }

    pub fn resolve(&self, profile: Profile) -> RunBudget {
        match profile {
            Profile::Search => RunBudget {
                gamma: self.gamma_search,
                fe_budget: self.fe_budget,
                train_episodes: self.train_episodes,
            },
            Profile::Final => RunBudget {
                gamma: self.gamma_final,
                fe_budget: self.fe_budget,
                train_episodes: self.train_episodes_final,
            },
        }
    }
}

/// The budget of one evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RunBudget {
    pub gamma: usize,
    pub fe_budget: u64,
    pub train_episodes: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetUsed {
    pub training_episodes: u64,
    pub test_episodes: u64,
    pub test_fes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitnessReport {
    pub version: u32,
    pub task: TaskId,
    pub reward_hash: String,
    pub seed: u64,
    /// Mean of per-instance medians; `null` in JSON when invalid.
    #[serde(with = "sentinel")]
    pub fitness: f64,
    pub instance_ids: Vec<String>,
    /// Normalized scores, one row per test instance and one column per run.
    pub score_matrix: Vec<Vec<f64>>,
    pub per_instance_medians: Vec<f64>,
    pub policy_digest: Option<String>,
    pub budget_used: BudgetUsed,
    /// Failure reason of an invalid reward.
    pub invalid: Option<String>,
}

impl FitnessReport {
    pub fn is_valid(&self) -> bool {
        self.invalid.is_none()
    }

    /// Report for already-measured scores.
    pub fn from_scores(task: TaskId, reward_hash: &str, seed: u64, instance_ids: Vec<String>, score_matrix: Vec<Vec<f64>>) -> Self {
        let (per_instance_medians, fitness) = aggregate(&score_matrix);
        Self {
            version: REPORT_VERSION,
            task,
            reward_hash: reward_hash.to_string(),
            seed,
            fitness,
            instance_ids,
            score_matrix,
            per_instance_medians,
            policy_digest: None,
            budget_used: BudgetUsed::default(),
            invalid: None,
        }
    }

    fn invalid(task: TaskId, reward_hash: &str, seed: u64, reason: String, used: BudgetUsed) -> Self {
        Self {
            version: REPORT_VERSION,
            task,
            reward_hash: reward_hash.to_string(),
            seed,
            fitness: f64::INFINITY,
            instance_ids: Vec::new(),
            score_matrix: Vec::new(),
            per_instance_medians: Vec::new(),
            policy_digest: None,
            budget_used: used,
            invalid: Some(reason),
        }
    }
}

/// Whether an environment error is the reward's fault rather than the setup's.
fn reward_fault(e: &EnvError) -> bool {
    matches!(e, EnvError::Reward { .. } | EnvError::Schema(_) | EnvError::ContextSchema { .. })
}

/// Trains a policy on the training instances with `reward`, then runs it
/// frozen `gamma` times on every test instance with seeds `seed + j`.
///
/// Any failure of the reward yields an invalid report; configuration
/// problems are returned as errors.
pub fn evaluate_fitness(
    reward: &RewardProgram,
    task: &MetaTask,
    suite: &ProblemSuite,
    budget: RunBudget,
    seed: u64,
) -> Result<FitnessReport, EvalError> {
    if budget.gamma == 0 {
        return Err(EvalError::Budget("gamma must be at least 1".into()));
    }
    let id = task.task_id;
    let hash = reward.content_hash();
    let training = TrainingBudget {
        episodes: budget.train_episodes,
        fe_budget: budget.fe_budget,
    };
    let mut used = BudgetUsed::default();
    let policy = match train_policy(task, reward, &suite.train_instances, training, mix_seed(seed, STREAM_TRAINING)) {
        Ok(p) => p,
        Err(e) if reward_fault(&e) => return Ok(FitnessReport::invalid(id, hash, seed, format!("training: {e}"), used)),
        Err(e) => return Err(EvalError::Env(e)),
    };
    used.training_episodes = policy.episodes_trained;

    let jobs: Vec<(usize, usize)> = (0..suite.test_instances.len())
        .flat_map(|i| (0..budget.gamma).map(move |j| (i, j)))
        .collect();
    let runs: Vec<Result<(f64, u64), EnvError>> = jobs
        .par_iter()
        .map(|&(i, j)| {
            let inst = &suite.test_instances[i];
            let log = run_episode(task, &policy, reward, inst, seed.wrapping_add(j as u64), budget.fe_budget)?;
            Ok((normalized_score(log.y_initial, log.y_final, inst.optimum_value()), log.fe_used))
        })
        .collect();

    let mut matrix = vec![Vec::with_capacity(budget.gamma); suite.test_instances.len()];
    for (&(i, j), r) in jobs.iter().zip(runs) {
        match r {
            Ok((score, fes)) => {
                matrix[i].push(score);
                used.test_episodes += 1;
                used.test_fes += fes;
            }
            Err(e) if reward_fault(&e) => {
                let reason = format!("test instance {i} run {j}: {e}");
                return Ok(FitnessReport::invalid(id, hash, seed, reason, used));
            }
            Err(e) => return Err(EvalError::Env(e)),
        }
    }
    let ids = suite
        .test_instances
        .iter()
        .enumerate()
        .map(|(i, inst)| format!("{i:02}-{}", inst.label()))
        .collect();
    let mut report = FitnessReport::from_scores(id, hash, seed, ids, matrix);
    report.policy_digest = Some(policy.digest());
    report.budget_used = used;
    Ok(report)
}
