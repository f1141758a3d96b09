//! MetaBBO environments: DE operator selection, dynamic algorithm selection
//! and ensemble-PSO parameter control, with their lightweight learners.

mod common;
mod das;
mod de;
mod policy;
mod pso;
mod task;

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use common::{diversity, CountingObjective};
pub use policy::{PolicyState, N_FEATURES};
pub use task::{LearnerKind, MetaTask, Metadata, OptimizerConfig, PolicyConfig, TaskId};

use crate::context::RewardContext;
use crate::problems::ProblemInstance;
use crate::rsl::{EvalLimits, RewardProgram, RuntimeError, SchemaError};
use crate::seeding::mix_seed;

#[derive(Clone, Debug, PartialEq, Error)]
pub enum EnvError {
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("invalid task configuration: {0}")]
    Config(String),
    #[error("reward program failed at step {step}: {error}")]
    Reward { step: u64, error: RuntimeError },
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("context violates the {task} schema: {message}")]
    ContextSchema { task: TaskId, message: String },
    #[error("fe budget {budget} must lie in [{min}, {max}]")]
    Budget { budget: u64, min: u64, max: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub action: Action,
    pub reward: f64,
    pub gbest: f64,
}

/// Trace of one optimizer run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub instance_id: String,
    pub seed: u64,
    pub steps: Vec<StepRecord>,
    pub y_initial: f64,
    pub y_final: f64,
    pub fe_used: u64,
}

impl EpisodeLog {
    /// Undiscounted sum of emitted rewards.
    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }
}

const STREAM_OPTIMIZER: u64 = 1;
const STREAM_AGENT: u64 = 2;

type Observer<'a> = &'a mut dyn FnMut(&RewardContext, f64);

/// Everything one episode needs.
pub(crate) struct Run<'a> {
    task: &'a MetaTask,
    policy: &'a mut PolicyState,
    learning: bool,
    reward: &'a RewardProgram,
    limits: EvalLimits,
    instance: &'a ProblemInstance,
    seed: u64,
    fe_budget: u64,
    observer: Option<Observer<'a>>,
    step: u64,
}

impl<'a> Run<'a> {
    fn optimizer_rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(mix_seed(self.seed, STREAM_OPTIMIZER))
    }

    fn agent_rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(mix_seed(self.seed, STREAM_AGENT))
    }

    /// Fields to materialize: all of them when observed, else only those the program reads.
    fn wanted(&self) -> Option<&'a BTreeSet<String>> {
        if self.observer.is_some() {
            None
        } else {
            Some(self.reward.referenced_fields())
        }
    }

    /// Evaluates the reward on `ctx` and returns its total.
    fn emit(&mut self, ctx: RewardContext) -> Result<f64, EnvError> {
        let step = self.step;
        self.step += 1;
        let out = self
            .reward
            .evaluate(&ctx, self.limits)
            .map_err(|error| EnvError::Reward { step, error })?;
        if let Some(obs) = self.observer.as_mut() {
            self.task
                .task_id
                .schema()
                .check(&ctx)
                .map_err(|message| EnvError::ContextSchema {
                    task: self.task.task_id,
                    message,
                })?;
            obs(&ctx, out.total);
        }
        Ok(out.total)
    }

    fn finish(&self, steps: Vec<StepRecord>, y_initial: f64, y_final: f64, fe_used: u64) -> EpisodeLog {
        EpisodeLog {
            instance_id: self.instance.label(),
            seed: self.seed,
            steps,
            y_initial,
            y_final,
            fe_used,
        }
    }
}

fn check_budget(task: &MetaTask, fe_budget: u64) -> Result<(), EnvError> {
    let min = 2 * task.optimizer.population_size as u64;
    let max = task.optimizer.max_fes;
    if fe_budget < min || fe_budget > max {
        return Err(EnvError::Budget {
            budget: fe_budget,
            min,
            max,
        });
    }
    Ok(())
}

fn dispatch(run: &mut Run) -> Result<EpisodeLog, EnvError> {
    run.task.validate()?;
    check_budget(run.task, run.fe_budget)?;
    if run.policy.n_actions != run.task.task_id.n_actions() {
        return Err(EnvError::Config("policy does not match the task's action space".into()));
    }
    match run.task.task_id {
        TaskId::DeOperatorSelection => de::run(run),
        TaskId::AlgorithmSelection => das::run(run),
        TaskId::PsoParameterControl => pso::run(run),
    }
}

/// Runs one frozen-mode episode: the policy acts but is not updated.
pub fn run_episode(
    task: &MetaTask,
    policy: &PolicyState,
    reward: &RewardProgram,
    instance: &ProblemInstance,
    seed: u64,
    fe_budget: u64,
) -> Result<EpisodeLog, EnvError> {
    let mut p = policy.clone();
    dispatch(&mut Run {
        task,
        policy: &mut p,
        learning: false,
        reward,
        limits: EvalLimits::default(),
        instance,
        seed,
        fe_budget,
        observer: None,
        step: 0,
    })
}

/// Runs one learning-mode episode: the tabular learner updates online and
/// explores; the linear learner acts with its current parameters.
pub fn learn_episode(
    task: &MetaTask,
    policy: &mut PolicyState,
    reward: &RewardProgram,
    instance: &ProblemInstance,
    seed: u64,
    fe_budget: u64,
) -> Result<EpisodeLog, EnvError> {
    dispatch(&mut Run {
        task,
        policy,
        learning: true,
        reward,
        limits: EvalLimits::default(),
        instance,
        seed,
        fe_budget,
        observer: None,
        step: 0,
    })
}

/// Frozen-mode episode that materializes every schema field, checks each
/// context against the task schema and passes it to `observer` with the reward.
pub fn run_episode_observed(
    task: &MetaTask,
    policy: &PolicyState,
    reward: &RewardProgram,
    instance: &ProblemInstance,
    seed: u64,
    fe_budget: u64,
    observer: &mut dyn FnMut(&RewardContext, f64),
) -> Result<EpisodeLog, EnvError> {
    let mut p = policy.clone();
    dispatch(&mut Run {
        task,
        policy: &mut p,
        learning: false,
        reward,
        limits: EvalLimits::default(),
        instance,
        seed,
        fe_budget,
        observer: Some(observer),
        step: 0,
    })
}

/// Training budget: total episodes (cycled over the training instances) of `fe_budget` evaluations each.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingBudget {
    pub episodes: u64,
    pub fe_budget: u64,
}

/// Trains a policy for `task` with `reward` on `train` instances.
///
/// The tabular learner runs `episodes` learning episodes round-robin over the
/// instances. The linear learner runs a (1+lambda) search: each round evaluates
/// the parent and lambda Gaussian perturbations on one instance with a shared
/// seed and keeps the best by undiscounted return (ties keep the parent).
pub fn train_policy(
    task: &MetaTask,
    reward: &RewardProgram,
    train: &[ProblemInstance],
    budget: TrainingBudget,
    seed: u64,
) -> Result<PolicyState, EnvError> {
    task.validate()?;
    reward.validate(&task.task_id.schema())?;
    let mut policy = PolicyState::untrained(task);
    if train.is_empty() || budget.episodes == 0 || task.policy.learner == LearnerKind::Random {
        return Ok(policy);
    }
    check_budget(task, budget.fe_budget)?;
    let total = budget.episodes;
    match task.policy.learner {
        LearnerKind::QLearning => {
            for e in 0..total {
                let inst = &train[(e as usize) % train.len()];
                policy.training_progress = e as f64 / total as f64;
                learn_episode(task, &mut policy, reward, inst, mix_seed(seed, e), budget.fe_budget)?;
                policy.episodes_trained += 1;
            }
        }
        LearnerKind::LinearEs => {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, u64::MAX));
            let lambda = task.policy.lambda as u64;
            let mut used = 0u64;
            let mut round = 0u64;
            while used + 2 <= total {
                let inst = &train[(round as usize) % train.len()];
                let ep_seed = mix_seed(seed, round);
                policy.training_progress = used as f64 / total as f64;
                let parent_return = learn_episode(task, &mut policy, reward, inst, ep_seed, budget.fe_budget)?.total_reward();
                used += 1;
                let mut best: Option<(f64, Vec<f64>)> = None;
                let children = lambda.min(total - used);
                for _ in 0..children {
                    let mut child = policy.clone();
                    for w in child.weights.iter_mut() {
                        let z: f64 = rng.sample(StandardNormal);
                        *w += task.policy.sigma * z;
                    }
                    let ret = learn_episode(task, &mut child, reward, inst, ep_seed, budget.fe_budget)?.total_reward();
                    used += 1;
                    if ret > parent_return && best.as_ref().is_none_or(|(b, _)| ret > *b) {
                        best = Some((ret, child.weights));
                    }
                }
                if let Some((_, w)) = best {
                    policy.weights = w;
                }
                policy.training_step += 1;
                policy.episodes_trained = used;
                round += 1;
            }
        }
        LearnerKind::Random => unreachable!(),
    }
    policy.training_progress = 1.0;
    Ok(policy)
}

/// Loads the bundled metadata of a task by id or method name.
pub fn load_task_metadata(task: &str) -> Result<Metadata, EnvError> {
    Ok(task.parse::<TaskId>()?.metadata())
}

/// The expert anchor reward of a task by id or method name.
pub fn handcrafted_reward(task: &str) -> Result<RewardProgram, EnvError> {
    Ok(task.parse::<TaskId>()?.handcrafted_reward())
}

#[cfg(test)]
mod tests;
