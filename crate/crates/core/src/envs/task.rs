use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::EnvError;
use crate::context::Schema;
use crate::rsl::{self, RewardProgram};

/// The three implemented MetaBBO tasks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskId {
    DeOperatorSelection,
    AlgorithmSelection,
    PsoParameterControl,
}

impl TaskId {
    pub const ALL: [TaskId; 3] = [
        TaskId::DeOperatorSelection,
        TaskId::AlgorithmSelection,
        TaskId::PsoParameterControl,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskId::DeOperatorSelection => "de-operator-selection",
            TaskId::AlgorithmSelection => "algorithm-selection",
            TaskId::PsoParameterControl => "pso-parameter-control",
        }
    }

    /// Name of the MetaBBO method the task is modelled on.
    pub fn method_name(self) -> &'static str {
        match self {
            TaskId::DeOperatorSelection => "DEDQN",
            TaskId::AlgorithmSelection => "RLDAS",
            TaskId::PsoParameterControl => "RLEPSO",
        }
    }

    /// Accepts task ids and method names, case-insensitively for the latter.
    pub fn lookup(name: &str) -> Option<TaskId> {
        let n = name.trim();
        TaskId::ALL
            .into_iter()
            .find(|t| t.as_str() == n || t.method_name().eq_ignore_ascii_case(n))
    }

    pub fn metadata(self) -> Metadata {
        let text = match self {
            TaskId::DeOperatorSelection => include_str!("../../fixtures/metadata/de-operator-selection.json"),
            TaskId::AlgorithmSelection => include_str!("../../fixtures/metadata/algorithm-selection.json"),
            TaskId::PsoParameterControl => include_str!("../../fixtures/metadata/pso-parameter-control.json"),
        };
        serde_json::from_str(text).expect("bundled metadata fixture is valid JSON")
    }

    pub fn schema(self) -> Schema {
        self.metadata().c_code
    }

    /// Bumped whenever a task's context semantics change; part of fitness cache keys.
    pub fn schema_version(self) -> u32 {
        1
    }

    /// The expert anchor reward of the task.
    pub fn handcrafted_reward(self) -> RewardProgram {
        let src = match self {
            TaskId::DeOperatorSelection => HANDCRAFTED_DE,
            TaskId::AlgorithmSelection => HANDCRAFTED_DAS,
            TaskId::PsoParameterControl => HANDCRAFTED_PSO,
        };
        rsl::parse(src).expect("bundled anchor reward parses")
    }

    /// A previously discovered, more elaborate reward for the task.
    pub fn discovered_reward(self) -> RewardProgram {
        let src = match self {
            TaskId::DeOperatorSelection => include_str!("../../fixtures/rewards/dedqn.rsl"),
            TaskId::AlgorithmSelection => include_str!("../../fixtures/rewards/rldas.rsl"),
            TaskId::PsoParameterControl => include_str!("../../fixtures/rewards/rlepso.rsl"),
        };
        rsl::parse(src).expect("bundled discovered reward parses")
    }

    /// Closed range the discovered reward clips its total into.
    pub fn discovered_reward_range(self) -> (f64, f64) {
        match self {
            TaskId::DeOperatorSelection => (-1.0, 2.0),
            TaskId::AlgorithmSelection => (-1.0, 1.5),
            TaskId::PsoParameterControl => (-1.0, 1.0),
        }
    }

    pub fn is_discrete(self) -> bool {
        self != TaskId::PsoParameterControl
    }

    pub fn n_actions(self) -> usize {
        match self {
            TaskId::DeOperatorSelection | TaskId::AlgorithmSelection => 3,
            TaskId::PsoParameterControl => 35,
        }
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskId {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, EnvError> {
        TaskId::lookup(s).ok_or_else(|| EnvError::UnknownTask(s.to_string()))
    }
}

const HANDCRAFTED_DE: &str = "#! rsl v1 task=de-operator-selection
# +1 when the trial replaced its parent
if ctx.accepted == 1 {
    r = 1.0
} else {
    r = 0.0
}
return r, {\"accepted\": r}
";

const HANDCRAFTED_DAS: &str = "#! rsl v1 task=algorithm-selection
# best-cost improvement over the interval, scaled by the initial best cost
r = (ctx.last_cost - ctx.current_gbest) / ctx.cost_scale_factor
return r, {\"improvement\": r}
";

const HANDCRAFTED_PSO: &str = "#! rsl v1 task=pso-parameter-control
# +1 when the global best improved this iteration
if ctx.gbest_val < ctx.pre_gbest {
    r = 1.0
} else {
    r = 0.0
}
return r, {\"improved\": r}
";

/// Task metadata: algorithm summary plus the reward context field dictionary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub task_id: TaskId,
    pub c_alg: String,
    pub c_code: Schema,
}

impl Metadata {
    /// Field dictionary rendered one field per line, for prompts.
    pub fn c_code_text(&self) -> String {
        let mut out = String::new();
        for (name, spec) in self.c_code.iter() {
            let kind = serde_json::to_value(spec.kind).unwrap();
            let opt = if spec.optional { ", optional" } else { "" };
            out.push_str(&format!("- {name} ({}{opt}): {}\n", kind.as_str().unwrap_or(""), spec.description));
        }
        out
    }

    /// Metadata block used in prompts: the summary followed by the field list.
    pub fn render(&self) -> String {
        format!(
            "Task: {} (modelled on {})\nAlgorithm summary:\n{}\nReward context fields:\n{}",
            self.task_id,
            self.task_id.method_name(),
            self.c_alg,
            self.c_code_text()
        )
    }
}

/// Optimizer parameters of a task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub population_size: usize,
    pub max_fes: u64,
    /// Function evaluations between decisions; 0 means per trial or per iteration.
    pub decision_interval: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    Random,
    QLearning,
    LinearEs,
}

/// Learner hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub learner: LearnerKind,
    pub learning_rate: f64,
    pub epsilon: f64,
    pub gamma: f64,
    /// Offspring per generation of the (1+lambda) parameter search.
    pub lambda: usize,
    /// Perturbation scale of the parameter search.
    pub sigma: f64,
}

/// A task triple: optimizer and learner configuration for one task id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaTask {
    pub task_id: TaskId,
    pub optimizer: OptimizerConfig,
    pub policy: PolicyConfig,
}

impl MetaTask {
    pub fn new(task_id: TaskId) -> Self {
        let (population_size, decision_interval) = match task_id {
            TaskId::DeOperatorSelection => (50, 0),
            TaskId::AlgorithmSelection => (50, 250),
            TaskId::PsoParameterControl => (100, 0),
        };
        let policy = match task_id {
            TaskId::PsoParameterControl => PolicyConfig {
                learner: LearnerKind::LinearEs,
                learning_rate: 0.3,
                epsilon: 0.0,
                gamma: 1.0,
                lambda: 4,
                sigma: 0.3,
            },
            _ => PolicyConfig {
                learner: LearnerKind::QLearning,
                learning_rate: 0.1,
                epsilon: 0.1,
                gamma: 0.9,
                lambda: 0,
                sigma: 0.0,
            },
        };
        Self {
            task_id,
            optimizer: OptimizerConfig {
                population_size,
                max_fes: 1_000_000,
                decision_interval,
            },
            policy,
        }
    }

    pub fn with_learner(mut self, learner: LearnerKind) -> Self {
        self.policy.learner = learner;
        self
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let np = self.optimizer.population_size;
        let min_np = match self.task_id {
            TaskId::DeOperatorSelection => 5,
            TaskId::AlgorithmSelection => 8,
            TaskId::PsoParameterControl => 10,
        };
        if np < min_np {
            return Err(EnvError::Config(format!("population size must be at least {min_np}")));
        }
        if self.task_id == TaskId::PsoParameterControl && !np.is_multiple_of(5) {
            return Err(EnvError::Config("PSO population size must be a multiple of 5".into()));
        }
        if self.optimizer.max_fes < 2 * np as u64 {
            return Err(EnvError::Config("MaxFEs must be at least 2 * NP".into()));
        }
        if self.task_id == TaskId::AlgorithmSelection && self.optimizer.decision_interval == 0 {
            return Err(EnvError::Config("algorithm selection needs a positive decision interval".into()));
        }
        let p = &self.policy;
        let ok = match p.learner {
            LearnerKind::Random => true,
            LearnerKind::QLearning => {
                self.task_id.is_discrete()
                    && p.learning_rate > 0.0
                    && (0.0..=1.0).contains(&p.epsilon)
                    && (0.0..=1.0).contains(&p.gamma)
            }
            LearnerKind::LinearEs => !self.task_id.is_discrete() && p.lambda >= 1 && p.sigma > 0.0,
        };
        if !ok {
            return Err(EnvError::Config(format!(
                "learner {:?} is not configured correctly for {}",
                p.learner, self.task_id
            )));
        }
        Ok(())
    }
}
