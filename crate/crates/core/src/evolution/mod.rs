//! The reward search: one niche per task, LLM-driven variation, rank-weighted
//! survivor selection, a shared archive and cross-niche knowledge transfer.

mod operators;
mod run;
mod select;

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use operators::{build_metadata, failure_cases};
pub use run::{
    adapt_reward, evaluation_seed, make_provider, run_discovery, Discovery, DiscoveryOutcome, GenerationSummary, LogLines, ReportRow, Snapshot,
    REPORT_HEADER,
};
pub use select::{draw_without_replacement, rank_order, select_survivors, selection_weights};

use crate::envs::{Metadata, TaskId};
use crate::eval::{sentinel, EvalBudget, EvalError};
use crate::llm::{LlmError, ProviderConfig};
use crate::rsl::RewardProgram;

#[derive(Debug, Error)]
pub enum EvolutionError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("provider: {0}")]
    Provider(#[from] LlmError),
    #[error("evaluation: {0}")]
    Eval(#[from] EvalError),
    #[error("run directory: {0}")]
    Io(#[from] std::io::Error),
    #[error("snapshot: {0}")]
    Snapshot(String),
}

/// Which variation operator produced an individual.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorTag {
    Expert,
    Init,
    M1,
    M2,
    M3,
    C1,
    C2,
    Kt,
    #[serde(rename = "m0_simple")]
    M0Simple,
}

impl OperatorTag {
    /// The five reproduction operators in application order.
    pub const REPRODUCTION: [OperatorTag; 5] = [
        OperatorTag::M1,
        OperatorTag::M2,
        OperatorTag::M3,
        OperatorTag::C1,
        OperatorTag::C2,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OperatorTag::Expert => "expert",
            OperatorTag::Init => "init",
            OperatorTag::M1 => "m1",
            OperatorTag::M2 => "m2",
            OperatorTag::M3 => "m3",
            OperatorTag::C1 => "c1",
            OperatorTag::C2 => "c2",
            OperatorTag::Kt => "kt",
            OperatorTag::M0Simple => "m0_simple",
        }
    }
}

impl fmt::Display for OperatorTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OperatorTag {
    type Err = EvolutionError;

    fn from_str(s: &str) -> Result<Self, EvolutionError> {
        let all = [
            OperatorTag::Expert,
            OperatorTag::Init,
            OperatorTag::M1,
            OperatorTag::M2,
            OperatorTag::M3,
            OperatorTag::C1,
            OperatorTag::C2,
            OperatorTag::Kt,
            OperatorTag::M0Simple,
        ];
        let s = s.trim().to_ascii_lowercase();
        all.into_iter()
            .find(|t| t.as_str() == s || (s == "m0" && *t == OperatorTag::M0Simple))
            .ok_or_else(|| EvolutionError::Config(format!("unknown operator `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lineage {
    pub operator: OperatorTag,
    pub parents: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Alive,
    Eliminated,
    Invalid,
}

/// An ancestor as shown to the history-based mutation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ancestor {
    pub id: String,
    pub generation: usize,
    pub thought: String,
    pub source: String,
    #[serde(with = "sentinel")]
    pub fitness: f64,
}

/// A reward candidate: idea, program and measured fitness.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Individual {
    pub id: String,
    pub task: TaskId,
    pub thought: String,
    pub program: RewardProgram,
    #[serde(with = "sentinel")]
    pub fitness: f64,
    pub per_instance_medians: Vec<f64>,
    pub generation: usize,
    pub lineage: Lineage,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reflection: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub invalid_reason: Option<String>,
    /// Ancestors oldest first, at most the configured history length.
    #[serde(default)]
    pub ancestry: Vec<Ancestor>,
}

impl Individual {
    pub fn is_valid(&self) -> bool {
        self.status != Status::Invalid
    }

    fn as_ancestor(&self) -> Ancestor {
        Ancestor {
            id: self.id.clone(),
            generation: self.generation,
            thought: self.thought.clone(),
            source: self.program.source().to_string(),
            fitness: self.fitness,
        }
    }
}

impl PartialEq for Individual {
    fn eq(&self, other: &Self) -> bool {
        serde_json::to_value(self).ok() == serde_json::to_value(other).ok()
    }
}

/// The population of one task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Niche {
    pub task: TaskId,
    pub metadata: Metadata,
    pub population: Vec<Individual>,
    /// Lowest-fitness valid individual ever seen in this niche.
    pub best_so_far: Option<Individual>,
    pub init_fallback: bool,
}

impl Niche {
    /// Alive member with the lowest fitness (ties: older, then smaller id).
    pub fn best(&self) -> Option<&Individual> {
        rank_order(&self.population).first().map(|&i| &self.population[i])
    }

    /// Alive member ranked last.
    pub fn worst_index(&self) -> Option<usize> {
        rank_order(&self.population).last().copied()
    }

    fn observe(&mut self, ind: &Individual) {
        if !ind.is_valid() {
            return;
        }
        let better = match &self.best_so_far {
            None => true,
            Some(b) => ind.fitness < b.fitness,
        };
        if better {
            self.best_so_far = Some(ind.clone());
        }
    }
}

/// Eliminated individuals of all niches, oldest evicted first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Archive {
    pub cap: usize,
    pub entries: VecDeque<Individual>,
    pub summary: Option<String>,
    pub summary_generation: Option<usize>,
    /// Entries the current summary was made from.
    #[serde(default)]
    pub summary_size: usize,
}

impl Archive {
    pub fn new(cap: usize) -> Self {
        Self {
            cap,
            entries: VecDeque::new(),
            summary: None,
            summary_generation: None,
            summary_size: 0,
        }
    }

    pub fn push(&mut self, mut ind: Individual) {
        ind.status = Status::Eliminated;
        self.entries.push_back(ind);
        while self.entries.len() > self.cap {
            self.entries.pop_front();
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferOutcome {
    /// The transplant replaced the target's worst member.
    Replaced,
    /// The transplant's reward failed while being measured.
    Invalid,
    /// No usable adaptation came back from the provider.
    Failed,
}

/// One knowledge-transfer pathway and what came of it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferRecord {
    pub generation: usize,
    pub source_task: TaskId,
    pub target_task: TaskId,
    pub reflection: String,
    pub strategy: String,
    pub source_id: String,
    pub transplant_id: Option<String>,
    pub replaced_id: Option<String>,
    #[serde(with = "sentinel")]
    pub transplant_fitness: f64,
    #[serde(with = "sentinel")]
    pub replaced_fitness: f64,
    pub outcome: TransferOutcome,
}

/// Where the chat answers come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderSpec {
    Http(ProviderConfig),
    Replay { path: PathBuf },
    /// Built-in offline generator; see [`crate::llm::SyntheticProvider`].
    Synthetic { seed: u64 },
}

impl Default for ProviderSpec {
    fn default() -> Self {
        ProviderSpec::Http(ProviderConfig::default())
    }
}

/// Everything a discovery run depends on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub tasks: Vec<TaskId>,
    pub dimension: usize,
    pub suite_seed: u64,
    pub seed: u64,
    /// Niche size N.
    pub niche_size: usize,
    /// Number of generations G_max.
    pub generations: usize,
    /// Ancestors shown to the history-based mutation (L).
    pub history_length: usize,
    /// Worst test instances shown to the failure analysis (K).
    pub failure_cases: usize,
    pub archive_cap: usize,
    /// Pathways requested per transfer pass; defaults to the number of niches.
    pub kt_pathways: Option<usize>,
    pub difference_rate: u32,
    /// Generation attempts for the initial population; defaults to 5 (N - 1).
    pub init_attempts: Option<usize>,
    /// Calls per offspring before a malformed answer skips the slot.
    pub max_attempts: u32,
    /// Archived individuals shown to the archive summary.
    pub summary_entries: usize,
    pub budget: EvalBudget,
    pub provider: ProviderSpec,
    /// Ablation: operators replaced by the simple mutation.
    pub replace_ops: BTreeMap<OperatorTag, OperatorTag>,
    pub disable_kt: bool,
    /// Summarize each task description with the provider before the search.
    pub online_metadata: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            tasks: TaskId::ALL.to_vec(),
            dimension: 10,
            suite_seed: 0,
            seed: 0,
            niche_size: 5,
            generations: 7,
            history_length: 5,
            failure_cases: 3,
            archive_cap: 200,
            kt_pathways: None,
            difference_rate: 95,
            init_attempts: None,
            max_attempts: 3,
            summary_entries: 10,
            budget: EvalBudget::default(),
            provider: ProviderSpec::default(),
            replace_ops: BTreeMap::new(),
            disable_kt: false,
            online_metadata: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), EvolutionError> {
        let bad = |m: &str| Err(EvolutionError::Config(m.to_string()));
        if self.tasks.is_empty() {
            return bad("at least one task is required");
        }
        let mut seen = self.tasks.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.tasks.len() {
            return bad("tasks must be distinct");
        }
        if self.niche_size < 1 {
            return bad("niche_size must be at least 1");
        }
        if self.generations < 1 {
            return bad("generations must be at least 1");
        }
        if !(2..=crate::problems::MAX_DIMENSION).contains(&self.dimension) {
            return bad("dimension must lie in [2, 50]");
        }
        if self.max_attempts < 1 {
            return bad("max_attempts must be at least 1");
        }
        if self.archive_cap < 1 {
            return bad("archive_cap must be at least 1");
        }
        if self.kt_pathways == Some(0) {
            return bad("kt_pathways must be at least 1");
        }
        if self.difference_rate > 100 {
            return bad("difference_rate is a percentage");
        }
        if let Some(a) = self.init_attempts {
            if a < self.niche_size.saturating_sub(1) {
                return bad("init_attempts must be at least niche_size - 1");
            }
        }
        for (from, to) in &self.replace_ops {
            if !OperatorTag::REPRODUCTION.contains(from) {
                return bad(&format!("only m1, m2, m3, c1 and c2 can be replaced, not {from}"));
            }
            if *to != OperatorTag::M0Simple {
                return bad(&format!("{from} can only be replaced by m0_simple"));
            }
        }
        self.budget.validate()?;
        if let ProviderSpec::Http(p) = &self.provider {
            p.validate()?;
        }
        Ok(())
    }

    pub fn init_attempts(&self) -> usize {
        self.init_attempts.unwrap_or(5 * self.niche_size.saturating_sub(1))
    }

    pub fn kt_pathways(&self) -> usize {
        self.kt_pathways.unwrap_or(self.tasks.len())
    }
}

#[cfg(test)]
mod tests;
