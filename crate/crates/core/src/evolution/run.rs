use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::operators::*;
use super::{
    select_survivors, Archive, EvolutionError, Individual, Lineage, Niche, OperatorTag, ProviderSpec, RunConfig,
    Status, TransferOutcome, TransferRecord,
};
use crate::envs::{MetaTask, TaskId};
use crate::eval::{workers_from_env, EvalJob, Evaluator, FitnessCache, FitnessReport};
use crate::llm::{
    parse_kt_plan, parse_summary, ChatProvider, Generated, HttpProvider, LlmClient, LlmError, ReplayProvider,
    SyntheticProvider, TemplateId,
};
use crate::problems::{make_suite, ProblemInstance};
use crate::rsl::{self, RewardProgram};
use crate::seeding::mix_seed;

pub const REPORT_HEADER: &str = "generation,task,best_fitness,mean_fitness,invalid_count,kt_count";

const STREAM_EVAL: u64 = 0xE7A1;
const STREAM_SELECT: u64 = 0x5E1E_C700;
const STREAM_PARTNER: u64 = 0xC2C2_0000;

/// Lines written to each append-only log when a snapshot was taken.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogLines {
    pub exchanges: usize,
    pub archive: usize,
    pub transfers: usize,
    pub report: usize,
}

/// Complete search state after a finished generation (0 = initialization).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub generation: usize,
    pub next_id: u64,
    pub niches: Vec<Niche>,
    pub archive: Archive,
    pub transfers: Vec<TransferRecord>,
    pub log_lines: LogLines,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub generation: usize,
    pub task: TaskId,
    pub best_fitness: f64,
    pub mean_fitness: f64,
    pub invalid_count: usize,
    pub kt_count: usize,
}

impl ReportRow {
    fn csv(&self) -> String {
        let num = |f: f64| if f.is_finite() { format!("{f}") } else { "inf".into() };
        format!(
            "{},{},{},{},{},{}",
            self.generation,
            self.task,
            num(self.best_fitness),
            num(self.mean_fitness),
            self.invalid_count,
            self.kt_count
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerationSummary {
    pub generation: usize,
    pub rows: Vec<ReportRow>,
    /// Offspring produced per task, transplants excluded.
    pub offspring: BTreeMap<TaskId, usize>,
    pub transfers: Vec<TransferRecord>,
}

#[derive(Clone, Debug)]
pub struct DiscoveryOutcome {
    pub out: PathBuf,
    pub generations: usize,
    pub niches: Vec<Niche>,
    /// Lowest-fitness reward found per task.
    pub best: BTreeMap<TaskId, Individual>,
}

/// Seed every fitness evaluation of a run with seed `run_seed` uses.
pub fn evaluation_seed(run_seed: u64) -> u64 {
    mix_seed(run_seed, STREAM_EVAL)
}

/// Builds the provider a config names.
pub fn make_provider(spec: &ProviderSpec) -> Result<Arc<dyn ChatProvider>, LlmError> {
    Ok(match spec {
        ProviderSpec::Http(c) => Arc::new(HttpProvider::new(c.clone())?),
        ProviderSpec::Replay { path } => Arc::new(ReplayProvider::from_file(path)?),
        ProviderSpec::Synthetic { seed } => Arc::new(SyntheticProvider::new(*seed)),
    })
}

/// Runs a fresh search into `out`.
pub fn run_discovery(config: &RunConfig, provider: Arc<dyn ChatProvider>, out: &Path) -> Result<DiscoveryOutcome, EvolutionError> {
    Discovery::create(config.clone(), provider, out)?.run()
}

/// Offspring waiting for evaluation.
struct Candidate {
    niche: usize,
    thought: String,
    program: RewardProgram,
    lineage: Lineage,
    reflection: Option<String>,
    ancestry: Vec<super::Ancestor>,
}

type Observer = Box<dyn FnMut(&GenerationSummary)>;

/// A search bound to its run directory.
pub struct Discovery {
    config: RunConfig,
    out: PathBuf,
    llm: LlmClient,
    evaluator: Evaluator,
    state: Snapshot,
    exchange_base: usize,
    observer: Option<Observer>,
}

fn read_lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .map(|t| t.lines().map(str::to_string).collect())
        .unwrap_or_default()
}

fn truncate_lines(path: &Path, keep: usize) -> Result<Vec<String>, EvolutionError> {
    let mut lines = read_lines(path);
    lines.truncate(keep);
    let mut text = lines.join("\n");
    if !lines.is_empty() {
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(lines)
}

fn append_line(path: &Path, line: &str) -> Result<(), EvolutionError> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(f, "{line}")?;
    Ok(())
}

fn default_workers() -> usize {
    workers_from_env(std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Parses generated code as a reward of `task` and checks it reads only that task's fields.
fn reward_check(task: TaskId) -> impl Fn(&str) -> Result<RewardProgram, String> {
    let schema = task.schema();
    move |code: &str| {
        let p = rsl::parse(&rsl::reward_file_text(task.as_str(), code)).map_err(|e| e.to_string())?;
        p.validate(&schema).map_err(|e| e.to_string())?;
        Ok(p)
    }
}

/// Asks for a reward of `task`; `None` when every attempt was unusable.
fn ask_code(
    llm: &LlmClient,
    id: TemplateId,
    v: &BTreeMap<String, String>,
    task: TaskId,
) -> Result<Option<Generated<RewardProgram>>, EvolutionError> {
    match llm.ask_code(id, v, reward_check(task)) {
        Ok(g) => Ok(Some(g)),
        Err(e) if e.is_format_error() => {
            log::warn!("{task}: {id} slot skipped: {e}");
            Ok(None)
        }
        Err(e) => Err(e.into()),
    }
}

/// Rewrites a reward of `from` for `to` with one transfer prompt, outside any run.
pub fn adapt_reward(
    llm: &LlmClient,
    thought: &str,
    source: &RewardProgram,
    from: TaskId,
    to: TaskId,
) -> Result<Generated<RewardProgram>, EvolutionError> {
    if from == to {
        return Err(EvolutionError::Config("source and target task must differ".into()));
    }
    let pathway = crate::llm::TransferPathway {
        source_task: from,
        target_task: to,
        rationale: format!(
            "Both tasks control an evolutionary optimizer from the same kind of progress signals; the design of the {} reward may carry over to {}.",
            from.method_name(),
            to.method_name()
        ),
        transfer_strategy_guidance: "Keep the source reward's structure and intent, map each context field to its closest counterpart in the target schema, and drop terms that have no counterpart.".into(),
    };
    let v = kt_execute_vars(thought, source.source(), &to.metadata(), &pathway);
    Ok(llm.ask_code(TemplateId::KtExecute, &v, reward_check(to))?)
}

impl Discovery {
    fn build(config: RunConfig, provider: Arc<dyn ChatProvider>, out: &Path, state: Snapshot) -> Result<Self, EvolutionError> {
        let llm = LlmClient::new(provider.clone())
            .with_max_attempts(config.max_attempts)
            .with_log_file(&out.join("exchanges.jsonl"))?;
        let suite = make_suite(config.dimension, config.suite_seed)
            .map_err(|e| EvolutionError::Config(e.to_string()))?;
        let evaluator = Evaluator::new(Arc::new(suite), config.budget.resolve(crate::eval::Profile::Search), default_workers())?
            .with_cache(FitnessCache::persistent(&out.join("fitness-cache"))?);
        let exchange_base = state.log_lines.exchanges;
        Ok(Self {
            config,
            out: out.to_path_buf(),
            llm,
            evaluator,
            state,
            exchange_base,
            observer: None,
        })
    }

    /// Starts a new run. `out` must not already hold one.
    pub fn create(config: RunConfig, provider: Arc<dyn ChatProvider>, out: &Path) -> Result<Self, EvolutionError> {
        config.validate()?;
        if out.join("config.json").exists() {
            return Err(EvolutionError::Config(format!(
                "{} already holds a run; resume it or pick another directory",
                out.display()
            )));
        }
        fs::create_dir_all(out.join("snapshots"))?;
        fs::write(out.join("config.json"), serde_json::to_string_pretty(&config).unwrap() + "\n")?;
        fs::write(out.join("report.csv"), format!("{REPORT_HEADER}\n"))?;
        for name in ["exchanges.jsonl", "archive.jsonl", "transfers.jsonl"] {
            fs::write(out.join(name), "")?;
        }
        let state = Snapshot {
            generation: 0,
            next_id: 0,
            niches: Vec::new(),
            archive: Archive::new(config.archive_cap),
            transfers: Vec::new(),
            log_lines: LogLines::default(),
        };
        Self::build(config, provider, out, state)
    }

    /// Reads the config of the run in `out`.
    pub fn load_config(out: &Path) -> Result<RunConfig, EvolutionError> {
        let text = fs::read_to_string(out.join("config.json"))
            .map_err(|e| EvolutionError::Config(format!("{}: {e}", out.join("config.json").display())))?;
        serde_json::from_str(&text).map_err(|e| EvolutionError::Config(format!("config.json: {e}")))
    }

    /// Latest snapshot in `out`, if any.
    pub fn latest_snapshot(out: &Path) -> Result<Option<Snapshot>, EvolutionError> {
        let mut best: Option<usize> = None;
        if let Ok(dir) = fs::read_dir(out.join("snapshots")) {
            for e in dir.flatten() {
                let name = e.file_name().to_string_lossy().to_string();
                if let Some(g) = name.strip_prefix("gen-").and_then(|s| s.strip_suffix(".json")).and_then(|s| s.parse().ok()) {
                    best = Some(best.map_or(g, |b: usize| b.max(g)));
                }
            }
        }
        let Some(g) = best else { return Ok(None) };
        let bytes = fs::read(out.join("snapshots").join(format!("gen-{g}.json")))?;
        serde_json::from_slice(&bytes)
            .map(Some)
            .map_err(|e| EvolutionError::Snapshot(format!("gen-{g}.json: {e}")))
    }

    /// Continues the run in `out` from its latest snapshot; work done after
    /// that snapshot is discarded and redone.
    pub fn resume(out: &Path, provider: Arc<dyn ChatProvider>) -> Result<Self, EvolutionError> {
        let config = Self::load_config(out)?;
        config.validate()?;
        let state = Self::latest_snapshot(out)?.unwrap_or(Snapshot {
            generation: 0,
            next_id: 0,
            niches: Vec::new(),
            archive: Archive::new(config.archive_cap),
            transfers: Vec::new(),
            log_lines: LogLines::default(),
        });
        let done = if state.niches.is_empty() { None } else { Some(state.generation) };
        let kept = truncate_lines(&out.join("exchanges.jsonl"), state.log_lines.exchanges)?;
        for line in &kept {
            let v: serde_json::Value = serde_json::from_str(line)
                .map_err(|e| EvolutionError::Snapshot(format!("exchanges.jsonl: {e}")))?;
            if let (Some(id), Some(hash)) = (v["template_id"].as_str().and_then(|s| s.parse::<TemplateId>().ok()), v["prompt_hash"].as_str()) {
                provider.answered(id, hash);
            }
        }
        truncate_lines(&out.join("archive.jsonl"), state.log_lines.archive)?;
        truncate_lines(&out.join("transfers.jsonl"), state.log_lines.transfers)?;
        truncate_lines(&out.join("report.csv"), state.log_lines.report + 1)?;
        for task in &config.tasks {
            let dir = out.join("niches").join(task.as_str());
            let Ok(entries) = fs::read_dir(&dir) else { continue };
            for e in entries.flatten() {
                let name = e.file_name().to_string_lossy().to_string();
                let g: Option<usize> = name.strip_prefix("gen-").and_then(|s| s.parse().ok());
                if matches!((g, done), (Some(g), Some(d)) if g > d) || (g.is_some() && done.is_none()) {
                    fs::remove_dir_all(e.path())?;
                }
            }
        }
        log::info!("resuming {} after generation {}", out.display(), state.generation);
        Self::build(config, provider, out, state)
    }

    /// Replaces the evaluator, e.g. to change the worker count.
    pub fn with_evaluator(mut self, evaluator: Evaluator) -> Self {
        self.evaluator = evaluator;
        self
    }

    /// Evaluates under `profile` with `workers` threads instead of the
    /// search profile and the environment's worker count.
    pub fn with_evaluation(mut self, profile: crate::eval::Profile, workers: usize) -> Result<Self, EvolutionError> {
        let budget = self.config.budget.resolve(profile);
        self.evaluator = Evaluator::new(Arc::new(self.evaluator.suite().clone()), budget, workers)?
            .with_cache(FitnessCache::persistent(&self.out.join("fitness-cache"))?);
        Ok(self)
    }

    /// Called after initialization (generation 0) and after every generation.
    pub fn on_generation(mut self, f: impl FnMut(&GenerationSummary) + 'static) -> Self {
        self.observer = Some(Box::new(f));
        self
    }

    pub fn state(&self) -> &Snapshot {
        &self.state
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn run(mut self) -> Result<DiscoveryOutcome, EvolutionError> {
        if self.state.niches.is_empty() {
            self.initialize()?;
        }
        while self.state.generation < self.config.generations {
            let g = self.state.generation + 1;
            self.generation(g)?;
        }
        self.write_best()?;
        let best = self
            .state
            .niches
            .iter()
            .filter_map(|n| n.best_so_far.clone().map(|b| (n.task, b)))
            .collect();
        Ok(DiscoveryOutcome {
            out: self.out.clone(),
            generations: self.state.generation,
            niches: self.state.niches.clone(),
            best,
        })
    }

    fn eval_seed(&self) -> u64 {
        evaluation_seed(self.config.seed)
    }

    fn tests(&self) -> Vec<ProblemInstance> {
        self.evaluator.suite().test_instances.clone()
    }

    fn next_id(&mut self) -> String {
        let id = format!("i{:05}", self.state.next_id);
        self.state.next_id += 1;
        id
    }

    fn job(&self, task: TaskId, program: &RewardProgram) -> EvalJob {
        EvalJob {
            reward: program.clone(),
            task: MetaTask::new(task),
            seed: self.eval_seed(),
        }
    }

    /// Turns an evaluated candidate into an individual and writes its files.
    fn birth(&mut self, c: Candidate, task: TaskId, generation: usize, report: &FitnessReport) -> Result<Individual, EvolutionError> {
        let valid = report.is_valid();
        let ind = Individual {
            id: self.next_id(),
            task,
            thought: c.thought,
            program: c.program,
            fitness: if valid { report.fitness } else { f64::INFINITY },
            per_instance_medians: report.per_instance_medians.clone(),
            generation,
            lineage: c.lineage,
            status: if valid { Status::Alive } else { Status::Invalid },
            reflection: c.reflection,
            invalid_reason: report.invalid.clone(),
            ancestry: c.ancestry,
        };
        self.write_individual(&ind)?;
        Ok(ind)
    }

    fn write_individual(&self, ind: &Individual) -> Result<(), EvolutionError> {
        let dir = self
            .out
            .join("niches")
            .join(ind.task.as_str())
            .join(format!("gen-{}", ind.generation));
        fs::create_dir_all(&dir)?;
        let mut v = serde_json::to_value(ind).unwrap();
        v.as_object_mut().unwrap().remove("ancestry");
        v["content_hash"] = ind.program.content_hash().into();
        fs::write(dir.join(format!("{}.json", ind.id)), serde_json::to_string_pretty(&v).unwrap() + "\n")?;
        fs::write(dir.join(format!("{}.rsl", ind.id)), ind.program.source())?;
        Ok(())
    }

    fn archive(&mut self, ind: Individual, generation: usize) -> Result<(), EvolutionError> {
        let mut v = serde_json::to_value(&ind).unwrap();
        let obj = v.as_object_mut().unwrap();
        obj.remove("ancestry");
        obj.insert("status".into(), "eliminated".into());
        obj.insert("eliminated_in".into(), generation.into());
        append_line(&self.out.join("archive.jsonl"), &serde_json::to_string(&v).unwrap())?;
        self.state.log_lines.archive += 1;
        self.state.archive.push(ind);
        Ok(())
    }

    fn ask_code(
        &self,
        id: TemplateId,
        v: &BTreeMap<String, String>,
        task: TaskId,
    ) -> Result<Option<Generated<RewardProgram>>, EvolutionError> {
        ask_code(&self.llm, id, v, task)
    }

    fn initialize(&mut self) -> Result<(), EvolutionError> {
        let online = self.config.online_metadata;
        let mut invalid = BTreeMap::new();
        for task in self.config.tasks.clone() {
            let meta = build_metadata(task, task.metadata(), online.then_some(&self.llm));
            let (niche, bad) = self.initialize_niche(task, meta)?;
            invalid.insert(task, bad);
            self.state.niches.push(niche);
        }
        self.finish_generation(0, &invalid, &BTreeMap::new(), BTreeMap::new(), Vec::new())
    }

    fn initialize_niche(&mut self, task: TaskId, metadata: crate::envs::Metadata) -> Result<(Niche, usize), EvolutionError> {
        let n = self.config.niche_size;
        let desc = metadata.render();
        let anchor_program = task.handcrafted_reward();
        let report = self.evaluator.evaluate(&self.job(task, &anchor_program))?;
        let anchor = self.birth(
            Candidate {
                niche: 0,
                thought: "Human-designed reward of the task.".into(),
                program: anchor_program,
                lineage: Lineage {
                    operator: OperatorTag::Expert,
                    parents: Vec::new(),
                },
                reflection: None,
                ancestry: Vec::new(),
            },
            task,
            0,
            &report,
        )?;
        if !anchor.is_valid() {
            return Err(EvolutionError::Config(format!(
                "{task}: the human-designed reward failed: {}",
                anchor.invalid_reason.clone().unwrap_or_default()
            )));
        }
        let mut accepted: Vec<Individual> = Vec::new();
        let mut rejected: Vec<Individual> = Vec::new();
        let mut invalid = 0;
        for _ in 0..self.config.init_attempts() {
            if accepted.len() + 1 >= n {
                break;
            }
            let existing: Vec<&Individual> = std::iter::once(&anchor).chain(accepted.iter()).collect();
            let v = init_vars(&desc, &existing, self.config.difference_rate);
            let Some(g) = self.ask_code(TemplateId::Init, &v, task)? else {
                continue;
            };
            let report = self.evaluator.evaluate(&self.job(task, &g.value))?;
            let c = Candidate {
                niche: 0,
                thought: g.thought,
                program: g.value,
                lineage: Lineage {
                    operator: OperatorTag::Init,
                    parents: Vec::new(),
                },
                reflection: None,
                ancestry: Vec::new(),
            };
            let ind = self.birth(c, task, 0, &report)?;
            if !ind.is_valid() {
                invalid += 1;
            } else if ind.fitness < anchor.fitness {
                accepted.push(ind);
            } else {
                rejected.push(ind);
            }
        }
        let mut init_fallback = false;
        if accepted.len() + 1 < n {
            init_fallback = true;
            log::warn!(
                "{task}: only {} of {} generated rewards beat the anchor; filling with the best rejected ones",
                accepted.len(),
                n - 1
            );
            let order = super::rank_order(&rejected);
            let need = n - 1 - accepted.len();
            let mut slots: Vec<Option<Individual>> = rejected.into_iter().map(Some).collect();
            for &i in order.iter().take(need) {
                accepted.push(slots[i].take().unwrap());
            }
            rejected = slots.into_iter().flatten().collect();
        }
        let mut niche = Niche {
            task,
            metadata,
            population: Vec::new(),
            best_so_far: None,
            init_fallback,
        };
        niche.population.push(anchor);
        niche.population.extend(accepted);
        for ind in niche.population.clone() {
            niche.observe(&ind);
        }
        let order = super::rank_order(&rejected);
        let mut slots: Vec<Option<Individual>> = rejected.into_iter().map(Some).collect();
        for i in order {
            let r = slots[i].take().unwrap();
            self.archive(r, 0)?;
        }
        Ok((niche, invalid))
    }

    /// Archive summary for the current generation, refreshed at most once per generation.
    fn archive_summary(&mut self, g: usize) -> Result<(String, usize), EvolutionError> {
        if self.state.archive.is_empty() {
            return Ok((NO_ARCHIVE.to_string(), 0));
        }
        if self.state.archive.summary_generation == Some(g) {
            if let Some(s) = &self.state.archive.summary {
                return Ok((s.clone(), self.state.archive.summary_size));
            }
        }
        let all: Vec<&Individual> = self.state.archive.entries.iter().collect();
        let picked: Vec<&Individual> = summary_entries(&all, self.config.summary_entries)
            .into_iter()
            .map(|i| all[i])
            .collect();
        let tasks: String = self
            .state
            .niches
            .iter()
            .map(|n| n.metadata.render())
            .collect::<Vec<_>>()
            .join("\n\n");
        let previous = self.state.archive.summary.clone().unwrap_or_else(|| "none yet".into());
        let v = m3_reflect_vars(&tasks, &picked, &previous);
        let size = picked.len();
        let ex = self.llm.ask(TemplateId::M3Reflect, &v)?;
        let summary = parse_summary(&ex.response);
        self.state.archive.summary = Some(summary.clone());
        self.state.archive.summary_generation = Some(g);
        self.state.archive.summary_size = size;
        Ok((summary, size))
    }

    fn candidate(&self, k: usize, g: Generated<RewardProgram>, op: OperatorTag, parent: &Individual, others: &[&Individual]) -> Candidate {
        let mut parents = vec![parent.id.clone()];
        parents.extend(others.iter().map(|o| o.id.clone()));
        let mut ancestry = parent.ancestry.clone();
        ancestry.push(parent.as_ancestor());
        let excess = ancestry.len().saturating_sub(self.config.history_length);
        ancestry.drain(..excess);
        Candidate {
            niche: k,
            thought: g.thought,
            program: g.value,
            lineage: Lineage { operator: op, parents },
            reflection: None,
            ancestry,
        }
    }

    /// One variation of `parent` by `op`; `None` when the slot is skipped.
    fn vary(
        &mut self,
        op: OperatorTag,
        k: usize,
        parent: &Individual,
        g: usize,
        niche_bests: &[Individual],
        partner_rng: &mut ChaCha8Rng,
    ) -> Result<Option<Candidate>, EvolutionError> {
        let task = self.state.niches[k].task;
        let desc = self.state.niches[k].metadata.render();
        let tests = self.tests();
        let cand = match op {
            OperatorTag::M1 => {
                let rv = m1_reflect_vars(&desc, parent, &tests, self.config.failure_cases);
                let reflection = self.llm.ask(TemplateId::M1Reflect, &rv)?.response.trim().to_string();
                let v = m1_mutate_vars(&desc, parent, &reflection);
                self.ask_code(TemplateId::M1Mutate, &v, task)?.map(|gen| {
                    let mut c = self.candidate(k, gen, op, parent, &[]);
                    c.reflection = Some(reflection);
                    c
                })
            }
            OperatorTag::M2 => {
                let v = m2_vars(&desc, parent, self.config.history_length, &tests);
                self.ask_code(TemplateId::M2, &v, task)?.map(|gen| self.candidate(k, gen, op, parent, &[]))
            }
            OperatorTag::M3 => {
                let (summary, size) = self.archive_summary(g)?;
                let v = m3_mutate_vars(&desc, &summary, size, parent);
                self.ask_code(TemplateId::M3Mutate, &v, task)?.map(|gen| {
                    let mut c = self.candidate(k, gen, op, parent, &[]);
                    c.reflection = Some(summary);
                    c
                })
            }
            OperatorTag::C1 => {
                let nb = &niche_bests[k];
                let gb = super::rank_order(niche_bests).first().map(|&i| niche_bests[i].clone()).unwrap_or_else(|| nb.clone());
                let v = c1_vars(&desc, parent, nb, &gb);
                self.ask_code(TemplateId::C1, &v, task)?.map(|gen| self.candidate(k, gen, op, parent, &[nb, &gb]))
            }
            OperatorTag::C2 => {
                let n = self.state.niches.len();
                if n < 2 {
                    log::warn!("{task}: cross-niche crossover needs a second niche; slot skipped");
                    return Ok(None);
                }
                let mut j = partner_rng.random_range(0..n - 1);
                if j >= k {
                    j += 1;
                }
                let partner = &niche_bests[j];
                let v = c2_vars(&desc, parent, partner);
                self.ask_code(TemplateId::C2, &v, task)?.map(|gen| self.candidate(k, gen, op, parent, &[partner]))
            }
            OperatorTag::M0Simple => {
                let v = simple_vars(&desc, parent);
                self.ask_code(TemplateId::SimpleMutate, &v, task)?.map(|gen| self.candidate(k, gen, op, parent, &[]))
            }
            OperatorTag::Expert | OperatorTag::Init | OperatorTag::Kt => {
                return Err(EvolutionError::Config(format!("`{op}` is not a reproduction operator")))
            }
        };
        Ok(cand)
    }

    fn generation(&mut self, g: usize) -> Result<(), EvolutionError> {
        let niche_bests: Vec<Individual> = self
            .state
            .niches
            .iter()
            .map(|n| n.best().cloned().expect("niches keep at least one valid member"))
            .collect();
        let mut partner_rng = ChaCha8Rng::seed_from_u64(mix_seed(self.config.seed, STREAM_PARTNER ^ g as u64));
        let mut pending = Vec::new();
        for k in 0..self.state.niches.len() {
            let parents = self.state.niches[k].population.clone();
            for parent in &parents {
                for op in OperatorTag::REPRODUCTION {
                    let actual = self.config.replace_ops.get(&op).copied().unwrap_or(op);
                    if let Some(c) = self.vary(actual, k, parent, g, &niche_bests, &mut partner_rng)? {
                        pending.push(c);
                    }
                }
            }
        }
        let jobs: Vec<EvalJob> = pending
            .iter()
            .map(|c| self.job(self.state.niches[c.niche].task, &c.program))
            .collect();
        let reports = self.evaluator.schedule(&jobs);
        let mut offspring: Vec<Vec<Individual>> = vec![Vec::new(); self.state.niches.len()];
        let mut counts = BTreeMap::new();
        let mut invalid = BTreeMap::new();
        for (c, r) in pending.into_iter().zip(reports) {
            let r = r?;
            let k = c.niche;
            let task = self.state.niches[k].task;
            let ind = self.birth(c, task, g, &r)?;
            *counts.entry(task).or_insert(0) += 1;
            if !ind.is_valid() {
                *invalid.entry(task).or_insert(0) += 1;
            }
            offspring[k].push(ind);
        }
        let n = self.config.niche_size;
        for (k, kids) in offspring.into_iter().enumerate() {
            for kid in &kids {
                self.state.niches[k].observe(kid);
            }
            let mut pool = std::mem::take(&mut self.state.niches[k].population);
            pool.extend(kids.into_iter().filter(Individual::is_valid));
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.config.seed, STREAM_SELECT ^ ((g as u64) << 8) ^ k as u64));
            let (survivors, eliminated) = select_survivors(pool, n, 6 * n, &mut rng);
            self.state.niches[k].population = survivors;
            for e in eliminated {
                self.archive(e, g)?;
            }
        }
        let (records, kt_invalid) = self.transfer_pass(g)?;
        for (task, bad) in kt_invalid {
            *invalid.entry(task).or_insert(0) += bad;
        }
        let mut kt = BTreeMap::new();
        for r in records.iter().filter(|r| r.outcome == TransferOutcome::Replaced) {
            *kt.entry(r.target_task).or_insert(0) += 1;
        }
        self.finish_generation(g, &invalid, &kt, counts, records)
    }

    /// One knowledge-transfer pass; returns its records and invalid transplants per target.
    fn transfer_pass(&mut self, g: usize) -> Result<(Vec<TransferRecord>, BTreeMap<TaskId, usize>), EvolutionError> {
        let mut invalid = BTreeMap::new();
        if self.config.disable_kt || self.state.niches.len() < 2 {
            return Ok((Vec::new(), invalid));
        }
        let cap = self.config.kt_pathways();
        let v = kt_reflect_vars(&self.state.transfers, &self.state.niches, cap);
        let ex = self.llm.ask(TemplateId::KtReflect, &v)?;
        let plan = match parse_kt_plan(&ex.response) {
            Ok(p) => p,
            Err(e) => {
                log::warn!("generation {g}: no transfer plan ({e}); transfer skipped");
                return Ok((Vec::new(), invalid));
            }
        };
        let index = |t: TaskId, niches: &[Niche]| niches.iter().position(|n| n.task == t);
        let pathways: Vec<_> = plan
            .into_iter()
            .filter(|p| {
                p.source_task != p.target_task
                    && index(p.source_task, &self.state.niches).is_some()
                    && index(p.target_task, &self.state.niches).is_some()
            })
            .take(cap)
            .collect();
        let mut asked = Vec::new();
        for p in &pathways {
            let s = index(p.source_task, &self.state.niches).unwrap();
            let t = index(p.target_task, &self.state.niches).unwrap();
            let source = self.state.niches[s].best().cloned().expect("niches keep at least one valid member");
            let v = kt_execute_vars(&source.thought, source.program.source(), &self.state.niches[t].metadata, p);
            let gen = self.ask_code(TemplateId::KtExecute, &v, p.target_task)?;
            asked.push((p.clone(), source, t, gen));
        }
        let jobs: Vec<EvalJob> = asked
            .iter()
            .filter_map(|(p, _, _, gen)| gen.as_ref().map(|gen| self.job(p.target_task, &gen.value)))
            .collect();
        let mut reports = self.evaluator.schedule(&jobs).into_iter();
        let mut records = Vec::new();
        for (p, source, t, gen) in asked {
            let mut rec = TransferRecord {
                generation: g,
                source_task: p.source_task,
                target_task: p.target_task,
                reflection: p.rationale.clone(),
                strategy: p.transfer_strategy_guidance.clone(),
                source_id: source.id.clone(),
                transplant_id: None,
                replaced_id: None,
                transplant_fitness: f64::INFINITY,
                replaced_fitness: f64::INFINITY,
                outcome: TransferOutcome::Failed,
            };
            if let Some(gen) = gen {
                let report = reports.next().expect("one report per transplant")?;
                let c = Candidate {
                    niche: t,
                    thought: gen.thought,
                    program: gen.value,
                    lineage: Lineage {
                        operator: OperatorTag::Kt,
                        parents: vec![source.id.clone()],
                    },
                    reflection: Some(p.rationale.clone()),
                    ancestry: Vec::new(),
                };
                let ind = self.birth(c, p.target_task, g, &report)?;
                rec.transplant_id = Some(ind.id.clone());
                rec.transplant_fitness = ind.fitness;
                if ind.is_valid() {
                    let worst = self.state.niches[t].worst_index().expect("niches keep at least one valid member");
                    let replaced = self.state.niches[t].population.remove(worst);
                    rec.replaced_id = Some(replaced.id.clone());
                    rec.replaced_fitness = replaced.fitness;
                    rec.outcome = TransferOutcome::Replaced;
                    self.state.niches[t].observe(&ind);
                    self.state.niches[t].population.push(ind);
                    self.archive(replaced, g)?;
                } else {
                    rec.outcome = TransferOutcome::Invalid;
                    *invalid.entry(p.target_task).or_insert(0) += 1;
                }
            }
            append_line(&self.out.join("transfers.jsonl"), &serde_json::to_string(&rec).unwrap())?;
            self.state.log_lines.transfers += 1;
            self.state.transfers.push(rec.clone());
            records.push(rec);
        }
        Ok((records, invalid))
    }

    fn finish_generation(
        &mut self,
        g: usize,
        invalid: &BTreeMap<TaskId, usize>,
        kt: &BTreeMap<TaskId, usize>,
        offspring: BTreeMap<TaskId, usize>,
        transfers: Vec<TransferRecord>,
    ) -> Result<(), EvolutionError> {
        let mut rows = Vec::new();
        for niche in &self.state.niches {
            let alive: Vec<f64> = niche.population.iter().filter(|i| i.is_valid()).map(|i| i.fitness).collect();
            let mean = if alive.is_empty() { f64::INFINITY } else { alive.iter().sum::<f64>() / alive.len() as f64 };
            rows.push(ReportRow {
                generation: g,
                task: niche.task,
                best_fitness: niche.best_so_far.as_ref().map_or(f64::INFINITY, |b| b.fitness),
                mean_fitness: mean,
                invalid_count: invalid.get(&niche.task).copied().unwrap_or(0),
                kt_count: kt.get(&niche.task).copied().unwrap_or(0),
            });
        }
        for row in &rows {
            append_line(&self.out.join("report.csv"), &row.csv())?;
            self.state.log_lines.report += 1;
        }
        self.state.generation = g;
        self.state.log_lines.exchanges = self.exchange_base + self.llm.exchange_count();
        let bytes = serde_json::to_vec(&self.state).map_err(|e| EvolutionError::Snapshot(e.to_string()))?;
        let path = self.out.join("snapshots").join(format!("gen-{g}.json"));
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, bytes)?;
        fs::rename(&tmp, &path)?;
        let summary = GenerationSummary {
            generation: g,
            rows,
            offspring,
            transfers,
        };
        if let Some(f) = self.observer.as_mut() {
            f(&summary);
        }
        Ok(())
    }

    fn write_best(&self) -> Result<(), EvolutionError> {
        let dir = self.out.join("best");
        fs::create_dir_all(&dir)?;
        for niche in &self.state.niches {
            if let Some(b) = &niche.best_so_far {
                fs::write(dir.join(format!("{}.rsl", niche.task)), b.program.source())?;
                let mut v = serde_json::to_value(b).unwrap();
                v.as_object_mut().unwrap().remove("ancestry");
                fs::write(dir.join(format!("{}.json", niche.task)), serde_json::to_string_pretty(&v).unwrap() + "\n")?;
            }
        }
        Ok(())
    }
}
