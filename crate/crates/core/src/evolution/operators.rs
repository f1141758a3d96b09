//! Prompt variables of every operator.

use std::collections::BTreeMap;

use super::{Individual, Niche, TransferRecord, TransferOutcome};
use crate::envs::{Metadata, TaskId};
use crate::llm::{vars, LlmClient, TemplateId, TransferPathway};
use crate::problems::ProblemInstance;

type Vars = BTreeMap<String, String>;

pub(super) fn code_block(source: &str) -> String {
    format!("\n```rsl\n{}\n```\n", source.trim_end())
}

pub(super) fn fitness_text(f: f64) -> String {
    if f.is_finite() {
        format!("{f:.6}")
    } else {
        "invalid".into()
    }
}

/// The `k` test instances where the individual scored worst; ties keep suite order.
pub fn failure_cases(medians: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..medians.len()).collect();
    idx.sort_by(|&a, &b| medians[b].total_cmp(&medians[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Metadata for prompts. With a client the algorithm summary is rewritten by
/// the provider; any failure, or a field dictionary that does not cover the
/// task schema, falls back to the bundled metadata.
pub fn build_metadata(task: TaskId, base: Metadata, client: Option<&LlmClient>) -> Metadata {
    let bundled = task.metadata();
    let schema = task.schema();
    let mut meta = if schema.names().iter().all(|k| base.c_code.contains(k)) {
        base
    } else {
        log::warn!("{task}: metadata does not describe every context field; using the bundled metadata");
        bundled.clone()
    };
    let Some(client) = client else {
        return meta;
    };
    let v = vars([
        ("Task_id", task.as_str().to_string()),
        ("Algorithm_description", meta.c_alg.clone()),
        ("Field_list", meta.c_code_text()),
    ]);
    match client.ask(TemplateId::MetaSummarize, &v) {
        Ok(ex) if !ex.response.trim().is_empty() => meta.c_alg = ex.response.trim().to_string(),
        Ok(_) => log::warn!("{task}: empty metadata summary; keeping the bundled description"),
        Err(e) => log::warn!("{task}: metadata summary failed ({e}); keeping the bundled description"),
    }
    meta
}

pub(super) fn init_vars(desc: &str, existing: &[&Individual], difference_rate: u32) -> Vars {
    let mut listed = String::new();
    for (i, ind) in existing.iter().enumerate() {
        listed.push_str(&format!(
            "No. {}: {} (fitness {})\n",
            i + 1,
            ind.thought.trim(),
            fitness_text(ind.fitness)
        ));
    }
    vars([
        ("Task_description", desc.to_string()),
        ("MetaBBO_rewards_nums", existing.len().to_string()),
        ("Existing_rewards", listed),
        ("difference_rate", difference_rate.to_string()),
    ])
}

pub(super) fn m1_reflect_vars(desc: &str, parent: &Individual, tests: &[ProblemInstance], k: usize) -> Vars {
    let cases = failure_cases(&parent.per_instance_medians, k);
    let mut chars = String::new();
    let mut perf = String::new();
    for &i in &cases {
        let inst = &tests[i];
        chars.push_str(&format!("\n- {}: {}", inst.label(), inst.function_id().characteristics()));
        perf.push_str(&format!(
            "\n- {}: normalized final cost {:.4} (0 is the optimum, 1 is no progress)",
            inst.label(),
            parent.per_instance_medians[i]
        ));
    }
    vars([
        ("Task_description", desc.to_string()),
        ("Thought", parent.thought.clone()),
        ("Code", code_block(parent.program.source())),
        ("Bad_Case_Characteristics", chars),
        ("Bad_Case_Performance", perf),
    ])
}

pub(super) fn m1_mutate_vars(desc: &str, parent: &Individual, reflection: &str) -> Vars {
    vars([
        ("Task_description", desc.to_string()),
        ("Code", code_block(parent.program.source())),
        ("Reflection", reflection.to_string()),
    ])
}

fn detailed(medians: &[f64], tests: &[ProblemInstance]) -> String {
    let mut out = String::new();
    for (m, inst) in medians.iter().zip(tests) {
        out.push_str(&format!("\n- {}: {m:.4}", inst.label()));
    }
    out
}

pub(super) const NO_HISTORY: &str = "No history yet: this individual has no recorded ancestors.";

pub(super) fn m2_vars(desc: &str, parent: &Individual, history_length: usize, tests: &[ProblemInstance]) -> Vars {
    let start = parent.ancestry.len().saturating_sub(history_length);
    let trace = &parent.ancestry[start..];
    let history = if trace.is_empty() {
        NO_HISTORY.to_string()
    } else {
        let mut h = String::new();
        for (i, a) in trace.iter().enumerate() {
            h.push_str(&format!(
                "Version {} (generation {}, fitness {}):\nThought: {}\nCode:{}\n",
                i + 1,
                a.generation,
                fitness_text(a.fitness),
                a.thought.trim(),
                code_block(&a.source)
            ));
        }
        h
    };
    vars([
        ("Task", desc.to_string()),
        ("History_Trace", history),
        ("Current_Fitness", fitness_text(parent.fitness)),
        ("Fitness_Detailed", detailed(&parent.per_instance_medians, tests)),
        ("Current_Thought", parent.thought.clone()),
        ("Current_Code", code_block(parent.program.source())),
    ])
}

pub(super) const NO_ARCHIVE: &str = "no archive yet";

/// Archived individuals to summarize: the best `limit` by fitness.
pub(super) fn summary_entries(archive: &[&Individual], limit: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..archive.len()).collect();
    idx.sort_by(|&a, &b| archive[a].fitness.total_cmp(&archive[b].fitness).then(archive[a].id.cmp(&archive[b].id)));
    idx.truncate(limit);
    idx
}

pub(super) fn m3_reflect_vars(tasks: &str, archive: &[&Individual], previous: &str) -> Vars {
    let mut listed = String::new();
    for (i, ind) in archive.iter().enumerate() {
        listed.push_str(&format!(
            "No. {} ({}, fitness {}): {}{}\n",
            i + 1,
            ind.task,
            fitness_text(ind.fitness),
            ind.thought.trim(),
            code_block(ind.program.source())
        ));
    }
    vars([
        ("Task_Description", tasks.to_string()),
        ("MetaBBO_reward_nums", archive.len().to_string()),
        ("Archive_rewards", listed),
        ("Previous_summary", previous.to_string()),
    ])
}

pub(super) fn m3_mutate_vars(desc: &str, summary: &str, summarized: usize, parent: &Individual) -> Vars {
    vars([
        ("Task", desc.to_string()),
        ("reinforcement_learning_reward_nums", summarized.to_string()),
        ("summary", summary.to_string()),
        ("individual.thought", parent.thought.clone()),
        ("individual.reward_code", code_block(parent.program.source())),
    ])
}

pub(super) fn c1_vars(desc: &str, parent: &Individual, niche_best: &Individual, global_best: &Individual) -> Vars {
    vars([
        ("Task_description", desc.to_string()),
        ("chosen_MetaBBO_reward_thought", parent.thought.clone()),
        ("chosen_MetaBBO_reward_code", code_block(parent.program.source())),
        ("cluster_best_MetaBBO_reward_thought", niche_best.thought.clone()),
        ("cluster_best_MetaBBO_reward_code", code_block(niche_best.program.source())),
        ("global_best_MetaBBO_reward_thought", global_best.thought.clone()),
        ("global_best_MetaBBO_reward_code", code_block(global_best.program.source())),
    ])
}

pub(super) fn c2_vars(desc: &str, parent: &Individual, partner: &Individual) -> Vars {
    vars([
        ("Task_description", desc.to_string()),
        ("MetaBBO_reward_nums", "2".to_string()),
        ("individual1.thought", parent.thought.clone()),
        ("individual1.reward_code", code_block(parent.program.source())),
        ("individual2.thought", partner.thought.clone()),
        ("individual2.reward_code", code_block(partner.program.source())),
    ])
}

pub(super) fn simple_vars(desc: &str, parent: &Individual) -> Vars {
    vars([
        ("Task_description", desc.to_string()),
        ("Thought", parent.thought.clone()),
        ("Code", code_block(parent.program.source())),
    ])
}

pub(super) const NO_TRANSFERS: &str = "No transfers have been made yet.";

pub(super) fn kt_reflect_vars(history: &[TransferRecord], niches: &[Niche], pathways: usize) -> Vars {
    let hist = if history.is_empty() {
        NO_TRANSFERS.to_string()
    } else {
        let mut h = String::new();
        for r in history {
            let verdict = match r.outcome {
                TransferOutcome::Replaced if r.transplant_fitness < r.replaced_fitness => "improved the target",
                TransferOutcome::Replaced => "did not beat the replaced individual",
                TransferOutcome::Invalid => "the adapted reward failed",
                TransferOutcome::Failed => "no usable adaptation",
            };
            h.push_str(&format!(
                "\n- generation {}: {} -> {}, transplant fitness {} vs replaced {} ({verdict})",
                r.generation,
                r.source_task.method_name(),
                r.target_task.method_name(),
                fitness_text(r.transplant_fitness),
                fitness_text(r.replaced_fitness),
            ));
        }
        h
    };
    let mut tasks = String::new();
    for n in niches {
        tasks.push_str(&format!("\n{}\nCurrent individuals:\n", n.metadata.render()));
        for i in super::rank_order(&n.population) {
            let ind = &n.population[i];
            tasks.push_str(&format!("- {} (fitness {}): {}\n", ind.id, fitness_text(ind.fitness), ind.thought.trim()));
        }
    }
    vars([
        ("kt_historical_info", hist),
        ("tasks_descriptions", tasks),
        ("N_direction", pathways.to_string()),
    ])
}

pub(super) fn kt_execute_vars(thought: &str, source: &str, target: &Metadata, p: &TransferPathway) -> Vars {
    vars([
        ("Source_task", format!("{} ({})", p.source_task, p.source_task.method_name())),
        ("Source_thought", thought.to_string()),
        ("Source_code", code_block(source)),
        ("Target_task", p.target_task.as_str().to_string()),
        ("Target_metadata", target.render()),
        ("Rationale", p.rationale.clone()),
        ("Strategy", p.transfer_strategy_guidance.clone()),
    ])
}
