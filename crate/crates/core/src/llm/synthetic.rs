use std::collections::HashMap;
use std::sync::Mutex;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use super::parse::fences;
use super::{ChatProvider, ChatRequest, Completion, LlmError, TemplateId};
use crate::envs::TaskId;
use crate::rsl;
use crate::seeding::mix_seed;

/// Offline stand-in for a chat model.
///
/// Answers are a pure function of the seed, the template, the prompt text and
/// how often that exact prompt was asked before.
/// Code answers copy the first reward of the target task found in the prompt
/// and perturb its float constants, sometimes adding a small extra term; when
/// the prompt holds no such reward a built-in starter reward is used instead.
/// A small share of answers is deliberately malformed or reads a field the
/// task does not have, so the re-prompt and invalid-reward paths get exercised.
#[derive(Debug)]
pub struct SyntheticProvider {
    seed: u64,
    malformed_rate: f64,
    invalid_rate: f64,
    asked: Mutex<HashMap<[u8; 32], u64>>,
}

impl SyntheticProvider {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            malformed_rate: 0.05,
            invalid_rate: 0.04,
            asked: Mutex::default(),
        }
    }

    /// Disables the deliberately broken answers.
    pub fn well_behaved(mut self) -> Self {
        self.malformed_rate = 0.0;
        self.invalid_rate = 0.0;
        self
    }

    fn key(id: TemplateId, prompt_hash: &str) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(id.as_str().as_bytes());
        h.update([0]);
        h.update(prompt_hash.as_bytes());
        h.finalize().into()
    }

    fn rng(&self, request: &ChatRequest) -> ChaCha8Rng {
        let d = Self::key(request.template_id, &super::prompt_hash(&request.prompt));
        let mut asked = self.asked.lock().unwrap();
        let n = asked.entry(d).or_insert(0);
        *n += 1;
        let v = u64::from_le_bytes(d[..8].try_into().unwrap());
        ChaCha8Rng::seed_from_u64(mix_seed(mix_seed(self.seed, v), *n))
    }
}

const STARTERS_DE: [&str; 2] = [
    "# relative gain of the trial over its parent, plus an acceptance bonus
gain = ctx.delta_cost / (abs(ctx.parent_cost) + 1e-12)
r = 0.5 * ctx.accepted + tanh(3.0 * max(gain, 0.0))
return r, {\"gain\": gain}
",
    "# best-cost improvement in units of the cost spread
imp = ctx.gbest_improve / (ctx.std_cost + 1e-12)
r = tanh(2.0 * imp) + 0.1 * ctx.accepted - 0.05 * ctx.progress
return r, {\"imp\": imp}
",
];

const STARTERS_DAS: [&str; 2] = [
    "# relative best-cost drop over the interval
rel = (ctx.last_cost - ctx.current_gbest) / (abs(ctx.last_cost) + 1e-12)
r = tanh(5.0 * rel)
return r, {\"rel\": rel}
",
    "# log-scaled improvement, weighted up late in the run
gain = max(ctx.last_cost - ctx.current_gbest, 0.0) / ctx.cost_scale_factor
r = log1p(gain) * (1.0 + 0.5 * ctx.FEs / ctx.MaxFEs)
return r, {\"gain\": gain}
",
];

const STARTERS_PSO: [&str; 2] = [
    "# relative improvement minus a stagnation penalty
imp = (ctx.pre_gbest - ctx.gbest_val) / (abs(ctx.pre_gbest) + 1e-12)
r = tanh(4.0 * imp) - 0.01 * min(ctx.no_improve, 20)
return r, {\"imp\": imp}
",
    "# improvement flag with a diversity bonus
r = 0.0
if ctx.gbest_val < ctx.pre_gbest {
    r = 1.0 + 0.2 * ctx.diversity / (ctx.diversity + 1.0)
}
return r, {\"improved\": r}
",
];

const EXTRAS_DE: [&str; 4] = [
    "0.05 * ctx.accepted",
    "0.1 * tanh(ctx.gbest_improve / (ctx.std_cost + 1e-12))",
    "-0.02 * ctx.progress",
    "0.05 * clip(ctx.long_ema_improvement, 0.0, 1.0)",
];

const EXTRAS_DAS: [&str; 3] = [
    "0.05 * ctx.FEs / ctx.MaxFEs",
    "0.1 * tanh((ctx.last_cost - ctx.current_gbest) / ctx.cost_scale_factor)",
    "-0.05 * tanh(std(ctx.population.cost) / (abs(mean(ctx.population.cost)) + 1e-12))",
];

const EXTRAS_PSO: [&str; 3] = [
    "0.05 * tanh((ctx.pre_gbest - ctx.gbest_val) / (abs(ctx.pre_gbest) + 1e-12))",
    "-0.005 * min(ctx.no_improve, 20)",
    "0.05 * tanh(ctx.diversity)",
];

fn starters(task: TaskId) -> &'static [&'static str] {
    match task {
        TaskId::DeOperatorSelection => &STARTERS_DE,
        TaskId::AlgorithmSelection => &STARTERS_DAS,
        TaskId::PsoParameterControl => &STARTERS_PSO,
    }
}

fn extras(task: TaskId) -> &'static [&'static str] {
    match task {
        TaskId::DeOperatorSelection => &EXTRAS_DE,
        TaskId::AlgorithmSelection => &EXTRAS_DAS,
        TaskId::PsoParameterControl => &EXTRAS_PSO,
    }
}

/// The task a prompt is about: an explicit target line wins, else the first
/// `Task: <id>` header.
fn target_task(prompt: &str) -> Option<TaskId> {
    for line in prompt.lines() {
        if let Some(rest) = line.trim().strip_prefix("Target task:") {
            if let Some(t) = rest.split_whitespace().next().and_then(TaskId::lookup) {
                return Some(t);
            }
        }
    }
    tasks_mentioned(prompt).into_iter().next()
}

/// Every `Task: <id>` header in order of first appearance.
fn tasks_mentioned(prompt: &str) -> Vec<TaskId> {
    let mut out = Vec::new();
    for (i, _) in prompt.match_indices("Task: ") {
        let word = prompt[i + 6..].split_whitespace().next().unwrap_or("");
        if let Some(t) = TaskId::lookup(word.trim_end_matches([',', '.'])) {
            if !out.contains(&t) {
                out.push(t);
            }
        }
    }
    out
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

fn format_constant(x: f64) -> String {
    let rounded: f64 = format!("{x:.3e}").parse().unwrap_or(x);
    let mut s = format!("{rounded}");
    if !s.contains('.') {
        s.push_str(".0");
    }
    s
}

/// Multiplies decimal float literals by log-normal factors. Integers, literals
/// in exponent form, tiny values, comments and strings are left alone.
fn perturb_constants(src: &str, sigma: f64, rng: &mut ChaCha8Rng) -> String {
    let chars: Vec<char> = src.chars().collect();
    let mut out = String::with_capacity(src.len());
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                out.push(chars[i]);
                i += 1;
            }
            continue;
        }
        if c == '"' {
            out.push(c);
            i += 1;
            while i < chars.len() && chars[i] != '"' {
                out.push(chars[i]);
                i += 1;
            }
            if i < chars.len() {
                out.push('"');
                i += 1;
            }
            continue;
        }
        let starts_number = c.is_ascii_digit() && (i == 0 || !is_ident_char(chars[i - 1]));
        if !starts_number {
            out.push(c);
            i += 1;
            continue;
        }
        let start = i;
        while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
            i += 1;
        }
        let exponent = i < chars.len() && (chars[i] == 'e' || chars[i] == 'E');
        if exponent {
            i += 1;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '-' || chars[i] == '+') {
                i += 1;
            }
        }
        let lit: String = chars[start..i].iter().collect();
        match lit.parse::<f64>() {
            Ok(x) if !exponent && lit.contains('.') && x >= 1e-3 && rng.random_bool(0.6) => {
                let z: f64 = rng.sample(StandardNormal);
                out.push_str(&format_constant(x * (sigma * z).exp()));
            }
            _ => out.push_str(&lit),
        }
    }
    out
}

/// Adds `name = term` before the last return and folds it into the total.
fn add_term(src: &str, term: &str, name: &str) -> Option<String> {
    let ret = src.rfind("return ")?;
    let line_start = src[..ret].rfind('\n').map_or(0, |i| i + 1);
    let indent = &src[line_start..ret];
    if !indent.chars().all(char::is_whitespace) {
        return None;
    }
    let rest = &src[ret + 7..];
    let split = rest.find(", {")?;
    let total = rest[..split].trim();
    Some(format!(
        "{}{name} = {term}\n{indent}return ({total}) + {name}{}",
        &src[..ret],
        &rest[split..]
    ))
}

fn strip_header(code: &str) -> &str {
    if code.trim_start().starts_with("#!") {
        code.trim_start().split_once('\n').map_or("", |(_, b)| b)
    } else {
        code
    }
}

impl SyntheticProvider {
    fn code_answer(&self, request: &ChatRequest, rng: &mut ChaCha8Rng) -> String {
        let reminded = request.prompt.contains(super::FORMAT_REMINDER);
        if !reminded && rng.random_bool(self.malformed_rate) {
            return "I would scale the improvement term and add a diversity bonus.".into();
        }
        let Some(task) = target_task(&request.prompt) else {
            return "The task is unclear from the prompt, so no reward is proposed.".into();
        };
        let parents: Vec<&str> = fences(&request.prompt)
            .into_iter()
            .filter(|f| f.tag.eq_ignore_ascii_case("rsl"))
            .map(|f| f.body)
            .filter(|b| rsl::parse(b).is_ok_and(|p| p.declared_task() == Some(task.as_str())))
            .collect();
        let fresh = request.template_id == TemplateId::Init && rng.random_bool(0.5);
        let (base, thought) = match parents.first() {
            Some(p) if !fresh => (strip_header(p).to_string(), "Kept the structure of the given reward and retuned its constants"),
            _ => (
                starters(task).choose(rng).unwrap().to_string(),
                "Started from a compact improvement-based reward",
            ),
        };
        let mut code = perturb_constants(&base, 0.35 * request.temperature.max(0.1), rng);
        let mut thought = thought.to_string();
        if rng.random_bool(0.4) {
            let n = code.matches("extra_term_").count() / 2 + 1;
            let term = extras(task).choose(rng).unwrap();
            if let Some(c) = add_term(&code, term, &format!("extra_term_{n}")) {
                code = c;
                thought.push_str(&format!(", adding the term {term}"));
            }
        }
        if rng.random_bool(self.invalid_rate) {
            if let Some(c) = add_term(&code, "0.0 * ctx.undefined_signal", "probe_term") {
                code = c;
            }
        }
        if rsl::parse(&code).is_err() {
            code = base;
        }
        format!("{thought}.\n\n```rsl\n{}```\n", rsl::reward_file_text(task.as_str(), &code))
    }

    fn kt_plan(&self, request: &ChatRequest, rng: &mut ChaCha8Rng) -> String {
        let tasks = tasks_mentioned(&request.prompt);
        let n = request
            .prompt
            .split("Determine the ")
            .nth(1)
            .and_then(|s| s.split_whitespace().next())
            .and_then(|w| w.parse::<usize>().ok())
            .unwrap_or(tasks.len());
        let mut items = Vec::new();
        if tasks.len() >= 2 {
            let offset = rng.random_range(0..tasks.len());
            for k in 0..n {
                let s = tasks[(k + offset) % tasks.len()];
                let step = 1 + (k / tasks.len()) % (tasks.len() - 1);
                let t = tasks[(k + offset + step) % tasks.len()];
                items.push(serde_json::json!({
                    "source_task_Metabbo_algorithm": s.method_name(),
                    "target_task_Metabbo_algorithm": t.method_name(),
                    "rationale": format!("{} rewards track best-cost progress that {} also exposes", s.method_name(), t.method_name()),
                    "transfer_strategy_guidance": "map the improvement and progress fields to their target counterparts and keep the scaling",
                }));
            }
        }
        format!("```json\n{}\n```\n", serde_json::to_string_pretty(&items).unwrap())
    }
}

const REFLECTIONS: [&str; 3] = [
    "The reward saturates early on these problems, so late improvements barely register. Scale the improvement by the current cost spread and keep a small bonus for accepted moves.",
    "The reward ignores stagnation. Add a mild penalty that grows with the time since the last best-cost improvement and cap it so it cannot dominate.",
    "The improvement signal is noisy on rugged landscapes. Smooth it with a bounded transform and reward diversity while progress is low.",
];

impl ChatProvider for SyntheticProvider {
    fn tag(&self) -> String {
        format!("synthetic:{}", self.seed)
    }

    fn answered(&self, id: TemplateId, prompt_hash: &str) {
        *self.asked.lock().unwrap().entry(Self::key(id, prompt_hash)).or_insert(0) += 1;
    }

    fn complete(&self, request: &ChatRequest) -> Result<Completion, LlmError> {
        let mut rng = self.rng(request);
        let text = match request.template_id {
            TemplateId::M1Reflect => REFLECTIONS.choose(&mut rng).unwrap().to_string(),
            TemplateId::M3Reflect => format!(
                "```summary\nEffective: bounded improvement terms, scaling by the cost spread. Ineffective: unbounded ratios. {}\n```\n",
                REFLECTIONS.choose(&mut rng).unwrap()
            ),
            TemplateId::KtReflect => self.kt_plan(request, &mut rng),
            TemplateId::MetaSummarize => {
                let desc = request
                    .prompt
                    .split("Algorithm description:\n")
                    .nth(1)
                    .and_then(|s| s.split("\n\nReward context fields").next())
                    .unwrap_or("");
                let lead: Vec<&str> = desc.split(". ").take(2).collect();
                format!(
                    "{}. The reward should favour steady best-cost improvement over the run.",
                    lead.join(". ").trim_end_matches('.')
                )
            }
            _ => self.code_answer(request, &mut rng),
        };
        Ok(Completion::new(text))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(id: TemplateId, prompt: &str) -> ChatRequest {
        ChatRequest {
            template_id: id,
            system: String::new(),
            prompt: prompt.into(),
            temperature: id.temperature(),
        }
    }

    #[test]
    fn perturbation_keeps_integers_and_comments() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let src = "# 0.5 stays\nx = 2 + 0.5 * 1e-12\nreturn x, {\"0.5\": 1.5}\n";
        for _ in 0..20 {
            let out = perturb_constants(src, 0.3, &mut rng);
            assert!(out.starts_with("# 0.5 stays\nx = 2 + "));
            assert!(out.contains("* 1e-12"));
            assert!(out.contains("{\"0.5\": "));
            rsl::parse(&out).unwrap();
        }
    }

    #[test]
    fn added_terms_fold_into_the_total() {
        let out = add_term("a = 1\nreturn a * 2, {\"a\": a}\n", "0.5", "extra_term_1").unwrap();
        assert_eq!(out, "a = 1\nextra_term_1 = 0.5\nreturn (a * 2) + extra_term_1, {\"a\": a}\n");
    }

    #[test]
    fn answers_are_deterministic_and_parse() {
        for task in TaskId::ALL {
            let prompt = format!(
                "Task: {task} (modelled on x)\n```rsl\n{}```",
                task.handcrafted_reward().source()
            );
            for id in [TemplateId::M1Mutate, TemplateId::Init, TemplateId::C2] {
                let a = SyntheticProvider::new(4).well_behaved().complete(&req(id, &prompt)).unwrap().text;
                let p = SyntheticProvider::new(4).well_behaved();
                assert_eq!(a, p.complete(&req(id, &prompt)).unwrap().text);
                let (_, code) = crate::llm::parse_individual(&a).unwrap();
                let prog = rsl::parse(&code).unwrap();
                assert_eq!(prog.declared_task(), Some(task.as_str()));
                prog.validate(&task.schema()).unwrap();
            }
        }
    }

    #[test]
    fn target_line_beats_the_first_header() {
        let prompt = "Source task: RLDAS\nTask: algorithm-selection (modelled on RLDAS)\nTarget task: pso-parameter-control\n";
        assert_eq!(target_task(prompt), Some(TaskId::PsoParameterControl));
        assert_eq!(target_task("Task: RLDAS"), Some(TaskId::AlgorithmSelection));
    }

    #[test]
    fn plans_name_distinct_tasks() {
        let p = SyntheticProvider::new(0);
        let prompt = "Task: de-operator-selection\nTask: algorithm-selection\nTask: pso-parameter-control\nDetermine the 3 most valuable";
        let plan = crate::llm::parse_kt_plan(&p.complete(&req(TemplateId::KtReflect, prompt)).unwrap().text).unwrap();
        assert_eq!(plan.len(), 3);
        assert!(plan.iter().all(|t| t.source_task != t.target_task));
    }
}
