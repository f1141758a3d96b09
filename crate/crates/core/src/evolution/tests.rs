use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::eval::{EvalJob, Evaluator, FitnessReport, RunBudget};
use crate::llm::{ChatProvider, ChatRequest, Completion, ReplayProvider, SyntheticProvider};
use crate::problems::make_suite;

fn ind(id: &str, fitness: f64, generation: usize) -> Individual {
    Individual {
        id: id.into(),
        task: TaskId::DeOperatorSelection,
        thought: String::new(),
        program: TaskId::DeOperatorSelection.handcrafted_reward(),
        fitness,
        per_instance_medians: Vec::new(),
        generation,
        lineage: Lineage {
            operator: OperatorTag::Init,
            parents: Vec::new(),
        },
        status: if fitness.is_finite() { Status::Alive } else { Status::Invalid },
        reflection: None,
        invalid_reason: None,
        ancestry: Vec::new(),
    }
}

#[test]
fn rank_order_breaks_ties_by_generation_then_id() {
    let pool = vec![ind("b", 0.5, 1), ind("a", 0.5, 1), ind("c", 0.5, 0), ind("x", f64::INFINITY, 0), ind("d", 0.1, 3)];
    assert_eq!(rank_order(&pool), vec![4, 2, 1, 0]);
}

#[test]
fn first_draw_matches_the_rank_weights() {
    let n = 5;
    let w = selection_weights(6 * n, 6 * n);
    let total: f64 = (6 * n..12 * n).map(|m| 1.0 / m as f64).sum();
    let expected = (1.0 / (6 * n) as f64) / total;
    assert!((w[0] / w.iter().sum::<f64>() - expected).abs() < 1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let trials = 40_000;
    let hits = (0..trials)
        .filter(|_| draw_without_replacement(&w, 1, &mut rng)[0] == 0)
        .count();
    let freq = hits as f64 / trials as f64;
    let sd = (expected * (1.0 - expected) / trials as f64).sqrt();
    assert!((freq - expected).abs() < 4.0 * sd, "{freq} vs {expected}");
}

#[test]
fn draws_are_distinct() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut d = draw_without_replacement(&selection_weights(12, 12), 12, &mut rng);
    d.sort();
    assert_eq!(d, (0..12).collect::<Vec<_>>());
}

#[test]
fn selection_keeps_everyone_when_short_of_valid_members() {
    let pool = vec![ind("a", 0.3, 0), ind("b", f64::INFINITY, 1), ind("c", 0.2, 1)];
    let (s, e) = select_survivors(pool, 3, 18, &mut ChaCha8Rng::seed_from_u64(0));
    assert_eq!(s.iter().map(|i| i.id.as_str()).collect::<Vec<_>>(), ["c", "a"]);
    assert!(e.is_empty());
}

#[test]
fn failure_cases_pick_the_worst_instances() {
    assert_eq!(failure_cases(&[0.1, 0.9, 0.5, 0.9, 0.0], 3), vec![1, 3, 2]);
    assert_eq!(failure_cases(&[0.1], 3), vec![0]);
}

#[test]
fn archive_evicts_oldest_first() {
    let mut a = Archive::new(2);
    for id in ["a", "b", "c"] {
        a.push(ind(id, 0.5, 0));
    }
    assert_eq!(a.entries.iter().map(|i| i.id.as_str()).collect::<Vec<_>>(), ["b", "c"]);
    assert!(a.entries.iter().all(|i| i.status == Status::Eliminated));
}

#[test]
fn operator_tags_round_trip() {
    assert_eq!("m0".parse::<OperatorTag>().unwrap(), OperatorTag::M0Simple);
    assert_eq!(serde_json::to_string(&OperatorTag::M0Simple).unwrap(), "\"m0_simple\"");
    assert!(RunConfig {
        replace_ops: [(OperatorTag::Kt, OperatorTag::M0Simple)].into(),
        ..RunConfig::default()
    }
    .validate()
    .is_err());
}

/// Fitness in [0, 1) from the reward's hash; the human-designed rewards score `anchor`.
fn fake_evaluator(anchor: f64) -> Evaluator {
    let suite = Arc::new(make_suite(2, 0).unwrap());
    let n_test = suite.test_instances.len();
    let budget = RunBudget {
        gamma: 1,
        fe_budget: 100,
        train_episodes: 1,
    };
    Evaluator::new(suite, budget, 2).unwrap().with_runner(move |job: &EvalJob| {
        let task = job.task.task_id;
        let hash = job.reward.content_hash();
        let u = if job.reward.content_hash() == task.handcrafted_reward().content_hash() {
            anchor
        } else {
            u64::from_str_radix(&hash[..12], 16).unwrap() as f64 / (1u64 << 48) as f64
        };
        let scores = (0..n_test).map(|i| vec![u * (0.5 + i as f64 / (2 * n_test) as f64)]).collect();
        let ids = (0..n_test).map(|i| format!("{i:02}")).collect();
        Ok(FitnessReport::from_scores(task, hash, job.seed, ids, scores))
    })
}

fn config(generations: usize) -> RunConfig {
    RunConfig {
        niche_size: 3,
        generations,
        dimension: 2,
        provider: ProviderSpec::Synthetic { seed: 7 },
        ..RunConfig::default()
    }
}

fn run(cfg: &RunConfig, provider: Arc<dyn ChatProvider>, out: &Path, anchor: f64) -> Result<DiscoveryOutcome, EvolutionError> {
    Discovery::create(cfg.clone(), provider, out)?
        .with_evaluator(fake_evaluator(anchor))
        .run()
}

fn read(out: &Path, name: &str) -> String {
    fs::read_to_string(out.join(name)).unwrap()
}

fn lineages(out: &Path) -> Vec<(usize, TaskId, OperatorTag)> {
    let mut v = Vec::new();
    for task in TaskId::ALL {
        let Ok(gens) = fs::read_dir(out.join("niches").join(task.as_str())) else { continue };
        for g in gens.flatten() {
            for f in fs::read_dir(g.path()).unwrap().flatten() {
                if f.path().extension().is_some_and(|e| e == "json") {
                    let j: serde_json::Value = serde_json::from_str(&fs::read_to_string(f.path()).unwrap()).unwrap();
                    let op: OperatorTag = serde_json::from_value(j["lineage"]["operator"].clone()).unwrap();
                    v.push((j["generation"].as_u64().unwrap() as usize, task, op));
                }
            }
        }
    }
    v
}

#[test]
fn a_generation_produces_five_offspring_per_parent() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = config(2);
    let done = run(&cfg, Arc::new(SyntheticProvider::new(7).well_behaved()), &out, 0.9).unwrap();
    assert_eq!(done.generations, 2);
    let lin = lineages(&out);
    for task in TaskId::ALL {
        for g in 1..=2 {
            let n = lin
                .iter()
                .filter(|(gg, t, op)| *gg == g && *t == task && OperatorTag::REPRODUCTION.contains(op))
                .count();
            assert_eq!(n, 5 * cfg.niche_size, "{task} gen {g}");
        }
    }
    for niche in &done.niches {
        assert_eq!(niche.population.len(), cfg.niche_size);
        assert!(!niche.init_fallback);
        assert!(niche.population.iter().all(Individual::is_valid));
    }
    let report = read(&out, "report.csv");
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines[0], REPORT_HEADER);
    assert_eq!(lines.len(), 1 + 3 * 3);
    for task in TaskId::ALL {
        let best: Vec<f64> = lines[1..]
            .iter()
            .filter(|l| l.split(',').nth(1) == Some(task.as_str()))
            .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
            .collect();
        assert_eq!(best.len(), 3);
        assert!(best.windows(2).all(|w| w[1] <= w[0]), "{task}: {best:?}");
        assert_eq!(*best.last().unwrap(), done.best[&task].fitness);
    }
    for g in 0..=2 {
        assert!(out.join("snapshots").join(format!("gen-{g}.json")).exists());
    }
    assert!(out.join("best").join("pso-parameter-control.rsl").exists());
    assert!(!read(&out, "config.json").contains(out.to_str().unwrap()));
}

#[test]
fn every_generation_runs_one_transfer_pass() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = config(2);
    run(&cfg, Arc::new(SyntheticProvider::new(7).well_behaved()), &out, 0.9).unwrap();
    let ex = read(&out, "exchanges.jsonl");
    assert_eq!(ex.lines().filter(|l| l.contains("\"template_id\":\"kt_reflect\"")).count(), 2);
    let records: Vec<TransferRecord> = read(&out, "transfers.jsonl")
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    for g in 1..=2 {
        let n = records.iter().filter(|r| r.generation == g).count();
        assert!((1..=cfg.kt_pathways()).contains(&n), "gen {g}: {n}");
    }
    for r in &records {
        assert_ne!(r.source_task, r.target_task);
        if r.outcome == TransferOutcome::Replaced {
            assert!(r.transplant_id.is_some() && r.replaced_id.is_some());
        }
    }
}

#[test]
fn disabling_transfer_skips_the_pass() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = RunConfig {
        disable_kt: true,
        ..config(1)
    };
    run(&cfg, Arc::new(SyntheticProvider::new(7).well_behaved()), &out, 0.9).unwrap();
    assert!(!read(&out, "exchanges.jsonl").contains("kt_reflect"));
    assert_eq!(read(&out, "transfers.jsonl"), "");
}

#[test]
fn replaced_operators_are_tagged_as_simple_mutation() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = RunConfig {
        replace_ops: [(OperatorTag::M1, OperatorTag::M0Simple), (OperatorTag::M3, OperatorTag::M0Simple)].into(),
        tasks: vec![TaskId::DeOperatorSelection],
        ..config(1)
    };
    run(&cfg, Arc::new(SyntheticProvider::new(7).well_behaved()), &out, 0.9).unwrap();
    let lin = lineages(&out);
    let count = |op| lin.iter().filter(|(g, _, o)| *g == 1 && *o == op).count();
    assert_eq!(count(OperatorTag::M1), 0);
    assert_eq!(count(OperatorTag::M3), 0);
    assert_eq!(count(OperatorTag::M0Simple), 2 * cfg.niche_size);
    // a single niche has no crossover partner
    assert_eq!(count(OperatorTag::C2), 0);
    assert_eq!(count(OperatorTag::M2), cfg.niche_size);
    let ex = read(&out, "exchanges.jsonl");
    assert!(!ex.contains("\"m1_reflect\"") && ex.contains("\"simple_mutate\""));
}

#[test]
fn init_falls_back_when_nothing_beats_the_anchor() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = RunConfig {
        tasks: vec![TaskId::AlgorithmSelection],
        ..config(1)
    };
    let d = Discovery::create(cfg.clone(), Arc::new(SyntheticProvider::new(7).well_behaved()), &out)
        .unwrap()
        .with_evaluator(fake_evaluator(0.0))
        .run()
        .unwrap();
    let niche = &d.niches[0];
    assert!(niche.init_fallback);
    let ex = read(&out, "exchanges.jsonl");
    assert_eq!(ex.lines().filter(|l| l.contains("\"template_id\":\"init\"")).count(), cfg.init_attempts());
    let gen0 = lineages(&out).iter().filter(|(g, _, op)| *g == 0 && *op == OperatorTag::Init).count();
    assert_eq!(gen0, cfg.init_attempts());
}

#[test]
fn init_stops_once_the_niche_is_full() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = RunConfig {
        tasks: vec![TaskId::AlgorithmSelection],
        ..config(1)
    };
    let d = run(&cfg, Arc::new(SyntheticProvider::new(7).well_behaved()), &out, 2.0).unwrap();
    assert!(!d.niches[0].init_fallback);
    let ex = read(&out, "exchanges.jsonl");
    assert_eq!(ex.lines().filter(|l| l.contains("\"template_id\":\"init\"")).count(), cfg.niche_size - 1);
}

#[test]
fn an_existing_run_directory_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = config(1);
    Discovery::create(cfg.clone(), Arc::new(SyntheticProvider::new(7)), &out).unwrap();
    assert!(matches!(
        Discovery::create(cfg, Arc::new(SyntheticProvider::new(7)), &out),
        Err(EvolutionError::Config(_))
    ));
}

const LOGS: [&str; 4] = ["report.csv", "archive.jsonl", "transfers.jsonl", "exchanges.jsonl"];

/// The exchange log names its provider; everything else must match.
fn untagged(text: String) -> String {
    text.lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            if let Some(o) = v.as_object_mut() {
                o.remove("provider");
            }
            v.to_string() + "\n"
        })
        .collect()
}

fn same_logs(a: &Path, b: &Path) {
    for name in LOGS {
        let (x, y) = if name == "exchanges.jsonl" {
            (untagged(read(a, name)), untagged(read(b, name)))
        } else {
            (read(a, name), read(b, name))
        };
        assert!(x == y, "{name} differs");
    }
    assert_eq!(lineages(a).len(), lineages(b).len());
    let last = |p: &Path| fs::read(p.join("snapshots").join("gen-2.json")).unwrap();
    assert_eq!(last(a), last(b));
}

#[test]
fn runs_are_deterministic_and_replayable() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    let cfg = config(2);
    run(&cfg, Arc::new(SyntheticProvider::new(7)), &a, 0.9).unwrap();
    run(&cfg, Arc::new(SyntheticProvider::new(7)), &b, 0.9).unwrap();
    same_logs(&a, &b);
    let replay = ReplayProvider::from_file(&a.join("exchanges.jsonl")).unwrap();
    run(&cfg, Arc::new(replay), &c, 0.9).unwrap();
    same_logs(&a, &c);
}

/// Fails every request after the first `limit`.
struct Flaky {
    inner: SyntheticProvider,
    calls: AtomicUsize,
    limit: usize,
}

impl ChatProvider for Flaky {
    fn tag(&self) -> String {
        self.inner.tag()
    }

    fn complete(&self, r: &ChatRequest) -> Result<Completion, crate::llm::LlmError> {
        if self.calls.fetch_add(1, Ordering::SeqCst) >= self.limit {
            return Err(crate::llm::LlmError::Transport("connection reset".into()));
        }
        self.inner.complete(r)
    }
}

#[test]
fn a_resumed_run_matches_an_uninterrupted_one() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let cfg = config(2);
    run(&cfg, Arc::new(SyntheticProvider::new(7)), &a, 0.9).unwrap();
    let total = read(&a, "exchanges.jsonl").lines().count();
    let flaky = Flaky {
        inner: SyntheticProvider::new(7),
        calls: AtomicUsize::new(0),
        limit: total - 20,
    };
    let err = run(&cfg, Arc::new(flaky), &b, 0.9).unwrap_err();
    assert!(matches!(err, EvolutionError::Provider(_)), "{err}");
    assert!(!b.join("snapshots").join("gen-2.json").exists());
    Discovery::resume(&b, Arc::new(SyntheticProvider::new(7)))
        .unwrap()
        .with_evaluator(fake_evaluator(0.9))
        .run()
        .unwrap();
    same_logs(&a, &b);
}
