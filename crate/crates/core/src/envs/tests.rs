use super::*;
use crate::problems::FunctionId;
use crate::rsl;

fn sphere(seed: u64) -> ProblemInstance {
    ProblemInstance::new(FunctionId::Sphere, 5, seed).unwrap()
}

fn rastrigin(seed: u64) -> ProblemInstance {
    ProblemInstance::new(FunctionId::RastriginMultimodal, 5, seed).unwrap()
}

fn untrained(task: &MetaTask) -> PolicyState {
    PolicyState::untrained(task)
}

#[test]
fn every_task_runs_within_budget_and_never_worsens_the_best() {
    for id in TaskId::ALL {
        let task = MetaTask::new(id);
        let inst = rastrigin(3);
        let log = run_episode(&task, &untrained(&task), &id.handcrafted_reward(), &inst, 11, 2_000).unwrap();
        assert!(log.fe_used <= 2_000, "{id}");
        assert!(log.y_final <= log.y_initial, "{id}");
        assert!(!log.steps.is_empty());
        assert!(log.steps.iter().all(|s| s.reward.is_finite()));
        for w in log.steps.windows(2) {
            assert!(w[1].gbest <= w[0].gbest, "{id}: best cost is monotone");
        }
    }
}

#[test]
fn step_counts_follow_the_decision_granularity() {
    let inst = sphere(1);
    let de = MetaTask::new(TaskId::DeOperatorSelection);
    let log = run_episode(&de, &untrained(&de), &de.task_id.handcrafted_reward(), &inst, 0, 1_000).unwrap();
    assert_eq!(log.steps.len(), 950);
    assert_eq!(log.fe_used, 1_000);

    let das = MetaTask::new(TaskId::AlgorithmSelection);
    let log = run_episode(&das, &untrained(&das), &das.task_id.handcrafted_reward(), &inst, 0, 1_000).unwrap();
    assert_eq!(log.steps.len(), 4);
    assert_eq!(log.fe_used, 1_000);

    let pso = MetaTask::new(TaskId::PsoParameterControl);
    let log = run_episode(&pso, &untrained(&pso), &pso.task_id.handcrafted_reward(), &inst, 0, 1_050).unwrap();
    assert_eq!(log.steps.len(), 9);
    assert_eq!(log.fe_used, 1_000);
}

#[test]
fn episodes_are_deterministic_in_the_seed() {
    for id in TaskId::ALL {
        let task = MetaTask::new(id);
        let p = untrained(&task);
        let r = id.handcrafted_reward();
        let a = run_episode(&task, &p, &r, &sphere(2), 5, 1_000).unwrap();
        let b = run_episode(&task, &p, &r, &sphere(2), 5, 1_000).unwrap();
        let c = run_episode(&task, &p, &r, &sphere(2), 6, 1_000).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.steps, c.steps);
    }
}

#[test]
fn observed_contexts_match_the_schema() {
    for id in TaskId::ALL {
        for learner in [LearnerKind::Random, MetaTask::new(id).policy.learner] {
            let task = MetaTask::new(id).with_learner(learner);
            let schema = id.schema();
            let mut n = 0;
            let mut seen_optional = false;
            run_episode_observed(&task, &untrained(&task), &id.handcrafted_reward(), &sphere(4), 1, 800, &mut |ctx, r| {
                assert!(schema.check(ctx).is_ok());
                assert!(r.is_finite());
                seen_optional |= schema.iter().any(|(k, f)| f.optional && ctx.get(k).is_some());
                n += 1;
            })
            .unwrap();
            assert!(n > 0);
            if learner != LearnerKind::Random {
                assert!(seen_optional, "{id}: agent fields are filled for trained learners");
            }
        }
    }
}

#[test]
fn observed_and_plain_runs_agree() {
    for id in TaskId::ALL {
        let task = MetaTask::new(id);
        let p = untrained(&task);
        let r = id.handcrafted_reward();
        let plain = run_episode(&task, &p, &r, &sphere(9), 3, 1_000).unwrap();
        let observed = run_episode_observed(&task, &p, &r, &sphere(9), 3, 1_000, &mut |_, _| {}).unwrap();
        assert_eq!(plain, observed);
    }
}

#[test]
fn handcrafted_rewards_match_their_definitions() {
    let task = MetaTask::new(TaskId::DeOperatorSelection);
    let mut checked = 0;
    run_episode_observed(&task, &untrained(&task), &task.task_id.handcrafted_reward(), &sphere(0), 0, 500, &mut |ctx, r| {
        let expect = if ctx.scalar("trial_cost").unwrap() <= ctx.scalar("parent_cost").unwrap() { 1.0 } else { 0.0 };
        assert_eq!(r, expect);
        checked += 1;
    })
    .unwrap();
    assert_eq!(checked, 450);

    let task = MetaTask::new(TaskId::AlgorithmSelection);
    run_episode_observed(&task, &untrained(&task), &task.task_id.handcrafted_reward(), &sphere(0), 0, 800, &mut |ctx, r| {
        let s = ctx.scalar("cost_scale_factor").unwrap();
        let expect = (ctx.scalar("last_cost").unwrap() - ctx.scalar("current_gbest").unwrap()) / s;
        assert_eq!(r, expect);
        assert!(r >= 0.0);
    })
    .unwrap();
}

#[test]
fn reward_failures_abort_the_episode_with_the_step() {
    let task = MetaTask::new(TaskId::DeOperatorSelection);
    let bad = rsl::parse("r = ctx.FEs - 75\nreturn 1 / r, {}").unwrap();
    let err = run_episode(&task, &untrained(&task), &bad, &sphere(0), 0, 500).unwrap_err();
    match err {
        EnvError::Reward { step, .. } => assert_eq!(step, 24),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn budgets_outside_the_allowed_range_are_rejected() {
    let task = MetaTask::new(TaskId::PsoParameterControl);
    let err = run_episode(&task, &untrained(&task), &task.task_id.handcrafted_reward(), &sphere(0), 0, 150).unwrap_err();
    assert!(matches!(err, EnvError::Budget { min: 200, .. }));
}

#[test]
fn mismatched_learners_are_rejected() {
    let task = MetaTask::new(TaskId::PsoParameterControl).with_learner(LearnerKind::QLearning);
    assert!(matches!(task.validate(), Err(EnvError::Config(_))));
    let de = MetaTask::new(TaskId::DeOperatorSelection);
    let pso = MetaTask::new(TaskId::PsoParameterControl);
    let err = run_episode(&de, &untrained(&pso), &de.task_id.handcrafted_reward(), &sphere(0), 0, 500).unwrap_err();
    assert!(matches!(err, EnvError::Config(_)));
}

#[test]
fn q_learning_training_updates_the_table_deterministically() {
    let task = MetaTask::new(TaskId::DeOperatorSelection);
    let train = [sphere(1), rastrigin(2)];
    let budget = TrainingBudget {
        episodes: 3,
        fe_budget: 600,
    };
    let r = task.task_id.handcrafted_reward();
    let a = train_policy(&task, &r, &train, budget, 7).unwrap();
    let b = train_policy(&task, &r, &train, budget, 7).unwrap();
    assert_eq!(a.digest(), b.digest());
    assert_eq!(a.episodes_trained, 3);
    assert_eq!(a.training_step, 3 * 550);
    assert!(a.q_table.iter().any(|q| *q != 0.0));
    assert_eq!(a.training_progress, 1.0);
}

#[test]
fn linear_search_counts_rounds_and_episodes() {
    let task = MetaTask::new(TaskId::PsoParameterControl);
    let train = [sphere(1)];
    let budget = TrainingBudget {
        episodes: 12,
        fe_budget: 400,
    };
    let p = train_policy(&task, &task.task_id.handcrafted_reward(), &train, budget, 3).unwrap();
    assert_eq!(p.training_step, 3);
    assert_eq!(p.episodes_trained, 12);
}

#[test]
fn training_rejects_rewards_with_unknown_fields() {
    let task = MetaTask::new(TaskId::DeOperatorSelection);
    let r = rsl::parse("return ctx.not_a_field, {}").unwrap();
    let budget = TrainingBudget {
        episodes: 1,
        fe_budget: 500,
    };
    assert!(matches!(train_policy(&task, &r, &[sphere(0)], budget, 0), Err(EnvError::Schema(_))));
}

#[test]
fn task_lookup_accepts_ids_and_method_names() {
    assert_eq!(load_task_metadata("RLDAS").unwrap().task_id, TaskId::AlgorithmSelection);
    assert_eq!(handcrafted_reward("pso-parameter-control").unwrap().declared_task(), Some("pso-parameter-control"));
    assert!(matches!("nope".parse::<TaskId>(), Err(EnvError::UnknownTask(_))));
    for id in TaskId::ALL {
        let rendered = id.metadata().render();
        assert!(rendered.contains(id.method_name()));
        assert!(id.handcrafted_reward().validate(&id.schema()).is_ok());
    }
}

#[test]
fn discovered_rewards_run_on_real_episodes_within_their_ranges() {
    for id in TaskId::ALL {
        let task = MetaTask::new(id);
        let r = id.discovered_reward();
        r.validate(&id.schema()).unwrap();
        assert_eq!(r.declared_task(), Some(id.as_str()));
        let (lo, hi) = id.discovered_reward_range();
        for inst in [sphere(5), rastrigin(6)] {
            let log = run_episode(&task, &untrained(&task), &r, &inst, 2, 1_500).unwrap();
            assert!(log.steps.iter().all(|s| (lo..=hi).contains(&s.reward)), "{id}");
        }
    }
}
