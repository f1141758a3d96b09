//! Train a policy with the expert reward, then compare it to an untrained
//! policy on one held-out instance.

use reward_discovery::envs::{run_episode, train_policy, MetaTask, PolicyState, TaskId, TrainingBudget};
use reward_discovery::problems::make_suite;

fn main() {
    let task_id: TaskId = std::env::args().nth(1).map_or(TaskId::DeOperatorSelection, |a| a.parse().expect("task id"));
    let task = MetaTask::new(task_id);
    let reward = task_id.handcrafted_reward();
    let suite = make_suite(5, 0).unwrap();
    let budget = TrainingBudget { episodes: 8, fe_budget: 1000 };

    let trained = train_policy(&task, &reward, &suite.train_instances, budget, 1).expect("training");
    let untrained = PolicyState::untrained(&task);
    let inst = &suite.test_instances[0];
    println!("{task_id} on {}", inst.label());
    for (name, policy) in [("untrained", &untrained), ("trained", &trained)] {
        let log = run_episode(&task, policy, &reward, inst, 99, budget.fe_budget).expect("episode");
        println!(
            "  {name:<10} steps {:>4}  return {:>9.3}  y0 {:>12.4}  y_end {:>12.4}",
            log.steps.len(),
            log.total_reward(),
            log.y_initial,
            log.y_final
        );
    }
}
