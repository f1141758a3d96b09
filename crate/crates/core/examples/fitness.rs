//! Fitness of each task's expert reward under a small search budget.

use reward_discovery::envs::{MetaTask, TaskId};
use reward_discovery::eval::{evaluate_fitness, EvalBudget, Profile};
use reward_discovery::problems::make_suite;

fn main() {
    let suite = make_suite(5, 0).unwrap();
    let budget = EvalBudget {
        gamma_search: 2,
        fe_budget: 1000,
        train_episodes: 4,
        ..EvalBudget::default()
    }
    .resolve(Profile::Search);
    for task in TaskId::ALL {
        let report = evaluate_fitness(&task.handcrafted_reward(), &MetaTask::new(task), &suite, budget, 7).expect("evaluation");
        println!("{task:<24} fitness {:.6}", report.fitness);
        for (id, m) in report.instance_ids.iter().zip(&report.per_instance_medians).take(4) {
            println!("    {id:<34} median {m:.6}");
        }
    }
}
