//! Adapt the DE expert reward to the PSO task and measure both rewards there.

use std::sync::Arc;

use reward_discovery::envs::{MetaTask, TaskId};
use reward_discovery::eval::{evaluate_fitness, EvalBudget, Profile};
use reward_discovery::evolution::adapt_reward;
use reward_discovery::llm::{LlmClient, SyntheticProvider};
use reward_discovery::problems::make_suite;

fn main() {
    let (from, to) = (TaskId::DeOperatorSelection, TaskId::PsoParameterControl);
    let llm = LlmClient::new(Arc::new(SyntheticProvider::new(11)));
    let adapted = adapt_reward(&llm, "Reuse the improvement signal.", &from.handcrafted_reward(), from, to).expect("adaptation");
    println!("thought: {}", adapted.thought);
    println!("{}", adapted.value.source());

    let suite = make_suite(5, 0).unwrap();
    let budget = EvalBudget {
        gamma_search: 1,
        fe_budget: 1000,
        train_episodes: 16,
        ..EvalBudget::default()
    }
    .resolve(Profile::Search);
    let task = MetaTask::new(to);
    for (name, reward) in [("anchor", to.handcrafted_reward()), ("adapted", adapted.value)] {
        let r = evaluate_fitness(&reward, &task, &suite, budget, 5).expect("evaluation");
        println!("{name:<8} fitness {:.6} {}", r.fitness, r.invalid.unwrap_or_default());
    }
}
