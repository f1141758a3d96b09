//! A short discovery run with the offline synthetic provider.
//!
//!     cargo run --example discovery -- /tmp/run

use std::path::PathBuf;
use std::sync::Arc;

use reward_discovery::eval::EvalBudget;
use reward_discovery::evolution::{Discovery, ProviderSpec, RunConfig};
use reward_discovery::llm::SyntheticProvider;

fn main() {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join(format!("discovery-{}", std::process::id())));
    let config = RunConfig {
        niche_size: 3,
        generations: 2,
        dimension: 5,
        seed: 3,
        budget: EvalBudget {
            gamma_search: 1,
            fe_budget: 1000,
            train_episodes: 2,
            ..EvalBudget::default()
        },
        provider: ProviderSpec::Synthetic { seed: 3 },
        ..RunConfig::default()
    };
    let outcome = Discovery::create(config, Arc::new(SyntheticProvider::new(3)), &out)
        .expect("run directory")
        .on_generation(|g| {
            for r in &g.rows {
                println!("gen {} {:<24} best {:.6} mean {:.6} invalid {}", g.generation, r.task, r.best_fitness, r.mean_fitness, r.invalid_count);
            }
        })
        .run()
        .expect("discovery");
    for (task, best) in &outcome.best {
        println!("{task}: {} ({}) fitness {:.6}", best.id, best.lineage.operator, best.fitness);
    }
    println!("run directory: {}", outcome.out.display());
}
