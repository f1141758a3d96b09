//! Parse a reward program, evaluate it on a hand-built context and check it
//! against two task schemas.

use reward_discovery::context::RewardContext;
use reward_discovery::envs::TaskId;
use reward_discovery::rsl::{self, EvalLimits};

const SOURCE: &str = r#"
# relative improvement of the best cost, damped late in the run
imp = (ctx.pre_gbest - ctx.gbest_val) / (abs(ctx.pre_gbest) + 1e-12)
late = clip(ctx.progress, 0, 1)
r = tanh(5 * imp) * (1 - 0.5 * late)
return r, {"improvement": imp, "late": late}
"#;

fn main() {
    let program = rsl::parse(SOURCE).expect("parses");
    println!("hash   {}", program.content_hash());
    println!("fields {:?}", program.referenced_fields());

    let mut ctx = RewardContext::new();
    ctx.set("pre_gbest", 12.0);
    ctx.set("gbest_val", 9.5);
    ctx.set("progress", 0.4);
    let out = program.evaluate(&ctx, EvalLimits::default()).expect("evaluates");
    println!("total  {:.6}", out.total);
    for (k, v) in &out.components {
        println!("  {k:<12} {v:.6}");
    }

    for task in [TaskId::PsoParameterControl, TaskId::DeOperatorSelection] {
        match program.validate(&task.schema()) {
            Ok(()) => println!("{task}: ok"),
            Err(e) => println!("{task}: {e}"),
        }
    }
}
