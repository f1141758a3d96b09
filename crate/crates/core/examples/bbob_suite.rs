//! Build the default train/test split and probe every instance at its optimum.

use reward_discovery::problems::make_suite;

fn main() {
    let dimension = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(10);
    let suite = make_suite(dimension, 0).expect("suite");
    for (split, instances) in [("train", &suite.train_instances), ("test", &suite.test_instances)] {
        println!("{split} ({} instances, d={dimension})", instances.len());
        for inst in instances.iter() {
            let (x, f) = inst.optimum();
            let at_opt = inst.evaluate(&x).unwrap();
            let centre = inst.evaluate(&vec![0.0; dimension]).unwrap();
            println!("  {:<34} f*={f:>8.2}  f(x*)={at_opt:>8.2}  f(0)={centre:>14.2}", inst.label());
        }
    }
}
