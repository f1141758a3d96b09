//! Derive trajectory, operator and SNE tables from run directories.
//!
//!     cargo run --example report -- RUN [VARIANT...]

use std::path::PathBuf;

use reward_discovery::report::{final_best, operator_stats, operators_csv, read_report, sne_csv, trajectory_csv};

fn main() {
    let mut args = std::env::args().skip(1).map(PathBuf::from);
    let Some(run) = args.next() else {
        eprintln!("usage: report RUN [VARIANT...]");
        std::process::exit(2);
    };
    let variants: Vec<PathBuf> = args.collect();
    let rows = read_report(&run).unwrap_or_else(|e| {
        eprintln!("{e}");
        std::process::exit(2);
    });
    print!("{}", trajectory_csv(&rows));
    println!();
    print!("{}", operators_csv(&operator_stats(&run).expect("operator stats")));
    println!();
    for (task, f) in final_best(&rows) {
        println!("final {task}: {f}");
    }
    if !variants.is_empty() {
        println!();
        print!("{}", sne_csv(&run, &variants).expect("sne"));
    }
}
