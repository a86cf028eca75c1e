//! Run the full experiment on a freshly generated benchmark and print a summary.
//!
//! Usage: `cargo run --release -p motadapt --example desk_run [SEED] [CONFIG]`

use std::time::Instant;

use motadapt::config::RunConfig;
use motadapt::pipeline::run_experiment;
use motadapt::synthgen::{build_benchmark, BenchmarkOptions};

fn main() -> motadapt::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let seed = args.next().map_or(0, |s| s.parse().expect("seed is an integer"));
    let config = RunConfig::load_or_default(args.next().as_deref().map(std::path::Path::new))?;
    let started = Instant::now();
    let bench = build_benchmark(seed, BenchmarkOptions::default())?;
    let report = run_experiment(&bench, &config)?.report;
    print!("{}", report.summary());
    for m in &report.modes {
        for t in &m.targets {
            println!("{} target {}: {:.3} -> {:.3}", m.mode, t.target, t.baseline.aggregate.miou, t.adapted.aggregate.miou);
            print!("{}", t.adapted.miou_table());
        }
    }
    println!("total {:.1}s", started.elapsed().as_secs_f64());
    Ok(())
}
