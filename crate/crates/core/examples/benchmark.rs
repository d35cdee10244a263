//! Parallel reach benchmark over random reachable targets.

use std::time::Instant;

use wholebody::harness::{benchmark, Scenario};
use wholebody::WbcParams;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let trials = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(64);
    let scenario = Scenario::from_file(concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/reachable.json"))?;
    let model = scenario.load_model()?;
    let t0 = Instant::now();
    let report = benchmark(&model, &scenario, &WbcParams::default(), trials, 2024)?;
    let s = &report.summary;
    println!("{} trials in {:.2?}", s.trials, t0.elapsed());
    println!("success rate {:.3}, mean ticks {:.1}, mean final error {:.2e} m / {:.2e} rad",
        s.success_rate, s.mean_ticks, s.mean_final_position_error, s.mean_final_orientation_error);
    for t in report.trials.iter().filter(|t| !t.success) {
        println!("  trial {} (seed {}) failed: {:?}", t.trial, t.seed, t.reason);
    }
    Ok(())
}
