//! Record an episode to JSON Lines, load it back and replay it bit-exactly.

use wholebody::harness::{replay, run_reach_episode, EpisodeRecord, Scenario};
use wholebody::{RobotModel, WbcParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scenario = Scenario::from_file(concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/tabletop_region.json"))?;
    let model = RobotModel::reference();
    let params = WbcParams::default();
    let outcome = run_reach_episode(&model, &scenario, &params, 12)?;
    println!("{}: success {} after {} ticks", outcome.record.header.episode_id, outcome.success, outcome.ticks());

    let dir = std::env::temp_dir().join("wholebody-record-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("episode.jsonl");
    outcome.record.save(&path)?;
    let loaded = EpisodeRecord::load(&path)?;
    println!("saved {} ({} tick lines), identical after load: {}", path.display(), loaded.ticks.len(), loaded == outcome.record);

    let report = replay(&loaded, &model, &params)?;
    println!("replay max deviation {:e}", report.max_deviation);

    let changed = WbcParams { arm_posture_weight: 2.0 * params.arm_posture_weight, ..params };
    let report = replay(&loaded, &model, &changed)?;
    println!("with doubled posture weight: max deviation {:.3e}, first at tick {:?}, warnings {:?}",
        report.max_deviation, report.first_divergent_tick, report.warnings);
    Ok(())
}
