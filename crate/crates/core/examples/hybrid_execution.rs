//! Hybrid keypose / dense execution against a scripted policy, printing the
//! per-tick mode and query transcript.

use nalgebra::Vector3;
use wholebody::executor::{ExecutorConfig, ExecutorState, Mode, Observation, ScriptEntry, ScriptedPolicy};
use wholebody::geometry::Pose;
use wholebody::harness::{sim_step, SimState};
use wholebody::{wbc, RobotModel, WbcParams};

fn main() -> wholebody::Result<()> {
    let model = RobotModel::reference();
    let params = WbcParams::default();
    let start = model.ee_pose(model.retract())?;
    let grasp = Pose::new(start.translation + Vector3::new(0.15, 0.05, -0.1), start.rotation);
    let mut policy = ScriptedPolicy::new(vec![
        ScriptEntry::Keypose { pose: grasp.into(), gripper: 0.0, next_mode: Mode::Dense },
        ScriptEntry::DenseChunk { deltas: vec![[0.0, 0.0, -0.01, 0.0, 0.0, 0.02]; 16], gripper: 1.0, next_mode: Mode::Dense },
        ScriptEntry::DenseChunk { deltas: vec![[0.0, 0.0, 0.02, 0.0, 0.0, 0.0]; 4], gripper: 1.0, next_mode: Mode::Terminate },
    ])?;
    let mut exec = ExecutorState::new(0.0, ExecutorConfig::default())?;
    let mut state = SimState::new(&model, model.retract().clone(), 0.0)?;
    while exec.mode() != Mode::Terminate {
        let obs = Observation::new(state.tick, model.ee_pose(&state.q)?, state.gripper);
        let out = exec.step(&mut policy, &obs)?;
        let cmd = wbc::solve(&model, &state.q, &out.target, &params)?.command;
        state = sim_step(&model, &state, &cmd)?;
        state.gripper = out.gripper;
        let ee = model.ee_pose(&state.q)?;
        println!("tick {:2} {:8} {} gripper {:.0} ee z {:.3}", state.tick, out.mode.as_str(),
            if out.queried { "query" } else { "     " }, out.gripper, ee.translation.z);
    }
    println!("{} keypose and {} dense queries", exec.keypose_queries(), exec.dense_queries());
    Ok(())
}
