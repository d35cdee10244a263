//! Starts the service in-process, connects as the controller and sweeps the
//! end-effector target around a small circle, printing the tracking error.
//!
//! Pass an address (`ws://host:port/ws`) to drive an already running
//! service instead.

use std::f64::consts::TAU;
use std::time::Duration;

use futures::{SinkExt, StreamExt};
use tokio::net::TcpListener;
use tokio_tungstenite::connect_async;
use tokio_tungstenite::tungstenite::Message;
use wholebody::geometry::Pose;
use wholebody::wbc::tracking_errors;
use wholebody::{RobotModel, WbcParams};
use wholebody_service::{start, CommandMessage, ServerMessage, ServiceConfig};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (url, handle) = match std::env::args().nth(1) {
        Some(url) => (url, None),
        None => {
            let dir = std::env::temp_dir().join("wholebody-teleop-example");
            let mut config = ServiceConfig::new(RobotModel::reference(), WbcParams::default());
            config.record_dir = dir;
            let h = start(config, TcpListener::bind("127.0.0.1:0").await?).await?;
            (format!("ws://{}/ws", h.addr()), Some(h))
        }
    };
    let (mut ws, _) = connect_async(format!("{url}?role=controller")).await?;

    let mut center: Option<Pose> = None;
    let mut step = 0;
    while let Some(msg) = ws.next().await {
        let Message::Text(text) = msg? else { continue };
        match serde_json::from_str::<ServerMessage>(&text)? {
            ServerMessage::Hello { session, model, .. } => println!("session {session} on model {model}"),
            ServerMessage::State(s) => {
                let c = *center.get_or_insert(s.ee_pose);
                if let Some(t) = &s.target_ee_pose {
                    let (pos, ori) = tracking_errors(&s.ee_pose, t)?;
                    let near: Vec<String> = s.distances.iter().map(|d| format!("{}={:.3}", d.pair, d.d)).collect();
                    println!("tick {:4}  pos err {pos:.2e} m  ori err {ori:.2e} rad  {}", s.tick, near.join(" "));
                }
                if step == 60 {
                    break;
                }
                let phase = TAU * step as f64 / 40.0;
                let offset = nalgebra::Vector3::new(0.05 * phase.cos() - 0.05, 0.05 * phase.sin(), 0.0);
                let target = Pose::new(c.translation + offset, c.rotation);
                ws.send(Message::Text(serde_json::to_string(&CommandMessage::target_pose(&target))?.into())).await?;
                step += 1;
            }
            other => println!("{other:?}"),
        }
    }
    ws.close(None).await.ok();
    if let Some(h) = handle {
        tokio::time::sleep(Duration::from_millis(50)).await;
        h.shutdown().await?;
    }
    Ok(())
}
