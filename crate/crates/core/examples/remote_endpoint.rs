//! Drive a world model over the line-delimited JSON protocol. Run with no
//! arguments; the example starts a copy of itself in `serve` mode as the
//! endpoint, which answers every rollout by repeating the current frame.

use std::time::Duration;

use worldloop::action_api::{to_text, ControlKind};
use worldloop::render::{raycast_view, ViewKind, EGO_FOV_DEG};
use worldloop::scene::{ActionPrimitive, ActionSequence, Heading};
use worldloop::scenegen::{gen_scene, SceneParams};
use worldloop::worldmodel::wire::serve_frozen;
use worldloop::worldmodel::RemoteClient;

fn main() -> anyhow::Result<()> {
    if std::env::args().nth(1).as_deref() == Some("serve") {
        serve_frozen(std::io::stdin().lock(), std::io::stdout().lock(), ControlKind::Text, ViewKind::Ego)?;
        return Ok(());
    }
    let me = std::env::current_exe()?.display().to_string();
    let mut client = RemoteClient::spawn(&[me, "serve".into()], Duration::from_secs(10))?;
    println!("endpoint accepts {:?} control, returns {:?} frames", client.control_kind(), client.observation_kind());

    let scene = gen_scene(5, &SceneParams::default())?;
    let pose = scene.pose_at(scene.free_cells()[100], Heading::from_index(6));
    let obs = raycast_view(&scene, &pose, EGO_FOV_DEG, 32)?;
    let plan = ActionSequence::new(vec![ActionPrimitive::Forward, ActionPrimitive::TurnLeft, ActionPrimitive::Forward])?;
    let frames = client.rollout(&obs, &to_text(&plan)?, plan.len(), 42)?;
    println!("{} frames back; first equals the input view: {}", frames.len(), frames[0].columns == obs.columns);
    Ok(())
}
