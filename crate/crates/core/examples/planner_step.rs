//! One proposal-simulation-revision decision: show every candidate plan,
//! its imagined score and the committed prefix.

use worldloop::planner::{plan_step, Decision, Objective, PlannerConfig, StepInput};
use worldloop::render::{raycast_view, EGO_FOV_DEG};
use worldloop::scene::{apply_action, ActionPrimitive, Heading};
use worldloop::scenegen::{gen_scene, SceneParams};
use worldloop::worldmodel::{GroundTruth, ModelHandle, Variant, WorldModelConfig};

fn main() -> anyhow::Result<()> {
    let scene = gen_scene(21, &SceneParams::default())?;
    let free = scene.free_cells();
    let pose = scene.pose_at(free[free.len() / 2], Heading::from_index(0));
    // goal: the view after a short walk
    let goal = [ActionPrimitive::TurnLeft, ActionPrimitive::Forward, ActionPrimitive::Forward, ActionPrimitive::Forward]
        .iter()
        .fold(pose, |p, a| apply_action(&scene, &p, *a));
    let goal_view = raycast_view(&scene, &goal, EGO_FOV_DEG, 64)?;

    let model = ModelHandle::build(&WorldModelConfig::new(Variant::Oracle))?;
    let session = model.session()?;
    let obs = model.info().render(&scene, &pose)?;
    let input = StepInput {
        obs: &obs,
        model_obs: &obs,
        objective: Objective::ImageNav { goal_view: &goal_view },
        answerer: None,
        history: &[],
        goal_bearing_deg: None,
        odometry: pose,
        truth: GroundTruth { scene: &scene, pose },
        episode: 0,
        step: 0,
    };
    let out = plan_step(&PlannerConfig::new(6, 5, 3), &input, Some(&session))?;
    for (i, c) in out.candidates.iter().enumerate() {
        let mark = if Some(i) == out.winner { "*" } else { " " };
        println!("{mark} {:?}  score {:.4}", c.seq.as_slice(), c.score.unwrap_or(f64::NAN));
    }
    if let Decision::Plan { seq } = out.decision {
        println!("commit {:?} after {} model calls", seq.as_slice(), out.inferences);
    }
    Ok(())
}
