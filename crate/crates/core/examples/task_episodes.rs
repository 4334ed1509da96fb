//! Run one episode of each task with and without a world model and replay
//! the recorded traces.

use worldloop::scenegen::{gen_suite, SceneParams};
use worldloop::tasks::{run_episode, validate_trace, PlannerOverrides, TaskKind};
use worldloop::worldmodel::{ModelHandle, Variant, WorldModelConfig};

fn main() -> anyhow::Result<()> {
    let oracle = ModelHandle::build(&WorldModelConfig::new(Variant::Oracle))?;
    for task in [TaskKind::ImageNav, TaskKind::Ar, TaskKind::InfoSeek] {
        let suite = gen_suite(task, 1, 1, 2024, &SceneParams::default())?;
        let Some(spec) = suite.episodes.first() else {
            println!("{}: no episode generated", task.label());
            continue;
        };
        let scene = suite.scene(spec);
        for model in [None, Some(&oracle)] {
            let r = run_episode(scene, spec, model, &PlannerOverrides::default(), 0)?;
            validate_trace(scene, spec, &r)?;
            println!(
                "{:<9} {:<7} success {:<5} decisions {:>3} actions {:>3} path {:5.2} m  answer {:?}",
                task.label(),
                r.model,
                r.success,
                r.decision_steps,
                r.steps_executed,
                r.path_length_m,
                r.answer
            );
        }
    }
    Ok(())
}
