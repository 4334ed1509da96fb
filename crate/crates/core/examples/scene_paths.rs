//! Generate a scene, find a geodesic between two free cells and replay the
//! realized action sequence with the kinematics.

use worldloop::scene::{apply_action, serialize_scene, Heading};
use worldloop::scenegen::{gen_scene, SceneParams};

fn main() -> anyhow::Result<()> {
    let params = SceneParams { size: 40, rooms: 3, ..SceneParams::default() };
    let scene = gen_scene(7, &params)?;
    println!("{}", serialize_scene(&scene)?.lines().take(3).collect::<Vec<_>>().join("\n"));
    println!("{} free cells, {} objects", scene.free_cells().len(), scene.instances().len());

    let free = scene.free_cells();
    let (a, b) = (free[0], free[free.len() - 1]);
    let start = scene.pose_at(a, Heading::default());
    let path = scene.shortest_path(&start, b)?;
    println!("geodesic {a:?} -> {b:?}: {:.2} m over {} cells", path.cost, path.cells.len());
    println!("realized with {} actions", path.actions.len());

    let end = path.actions.iter().fold(start, |p, act| apply_action(&scene, &p, *act));
    let (gx, gy) = scene.cell_center(b);
    println!("replayed end pose {end:?}, {:.3} m from the goal cell centre", end.distance_to_point(gx, gy));
    Ok(())
}
