//! Render ego views and panoramas, split a panorama into views and compare
//! observations.

use worldloop::render::{overlap_ratio, panorama_to_views, raycast_view, render_panorama, view_distance, EGO_FOV_DEG};
use worldloop::scene::{apply_action, ActionPrimitive, Heading};
use worldloop::scenegen::{gen_scene, SceneParams};

fn main() -> anyhow::Result<()> {
    let scene = gen_scene(3, &SceneParams::default())?;
    let free = scene.free_cells();
    let pose = scene.pose_at(free[free.len() / 2], Heading::from_index(2));

    let ego = raycast_view(&scene, &pose, EGO_FOV_DEG, 16)?;
    println!("ego view at {pose:?}");
    for (i, c) in ego.columns.iter().enumerate() {
        println!("  col {i:2} bearing {:6.1}  depth {:5.2} m  class {:2}  instance {}", ego.column_bearing(i), c.depth_m, c.class_id, c.instance_id);
    }

    let pano = render_panorama(&scene, &pose, 64)?;
    let views = panorama_to_views(&pano, 4)?;
    println!("panorama of {} columns -> {} views of {}", pano.width(), views.len(), views[0].width());

    let wide = raycast_view(&scene, &pose, EGO_FOV_DEG, 64)?;
    for action in [ActionPrimitive::Forward, ActionPrimitive::TurnLeft] {
        let next = apply_action(&scene, &pose, action);
        let v = raycast_view(&scene, &next, EGO_FOV_DEG, 64)?;
        println!(
            "after {action:?}: view distance {:.3}, overlap {:.3}",
            view_distance(&wide, &v)?,
            overlap_ratio(&wide, &v, scene.cell_size())?
        );
    }
    Ok(())
}
