//! Generate coverage trajectories for a few scenes, audit them, write the
//! dataset and read it back with integrity checks.

use worldloop::datagen::{audit, filter_overlap, generate_scene_dataset, read_dataset, write_dataset, GenParams};
use worldloop::scenegen::{gen_scene, SceneParams};

fn main() -> anyhow::Result<()> {
    let params = GenParams::default();
    let mut records = Vec::new();
    for i in 0..3u64 {
        let scene = gen_scene(i, &SceneParams::default())?;
        let name = format!("scene_{i:03}.txt");
        let (ws, recs) = generate_scene_dataset(&scene, &name, i, &params, 0)?;
        let report = audit(&scene, &ws, &recs)?;
        println!("{name}: {} waypoints, {} trajectories, audit passed {}", ws.selected.len(), recs.len(), report.passed());
        records.extend(recs);
    }
    let kept = filter_overlap(records.clone(), 0.5);
    println!("overlap >= 0.5 keeps {} of {}", kept.len(), records.len());

    let dir = std::env::temp_dir().join(format!("worldloop-dataset-{}", std::process::id()));
    let manifest = write_dataset(&records, &dir)?;
    println!(
        "wrote {} trajectories, {} frames, {} actions to {}",
        manifest.trajectories,
        manifest.frames,
        manifest.low_level_actions,
        dir.display()
    );
    assert_eq!(read_dataset(&dir)?, records);
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
