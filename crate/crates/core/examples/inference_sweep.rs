//! Success rate against the number of imagined candidates M on a small
//! ImageNav suite.

use worldloop::harness::{sweep_inference, RunConfig};
use worldloop::metrics::write_csv;
use worldloop::scenegen::{gen_suite, SceneParams};
use worldloop::tasks::TaskKind;

fn main() -> anyhow::Result<()> {
    let dir = std::env::temp_dir().join(format!("worldloop-sweep-{}", std::process::id()));
    let suite = gen_suite(TaskKind::ImageNav, 4, 3, 2024, &SceneParams::default())?;
    let path = suite.write(&dir, "suite.jsonl")?;

    let mut cfg = RunConfig::new(&path);
    cfg.seeds = 2;
    cfg.sweep.m_values = vec![1, 2, 4, 8];
    cfg.sweep.inference_model = "noisy_action:0.25@pano".into();
    let rows = sweep_inference(&cfg)?;
    write_csv(&rows, std::io::stdout().lock())?;
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
