//! Write a small suite to disk, evaluate several models on it through the
//! harness and print the report table.

use worldloop::harness::{run_suite, write_report, ModelEntry, RunConfig};
use worldloop::metrics::format_table;
use worldloop::scenegen::{gen_suite, SceneParams};
use worldloop::tasks::TaskKind;

fn main() -> anyhow::Result<()> {
    let dir = std::env::temp_dir().join(format!("worldloop-suite-{}", std::process::id()));
    let suite = gen_suite(TaskKind::Ar, 4, 3, 7, &SceneParams::default())?;
    let path = suite.write(&dir, "suite.jsonl")?;

    let mut cfg = RunConfig::new(&path);
    cfg.models = ["none", "oracle", "noisy_action:0.5", "frozen"].iter().map(|m| ModelEntry::Spec(m.to_string())).collect();
    cfg.seeds = 2;
    cfg.out = dir.join("out");
    let report = run_suite(&cfg)?;
    write_report(&cfg, &report)?;
    print!("{}", format_table(&report.rows));
    println!("{} episode results in {}", report.results.len(), cfg.out.display());
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
