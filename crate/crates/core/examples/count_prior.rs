//! Train the count-based prior on growing slices of a generated corpus and
//! watch controllability rise.

use worldloop::datagen::GenParams;
use worldloop::harness::{generate_corpus, probe_items};
use worldloop::scenegen::SceneParams;
use worldloop::worldmodel::{controllability, ModelHandle, Variant, WorldModelConfig};

fn main() -> anyhow::Result<()> {
    let scenes = SceneParams::default();
    let corpus = generate_corpus(&scenes, &GenParams::default(), 400, 0)?;
    let items = probe_items(&scenes, 64, 4, 5)?;
    let cfg = WorldModelConfig::new(Variant::Frozen);
    for n in [0, 25, 100, 400] {
        let m = ModelHandle::count_prior(&cfg, &corpus[..n])?;
        println!("{n:>4} records: controllability {:.4}", controllability(&m, &items, 0)?);
    }
    Ok(())
}
