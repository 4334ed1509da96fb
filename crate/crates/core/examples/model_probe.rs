//! Score built-in world-model variants on held-out probe items: rollout
//! error against the simulator, controllability and the visual quality proxy.

use worldloop::harness::probe_items;
use worldloop::scenegen::SceneParams;
use worldloop::worldmodel::{controllability, probe, ModelHandle, Variant, WorldModelConfig};

fn main() -> anyhow::Result<()> {
    let items = probe_items(&SceneParams::default(), 64, 4, 11)?;
    let variants = [
        Variant::Oracle,
        Variant::NoisyAction { p_flip: 0.25 },
        Variant::NoisyAction { p_flip: 0.6 },
        Variant::NoisyObs { sigma: 0.5, p_class: 0.15 },
        Variant::Frozen,
    ];
    println!("{:<28} {:>8} {:>8} {:>8}", "model", "error", "ctrl", "quality");
    for v in variants {
        let m = ModelHandle::build(&WorldModelConfig::new(v))?;
        let out = probe(&m, &items, 0)?;
        let n = out.len() as f64;
        let err = out.iter().map(|o| o.error).sum::<f64>() / n;
        let q = out.iter().map(|o| o.quality).sum::<f64>() / n;
        println!("{:<28} {err:>8.4} {:>8.4} {q:>8.4}", m.name(), controllability(&m, &items, 0)?);
    }
    Ok(())
}
