//! Inference-time, data and decoupling sweeps. Every row of a sweep shares
//! the base config fingerprint; rows differ only in the swept factor.

use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::{evaluate, parse_model, pool, HarnessError, RunConfig};
use crate::datagen::{generate_scene_dataset, read_dataset, write_dataset, GenParams, TrajectoryRecord};
use crate::metrics::{spearman, spl, success_rate};
use crate::planner::heuristic_next;
use crate::rng::{domain, mix, stream};
use crate::scene::{apply_action, ActionSequence, Heading};
use crate::scenegen::{gen_scene, SceneParams};
use crate::tasks::{EpisodeResult, Suite};
use crate::worldmodel::{controllability, probe, EvalItem, ModelHandle, Variant, WorldModelConfig};

/// Actions walked before each probe plan.
pub const PROBE_HISTORY: usize = 6;
const PROBES_PER_SCENE: usize = 10;
const CORPUS_BATCH: u64 = 16;
const CORPUS_MAX_SCENES: u64 = 100_000;
const MATCH_ITERS: usize = 20;

/// Controllability probes on scenes disjoint from any suite: a short
/// heuristic walk followed by a heuristic plan of `horizon` actions.
pub fn probe_items(params: &SceneParams, count: usize, horizon: usize, seed: u64) -> Result<Vec<EvalItem>, HarnessError> {
    let n_scenes = count.div_ceil(PROBES_PER_SCENE) as u64;
    let scenes = (0..n_scenes)
        .into_par_iter()
        .map(|s| Ok(Arc::new(gen_scene(mix(seed, &[domain::PROBE, s]), params)?)))
        .collect::<Result<Vec<_>, HarnessError>>()?;
    (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let scene = scenes[i as usize / PROBES_PER_SCENE].clone();
            let mut rng = stream(seed, &[domain::PROBE, n_scenes, i]);
            let free = scene.free_cells();
            let cell = *free.choose(&mut rng).ok_or_else(|| HarnessError::Config("probe scene has no free cells".into()))?;
            let mut pose = scene.pose_at(cell, Heading::from_index(rng.random_range(0..16)));
            let mut actions = Vec::with_capacity(PROBE_HISTORY + horizon);
            let mut history = vec![pose];
            for _ in 0..PROBE_HISTORY {
                let a = heuristic_next(&actions, &mut rng);
                actions.push(a);
                pose = apply_action(&scene, &pose, a);
                history.push(pose);
            }
            for _ in 0..horizon {
                let a = heuristic_next(&actions, &mut rng);
                actions.push(a);
            }
            let plan = ActionSequence::new(actions[PROBE_HISTORY..].to_vec())
                .map_err(|e| HarnessError::Config(format!("probe plan: {e}")))?;
            Ok(EvalItem { scene, history, plan, id: i })
        })
        .collect()
}

/// Generates scenes from the stream `(seed, CORPUS, i)` and runs the dataset
/// pipeline on each, in scene order, until at least `min_records` records
/// exist. Any prefix of the result is a valid smaller corpus.
pub fn generate_corpus(
    scenes: &SceneParams,
    params: &GenParams,
    min_records: usize,
    seed: u64,
) -> Result<Vec<TrajectoryRecord>, HarnessError> {
    let mut records = Vec::new();
    let mut next = 0u64;
    while records.len() < min_records {
        if next >= CORPUS_MAX_SCENES {
            return Err(HarnessError::Config(format!("{next} scenes yielded only {} records", records.len())));
        }
        let batch = (next..next + CORPUS_BATCH)
            .into_par_iter()
            .map(|i| {
                let scene = gen_scene(mix(seed, &[domain::CORPUS, i]), scenes)?;
                let name = format!("corpus/scene_{i:05}.txt");
                Ok(generate_scene_dataset(&scene, &name, i, params, seed)?.1)
            })
            .collect::<Result<Vec<_>, HarnessError>>()?;
        records.extend(batch.into_iter().flatten());
        next += CORPUS_BATCH;
    }
    Ok(records)
}

/// Template config carrying the view suffix (`""`, `"@pano"`, `"@pano:W"`).
fn view_template(view: &str) -> Result<WorldModelConfig, HarnessError> {
    Ok(parse_model(&format!("oracle{view}"))?.expect("oracle is a model"))
}

fn with_variant(view: &str, variant: Variant) -> Result<WorldModelConfig, HarnessError> {
    let mut c = view_template(view)?;
    c.variant = variant;
    c.validate()?;
    Ok(c)
}

fn mean<T>(items: &[T], f: impl Fn(&T) -> f64) -> f64 {
    if items.is_empty() {
        0.0
    } else {
        items.iter().map(f).sum::<f64>() / items.len() as f64
    }
}

fn sr(results: &[EpisodeResult]) -> Result<f64, HarnessError> {
    Ok(if results.is_empty() { 0.0 } else { success_rate(results)? })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InferenceRow {
    pub model: String,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "SR")]
    pub sr: f64,
    #[serde(rename = "SPL")]
    pub spl: f64,
    pub wm_inferences_mean: f64,
    pub decision_steps_mean: f64,
    pub episodes: usize,
    pub seeds: usize,
    pub fallbacks: usize,
    pub fingerprint: String,
}

/// Reruns the suite for each M with the sweep's model; all other planner
/// settings and the seeds stay fixed.
pub fn sweep_inference(cfg: &RunConfig) -> Result<Vec<InferenceRow>, HarnessError> {
    cfg.validate()?;
    let suite = Suite::load(&cfg.suite)?;
    let model = parse_model(&cfg.sweep.inference_model)?.map(|c| ModelHandle::build(&c)).transpose()?;
    let seeds = cfg.run_seeds();
    let fingerprint = cfg.fingerprint();
    let pool = pool(cfg.jobs)?;
    cfg.sweep
        .m_values
        .iter()
        .map(|&m| {
            let mut planner = cfg.planner.clone();
            planner.m = Some(m);
            let results = pool.install(|| evaluate(&suite, model.as_ref(), &planner, &seeds));
            log::info!("sweep-inference M={m}: {} episodes", results.len());
            Ok(InferenceRow {
                model: model.as_ref().map_or("none", ModelHandle::name).to_string(),
                m,
                sr: sr(&results)?,
                spl: if results.is_empty() { 0.0 } else { spl(&results)? },
                wm_inferences_mean: mean(&results, |r| r.wm_inferences as f64),
                decision_steps_mean: mean(&results, |r| r.decision_steps as f64),
                episodes: results.len(),
                seeds: seeds.len(),
                fallbacks: results.iter().map(|r| r.fallbacks).sum(),
                fingerprint: fingerprint.clone(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DataRow {
    /// Training trajectories (a prefix of one corpus).
    pub size: usize,
    pub model: String,
    pub training_actions: usize,
    pub controllability: f64,
    #[serde(rename = "SR")]
    pub sr: f64,
    pub episodes: usize,
    pub fingerprint: String,
}

/// The sweep's corpus: read from `sweep.dataset`, or generated (and written
/// to `<out>/dataset`) with enough records for the largest size.
pub fn sweep_corpus(cfg: &RunConfig) -> Result<Vec<TrajectoryRecord>, HarnessError> {
    let need = cfg.sweep.dataset_sizes.iter().copied().max().unwrap_or(0);
    let records = match &cfg.sweep.dataset {
        Some(dir) => read_dataset(dir)?,
        None => {
            let records = generate_corpus(&cfg.sweep.scenes, &GenParams::default(), need, cfg.seed)?;
            write_dataset(&records, &cfg.out.join("dataset"))?;
            records
        }
    };
    if records.len() < need {
        return Err(HarnessError::Config(format!("dataset has {} records, sweep needs {need}", records.len())));
    }
    Ok(records)
}

/// Trains CountPrior on nested prefixes of one corpus and measures
/// controllability on fixed probes plus SR on the suite.
pub fn sweep_data(cfg: &RunConfig) -> Result<Vec<DataRow>, HarnessError> {
    cfg.validate()?;
    let suite = Suite::load(&cfg.suite)?;
    let pool = pool(cfg.jobs)?;
    let records = pool.install(|| sweep_corpus(cfg))?;
    let probes = pool.install(|| {
        probe_items(&cfg.sweep.scenes, cfg.sweep.probe_items, cfg.sweep.probe_horizon, mix(cfg.seed, &[domain::PROBE]))
    })?;
    let seeds = cfg.run_seeds();
    let fingerprint = cfg.fingerprint();
    let dataset = cfg.sweep.dataset.clone().unwrap_or_else(|| cfg.out.join("dataset"));
    cfg.sweep
        .dataset_sizes
        .iter()
        .map(|&size| {
            let config = with_variant(&cfg.sweep.data_view, Variant::CountPrior { dataset: dataset.clone(), limit: Some(size) })?;
            let train = &records[..size];
            let model = ModelHandle::count_prior(&config, train)?;
            let (ctrl, results) = pool.install(|| -> Result<_, HarnessError> {
                let ctrl = controllability(&model, &probes, cfg.seed)?;
                Ok((ctrl, evaluate(&suite, Some(&model), &cfg.planner, &seeds)))
            })?;
            log::info!("sweep-data size={size}: controllability {ctrl:.4}");
            Ok(DataRow {
                size,
                model: model.name().to_string(),
                training_actions: train.iter().map(|r| r.action_count()).sum(),
                controllability: ctrl,
                sr: sr(&results)?,
                episodes: results.len(),
                fingerprint: fingerprint.clone(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecouplingRow {
    pub variant: String,
    pub family: String,
    pub quality: f64,
    pub controllability: f64,
    #[serde(rename = "SR")]
    pub sr: f64,
    pub episodes: usize,
    pub fingerprint: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecouplingReport {
    pub rows: Vec<DecouplingRow>,
    /// Over all cells.
    pub spearman_controllability_sr: Option<f64>,
    pub spearman_quality_sr: Option<f64>,
    /// `(noisy_obs cell, noisy_action cell)` pairs where the first has
    /// strictly lower quality and strictly higher SR.
    pub inversions: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub statistic: String,
    pub value: String,
}

impl DecouplingReport {
    pub fn summary(&self) -> Vec<SummaryRow> {
        let fmt = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |v| format!("{v:.6}"));
        let mut out = vec![
            SummaryRow { statistic: "cells".into(), value: self.rows.len().to_string() },
            SummaryRow { statistic: "spearman_controllability_sr".into(), value: fmt(self.spearman_controllability_sr) },
            SummaryRow { statistic: "spearman_quality_sr".into(), value: fmt(self.spearman_quality_sr) },
            SummaryRow { statistic: "inversions".into(), value: self.inversions.len().to_string() },
        ];
        out.extend(
            self.inversions
                .iter()
                .map(|(o, a)| SummaryRow { statistic: "inversion".into(), value: format!("{o} < {a} in quality, > in SR") }),
        );
        out
    }
}

/// NoisyObs noise `k * ray` whose controllability on `probes` is closest to
/// `target`, by bisection on `k` (controllability falls as `k` grows).
pub fn match_obs_noise(view: &str, ray: [f64; 2], target: f64, probes: &[EvalItem], seed: u64) -> Result<[f64; 2], HarnessError> {
    if !(ray[0] >= 0.0 && ray[1] >= 0.0 && ray[0] + ray[1] > 0.0) {
        return Err(HarnessError::Config(format!("bad obs_ray {ray:?}")));
    }
    let at = |k: f64| [round4(k * ray[0]), round4((k * ray[1]).min(1.0))];
    let ctrl = |k: f64| -> Result<f64, HarnessError> {
        let [sigma, p_class] = at(k);
        let model = ModelHandle::build(&with_variant(view, Variant::NoisyObs { sigma, p_class })?)?;
        Ok(controllability(&model, probes, seed)?)
    };
    let (mut lo, mut hi) = (0.0, if ray[1] > 0.0 { 1.0 / ray[1] } else { 1.0 });
    while ray[1] == 0.0 && ctrl(hi)? > target && hi < 1e3 {
        hi *= 2.0;
    }
    for _ in 0..MATCH_ITERS {
        let mid = 0.5 * (lo + hi);
        if ctrl(mid)? > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(at(0.5 * (lo + hi)))
}

fn round4(v: f64) -> f64 {
    (v * 1e4).round() / 1e4
}

/// Evaluates Oracle, the NoisyAction grid and the NoisyObs grid on the same
/// probes, suite and seeds.
pub fn sweep_decoupling(cfg: &RunConfig) -> Result<DecouplingReport, HarnessError> {
    cfg.validate()?;
    let suite = Suite::load(&cfg.suite)?;
    let pool = pool(cfg.jobs)?;
    let probes = pool.install(|| {
        probe_items(&cfg.sweep.scenes, cfg.sweep.probe_items, cfg.sweep.probe_horizon, mix(cfg.seed, &[domain::PROBE]))
    })?;
    let seeds = cfg.run_seeds();
    let fingerprint = cfg.fingerprint();
    let view = &cfg.sweep.decoupling_view;
    let mut cells = vec![("oracle", Variant::Oracle)];
    cells.extend(cfg.sweep.action_flips.iter().map(|&p_flip| ("noisy_action", Variant::NoisyAction { p_flip })));
    let obs_noise = if cfg.sweep.obs_noise.is_empty() {
        pool.install(|| {
            cfg.sweep
                .action_flips
                .iter()
                .map(|&p_flip| {
                    let model = ModelHandle::build(&with_variant(view, Variant::NoisyAction { p_flip })?)?;
                    let target = controllability(&model, &probes, cfg.seed)?;
                    match_obs_noise(view, cfg.sweep.obs_ray, target, &probes, cfg.seed)
                })
                .collect::<Result<Vec<_>, HarnessError>>()
        })?
    } else {
        cfg.sweep.obs_noise.clone()
    };
    cells.extend(obs_noise.iter().map(|&[sigma, p_class]| ("noisy_obs", Variant::NoisyObs { sigma, p_class })));
    let mut rows = Vec::with_capacity(cells.len());
    for (family, variant) in cells {
        let model = ModelHandle::build(&with_variant(view, variant)?)?;
        let (outcomes, results) = pool.install(|| -> Result<_, HarnessError> {
            Ok((probe(&model, &probes, cfg.seed)?, evaluate(&suite, Some(&model), &cfg.planner, &seeds)))
        })?;
        let row = DecouplingRow {
            variant: model.name().to_string(),
            family: family.to_string(),
            quality: mean(&outcomes, |o| o.quality),
            controllability: 1.0 - mean(&outcomes, |o| o.error),
            sr: sr(&results)?,
            episodes: results.len(),
            fingerprint: fingerprint.clone(),
        };
        log::info!("sweep-decoupling {}: q {:.4} c {:.4} SR {:.2}", row.variant, row.quality, row.controllability, row.sr);
        rows.push(row);
    }
    let col = |f: fn(&DecouplingRow) -> f64| rows.iter().map(f).collect::<Vec<_>>();
    let srs = col(|r| r.sr);
    let spearman_controllability_sr = spearman(&col(|r| r.controllability), &srs);
    let spearman_quality_sr = spearman(&col(|r| r.quality), &srs);
    let mut inversions = Vec::new();
    for o in rows.iter().filter(|r| r.family == "noisy_obs") {
        for a in rows.iter().filter(|r| r.family == "noisy_action") {
            if o.quality < a.quality && o.sr > a.sr {
                inversions.push((o.variant.clone(), a.variant.clone()));
            }
        }
    }
    Ok(DecouplingReport { rows, spearman_controllability_sr, spearman_quality_sr, inversions })
}
