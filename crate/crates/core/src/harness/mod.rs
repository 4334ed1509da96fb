//! Batch runs: configuration, suite execution, sweeps and report files.
//!
//! A run is fully described by a [`RunConfig`] (TOML on disk, overridable
//! from the command line). Episodes run on a bounded rayon pool, and results
//! are always ordered by model, seed and episode position, so the output
//! files do not depend on the pool size.

mod sweep;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use sweep::{
    generate_corpus, match_obs_noise, probe_items, sweep_corpus, sweep_data, sweep_decoupling, sweep_inference, DataRow, DecouplingReport, DecouplingRow,
    InferenceRow, SummaryRow, PROBE_HISTORY,
};

use crate::datagen::DatagenError;
use crate::metrics::{report_rows, write_csv, MetricsError, ReportRow};
use crate::render::ViewKind;
use crate::scenegen::{ScenegenError, SceneParams};
use crate::tasks::{run_episode, EpisodeResult, PlannerOverrides, Suite, TaskError};
use crate::worldmodel::{ModelError, ModelHandle, Variant, WorldModelConfig};

pub const REPORT_FILE: &str = "report.csv";
pub const EPISODES_FILE: &str = "episodes.jsonl";
pub const RESOLVED_CONFIG_FILE: &str = "run_config.json";
/// Width of `@pano` models when none is given.
pub const DEFAULT_PANO_WIDTH: usize = 256;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Datagen(#[from] DatagenError),
    #[error(transparent)]
    Scenegen(#[from] ScenegenError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

/// A model named by a short spec string or given as a full table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelEntry {
    Spec(String),
    Config(WorldModelConfig),
}

impl ModelEntry {
    /// `None` is the no-model baseline.
    pub fn resolve(&self) -> Result<Option<WorldModelConfig>, HarnessError> {
        match self {
            ModelEntry::Spec(s) => parse_model(s),
            ModelEntry::Config(c) => Ok(Some(c.clone())),
        }
    }
}

/// Parses a model spec:
///
/// ```text
/// none | oracle | frozen | noisy_action:P | noisy_obs:SIGMA,P
///      | count_prior:DIR[#LIMIT] | remote:COMMAND ARGS...
/// ```
///
/// optionally followed by `@pano` or `@pano:WIDTH` for a panoramic model.
pub fn parse_model(spec: &str) -> Result<Option<WorldModelConfig>, HarnessError> {
    let bad = |msg: &str| HarnessError::Config(format!("model `{spec}`: {msg}"));
    let (base, view) = match spec.rsplit_once('@') {
        Some((b, v)) if !b.starts_with("remote:") || v.starts_with("pano") => (b, Some(v)),
        _ => (spec, None),
    };
    let (name, arg) = match base.split_once(':') {
        Some((n, a)) => (n.trim(), Some(a.trim())),
        None => (base.trim(), None),
    };
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad(&format!("`{s}` is not a number")));
    let variant = match (name, arg) {
        ("none", None) => return Ok(None),
        ("oracle", None) => Variant::Oracle,
        ("frozen", None) => Variant::Frozen,
        ("noisy_action", Some(p)) => Variant::NoisyAction { p_flip: num(p)? },
        ("noisy_obs", Some(a)) => {
            let (s, p) = a.split_once(',').ok_or_else(|| bad("expected SIGMA,P"))?;
            Variant::NoisyObs { sigma: num(s)?, p_class: num(p)? }
        }
        ("count_prior", Some(a)) => {
            let (dir, limit) = match a.rsplit_once('#') {
                Some((d, n)) => (d, Some(n.parse::<usize>().map_err(|_| bad("bad record limit"))?)),
                None => (a, None),
            };
            Variant::CountPrior { dataset: PathBuf::from(dir), limit }
        }
        ("remote", Some(cmd)) => Variant::Remote {
            command: cmd.split_whitespace().map(str::to_string).collect(),
            timeout_s: crate::worldmodel::DEFAULT_TIMEOUT_S,
        },
        _ => return Err(bad("unknown model")),
    };
    let mut config = WorldModelConfig::new(variant);
    match view {
        None => {}
        Some("pano") => {
            config.observation_kind = ViewKind::Panorama;
            config.width = DEFAULT_PANO_WIDTH;
        }
        Some(v) => {
            let w = v.strip_prefix("pano:").ok_or_else(|| bad("view suffix must be @pano or @pano:WIDTH"))?;
            config.observation_kind = ViewKind::Panorama;
            config.width = w.parse().map_err(|_| bad("bad panorama width"))?;
        }
    }
    config.validate()?;
    Ok(Some(config))
}

fn default_models() -> Vec<ModelEntry> {
    vec![ModelEntry::Spec("none".into())]
}

fn default_jobs() -> usize {
    1
}

fn default_seeds() -> usize {
    1
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

/// Settings read only by the sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub m_values: Vec<usize>,
    pub inference_model: String,
    /// Dataset directory for the data sweep; generated when absent.
    pub dataset: Option<PathBuf>,
    pub dataset_sizes: Vec<usize>,
    /// View suffix (`""` or `"@pano"`) for CountPrior models.
    pub data_view: String,
    pub action_flips: Vec<f64>,
    /// NoisyObs cells as `[sigma, p_class]`. When empty, one cell per
    /// action flip is placed on `obs_ray` at matched controllability.
    pub obs_noise: Vec<[f64; 2]>,
    /// `[sigma, p_class]` per unit of noise for matched NoisyObs cells.
    pub obs_ray: [f64; 2],
    /// View suffix for the decoupling cells.
    pub decoupling_view: String,
    pub probe_items: usize,
    pub probe_horizon: usize,
    /// Scenes for probes and generated datasets.
    pub scenes: SceneParams,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            m_values: vec![1, 2, 4, 8],
            inference_model: "noisy_action:0.25@pano".into(),
            dataset: None,
            dataset_sizes: vec![10, 50, 200, 800],
            data_view: String::new(),
            action_flips: vec![0.1, 0.25, 0.4, 0.6],
            obs_noise: Vec::new(),
            obs_ray: [1.0, 0.3],
            decoupling_view: "@pano".into(),
            probe_items: 200,
            probe_horizon: 4,
            scenes: SceneParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub suite: PathBuf,
    #[serde(default = "default_models")]
    pub models: Vec<ModelEntry>,
    #[serde(default)]
    pub planner: PlannerOverrides,
    /// Worker threads; 0 lets rayon decide.
    #[serde(default = "default_jobs")]
    pub jobs: usize,
    #[serde(default)]
    pub seed: u64,
    /// Number of run seeds: `seed, seed + 1, ...`.
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub sweep: SweepConfig,
}

/// Command-line values that replace config entries.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub models: Vec<String>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(suite: impl Into<PathBuf>) -> Self {
        Self {
            suite: suite.into(),
            models: default_models(),
            planner: PlannerOverrides::default(),
            jobs: default_jobs(),
            seed: 0,
            seeds: default_seeds(),
            out: default_out(),
            sweep: SweepConfig::default(),
        }
    }

    /// Reads a TOML config. Relative `suite` and `sweep.dataset` paths are
    /// taken relative to the config file.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        if cfg.suite.is_relative() {
            cfg.suite = base.join(&cfg.suite);
        }
        if let Some(d) = cfg.sweep.dataset.as_mut().filter(|d| d.is_relative()) {
            *d = base.join(&*d);
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(j) = o.jobs {
            self.jobs = j;
        }
        if !o.models.is_empty() {
            self.models = o.models.iter().cloned().map(ModelEntry::Spec).collect();
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if !self.suite.is_file() {
            return Err(HarnessError::Config(format!("suite {} does not exist", self.suite.display())));
        }
        if self.seeds == 0 {
            return Err(HarnessError::Config("seeds must be at least 1".into()));
        }
        if self.models.is_empty() {
            return Err(HarnessError::Config("no models".into()));
        }
        for m in &self.models {
            m.resolve()?;
        }
        Ok(())
    }

    pub fn run_seeds(&self) -> Vec<u64> {
        (0..self.seeds as u64).map(|k| self.seed.wrapping_add(k)).collect()
    }

    /// SHA-256 over everything that can change results. `jobs` and `out`
    /// are excluded.
    pub fn fingerprint(&self) -> String {
        let mut c = self.clone();
        c.jobs = 0;
        c.out = PathBuf::new();
        let json = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// Results of one `run`.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub rows: Vec<ReportRow>,
    /// Ordered by model, seed, then suite position.
    pub results: Vec<EpisodeResult>,
}

pub(crate) fn pool(jobs: usize) -> Result<rayon::ThreadPool, HarnessError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))
}

/// Runs every episode of `suite` under `model` for each seed. Episode
/// failures become failed results.
pub fn evaluate(
    suite: &Suite,
    model: Option<&ModelHandle>,
    overrides: &PlannerOverrides,
    seeds: &[u64],
) -> Vec<EpisodeResult> {
    let name = model.map_or("none", ModelHandle::name);
    seeds
        .iter()
        .flat_map(|&seed| {
            suite
                .episodes
                .par_iter()
                .map(|spec| {
                    run_episode(suite.scene(spec), spec, model, overrides, seed).unwrap_or_else(|e| {
                        log::warn!("episode {} ({name}, seed {seed}) failed: {e}", spec.id);
                        let m = spec.planner_config(overrides, seed).m;
                        EpisodeResult::failed(spec, name, seed, m, e.to_string())
                    })
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

pub fn build_models(entries: &[ModelEntry]) -> Result<Vec<Option<ModelHandle>>, HarnessError> {
    entries
        .iter()
        .map(|e| Ok(e.resolve()?.map(|c| ModelHandle::build(&c)).transpose()?))
        .collect()
}

/// Executes the configured suite for every model and seed.
pub fn run_suite(cfg: &RunConfig) -> Result<SuiteReport, HarnessError> {
    cfg.validate()?;
    let suite = Suite::load(&cfg.suite)?;
    let models = build_models(&cfg.models)?;
    let seeds = cfg.run_seeds();
    let results: Vec<EpisodeResult> = pool(cfg.jobs)?.install(|| {
        models.iter().flat_map(|m| evaluate(&suite, m.as_ref(), &cfg.planner, &seeds)).collect()
    });
    let rows = if results.is_empty() { Vec::new() } else { report_rows(&results)? };
    Ok(SuiteReport { rows, results })
}

fn create(path: &Path) -> Result<fs::File, HarnessError> {
    fs::File::create(path).map_err(io_err(path))
}

/// Writes any rows to `dir/name` as CSV.
pub fn write_table<T: Serialize>(dir: &Path, name: &str, rows: &[T]) -> Result<PathBuf, HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join(name);
    write_csv(rows, create(&path)?)?;
    Ok(path)
}

/// Writes the resolved config with its fingerprint.
pub fn write_resolved_config(cfg: &RunConfig) -> Result<(), HarnessError> {
    fs::create_dir_all(&cfg.out).map_err(io_err(&cfg.out))?;
    let path = cfg.out.join(RESOLVED_CONFIG_FILE);
    let value = serde_json::json!({ "fingerprint": cfg.fingerprint(), "config": cfg });
    fs::write(&path, serde_json::to_string_pretty(&value)? + "\n").map_err(io_err(&path))
}

/// Writes `report.csv`, `episodes.jsonl` and the resolved config to `cfg.out`.
pub fn write_report(cfg: &RunConfig, report: &SuiteReport) -> Result<(), HarnessError> {
    write_table(&cfg.out, REPORT_FILE, &report.rows)?;
    let path = cfg.out.join(EPISODES_FILE);
    let mut f = std::io::BufWriter::new(create(&path)?);
    for r in &report.results {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n").map_err(io_err(&path))?;
    }
    f.flush().map_err(io_err(&path))?;
    write_resolved_config(cfg)
}
