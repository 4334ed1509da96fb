//! Episode definitions for ImageNav, active recognition (AR) and InfoSeek,
//! suite files, and the episode runners.

mod run;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::planner::{PlannerConfig, PlannerError, ProposalPolicy, CENTRAL_HALF_DEG, STOP_THRESHOLD};
use crate::render::{render_panorama, Observation, RenderError};
use crate::scene::{parse_scene_file, Cell, GridScene, Pose, SceneError};
use crate::worldmodel::ModelError;

pub use run::{
    ar_answer, infoseek_answer, run_ar, run_episode, run_imagenav, run_infoseek, validate_trace, EpisodeResult,
    TraceStep, AGENT_WIDTH,
};

/// Distance (m) within which an ImageNav goal counts as reached.
pub const SUCCESS_RADIUS_M: f64 = 0.5;
/// Target visibility deemed fully visible.
pub const V_FULL: f64 = 0.15;
/// Panorama width used to find poses with a confident view of an instance.
const AFFORD_PANO_WIDTH: usize = 256;

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("episode {id}: {msg}")]
    InvalidSpec { id: u64, msg: String },
    #[error("wrong task: expected {expected:?}, got {got:?}")]
    WrongTask { expected: TaskKind, got: TaskKind },
    #[error("trace check failed: {0}")]
    Trace(String),
    #[error("{path}: {msg}")]
    Suite { path: PathBuf, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Planner(#[from] PlannerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    #[serde(rename = "imagenav")]
    ImageNav,
    Ar,
    #[serde(rename = "infoseek")]
    InfoSeek,
}

impl TaskKind {
    pub fn label(self) -> &'static str {
        match self {
            TaskKind::ImageNav => "imagenav",
            TaskKind::Ar => "ar",
            TaskKind::InfoSeek => "infoseek",
        }
    }

    /// Default `(M, L, commit_len)`.
    pub fn default_planner(self) -> (usize, usize, usize) {
        match self {
            TaskKind::ImageNav => (3, 5, 3),
            TaskKind::Ar => (2, 4, 4),
            TaskKind::InfoSeek => (3, 14, 14),
        }
    }

    pub fn default_budget(self) -> Budget {
        match self {
            TaskKind::ImageNav => Budget::Decisions(20),
            TaskKind::Ar => Budget::Decisions(10),
            TaskKind::InfoSeek => Budget::Actions(250),
        }
    }
}

impl std::str::FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "imagenav" => Ok(TaskKind::ImageNav),
            "ar" => Ok(TaskKind::Ar),
            "infoseek" => Ok(TaskKind::InfoSeek),
            _ => Err(format!("unknown task `{s}` (imagenav, ar, infoseek)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    /// The anchor itself.
    Is,
    /// The instance whose centroid is closest to the anchor's.
    NearestTo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    Color,
    Class,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub relation: Relation,
    pub anchor: u32,
    pub attribute: Attribute,
    /// Instance the question is about, resolved from relation and anchor.
    pub queried: u32,
}

impl Question {
    /// Resolves the queried instance.
    pub fn resolve(scene: &GridScene, relation: Relation, anchor: u32) -> Option<u32> {
        let a = scene.instance(anchor)?;
        match relation {
            Relation::Is => Some(anchor),
            Relation::NearestTo => scene
                .instances()
                .values()
                .filter(|i| i.id != anchor)
                .min_by_key(|i| {
                    let (dx, dy) = ((i.centroid.x - a.centroid.x) as i64, (i.centroid.y - a.centroid.y) as i64);
                    (dx * dx + dy * dy, i.id)
                })
                .map(|i| i.id),
        }
    }

    /// Ground-truth answer in `scene`.
    pub fn answer(&self, scene: &GridScene) -> Option<String> {
        let inst = scene.instance(self.queried)?;
        match self.attribute {
            Attribute::Color => inst.color().map(str::to_string),
            Attribute::Class => Some(inst.class_name().to_string()),
        }
    }

    pub fn text(&self, scene: &GridScene) -> String {
        let anchor = scene.instance(self.anchor).map_or("?", |i| i.display_name.as_str());
        let attr = match self.attribute {
            Attribute::Color => "color",
            Attribute::Class => "kind of object",
        };
        match self.relation {
            Relation::Is => format!("what {attr} is the {anchor}?"),
            Relation::NearestTo => format!("what {attr} is the object nearest to the {anchor}?"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Goal {
    #[serde(rename = "imagenav")]
    ImageNav { pose: Pose, view: Observation },
    Ar { target: u32, labels: Vec<String> },
    #[serde(rename = "infoseek")]
    InfoSeek { question: Question, answer: String },
}

impl Goal {
    pub fn task(&self) -> TaskKind {
        match self {
            Goal::ImageNav { .. } => TaskKind::ImageNav,
            Goal::Ar { .. } => TaskKind::Ar,
            Goal::InfoSeek { .. } => TaskKind::InfoSeek,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Budget {
    Decisions(usize),
    Actions(usize),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PlannerOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub commit_len: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proposal: Option<ProposalPolicy>,
}

impl PlannerOverrides {
    /// Fields set in `self` win over `base`.
    pub fn merged_over(&self, base: &PlannerOverrides) -> PlannerOverrides {
        PlannerOverrides {
            m: self.m.or(base.m),
            l: self.l.or(base.l),
            commit_len: self.commit_len.or(base.commit_len),
            proposal: self.proposal.or(base.proposal),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub id: u64,
    pub task: TaskKind,
    /// Scene file, relative to the suite file's directory.
    pub scene: String,
    pub start: Pose,
    pub goal: Goal,
    pub budget: Budget,
    /// Shortest achievable path length L* in meters.
    pub shortest_m: f64,
    pub seed: u64,
    #[serde(default)]
    pub planner: PlannerOverrides,
}

impl EpisodeSpec {
    /// Planner config: task defaults, then `extra`, then the spec's own
    /// overrides.
    pub fn planner_config(&self, extra: &PlannerOverrides, seed: u64) -> PlannerConfig {
        let (m, l, c) = self.task.default_planner();
        let o = self.planner.merged_over(extra);
        let l = o.l.unwrap_or(l);
        let default_commit = match self.task {
            TaskKind::ImageNav => l.saturating_sub(2).max(1),
            _ => l,
        };
        let commit = o.commit_len.unwrap_or(if o.l.is_some() { default_commit } else { c });
        PlannerConfig {
            m: o.m.unwrap_or(m),
            l,
            commit_len: commit,
            proposal: o.proposal.unwrap_or_default(),
            seed: crate::rng::mix(seed, &[crate::rng::domain::EVAL, self.seed]),
        }
    }

    /// Checks the spec against its scene.
    pub fn validate(&self, scene: &GridScene) -> Result<(), TaskError> {
        let bad = |msg: String| TaskError::InvalidSpec { id: self.id, msg };
        if self.goal.task() != self.task {
            return Err(bad(format!("goal payload is for {:?}", self.goal.task())));
        }
        match self.budget {
            Budget::Decisions(0) | Budget::Actions(0) => return Err(bad("budget must be positive".into())),
            _ => {}
        }
        if !(self.shortest_m >= 0.0 && self.shortest_m.is_finite()) {
            return Err(bad(format!("shortest length {} is not a finite non-negative number", self.shortest_m)));
        }
        self.planner_config(&PlannerOverrides::default(), 0).validate()?;
        let start = scene.cell_at(self.start.x, self.start.y);
        if !scene.is_free(start) {
            return Err(bad("start pose is not on a free cell".into()));
        }
        match &self.goal {
            Goal::ImageNav { pose, view } => {
                let g = scene.cell_at(pose.x, pose.y);
                if !scene.is_free(g) {
                    return Err(bad("goal pose is not on a free cell".into()));
                }
                if scene.geodesic_distance(start, g)?.is_none() {
                    return Err(bad("goal unreachable from start".into()));
                }
                if view.columns.is_empty() {
                    return Err(bad("empty goal view".into()));
                }
            }
            Goal::Ar { target, labels } => {
                let inst = scene.instance(*target).ok_or_else(|| bad(format!("target {target} not in scene")))?;
                if !labels.iter().any(|l| l == inst.class_name()) {
                    return Err(bad("label set lacks the target's class".into()));
                }
            }
            Goal::InfoSeek { question, answer } => {
                if Question::resolve(scene, question.relation, question.anchor) != Some(question.queried) {
                    return Err(bad("queried instance does not match relation and anchor".into()));
                }
                if question.answer(scene).as_deref() != Some(answer.as_str()) {
                    return Err(bad(format!("answer `{answer}` does not match the scene")));
                }
            }
        }
        Ok(())
    }
}

/// Free cells from whose centre some quantized heading gives a confident
/// view of `instance`.
pub fn affording_cells(scene: &GridScene, instance: u32) -> Result<Vec<Cell>, TaskError> {
    use rayon::prelude::*;
    let w = AFFORD_PANO_WIDTH;
    let per_turn = w / 16;
    let half = (CENTRAL_HALF_DEG / (360.0 / w as f64)).round() as usize;
    let cells = scene.free_cells();
    let flags: Vec<bool> = cells
        .par_iter()
        .map(|&c| {
            let pose = scene.pose_at(c, Default::default());
            let pano = render_panorama(scene, &pose, w)?;
            let hit: Vec<bool> = pano.columns.iter().map(|col| col.instance_id == instance).collect();
            if !hit.iter().any(|&h| h) {
                return Ok(false);
            }
            // heading k looks at pano columns centred on (w - k * per_turn) mod w
            Ok((0..16).any(|k| {
                let centre = (w - k * per_turn) % w;
                let n = (0..2 * half).filter(|&j| hit[(centre + w - half + j) % w]).count();
                n as f64 / (2 * half) as f64 >= STOP_THRESHOLD * V_FULL
            }))
        })
        .collect::<Result<_, RenderError>>()?;
    Ok(cells.into_iter().zip(flags).filter_map(|(c, f)| f.then_some(c)).collect())
}

/// Geodesic length from `start` to the nearest cell in `targets`.
pub fn shortest_to_any(scene: &GridScene, start: &Pose, targets: &[Cell]) -> Result<Option<f64>, TaskError> {
    let field = scene.distance_field(scene.cell_at(start.x, start.y))?;
    Ok(targets.iter().filter_map(|&c| field.get(c)).min_by(f64::total_cmp))
}

/// A loaded suite: specs plus their scenes keyed by relative path.
#[derive(Debug, Clone, Default)]
pub struct Suite {
    pub episodes: Vec<EpisodeSpec>,
    pub scenes: BTreeMap<String, Arc<GridScene>>,
}

impl Suite {
    pub fn scene(&self, spec: &EpisodeSpec) -> &Arc<GridScene> {
        &self.scenes[&spec.scene]
    }

    /// Reads a JSON-lines suite and its scenes, validating every spec.
    pub fn load(path: &Path) -> Result<Suite, TaskError> {
        let base = path.parent().unwrap_or(Path::new("."));
        let text = fs::read_to_string(path)?;
        let mut suite = Suite::default();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let spec: EpisodeSpec = serde_json::from_str(line)
                .map_err(|e| TaskError::Suite { path: path.into(), msg: format!("line {}: {e}", n + 1) })?;
            if !suite.scenes.contains_key(&spec.scene) {
                let scene_text = fs::read_to_string(base.join(&spec.scene))?;
                suite.scenes.insert(spec.scene.clone(), Arc::new(parse_scene_file(&scene_text)?));
            }
            spec.validate(&suite.scenes[&spec.scene])?;
            suite.episodes.push(spec);
        }
        Ok(suite)
    }

    /// Writes `suite.jsonl` and the scene files under `dir`.
    pub fn write(&self, dir: &Path, file_name: &str) -> Result<PathBuf, TaskError> {
        fs::create_dir_all(dir)?;
        for (rel, scene) in &self.scenes {
            let p = dir.join(rel);
            if let Some(parent) = p.parent() {
                fs::create_dir_all(parent)?;
            }
            fs::write(p, crate::scene::serialize_scene(scene)?)?;
        }
        let mut out = String::new();
        for e in &self.episodes {
            out.push_str(&serde_json::to_string(e).expect("specs serialize"));
            out.push('\n');
        }
        let path = dir.join(file_name);
        fs::write(&path, out)?;
        Ok(path)
    }
}
