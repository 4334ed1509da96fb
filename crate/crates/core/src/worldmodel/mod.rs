//! World models: given the current observation and an encoded plan, predict
//! the observations the plan would produce.
//!
//! Two families exist. [`SimulatorModel`]s (oracle and its noisy variants)
//! are handed the true scene and pose through [`GroundTruth`]; everything
//! else implements [`BlindModel`], whose methods have no way to receive the
//! scene at all.

mod countprior;
mod remote;
mod simulated;
pub mod wire;

use std::path::PathBuf;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action_api::{encode_control, ActionApiError, ActionVocab, ControlInput, ControlKind};
use crate::datagen::TrajectoryRecord;
use crate::render::{self, panorama_to_views, view_distance, Observation, RenderError, ViewKind, EGO_FOV_DEG};
use crate::scene::{ActionSequence, GridScene, Pose};

pub use countprior::{CountPrior, CountPriorStats};
pub use remote::{RemoteClient, RemoteModel};
pub use simulated::{SimulatorKind, SimulatorModel};

pub const DEFAULT_TIMEOUT_S: f64 = 30.0;
/// Mean within-frame depth variation tolerated before quality drops.
pub const TV_BUDGET_M: f64 = 0.25;
/// Excess variation at which the roughness term saturates.
pub const TV_NORM_M: f64 = 1.0;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model expects {expected:?} control, got {got:?}")]
    KindMismatch { expected: ControlKind, got: ControlKind },
    #[error("plan of {actions} actions cannot drive a horizon of {horizon}")]
    HorizonMismatch { actions: usize, horizon: usize },
    #[error("remote model timed out after {0:.1} s")]
    Timeout(f64),
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("protocol version {got}, expected {expected}")]
    Version { expected: u64, got: u64 },
    #[error("expected {expected} frames, got {got}")]
    FrameCount { expected: usize, got: usize },
    #[error("frame {index} has width {got}, expected {expected}")]
    FrameWidth { index: usize, expected: usize, got: usize },
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("remote error: {0}")]
    Remote(String),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error(transparent)]
    Control(#[from] ActionApiError),
    #[error(transparent)]
    Render(#[from] RenderError),
}

/// Which predictor to build.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Variant {
    Oracle,
    NoisyAction {
        p_flip: f64,
    },
    NoisyObs {
        sigma: f64,
        p_class: f64,
    },
    Frozen,
    /// Trained on the dataset directory at `dataset`; `limit` keeps only the
    /// first records.
    CountPrior {
        dataset: PathBuf,
        #[serde(default)]
        limit: Option<usize>,
    },
    Remote {
        command: Vec<String>,
        #[serde(default = "default_timeout")]
        timeout_s: f64,
    },
}

fn default_timeout() -> f64 {
    DEFAULT_TIMEOUT_S
}

fn default_width() -> usize {
    64
}

fn default_fov() -> f64 {
    EGO_FOV_DEG
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldModelConfig {
    #[serde(flatten)]
    pub variant: Variant,
    #[serde(default)]
    pub control_kind: ControlKind,
    #[serde(default = "default_view_kind")]
    pub observation_kind: ViewKind,
    #[serde(default = "default_width")]
    pub width: usize,
    #[serde(default = "default_fov")]
    pub fov_deg: f64,
    #[serde(default)]
    pub vocab: ActionVocab,
    #[serde(default)]
    pub seed: u64,
}

fn default_view_kind() -> ViewKind {
    ViewKind::Ego
}

impl WorldModelConfig {
    pub fn new(variant: Variant) -> Self {
        Self {
            variant,
            control_kind: ControlKind::Text,
            observation_kind: ViewKind::Ego,
            width: default_width(),
            fov_deg: EGO_FOV_DEG,
            vocab: ActionVocab::identity(),
            seed: 0,
        }
    }

    pub fn with_control(mut self, kind: ControlKind) -> Self {
        self.control_kind = kind;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        match &self.variant {
            Variant::NoisyAction { p_flip } if !prob(*p_flip) => Err(ModelError::Config(format!("p_flip {p_flip} not in [0, 1]"))),
            Variant::NoisyObs { sigma, p_class } if !(*sigma >= 0.0 && sigma.is_finite()) || !prob(*p_class) => {
                Err(ModelError::Config(format!("sigma {sigma} / p_class {p_class} out of range")))
            }
            Variant::Remote { command, .. } if command.is_empty() => Err(ModelError::Config("empty remote command".into())),
            _ if self.width == 0 => Err(ModelError::Config("width must be positive".into())),
            _ => Ok(()),
        }
    }
}

/// Static description of a model's interface.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInfo {
    pub name: String,
    pub control_kind: ControlKind,
    pub observation_kind: ViewKind,
    pub width: usize,
    pub fov_deg: f64,
    pub vocab: ActionVocab,
}

impl ModelInfo {
    /// Panoramic models carry an `@pano<width>` suffix.
    fn from_config(name: String, c: &WorldModelConfig) -> Self {
        let name = match c.observation_kind {
            ViewKind::Ego => name,
            ViewKind::Panorama => format!("{name}@pano{}", c.width),
        };
        Self {
            name,
            control_kind: c.control_kind,
            observation_kind: c.observation_kind,
            width: c.width,
            fov_deg: c.fov_deg,
            vocab: c.vocab.clone(),
        }
    }

    /// Renders the true view this model's frames should be compared with.
    pub fn render(&self, scene: &GridScene, pose: &Pose) -> Result<Observation, RenderError> {
        render::render(scene, pose, self.observation_kind, self.width, self.fov_deg)
    }

    pub fn encode(&self, plan: &ActionSequence, odometry: &Pose) -> Result<ControlInput, ActionApiError> {
        encode_control(plan, self.control_kind, odometry, &self.vocab)
    }
}

/// Predicted observations for one plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedRollout {
    pub frames: Vec<Observation>,
    pub horizon: usize,
    pub source: String,
    pub aligned_actions: ActionSequence,
}

/// Identifies one rollout for seeding: the same key always yields the same
/// noise draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub struct RolloutKey {
    pub seed: u64,
    pub episode: u64,
    pub step: u64,
    pub candidate: u64,
}

impl RolloutKey {
    /// Seed value sent over the wire (53 bits, exact in any JSON reader).
    pub fn wire_seed(&self) -> u64 {
        crate::rng::mix(self.seed, &[self.episode, self.step, self.candidate]) >> 11
    }
}

/// What any model may see when asked for a rollout.
#[derive(Debug, Clone, Copy)]
pub struct RolloutContext<'a> {
    pub observation: &'a Observation,
    /// Agent pose relative to the episode start position (absolute heading).
    pub odometry: Pose,
    pub key: RolloutKey,
}

/// The environment state, handed only to simulator-backed models.
#[derive(Debug, Clone, Copy)]
pub struct GroundTruth<'a> {
    pub scene: &'a GridScene,
    pub pose: Pose,
}

/// A model without access to the environment.
pub trait BlindModel: Send + Sync {
    fn info(&self) -> &ModelInfo;
    /// Fresh episode-local state.
    fn session(&self) -> Result<Box<dyn BlindSession + '_>, ModelError>;
}

pub trait BlindSession: Send + Sync {
    /// Feeds a real observation taken at `odometry`.
    fn observe(&mut self, obs: &Observation, odometry: &Pose);
    fn rollout(&self, ctx: &RolloutContext, control: &ControlInput, horizon: usize) -> Result<Vec<Observation>, ModelError>;
}

/// Repeats the current observation.
pub struct FrozenModel {
    info: ModelInfo,
}

impl FrozenModel {
    pub fn new(info: ModelInfo) -> Self {
        Self { info }
    }
}

struct FrozenSession;

impl BlindModel for FrozenModel {
    fn info(&self) -> &ModelInfo {
        &self.info
    }

    fn session(&self) -> Result<Box<dyn BlindSession + '_>, ModelError> {
        Ok(Box::new(FrozenSession))
    }
}

impl BlindSession for FrozenSession {
    fn observe(&mut self, _: &Observation, _: &Pose) {}

    fn rollout(&self, ctx: &RolloutContext, _: &ControlInput, horizon: usize) -> Result<Vec<Observation>, ModelError> {
        Ok(vec![ctx.observation.without_pose(); horizon])
    }
}

/// A constructed world model.
pub enum ModelHandle {
    Simulated(SimulatorModel),
    Blind(Box<dyn BlindModel>),
}

impl ModelHandle {
    /// Builds a model from config. Remote endpoints are spawned and
    /// handshaken here; CountPrior datasets are loaded and fitted here.
    pub fn build(config: &WorldModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let sim = |kind: SimulatorKind| {
            let name = kind.label();
            ModelHandle::Simulated(SimulatorModel::new(kind, ModelInfo::from_config(name, config), config.seed))
        };
        Ok(match &config.variant {
            Variant::Oracle => sim(SimulatorKind::Oracle),
            Variant::NoisyAction { p_flip } => sim(SimulatorKind::NoisyAction { p_flip: *p_flip }),
            Variant::NoisyObs { sigma, p_class } => sim(SimulatorKind::NoisyObs { sigma: *sigma, p_class: *p_class }),
            Variant::Frozen => ModelHandle::Blind(Box::new(FrozenModel::new(ModelInfo::from_config("frozen".into(), config)))),
            Variant::CountPrior { dataset, limit } => {
                let records = crate::datagen::read_dataset(dataset).map_err(|e| ModelError::Config(e.to_string()))?;
                let n = limit.unwrap_or(records.len()).min(records.len());
                let info = ModelInfo::from_config(format!("count_prior(n={n})"), config);
                ModelHandle::Blind(Box::new(CountPrior::train(info, &records[..n])))
            }
            Variant::Remote { command, timeout_s } => {
                let client = RemoteClient::spawn(command, std::time::Duration::from_secs_f64(*timeout_s))?;
                ModelHandle::Blind(Box::new(RemoteModel::new(client, config)))
            }
        })
    }

    /// CountPrior fitted on in-memory records.
    pub fn count_prior(config: &WorldModelConfig, records: &[TrajectoryRecord]) -> Result<Self, ModelError> {
        config.validate()?;
        let info = ModelInfo::from_config(format!("count_prior(n={})", records.len()), config);
        Ok(ModelHandle::Blind(Box::new(CountPrior::train(info, records))))
    }

    pub fn oracle() -> Self {
        Self::build(&WorldModelConfig::new(Variant::Oracle)).expect("oracle config is valid")
    }

    pub fn info(&self) -> &ModelInfo {
        match self {
            ModelHandle::Simulated(m) => m.info(),
            ModelHandle::Blind(m) => m.info(),
        }
    }

    pub fn name(&self) -> &str {
        &self.info().name
    }

    pub fn session(&self) -> Result<EpisodeModel<'_>, ModelError> {
        Ok(match self {
            ModelHandle::Simulated(m) => EpisodeModel::Simulated(m),
            ModelHandle::Blind(m) => EpisodeModel::Blind(m.info(), m.session()?),
        })
    }
}

/// A model bound to one episode.
pub enum EpisodeModel<'m> {
    Simulated(&'m SimulatorModel),
    Blind(&'m ModelInfo, Box<dyn BlindSession + 'm>),
}

impl EpisodeModel<'_> {
    pub fn info(&self) -> &ModelInfo {
        match self {
            EpisodeModel::Simulated(m) => m.info(),
            EpisodeModel::Blind(info, _) => info,
        }
    }

    pub fn observe(&mut self, obs: &Observation, odometry: &Pose) {
        if let EpisodeModel::Blind(_, s) = self {
            s.observe(obs, odometry);
        }
    }

    /// Predicts `horizon` frames for `control`. `truth` reaches simulator
    /// models only.
    pub fn rollout(
        &self,
        truth: &GroundTruth,
        ctx: &RolloutContext,
        control: &ControlInput,
        horizon: usize,
    ) -> Result<PredictedRollout, ModelError> {
        let info = self.info();
        if control.kind() != info.control_kind {
            return Err(ModelError::KindMismatch { expected: info.control_kind, got: control.kind() });
        }
        let actions = crate::action_api::decode_control(control, &info.vocab)?;
        if actions.len() != horizon {
            return Err(ModelError::HorizonMismatch { actions: actions.len(), horizon });
        }
        let frames = match self {
            EpisodeModel::Simulated(m) => m.simulate(truth, ctx, &actions)?,
            EpisodeModel::Blind(_, s) => s.rollout(ctx, control, horizon)?,
        };
        check_frames(info, &frames, horizon)?;
        Ok(PredictedRollout { frames, horizon, source: info.name.clone(), aligned_actions: actions })
    }
}

fn check_frames(info: &ModelInfo, frames: &[Observation], horizon: usize) -> Result<(), ModelError> {
    if frames.len() != horizon {
        return Err(ModelError::FrameCount { expected: horizon, got: frames.len() });
    }
    for (index, f) in frames.iter().enumerate() {
        if f.width() != info.width && info.observation_kind == ViewKind::Ego {
            return Err(ModelError::FrameWidth { index, expected: info.width, got: f.width() });
        }
    }
    Ok(())
}

/// Pose relative to `origin`'s position, keeping the absolute heading.
pub fn odometry(pose: &Pose, origin: &Pose) -> Pose {
    Pose::new(pose.x - origin.x, pose.y - origin.y, pose.heading)
}

/// Front 90° view of a frame: the frame itself for ego views, the first of
/// four slices for panoramas.
pub fn front_view(frame: &Observation) -> Result<Observation, RenderError> {
    match frame.kind {
        ViewKind::Ego => Ok(frame.clone()),
        ViewKind::Panorama => Ok(panorama_to_views(frame, 4)?.swap_remove(0)),
    }
}

/// Plausibility of a rollout, independent of any ground truth:
/// `1 - (roughness + flicker) / 2`. Roughness is the mean absolute depth
/// difference between adjacent columns beyond [`TV_BUDGET_M`], scaled by
/// [`TV_NORM_M`] and capped at 1; flicker is the fraction of columns whose
/// class changes between consecutive frames.
pub fn quality(rollout: &PredictedRollout) -> f64 {
    let frames = &rollout.frames;
    if frames.is_empty() {
        return 1.0;
    }
    let tv = frames
        .iter()
        .map(|f| {
            let cols = &f.columns;
            let mut pairs: Vec<(usize, usize)> = (1..cols.len()).map(|i| (i - 1, i)).collect();
            if f.kind == ViewKind::Panorama && cols.len() > 1 {
                pairs.push((cols.len() - 1, 0));
            }
            if pairs.is_empty() {
                return 0.0;
            }
            pairs.iter().map(|&(a, b)| (cols[a].depth_m - cols[b].depth_m).abs()).sum::<f64>() / pairs.len() as f64
        })
        .sum::<f64>()
        / frames.len() as f64;
    let rough = ((tv - TV_BUDGET_M).max(0.0) / TV_NORM_M).min(1.0);
    let flicker = if frames.len() < 2 {
        0.0
    } else {
        frames
            .windows(2)
            .map(|w| {
                let n = w[0].width().min(w[1].width()).max(1);
                w[0].columns.iter().zip(&w[1].columns).filter(|(a, b)| a.class_id != b.class_id).count() as f64 / n as f64
            })
            .sum::<f64>()
            / (frames.len() - 1) as f64
    };
    (1.0 - (rough + flicker) / 2.0).clamp(0.0, 1.0)
}

/// One controllability probe: the agent visits `history` (the last entry is
/// the current pose) and then imagines executing `plan`.
#[derive(Debug, Clone)]
pub struct EvalItem {
    pub scene: Arc<GridScene>,
    pub history: Vec<Pose>,
    pub plan: ActionSequence,
    pub id: u64,
}

/// What one probe rollout scored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeOutcome {
    /// Mean frame distance to the true observations along the plan.
    pub error: f64,
    /// [`quality`] of the predicted rollout.
    pub quality: f64,
}

/// Runs every probe item through `model`.
pub fn probe(model: &ModelHandle, items: &[EvalItem], seed: u64) -> Result<Vec<ProbeOutcome>, ModelError> {
    items
        .par_iter()
        .map(|item| {
            let info = model.info();
            let origin = item.history[0];
            let mut session = model.session()?;
            let mut current = None;
            for pose in &item.history {
                let obs = info.render(&item.scene, pose)?;
                session.observe(&obs, &odometry(pose, &origin));
                current = Some(obs);
            }
            let obs = current.ok_or_else(|| ModelError::Config("empty history".into()))?;
            let pose = *item.history.last().expect("non-empty history");
            let odo = odometry(&pose, &origin);
            let control = info.encode(&item.plan, &odo)?;
            let ctx = RolloutContext { observation: &obs, odometry: odo, key: RolloutKey { seed, episode: item.id, step: 0, candidate: 0 } };
            let truth = GroundTruth { scene: &item.scene, pose };
            let predicted = session.rollout(&truth, &ctx, &control, item.plan.len())?;
            let real = simulated::true_frames(info, &item.scene, &pose, item.plan.as_slice())?;
            let dists = predicted
                .frames
                .iter()
                .zip(&real)
                .map(|(p, r)| view_distance(p, r))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(ProbeOutcome { error: dists.iter().sum::<f64>() / dists.len() as f64, quality: quality(&predicted) })
        })
        .collect()
}

/// Per-item mean frame distance between the model's rollout and the true
/// observations along the plan.
pub fn rollout_errors(model: &ModelHandle, items: &[EvalItem], seed: u64) -> Result<Vec<f64>, ModelError> {
    Ok(probe(model, items, seed)?.into_iter().map(|o| o.error).collect())
}

/// `1 - mean view distance` between predicted and true rollouts.
pub fn controllability(model: &ModelHandle, items: &[EvalItem], seed: u64) -> Result<f64, ModelError> {
    if items.is_empty() {
        return Err(ModelError::Config("empty evaluation set".into()));
    }
    let errs = rollout_errors(model, items, seed)?;
    Ok(1.0 - errs.iter().sum::<f64>() / errs.len() as f64)
}
