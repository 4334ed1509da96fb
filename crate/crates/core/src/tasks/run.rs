use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Attribute, Budget, EpisodeSpec, Goal, PlannerOverrides, TaskError, TaskKind, SUCCESS_RADIUS_M, V_FULL};
use crate::planner::{plan_step, visibility, Decision, Objective, StepInput, CENTRAL_HALF_DEG};
use crate::render::{render, wrap180, Observation, ViewKind, EGO_FOV_DEG};
use crate::scene::{apply_action, ActionPrimitive, GridScene, Pose};
use crate::scenegen::class_name;
use crate::worldmodel::{odometry, GroundTruth, ModelHandle};

/// Width of the agent's own ego camera.
pub const AGENT_WIDTH: usize = 64;

/// One decision step as executed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: usize,
    pub decision: Decision,
    pub scores: Vec<Option<f64>>,
    pub winner: Option<usize>,
    pub inferences: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback: Option<String>,
    pub executed: Vec<ActionPrimitive>,
    /// Pose after each executed action.
    pub poses: Vec<Pose>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub id: u64,
    pub task: TaskKind,
    pub model: String,
    pub seed: u64,
    pub m: usize,
    pub success: bool,
    pub answer: Option<String>,
    /// σ in {1, 5}; InfoSeek only.
    pub answer_score: Option<u8>,
    pub steps_executed: usize,
    pub decision_steps: usize,
    pub path_length_m: f64,
    pub shortest_m: f64,
    pub wm_inferences: usize,
    pub fallbacks: usize,
    pub trace: Vec<TraceStep>,
    /// Set when the episode aborted; the other fields then hold defaults.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl EpisodeResult {
    /// Record of an episode that could not run to completion.
    pub fn failed(spec: &EpisodeSpec, model: &str, seed: u64, m: usize, error: String) -> Self {
        EpisodeResult {
            id: spec.id,
            task: spec.task,
            model: model.to_string(),
            seed,
            m,
            success: false,
            answer: None,
            answer_score: (spec.task == TaskKind::InfoSeek).then_some(1),
            steps_executed: 0,
            decision_steps: 0,
            path_length_m: 0.0,
            shortest_m: spec.shortest_m,
            wm_inferences: 0,
            fallbacks: 0,
            trace: Vec::new(),
            error: Some(error),
        }
    }
}

fn majority_class<'a>(cols: impl Iterator<Item = &'a crate::render::Column>) -> Option<u16> {
    let mut counts: BTreeMap<u16, usize> = BTreeMap::new();
    for c in cols {
        *counts.entry(c.class_id).or_default() += 1;
    }
    counts.into_iter().max_by_key(|&(id, n)| (n, std::cmp::Reverse(id))).map(|(id, _)| id)
}

/// Best view of `target`: `(visibility, index)` of the first maximum.
fn best_view(views: &[&Observation], target: u32) -> (f64, usize) {
    views
        .iter()
        .enumerate()
        .map(|(i, v)| (visibility(v, target), i))
        .fold((0.0, 0), |best, cur| if cur.0 > best.0 { cur } else { best })
}

/// Recognition answer: the majority class of the target's columns in the
/// best view, or (when unseen) the class of the instance nearest to
/// `last_bearing_deg` in the first view. Confidence is `min(1, v / V_FULL)`.
pub fn ar_answer(views: &[&Observation], target: u32, labels: &[String], last_bearing_deg: Option<f64>) -> (String, f64) {
    let (v, i) = best_view(views, target);
    let confidence = (v / V_FULL).min(1.0);
    let label = if v > 0.0 {
        majority_class(views[i].central_columns(CENTRAL_HALF_DEG).filter(|c| c.instance_id == target)).map(class_name)
    } else {
        views.first().and_then(|view| {
            let seen: Vec<(usize, &crate::render::Column)> =
                view.columns.iter().enumerate().filter(|(_, c)| c.instance_id != 0).collect();
            match last_bearing_deg {
                Some(b) => seen
                    .iter()
                    .min_by(|a, c| {
                        let da = wrap180(view.column_bearing(a.0) - b).abs();
                        let dc = wrap180(view.column_bearing(c.0) - b).abs();
                        da.total_cmp(&dc)
                    })
                    .map(|(_, c)| class_name(c.class_id)),
                None => majority_class(seen.iter().map(|(_, c)| *c)).map(class_name),
            }
        })
    };
    let label = label.filter(|l| labels.contains(l)).unwrap_or_else(|| labels.first().cloned().unwrap_or_default());
    (label, confidence)
}

/// InfoSeek answer: the queried attribute read from the best view of the
/// queried instance, with the same confidence rule as [`ar_answer`].
pub fn infoseek_answer(views: &[&Observation], scene: &GridScene, queried: u32, attribute: Attribute) -> Option<(String, f64)> {
    let (v, i) = best_view(views, queried);
    if v == 0.0 {
        return None;
    }
    let confidence = (v / V_FULL).min(1.0);
    let answer = match attribute {
        Attribute::Class => {
            majority_class(views[i].central_columns(CENTRAL_HALF_DEG).filter(|c| c.instance_id == queried)).map(class_name)?
        }
        Attribute::Color => scene.instance(queried)?.color()?.to_string(),
    };
    Some((answer, confidence))
}

/// Absolute bearing (degrees) of the centre of `target` in `view`.
fn target_bearing(view: &Observation, heading_deg: f64, target: u32) -> Option<f64> {
    let idx: Vec<usize> = (0..view.width()).filter(|&i| view.columns[i].instance_id == target).collect();
    if idx.is_empty() {
        return None;
    }
    let (sx, sy) = idx.iter().fold((0.0, 0.0), |(x, y), &i| {
        let b = view.column_bearing(i).to_radians();
        (x + b.cos(), y + b.sin())
    });
    Some(heading_deg + sy.atan2(sx).to_degrees())
}

fn agent_view(scene: &GridScene, pose: &Pose) -> Result<Observation, TaskError> {
    Ok(render(scene, pose, ViewKind::Ego, AGENT_WIDTH, EGO_FOV_DEG)?)
}

/// Runs one episode of any task.
pub fn run_episode(
    scene: &GridScene,
    spec: &EpisodeSpec,
    model: Option<&ModelHandle>,
    overrides: &PlannerOverrides,
    seed: u64,
) -> Result<EpisodeResult, TaskError> {
    spec.validate(scene)?;
    let cfg = spec.planner_config(overrides, seed);
    let mut session = model.map(ModelHandle::session).transpose()?;
    let origin = spec.start;
    let mut pose = spec.start;
    let mut obs = agent_view(scene, &pose)?;
    let model_view = |pose: &Pose, obs: &Observation| -> Result<Observation, TaskError> {
        match model {
            Some(m) if m.info().observation_kind != ViewKind::Ego || m.info().width != AGENT_WIDTH => {
                Ok(m.info().render(scene, pose)?)
            }
            _ => Ok(obs.clone()),
        }
    };
    let mut model_obs = model_view(&pose, &obs)?;
    if let Some(s) = session.as_mut() {
        s.observe(&model_obs, &odometry(&pose, &origin));
    }

    // goal image sized to the model's front view
    let goal_view = match (&spec.goal, model) {
        (Goal::ImageNav { pose: g, view }, Some(m)) => {
            let w = match m.info().observation_kind {
                ViewKind::Ego => m.info().width,
                ViewKind::Panorama => m.info().width / 4,
            };
            if w == view.width() {
                Some(view.clone())
            } else {
                Some(render(scene, g, ViewKind::Ego, w, EGO_FOV_DEG)?)
            }
        }
        _ => None,
    };
    let (target, labels) = match &spec.goal {
        Goal::Ar { target, labels } => (Some(*target), labels.clone()),
        Goal::InfoSeek { question, .. } => (Some(question.queried), Vec::new()),
        Goal::ImageNav { .. } => (None, Vec::new()),
    };
    let reached = |p: &Pose| match &spec.goal {
        Goal::ImageNav { pose: g, .. } => p.distance_to(g) <= SUCCESS_RADIUS_M,
        _ => false,
    };

    let mut history: Vec<ActionPrimitive> = Vec::new();
    let mut trace = Vec::new();
    let (mut steps, mut path, mut inferences, mut fallbacks) = (0usize, 0.0f64, 0usize, 0usize);
    let mut success = reached(&pose);
    let mut answer: Option<String> = None;
    let mut last_bearing = target.and_then(|t| target_bearing(&obs, pose.heading.degrees(), t));
    let mut best_guess: Option<(String, f64)> = None;
    let note_real = |obs: &Observation, best: &mut Option<(String, f64)>, last: Option<f64>| {
        let a = match &spec.goal {
            Goal::Ar { target, labels } => Some(ar_answer(&[obs], *target, labels, last)),
            Goal::InfoSeek { question, .. } => infoseek_answer(&[obs], scene, question.queried, question.attribute),
            Goal::ImageNav { .. } => None,
        };
        if let Some(a) = a {
            if best.as_ref().is_none_or(|b| a.1 > b.1) {
                *best = Some(a);
            }
        }
    };
    note_real(&obs, &mut best_guess, last_bearing);

    let budget_left = |decisions: usize, steps: usize| match spec.budget {
        Budget::Decisions(k) => decisions < k,
        Budget::Actions(n) => steps < n,
    };
    let mut decisions = 0;
    while !success && answer.is_none() && budget_left(decisions, steps) {
        let objective = match (&spec.goal, &goal_view) {
            (Goal::ImageNav { .. }, Some(v)) => Objective::ImageNav { goal_view: v },
            (Goal::ImageNav { view, .. }, None) => Objective::ImageNav { goal_view: view },
            (Goal::Ar { target, .. }, _) => Objective::Visibility { instance: *target, final_only: false },
            (Goal::InfoSeek { question, .. }, _) => Objective::Visibility { instance: question.queried, final_only: true },
        };
        let lb = last_bearing;
        let ar_fn = |views: &[&Observation]| ar_answer(views, target.unwrap_or(0), &labels, lb);
        let is_fn = |views: &[&Observation]| match &spec.goal {
            Goal::InfoSeek { question, .. } => {
                infoseek_answer(views, scene, question.queried, question.attribute).unwrap_or_default()
            }
            _ => (String::new(), 0.0),
        };
        let answerer: Option<&crate::planner::Answerer> = match spec.task {
            TaskKind::Ar => Some(&ar_fn),
            TaskKind::InfoSeek => Some(&is_fn),
            TaskKind::ImageNav => None,
        };
        let input = StepInput {
            obs: &obs,
            model_obs: &model_obs,
            objective,
            answerer,
            history: &history,
            goal_bearing_deg: last_bearing,
            odometry: odometry(&pose, &origin),
            truth: GroundTruth { scene, pose },
            episode: spec.id,
            step: decisions as u64,
        };
        let out = plan_step(&cfg, &input, session.as_ref())?;
        if let Some(e) = out.evaluation.clone() {
            if best_guess.as_ref().is_none_or(|b| e.1 > b.1) {
                best_guess = Some(e);
            }
        }
        decisions += 1;
        inferences += out.inferences;
        fallbacks += out.fallback.is_some() as usize;
        let mut ts = TraceStep {
            step: decisions - 1,
            decision: out.decision.clone(),
            scores: out.candidates.iter().map(|c| c.score).collect(),
            winner: out.winner,
            inferences: out.inferences,
            fallback: out.fallback,
            executed: Vec::new(),
            poses: Vec::new(),
        };
        match out.decision {
            Decision::Answer { label, .. } => answer = Some(label),
            Decision::Plan { seq } => {
                for &a in seq.iter() {
                    if !budget_left(0, steps) && matches!(spec.budget, Budget::Actions(_)) {
                        break;
                    }
                    let next = apply_action(scene, &pose, a);
                    path += next.distance_to(&pose);
                    pose = next;
                    steps += 1;
                    history.push(a);
                    ts.executed.push(a);
                    ts.poses.push(pose);
                    obs = agent_view(scene, &pose)?;
                    model_obs = model_view(&pose, &obs)?;
                    if let Some(s) = session.as_mut() {
                        s.observe(&model_obs, &odometry(&pose, &origin));
                    }
                    if let Some(t) = target {
                        if let Some(b) = target_bearing(&obs, pose.heading.degrees(), t) {
                            last_bearing = Some(b);
                        }
                    }
                    note_real(&obs, &mut best_guess, last_bearing);
                    if reached(&pose) {
                        success = true;
                        break;
                    }
                }
            }
        }
        trace.push(ts);
    }

    let mut answer_score = None;
    match &spec.goal {
        Goal::Ar { target, .. } => {
            // forced guess at budget: most confident evaluation so far
            let label = answer.clone().or_else(|| best_guess.map(|b| b.0));
            success = label.as_deref() == scene.instance(*target).map(|i| i.class_name());
            answer = label;
        }
        Goal::InfoSeek { answer: truth, .. } => {
            if answer.is_none() {
                answer = best_guess.filter(|b| b.1 > 0.0).map(|b| b.0);
            }
            success = answer.as_deref() == Some(truth.as_str());
            answer_score = Some(if success { 5 } else { 1 });
        }
        Goal::ImageNav { .. } => {}
    }
    Ok(EpisodeResult {
        id: spec.id,
        task: spec.task,
        model: model.map_or_else(|| "none".to_string(), |m| m.name().to_string()),
        seed,
        m: cfg.m,
        success,
        answer,
        answer_score,
        steps_executed: steps,
        decision_steps: decisions,
        path_length_m: path,
        shortest_m: spec.shortest_m,
        wm_inferences: inferences,
        fallbacks,
        trace,
        error: None,
    })
}

fn expect_task(spec: &EpisodeSpec, kind: TaskKind) -> Result<(), TaskError> {
    if spec.task != kind {
        return Err(TaskError::WrongTask { expected: kind, got: spec.task });
    }
    Ok(())
}

pub fn run_imagenav(scene: &GridScene, spec: &EpisodeSpec, model: Option<&ModelHandle>, seed: u64) -> Result<EpisodeResult, TaskError> {
    expect_task(spec, TaskKind::ImageNav)?;
    run_episode(scene, spec, model, &PlannerOverrides::default(), seed)
}

pub fn run_ar(scene: &GridScene, spec: &EpisodeSpec, model: Option<&ModelHandle>, seed: u64) -> Result<EpisodeResult, TaskError> {
    expect_task(spec, TaskKind::Ar)?;
    run_episode(scene, spec, model, &PlannerOverrides::default(), seed)
}

pub fn run_infoseek(scene: &GridScene, spec: &EpisodeSpec, model: Option<&ModelHandle>, seed: u64) -> Result<EpisodeResult, TaskError> {
    expect_task(spec, TaskKind::InfoSeek)?;
    run_episode(scene, spec, model, &PlannerOverrides::default(), seed)
}

/// Replays a result's trace against the scene: budgets, poses, path length
/// and counters must all agree.
pub fn validate_trace(scene: &GridScene, spec: &EpisodeSpec, r: &EpisodeResult) -> Result<(), TaskError> {
    let fail = |m: String| Err(TaskError::Trace(format!("episode {}: {m}", r.id)));
    let mut pose = spec.start;
    let mut path = 0.0;
    let mut steps = 0;
    for ts in &r.trace {
        if ts.executed.len() != ts.poses.len() {
            return fail(format!("step {}: {} actions but {} poses", ts.step, ts.executed.len(), ts.poses.len()));
        }
        for (a, p) in ts.executed.iter().zip(&ts.poses) {
            let next = apply_action(scene, &pose, *a);
            if next != *p {
                return fail(format!("step {}: replayed pose {next:?} differs from recorded {p:?}", ts.step));
            }
            path += next.distance_to(&pose);
            pose = next;
            steps += 1;
        }
    }
    if steps != r.steps_executed {
        return fail(format!("{} replayed actions, {} reported", steps, r.steps_executed));
    }
    if (path - r.path_length_m).abs() > 1e-9 {
        return fail(format!("replayed path {path} m, reported {} m", r.path_length_m));
    }
    if r.trace.len() != r.decision_steps {
        return fail("decision count mismatch".into());
    }
    match spec.budget {
        Budget::Decisions(k) if r.decision_steps > k => return fail(format!("{} decisions exceed {k}", r.decision_steps)),
        Budget::Actions(n) if r.steps_executed > n => return fail(format!("{} actions exceed {n}", r.steps_executed)),
        _ => {}
    }
    if r.trace.iter().map(|t| t.inferences).sum::<usize>() != r.wm_inferences {
        return fail("inference count mismatch".into());
    }
    if r.trace.iter().filter(|t| t.fallback.is_some()).count() != r.fallbacks {
        return fail("fallback count mismatch".into());
    }
    if (r.task == TaskKind::InfoSeek) != r.answer_score.is_some() {
        return fail("answer score present iff InfoSeek".into());
    }
    Ok(())
}
