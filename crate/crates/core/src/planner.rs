//! Proposal, simulation and revision: sample candidate plans, imagine each
//! with a world model, score the imagined frames and commit to the best.

use rand::seq::IndexedRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::render::{heading_windows, view_distance, Observation, RenderError, ViewKind};
use crate::rng::{domain, stream};
use crate::scene::{ActionPrimitive, ActionSequence, Heading, Pose};
use crate::worldmodel::{EpisodeModel, GroundTruth, ModelError, PredictedRollout, RolloutContext, RolloutKey};

/// Longest run of same-direction turns a proposal may contain.
pub const MAX_CONSECUTIVE_TURNS: usize = 4;
/// Answer confidence at which an episode stops.
pub const STOP_THRESHOLD: f64 = 0.95;
/// Per-frame penalty favouring early goal attainment.
pub const EARLY_ARRIVAL_BONUS: f64 = 0.01;
/// Half-width of the field used for target visibility.
pub const CENTRAL_HALF_DEG: f64 = 45.0;
const RESAMPLE_ATTEMPTS: usize = 10;

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error("invalid planner config: {0}")]
    Config(String),
    #[error("candidate {0} has no rollout")]
    MissingRollout(usize),
    #[error("no candidates to select from")]
    Empty,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Render(#[from] RenderError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProposalPolicy {
    #[default]
    Heuristic,
    GoalDirected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    pub m: usize,
    pub l: usize,
    pub commit_len: usize,
    #[serde(default)]
    pub proposal: ProposalPolicy,
    #[serde(default)]
    pub seed: u64,
}

impl PlannerConfig {
    pub fn new(m: usize, l: usize, commit_len: usize) -> Self {
        Self { m, l, commit_len, proposal: ProposalPolicy::Heuristic, seed: 0 }
    }

    pub fn validate(&self) -> Result<(), PlannerError> {
        if self.m == 0 {
            return Err(PlannerError::Config("M must be at least 1".into()));
        }
        if self.commit_len == 0 || self.commit_len > self.l {
            return Err(PlannerError::Config(format!("commit_len {} outside 1..={}", self.commit_len, self.l)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "snake_case")]
pub enum Decision {
    Plan { seq: ActionSequence },
    Answer { label: String, confidence: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub seq: ActionSequence,
    pub rollout: Option<PredictedRollout>,
    pub score: Option<f64>,
}

/// Actions the heuristic may emit after `history`.
pub fn admissible(history: &[ActionPrimitive]) -> Vec<ActionPrimitive> {
    let last = history.last().copied();
    let banned_inverse = last.and_then(ActionPrimitive::inverse);
    let banned_run = last.filter(|a| {
        a.is_turn()
            && history.len() >= MAX_CONSECUTIVE_TURNS
            && history[history.len() - MAX_CONSECUTIVE_TURNS..].iter().all(|h| h == a)
    });
    ActionPrimitive::MOTION
        .into_iter()
        .filter(|a| Some(*a) != banned_inverse && Some(*a) != banned_run)
        .collect()
}

/// Uniform draw over [`admissible`] actions.
pub fn heuristic_next<R: Rng + ?Sized>(history: &[ActionPrimitive], rng: &mut R) -> ActionPrimitive {
    *admissible(history).choose(rng).expect("Forward is always admissible")
}

/// True when every action of `seq` is admissible given what precedes it.
pub fn satisfies_rules(history: &[ActionPrimitive], seq: &[ActionPrimitive]) -> bool {
    let mut h = history.to_vec();
    for &a in seq {
        if !admissible(&h).contains(&a) {
            return false;
        }
        h.push(a);
    }
    true
}

fn heuristic_sequence<R: Rng + ?Sized>(history: &[ActionPrimitive], l: usize, rng: &mut R) -> Vec<ActionPrimitive> {
    let mut h = history.to_vec();
    for _ in 0..l {
        let a = heuristic_next(&h, rng);
        h.push(a);
    }
    h.split_off(history.len())
}

/// Turns toward `bearing_deg` (at most the consecutive-turn cap), then forward.
fn greedy_sequence(history: &[ActionPrimitive], heading: Heading, bearing_deg: f64, l: usize) -> Vec<ActionPrimitive> {
    let turns = heading.turns_to(Heading::nearest(bearing_deg.to_radians()));
    let (turn, n) = if turns >= 0 {
        (ActionPrimitive::TurnLeft, turns as usize)
    } else {
        (ActionPrimitive::TurnRight, (-turns) as usize)
    };
    let mut seq = vec![turn; n.min(MAX_CONSECUTIVE_TURNS).min(l)];
    seq.resize(l, ActionPrimitive::Forward);
    if satisfies_rules(history, &seq) {
        seq
    } else {
        Vec::new()
    }
}

/// What the proposal policy may look at.
#[derive(Debug, Clone, Copy)]
pub struct ProposalContext<'a> {
    pub history: &'a [ActionPrimitive],
    pub heading: Heading,
    /// Absolute bearing (degrees) of the goal's last-known direction.
    pub goal_bearing_deg: Option<f64>,
}

/// `m` plans of length `l`, pairwise distinct when the admissible space
/// allows it.
pub fn propose<R: Rng + ?Sized>(
    policy: ProposalPolicy,
    ctx: &ProposalContext,
    m: usize,
    l: usize,
    rng: &mut R,
) -> Vec<ActionSequence> {
    let mut out: Vec<Vec<ActionPrimitive>> = Vec::with_capacity(m);
    if let (ProposalPolicy::GoalDirected, Some(b)) = (policy, ctx.goal_bearing_deg) {
        let g = greedy_sequence(ctx.history, ctx.heading, b, l);
        if !g.is_empty() {
            out.push(g);
        }
    }
    while out.len() < m {
        let mut seq = heuristic_sequence(ctx.history, l, rng);
        for _ in 0..RESAMPLE_ATTEMPTS {
            if !out.contains(&seq) {
                break;
            }
            seq = heuristic_sequence(ctx.history, l, rng);
        }
        out.push(seq);
    }
    out.truncate(m);
    out.into_iter().map(|s| ActionSequence::new(s).expect("proposals contain only plannable actions")).collect()
}

/// Fraction of central-field columns showing `instance`.
pub fn visibility(view: &Observation, instance: u32) -> f64 {
    let (hit, total) = view
        .central_columns(CENTRAL_HALF_DEG)
        .fold((0usize, 0usize), |(h, t), c| (h + (c.instance_id == instance) as usize, t + 1));
    if total == 0 {
        0.0
    } else {
        hit as f64 / total as f64
    }
}

/// Perspective views an agent can take from a frame: the frame itself, or
/// the sixteen quarter-panorama heading windows of a panorama.
pub fn perspective_views(frame: &Observation) -> Result<Vec<Observation>, PlannerError> {
    Ok(match frame.kind {
        ViewKind::Ego => vec![frame.clone()],
        ViewKind::Panorama => heading_windows(frame, frame.width() / 4)?,
    })
}

/// Task-specific scoring target.
#[derive(Debug, Clone, Copy)]
pub enum Objective<'a> {
    /// Similarity to a goal image; panoramas match at their best heading.
    ImageNav { goal_view: &'a Observation },
    /// Visibility of an instance; `final_only` scores the last frame alone.
    Visibility { instance: u32, final_only: bool },
}

/// Scores a rollout against `objective`.
pub fn score(rollout: &PredictedRollout, objective: &Objective) -> Result<f64, PlannerError> {
    match *objective {
        Objective::ImageNav { goal_view } => {
            let mut best = f64::NEG_INFINITY;
            for (i, f) in rollout.frames.iter().enumerate() {
                let d = match f.kind {
                    ViewKind::Ego => view_distance(f, goal_view)?,
                    ViewKind::Panorama => {
                        let mut d = f64::INFINITY;
                        for w in heading_windows(f, goal_view.width())? {
                            d = d.min(view_distance(&w, goal_view)?);
                        }
                        d
                    }
                };
                best = best.max(1.0 - d - EARLY_ARRIVAL_BONUS * i as f64);
            }
            Ok(if best.is_finite() { best } else { 0.0 })
        }
        Objective::Visibility { instance, final_only } => {
            let frames: &[Observation] = if final_only {
                rollout.frames.last().map(std::slice::from_ref).unwrap_or(&[])
            } else {
                &rollout.frames
            };
            let mut best = 0.0f64;
            for f in frames {
                for v in perspective_views(f)? {
                    best = best.max(visibility(&v, instance));
                }
            }
            Ok(best)
        }
    }
}

/// Index of the highest score; ties go to the earliest.
pub fn select(scores: &[f64]) -> Result<usize, PlannerError> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if best.is_none_or(|b| s > scores[b]) {
            best = Some(i);
        }
    }
    best.ok_or(PlannerError::Empty)
}

/// Answers from a set of views: `(label, confidence)`.
pub type Answerer<'a> = dyn Fn(&[&Observation]) -> (String, f64) + Sync + 'a;

/// Everything one decision step needs.
pub struct StepInput<'a> {
    /// Agent's current ego view.
    pub obs: &'a Observation,
    /// Current observation in the model's format.
    pub model_obs: &'a Observation,
    pub objective: Objective<'a>,
    pub answerer: Option<&'a Answerer<'a>>,
    pub history: &'a [ActionPrimitive],
    pub goal_bearing_deg: Option<f64>,
    pub odometry: Pose,
    pub truth: GroundTruth<'a>,
    pub episode: u64,
    pub step: u64,
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub decision: Decision,
    pub candidates: Vec<Candidate>,
    pub winner: Option<usize>,
    pub inferences: usize,
    /// Model failure that forced the no-model fallback.
    pub fallback: Option<String>,
    /// Last answerer evaluation, confident or not.
    pub evaluation: Option<(String, f64)>,
}

fn confident(answer: &(String, f64)) -> Option<Decision> {
    (answer.1 >= STOP_THRESHOLD).then(|| Decision::Answer { label: answer.0.clone(), confidence: answer.1 })
}

/// One closed-loop decision.
pub fn plan_step(cfg: &PlannerConfig, input: &StepInput, model: Option<&EpisodeModel>) -> Result<StepOutcome, PlannerError> {
    cfg.validate()?;
    let mut evaluation = input.answerer.map(|ans| ans(&[input.obs]));
    if let Some(decision) = evaluation.as_ref().and_then(confident) {
        return Ok(StepOutcome { decision, candidates: Vec::new(), winner: None, inferences: 0, fallback: None, evaluation });
    }
    let mut rng = stream(cfg.seed, &[domain::PROPOSAL, input.episode, input.step]);
    let heading = input.truth.pose.heading;
    let pctx = ProposalContext { history: input.history, heading, goal_bearing_deg: input.goal_bearing_deg };
    let seqs = propose(cfg.proposal, &pctx, cfg.m, cfg.l, &mut rng);
    let unscored = |seqs: Vec<ActionSequence>| -> Vec<Candidate> {
        seqs.into_iter().map(|seq| Candidate { seq, rollout: None, score: None }).collect()
    };
    let baseline = |candidates: Vec<Candidate>, inferences, fallback, evaluation| StepOutcome {
        decision: Decision::Plan { seq: candidates[0].seq.truncated(cfg.commit_len) },
        candidates,
        winner: Some(0),
        inferences,
        fallback,
        evaluation,
    };
    let Some(model) = model else {
        return Ok(baseline(unscored(seqs), 0, None, evaluation));
    };

    let info = model.info();
    let rollouts: Vec<Result<PredictedRollout, ModelError>> = seqs
        .par_iter()
        .enumerate()
        .map(|(k, seq)| {
            let control = info.encode(seq, &input.odometry)?;
            let ctx = RolloutContext {
                observation: input.model_obs,
                odometry: input.odometry,
                key: RolloutKey { seed: cfg.seed, episode: input.episode, step: input.step, candidate: k as u64 },
            };
            model.rollout(&input.truth, &ctx, &control, seq.len())
        })
        .collect();
    let inferences = rollouts.len();
    if let Some(e) = rollouts.iter().find_map(|r| r.as_ref().err()) {
        if !matches!(model, EpisodeModel::Blind(..)) {
            return Err(rollouts.into_iter().find_map(Result::err).expect("an error exists").into());
        }
        log::warn!("world model failed, falling back: {e}");
        let msg = e.to_string();
        return Ok(baseline(unscored(seqs), inferences, Some(msg), evaluation));
    }
    let mut candidates: Vec<Candidate> = seqs
        .into_iter()
        .zip(rollouts)
        .map(|(seq, r)| Candidate { seq, rollout: r.ok(), score: None })
        .collect();
    let mut scores = Vec::with_capacity(candidates.len());
    for (i, c) in candidates.iter_mut().enumerate() {
        let s = score(c.rollout.as_ref().ok_or(PlannerError::MissingRollout(i))?, &input.objective)?;
        c.score = Some(s);
        scores.push(s);
    }
    let winner = select(&scores)?;
    if let Some(ans) = input.answerer {
        let frames = &candidates[winner].rollout.as_ref().expect("scored candidates have rollouts").frames;
        let mut expanded = Vec::new();
        for f in frames {
            expanded.extend(perspective_views(f)?);
        }
        let mut views: Vec<&Observation> = vec![input.obs];
        views.extend(expanded.iter());
        let e = ans(&views);
        if let Some(decision) = confident(&e) {
            return Ok(StepOutcome { decision, candidates, winner: Some(winner), inferences, fallback: None, evaluation: Some(e) });
        }
        evaluation = Some(e);
    }
    let decision = Decision::Plan { seq: candidates[winner].seq.truncated(cfg.commit_len) };
    Ok(StepOutcome { decision, candidates, winner: Some(winner), inferences, fallback: None, evaluation })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::Column;
    use ActionPrimitive::*;

    #[test]
    fn inverse_and_run_rules() {
        assert_eq!(admissible(&[]), vec![Forward, TurnLeft, TurnRight]);
        assert_eq!(admissible(&[TurnLeft]), vec![Forward, TurnLeft]);
        assert_eq!(admissible(&[TurnLeft; 4]), vec![Forward]);
        assert_eq!(admissible(&[Forward, TurnRight, TurnRight, TurnRight]), vec![Forward, TurnRight]);
    }

    #[test]
    fn select_ties_to_first() {
        assert_eq!(select(&[0.2, 0.9, 0.9]).unwrap(), 1);
        assert_eq!(select(&[0.5]).unwrap(), 0);
        assert!(matches!(select(&[]), Err(PlannerError::Empty)));
    }

    #[test]
    fn visibility_hand_count() {
        let mut cols = vec![Column::EMPTY; 64];
        for c in cols.iter_mut().take(8) {
            c.instance_id = 3;
        }
        let f0 = Observation { kind: ViewKind::Ego, fov_deg: 90.0, columns: vec![Column::EMPTY; 64], pose: None };
        let f1 = Observation { columns: cols, ..f0.clone() };
        let r = PredictedRollout {
            frames: vec![f0, f1],
            horizon: 2,
            source: "t".into(),
            aligned_actions: ActionSequence::new(vec![Forward, Forward]).unwrap(),
        };
        let s = score(&r, &Objective::Visibility { instance: 3, final_only: false }).unwrap();
        assert_eq!(s, 0.125);
        assert_eq!(score(&r, &Objective::Visibility { instance: 4, final_only: false }).unwrap(), 0.0);
    }

    #[test]
    fn greedy_candidate_turns_then_walks() {
        let ctx = ProposalContext { history: &[], heading: Heading::from_index(0), goal_bearing_deg: Some(45.0) };
        let mut rng = stream(0, &[]);
        let p = propose(ProposalPolicy::GoalDirected, &ctx, 3, 5, &mut rng);
        assert_eq!(p[0].as_slice(), &[TurnLeft, TurnLeft, Forward, Forward, Forward]);
        assert!(p.iter().all(|s| satisfies_rules(&[], s.as_slice())));
    }
}
