//! Translation of plans into the conditioning a world model expects: a text
//! prompt, a camera trajectory, or tokens from the model's own action
//! vocabulary.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::{ActionPrimitive, ActionSequence, Heading, Pose, SequenceError, FORWARD_STEP_M};

const JOINER: &str = ", then ";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ActionApiError {
    #[error("primitive `{0}` has no token in the model vocabulary")]
    UnmappablePrimitive(ActionPrimitive),
    #[error("null actions cannot be encoded")]
    NullAction,
    #[error("vocabulary maps two primitives to token `{0}`")]
    DuplicateToken(String),
    #[error("unknown token `{0}`")]
    UnknownToken(String),
    #[error("unrecognised phrase `{0}`")]
    UnknownPhrase(String),
    #[error("trajectory step {0} is not a single primitive")]
    BadTrajectory(usize),
    #[error("expected {expected:?} control, got {got:?}")]
    KindMismatch { expected: ControlKind, got: ControlKind },
    #[error(transparent)]
    Sequence(#[from] SequenceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ControlKind {
    #[default]
    Text,
    Trajectory,
    #[serde(rename = "lowlevel")]
    LowLevel,
}

impl std::str::FromStr for ControlKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "text" => Ok(ControlKind::Text),
            "trajectory" => Ok(ControlKind::Trajectory),
            "lowlevel" => Ok(ControlKind::LowLevel),
            other => Err(format!("unknown control kind `{other}`")),
        }
    }
}

/// Encoded control, serialized in the wire format:
/// `{"kind":"text","prompt":..}`, `{"kind":"trajectory","points":[[x,y,h],..]}`,
/// `{"kind":"lowlevel","tokens":[..]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ControlInput {
    Text { prompt: String },
    Trajectory { points: Vec<[f64; 3]> },
    #[serde(rename = "lowlevel")]
    LowLevel { tokens: Vec<String> },
}

impl ControlInput {
    pub fn kind(&self) -> ControlKind {
        match self {
            ControlInput::Text { .. } => ControlKind::Text,
            ControlInput::Trajectory { .. } => ControlKind::Trajectory,
            ControlInput::LowLevel { .. } => ControlKind::LowLevel,
        }
    }
}

/// A model's action vocabulary: an injective map from primitives to tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<ActionPrimitive, String>", into = "BTreeMap<ActionPrimitive, String>")]
pub struct ActionVocab {
    forward: BTreeMap<ActionPrimitive, String>,
    inverse: BTreeMap<String, ActionPrimitive>,
}

impl ActionVocab {
    pub fn new(pairs: impl IntoIterator<Item = (ActionPrimitive, String)>) -> Result<Self, ActionApiError> {
        let mut forward = BTreeMap::new();
        let mut inverse = BTreeMap::new();
        for (p, t) in pairs {
            if p == ActionPrimitive::Null {
                return Err(ActionApiError::NullAction);
            }
            if inverse.insert(t.clone(), p).is_some_and(|q| q != p) {
                return Err(ActionApiError::DuplicateToken(t));
            }
            if let Some(old) = forward.insert(p, t) {
                inverse.remove(&old);
            }
        }
        Ok(Self { forward, inverse })
    }

    /// Tokens equal to the primitive names.
    pub fn identity() -> Self {
        Self::new(ActionPrimitive::PLANNABLE.iter().map(|p| (*p, p.name().to_string()))).expect("names are distinct")
    }

    pub fn token(&self, p: ActionPrimitive) -> Option<&str> {
        self.forward.get(&p).map(String::as_str)
    }

    pub fn primitive(&self, token: &str) -> Option<ActionPrimitive> {
        self.inverse.get(token).copied()
    }
}

impl Default for ActionVocab {
    fn default() -> Self {
        Self::identity()
    }
}

impl TryFrom<BTreeMap<ActionPrimitive, String>> for ActionVocab {
    type Error = ActionApiError;
    fn try_from(m: BTreeMap<ActionPrimitive, String>) -> Result<Self, Self::Error> {
        Self::new(m)
    }
}

impl From<ActionVocab> for BTreeMap<ActionPrimitive, String> {
    fn from(v: ActionVocab) -> Self {
        v.forward
    }
}

fn phrase(a: ActionPrimitive) -> Result<&'static str, ActionApiError> {
    match a {
        ActionPrimitive::Forward => Ok("move forward 0.2 meters"),
        ActionPrimitive::TurnLeft => Ok("turn left 22.5 degrees"),
        ActionPrimitive::TurnRight => Ok("turn right 22.5 degrees"),
        ActionPrimitive::Stop => Ok("stop"),
        ActionPrimitive::Null => Err(ActionApiError::NullAction),
    }
}

fn reject_null(seq: &ActionSequence) -> Result<(), ActionApiError> {
    if seq.iter().any(|a| *a == ActionPrimitive::Null) {
        return Err(ActionApiError::NullAction);
    }
    Ok(())
}

pub fn to_text(seq: &ActionSequence) -> Result<ControlInput, ActionApiError> {
    let phrases = seq.iter().map(|a| phrase(*a)).collect::<Result<Vec<_>, _>>()?;
    Ok(ControlInput::Text { prompt: phrases.join(JOINER) })
}

/// Start pose followed by the pose after each action, ignoring obstacles.
pub fn to_trajectory(seq: &ActionSequence, start: &Pose) -> Result<ControlInput, ActionApiError> {
    reject_null(seq)?;
    let mut pose = *start;
    let mut points = vec![[pose.x, pose.y, pose.heading.degrees()]];
    for a in seq {
        pose = pose.step_free(*a);
        points.push([pose.x, pose.y, pose.heading.degrees()]);
    }
    Ok(ControlInput::Trajectory { points })
}

pub fn to_lowlevel(seq: &ActionSequence, vocab: &ActionVocab) -> Result<ControlInput, ActionApiError> {
    reject_null(seq)?;
    let tokens = seq
        .iter()
        .map(|a| vocab.token(*a).map(str::to_string).ok_or(ActionApiError::UnmappablePrimitive(*a)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ControlInput::LowLevel { tokens })
}

pub fn encode_control(
    seq: &ActionSequence,
    kind: ControlKind,
    start: &Pose,
    vocab: &ActionVocab,
) -> Result<ControlInput, ActionApiError> {
    match kind {
        ControlKind::Text => to_text(seq),
        ControlKind::Trajectory => to_trajectory(seq, start),
        ControlKind::LowLevel => to_lowlevel(seq, vocab),
    }
}

/// Recovers the plan from any encoding. Trajectories are decoded step by
/// step: a pure heading change of one turn, a 0.2 m move along the heading,
/// or (for the last step only) no change, read as `Stop`.
pub fn decode_control(control: &ControlInput, vocab: &ActionVocab) -> Result<ActionSequence, ActionApiError> {
    let actions = match control {
        ControlInput::Text { prompt } => prompt
            .split(JOINER)
            .map(|p| {
                ActionPrimitive::PLANNABLE
                    .into_iter()
                    .find(|a| phrase(*a).is_ok_and(|s| s == p))
                    .ok_or_else(|| ActionApiError::UnknownPhrase(p.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?,
        ControlInput::LowLevel { tokens } => tokens
            .iter()
            .map(|t| vocab.primitive(t).ok_or_else(|| ActionApiError::UnknownToken(t.clone())))
            .collect::<Result<Vec<_>, _>>()?,
        ControlInput::Trajectory { points } => {
            let mut out = Vec::with_capacity(points.len().saturating_sub(1));
            for (i, w) in points.windows(2).enumerate() {
                let from = pose_of(&w[0]).ok_or(ActionApiError::BadTrajectory(i))?;
                let to = pose_of(&w[1]).ok_or(ActionApiError::BadTrajectory(i))?;
                let a = [ActionPrimitive::Forward, ActionPrimitive::TurnLeft, ActionPrimitive::TurnRight, ActionPrimitive::Stop]
                    .into_iter()
                    .find(|a| same_pose(&from.step_free(*a), &to))
                    .ok_or(ActionApiError::BadTrajectory(i))?;
                out.push(a);
            }
            out
        }
    };
    Ok(ActionSequence::new(actions)?)
}

fn pose_of(p: &[f64; 3]) -> Option<Pose> {
    Some(Pose::new(p[0], p[1], Heading::from_degrees(p[2])?))
}

fn same_pose(a: &Pose, b: &Pose) -> bool {
    a.heading == b.heading && a.distance_to(b) < FORWARD_STEP_M * 1e-6
}

#[cfg(test)]
mod tests {
    use super::*;
    use ActionPrimitive::*;

    fn seq(v: &[ActionPrimitive]) -> ActionSequence {
        ActionSequence::new(v.to_vec()).unwrap()
    }

    #[test]
    fn text_templates() {
        assert_eq!(
            to_text(&seq(&[Forward])).unwrap(),
            ControlInput::Text { prompt: "move forward 0.2 meters".into() }
        );
        assert_eq!(
            to_text(&seq(&[TurnLeft, Forward])).unwrap(),
            ControlInput::Text { prompt: "turn left 22.5 degrees, then move forward 0.2 meters".into() }
        );
    }

    #[test]
    fn trajectory_points() {
        let t = to_trajectory(&seq(&[Forward]), &Pose::new(0.0, 0.0, Heading::default())).unwrap();
        assert_eq!(t, ControlInput::Trajectory { points: vec![[0.0, 0.0, 0.0], [0.2, 0.0, 0.0]] });
        let ControlInput::Trajectory { points } = to_trajectory(&seq(&[Stop]), &Pose::new(1.0, 2.0, Heading::from_index(3))).unwrap()
        else {
            unreachable!()
        };
        assert_eq!(points[0], points[1]);
    }

    #[test]
    fn renamed_vocab() {
        let v = ActionVocab::new([(Forward, "FWD".to_string()), (TurnLeft, "L".into())]).unwrap();
        assert_eq!(to_lowlevel(&seq(&[Forward]), &v).unwrap(), ControlInput::LowLevel { tokens: vec!["FWD".into()] });
        assert_eq!(to_lowlevel(&seq(&[TurnRight]), &v), Err(ActionApiError::UnmappablePrimitive(TurnRight)));
        assert!(matches!(
            ActionVocab::new([(Forward, "x".to_string()), (Stop, "x".into())]),
            Err(ActionApiError::DuplicateToken(_))
        ));
    }

    #[test]
    fn null_rejected() {
        let s = seq(&[Null, Forward]);
        assert_eq!(to_text(&s), Err(ActionApiError::NullAction));
        assert_eq!(to_lowlevel(&s, &ActionVocab::identity()), Err(ActionApiError::NullAction));
    }

    #[test]
    fn wire_json() {
        let c = ControlInput::LowLevel { tokens: vec!["forward".into()] };
        assert_eq!(serde_json::to_string(&c).unwrap(), r#"{"kind":"lowlevel","tokens":["forward"]}"#);
        let t: ControlInput = serde_json::from_str(r#"{"kind":"trajectory","points":[[0,0,0],[0.2,0,0]]}"#).unwrap();
        assert_eq!(decode_control(&t, &ActionVocab::identity()).unwrap(), seq(&[Forward]));
    }
}
