use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{GridScene, GridTraversal};

/// Translation of one `Forward`, in meters.
pub const FORWARD_STEP_M: f64 = 0.2;
/// Rotation of one turn, in degrees.
pub const TURN_STEP_DEG: f64 = 22.5;

/// Heading quantized to sixteen directions; index `k` means `k * 22.5°`,
/// counter-clockwise from +x.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Heading(u8);

impl Heading {
    pub const COUNT: u8 = 16;

    pub fn from_index(k: i64) -> Self {
        Heading(k.rem_euclid(Self::COUNT as i64) as u8)
    }

    /// Accepts any multiple of 22.5 (negative or ≥ 360 wraps).
    pub fn from_degrees(deg: f64) -> Option<Self> {
        let k = deg / TURN_STEP_DEG;
        let r = k.round();
        ((k - r).abs() < 1e-9).then(|| Self::from_index(r as i64))
    }

    pub fn index(self) -> u8 {
        self.0
    }

    pub fn degrees(self) -> f64 {
        self.0 as f64 * TURN_STEP_DEG
    }

    pub fn left(self) -> Self {
        Self::from_index(self.0 as i64 + 1)
    }

    pub fn right(self) -> Self {
        Self::from_index(self.0 as i64 - 1)
    }

    /// Unit direction vector. Axis-aligned headings are exact.
    pub fn unit(self) -> (f64, f64) {
        UNIT[self.0 as usize]
    }

    /// Signed number of left turns (negative = right) to reach `target` with
    /// the fewest actions. A half turn is taken to the left.
    pub fn turns_to(self, target: Heading) -> i32 {
        let d = (target.0 as i32 - self.0 as i32).rem_euclid(16);
        if d <= 8 {
            d
        } else {
            d - 16
        }
    }

    /// Nearest quantized heading to a bearing in radians.
    pub fn nearest(bearing_rad: f64) -> Self {
        let k = (bearing_rad.to_degrees() / TURN_STEP_DEG).round();
        Self::from_index(k as i64)
    }
}

const S: f64 = std::f64::consts::FRAC_1_SQRT_2;
const C1: f64 = 0.923_879_532_511_286_7; // cos 22.5°
const S1: f64 = 0.382_683_432_365_089_8; // sin 22.5°
const UNIT: [(f64, f64); 16] = [
    (1.0, 0.0),
    (C1, S1),
    (S, S),
    (S1, C1),
    (0.0, 1.0),
    (-S1, C1),
    (-S, S),
    (-C1, S1),
    (-1.0, 0.0),
    (-C1, -S1),
    (-S, -S),
    (-S1, -C1),
    (0.0, -1.0),
    (S1, -C1),
    (S, -S),
    (C1, -S1),
];

impl Serialize for Heading {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.degrees())
    }
}

impl<'de> Deserialize<'de> for Heading {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let deg = f64::deserialize(d)?;
        Heading::from_degrees(deg)
            .ok_or_else(|| serde::de::Error::custom(format!("heading {deg} is not a multiple of 22.5")))
    }
}

/// Agent pose in meters with a quantized heading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    #[serde(rename = "heading_deg")]
    pub heading: Heading,
}

impl Pose {
    pub fn new(x: f64, y: f64, heading: Heading) -> Self {
        Self { x, y, heading }
    }

    pub fn distance_to(&self, other: &Pose) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }

    pub fn distance_to_point(&self, x: f64, y: f64) -> f64 {
        ((self.x - x).powi(2) + (self.y - y).powi(2)).sqrt()
    }

    /// The pose after `a` with no obstacles in the way.
    pub fn step_free(&self, a: ActionPrimitive) -> Pose {
        match a {
            ActionPrimitive::Forward => {
                let (dx, dy) = self.heading.unit();
                Pose { x: self.x + FORWARD_STEP_M * dx, y: self.y + FORWARD_STEP_M * dy, heading: self.heading }
            }
            ActionPrimitive::TurnLeft => Pose { heading: self.heading.left(), ..*self },
            ActionPrimitive::TurnRight => Pose { heading: self.heading.right(), ..*self },
            ActionPrimitive::Stop | ActionPrimitive::Null => *self,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionPrimitive {
    Forward,
    TurnLeft,
    TurnRight,
    Stop,
    /// Alignment token preceding the first frame of a recorded trajectory.
    Null,
}

impl ActionPrimitive {
    /// Primitives a plan may contain.
    pub const PLANNABLE: [ActionPrimitive; 4] =
        [ActionPrimitive::Forward, ActionPrimitive::TurnLeft, ActionPrimitive::TurnRight, ActionPrimitive::Stop];
    /// Primitives the heuristic proposal policy draws from.
    pub const MOTION: [ActionPrimitive; 3] =
        [ActionPrimitive::Forward, ActionPrimitive::TurnLeft, ActionPrimitive::TurnRight];

    pub fn inverse(self) -> Option<ActionPrimitive> {
        match self {
            ActionPrimitive::TurnLeft => Some(ActionPrimitive::TurnRight),
            ActionPrimitive::TurnRight => Some(ActionPrimitive::TurnLeft),
            _ => None,
        }
    }

    pub fn is_turn(self) -> bool {
        matches!(self, ActionPrimitive::TurnLeft | ActionPrimitive::TurnRight)
    }

    pub fn name(self) -> &'static str {
        match self {
            ActionPrimitive::Forward => "forward",
            ActionPrimitive::TurnLeft => "turn_left",
            ActionPrimitive::TurnRight => "turn_right",
            ActionPrimitive::Stop => "stop",
            ActionPrimitive::Null => "null",
        }
    }
}

impl fmt::Display for ActionPrimitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SequenceError {
    #[error("action sequence is empty")]
    Empty,
    #[error("action at position {0} follows a stop")]
    AfterStop(usize),
    #[error("null action at position {0}; null may only lead an aligned sequence")]
    MisplacedNull(usize),
}

/// A non-empty plan of primitives. Nothing may follow `Stop`; `Null` may only
/// appear first.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<ActionPrimitive>", into = "Vec<ActionPrimitive>")]
pub struct ActionSequence(Vec<ActionPrimitive>);

impl ActionSequence {
    pub fn new(items: Vec<ActionPrimitive>) -> Result<Self, SequenceError> {
        if items.is_empty() {
            return Err(SequenceError::Empty);
        }
        for (i, a) in items.iter().enumerate() {
            if *a == ActionPrimitive::Null && i != 0 {
                return Err(SequenceError::MisplacedNull(i));
            }
            if i > 0 && items[i - 1] == ActionPrimitive::Stop {
                return Err(SequenceError::AfterStop(i));
            }
        }
        Ok(Self(items))
    }

    pub fn as_slice(&self) -> &[ActionPrimitive] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ActionPrimitive> {
        self.0.iter()
    }

    /// First `n` actions (at least one is kept).
    pub fn truncated(&self, n: usize) -> ActionSequence {
        ActionSequence(self.0[..n.clamp(1, self.0.len())].to_vec())
    }

    pub fn into_vec(self) -> Vec<ActionPrimitive> {
        self.0
    }
}

impl TryFrom<Vec<ActionPrimitive>> for ActionSequence {
    type Error = SequenceError;
    fn try_from(v: Vec<ActionPrimitive>) -> Result<Self, Self::Error> {
        ActionSequence::new(v)
    }
}

impl From<ActionSequence> for Vec<ActionPrimitive> {
    fn from(s: ActionSequence) -> Self {
        s.0
    }
}

impl<'a> IntoIterator for &'a ActionSequence {
    type Item = &'a ActionPrimitive;
    type IntoIter = std::slice::Iter<'a, ActionPrimitive>;
    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

/// Executes one primitive. A `Forward` whose swept segment touches any
/// non-free cell leaves the pose unchanged.
pub fn apply_action(scene: &GridScene, pose: &Pose, a: ActionPrimitive) -> Pose {
    let next = pose.step_free(a);
    if a == ActionPrimitive::Forward && !segment_clear(scene, (pose.x, pose.y), (next.x, next.y)) {
        return *pose;
    }
    next
}

/// True when every cell the segment passes through (including both corner
/// cells on exact corner crossings) is free.
pub(crate) fn segment_clear(scene: &GridScene, from: (f64, f64), to: (f64, f64)) -> bool {
    let dx = to.0 - from.0;
    let dy = to.1 - from.1;
    let len = (dx * dx + dy * dy).sqrt();
    if !scene.is_free_point(from.0, from.1) || !scene.is_free_point(to.0, to.1) {
        return false;
    }
    if len == 0.0 {
        return true;
    }
    let dir = (dx / len, dy / len);
    GridTraversal::new(scene, from, dir, len).all(|step| scene.is_free(step.cell))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Cell;
    use ActionPrimitive::*;

    fn open() -> GridScene {
        GridScene::walled(40, 40, 0.1).unwrap()
    }

    #[test]
    fn forward_in_open_space() {
        let s = open();
        let p = Pose::new(1.0, 1.0, Heading::default());
        let q = apply_action(&s, &p, Forward);
        assert!((q.x - 1.2).abs() < 1e-12 && q.y == 1.0 && q.heading == p.heading);
    }

    #[test]
    fn forward_into_wall_is_noop() {
        let mut s = open();
        // wall occupies x in [1.1, 1.2) for all rows
        for y in 0..40 {
            s.set_wall(Cell::new(11, y));
        }
        let p = Pose::new(1.0, 1.0, Heading::default());
        assert_eq!(apply_action(&s, &p, Forward), p);
    }

    #[test]
    fn turns_cancel_and_wrap() {
        let s = open();
        let p = Pose::new(1.05, 2.05, Heading::from_index(3));
        let q = apply_action(&s, &apply_action(&s, &p, TurnLeft), TurnRight);
        assert_eq!(p, q);
        let mut r = p;
        for _ in 0..16 {
            r = apply_action(&s, &r, TurnLeft);
        }
        assert_eq!(r, p);
    }

    #[test]
    fn stop_and_null_are_identity() {
        let s = open();
        let p = Pose::new(1.05, 2.05, Heading::from_index(5));
        assert_eq!(apply_action(&s, &p, Stop), p);
        assert_eq!(apply_action(&s, &p, Null), p);
    }

    #[test]
    fn heading_arithmetic() {
        assert_eq!(Heading::from_degrees(-22.5), Some(Heading::from_index(15)));
        assert_eq!(Heading::from_degrees(360.0), Some(Heading::from_index(0)));
        assert_eq!(Heading::from_degrees(10.0), None);
        assert_eq!(Heading::from_index(0).turns_to(Heading::from_index(8)), 8);
        assert_eq!(Heading::from_index(0).turns_to(Heading::from_index(9)), -7);
        assert_eq!(Heading::from_index(2).turns_to(Heading::from_index(1)), -1);
    }

    #[test]
    fn sequence_invariants() {
        assert_eq!(ActionSequence::new(vec![]), Err(SequenceError::Empty));
        assert_eq!(ActionSequence::new(vec![Stop, Forward]), Err(SequenceError::AfterStop(1)));
        assert_eq!(ActionSequence::new(vec![Forward, Null]), Err(SequenceError::MisplacedNull(1)));
        assert!(ActionSequence::new(vec![Null, Forward, Stop]).is_ok());
        let s = ActionSequence::new(vec![Forward, TurnLeft, Forward]).unwrap();
        assert_eq!(s.truncated(2).as_slice(), &[Forward, TurnLeft]);
        assert_eq!(s.truncated(0).len(), 1);
    }

    #[test]
    fn pose_json_shape() {
        let p = Pose::new(0.5, 1.5, Heading::from_index(2));
        let j = serde_json::to_string(&p).unwrap();
        assert_eq!(j, r#"{"x":0.5,"y":1.5,"heading_deg":45.0}"#);
        let back: Pose = serde_json::from_str(&j).unwrap();
        assert_eq!(back, p);
        assert!(serde_json::from_str::<Pose>(r#"{"x":0,"y":0,"heading_deg":10}"#).is_err());
    }
}
