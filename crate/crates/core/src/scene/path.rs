use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::kinematics::segment_clear;
use super::{apply_action, ActionPrimitive, Cell, GridScene, Heading, Pose, SceneError, FORWARD_STEP_M};

/// How far ahead along the grid path the follower looks for a visible target.
const LOOKAHEAD_CELLS: usize = 30;
/// Depth of the search that lands the agent on the goal cell.
const APPROACH_LEGS: usize = 3;

/// A grid-optimal path and the primitive sequence that drives an agent along
/// it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizedPath {
    /// Grid cells of the geodesic, start and goal inclusive.
    pub cells: Vec<Cell>,
    /// Geodesic length of `cells` in meters.
    pub cost: f64,
    /// Start pose followed by the pose after each action.
    pub poses: Vec<Pose>,
    pub actions: Vec<ActionPrimitive>,
}

impl RealizedPath {
    /// Sum of realized translations.
    pub fn traveled_m(&self) -> f64 {
        self.poses.windows(2).map(|w| w[0].distance_to(&w[1])).sum()
    }
}

struct Builder<'a> {
    scene: &'a GridScene,
    pose: Pose,
    poses: Vec<Pose>,
    actions: Vec<ActionPrimitive>,
}

impl Builder<'_> {
    fn act(&mut self, a: ActionPrimitive) -> bool {
        let next = apply_action(self.scene, &self.pose, a);
        let moved = next != self.pose;
        self.pose = next;
        self.poses.push(next);
        self.actions.push(a);
        moved || a != ActionPrimitive::Forward
    }

    fn face(&mut self, h: Heading) {
        let k = self.pose.heading.turns_to(h);
        let a = if k >= 0 { ActionPrimitive::TurnLeft } else { ActionPrimitive::TurnRight };
        for _ in 0..k.unsigned_abs() {
            self.act(a);
        }
    }
}

/// Headings ordered by angular distance from `h` (left before right on ties).
fn fan(h: Heading) -> impl Iterator<Item = Heading> {
    std::iter::once(h).chain((1..=8).flat_map(move |k| {
        let l = Heading::from_index(h.index() as i64 + k);
        let r = Heading::from_index(h.index() as i64 - k);
        if k == 8 {
            vec![l]
        } else {
            vec![l, r]
        }
    }))
}

fn bearing(from: (f64, f64), to: (f64, f64)) -> f64 {
    (to.1 - from.1).atan2(to.0 - from.0)
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

impl GridScene {
    /// Shortest collision-free path from `start` to the centre of `goal`,
    /// realized as primitives. Headings change with the fewest turns; the final
    /// pose lies within one cell of the goal centre.
    pub fn shortest_path(&self, start: &Pose, goal: Cell) -> Result<RealizedPath, SceneError> {
        let start_cell = self.cell_at(start.x, start.y);
        if !self.is_free(goal) {
            return Err(SceneError::NotFree { x: goal.x, y: goal.y });
        }
        let field = self.distance_field(start_cell)?;
        let cells = field.path_to(goal).ok_or(SceneError::Unreachable {
            ax: start_cell.x,
            ay: start_cell.y,
            bx: goal.x,
            by: goal.y,
        })?;
        let cost = field.get(goal).unwrap_or(0.0);
        let goal_field = self.distance_field(goal)?;
        let centers: Vec<(f64, f64)> = cells.iter().map(|&c| self.cell_center(c)).collect();
        let goal_pt = self.cell_center(goal);
        let done_tol = 0.75 * self.cell_size();

        let mut b = Builder { scene: self, pose: *start, poses: vec![*start], actions: Vec::new() };
        let mut progress = 0usize;
        let guard = 8 * cells.len() + 64;
        for _ in 0..guard {
            let here = (b.pose.x, b.pose.y);
            let d = dist(here, goal_pt);
            if d <= done_tol {
                return Ok(RealizedPath { cells, cost, poses: b.poses, actions: b.actions });
            }
            if d <= 2.0 * FORWARD_STEP_M + 1e-9 {
                if let Some(plan) = self.final_approach(&b.pose, goal_pt, done_tol) {
                    for a in plan {
                        b.act(a);
                    }
                    return Ok(RealizedPath { cells, cost, poses: b.poses, actions: b.actions });
                }
            }

            let last = centers.len() - 1;
            let reach = (progress + LOOKAHEAD_CELLS).min(last);
            if let Some(k) = (progress + 1..=reach).rev().find(|&k| segment_clear(self, here, centers[k])) {
                progress = k;
            }
            let target = centers[progress.max(1).min(last)];
            let want = Heading::nearest(bearing(here, target));
            let d_target = dist(here, target);

            let pursuit = fan(want).take(5).find(|&h| {
                let next = Pose { heading: h, ..b.pose }.step_free(ActionPrimitive::Forward);
                segment_clear(self, here, (next.x, next.y)) && dist((next.x, next.y), target) < d_target - 1e-9
            });
            let heading = pursuit.or_else(|| {
                // descend the goal's geodesic field instead
                let current = goal_field.get(self.cell_at(here.0, here.1)).unwrap_or(f64::INFINITY);
                fan(b.pose.heading)
                    .filter_map(|h| {
                        let next = Pose { heading: h, ..b.pose }.step_free(ActionPrimitive::Forward);
                        if !segment_clear(self, here, (next.x, next.y)) {
                            return None;
                        }
                        let g = goal_field.get(self.cell_at(next.x, next.y))?;
                        (g < current - 1e-9).then_some((g, h))
                    })
                    .min_by(|a, b| a.0.total_cmp(&b.0))
                    .map(|(_, h)| h)
            });
            let Some(h) = heading else {
                return Err(SceneError::PathRealization);
            };
            b.face(h);
            b.act(ActionPrimitive::Forward);
        }
        Err(SceneError::PathRealization)
    }

    /// Best plan of at most [`APPROACH_LEGS`] (turn, forward) legs ending
    /// within `tol` of `goal`, using the fewest actions; falls back to the
    /// smallest residual.
    fn final_approach(&self, pose: &Pose, goal: (f64, f64), tol: f64) -> Option<Vec<ActionPrimitive>> {
        let turns = |from: Heading, to: Heading| {
            let k = from.turns_to(to);
            let a = if k >= 0 { ActionPrimitive::TurnLeft } else { ActionPrimitive::TurnRight };
            vec![a; k.unsigned_abs() as usize]
        };
        let reach = 2.0 * FORWARD_STEP_M + 1e-9;
        let mut plans: Vec<(f64, Vec<ActionPrimitive>)> = Vec::new();
        let mut frontier = vec![(*pose, Vec::new())];
        let mut seen = HashSet::new();
        for _ in 0..APPROACH_LEGS {
            let mut next = Vec::new();
            for (p, acts) in &frontier {
                for h in (0..16).map(Heading::from_index) {
                    let turned = Pose { heading: h, ..*p };
                    let moved = apply_action(self, &turned, ActionPrimitive::Forward);
                    let r = moved.distance_to_point(goal.0, goal.1);
                    let key = ((moved.x * 1e3).round() as i64, (moved.y * 1e3).round() as i64, h);
                    if moved == turned || r > reach || !seen.insert(key) {
                        continue;
                    }
                    let mut a = acts.clone();
                    a.extend(turns(p.heading, h));
                    a.push(ActionPrimitive::Forward);
                    plans.push((r, a.clone()));
                    next.push((moved, a));
                }
            }
            frontier = next;
        }
        let within = plans
            .iter()
            .filter(|(r, _)| *r <= tol)
            .min_by(|a, b| a.1.len().cmp(&b.1.len()).then(a.0.total_cmp(&b.0)));
        within
            .or_else(|| plans.iter().min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.len().cmp(&b.1.len()))))
            .filter(|(r, _)| *r <= self.cell_size())
            .map(|(_, acts)| acts.clone())
    }
}
