//! A world model fitted by counting.
//!
//! Each episode keeps a local occupancy map built from the real observations
//! seen so far, in a frame anchored at the episode start. A rollout
//! dead-reckons the commanded actions and casts rays through that map. Rays
//! that run into never-observed space are filled from co-occurrence
//! histograms fitted on recorded trajectories: the outcome `(class, depth
//! beyond the unknown boundary)` is counted under increasingly specific
//! contexts (distance to the boundary, then the nearest resolved column's
//! class, then its depth and offset). Prediction uses the most specific
//! context with enough support, with +1 smoothing over the joint outcome.

use std::collections::HashMap;

use rayon::prelude::*;

use super::{BlindModel, BlindSession, ModelError, ModelInfo, RolloutContext};
use crate::action_api::{decode_control, ControlInput};
use crate::datagen::TrajectoryRecord;
use crate::render::{view_ray_angles, Column, Observation, ViewKind, MAX_RANGE_M};
use crate::scene::{cell_containing, ActionPrimitive, Cell, GridTraversal, Pose, NUM_CLASSES};

/// Map side length in cells; the episode start sits at the centre.
const MAP_CELLS: usize = 320;
const UNKNOWN_BIN_M: f64 = 0.5;
const UNKNOWN_BINS: u32 = 10;
const NEIGHBOR_DEPTH_BIN_M: f64 = 0.5;
const NEIGHBOR_DEPTH_BINS: u32 = 12;
const OFFSET_BINS: u32 = 5;
const RESIDUAL_BIN_M: f64 = 0.25;
const RESIDUAL_BINS: usize = 40;
/// Residual bins plus one for "nothing hit".
const OUTCOME_BINS: usize = RESIDUAL_BINS + 1;
const CLASSES: usize = NUM_CLASSES as usize;
const HIST_LEN: usize = CLASSES * OUTCOME_BINS;
/// Samples a context needs before it is preferred over its parent.
const MIN_SUPPORT: u32 = 30;
/// How many steps ahead training predicts from each frame.
const TRAIN_LOOKAHEAD: usize = 3;
const LEVELS: usize = 4;
/// Neighbour class code for "no resolved column in the frame".
const NO_NEIGHBOR: u32 = NUM_CLASSES as u32;
const EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Known {
    Unknown,
    Free,
    Hit(u16, u32),
}

#[derive(Debug, Clone)]
struct LocalMap {
    cs: f64,
    cells: Vec<Known>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Cast {
    Hit(Column),
    Clear,
    Unknown(f64),
}

impl LocalMap {
    fn new(cs: f64) -> Self {
        Self { cs, cells: vec![Known::Unknown; MAP_CELLS * MAP_CELLS] }
    }

    fn point(&self, odo: &Pose) -> (f64, f64) {
        let c = (MAP_CELLS / 2) as f64 + 0.5;
        (c * self.cs + odo.x, c * self.cs + odo.y)
    }

    fn index(&self, c: Cell) -> Option<usize> {
        let n = MAP_CELLS as i32;
        (c.x >= 0 && c.y >= 0 && c.x < n && c.y < n).then(|| c.y as usize * MAP_CELLS + c.x as usize)
    }

    fn get(&self, c: Cell) -> Option<Known> {
        self.index(c).map(|i| self.cells[i])
    }

    fn walk(&self, origin: (f64, f64), angle: f64, len: f64) -> GridTraversal {
        let cell = cell_containing(origin.0, origin.1, self.cs);
        GridTraversal::on_grid(self.cs, MAP_CELLS, MAP_CELLS, cell, origin, (angle.cos(), angle.sin()), len)
    }

    fn integrate(&mut self, obs: &Observation, odo: &Pose) {
        let origin = self.point(odo);
        let angles = view_ray_angles(obs.kind, odo.heading.degrees(), obs.width(), obs.fov_deg);
        for (col, &angle) in obs.columns.iter().zip(&angles) {
            let hit = col.depth_m < MAX_RANGE_M;
            let mut at_depth = Vec::new();
            for step in self.walk(origin, angle, col.depth_m.min(MAX_RANGE_M) + self.cs).skip(1) {
                let Some(i) = self.index(step.cell) else { break };
                if step.t < col.depth_m - EPS {
                    if self.cells[i] == Known::Unknown {
                        self.cells[i] = Known::Free;
                    }
                } else if hit && step.t <= col.depth_m + EPS {
                    at_depth.push(i);
                } else {
                    break;
                }
            }
            let mark = Known::Hit(col.class_id, col.instance_id);
            match at_depth.as_slice() {
                [only] => self.cells[*only] = mark,
                many => {
                    for &i in many {
                        if self.cells[i] == Known::Unknown {
                            self.cells[i] = mark;
                        }
                    }
                }
            }
        }
    }

    fn cast(&self, origin: (f64, f64), angle: f64) -> Cast {
        for step in self.walk(origin, angle, MAX_RANGE_M).skip(1) {
            match self.get(step.cell) {
                None | Some(Known::Unknown) => return Cast::Unknown(step.t),
                Some(Known::Hit(class_id, instance_id)) => {
                    return Cast::Hit(Column { depth_m: step.t.min(MAX_RANGE_M), class_id, instance_id })
                }
                Some(Known::Free) => {}
            }
        }
        Cast::Clear
    }

    /// True when a known obstacle lies on the segment.
    fn blocked(&self, from: &Pose, to: &Pose) -> bool {
        let a = self.point(from);
        let b = self.point(to);
        let len = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
        let angle = (b.1 - a.1).atan2(b.0 - a.0);
        self.walk(a, angle, len).any(|s| matches!(self.get(s.cell), Some(Known::Hit(..))))
    }
}

/// Outcome histograms per context, one table per specificity level
/// (0 = most specific).
#[derive(Debug, Clone, Default)]
pub struct CountPriorStats {
    tables: [HashMap<u32, Vec<u32>>; LEVELS],
    samples: u64,
}

impl CountPriorStats {
    pub fn samples(&self) -> u64 {
        self.samples
    }

    fn add(&mut self, keys: &[u32; LEVELS], outcome: usize) {
        for (table, key) in self.tables.iter_mut().zip(keys) {
            table.entry(*key).or_insert_with(|| vec![0; HIST_LEN])[outcome] += 1;
        }
        self.samples += 1;
    }

    fn merge(mut self, other: CountPriorStats) -> CountPriorStats {
        for (mine, theirs) in self.tables.iter_mut().zip(other.tables) {
            for (k, h) in theirs {
                let slot = mine.entry(k).or_insert_with(|| vec![0; HIST_LEN]);
                for (a, b) in slot.iter_mut().zip(h) {
                    *a += b;
                }
            }
        }
        self.samples += other.samples;
        self
    }

    fn histogram(&self, keys: &[u32; LEVELS]) -> Option<&[u32]> {
        let mut fallback = None;
        for (table, key) in self.tables.iter().zip(keys) {
            if let Some(h) = table.get(key) {
                if h.iter().sum::<u32>() >= MIN_SUPPORT {
                    return Some(h);
                }
                fallback = Some(h.as_slice());
            }
        }
        fallback
    }

    /// Most likely class and median outcome bin for a context.
    fn predict(&self, keys: &[u32; LEVELS]) -> (u16, usize) {
        let zeros = [0u32; HIST_LEN];
        let h = self.histogram(keys).unwrap_or(&zeros);
        let class_mass = |c: usize| -> u64 { h[c * OUTCOME_BINS..(c + 1) * OUTCOME_BINS].iter().map(|&n| n as u64 + 1).sum() };
        let class = (0..CLASSES).fold(0, |best, c| if class_mass(c) > class_mass(best) { c } else { best });
        let row = &h[class * OUTCOME_BINS..(class + 1) * OUTCOME_BINS];
        let total = class_mass(class);
        let mut acc = 0u64;
        let bin = row
            .iter()
            .position(|&n| {
                acc += n as u64 + 1;
                2 * acc >= total
            })
            .unwrap_or(OUTCOME_BINS - 1);
        (class as u16, bin)
    }
}

fn unknown_bin(t: f64) -> u32 {
    ((t / UNKNOWN_BIN_M) as u32).min(UNKNOWN_BINS - 1)
}

fn offset_bin(off: usize) -> u32 {
    match off {
        0 | 1 => 0,
        2 => 1,
        3..=4 => 2,
        5..=8 => 3,
        _ => 4,
    }
}

fn outcome_bin(truth: &Column, t_unknown: f64) -> usize {
    if truth.depth_m >= MAX_RANGE_M {
        RESIDUAL_BINS
    } else {
        (((truth.depth_m - t_unknown).max(0.0) / RESIDUAL_BIN_M) as usize).min(RESIDUAL_BINS - 1)
    }
}

/// Context keys for column `j`, unknown from `t` on.
fn context(casts: &[Cast], j: usize, t: f64, circular: bool) -> [u32; LEVELS] {
    let n = casts.len();
    let resolved = |k: usize| match casts[k] {
        Cast::Hit(c) => Some((c.class_id as u32, c.depth_m)),
        Cast::Clear => Some((0, MAX_RANGE_M)),
        Cast::Unknown(_) => None,
    };
    let mut neighbor = None;
    for off in 1..n {
        let left = if circular { Some((j + n - off) % n) } else { j.checked_sub(off) };
        let right = if circular { Some((j + off) % n) } else { Some(j + off).filter(|&k| k < n) };
        if let Some(found) = left.and_then(resolved).or_else(|| right.and_then(resolved)) {
            neighbor = Some((found, off));
            break;
        }
    }
    let tu = unknown_bin(t);
    let (nc, nd, no) = match neighbor {
        Some(((class, depth), off)) => {
            (class, ((depth / NEIGHBOR_DEPTH_BIN_M) as u32).min(NEIGHBOR_DEPTH_BINS - 1), offset_bin(off))
        }
        None => (NO_NEIGHBOR, 0, 0),
    };
    let l1 = tu * (NO_NEIGHBOR + 1) + nc;
    let l0 = (l1 * NEIGHBOR_DEPTH_BINS + nd) * OFFSET_BINS + no;
    [l0, l1, tu, 0]
}

/// Trained count model.
#[derive(Debug, Clone)]
pub struct CountPrior {
    info: ModelInfo,
    stats: CountPriorStats,
    cell_size: f64,
    trained_on: usize,
}

impl CountPrior {
    /// Fits the fill statistics by replaying each record: the front view of
    /// every frame is integrated into a fresh map and the next few frames are
    /// predicted; each unknown ray counts its true outcome under its context.
    pub fn train(info: ModelInfo, records: &[TrajectoryRecord]) -> Self {
        let cell_size = records.first().map_or(0.1, |r| r.cell_size);
        let stats = records
            .par_iter()
            .map(Self::count_record)
            .reduce(CountPriorStats::default, CountPriorStats::merge);
        Self { info, stats, cell_size, trained_on: records.len() }
    }

    /// Untrained model: unknown rays fall back to the smoothed uniform prior.
    pub fn untrained(info: ModelInfo, cell_size: f64) -> Self {
        Self { info, stats: CountPriorStats::default(), cell_size, trained_on: 0 }
    }

    pub fn trained_on(&self) -> usize {
        self.trained_on
    }

    pub fn stats(&self) -> &CountPriorStats {
        &self.stats
    }

    fn count_record(r: &TrajectoryRecord) -> CountPriorStats {
        let mut stats = CountPriorStats::default();
        let Some(first) = r.steps.first() else { return stats };
        let views: Vec<Observation> = r.steps.iter().map(|s| s.front_view()).collect();
        let origin = first.pose;
        let odo: Vec<Pose> = r.steps.iter().map(|s| super::odometry(&s.pose, &origin)).collect();
        let mut map = LocalMap::new(r.cell_size);
        for t in 0..views.len() {
            map.integrate(&views[t], &odo[t]);
            for k in 1..=TRAIN_LOOKAHEAD {
                let Some(truth) = views.get(t + k) else { break };
                let casts = cast_frame(&map, &odo[t + k], truth.kind, truth.width(), truth.fov_deg);
                for (j, c) in casts.iter().enumerate() {
                    if let Cast::Unknown(tu) = *c {
                        let keys = context(&casts, j, tu, truth.kind == ViewKind::Panorama);
                        stats.add(&keys, outcome_bin(&truth.columns[j], tu));
                    }
                }
            }
        }
        stats
    }

    fn render(&self, map: &LocalMap, odo: &Pose) -> Observation {
        let info = &self.info;
        let fov = if info.observation_kind == ViewKind::Panorama { 360.0 } else { info.fov_deg };
        let casts = cast_frame(map, odo, info.observation_kind, info.width, fov);
        let columns = casts
            .iter()
            .enumerate()
            .map(|(j, c)| match *c {
                Cast::Hit(col) => col,
                Cast::Clear => Column::EMPTY,
                Cast::Unknown(tu) => {
                    let keys = context(&casts, j, tu, info.observation_kind == ViewKind::Panorama);
                    let (class_id, bin) = self.stats.predict(&keys);
                    let depth_m = if bin == RESIDUAL_BINS {
                        MAX_RANGE_M
                    } else {
                        (tu + (bin as f64 + 0.5) * RESIDUAL_BIN_M).min(MAX_RANGE_M)
                    };
                    Column { depth_m, class_id, instance_id: 0 }
                }
            })
            .collect();
        Observation { kind: info.observation_kind, fov_deg: fov, columns, pose: None }
    }
}

fn cast_frame(map: &LocalMap, odo: &Pose, kind: ViewKind, width: usize, fov: f64) -> Vec<Cast> {
    let origin = map.point(odo);
    view_ray_angles(kind, odo.heading.degrees(), width, fov).into_iter().map(|a| map.cast(origin, a)).collect()
}

struct CountPriorSession<'a> {
    model: &'a CountPrior,
    map: LocalMap,
}

impl BlindModel for CountPrior {
    fn info(&self) -> &ModelInfo {
        &self.info
    }

    fn session(&self) -> Result<Box<dyn BlindSession + '_>, ModelError> {
        Ok(Box::new(CountPriorSession { model: self, map: LocalMap::new(self.cell_size) }))
    }
}

impl BlindSession for CountPriorSession<'_> {
    fn observe(&mut self, obs: &Observation, odometry: &Pose) {
        self.map.integrate(obs, odometry);
    }

    fn rollout(&self, ctx: &RolloutContext, control: &ControlInput, horizon: usize) -> Result<Vec<Observation>, ModelError> {
        let actions = decode_control(control, &self.model.info.vocab)?;
        let mut pose = ctx.odometry;
        let mut frames = Vec::with_capacity(horizon);
        for &a in actions.iter().take(horizon) {
            let next = pose.step_free(a);
            if !(a == ActionPrimitive::Forward && self.map.blocked(&pose, &next)) {
                pose = next;
            }
            frames.push(self.model.render(&self.map, &pose));
        }
        Ok(frames)
    }
}
