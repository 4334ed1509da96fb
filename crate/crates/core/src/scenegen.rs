//! Procedural scenes: a walled square split into rooms joined by doorways,
//! with furniture placed along the walls.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::planner::visibility;
use crate::render::{render, ViewKind, EGO_FOV_DEG};
use crate::rng::{domain, mix, stream};
use crate::scene::{Cell, GridScene, Heading, Pose, SceneError};
use crate::tasks::{
    affording_cells, shortest_to_any, Attribute, EpisodeSpec, Goal, PlannerOverrides, Question, Relation, Suite,
    TaskError, TaskKind, AGENT_WIDTH,
};

/// Object classes; class id = index + 1.
pub const CLASS_NAMES: [&str; 12] =
    ["chair", "table", "sofa", "bed", "plant", "lamp", "shelf", "cabinet", "tv", "sink", "toilet", "desk"];
pub const COLORS: [&str; 8] = ["red", "green", "blue", "yellow", "white", "black", "brown", "gray"];
pub const MAX_INSTANCES: usize = 26;
const DOOR_WIDTH: i32 = 4;
const MIN_ROOM: i32 = 12;
const ATTEMPTS: u64 = 64;

#[derive(Debug, Error)]
pub enum ScenegenError {
    #[error("size {0} is below the 10-cell minimum")]
    TooSmall(usize),
    #[error("no connected layout found after {0} attempts")]
    NoLayout(u64),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Task(#[from] TaskError),
}

/// Name of a palette class id (`class_<id>` outside the palette).
pub fn class_name(id: u16) -> String {
    match id {
        1..=12 => CLASS_NAMES[id as usize - 1].to_string(),
        _ => format!("class_{id}"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    /// Side length in cells.
    pub size: usize,
    pub rooms: usize,
    /// Objects per square meter of room floor.
    pub object_density: f64,
    pub cell_size: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self { size: 40, rooms: 1, object_density: 1.5, cell_size: 0.1 }
    }
}

#[derive(Debug, Clone, Copy)]
struct Room {
    x0: i32,
    y0: i32,
    x1: i32,
    y1: i32,
}

impl Room {
    fn w(&self) -> i32 {
        self.x1 - self.x0 + 1
    }
    fn h(&self) -> i32 {
        self.y1 - self.y0 + 1
    }
}

/// Generates a connected scene; deterministic per seed.
pub fn gen_scene(seed: u64, params: &SceneParams) -> Result<GridScene, ScenegenError> {
    if params.size < 10 {
        return Err(ScenegenError::TooSmall(params.size));
    }
    for attempt in 0..ATTEMPTS {
        let mut rng = stream(seed, &[domain::SCENE, attempt]);
        if let Some(s) = try_layout(&mut rng, params)? {
            return Ok(s);
        }
    }
    Err(ScenegenError::NoLayout(ATTEMPTS))
}

fn try_layout<R: Rng>(rng: &mut R, p: &SceneParams) -> Result<Option<GridScene>, ScenegenError> {
    let n = p.size as i32;
    let mut scene = GridScene::walled(p.size, p.size, p.cell_size)?;
    let mut rooms = vec![Room { x0: 1, y0: 1, x1: n - 2, y1: n - 2 }];
    let mut doors: Vec<Cell> = Vec::new();
    while rooms.len() < p.rooms.max(1) {
        let (idx, _) = rooms
            .iter()
            .enumerate()
            .map(|(i, r)| (i, r.w() * r.h()))
            .max_by_key(|&(i, a)| (a, std::cmp::Reverse(i)))
            .expect("at least one room");
        let r = rooms[idx];
        let vertical = r.w() >= r.h();
        let span = if vertical { r.w() } else { r.h() };
        if span < 2 * MIN_ROOM + 1 {
            break;
        }
        let near_door = |c: Cell| doors.iter().any(|d| (d.x - c.x).abs() <= 1 && (d.y - c.y).abs() <= 1);
        let mut split = None;
        for _ in 0..16 {
            let at = rng.random_range(MIN_ROOM..=span - MIN_ROOM - 1);
            let ends = if vertical {
                [Cell::new(r.x0 + at, r.y0 - 1), Cell::new(r.x0 + at, r.y1 + 1)]
            } else {
                [Cell::new(r.x0 - 1, r.y0 + at), Cell::new(r.x1 + 1, r.y0 + at)]
            };
            if !ends.iter().any(|&e| near_door(e)) {
                split = Some(at);
                break;
            }
        }
        let Some(at) = split else { return Ok(None) };
        let (a, b, wall): (Room, Room, Vec<Cell>) = if vertical {
            let x = r.x0 + at;
            (
                Room { x1: x - 1, ..r },
                Room { x0: x + 1, ..r },
                (r.y0..=r.y1).map(|y| Cell::new(x, y)).collect(),
            )
        } else {
            let y = r.y0 + at;
            (
                Room { y1: y - 1, ..r },
                Room { y0: y + 1, ..r },
                (r.x0..=r.x1).map(|x| Cell::new(x, y)).collect(),
            )
        };
        let door_start = rng.random_range(1..=(wall.len() as i32 - DOOR_WIDTH - 1)) as usize;
        for (k, &c) in wall.iter().enumerate() {
            if k >= door_start && k < door_start + DOOR_WIDTH as usize {
                doors.push(c);
            } else {
                scene.set_wall(c);
            }
        }
        rooms[idx] = a;
        rooms.push(b);
    }
    if scene.free_components() != 1 {
        return Ok(None);
    }
    place_objects(rng, &mut scene, &rooms, &doors, p.object_density);
    Ok(Some(scene))
}

fn place_objects<R: Rng>(rng: &mut R, scene: &mut GridScene, rooms: &[Room], doors: &[Cell], density: f64) {
    let cs = scene.cell_size();
    let mut next_id = 1u32;
    for r in rooms {
        let area = (r.w() * r.h()) as f64 * cs * cs;
        let want = (density * area).round() as usize;
        let mut placed = 0;
        let mut tries = 0;
        while placed < want && tries < 40 * want.max(1) && (next_id as usize) <= MAX_INSTANCES {
            tries += 1;
            let len = rng.random_range(2..=4);
            let depth = 2;
            // side: 0 = bottom, 1 = top, 2 = left, 3 = right
            let side = rng.random_range(0..4);
            let cells: Vec<Cell> = match side {
                0 | 1 => {
                    if r.w() < len + 2 {
                        continue;
                    }
                    let x = rng.random_range(r.x0..=r.x1 - len + 1);
                    let ys = if side == 0 { r.y0..r.y0 + depth } else { r.y1 - depth + 1..r.y1 + 1 };
                    ys.flat_map(|y| (x..x + len).map(move |x| Cell::new(x, y))).collect()
                }
                _ => {
                    if r.h() < len + 2 {
                        continue;
                    }
                    let y = rng.random_range(r.y0..=r.y1 - len + 1);
                    let xs = if side == 2 { r.x0..r.x0 + depth } else { r.x1 - depth + 1..r.x1 + 1 };
                    xs.flat_map(|x| (y..y + len).map(move |y| Cell::new(x, y))).collect()
                }
            };
            let clear = cells.iter().all(|c| {
                (-1..=1).all(|dx| {
                    (-1..=1).all(|dy| {
                        let n = Cell::new(c.x + dx, c.y + dy);
                        scene.instance_at(n) == 0
                    })
                }) && scene.is_free(*c)
                    && doors.iter().all(|d| (d.x - c.x).abs() > 2 || (d.y - c.y).abs() > 2)
            });
            if !clear {
                continue;
            }
            let class = rng.random_range(1..=CLASS_NAMES.len() as u16);
            let color = COLORS.choose(rng).expect("non-empty palette");
            let name = format!("{color}_{}", CLASS_NAMES[class as usize - 1]);
            if scene.add_instance(next_id, class, &name, &cells).is_err() {
                continue;
            }
            if scene.free_components() != 1 {
                scene.remove_instance(next_id);
                continue;
            }
            next_id += 1;
            placed += 1;
        }
    }
}

/// Minimum geodesic start-goal distance for ImageNav episodes.
pub const IMAGENAV_MIN_M: f64 = 2.0;
/// Upper bound keeping ImageNav goals within reach of the decision budget.
pub const IMAGENAV_MAX_M: f64 = 2.5;
/// AR starts must see less than this fraction of the target...
pub const AR_MAX_INITIAL_VISIBILITY: f64 = 0.05;
/// ...or stand farther than this from it.
pub const AR_MIN_DISTANCE_M: f64 = 4.0;
const EPISODE_TRIES: usize = 200;

fn random_pose<R: Rng>(rng: &mut R, scene: &GridScene, free: &[Cell]) -> Pose {
    let c = *free.choose(rng).expect("connected scenes have free cells");
    scene.pose_at(c, Heading::from_index(rng.random_range(0..16)))
}

fn initial_visibility(scene: &GridScene, pose: &Pose, instance: u32) -> Result<f64, ScenegenError> {
    let v = render(scene, pose, ViewKind::Ego, AGENT_WIDTH, EGO_FOV_DEG).map_err(TaskError::from)?;
    Ok(visibility(&v, instance))
}

fn scene_episodes(
    task: TaskKind,
    scene: &GridScene,
    scene_ref: &str,
    count: usize,
    seed: u64,
    scene_index: u64,
) -> Result<Vec<EpisodeSpec>, ScenegenError> {
    let mut rng = stream(seed, &[domain::SUITE, scene_index]);
    let free = scene.free_cells();
    let mut afford: BTreeMap<u32, Vec<Cell>> = BTreeMap::new();
    let mut out = Vec::new();
    let ids: Vec<u32> = scene.instances().keys().copied().collect();
    for _ in 0..count * EPISODE_TRIES {
        if out.len() == count {
            break;
        }
        let start = random_pose(&mut rng, scene, &free);
        let k = out.len() as u64;
        let spec_seed = mix(seed, &[domain::SUITE, scene_index, k]) >> 11;
        let make = |goal: Goal, shortest_m: f64| EpisodeSpec {
            id: 0,
            task,
            scene: scene_ref.to_string(),
            start,
            goal,
            budget: task.default_budget(),
            shortest_m,
            seed: spec_seed,
            planner: PlannerOverrides::default(),
        };
        let viewable = |afford: &mut BTreeMap<u32, Vec<Cell>>, id: u32| -> Result<Option<f64>, ScenegenError> {
            if let Entry::Vacant(e) = afford.entry(id) {
                e.insert(affording_cells(scene, id)?);
            }
            Ok(shortest_to_any(scene, &start, &afford[&id])?)
        };
        match task {
            TaskKind::ImageNav => {
                let goal = random_pose(&mut rng, scene, &free);
                let d = scene.geodesic_distance(scene.cell_at(start.x, start.y), scene.cell_at(goal.x, goal.y))?;
                let Some(d) = d.filter(|d| (IMAGENAV_MIN_M..=IMAGENAV_MAX_M).contains(d)) else { continue };
                let view = render(scene, &goal, ViewKind::Ego, AGENT_WIDTH, EGO_FOV_DEG).map_err(TaskError::from)?;
                out.push(make(Goal::ImageNav { pose: goal, view }, d));
            }
            TaskKind::Ar => {
                let Some(&target) = ids.choose(&mut rng) else { break };
                let inst = scene.instance(target).expect("listed instance");
                let (cx, cy) = scene.cell_center(inst.centroid);
                let hard = initial_visibility(scene, &start, target)? < AR_MAX_INITIAL_VISIBILITY
                    || start.distance_to_point(cx, cy) > AR_MIN_DISTANCE_M;
                if !hard {
                    continue;
                }
                let Some(d) = viewable(&mut afford, target)? else { continue };
                let labels = CLASS_NAMES.iter().map(|s| s.to_string()).collect();
                out.push(make(Goal::Ar { target, labels }, d));
            }
            TaskKind::InfoSeek => {
                let Some(&anchor) = ids.choose(&mut rng) else { break };
                let relation = if rng.random_bool(0.5) { Relation::Is } else { Relation::NearestTo };
                let attribute = if rng.random_bool(0.5) { Attribute::Color } else { Attribute::Class };
                let Some(queried) = Question::resolve(scene, relation, anchor) else { continue };
                let question = Question { relation, anchor, attribute, queried };
                let Some(answer) = question.answer(scene) else { continue };
                if initial_visibility(scene, &start, queried)? >= AR_MAX_INITIAL_VISIBILITY {
                    continue;
                }
                let Some(d) = viewable(&mut afford, queried)? else { continue };
                out.push(make(Goal::InfoSeek { question, answer }, d));
            }
        }
    }
    if out.len() < count {
        log::warn!("{scene_ref}: produced {} of {count} {} episodes", out.len(), task.label());
    }
    Ok(out)
}

/// Generates `scene_count` scenes with `episodes_per_scene` validated
/// episodes each. Scenes that cannot yield an episode are skipped.
pub fn gen_suite(
    task: TaskKind,
    scene_count: usize,
    episodes_per_scene: usize,
    seed: u64,
    params: &SceneParams,
) -> Result<Suite, ScenegenError> {
    let per_scene: Vec<(String, GridScene, Vec<EpisodeSpec>)> = (0..scene_count as u64)
        .into_par_iter()
        .map(|s| {
            let scene = gen_scene(mix(seed, &[domain::SUITE, s]), params)?;
            let name = format!("scenes/{}_{s:03}.txt", task.label());
            let eps = scene_episodes(task, &scene, &name, episodes_per_scene, seed, s)?;
            Ok((name, scene, eps))
        })
        .collect::<Result<_, ScenegenError>>()?;
    let mut suite = Suite::default();
    for (name, scene, eps) in per_scene {
        if eps.is_empty() {
            log::warn!("{name}: skipped, no valid episode");
            continue;
        }
        for mut e in eps {
            e.id = suite.episodes.len() as u64;
            suite.episodes.push(e);
        }
        suite.scenes.insert(name, Arc::new(scene));
    }
    Ok(suite)
}
