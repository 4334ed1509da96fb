//! Panoramic trajectory dataset construction: peripheral waypoint selection
//! by leaf score with radius pruning, nearest-unvisited path generation, and
//! coverage-driven waypoint removal.

mod dataset;

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dataset::{
    filter_overlap, mean_overlap, read_dataset, read_manifest, write_dataset, Manifest, ManifestEntry, TrajectoryRecord,
    TrajectoryStep, MANIFEST_FILE,
};

use crate::render::{render_panorama, RenderError};
use crate::rng::{domain, stream};
use crate::scene::{apply_action, ActionPrimitive, Cell, GridScene, Heading, Pose, SceneError};

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("record {record}: integrity check failed: {reason}")]
    Integrity { record: String, reason: String },
    #[error("distance matrix is not square")]
    NonSquare,
    #[error("scene has no navigable cells")]
    NoNavigableArea,
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Render(#[from] RenderError),
}

/// Generation parameters. `rho` and `r_f` are given at building scale and
/// adapted to small scenes through `scale`: the effective radius is
/// `r_f * scale` and the effective density `rho / scale^2`, so the expected
/// number of points per pruning disc is unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub rho: f64,
    pub alpha: f64,
    pub r_f: f64,
    pub eta: f64,
    pub floor_min: usize,
    pub scale: f64,
    pub pano_width: usize,
}

impl Default for GenParams {
    fn default() -> Self {
        Self { rho: 4.0, alpha: 1.7, r_f: 3.0, eta: 0.2, floor_min: 40, scale: 0.5, pano_width: 256 }
    }
}

impl GenParams {
    pub fn radius(&self) -> f64 {
        self.r_f * self.scale
    }

    pub fn density(&self) -> f64 {
        self.rho / (self.scale * self.scale)
    }

    pub fn validate(&self) -> Result<(), DatagenError> {
        let ok = self.rho > 0.0
            && self.alpha >= 0.0
            && self.r_f > 0.0
            && self.eta > 0.0
            && self.eta <= 1.0
            && self.scale > 0.0
            && self.pano_width.is_multiple_of(4)
            && self.pano_width > 0;
        if ok {
            Ok(())
        } else {
            Err(DatagenError::InvalidParams(format!("{self:?}")))
        }
    }
}

/// `s(i) = ecc(i) + alpha * mean_j D_ij` over the finite entries `j != i`
/// of each row; a point with no finite partner scores 0.
pub fn leaf_scores(d: &[Vec<f64>], alpha: f64) -> Result<Vec<f64>, DatagenError> {
    let n = d.len();
    if d.iter().any(|row| row.len() != n) {
        return Err(DatagenError::NonSquare);
    }
    Ok((0..n)
        .map(|i| {
            let others: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| d[i][j]).filter(|x| x.is_finite()).collect();
            if others.is_empty() {
                return 0.0;
            }
            let ecc = others.iter().copied().fold(0.0, f64::max);
            let mean = others.iter().sum::<f64>() / others.len() as f64;
            ecc + alpha * mean
        })
        .collect())
}

/// Indices sorted by descending score, ties by ascending index.
fn rank(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Sampled points, their geodesic matrix and the pruned waypoint set.
#[derive(Debug, Clone)]
pub struct WaypointSet {
    pub points: Vec<Cell>,
    /// Geodesic distances; infinite across components.
    pub dist: Vec<Vec<f64>>,
    pub scores: Vec<f64>,
    /// Accepted waypoints (indices into `points`) in descending score order.
    pub selected: Vec<usize>,
    /// Number of points drawn.
    pub n_wp: usize,
    pub radius: f64,
}

impl WaypointSet {
    pub fn selected_cells(&self) -> Vec<Cell> {
        self.selected.iter().map(|&i| self.points[i]).collect()
    }
}

/// Geodesic matrix over `points` (one Dijkstra per point).
pub fn geodesic_matrix(scene: &GridScene, points: &[Cell]) -> Result<Vec<Vec<f64>>, DatagenError> {
    points
        .par_iter()
        .map(|&p| {
            let f = scene.distance_field(p)?;
            Ok(points.iter().map(|&q| f.get(q).unwrap_or(f64::INFINITY)).collect())
        })
        .collect()
}

/// Greedy radius pruning over `order`.
pub fn prune(dist: &[Vec<f64>], order: &[usize], radius: f64) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::new();
    for &i in order {
        if kept.iter().all(|&w| dist[i][w] >= radius) {
            kept.push(i);
        }
    }
    kept
}

/// Free cells whose eight neighbours are free too; all free cells when none
/// qualifies.
pub fn navigable_cells(scene: &GridScene) -> Vec<Cell> {
    let free = scene.free_cells();
    let clear: Vec<Cell> = free
        .iter()
        .copied()
        .filter(|c| (-1..=1).all(|dy| (-1..=1).all(|dx| scene.is_free(Cell { x: c.x + dx, y: c.y + dy }))))
        .collect();
    if clear.is_empty() {
        free
    } else {
        clear
    }
}

/// Stage 1: draws `max(floor_min, floor(density * S))` navigable cells
/// (distinct while possible), scores them and prunes to the waypoint set.
pub fn sample_waypoints<R: Rng>(scene: &GridScene, params: &GenParams, rng: &mut R) -> Result<WaypointSet, DatagenError> {
    params.validate()?;
    let free = navigable_cells(scene);
    if free.is_empty() {
        return Err(DatagenError::NoNavigableArea);
    }
    let n_wp = params.floor_min.max((params.density() * scene.free_area_m2()).floor() as usize).max(1);
    let points: Vec<Cell> = if n_wp <= free.len() {
        sample(rng, free.len(), n_wp).into_iter().map(|i| free[i]).collect()
    } else {
        (0..n_wp).map(|_| free[rng.random_range(0..free.len())]).collect()
    };
    let dist = geodesic_matrix(scene, &points)?;
    let scores = leaf_scores(&dist, params.alpha)?;
    let selected = prune(&dist, &rank(&scores), params.radius());
    Ok(WaypointSet { points, dist, scores, selected, n_wp, radius: params.radius() })
}

fn record_path(
    scene: &GridScene,
    name: &str,
    params: &GenParams,
    poses: &[Pose],
    actions: &[ActionPrimitive],
) -> Result<TrajectoryRecord, DatagenError> {
    let steps = poses
        .iter()
        .enumerate()
        .map(|(k, p)| {
            Ok(TrajectoryStep {
                pose: *p,
                action: if k == 0 { ActionPrimitive::Null } else { actions[k - 1] },
                panorama: render_panorama(scene, p, params.pano_width)?.columns,
            })
        })
        .collect::<Result<Vec<_>, DatagenError>>()?;
    Ok(TrajectoryRecord::new(name.to_string(), scene.cell_size(), params.clone(), steps))
}

/// Stages 2 and 3. Starting from a random leaf waypoint, repeatedly walks to
/// the geodesically nearest unvisited one, records the panoramic path,
/// removes every waypoint within the filter radius of the path, re-scores
/// the survivors on the original matrix and refreshes the unvisited set.
///
/// A start with no reachable partner yields a single-frame record when it has
/// not been covered yet; the next start is then drawn from the unvisited set.
pub fn generate_trajectories<R: Rng>(
    scene: &GridScene,
    name: &str,
    ws: &WaypointSet,
    params: &GenParams,
    rng: &mut R,
) -> Result<Vec<TrajectoryRecord>, DatagenError> {
    let n_leaf = ((params.eta * ws.n_wp as f64).ceil() as usize).max(1);
    let mut remaining: Vec<usize> = ws.selected.clone();
    let mut records = Vec::new();
    if remaining.is_empty() {
        return Ok(records);
    }
    let mut unvisited: Vec<usize> = remaining[..n_leaf.min(remaining.len())].to_vec();
    let mut c = unvisited[rng.random_range(0..unvisited.len())];
    let mut pose = scene.pose_at(ws.points[c], Heading::from_index(rng.random_range(0..16)));

    while !unvisited.is_empty() {
        let next = unvisited
            .iter()
            .copied()
            .filter(|&w| w != c && ws.dist[c][w].is_finite())
            .min_by(|&a, &b| ws.dist[c][a].total_cmp(&ws.dist[c][b]));
        let path_cells: Vec<Cell> = match next {
            Some(n) => {
                let path = scene.shortest_path(&pose, ws.points[n])?;
                records.push(record_path(scene, name, params, &path.poses, &path.actions)?);
                pose = *path.poses.last().expect("paths start at the start pose");
                c = n;
                path.poses.iter().map(|p| scene.cell_at(p.x, p.y)).collect()
            }
            None if unvisited.contains(&c) => {
                records.push(record_path(scene, name, params, &[pose], &[])?);
                vec![scene.cell_at(pose.x, pose.y)]
            }
            None => {
                c = unvisited[rng.random_range(0..unvisited.len())];
                pose = scene.pose_at(ws.points[c], pose.heading);
                continue;
            }
        };
        let near = scene.distance_field_multi(&path_cells)?;
        remaining.retain(|&w| near.get(ws.points[w]).is_none_or(|d| d >= ws.radius));
        let sub: Vec<Vec<f64>> = remaining.iter().map(|&i| remaining.iter().map(|&j| ws.dist[i][j]).collect()).collect();
        let scores = leaf_scores(&sub, params.alpha)?;
        remaining = rank(&scores).into_iter().map(|k| remaining[k]).collect();
        unvisited = remaining[..n_leaf.min(remaining.len())].to_vec();
    }
    Ok(records)
}

/// Runs all three stages on one scene with the stream `(seed, DATAGEN, index)`.
pub fn generate_scene_dataset(
    scene: &GridScene,
    name: &str,
    index: u64,
    params: &GenParams,
    seed: u64,
) -> Result<(WaypointSet, Vec<TrajectoryRecord>), DatagenError> {
    let mut rng = stream(seed, &[domain::DATAGEN, index]);
    let ws = sample_waypoints(scene, params, &mut rng)?;
    let records = generate_trajectories(scene, name, &ws, params, &mut rng)?;
    Ok((ws, records))
}

/// Result of checking a scene's waypoint set and records.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Audit {
    /// Waypoint pairs closer than the filter radius.
    pub spacing_violations: usize,
    /// Waypoints farther than the filter radius from every recorded pose.
    pub uncovered: usize,
    /// Recorded poses that are not free or not reproduced by replaying the
    /// recorded actions.
    pub replay_failures: usize,
    /// Records whose first action is not `Null` or that contain `Null` later.
    pub alignment_failures: usize,
}

impl Audit {
    pub fn passed(&self) -> bool {
        *self == Audit { spacing_violations: 0, uncovered: 0, replay_failures: 0, alignment_failures: 0 }
    }
}

pub fn audit(scene: &GridScene, ws: &WaypointSet, records: &[TrajectoryRecord]) -> Result<Audit, DatagenError> {
    let sel = &ws.selected;
    let mut spacing_violations = 0;
    for (a, &i) in sel.iter().enumerate() {
        for &j in &sel[a + 1..] {
            if ws.dist[i][j] < ws.radius {
                spacing_violations += 1;
            }
        }
    }
    let visited: Vec<Cell> = records.iter().flat_map(|r| r.steps.iter().map(|s| scene.cell_at(s.pose.x, s.pose.y))).collect();
    let uncovered = if visited.is_empty() {
        sel.len()
    } else {
        let near = scene.distance_field_multi(&visited)?;
        sel.iter().filter(|&&w| near.get(ws.points[w]).is_none_or(|d| d >= ws.radius)).count()
    };
    let mut replay_failures = 0;
    let mut alignment_failures = 0;
    for r in records {
        let Some(first) = r.steps.first() else {
            alignment_failures += 1;
            continue;
        };
        if first.action != ActionPrimitive::Null || r.steps[1..].iter().any(|s| s.action == ActionPrimitive::Null) {
            alignment_failures += 1;
        }
        let mut pose = first.pose;
        for s in &r.steps {
            if s.action != ActionPrimitive::Null {
                pose = apply_action(scene, &pose, s.action);
            }
            if pose != s.pose || !scene.is_free_point(s.pose.x, s.pose.y) {
                replay_failures += 1;
            }
        }
    }
    Ok(Audit { spacing_violations, uncovered, replay_failures, alignment_failures })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaf_score_arithmetic() {
        let d = vec![vec![0.0, 4.0], vec![4.0, 0.0]];
        assert_eq!(leaf_scores(&d, 1.7).unwrap(), vec![4.0 + 1.7 * 4.0; 2]);
        assert_eq!(leaf_scores(&[vec![0.0]], 1.7).unwrap(), vec![0.0]);
        let line = vec![vec![0.0, 1.0, 2.0], vec![1.0, 0.0, 1.0], vec![2.0, 1.0, 0.0]];
        let s = leaf_scores(&line, 1.7).unwrap();
        assert!((s[0] - 4.55).abs() < 1e-12 && (s[2] - 4.55).abs() < 1e-12);
        assert!((s[1] - 2.7).abs() < 1e-12);
        assert!(matches!(leaf_scores(&[vec![0.0, 1.0]], 1.7), Err(DatagenError::NonSquare)));
    }

    #[test]
    fn pruning_rule() {
        let far = vec![vec![0.0, 5.0], vec![5.0, 0.0]];
        assert_eq!(prune(&far, &[0, 1], 3.0), vec![0, 1]);
        let near = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        assert_eq!(prune(&near, &rank(&[2.0, 2.0]), 3.0), vec![0]);
    }

    #[test]
    fn two_waypoints_one_trajectory() {
        let scene = GridScene::walled(64, 5, 0.1).unwrap();
        let a = Cell::new(1, 2);
        let b = Cell::new(61, 2);
        let points = vec![a, b];
        let dist = geodesic_matrix(&scene, &points).unwrap();
        let ws = WaypointSet { scores: leaf_scores(&dist, 1.7).unwrap(), points, dist, selected: vec![0, 1], n_wp: 10, radius: 3.0 };
        let params = GenParams { scale: 1.0, pano_width: 16, ..GenParams::default() };
        let mut rng = stream(1, &[]);
        let recs = generate_trajectories(&scene, "corridor", &ws, &params, &mut rng).unwrap();
        assert_eq!(recs.len(), 1);
        assert!(audit(&scene, &ws, &recs).unwrap().passed());
    }

    #[test]
    fn single_waypoint_terminates() {
        let scene = GridScene::walled(8, 8, 0.1).unwrap();
        let points = vec![Cell::new(3, 3)];
        let dist = geodesic_matrix(&scene, &points).unwrap();
        let ws = WaypointSet { scores: vec![0.0], points, dist, selected: vec![0], n_wp: 1, radius: 1.5 };
        let params = GenParams { pano_width: 16, ..GenParams::default() };
        let recs = generate_trajectories(&scene, "room", &ws, &params, &mut stream(2, &[])).unwrap();
        assert!(recs.len() <= 1);
        assert!(recs.iter().all(|r| r.steps.len() == 1));
    }
}
