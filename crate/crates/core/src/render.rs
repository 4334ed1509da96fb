//! Column-scan observations by 2-D raycasting.
//!
//! An observation is a 1-D scan: one `(depth, class, instance)` record per
//! column. Ego views cover a limited field of view centred on the heading;
//! panoramas cover 360° and start (column 0) at the heading, sweeping right.
//!
//! Ray angles are computed in integer multiples of half a column whenever the
//! heading is a whole number of those units. That keeps a panorama rotated by
//! one turn a bit-exact cyclic shift of the original, and a panorama slice
//! bit-identical to the ego view with the same angular resolution.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::{GridScene, GridTraversal, Heading, Pose};

/// Sentinel depth for rays that hit nothing.
pub const MAX_RANGE_M: f64 = 20.0;
/// Depth difference at which the depth term of [`view_distance`] saturates.
pub const DEPTH_SCALE_M: f64 = 2.0;
/// Weight of the class-mismatch term in [`view_distance`]; depth gets the rest.
pub const CLASS_WEIGHT: f64 = 0.5;
/// Default ego field of view.
pub const EGO_FOV_DEG: f64 = 90.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RenderError {
    #[error("pose ({x:.3}, {y:.3}) lies outside the scene")]
    PoseOutside { x: f64, y: f64 },
    #[error("invalid view geometry: width {width}, fov {fov_deg}")]
    BadGeometry { width: usize, fov_deg: f64 },
    #[error("{n_views} views do not evenly divide a {width}-column panorama")]
    Indivisible { width: usize, n_views: usize },
    #[error("observation mismatch: {0}")]
    Mismatch(String),
    #[error("observation carries no pose")]
    MissingPose,
    #[error("not a panorama")]
    NotPanorama,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewKind {
    Ego,
    Panorama,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub depth_m: f64,
    pub class_id: u16,
    pub instance_id: u32,
}

impl Column {
    pub const EMPTY: Column = Column { depth_m: MAX_RANGE_M, class_id: 0, instance_id: 0 };
}

/// An ego view or a panorama.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub kind: ViewKind,
    pub fov_deg: f64,
    pub columns: Vec<Column>,
    /// Present for ground-truth renders.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose: Option<Pose>,
}

impl Observation {
    pub fn width(&self) -> usize {
        self.columns.len()
    }

    /// Angular width of one column in degrees.
    pub fn column_deg(&self) -> f64 {
        self.fov_deg / self.columns.len() as f64
    }

    /// Same observation with the pose stripped, as a model would emit it.
    pub fn without_pose(&self) -> Observation {
        Observation { pose: None, ..self.clone() }
    }

    /// Column index covering `rel_deg` (bearing relative to the heading,
    /// counter-clockwise positive), or `None` outside the field of view.
    pub fn column_at(&self, rel_deg: f64) -> Option<usize> {
        let w = self.width();
        let step = self.column_deg();
        match self.kind {
            ViewKind::Ego => {
                let rel = wrap180(rel_deg);
                let half = self.fov_deg / 2.0;
                if rel.abs() > half {
                    return None;
                }
                Some((((half - rel) / step).floor() as usize).min(w - 1))
            }
            ViewKind::Panorama => Some((((-rel_deg).rem_euclid(360.0) / step).floor() as usize).min(w - 1)),
        }
    }

    /// Bearing of column `i`'s centre relative to the heading, in degrees.
    pub fn column_bearing(&self, i: usize) -> f64 {
        let step = self.column_deg();
        match self.kind {
            ViewKind::Ego => self.fov_deg / 2.0 - (i as f64 + 0.5) * step,
            ViewKind::Panorama => -(i as f64 + 0.5) * step,
        }
    }

    /// Columns within `±half_deg` of the heading.
    pub fn central_columns(&self, half_deg: f64) -> impl Iterator<Item = &Column> + '_ {
        self.columns
            .iter()
            .enumerate()
            .filter(move |(i, _)| wrap180(self.column_bearing(*i)).abs() <= half_deg + 1e-9)
            .map(|(_, c)| c)
    }
}

/// Wraps degrees into (-180, 180].
pub fn wrap180(deg: f64) -> f64 {
    let r = deg.rem_euclid(360.0);
    if r > 180.0 {
        r - 360.0
    } else {
        r
    }
}

/// Absolute ray angles (radians) for columns whose relative offsets, in units
/// of half a column, are `offsets`.
fn ray_angles(heading_deg: f64, unit_deg: f64, offsets: impl Iterator<Item = i64>) -> Vec<f64> {
    let full = 360.0 / unit_deg;
    let h = heading_deg / unit_deg;
    let integral = |v: f64| (v - v.round()).abs() < 1e-9;
    if integral(full) && integral(h) {
        let full = full.round() as i64;
        let h = h.round() as i64;
        offsets
            .map(|o| ((h + o).rem_euclid(full) as f64 * unit_deg).to_radians())
            .collect()
    } else {
        offsets.map(|o| (heading_deg + o as f64 * unit_deg).to_radians()).collect()
    }
}

/// Absolute ray angle (radians) of every column of a view.
pub fn view_ray_angles(kind: ViewKind, heading_deg: f64, width: usize, fov_deg: f64) -> Vec<f64> {
    let w = width as i64;
    match kind {
        ViewKind::Ego => ray_angles(heading_deg, fov_deg / (2.0 * width as f64), (0..w).map(|j| w - 2 * j - 1)),
        ViewKind::Panorama => ray_angles(heading_deg, 360.0 / (2.0 * width as f64), (0..w).map(|i| -(2 * i + 1))),
    }
}

fn cast(scene: &GridScene, x: f64, y: f64, angle: f64) -> Column {
    let dir = (angle.cos(), angle.sin());
    for step in GridTraversal::new(scene, (x, y), dir, MAX_RANGE_M).skip(1) {
        if !scene.in_bounds(step.cell) {
            return Column::EMPTY;
        }
        if scene.blocks_ray(step.cell) {
            return Column {
                depth_m: step.t.min(MAX_RANGE_M),
                class_id: scene.class_at(step.cell),
                instance_id: scene.instance_at(step.cell),
            };
        }
    }
    Column::EMPTY
}

fn check_pose(scene: &GridScene, pose: &Pose) -> Result<(), RenderError> {
    let c = scene.cell_at(pose.x, pose.y);
    if !pose.x.is_finite() || !pose.y.is_finite() || !scene.in_bounds(c) {
        return Err(RenderError::PoseOutside { x: pose.x, y: pose.y });
    }
    Ok(())
}

/// Ego view: column `i` looks along `heading + fov/2 - (i + 0.5) * fov/width`.
pub fn raycast_view(scene: &GridScene, pose: &Pose, fov_deg: f64, width: usize) -> Result<Observation, RenderError> {
    if width == 0 || !(fov_deg > 0.0 && fov_deg <= 360.0) {
        return Err(RenderError::BadGeometry { width, fov_deg });
    }
    check_pose(scene, pose)?;
    let angles = view_ray_angles(ViewKind::Ego, pose.heading.degrees(), width, fov_deg);
    Ok(Observation {
        kind: ViewKind::Ego,
        fov_deg,
        columns: angles.iter().map(|&a| cast(scene, pose.x, pose.y, a)).collect(),
        pose: Some(*pose),
    })
}

/// 360° scan: column `i` looks along `heading - (i + 0.5) * 360/width`.
pub fn render_panorama(scene: &GridScene, pose: &Pose, width: usize) -> Result<Observation, RenderError> {
    if width == 0 {
        return Err(RenderError::BadGeometry { width, fov_deg: 360.0 });
    }
    check_pose(scene, pose)?;
    let angles = view_ray_angles(ViewKind::Panorama, pose.heading.degrees(), width, 360.0);
    Ok(Observation {
        kind: ViewKind::Panorama,
        fov_deg: 360.0,
        columns: angles.iter().map(|&a| cast(scene, pose.x, pose.y, a)).collect(),
        pose: Some(*pose),
    })
}

/// Renders whichever kind is requested; ego views use `fov_deg`.
pub fn render(scene: &GridScene, pose: &Pose, kind: ViewKind, width: usize, fov_deg: f64) -> Result<Observation, RenderError> {
    match kind {
        ViewKind::Ego => raycast_view(scene, pose, fov_deg, width),
        ViewKind::Panorama => render_panorama(scene, pose, width),
    }
}

/// Splits a panorama into `n_views` perspective views of `360/n` degrees.
/// View 0 is centred on the heading; view `k` on `heading - k * 360/n`.
pub fn panorama_to_views(p: &Observation, n_views: usize) -> Result<Vec<Observation>, RenderError> {
    if p.kind != ViewKind::Panorama {
        return Err(RenderError::NotPanorama);
    }
    let width = p.width();
    if n_views == 0 || !width.is_multiple_of(n_views) {
        return Err(RenderError::Indivisible { width, n_views });
    }
    let w = width / n_views;
    let start = width - w / 2;
    Ok((0..n_views)
        .map(|k| {
            let columns = (0..w).map(|j| p.columns[(start + k * w + j) % width]).collect();
            let pose = p.pose.map(|pose| Pose {
                heading: crate::scene::Heading::from_degrees(pose.heading.degrees() - k as f64 * 360.0 / n_views as f64)
                    .unwrap_or(pose.heading),
                ..pose
            });
            Observation { kind: ViewKind::Ego, fov_deg: 360.0 / n_views as f64, columns, pose }
        })
        .collect())
}

/// The sixteen `width`-column windows of a panorama that an agent would see
/// after `k` left turns, for `k` in `0..16`. Window `k` is centred on
/// `heading + k * 22.5°` and spans `width * 360 / W` degrees.
pub fn heading_windows(p: &Observation, width: usize) -> Result<Vec<Observation>, RenderError> {
    if p.kind != ViewKind::Panorama {
        return Err(RenderError::NotPanorama);
    }
    let total = p.width();
    let n = Heading::COUNT as usize;
    if !total.is_multiple_of(n) || width == 0 || width > total {
        return Err(RenderError::Indivisible { width: total, n_views: n });
    }
    let per_turn = total / n;
    let fov_deg = width as f64 * 360.0 / total as f64;
    Ok((0..n)
        .map(|k| {
            let start = (total - k * per_turn) % total + total - width / 2;
            let columns = (0..width).map(|j| p.columns[(start + j) % total]).collect();
            let pose = p.pose.map(|pose| Pose { heading: Heading::from_index(pose.heading.index() as i64 + k as i64), ..pose });
            Observation { kind: ViewKind::Ego, fov_deg, columns, pose }
        })
        .collect())
}

/// Inverse of [`panorama_to_views`].
pub fn stitch_views(views: &[Observation]) -> Result<Observation, RenderError> {
    let n = views.len();
    if n == 0 {
        return Err(RenderError::Mismatch("no views".into()));
    }
    let w = views[0].width();
    if views.iter().any(|v| v.width() != w || v.kind != ViewKind::Ego) {
        return Err(RenderError::Mismatch("views differ in width or kind".into()));
    }
    let width = n * w;
    let start = width - w / 2;
    let mut columns = vec![Column::EMPTY; width];
    for (k, v) in views.iter().enumerate() {
        for (j, c) in v.columns.iter().enumerate() {
            columns[(start + k * w + j) % width] = *c;
        }
    }
    Ok(Observation { kind: ViewKind::Panorama, fov_deg: 360.0, columns, pose: views[0].pose })
}

/// Observation distance in `[0, 1]`: per column, `0.5 * [class differs] +
/// 0.5 * min(1, |Δdepth| / 2 m)`, averaged over columns.
pub fn view_distance(a: &Observation, b: &Observation) -> Result<f64, RenderError> {
    if a.kind != b.kind || a.width() != b.width() {
        return Err(RenderError::Mismatch(format!(
            "{:?}/{} vs {:?}/{}",
            a.kind,
            a.width(),
            b.kind,
            b.width()
        )));
    }
    if a.width() == 0 {
        return Ok(0.0);
    }
    let total: f64 = a
        .columns
        .iter()
        .zip(&b.columns)
        .map(|(x, y)| {
            let class = if x.class_id != y.class_id { 1.0 } else { 0.0 };
            let depth = ((x.depth_m - y.depth_m).abs() / DEPTH_SCALE_M).min(1.0);
            CLASS_WEIGHT * class + (1.0 - CLASS_WEIGHT) * depth
        })
        .sum();
    Ok(total / a.width() as f64)
}

/// Fraction of `a`'s columns whose hit point, seen from `b`'s pose, falls
/// inside `b`'s field of view and agrees with `b`'s depth there within
/// `2 * cell_size`.
pub fn overlap_ratio(a: &Observation, b: &Observation, cell_size: f64) -> Result<f64, RenderError> {
    let pa = a.pose.ok_or(RenderError::MissingPose)?;
    let pb = b.pose.ok_or(RenderError::MissingPose)?;
    if a.width() == 0 {
        return Ok(0.0);
    }
    let tol = 2.0 * cell_size;
    let mut hits = 0usize;
    for (i, col) in a.columns.iter().enumerate() {
        let ang = (pa.heading.degrees() + a.column_bearing(i)).to_radians();
        let px = pa.x + col.depth_m * ang.cos();
        let py = pa.y + col.depth_m * ang.sin();
        let dx = px - pb.x;
        let dy = py - pb.y;
        let rel = dy.atan2(dx).to_degrees() - pb.heading.degrees();
        if let Some(j) = b.column_at(rel) {
            let range = (dx * dx + dy * dy).sqrt();
            if (range - b.columns[j].depth_m).abs() <= tol {
                hits += 1;
            }
        }
    }
    Ok(hits as f64 / a.width() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{Cell, Heading};

    fn room() -> GridScene {
        GridScene::walled(40, 40, 0.1).unwrap()
    }

    #[test]
    fn wall_ahead_depth() {
        let mut s = room();
        for y in 0..40 {
            s.set_wall(Cell::new(25, y));
        }
        // agent at x = 1.5, wall face at x = 2.5
        let pose = Pose::new(1.5, 2.05, Heading::default());
        let v = raycast_view(&s, &pose, 90.0, 64).unwrap();
        assert!((v.columns[31].depth_m - 1.0).abs() <= 0.1);
        assert!((v.columns[32].depth_m - 1.0).abs() <= 0.1);
        assert!(v.columns.iter().all(|c| c.class_id == 0));
    }

    #[test]
    fn objects_report_ids() {
        let mut s = room();
        s.add_instance(4, 3, "blue_sofa", &[Cell::new(20, 19), Cell::new(20, 20), Cell::new(20, 21)]).unwrap();
        let pose = s.pose_at(Cell::new(10, 20), Heading::default());
        let v = raycast_view(&s, &pose, 90.0, 64).unwrap();
        let mid = v.columns[32];
        assert_eq!((mid.class_id, mid.instance_id), (3, 4));
        assert!((mid.depth_m - 0.95).abs() < 1e-3);
    }

    #[test]
    fn outside_pose_rejected() {
        let s = room();
        let pose = Pose::new(-1.0, 2.0, Heading::default());
        assert!(matches!(raycast_view(&s, &pose, 90.0, 8), Err(RenderError::PoseOutside { .. })));
        assert!(raycast_view(&s, &Pose::new(1.0, 1.0, Heading::default()), 0.0, 8).is_err());
    }

    #[test]
    fn open_space_is_sentinel() {
        let s = GridScene::empty(10, 10, 0.1).unwrap();
        let v = render_panorama(&s, &Pose::new(0.55, 0.55, Heading::default()), 16).unwrap();
        assert!(v.columns.iter().all(|c| *c == Column::EMPTY));
    }

    #[test]
    fn distance_examples() {
        let s = room();
        let pose = s.pose_at(Cell::new(10, 12), Heading::from_index(3));
        let a = raycast_view(&s, &pose, 90.0, 64).unwrap();
        assert_eq!(view_distance(&a, &a).unwrap(), 0.0);
        let mut b = a.clone();
        b.columns[5].class_id = 9;
        assert!((view_distance(&a, &b).unwrap() - 0.5 / 64.0).abs() < 1e-15);
        let far = Observation {
            columns: a.columns.iter().map(|c| Column { depth_m: c.depth_m + 5.0, class_id: c.class_id + 1, instance_id: 0 }).collect(),
            ..a.clone()
        };
        assert_eq!(view_distance(&a, &far).unwrap(), 1.0);
        let narrow = raycast_view(&s, &pose, 90.0, 32).unwrap();
        assert!(view_distance(&a, &narrow).is_err());
    }

    #[test]
    fn overlap_identity_and_missing_pose() {
        let s = room();
        let pose = s.pose_at(Cell::new(10, 12), Heading::from_index(1));
        let a = raycast_view(&s, &pose, 90.0, 64).unwrap();
        assert_eq!(overlap_ratio(&a, &a, 0.1).unwrap(), 1.0);
        assert!(matches!(overlap_ratio(&a.without_pose(), &a, 0.1), Err(RenderError::MissingPose)));
    }

    #[test]
    fn panorama_split_rules() {
        let s = room();
        let p = render_panorama(&s, &s.pose_at(Cell::new(10, 10), Heading::default()), 64).unwrap();
        let views = panorama_to_views(&p, 4).unwrap();
        assert_eq!(views.len(), 4);
        assert!(views.iter().all(|v| v.width() == 16 && v.fov_deg == 90.0));
        assert_eq!(panorama_to_views(&p, 1).unwrap()[0].width(), 64);
        assert!(matches!(panorama_to_views(&p, 5), Err(RenderError::Indivisible { .. })));
        assert_eq!(stitch_views(&views).unwrap().columns, p.columns);
    }

    #[test]
    fn column_lookup_inverts_bearing() {
        let s = room();
        let pose = s.pose_at(Cell::new(10, 10), Heading::default());
        for v in [raycast_view(&s, &pose, 90.0, 64).unwrap(), render_panorama(&s, &pose, 64).unwrap()] {
            for i in 0..v.width() {
                assert_eq!(v.column_at(v.column_bearing(i)), Some(i));
            }
        }
    }
}
