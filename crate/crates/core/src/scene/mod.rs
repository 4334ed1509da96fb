//! Grid scenes, agent kinematics and geodesic queries.
//!
//! A [`GridScene`] is an occupancy grid with per-cell semantic class and
//! instance labels. Object cells are obstacles (occupancy `Wall`) that carry a
//! non-zero class and instance id; plain walls are class 0.

mod file;
mod geodesic;
mod kinematics;
mod path;
mod traverse;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use file::{parse_scene_file, serialize_scene};
pub use geodesic::DistanceField;
pub use kinematics::{apply_action, ActionPrimitive, ActionSequence, Heading, Pose, SequenceError, FORWARD_STEP_M, TURN_STEP_DEG};
pub use path::RealizedPath;
pub use traverse::GridTraversal;

/// Number of semantic classes including background (class 0).
pub const NUM_CLASSES: u16 = 13;

/// Cell of a `cs`-sized grid containing `(x, y)`, with boundary snapping as
/// in [`GridScene::cell_at`].
pub fn cell_containing(x: f64, y: f64, cs: f64) -> Cell {
    fn snap(u: f64) -> i32 {
        let r = u.round();
        if (u - r).abs() < 1e-9 {
            r as i32
        } else {
            u.floor() as i32
        }
    }
    Cell::new(snap(x / cs), snap(y / cs))
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SceneError {
    #[error("line {line}: malformed header: {msg}")]
    MalformedHeader { line: usize, msg: String },
    #[error("line {line}: expected {expected} glyphs, found {found}")]
    RaggedRow { line: usize, expected: usize, found: usize },
    #[error("line {line}: unknown glyph {glyph:?}")]
    UnknownGlyph { line: usize, glyph: char },
    #[error("line {line}: glyph {glyph:?} has no INST binding")]
    UnboundGlyph { line: usize, glyph: char },
    #[error("line {line}: instance glyph {glyph:?} does not appear in the grid")]
    InstanceNotInGrid { line: usize, glyph: char },
    #[error("line {line}: malformed instance line: {msg}")]
    MalformedInstance { line: usize, msg: String },
    #[error("line {line}: tab characters are not allowed")]
    Tab { line: usize },
    #[error("expected {expected} grid rows, found {found}")]
    MissingRows { expected: usize, found: usize },
    #[error("cell size must be positive, got {0}")]
    InvalidCellSize(f64),
    #[error("instance {0} is invalid: {1}")]
    InvalidInstance(u32, String),
    #[error("no source cells given")]
    NoSources,
    #[error("scene has {0} instances; the file format supports at most 26")]
    TooManyInstances(usize),
    #[error("cell ({x}, {y}) is not a free cell")]
    NotFree { x: i32, y: i32 },
    #[error("no path from ({ax}, {ay}) to ({bx}, {by})")]
    Unreachable { ax: i32, ay: i32, bx: i32, by: i32 },
    #[error("path realization did not converge near the goal")]
    PathRealization,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub x: i32,
    pub y: i32,
}

impl Cell {
    pub const fn new(x: i32, y: i32) -> Self {
        Self { x, y }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Occupancy {
    Free,
    Wall,
}

/// One labelled object in the scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: u32,
    pub class_id: u16,
    /// `<color>_<class>` for generated scenes, or a bare class name.
    pub display_name: String,
    pub centroid: Cell,
}

impl Instance {
    /// Class label: the part of the display name after the last `_`.
    pub fn class_name(&self) -> &str {
        self.display_name.rsplit('_').next().unwrap_or(&self.display_name)
    }

    /// Colour attribute, when the display name carries one.
    pub fn color(&self) -> Option<&str> {
        self.display_name.rsplit_once('_').map(|(c, _)| c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridScene {
    width: usize,
    height: usize,
    cell_size: f64,
    occupancy: Vec<Occupancy>,
    class_id: Vec<u16>,
    instance_id: Vec<u32>,
    instances: BTreeMap<u32, Instance>,
}

impl GridScene {
    /// An all-free scene.
    pub fn empty(width: usize, height: usize, cell_size: f64) -> Result<Self, SceneError> {
        if !cell_size.is_finite() || cell_size <= 0.0 {
            return Err(SceneError::InvalidCellSize(cell_size));
        }
        let n = width * height;
        Ok(Self {
            width,
            height,
            cell_size,
            occupancy: vec![Occupancy::Free; n],
            class_id: vec![0; n],
            instance_id: vec![0; n],
            instances: BTreeMap::new(),
        })
    }

    /// An all-free scene enclosed by a one-cell wall border.
    pub fn walled(width: usize, height: usize, cell_size: f64) -> Result<Self, SceneError> {
        let mut s = Self::empty(width, height, cell_size)?;
        for x in 0..width as i32 {
            s.set_wall(Cell::new(x, 0));
            s.set_wall(Cell::new(x, height as i32 - 1));
        }
        for y in 0..height as i32 {
            s.set_wall(Cell::new(0, y));
            s.set_wall(Cell::new(width as i32 - 1, y));
        }
        Ok(s)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn instances(&self) -> &BTreeMap<u32, Instance> {
        &self.instances
    }

    pub fn instance(&self, id: u32) -> Option<&Instance> {
        self.instances.get(&id)
    }

    pub fn in_bounds(&self, c: Cell) -> bool {
        c.x >= 0 && c.y >= 0 && (c.x as usize) < self.width && (c.y as usize) < self.height
    }

    fn idx(&self, c: Cell) -> usize {
        c.y as usize * self.width + c.x as usize
    }

    pub(crate) fn index_of(&self, c: Cell) -> Option<usize> {
        self.in_bounds(c).then(|| self.idx(c))
    }

    pub(crate) fn cell_of_index(&self, i: usize) -> Cell {
        Cell::new((i % self.width) as i32, (i / self.width) as i32)
    }

    pub fn occupancy(&self, c: Cell) -> Option<Occupancy> {
        self.index_of(c).map(|i| self.occupancy[i])
    }

    pub fn is_free(&self, c: Cell) -> bool {
        self.occupancy(c) == Some(Occupancy::Free)
    }

    pub fn class_at(&self, c: Cell) -> u16 {
        self.index_of(c).map_or(0, |i| self.class_id[i])
    }

    pub fn instance_at(&self, c: Cell) -> u32 {
        self.index_of(c).map_or(0, |i| self.instance_id[i])
    }

    /// True for cells a ray stops at: walls, objects and out-of-bounds.
    pub fn blocks_ray(&self, c: Cell) -> bool {
        !self.is_free(c)
    }

    pub fn set_wall(&mut self, c: Cell) {
        if let Some(i) = self.index_of(c) {
            self.occupancy[i] = Occupancy::Wall;
        }
    }

    pub fn set_free(&mut self, c: Cell) {
        if let Some(i) = self.index_of(c) {
            self.occupancy[i] = Occupancy::Free;
            self.class_id[i] = 0;
            self.instance_id[i] = 0;
        }
    }

    /// Places an object occupying `cells`. The cells become obstacles carrying
    /// the given class and instance id; the centroid is recomputed.
    pub fn add_instance(
        &mut self,
        id: u32,
        class_id: u16,
        display_name: &str,
        cells: &[Cell],
    ) -> Result<(), SceneError> {
        if id == 0 || class_id == 0 {
            return Err(SceneError::InvalidInstance(id, "id and class must be non-zero".into()));
        }
        if cells.is_empty() || cells.iter().any(|&c| !self.in_bounds(c)) {
            return Err(SceneError::InvalidInstance(id, "cells empty or out of bounds".into()));
        }
        if display_name.is_empty() || display_name.chars().any(char::is_whitespace) {
            return Err(SceneError::InvalidInstance(id, "display name must be one token".into()));
        }
        for &c in cells {
            let i = self.idx(c);
            self.occupancy[i] = Occupancy::Wall;
            self.class_id[i] = class_id;
            self.instance_id[i] = id;
        }
        self.instances.insert(
            id,
            Instance { id, class_id, display_name: display_name.to_string(), centroid: cells[0] },
        );
        self.refresh_centroid(id);
        Ok(())
    }

    /// Removes an instance and frees its cells.
    pub fn remove_instance(&mut self, id: u32) {
        if self.instances.remove(&id).is_some() {
            for i in 0..self.instance_id.len() {
                if self.instance_id[i] == id {
                    self.occupancy[i] = Occupancy::Free;
                    self.class_id[i] = 0;
                    self.instance_id[i] = 0;
                }
            }
        }
    }

    pub fn instance_cells(&self, id: u32) -> Vec<Cell> {
        (0..self.instance_id.len())
            .filter(|&i| self.instance_id[i] == id)
            .map(|i| self.cell_of_index(i))
            .collect()
    }

    /// Centroid = the instance cell nearest the mean of its cells (lowest
    /// row-major index on ties).
    fn refresh_centroid(&mut self, id: u32) {
        let cells = self.instance_cells(id);
        if cells.is_empty() {
            return;
        }
        let n = cells.len() as f64;
        let mx = cells.iter().map(|c| c.x as f64).sum::<f64>() / n;
        let my = cells.iter().map(|c| c.y as f64).sum::<f64>() / n;
        let mut best = cells[0];
        let mut best_d = f64::INFINITY;
        for &c in &cells {
            let d = (c.x as f64 - mx).powi(2) + (c.y as f64 - my).powi(2);
            if d < best_d - 1e-12 {
                best_d = d;
                best = c;
            }
        }
        if let Some(inst) = self.instances.get_mut(&id) {
            inst.centroid = best;
        }
    }

    pub fn free_cells(&self) -> Vec<Cell> {
        (0..self.occupancy.len())
            .filter(|&i| self.occupancy[i] == Occupancy::Free)
            .map(|i| self.cell_of_index(i))
            .collect()
    }

    pub fn free_area_m2(&self) -> f64 {
        let n = self.occupancy.iter().filter(|o| **o == Occupancy::Free).count();
        n as f64 * self.cell_size * self.cell_size
    }

    /// Metric centre of a cell.
    pub fn cell_center(&self, c: Cell) -> (f64, f64) {
        ((c.x as f64 + 0.5) * self.cell_size, (c.y as f64 + 0.5) * self.cell_size)
    }

    /// Cell containing a metric point. Points on a cell boundary belong to the
    /// cell on the positive side, with a tolerance that absorbs decimal
    /// rounding (e.g. `1.2 / 0.1`).
    pub fn cell_at(&self, x: f64, y: f64) -> Cell {
        cell_containing(x, y, self.cell_size)
    }

    pub fn is_free_point(&self, x: f64, y: f64) -> bool {
        x.is_finite() && y.is_finite() && self.is_free(self.cell_at(x, y))
    }

    /// Pose at the centre of `c`.
    pub fn pose_at(&self, c: Cell, heading: Heading) -> Pose {
        let (x, y) = self.cell_center(c);
        Pose { x, y, heading }
    }

    /// Checks the structural invariants.
    pub fn validate(&self) -> Result<(), SceneError> {
        if self.cell_size.is_nan() || self.cell_size <= 0.0 {
            return Err(SceneError::InvalidCellSize(self.cell_size));
        }
        for i in 0..self.instance_id.len() {
            let id = self.instance_id[i];
            if id == 0 {
                continue;
            }
            if self.class_id[i] == 0 {
                return Err(SceneError::InvalidInstance(id, "cell has instance but class 0".into()));
            }
            match self.instances.get(&id) {
                Some(inst) if inst.class_id == self.class_id[i] => {}
                Some(_) => return Err(SceneError::InvalidInstance(id, "class mismatch".into())),
                None => return Err(SceneError::InvalidInstance(id, "missing from table".into())),
            }
        }
        Ok(())
    }

    /// Number of 8-connected components of free cells (diagonals only through
    /// free orthogonal neighbours, same as geodesics).
    pub fn free_components(&self) -> usize {
        let mut seen = vec![false; self.occupancy.len()];
        let mut count = 0;
        for start in 0..self.occupancy.len() {
            if seen[start] || self.occupancy[start] != Occupancy::Free {
                continue;
            }
            count += 1;
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(i) = stack.pop() {
                let c = self.cell_of_index(i);
                for (n, _) in geodesic::neighbors(self, c) {
                    let j = self.idx(n);
                    if !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        count
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundary_points_snap_to_positive_cell() {
        let s = GridScene::empty(20, 20, 0.1).unwrap();
        assert_eq!(s.cell_at(1.2, 1.0), Cell::new(12, 10));
        assert_eq!(s.cell_at(1.19, 0.05), Cell::new(11, 0));
    }

    #[test]
    fn instance_bookkeeping() {
        let mut s = GridScene::walled(10, 10, 0.1).unwrap();
        s.add_instance(3, 2, "red_chair", &[Cell::new(2, 2), Cell::new(3, 2), Cell::new(4, 2)])
            .unwrap();
        let inst = s.instance(3).unwrap();
        assert_eq!(inst.centroid, Cell::new(3, 2));
        assert_eq!(inst.class_name(), "chair");
        assert_eq!(inst.color(), Some("red"));
        assert!(!s.is_free(Cell::new(3, 2)));
        s.validate().unwrap();
        s.remove_instance(3);
        assert!(s.is_free(Cell::new(3, 2)));
        assert!(s.instances().is_empty());
    }

    #[test]
    fn rejects_bad_cell_size() {
        assert!(GridScene::empty(3, 3, 0.0).is_err());
        assert!(GridScene::empty(3, 3, -1.0).is_err());
    }

    #[test]
    fn components_counted() {
        let mut s = GridScene::walled(9, 5, 0.1).unwrap();
        for y in 0..5 {
            s.set_wall(Cell::new(4, y));
        }
        assert_eq!(s.free_components(), 2);
    }
}
