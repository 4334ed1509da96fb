use super::{Cell, GridScene};

const TIE_EPS: f64 = 1e-12;

/// One cell visited by a ray, with the distance at which the ray enters it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraversalStep {
    pub cell: Cell,
    pub t: f64,
}

/// Amanatides–Woo cell walk along a ray.
///
/// Yields the origin cell first (t = 0). When the ray crosses a cell corner
/// exactly, both side cells are yielded before the diagonal one, so corner
/// pinches between two obstacles are never passed through. The walk ends after
/// `max_len` meters or after the first out-of-bounds cell.
pub struct GridTraversal {
    cell: Cell,
    step: (i32, i32),
    t_max: (f64, f64),
    t_delta: (f64, f64),
    max_len: f64,
    width: i32,
    height: i32,
    pending: [Option<TraversalStep>; 3],
    started: bool,
    done: bool,
}

impl GridTraversal {
    pub fn new(scene: &GridScene, origin: (f64, f64), dir: (f64, f64), max_len: f64) -> Self {
        let cell = scene.cell_at(origin.0, origin.1);
        Self::on_grid(scene.cell_size(), scene.width(), scene.height(), cell, origin, dir, max_len)
    }

    /// Walk over a bare `width x height` grid; `cell` must contain `origin`.
    pub fn on_grid(
        cs: f64,
        width: usize,
        height: usize,
        cell: Cell,
        origin: (f64, f64),
        dir: (f64, f64),
        max_len: f64,
    ) -> Self {
        let axis = |o: f64, d: f64, c: i32| -> (i32, f64, f64) {
            if d > 0.0 {
                (1, (((c + 1) as f64) * cs - o).max(0.0) / d, cs / d)
            } else if d < 0.0 {
                (-1, (o - (c as f64) * cs).max(0.0) / -d, cs / -d)
            } else {
                (0, f64::INFINITY, f64::INFINITY)
            }
        };
        let (sx, tx, dx) = axis(origin.0, dir.0, cell.x);
        let (sy, ty, dy) = axis(origin.1, dir.1, cell.y);
        Self {
            cell,
            step: (sx, sy),
            t_max: (tx, ty),
            t_delta: (dx, dy),
            max_len,
            width: width as i32,
            height: height as i32,
            pending: [None; 3],
            started: false,
            done: false,
        }
    }

    fn out_of_bounds(&self, c: Cell) -> bool {
        c.x < 0 || c.y < 0 || c.x >= self.width || c.y >= self.height
    }
}

impl Iterator for GridTraversal {
    type Item = TraversalStep;

    fn next(&mut self) -> Option<TraversalStep> {
        if let Some(slot) = self.pending.iter_mut().find(|p| p.is_some()) {
            return slot.take();
        }
        if self.done {
            return None;
        }
        if !self.started {
            self.started = true;
            if self.out_of_bounds(self.cell) {
                self.done = true;
            }
            return Some(TraversalStep { cell: self.cell, t: 0.0 });
        }
        let (tx, ty) = self.t_max;
        let t = tx.min(ty);
        if !t.is_finite() || t > self.max_len {
            self.done = true;
            return None;
        }
        let (sx, sy) = self.step;
        let result;
        if (tx - ty).abs() <= TIE_EPS {
            let side_x = Cell::new(self.cell.x + sx, self.cell.y);
            let side_y = Cell::new(self.cell.x, self.cell.y + sy);
            self.cell = Cell::new(self.cell.x + sx, self.cell.y + sy);
            self.t_max = (tx + self.t_delta.0, ty + self.t_delta.1);
            self.pending = [
                Some(TraversalStep { cell: side_y, t }),
                Some(TraversalStep { cell: self.cell, t }),
                None,
            ];
            result = TraversalStep { cell: side_x, t };
            if self.out_of_bounds(side_x) || self.out_of_bounds(side_y) || self.out_of_bounds(self.cell) {
                self.done = true;
            }
        } else {
            if tx < ty {
                self.cell.x += sx;
                self.t_max.0 += self.t_delta.0;
            } else {
                self.cell.y += sy;
                self.t_max.1 += self.t_delta.1;
            }
            result = TraversalStep { cell: self.cell, t };
            if self.out_of_bounds(self.cell) {
                self.done = true;
            }
        }
        Some(result)
    }
}
