use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{Cell, GridScene, SceneError};

const OFFSETS: [(i32, i32); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)];

/// Free 8-neighbours of `c` with their step cost. A diagonal step needs both
/// orthogonal cells it passes between to be free.
pub(crate) fn neighbors(scene: &GridScene, c: Cell) -> impl Iterator<Item = (Cell, f64)> + '_ {
    let cs = scene.cell_size();
    OFFSETS.iter().filter_map(move |&(dx, dy)| {
        let n = Cell::new(c.x + dx, c.y + dy);
        if !scene.is_free(n) {
            return None;
        }
        if dx != 0 && dy != 0 {
            if !scene.is_free(Cell::new(c.x + dx, c.y)) || !scene.is_free(Cell::new(c.x, c.y + dy)) {
                return None;
            }
            Some((n, cs * std::f64::consts::SQRT_2))
        } else {
            Some((n, cs))
        }
    })
}

#[derive(Copy, Clone, PartialEq)]
struct Entry {
    dist: f64,
    index: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.dist.total_cmp(&self.dist).then_with(|| other.index.cmp(&self.index))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Single-source geodesic distances over free cells.
#[derive(Debug, Clone)]
pub struct DistanceField {
    source: Cell,
    width: usize,
    dist: Vec<f64>,
    prev: Vec<usize>,
}

impl DistanceField {
    pub fn source(&self) -> Cell {
        self.source
    }

    /// Distance in meters, or `None` when `c` is unreachable or not free.
    pub fn get(&self, c: Cell) -> Option<f64> {
        if c.x < 0 || c.y < 0 || c.x as usize >= self.width {
            return None;
        }
        let i = c.y as usize * self.width + c.x as usize;
        self.dist.get(i).copied().filter(|d| d.is_finite())
    }

    /// Cells from the source to `target`, both inclusive.
    pub fn path_to(&self, target: Cell) -> Option<Vec<Cell>> {
        self.get(target)?;
        let mut i = target.y as usize * self.width + target.x as usize;
        let mut out = vec![target];
        while self.prev[i] != usize::MAX {
            i = self.prev[i];
            out.push(Cell::new((i % self.width) as i32, (i / self.width) as i32));
        }
        out.reverse();
        Some(out)
    }
}

impl GridScene {
    /// Dijkstra from `source` over free cells.
    pub fn distance_field(&self, source: Cell) -> Result<DistanceField, SceneError> {
        self.distance_field_multi(&[source])
    }

    /// Distance to the nearest of several free sources. `source()` of the
    /// result is the first one.
    pub fn distance_field_multi(&self, sources: &[Cell]) -> Result<DistanceField, SceneError> {
        let source = *sources.first().ok_or(SceneError::NoSources)?;
        let n = self.width() * self.height();
        let mut dist = vec![f64::INFINITY; n];
        let mut prev = vec![usize::MAX; n];
        let mut done = vec![false; n];
        let mut heap = BinaryHeap::new();
        for &src in sources {
            if !self.is_free(src) {
                return Err(SceneError::NotFree { x: src.x, y: src.y });
            }
            let s = self.index_of(src).expect("free cell is in bounds");
            dist[s] = 0.0;
            heap.push(Entry { dist: 0.0, index: s });
        }
        while let Some(Entry { dist: d, index }) = heap.pop() {
            if done[index] {
                continue;
            }
            done[index] = true;
            let c = self.cell_of_index(index);
            for (nb, cost) in neighbors(self, c) {
                let j = self.index_of(nb).expect("neighbour is in bounds");
                let nd = d + cost;
                if nd < dist[j] {
                    dist[j] = nd;
                    prev[j] = index;
                    heap.push(Entry { dist: nd, index: j });
                }
            }
        }
        Ok(DistanceField { source, width: self.width(), dist, prev })
    }

    /// Length of the shortest 8-connected free path between two free cells;
    /// `Ok(None)` when no path exists.
    pub fn geodesic_distance(&self, a: Cell, b: Cell) -> Result<Option<f64>, SceneError> {
        if !self.is_free(b) {
            return Err(SceneError::NotFree { x: b.x, y: b.y });
        }
        if a == b {
            return self.is_free(a).then_some(Some(0.0)).ok_or(SceneError::NotFree { x: a.x, y: a.y });
        }
        Ok(self.distance_field(a)?.get(b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_for_same_cell() {
        let s = GridScene::walled(10, 10, 0.1).unwrap();
        assert_eq!(s.geodesic_distance(Cell::new(3, 3), Cell::new(3, 3)).unwrap(), Some(0.0));
    }

    #[test]
    fn straight_corridor() {
        let s = GridScene::walled(12, 3, 0.1).unwrap();
        let d = s.geodesic_distance(Cell::new(2, 1), Cell::new(7, 1)).unwrap().unwrap();
        assert!((d - 0.5).abs() < 1e-12);
    }

    #[test]
    fn unreachable_is_none() {
        let mut s = GridScene::walled(9, 5, 0.1).unwrap();
        for y in 0..5 {
            s.set_wall(Cell::new(4, y));
        }
        assert_eq!(s.geodesic_distance(Cell::new(1, 1), Cell::new(7, 1)).unwrap(), None);
        assert!(s.geodesic_distance(Cell::new(4, 1), Cell::new(7, 1)).is_err());
    }

    #[test]
    fn no_corner_cutting() {
        // .#
        // #.
        let mut s = GridScene::empty(2, 2, 0.1).unwrap();
        s.set_wall(Cell::new(1, 0));
        s.set_wall(Cell::new(0, 1));
        assert_eq!(s.geodesic_distance(Cell::new(0, 0), Cell::new(1, 1)).unwrap(), None);
    }

    #[test]
    fn path_matches_distance() {
        let s = GridScene::walled(10, 10, 0.1).unwrap();
        let f = s.distance_field(Cell::new(1, 1)).unwrap();
        let p = f.path_to(Cell::new(5, 3)).unwrap();
        assert_eq!(p.first(), Some(&Cell::new(1, 1)));
        assert_eq!(p.last(), Some(&Cell::new(5, 3)));
        let cost: f64 = p
            .windows(2)
            .map(|w| if w[0].x != w[1].x && w[0].y != w[1].y { 0.1 * 2f64.sqrt() } else { 0.1 })
            .sum();
        assert!((cost - f.get(Cell::new(5, 3)).unwrap()).abs() < 1e-9);
    }
}
