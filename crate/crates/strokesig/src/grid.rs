//! Dense 2-D grids and integer pixel coordinates.
//!
//! Everything raster-shaped in the crate (gray images, binary masks,
//! distance transforms, ground-truth owner maps) is a [`Grid`] in row-major
//! order. Coordinates are `(x, y)` with `x` growing rightwards and `y`
//! growing downwards, matching image conventions.

use serde::{Deserialize, Serialize};

/// Integer pixel coordinate. Signed so neighbor arithmetic never wraps;
/// grids reject out-of-range values at the accessor level.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize, Deserialize)]
pub struct Pixel {
    pub x: i32,
    pub y: i32,
}

impl Pixel {
    pub const fn new(x: i32, y: i32) -> Self {
        Pixel { x, y }
    }

    /// Center of the pixel in continuous coordinates.
    pub fn center(&self) -> (f64, f64) {
        (self.x as f64, self.y as f64)
    }

    /// Euclidean distance between pixel centers.
    pub fn dist(&self, other: Pixel) -> f64 {
        let dx = (self.x - other.x) as f64;
        let dy = (self.y - other.y) as f64;
        dx.hypot(dy)
    }

    /// The 8 neighbors in clockwise order starting from north.
    pub fn neighbors8(&self) -> [Pixel; 8] {
        let (x, y) = (self.x, self.y);
        [
            Pixel::new(x, y - 1),
            Pixel::new(x + 1, y - 1),
            Pixel::new(x + 1, y),
            Pixel::new(x + 1, y + 1),
            Pixel::new(x, y + 1),
            Pixel::new(x - 1, y + 1),
            Pixel::new(x - 1, y),
            Pixel::new(x - 1, y - 1),
        ]
    }
}

/// Row-major dense grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    /// Grid of the given size with every cell set to `fill`.
    pub fn filled(width: usize, height: usize, fill: T) -> Self {
        Grid { width, height, data: vec![fill; width * height] }
    }

    /// Wrap an existing row-major buffer. Panics if the length is wrong.
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), width * height, "grid buffer length mismatch");
        Grid { width, height, data }
    }
}

impl<T> Grid<T> {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// True when `(x, y)` lies inside the grid.
    pub fn in_bounds(&self, x: i32, y: i32) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
    }

    pub fn contains(&self, p: Pixel) -> bool {
        self.in_bounds(p.x, p.y)
    }

    /// Unchecked-by-bounds accessor for in-range coordinates; panics when
    /// out of range.
    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.width + x]
    }

    pub fn get_mut(&mut self, x: usize, y: usize) -> &mut T {
        &mut self.data[y * self.width + x]
    }

    /// Bounds-checked accessor for signed coordinates.
    pub fn at(&self, p: Pixel) -> Option<&T> {
        if self.contains(p) {
            Some(self.get(p.x as usize, p.y as usize))
        } else {
            None
        }
    }

    pub fn set(&mut self, p: Pixel, value: T) {
        assert!(self.contains(p), "pixel {p:?} out of bounds");
        self.data[p.y as usize * self.width + p.x as usize] = value;
    }

    /// Iterate over all cells as `(Pixel, &T)` in row-major order.
    pub fn iter_cells(&self) -> impl Iterator<Item = (Pixel, &T)> {
        let w = self.width;
        self.data
            .iter()
            .enumerate()
            .map(move |(i, v)| (Pixel::new((i % w) as i32, (i / w) as i32), v))
    }

    pub fn raw(&self) -> &[T] {
        &self.data
    }

    pub fn raw_mut(&mut self) -> &mut [T] {
        &mut self.data
    }
}

impl Grid<bool> {
    /// Pixels set to `true`, in row-major order.
    pub fn true_pixels(&self) -> Vec<Pixel> {
        self.iter_cells().filter(|(_, v)| **v).map(|(p, _)| p).collect()
    }

    /// Number of `true` cells.
    pub fn count_true(&self) -> usize {
        self.data.iter().filter(|v| **v).count()
    }

    /// Test a signed coordinate, treating out-of-bounds as `false`.
    pub fn is_set(&self, x: i32, y: i32) -> bool {
        self.in_bounds(x, y) && *self.get(x as usize, y as usize)
    }
}

/// 8-connected components of the `true` region, each component a sorted
/// pixel list; components are ordered by their smallest pixel.
pub fn connected_components(mask: &Grid<bool>) -> Vec<Vec<Pixel>> {
    let mut seen = Grid::filled(mask.width(), mask.height(), false);
    let mut components = Vec::new();
    for y in 0..mask.height() as i32 {
        for x in 0..mask.width() as i32 {
            if !mask.is_set(x, y) || seen.is_set(x, y) {
                continue;
            }
            let mut stack = vec![Pixel::new(x, y)];
            seen.set(Pixel::new(x, y), true);
            let mut comp = Vec::new();
            while let Some(p) = stack.pop() {
                comp.push(p);
                for n in p.neighbors8() {
                    if mask.is_set(n.x, n.y) && !seen.is_set(n.x, n.y) {
                        seen.set(n, true);
                        stack.push(n);
                    }
                }
            }
            comp.sort();
            components.push(comp);
        }
    }
    components
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn neighbors_are_the_eight_surrounding_pixels() {
        let p = Pixel::new(3, 7);
        let n = p.neighbors8();
        assert_eq!(n.len(), 8);
        for q in n {
            assert!((q.x - p.x).abs() <= 1 && (q.y - p.y).abs() <= 1);
            assert_ne!(q, p);
        }
        // All distinct.
        let mut set: Vec<Pixel> = n.to_vec();
        set.sort();
        set.dedup();
        assert_eq!(set.len(), 8);
    }

    #[test]
    fn grid_round_trips_values() {
        let mut g = Grid::filled(4, 3, 0u8);
        g.set(Pixel::new(2, 1), 9);
        assert_eq!(*g.get(2, 1), 9);
        assert_eq!(g.at(Pixel::new(2, 1)), Some(&9));
        assert_eq!(g.at(Pixel::new(4, 0)), None);
        assert_eq!(g.at(Pixel::new(-1, 0)), None);
    }

    #[test]
    fn components_respect_8_connectivity() {
        // Two diagonal pixels touch under 8-connectivity; a gap of one
        // pixel does not.
        let mut g = Grid::filled(5, 5, false);
        g.set(Pixel::new(0, 0), true);
        g.set(Pixel::new(1, 1), true);
        g.set(Pixel::new(3, 3), true);
        let comps = connected_components(&g);
        assert_eq!(comps.len(), 2);
        assert_eq!(comps[0], vec![Pixel::new(0, 0), Pixel::new(1, 1)]);
        assert_eq!(comps[1], vec![Pixel::new(3, 3)]);
    }

    #[test]
    fn components_of_empty_mask_is_empty() {
        let g = Grid::filled(3, 3, false);
        assert!(connected_components(&g).is_empty());
    }
}
