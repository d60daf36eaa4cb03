//! Dense row-major 2D grid, used for background images, gains and metrics.

use std::ops::{Index, IndexMut};

/// Grid coordinate: row `r`, column `c`, both 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pixel {
    pub r: u32,
    pub c: u32,
}

impl Pixel {
    pub fn new(r: usize, c: usize) -> Self {
        Self { r: r as u32, c: c as u32 }
    }

    #[inline]
    pub fn index(&self, n_cols: usize) -> usize {
        self.r as usize * n_cols + self.c as usize
    }

    #[inline]
    pub fn chebyshev(&self, other: &Pixel) -> u32 {
        let dr = (self.r as i64 - other.r as i64).unsigned_abs();
        let dc = (self.c as i64 - other.c as i64).unsigned_abs();
        dr.max(dc) as u32
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    n_rows: usize,
    n_cols: usize,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn fill(n_rows: usize, n_cols: usize, value: T) -> Self {
        Self { n_rows, n_cols, data: vec![value; n_rows * n_cols] }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(n_rows: usize, n_cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), n_rows * n_cols, "grid data length mismatch");
        Self { n_rows, n_cols, data }
    }

    pub fn from_fn(n_rows: usize, n_cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(n_rows * n_cols);
        for r in 0..n_rows {
            for c in 0..n_cols {
                data.push(f(r, c));
            }
        }
        Self { n_rows, n_cols, data }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn iter(&self) -> std::slice::Iter<'_, T> {
        self.data.iter()
    }

    /// Row-major (row, col, value) iteration.
    pub fn enumerate(&self) -> impl Iterator<Item = (usize, usize, &T)> {
        let n_cols = self.n_cols;
        self.data
            .iter()
            .enumerate()
            .map(move |(i, v)| (i / n_cols, i % n_cols, v))
    }

    /// The 4-adjacent in-grid cells plus the cell itself.
    pub fn cross_neighbourhood(&self, r: usize, c: usize) -> impl Iterator<Item = (usize, usize)> {
        let (n_rows, n_cols) = (self.n_rows as isize, self.n_cols as isize);
        let (r, c) = (r as isize, c as isize);
        [(0, 0), (-1, 0), (1, 0), (0, -1), (0, 1)]
            .into_iter()
            .map(move |(dr, dc)| (r + dr, c + dc))
            .filter(move |&(rr, cc)| rr >= 0 && rr < n_rows && cc >= 0 && cc < n_cols)
            .map(|(rr, cc)| (rr as usize, cc as usize))
    }
}

impl<T> Index<(usize, usize)> for Grid<T> {
    type Output = T;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &T {
        debug_assert!(r < self.n_rows && c < self.n_cols);
        &self.data[r * self.n_cols + c]
    }
}

impl<T> IndexMut<(usize, usize)> for Grid<T> {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut T {
        debug_assert!(r < self.n_rows && c < self.n_cols);
        &mut self.data[r * self.n_cols + c]
    }
}
