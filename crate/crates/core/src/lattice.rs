//! Sites and occupancy on the lattice cylinder Z_N x Z.
//!
//! Columns are numbered 1..=N and wrap; rows are unbounded integers. The
//! half-space of rows n2 <= 0 is permanently occupied and is represented
//! implicitly: a cluster only stores the rows its particles have reached.

use std::ops::{Add, Mul, Sub};

/// A lattice site. `n1` is the column (reduced to 1..=N on the cylinder),
/// `n2` the row. Two sites are the same cylinder point iff their reduced
/// forms are equal; all cluster APIs reduce columns on entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Site {
    pub n1: i64,
    pub n2: i64,
}

impl Site {
    pub fn new(n1: i64, n2: i64) -> Self {
        Self { n1, n2 }
    }

    /// Reduce the column into 1..=n.
    pub fn reduced(self, n: u32) -> Self {
        Self { n1: wrap_col(n, self.n1), n2: self.n2 }
    }
}

/// Map an arbitrary column index into 1..=n.
#[inline]
pub fn wrap_col(n: u32, c: i64) -> i64 {
    (c - 1).rem_euclid(i64::from(n)) + 1
}

/// The four lattice neighbours of `s` on the cylinder of circumference `n`,
/// in the order east, west, up, down. For n = 1 the horizontal neighbours
/// are the site itself, so horizontal moves degenerate to self-loops.
#[inline]
pub fn neighbors(n: u32, s: Site) -> [Site; 4] {
    let s = s.reduced(n);
    let east = if s.n1 == i64::from(n) { 1 } else { s.n1 + 1 };
    let west = if s.n1 == 1 { i64::from(n) } else { s.n1 - 1 };
    [
        Site::new(east, s.n2),
        Site::new(west, s.n2),
        Site::new(s.n1, s.n2 + 1),
        Site::new(s.n1, s.n2 - 1),
    ]
}

/// Discrete Laplacian: the mean of `f` over the four neighbours minus `f(s)`.
/// Generic so callers can probe real or complex fields.
pub fn discrete_laplacian<T, F>(n: u32, f: F, s: Site) -> T
where
    F: Fn(Site) -> T,
    T: Copy + Add<Output = T> + Sub<Output = T> + Mul<f64, Output = T>,
{
    let [e, w, u, d] = neighbors(n, s);
    (f(e) + f(w) + f(u) + f(d)) * 0.25 - f(s.reduced(n))
}

/// Dense per-site storage aligned with a cluster's grown window:
/// rows 1..=capacity, columns 1..=n, row-major.
#[derive(Debug, Clone)]
pub struct RowGrid<T> {
    n: u32,
    rows: usize,
    data: Vec<T>,
}

impl<T: Clone + Default> RowGrid<T> {
    pub fn new(n: u32) -> Self {
        Self { n, rows: 0, data: Vec::new() }
    }

    fn ensure_row(&mut self, row: usize) {
        if row > self.rows {
            let rows = (row.max(16)).next_power_of_two();
            self.data.resize(rows * self.n as usize, T::default());
            self.rows = rows;
        }
    }

    #[inline]
    fn slot(&self, s: Site) -> Option<usize> {
        if s.n2 < 1 || s.n2 as usize > self.rows {
            return None;
        }
        let c = wrap_col(self.n, s.n1) as usize;
        Some((s.n2 as usize - 1) * self.n as usize + (c - 1))
    }

    pub fn get(&self, s: Site) -> Option<&T> {
        self.slot(s).map(|i| &self.data[i])
    }

    pub fn set(&mut self, s: Site, v: T) {
        assert!(s.n2 >= 1, "RowGrid covers rows >= 1");
        self.ensure_row(s.n2 as usize);
        let i = self.slot(s).expect("row ensured");
        self.data[i] = v;
    }
}

/// Occupancy bitmap for a growing cluster on the cylinder.
///
/// Rows `n2 <= 0` are implicitly occupied (the initial half-space) and are
/// not stored. Row bookkeeping maintained per occupy call:
/// `max_row` (highest occupied row), `max_full_row` (highest row with all N
/// columns occupied) and `solid_height` (largest r such that rows 1..=r are
/// all full), the last of which bounds the region walks may traverse freely.
#[derive(Debug, Clone)]
pub struct CylinderCluster {
    n: u32,
    words_per_row: usize,
    bits: Vec<u64>,
    row_rows: usize,
    row_counts: Vec<u32>,
    particle_count: u64,
    max_row: i64,
    max_full_row: i64,
    solid_height: i64,
}

impl CylinderCluster {
    pub fn new(n: u32) -> Self {
        assert!(n >= 1, "circumference must be positive");
        Self {
            n,
            words_per_row: (n as usize + 63) / 64,
            bits: Vec::new(),
            row_rows: 0,
            row_counts: Vec::new(),
            particle_count: 0,
            max_row: 0,
            max_full_row: 0,
            solid_height: 0,
        }
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn particle_count(&self) -> u64 {
        self.particle_count
    }

    /// Highest occupied row (0 when no particle has settled).
    pub fn max_row(&self) -> i64 {
        self.max_row
    }

    /// Highest row in which every column is occupied (0 if none).
    pub fn max_full_row(&self) -> i64 {
        self.max_full_row
    }

    /// Largest r such that rows 1..=r are all full; the slab below is solid.
    pub fn solid_height(&self) -> i64 {
        self.solid_height
    }

    fn ensure_rows(&mut self, row: usize) {
        if row > self.row_rows {
            let rows = row.max(32).next_power_of_two();
            self.bits.resize(rows * self.words_per_row, 0);
            self.row_counts.resize(rows, 0);
            self.row_rows = rows;
        }
    }

    /// Occupancy of a stored row; `col` must already be in 1..=n, `row >= 1`.
    #[inline]
    pub fn occupied(&self, col: i64, row: i64) -> bool {
        debug_assert!((1..=i64::from(self.n)).contains(&col) && row >= 1);
        if row as usize > self.row_rows {
            return false;
        }
        let bit = col as usize - 1;
        let word = (row as usize - 1) * self.words_per_row + bit / 64;
        self.bits[word] >> (bit % 64) & 1 == 1
    }

    /// True iff `s` belongs to the cluster, including the implicit base.
    #[inline]
    pub fn membership(&self, s: Site) -> bool {
        if s.n2 <= 0 {
            return true;
        }
        self.occupied(wrap_col(self.n, s.n1), s.n2)
    }

    /// Number of occupied sites in a stored row (0 outside the window).
    pub fn row_count(&self, row: i64) -> u32 {
        if row < 1 {
            return self.n;
        }
        if row as usize > self.row_rows {
            return 0;
        }
        self.row_counts[row as usize - 1]
    }

    /// Mark `s` occupied. Must be a new site in a row >= 1.
    pub fn occupy(&mut self, s: Site) {
        let s = s.reduced(self.n);
        assert!(s.n2 >= 1, "cannot occupy the implicit base");
        self.ensure_rows(s.n2 as usize);
        let bit = s.n1 as usize - 1;
        let word = (s.n2 as usize - 1) * self.words_per_row + bit / 64;
        let mask = 1u64 << (bit % 64);
        assert!(self.bits[word] & mask == 0, "site occupied twice: {s:?}");
        self.bits[word] |= mask;
        self.particle_count += 1;
        self.max_row = self.max_row.max(s.n2);
        let rc = &mut self.row_counts[s.n2 as usize - 1];
        *rc += 1;
        if *rc == self.n {
            self.max_full_row = self.max_full_row.max(s.n2);
            while (self.solid_height as usize) < self.row_rows
                && self.row_counts[self.solid_height as usize] == self.n
            {
                self.solid_height += 1;
            }
        }
    }

    /// Occupied sites in deterministic row-major order (rows ascending).
    pub fn iter_occupied(&self) -> impl Iterator<Item = Site> + '_ {
        (1..=self.max_row).flat_map(move |row| {
            (1..=i64::from(self.n))
                .filter(move |&c| self.occupied(c, row))
                .map(move |c| Site::new(c, row))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use proptest::prelude::*;

    #[test]
    fn neighbors_wrap_and_degenerate() {
        let nb = neighbors(8, Site::new(8, 3));
        assert_eq!(nb[0], Site::new(1, 3));
        assert_eq!(nb[1], Site::new(7, 3));
        assert_eq!(nb[2], Site::new(8, 4));
        assert_eq!(nb[3], Site::new(8, 2));

        // N = 1: horizontal moves are self-loops.
        let nb = neighbors(1, Site::new(1, 0));
        assert_eq!(nb[0], Site::new(1, 0));
        assert_eq!(nb[1], Site::new(1, 0));
    }

    #[test]
    fn membership_reduces_columns() {
        let mut c = CylinderCluster::new(6);
        c.occupy(Site::new(2, 1));
        assert!(c.membership(Site::new(8, 1)));
        assert!(c.membership(Site::new(-4, 1)));
        assert!(!c.membership(Site::new(3, 1)));
        assert!(c.membership(Site::new(3, 0)));
        assert!(c.membership(Site::new(3, -1000)));
    }

    #[test]
    fn row_bookkeeping_tracks_holes() {
        let mut c = CylinderCluster::new(3);
        for col in 1..=3 {
            c.occupy(Site::new(col, 2));
        }
        // Row 2 full, row 1 still open: solid height stays 0.
        assert_eq!(c.max_full_row(), 2);
        assert_eq!(c.solid_height(), 0);
        c.occupy(Site::new(1, 1));
        c.occupy(Site::new(2, 1));
        c.occupy(Site::new(3, 1));
        assert_eq!(c.solid_height(), 2);
        assert_eq!(c.max_row(), 2);
        assert_eq!(c.particle_count(), 6);
    }

    #[test]
    fn laplacian_annihilates_harmonic_building_blocks() {
        // f(n) = e^{2 pi i k n1 / N} e^{(q/N) n2} must be discrete harmonic
        // when q solves 1 - cos(2 pi k / N) = cosh(q / N) - 1.
        for &(k, n) in &[(1u32, 4u32), (1, 8), (3, 16), (7, 64)] {
            let q = crate::harmonic::solve_q(i64::from(k), n).unwrap();
            let f = |s: Site| {
                let theta = 2.0 * std::f64::consts::PI * f64::from(k) * s.n1 as f64 / f64::from(n);
                Complex64::new(0.0, theta).exp() * (q / f64::from(n) * s.n2 as f64).exp()
            };
            for s in [Site::new(1, 0), Site::new(2, 3), Site::new(i64::from(n), -2)] {
                let lap = discrete_laplacian(n, f, s);
                assert!(lap.norm() < 1e-10 * f(s).norm().max(1.0), "lap = {lap}");
            }
        }
    }

    proptest! {
        #[test]
        fn neighbor_relation_is_symmetric(n in 1u32..40, c in -90i64..90, r in -40i64..40) {
            let s = Site::new(c, r).reduced(n);
            for nb in neighbors(n, s) {
                let back = neighbors(n, nb);
                prop_assert!(back.iter().filter(|t| t.reduced(n) == s).count() >= 1);
            }
        }

        #[test]
        fn wrap_col_is_idempotent_and_in_range(n in 1u32..50, c in -200i64..200) {
            let w = wrap_col(n, c);
            prop_assert!((1..=i64::from(n)).contains(&w));
            prop_assert_eq!(wrap_col(n, w), w);
        }
    }
}
