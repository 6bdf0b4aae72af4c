//! Sparse weight storage and the linear-algebra kernels built on it.
//!
//! A [`SparseMatrix`] is a [`ConnectionSet`] (sorted, unique positions) paired
//! with one value per position. Every kernel walks the entries in stored
//! order, so results are bitwise reproducible for a given input.

use std::ops::Range;

use serde::Serialize;

use crate::error::{Error, Result};

/// A single connection `row -> col` in a weight matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Position {
    pub row: u32,
    pub col: u32,
}

impl Position {
    pub fn new(row: usize, col: usize) -> Self {
        Position {
            row: row as u32,
            col: col as u32,
        }
    }

    #[inline]
    pub fn row(self) -> usize {
        self.row as usize
    }

    #[inline]
    pub fn col(self) -> usize {
        self.col as usize
    }
}

fn check_shape(n_rows: usize, n_cols: usize) -> Result<()> {
    if n_rows == 0 || n_cols == 0 {
        return Err(Error::EmptyShape { n_rows, n_cols });
    }
    if n_rows > u32::MAX as usize || n_cols > u32::MAX as usize {
        return Err(Error::shape("shape", format!("{n_rows}x{n_cols} exceeds u32 indexing")));
    }
    Ok(())
}

/// The position set of a sparse layer, without values.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConnectionSet {
    n_rows: usize,
    n_cols: usize,
    positions: Vec<Position>,
}

impl ConnectionSet {
    /// Builds a set from arbitrary-order positions, rejecting duplicates and
    /// out-of-bounds entries.
    pub fn new(n_rows: usize, n_cols: usize, mut positions: Vec<Position>) -> Result<Self> {
        check_shape(n_rows, n_cols)?;
        for p in &positions {
            if p.row() >= n_rows || p.col() >= n_cols {
                return Err(Error::OutOfBounds {
                    row: p.row(),
                    col: p.col(),
                    n_rows,
                    n_cols,
                });
            }
        }
        positions.sort_unstable();
        if let Some(w) = positions.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::DuplicatePosition {
                row: w[0].row(),
                col: w[0].col(),
            });
        }
        Ok(ConnectionSet {
            n_rows,
            n_cols,
            positions,
        })
    }

    pub fn empty(n_rows: usize, n_cols: usize) -> Result<Self> {
        Self::new(n_rows, n_cols, Vec::new())
    }

    /// Every position of an `n_rows x n_cols` grid.
    pub fn full(n_rows: usize, n_cols: usize) -> Result<Self> {
        check_shape(n_rows, n_cols)?;
        let positions = (0..n_rows)
            .flat_map(|r| (0..n_cols).map(move |c| Position::new(r, c)))
            .collect();
        Ok(ConnectionSet {
            n_rows,
            n_cols,
            positions,
        })
    }

    /// Caller guarantees canonical order, uniqueness and bounds.
    pub(crate) fn from_sorted_unchecked(n_rows: usize, n_cols: usize, positions: Vec<Position>) -> Self {
        debug_assert!(positions.windows(2).all(|w| w[0] < w[1]));
        debug_assert!(positions.iter().all(|p| p.row() < n_rows && p.col() < n_cols));
        ConnectionSet {
            n_rows,
            n_cols,
            positions,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_rows, self.n_cols)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Position] {
        &self.positions
    }

    /// Number of positions of the full grid.
    pub fn capacity(&self) -> usize {
        self.n_rows * self.n_cols
    }

    pub fn density(&self) -> f64 {
        self.len() as f64 / self.capacity() as f64
    }

    pub fn contains(&self, p: Position) -> bool {
        self.positions.binary_search(&p).is_ok()
    }

    /// Index range of the stored positions that lie in `row`.
    pub fn row_range(&self, row: usize) -> Range<usize> {
        let r = row as u32;
        let start = self.positions.partition_point(|p| p.row < r);
        let end = start + self.positions[start..].partition_point(|p| p.row == r);
        start..end
    }

    /// Size of the intersection with `other`, by linear merge.
    pub fn intersection_len(&self, other: &ConnectionSet) -> usize {
        let (a, b) = (&self.positions, &other.positions);
        let (mut i, mut j, mut n) = (0, 0, 0);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    n += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        n
    }
}

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DenseMatrix {
    n_rows: usize,
    n_cols: usize,
    values: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        DenseMatrix {
            n_rows,
            n_cols,
            values: vec![0.0; n_rows * n_cols],
        }
    }

    pub fn from_vec(n_rows: usize, n_cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_rows * n_cols {
            return Err(Error::shape(
                "DenseMatrix::from_vec",
                format!("{} values for {n_rows}x{n_cols}", values.len()),
            ));
        }
        Ok(DenseMatrix {
            n_rows,
            n_cols,
            values,
        })
    }

    /// Builds a matrix from equal-length rows. Panics on ragged input.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let n_cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut values = Vec::with_capacity(rows.len() * n_cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), n_cols, "ragged rows");
            values.extend_from_slice(r.as_ref());
        }
        DenseMatrix {
            n_rows: rows.len(),
            n_cols,
            values,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_rows, self.n_cols)
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.n_cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.values[r * self.n_cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.n_cols..(r + 1) * self.n_cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.values[r * self.n_cols..(r + 1) * self.n_cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    /// Largest absolute elementwise difference. Shapes must agree.
    pub fn max_abs_diff(&self, other: &DenseMatrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// A sparse weight matrix: one value per stored connection.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    mask: ConnectionSet,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn from_triplets<I>(n_rows: usize, n_cols: usize, triplets: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        check_shape(n_rows, n_cols)?;
        let mut entries: Vec<(Position, f64)> = Vec::new();
        for (row, col, value) in triplets {
            if row >= n_rows || col >= n_cols {
                return Err(Error::OutOfBounds {
                    row,
                    col,
                    n_rows,
                    n_cols,
                });
            }
            entries.push((Position::new(row, col), value));
        }
        entries.sort_by_key(|e| e.0);
        if let Some(w) = entries.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::DuplicatePosition {
                row: w[0].0.row(),
                col: w[0].0.col(),
            });
        }
        let (positions, values) = entries.into_iter().unzip();
        Ok(SparseMatrix {
            mask: ConnectionSet::from_sorted_unchecked(n_rows, n_cols, positions),
            values,
        })
    }

    pub fn from_mask(mask: ConnectionSet, values: Vec<f64>) -> Result<Self> {
        if values.len() != mask.len() {
            return Err(Error::shape(
                "SparseMatrix::from_mask",
                format!("{} values for {} positions", values.len(), mask.len()),
            ));
        }
        Ok(SparseMatrix { mask, values })
    }

    pub fn zeros(mask: ConnectionSet) -> Self {
        let values = vec![0.0; mask.len()];
        SparseMatrix { mask, values }
    }

    /// Nonzero entries of a dense matrix.
    pub fn from_dense(d: &DenseMatrix) -> Result<Self> {
        let triplets = (0..d.n_rows()).flat_map(|r| {
            d.row(r)
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(move |(c, v)| (r, c, *v))
        });
        Self::from_triplets(d.n_rows(), d.n_cols(), triplets)
    }

    pub fn mask(&self) -> &ConnectionSet {
        &self.mask
    }

    pub fn into_parts(self) -> (ConnectionSet, Vec<f64>) {
        (self.mask, self.values)
    }

    pub fn n_rows(&self) -> usize {
        self.mask.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.mask.n_cols
    }

    pub fn shape(&self) -> (usize, usize) {
        self.mask.shape()
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn positions(&self) -> &[Position] {
        &self.mask.positions
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (Position, f64)> + '_ {
        self.mask.positions.iter().copied().zip(self.values.iter().copied())
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        self.iter().map(|(p, v)| (p.row(), p.col(), v)).collect()
    }

    pub fn densify(&self) -> DenseMatrix {
        let mut d = DenseMatrix::zeros(self.n_rows(), self.n_cols());
        for (p, v) in self.iter() {
            d.set(p.row(), p.col(), v);
        }
        d
    }

    /// `X · W` for dense `X` (B x n_in) and this matrix (n_in x n_out).
    pub fn left_mul(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        dense_times_sparse(x, self)
    }
}

/// `Y = X · W`.
pub fn dense_times_sparse(x: &DenseMatrix, w: &SparseMatrix) -> Result<DenseMatrix> {
    let mut y = DenseMatrix::zeros(x.n_rows(), w.n_cols());
    accumulate_dense_times_sparse(x, w, &mut y)?;
    Ok(y)
}

/// `Y += X · W`.
pub fn accumulate_dense_times_sparse(x: &DenseMatrix, w: &SparseMatrix, y: &mut DenseMatrix) -> Result<()> {
    if x.n_cols() != w.n_rows() || y.shape() != (x.n_rows(), w.n_cols()) {
        return Err(Error::shape(
            "dense_times_sparse",
            format!("X {:?} · W {:?} -> Y {:?}", x.shape(), w.shape(), y.shape()),
        ));
    }
    let positions = w.positions();
    for b in 0..x.n_rows() {
        let xr = x.row(b);
        let yr = y.row_mut(b);
        for (p, &v) in positions.iter().zip(w.values()) {
            yr[p.col()] += xr[p.row()] * v;
        }
    }
    Ok(())
}

/// `dX = dY · Wᵀ`.
pub fn dense_times_sparse_transposed(dy: &DenseMatrix, w: &SparseMatrix) -> Result<DenseMatrix> {
    let mut dx = DenseMatrix::zeros(dy.n_rows(), w.n_rows());
    accumulate_dense_times_sparse_transposed(dy, w, &mut dx)?;
    Ok(dx)
}

/// `dX += dY · Wᵀ`.
pub fn accumulate_dense_times_sparse_transposed(
    dy: &DenseMatrix,
    w: &SparseMatrix,
    dx: &mut DenseMatrix,
) -> Result<()> {
    if dy.n_cols() != w.n_cols() || dx.shape() != (dy.n_rows(), w.n_rows()) {
        return Err(Error::shape(
            "dense_times_sparse_transposed",
            format!("dY {:?} · Wᵀ {:?} -> dX {:?}", dy.shape(), w.shape(), dx.shape()),
        ));
    }
    let positions = w.positions();
    for b in 0..dy.n_rows() {
        let dyr = dy.row(b);
        let dxr = dx.row_mut(b);
        for (p, &v) in positions.iter().zip(w.values()) {
            dxr[p.row()] += dyr[p.col()] * v;
        }
    }
    Ok(())
}

/// Gradient of a loss w.r.t. a sparse `W` given its input `X` and output
/// gradient `dY`, evaluated only on `mask`: `(Xᵀ dY)[i, j]` for each `(i, j)`.
pub fn masked_grad(x: &DenseMatrix, dy: &DenseMatrix, mask: &ConnectionSet) -> Result<SparseMatrix> {
    let mut g = SparseMatrix::zeros(mask.clone());
    accumulate_masked_grad(x, dy, &mut g)?;
    Ok(g)
}

/// `G += (Xᵀ dY)` restricted to the positions of `G`.
pub fn accumulate_masked_grad(x: &DenseMatrix, dy: &DenseMatrix, g: &mut SparseMatrix) -> Result<()> {
    if x.n_rows() != dy.n_rows() || x.n_cols() != g.n_rows() || dy.n_cols() != g.n_cols() {
        return Err(Error::shape(
            "masked_grad",
            format!("X {:?}, dY {:?}, mask {:?}", x.shape(), dy.shape(), g.shape()),
        ));
    }
    let SparseMatrix { mask, values } = g;
    for b in 0..x.n_rows() {
        let xr = x.row(b);
        let dyr = dy.row(b);
        for (p, gv) in mask.positions.iter().zip(values.iter_mut()) {
            *gv += xr[p.row()] * dyr[p.col()];
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dense_matmul(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(a.n_rows(), b.n_cols());
        for i in 0..a.n_rows() {
            for j in 0..b.n_cols() {
                let mut s = 0.0;
                for k in 0..a.n_cols() {
                    s += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, s);
            }
        }
        out
    }

    fn transpose(a: &DenseMatrix) -> DenseMatrix {
        let mut t = DenseMatrix::zeros(a.n_cols(), a.n_rows());
        for i in 0..a.n_rows() {
            for j in 0..a.n_cols() {
                t.set(j, i, a.get(i, j));
            }
        }
        t
    }

    fn identity2() -> SparseMatrix {
        SparseMatrix::from_triplets(2, 2, [(0, 0, 1.0), (1, 1, 1.0)]).unwrap()
    }

    #[test]
    fn from_triplets_cases() {
        let empty = SparseMatrix::from_triplets(2, 2, []).unwrap();
        assert_eq!(empty.nnz(), 0);
        assert_eq!(identity2().densify(), DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]));
        assert!(matches!(
            SparseMatrix::from_triplets(2, 2, [(0, 0, 1.0), (0, 0, 2.0)]),
            Err(Error::DuplicatePosition { row: 0, col: 0 })
        ));
        assert!(matches!(
            SparseMatrix::from_triplets(2, 2, [(2, 0, 1.0)]),
            Err(Error::OutOfBounds { row: 2, .. })
        ));
        assert!(matches!(SparseMatrix::from_triplets(0, 2, []), Err(Error::EmptyShape { .. })));
    }

    #[test]
    fn triplets_are_canonicalised() {
        let w = SparseMatrix::from_triplets(3, 3, [(2, 0, 1.0), (0, 2, 2.0), (0, 1, 3.0)]).unwrap();
        assert_eq!(w.triplets(), vec![(0, 1, 3.0), (0, 2, 2.0), (2, 0, 1.0)]);
        assert_eq!(w.mask().row_range(0), 0..2);
        assert_eq!(w.mask().row_range(1), 2..2);
        assert_eq!(w.mask().row_range(2), 2..3);
    }

    #[test]
    fn densify_cases() {
        let empty = SparseMatrix::from_triplets(2, 2, []).unwrap();
        assert_eq!(empty.densify(), DenseMatrix::zeros(2, 2));
        let one = SparseMatrix::from_triplets(2, 2, [(0, 1, 3.5)]).unwrap();
        assert_eq!(one.densify(), DenseMatrix::from_rows(&[[0.0, 3.5], [0.0, 0.0]]));
    }

    #[test]
    fn dense_times_sparse_cases() {
        let x = DenseMatrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        let empty = SparseMatrix::from_triplets(2, 2, []).unwrap();
        assert_eq!(dense_times_sparse(&x, &empty).unwrap(), DenseMatrix::zeros(2, 2));
        let row = DenseMatrix::from_rows(&[[1.0, 2.0]]);
        assert_eq!(dense_times_sparse(&row, &identity2()).unwrap(), row);
        let w = SparseMatrix::from_triplets(2, 2, [(1, 0, 5.0)]).unwrap();
        let y = dense_times_sparse(&x, &w).unwrap();
        assert_eq!(y, DenseMatrix::from_rows(&[[10.0, 0.0], [20.0, 0.0]]));
        assert_eq!(y, dense_matmul(&x, &w.densify()));
        let bad = DenseMatrix::zeros(1, 3);
        assert!(matches!(dense_times_sparse(&bad, &w), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn transposed_cases() {
        let dy = DenseMatrix::from_rows(&[[1.0, 1.0]]);
        let empty = SparseMatrix::from_triplets(2, 2, []).unwrap();
        assert_eq!(dense_times_sparse_transposed(&dy, &empty).unwrap(), DenseMatrix::zeros(1, 2));
        let dy2 = DenseMatrix::from_rows(&[[0.5, -2.0]]);
        assert_eq!(dense_times_sparse_transposed(&dy2, &identity2()).unwrap(), dy2);
        let w = SparseMatrix::from_triplets(2, 2, [(1, 0, 5.0)]).unwrap();
        let dx = dense_times_sparse_transposed(&dy, &w).unwrap();
        assert_eq!(dx, DenseMatrix::from_rows(&[[0.0, 5.0]]));
        assert_eq!(dx, dense_matmul(&dy, &transpose(&w.densify())));
    }

    #[test]
    fn masked_grad_cases() {
        let x = DenseMatrix::from_rows(&[[2.0]]);
        let dy = DenseMatrix::from_rows(&[[3.0]]);
        let empty = ConnectionSet::empty(1, 1).unwrap();
        assert_eq!(masked_grad(&x, &dy, &empty).unwrap().nnz(), 0);
        let full = ConnectionSet::full(1, 1).unwrap();
        assert_eq!(masked_grad(&x, &dy, &full).unwrap().triplets(), vec![(0, 0, 6.0)]);

        let x = DenseMatrix::from_rows(&[[1.0, -2.0], [0.5, 3.0]]);
        let dy = DenseMatrix::from_rows(&[[4.0, 1.0], [-1.0, 2.0]]);
        let dense = dense_matmul(&transpose(&x), &dy);
        let half = ConnectionSet::new(2, 2, vec![Position::new(0, 1), Position::new(1, 0)]).unwrap();
        let g = masked_grad(&x, &dy, &half).unwrap();
        assert_eq!(g.mask(), &half);
        for (p, v) in g.iter() {
            assert_eq!(v, dense.get(p.row(), p.col()));
        }
        let g_full = masked_grad(&x, &dy, &ConnectionSet::full(2, 2).unwrap()).unwrap();
        assert_eq!(g_full.densify(), dense);
    }

    fn arb_sparse(max_n: usize, density: f64) -> impl Strategy<Value = SparseMatrix> {
        (1..=max_n, 1..=max_n).prop_flat_map(move |(r, c)| {
            proptest::collection::vec((proptest::bool::weighted(density), -2.0f64..2.0), r * c).prop_map(
                move |cells| {
                    let trip = cells
                        .iter()
                        .enumerate()
                        .filter(|(_, (keep, v))| *keep && *v != 0.0)
                        .map(|(k, (_, v))| (k / c, k % c, *v));
                    SparseMatrix::from_triplets(r, c, trip).unwrap()
                },
            )
        })
    }

    fn arb_dense(n_rows: usize, n_cols: usize) -> impl Strategy<Value = DenseMatrix> {
        proptest::collection::vec(-2.0f64..2.0, n_rows * n_cols)
            .prop_map(move |v| DenseMatrix::from_vec(n_rows, n_cols, v).unwrap())
    }

    fn arb_case() -> impl Strategy<Value = (DenseMatrix, SparseMatrix, DenseMatrix)> {
        prop_oneof![Just(0.1), Just(0.5), Just(1.0)]
            .prop_flat_map(|d| arb_sparse(16, d))
            .prop_flat_map(|w| {
                let (r, c) = w.shape();
                (1usize..=16).prop_flat_map(move |b| (arb_dense(b, r), Just(w.clone()), arb_dense(b, c)))
            })
    }

    proptest! {
        #[test]
        fn densify_round_trip(w in arb_sparse(8, 0.4)) {
            let back = SparseMatrix::from_dense(&w.densify()).unwrap();
            prop_assert_eq!(back, w);
        }

        #[test]
        fn kernels_match_dense_oracle((x, w, dy) in arb_case()) {
            let nnz = w.nnz();
            let y = dense_times_sparse(&x, &w).unwrap();
            prop_assert!(y.max_abs_diff(&dense_matmul(&x, &w.densify())) <= 1e-12);
            let dx = dense_times_sparse_transposed(&dy, &w).unwrap();
            prop_assert!(dx.max_abs_diff(&dense_matmul(&dy, &transpose(&w.densify()))) <= 1e-12);
            let full = ConnectionSet::full(w.n_rows(), w.n_cols()).unwrap();
            let g = masked_grad(&x, &dy, &full).unwrap();
            prop_assert!(g.densify().max_abs_diff(&dense_matmul(&transpose(&x), &dy)) <= 1e-12);
            prop_assert_eq!(w.nnz(), nnz);
        }
    }
}
