//! Erdős–Rényi sparse initialization, prune-and-regrow rewiring, and
//! topology analytics.

use std::collections::HashSet;

use rand::seq::index;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::SeededRng;
pub use crate::sparse::ConnectionSet;
use crate::sparse::{DenseMatrix, Position, SparseMatrix};

/// Sparsity level `epsilon` and per-epoch rewire fraction `zeta`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SparsityHyper {
    epsilon: f64,
    zeta: f64,
}

impl SparsityHyper {
    /// `epsilon` may be `f64::INFINITY`, meaning fully dense layers.
    pub fn new(epsilon: f64, zeta: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be > 0, got {epsilon}")));
        }
        if !(0.0..=1.0).contains(&zeta) {
            return Err(Error::Config(format!("zeta must be in [0, 1], got {zeta}")));
        }
        Ok(SparsityHyper { epsilon, zeta })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn zeta(&self) -> f64 {
        self.zeta
    }
}

/// Connection budget of an `n_in x n_out` layer: `round(epsilon * (n_in + n_out))`,
/// clamped to the dense count.
pub fn target_nnz(n_in: usize, n_out: usize, epsilon: f64) -> usize {
    let dense = n_in * n_out;
    let want = (epsilon * (n_in + n_out) as f64).round();
    if want >= dense as f64 {
        dense
    } else {
        want as usize
    }
}

/// Samples exactly [`target_nnz`] distinct positions uniformly without replacement.
pub fn er_init(n_in: usize, n_out: usize, epsilon: f64, rng: &mut SeededRng) -> Result<ConnectionSet> {
    if !(epsilon > 0.0) {
        return Err(Error::Config(format!("epsilon must be > 0, got {epsilon}")));
    }
    let total = n_in * n_out;
    let n_w = target_nnz(n_in, n_out, epsilon);
    if n_w == total {
        return ConnectionSet::full(n_in, n_out);
    }
    let mut positions: Vec<Position> = index::sample(rng, total, n_w)
        .into_iter()
        .map(|k| Position::new(k / n_out, k % n_out))
        .collect();
    positions.sort_unstable();
    ConnectionSet::new(n_in, n_out, positions)
}

/// Half-width of the uniform initialization interval for a layer.
pub fn init_limit(n_rows: usize, n_cols: usize) -> f64 {
    (6.0 / (n_rows + n_cols) as f64).sqrt()
}

/// One draw from `U[-limit, limit]`, never exactly zero.
pub fn draw_init_value(limit: f64, rng: &mut SeededRng) -> f64 {
    loop {
        let v = rng.random_range(-limit..=limit);
        if v != 0.0 {
            return v;
        }
    }
}

/// Fills every position of `mask` with an independent draw from the init law.
pub fn init_values(mask: ConnectionSet, rng: &mut SeededRng) -> SparseMatrix {
    let limit = init_limit(mask.n_rows(), mask.n_cols());
    let values = (0..mask.len()).map(|_| draw_init_value(limit, rng)).collect();
    SparseMatrix::from_mask(mask, values).expect("one value per position")
}

/// What one rewiring step did to a layer.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct RewireReport {
    pub removed_positive: Vec<Position>,
    pub removed_negative: Vec<Position>,
    /// Entries whose value was exactly zero; always pruned.
    pub removed_zero: Vec<Position>,
    pub added: Vec<Position>,
    pub nnz_before: usize,
    pub nnz_after: usize,
}

impl RewireReport {
    pub fn removed_count(&self) -> usize {
        self.removed_positive.len() + self.removed_negative.len() + self.removed_zero.len()
    }

    pub fn is_empty(&self) -> bool {
        self.removed_count() == 0 && self.added.is_empty()
    }

    /// All removed positions, sorted.
    pub fn removed(&self) -> Vec<Position> {
        let mut all: Vec<Position> = self
            .removed_positive
            .iter()
            .chain(&self.removed_negative)
            .chain(&self.removed_zero)
            .copied()
            .collect();
        all.sort_unstable();
        all
    }
}

/// Indices (into `w`'s entries) selected for removal, split by sign.
fn select_for_removal(w: &SparseMatrix, zeta: f64) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let values = w.values();
    let mut pos: Vec<usize> = (0..values.len()).filter(|&k| values[k] > 0.0).collect();
    let mut neg: Vec<usize> = (0..values.len()).filter(|&k| values[k] < 0.0).collect();
    let zero: Vec<usize> = (0..values.len()).filter(|&k| values[k] == 0.0).collect();

    let k_p = (zeta * pos.len() as f64).floor() as usize;
    let k_n = (zeta * neg.len() as f64).floor() as usize;

    // Entry indices already follow position order, so a stable sort breaks ties by position.
    pos.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    neg.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    pos.truncate(k_p);
    neg.truncate(k_n);
    (pos, neg, zero)
}

/// Draws `count` distinct free positions (not in `occupied`, which is sorted).
fn sample_free_positions(
    n_rows: usize,
    n_cols: usize,
    occupied: &[Position],
    count: usize,
    rng: &mut SeededRng,
) -> Vec<Position> {
    let total = n_rows * n_cols;
    debug_assert!(occupied.len() + count <= total);
    if count == 0 {
        return Vec::new();
    }
    if (occupied.len() + count) * 2 <= total {
        let mut taken: HashSet<Position> = HashSet::with_capacity(count);
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let k = rng.random_range(0..total);
            let p = Position::new(k / n_cols, k % n_cols);
            if occupied.binary_search(&p).is_err() && taken.insert(p) {
                out.push(p);
            }
        }
        out
    } else {
        let mut free = Vec::with_capacity(total - occupied.len());
        let mut occ = occupied.iter().peekable();
        for k in 0..total {
            let p = Position::new(k / n_cols, k % n_cols);
            if occ.peek() == Some(&&p) {
                occ.next();
            } else {
                free.push(p);
            }
        }
        index::sample(rng, free.len(), count).into_iter().map(|i| free[i]).collect()
    }
}

/// One prune-and-regrow step.
///
/// Removes the `floor(zeta * |P|)` smallest positive weights, the
/// `floor(zeta * |N|)` negative weights closest to zero, and every exact zero.
/// With `regrow`, the same number of connections is added at uniformly random
/// positions not held by a surviving connection, initialised from the
/// [`init_values`] law.
pub fn rewire(w: &SparseMatrix, zeta: f64, regrow: bool, rng: &mut SeededRng) -> (SparseMatrix, RewireReport) {
    let (pos, neg, zero) = select_for_removal(w, zeta);
    let mut drop = vec![false; w.nnz()];
    for &k in pos.iter().chain(&neg).chain(&zero) {
        drop[k] = true;
    }
    let positions = w.positions();
    let mut report = RewireReport {
        removed_positive: pos.iter().map(|&k| positions[k]).collect(),
        removed_negative: neg.iter().map(|&k| positions[k]).collect(),
        removed_zero: zero.iter().map(|&k| positions[k]).collect(),
        added: Vec::new(),
        nnz_before: w.nnz(),
        nnz_after: 0,
    };
    report.removed_positive.sort_unstable();
    report.removed_negative.sort_unstable();

    let mut survivors: Vec<(Position, f64)> = w.iter().zip(&drop).filter(|(_, d)| !**d).map(|(e, _)| e).collect();

    if regrow {
        let occupied: Vec<Position> = survivors.iter().map(|e| e.0).collect();
        let (n_rows, n_cols) = w.shape();
        let added = sample_free_positions(n_rows, n_cols, &occupied, report.removed_count(), rng);
        let limit = init_limit(n_rows, n_cols);
        for &p in &added {
            survivors.push((p, draw_init_value(limit, rng)));
        }
        survivors.sort_unstable_by_key(|e| e.0);
        report.added = added;
        report.added.sort_unstable();
    }

    let (positions, values): (Vec<Position>, Vec<f64>) = survivors.into_iter().unzip();
    report.nnz_after = positions.len();
    let mask = ConnectionSet::from_sorted_unchecked(w.n_rows(), w.n_cols(), positions);
    (SparseMatrix::from_mask(mask, values).expect("parallel arrays"), report)
}

/// Fraction of `a`'s connections also present in `b`; 0 when `a` is empty.
pub fn similarity(a: &ConnectionSet, b: &ConnectionSet) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape("similarity", format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    Ok(a.intersection_len(b) as f64 / a.len() as f64)
}

/// `M[a][b] = similarity(a, b)` over all pairs.
pub fn similarity_matrix(topologies: &[ConnectionSet]) -> Result<DenseMatrix> {
    let n = topologies.len();
    let mut m = DenseMatrix::zeros(n, n);
    for (i, a) in topologies.iter().enumerate() {
        for (j, b) in topologies.iter().enumerate() {
            let s = if i == j {
                if a.shape() != topologies[0].shape() {
                    return Err(Error::shape("similarity_matrix", "topologies differ in shape"));
                }
                1.0
            } else {
                similarity(a, b)?
            };
            m.set(i, j, s);
        }
    }
    Ok(m)
}

/// Chance overlap of two independent uniform topologies of `n_w` connections
/// over `capacity` positions.
pub fn chance_similarity(n_w: usize, capacity: usize) -> f64 {
    n_w as f64 / capacity as f64
}

/// Per-node connection counts on each side of a bipartite layer.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DegreeStats {
    pub row_degrees: Vec<usize>,
    pub col_degrees: Vec<usize>,
}

impl DegreeStats {
    /// `h[d]` = number of rows with degree `d`.
    pub fn row_histogram(&self) -> Vec<usize> {
        histogram(&self.row_degrees)
    }

    pub fn col_histogram(&self) -> Vec<usize> {
        histogram(&self.col_degrees)
    }
}

fn histogram(degrees: &[usize]) -> Vec<usize> {
    let max = degrees.iter().copied().max().unwrap_or(0);
    let mut h = vec![0; max + 1];
    for &d in degrees {
        h[d] += 1;
    }
    h
}

pub fn degree_stats(c: &ConnectionSet) -> DegreeStats {
    let mut row_degrees = vec![0; c.n_rows()];
    let mut col_degrees = vec![0; c.n_cols()];
    for p in c.positions() {
        row_degrees[p.row()] += 1;
        col_degrees[p.col()] += 1;
    }
    DegreeStats {
        row_degrees,
        col_degrees,
    }
}
