//! Fixture builders shared by the kernel benchmarks.

use rand::Rng;

use setlstm_core::data::TokenMatrix;
use setlstm_core::neural::{ModelDims, SetLstmModel};
use setlstm_core::rng::seeded;
use setlstm_core::sparse::{DenseMatrix, SparseMatrix};
use setlstm_core::topology::{er_init, init_values};

pub fn random_dense(n_rows: usize, n_cols: usize, seed: u64) -> DenseMatrix {
    let mut rng = seeded(seed);
    let values = (0..n_rows * n_cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    DenseMatrix::from_vec(n_rows, n_cols, values).expect("sized buffer")
}

/// Erdős–Rényi sparse layer with uniform values.
pub fn er_layer(n_in: usize, n_out: usize, epsilon: f64, seed: u64) -> SparseMatrix {
    let mut rng = seeded(seed);
    let mask = er_init(n_in, n_out, epsilon, &mut rng).expect("valid shape");
    init_values(mask, &mut rng)
}

/// Model at desk dimensions (D = H = 256) with `vocab` embedding rows.
pub fn desk_model(vocab: usize, seq_len: usize, epsilon: f64, seed: u64) -> SetLstmModel {
    let dims = ModelDims {
        vocab,
        embed: 256,
        hidden: 256,
        seq_len,
        classes: 2,
    };
    SetLstmModel::init(dims, epsilon, &mut seeded(seed)).expect("valid dims")
}

pub fn random_batch(batch: usize, seq_len: usize, vocab: usize, seed: u64) -> (TokenMatrix, Vec<usize>) {
    let mut rng = seeded(seed);
    let rows = (0..batch)
        .map(|_| (0..seq_len).map(|_| rng.random_range(0..vocab)).collect())
        .collect();
    let labels = (0..batch).map(|_| rng.random_range(0..2)).collect();
    (TokenMatrix::from_rows(rows).expect("rectangular"), labels)
}
