use crate::data::TokenMatrix;
use crate::error::{Error, Result};
use crate::sparse::{ConnectionSet, DenseMatrix, SparseMatrix};

/// Sparse word-embedding table, `V x D`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingParams {
    pub w_e: SparseMatrix,
}

impl EmbeddingParams {
    pub fn vocab_size(&self) -> usize {
        self.w_e.n_rows()
    }

    pub fn dim(&self) -> usize {
        self.w_e.n_cols()
    }
}

/// Gathers the (sparse) embedding row of every token. Returns one `B x D`
/// matrix per time step.
pub fn embedding_forward(tokens: &TokenMatrix, e: &EmbeddingParams) -> Result<Vec<DenseMatrix>> {
    let (batch, steps) = tokens.shape();
    let v = e.vocab_size();
    let mask = e.w_e.mask();
    let positions = e.w_e.positions();
    let values = e.w_e.values();
    let mut out = vec![DenseMatrix::zeros(batch, e.dim()); steps];
    for b in 0..batch {
        for (t, x_t) in out.iter_mut().enumerate() {
            let tok = tokens.get(b, t);
            if tok >= v {
                return Err(Error::TokenOutOfRange { token: tok, vocab: v });
            }
            let row = x_t.row_mut(b);
            for k in mask.row_range(tok) {
                row[positions[k].col()] = values[k];
            }
        }
    }
    Ok(out)
}

/// Scatter-adds `dx[t][b]` into the embedding row of `tokens[b, t]`,
/// keeping only positions in `mask`.
pub fn embedding_backward(tokens: &TokenMatrix, dx: &[DenseMatrix], mask: &ConnectionSet) -> Result<SparseMatrix> {
    let (batch, steps) = tokens.shape();
    if dx.len() != steps || dx.iter().any(|d| d.shape() != (batch, mask.n_cols())) {
        return Err(Error::shape(
            "embedding_backward",
            format!("tokens {batch}x{steps}, dx has {} steps, mask {:?}", dx.len(), mask.shape()),
        ));
    }
    let mut grad = SparseMatrix::zeros(mask.clone());
    let positions = mask.positions();
    let gv = grad.values_mut();
    for (t, d_t) in dx.iter().enumerate() {
        for b in 0..batch {
            let tok = tokens.get(b, t);
            if tok >= mask.n_rows() {
                return Err(Error::TokenOutOfRange {
                    token: tok,
                    vocab: mask.n_rows(),
                });
            }
            let drow = d_t.row(b);
            for k in mask.row_range(tok) {
                gv[k] += drow[positions[k].col()];
            }
        }
    }
    Ok(grad)
}
