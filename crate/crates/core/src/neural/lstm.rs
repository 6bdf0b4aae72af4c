//! LSTM cell whose eight weight matrices are independent sparse layers, with
//! backpropagation through time.

use crate::error::{Error, Result};
use crate::sparse::{
    accumulate_dense_times_sparse, accumulate_dense_times_sparse_transposed, accumulate_masked_grad, DenseMatrix,
    SparseMatrix,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Gate {
    Input,
    Forget,
    Output,
    /// Candidate cell input `g`.
    Cell,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Input, Gate::Forget, Gate::Output, Gate::Cell];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn letter(self) -> char {
        match self {
            Gate::Input => 'i',
            Gate::Forget => 'f',
            Gate::Output => 'o',
            Gate::Cell => 'g',
        }
    }
}

/// Gate weights indexed by [`Gate::index`]: `w_x[k]` is `D x H`, `w_h[k]` is `H x H`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmCellParams {
    pub w_x: [SparseMatrix; 4],
    pub w_h: [SparseMatrix; 4],
    pub b: [Vec<f64>; 4],
}

impl LstmCellParams {
    pub fn input_dim(&self) -> usize {
        self.w_x[0].n_rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_h[0].n_rows()
    }

    pub fn validate(&self) -> Result<()> {
        let (d, h) = (self.input_dim(), self.hidden_dim());
        for k in 0..4 {
            if self.w_x[k].shape() != (d, h) || self.w_h[k].shape() != (h, h) || self.b[k].len() != h {
                return Err(Error::shape(
                    "LstmCellParams",
                    format!(
                        "gate {}: w_x {:?}, w_h {:?}, b {}",
                        Gate::ALL[k].letter(),
                        self.w_x[k].shape(),
                        self.w_h[k].shape(),
                        self.b[k].len()
                    ),
                ));
            }
        }
        Ok(())
    }
}

/// Activations kept from one forward step for the backward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct StepCache {
    pub x: DenseMatrix,
    pub h_prev: DenseMatrix,
    pub c_prev: DenseMatrix,
    pub i: DenseMatrix,
    pub f: DenseMatrix,
    pub o: DenseMatrix,
    pub g: DenseMatrix,
    pub c: DenseMatrix,
    pub tanh_c: DenseMatrix,
}

/// Gradients with the same layout (and masks) as [`LstmCellParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct LstmGrads {
    pub w_x: [SparseMatrix; 4],
    pub w_h: [SparseMatrix; 4],
    pub b: [Vec<f64>; 4],
}

impl LstmGrads {
    pub fn zeros_like(p: &LstmCellParams) -> Self {
        LstmGrads {
            w_x: std::array::from_fn(|k| SparseMatrix::zeros(p.w_x[k].mask().clone())),
            w_h: std::array::from_fn(|k| SparseMatrix::zeros(p.w_h[k].mask().clone())),
            b: std::array::from_fn(|k| vec![0.0; p.b[k].len()]),
        }
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn map(m: &DenseMatrix, f: impl Fn(f64) -> f64) -> DenseMatrix {
    let mut out = m.clone();
    out.as_mut_slice().iter_mut().for_each(|v| *v = f(*v));
    out
}

/// One application of the gate equations:
///
/// ```text
/// i = σ(x·W_xi + h·W_hi + b_i)    f = σ(x·W_xf + h·W_hf + b_f)
/// o = σ(x·W_xo + h·W_ho + b_o)    g = tanh(x·W_xg + h·W_hg + b_g)
/// c' = f ⊗ c + i ⊗ g              h' = o ⊗ tanh(c')
/// ```
pub fn lstm_step(
    x_t: &DenseMatrix,
    h_prev: &DenseMatrix,
    c_prev: &DenseMatrix,
    p: &LstmCellParams,
) -> Result<(DenseMatrix, DenseMatrix, StepCache)> {
    p.validate()?;
    let (batch, hidden) = (x_t.n_rows(), p.hidden_dim());
    if x_t.n_cols() != p.input_dim() || h_prev.shape() != (batch, hidden) || c_prev.shape() != (batch, hidden) {
        return Err(Error::shape(
            "lstm_step",
            format!("x {:?}, h {:?}, c {:?}", x_t.shape(), h_prev.shape(), c_prev.shape()),
        ));
    }

    let mut pre: [DenseMatrix; 4] = std::array::from_fn(|k| {
        let mut a = DenseMatrix::zeros(batch, hidden);
        for r in 0..batch {
            a.row_mut(r).copy_from_slice(&p.b[k]);
        }
        a
    });
    for (k, a) in pre.iter_mut().enumerate() {
        accumulate_dense_times_sparse(x_t, &p.w_x[k], a)?;
        accumulate_dense_times_sparse(h_prev, &p.w_h[k], a)?;
    }
    let [a_i, a_f, a_o, a_g] = pre;
    let i = map(&a_i, sigmoid);
    let f = map(&a_f, sigmoid);
    let o = map(&a_o, sigmoid);
    let g = map(&a_g, f64::tanh);

    let mut c = DenseMatrix::zeros(batch, hidden);
    let mut h = DenseMatrix::zeros(batch, hidden);
    let mut tanh_c = DenseMatrix::zeros(batch, hidden);
    for n in 0..batch * hidden {
        let cv = f.as_slice()[n] * c_prev.as_slice()[n] + i.as_slice()[n] * g.as_slice()[n];
        let tc = cv.tanh();
        c.as_mut_slice()[n] = cv;
        tanh_c.as_mut_slice()[n] = tc;
        h.as_mut_slice()[n] = o.as_slice()[n] * tc;
    }

    let cache = StepCache {
        x: x_t.clone(),
        h_prev: h_prev.clone(),
        c_prev: c_prev.clone(),
        i,
        f,
        o,
        g,
        c: c.clone(),
        tanh_c,
    };
    Ok((h, c, cache))
}

/// Runs the cell over `xs` (one `B x D` matrix per step) from `h = c = 0`.
pub fn lstm_sequence_forward(xs: &[DenseMatrix], p: &LstmCellParams) -> Result<(DenseMatrix, Vec<StepCache>)> {
    let first = xs
        .first()
        .ok_or_else(|| Error::shape("lstm_sequence_forward", "sequence has no steps"))?;
    let batch = first.n_rows();
    let mut h = DenseMatrix::zeros(batch, p.hidden_dim());
    let mut c = DenseMatrix::zeros(batch, p.hidden_dim());
    let mut caches = Vec::with_capacity(xs.len());
    for x_t in xs {
        let (h_next, c_next, cache) = lstm_step(x_t, &h, &c, p)?;
        h = h_next;
        c = c_next;
        caches.push(cache);
    }
    Ok((h, caches))
}

/// Backpropagation through time for a loss that depends on the last hidden
/// state only. Returns cell gradients (on each matrix's own mask) and the
/// gradient w.r.t. every step's input.
pub fn lstm_backward(
    caches: &[StepCache],
    dh_last: &DenseMatrix,
    p: &LstmCellParams,
) -> Result<(LstmGrads, Vec<DenseMatrix>)> {
    p.validate()?;
    let (d, hidden) = (p.input_dim(), p.hidden_dim());
    let batch = dh_last.n_rows();
    if caches.is_empty() {
        return Err(Error::CacheMismatch("no cached steps".into()));
    }
    if dh_last.n_cols() != hidden {
        return Err(Error::CacheMismatch(format!("dh has {} columns, cell has {hidden}", dh_last.n_cols())));
    }
    for (t, c) in caches.iter().enumerate() {
        if c.x.shape() != (batch, d) || c.i.shape() != (batch, hidden) || c.h_prev.shape() != (batch, hidden) {
            return Err(Error::CacheMismatch(format!(
                "step {t}: x {:?}, gates {:?}; expected batch {batch}, D {d}, H {hidden}",
                c.x.shape(),
                c.i.shape()
            )));
        }
    }

    let mut grads = LstmGrads::zeros_like(p);
    let mut dxs = vec![DenseMatrix::zeros(batch, d); caches.len()];
    let mut dh = dh_last.clone();
    let mut dc = DenseMatrix::zeros(batch, hidden);

    for (t, cache) in caches.iter().enumerate().rev() {
        let mut da: [DenseMatrix; 4] = std::array::from_fn(|_| DenseMatrix::zeros(batch, hidden));
        let mut dc_prev = DenseMatrix::zeros(batch, hidden);
        for n in 0..batch * hidden {
            let (i, f, o, g) = (
                cache.i.as_slice()[n],
                cache.f.as_slice()[n],
                cache.o.as_slice()[n],
                cache.g.as_slice()[n],
            );
            let tc = cache.tanh_c.as_slice()[n];
            let dh_n = dh.as_slice()[n];
            let dc_n = dc.as_slice()[n] + dh_n * o * (1.0 - tc * tc);
            let d_o = dh_n * tc;
            let d_i = dc_n * g;
            let d_g = dc_n * i;
            let d_f = dc_n * cache.c_prev.as_slice()[n];
            dc_prev.as_mut_slice()[n] = dc_n * f;
            da[Gate::Input.index()].as_mut_slice()[n] = d_i * i * (1.0 - i);
            da[Gate::Forget.index()].as_mut_slice()[n] = d_f * f * (1.0 - f);
            da[Gate::Output.index()].as_mut_slice()[n] = d_o * o * (1.0 - o);
            da[Gate::Cell.index()].as_mut_slice()[n] = d_g * (1.0 - g * g);
        }

        let mut dh_prev = DenseMatrix::zeros(batch, hidden);
        for k in 0..4 {
            accumulate_masked_grad(&cache.x, &da[k], &mut grads.w_x[k])?;
            accumulate_masked_grad(&cache.h_prev, &da[k], &mut grads.w_h[k])?;
            for r in 0..batch {
                for (gb, v) in grads.b[k].iter_mut().zip(da[k].row(r)) {
                    *gb += v;
                }
            }
            accumulate_dense_times_sparse_transposed(&da[k], &p.w_x[k], &mut dxs[t])?;
            accumulate_dense_times_sparse_transposed(&da[k], &p.w_h[k], &mut dh_prev)?;
        }
        dh = dh_prev;
        dc = dc_prev;
    }
    Ok((grads, dxs))
}
