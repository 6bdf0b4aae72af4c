use serde::Serialize;

use super::embedding::{embedding_backward, embedding_forward, EmbeddingParams};
use super::lstm::{lstm_backward, lstm_sequence_forward, LstmCellParams, LstmGrads};
use super::output::{argmax_rows, output_backward, output_forward, softmax_cross_entropy, OutputGrads, OutputParams};
use crate::data::TokenMatrix;
use crate::error::{Error, Result};
use crate::optim::{GradRef, ParamMut};
use crate::rng::SeededRng;
use crate::sparse::{ConnectionSet, DenseMatrix, SparseMatrix};
use crate::topology::{er_init, init_limit, init_values};

/// Number of sparse (rewired) matrices: eight gate matrices plus the embedding.
pub const N_SPARSE: usize = 9;

/// Number of parameter tensors, in optimizer slot order.
pub const N_SLOTS: usize = 15;

/// Sparse layer names in slot order.
pub const SPARSE_LAYER_NAMES: [&str; N_SPARSE] = ["w_xi", "w_xf", "w_xo", "w_xg", "w_hi", "w_hf", "w_ho", "w_hg", "w_e"];

/// Every parameter tensor in slot order.
pub const SLOT_NAMES: [&str; N_SLOTS] = [
    "w_xi", "w_xf", "w_xo", "w_xg", "w_hi", "w_hf", "w_ho", "w_hg", "w_e", "b_i", "b_f", "b_o", "b_g", "w_out", "b_out",
];

/// Slot of the embedding matrix.
pub const EMBEDDING_SLOT: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ModelDims {
    pub vocab: usize,
    pub embed: usize,
    pub hidden: usize,
    pub seq_len: usize,
    pub classes: usize,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.vocab == 0 || self.embed == 0 || self.hidden == 0 || self.seq_len == 0 {
            return Err(Error::Config(format!("dimensions must be positive: {self:?}")));
        }
        if self.classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.classes)));
        }
        Ok(())
    }

    /// Parameter count of the dense model without its output layer.
    pub fn dense_baseline(&self) -> usize {
        self.vocab * self.embed + 4 * (self.embed * self.hidden + self.hidden * self.hidden + self.hidden)
    }
}

/// Embedding, one sparse LSTM layer and a dense head; classification reads
/// the final hidden state.
#[derive(Clone, Debug, PartialEq)]
pub struct SetLstmModel {
    pub embedding: EmbeddingParams,
    pub cell: LstmCellParams,
    pub output: OutputParams,
    pub dims: ModelDims,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelGrads {
    pub embedding: SparseMatrix,
    pub cell: LstmGrads,
    pub output: OutputGrads,
}

impl ModelGrads {
    pub fn as_refs(&self) -> Vec<GradRef<'_>> {
        let mut v = Vec::with_capacity(N_SLOTS);
        v.extend(self.cell.w_x.iter().map(GradRef::Sparse));
        v.extend(self.cell.w_h.iter().map(GradRef::Sparse));
        v.push(GradRef::Sparse(&self.embedding));
        v.extend(self.cell.b.iter().map(|b| GradRef::Dense(b.as_slice())));
        v.push(GradRef::Dense(self.output.w_out.as_slice()));
        v.push(GradRef::Dense(&self.output.b_out));
        v
    }

    /// Gradient values of slot `slot`, flattened in storage order.
    pub fn slot_values(&self, slot: usize) -> &[f64] {
        match self.as_refs()[slot] {
            GradRef::Sparse(s) => s.values(),
            GradRef::Dense(d) => d,
        }
    }
}

/// Result of one forward/backward pass over a batch.
#[derive(Clone, Debug)]
pub struct BatchOutcome {
    pub loss: f64,
    pub grads: ModelGrads,
    pub predictions: Vec<usize>,
}

impl SetLstmModel {
    /// Fresh model: Erdős–Rényi masks with uniform values on every sparse
    /// layer, zero biases, uniform dense head.
    pub fn init(dims: ModelDims, epsilon: f64, rng: &mut SeededRng) -> Result<Self> {
        dims.validate()?;
        let ModelDims {
            vocab: v,
            embed: d,
            hidden: h,
            classes: c,
            ..
        } = dims;
        let w_e = init_values(er_init(v, d, epsilon, rng)?, rng);
        let mut w_x = Vec::with_capacity(4);
        let mut w_h = Vec::with_capacity(4);
        for _ in 0..4 {
            w_x.push(init_values(er_init(d, h, epsilon, rng)?, rng));
            w_h.push(init_values(er_init(h, h, epsilon, rng)?, rng));
        }
        let limit = init_limit(h, c);
        let w_out = (0..h * c).map(|_| crate::topology::draw_init_value(limit, rng)).collect();
        Ok(SetLstmModel {
            embedding: EmbeddingParams { w_e },
            cell: LstmCellParams {
                w_x: w_x.try_into().expect("four gates"),
                w_h: w_h.try_into().expect("four gates"),
                b: std::array::from_fn(|_| vec![0.0; h]),
            },
            output: OutputParams {
                w_out: DenseMatrix::from_vec(h, c, w_out)?,
                b_out: vec![0.0; c],
            },
            dims,
        })
    }

    /// Fresh values on given masks (slot order, embedding last): uniform
    /// sparse and head weights, zero biases.
    pub fn init_on_masks(dims: ModelDims, masks: &[ConnectionSet], rng: &mut SeededRng) -> Result<Self> {
        dims.validate()?;
        if masks.len() != N_SPARSE {
            return Err(Error::shape("init_on_masks", format!("{} masks, expected {N_SPARSE}", masks.len())));
        }
        let mut layers: Vec<SparseMatrix> = masks.iter().map(|m| init_values(m.clone(), rng)).collect();
        let w_e = layers.pop().expect("nine masks");
        let w_h: [SparseMatrix; 4] = layers.split_off(4).try_into().expect("four gates");
        let w_x: [SparseMatrix; 4] = layers.try_into().expect("four gates");
        let (h, c) = (dims.hidden, dims.classes);
        let limit = init_limit(h, c);
        let w_out = (0..h * c).map(|_| crate::topology::draw_init_value(limit, rng)).collect();
        let m = SetLstmModel {
            embedding: EmbeddingParams { w_e },
            cell: LstmCellParams {
                w_x,
                w_h,
                b: std::array::from_fn(|_| vec![0.0; h]),
            },
            output: OutputParams {
                w_out: DenseMatrix::from_vec(h, c, w_out)?,
                b_out: vec![0.0; c],
            },
            dims,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn from_parts(embedding: EmbeddingParams, cell: LstmCellParams, output: OutputParams, seq_len: usize) -> Result<Self> {
        let dims = ModelDims {
            vocab: embedding.vocab_size(),
            embed: embedding.dim(),
            hidden: cell.hidden_dim(),
            seq_len,
            classes: output.classes(),
        };
        let m = SetLstmModel {
            embedding,
            cell,
            output,
            dims,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        self.cell.validate()?;
        let d = self.dims;
        if self.embedding.w_e.shape() != (d.vocab, d.embed)
            || self.cell.input_dim() != d.embed
            || self.cell.hidden_dim() != d.hidden
            || self.output.w_out.shape() != (d.hidden, d.classes)
            || self.output.b_out.len() != d.classes
        {
            return Err(Error::shape("SetLstmModel", format!("layers disagree with {d:?}")));
        }
        Ok(())
    }

    pub fn sparse_layers(&self) -> [&SparseMatrix; N_SPARSE] {
        let [x0, x1, x2, x3] = &self.cell.w_x;
        let [h0, h1, h2, h3] = &self.cell.w_h;
        [x0, x1, x2, x3, h0, h1, h2, h3, &self.embedding.w_e]
    }

    pub fn sparse_layers_mut(&mut self) -> [&mut SparseMatrix; N_SPARSE] {
        let [x0, x1, x2, x3] = &mut self.cell.w_x;
        let [h0, h1, h2, h3] = &mut self.cell.w_h;
        [x0, x1, x2, x3, h0, h1, h2, h3, &mut self.embedding.w_e]
    }

    pub fn masks(&self) -> Vec<ConnectionSet> {
        self.sparse_layers().iter().map(|w| w.mask().clone()).collect()
    }

    /// Every parameter tensor, in slot order.
    pub fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        let mut v: Vec<ParamMut<'_>> = Vec::with_capacity(N_SLOTS);
        let LstmCellParams { w_x, w_h, b } = &mut self.cell;
        v.extend(w_x.iter_mut().map(ParamMut::Sparse));
        v.extend(w_h.iter_mut().map(ParamMut::Sparse));
        v.push(ParamMut::Sparse(&mut self.embedding.w_e));
        v.extend(b.iter_mut().map(|b| ParamMut::Dense(b.as_mut_slice())));
        v.push(ParamMut::Dense(self.output.w_out.as_mut_slice()));
        v.push(ParamMut::Dense(&mut self.output.b_out));
        v
    }

    /// Mutable values of slot `slot`, flattened in storage order.
    pub fn slot_values_mut(&mut self, slot: usize) -> &mut [f64] {
        match self.params_mut().swap_remove(slot) {
            ParamMut::Sparse(s) => s.values_mut(),
            ParamMut::Dense(d) => d,
        }
    }

    fn check_tokens(&self, tokens: &TokenMatrix) -> Result<()> {
        if tokens.n_cols() != self.dims.seq_len || tokens.n_rows() == 0 {
            return Err(Error::shape(
                "SetLstmModel",
                format!("tokens {:?}, expected B x {}", tokens.shape(), self.dims.seq_len),
            ));
        }
        Ok(())
    }

    pub fn logits(&self, tokens: &TokenMatrix) -> Result<DenseMatrix> {
        self.check_tokens(tokens)?;
        let xs = embedding_forward(tokens, &self.embedding)?;
        let (h, _) = lstm_sequence_forward(&xs, &self.cell)?;
        output_forward(&h, &self.output)
    }

    pub fn predict(&self, tokens: &TokenMatrix) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.logits(tokens)?))
    }

    pub fn loss(&self, tokens: &TokenMatrix, labels: &[usize]) -> Result<f64> {
        Ok(softmax_cross_entropy(&self.logits(tokens)?, labels)?.0)
    }

    pub fn forward_backward(&self, tokens: &TokenMatrix, labels: &[usize]) -> Result<BatchOutcome> {
        self.check_tokens(tokens)?;
        let xs = embedding_forward(tokens, &self.embedding)?;
        let (h, caches) = lstm_sequence_forward(&xs, &self.cell)?;
        let logits = output_forward(&h, &self.output)?;
        let predictions = argmax_rows(&logits);
        let (loss, dlogits) = softmax_cross_entropy(&logits, labels)?;
        let (output, dh) = output_backward(&h, &dlogits, &self.output)?;
        let (cell, dxs) = lstm_backward(&caches, &dh, &self.cell)?;
        let embedding = embedding_backward(tokens, &dxs, self.embedding.w_e.mask())?;
        Ok(BatchOutcome {
            loss,
            grads: ModelGrads {
                embedding,
                cell,
                output,
            },
            predictions,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerCount {
    pub name: String,
    pub nnz: usize,
    pub dense: usize,
}

/// Parameter accounting against the dense model with the same dimensions.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParamCount {
    pub layers: Vec<LayerCount>,
    pub biases: usize,
    pub output: usize,
    /// Sparse connections plus biases, output layer excluded.
    pub sparse_total: usize,
    /// Every trainable parameter including the output layer.
    pub total: usize,
    /// Dense model parameter count, output layer excluded.
    pub dense_baseline: usize,
    /// `1 - sparse_total / dense_baseline`.
    pub sparsity: f64,
}

pub fn param_count(m: &SetLstmModel) -> ParamCount {
    let layers: Vec<LayerCount> = m
        .sparse_layers()
        .iter()
        .zip(SPARSE_LAYER_NAMES)
        .map(|(w, name)| LayerCount {
            name: name.to_string(),
            nnz: w.nnz(),
            dense: w.n_rows() * w.n_cols(),
        })
        .collect();
    let biases: usize = m.cell.b.iter().map(Vec::len).sum();
    let output = m.output.w_out.as_slice().len() + m.output.b_out.len();
    let sparse_total = layers.iter().map(|l| l.nnz).sum::<usize>() + biases;
    let dense_baseline = m.dims.dense_baseline();
    ParamCount {
        layers,
        biases,
        output,
        sparse_total,
        total: sparse_total + output,
        dense_baseline,
        sparsity: 1.0 - sparse_total as f64 / dense_baseline as f64,
    }
}
