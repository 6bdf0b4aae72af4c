//! The SET-LSTM compute graph: sparse embedding, sparse-gated LSTM cell,
//! dense head and cross-entropy loss, with analytic gradients throughout.

mod embedding;
mod lstm;
mod model;
mod output;

pub use embedding::{embedding_backward, embedding_forward, EmbeddingParams};
pub use lstm::{lstm_backward, lstm_sequence_forward, lstm_step, Gate, LstmCellParams, LstmGrads, StepCache};
pub use model::{
    param_count, BatchOutcome, LayerCount, ModelDims, ModelGrads, ParamCount, SetLstmModel, EMBEDDING_SLOT, N_SLOTS,
    N_SPARSE, SLOT_NAMES, SPARSE_LAYER_NAMES,
};
pub use output::{argmax_rows, output_backward, output_forward, softmax_cross_entropy, OutputGrads, OutputParams};
