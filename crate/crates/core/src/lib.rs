//! Sparse-from-scratch LSTM text classifiers.
//!
//! Every weight matrix except the output head is stored as an explicit set of
//! connections. Topologies start Erdős–Rényi random and evolve once per epoch
//! by pruning the smallest-magnitude weights and regrowing at random free
//! positions.

pub mod data;
pub mod desk;
pub mod error;
pub mod gradcheck;
pub mod neural;
pub mod optim;
pub mod rng;
pub mod sparse;
pub mod topology;
pub mod trainer;

pub use data::{Corpus, EncodedDataset, TokenMatrix, Vocabulary};
pub use error::{Error, Result};
pub use neural::{LstmCellParams, ModelDims, ParamCount, SetLstmModel};
pub use optim::{AdamHyper, AdamState};
pub use rng::{RngState, SeededRng};
pub use sparse::{ConnectionSet, DenseMatrix, Position, SparseMatrix};
pub use topology::{RewireReport, SparsityHyper};
pub use trainer::{InitMode, MetricsRecord, TopologySnapshot, TrainConfig, Trainer};
