//! Training loop with per-epoch rewiring, evaluation, checkpoints and the
//! experiment protocols built on top of it.

pub mod checkpoint;
pub mod config;
pub mod experiments;
mod metrics;

use crate::data::{batches, EncodedDataset, Vocabulary};
use crate::error::{Error, Result};
use crate::neural::{param_count, SetLstmModel, N_SPARSE};
use crate::optim::{adam_step, AdamHyper, AdamState, SlotShape};
use crate::rng::{derive_seed, seeded, SeededRng};
use crate::sparse::{ConnectionSet, SparseMatrix};
use crate::topology::{rewire, RewireReport};

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, FORMAT_VERSION, MAGIC};
pub use config::{InitMode, TrainConfig};
pub use metrics::{metrics_csv, MetricsRecord, CSV_HEADER};

/// Sub-stream for model initialisation, batch order and rewiring.
pub const STREAM_TRAIN: u64 = 1;
/// Sub-stream for the train/test split.
pub const STREAM_SPLIT: u64 = 2;
/// Sub-stream for fresh values on a fixed topology.
pub const STREAM_FRESH: u64 = 3;

const EVAL_CHUNK: usize = 256;

/// Connection sets of every sparse layer at one epoch, with each
/// connection's value at the moment it was created.
#[derive(Clone, Debug, PartialEq)]
pub struct TopologySnapshot {
    pub epoch: usize,
    pub test_acc: f64,
    pub masks: Vec<ConnectionSet>,
    pub births: Vec<Vec<f64>>,
}

/// Fraction of rows whose argmax prediction equals the label.
pub fn evaluate(model: &SetLstmModel, data: &EncodedDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::shape("evaluate", "empty dataset"));
    }
    let mut correct = 0usize;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let part = data.select(chunk);
        let pred = model.predict(&part.tokens)?;
        correct += pred.iter().zip(&part.labels).filter(|(p, l)| p == l).count();
    }
    Ok(correct as f64 / data.len() as f64)
}

pub fn slot_shapes(model: &SetLstmModel) -> Vec<SlotShape> {
    let mut shapes: Vec<SlotShape> = model.masks().into_iter().map(SlotShape::Sparse).collect();
    shapes.extend(model.cell.b.iter().map(|b| SlotShape::Dense(b.len())));
    shapes.push(SlotShape::Dense(model.output.w_out.as_slice().len()));
    shapes.push(SlotShape::Dense(model.output.b_out.len()));
    shapes
}

/// Birth values after a rewire: survivors keep theirs, new connections take
/// their freshly drawn value.
fn migrate_births(old_mask: &ConnectionSet, old_births: &[f64], new: &SparseMatrix) -> Vec<f64> {
    let old = old_mask.positions();
    let mut k = 0;
    new.iter()
        .map(|(p, v)| {
            while k < old.len() && old[k] < p {
                k += 1;
            }
            if k < old.len() && old[k] == p {
                old_births[k]
            } else {
                v
            }
        })
        .collect()
}

/// All mutable state of one training run. A checkpoint is a serialized
/// `Trainer`.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: TrainConfig,
    pub vocab: Vocabulary,
    pub model: SetLstmModel,
    pub optimizer: AdamState,
    /// Per sparse layer, parallel to the layer's values.
    pub births: Vec<Vec<f64>>,
    pub rng: SeededRng,
    /// Completed epochs.
    pub epoch: usize,
    pub initial_test_acc: f64,
    /// The model before any training step.
    pub initial: Option<SetLstmModel>,
    pub best: Option<TopologySnapshot>,
    pub history: Vec<MetricsRecord>,
}

impl Trainer {
    /// Fresh Erdős–Rényi model sized to `vocab`.
    pub fn new(config: TrainConfig, vocab: Vocabulary, test: &EncodedDataset) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded(derive_seed(config.seed, STREAM_TRAIN));
        let model = SetLstmModel::init(config.dims(vocab.len()), config.epsilon, &mut rng)?;
        Self::with_model(config, vocab, model, rng, test)
    }

    /// Starts a run from an explicit model and generator.
    pub fn with_model(
        config: TrainConfig,
        vocab: Vocabulary,
        model: SetLstmModel,
        rng: SeededRng,
        test: &EncodedDataset,
    ) -> Result<Self> {
        config.validate()?;
        model.validate()?;
        if model.dims != config.dims(vocab.len()) {
            return Err(Error::Config(format!(
                "model dims {:?} disagree with config and vocabulary {:?}",
                model.dims,
                config.dims(vocab.len())
            )));
        }
        let births = model.sparse_layers().iter().map(|w| w.values().to_vec()).collect();
        let optimizer = AdamState::new(AdamHyper::with_lr(config.lr), slot_shapes(&model));
        let initial_test_acc = evaluate(&model, test)?;
        Ok(Trainer {
            config,
            vocab,
            initial: Some(model.clone()),
            model,
            optimizer,
            births,
            rng,
            epoch: 0,
            initial_test_acc,
            best: None,
            history: Vec::new(),
        })
    }

    /// Trains on `source`'s best topology (its current one if it never
    /// recorded a best) with rewiring off. `Fresh` draws new values;
    /// `SameAsCheckpoint` restores each connection's birth value and the
    /// source's initial biases and head.
    pub fn on_fixed_topology(
        mut config: TrainConfig,
        source: &Trainer,
        mode: InitMode,
        test: &EncodedDataset,
    ) -> Result<Self> {
        if config.fixed_topology.is_none() {
            config.rewire_enabled = false;
        }
        config.init_mode = mode;
        let (masks, births) = match &source.best {
            Some(b) => (b.masks.clone(), b.births.clone()),
            None => (source.model.masks(), source.births.clone()),
        };
        let dims = config.dims(source.vocab.len());
        let rng = seeded(derive_seed(config.seed, STREAM_TRAIN));
        let model = match mode {
            InitMode::Fresh => {
                let mut fresh = seeded(derive_seed(config.seed, STREAM_FRESH));
                SetLstmModel::init_on_masks(dims, &masks, &mut fresh)?
            }
            InitMode::SameAsCheckpoint => {
                let initial = source.initial.as_ref().ok_or(Error::MissingInitialSnapshot)?;
                let mut model = initial.clone();
                for ((w, mask), b) in model.sparse_layers_mut().into_iter().zip(masks).zip(births) {
                    *w = SparseMatrix::from_mask(mask, b)?;
                }
                model.validate()?;
                model
            }
        };
        Self::with_model(config, source.vocab.clone(), model, rng, test)
    }

    /// Positions of parameters, optimizer moments and birth values agree.
    pub fn check_closure(&self) -> Result<()> {
        for (slot, w) in self.model.sparse_layers().iter().enumerate() {
            self.optimizer.check_keys(slot, w.mask())?;
            if self.births[slot].len() != w.nnz() {
                return Err(Error::MaskMismatch { slot });
            }
        }
        Ok(())
    }

    /// One shuffled pass of Adam steps. Returns (mean loss, accuracy) over
    /// the pass, measured before each batch's update.
    pub fn train_pass(&mut self, train: &EncodedDataset) -> Result<(f64, f64)> {
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in batches(train, self.config.batch_size, &mut self.rng)? {
            let out = self.model.forward_backward(&batch.tokens, &batch.labels)?;
            loss_sum += out.loss * batch.len() as f64;
            correct += out.predictions.iter().zip(&batch.labels).filter(|(p, l)| p == l).count();
            let grads = out.grads.as_refs();
            adam_step(&mut self.model.params_mut(), &grads, &mut self.optimizer)?;
        }
        let n = train.len().max(1) as f64;
        Ok((loss_sum / n, correct as f64 / n))
    }

    /// Prunes and regrows every sparse layer, migrating optimizer state and
    /// birth values. Empty reports when rewiring is off.
    pub fn rewire_layers(&mut self, regrow: bool) -> Result<Vec<RewireReport>> {
        if !self.config.rewiring() {
            return Ok(vec![RewireReport::default(); N_SPARSE]);
        }
        let zeta = self.config.zeta;
        let mut reports = Vec::with_capacity(N_SPARSE);
        for slot in 0..N_SPARSE {
            let layer = &mut self.model.sparse_layers_mut()[slot];
            let (next, report) = rewire(layer, zeta, regrow, &mut self.rng);
            self.births[slot] = migrate_births(layer.mask(), &self.births[slot], &next);
            **layer = next;
            self.optimizer.migrate(slot, &report)?;
            reports.push(report);
        }
        Ok(reports)
    }

    /// Whether the epoch about to run is the last one.
    pub fn is_final_epoch(&self) -> bool {
        self.epoch + 1 >= self.config.epochs
    }

    /// Evaluates, records metrics and updates the best snapshot.
    pub fn finish_epoch(
        &mut self,
        train_loss: f64,
        train_acc: f64,
        reports: &[RewireReport],
        test: &EncodedDataset,
    ) -> Result<MetricsRecord> {
        self.check_closure()?;
        let test_acc = evaluate(&self.model, test)?;
        self.epoch += 1;
        let count = param_count(&self.model);
        let record = MetricsRecord {
            epoch: self.epoch,
            train_loss,
            train_acc,
            test_acc,
            nnz: std::array::from_fn(|k| count.layers[k].nnz),
            sparsity: count.sparsity,
            removed: reports.iter().map(RewireReport::removed_count).sum(),
            added: reports.iter().map(|r| r.added.len()).sum(),
        };
        if self.best.as_ref().is_none_or(|b| test_acc > b.test_acc) {
            self.best = Some(TopologySnapshot {
                epoch: self.epoch,
                test_acc,
                masks: self.model.masks(),
                births: self.births.clone(),
            });
        }
        self.history.push(record.clone());
        Ok(record)
    }

    pub fn run_epoch(&mut self, train: &EncodedDataset, test: &EncodedDataset) -> Result<MetricsRecord> {
        let regrow = !self.is_final_epoch();
        let (loss, acc) = self.train_pass(train)?;
        let reports = self.rewire_layers(regrow)?;
        self.finish_epoch(loss, acc, &reports, test)
    }

    /// Runs the remaining epochs, calling `on_epoch` after each.
    pub fn run(
        &mut self,
        train: &EncodedDataset,
        test: &EncodedDataset,
        mut on_epoch: impl FnMut(&Trainer) -> Result<()>,
    ) -> Result<()> {
        while self.epoch < self.config.epochs {
            self.run_epoch(train, test)?;
            on_epoch(self)?;
        }
        Ok(())
    }

    /// Best test accuracy seen; the untrained accuracy before any epoch.
    pub fn best_accuracy(&self) -> f64 {
        self.best.as_ref().map_or(self.initial_test_acc, |b| b.test_acc)
    }

    pub fn final_accuracy(&self) -> f64 {
        self.history.last().map_or(self.initial_test_acc, |r| r.test_acc)
    }

    /// Masks of the best topology, or the current ones before any epoch.
    pub fn best_masks(&self) -> Vec<ConnectionSet> {
        self.best.as_ref().map_or_else(|| self.model.masks(), |b| b.masks.clone())
    }
}
