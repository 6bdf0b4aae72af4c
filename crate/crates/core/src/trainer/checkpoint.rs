//! Binary checkpoint format.
//!
//! Layout: magic `SETL`, format version (u32 LE), SHA-256 of the body, then
//! the body as a run of sections, each prefixed by its byte length (u64 LE).
//! Sections in order: config text, vocabulary, progress, model, optimizer,
//! birth values, initial model, best topology, rng state, metrics.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::config::TrainConfig;
use super::metrics::MetricsRecord;
use super::{TopologySnapshot, Trainer};
use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::neural::{EmbeddingParams, LstmCellParams, OutputParams, SetLstmModel, N_SPARSE};
use crate::optim::{AdamHyper, AdamState, Moments};
use crate::rng::RngState;
use crate::sparse::{ConnectionSet, DenseMatrix, Position, SparseMatrix};

pub const MAGIC: &[u8; 4] = b"SETL";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 32;

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, x: u8) {
        self.0.push(x);
    }

    fn u32(&mut self, x: u32) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }

    fn u64(&mut self, x: u64) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }

    fn usize(&mut self, x: usize) {
        self.u64(x as u64);
    }

    fn f64(&mut self, x: f64) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }

    fn f64s(&mut self, xs: &[f64]) {
        self.usize(xs.len());
        for &x in xs {
            self.f64(x);
        }
    }

    fn bytes(&mut self, b: &[u8]) {
        self.usize(b.len());
        self.0.extend_from_slice(b);
    }

    fn mask(&mut self, c: &ConnectionSet) {
        self.usize(c.n_rows());
        self.usize(c.n_cols());
        self.usize(c.len());
        for p in c.positions() {
            self.u32(p.row);
            self.u32(p.col);
        }
    }

    fn sparse(&mut self, w: &SparseMatrix) {
        self.mask(w.mask());
        self.f64s(w.values());
    }

    fn dense(&mut self, d: &DenseMatrix) {
        self.usize(d.n_rows());
        self.usize(d.n_cols());
        self.f64s(d.as_slice());
    }

    fn model(&mut self, m: &SetLstmModel) {
        self.usize(m.dims.seq_len);
        for w in m.sparse_layers() {
            self.sparse(w);
        }
        for b in &m.cell.b {
            self.f64s(b);
        }
        self.dense(&m.output.w_out);
        self.f64s(&m.output.b_out);
    }

    fn section(&mut self, build: impl FnOnce(&mut Writer)) {
        let mut inner = Writer::default();
        build(&mut inner);
        self.bytes(&inner.0);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
}

fn corrupt(what: impl Into<String>) -> Error {
    Error::CorruptCheckpoint(what.into())
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.buf.len() {
            return Err(corrupt("unexpected end of data"));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| corrupt("length overflows usize"))
    }

    /// A count of items of `width` bytes each, checked against what remains.
    fn count(&mut self, width: usize) -> Result<usize> {
        let n = self.usize()?;
        if n.checked_mul(width).is_none_or(|b| b > self.buf.len()) {
            return Err(corrupt("length exceeds data"));
        }
        Ok(n)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.count(8)?;
        (0..n).map(|_| self.f64()).collect()
    }

    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.count(1)?;
        self.take(n)
    }

    fn mask(&mut self) -> Result<ConnectionSet> {
        let (r, c) = (self.usize()?, self.usize()?);
        let n = self.count(8)?;
        let mut positions = Vec::with_capacity(n);
        for _ in 0..n {
            positions.push(Position {
                row: self.u32()?,
                col: self.u32()?,
            });
        }
        ConnectionSet::new(r, c, positions).map_err(|e| corrupt(format!("bad mask: {e}")))
    }

    fn sparse(&mut self) -> Result<SparseMatrix> {
        let mask = self.mask()?;
        let values = self.f64s()?;
        SparseMatrix::from_mask(mask, values).map_err(|e| corrupt(format!("bad layer: {e}")))
    }

    fn dense(&mut self) -> Result<DenseMatrix> {
        let (r, c) = (self.usize()?, self.usize()?);
        DenseMatrix::from_vec(r, c, self.f64s()?).map_err(|e| corrupt(format!("bad matrix: {e}")))
    }

    fn model(&mut self) -> Result<SetLstmModel> {
        let seq_len = self.usize()?;
        let mut layers = Vec::with_capacity(N_SPARSE);
        for _ in 0..N_SPARSE {
            layers.push(self.sparse()?);
        }
        let mut b = Vec::with_capacity(4);
        for _ in 0..4 {
            b.push(self.f64s()?);
        }
        let w_out = self.dense()?;
        let b_out = self.f64s()?;
        let w_e = layers.pop().unwrap();
        let w_h: [SparseMatrix; 4] = layers.split_off(4).try_into().unwrap();
        let cell = LstmCellParams {
            w_x: layers.try_into().unwrap(),
            w_h,
            b: b.try_into().unwrap(),
        };
        SetLstmModel::from_parts(EmbeddingParams { w_e }, cell, OutputParams { w_out, b_out }, seq_len)
            .map_err(|e| corrupt(format!("inconsistent model: {e}")))
    }

    fn section(&mut self) -> Result<Reader<'a>> {
        Ok(Reader { buf: self.bytes()? })
    }

    fn finish(&self) -> Result<()> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(corrupt("trailing bytes"))
        }
    }
}

fn write_body(t: &Trainer) -> Vec<u8> {
    let mut w = Writer::default();
    w.section(|s| s.bytes(t.config.to_text().as_bytes()));
    w.section(|s| {
        s.usize(t.vocab.words().len());
        for word in t.vocab.words() {
            s.bytes(word.as_bytes());
        }
    });
    w.section(|s| {
        s.usize(t.epoch);
        s.f64(t.initial_test_acc);
    });
    w.section(|s| s.model(&t.model));
    w.section(|s| {
        let h = t.optimizer.hyper;
        for x in [h.lr, h.beta1, h.beta2, h.eps] {
            s.f64(x);
        }
        s.u64(t.optimizer.t);
        s.usize(t.optimizer.slots.len());
        for slot in &t.optimizer.slots {
            match slot {
                Moments::Sparse { keys, .. } => {
                    s.u8(1);
                    s.mask(keys);
                }
                Moments::Dense { .. } => s.u8(0),
            }
            s.f64s(slot.m());
            s.f64s(slot.v());
        }
    });
    w.section(|s| {
        for b in &t.births {
            s.f64s(b);
        }
    });
    w.section(|s| match &t.initial {
        Some(m) => {
            s.u8(1);
            s.model(m);
        }
        None => s.u8(0),
    });
    w.section(|s| match &t.best {
        Some(b) => {
            s.u8(1);
            s.usize(b.epoch);
            s.f64(b.test_acc);
            for (mask, births) in b.masks.iter().zip(&b.births) {
                s.mask(mask);
                s.f64s(births);
            }
        }
        None => s.u8(0),
    });
    w.section(|s| {
        let st = RngState::capture(&t.rng);
        s.0.extend_from_slice(&st.seed);
        s.u64(st.stream);
        s.0.extend_from_slice(&st.word_pos.to_le_bytes());
    });
    w.section(|s| {
        s.usize(t.history.len());
        for r in &t.history {
            s.usize(r.epoch);
            for x in [r.train_loss, r.train_acc, r.test_acc, r.sparsity] {
                s.f64(x);
            }
            s.usize(r.removed);
            s.usize(r.added);
            for &n in &r.nnz {
                s.usize(n);
            }
        }
    });
    w.0
}

fn read_body(body: &[u8]) -> Result<Trainer> {
    let mut r = Reader { buf: body };

    let mut s = r.section()?;
    let text = std::str::from_utf8(s.bytes()?).map_err(|_| corrupt("config is not UTF-8"))?;
    let config = TrainConfig::parse(text).map_err(|e| corrupt(format!("bad config: {e}")))?;
    s.finish()?;

    let mut s = r.section()?;
    let n = s.count(8)?;
    let mut words = Vec::with_capacity(n);
    for _ in 0..n {
        let w = std::str::from_utf8(s.bytes()?).map_err(|_| corrupt("vocabulary is not UTF-8"))?;
        words.push(w.to_string());
    }
    s.finish()?;
    let vocab = Vocabulary::from_words(words);

    let mut s = r.section()?;
    let epoch = s.usize()?;
    let initial_test_acc = s.f64()?;
    s.finish()?;

    let mut s = r.section()?;
    let model = s.model()?;
    s.finish()?;

    let mut s = r.section()?;
    let hyper = AdamHyper {
        lr: s.f64()?,
        beta1: s.f64()?,
        beta2: s.f64()?,
        eps: s.f64()?,
    };
    let t = s.u64()?;
    let n_slots = s.count(1)?;
    let mut slots = Vec::with_capacity(n_slots);
    for _ in 0..n_slots {
        let slot = match s.u8()? {
            1 => {
                let keys = s.mask()?;
                let (m, v) = (s.f64s()?, s.f64s()?);
                if m.len() != keys.len() || v.len() != keys.len() {
                    return Err(corrupt("moment length differs from keys"));
                }
                Moments::Sparse { keys, m, v }
            }
            0 => {
                let (m, v) = (s.f64s()?, s.f64s()?);
                if m.len() != v.len() {
                    return Err(corrupt("moment lengths differ"));
                }
                Moments::Dense { m, v }
            }
            k => return Err(corrupt(format!("unknown slot kind {k}"))),
        };
        slots.push(slot);
    }
    s.finish()?;
    let optimizer = AdamState { hyper, t, slots };

    let mut s = r.section()?;
    let births = (0..N_SPARSE).map(|_| s.f64s()).collect::<Result<Vec<_>>>()?;
    s.finish()?;

    let mut s = r.section()?;
    let initial = match s.u8()? {
        0 => None,
        1 => Some(s.model()?),
        k => return Err(corrupt(format!("bad presence flag {k}"))),
    };
    s.finish()?;

    let mut s = r.section()?;
    let best = match s.u8()? {
        0 => None,
        1 => {
            let epoch = s.usize()?;
            let test_acc = s.f64()?;
            let mut masks = Vec::with_capacity(N_SPARSE);
            let mut bs = Vec::with_capacity(N_SPARSE);
            for _ in 0..N_SPARSE {
                let mask = s.mask()?;
                let b = s.f64s()?;
                if b.len() != mask.len() {
                    return Err(corrupt("birth values differ from mask"));
                }
                masks.push(mask);
                bs.push(b);
            }
            Some(TopologySnapshot {
                epoch,
                test_acc,
                masks,
                births: bs,
            })
        }
        k => return Err(corrupt(format!("bad presence flag {k}"))),
    };
    s.finish()?;

    let mut s = r.section()?;
    let seed: [u8; 32] = s.take(32)?.try_into().unwrap();
    let stream = s.u64()?;
    let word_pos = s.u128()?;
    s.finish()?;
    let rng = RngState { seed, stream, word_pos }.restore();

    let mut s = r.section()?;
    let n = s.count(8)?;
    let mut history = Vec::with_capacity(n);
    for _ in 0..n {
        let epoch = s.usize()?;
        let (train_loss, train_acc, test_acc, sparsity) = (s.f64()?, s.f64()?, s.f64()?, s.f64()?);
        let (removed, added) = (s.usize()?, s.usize()?);
        let mut nnz = [0usize; N_SPARSE];
        for x in &mut nnz {
            *x = s.usize()?;
        }
        history.push(MetricsRecord {
            epoch,
            train_loss,
            train_acc,
            test_acc,
            nnz,
            sparsity,
            removed,
            added,
        });
    }
    s.finish()?;
    r.finish()?;

    let trainer = Trainer {
        config,
        vocab,
        model,
        optimizer,
        births,
        rng,
        epoch,
        initial_test_acc,
        initial,
        best,
        history,
    };
    if trainer.model.dims != trainer.config.dims(trainer.vocab.len()) {
        return Err(corrupt("model dimensions disagree with config and vocabulary"));
    }
    trainer.check_closure().map_err(|e| corrupt(format!("state does not match model: {e}")))?;
    Ok(trainer)
}

pub fn encode_checkpoint(t: &Trainer) -> Vec<u8> {
    let body = write_body(t);
    let mut out = Vec::with_capacity(HEADER_LEN + body.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&Sha256::digest(&body));
    out.extend_from_slice(&body);
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Trainer> {
    if bytes.len() < HEADER_LEN {
        return Err(corrupt("file shorter than header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch(format!(
            "checkpoint format {version}, this build reads {FORMAT_VERSION}"
        )));
    }
    let body = &bytes[HEADER_LEN..];
    if Sha256::digest(body).as_slice() != &bytes[8..HEADER_LEN] {
        return Err(corrupt("digest mismatch"));
    }
    read_body(body)
}

pub fn save_checkpoint(t: &Trainer, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(t)).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn load_checkpoint(path: &Path) -> Result<Trainer> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    decode_checkpoint(&bytes)
}
