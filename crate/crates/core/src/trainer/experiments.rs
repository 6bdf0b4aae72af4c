//! Multi-trial protocols: topology similarity, fixed-topology retraining and
//! hyperparameter sweeps. Trials are independent and run on a worker pool;
//! results are ordered by trial index.

use rayon::prelude::*;
use serde::Serialize;

use super::{InitMode, TrainConfig, Trainer, STREAM_SPLIT};
use crate::data::{build_vocab, encode_corpus, split, Corpus, EncodedDataset, Vocabulary};
use crate::error::{Error, Result};
use crate::neural::{EMBEDDING_SLOT, N_SPARSE};
use crate::rng::{derive_seed, seeded};
use crate::sparse::{ConnectionSet, DenseMatrix};
use crate::topology::similarity_matrix;

pub const SPLIT_RATIO: f64 = 0.8;

/// A split, encoded corpus and the vocabulary built from its training part.
#[derive(Clone, Debug, PartialEq)]
pub struct Prepared {
    pub vocab: Vocabulary,
    pub train: EncodedDataset,
    pub test: EncodedDataset,
}

/// Splits with the config seed and encodes. The vocabulary comes from the
/// training part unless one is supplied.
pub fn prepare(config: &TrainConfig, corpus: &Corpus, vocab: Option<Vocabulary>) -> Result<Prepared> {
    if corpus.num_classes() != config.num_classes {
        return Err(Error::Config(format!(
            "corpus has {} classes, config says num_classes = {}",
            corpus.num_classes(),
            config.num_classes
        )));
    }
    let (train, test) = split(corpus, SPLIT_RATIO, &mut seeded(derive_seed(config.seed, STREAM_SPLIT)))?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::Config(format!("corpus of {} examples is too small to split", corpus.len())));
    }
    let vocab = match vocab {
        Some(v) => v,
        None => build_vocab(&train, config.vocab_size)?,
    };
    Ok(Prepared {
        train: encode_corpus(&train, &vocab, config.seq_len),
        test: encode_corpus(&test, &vocab, config.seq_len),
        vocab,
    })
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))
}

/// Trains one model to completion with `seed` replacing the config seed.
pub fn run_trial(config: &TrainConfig, data: &Prepared, seed: u64) -> Result<Trainer> {
    let cfg = TrainConfig {
        seed,
        ..config.clone()
    };
    let mut t = Trainer::new(cfg, data.vocab.clone(), &data.test)?;
    t.run(&data.train, &data.test, |_| Ok(()))?;
    Ok(t)
}

/// Runs `f` for each item on `jobs` workers, keeping input order.
fn run_all<T: Sync, R: Send>(jobs: usize, items: &[T], f: impl Fn(&T) -> Result<R> + Sync) -> Result<Vec<R>> {
    pool(jobs)?.install(|| items.par_iter().map(&f).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimilarityReport {
    pub seeds: Vec<u64>,
    pub accuracies: Vec<f64>,
    /// Mean over the eight gate matrices of the per-gate similarity.
    pub cells: DenseMatrix,
    pub embedding: DenseMatrix,
    /// Chance overlap `n_W / S` averaged over the gate matrices.
    pub cell_baseline: f64,
    pub embedding_baseline: f64,
}

/// Mean off-diagonal entry.
pub fn off_diagonal_mean(m: &DenseMatrix) -> f64 {
    let n = m.n_rows();
    if n < 2 {
        return f64::NAN;
    }
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                sum += m.get(i, j);
            }
        }
    }
    sum / (n * (n - 1)) as f64
}

/// Similarity of best topologies across trials with the given seeds.
pub fn run_similarity_experiment(
    config: &TrainConfig,
    data: &Prepared,
    seeds: &[u64],
    jobs: usize,
) -> Result<SimilarityReport> {
    if seeds.len() < 2 {
        return Err(Error::Config("similarity needs at least 2 trials".into()));
    }
    let trials = run_all(jobs, seeds, |&s| run_trial(config, data, s))?;
    let best: Vec<Vec<ConnectionSet>> = trials.iter().map(Trainer::best_masks).collect();
    let n = seeds.len();
    let mut cells = DenseMatrix::zeros(n, n);
    let mut cell_baseline = 0.0;
    let gates = N_SPARSE - 1;
    for slot in (0..N_SPARSE).filter(|&s| s != EMBEDDING_SLOT) {
        let layer: Vec<ConnectionSet> = best.iter().map(|b| b[slot].clone()).collect();
        let sim = similarity_matrix(&layer)?;
        for (acc, s) in cells.as_mut_slice().iter_mut().zip(sim.as_slice()) {
            *acc += s / gates as f64;
        }
        cell_baseline += layer[0].density() / gates as f64;
    }
    let emb: Vec<ConnectionSet> = best.iter().map(|b| b[EMBEDDING_SLOT].clone()).collect();
    Ok(SimilarityReport {
        seeds: seeds.to_vec(),
        accuracies: trials.iter().map(Trainer::best_accuracy).collect(),
        cells,
        embedding: similarity_matrix(&emb)?,
        cell_baseline,
        embedding_baseline: emb[0].density(),
    })
}

/// Retrains on `source`'s best topology with rewiring off. Returns the
/// finished run; its accuracy is [`Trainer::best_accuracy`].
pub fn run_fixed_topology_experiment(
    config: &TrainConfig,
    source: &Trainer,
    mode: InitMode,
    data: &Prepared,
) -> Result<Trainer> {
    let mut t = Trainer::on_fixed_topology(config.clone(), source, mode, &data.test)?;
    t.run(&data.train, &data.test, |_| Ok(()))?;
    Ok(t)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Zeta,
    Epsilon,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zeta" => Ok(SweepAxis::Zeta),
            "epsilon" => Ok(SweepAxis::Epsilon),
            _ => Err(Error::Config(format!("sweep axis must be zeta or epsilon, got {s:?}"))),
        }
    }
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::Zeta => "zeta",
            SweepAxis::Epsilon => "epsilon",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub mean: f64,
    /// Population standard deviation over trials.
    pub std: f64,
    pub accuracies: Vec<f64>,
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Trials `k = 0..trials` use seed `config.seed + k` for every value.
pub fn run_sweep(
    config: &TrainConfig,
    data: &Prepared,
    axis: SweepAxis,
    values: &[f64],
    trials: usize,
    jobs: usize,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() || trials == 0 {
        return Err(Error::Config("sweep needs at least one value and one trial".into()));
    }
    let mut jobs_list = Vec::with_capacity(values.len() * trials);
    for &v in values {
        let mut cfg = config.clone();
        match axis {
            SweepAxis::Zeta => cfg.zeta = v,
            SweepAxis::Epsilon => cfg.epsilon = v,
        }
        cfg.validate()?;
        for k in 0..trials as u64 {
            jobs_list.push((cfg.clone(), config.seed.wrapping_add(k)));
        }
    }
    let accs = run_all(jobs, &jobs_list, |(cfg, seed)| Ok(run_trial(cfg, data, *seed)?.best_accuracy()))?;
    Ok(values
        .iter()
        .zip(accs.chunks(trials))
        .map(|(&value, a)| {
            let (mean, std) = mean_std(a);
            SweepRow {
                value,
                mean,
                std,
                accuracies: a.to_vec(),
            }
        })
        .collect())
}

/// CSV with header `<axis>,mean_acc,std_acc,trials`.
pub fn sweep_csv(axis: SweepAxis, rows: &[SweepRow]) -> String {
    let mut s = format!("{},mean_acc,std_acc,trials\n", axis.as_str());
    for r in rows {
        s.push_str(&format!("{},{:.6},{:.6},{}\n", r.value, r.mean, r.std, r.accuracies.len()));
    }
    s
}

/// N x N matrix as CSV, six decimals, no header.
pub fn matrix_csv(m: &DenseMatrix) -> String {
    let mut s = String::new();
    for i in 0..m.n_rows() {
        let row: Vec<String> = m.row(i).iter().map(|x| format!("{x:.6}")).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}
