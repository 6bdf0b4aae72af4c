//! `setlstm`: train, evaluate and analyse SET-LSTM text classifiers.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime error, 3 verification
//! failure. Machine-readable results go to stdout, everything else to stderr.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use setlstm_core::data::{classes_path, load_corpus};
use setlstm_core::desk::{self, DeskSpec};
use setlstm_core::gradcheck::{run_gradcheck, SizeBounds, TOLERANCE};
use setlstm_core::neural::{param_count, SetLstmModel};
use setlstm_core::rng::seeded;
use setlstm_core::trainer::checkpoint::{load_checkpoint, save_checkpoint};
use setlstm_core::trainer::experiments::{
    matrix_csv, off_diagonal_mean, prepare, run_fixed_topology_experiment, run_similarity_experiment, run_sweep,
    sweep_csv, SweepAxis,
};
use setlstm_core::trainer::{evaluate, metrics_csv, InitMode, TrainConfig, Trainer};
use setlstm_core::Error as CoreError;

const SEED_ENV: &str = "SETLSTM_SEED";

#[derive(Parser)]
#[command(name = "setlstm", version, about = "Sparse-from-scratch LSTM text classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Fresh,
    SameAsCheckpoint,
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    Zeta,
    Epsilon,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model; writes metrics.csv and final.ckpt under --out.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint written with the same config.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write epoch_<k>.ckpt every N epochs.
        #[arg(long, default_value_t = 0)]
        save_every: usize,
    },
    /// Accuracy of a checkpoint on the test split of a corpus.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Mean and std of best test accuracy over a grid of zeta or epsilon.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        axis: Axis,
        /// Comma-separated values; `dense` is accepted for epsilon.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long, default_value_t = 1)]
        trials: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        json: bool,
    },
    /// Pairwise similarity of best topologies over independent trials.
    Similarity {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        trials: usize,
        #[arg(long)]
        out: PathBuf,
        /// Explicit trial seeds (comma-separated); default seed, seed+1, ...
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        json: bool,
    },
    /// Retrain on a checkpoint's best topology with rewiring off.
    FixedTopology {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Parameter accounting against the dense model.
    CountParams {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Finite-difference check of every gradient on random toy models.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Upper bounds B,T,D,H or B,T,D,H,V,C.
        #[arg(long)]
        sizes: Option<String>,
        #[arg(long, default_value_t = 24)]
        instances: usize,
        #[arg(long)]
        json: bool,
        #[arg(long, hide = true)]
        corrupt_gradient: bool,
    },
    /// Write the synthetic sentiment corpus and its class names.
    MakeCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        examples: Option<usize>,
    },
}

enum Outcome {
    Ok,
    VerificationFailed,
}

fn resolve_config(path: &Path, seed_flag: Option<u64>) -> Result<TrainConfig> {
    let mut config = TrainConfig::load(path)?;
    if let Some(s) = seed_flag {
        config.seed = s;
    } else if let Ok(v) = std::env::var(SEED_ENV) {
        config.seed = v
            .trim()
            .parse()
            .with_context(|| format!("{SEED_ENV}={v:?} is not an unsigned integer"))?;
    }
    eprint!("resolved config:\n{}", config.to_text());
    Ok(config)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn cmd_train(
    config: &Path,
    data: &Path,
    out: &Path,
    resume: Option<&Path>,
    seed: Option<u64>,
    save_every: usize,
) -> Result<Outcome> {
    let config = resolve_config(config, seed)?;
    let corpus = load_corpus(data)?;
    create_dir(out)?;

    let (mut trainer, prepared) = if let Some(ckpt) = resume {
        let t = load_checkpoint(ckpt)?;
        if t.config != config {
            return Err(CoreError::VersionMismatch(format!(
                "checkpoint {} was written with a different config:\n{}",
                ckpt.display(),
                t.config.to_text()
            ))
            .into());
        }
        let p = prepare(&config, &corpus, Some(t.vocab.clone()))?;
        eprintln!("resuming at epoch {}", t.epoch);
        (t, p)
    } else if let Some(src_path) = &config.fixed_topology {
        let src = load_checkpoint(src_path)?;
        let p = prepare(&config, &corpus, Some(src.vocab.clone()))?;
        (Trainer::on_fixed_topology(config.clone(), &src, config.init_mode, &p.test)?, p)
    } else {
        let p = prepare(&config, &corpus, None)?;
        (Trainer::new(config.clone(), p.vocab.clone(), &p.test)?, p)
    };

    eprintln!(
        "train {} / test {} examples, vocabulary {}, initial test_acc {:.4}",
        prepared.train.len(),
        prepared.test.len(),
        prepared.vocab.len(),
        trainer.initial_test_acc
    );
    trainer.run(&prepared.train, &prepared.test, |t| {
        let r = t.history.last().expect("epoch just finished");
        eprintln!(
            "epoch {:>3}  loss {:.4}  train_acc {:.4}  test_acc {:.4}  nnz {}  sparsity {:.4}  rewired {}",
            r.epoch,
            r.train_loss,
            r.train_acc,
            r.test_acc,
            r.nnz_total(),
            r.sparsity,
            r.removed
        );
        if save_every > 0 && t.epoch % save_every == 0 {
            save_checkpoint(t, &out.join(format!("epoch_{}.ckpt", t.epoch)))?;
        }
        Ok(())
    })?;
    write(&out.join("metrics.csv"), metrics_csv(&trainer.history))?;
    save_checkpoint(&trainer, &out.join("final.ckpt"))?;
    println!("best_test_acc={:.6}", trainer.best_accuracy());
    println!("test_acc={:.6}", trainer.final_accuracy());
    Ok(Outcome::Ok)
}

fn cmd_eval(checkpoint: &Path, data: &Path, json: bool) -> Result<Outcome> {
    let t = load_checkpoint(checkpoint)?;
    eprint!("checkpoint config:\n{}", t.config.to_text());
    let p = prepare(&t.config, &load_corpus(data)?, Some(t.vocab.clone()))?;
    let acc = evaluate(&t.model, &p.test)?;
    if json {
        println!("{}", serde_json::json!({ "epoch": t.epoch, "test_acc": acc, "n": p.test.len() }));
    } else {
        println!("test_acc={acc:.6}");
    }
    Ok(Outcome::Ok)
}

fn parse_axis_value(axis: Axis, v: &str) -> Result<f64> {
    match (axis, v.trim()) {
        (Axis::Epsilon, "dense") => Ok(f64::INFINITY),
        (_, s) => s.parse().with_context(|| format!("sweep value {s:?} is not a number")),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_sweep(
    config: &Path,
    data: &Path,
    axis: Axis,
    values: &[String],
    trials: usize,
    out: Option<&Path>,
    seed: Option<u64>,
    jobs: usize,
    json: bool,
) -> Result<Outcome> {
    let config = resolve_config(config, seed)?;
    let values: Vec<f64> = values.iter().map(|v| parse_axis_value(axis, v)).collect::<Result<_>>()?;
    let axis = match axis {
        Axis::Zeta => SweepAxis::Zeta,
        Axis::Epsilon => SweepAxis::Epsilon,
    };
    let p = prepare(&config, &load_corpus(data)?, None)?;
    let rows = run_sweep(&config, &p, axis, &values, trials, jobs)?;
    let csv = sweep_csv(axis, &rows);
    if let Some(dir) = out {
        create_dir(dir)?;
        write(&dir.join("sweep.csv"), &csv)?;
    }
    if json {
        println!("{}", serde_json::to_string(&serde_json::json!({ "axis": axis, "rows": rows }))?);
    } else {
        print!("{csv}");
    }
    Ok(Outcome::Ok)
}

#[allow(clippy::too_many_arguments)]
fn cmd_similarity(
    config: &Path,
    data: &Path,
    trials: usize,
    out: &Path,
    seeds: &[u64],
    seed: Option<u64>,
    jobs: usize,
    json: bool,
) -> Result<Outcome> {
    let config = resolve_config(config, seed)?;
    let seeds: Vec<u64> = if seeds.is_empty() {
        (0..trials as u64).map(|k| config.seed.wrapping_add(k)).collect()
    } else if seeds.len() == trials {
        seeds.to_vec()
    } else {
        bail!("--seeds lists {} seeds but --trials is {trials}", seeds.len());
    };
    let p = prepare(&config, &load_corpus(data)?, None)?;
    let r = run_similarity_experiment(&config, &p, &seeds, jobs)?;
    create_dir(out)?;
    write(&out.join("cells_similarity.csv"), matrix_csv(&r.cells))?;
    write(&out.join("embedding_similarity.csv"), matrix_csv(&r.embedding))?;
    write(
        &out.join("baseline.txt"),
        format!("cells={:.6}\nembedding={:.6}\n", r.cell_baseline, r.embedding_baseline),
    )?;
    if json {
        println!("{}", serde_json::to_string(&r)?);
    } else {
        println!("cells_mean_similarity={:.6}", off_diagonal_mean(&r.cells));
        println!("embedding_mean_similarity={:.6}", off_diagonal_mean(&r.embedding));
        println!("cells_baseline={:.6}", r.cell_baseline);
        println!("embedding_baseline={:.6}", r.embedding_baseline);
    }
    Ok(Outcome::Ok)
}

fn cmd_fixed_topology(
    checkpoint: &Path,
    data: &Path,
    mode: Mode,
    epochs: Option<usize>,
    seed: Option<u64>,
    out: Option<&Path>,
    json: bool,
) -> Result<Outcome> {
    let src = load_checkpoint(checkpoint)?;
    let mut config = src.config.clone();
    config.fixed_topology = None;
    if let Some(e) = epochs {
        config.epochs = e;
    }
    if let Some(s) = seed {
        config.seed = s;
    } else if let Ok(v) = std::env::var(SEED_ENV) {
        config.seed = v.trim().parse().with_context(|| format!("{SEED_ENV}={v:?}"))?;
    }
    let mode = match mode {
        Mode::Fresh => InitMode::Fresh,
        Mode::SameAsCheckpoint => InitMode::SameAsCheckpoint,
    };
    eprint!("resolved config:\n{}", config.to_text());
    let p = prepare(&src.config, &load_corpus(data)?, Some(src.vocab.clone()))?;
    let t = run_fixed_topology_experiment(&config, &src, mode, &p)?;
    if let Some(dir) = out {
        create_dir(dir)?;
        write(&dir.join("metrics.csv"), metrics_csv(&t.history))?;
        save_checkpoint(&t, &dir.join("final.ckpt"))?;
    }
    if json {
        println!(
            "{}",
            serde_json::json!({ "mode": mode.as_str(), "accuracy": t.best_accuracy(), "final_accuracy": t.final_accuracy() })
        );
    } else {
        println!("accuracy={:.6}", t.best_accuracy());
    }
    Ok(Outcome::Ok)
}

fn cmd_count_params(config: &Path, json: bool) -> Result<Outcome> {
    let config = resolve_config(config, None)?;
    let model = SetLstmModel::init(config.dims(config.vocab_size), config.epsilon, &mut seeded(config.seed))?;
    let c = param_count(&model);
    if json {
        println!("{}", serde_json::to_string(&c)?);
        return Ok(Outcome::Ok);
    }
    println!("{:<8} {:>12} {:>12}", "layer", "nnz", "dense");
    for l in &c.layers {
        println!("{:<8} {:>12} {:>12}", l.name, l.nnz, l.dense);
    }
    println!("{:<8} {:>12}", "biases", c.biases);
    println!("total={}", c.sparse_total);
    println!("dense_baseline={}", c.dense_baseline);
    println!("sparsity={:.4}", c.sparsity * 100.0);
    println!("output_layer={}", c.output);
    Ok(Outcome::Ok)
}

fn cmd_gradcheck(seed: u64, sizes: Option<&str>, instances: usize, json: bool, corrupt: bool) -> Result<Outcome> {
    let bounds: SizeBounds = match sizes {
        Some(s) => s.parse()?,
        None => SizeBounds::default(),
    };
    eprintln!("gradcheck seed {seed}, {instances} instances, bounds {bounds:?}, tolerance {TOLERANCE:e}");
    let r = run_gradcheck(seed, bounds, instances, corrupt)?;
    if json {
        println!("{}", serde_json::to_string(&r)?);
    } else {
        for c in &r.classes {
            println!("{}={:.3e}", c.class, c.worst);
        }
        println!("worst={:.3e}", r.worst);
        println!("status={}", if r.passed { "pass" } else { "fail" });
    }
    Ok(if r.passed { Outcome::Ok } else { Outcome::VerificationFailed })
}

fn cmd_make_corpus(out: &Path, seed: Option<u64>, examples: Option<usize>) -> Result<Outcome> {
    let mut spec = DeskSpec::default();
    if let Some(s) = seed {
        spec.seed = s;
    }
    if let Some(n) = examples {
        spec.n_examples = n;
    }
    let corpus = desk::generate(&spec)?;
    write(out, corpus.to_tsv())?;
    write(&classes_path(out), corpus.class_names.join("\n") + "\n")?;
    println!("examples={}", corpus.len());
    Ok(Outcome::Ok)
}

fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Train {
            config,
            data,
            out,
            resume,
            seed,
            save_every,
        } => cmd_train(&config, &data, &out, resume.as_deref(), seed, save_every),
        Command::Eval { checkpoint, data, json } => cmd_eval(&checkpoint, &data, json),
        Command::Sweep {
            config,
            data,
            axis,
            values,
            trials,
            out,
            seed,
            jobs,
            json,
        } => cmd_sweep(&config, &data, axis, &values, trials, out.as_deref(), seed, jobs, json),
        Command::Similarity {
            config,
            data,
            trials,
            out,
            seeds,
            seed,
            jobs,
            json,
        } => cmd_similarity(&config, &data, trials, &out, &seeds, seed, jobs, json),
        Command::FixedTopology {
            checkpoint,
            data,
            mode,
            epochs,
            seed,
            out,
            json,
        } => cmd_fixed_topology(&checkpoint, &data, mode, epochs, seed, out.as_deref(), json),
        Command::CountParams { config, json } => cmd_count_params(&config, json),
        Command::Gradcheck {
            seed,
            sizes,
            instances,
            json,
            corrupt_gradient,
        } => cmd_gradcheck(seed, sizes.as_deref(), instances, json, corrupt_gradient),
        Command::MakeCorpus { out, seed, examples } => cmd_make_corpus(&out, seed, examples),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::VerificationFailed) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
