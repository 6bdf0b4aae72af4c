//! Acceptance suite. Runs every criterion at its stated tolerance and prints
//! one PASS/FAIL line per criterion; exits non-zero if any fails.
//!
//! `cargo test -p setlstm-cli --test acceptance -- 1 3` runs a subset.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use rand::Rng;
use serde_json::Value;

use setlstm_core::data::{load_corpus, TokenMatrix};
use setlstm_core::neural::{ModelDims, SetLstmModel};
use setlstm_core::rng::{derive_seed, seeded};
use setlstm_core::sparse::{Position, SparseMatrix};
use setlstm_core::trainer::experiments::{
    mean_std, off_diagonal_mean, prepare, run_fixed_topology_experiment, run_similarity_experiment, run_trial, Prepared,
};
use setlstm_core::trainer::{InitMode, TrainConfig, Trainer};

type Verdict = Result<(bool, String), String>;

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn desk_data() -> PathBuf {
    root().join("data/desk.tsv")
}

fn config(name: &str) -> TrainConfig {
    TrainConfig::load(&root().join("configs").join(name)).expect("bundled config")
}

fn desk_prepared(cfg: &TrainConfig) -> Prepared {
    prepare(cfg, &load_corpus(&desk_data()).expect("bundled corpus"), None).expect("prepare desk corpus")
}

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_setlstm"))
        .args(args)
        .env_remove("SETLSTM_SEED")
        .output()
        .expect("run setlstm")
}

fn stdout_json(out: &Output) -> Result<Value, String> {
    serde_json::from_slice(&out.stdout).map_err(|e| format!("stdout is not JSON ({e}): {}", String::from_utf8_lossy(&out.stdout)))
}

// 1 -------------------------------------------------------------------------

fn parameter_accounting() -> Verdict {
    let mut notes = Vec::new();
    let mut ok = true;
    let mut count = |conf: &str| -> Result<Value, String> {
        let t = Instant::now();
        let out = cli(&["count-params", "--config", root().join("configs").join(conf).to_str().unwrap(), "--json"]);
        if !out.status.success() {
            return Err(format!("count-params {conf} exited {:?}", out.status.code()));
        }
        let secs = t.elapsed().as_secs_f64();
        if secs >= 1.0 {
            ok = false;
            notes.push(format!("{conf} took {secs:.2}s"));
        }
        stdout_json(&out)
    };
    let dense = count("full_dense.conf")?;
    let eps10 = count("full.conf")?;
    let eps2 = count("full_extreme.conf")?;

    let dense_baseline = dense["dense_baseline"].as_u64().unwrap();
    let dense_total = dense["sparse_total"].as_u64().unwrap();
    let t10 = eps10["sparse_total"].as_u64().unwrap() as f64;
    let s10 = eps10["sparsity"].as_f64().unwrap() * 100.0;
    let s2 = eps2["sparsity"].as_f64().unwrap() * 100.0;

    let checks = [
        (dense_baseline == 5_645_312, format!("dense baseline {dense_baseline} == 5645312")),
        (dense_total == 5_645_312, format!("dense-sentinel total {dense_total} == 5645312")),
        ((t10 - 243_442.0).abs() / 243_442.0 <= 0.01, format!("eps=10 total {t10} within 1% of 243442")),
        ((s10 - 95.69).abs() <= 0.8, format!("eps=10 sparsity {s10:.3}% within 95.69 +- 0.8")),
        ((s2 - 99.1).abs() <= 0.3, format!("eps=2 sparsity {s2:.3}% within 99.1 +- 0.3")),
    ];
    for (pass, msg) in checks {
        ok &= pass;
        notes.push(format!("{}{msg}", if pass { "" } else { "FAILED " }));
    }
    Ok((ok, notes.join("; ")))
}

// 2 -------------------------------------------------------------------------

fn gradient_correctness() -> Verdict {
    let out = cli(&["gradcheck", "--seed", "0", "--instances", "24", "--json"]);
    let report = stdout_json(&out)?;
    let worst = report["worst"].as_f64().unwrap();
    let instances = report["instances"].as_u64().unwrap();
    let every_class = report["classes"].as_array().unwrap().iter().all(|c| c["checked"].as_u64().unwrap() > 0);
    let control = cli(&["gradcheck", "--seed", "0", "--instances", "24", "--corrupt-gradient"]);
    let ok = out.status.code() == Some(0)
        && worst < 1e-4
        && instances >= 20
        && every_class
        && control.status.code() == Some(3);
    Ok((
        ok,
        format!(
            "{instances} instances, worst relative error {worst:.2e} (< 1e-4), all classes checked: {every_class}, \
             corrupted-gradient control exit {:?}",
            control.status.code()
        ),
    ))
}

// 3 -------------------------------------------------------------------------

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Row vector times dense matrix.
fn vec_mat(x: &[f64], w: &[Vec<f64>]) -> Vec<f64> {
    let cols = w.first().map_or(0, Vec::len);
    (0..cols).map(|j| x.iter().zip(w).map(|(a, row)| a * row[j]).sum()).collect()
}

fn to_rows(w: &SparseMatrix) -> Vec<Vec<f64>> {
    let d = w.densify();
    (0..d.n_rows()).map(|r| d.row(r).to_vec()).collect()
}

/// Independent dense forward pass, one example at a time.
fn dense_logits(m: &SetLstmModel, tokens: &TokenMatrix) -> Vec<Vec<f64>> {
    let emb = to_rows(&m.embedding.w_e);
    let wx: Vec<Vec<Vec<f64>>> = m.cell.w_x.iter().map(to_rows).collect();
    let wh: Vec<Vec<Vec<f64>>> = m.cell.w_h.iter().map(to_rows).collect();
    let hdim = m.dims.hidden;
    let w_out: Vec<Vec<f64>> = (0..hdim).map(|r| m.output.w_out.row(r).to_vec()).collect();
    (0..tokens.n_rows())
        .map(|b| {
            let mut h = vec![0.0; hdim];
            let mut c = vec![0.0; hdim];
            for t in 0..tokens.n_cols() {
                let x = &emb[tokens.get(b, t)];
                let pre: Vec<Vec<f64>> = (0..4)
                    .map(|g| {
                        let a = vec_mat(x, &wx[g]);
                        let r = vec_mat(&h, &wh[g]);
                        (0..hdim).map(|j| a[j] + r[j] + m.cell.b[g][j]).collect()
                    })
                    .collect();
                for j in 0..hdim {
                    let (i, f, o, g) = (sigmoid(pre[0][j]), sigmoid(pre[1][j]), sigmoid(pre[2][j]), pre[3][j].tanh());
                    c[j] = f * c[j] + i * g;
                    h[j] = o * c[j].tanh();
                }
            }
            let z = vec_mat(&h, &w_out);
            z.iter().zip(&m.output.b_out).map(|(a, b)| a + b).collect()
        })
        .collect()
}

fn dense_oracle_equivalence() -> Verdict {
    let mut worst = 0.0f64;
    for k in 0..100u64 {
        let mut rng = seeded(derive_seed(3, k));
        let dims = ModelDims {
            vocab: rng.random_range(2..=12),
            embed: rng.random_range(1..=8),
            hidden: rng.random_range(1..=8),
            seq_len: rng.random_range(1..=7),
            classes: rng.random_range(2..=4),
        };
        let epsilon = [0.5, 1.0, 3.0, f64::INFINITY][(k % 4) as usize];
        let mut m = SetLstmModel::init(dims, epsilon, &mut rng).map_err(|e| e.to_string())?;
        for b in m.cell.b.iter_mut().chain(std::iter::once(&mut m.output.b_out)) {
            b.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
        }
        let batch = rng.random_range(1..=5);
        let tokens = TokenMatrix::from_rows(
            (0..batch)
                .map(|_| (0..dims.seq_len).map(|_| rng.random_range(0..dims.vocab)).collect())
                .collect(),
        )
        .unwrap();
        let sparse = m.logits(&tokens).map_err(|e| e.to_string())?;
        let dense = dense_logits(&m, &tokens);
        for (b, row) in dense.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                worst = worst.max((sparse.get(b, c) - v).abs());
            }
        }
    }
    Ok((worst <= 1e-12, format!("100 instances, max |sparse - dense| = {worst:.2e} (<= 1e-12)")))
}

// 4 -------------------------------------------------------------------------

/// Indices of entries to prune, by an explicit (magnitude, position) sort.
fn oracle_removed(w: &SparseMatrix, zeta: f64) -> Vec<Position> {
    let mut pos: Vec<(f64, Position)> = w.iter().filter(|e| e.1 > 0.0).map(|(p, v)| (v, p)).collect();
    let mut neg: Vec<(f64, Position)> = w.iter().filter(|e| e.1 < 0.0).map(|(p, v)| (-v, p)).collect();
    let key = |a: &(f64, Position), b: &(f64, Position)| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1));
    pos.sort_by(key);
    neg.sort_by(key);
    let kp = (zeta * pos.len() as f64).floor() as usize;
    let kn = (zeta * neg.len() as f64).floor() as usize;
    let mut out: Vec<Position> = pos[..kp].iter().chain(&neg[..kn]).map(|e| e.1).collect();
    out.extend(w.iter().filter(|e| e.1 == 0.0).map(|e| e.0));
    out.sort();
    out
}

fn rewiring_invariants() -> Verdict {
    let cfg = TrainConfig {
        zeta: 0.4,
        ..config("desk.conf")
    };
    let data = desk_prepared(&cfg);
    let mut t = Trainer::new(cfg.clone(), data.vocab.clone(), &data.test).map_err(|e| e.to_string())?;
    let initial: Vec<usize> = t.model.sparse_layers().iter().map(|w| w.nnz()).collect();
    let mut problems = Vec::new();
    let mut layer_events = 0;
    for epoch in 1..=cfg.epochs {
        let regrow = !t.is_final_epoch();
        let (loss, acc) = t.train_pass(&data.train).map_err(|e| e.to_string())?;
        let before: Vec<SparseMatrix> = t.model.sparse_layers().iter().map(|w| (*w).clone()).collect();
        let reports = t.rewire_layers(regrow).map_err(|e| e.to_string())?;
        for (slot, (old, rep)) in before.iter().zip(&reports).enumerate() {
            layer_events += 1;
            let new = t.model.sparse_layers()[slot];
            let expected = oracle_removed(old, cfg.zeta);
            if rep.removed() != expected {
                problems.push(format!("epoch {epoch} layer {slot}: removed set differs from oracle"));
            }
            if regrow {
                if new.nnz() != initial[slot] || rep.added.len() != expected.len() {
                    problems.push(format!("epoch {epoch} layer {slot}: nnz {} != {}", new.nnz(), initial[slot]));
                }
                if rep.added.iter().any(|p| old.mask().contains(*p) && !expected.contains(p)) {
                    problems.push(format!("epoch {epoch} layer {slot}: regrew onto a surviving connection"));
                }
            } else if !rep.added.is_empty() || new.nnz() != old.nnz() - expected.len() {
                problems.push(format!("epoch {epoch} layer {slot}: final epoch regrew"));
            }
            if t.optimizer.check_keys(slot, new.mask()).is_err() {
                problems.push(format!("epoch {epoch} layer {slot}: optimizer keys differ from mask"));
            }
        }
        t.finish_epoch(loss, acc, &reports, &data.test).map_err(|e| e.to_string())?;
        if epoch == 1 && !(loss < (cfg.num_classes as f64).ln()) {
            problems.push(format!("epoch 1 train loss {loss:.4} not below ln C"));
        }
    }
    let ok = problems.is_empty();
    let detail = if ok {
        format!("{layer_events} layer rewiring events checked against the sort oracle; nnz and optimizer keys consistent")
    } else {
        problems.join("; ")
    };
    Ok((ok, detail))
}

// 5 -------------------------------------------------------------------------

/// Mean cross-entropy over a whole dataset.
fn dataset_loss(model: &SetLstmModel, data: &setlstm_core::EncodedDataset) -> Result<f64, String> {
    let mut sum = 0.0;
    for start in (0..data.len()).step_by(256) {
        let idx: Vec<usize> = (start..(start + 256).min(data.len())).collect();
        let part = data.select(&idx);
        sum += model.loss(&part.tokens, &part.labels).map_err(|e| e.to_string())? * idx.len() as f64;
    }
    Ok(sum / data.len() as f64)
}

fn desk_trainability() -> Verdict {
    let mut ok = true;
    let mut notes = Vec::new();
    for (conf, threshold) in [("desk.conf", 0.90), ("desk_extreme.conf", 0.85)] {
        let cfg = config(conf);
        let data = desk_prepared(&cfg);
        let mut t = Trainer::new(cfg.clone(), data.vocab.clone(), &data.test).map_err(|e| e.to_string())?;
        let initial_loss = dataset_loss(&t.model, &data.train)?;
        let mut after_first = f64::NAN;
        t.run(&data.train, &data.test, |t| {
            if t.history.len() == 1 {
                after_first = dataset_loss(&t.model, &data.train).map_err(setlstm_core::Error::Config)?;
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
        let best = t.best_accuracy();
        let ln_c = (cfg.num_classes as f64).ln();
        let pass = cfg.epochs <= 10 && best >= threshold && after_first < ln_c && after_first < initial_loss;
        ok &= pass;
        notes.push(format!(
            "eps={} sparsity {:.2}%: best test acc {best:.4} (>= {threshold}) by epoch {}, final {:.4}, \
             train loss {initial_loss:.4} -> {after_first:.4} after epoch 1 (ln C {ln_c:.4}, running mean {:.4})",
            cfg.epsilon,
            t.history[0].sparsity * 100.0,
            t.best.as_ref().map_or(0, |b| b.epoch),
            t.final_accuracy(),
            t.history[0].train_loss
        ));
    }
    Ok((ok, notes.join("; ")))
}

// 6 -------------------------------------------------------------------------

fn similarity_structure() -> Verdict {
    let cfg = config("desk.conf");
    let data = desk_prepared(&cfg);
    let seeds: Vec<u64> = (0..5).map(|k| cfg.seed + k).collect();
    let r = run_similarity_experiment(&cfg, &data, &seeds, 1).map_err(|e| e.to_string())?;
    let cells = off_diagonal_mean(&r.cells);
    let emb = off_diagonal_mean(&r.embedding);
    let chance_cells = 5120.0 / 65536.0;
    let within = |x: f64, base: f64| (x - base).abs() <= 0.5 * base;
    let ok = (r.cell_baseline - chance_cells).abs() < 1e-12 && within(cells, r.cell_baseline) && within(emb, r.embedding_baseline);
    Ok((
        ok,
        format!(
            "cells {:.4} vs baseline {:.4}; embedding {:.4} vs baseline {:.4} ({} x {} rows); within +-50%",
            cells,
            r.cell_baseline,
            emb,
            r.embedding_baseline,
            data.vocab.len(),
            cfg.embed_dim
        ),
    ))
}

// 7 -------------------------------------------------------------------------

fn initialization_effect() -> Verdict {
    let cfg = config("desk.conf");
    let data = desk_prepared(&cfg);
    let mut same = Vec::new();
    let mut fresh = Vec::new();
    for k in 0..5 {
        let seed = cfg.seed + 100 + k;
        let c = TrainConfig { seed, ..cfg.clone() };
        let source = run_trial(&c, &data, seed).map_err(|e| e.to_string())?;
        for (mode, out) in [(InitMode::SameAsCheckpoint, &mut same), (InitMode::Fresh, &mut fresh)] {
            let t = run_fixed_topology_experiment(&c, &source, mode, &data).map_err(|e| e.to_string())?;
            if t.model.masks() != source.best_masks() {
                return Err("fixed-topology run changed its topology".into());
            }
            out.push(t.best_accuracy());
        }
    }
    let (ms, ss) = mean_std(&same);
    let (mf, sf) = mean_std(&fresh);
    let ok = ms >= mf && sf * sf >= ss * ss;
    Ok((
        ok,
        format!("same-init {ms:.4} (+-{ss:.4}) {same:?}; fresh {mf:.4} (+-{sf:.4}) {fresh:?}"),
    ))
}

// 8 -------------------------------------------------------------------------

fn read(p: &Path) -> Result<Vec<u8>, String> {
    std::fs::read(p).map_err(|e| format!("{}: {e}", p.display()))
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let conf = root().join("configs/desk.conf");
    let data = desk_data();
    let train = |out: &Path, extra: &[&str]| -> Result<(), String> {
        let mut args = vec![
            "train",
            "--config",
            conf.to_str().unwrap(),
            "--data",
            data.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ];
        args.extend_from_slice(extra);
        let o = cli(&args);
        if o.status.success() {
            Ok(())
        } else {
            Err(format!("train failed: {}", String::from_utf8_lossy(&o.stderr)))
        }
    };
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    train(&a, &["--save-every", "5"])?;
    train(&b, &[])?;
    train(&c, &["--resume", a.join("epoch_5.ckpt").to_str().unwrap()])?;
    let same = |x: &Path, y: &Path, f: &str| -> Result<bool, String> { Ok(read(&x.join(f))? == read(&y.join(f))?) };
    let repeat = same(&a, &b, "metrics.csv")? && same(&a, &b, "final.ckpt")?;
    let resumed = same(&a, &c, "metrics.csv")? && same(&a, &c, "final.ckpt")?;
    Ok((
        repeat && resumed,
        format!("repeat run byte-identical: {repeat}; resumed from epoch 5 byte-identical: {resumed}"),
    ))
}

struct Criterion {
    id: &'static str,
    name: &'static str,
    budget: Duration,
    run: fn() -> Verdict,
}

fn main() {
    let criteria = [
        Criterion { id: "1", name: "parameter accounting", budget: Duration::from_secs(5), run: parameter_accounting },
        Criterion { id: "2", name: "gradient correctness", budget: Duration::from_secs(30), run: gradient_correctness },
        Criterion { id: "3", name: "dense-oracle equivalence", budget: Duration::from_secs(10), run: dense_oracle_equivalence },
        Criterion { id: "4", name: "rewiring invariants", budget: Duration::from_secs(120), run: rewiring_invariants },
        Criterion { id: "5", name: "desk-scale trainability", budget: Duration::from_secs(15 * 60), run: desk_trainability },
        Criterion { id: "6", name: "similarity structure", budget: Duration::from_secs(45 * 60), run: similarity_structure },
        Criterion { id: "7", name: "initialization effect", budget: Duration::from_secs(30 * 60), run: initialization_effect },
        Criterion { id: "8", name: "determinism", budget: Duration::from_secs(10 * 60), run: determinism },
    ];
    // libtest-style flags from `cargo test` are ignored; bare numbers select criteria
    let selected: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for c in criteria.iter().filter(|c| selected.is_empty() || selected.iter().any(|s| s == c.id)) {
        let start = Instant::now();
        let verdict = (c.run)();
        let elapsed = start.elapsed();
        let in_budget = elapsed <= c.budget;
        let (pass, detail) = match verdict {
            Ok((pass, detail)) => (pass && in_budget, detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "{} [{}] {}: {} ({:.1}s, budget {}s{})",
            if pass { "PASS" } else { "FAIL" },
            c.id,
            c.name,
            detail,
            elapsed.as_secs_f64(),
            c.budget.as_secs(),
            if in_budget { "" } else { ", over budget" }
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
