//! Central finite-difference check of the analytic gradients on small random
//! models.

use rand::Rng;
use serde::Serialize;

use crate::data::TokenMatrix;
use crate::error::Result;
use crate::neural::{ModelDims, SetLstmModel, N_SLOTS};
use crate::rng::{derive_seed, seeded};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

/// Parameter classes reported separately.
pub const CLASSES: [&str; 6] = ["embedding", "input_weights", "recurrent_weights", "gate_biases", "output_weights", "output_bias"];

fn class_of(slot: usize) -> usize {
    match slot {
        0..=3 => 1,
        4..=7 => 2,
        8 => 0,
        9..=12 => 3,
        13 => 4,
        _ => 5,
    }
}

/// Upper bounds for random instance dimensions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct SizeBounds {
    pub batch: usize,
    pub steps: usize,
    pub embed: usize,
    pub hidden: usize,
    pub vocab: usize,
    pub classes: usize,
}

impl Default for SizeBounds {
    fn default() -> Self {
        SizeBounds {
            batch: 6,
            steps: 6,
            embed: 6,
            hidden: 6,
            vocab: 8,
            classes: 4,
        }
    }
}

impl std::str::FromStr for SizeBounds {
    type Err = crate::error::Error;

    /// `B,T,D,H` or `B,T,D,H,V,C`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || crate::error::Error::Config(format!("sizes must be B,T,D,H[,V,C] positive integers, got {s:?}"));
        let xs: Vec<usize> = s
            .split(',')
            .map(|p| p.trim().parse::<usize>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let d = SizeBounds::default();
        let b = match xs.as_slice() {
            [b, t, e, h] => SizeBounds {
                batch: *b,
                steps: *t,
                embed: *e,
                hidden: *h,
                ..d
            },
            [b, t, e, h, v, c] => SizeBounds {
                batch: *b,
                steps: *t,
                embed: *e,
                hidden: *h,
                vocab: *v,
                classes: *c,
            },
            _ => return Err(bad()),
        };
        if [b.batch, b.steps, b.embed, b.hidden].contains(&0) || b.vocab < 2 || b.classes < 2 {
            return Err(bad());
        }
        Ok(b)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassError {
    pub class: String,
    pub worst: f64,
    pub checked: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub instances: usize,
    pub classes: Vec<ClassError>,
    pub worst: f64,
    pub passed: bool,
}

/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Checks every parameter of `instances` random models. `corrupt` scales one
/// analytic gradient entry per instance, as a negative control.
pub fn run_gradcheck(seed: u64, bounds: SizeBounds, instances: usize, corrupt: bool) -> Result<GradcheckReport> {
    let mut worst = [0.0f64; CLASSES.len()];
    let mut checked = [0usize; CLASSES.len()];
    for k in 0..instances {
        let mut rng = seeded(derive_seed(seed, k as u64));
        let dims = ModelDims {
            vocab: rng.random_range(2..=bounds.vocab),
            embed: rng.random_range(1..=bounds.embed),
            hidden: rng.random_range(1..=bounds.hidden),
            seq_len: rng.random_range(1..=bounds.steps),
            classes: rng.random_range(2..=bounds.classes),
        };
        let batch = rng.random_range(1..=bounds.batch);
        let epsilon = [0.5, 1.0, 2.0, f64::INFINITY][k % 4];
        let mut model = SetLstmModel::init(dims, epsilon, &mut rng)?;
        // non-zero biases so every gate term is exercised
        for b in model.cell.b.iter_mut().chain(std::iter::once(&mut model.output.b_out)) {
            for x in b.iter_mut() {
                *x = rng.random_range(-0.5..0.5);
            }
        }
        let tokens = TokenMatrix::from_rows(
            (0..batch)
                .map(|_| (0..dims.seq_len).map(|_| rng.random_range(0..dims.vocab)).collect())
                .collect(),
        )?;
        let labels: Vec<usize> = (0..batch).map(|_| rng.random_range(0..dims.classes)).collect();

        let grads = model.forward_backward(&tokens, &labels)?.grads;
        let corrupted_slot = k % N_SLOTS;
        for slot in 0..N_SLOTS {
            let analytic = grads.slot_values(slot).to_vec();
            for (i, &a) in analytic.iter().enumerate() {
                let a = if corrupt && slot == corrupted_slot && i == 0 { a * 1.01 + 1e-3 } else { a };
                let orig = model.slot_values_mut(slot)[i];
                model.slot_values_mut(slot)[i] = orig + STEP;
                let up = model.loss(&tokens, &labels)?;
                model.slot_values_mut(slot)[i] = orig - STEP;
                let down = model.loss(&tokens, &labels)?;
                model.slot_values_mut(slot)[i] = orig;
                let numeric = (up - down) / (2.0 * STEP);
                let c = class_of(slot);
                worst[c] = worst[c].max(relative_error(a, numeric));
                checked[c] += 1;
            }
        }
    }
    let overall = worst.iter().copied().fold(0.0, f64::max);
    Ok(GradcheckReport {
        seed,
        instances,
        classes: CLASSES
            .iter()
            .zip(worst.iter().zip(checked))
            .map(|(c, (&w, n))| ClassError {
                class: c.to_string(),
                worst: w,
                checked: n,
            })
            .collect(),
        worst: overall,
        passed: overall < TOLERANCE,
    })
}
