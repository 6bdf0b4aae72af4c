//! Adam over a mixed set of sparse and dense parameter tensors.
//!
//! Sparse moments are keyed by connection position and must track the
//! parameter's mask exactly; [`AdamState::migrate`] carries them across a
//! rewiring step.

use crate::error::{Error, Result};
use crate::sparse::{ConnectionSet, Position, SparseMatrix};
use crate::topology::RewireReport;

pub enum ParamMut<'a> {
    Sparse(&'a mut SparseMatrix),
    Dense(&'a mut [f64]),
}

#[derive(Clone, Copy)]
pub enum GradRef<'a> {
    Sparse(&'a SparseMatrix),
    Dense(&'a [f64]),
}

/// Layout of one parameter tensor, used to allocate fresh state.
#[derive(Clone, Debug, PartialEq)]
pub enum SlotShape {
    Sparse(ConnectionSet),
    Dense(usize),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamHyper {
    pub fn with_lr(lr: f64) -> Self {
        AdamHyper {
            lr,
            ..Default::default()
        }
    }
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Moments {
    Sparse { keys: ConnectionSet, m: Vec<f64>, v: Vec<f64> },
    Dense { m: Vec<f64>, v: Vec<f64> },
}

impl Moments {
    pub fn zeros(shape: SlotShape) -> Self {
        match shape {
            SlotShape::Sparse(keys) => {
                let n = keys.len();
                Moments::Sparse {
                    keys,
                    m: vec![0.0; n],
                    v: vec![0.0; n],
                }
            }
            SlotShape::Dense(n) => Moments::Dense {
                m: vec![0.0; n],
                v: vec![0.0; n],
            },
        }
    }

    pub fn m(&self) -> &[f64] {
        match self {
            Moments::Sparse { m, .. } | Moments::Dense { m, .. } => m,
        }
    }

    pub fn v(&self) -> &[f64] {
        match self {
            Moments::Sparse { v, .. } | Moments::Dense { v, .. } => v,
        }
    }

    pub fn keys(&self) -> Option<&ConnectionSet> {
        match self {
            Moments::Sparse { keys, .. } => Some(keys),
            Moments::Dense { .. } => None,
        }
    }

    /// Survivors keep `(m, v)`, removed positions are dropped, added ones start at zero.
    pub fn migrate(&mut self, slot: usize, report: &RewireReport) -> Result<()> {
        let Moments::Sparse { keys, m, v } = self else {
            return Err(Error::StateMismatch {
                slot,
                detail: "dense slot cannot be rewired".into(),
            });
        };
        if keys.len() != report.nnz_before {
            return Err(Error::StateMismatch {
                slot,
                detail: format!("state has {} keys, report saw {}", keys.len(), report.nnz_before),
            });
        }
        let removed = report.removed();
        let mut drop = vec![false; keys.len()];
        for p in &removed {
            match keys.positions().binary_search(p) {
                Ok(k) => drop[k] = true,
                Err(_) => {
                    return Err(Error::StateMismatch {
                        slot,
                        detail: format!("removed position {p:?} has no state"),
                    })
                }
            }
        }
        let mut entries: Vec<(Position, f64, f64)> = keys
            .positions()
            .iter()
            .zip(m.iter().zip(v.iter()))
            .zip(&drop)
            .filter(|(_, d)| !**d)
            .map(|((p, (mv, vv)), _)| (*p, *mv, *vv))
            .collect();
        entries.extend(report.added.iter().map(|&p| (p, 0.0, 0.0)));
        entries.sort_unstable_by_key(|e| e.0);
        if entries.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::StateMismatch {
                slot,
                detail: "added position collides with a surviving key".into(),
            });
        }
        let (n_rows, n_cols) = keys.shape();
        *keys = ConnectionSet::from_sorted_unchecked(n_rows, n_cols, entries.iter().map(|e| e.0).collect());
        *m = entries.iter().map(|e| e.1).collect();
        *v = entries.iter().map(|e| e.2).collect();
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub hyper: AdamHyper,
    /// Completed steps, shared by all slots and kept across rewiring.
    pub t: u64,
    pub slots: Vec<Moments>,
}

impl AdamState {
    pub fn new(hyper: AdamHyper, shapes: impl IntoIterator<Item = SlotShape>) -> Self {
        AdamState {
            hyper,
            t: 0,
            slots: shapes.into_iter().map(Moments::zeros).collect(),
        }
    }

    pub fn migrate(&mut self, slot: usize, report: &RewireReport) -> Result<()> {
        self.slots
            .get_mut(slot)
            .ok_or_else(|| Error::StateMismatch {
                slot,
                detail: "no such slot".into(),
            })?
            .migrate(slot, report)
    }

    /// Checks that every sparse slot is keyed on exactly `mask`.
    pub fn check_keys(&self, slot: usize, mask: &ConnectionSet) -> Result<()> {
        match self.slots.get(slot).and_then(Moments::keys) {
            Some(keys) if keys == mask => Ok(()),
            _ => Err(Error::StateMismatch {
                slot,
                detail: "state keys differ from the parameter mask".into(),
            }),
        }
    }

    fn check(&self, params: &[ParamMut<'_>], grads: &[GradRef<'_>]) -> Result<()> {
        if params.len() != self.slots.len() || grads.len() != params.len() {
            return Err(Error::StateMismatch {
                slot: params.len().min(grads.len()),
                detail: format!(
                    "{} params, {} grads, {} state slots",
                    params.len(),
                    grads.len(),
                    self.slots.len()
                ),
            });
        }
        for (slot, ((p, g), s)) in params.iter().zip(grads).zip(&self.slots).enumerate() {
            match (p, g, s) {
                (ParamMut::Sparse(p), GradRef::Sparse(g), Moments::Sparse { keys, .. }) => {
                    if g.mask() != p.mask() {
                        return Err(Error::MaskMismatch { slot });
                    }
                    if keys != p.mask() {
                        return Err(Error::StateMismatch {
                            slot,
                            detail: "state keys differ from the parameter mask".into(),
                        });
                    }
                }
                (ParamMut::Dense(p), GradRef::Dense(g), Moments::Dense { m, .. }) => {
                    if g.len() != p.len() {
                        return Err(Error::MaskMismatch { slot });
                    }
                    if m.len() != p.len() {
                        return Err(Error::StateMismatch {
                            slot,
                            detail: format!("{} moments for {} values", m.len(), p.len()),
                        });
                    }
                }
                _ => {
                    return Err(Error::StateMismatch {
                        slot,
                        detail: "sparse/dense kind differs between parameter, gradient and state".into(),
                    })
                }
            }
        }
        Ok(())
    }
}

fn update(values: &mut [f64], grads: &[f64], m: &mut [f64], v: &mut [f64], hyper: &AdamHyper, t: u64) {
    let AdamHyper { lr, beta1, beta2, eps } = *hyper;
    let bc1 = 1.0 - beta1.powi(t as i32);
    let bc2 = 1.0 - beta2.powi(t as i32);
    for (((theta, &g), m), v) in values.iter_mut().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *theta -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// One bias-corrected Adam step over every slot. Nothing is modified when a
/// mask or state check fails.
pub fn adam_step(params: &mut [ParamMut<'_>], grads: &[GradRef<'_>], state: &mut AdamState) -> Result<()> {
    state.check(params, grads)?;
    state.t += 1;
    let (hyper, t) = (state.hyper, state.t);
    for ((p, g), s) in params.iter_mut().zip(grads).zip(state.slots.iter_mut()) {
        match (p, g, s) {
            (ParamMut::Sparse(p), GradRef::Sparse(g), Moments::Sparse { m, v, .. }) => {
                update(p.values_mut(), g.values(), m, v, &hyper, t)
            }
            (ParamMut::Dense(p), GradRef::Dense(g), Moments::Dense { m, v }) => update(p, g, m, v, &hyper, t),
            _ => unreachable!("checked above"),
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::topology::{er_init, init_values, rewire};
    use rand::Rng;

    fn scalar_step(theta: &mut f64, g: f64, state: &mut AdamState) {
        let mut vals = [*theta];
        adam_step(&mut [ParamMut::Dense(&mut vals)], &[GradRef::Dense(&[g])], state).unwrap();
        *theta = vals[0];
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut state = AdamState::new(AdamHyper::default(), [SlotShape::Dense(3)]);
        let mut vals = [0.5, -1.0, 2.0];
        adam_step(&mut [ParamMut::Dense(&mut vals)], &[GradRef::Dense(&[0.0; 3])], &mut state).unwrap();
        assert_eq!(vals, [0.5, -1.0, 2.0]);
        assert_eq!(state.t, 1);
    }

    #[test]
    fn first_step_closed_form() {
        let hyper = AdamHyper::default();
        for g in [3.0, -0.02, 1e-3] {
            let mut state = AdamState::new(hyper, [SlotShape::Dense(1)]);
            let mut theta = 1.0;
            scalar_step(&mut theta, g, &mut state);
            let expected = 1.0 - hyper.lr * g / (g.abs() + hyper.eps);
            assert!((theta - expected).abs() < 1e-15);
            assert!((theta - (1.0 - hyper.lr * g.signum())).abs() < 1e-7);
        }
    }

    #[test]
    fn quadratic_descends_toward_zero() {
        // oracle: the same recursion written out on scalars
        let (lr, b1, b2, eps) = (0.1, 0.9, 0.999, 1e-8);
        let (mut x, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        let mut oracle = Vec::new();
        for t in 1..=100 {
            let g = 2.0 * x;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            x -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
            oracle.push(x);
        }
        let mut state = AdamState::new(AdamHyper::with_lr(lr), [SlotShape::Dense(1)]);
        let mut theta = 1.0;
        let mut traj = Vec::new();
        for _ in 0..100 {
            let g = 2.0 * theta;
            scalar_step(&mut theta, g, &mut state);
            traj.push(theta);
        }
        assert_eq!(traj, oracle);
        // the first steps move at ~lr each, then momentum overshoots and rings down
        assert!(traj[..5].windows(2).all(|w| w[1] < w[0]));
        assert!(traj[99].abs() < 0.1);
        let late_peak = traj[60..].iter().fold(0.0f64, |a, x| a.max(x.abs()));
        let early_peak = traj[20..60].iter().fold(0.0f64, |a, x| a.max(x.abs()));
        assert!(late_peak < early_peak);
    }

    #[test]
    fn mask_and_state_mismatches_are_rejected() {
        let mut rng = seeded(1);
        let mut w = init_values(er_init(4, 4, 1.0, &mut rng).unwrap(), &mut rng);
        let other = SparseMatrix::zeros(ConnectionSet::full(4, 4).unwrap());
        let mut state = AdamState::new(AdamHyper::default(), [SlotShape::Sparse(w.mask().clone())]);
        let before = w.clone();
        let err = adam_step(&mut [ParamMut::Sparse(&mut w)], &[GradRef::Sparse(&other)], &mut state);
        assert!(matches!(err, Err(Error::MaskMismatch { slot: 0 })));
        assert_eq!(w, before);
        assert_eq!(state.t, 0);

        let mut stale = AdamState::new(AdamHyper::default(), [SlotShape::Sparse(other.mask().clone())]);
        let g = SparseMatrix::zeros(w.mask().clone());
        let err = adam_step(&mut [ParamMut::Sparse(&mut w)], &[GradRef::Sparse(&g)], &mut stale);
        assert!(matches!(err, Err(Error::StateMismatch { slot: 0, .. })));
    }

    #[test]
    fn migrate_cases() {
        let mut rng = seeded(2);
        let w = SparseMatrix::from_triplets(
            3,
            3,
            [(0, 0, 0.5), (0, 1, 0.01), (1, 0, 0.03), (1, 1, -0.02), (2, 2, -0.9)],
        )
        .unwrap();
        let mut state = AdamState::new(AdamHyper::default(), [SlotShape::Sparse(w.mask().clone())]);
        state.t = 7;
        if let Moments::Sparse { m, v, .. } = &mut state.slots[0] {
            *m = vec![1.0, 2.0, 3.0, 4.0, 5.0];
            *v = vec![10.0, 20.0, 30.0, 40.0, 50.0];
        }

        let unchanged = state.clone();
        state.migrate(0, &RewireReport { nnz_before: 5, nnz_after: 5, ..Default::default() }).unwrap();
        assert_eq!(state, unchanged);

        let (after, report) = rewire(&w, 0.5, true, &mut rng);
        state.migrate(0, &report).unwrap();
        assert_eq!(state.t, 7);
        let Moments::Sparse { keys, m, v } = &state.slots[0] else { panic!() };
        assert_eq!(keys, after.mask());
        // survivors (0,0), (1,0), (2,2) carry their exact prior moments
        let expect = [((0, 0), 1.0, 10.0), ((1, 0), 3.0, 30.0), ((2, 2), 5.0, 50.0)];
        for ((r, c), em, ev) in expect {
            let k = keys.positions().binary_search(&Position::new(r, c)).unwrap();
            assert_eq!((m[k], v[k]), (em, ev));
        }
        for p in &report.added {
            let k = keys.positions().binary_search(p).unwrap();
            assert_eq!((m[k], v[k]), (0.0, 0.0));
        }
    }

    #[test]
    fn full_replacement_zeroes_moments() {
        let w = SparseMatrix::from_triplets(4, 4, [(0, 0, 1.0), (1, 1, -1.0)]).unwrap();
        let mut state = AdamState::new(AdamHyper::default(), [SlotShape::Sparse(w.mask().clone())]);
        state.t = 3;
        if let Moments::Sparse { m, v, .. } = &mut state.slots[0] {
            *m = vec![0.3, 0.4];
            *v = vec![0.5, 0.6];
        }
        let (after, report) = rewire(&w, 1.0, true, &mut seeded(5));
        state.migrate(0, &report).unwrap();
        state.check_keys(0, after.mask()).unwrap();
        assert!(state.slots[0].m().iter().chain(state.slots[0].v()).all(|x| *x == 0.0));
        assert_eq!(state.t, 3);
    }

    #[test]
    fn migrate_rejects_foreign_report() {
        let w = SparseMatrix::from_triplets(2, 2, [(0, 0, 1.0)]).unwrap();
        let mut state = AdamState::new(AdamHyper::default(), [SlotShape::Sparse(w.mask().clone())]);
        let report = RewireReport {
            removed_positive: vec![Position::new(1, 1)],
            nnz_before: 1,
            nnz_after: 0,
            ..Default::default()
        };
        assert!(matches!(state.migrate(0, &report), Err(Error::StateMismatch { .. })));
    }

    /// Sparse Adam equals dense Adam on densified parameters with off-mask
    /// gradients forced to zero, restricted back to the mask.
    #[test]
    fn sparse_adam_equals_masked_dense_adam() {
        let mut rng = seeded(9);
        let mut w = init_values(er_init(6, 5, 1.2, &mut rng).unwrap(), &mut rng);
        let mut dense = w.densify().into_vec();
        let mut sparse_state = AdamState::new(AdamHyper::with_lr(0.05), [SlotShape::Sparse(w.mask().clone())]);
        let mut dense_state = AdamState::new(AdamHyper::with_lr(0.05), [SlotShape::Dense(30)]);
        for _ in 0..25 {
            let g_dense: Vec<f64> = (0..30).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut g_masked = vec![0.0; 30];
            let g_sparse_vals: Vec<f64> = w
                .positions()
                .iter()
                .map(|p| {
                    let k = p.row() * 5 + p.col();
                    g_masked[k] = g_dense[k];
                    g_dense[k]
                })
                .collect();
            let g_sparse = SparseMatrix::from_mask(w.mask().clone(), g_sparse_vals).unwrap();
            adam_step(&mut [ParamMut::Sparse(&mut w)], &[GradRef::Sparse(&g_sparse)], &mut sparse_state).unwrap();
            adam_step(&mut [ParamMut::Dense(&mut dense)], &[GradRef::Dense(&g_masked)], &mut dense_state).unwrap();
        }
        for (p, v) in w.iter() {
            assert!((dense[p.row() * 5 + p.col()] - v).abs() <= 1e-12);
        }
    }
}
