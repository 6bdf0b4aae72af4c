use std::fmt::Write as _;

use serde::Serialize;

use crate::neural::N_SPARSE;

pub const CSV_HEADER: &str = "epoch,train_loss,train_acc,test_acc,nnz_total,sparsity";

/// One completed epoch.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    /// Per sparse layer, slot order, after rewiring.
    pub nnz: [usize; N_SPARSE],
    pub sparsity: f64,
    pub removed: usize,
    pub added: usize,
}

impl MetricsRecord {
    pub fn nnz_total(&self) -> usize {
        self.nnz.iter().sum()
    }
}

pub fn metrics_csv(history: &[MetricsRecord]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in history {
        writeln!(
            s,
            "{},{:.6},{:.6},{:.6},{},{:.6}",
            r.epoch,
            r.train_loss,
            r.train_acc,
            r.test_acc,
            r.nnz_total(),
            r.sparsity
        )
        .unwrap();
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let r = MetricsRecord {
            epoch: 1,
            train_loss: 0.5,
            train_acc: 0.75,
            test_acc: 0.8,
            nnz: [1, 2, 3, 4, 5, 6, 7, 8, 9],
            sparsity: 0.95,
            removed: 0,
            added: 0,
        };
        assert_eq!(
            metrics_csv(&[r]),
            "epoch,train_loss,train_acc,test_acc,nnz_total,sparsity\n1,0.500000,0.750000,0.800000,45,0.950000\n"
        );
        assert_eq!(metrics_csv(&[]).lines().count(), 1);
    }
}
