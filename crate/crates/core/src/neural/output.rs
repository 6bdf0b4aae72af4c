use crate::error::{Error, Result};
use crate::sparse::DenseMatrix;

/// Dense classification head, `H x C` plus bias.
#[derive(Clone, Debug, PartialEq)]
pub struct OutputParams {
    pub w_out: DenseMatrix,
    pub b_out: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputGrads {
    pub w_out: DenseMatrix,
    pub b_out: Vec<f64>,
}

impl OutputParams {
    pub fn classes(&self) -> usize {
        self.w_out.n_cols()
    }

    fn check(&self, op: &'static str, h: &DenseMatrix) -> Result<()> {
        if h.n_cols() != self.w_out.n_rows() || self.b_out.len() != self.w_out.n_cols() {
            return Err(Error::shape(
                op,
                format!("h {:?}, w_out {:?}, b_out {}", h.shape(), self.w_out.shape(), self.b_out.len()),
            ));
        }
        Ok(())
    }
}

/// `logits = h · W_out + b_out`.
pub fn output_forward(h: &DenseMatrix, p: &OutputParams) -> Result<DenseMatrix> {
    p.check("output_forward", h)?;
    let c = p.classes();
    let mut logits = DenseMatrix::zeros(h.n_rows(), c);
    for r in 0..h.n_rows() {
        let out = logits.row_mut(r);
        out.copy_from_slice(&p.b_out);
        for (k, &hv) in h.row(r).iter().enumerate() {
            if hv != 0.0 {
                for (o, w) in out.iter_mut().zip(p.w_out.row(k)) {
                    *o += hv * w;
                }
            }
        }
    }
    Ok(logits)
}

/// Gradients of the head and of its input.
pub fn output_backward(h: &DenseMatrix, dlogits: &DenseMatrix, p: &OutputParams) -> Result<(OutputGrads, DenseMatrix)> {
    p.check("output_backward", h)?;
    let c = p.classes();
    if dlogits.shape() != (h.n_rows(), c) {
        return Err(Error::shape("output_backward", format!("dlogits {:?}", dlogits.shape())));
    }
    let mut gw = DenseMatrix::zeros(p.w_out.n_rows(), c);
    let mut gb = vec![0.0; c];
    let mut dh = DenseMatrix::zeros(h.n_rows(), h.n_cols());
    for r in 0..h.n_rows() {
        let dl = dlogits.row(r);
        for (g, v) in gb.iter_mut().zip(dl) {
            *g += v;
        }
        for (k, &hv) in h.row(r).iter().enumerate() {
            for (g, v) in gw.row_mut(k).iter_mut().zip(dl) {
                *g += hv * v;
            }
        }
        let dhr = dh.row_mut(r);
        for (k, d) in dhr.iter_mut().enumerate() {
            *d = p.w_out.row(k).iter().zip(dl).map(|(w, v)| w * v).sum();
        }
    }
    Ok((OutputGrads { w_out: gw, b_out: gb }, dh))
}

/// Mean negative log-likelihood of the true class and its gradient
/// `(softmax - onehot) / B`.
pub fn softmax_cross_entropy(logits: &DenseMatrix, labels: &[usize]) -> Result<(f64, DenseMatrix)> {
    let (batch, c) = logits.shape();
    if labels.len() != batch {
        return Err(Error::shape(
            "softmax_cross_entropy",
            format!("{} labels for {batch} rows", labels.len()),
        ));
    }
    let mut dlogits = DenseMatrix::zeros(batch, c);
    let mut loss = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(Error::LabelOutOfRange { label: y, classes: c });
        }
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|z| (z - max).exp()).sum();
        let log_z = max + sum.ln();
        loss += log_z - row[y];
        let d = dlogits.row_mut(r);
        for (k, dv) in d.iter_mut().enumerate() {
            *dv = (row[k] - log_z).exp() / batch as f64;
        }
        d[y] -= 1.0 / batch as f64;
    }
    Ok((loss / batch as f64, dlogits))
}

/// Index of the largest logit per row; ties go to the lowest class.
pub fn argmax_rows(logits: &DenseMatrix) -> Vec<usize> {
    (0..logits.n_rows())
        .map(|r| {
            let row = logits.row(r);
            let mut best = 0;
            for k in 1..row.len() {
                if row[k] > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}
