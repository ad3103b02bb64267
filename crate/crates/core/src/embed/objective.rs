//! Negative-sampling log-loss and its gradients.
//!
//! For predictor `c`, positive row `u_t` and negative rows `u_j`:
//!
//! ```text
//! L = -ln σ(u_t·c) - Σ_j ln σ(-u_j·c)
//! ∂L/∂c   = -(1 - σ(u_t·c)) u_t + Σ_j σ(u_j·c) u_j
//! ∂L/∂u_t = -(1 - σ(u_t·c)) c
//! ∂L/∂u_j =  σ(u_j·c) c
//! ```

use super::store::RowStore;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `-ln σ(x)`, stable for large |x|.
#[inline]
pub fn neg_log_sigmoid(x: f64) -> f64 {
    (-x).max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct NsGradients {
    pub loss: f64,
    pub grad_center: Vec<f64>,
    /// One entry per distinct row, in order of first appearance; repeated
    /// negatives have their contributions summed.
    pub grad_out_rows: Vec<(usize, Vec<f64>)>,
}

/// Exact loss and gradients. `word_out` is row-major with `center.len()` columns.
pub fn ns_loss_and_grads(
    center: &[f64],
    target: usize,
    negatives: &[usize],
    word_out: &[f64],
) -> NsGradients {
    let dim = center.len();
    let row = |i: usize| &word_out[i * dim..(i + 1) * dim];
    let mut loss = 0.0;
    let mut grad_center = vec![0.0; dim];
    let mut grad_out_rows: Vec<(usize, Vec<f64>)> = Vec::with_capacity(negatives.len() + 1);

    let mut add_row = |id: usize, coef: f64| {
        let pos = match grad_out_rows.iter().position(|(r, _)| *r == id) {
            Some(p) => p,
            None => {
                grad_out_rows.push((id, vec![0.0; dim]));
                grad_out_rows.len() - 1
            }
        };
        for (g, x) in grad_out_rows[pos].1.iter_mut().zip(center) {
            *g += coef * x;
        }
    };

    let s = dot(row(target), center);
    loss += neg_log_sigmoid(s);
    let coef = -(1.0 - sigmoid(s));
    for (g, u) in grad_center.iter_mut().zip(row(target)) {
        *g += coef * u;
    }
    add_row(target, coef);

    for &j in negatives {
        let s = dot(row(j), center);
        loss += neg_log_sigmoid(-s);
        let coef = sigmoid(s);
        for (g, u) in grad_center.iter_mut().zip(row(j)) {
            *g += coef * u;
        }
        add_row(j, coef);
    }

    NsGradients {
        loss,
        grad_center,
        grad_out_rows,
    }
}

/// In-place SGD step on the output rows. Adds `∂L/∂c` into `grad_center`
/// (using each row's value before its own update) and returns the loss.
pub(crate) fn sgd_step<O: RowStore>(
    center: &[f64],
    target: usize,
    negatives: &[usize],
    word_out: &mut O,
    lr: f64,
    grad_center: &mut [f64],
    row_buf: &mut [f64],
) -> f64 {
    let mut loss = 0.0;
    let mut one = |id: usize, positive: bool| {
        word_out.read(id, row_buf);
        let s = dot(row_buf, center);
        let coef = if positive {
            loss += neg_log_sigmoid(s);
            -(1.0 - sigmoid(s))
        } else {
            loss += neg_log_sigmoid(-s);
            sigmoid(s)
        };
        for (g, u) in grad_center.iter_mut().zip(row_buf.iter()) {
            *g += coef * u;
        }
        word_out.axpy(id, -lr * coef, center);
    };
    one(target, true);
    for &j in negatives {
        one(j, false);
    }
    loss
}
