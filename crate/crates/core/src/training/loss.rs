//! Orthogonal-projection and martingale-representation losses.
//!
//! Each loss exists on the tape, for training, and on plain predictions, for
//! evaluation with arbitrary price/hedge functions.

use ndarray::{Array2, Axis};

use super::batch::TrainBatch;
use crate::error::{PpdeError, Result};
use crate::nets::tape::{Tape, Var};
use crate::nets::Network;

fn check_rows(what: &str, got: (usize, usize), rows: usize, cols: usize) -> Result<()> {
    if got != (rows, cols) {
        return Err(PpdeError::Shape(format!("{what} has shape {got:?}, expected ({rows}, {cols})")));
    }
    Ok(())
}

/// Discount factors `e^{−r t_k}` for every step-major row.
fn discount_column(batch: &TrainBatch, steps: std::ops::Range<usize>) -> Array2<f64> {
    let b = batch.batch;
    let n = steps.len() * b;
    Array2::from_shape_fn((n, 1), |(row, _)| (-batch.rate * batch.times[steps.start + row / b]).exp())
}

/// `mean_b Σ_{k=0}^{N} (e^{−r(T−t_k)} g − y_k)²` on predictions `[steps · B, 1]`.
pub fn orthogonal_from_predictions(batch: &TrainBatch, y: &Array2<f64>) -> Result<f64> {
    check_rows("price predictions", y.dim(), batch.steps * batch.batch, 1)?;
    let t = batch.projection_targets();
    Ok((&t - y).mapv(|e| e * e).sum() / batch.batch as f64)
}

/// Martingale loss on predictions: prices `[steps · B, 1]`, hedges `[steps · B, d]`.
pub fn martingale_from_predictions(batch: &TrainBatch, y: &Array2<f64>, z: &Array2<f64>) -> Result<f64> {
    let (b, n) = (batch.batch, batch.steps - 1);
    let d = batch.sigma_dw.ncols();
    check_rows("price predictions", y.dim(), batch.steps * b, 1)?;
    check_rows("hedge predictions", z.dim(), batch.steps * b, d)?;
    let mut total = 0.0;
    for i in 0..b {
        let yn = y[[n * b + i, 0]];
        total += (batch.payoff[i] - yn).powi(2);
        for m in 0..n {
            let d0 = (-batch.rate * batch.times[m]).exp();
            let d1 = (-batch.rate * batch.times[m + 1]).exp();
            let hedge: f64 = (0..d).map(|a| z[[m * b + i, a]] * batch.sigma_dw[[m * b + i, a]]).sum();
            let e = d1 * y[[(m + 1) * b + i, 0]] - d0 * y[[m * b + i, 0]] - d0 * hedge;
            total += e * e;
        }
    }
    Ok(total / b as f64)
}

/// Tape version of the orthogonal loss; `y` is the price output.
pub fn orthogonal_on_tape(tape: &mut Tape, batch: &TrainBatch, y: Var) -> Result<Var> {
    check_rows("price output", tape.shape(y), batch.steps * batch.batch, 1)?;
    let t = tape.constant(batch.projection_targets());
    let e = tape.sub(t, y);
    let sq = tape.square(e);
    let s = tape.sum(sq);
    Ok(tape.scale(s, 1.0 / batch.batch as f64))
}

/// Tape version of the martingale loss.
pub fn martingale_on_tape(tape: &mut Tape, batch: &TrainBatch, y: Var, z: Var) -> Result<Var> {
    let (b, n) = (batch.batch, batch.steps - 1);
    let d = batch.sigma_dw.ncols();
    check_rows("price output", tape.shape(y), batch.steps * b, 1)?;
    check_rows("hedge output", tape.shape(z), batch.steps * b, d)?;
    let g = tape.constant(batch.payoff.clone().insert_axis(Axis(1)));
    let y_last = tape.slice_rows(y, n * b, (n + 1) * b);
    let terminal = tape.sub(g, y_last);
    let terminal = tape.square(terminal);
    let terminal = tape.sum(terminal);

    let y_next = tape.slice_rows(y, b, (n + 1) * b);
    let y_prev = tape.slice_rows(y, 0, n * b);
    let z_prev = tape.slice_rows(z, 0, n * b);
    let disc_next = tape.constant(discount_column(batch, 1..n + 1));
    let disc_prev_col = discount_column(batch, 0..n);
    let disc_sigma_dw = tape.constant(&batch.sigma_dw * &disc_prev_col);
    let disc_prev = tape.constant(disc_prev_col);
    let a = tape.mul(y_next, disc_next);
    let c = tape.mul(y_prev, disc_prev);
    let hedge = tape.mul(z_prev, disc_sigma_dw);
    let hedge = tape.row_sum(hedge);
    let e = tape.sub(a, c);
    let e = tape.sub(e, hedge);
    let e = tape.square(e);
    let e = tape.sum(e);
    let total = tape.add(terminal, e);
    Ok(tape.scale(total, 1.0 / b as f64))
}

/// Orthogonal loss of a price network on a batch.
pub fn loss_orthogonal(batch: &TrainBatch, price: &Network) -> Result<f64> {
    let y = price.predict(&batch.inputs, batch.steps)?;
    orthogonal_from_predictions(batch, &y)
}

/// Martingale loss of a price/hedge network pair on a batch.
pub fn loss_martingale(batch: &TrainBatch, price: &Network, hedge: &Network) -> Result<f64> {
    let y = price.predict(&batch.inputs, batch.steps)?;
    let z = hedge.predict(&batch.inputs, batch.steps)?;
    martingale_from_predictions(batch, &y, &z)
}
