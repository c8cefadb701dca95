//! Fully connected network with rectifier hidden layers and an affine output.

use ndarray::{aview1, Array1};

use super::tape::{Tape, Var};
use super::{Architecture, Network};
use crate::error::{PpdeError, Result};

pub(crate) fn forward(tape: &mut Tape, leaves: &[Var], x: Var) -> Var {
    let layers = leaves.len() / 2;
    let mut z = x;
    for l in 0..layers {
        z = tape.affine(z, leaves[2 * l], leaves[2 * l + 1]);
        if l + 1 < layers {
            z = tape.relu(z);
        }
    }
    z
}

/// Single-sample evaluation.
pub fn ffn_forward(net: &Network, x: &[f64]) -> Result<Vec<f64>> {
    if !matches!(net.arch, Architecture::Ffn { .. }) {
        return Err(PpdeError::Shape("ffn_forward needs a feed-forward architecture".into()));
    }
    if x.len() != net.arch.input() {
        return Err(PpdeError::Shape(format!("expected {} inputs, got {}", net.arch.input(), x.len())));
    }
    let tensors = net.tensors();
    let layers = tensors.len() / 2;
    let mut z: Array1<f64> = aview1(x).to_owned();
    for l in 0..layers {
        z = z.dot(&tensors[2 * l]) + tensors[2 * l + 1].row(0);
        if l + 1 < layers {
            z.mapv_inplace(|v| v.max(0.0));
        }
    }
    Ok(z.to_vec())
}
