//! LSTM cell with an affine read-out and a two-layer rectifier head.
//!
//! Gate pre-activations are laid out as four blocks of width `H` in the
//! order input, forget, cell candidate, output.

use ndarray::{aview1, s, Array1};

use super::tape::{sigmoid, Tape, Var};
use super::{Architecture, Network};
use crate::error::{PpdeError, Result};

pub(crate) fn forward(tape: &mut Tape, leaves: &[Var], x: Var, steps: usize, hidden: usize) -> Var {
    let [wx, wh, b, why, bhy, w1, b1, w2, b2] = leaves else { unreachable!("lstm has nine tensors") };
    let rows = tape.shape(x).0;
    let batch = rows / steps;
    // Input projections of every step in one product.
    let gx = tape.affine(x, *wx, *b);
    let mut hs = Vec::with_capacity(steps);
    let mut state: Option<(Var, Var)> = None;
    for k in 0..steps {
        let mut gates = tape.slice_rows(gx, k * batch, (k + 1) * batch);
        if let Some((h, _)) = state {
            let rec = tape.matmul(h, *wh);
            gates = tape.add(gates, rec);
        }
        let i_pre = tape.slice_cols(gates, 0, hidden);
        let f_pre = tape.slice_cols(gates, hidden, 2 * hidden);
        let g_pre = tape.slice_cols(gates, 2 * hidden, 3 * hidden);
        let o_pre = tape.slice_cols(gates, 3 * hidden, 4 * hidden);
        let i = tape.sigmoid(i_pre);
        let g = tape.tanh(g_pre);
        let o = tape.sigmoid(o_pre);
        let ig = tape.mul(i, g);
        let c = match state {
            Some((_, c_prev)) => {
                let f = tape.sigmoid(f_pre);
                let fc = tape.mul(f, c_prev);
                tape.add(fc, ig)
            }
            None => ig,
        };
        let tc = tape.tanh(c);
        let h = tape.mul(o, tc);
        hs.push(h);
        state = Some((h, c));
    }
    let all_h = tape.concat_rows(&hs).expect("hidden states share a width");
    let y = tape.affine(all_h, *why, *bhy);
    let z = tape.affine(y, *w1, *b1);
    let z = tape.relu(z);
    tape.affine(z, *w2, *b2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        Self { h: vec![0.0; hidden], c: vec![0.0; hidden] }
    }
}

/// Gate activations of one step, exposed for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct Gates {
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub o: Vec<f64>,
}

fn hidden_of(net: &Network) -> Result<usize> {
    match net.arch {
        Architecture::Lstm { hidden, .. } => Ok(hidden),
        _ => Err(PpdeError::Shape("expected an LSTM architecture".into())),
    }
}

/// One cell update followed by the read-out and head.
pub fn lstm_step_with_gates(net: &Network, x: &[f64], state: &LstmState) -> Result<(Vec<f64>, LstmState, Gates)> {
    let hidden = hidden_of(net)?;
    if x.len() != net.arch.input() || state.h.len() != hidden || state.c.len() != hidden {
        return Err(PpdeError::Shape(format!(
            "lstm step expects input {} and state {hidden}, got {} and ({}, {})",
            net.arch.input(),
            x.len(),
            state.h.len(),
            state.c.len()
        )));
    }
    let t = net.tensors();
    let pre: Array1<f64> = aview1(x).dot(&t[0]) + aview1(&state.h).dot(&t[1]) + t[2].row(0);
    let block = |k: usize| pre.slice(s![k * hidden..(k + 1) * hidden]).to_owned();
    let i = block(0).mapv(sigmoid);
    let f = block(1).mapv(sigmoid);
    let g = block(2).mapv(f64::tanh);
    let o = block(3).mapv(sigmoid);
    let c = &f * &aview1(&state.c) + &i * &g;
    let h = &o * &c.mapv(f64::tanh);
    let y = h.dot(&t[3]) + t[4].row(0);
    let z = (y.dot(&t[5]) + t[6].row(0)).mapv(|v| v.max(0.0));
    let out = z.dot(&t[7]) + t[8].row(0);
    let gates = Gates { i: i.to_vec(), f: f.to_vec(), g: g.to_vec(), o: o.to_vec() };
    Ok((out.to_vec(), LstmState { h: h.to_vec(), c: c.to_vec() }, gates))
}

pub fn lstm_step(net: &Network, x: &[f64], state: &LstmState) -> Result<(Vec<f64>, LstmState)> {
    lstm_step_with_gates(net, x, state).map(|(y, s, _)| (y, s))
}

/// Folds `lstm_step` over the sequence from the zero state.
pub fn lstm_unroll(net: &Network, inputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if inputs.is_empty() {
        return Err(PpdeError::Input("cannot unroll an empty sequence".into()));
    }
    let mut state = LstmState::zeros(hidden_of(net)?);
    let mut out = Vec::with_capacity(inputs.len());
    for x in inputs {
        let (y, next) = lstm_step(net, x, &state)?;
        out.push(y);
        state = next;
    }
    Ok(out)
}
