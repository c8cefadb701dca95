//! Feed-forward and LSTM networks over a shared autodiff tape.
//!
//! Parameters live in one flat vector in descriptor order. Weight matrices
//! are stored row-major as `[fan_in, fan_out]` so a layer computes `x W + b`
//! on row batches.

pub mod checkpoint;
pub mod ffn;
pub mod lstm;
pub mod optim;
pub mod tape;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{param, PpdeError, Result};
use crate::rng;
use tape::{Gradients, Tape, Var};

pub use optim::{Optimizer, OptimizerConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    Ffn { input: usize, hidden: Vec<usize>, output: usize },
    Lstm { input: usize, hidden: usize, head_width: usize, output: usize },
}

/// Shape of one parameter tensor; biases have a single row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorShape {
    pub rows: usize,
    pub cols: usize,
    pub bias: bool,
}

impl TensorShape {
    fn weight(rows: usize, cols: usize) -> Self {
        Self { rows, cols, bias: false }
    }

    fn bias(cols: usize) -> Self {
        Self { rows: 1, cols, bias: true }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Architecture {
    pub fn ffn(input: usize, hidden: Vec<usize>, output: usize) -> Self {
        Architecture::Ffn { input, hidden, output }
    }

    pub fn lstm(input: usize, hidden: usize, head_width: usize, output: usize) -> Self {
        Architecture::Lstm { input, hidden, head_width, output }
    }

    pub fn input(&self) -> usize {
        match self {
            Architecture::Ffn { input, .. } | Architecture::Lstm { input, .. } => *input,
        }
    }

    pub fn output(&self) -> usize {
        match self {
            Architecture::Ffn { output, .. } | Architecture::Lstm { output, .. } => *output,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let widths: Vec<usize> = match self {
            Architecture::Ffn { input, hidden, output } => {
                std::iter::once(*input).chain(hidden.iter().copied()).chain([*output]).collect()
            }
            Architecture::Lstm { input, hidden, head_width, output } => vec![*input, *hidden, *head_width, *output],
        };
        if widths.contains(&0) {
            return param(format!("every layer width must be at least 1, got {widths:?}"));
        }
        Ok(())
    }

    /// Parameter tensors in storage order.
    pub fn layout(&self) -> Vec<TensorShape> {
        match self {
            Architecture::Ffn { input, hidden, output } => {
                let widths: Vec<usize> = std::iter::once(*input).chain(hidden.iter().copied()).chain([*output]).collect();
                widths
                    .windows(2)
                    .flat_map(|w| [TensorShape::weight(w[0], w[1]), TensorShape::bias(w[1])])
                    .collect()
            }
            Architecture::Lstm { input, hidden, head_width, output } => {
                let (h, y) = (*hidden, *head_width);
                vec![
                    TensorShape::weight(*input, 4 * h),
                    TensorShape::weight(h, 4 * h),
                    TensorShape::bias(4 * h),
                    TensorShape::weight(h, y),
                    TensorShape::bias(y),
                    TensorShape::weight(y, y),
                    TensorShape::bias(y),
                    TensorShape::weight(y, *output),
                    TensorShape::bias(*output),
                ]
            }
        }
    }

    pub fn param_count(&self) -> usize {
        self.layout().iter().map(TensorShape::len).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub arch: Architecture,
    pub params: Vec<f64>,
    pub seed: u64,
}

/// Description of the initialization scheme, recorded in checkpoints.
pub const INIT_SCHEME: &str = "weights uniform on [-1/sqrt(fan_in), 1/sqrt(fan_in)], biases zero";

impl Network {
    /// Fresh network with weights uniform on `±1/√fan_in` and zero biases.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut r = rng::substream(seed, rng::stream::INIT, 0);
        let mut params = Vec::with_capacity(arch.param_count());
        for shape in arch.layout() {
            if shape.bias {
                params.extend(std::iter::repeat_n(0.0, shape.len()));
            } else {
                let bound = 1.0 / (shape.rows as f64).sqrt();
                params.extend((0..shape.len()).map(|_| r.random_range(-bound..bound)));
            }
        }
        Ok(Self { arch, params, seed })
    }

    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let params = vec![0.0; arch.param_count()];
        Ok(Self { arch, params, seed: 0 })
    }

    pub fn from_params(arch: Architecture, params: Vec<f64>, seed: u64) -> Result<Self> {
        arch.validate()?;
        if params.len() != arch.param_count() {
            return Err(PpdeError::Shape(format!(
                "architecture needs {} parameters, got {}",
                arch.param_count(),
                params.len()
            )));
        }
        Ok(Self { arch, params, seed })
    }

    /// Views of the individual parameter tensors.
    pub fn tensors(&self) -> Vec<ArrayView2<'_, f64>> {
        let mut offset = 0;
        self.arch
            .layout()
            .into_iter()
            .map(|s| {
                let v = ArrayView2::from_shape((s.rows, s.cols), &self.params[offset..offset + s.len()]).unwrap();
                offset += s.len();
                v
            })
            .collect()
    }

    /// Places the parameters on the tape, differentiable or not.
    pub fn leaves(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.tensors()
            .into_iter()
            .map(|t| if trainable { tape.param(t.to_owned()) } else { tape.constant(t.to_owned()) })
            .collect()
    }

    /// Flat gradient in storage order.
    pub fn collect_grads(&self, tape: &Tape, grads: &Gradients, leaves: &[Var]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.params.len());
        for &v in leaves {
            match grads.get(v) {
                Some(g) => out.extend(g.iter().copied()),
                None => out.extend(std::iter::repeat_n(0.0, tape.value(v).len())),
            }
        }
        out
    }

    /// Evaluates a step-major input `[steps · batch, input]` on the tape.
    ///
    /// Returns `[steps · batch, output]` in the same row order. The LSTM
    /// treats each block of `batch` rows as one time step.
    pub fn forward(&self, tape: &mut Tape, leaves: &[Var], x: Var, steps: usize) -> Result<Var> {
        let (rows, cols) = tape.shape(x);
        if cols != self.arch.input() {
            return Err(PpdeError::Shape(format!(
                "network expects inputs of width {}, got {cols}",
                self.arch.input()
            )));
        }
        if steps == 0 || rows % steps != 0 {
            return Err(PpdeError::Shape(format!("{rows} input rows do not split into {steps} steps")));
        }
        match &self.arch {
            Architecture::Ffn { .. } => Ok(ffn::forward(tape, leaves, x)),
            Architecture::Lstm { hidden, .. } => Ok(lstm::forward(tape, leaves, x, steps, *hidden)),
        }
    }

    /// Inference without gradient bookkeeping.
    pub fn predict(&self, x: &Array2<f64>, steps: usize) -> Result<Array2<f64>> {
        let mut tape = Tape::new();
        let leaves = self.leaves(&mut tape, false);
        let xv = tape.constant(x.clone());
        let y = self.forward(&mut tape, &leaves, xv, steps)?;
        Ok(tape.value(y).clone())
    }

    pub fn param_norm(&self) -> f64 {
        self.params.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// `‖a − b‖₂ / max(‖a‖₂, ‖b‖₂)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}
