//! Path-dependent payoffs evaluated on fine-grid paths `[N_f + 1, d]`.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{param, Result};

/// `[max_t Σ_i S^i_t − Σ_i S^i_T]_+` with the maximum over every row.
pub fn lookback_payoff(path: ArrayView2<f64>) -> f64 {
    let mut running = f64::NEG_INFINITY;
    let mut last = 0.0;
    for row in path.rows() {
        last = row.sum();
        running = running.max(last);
    }
    (running - last).max(0.0)
}

/// Affine redemption `q(s) = slope · s + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Redemption {
    pub slope: f64,
    pub intercept: f64,
}

impl Redemption {
    pub fn apply(&self, s: f64) -> f64 {
        self.slope * s + self.intercept
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutocallSpec {
    pub barrier: f64,
    /// Fine-grid indices of the observation dates.
    pub observation_indices: Vec<usize>,
    pub premature_payoffs: Vec<f64>,
    pub redemption: Redemption,
}

impl AutocallSpec {
    pub fn new(
        barrier: f64,
        observation_indices: Vec<usize>,
        premature_payoffs: Vec<f64>,
        redemption: Redemption,
    ) -> Result<Self> {
        let spec = Self { barrier, observation_indices, premature_payoffs, redemption };
        spec.validate(usize::MAX)?;
        Ok(spec)
    }

    /// Checks ordering and that every index fits a grid with `n_fine` steps.
    pub fn validate(&self, n_fine: usize) -> Result<()> {
        if self.observation_indices.len() != self.premature_payoffs.len() {
            return param(format!(
                "{} observation dates but {} premature payoffs",
                self.observation_indices.len(),
                self.premature_payoffs.len()
            ));
        }
        if self.observation_indices.windows(2).any(|w| w[0] >= w[1]) {
            return param("observation indices must be strictly increasing");
        }
        if let Some(&last) = self.observation_indices.last() {
            if last > n_fine {
                return param(format!("observation index {last} beyond fine grid of {n_fine} steps"));
            }
        }
        if !self.barrier.is_finite() {
            return param("barrier must be finite");
        }
        Ok(())
    }
}

/// First knock pays `Q_j`; otherwise the redemption on the terminal value.
///
/// The barrier is compared with `S_{t_j} / S_0`, and equality knocks.
pub fn autocallable_payoff(path: ArrayView2<f64>, spec: &AutocallSpec) -> f64 {
    let s0 = path[[0, 0]];
    for (&idx, &q) in spec.observation_indices.iter().zip(&spec.premature_payoffs) {
        if path[[idx, 0]] / s0 >= spec.barrier {
            return q;
        }
    }
    spec.redemption.apply(path[[path.nrows() - 1, 0]])
}

/// `value · e^{−r (to_t − from_t)}`.
pub fn discount(value: f64, r: f64, from_t: f64, to_t: f64) -> f64 {
    value * (-r * (to_t - from_t)).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Payoff {
    Lookback,
    Autocallable(AutocallSpec),
    /// `Σ_i S^i_T`.
    BasketForward,
    /// `(Σ_i S^i_T − K)_+`.
    BasketCall { strike: f64 },
    Constant { value: f64 },
}

impl Payoff {
    pub fn evaluate(&self, path: ArrayView2<f64>) -> f64 {
        let last = path.nrows() - 1;
        match self {
            Payoff::Lookback => lookback_payoff(path),
            Payoff::Autocallable(spec) => autocallable_payoff(path, spec),
            Payoff::BasketForward => path.row(last).sum(),
            Payoff::BasketCall { strike } => (path.row(last).sum() - strike).max(0.0),
            Payoff::Constant { value } => *value,
        }
    }

    pub fn validate(&self, dim: usize, n_fine: usize) -> Result<()> {
        match self {
            Payoff::Autocallable(spec) => {
                if dim != 1 {
                    return param(format!("autocallable payoff needs one asset, model has {dim}"));
                }
                spec.validate(n_fine)
            }
            _ => Ok(()),
        }
    }
}
