//! Configuration file schema.
//!
//! A single TOML document with the sections `model`, `grid`, `payoff`,
//! `encoding`, `network`, `training`, `pricing` and `evaluation`, plus a
//! top-level `seed`. Unknown keys are rejected.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{PpdeError, Result};
use crate::market_models::{BlackScholesParams, HestonParams, InitialLaw, Model, TimeGrid};
use crate::payoffs::{AutocallSpec, Payoff, Redemption};
use crate::pricing::DEFAULT_BUMP;
use crate::signatures::Transform;
use crate::training::batch::{Encoding, InputSpec, NetType};
use crate::training::{NetworkConfig, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub seed: u64,
    pub model: ModelConfig,
    pub grid: GridConfig,
    pub payoff: PayoffConfig,
    #[serde(default = "default_encoding")]
    pub encoding: Encoding,
    #[serde(default = "default_network")]
    pub network: NetworkConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainConfig>,
    #[serde(default)]
    pub pricing: PricingConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
}

fn default_encoding() -> Encoding {
    Encoding::sig_stream(4, Transform::LeadLag)
}

fn default_network() -> NetworkConfig {
    NetworkConfig::new(NetType::Lstm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    BlackScholes {
        dim: usize,
        #[serde(default)]
        r: f64,
        /// Shared volatility; omit when `sigma_range` is given.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sigma: Option<f64>,
        /// Draw a shared volatility per path from `U[lo, hi]`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sigma_range: Option<[f64; 2]>,
        /// Pairwise correlation of the Brownian drivers.
        #[serde(default)]
        correlation: f64,
        #[serde(default = "default_initial")]
        initial: InitialLaw,
    },
    Heston {
        kappa: f64,
        mu_bar: f64,
        eta: f64,
        rho: f64,
        v0: f64,
        s0: f64,
        #[serde(default)]
        r: f64,
    },
}

fn default_initial() -> InitialLaw {
    InitialLaw::LogNormal { mu: 0.08, tau: 0.1, sigma: None }
}

impl ModelConfig {
    pub fn build(&self) -> Result<Model> {
        let model = match *self {
            ModelConfig::BlackScholes { dim, r, sigma, sigma_range, correlation, ref initial } => {
                if dim == 0 {
                    return Err(PpdeError::Config("model.dim must be at least 1".into()));
                }
                let base = match (sigma, sigma_range) {
                    (Some(s), _) => s,
                    (None, Some([lo, hi])) => 0.5 * (lo + hi),
                    (None, None) => {
                        return Err(PpdeError::Config("model needs `sigma` or `sigma_range`".into()));
                    }
                };
                let cov = Array2::from_shape_fn((dim, dim), |(i, j)| if i == j { 1.0 } else { correlation });
                let range = sigma_range.map(|[lo, hi]| (lo, hi));
                Model::BlackScholes(BlackScholesParams::new(r, vec![base; dim], &cov, initial.clone(), range)?)
            }
            ModelConfig::Heston { kappa, mu_bar, eta, rho, v0, s0, r } => {
                let p = HestonParams { kappa, mu_bar, eta, rho, v0, s0, r };
                p.validate()?;
                Model::Heston(p)
            }
        };
        Ok(model)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub maturity: f64,
    pub n_fine: usize,
    pub n_coarse: usize,
}

impl GridConfig {
    pub fn build(&self) -> Result<TimeGrid> {
        TimeGrid::uniform(self.maturity, self.n_fine, self.n_coarse)
    }
}

/// How observation times are placed on the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Snap {
    /// Nearest coarse time.
    #[default]
    Coarse,
    /// Nearest fine time.
    Fine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum PayoffConfig {
    Lookback,
    BasketForward,
    BasketCall {
        strike: f64,
    },
    Constant {
        value: f64,
    },
    Autocallable {
        barrier: f64,
        /// Observation dates in years.
        observation_times: Vec<f64>,
        premature_payoffs: Vec<f64>,
        redemption_slope: f64,
        #[serde(default)]
        redemption_intercept: f64,
        #[serde(default)]
        snap: Snap,
    },
}

impl PayoffConfig {
    pub fn build(&self, grid: &TimeGrid) -> Result<Payoff> {
        Ok(match self {
            PayoffConfig::Lookback => Payoff::Lookback,
            PayoffConfig::BasketForward => Payoff::BasketForward,
            PayoffConfig::BasketCall { strike } => Payoff::BasketCall { strike: *strike },
            PayoffConfig::Constant { value } => Payoff::Constant { value: *value },
            PayoffConfig::Autocallable {
                barrier,
                observation_times,
                premature_payoffs,
                redemption_slope,
                redemption_intercept,
                snap,
            } => {
                let indices = observation_times
                    .iter()
                    .map(|&t| match snap {
                        Snap::Coarse => grid.fine_index_of_coarse(grid.nearest_coarse_index(t)),
                        Snap::Fine => nearest_fine_index(grid, t),
                    })
                    .collect();
                Payoff::Autocallable(AutocallSpec::new(
                    *barrier,
                    indices,
                    premature_payoffs.clone(),
                    Redemption { slope: *redemption_slope, intercept: *redemption_intercept },
                )?)
            }
        })
    }
}

fn nearest_fine_index(grid: &TimeGrid, t: f64) -> usize {
    let times = grid.fine_times();
    (0..times.len())
        .min_by(|&a, &b| (times[a] - t).abs().total_cmp(&(times[b] - t).abs()))
        .expect("grid has times")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PricingConfig {
    #[serde(default = "default_n_mc")]
    pub n_mc: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Conditioning time; must be a coarse time.
    #[serde(default)]
    pub t: f64,
    #[serde(default = "default_bump")]
    pub bump: f64,
    /// Volatility to price at when the model draws it at random.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
}

fn default_n_mc() -> usize {
    100_000
}
fn default_alpha() -> f64 {
    0.05
}
fn default_bump() -> f64 {
    DEFAULT_BUMP
}

impl Default for PricingConfig {
    fn default() -> Self {
        Self { n_mc: default_n_mc(), alpha: default_alpha(), t: 0.0, bump: default_bump(), sigma: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    #[serde(default = "default_n_mc")]
    pub oracle_n_mc: usize,
    #[serde(default = "default_bump")]
    pub bump: f64,
    /// Skip the vertical-derivative oracle and the hedge metrics.
    #[serde(default)]
    pub price_only: bool,
    /// Volatilities to evaluate a parametric model at.
    #[serde(default)]
    pub sigmas: Vec<f64>,
    /// Paths used for the control-variate correlation.
    #[serde(default = "default_n_correlation")]
    pub n_correlation: usize,
    /// Start of the correlation paths; defaults to one per asset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    /// Oracle cache directory; defaults to `<out>/oracle_cache`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<String>,
    /// Score the oracle against itself instead of a checkpoint.
    #[serde(default)]
    pub oracle_injection: bool,
}

fn default_n_test() -> usize {
    256
}
fn default_n_correlation() -> usize {
    10_000
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            n_test: default_n_test(),
            oracle_n_mc: default_n_mc(),
            bump: default_bump(),
            price_only: false,
            sigmas: Vec::new(),
            n_correlation: default_n_correlation(),
            x0: None,
            cache_dir: None,
            oracle_injection: false,
        }
    }
}

/// Everything a command needs, built from a validated config.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub model: Model,
    pub grid: TimeGrid,
    pub payoff: Payoff,
    pub spec: InputSpec,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| PpdeError::Config(describe(&e, text)))?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PpdeError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn resolve(&self) -> Result<Resolved> {
        let model = self.model.build()?;
        let grid = self.grid.build()?;
        let payoff = self.payoff.build(&grid)?;
        payoff.validate(model.dim(), grid.n_fine())?;
        let spec = InputSpec::new(self.network.net_type, self.encoding, &model, &grid);
        Ok(Resolved { model, grid, payoff, spec })
    }

    /// Defaults-applied config as TOML.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the effective config.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn training(&self) -> Result<&TrainConfig> {
        self.training.as_ref().ok_or_else(|| PpdeError::Config("missing section `training`".into()))
    }
}

/// Qualifies `missing field` diagnostics with the enclosing table name.
fn describe(err: &toml::de::Error, text: &str) -> String {
    let msg = err.message();
    let table = err.span().and_then(|s| {
        let line = text.get(s.start..)?.lines().next()?.trim();
        let name = line.strip_prefix('[')?.strip_suffix(']')?;
        Some(name.trim_matches(|c| c == '[' || c == ']').trim().to_string())
    });
    let qualified = match (msg.strip_prefix("missing field `").and_then(|r| r.strip_suffix('`')), table) {
        (Some(field), Some(t)) => format!("missing field `{t}.{field}`"),
        _ => msg.to_string(),
    };
    match err.span() {
        Some(s) => {
            let line = text[..s.start.min(text.len())].matches('\n').count() + 1;
            format!("line {line}: {qualified}")
        }
        None => qualified,
    }
}
