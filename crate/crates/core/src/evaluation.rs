//! Error metrics of learned prices and hedges against Monte Carlo oracles.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::error::{PpdeError, Result};
use crate::market_models::{self, Model, PathBatch, TimeGrid};
use crate::nets::Network;
use crate::payoffs::Payoff;
use crate::pricing::{self, cv_samples, pairwise_sum, HedgeNet, History};
use crate::rng::{derive_seed, stream};
use crate::signatures::Transform;
use crate::training::batch::{encode_paths, Encoding, EncodingKind, InputSpec, NetType};
use crate::training::Method;

/// Norm used to collapse per-asset hedge errors.
pub const HEDGE_ERROR_NORM: &str = "l1";

/// Monte Carlo settings of the oracle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleSettings {
    pub n_mc: usize,
    /// Relative bump of the vertical derivative; `None` skips the hedge oracle.
    pub rel_bump: Option<f64>,
    pub seed: u64,
}

/// Oracle values at coarse steps `0..N_c` of every test path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleTable {
    pub key: String,
    pub settings: OracleSettings,
    /// `[paths, N_c]`
    pub price: Array2<f64>,
    pub price_std: Array2<f64>,
    /// `[paths, N_c, d]`
    pub hedge: Option<Array3<f64>>,
}

impl OracleTable {
    pub fn n_paths(&self) -> usize {
        self.price.nrows()
    }
}

/// Fresh evaluation paths, independent of every training stream.
pub fn test_paths(model: &Model, grid: &TimeGrid, n: usize, seed: u64) -> Result<PathBatch> {
    market_models::simulate(model, grid, n, seed, stream::EVAL)
}

/// Hex digest identifying an oracle computation.
pub fn oracle_key(model: &Model, grid: &TimeGrid, payoff: &Payoff, paths: &PathBatch, settings: &OracleSettings) -> String {
    let mut h = Sha256::new();
    let header = json!({ "model": model, "grid": grid, "payoff": payoff, "settings": settings });
    h.update(header.to_string().as_bytes());
    for v in paths.paths.iter().chain(paths.aux.iter()).chain(paths.beta.iter()) {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Brute-force oracle at every `(path, t_k)`; point `(p, k)` uses seed
/// `derive_seed(seed, [p, k])`.
pub fn compute_oracle(
    model: &Model,
    grid: &TimeGrid,
    payoff: &Payoff,
    paths: &PathBatch,
    settings: &OracleSettings,
) -> Result<OracleTable> {
    let (n, n_c, d) = (paths.batch_size(), grid.n_coarse(), paths.dim());
    let mut price = Array2::zeros((n, n_c));
    let mut price_std = Array2::zeros((n, n_c));
    let mut hedge = settings.rel_bump.map(|_| Array3::zeros((n, n_c, d)));
    for p in 0..n {
        for k in 0..n_c {
            let history = History::from_batch(paths, p, grid.fine_index_of_coarse(k));
            let seed = derive_seed(settings.seed, &[p as u64, k as u64]);
            let est = match (settings.rel_bump, hedge.as_mut()) {
                (Some(bump), Some(h)) => {
                    let (est, der) =
                        pricing::mc_oracle(model, grid, payoff, &history, settings.n_mc, bump, 0.05, seed)?;
                    for (a, v) in der.values.iter().enumerate() {
                        h[[p, k, a]] = *v;
                    }
                    est
                }
                _ => pricing::mc_price(model, grid, payoff, &history, settings.n_mc, 0.05, seed)?,
            };
            price[[p, k]] = est.estimate;
            price_std[[p, k]] = est.std;
        }
    }
    let key = oracle_key(model, grid, payoff, paths, settings);
    Ok(OracleTable { key, settings: *settings, price, price_std, hedge })
}

/// Loads `oracle-<key>.json` from `dir`, computing and storing it when absent.
pub fn cached_oracle(
    dir: &Path,
    model: &Model,
    grid: &TimeGrid,
    payoff: &Payoff,
    paths: &PathBatch,
    settings: &OracleSettings,
) -> Result<OracleTable> {
    let key = oracle_key(model, grid, payoff, paths, settings);
    let file: PathBuf = dir.join(format!("oracle-{key}.json"));
    if file.exists() {
        let text = fs::read_to_string(&file)?;
        let table: OracleTable = serde_json::from_str(&text)
            .map_err(|e| PpdeError::Input(format!("oracle cache {}: {e}", file.display())))?;
        if table.key == key {
            return Ok(table);
        }
    }
    let table = compute_oracle(model, grid, payoff, paths, settings)?;
    fs::create_dir_all(dir)?;
    let tmp = file.with_extension("json.tmp");
    fs::write(&tmp, serde_json::to_string(&table).expect("oracle serializes"))?;
    fs::rename(&tmp, &file)?;
    Ok(table)
}

fn weights(grid: &TimeGrid) -> Vec<f64> {
    (0..grid.n_coarse()).map(|k| grid.coarse_dt(k)).collect()
}

/// `mean_p Σ_k (t_{k+1} − t_k)·|oracle − values|` over `[paths, N_c]` tables.
pub fn integral_error_from_values(grid: &TimeGrid, oracle: &Array2<f64>, values: &Array2<f64>) -> Result<f64> {
    let n_c = grid.n_coarse();
    if oracle.ncols() != n_c || values.dim() != oracle.dim() {
        return Err(PpdeError::Estimator(format!(
            "oracle values {:?} do not match predictions {:?} on {n_c} coarse steps",
            oracle.dim(),
            values.dim()
        )));
    }
    if oracle.nrows() == 0 {
        return Err(PpdeError::Estimator("no oracle values".into()));
    }
    let w = weights(grid);
    let per_path: Vec<f64> = (0..oracle.nrows())
        .map(|p| (0..n_c).map(|k| w[k] * (oracle[[p, k]] - values[[p, k]]).abs()).sum())
        .collect();
    Ok(pairwise_sum(&per_path) / per_path.len() as f64)
}

/// Same weighted sum with the ℓ1 norm over assets on `[paths, N_c, d]`.
pub fn hedge_error_from_values(grid: &TimeGrid, oracle: &Array3<f64>, values: &Array3<f64>) -> Result<f64> {
    let (n, n_c, _) = oracle.dim();
    if n_c != grid.n_coarse() || values.dim() != oracle.dim() {
        return Err(PpdeError::Estimator(format!(
            "hedge oracle {:?} does not match predictions {:?}",
            oracle.dim(),
            values.dim()
        )));
    }
    if n == 0 {
        return Err(PpdeError::Estimator("no oracle values".into()));
    }
    let w = weights(grid);
    let per_path: Vec<f64> = (0..n)
        .map(|p| {
            (0..n_c)
                .map(|k| {
                    let diff = &oracle.slice(ndarray::s![p, k, ..]) - &values.slice(ndarray::s![p, k, ..]);
                    w[k] * diff.mapv(f64::abs).sum()
                })
                .sum()
        })
        .collect();
    Ok(pairwise_sum(&per_path) / n as f64)
}

/// Network outputs on the test paths, `[paths, N_c, outputs]`.
pub fn predictions(net: &Network, spec: &InputSpec, paths: &PathBatch) -> Result<Array3<f64>> {
    let b = paths.batch_size();
    let x = encode_paths(paths, spec)?;
    let y = net.predict(&x, spec.steps())?;
    let out = y.ncols();
    let n_c = spec.n_coarse;
    Ok(Array3::from_shape_fn((b, n_c, out), |(p, k, j)| y[[k * b + p, j]]))
}

/// `E_integral` of a price network.
pub fn integral_error_price(price: &Network, spec: &InputSpec, paths: &PathBatch, oracle: &OracleTable) -> Result<f64> {
    if price.arch.output() != 1 {
        return Err(PpdeError::Shape(format!("price network has {} outputs", price.arch.output())));
    }
    let y = predictions(price, spec, paths)?.index_axis_move(Axis(2), 0);
    integral_error_from_values(&paths.grid, &oracle.price, &y)
}

/// `E_hedging` of a hedge network.
pub fn integral_error_hedge(hedge: &HedgeNet, paths: &PathBatch, oracle: &OracleTable) -> Result<f64> {
    let reference = oracle
        .hedge
        .as_ref()
        .ok_or_else(|| PpdeError::Estimator("oracle table carries no hedge values".into()))?;
    let z = predictions(&hedge.network, &hedge.spec, paths)?;
    hedge_error_from_values(&paths.grid, reference, &z)
}

/// Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(PpdeError::Shape(format!("{} vs {} samples", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(PpdeError::Estimator(format!("correlation needs at least 2 samples, got {}", x.len())));
    }
    let n = x.len() as f64;
    let mx = pairwise_sum(x) / n;
    let my = pairwise_sum(y) / n;
    let dx: Vec<f64> = x.iter().map(|v| v - mx).collect();
    let dy: Vec<f64> = y.iter().map(|v| v - my).collect();
    let sxx = pairwise_sum(&dx.iter().map(|v| v * v).collect::<Vec<_>>());
    let syy = pairwise_sum(&dy.iter().map(|v| v * v).collect::<Vec<_>>());
    if !(sxx > 0.0) || !(syy > 0.0) {
        return Err(PpdeError::Estimator("correlation undefined: a variable has zero variance".into()));
    }
    let sxy = pairwise_sum(&dx.iter().zip(&dy).map(|(a, b)| a * b).collect::<Vec<_>>());
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Correlation between `e^{−rT} g` and the hedge's discrete stochastic
/// integral over `n` fresh paths started from `history`.
pub fn cv_correlation(
    model: &Model,
    grid: &TimeGrid,
    payoff: &Payoff,
    hedge: &HedgeNet,
    history: &History,
    n: usize,
    seed: u64,
) -> Result<f64> {
    if n < 2 {
        return Err(PpdeError::Estimator(format!("correlation needs at least 2 paths, got {n}")));
    }
    let s = cv_samples(model, grid, payoff, hedge, history, n, derive_seed(seed, &[stream::CORRELATION]))?;
    pearson(&s.discounted_payoff, &s.integral)
}

/// Table label of an encoding.
pub fn net_input_label(encoding: &Encoding) -> String {
    match encoding.kind {
        EncodingKind::CoarsePath => "path".into(),
        EncodingKind::SigStream => match encoding.transform {
            Transform::None => "path_sign".into(),
            Transform::LeadLag => "path_sign_lead_lag".into(),
            Transform::TimeAugment => "path_sign_time".into(),
            Transform::TimeAugmentLeadLag => "path_sign_time_lead_lag".into(),
        },
    }
}

pub fn net_type_label(net_type: NetType) -> &'static str {
    match net_type {
        NetType::Ffn => "ffn",
        NetType::Lstm => "lstm",
    }
}

/// One row of a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: Method,
    pub net_type: NetType,
    pub net_input: String,
    pub sigma: Option<f64>,
    pub e_integral: f64,
    pub e_hedging: Option<f64>,
    pub rho: Option<f64>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

/// Writes `method,net_type,net_input,sigma,E_integral,E_hedging,rho`.
pub fn write_metrics<W: Write>(rows: &[MetricsRow], mut out: W) -> Result<()> {
    writeln!(out, "method,net_type,net_input,sigma,E_integral,E_hedging,rho")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{:?},{},{}",
            r.method.as_str(),
            net_type_label(r.net_type),
            r.net_input,
            opt(r.sigma),
            r.e_integral,
            opt(r.e_hedging),
            opt(r.rho)
        )?;
    }
    Ok(())
}
