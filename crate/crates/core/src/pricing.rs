//! Monte Carlo oracles and the control-variate pricer.
//!
//! All estimators condition on a fine-grid history `[0, t]` and simulate
//! continuations on `(t, T]`. Continuation `i` draws from substream
//! `(seed, PRICE, i)` so the same seed reproduces the same paths whatever
//! the thread count, and sums are reduced pairwise in index order.

use std::io::{BufRead, Write};

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{param, PpdeError, Result};
use crate::market_models::{Model, PathBatch, PathStart, TimeGrid};
use crate::nets::checkpoint::Checkpoint;
use crate::nets::Network;
use crate::payoffs::Payoff;
use crate::rng::{self, stream, PathRng};
use crate::training::batch::{path_inputs, InputSpec};
use crate::training::spec_of_checkpoint;

/// Default relative bump for the vertical derivative.
pub const DEFAULT_BUMP: f64 = 1e-3;

const CHUNK: usize = 256;

/// Observed history of one path up to the conditioning time.
#[derive(Debug, Clone, PartialEq)]
pub struct History {
    /// Fine-grid rows `0..=j`, `[j + 1, d]`.
    pub path: Array2<f64>,
    /// Non-traded state at row `j`.
    pub aux: Vec<f64>,
    pub beta: Vec<f64>,
}

impl History {
    pub fn new(path: Array2<f64>, aux: Vec<f64>, beta: Vec<f64>) -> Result<Self> {
        if path.nrows() == 0 || path.ncols() == 0 {
            return Err(PpdeError::Input("history has no observations".into()));
        }
        Ok(Self { path, aux, beta })
    }

    /// History consisting of the starting point alone.
    pub fn at_start(start: &PathStart) -> Self {
        let path = Array2::from_shape_vec((1, start.x0.len()), start.x0.clone()).expect("row vector");
        Self { path, aux: start.aux0.clone(), beta: start.beta.clone() }
    }

    /// Start at `x0` with the model's default factor state and pinned `β`.
    pub fn from_x0(model: &Model, x0: &[f64]) -> Result<Self> {
        let beta = model
            .fixed_beta()
            .ok_or_else(|| PpdeError::Param("model draws β at random; pin it with with_fixed_beta".into()))?;
        Self::new(Array2::from_shape_vec((1, x0.len()), x0.to_vec()).expect("row vector"), model.initial_aux(), beta)
    }

    /// Rows `0..=fine_idx` of path `i` in a simulated batch.
    pub fn from_batch(paths: &PathBatch, i: usize, fine_idx: usize) -> Self {
        let path = paths.paths.slice(ndarray::s![i, ..=fine_idx, ..]).to_owned();
        let aux = paths.aux.slice(ndarray::s![i, fine_idx, ..]).to_vec();
        Self { path, aux, beta: paths.beta.row(i).to_vec() }
    }

    /// Fine index of the conditioning time.
    pub fn fine_index(&self) -> usize {
        self.path.nrows() - 1
    }

    pub fn dim(&self) -> usize {
        self.path.ncols()
    }

    pub fn current(&self) -> Vec<f64> {
        self.path.row(self.fine_index()).to_vec()
    }

    /// Parses `time_index,asset_index,value` rows; asset indices at and
    /// beyond `dim` carry the non-traded state (e.g. Heston variance).
    pub fn read_csv<R: BufRead>(reader: R, model: &Model) -> Result<Self> {
        let (d, a) = (model.dim(), model.aux_dim());
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers().map_err(|e| PpdeError::Input(format!("history: {e}")))?.clone();
        let expect = ["time_index", "asset_index", "value"];
        if headers.iter().collect::<Vec<_>>() != expect {
            return Err(PpdeError::Input(format!("history header must be {}", expect.join(","))));
        }
        let mut cells: Vec<(usize, usize, f64)> = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| PpdeError::Input(format!("history line {}: {e}", line + 2)))?;
            let field = |j: usize| rec.get(j).unwrap_or("");
            let bad = |what: &str| PpdeError::Input(format!("history line {}: unreadable {what}", line + 2));
            let t: usize = field(0).parse().map_err(|_| bad("time_index"))?;
            let i: usize = field(1).parse().map_err(|_| bad("asset_index"))?;
            let v: f64 = field(2).parse().map_err(|_| bad("value"))?;
            if i >= d + a {
                return Err(PpdeError::Input(format!("history line {}: asset_index {i} out of range", line + 2)));
            }
            cells.push((t, i, v));
        }
        let rows = cells.iter().map(|c| c.0 + 1).max().ok_or_else(|| PpdeError::Input("history is empty".into()))?;
        let mut path = Array2::from_elem((rows, d), f64::NAN);
        let mut aux = vec![None; a];
        for &(t, i, v) in &cells {
            if i < d {
                path[[t, i]] = v;
            } else if t == rows - 1 {
                aux[i - d] = Some(v);
            }
        }
        if let Some(((t, i), _)) = path.indexed_iter().find(|(_, v)| v.is_nan()) {
            return Err(PpdeError::Input(format!("history misses time_index {t}, asset_index {i}")));
        }
        let aux = if rows == 1 {
            let init = model.initial_aux();
            aux.iter().zip(init).map(|(v, d)| v.unwrap_or(d)).collect()
        } else {
            aux.iter()
                .enumerate()
                .map(|(j, v)| {
                    v.ok_or_else(|| {
                        PpdeError::Input(format!("history needs asset_index {} (factor state) at the last time", d + j))
                    })
                })
                .collect::<Result<Vec<_>>>()?
        };
        let beta = model
            .fixed_beta()
            .ok_or_else(|| PpdeError::Param("model draws β at random; pin it before pricing".into()))?;
        Self::new(path, aux, beta)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "time_index,asset_index,value")?;
        let d = self.dim();
        for ((t, i), v) in self.path.indexed_iter() {
            writeln!(out, "{t},{i},{v:?}")?;
        }
        for (j, v) in self.aux.iter().enumerate() {
            writeln!(out, "{},{},{v:?}", self.fine_index(), d + j)?;
        }
        Ok(())
    }
}

/// Point estimate with its CLT interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceEstimate {
    pub estimate: f64,
    pub std: f64,
    pub n: usize,
    pub alpha: f64,
    pub lo: f64,
    pub hi: f64,
    pub seed: u64,
}

impl PriceEstimate {
    pub fn from_samples(samples: &[f64], alpha: f64, seed: u64) -> Result<Self> {
        let (estimate, std) = mean_std(samples)?;
        let (lo, hi) = confidence_interval(estimate, std, samples.len(), alpha)?;
        Ok(Self { estimate, std, n: samples.len(), alpha, lo, hi, seed })
    }

    pub fn std_error(&self) -> f64 {
        self.std / (self.n as f64).sqrt()
    }
}

/// Per-asset vertical derivative estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivativeEstimate {
    pub values: Vec<f64>,
    pub std: Vec<f64>,
    pub n: usize,
    /// Absolute bump applied to each asset.
    pub bumps: Vec<f64>,
}

impl DerivativeEstimate {
    pub fn std_errors(&self) -> Vec<f64> {
        self.std.iter().map(|s| s / (self.n as f64).sqrt()).collect()
    }
}

/// Sum in a fixed binary-tree order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 32 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Mean and unbiased standard deviation.
pub fn mean_std(xs: &[f64]) -> Result<(f64, f64)> {
    if xs.len() < 2 {
        return Err(PpdeError::Estimator(format!("need at least 2 samples for a variance, got {}", xs.len())));
    }
    let n = xs.len() as f64;
    let mean = pairwise_sum(xs) / n;
    let sq: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    Ok((mean, (pairwise_sum(&sq) / (n - 1.0)).sqrt()))
}

/// Standard normal quantile by Acklam's rational approximation
/// (relative error below 1.2e-9).
pub fn inverse_normal_cdf(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return param(format!("probability must lie in (0, 1), got {p}"));
    }
    const A: [f64; 6] = [
        -3.969683028665376e1,
        2.209460984245205e2,
        -2.759285104469687e2,
        1.383_577_518_672_69e2,
        -3.066479806614716e1,
        2.506628277459239,
    ];
    const B: [f64; 5] =
        [-5.447609879822406e1, 1.615858368580409e2, -1.556989798598866e2, 6.680131188771972e1, -1.328068155288572e1];
    const C: [f64; 6] = [
        -7.784894002430293e-3,
        -3.223964580411365e-1,
        -2.400758277161838,
        -2.549732539343734,
        4.374664141464968,
        2.938163982698783,
    ];
    const D: [f64; 4] = [7.784695709041462e-3, 3.224671290700398e-1, 2.445134137142996, 3.754408661907416];
    const P_LOW: f64 = 0.02425;
    let tail = |q: f64| {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    Ok(if p < P_LOW {
        tail((-2.0 * p.ln()).sqrt())
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -tail((-2.0 * (1.0 - p).ln()).sqrt())
    })
}

/// `z_{α/2}`, the two-sided standard normal critical value.
pub fn z_value(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return param(format!("confidence level alpha must lie in (0, 1), got {alpha}"));
    }
    inverse_normal_cdf(1.0 - alpha / 2.0)
}

/// `mean ± z_{α/2}·std/√N`.
pub fn confidence_interval(mean: f64, std: f64, n: usize, alpha: f64) -> Result<(f64, f64)> {
    if n < 2 {
        return Err(PpdeError::Estimator(format!("need at least 2 samples, got {n}")));
    }
    if !(std >= 0.0) {
        return param(format!("standard deviation must be non-negative, got {std}"));
    }
    let half = z_value(alpha)? * std / (n as f64).sqrt();
    Ok((mean - half, mean + half))
}

/// Shared context of every continuation.
struct Continuation<'a> {
    model: &'a Model,
    grid: &'a TimeGrid,
    payoff: &'a Payoff,
    history: &'a History,
}

impl<'a> Continuation<'a> {
    fn new(model: &'a Model, grid: &'a TimeGrid, payoff: &'a Payoff, history: &'a History) -> Result<Self> {
        model.validate()?;
        let (d, n_f) = (model.dim(), grid.n_fine());
        if history.dim() != d {
            return Err(PpdeError::Input(format!("history has {} assets, model has {d}", history.dim())));
        }
        if history.fine_index() > n_f {
            return Err(PpdeError::Input(format!(
                "history reaches fine index {}, grid ends at {n_f}",
                history.fine_index()
            )));
        }
        if history.aux.len() != model.aux_dim() {
            return Err(PpdeError::Input(format!(
                "history carries {} factor values, model needs {}",
                history.aux.len(),
                model.aux_dim()
            )));
        }
        if history.beta.len() != model.param_dim() {
            return Err(PpdeError::Input(format!(
                "history carries {} parameters, model needs {}",
                history.beta.len(),
                model.param_dim()
            )));
        }
        payoff.validate(d, n_f)?;
        Ok(Self { model, grid, payoff, history })
    }

    fn time(&self) -> f64 {
        self.grid.fine_times()[self.history.fine_index()]
    }

    fn discount_factor(&self) -> f64 {
        (-self.model.rate() * (self.grid.maturity() - self.time())).exp()
    }

    /// Full-path buffer with the history copied in.
    fn buffer(&self) -> Vec<f64> {
        let d = self.model.dim();
        let mut buf = vec![0.0; (self.grid.n_fine() + 1) * d];
        for (k, row) in self.history.path.rows().into_iter().enumerate() {
            buf[k * d..(k + 1) * d].iter_mut().zip(row).for_each(|(b, v)| *b = *v);
        }
        buf
    }

    /// Simulates every branch on shared increments. Branch `b` restarts from
    /// `starts[b]` at the conditioning row. Increments are written to `dws`
    /// (`[N_f − j, d_W]`) and the factor path of branch 0 to `aux_path`.
    fn run(&self, rng: &mut PathRng, starts: &[Vec<f64>], bufs: &mut [Vec<f64>], dws: &mut [f64], aux_path: &mut [f64]) {
        let (d, a, m) = (self.model.dim(), self.model.aux_dim(), self.model.noise_dim());
        let j = self.history.fine_index();
        let beta = &self.history.beta;
        let mut aux: Vec<Vec<f64>> = starts.iter().map(|_| self.history.aux.clone()).collect();
        for (b, x) in starts.iter().enumerate() {
            bufs[b][j * d..(j + 1) * d].copy_from_slice(x);
        }
        aux_path[..a].copy_from_slice(&self.history.aux);
        for f in j..self.grid.n_fine() {
            let dt = self.grid.fine_dt(f);
            let dw = &mut dws[(f - j) * m..(f - j + 1) * m];
            Model::draw_increments(rng, dt, dw);
            for (b, buf) in bufs.iter_mut().enumerate() {
                let (head, tail) = buf.split_at_mut((f + 1) * d);
                let next = &mut tail[..d];
                next.copy_from_slice(&head[f * d..]);
                self.model.step(next, &mut aux[b], beta, dt, dw);
            }
            aux_path[(f + 1 - j) * a..(f + 2 - j) * a].copy_from_slice(&aux[0]);
        }
    }

    fn payoff_of(&self, buf: &[f64]) -> f64 {
        let view = ArrayView2::from_shape((self.grid.n_fine() + 1, self.model.dim()), buf).expect("path buffer");
        self.payoff.evaluate(view)
    }
}

fn absolute_bumps(x: &[f64], rel: f64) -> Vec<f64> {
    x.iter().map(|v| if *v == 0.0 { rel } else { rel * v.abs() }).collect()
}

/// Price samples and, when `bump` is set, central-difference samples per
/// asset: sample-major `[n, 1 + d]` (or `[n, 1]`).
fn oracle_samples(ctx: &Continuation, n: usize, bump: Option<f64>, seed: u64) -> Vec<f64> {
    let d = ctx.model.dim();
    let x = ctx.history.current();
    let mut starts = vec![x.clone()];
    let mut hs = Vec::new();
    if let Some(rel) = bump {
        hs = absolute_bumps(&x, rel);
        for i in 0..d {
            for sign in [1.0, -1.0] {
                let mut s = x.clone();
                s[i] += sign * hs[i];
                starts.push(s);
            }
        }
    }
    let width = if bump.is_some() { 1 + d } else { 1 };
    let disc = ctx.discount_factor();
    let steps = ctx.grid.n_fine() - ctx.history.fine_index();
    let mut out = vec![0.0; n * width];
    out.par_chunks_mut(CHUNK * width).enumerate().for_each(|(c, chunk)| {
        let template = ctx.buffer();
        let mut bufs = vec![template; starts.len()];
        let mut dws = vec![0.0; steps * ctx.model.noise_dim()];
        let mut aux_path = vec![0.0; (steps + 1) * ctx.model.aux_dim()];
        for (r, row) in chunk.chunks_mut(width).enumerate() {
            let idx = (c * CHUNK + r) as u64;
            let mut rng = rng::substream(seed, stream::PRICE, idx);
            ctx.run(&mut rng, &starts, &mut bufs, &mut dws, &mut aux_path);
            row[0] = disc * ctx.payoff_of(&bufs[0]);
            for i in 0..width - 1 {
                let up = ctx.payoff_of(&bufs[1 + 2 * i]);
                let down = ctx.payoff_of(&bufs[2 + 2 * i]);
                row[1 + i] = disc * (up - down) / (2.0 * hs[i]);
            }
        }
    });
    out
}

fn column(samples: &[f64], width: usize, j: usize) -> Vec<f64> {
    samples.chunks(width).map(|r| r[j]).collect()
}

/// Plain Monte Carlo price `E[e^{−r(T−t)} g | history]`.
#[allow(clippy::too_many_arguments)]
pub fn mc_price(
    model: &Model,
    grid: &TimeGrid,
    payoff: &Payoff,
    history: &History,
    n_mc: usize,
    alpha: f64,
    seed: u64,
) -> Result<PriceEstimate> {
    if n_mc < 2 {
        return Err(PpdeError::Estimator(format!("N_MC must be at least 2, got {n_mc}")));
    }
    z_value(alpha)?;
    let ctx = Continuation::new(model, grid, payoff, history)?;
    PriceEstimate::from_samples(&oracle_samples(&ctx, n_mc, None, seed), alpha, seed)
}

/// Price and vertical derivative from one set of continuations. The
/// derivative bumps the path from `t` onward by `±h_i e_i`, with
/// `h_i = rel_bump·|x^i_t|`, on common random numbers.
#[allow(clippy::too_many_arguments)]
pub fn mc_oracle(
    model: &Model,
    grid: &TimeGrid,
    payoff: &Payoff,
    history: &History,
    n_mc: usize,
    rel_bump: f64,
    alpha: f64,
    seed: u64,
) -> Result<(PriceEstimate, DerivativeEstimate)> {
    if !(rel_bump > 0.0) {
        return param(format!("bump must be positive, got {rel_bump}"));
    }
    if n_mc < 2 {
        return Err(PpdeError::Estimator(format!("N_MC must be at least 2, got {n_mc}")));
    }
    z_value(alpha)?;
    let ctx = Continuation::new(model, grid, payoff, history)?;
    let d = model.dim();
    let samples = oracle_samples(&ctx, n_mc, Some(rel_bump), seed);
    let price = PriceEstimate::from_samples(&column(&samples, d + 1, 0), alpha, seed)?;
    let mut values = Vec::with_capacity(d);
    let mut std = Vec::with_capacity(d);
    for i in 0..d {
        let (m, s) = mean_std(&column(&samples, d + 1, 1 + i))?;
        values.push(m);
        std.push(s);
    }
    let bumps = absolute_bumps(&history.current(), rel_bump);
    Ok((price, DerivativeEstimate { values, std, n: n_mc, bumps }))
}

/// Vertical derivative `∂_i F(t, ω)` by central differences.
pub fn mc_vertical_derivative(
    model: &Model,
    grid: &TimeGrid,
    payoff: &Payoff,
    history: &History,
    n_mc: usize,
    rel_bump: f64,
    seed: u64,
) -> Result<DerivativeEstimate> {
    Ok(mc_oracle(model, grid, payoff, history, n_mc, rel_bump, 0.05, seed)?.1)
}

/// Hedge network paired with the input encoding it was trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct HedgeNet {
    pub network: Network,
    pub spec: InputSpec,
}

impl HedgeNet {
    pub fn new(network: Network, spec: InputSpec) -> Result<Self> {
        if network.arch.input() != spec.input_width() {
            return Err(PpdeError::Shape(format!(
                "network takes {} inputs, encoding produces {}",
                network.arch.input(),
                spec.input_width()
            )));
        }
        if network.arch.output() != spec.dim {
            return Err(PpdeError::Shape(format!(
                "hedge network has {} outputs for {} assets",
                network.arch.output(),
                spec.dim
            )));
        }
        Ok(Self { network, spec })
    }

    /// Loads a hedge checkpoint, checking its descriptor against `expected`.
    pub fn from_checkpoint(ck: &Checkpoint, expected: &InputSpec) -> Result<Self> {
        match ck.input.get("role").and_then(|r| r.as_str()) {
            Some("hedge") => {}
            Some(other) => return Err(PpdeError::Input(format!("checkpoint holds a {other} network, not a hedge"))),
            None => return Err(PpdeError::Checkpoint("descriptor has no role".into())),
        }
        let spec = spec_of_checkpoint(ck)?;
        let diff = spec.mismatches(expected);
        if !diff.is_empty() {
            return Err(PpdeError::Input(format!(
                "checkpoint descriptor disagrees with the configured encoding on: {}",
                diff.join(", ")
            )));
        }
        Self::new(ck.network.clone(), spec)
    }
}

/// Per-continuation terms of the control variate.
#[derive(Debug, Clone, PartialEq)]
pub struct CvSamples {
    /// `e^{−rT} g`.
    pub discounted_payoff: Vec<f64>,
    /// `Σ_{m ≥ k} e^{−r t_m} R_φ(t_m)·σ(t_m) ΔW_m`.
    pub integral: Vec<f64>,
}

impl CvSamples {
    /// `M^{cv}` per path.
    pub fn martingale(&self) -> Vec<f64> {
        self.discounted_payoff.iter().zip(&self.integral).map(|(g, s)| g - s).collect()
    }
}

/// Simulates `n` continuations from a coarse-knot history and evaluates the
/// hedge along each of them.
pub fn cv_samples(
    model: &Model,
    grid: &TimeGrid,
    payoff: &Payoff,
    hedge: &HedgeNet,
    history: &History,
    n: usize,
    seed: u64,
) -> Result<CvSamples> {
    let ctx = Continuation::new(model, grid, payoff, history)?;
    let j = history.fine_index();
    let k0 = grid.coarse_indices().iter().position(|&f| f == j).ok_or_else(|| {
        PpdeError::Input(format!("history ends at fine index {j}, which is not a coarse time"))
    })?;
    let spec = &hedge.spec;
    if spec.dim != model.dim() || spec.param_dim != model.param_dim() || spec.n_coarse != grid.n_coarse() {
        return Err(PpdeError::Input("hedge encoding does not match the model and grid".into()));
    }
    let (d, a, m) = (model.dim(), model.aux_dim(), model.noise_dim());
    let r = model.rate();
    let disc_t = (-r * grid.maturity()).exp();
    let steps_f = grid.n_fine() - j;
    let x = history.current();
    let chunks: Vec<(Vec<f64>, Vec<f64>)> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| -> Result<(Vec<f64>, Vec<f64>)> {
            let lo = c * CHUNK;
            let size = CHUNK.min(n - lo);
            let template = ctx.buffer();
            let mut bufs = vec![template];
            let mut g = Vec::with_capacity(size);
            let mut paths = Vec::with_capacity(size);
            let mut incs = Vec::with_capacity(size);
            let mut auxs = Vec::with_capacity(size);
            for r_i in 0..size {
                let mut rng = rng::substream(seed, stream::PRICE, (lo + r_i) as u64);
                let mut dws = vec![0.0; steps_f * m];
                let mut aux_path = vec![0.0; (steps_f + 1) * a];
                ctx.run(&mut rng, std::slice::from_ref(&x), &mut bufs, &mut dws, &mut aux_path);
                g.push(disc_t * ctx.payoff_of(&bufs[0]));
                paths.push(bufs[0].clone());
                incs.push(dws);
                auxs.push(aux_path);
            }
            let steps = spec.steps();
            let mut inputs = Array2::zeros((steps * size, spec.input_width()));
            for (i, p) in paths.iter().enumerate() {
                let view = ArrayView2::from_shape((grid.n_fine() + 1, d), p.as_slice()).expect("path buffer");
                let rows = path_inputs(view, &history.beta, grid, spec)?;
                for s in 0..steps {
                    inputs.row_mut(s * size + i).assign(&rows.row(s));
                }
            }
            let z = hedge.network.predict(&inputs, steps)?;
            let mut sig = vec![0.0; d * m];
            let mut integral = Vec::with_capacity(size);
            for i in 0..size {
                let mut acc = 0.0;
                for k in k0..grid.n_coarse() {
                    let (f0, f1) = (grid.fine_index_of_coarse(k), grid.fine_index_of_coarse(k + 1));
                    let xk = &paths[i][f0 * d..(f0 + 1) * d];
                    let ak = &auxs[i][(f0 - j) * a..(f0 - j + 1) * a];
                    model.diffusion(xk, ak, &history.beta, &mut sig);
                    let mut dw = vec![0.0; m];
                    for f in f0..f1 {
                        for (w, inc) in dw.iter_mut().zip(&incs[i][(f - j) * m..(f - j + 1) * m]) {
                            *w += inc;
                        }
                    }
                    let mut term = 0.0;
                    for asset in 0..d {
                        let sdw: f64 = (0..m).map(|q| sig[asset * m + q] * dw[q]).sum();
                        term += z[[k * size + i, asset]] * sdw;
                    }
                    acc += (-r * grid.coarse_times()[k]).exp() * term;
                }
                integral.push(acc);
            }
            Ok((g, integral))
        })
        .collect::<Result<_>>()?;
    let mut out = CvSamples { discounted_payoff: Vec::with_capacity(n), integral: Vec::with_capacity(n) };
    for (g, s) in chunks {
        out.discounted_payoff.extend(g);
        out.integral.extend(s);
    }
    Ok(out)
}

/// De-biased price `e^{rt}·mean(M^{cv})` with its CLT interval.
#[allow(clippy::too_many_arguments)]
pub fn cv_price(
    model: &Model,
    grid: &TimeGrid,
    payoff: &Payoff,
    hedge: &HedgeNet,
    history: &History,
    n_mc: usize,
    alpha: f64,
    seed: u64,
) -> Result<PriceEstimate> {
    if n_mc < 2 {
        return Err(PpdeError::Estimator(format!("N_MC must be at least 2, got {n_mc}")));
    }
    z_value(alpha)?;
    let samples = cv_samples(model, grid, payoff, hedge, history, n_mc, seed)?;
    let t = grid.fine_times()[history.fine_index()];
    let growth = (model.rate() * t).exp();
    let values: Vec<f64> = samples.martingale().iter().map(|v| growth * v).collect();
    PriceEstimate::from_samples(&values, alpha, seed)
}
