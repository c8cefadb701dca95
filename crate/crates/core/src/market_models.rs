//! Risk-neutral asset dynamics discretised with the Euler scheme.
//!
//! Paths live on the fine partition of a [`TimeGrid`]; learning and the
//! control variate only ever look at the coarse partition, which is a
//! subset of the fine one.

use ndarray::{Array2, Array3, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::error::{param, PpdeError, Result};
use crate::rng;

/// Nested fine/coarse partitions of `[0, T]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    maturity: f64,
    fine: Vec<f64>,
    coarse: Vec<f64>,
    coarse_idx: Vec<usize>,
}

impl TimeGrid {
    /// Uniform partitions with `n_fine` and `n_coarse` intervals.
    pub fn uniform(maturity: f64, n_fine: usize, n_coarse: usize) -> Result<Self> {
        if !(maturity > 0.0) || !maturity.is_finite() {
            return param(format!("maturity must be positive, got {maturity}"));
        }
        if n_coarse == 0 || n_fine == 0 {
            return param("grids need at least one interval");
        }
        if !n_fine.is_multiple_of(n_coarse) {
            return param(format!(
                "fine steps ({n_fine}) must be a multiple of coarse steps ({n_coarse})"
            ));
        }
        let fine: Vec<f64> = (0..=n_fine)
            .map(|k| {
                if k == n_fine {
                    maturity
                } else {
                    maturity * k as f64 / n_fine as f64
                }
            })
            .collect();
        let ratio = n_fine / n_coarse;
        let coarse_idx: Vec<usize> = (0..=n_coarse).map(|k| k * ratio).collect();
        let coarse = coarse_idx.iter().map(|&i| fine[i]).collect();
        Ok(Self { maturity, fine, coarse, coarse_idx })
    }

    /// Arbitrary partitions; every coarse time must appear exactly in `fine`.
    pub fn from_times(fine: Vec<f64>, coarse: Vec<f64>) -> Result<Self> {
        check_partition("fine", &fine)?;
        check_partition("coarse", &coarse)?;
        let maturity = *fine.last().unwrap();
        if *coarse.last().unwrap() != maturity {
            return param("fine and coarse partitions must share the maturity");
        }
        let mut coarse_idx = Vec::with_capacity(coarse.len());
        let mut cursor = 0;
        for &t in &coarse {
            while cursor < fine.len() && fine[cursor] < t {
                cursor += 1;
            }
            if cursor == fine.len() || fine[cursor] != t {
                return param(format!("coarse time {t} is not a fine grid point"));
            }
            coarse_idx.push(cursor);
        }
        Ok(Self { maturity, fine, coarse, coarse_idx })
    }

    pub fn maturity(&self) -> f64 {
        self.maturity
    }

    pub fn fine_times(&self) -> &[f64] {
        &self.fine
    }

    pub fn coarse_times(&self) -> &[f64] {
        &self.coarse
    }

    /// Number of fine intervals.
    pub fn n_fine(&self) -> usize {
        self.fine.len() - 1
    }

    /// Number of coarse intervals.
    pub fn n_coarse(&self) -> usize {
        self.coarse.len() - 1
    }

    /// Fine index of every coarse time.
    pub fn coarse_indices(&self) -> &[usize] {
        &self.coarse_idx
    }

    pub fn fine_index_of_coarse(&self, k: usize) -> usize {
        self.coarse_idx[k]
    }

    pub fn fine_dt(&self, k: usize) -> f64 {
        self.fine[k + 1] - self.fine[k]
    }

    pub fn coarse_dt(&self, k: usize) -> f64 {
        self.coarse[k + 1] - self.coarse[k]
    }

    /// Coarse index whose time equals `t` up to `1e-12`.
    pub fn coarse_index_of_time(&self, t: f64) -> Option<usize> {
        self.coarse.iter().position(|&c| (c - t).abs() <= 1e-12)
    }

    /// Coarse index closest to `t`; ties go to the earlier point.
    pub fn nearest_coarse_index(&self, t: f64) -> usize {
        let mut best = 0;
        for (k, &c) in self.coarse.iter().enumerate() {
            if (c - t).abs() < (self.coarse[best] - t).abs() - 1e-15 {
                best = k;
            }
        }
        best
    }
}

fn check_partition(name: &str, times: &[f64]) -> Result<()> {
    if times.len() < 2 {
        return param(format!("{name} partition needs at least two points"));
    }
    if times[0] != 0.0 {
        return param(format!("{name} partition must start at 0"));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return param(format!("{name} partition must be strictly increasing"));
    }
    Ok(())
}

/// Lower-triangular `C` with `C Cᵀ = cov`.
pub fn cholesky(cov: &Array2<f64>) -> Result<Array2<f64>> {
    let n = cov.nrows();
    if cov.ncols() != n {
        return Err(PpdeError::Shape(format!(
            "covariance must be square, got {}x{}",
            n,
            cov.ncols()
        )));
    }
    for i in 0..n {
        for j in 0..i {
            if (cov[[i, j]] - cov[[j, i]]).abs() > 1e-12 {
                return Err(PpdeError::Decomposition {
                    pivot: j,
                    reason: format!("matrix not symmetric at ({i},{j})"),
                });
            }
        }
    }
    let mut c = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut diag = cov[[j, j]];
        for k in 0..j {
            diag -= c[[j, k]] * c[[j, k]];
        }
        if !(diag > 0.0) {
            return Err(PpdeError::Decomposition {
                pivot: j,
                reason: format!("non-positive pivot {diag:e}; matrix is not positive-definite"),
            });
        }
        let d = diag.sqrt();
        c[[j, j]] = d;
        for i in (j + 1)..n {
            let mut s = cov[[i, j]];
            for k in 0..j {
                s -= c[[i, k]] * c[[j, k]];
            }
            c[[i, j]] = s / d;
        }
    }
    Ok(c)
}

/// Lognormal initial values `exp((mu - sigma²/2)·tau + sigma·√tau·ξ)`.
pub fn sample_initial_values<R: Rng + ?Sized>(
    mu: f64,
    sigma_law: f64,
    tau: f64,
    dim: usize,
    count: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    if !(tau > 0.0) {
        return param(format!("lognormal horizon tau must be positive, got {tau}"));
    }
    if count == 0 {
        return param("requested zero initial values");
    }
    Ok((0..count)
        .map(|_| (0..dim).map(|_| lognormal_draw(mu, sigma_law, tau, rng)).collect())
        .collect())
}

fn lognormal_draw<R: Rng + ?Sized>(mu: f64, sigma: f64, tau: f64, rng: &mut R) -> f64 {
    let xi: f64 = rng.sample(StandardNormal);
    ((mu - 0.5 * sigma * sigma) * tau + sigma * tau.sqrt() * xi).exp()
}

/// I.i.d. uniform draws on `[lo, hi]`.
pub fn sample_beta<R: Rng + ?Sized>(lo: f64, hi: f64, count: usize, rng: &mut R) -> Result<Vec<f64>> {
    if !(lo <= hi) {
        return param(format!("parameter range [{lo}, {hi}] is inverted"));
    }
    if lo == hi {
        return Ok(vec![lo; count]);
    }
    Ok((0..count).map(|_| rng.random_range(lo..=hi)).collect())
}

/// Law of the initial asset values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialLaw {
    Fixed { values: Vec<f64> },
    /// `sigma = None` uses each asset's own volatility as the law's sigma.
    LogNormal { mu: f64, tau: f64, sigma: Option<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlackScholesParams {
    pub r: f64,
    pub sigma: Vec<f64>,
    pub corr_chol: Array2<f64>,
    pub initial: InitialLaw,
    /// When set, every path draws a shared volatility `β ~ U[lo, hi]`.
    pub sigma_range: Option<(f64, f64)>,
}

impl BlackScholesParams {
    pub fn new(
        r: f64,
        sigma: Vec<f64>,
        covariance: &Array2<f64>,
        initial: InitialLaw,
        sigma_range: Option<(f64, f64)>,
    ) -> Result<Self> {
        let corr_chol = cholesky(covariance)?;
        let p = Self { r, sigma, corr_chol, initial, sigma_range };
        p.validate()?;
        Ok(p)
    }

    /// Independent assets sharing one volatility.
    pub fn independent(r: f64, sigma: f64, dim: usize, initial: InitialLaw) -> Result<Self> {
        Self::new(r, vec![sigma; dim], &Array2::eye(dim), initial, None)
    }

    pub fn dim(&self) -> usize {
        self.sigma.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 {
            return param("Black-Scholes model needs at least one asset");
        }
        if self.sigma.iter().any(|s| !(*s >= 0.0)) {
            return param("volatilities must be non-negative");
        }
        if self.corr_chol.dim() != (d, d) {
            return param("correlation factor must be d x d");
        }
        for i in 0..d {
            if !(self.corr_chol[[i, i]] > 0.0) {
                return param("correlation factor needs a positive diagonal");
            }
            for j in (i + 1)..d {
                if self.corr_chol[[i, j]] != 0.0 {
                    return param("correlation factor must be lower-triangular");
                }
            }
        }
        if let Some((lo, hi)) = self.sigma_range {
            if !(lo <= hi) || lo < 0.0 {
                return param(format!("volatility range [{lo}, {hi}] is invalid"));
            }
        }
        match &self.initial {
            InitialLaw::Fixed { values } if values.len() != d => {
                param("fixed initial values must have one entry per asset")
            }
            InitialLaw::LogNormal { tau, .. } if !(*tau > 0.0) => {
                param(format!("lognormal horizon tau must be positive, got {tau}"))
            }
            _ => Ok(()),
        }
    }

    fn vol(&self, beta: &[f64], i: usize) -> f64 {
        if self.sigma_range.is_some() {
            beta[0]
        } else {
            self.sigma[i]
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HestonParams {
    pub kappa: f64,
    pub mu_bar: f64,
    pub eta: f64,
    pub rho: f64,
    pub v0: f64,
    pub s0: f64,
    pub r: f64,
}

impl HestonParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho.abs() <= 1.0) {
            return param(format!("correlation rho={} outside [-1, 1]", self.rho));
        }
        if !(self.kappa >= 0.0 && self.eta >= 0.0 && self.v0 >= 0.0) {
            return param("kappa, eta and v0 must be non-negative");
        }
        if !(self.s0 > 0.0) {
            return param("initial price s0 must be positive");
        }
        Ok(())
    }
}

/// Starting point of one simulated path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathStart {
    pub x0: Vec<f64>,
    pub aux0: Vec<f64>,
    pub beta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Model {
    BlackScholes(BlackScholesParams),
    Heston(HestonParams),
}

impl Model {
    pub fn validate(&self) -> Result<()> {
        match self {
            Model::BlackScholes(p) => p.validate(),
            Model::Heston(p) => p.validate(),
        }
    }

    /// Number of assets `d`.
    pub fn dim(&self) -> usize {
        match self {
            Model::BlackScholes(p) => p.dim(),
            Model::Heston(_) => 1,
        }
    }

    /// Number of Brownian drivers `d_W`.
    pub fn noise_dim(&self) -> usize {
        match self {
            Model::BlackScholes(p) => p.dim(),
            Model::Heston(_) => 2,
        }
    }

    /// Non-traded state carried alongside the price (Heston variance).
    pub fn aux_dim(&self) -> usize {
        match self {
            Model::BlackScholes(_) => 0,
            Model::Heston(_) => 1,
        }
    }

    /// Length of the parameter vector `β` fed to the networks.
    pub fn param_dim(&self) -> usize {
        match self {
            Model::BlackScholes(_) => 1,
            Model::Heston(_) => 0,
        }
    }

    pub fn rate(&self) -> f64 {
        match self {
            Model::BlackScholes(p) => p.r,
            Model::Heston(p) => p.r,
        }
    }

    /// Same model with the parameter vector pinned to `beta`.
    pub fn with_fixed_beta(&self, beta: &[f64]) -> Result<Model> {
        match self {
            Model::BlackScholes(p) => {
                if beta.len() != 1 {
                    return param("Black-Scholes parameter vector has one entry (sigma)");
                }
                let mut q = p.clone();
                q.sigma = vec![beta[0]; p.dim()];
                q.sigma_range = None;
                q.validate()?;
                Ok(Model::BlackScholes(q))
            }
            Model::Heston(_) => {
                if !beta.is_empty() {
                    return param("Heston model has no free parameters");
                }
                Ok(self.clone())
            }
        }
    }

    /// The parameter vector when it is not randomised, `None` otherwise.
    pub fn fixed_beta(&self) -> Option<Vec<f64>> {
        match self {
            Model::BlackScholes(p) => match p.sigma_range {
                None => Some(vec![p.sigma.iter().sum::<f64>() / p.dim() as f64]),
                Some((lo, hi)) if lo == hi => Some(vec![lo]),
                Some(_) => None,
            },
            Model::Heston(_) => Some(vec![]),
        }
    }

    /// Initial state of the non-traded factors.
    pub fn initial_aux(&self) -> Vec<f64> {
        match self {
            Model::BlackScholes(_) => vec![],
            Model::Heston(p) => vec![p.v0],
        }
    }

    /// Draws `β` and the initial state, in that order.
    pub fn sample_start<R: Rng + ?Sized>(&self, rng: &mut R) -> PathStart {
        match self {
            Model::BlackScholes(p) => {
                let beta = match p.sigma_range {
                    Some((lo, hi)) if lo < hi => vec![rng.random_range(lo..=hi)],
                    Some((lo, _)) => vec![lo],
                    None => vec![p.sigma.iter().sum::<f64>() / p.dim() as f64],
                };
                let x0 = match &p.initial {
                    InitialLaw::Fixed { values } => values.clone(),
                    InitialLaw::LogNormal { mu, tau, sigma } => (0..p.dim())
                        .map(|i| {
                            let s = sigma.unwrap_or_else(|| p.vol(&beta, i));
                            lognormal_draw(*mu, s, *tau, rng)
                        })
                        .collect(),
                };
                PathStart { x0, aux0: vec![], beta }
            }
            Model::Heston(p) => PathStart { x0: vec![p.s0], aux0: vec![p.v0], beta: vec![] },
        }
    }

    /// One Euler step of length `dt` driven by the increments `dw`.
    #[inline]
    pub fn step(&self, x: &mut [f64], aux: &mut [f64], beta: &[f64], dt: f64, dw: &[f64]) {
        match self {
            Model::BlackScholes(p) => {
                let d = p.dim();
                for i in (0..d).rev() {
                    let mut shock = 0.0;
                    for j in 0..=i {
                        shock += p.corr_chol[[i, j]] * dw[j];
                    }
                    let s = x[i];
                    x[i] = s + p.r * s * dt + p.vol(beta, i) * s * shock;
                }
            }
            Model::Heston(p) => {
                let v_pos = aux[0].max(0.0);
                let root = v_pos.sqrt();
                let s = x[0];
                let dw_v = p.rho * dw[0] + (1.0 - p.rho * p.rho).max(0.0).sqrt() * dw[1];
                x[0] = s + p.r * s * dt + root * s * dw[0];
                aux[0] += p.kappa * (p.mu_bar - v_pos) * dt + p.eta * root * dw_v;
            }
        }
    }

    /// Diffusion matrix `σ(t, x; β)` as a row-major `d × d_W` block.
    pub fn diffusion(&self, x: &[f64], aux: &[f64], beta: &[f64], out: &mut [f64]) {
        match self {
            Model::BlackScholes(p) => {
                let d = p.dim();
                for i in 0..d {
                    let scale = p.vol(beta, i) * x[i];
                    for j in 0..d {
                        out[i * d + j] = scale * p.corr_chol[[i, j]];
                    }
                }
            }
            Model::Heston(_) => {
                out[0] = aux[0].max(0.0).sqrt() * x[0];
                out[1] = 0.0;
            }
        }
    }

    /// Fills `dw` with independent `N(0, dt)` draws.
    #[inline]
    pub fn draw_increments<R: Rng + ?Sized>(rng: &mut R, dt: f64, dw: &mut [f64]) {
        let sd = dt.sqrt();
        for w in dw.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *w = sd * z;
        }
    }
}

/// Batch of simulated fine-grid paths.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBatch {
    pub grid: TimeGrid,
    /// `[batch, N_f + 1, d]`
    pub paths: Array3<f64>,
    /// Raw Euler state of non-traded factors, `[batch, N_f + 1, aux]`.
    pub aux: Array3<f64>,
    /// `[batch, N_f, d_W]`
    pub brownian: Array3<f64>,
    /// `[batch, p]`
    pub beta: Array2<f64>,
}

impl PathBatch {
    pub fn batch_size(&self) -> usize {
        self.paths.len_of(Axis(0))
    }

    pub fn dim(&self) -> usize {
        self.paths.len_of(Axis(2))
    }

    pub fn path(&self, i: usize) -> ArrayView2<'_, f64> {
        self.paths.index_axis(Axis(0), i)
    }

    /// Variance actually used by the scheme, `max(V, 0)`.
    pub fn effective_variance(&self) -> Array3<f64> {
        self.aux.mapv(|v| v.max(0.0))
    }

    /// Writes `path_id,time_index,asset_index,value` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "path_id,time_index,asset_index,value")?;
        for ((i, k, a), v) in self.paths.indexed_iter() {
            writeln!(out, "{i},{k},{a},{v:?}")?;
        }
        Ok(())
    }
}

struct SimulatedPath {
    path: Vec<f64>,
    aux: Vec<f64>,
    dw: Vec<f64>,
    beta: Vec<f64>,
}

fn simulate_one(model: &Model, grid: &TimeGrid, rng: &mut rng::PathRng) -> SimulatedPath {
    let (d, a, m) = (model.dim(), model.aux_dim(), model.noise_dim());
    let n = grid.n_fine();
    let start = model.sample_start(rng);
    let mut path = Vec::with_capacity((n + 1) * d);
    let mut aux = Vec::with_capacity((n + 1) * a);
    let mut dws = vec![0.0; n * m];
    let mut x = start.x0.clone();
    let mut v = start.aux0.clone();
    path.extend_from_slice(&x);
    aux.extend_from_slice(&v);
    for k in 0..n {
        let dt = grid.fine_dt(k);
        let dw = &mut dws[k * m..(k + 1) * m];
        Model::draw_increments(rng, dt, dw);
        model.step(&mut x, &mut v, &start.beta, dt, dw);
        path.extend_from_slice(&x);
        aux.extend_from_slice(&v);
    }
    SimulatedPath { path, aux, dw: dws, beta: start.beta }
}

/// Simulates `batch` paths; path `i` draws from substream `(seed, stream, i)`.
pub fn simulate(model: &Model, grid: &TimeGrid, batch: usize, seed: u64, stream: u64) -> Result<PathBatch> {
    model.validate()?;
    if batch == 0 {
        return param("batch size must be at least 1");
    }
    let sims: Vec<SimulatedPath> = (0..batch)
        .into_par_iter()
        .map(|i| simulate_one(model, grid, &mut rng::substream(seed, stream, i as u64)))
        .collect();
    let (d, a, m, p) = (model.dim(), model.aux_dim(), model.noise_dim(), model.param_dim());
    let n = grid.n_fine();
    let mut paths = Array3::zeros((batch, n + 1, d));
    let mut aux = Array3::zeros((batch, n + 1, a));
    let mut brownian = Array3::zeros((batch, n, m));
    let mut beta = Array2::zeros((batch, p));
    for (i, s) in sims.into_iter().enumerate() {
        paths.index_axis_mut(Axis(0), i).as_slice_mut().unwrap().copy_from_slice(&s.path);
        aux.index_axis_mut(Axis(0), i).as_slice_mut().unwrap().copy_from_slice(&s.aux);
        brownian.index_axis_mut(Axis(0), i).as_slice_mut().unwrap().copy_from_slice(&s.dw);
        beta.row_mut(i).as_slice_mut().unwrap().copy_from_slice(&s.beta);
    }
    Ok(PathBatch { grid: grid.clone(), paths, aux, brownian, beta })
}

pub fn euler_simulate_bs(
    params: &BlackScholesParams,
    grid: &TimeGrid,
    batch: usize,
    seed: u64,
) -> Result<PathBatch> {
    simulate(&Model::BlackScholes(params.clone()), grid, batch, seed, rng::stream::SIMULATE)
}

pub fn euler_simulate_heston(params: &HestonParams, grid: &TimeGrid, batch: usize, seed: u64) -> Result<PathBatch> {
    simulate(&Model::Heston(params.clone()), grid, batch, seed, rng::stream::SIMULATE)
}

/// Runs the Euler recursion on prescribed increments `[N_f, d_W]`.
pub fn simulate_with_increments(
    model: &Model,
    grid: &TimeGrid,
    start: &PathStart,
    increments: ArrayView2<f64>,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let n = grid.n_fine();
    if increments.dim() != (n, model.noise_dim()) {
        return Err(PpdeError::Shape(format!(
            "expected increments of shape ({n}, {}), got {:?}",
            model.noise_dim(),
            increments.dim()
        )));
    }
    let (d, a) = (model.dim(), model.aux_dim());
    let mut path = Array2::zeros((n + 1, d));
    let mut aux = Array2::zeros((n + 1, a));
    let mut x = start.x0.clone();
    let mut v = start.aux0.clone();
    path.row_mut(0).assign(&ndarray::aview1(&x));
    aux.row_mut(0).assign(&ndarray::aview1(&v));
    let mut dw = vec![0.0; model.noise_dim()];
    for k in 0..n {
        dw.iter_mut().zip(increments.row(k)).for_each(|(w, z)| *w = *z);
        model.step(&mut x, &mut v, &start.beta, grid.fine_dt(k), &dw);
        path.row_mut(k + 1).assign(&ndarray::aview1(&x));
        aux.row_mut(k + 1).assign(&ndarray::aview1(&v));
    }
    Ok((path, aux))
}

/// Paths read at the coarse times, `[batch, N_c + 1, d]`.
pub fn restrict_to_coarse(pb: &PathBatch) -> Array3<f64> {
    pb.paths.select(Axis(1), pb.grid.coarse_indices())
}

/// Brownian increments summed over each coarse interval, `[batch, N_c, d_W]`.
pub fn coarse_brownian_increments(pb: &PathBatch) -> Array3<f64> {
    let idx = pb.grid.coarse_indices();
    let (b, _, m) = pb.brownian.dim();
    let mut out = Array3::zeros((b, idx.len() - 1, m));
    for (k, w) in idx.windows(2).enumerate() {
        for f in w[0]..w[1] {
            let fine = pb.brownian.index_axis(Axis(1), f);
            let mut slot = out.index_axis_mut(Axis(1), k);
            slot += &fine;
        }
    }
    out
}
