//! Network inputs and training batches.
//!
//! Inputs are step-major: rows `k·B .. (k+1)·B` hold coarse step `k` for all
//! `B` paths. A step row is `[t_k, features, β]`, where the feature block is
//! one entry for the LSTM and every entry of the stopped stream for the FFN.

use ndarray::{s, Array1, Array2, Array3, Array4, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PpdeError, Result};
use crate::market_models::{self, Model, PathBatch, TimeGrid};
use crate::payoffs::{discount, Payoff};
use crate::signatures::{self, sig_dim, Transform, TruncatedSignature};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncodingKind {
    CoarsePath,
    SigStream,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Encoding {
    pub kind: EncodingKind,
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default = "default_transform")]
    pub transform: Transform,
}

fn default_depth() -> usize {
    4
}

fn default_transform() -> Transform {
    Transform::LeadLag
}

impl Encoding {
    pub fn coarse_path() -> Self {
        Self { kind: EncodingKind::CoarsePath, depth: 0, transform: Transform::None }
    }

    pub fn sig_stream(depth: usize, transform: Transform) -> Self {
        Self { kind: EncodingKind::SigStream, depth, transform }
    }

    /// Width of one stream entry for a `d`-asset path.
    pub fn entry_width(&self, d: usize) -> usize {
        match self.kind {
            EncodingKind::CoarsePath => d,
            EncodingKind::SigStream => sig_dim(self.transform.output_dim(d), self.depth),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetType {
    Ffn,
    Lstm,
}

/// Everything that fixes the meaning of a network input column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputSpec {
    pub net_type: NetType,
    pub encoding: Encoding,
    pub dim: usize,
    pub param_dim: usize,
    pub n_coarse: usize,
}

impl InputSpec {
    pub fn new(net_type: NetType, encoding: Encoding, model: &Model, grid: &TimeGrid) -> Self {
        Self { net_type, encoding, dim: model.dim(), param_dim: model.param_dim(), n_coarse: grid.n_coarse() }
    }

    pub fn steps(&self) -> usize {
        self.n_coarse + 1
    }

    pub fn entry_width(&self) -> usize {
        self.encoding.entry_width(self.dim)
    }

    pub fn input_width(&self) -> usize {
        let entries = match self.net_type {
            NetType::Lstm => 1,
            NetType::Ffn => self.steps(),
        };
        1 + entries * self.entry_width() + self.param_dim
    }

    pub fn descriptor(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("input spec serializes")
    }

    pub fn from_descriptor(v: &serde_json::Value) -> Result<Self> {
        serde_json::from_value(v.clone()).map_err(|e| PpdeError::Checkpoint(format!("input descriptor: {e}")))
    }

    /// Names the fields that differ from `other`, empty when they agree.
    pub fn mismatches(&self, other: &InputSpec) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.net_type != other.net_type {
            out.push("net_type");
        }
        if self.encoding.kind != other.encoding.kind {
            out.push("encoding.kind");
        }
        if self.encoding.kind == EncodingKind::SigStream && other.encoding.kind == EncodingKind::SigStream {
            if self.encoding.depth != other.encoding.depth {
                out.push("encoding.depth");
            }
            if self.encoding.transform != other.encoding.transform {
                out.push("encoding.transform");
            }
        }
        if self.dim != other.dim {
            out.push("dim");
        }
        if self.param_dim != other.param_dim {
            out.push("param_dim");
        }
        if self.n_coarse != other.n_coarse {
            out.push("n_coarse");
        }
        out
    }
}

/// Stream entries of one path: entry 0 carries the starting level, entry
/// `k ≥ 1` describes the window `[t_{k-1}, t_k]`.
pub fn path_entries(path: ArrayView2<f64>, grid: &TimeGrid, encoding: &Encoding) -> Result<Vec<Vec<f64>>> {
    match encoding.kind {
        EncodingKind::CoarsePath => {
            Ok(grid.coarse_indices().iter().map(|&f| path.row(f).to_vec()).collect())
        }
        EncodingKind::SigStream => {
            let base = signatures::basepoint_signature(&path.row(0).to_vec(), encoding.depth, encoding.transform)?;
            let stream = signatures::stream_of_signatures(path, grid, encoding.depth, encoding.transform)?;
            Ok(std::iter::once(base.into_vec()).chain(stream.entries.into_iter().map(TruncatedSignature::into_vec)).collect())
        }
    }
}

/// Entries of the path stopped at coarse step `k`.
fn stopped_entries(entries: &[Vec<f64>], path: ArrayView2<f64>, grid: &TimeGrid, encoding: &Encoding, k: usize) -> Result<Vec<Vec<f64>>> {
    match encoding.kind {
        EncodingKind::CoarsePath => Ok((0..entries.len()).map(|j| entries[j.min(k)].clone()).collect()),
        EncodingKind::SigStream => {
            let d = path.ncols();
            let channels = encoding.transform.output_dim(d);
            let stream = signatures::SignatureStream {
                depth: encoding.depth,
                transform: encoding.transform,
                channels,
                entries: entries[1..]
                    .iter()
                    .map(|e| TruncatedSignature::from_flat(channels, encoding.depth, e.clone()))
                    .collect::<Result<_>>()?,
            };
            let stopped = signatures::stopped_stream(&stream, path, grid, k)?;
            Ok(std::iter::once(entries[0].clone()).chain(stopped.entries.into_iter().map(TruncatedSignature::into_vec)).collect())
        }
    }
}

/// Input rows `[steps, width]` of one path.
pub fn path_inputs(path: ArrayView2<f64>, beta: &[f64], grid: &TimeGrid, spec: &InputSpec) -> Result<Array2<f64>> {
    let entries = path_entries(path, grid, &spec.encoding)?;
    let width = spec.input_width();
    let mut rows = Array2::zeros((spec.steps(), width));
    for k in 0..spec.steps() {
        let mut row = Vec::with_capacity(width);
        row.push(grid.coarse_times()[k]);
        match spec.net_type {
            NetType::Lstm => row.extend_from_slice(&entries[k]),
            NetType::Ffn => {
                for e in stopped_entries(&entries, path, grid, &spec.encoding, k)? {
                    row.extend_from_slice(&e);
                }
            }
        }
        row.extend_from_slice(beta);
        rows.row_mut(k).assign(&ndarray::aview1(&row));
    }
    Ok(rows)
}

/// Step-major inputs `[steps · B, width]` for a batch of paths.
pub fn encode_paths(paths: &PathBatch, spec: &InputSpec) -> Result<Array2<f64>> {
    check_spec(paths, spec)?;
    let b = paths.batch_size();
    let per_path: Vec<Array2<f64>> = (0..b)
        .into_par_iter()
        .map(|i| path_inputs(paths.path(i), paths.beta.row(i).as_slice().unwrap(), &paths.grid, spec))
        .collect::<Result<_>>()?;
    let mut out = Array2::zeros((spec.steps() * b, spec.input_width()));
    for (i, rows) in per_path.iter().enumerate() {
        for k in 0..spec.steps() {
            out.row_mut(k * b + i).assign(&rows.row(k));
        }
    }
    Ok(out)
}

fn check_spec(paths: &PathBatch, spec: &InputSpec) -> Result<()> {
    if paths.dim() != spec.dim || paths.beta.ncols() != spec.param_dim || paths.grid.n_coarse() != spec.n_coarse {
        return Err(PpdeError::Shape(format!(
            "paths (d={}, p={}, N_c={}) do not match the input spec (d={}, p={}, N_c={})",
            paths.dim(),
            paths.beta.ncols(),
            paths.grid.n_coarse(),
            spec.dim,
            spec.param_dim,
            spec.n_coarse
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainBatch {
    /// `[steps · B, width]`, step-major.
    pub inputs: Array2<f64>,
    pub steps: usize,
    pub batch: usize,
    pub times: Vec<f64>,
    pub rate: f64,
    pub maturity: f64,
    /// Undiscounted payoff `g` per path.
    pub payoff: Array1<f64>,
    pub beta: Array2<f64>,
    /// Coarse Brownian increments `[B, N_c, d_W]`.
    pub coarse_dw: Array3<f64>,
    /// `σ(t_m, ·; β)` along each path, `[B, N_c, d, d_W]`.
    pub diffusion: Array4<f64>,
    /// `σ(t_m) ΔW_m` per asset, step-major `[N_c · B, d]`.
    pub sigma_dw: Array2<f64>,
}

impl TrainBatch {
    pub fn discounted_payoff(&self) -> Array1<f64> {
        self.payoff.mapv(|g| discount(g, self.rate, 0.0, self.maturity))
    }

    /// Regression targets `e^{−r(T−t_k)} g`, step-major `[steps · B, 1]`.
    pub fn projection_targets(&self) -> Array2<f64> {
        let b = self.batch;
        Array2::from_shape_fn((self.steps * b, 1), |(row, _)| {
            discount(self.payoff[row % b], self.rate, self.times[row / b], self.maturity)
        })
    }
}

/// Diffusion coefficients at the coarse times, `[B, N_c, d, d_W]`.
pub fn coarse_diffusion(model: &Model, paths: &PathBatch) -> Array4<f64> {
    let (b, d, m) = (paths.batch_size(), paths.dim(), model.noise_dim());
    let n_c = paths.grid.n_coarse();
    let mut out = Array4::zeros((b, n_c, d, m));
    let mut buf = vec![0.0; d * m];
    for i in 0..b {
        let beta = paths.beta.row(i).to_vec();
        for k in 0..n_c {
            let f = paths.grid.fine_index_of_coarse(k);
            let x = paths.paths.slice(s![i, f, ..]).to_vec();
            let a = paths.aux.slice(s![i, f, ..]).to_vec();
            model.diffusion(&x, &a, &beta, &mut buf);
            out.slice_mut(s![i, k, .., ..]).assign(&ArrayView2::from_shape((d, m), &buf).unwrap());
        }
    }
    out
}

/// Assembles every tensor the losses need from simulated paths.
pub fn build_batch(model: &Model, paths: &PathBatch, payoff: &Payoff, spec: &InputSpec) -> Result<TrainBatch> {
    let inputs = encode_paths(paths, spec)?;
    let b = paths.batch_size();
    let payoff_values: Array1<f64> = (0..b).map(|i| payoff.evaluate(paths.path(i))).collect();
    let coarse_dw = market_models::coarse_brownian_increments(paths);
    let diffusion = coarse_diffusion(model, paths);
    let (n_c, d) = (paths.grid.n_coarse(), paths.dim());
    let mut sigma_dw = Array2::zeros((n_c * b, d));
    for i in 0..b {
        for k in 0..n_c {
            let sig = diffusion.slice(s![i, k, .., ..]);
            let dw = coarse_dw.slice(s![i, k, ..]);
            sigma_dw.row_mut(k * b + i).assign(&sig.dot(&dw));
        }
    }
    Ok(TrainBatch {
        inputs,
        steps: spec.steps(),
        batch: b,
        times: paths.grid.coarse_times().to_vec(),
        rate: model.rate(),
        maturity: paths.grid.maturity(),
        payoff: payoff_values,
        beta: paths.beta.clone(),
        coarse_dw,
        diffusion,
        sigma_dw,
    })
}

/// Simulates a fresh batch from substream `(seed, stream, index)`.
#[allow(clippy::too_many_arguments)]
pub fn make_batch(
    model: &Model,
    grid: &TimeGrid,
    batch_size: usize,
    spec: &InputSpec,
    payoff: &Payoff,
    seed: u64,
    stream: u64,
    index: u64,
) -> Result<TrainBatch> {
    let paths = market_models::simulate(model, grid, batch_size, crate::rng::derive_seed(seed, &[index]), stream)?;
    build_batch(model, &paths, payoff, spec)
}

/// Rows of step `k` from a step-major matrix.
pub fn step_rows(x: &Array2<f64>, k: usize, batch: usize) -> ArrayView2<'_, f64> {
    x.slice_axis(Axis(0), (k * batch..(k + 1) * batch).into())
}
