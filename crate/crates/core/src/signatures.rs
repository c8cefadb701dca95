//! Truncated signatures of piecewise-linear streams.
//!
//! Coefficients are stored flat, level-major, and within a level in
//! lexicographic order of the multi-index `(i_1, ..., i_k)` with the last
//! index varying fastest. This is the layout persisted in checkpoints and
//! CSV dumps.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::error::{PpdeError, Result};
use crate::market_models::TimeGrid;

/// Flattened size `Σ_{k=0}^{n} d^k`.
pub fn sig_dim(d: usize, n: usize) -> usize {
    let mut total = 0;
    let mut level = 1;
    for _ in 0..=n {
        total += level;
        level *= d;
    }
    total
}

fn level_offset(d: usize, k: usize) -> usize {
    if k == 0 {
        0
    } else {
        sig_dim(d, k - 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedSignature {
    dim: usize,
    depth: usize,
    coeffs: Vec<f64>,
}

impl TruncatedSignature {
    /// The unit `(1, 0, 0, ...)` of the truncated tensor algebra.
    pub fn trivial(dim: usize, depth: usize) -> Self {
        let mut coeffs = vec![0.0; sig_dim(dim, depth)];
        coeffs[0] = 1.0;
        Self { dim, depth, coeffs }
    }

    pub fn from_flat(dim: usize, depth: usize, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != sig_dim(dim, depth) {
            return Err(PpdeError::Shape(format!(
                "signature of dim {dim} depth {depth} has {} coefficients, got {}",
                sig_dim(dim, depth),
                coeffs.len()
            )));
        }
        Ok(Self { dim, depth, coeffs })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn level(&self, k: usize) -> &[f64] {
        let start = level_offset(self.dim, k);
        &self.coeffs[start..start + self.dim.pow(k as u32)]
    }

    /// Coefficient of the word `(i_1, ..., i_k)` (zero-based letters).
    pub fn coeff(&self, word: &[usize]) -> f64 {
        let idx = word.iter().fold(0, |acc, &i| acc * self.dim + i);
        self.level(word.len())[idx]
    }

    /// Euclidean norm of level `k`.
    pub fn level_norm(&self, k: usize) -> f64 {
        self.level(k).iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Multiplies in place by `exp(z)` where `z` is a single increment.
    ///
    /// Horner form: level `k` becomes `Σ_j a_{k-j} ⊗ z^{⊗j} / j!`, evaluated
    /// from the top level down so lower levels are read before they change.
    pub fn extend_by_increment(&mut self, z: &[f64]) {
        let d = self.dim;
        debug_assert_eq!(z.len(), d);
        let mut scratch = Vec::new();
        let mut next = Vec::new();
        for k in (1..=self.depth).rev() {
            // B_0 = a_0, B_i = a_i + B_{i-1} ⊗ z / (k - i + 1), level k gets B_k.
            scratch.clear();
            scratch.push(self.coeffs[0]);
            for i in 1..=k {
                let c = 1.0 / (k - i + 1) as f64;
                let off = level_offset(d, i);
                let len = d.pow(i as u32);
                next.clear();
                next.extend_from_slice(&self.coeffs[off..off + len]);
                for (p, &b) in scratch.iter().enumerate() {
                    let bc = b * c;
                    let row = &mut next[p * d..(p + 1) * d];
                    for (slot, &zj) in row.iter_mut().zip(z) {
                        *slot += bc * zj;
                    }
                }
                std::mem::swap(&mut scratch, &mut next);
            }
            let off = level_offset(d, k);
            self.coeffs[off..off + scratch.len()].copy_from_slice(&scratch);
        }
    }
}

/// Signature of a straight segment with the given increment.
pub fn tensor_exp(increment: &[f64], depth: usize) -> TruncatedSignature {
    let d = increment.len();
    let mut sig = TruncatedSignature::trivial(d, depth);
    for k in 1..=depth {
        let prev_off = level_offset(d, k - 1);
        let prev_len = d.pow(k as u32 - 1);
        let off = level_offset(d, k);
        let inv = 1.0 / k as f64;
        for p in 0..prev_len {
            let a = sig.coeffs[prev_off + p] * inv;
            for (j, &z) in increment.iter().enumerate() {
                sig.coeffs[off + p * d + j] = a * z;
            }
        }
    }
    sig
}

/// Chen product `a ⊗ b`, the signature of the concatenated path.
pub fn chen_concatenate(a: &TruncatedSignature, b: &TruncatedSignature) -> Result<TruncatedSignature> {
    if a.dim != b.dim || a.depth != b.depth {
        return Err(PpdeError::Shape(format!(
            "cannot concatenate signatures of (dim {}, depth {}) and (dim {}, depth {})",
            a.dim, a.depth, b.dim, b.depth
        )));
    }
    let d = a.dim;
    let mut out = TruncatedSignature::trivial(d, a.depth);
    out.coeffs[0] = a.coeffs[0] * b.coeffs[0];
    for k in 1..=a.depth {
        let off = level_offset(d, k);
        for j in 0..=k {
            let la = a.level(j);
            let lb = b.level(k - j);
            for (p, &x) in la.iter().enumerate() {
                if x == 0.0 {
                    continue;
                }
                let dst = &mut out.coeffs[off + p * lb.len()..off + (p + 1) * lb.len()];
                for (slot, &y) in dst.iter_mut().zip(lb) {
                    *slot += x * y;
                }
            }
        }
    }
    Ok(out)
}

/// Signature of the piecewise-linear interpolation of `points` (`[m, d]`).
pub fn signature_of_segment(points: ArrayView2<f64>, depth: usize) -> Result<TruncatedSignature> {
    let (m, d) = points.dim();
    if m == 0 {
        return Err(PpdeError::Input("signature of an empty point list".into()));
    }
    let mut sig = TruncatedSignature::trivial(d, depth);
    let mut inc = vec![0.0; d];
    for w in 1..m {
        for j in 0..d {
            inc[j] = points[[w, j]] - points[[w - 1, j]];
        }
        sig.extend_by_increment(&inc);
    }
    Ok(sig)
}

/// Interleaves a stream into lead and lag coordinates, `[2m-1, 2d]`.
///
/// Point `2i` is `(x_i, x_i)` and point `2i+1` is `(x_{i+1}, x_i)`; the lead
/// block occupies the first `d` columns.
pub fn lead_lag(stream: ArrayView2<f64>) -> Result<Array2<f64>> {
    let (m, d) = stream.dim();
    if m == 0 {
        return Err(PpdeError::Input("lead-lag of an empty stream".into()));
    }
    let mut out = Array2::zeros((2 * m - 1, 2 * d));
    for i in 0..m {
        for j in 0..d {
            out[[2 * i, j]] = stream[[i, j]];
            out[[2 * i, d + j]] = stream[[i, j]];
            if i + 1 < m {
                out[[2 * i + 1, j]] = stream[[i + 1, j]];
                out[[2 * i + 1, d + j]] = stream[[i, j]];
            }
        }
    }
    Ok(out)
}

/// Preprocessing applied to each window before taking its signature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    None,
    LeadLag,
    TimeAugment,
    TimeAugmentLeadLag,
}

impl Transform {
    /// Channel count after the transform of a `d`-dimensional stream.
    pub fn output_dim(self, d: usize) -> usize {
        match self {
            Transform::None => d,
            Transform::LeadLag => 2 * d,
            Transform::TimeAugment => d + 1,
            Transform::TimeAugmentLeadLag => 2 * (d + 1),
        }
    }

    pub fn has_time(self) -> bool {
        matches!(self, Transform::TimeAugment | Transform::TimeAugmentLeadLag)
    }

    /// Applies the transform to `points` sampled at `times`.
    pub fn apply(self, points: ArrayView2<f64>, times: &[f64]) -> Result<Array2<f64>> {
        match self {
            Transform::None => Ok(points.to_owned()),
            Transform::LeadLag => lead_lag(points),
            Transform::TimeAugment => time_augment(points, times),
            Transform::TimeAugmentLeadLag => lead_lag(time_augment(points, times)?.view()),
        }
    }
}

fn time_augment(points: ArrayView2<f64>, times: &[f64]) -> Result<Array2<f64>> {
    let (m, d) = points.dim();
    if times.len() != m {
        return Err(PpdeError::Shape(format!("{} times for {m} points", times.len())));
    }
    let mut out = Array2::zeros((m, d + 1));
    for i in 0..m {
        out[[i, 0]] = times[i];
        for j in 0..d {
            out[[i, j + 1]] = points[[i, j]];
        }
    }
    Ok(out)
}

/// Per-window signatures of one path over the coarse partition.
#[derive(Debug, Clone, PartialEq)]
pub struct SignatureStream {
    pub depth: usize,
    pub transform: Transform,
    /// Channel count of the transformed stream.
    pub channels: usize,
    /// `N_c` entries; entry `k` covers `[t_k, t_{k+1}]`.
    pub entries: Vec<TruncatedSignature>,
}

impl SignatureStream {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry_len(&self) -> usize {
        sig_dim(self.channels, self.depth)
    }

    /// Chen product of every window, i.e. the signature over `[0, T]`.
    pub fn chained(&self) -> Result<TruncatedSignature> {
        let mut acc = TruncatedSignature::trivial(self.channels, self.depth);
        for e in &self.entries {
            acc = chen_concatenate(&acc, e)?;
        }
        Ok(acc)
    }

    /// Writes `path_id,window_index,coeff_index,value` rows (no header).
    pub fn write_csv_rows<W: Write>(&self, path_id: usize, mut out: W) -> Result<()> {
        for (k, e) in self.entries.iter().enumerate() {
            for (c, v) in e.as_slice().iter().enumerate() {
                writeln!(out, "{path_id},{k},{c},{v:?}")?;
            }
        }
        Ok(())
    }
}

/// Signature of one coarse window `[t_k, t_{k+1}]`, both endpoints included.
pub fn window_signature(
    fine_path: ArrayView2<f64>,
    grid: &TimeGrid,
    k: usize,
    depth: usize,
    transform: Transform,
) -> Result<TruncatedSignature> {
    let lo = grid.fine_index_of_coarse(k);
    let hi = grid.fine_index_of_coarse(k + 1);
    let window = fine_path.slice(ndarray::s![lo..=hi, ..]);
    let times = &grid.fine_times()[lo..=hi];
    let transformed = transform.apply(window, times)?;
    signature_of_segment(transformed.view(), depth)
}

pub fn stream_of_signatures(
    fine_path: ArrayView2<f64>,
    grid: &TimeGrid,
    depth: usize,
    transform: Transform,
) -> Result<SignatureStream> {
    let (rows, d) = fine_path.dim();
    if rows != grid.n_fine() + 1 {
        return Err(PpdeError::Shape(format!(
            "path has {rows} samples, fine grid has {}",
            grid.n_fine() + 1
        )));
    }
    let entries = (0..grid.n_coarse())
        .map(|k| window_signature(fine_path, grid, k, depth, transform))
        .collect::<Result<Vec<_>>>()?;
    Ok(SignatureStream { depth, transform, channels: transform.output_dim(d), entries })
}

/// Signature of the segment from the origin to `x0`, after the transform.
///
/// Prepending this entry lets translation-invariant window signatures carry
/// the absolute starting level of the path.
pub fn basepoint_signature(x0: &[f64], depth: usize, transform: Transform) -> Result<TruncatedSignature> {
    let d = x0.len();
    let mut pts = Array2::zeros((2, d));
    pts.row_mut(1).assign(&ndarray::aview1(x0));
    let transformed = transform.apply(pts.view(), &[0.0, 0.0])?;
    signature_of_segment(transformed.view(), depth)
}

/// Path frozen after fine index `stop`: `x_{s ∧ t_stop}`.
pub fn stopped_path(fine_path: ArrayView2<f64>, stop: usize) -> Array2<f64> {
    let mut out = fine_path.to_owned();
    let frozen = fine_path.row(stop).to_owned();
    for mut row in out.rows_mut().into_iter().skip(stop + 1) {
        row.assign(&frozen);
    }
    out
}

/// Stream of signatures of the path stopped at coarse time `t_m`.
///
/// Entries before `m` are reused from `stream`; later windows see a constant
/// path and are recomputed (only time augmentation makes them non-trivial).
pub fn stopped_stream(
    stream: &SignatureStream,
    fine_path: ArrayView2<f64>,
    grid: &TimeGrid,
    m: usize,
) -> Result<SignatureStream> {
    if m > grid.n_coarse() {
        return Err(PpdeError::Input(format!(
            "stopping index {m} beyond {} coarse steps",
            grid.n_coarse()
        )));
    }
    if stream.len() != grid.n_coarse() {
        return Err(PpdeError::Shape("stream does not match the grid".into()));
    }
    let mut entries = stream.entries[..m].to_vec();
    if stream.transform.has_time() {
        let frozen = stopped_path(fine_path, grid.fine_index_of_coarse(m));
        for k in m..grid.n_coarse() {
            entries.push(window_signature(frozen.view(), grid, k, stream.depth, stream.transform)?);
        }
    } else {
        entries.resize(grid.n_coarse(), TruncatedSignature::trivial(stream.channels, stream.depth));
    }
    Ok(SignatureStream { entries, ..stream.clone() })
}

/// Coarse path frozen at index `m`: rows after `m` repeat row `m`.
pub fn stopped_coarse_path(coarse_path: ArrayView2<f64>, m: usize) -> Result<Array2<f64>> {
    if m >= coarse_path.nrows() {
        return Err(PpdeError::Input(format!(
            "stopping index {m} beyond {} coarse points",
            coarse_path.nrows()
        )));
    }
    Ok(stopped_path(coarse_path, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use proptest::prelude::*;
    use rand::Rng;

    fn random_path(m: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut r = crate::rng::substream(seed, 0, 0);
        let mut p = Array2::zeros((m, d));
        for i in 1..m {
            for j in 0..d {
                p[[i, j]] = p[[i - 1, j]] + r.random_range(-0.3..0.3);
            }
        }
        p
    }

    fn max_rel_diff(a: &[f64], b: &[f64]) -> f64 {
        let scale = a.iter().chain(b).fold(1e-300f64, |m, x| m.max(x.abs()));
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
    }

    #[test]
    fn sig_dim_examples() {
        assert_eq!(sig_dim(2, 4), 31);
        assert_eq!(sig_dim(4, 4), 341);
        assert_eq!(sig_dim(1, 0), 1);
    }

    #[test]
    fn tensor_exp_examples() {
        let s = tensor_exp(&[2.0], 3);
        assert_eq!(s.as_slice(), &[1.0, 2.0, 2.0, 4.0 / 3.0]);
        let s = tensor_exp(&[1.0, 0.0], 2);
        assert_eq!(s.level(1), &[1.0, 0.0]);
        assert_eq!(s.level(2), &[0.5, 0.0, 0.0, 0.0]);
        let s = tensor_exp(&[0.0, 0.0, 0.0], 3);
        assert_eq!(s, TruncatedSignature::trivial(3, 3));
    }

    #[test]
    fn extend_matches_chen_with_tensor_exp() {
        let mut a = tensor_exp(&[0.3, -0.2, 0.5], 4);
        a.extend_by_increment(&[0.1, 0.7, -0.4]);
        let b = chen_concatenate(&tensor_exp(&[0.3, -0.2, 0.5], 4), &tensor_exp(&[0.1, 0.7, -0.4], 4)).unwrap();
        assert!(max_rel_diff(a.as_slice(), b.as_slice()) < 1e-14);
    }

    #[test]
    fn chen_neutral_element_and_collinear_segments() {
        let a = signature_of_segment(random_path(6, 2, 1).view(), 3).unwrap();
        let unit = TruncatedSignature::trivial(2, 3);
        assert_eq!(chen_concatenate(&a, &unit).unwrap(), a);
        let u = [0.4, -0.1];
        let v = [1.2, -0.3];
        let joined = chen_concatenate(&tensor_exp(&u, 4), &tensor_exp(&v, 4)).unwrap();
        let direct = tensor_exp(&[1.6, -0.4], 4);
        assert!(max_rel_diff(joined.as_slice(), direct.as_slice()) < 1e-14);
    }

    #[test]
    fn chen_rejects_mismatched_shapes() {
        let a = TruncatedSignature::trivial(2, 3);
        let b = TruncatedSignature::trivial(3, 3);
        let c = TruncatedSignature::trivial(2, 2);
        assert!(matches!(chen_concatenate(&a, &b), Err(PpdeError::Shape(_))));
        assert!(matches!(chen_concatenate(&a, &c), Err(PpdeError::Shape(_))));
    }

    #[test]
    fn chen_matches_recomputation_on_concatenated_points() {
        let p = random_path(9, 2, 3);
        let first = signature_of_segment(p.slice(ndarray::s![..5, ..]), 3).unwrap();
        let second = signature_of_segment(p.slice(ndarray::s![4.., ..]), 3).unwrap();
        let whole = signature_of_segment(p.view(), 3).unwrap();
        let joined = chen_concatenate(&first, &second).unwrap();
        assert!(max_rel_diff(joined.as_slice(), whole.as_slice()) < 1e-12);
    }

    #[test]
    fn straight_line_signature() {
        let pts = Array2::from_shape_fn((7, 2), |(i, _)| i as f64 / 6.0);
        let s = signature_of_segment(pts.view(), 2).unwrap();
        for &x in s.level(1) {
            assert!((x - 1.0).abs() < 1e-14);
        }
        for &x in s.level(2) {
            assert!((x - 0.5).abs() < 1e-14);
        }
        let empty = Array2::<f64>::zeros((0, 2));
        assert!(signature_of_segment(empty.view(), 2).is_err());
        let single = array![[3.0, 4.0]];
        assert_eq!(signature_of_segment(single.view(), 2).unwrap(), TruncatedSignature::trivial(2, 2));
    }

    #[test]
    fn parabola_iterated_integrals() {
        // x(t) = (t, t²): S^{12} = ∫ s·2s ds = 2/3, S^{21} = ∫ s² ds = 1/3.
        let pts = Array2::from_shape_fn((512, 2), |(i, j)| {
            let t = i as f64 / 511.0;
            if j == 0 { t } else { t * t }
        });
        let s = signature_of_segment(pts.view(), 2).unwrap();
        assert!((s.coeff(&[0, 1]) - 2.0 / 3.0).abs() < 1e-2);
        assert!((s.coeff(&[1, 0]) - 1.0 / 3.0).abs() < 1e-2);
    }

    #[test]
    fn lead_lag_examples() {
        assert_eq!(lead_lag(array![[2.5]].view()).unwrap(), array![[2.5, 2.5]]);
        assert_eq!(
            lead_lag(array![[1.0], [4.0]].view()).unwrap(),
            array![[1.0, 1.0], [4.0, 1.0], [4.0, 4.0]]
        );
        assert!(lead_lag(Array2::<f64>::zeros((0, 1)).view()).is_err());
    }

    #[test]
    fn lead_lag_area_recovers_quadratic_variation() {
        let ll = lead_lag(array![[0.0], [1.0], [0.0]].view()).unwrap();
        let s = signature_of_segment(ll.view(), 2).unwrap();
        // Brute force: Σ over linear pieces of ∫ X^a dX^b for the interleaved stream.
        let mut lead_lag_term = 0.0;
        let mut lag_lead_term = 0.0;
        let start = ll.row(0).to_owned();
        for w in 1..ll.nrows() {
            let (p, q) = (ll.row(w - 1), ll.row(w));
            let mid = |c: usize| 0.5 * (p[c] + q[c]) - start[c];
            lead_lag_term += mid(0) * (q[1] - p[1]);
            lag_lead_term += mid(1) * (q[0] - p[0]);
        }
        assert!((s.coeff(&[0, 1]) - lead_lag_term).abs() < 1e-14);
        assert!((s.coeff(&[1, 0]) - lag_lead_term).abs() < 1e-14);
        assert!((s.coeff(&[0, 1]) - s.coeff(&[1, 0]) - 2.0).abs() < 1e-14);
    }

    #[test]
    fn stream_examples() {
        let grid = TimeGrid::uniform(0.5, 20, 5).unwrap();
        let flat = Array2::from_elem((21, 2), 1.3);
        let s = stream_of_signatures(flat.view(), &grid, 3, Transform::None).unwrap();
        assert_eq!(s.len(), 5);
        assert!(s.entries.iter().all(|e| *e == TruncatedSignature::trivial(2, 3)));

        let grid = TimeGrid::uniform(0.5, 5, 5).unwrap();
        let p = random_path(6, 2, 9);
        let s = stream_of_signatures(p.view(), &grid, 3, Transform::None).unwrap();
        for k in 0..5 {
            let inc = [p[[k + 1, 0]] - p[[k, 0]], p[[k + 1, 1]] - p[[k, 1]]];
            assert!(max_rel_diff(s.entries[k].as_slice(), tensor_exp(&inc, 3).as_slice()) < 1e-14);
        }
        assert!(stream_of_signatures(p.slice(ndarray::s![..4, ..]), &grid, 3, Transform::None).is_err());
    }

    #[test]
    fn stream_chains_to_whole_path_signature() {
        let grid = TimeGrid::uniform(0.5, 100, 10).unwrap();
        let p = random_path(101, 2, 4);
        for transform in [Transform::None, Transform::TimeAugment] {
            let s = stream_of_signatures(p.view(), &grid, 4, transform).unwrap();
            let whole = signature_of_segment(transform.apply(p.view(), grid.fine_times()).unwrap().view(), 4).unwrap();
            assert!(max_rel_diff(s.chained().unwrap().as_slice(), whole.as_slice()) < 1e-10);
        }
    }

    #[test]
    fn lead_lag_stream_has_expected_width() {
        let grid = TimeGrid::uniform(0.5, 100, 10).unwrap();
        let p = random_path(101, 2, 5);
        let s = stream_of_signatures(p.view(), &grid, 4, Transform::LeadLag).unwrap();
        assert_eq!(s.entry_len(), 341);
        assert_eq!(s.len(), 10);
    }

    #[test]
    fn stream_is_non_anticipative() {
        let grid = TimeGrid::uniform(0.5, 40, 4).unwrap();
        let p = random_path(41, 2, 6);
        let mut q = p.clone();
        for i in 21..41 {
            q[[i, 0]] += 0.5;
        }
        let a = stream_of_signatures(p.view(), &grid, 3, Transform::LeadLag).unwrap();
        let b = stream_of_signatures(q.view(), &grid, 3, Transform::LeadLag).unwrap();
        assert_eq!(a.entries[..2], b.entries[..2]);
        assert_ne!(a.entries[2], b.entries[2]);
    }

    #[test]
    fn stopped_stream_examples() {
        let grid = TimeGrid::uniform(0.5, 40, 4).unwrap();
        let p = random_path(41, 2, 7);
        let s = stream_of_signatures(p.view(), &grid, 3, Transform::LeadLag).unwrap();
        assert_eq!(stopped_stream(&s, p.view(), &grid, 4).unwrap(), s);
        let zero = stopped_stream(&s, p.view(), &grid, 0).unwrap();
        assert!(zero.entries.iter().all(|e| *e == TruncatedSignature::trivial(4, 3)));
        let half = stopped_stream(&s, p.view(), &grid, 2).unwrap();
        assert_eq!(half.entries[..2], s.entries[..2]);
        let recomputed = stream_of_signatures(stopped_path(p.view(), 20).view(), &grid, 3, Transform::LeadLag).unwrap();
        assert_eq!(half, recomputed);
        assert!(stopped_stream(&s, p.view(), &grid, 5).is_err());
        let st = stream_of_signatures(p.view(), &grid, 3, Transform::TimeAugment).unwrap();
        let half = stopped_stream(&st, p.view(), &grid, 2).unwrap();
        let recomputed = stream_of_signatures(stopped_path(p.view(), 20).view(), &grid, 3, Transform::TimeAugment).unwrap();
        assert_eq!(half, recomputed);
        assert_ne!(half.entries[3], TruncatedSignature::trivial(3, 3));

        let coarse = array![[1.0], [2.0], [3.0]];
        assert_eq!(stopped_coarse_path(coarse.view(), 1).unwrap(), array![[1.0], [2.0], [2.0]]);
        assert_eq!(stopped_coarse_path(coarse.view(), 0).unwrap(), array![[1.0], [1.0], [1.0]]);
        assert!(stopped_coarse_path(coarse.view(), 3).is_err());
    }

    #[test]
    fn basepoint_carries_the_initial_level() {
        let b = basepoint_signature(&[1.5, 0.5], 2, Transform::None).unwrap();
        assert_eq!(b, tensor_exp(&[1.5, 0.5], 2));
        let ll = basepoint_signature(&[1.5], 2, Transform::LeadLag).unwrap();
        assert_eq!(ll.level(1), &[1.5, 1.5]);
    }

    fn path_strategy(max_points: usize, d: usize) -> impl Strategy<Value = Array2<f64>> {
        (1..=max_points).prop_flat_map(move |m| {
            proptest::collection::vec(-1.0f64..1.0, m * d)
                .prop_map(move |v| Array2::from_shape_vec((m, d), v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn chen_is_associative(a in path_strategy(5, 2), b in path_strategy(5, 2), c in path_strategy(5, 2)) {
            let (sa, sb, sc) = (
                signature_of_segment(a.view(), 3).unwrap(),
                signature_of_segment(b.view(), 3).unwrap(),
                signature_of_segment(c.view(), 3).unwrap(),
            );
            let left = chen_concatenate(&chen_concatenate(&sa, &sb).unwrap(), &sc).unwrap();
            let right = chen_concatenate(&sa, &chen_concatenate(&sb, &sc).unwrap()).unwrap();
            for (x, y) in left.as_slice().iter().zip(right.as_slice()) {
                prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
            }
        }

        #[test]
        fn refinement_does_not_change_signature(p in path_strategy(6, 2), split in 0.05f64..0.95) {
            let m = p.nrows();
            let mut rows = Vec::new();
            for i in 0..m {
                if i > 0 {
                    let mid: Vec<f64> = (0..2).map(|j| p[[i - 1, j]] + split * (p[[i, j]] - p[[i - 1, j]])).collect();
                    rows.extend(mid);
                }
                rows.extend(p.row(i).iter().copied());
            }
            let refined = Array2::from_shape_vec((rows.len() / 2, 2), rows).unwrap();
            let a = signature_of_segment(p.view(), 4).unwrap();
            let b = signature_of_segment(refined.view(), 4).unwrap();
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
            }
        }

        #[test]
        fn levels_decay_factorially(p in path_strategy(8, 2)) {
            let s = signature_of_segment(p.view(), 4).unwrap();
            prop_assert_eq!(s.level(0), &[1.0][..]);
            prop_assert_eq!(s.as_slice().len(), sig_dim(2, 4));
            // Total variation in the Euclidean norm of the increments.
            let length: f64 = (1..p.nrows())
                .map(|i| ((p[[i, 0]] - p[[i - 1, 0]]).powi(2) + (p[[i, 1]] - p[[i - 1, 1]]).powi(2)).sqrt())
                .sum();
            let mut fact = 1.0;
            for k in 1..=4 {
                fact *= k as f64;
                prop_assert!(s.level_norm(k) <= length.powi(k as i32) / fact * (1.0 + 1e-12) + 1e-15);
            }
        }

        #[test]
        fn shuffle_identity_at_level_two(p in path_strategy(10, 2)) {
            let s = signature_of_segment(p.view(), 2).unwrap();
            let m = p.nrows() - 1;
            let prod = (p[[m, 0]] - p[[0, 0]]) * (p[[m, 1]] - p[[0, 1]]);
            prop_assert!((s.coeff(&[0, 1]) + s.coeff(&[1, 0]) - prod).abs() < 1e-10);
        }

        #[test]
        fn lead_lag_shape_and_endpoints(p in path_strategy(10, 3)) {
            let ll = lead_lag(p.view()).unwrap();
            let m = p.nrows();
            prop_assert_eq!(ll.dim(), (2 * m - 1, 6));
            for j in 0..3 {
                prop_assert_eq!(ll[[0, j]], p[[0, j]]);
                prop_assert_eq!(ll[[0, 3 + j]], p[[0, j]]);
                prop_assert_eq!(ll[[2 * m - 2, j]], p[[m - 1, j]]);
                prop_assert_eq!(ll[[2 * m - 2, 3 + j]], p[[m - 1, j]]);
            }
        }
    }
}
