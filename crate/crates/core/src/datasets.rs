//! Toy signal sets and random operators.
//!
//! * cone datasets `{e_i x0}` with exponential amplitudes,
//! * random `k`-dimensional subspace datasets rescaled so that a fixed
//!   number of entries reach the clipping threshold,
//! * Gaussian and Haar-orthogonal measurement operators.
//!
//! Every generator is a pure function of its spec and seed.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward_ops::Signal;
use crate::rng::{self, StreamRng};

#[derive(Debug, Clone, PartialEq)]
pub struct ConeSpec {
    pub base_signal: Signal,
    pub amplitude_mean: f64,
    pub count: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct ConeDataset {
    /// `e_i`, one per row of `signals`.
    pub amplitudes: Vec<f64>,
    pub signals: Array2<f64>,
}

pub fn gen_cone(spec: &ConeSpec) -> Result<ConeDataset> {
    let x0 = spec.base_signal.values();
    if x0.is_empty() || x0.iter().all(|&v| v == 0.0) {
        return Err(Error::InvalidInput("cone base signal is zero".into()));
    }
    if !(spec.amplitude_mean > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "amplitude mean must be positive, got {}",
            spec.amplitude_mean
        )));
    }
    if spec.count == 0 {
        return Err(Error::InvalidArgument("cone count must be >= 1".into()));
    }
    let mut rng = rng::stream(spec.seed, 0);
    let amplitudes: Vec<f64> = (0..spec.count)
        .map(|_| rng::exponential(&mut rng, spec.amplitude_mean))
        .collect();
    let mut signals = Array2::zeros((spec.count, x0.len()));
    for (mut row, &e) in signals.axis_iter_mut(Axis(0)).zip(&amplitudes) {
        for (dst, &v) in row.iter_mut().zip(x0) {
            *dst = e * v;
        }
    }
    Ok(ConeDataset {
        amplitudes,
        signals,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubspaceSpec {
    pub ambient_dim: usize,
    pub subspace_dim: usize,
    /// Fraction `v` of entries that end up at or beyond the threshold.
    pub clip_fraction: f64,
    pub threshold: f64,
    pub count: usize,
    pub seed: u64,
}

impl SubspaceSpec {
    pub fn validate(&self) -> Result<()> {
        if self.subspace_dim == 0 || self.subspace_dim > self.ambient_dim {
            return Err(Error::InvalidArgument(format!(
                "subspace dimension must satisfy 1 <= k <= n, got k={}, n={}",
                self.subspace_dim, self.ambient_dim
            )));
        }
        if !(self.clip_fraction > 0.0 && self.clip_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "clip fraction must lie in (0, 1), got {}",
                self.clip_fraction
            )));
        }
        if !(self.threshold > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "threshold must be positive, got {}",
                self.threshold
            )));
        }
        if self.count == 0 {
            return Err(Error::InvalidArgument("count must be >= 1".into()));
        }
        Ok(())
    }

    /// Number of entries per signal with magnitude at or above the threshold.
    pub fn clipped_entries(&self) -> usize {
        clipped_count(self.ambient_dim, self.clip_fraction)
    }
}

/// `ceil(v n)`, guarded against representation error in `v` (e.g. `0.3 * 100`).
pub fn clipped_count(n: usize, v: f64) -> usize {
    let c = (v * n as f64 - 1e-9).ceil();
    (c.max(1.0) as usize).min(n)
}

#[derive(Debug, Clone)]
pub struct SubspaceDataset {
    /// `n x k`, Gaussian entries.
    pub basis: Array2<f64>,
    pub signals: Array2<f64>,
}

pub fn gen_subspace_dataset(spec: &SubspaceSpec) -> Result<SubspaceDataset> {
    spec.validate()?;
    let n = spec.ambient_dim;
    let k = spec.subspace_dim;
    let target = spec.clipped_entries();

    let mut basis_rng = rng::stream(spec.seed, 0);
    let basis = Array2::from_shape_simple_fn((n, k), || rng::standard_normal(&mut basis_rng));

    let mut signals = Array2::zeros((spec.count, n));
    let mut mags = vec![0.0; n];
    for (i, mut row) in signals.axis_iter_mut(Axis(0)).enumerate() {
        // One stream per signal; a degenerate draw keeps consuming the same
        // stream, so the outcome stays a function of (seed, i).
        let mut sig_rng = rng::stream(spec.seed, 1 + i as u64);
        loop {
            let coeffs = Array1::from_shape_simple_fn(k, || rng::standard_normal(&mut sig_rng));
            let x = basis.dot(&coeffs);
            for (m, v) in mags.iter_mut().zip(x.iter()) {
                *m = v.abs();
            }
            mags.sort_unstable_by(|a, b| b.total_cmp(a));
            let pivot = mags[target - 1];
            if pivot == 0.0 {
                continue;
            }
            let scaled = x.mapv(|v| (v / pivot) * spec.threshold);
            let reached = scaled.iter().filter(|v| v.abs() >= spec.threshold).count();
            if reached != target {
                // tie at the pivot; redraw
                continue;
            }
            row.assign(&scaled);
            break;
        }
    }
    Ok(SubspaceDataset { basis, signals })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    /// Entries `N(0, 1)`.
    GaussianUnit,
    /// Entries `N(0, 1/m)`.
    GaussianScaled,
    HaarOrthogonal,
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomOperator {
    /// `m x n`.
    pub matrix: Array2<f64>,
    pub kind: OperatorKind,
    pub seed: u64,
}

impl RandomOperator {
    pub fn identity(n: usize) -> Self {
        Self {
            matrix: Array2::eye(n),
            kind: OperatorKind::Identity,
            seed: 0,
        }
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }

    /// Builds the operator of the given kind; Haar and identity need `m == n`.
    pub fn build(kind: OperatorKind, m: usize, n: usize, seed: u64) -> Result<Self> {
        match kind {
            OperatorKind::GaussianUnit => gaussian_operator(m, n, false, seed),
            OperatorKind::GaussianScaled => gaussian_operator(m, n, true, seed),
            OperatorKind::HaarOrthogonal | OperatorKind::Identity if m != n => {
                Err(Error::InvalidArgument(format!(
                    "{kind:?} operator must be square, got {m}x{n}"
                )))
            }
            OperatorKind::HaarOrthogonal => haar_orthogonal(n, seed),
            OperatorKind::Identity => Ok(Self::identity(n)),
        }
    }
}

pub fn gaussian_operator(m: usize, n: usize, scaled: bool, seed: u64) -> Result<RandomOperator> {
    if m == 0 || n == 0 {
        return Err(Error::InvalidArgument(format!(
            "operator dimensions must be positive, got {m}x{n}"
        )));
    }
    let mut rng = rng::stream(seed, 0);
    let std = if scaled { 1.0 / (m as f64).sqrt() } else { 1.0 };
    let matrix = Array2::from_shape_simple_fn((m, n), || std * rng::standard_normal(&mut rng));
    Ok(RandomOperator {
        matrix,
        kind: if scaled {
            OperatorKind::GaussianScaled
        } else {
            OperatorKind::GaussianUnit
        },
        seed,
    })
}

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the
/// columns of `Q` flipped so that `R` has a positive diagonal.
pub fn haar_orthogonal(n: usize, seed: u64) -> Result<RandomOperator> {
    if n == 0 {
        return Err(Error::InvalidArgument("operator dimension must be positive".into()));
    }
    let mut rng = rng::stream(seed, 0);
    let entries: Vec<f64> = (0..n * n).map(|_| rng::standard_normal(&mut rng)).collect();
    let g = DMatrix::from_row_slice(n, n, &entries);
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Ok(RandomOperator {
        matrix: Array2::from_shape_fn((n, n), |(i, j)| q[(i, j)]),
        kind: OperatorKind::HaarOrthogonal,
        seed,
    })
}

/// `n x k` matrix with orthonormal columns spanning a uniformly random
/// `k`-dimensional subspace.
pub fn random_orthonormal_basis(n: usize, k: usize, rng: &mut StreamRng) -> Result<Array2<f64>> {
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!(
            "basis needs 1 <= k <= n, got k={k}, n={n}"
        )));
    }
    let entries: Vec<f64> = (0..n * k).map(|_| rng::standard_normal(rng)).collect();
    let g = DMatrix::from_row_slice(n, k, &entries);
    let qr = g.qr();
    let q = qr.q();
    Ok(Array2::from_shape_fn((n, k), |(i, j)| q[(i, j)]))
}

/// Deterministic shuffle-split of `count` row indices.
pub fn split_indices(count: usize, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let n_train = (count as f64 * train_fraction).round() as usize;
    if n_train == 0 || n_train == count {
        return Err(Error::InvalidArgument(format!(
            "split of {count} items at fraction {train_fraction} leaves an empty side"
        )));
    }
    let mut idx: Vec<usize> = (0..count).collect();
    idx.shuffle(&mut rng::stream(seed, 0));
    let test = idx.split_off(n_train);
    Ok((idx, test))
}

pub fn select_rows(a: ArrayView2<f64>, rows: &[usize]) -> Array2<f64> {
    a.select(Axis(0), rows)
}

/// Splits the rows of `a` into `(train, test)`.
pub fn split(a: ArrayView2<f64>, train_fraction: f64, seed: u64) -> Result<(Array2<f64>, Array2<f64>)> {
    let (train, test) = split_indices(a.nrows(), train_fraction, seed)?;
    Ok((select_rows(a, &train), select_rows(a, &test)))
}

/// Bundled 28x28 handwritten-style "2" rendered procedurally, values in `[0, 1]`.
///
/// Stands in for the single fixed nonnegative image the cone experiment needs.
pub fn digit_fixture() -> Signal {
    const SIDE: usize = 28;
    // Polyline strokes in pixel coordinates (x, y).
    let strokes: [&[(f64, f64)]; 2] = [
        &[
            (8.0, 9.0),
            (10.0, 6.5),
            (14.0, 5.5),
            (18.0, 6.5),
            (19.5, 9.5),
            (18.5, 13.0),
            (15.0, 16.5),
            (11.0, 19.5),
            (8.0, 22.0),
        ],
        &[(8.0, 22.0), (13.0, 21.8), (20.0, 22.0)],
    ];
    let mut img = vec![0.0f64; SIDE * SIDE];
    for (idx, px) in img.iter_mut().enumerate() {
        let (x, y) = ((idx % SIDE) as f64 + 0.5, (idx / SIDE) as f64 + 0.5);
        let mut d = f64::INFINITY;
        for stroke in strokes {
            for seg in stroke.windows(2) {
                d = d.min(point_segment_distance((x, y), seg[0], seg[1]));
            }
        }
        // Soft pen of radius ~1.6 px.
        *px = (1.0 - ((d - 1.0) / 1.2).max(0.0)).clamp(0.0, 1.0);
    }
    Signal::with_shape(img, vec![SIDE, SIDE]).expect("fixture is well formed")
}

fn point_segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0);
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt()
}

/// Averages non-overlapping `factor x factor` blocks of a square image.
pub fn downsample_square(img: &Signal, factor: usize) -> Result<Signal> {
    let shape = img
        .shape()
        .ok_or_else(|| Error::InvalidInput("downsampling needs a shaped signal".into()))?;
    if shape.len() != 2 || factor == 0 || shape[0] % factor != 0 || shape[1] % factor != 0 {
        return Err(Error::InvalidArgument(format!(
            "cannot downsample shape {shape:?} by {factor}"
        )));
    }
    let (h, w) = (shape[0] / factor, shape[1] / factor);
    let src = img.values();
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for dr in 0..factor {
                for dc in 0..factor {
                    acc += src[(r * factor + dr) * shape[1] + c * factor + dc];
                }
            }
            out[r * w + c] = acc / (factor * factor) as f64;
        }
    }
    Signal::with_shape(out, vec![h, w])
}
