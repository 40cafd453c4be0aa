//! Monte Carlo checks of the identifiability and recovery statements:
//! injectivity of `eta(A .)` on bounded cones, saturation statistics, the
//! l1 concentration bound, conic model identification and box-counting
//! dimension estimates.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::{self, OperatorKind, RandomOperator};
use crate::error::{Error, Result};
use crate::forward_ops::{Saturation, SaturationRule};
use crate::rng::{self, StreamRng};

/// `mu (1/2 - (k + 1)/m)`; an error when not positive.
pub fn radius_bound(k: usize, m: usize, mu: f64) -> Result<f64> {
    if m == 0 || !(mu > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "radius bound needs m >= 1 and mu > 0, got m={m}, mu={mu}"
        )));
    }
    let r = mu * (0.5 - (k as f64 + 1.0) / m as f64);
    if r <= 0.0 {
        return Err(Error::Infeasible(format!(
            "m={m} must exceed 2(k+1)={} for a positive recovery radius",
            2 * (k + 1)
        )));
    }
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConeKind {
    /// Random `k`-dimensional subspace.
    RandomSubspace,
    /// The non-negative first coordinate axis.
    Axis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectivityTrialSpec {
    pub cone_dim: usize,
    pub ambient_n: usize,
    pub measurement_m: usize,
    pub threshold: f64,
    /// Ball radius for unit-variance operators; scaled by `sqrt(m)` for
    /// `GaussianScaled`.
    pub radius: f64,
    pub pair_count: usize,
    pub seed: u64,
    /// Defaults to `1e-9 sqrt(m) mu`.
    pub collision_tol: Option<f64>,
    pub operator: OperatorKind,
    pub cone: ConeKind,
    /// Sample norms uniformly from `(lo, hi]` instead of `(0, radius]`.
    pub norm_range: Option<(f64, f64)>,
    /// Pairs evaluated against one operator draw.
    pub pairs_per_operator: usize,
}

impl InjectivityTrialSpec {
    /// Gaussian operator, random `k`-subspace cone, radius at `fraction` of the bound.
    pub fn gaussian(k: usize, n: usize, m: usize, mu: f64, fraction: f64, pairs: usize, seed: u64) -> Result<Self> {
        let radius = fraction * radius_bound(k, m, mu)?;
        Ok(Self {
            cone_dim: k,
            ambient_n: n,
            measurement_m: m,
            threshold: mu,
            radius,
            pair_count: pairs,
            seed,
            collision_tol: None,
            operator: OperatorKind::GaussianUnit,
            cone: ConeKind::RandomSubspace,
            norm_range: None,
            pairs_per_operator: 100,
        })
    }

    /// Axis cone in `R^n` with norms in `(mu, 4 mu]`, square operator.
    pub fn axis(n: usize, mu: f64, operator: OperatorKind, pairs: usize, seed: u64) -> Self {
        Self {
            cone_dim: 1,
            ambient_n: n,
            measurement_m: n,
            threshold: mu,
            radius: 4.0 * mu,
            pair_count: pairs,
            seed,
            collision_tol: None,
            operator,
            cone: ConeKind::Axis,
            norm_range: Some((mu, 4.0 * mu)),
            pairs_per_operator: 100,
        }
    }

    pub fn tolerance(&self) -> f64 {
        self.collision_tol
            .unwrap_or(1e-9 * (self.measurement_m as f64).sqrt() * self.threshold)
    }

    fn validate(&self) -> Result<()> {
        if self.cone_dim == 0 || self.cone_dim > self.ambient_n || self.measurement_m == 0 {
            return Err(Error::InvalidArgument(format!(
                "need 1 <= k <= n and m >= 1, got k={}, n={}, m={}",
                self.cone_dim, self.ambient_n, self.measurement_m
            )));
        }
        if !(self.threshold > 0.0 && self.radius > 0.0) {
            return Err(Error::InvalidArgument("threshold and radius must be positive".into()));
        }
        if self.pair_count == 0 || self.pairs_per_operator == 0 {
            return Err(Error::InvalidArgument("pair counts must be positive".into()));
        }
        if let Some((lo, hi)) = self.norm_range {
            if !(lo >= 0.0 && lo < hi) {
                return Err(Error::InvalidArgument(format!("bad norm range ({lo}, {hi}]")));
            }
        }
        if self.cone == ConeKind::Axis && self.cone_dim != 1 {
            return Err(Error::InvalidArgument("the axis cone is one-dimensional".into()));
        }
        Ok(())
    }

    fn ball_radius(&self) -> f64 {
        match self.operator {
            OperatorKind::GaussianScaled => (self.measurement_m as f64).sqrt() * self.radius,
            _ => self.radius,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialReport {
    pub pairs_tested: usize,
    pub collisions: usize,
    pub collision_rate: f64,
    pub mean_saturated_fraction: f64,
    /// Smallest `||eta(Ax) - eta(Au)||_inf` seen over all pairs.
    pub min_residual: f64,
}

struct BlockStats {
    pairs: usize,
    collisions: usize,
    saturated: usize,
    measured: usize,
    min_residual: f64,
}

/// Samples pairs `x != u` from the cone within the ball and counts how often
/// `eta(A x)` and `eta(A u)` coincide within tolerance.
pub fn injectivity_trial(spec: &InjectivityTrialSpec, workers: usize) -> Result<TrialReport> {
    spec.validate()?;
    if spec.cone == ConeKind::RandomSubspace && spec.norm_range.is_none() {
        radius_bound(spec.cone_dim, spec.measurement_m, spec.threshold)?;
    }
    let (m, n) = (spec.measurement_m, spec.ambient_n);
    let blocks = spec.pair_count.div_ceil(spec.pairs_per_operator);
    let run_block = |b: usize| -> Result<BlockStats> {
        let op_seed = rng::derive_seed(spec.seed, b as u64);
        let a = RandomOperator::build(spec.operator, m, n, op_seed)?.matrix;
        let mut r = rng::stream(spec.seed, 1_000_000 + b as u64);
        let basis = match spec.cone {
            ConeKind::RandomSubspace => datasets::random_orthonormal_basis(n, spec.cone_dim, &mut r)?,
            ConeKind::Axis => {
                let mut e = Array2::zeros((n, 1));
                e[(0, 0)] = 1.0;
                e
            }
        };
        let pairs = spec
            .pairs_per_operator
            .min(spec.pair_count - b * spec.pairs_per_operator);
        let tol = spec.tolerance();
        let clip = |v: f64| v.clamp(-spec.threshold, spec.threshold);
        let mut stats = BlockStats {
            pairs,
            collisions: 0,
            saturated: 0,
            measured: 0,
            min_residual: f64::INFINITY,
        };
        for _ in 0..pairs {
            let x = sample_cone_point(spec, &basis, &mut r);
            let u = sample_cone_point(spec, &basis, &mut r);
            let ax = a.dot(&x);
            let au = a.dot(&u);
            let mut residual: f64 = 0.0;
            for (p, q) in ax.iter().zip(&au) {
                residual = residual.max((clip(*p) - clip(*q)).abs());
                stats.saturated += (p.abs() >= spec.threshold) as usize + (q.abs() >= spec.threshold) as usize;
            }
            stats.measured += 2 * m;
            stats.min_residual = stats.min_residual.min(residual);
            if residual <= tol && x != u {
                stats.collisions += 1;
            }
        }
        Ok(stats)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot build worker pool: {e}")))?;
    let results: Vec<Result<BlockStats>> = pool.install(|| (0..blocks).into_par_iter().map(run_block).collect());
    let mut pairs = 0;
    let mut collisions = 0;
    let mut saturated = 0;
    let mut measured = 0;
    let mut min_residual = f64::INFINITY;
    for r in results {
        let s = r?;
        pairs += s.pairs;
        collisions += s.collisions;
        saturated += s.saturated;
        measured += s.measured;
        min_residual = min_residual.min(s.min_residual);
    }
    Ok(TrialReport {
        pairs_tested: pairs,
        collisions,
        collision_rate: collisions as f64 / pairs as f64,
        mean_saturated_fraction: saturated as f64 / measured as f64,
        min_residual,
    })
}

fn sample_cone_point(spec: &InjectivityTrialSpec, basis: &Array2<f64>, r: &mut StreamRng) -> Array1<f64> {
    let k = basis.ncols();
    let mut c = Array1::from_shape_simple_fn(k, || rng::standard_normal(r));
    if spec.cone == ConeKind::Axis {
        c.mapv_inplace(f64::abs);
    }
    let norm = c.dot(&c).sqrt();
    let (lo, hi) = spec.norm_range.unwrap_or((0.0, spec.ball_radius()));
    // uniform on (lo, hi]
    let radius = hi - (hi - lo) * rng::uniform(r, 0.0, 1.0);
    basis.dot(&c) * (radius / norm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SaturationFraction {
    pub empirical: f64,
    pub analytic: f64,
}

/// Fraction of `|(A x)_i| >= mu` over unit-variance Gaussian `A` and
/// `||x|| = x_norm`, with the exact value `P(|g| x_norm >= mu) = erfc(mu / (x_norm sqrt 2))`.
pub fn saturation_fraction(x_norm: f64, mu: f64, m: usize, trials: usize, seed: u64) -> Result<SaturationFraction> {
    if !(x_norm > 0.0 && mu > 0.0) || m == 0 || trials == 0 {
        return Err(Error::InvalidArgument(
            "saturation fraction needs positive norm, threshold, m and trials".into(),
        ));
    }
    const N: usize = 8;
    let mut hits = 0usize;
    for t in 0..trials {
        let a = datasets::gaussian_operator(m, N, false, rng::derive_seed(seed, t as u64))?.matrix;
        let mut r = rng::stream(seed, 1_000_000 + t as u64);
        let mut x = Array1::from_shape_simple_fn(N, || rng::standard_normal(&mut r));
        x *= x_norm / x.dot(&x).sqrt();
        hits += a.dot(&x).iter().filter(|v| v.abs() >= mu).count();
    }
    Ok(SaturationFraction {
        empirical: hits as f64 / (m * trials) as f64,
        analytic: libm::erfc(mu / (x_norm * std::f64::consts::SQRT_2)),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct L1Spec {
    pub cone_dim: usize,
    pub ambient_n: usize,
    pub operators: usize,
    pub samples_per_operator: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct L1Row {
    pub m: usize,
    pub samples: usize,
    pub violation_rate: f64,
    pub mean_l1: f64,
    /// `sqrt(2 m / pi)`.
    pub expected_mean: f64,
}

/// For `A` with `N(0, 1/m)` entries and unit `z` on the sphere of a random
/// `k`-subspace, the fraction of samples with `||A z||_1 > sqrt(m)`.
pub fn l1_concentration(spec: &L1Spec, ms: &[usize]) -> Result<Vec<L1Row>> {
    if spec.cone_dim == 0 || spec.cone_dim > spec.ambient_n || spec.operators == 0 || spec.samples_per_operator == 0 {
        return Err(Error::InvalidArgument("invalid l1 concentration spec".into()));
    }
    ms.iter()
        .map(|&m| {
            if m == 0 {
                return Err(Error::InvalidArgument("m must be positive".into()));
            }
            let bound = (m as f64).sqrt();
            let mut violations = 0usize;
            let mut total = 0.0;
            for o in 0..spec.operators {
                let tag = (m as u64) << 32 | o as u64;
                let a = datasets::gaussian_operator(m, spec.ambient_n, true, rng::derive_seed(spec.seed, tag))?.matrix;
                let mut r = rng::stream(spec.seed, tag);
                let basis = datasets::random_orthonormal_basis(spec.ambient_n, spec.cone_dim, &mut r)?;
                for _ in 0..spec.samples_per_operator {
                    let mut c = Array1::from_shape_simple_fn(spec.cone_dim, || rng::standard_normal(&mut r));
                    c /= c.dot(&c).sqrt();
                    let l1 = a.dot(&basis.dot(&c)).mapv(f64::abs).sum();
                    total += l1;
                    violations += (l1 > bound) as usize;
                }
            }
            let samples = spec.operators * spec.samples_per_operator;
            Ok(L1Row {
                m,
                samples,
                violation_rate: violations as f64 / samples as f64,
                mean_l1: total / samples as f64,
                expected_mean: (2.0 * m as f64 / std::f64::consts::PI).sqrt(),
            })
        })
        .collect()
}

/// Normalised directions of the strictly unsaturated measurements, with
/// near-duplicates (angle below `angle_tol`) merged.
pub fn conic_extension(measurements: ArrayView2<f64>, rule: &SaturationRule, angle_tol: f64) -> Result<Vec<Array1<f64>>> {
    let spec = rule.spec;
    if !(spec.is_symmetric() || (spec.lower() <= 0.0 && spec.upper() > 0.0)) {
        return Err(Error::NotIdentifiable(format!(
            "thresholds ({}, {}) do not bracket zero; the signal set cannot be recovered from clipped data",
            spec.lower(),
            spec.upper()
        )));
    }
    let cos_tol = angle_tol.cos();
    let mut kept: Vec<Array1<f64>> = Vec::new();
    for row in measurements.axis_iter(Axis(0)) {
        if row.iter().any(|&v| rule.classify(v) != Saturation::Interior) {
            continue;
        }
        let norm = row.dot(&row).sqrt();
        if norm == 0.0 {
            continue;
        }
        let u = &row / norm;
        if kept.iter().all(|k| k.dot(&u) < cos_tol) {
            kept.push(u);
        }
    }
    if kept.is_empty() {
        return Err(Error::NotIdentifiable(
            "no strictly unsaturated measurement survives".into(),
        ));
    }
    Ok(kept)
}

/// Symmetric Hausdorff distance between two finite point sets.
pub fn hausdorff(a: &[Array1<f64>], b: &[Array1<f64>]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidInput("hausdorff distance of an empty set".into()));
    }
    let directed = |p: &[Array1<f64>], q: &[Array1<f64>]| {
        p.iter()
            .map(|x| q.iter().map(|y| dist(x.view(), y.view())).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    };
    Ok(directed(a, b).max(directed(b, a)))
}

fn dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Two rays in the positive quadrant of `R^2`, amplitudes exponential with
/// mean 2. Returns `(signals, unit ray directions)`.
pub fn two_ray_fixture(count: usize, seed: u64) -> Result<(Array2<f64>, Vec<Array1<f64>>)> {
    let dirs = [Array1::from(vec![1.0f64, 0.3]), Array1::from(vec![0.2f64, 1.0])];
    let unit: Vec<Array1<f64>> = dirs.iter().map(|d| d / d.dot(d).sqrt()).collect();
    let mut r = rng::stream(seed, 0);
    let mut out = Array2::zeros((count, 2));
    for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        let e = rng::exponential(&mut r, 2.0);
        row.assign(&(&unit[i % 2] * e));
    }
    Ok((out, unit))
}

/// Rays through `(mu2, mu1/2)` and `(mu2, mu1/3)` for `0 < mu1 < mu2`: two
/// different cones whose clipped images coincide.
pub fn counterexample_rays(mu1: f64, mu2: f64, count: usize, seed: u64) -> Result<[Array2<f64>; 2]> {
    if !(0.0 < mu1 && mu1 < mu2) {
        return Err(Error::InvalidArgument("counterexample needs 0 < mu1 < mu2".into()));
    }
    let rays = [[mu2, mu1 / 2.0], [mu2, mu1 / 3.0]];
    let mut r = rng::stream(seed, 0);
    let amps: Vec<f64> = (0..count).map(|_| rng::exponential(&mut r, 2.0)).collect();
    Ok(rays.map(|d| Array2::from_shape_fn((count, 2), |(i, j)| amps[i] * d[j])))
}

/// Size of a greedy farthest-point `eps`-net: an upper bound on the number
/// of radius-`eps` balls centred in the set that cover it.
pub fn covering_number(points: ArrayView2<f64>, eps: f64) -> Result<usize> {
    if points.nrows() == 0 {
        return Err(Error::InvalidInput("empty point set".into()));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let mut nearest: Vec<f64> = points
        .axis_iter(Axis(0))
        .map(|p| dist(p, points.row(0)))
        .collect();
    let mut centres = 1;
    loop {
        let (far, &d) = nearest
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("nonempty");
        if d <= eps {
            return Ok(centres);
        }
        centres += 1;
        let c = points.row(far);
        for (slot, p) in nearest.iter_mut().zip(points.axis_iter(Axis(0))) {
            *slot = slot.min(dist(p, c));
        }
    }
}

/// Least-squares slope of `log N(eps)` against `log(1/eps)`.
pub fn box_dim_estimate(points: ArrayView2<f64>, eps_grid: &[f64]) -> Result<f64> {
    let mut distinct = eps_grid.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::InvalidArgument(
            "dimension estimate needs at least two distinct eps values".into(),
        ));
    }
    let xs: Vec<f64> = eps_grid.iter().map(|e| -e.ln()).collect();
    let ys = eps_grid
        .iter()
        .map(|&e| covering_number(points, e).map(|c| (c as f64).ln()))
        .collect::<Result<Vec<_>>>()?;
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

/// `count` points uniform on the unit sphere `S^{dim}` placed in the first
/// `dim + 1` coordinates of `R^ambient`.
pub fn sphere_points(dim: usize, ambient: usize, count: usize, seed: u64) -> Result<Array2<f64>> {
    if dim + 1 > ambient {
        return Err(Error::InvalidArgument("sphere does not fit in ambient space".into()));
    }
    let mut r = rng::stream(seed, 0);
    let mut out = Array2::zeros((count, ambient));
    for mut row in out.axis_iter_mut(Axis(0)) {
        let mut v = Array1::from_shape_simple_fn(dim + 1, || rng::standard_normal(&mut r));
        v /= v.dot(&v).sqrt();
        row.slice_mut(s![..dim + 1]).assign(&v);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward_ops::ClipSpec;
    use approx::assert_relative_eq;

    #[test]
    fn radius_bound_examples() {
        assert_relative_eq!(radius_bound(1, 8, 1.0).unwrap(), 0.25);
        assert!(matches!(radius_bound(3, 8, 1.0), Err(Error::Infeasible(_))));
        assert_relative_eq!(radius_bound(1, 8, 2.0).unwrap(), 0.5);
        assert!(radius_bound(1, 16, 1.0).unwrap() > radius_bound(1, 8, 1.0).unwrap());
        assert!(radius_bound(2, 16, 1.0).unwrap() < radius_bound(1, 16, 1.0).unwrap());
    }

    #[test]
    fn saturation_fraction_at_unit_ratio() {
        let s = saturation_fraction(1.0, 1.0, 10, 1, 0).unwrap();
        assert_relative_eq!(s.analytic, 0.317_310_507_862_914_1, epsilon = 1e-12);
        let s = saturation_fraction(1e-3, 1.0, 10, 1, 0).unwrap();
        assert!(s.analytic < 1e-100);
    }

    #[test]
    fn unsaturated_haar_pairs_never_collide() {
        let mut spec = InjectivityTrialSpec::axis(16, 1.0, OperatorKind::HaarOrthogonal, 500, 3);
        spec.cone = ConeKind::RandomSubspace;
        spec.cone_dim = 3;
        // ||A x|| = ||x|| < mu keeps every entry strictly inside.
        spec.norm_range = Some((0.0, 0.99));
        let rep = injectivity_trial(&spec, 1).unwrap();
        assert_eq!(rep.collisions, 0);
        assert_eq!(rep.mean_saturated_fraction, 0.0);
    }

    #[test]
    fn axis_cone_identity_always_collides() {
        let spec = InjectivityTrialSpec::axis(8, 1.0, OperatorKind::Identity, 300, 1);
        let rep = injectivity_trial(&spec, 1).unwrap();
        assert_eq!(rep.collisions, 300);
    }

    #[test]
    fn conic_extension_rank_one() {
        let rule = SaturationRule::exact(ClipSpec::symmetric(1.0).unwrap());
        let x0 = Array1::from(vec![0.3, -0.2, 0.5]);
        let signals = Array2::from_shape_fn((50, 3), |(i, j)| 0.1 * (i + 1) as f64 * x0[j]);
        let y = signals.mapv(|v| v.clamp(-1.0, 1.0));
        let out = conic_extension(y.view(), &rule, 1e-6).unwrap();
        assert_eq!(out.len(), 1);
        let u0 = &x0 / x0.dot(&x0).sqrt();
        assert!(dist(out[0].view(), u0.view()) <= 1e-8);
    }

    #[test]
    fn conic_extension_two_rays() {
        let rule = SaturationRule::exact(ClipSpec::symmetric(1.0).unwrap());
        let (x, dirs) = two_ray_fixture(200, 4).unwrap();
        let y = x.mapv(|v| v.clamp(-1.0, 1.0));
        let out = conic_extension(y.view(), &rule, 1e-6).unwrap();
        assert_eq!(out.len(), 2);
        assert!(hausdorff(&out, &dirs).unwrap() < 1e-12);
    }

    #[test]
    fn counterexample_is_not_identifiable() {
        let (mu1, mu2) = (0.2, 1.0);
        let rule = SaturationRule::exact(ClipSpec::new(mu1, mu2).unwrap());
        for rays in counterexample_rays(mu1, mu2, 100, 0).unwrap() {
            let y = rays.mapv(|v| v.clamp(mu1, mu2));
            assert!(matches!(conic_extension(y.view(), &rule, 1e-6), Err(Error::NotIdentifiable(_))));
        }
    }

    #[test]
    fn single_point_has_dimension_zero() {
        let p = Array2::from_elem((5, 3), 0.7);
        assert_eq!(covering_number(p.view(), 0.01).unwrap(), 1);
        assert_eq!(box_dim_estimate(p.view(), &[0.1, 0.01, 0.001]).unwrap(), 0.0);
        assert!(box_dim_estimate(p.view(), &[0.1]).is_err());
        assert!(box_dim_estimate(p.view(), &[0.1, 0.1]).is_err());
    }

    #[test]
    fn covering_of_segment() {
        // 101 points on [0, 1]; an eps-net from the farthest-point rule
        // needs between ceil(1/(2 eps)) and 1/eps + 1 centres
        let p = Array2::from_shape_fn((101, 1), |(i, _)| i as f64 / 100.0);
        let c = covering_number(p.view(), 0.1).unwrap();
        assert!((5..=11).contains(&c), "{c}");
    }
}
