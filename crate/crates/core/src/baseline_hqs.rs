//! Learning-free declipping by half-quadratic splitting: a measurement
//! consistency prox alternated with DCT soft-thresholding.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward_ops::{rho_with, Saturation, SaturationRule};

/// Which indices the fidelity prox acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProxMode {
    /// Average with `y` where `y` is unsaturated; leave saturated entries.
    #[default]
    Measured,
    /// Average with `y` wherever the current iterate lies within the thresholds.
    Literal,
    /// Exact prox of the full penalty: unsaturated entries as in `Measured`,
    /// saturated entries pulled back only when on the inconsistent side.
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HqsConfig {
    pub iterations: usize,
    pub gamma: f64,
    /// Soft threshold per iteration, non-increasing.
    pub threshold_schedule: Vec<f64>,
    pub prox_mode: ProxMode,
}

pub const DEFAULT_GAMMA: f64 = 20.0;
pub const DEFAULT_TAU0: f64 = 0.5;
pub const DEFAULT_ITERATIONS: usize = 50;

impl Default for HqsConfig {
    fn default() -> Self {
        Self::geometric(DEFAULT_ITERATIONS, DEFAULT_GAMMA, DEFAULT_TAU0)
    }
}

impl HqsConfig {
    /// Schedule `tau0 * 0.8^k`.
    pub fn geometric(iterations: usize, gamma: f64, tau0: f64) -> Self {
        Self {
            iterations,
            gamma,
            threshold_schedule: (0..iterations).map(|k| tau0 * 0.8f64.powi(k as i32)).collect(),
            prox_mode: ProxMode::Measured,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidArgument("HQS needs at least one iteration".into()));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::InvalidArgument(format!("gamma must be positive, got {}", self.gamma)));
        }
        if self.threshold_schedule.len() != self.iterations {
            return Err(Error::InvalidArgument(format!(
                "schedule has {} entries for {} iterations",
                self.threshold_schedule.len(),
                self.iterations
            )));
        }
        if self.threshold_schedule.iter().any(|t| !(*t >= 0.0)) {
            return Err(Error::InvalidArgument("thresholds must be >= 0".into()));
        }
        if self.threshold_schedule.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::InvalidArgument("threshold schedule must be non-increasing".into()));
        }
        Ok(())
    }
}

/// Minimiser of `1/2 ||z - x||^2 + gamma/2 * fidelity(z, y)`.
pub fn prox_mc(x: &[f64], y: &[f64], gamma: f64, rule: &SaturationRule, mode: ProxMode) -> Result<Vec<f64>> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: y.len(),
            got: x.len(),
        });
    }
    if !(gamma > 0.0) {
        return Err(Error::InvalidArgument(format!("gamma must be positive, got {gamma}")));
    }
    let spec = rule.spec;
    let avg = |xj: f64, yj: f64| (xj + gamma * yj) / (1.0 + gamma);
    Ok(x.iter()
        .zip(y)
        .map(|(&xj, &yj)| match mode {
            ProxMode::Measured => match rule.classify(yj) {
                Saturation::Interior => avg(xj, yj),
                _ => xj,
            },
            ProxMode::Literal => {
                if spec.lower() <= xj && xj <= spec.upper() {
                    avg(xj, yj)
                } else {
                    xj
                }
            }
            ProxMode::Exact => match rule.classify(yj) {
                Saturation::Interior => avg(xj, yj),
                Saturation::Upper if xj < yj => avg(xj, yj),
                Saturation::Lower if xj > yj => avg(xj, yj),
                _ => xj,
            },
        })
        .collect())
}

/// Orthonormal DCT-II of a fixed length, as a dense matrix.
#[derive(Debug, Clone)]
pub struct Dct {
    n: usize,
    /// Row `k` is the `k`-th basis vector.
    basis: Vec<f64>,
}

impl Dct {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("DCT length must be positive".into()));
        }
        let mut basis = vec![0.0; n * n];
        for k in 0..n {
            let s = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
            for j in 0..n {
                basis[k * n + j] =
                    s * (std::f64::consts::PI * (2 * j + 1) as f64 * k as f64 / (2 * n) as f64).cos();
            }
        }
        Ok(Self { n, basis })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.basis
            .chunks_exact(self.n)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn inverse(&self, c: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (row, &ck) in self.basis.chunks_exact(self.n).zip(c) {
            for (o, &b) in out.iter_mut().zip(row) {
                *o += ck * b;
            }
        }
        out
    }
}

/// Inverse DCT of the soft-thresholded coefficients.
pub fn soft_threshold_denoise(x: &[f64], tau: f64, dct: &Dct) -> Result<Vec<f64>> {
    if x.len() != dct.len() {
        return Err(Error::DimensionMismatch {
            expected: dct.len(),
            got: x.len(),
        });
    }
    if !(tau >= 0.0) {
        return Err(Error::InvalidArgument(format!("tau must be >= 0, got {tau}")));
    }
    let c: Vec<f64> = dct
        .forward(x)
        .into_iter()
        .map(|v| v.signum() * (v.abs() - tau).max(0.0))
        .collect();
    Ok(dct.inverse(&c))
}

#[derive(Debug, Clone, PartialEq)]
pub struct HqsOutput {
    /// Final iterate blended with the measurement.
    pub signal: Vec<f64>,
    /// `sum rho(x_k, y)^2` for `k = 0..=iterations`.
    pub residuals: Vec<f64>,
}

/// Runs HQS from `x0 = y`.
pub fn hqs_declip(y: &[f64], config: &HqsConfig, rule: &SaturationRule) -> Result<HqsOutput> {
    config.validate()?;
    if y.iter().any(|&v| !rule.spec.contains(v)) {
        return Err(Error::InvalidInput("measurement outside the clipping range".into()));
    }
    let dct = Dct::new(y.len())?;
    let residual = |x: &[f64]| -> f64 { x.iter().zip(y).map(|(&a, &b)| rho_with(a, b, rule).powi(2)).sum() };
    let mut x = y.to_vec();
    let mut residuals = vec![residual(&x)];
    for &tau in &config.threshold_schedule {
        let u = prox_mc(&x, y, config.gamma, rule, config.prox_mode)?;
        x = soft_threshold_denoise(&u, tau, &dct)?;
        residuals.push(residual(&x));
    }
    let signal = x
        .iter()
        .zip(y)
        .map(|(&xj, &yj)| if rule.is_saturated(yj) { xj } else { yj })
        .collect();
    Ok(HqsOutput { signal, residuals })
}

/// Signal with `active` random DCT coefficients among the lowest `n / 4`
/// frequencies, scaled so that `ceil(v n)` entries reach `mu` in magnitude.
/// Returns `(x, eta(x))`.
pub fn dct_sparse_fixture(n: usize, active: usize, clip_fraction: f64, mu: f64, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    if active == 0 || active > n / 4 {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= active <= n/4, got active={active}, n={n}"
        )));
    }
    if !(clip_fraction > 0.0 && clip_fraction < 1.0 && mu > 0.0) {
        return Err(Error::InvalidArgument("clip fraction must lie in (0, 1) and mu > 0".into()));
    }
    let dct = Dct::new(n)?;
    let target = crate::datasets::clipped_count(n, clip_fraction);
    let mut r = crate::rng::stream(seed, 0);
    loop {
        let mut freqs: Vec<usize> = (1..n / 4).collect();
        rand::seq::SliceRandom::shuffle(freqs.as_mut_slice(), &mut r);
        let mut c = vec![0.0; n];
        for &k in &freqs[..active] {
            c[k] = crate::rng::standard_normal(&mut r);
        }
        let x = dct.inverse(&c);
        let mut mags: Vec<f64> = x.iter().map(|v| v.abs()).collect();
        mags.sort_unstable_by(|a, b| b.total_cmp(a));
        let pivot = mags[target - 1];
        if pivot == 0.0 || mags.get(target) == Some(&pivot) {
            continue;
        }
        let x: Vec<f64> = x.iter().map(|v| v / pivot * mu).collect();
        if x.iter().filter(|v| v.abs() >= mu).count() != target {
            continue;
        }
        let y = x.iter().map(|v| v.clamp(-mu, mu)).collect();
        return Ok((x, y));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward_ops::ClipSpec;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn rule() -> SaturationRule {
        SaturationRule::exact(ClipSpec::symmetric(1.0).unwrap())
    }

    #[test]
    fn prox_examples() {
        let r = rule();
        let out = prox_mc(&[0.0], &[0.5], 1.0, &r, ProxMode::Measured).unwrap();
        assert_relative_eq!(out[0], 0.25);
        let out = prox_mc(&[0.3], &[0.5], 1e12, &r, ProxMode::Measured).unwrap();
        assert_relative_eq!(out[0], 0.5, epsilon = 1e-10);
        let out = prox_mc(&[0.3], &[1.0], 2.0, &r, ProxMode::Measured).unwrap();
        assert_eq!(out[0], 0.3);
        assert!(prox_mc(&[0.3], &[1.0], 0.0, &r, ProxMode::Measured).is_err());
    }

    #[test]
    fn prox_modes_differ_where_expected() {
        let r = rule();
        // iterate outside the range on an unsaturated measurement
        let x = [1.5, 0.2, 0.4, 2.0];
        let y = [0.5, 1.0, 1.0, 1.0];
        let m = prox_mc(&x, &y, 1.0, &r, ProxMode::Measured).unwrap();
        let l = prox_mc(&x, &y, 1.0, &r, ProxMode::Literal).unwrap();
        let e = prox_mc(&x, &y, 1.0, &r, ProxMode::Exact).unwrap();
        assert_eq!(m, vec![1.0, 0.2, 0.4, 2.0]);
        assert_eq!(l, vec![1.5, 0.6, 0.7, 2.0]);
        assert_eq!(e, vec![1.0, 0.6, 0.7, 2.0]);
    }

    #[test]
    fn dct_is_orthonormal() {
        let d = Dct::new(16).unwrap();
        let x: Vec<f64> = (0..16).map(|i| (i as f64 * 0.7).sin()).collect();
        let back = d.inverse(&d.forward(&x));
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b).abs() <= 1e-12);
        }
        let e: f64 = x.iter().map(|v| v * v).sum();
        let ec: f64 = d.forward(&x).iter().map(|v| v * v).sum();
        assert_relative_eq!(e, ec, max_relative = 1e-12);
    }

    #[test]
    fn denoise_limits() {
        let d = Dct::new(32).unwrap();
        let x: Vec<f64> = (0..32).map(|i| ((i * i) as f64 * 0.13).cos()).collect();
        let same = soft_threshold_denoise(&x, 0.0, &d).unwrap();
        assert!(x.iter().zip(&same).all(|(a, b)| (a - b).abs() <= 1e-10));
        let cmax = d.forward(&x).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let zero = soft_threshold_denoise(&x, cmax, &d).unwrap();
        assert!(zero.iter().all(|v| v.abs() <= 1e-12));
    }

    #[test]
    fn hqs_keeps_unsaturated_input() {
        let y: Vec<f64> = (0..64).map(|i| 0.9 * (i as f64 * 0.3).sin()).collect();
        let out = hqs_declip(&y, &HqsConfig::geometric(10, 1.0, 0.5), &rule()).unwrap();
        assert_eq!(out.signal, y);
        let out = hqs_declip(&y, &HqsConfig::geometric(1, 1e12, 0.0), &rule()).unwrap();
        assert_eq!(out.signal, y);
    }

    #[test]
    fn config_validation() {
        let mut c = HqsConfig::geometric(3, 1.0, 0.1);
        c.threshold_schedule[2] = 1.0;
        assert!(c.validate().is_err());
        assert!(HqsConfig::geometric(0, 1.0, 0.1).validate().is_err());
    }

    proptest! {
        /// Per index, the measured-mode prox minimises 1/2 (z - x)^2 + gamma/2 (z - y)^2
        /// on unsaturated entries and 1/2 (z - x)^2 on saturated ones.
        #[test]
        fn prox_is_scalar_minimiser(x in -3.0f64..3.0, y in -1.0f64..=1.0, gamma in 0.01f64..100.0) {
            let r = rule();
            let z = prox_mc(&[x], &[y], gamma, &r, ProxMode::Measured).unwrap()[0];
            let sat = r.is_saturated(y);
            let obj = |z: f64| 0.5 * (z - x).powi(2) + if sat { 0.0 } else { 0.5 * gamma * (z - y).powi(2) };
            let h = 1e-4;
            prop_assert!(obj(z) <= obj(z + h) + 1e-12 && obj(z) <= obj(z - h) + 1e-12);
        }

        #[test]
        fn denoise_never_adds_energy(x in prop::collection::vec(-5.0f64..5.0, 24), tau in 0.0f64..3.0) {
            let d = Dct::new(24).unwrap();
            let out = soft_threshold_denoise(&x, tau, &d).unwrap();
            let e_in: f64 = x.iter().map(|v| v * v).sum();
            let e_out: f64 = out.iter().map(|v| v * v).sum();
            prop_assert!(e_out <= e_in * (1.0 + 1e-12) + 1e-12);
        }
    }
}
