//! Measurement physics: the clipping operator, saturation bookkeeping, the
//! consistency penalty used by the MC loss, the blending mask, and the
//! miniature HDR pipeline (camera curve + 8-bit quantizer).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Threshold pair `(lower, upper)` of the clipping operator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipSpec {
    lower: f64,
    upper: f64,
}

impl ClipSpec {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !lower.is_finite() || !upper.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "clip thresholds must be finite, got ({lower}, {upper})"
            )));
        }
        if lower >= upper {
            return Err(Error::InvalidArgument(format!(
                "clip thresholds must satisfy lower < upper, got ({lower}, {upper})"
            )));
        }
        Ok(Self { lower, upper })
    }

    /// `(-mu, mu)`.
    pub fn symmetric(mu: f64) -> Result<Self> {
        if !(mu > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "symmetric threshold must be positive, got {mu}"
            )));
        }
        Self::new(-mu, mu)
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn is_symmetric(&self) -> bool {
        self.lower == -self.upper
    }

    #[inline]
    pub fn clip_value(&self, u: f64) -> f64 {
        if u <= self.lower {
            self.lower
        } else if u >= self.upper {
            self.upper
        } else {
            u
        }
    }

    /// Derivative of the clip: 1 strictly inside `(lower, upper)`, 0 elsewhere.
    #[inline]
    pub fn clip_derivative(&self, u: f64) -> f64 {
        if u > self.lower && u < self.upper {
            1.0
        } else {
            0.0
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lower && v <= self.upper
    }
}

/// Which side, if any, a measured value is saturated on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Saturation {
    Lower,
    Interior,
    Upper,
}

/// A clip spec together with the tolerance band used to classify saturation.
///
/// Synthetic data hits the thresholds exactly and uses `tol = 0`; ingested
/// data uses [`SaturationRule::for_real_data`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaturationRule {
    pub spec: ClipSpec,
    pub tol: f64,
}

impl SaturationRule {
    pub fn new(spec: ClipSpec, tol: f64) -> Result<Self> {
        if !(tol >= 0.0) || !tol.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "saturation tolerance must be a finite value >= 0, got {tol}"
            )));
        }
        Ok(Self { spec, tol })
    }

    pub fn exact(spec: ClipSpec) -> Self {
        Self { spec, tol: 0.0 }
    }

    /// Band of `1e-4 * (upper - lower)` around each threshold.
    pub fn for_real_data(spec: ClipSpec) -> Self {
        Self {
            spec,
            tol: 1e-4 * (spec.upper - spec.lower),
        }
    }

    #[inline]
    pub fn classify(&self, v: f64) -> Saturation {
        if v >= self.spec.upper - self.tol {
            Saturation::Upper
        } else if v <= self.spec.lower + self.tol {
            Saturation::Lower
        } else {
            Saturation::Interior
        }
    }

    #[inline]
    pub fn is_saturated(&self, v: f64) -> bool {
        self.classify(v) != Saturation::Interior
    }
}

/// A ground-truth signal. Entries are always finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    values: Vec<f64>,
    shape: Option<Vec<usize>>,
}

impl Signal {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_finite(&values)?;
        Ok(Self {
            values,
            shape: None,
        })
    }

    /// Attaches a shape (e.g. `[28, 28]` for an image); its product must equal the length.
    pub fn with_shape(values: Vec<f64>, shape: Vec<usize>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(Error::DimensionMismatch {
                expected,
                got: values.len(),
            });
        }
        let mut s = Self::new(values)?;
        s.shape = Some(shape);
        Ok(s)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn shape(&self) -> Option<&[usize]> {
        self.shape.as_deref()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// A clipped observation; every entry lies in `[spec.lower, spec.upper]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    values: Vec<f64>,
    spec: ClipSpec,
}

impl Measurement {
    pub fn new(values: Vec<f64>, spec: ClipSpec) -> Result<Self> {
        check_finite(&values)?;
        if let Some((j, v)) = values.iter().enumerate().find(|(_, v)| !spec.contains(**v)) {
            return Err(Error::InvalidInput(format!(
                "measurement entry {j} = {v} lies outside [{}, {}]",
                spec.lower, spec.upper
            )));
        }
        Ok(Self { values, spec })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn spec(&self) -> ClipSpec {
        self.spec
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Saturated / unsaturated index sets (0-based) of one measurement.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SaturationPartition {
    pub saturated: Vec<usize>,
    pub unsaturated: Vec<usize>,
}

fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(j) => Err(Error::InvalidInput(format!(
            "entry {j} is not finite ({})",
            values[j]
        ))),
        None => Ok(()),
    }
}

pub fn clip(x: &Signal, spec: ClipSpec) -> Measurement {
    Measurement {
        values: x.values.iter().map(|&u| spec.clip_value(u)).collect(),
        spec,
    }
}

/// Clips raw values; fails on non-finite entries.
pub fn clip_values(x: &[f64], spec: ClipSpec) -> Result<Measurement> {
    Ok(clip(&Signal::new(x.to_vec())?, spec))
}

pub fn partition_saturation(y: &Measurement, tol: f64) -> Result<SaturationPartition> {
    let rule = SaturationRule::new(y.spec, tol)?;
    let mut part = SaturationPartition::default();
    for (j, &v) in y.values.iter().enumerate() {
        if rule.is_saturated(v) {
            part.saturated.push(j);
        } else {
            part.unsaturated.push(j);
        }
    }
    Ok(part)
}

/// Consistency penalty between a prediction `a` and a measured value `b`:
/// `|b - a|` when `b` is interior, `(b - a)_+` when `b` sits on the upper
/// threshold and `(a - b)_+` when it sits on the lower one.
pub fn rho(a: f64, b: f64, spec: ClipSpec) -> Result<f64> {
    check_measured(b, spec)?;
    Ok(rho_with(a, b, &SaturationRule::exact(spec)))
}

/// Derivative of `rho(a, b)^2` with respect to `a` (0 at kinks).
pub fn rho_grad_a(a: f64, b: f64, spec: ClipSpec) -> Result<f64> {
    check_measured(b, spec)?;
    Ok(rho_sq_grad_with(a, b, &SaturationRule::exact(spec)))
}

fn check_measured(b: f64, spec: ClipSpec) -> Result<()> {
    if !b.is_finite() || !spec.contains(b) {
        return Err(Error::InvalidInput(format!(
            "measured value {b} lies outside [{}, {}]",
            spec.lower, spec.upper
        )));
    }
    Ok(())
}

/// Unchecked `rho` under an arbitrary saturation rule.
#[inline]
pub fn rho_with(a: f64, b: f64, rule: &SaturationRule) -> f64 {
    match rule.classify(b) {
        Saturation::Interior => (b - a).abs(),
        Saturation::Upper => (b - a).max(0.0),
        Saturation::Lower => (a - b).max(0.0),
    }
}

#[inline]
pub fn rho_sq_grad_with(a: f64, b: f64, rule: &SaturationRule) -> f64 {
    match rule.classify(b) {
        Saturation::Interior => 2.0 * (a - b),
        Saturation::Upper => -2.0 * (b - a).max(0.0),
        Saturation::Lower => 2.0 * (a - b).max(0.0),
    }
}

/// Keeps `y` on unsaturated entries and takes `net_out` on saturated ones.
pub fn blend(y: &Measurement, net_out: &Signal) -> Result<Signal> {
    blend_with(y, net_out, &SaturationRule::exact(y.spec))
}

pub fn blend_with(y: &Measurement, net_out: &Signal, rule: &SaturationRule) -> Result<Signal> {
    if y.len() != net_out.len() {
        return Err(Error::DimensionMismatch {
            expected: y.len(),
            got: net_out.len(),
        });
    }
    let values = y
        .values
        .iter()
        .zip(net_out.values())
        .map(|(&yj, &fj)| if rule.is_saturated(yj) { fj } else { yj })
        .collect();
    Ok(Signal {
        values,
        shape: net_out.shape.clone(),
    })
}

/// 8-bit quantization with saturation at 1: `floor(255 min(1, x) + 0.5) / 255`.
///
/// Inputs must be finite and nonnegative so the result is a valid
/// measurement under the `(0, 1)` clip spec.
pub fn quantize255(x: &Signal) -> Result<Measurement> {
    if let Some((j, v)) = x.values.iter().enumerate().find(|(_, v)| **v < 0.0) {
        return Err(Error::InvalidInput(format!(
            "quantizer input entry {j} = {v} is negative"
        )));
    }
    let values = x.values.iter().map(|&v| quantize255_value(v)).collect();
    Ok(Measurement {
        values,
        spec: ClipSpec {
            lower: 0.0,
            upper: 1.0,
        },
    })
}

#[inline]
pub fn quantize255_value(v: f64) -> f64 {
    (255.0 * v.min(1.0) + 0.5).floor() / 255.0
}

/// Camera response `(1 + sigma) u^beta / (u^beta + sigma)`.
pub fn camera_curve(u: &Signal, beta: f64, sigma: f64) -> Result<Signal> {
    if !(beta > 0.0) || !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "camera curve needs beta > 0 and sigma > 0, got beta={beta}, sigma={sigma}"
        )));
    }
    if let Some((j, v)) = u.values.iter().enumerate().find(|(_, v)| **v < 0.0) {
        return Err(Error::InvalidInput(format!(
            "camera curve input entry {j} = {v} is negative"
        )));
    }
    let values = u
        .values
        .iter()
        .map(|&uj| {
            let p = uj.powf(beta);
            (1.0 + sigma) * p / (p + sigma)
        })
        .collect();
    Ok(Signal {
        values,
        shape: u.shape.clone(),
    })
}
