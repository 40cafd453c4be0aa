//! Training objectives and their parameter gradients.
//!
//! All losses are sums over the batch and over entries. The forward model is
//! `y = eta(A x)` with `A` optional (identity when absent).

use ndarray::{Array2, ArrayView2, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward_ops::{rho_sq_grad_with, rho_with, SaturationRule};
use crate::network::{Mlp, MlpParams};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupSampler {
    pub g_min: f64,
    pub g_max: f64,
}

impl GroupSampler {
    pub fn new(g_min: f64, g_max: f64) -> Result<Self> {
        if !(g_min > 0.0 && g_min < g_max && g_max.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "group range needs 0 < g_min < g_max, got ({g_min}, {g_max})"
            )));
        }
        Ok(Self { g_min, g_max })
    }

    /// `rows x samples` matrix of uniform draws.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R, rows: usize, samples: usize) -> Array2<f64> {
        Array2::from_shape_simple_fn((rows, samples), || {
            rng::uniform(rng, self.g_min, self.g_max)
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda: f64,
    pub group: GroupSampler,
    pub ei_samples_per_item: usize,
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        GroupSampler::new(self.group.g_min, self.group.g_max)?;
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        if self.ei_samples_per_item == 0 {
            return Err(Error::InvalidArgument("need at least one group sample per item".into()));
        }
        Ok(())
    }
}

/// Clipping thresholds plus an optional `m x n` linear operator.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardModel {
    pub rule: SaturationRule,
    pub operator: Option<Array2<f64>>,
}

impl ForwardModel {
    pub fn clip_only(rule: SaturationRule) -> Self {
        Self { rule, operator: None }
    }

    pub fn with_operator(rule: SaturationRule, operator: Array2<f64>) -> Self {
        Self {
            rule,
            operator: Some(operator),
        }
    }

    /// `A x` for a batch (rows are signals).
    pub fn apply_operator(&self, x: ArrayView2<f64>) -> Array2<f64> {
        match &self.operator {
            Some(a) => x.dot(&a.t()),
            None => x.to_owned(),
        }
    }

    /// `d/dx` given `d/d(Ax)`.
    pub fn operator_adjoint(&self, g: Array2<f64>) -> Array2<f64> {
        match &self.operator {
            Some(a) => g.dot(a),
            None => g,
        }
    }

    /// `eta(A x)` row-wise.
    pub fn measure(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let spec = self.rule.spec;
        self.apply_operator(x).mapv(|v| spec.clip_value(v))
    }

    fn check(&self, net: &Mlp, y: ArrayView2<f64>) -> Result<()> {
        if y.nrows() == 0 {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        let cfg = net.config();
        let m = self.operator.as_ref().map_or(cfg.output_dim(), |a| a.nrows());
        if let Some(a) = &self.operator {
            if a.ncols() != cfg.output_dim() {
                return Err(Error::DimensionMismatch {
                    expected: cfg.output_dim(),
                    got: a.ncols(),
                });
            }
            if cfg.skip_blend {
                return Err(Error::InvalidArgument(
                    "blending is only defined without a measurement operator".into(),
                ));
            }
        }
        if y.ncols() != m || cfg.input_dim() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: y.ncols(),
            });
        }
        Ok(())
    }

    fn blend_rule(&self, net: &Mlp) -> Option<&SaturationRule> {
        net.config().skip_blend.then_some(&self.rule)
    }
}

#[derive(Debug, Clone)]
pub struct LossValue {
    pub value: f64,
    pub grads: MlpParams,
}

impl LossValue {
    fn combine(mut self, other: LossValue, weight: f64) -> LossValue {
        self.value += weight * other.value;
        self.grads.add_scaled(&other.grads, weight);
        self
    }
}

/// `sum ||y - eta(A f(y))||^2`; eta' is the indicator of the open interval.
pub fn loss_nmc(net: &Mlp, model: &ForwardModel, y: ArrayView2<f64>) -> Result<LossValue> {
    model.check(net, y)?;
    let spec = model.rule.spec;
    let (out, trace) = net.forward(y, model.blend_rule(net))?;
    let a = model.apply_operator(out.view());
    let mut value = 0.0;
    let mut grad_a = Array2::zeros(a.raw_dim());
    Zip::from(&mut grad_a).and(&a).and(y).for_each(|g, &a, &y| {
        let r = y - spec.clip_value(a);
        value += r * r;
        *g = -2.0 * r * spec.clip_derivative(a);
    });
    let (grads, _) = net.backward(&trace, model.operator_adjoint(grad_a).view())?;
    Ok(LossValue { value, grads })
}

/// `sum rho(A f(y), y)^2`.
pub fn loss_mc(net: &Mlp, model: &ForwardModel, y: ArrayView2<f64>) -> Result<LossValue> {
    model.check(net, y)?;
    let rule = &model.rule;
    let (out, trace) = net.forward(y, model.blend_rule(net))?;
    let a = model.apply_operator(out.view());
    let mut value = 0.0;
    let mut grad_a = Array2::zeros(a.raw_dim());
    Zip::from(&mut grad_a).and(&a).and(y).for_each(|g, &a, &y| {
        let r = rho_with(a, y, rule);
        value += r * r;
        *g = rho_sq_grad_with(a, y, rule);
    });
    let (grads, _) = net.backward(&trace, model.operator_adjoint(grad_a).view())?;
    Ok(LossValue { value, grads })
}

/// Monte Carlo estimate of `sum_i E_g ||g f(y_i) - f(eta(A g f(y_i)))||^2`
/// from the frozen draws `g` (`batch x samples`), averaged over samples.
///
/// Gradients flow through both network evaluations and through eta.
pub fn loss_ei(net: &Mlp, model: &ForwardModel, y: ArrayView2<f64>, g: ArrayView2<f64>) -> Result<LossValue> {
    model.check(net, y)?;
    if g.nrows() != y.nrows() || g.ncols() == 0 {
        return Err(Error::DimensionMismatch {
            expected: y.nrows(),
            got: g.nrows(),
        });
    }
    if g.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::InvalidArgument("group elements must be positive".into()));
    }
    let spec = model.rule.spec;
    let blend = model.blend_rule(net);
    let samples = g.ncols();
    let weight = 1.0 / samples as f64;

    let (z, trace1) = net.forward(y, blend)?;
    let mut value = 0.0;
    let mut grads = net.params().zeros_like();
    let mut grad_z = Array2::<f64>::zeros(z.raw_dim());
    for s in 0..samples {
        let gcol = g.column(s);
        let mut t = z.clone();
        for (mut row, &gi) in t.rows_mut().into_iter().zip(gcol.iter()) {
            row *= gi;
        }
        let u = model.apply_operator(t.view());
        let y2 = u.mapv(|v| spec.clip_value(v));
        let (w, trace2) = net.forward(y2.view(), blend)?;
        let r = &t - &w;
        value += weight * r.iter().map(|v| v * v).sum::<f64>();
        // dL/dw = -2r
        let (g2, dy2) = net.backward(&trace2, (&r * (-2.0 * weight)).view())?;
        grads.add_scaled(&g2, 1.0);
        let mut du = dy2;
        Zip::from(&mut du).and(&u).for_each(|d, &u| *d *= spec.clip_derivative(u));
        let mut dt = model.operator_adjoint(du);
        dt.scaled_add(2.0 * weight, &r);
        for ((mut acc, drow), &gi) in grad_z
            .rows_mut()
            .into_iter()
            .zip(dt.rows())
            .zip(gcol.iter())
        {
            acc.scaled_add(gi, &drow);
        }
    }
    let (g1, _) = net.backward(&trace1, grad_z.view())?;
    grads.add_scaled(&g1, 1.0);
    Ok(LossValue { value, grads })
}

/// `sum ||f(y) - x||^2`.
pub fn loss_supervised(net: &Mlp, model: &ForwardModel, x: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<LossValue> {
    model.check(net, y)?;
    if x.dim() != (y.nrows(), net.config().output_dim()) {
        return Err(Error::DimensionMismatch {
            expected: y.nrows() * net.config().output_dim(),
            got: x.len(),
        });
    }
    let (out, trace) = net.forward(y, model.blend_rule(net))?;
    let r = &out - &x;
    let value = r.iter().map(|v| v * v).sum();
    let (grads, _) = net.backward(&trace, (&r * 2.0).view())?;
    Ok(LossValue { value, grads })
}

/// `loss_mc + lambda * loss_ei`.
pub fn loss_combined(
    net: &Mlp,
    model: &ForwardModel,
    y: ArrayView2<f64>,
    config: &LossConfig,
    g: ArrayView2<f64>,
) -> Result<LossValue> {
    config.validate()?;
    let mc = loss_mc(net, model, y)?;
    if config.lambda == 0.0 {
        return Ok(mc);
    }
    Ok(mc.combine(loss_ei(net, model, y, g)?, config.lambda))
}

/// `loss_nmc + lambda * loss_ei`.
pub fn loss_nmc_ei(
    net: &Mlp,
    model: &ForwardModel,
    y: ArrayView2<f64>,
    config: &LossConfig,
    g: ArrayView2<f64>,
) -> Result<LossValue> {
    config.validate()?;
    let nmc = loss_nmc(net, model, y)?;
    if config.lambda == 0.0 {
        return Ok(nmc);
    }
    Ok(nmc.combine(loss_ei(net, model, y, g)?, config.lambda))
}

/// `loss_supervised + lambda * loss_ei`.
pub fn loss_supervised_ei(
    net: &Mlp,
    model: &ForwardModel,
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    config: &LossConfig,
    g: ArrayView2<f64>,
) -> Result<LossValue> {
    config.validate()?;
    let sup = loss_supervised(net, model, x, y)?;
    if config.lambda == 0.0 {
        return Ok(sup);
    }
    Ok(sup.combine(loss_ei(net, model, y, g)?, config.lambda))
}
