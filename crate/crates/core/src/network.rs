//! Fully connected ReLU network with hand-written reverse mode.
//!
//! Without biases the map is positively homogeneous, `f(g y) = g f(y)` for
//! `g > 0`. Batches are row-major: one signal per row.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward_ops::SaturationRule;
use crate::rng;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DCLP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpConfig {
    /// `[input, hidden..., output]`.
    pub widths: Vec<usize>,
    pub bias_free: bool,
    /// Pass the output through the saturation blend.
    pub skip_blend: bool,
}

impl MlpConfig {
    pub fn bias_free(widths: Vec<usize>) -> Self {
        Self {
            widths,
            bias_free: true,
            skip_blend: false,
        }
    }

    /// `depth` weight layers of width `n` mapping `R^n -> R^n`.
    pub fn square(n: usize, depth: usize) -> Self {
        Self::bias_free(vec![n; depth + 1])
    }

    pub fn with_blend(mut self, skip_blend: bool) -> Self {
        self.skip_blend = skip_blend;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "network needs at least input and output widths, got {:?}",
                self.widths
            )));
        }
        if self.widths.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "layer widths must be positive, got {:?}",
                self.widths
            )));
        }
        if self.skip_blend && self.input_dim() != self.output_dim() {
            return Err(Error::InvalidArgument(
                "blending needs equal input and output widths".into(),
            ));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("validated")
    }

    pub fn layers(&self) -> usize {
        self.widths.len() - 1
    }
}

/// Weight `l` has shape `(widths[l+1], widths[l])`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub weights: Vec<Array2<f64>>,
    pub biases: Option<Vec<Array1<f64>>>,
}

impl MlpParams {
    pub fn zeros_like(&self) -> Self {
        Self {
            weights: self.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: self
                .biases
                .as_ref()
                .map(|bs| bs.iter().map(|b| Array1::zeros(b.len())).collect()),
        }
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self
                .biases
                .as_ref()
                .map_or(0, |bs| bs.iter().map(|b| b.len()).sum())
    }

    /// Weights in layer order (row-major each), then biases.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for w in &self.weights {
            out.extend(w.iter());
        }
        if let Some(bs) = &self.biases {
            for b in bs {
                out.extend(b.iter());
            }
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::DimensionMismatch {
                expected: self.num_params(),
                got: flat.len(),
            });
        }
        let mut it = flat.iter();
        for w in &mut self.weights {
            w.iter_mut().for_each(|v| *v = *it.next().expect("length checked"));
        }
        if let Some(bs) = &mut self.biases {
            for b in bs {
                b.iter_mut().for_each(|v| *v = *it.next().expect("length checked"));
            }
        }
        Ok(())
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, other: &MlpParams, alpha: f64) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.scaled_add(alpha, b);
        }
        if let (Some(xs), Some(ys)) = (&mut self.biases, &other.biases) {
            for (a, b) in xs.iter_mut().zip(ys) {
                a.scaled_add(alpha, b);
            }
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.weights.iter_mut().for_each(|w| *w *= alpha);
        if let Some(bs) = &mut self.biases {
            bs.iter_mut().for_each(|b| *b *= alpha);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }

    fn same_shape(&self, other: &MlpParams) -> bool {
        self.weights.len() == other.weights.len()
            && self
                .weights
                .iter()
                .zip(&other.weights)
                .all(|(a, b)| a.dim() == b.dim())
            && match (&self.biases, &other.biases) {
                (None, None) => true,
                (Some(a), Some(b)) => a.iter().zip(b).all(|(x, y)| x.len() == y.len()),
                _ => false,
            }
    }
}

/// He initialisation, entries `N(0, 2 / fan_in)`; biases start at zero.
pub fn init_params(config: &MlpConfig, seed: u64) -> Result<MlpParams> {
    config.validate()?;
    let mut r = rng::stream(seed, 0);
    let weights = config
        .widths
        .windows(2)
        .map(|pair| {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let std = (2.0 / fan_in as f64).sqrt();
            Array2::from_shape_simple_fn((fan_out, fan_in), || std * rng::standard_normal(&mut r))
        })
        .collect();
    let biases = (!config.bias_free).then(|| {
        config.widths[1..]
            .iter()
            .map(|&w| Array1::zeros(w))
            .collect()
    });
    Ok(MlpParams { weights, biases })
}

/// Everything the backward pass needs from one forward call.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// `inputs[l]` is the input of layer `l`; `inputs[0]` is the batch.
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Array2<f64>>,
    /// 1.0 where the output entry came from the network, 0.0 where it was
    /// copied from the input. `None` without blending.
    blend_mask: Option<Array2<f64>>,
}

impl ForwardTrace {
    pub fn batch_size(&self) -> usize {
        self.inputs[0].nrows()
    }

    pub fn blend_mask(&self) -> Option<&Array2<f64>> {
        self.blend_mask.as_ref()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    config: MlpConfig,
    params: MlpParams,
}

impl Mlp {
    pub fn new(config: MlpConfig, params: MlpParams) -> Result<Self> {
        config.validate()?;
        let expected = init_shapes(&config);
        let got: Vec<(usize, usize)> = params.weights.iter().map(|w| w.dim()).collect();
        if expected != got {
            return Err(Error::InvalidArgument(format!(
                "weight shapes {got:?} do not match widths {:?}",
                config.widths
            )));
        }
        if params.biases.is_some() == config.bias_free {
            return Err(Error::InvalidArgument(
                "bias vectors must be present exactly when the net is biased".into(),
            ));
        }
        if let Some(bs) = &params.biases {
            if bs.iter().zip(&config.widths[1..]).any(|(b, &w)| b.len() != w) {
                return Err(Error::InvalidArgument("bias lengths do not match widths".into()));
            }
        }
        if !params.is_finite() {
            return Err(Error::InvalidInput("non-finite network parameter".into()));
        }
        Ok(Self { config, params })
    }

    pub fn init(config: MlpConfig, seed: u64) -> Result<Self> {
        let params = init_params(&config, seed)?;
        Self::new(config, params)
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn params(&self) -> &MlpParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut MlpParams {
        &mut self.params
    }

    pub fn into_params(self) -> MlpParams {
        self.params
    }

    /// Batched forward pass. `rule` is required iff the config blends.
    pub fn forward(
        &self,
        input: ArrayView2<f64>,
        rule: Option<&SaturationRule>,
    ) -> Result<(Array2<f64>, ForwardTrace)> {
        if input.ncols() != self.config.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.config.input_dim(),
                got: input.ncols(),
            });
        }
        let rule = match (self.config.skip_blend, rule) {
            (true, None) => {
                return Err(Error::InvalidArgument(
                    "blending network needs a saturation rule".into(),
                ))
            }
            (true, Some(r)) => Some(r),
            (false, _) => None,
        };
        let n_layers = self.config.layers();
        let mut inputs = Vec::with_capacity(n_layers);
        let mut pre = Vec::with_capacity(n_layers - 1);
        let mut h = input.to_owned();
        for (l, w) in self.params.weights.iter().enumerate() {
            let mut z = h.dot(&w.t());
            if let Some(bs) = &self.params.biases {
                z += &bs[l];
            }
            inputs.push(h);
            if l + 1 < n_layers {
                h = z.mapv(|v| if v > 0.0 { v } else { 0.0 });
                pre.push(z);
            } else {
                h = z;
            }
        }
        let blend_mask = rule.map(|rule| {
            let mask = input.mapv(|v| if rule.is_saturated(v) { 1.0 } else { 0.0 });
            Zip::from(&mut h)
                .and(&input)
                .and(&mask)
                .for_each(|o, &y, &b| {
                    if b == 0.0 {
                        *o = y;
                    }
                });
            mask
        });
        Ok((
            h,
            ForwardTrace {
                inputs,
                pre,
                blend_mask,
            },
        ))
    }

    pub fn apply(&self, input: ArrayView2<f64>, rule: Option<&SaturationRule>) -> Result<Array2<f64>> {
        Ok(self.forward(input, rule)?.0)
    }

    /// Reverse pass: gradients of a scalar loss w.r.t. the parameters and the
    /// input, given `grad_out = dL/d output`. ReLU'(0) is taken as 0.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        grad_out: ArrayView2<f64>,
    ) -> Result<(MlpParams, Array2<f64>)> {
        let n_layers = self.config.layers();
        let batch = trace.batch_size();
        if trace.inputs.len() != n_layers
            || trace.pre.len() + 1 != n_layers
            || trace
                .inputs
                .iter()
                .zip(&self.config.widths)
                .any(|(h, &w)| h.ncols() != w || h.nrows() != batch)
        {
            return Err(Error::InvalidArgument(
                "forward trace does not match this network".into(),
            ));
        }
        if grad_out.dim() != (batch, self.config.output_dim()) {
            return Err(Error::DimensionMismatch {
                expected: batch * self.config.output_dim(),
                got: grad_out.len(),
            });
        }
        let mut grads = self.params.zeros_like();
        let mut delta = match &trace.blend_mask {
            Some(mask) => &grad_out * mask,
            None => grad_out.to_owned(),
        };
        for l in (0..n_layers).rev() {
            grads.weights[l] = delta.t().dot(&trace.inputs[l]);
            if let Some(gb) = &mut grads.biases {
                gb[l] = delta.sum_axis(Axis(0));
            }
            let mut back = delta.dot(&self.params.weights[l]);
            if l > 0 {
                Zip::from(&mut back)
                    .and(&trace.pre[l - 1])
                    .for_each(|d, &z| {
                        if z <= 0.0 {
                            *d = 0.0;
                        }
                    });
            }
            delta = back;
        }
        if let Some(mask) = &trace.blend_mask {
            Zip::from(&mut delta)
                .and(&grad_out)
                .and(mask)
                .for_each(|d, &g, &b| *d += (1.0 - b) * g);
        }
        Ok((grads, delta))
    }
}

fn init_shapes(config: &MlpConfig) -> Vec<(usize, usize)> {
    config.widths.windows(2).map(|p| (p[1], p[0])).collect()
}

/// Writes a bias-free network: magic, version, layer count, widths, then the
/// row-major weights, all little-endian.
pub fn save_checkpoint(net: &Mlp, path: &Path) -> Result<()> {
    if net.params.biases.is_some() {
        return Err(Error::Checkpoint {
            path: path.to_path_buf(),
            reason: "the checkpoint format stores bias-free networks only".into(),
        });
    }
    let mut buf = Vec::with_capacity(16 + 8 * net.params.num_params());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(net.config.layers() as u32).to_le_bytes());
    for &w in &net.config.widths {
        buf.extend_from_slice(&(w as u32).to_le_bytes());
    }
    for v in net.params.to_flat() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Reads a checkpoint written by [`save_checkpoint`]. The blend flag is not
/// stored and has to be supplied.
pub fn load_checkpoint(path: &Path, skip_blend: bool) -> Result<Mlp> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: &str| Error::Checkpoint {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    if cur.take(4).ok_or_else(|| bad("truncated header"))? != CHECKPOINT_MAGIC {
        return Err(bad("bad magic bytes"));
    }
    let version = cur.u32().ok_or_else(|| bad("truncated header"))?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion {
            path: path.to_path_buf(),
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let layers = cur.u32().ok_or_else(|| bad("truncated header"))? as usize;
    if layers == 0 || layers > 1024 {
        return Err(bad("implausible layer count"));
    }
    let widths = (0..=layers)
        .map(|_| cur.u32().map(|w| w as usize))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| bad("truncated width table"))?;
    let config = MlpConfig {
        widths,
        bias_free: true,
        skip_blend,
    };
    config.validate().map_err(|e| bad(&e.to_string()))?;
    let shapes = init_shapes(&config);
    let total: usize = shapes.iter().map(|(a, b)| a * b).sum();
    if cur.remaining() != 8 * total {
        return Err(bad(&format!(
            "expected {} weight bytes, found {}",
            8 * total,
            cur.remaining()
        )));
    }
    let weights = shapes
        .iter()
        .map(|&(r, c)| {
            let vals: Vec<f64> = (0..r * c).map(|_| cur.f64().expect("length checked")).collect();
            Array2::from_shape_vec((r, c), vals).expect("shape matches length")
        })
        .collect();
    Mlp::new(config, MlpParams { weights, biases: None }).map_err(|e| bad(&e.to_string()))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let out = self.bytes.get(self.pos..self.pos + n)?;
        self.pos += n;
        Some(out)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Option<f64> {
        self.take(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

/// Checks `grads` against `params` shape; used by optimisers.
pub(crate) fn check_same_shape(params: &MlpParams, grads: &MlpParams) -> Result<()> {
    if params.same_shape(grads) {
        Ok(())
    } else {
        Err(Error::InvalidArgument("gradient shapes do not match parameters".into()))
    }
}
