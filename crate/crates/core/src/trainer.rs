//! Optimisation loop, evaluation and the `(k, v)` sweep.

use std::io::Write;
use std::time::Instant;

use ndarray::{Array2, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::{self, ConeSpec, SubspaceSpec};
use crate::error::{Error, Result};
use crate::forward_ops::{ClipSpec, SaturationRule};
use crate::losses::{self, ForwardModel, GroupSampler, LossConfig, LossValue};
use crate::metrics;
use crate::network::{self, Mlp, MlpConfig, MlpParams};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    Supervised,
    SupervisedPlusEi,
    SelfMcEi,
    McOnly,
    NmcEi,
}

impl LossMode {
    pub fn needs_ground_truth(self) -> bool {
        matches!(self, LossMode::Supervised | LossMode::SupervisedPlusEi)
    }

    fn uses_ei(self, lambda: f64) -> bool {
        lambda > 0.0 && matches!(self, LossMode::SupervisedPlusEi | LossMode::SelfMcEi | LossMode::NmcEi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub loss_mode: LossMode,
    pub loss_config: LossConfig,
    pub seed: u64,
    /// Evaluate every this many epochs (0 disables evaluation).
    pub eval_every: usize,
}

impl TrainConfig {
    /// Random-subspace experiment: lr 1e-4, 300 epochs, batch 100, lambda 1, g ~ U(0.5, 1.5).
    pub fn synthetic_defaults(loss_mode: LossMode, seed: u64) -> Self {
        Self {
            learning_rate: 1e-4,
            epochs: 300,
            batch_size: 100,
            loss_mode,
            loss_config: LossConfig {
                lambda: 1.0,
                group: GroupSampler { g_min: 0.5, g_max: 1.5 },
                ei_samples_per_item: 1,
            },
            seed,
            eval_every: 0,
        }
    }

    /// Cone experiment: lr 5e-4, 300 epochs, batch 50, lambda 1, g ~ U(0.1, 2).
    pub fn cone_defaults(loss_mode: LossMode, seed: u64) -> Self {
        Self {
            learning_rate: 5e-4,
            epochs: 300,
            batch_size: 50,
            loss_mode,
            loss_config: LossConfig {
                lambda: 1.0,
                group: GroupSampler { g_min: 0.1, g_max: 2.0 },
                ei_samples_per_item: 1,
            },
            seed,
            eval_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("epochs and batch size must be positive".into()));
        }
        self.loss_config.validate()
    }
}

/// Adam moments for one parameter set.
#[derive(Debug, Clone)]
pub struct OptState {
    pub m: MlpParams,
    pub v: MlpParams,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptState {
    pub fn new(params: &MlpParams) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut MlpParams, grads: &MlpParams, state: &mut OptState, lr: f64) -> Result<()> {
    network::check_same_shape(params, grads)?;
    network::check_same_shape(params, &state.m)?;
    state.step += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    let update = |p: &mut f64, &g: &f64, m: &mut f64, v: &mut f64| {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let mhat = *m / c1;
        let vhat = *v / c2;
        *p -= lr * mhat / (vhat.sqrt() + eps);
    };
    for (((p, g), m), v) in params
        .weights
        .iter_mut()
        .zip(&grads.weights)
        .zip(&mut state.m.weights)
        .zip(&mut state.v.weights)
    {
        Zip::from(p).and(g).and(m).and(v).for_each(update);
    }
    if let (Some(pb), Some(gb), Some(mb), Some(vb)) = (
        params.biases.as_mut(),
        grads.biases.as_ref(),
        state.m.biases.as_mut(),
        state.v.biases.as_mut(),
    ) {
        for (((p, g), m), v) in pb.iter_mut().zip(gb).zip(mb.iter_mut()).zip(vb.iter_mut()) {
            Zip::from(p).and(g).and(m).and(v).for_each(update);
        }
    }
    Ok(())
}

/// Training data. The self-supervised modes only ever read `y`.
#[derive(Debug, Clone, Copy)]
pub enum TrainingSet<'a> {
    Paired { x: ArrayView2<'a, f64>, y: ArrayView2<'a, f64> },
    MeasurementsOnly { y: ArrayView2<'a, f64> },
}

impl<'a> TrainingSet<'a> {
    pub fn measurements(&self) -> ArrayView2<'a, f64> {
        match *self {
            TrainingSet::Paired { y, .. } | TrainingSet::MeasurementsOnly { y } => y,
        }
    }

    fn ground_truth(&self) -> Option<ArrayView2<'a, f64>> {
        match *self {
            TrainingSet::Paired { x, .. } => Some(x),
            TrainingSet::MeasurementsOnly { .. } => None,
        }
    }
}

/// Held-out pairs used only for the reported metric.
#[derive(Debug, Clone, Copy)]
pub struct EvalSet<'a> {
    pub x: ArrayView2<'a, f64>,
    pub y: ArrayView2<'a, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss per item.
    pub loss: f64,
    /// Mean evaluation SDR, when evaluated.
    pub metric: Option<f64>,
    #[serde(skip)]
    pub wall_clock_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
}

impl TrainReport {
    /// CSV with columns `epoch,loss,metric` (timings are not written, so the
    /// file is reproducible).
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for rec in &self.epochs {
            out.serialize(rec)?;
        }
        out.flush().map_err(|e| Error::io("<report>", e))?;
        Ok(())
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|r| r.loss)
    }

    /// Mean of the last ten epoch losses is no larger than the loss at epoch 10.
    pub fn trailing_mean_not_above_epoch10(&self) -> Option<bool> {
        if self.epochs.len() < 10 {
            return None;
        }
        let tail = &self.epochs[self.epochs.len() - 10..];
        let mean = tail.iter().map(|r| r.loss).sum::<f64>() / 10.0;
        Some(mean <= self.epochs[9].loss)
    }
}

fn batch_loss(
    net: &Mlp,
    model: &ForwardModel,
    config: &TrainConfig,
    x: Option<ArrayView2<f64>>,
    y: ArrayView2<f64>,
    g: ArrayView2<f64>,
) -> Result<LossValue> {
    let lc = &config.loss_config;
    match config.loss_mode {
        LossMode::Supervised => losses::loss_supervised(net, model, x.expect("checked"), y),
        LossMode::SupervisedPlusEi => {
            losses::loss_supervised_ei(net, model, x.expect("checked"), y, lc, g)
        }
        LossMode::SelfMcEi => losses::loss_combined(net, model, y, lc, g),
        LossMode::McOnly => losses::loss_mc(net, model, y),
        LossMode::NmcEi => losses::loss_nmc_ei(net, model, y, lc, g),
    }
}

/// Trains `net` in place and returns it with a per-epoch report.
pub fn fit(
    config: &TrainConfig,
    mut net: Mlp,
    model: &ForwardModel,
    data: TrainingSet<'_>,
    eval: Option<EvalSet<'_>>,
) -> Result<(Mlp, TrainReport)> {
    config.validate()?;
    let y = data.measurements();
    let x = if config.loss_mode.needs_ground_truth() {
        let x = data.ground_truth().ok_or_else(|| {
            Error::MissingGroundTruth(format!(
                "loss mode {:?} needs paired signals",
                config.loss_mode
            ))
        })?;
        if x.nrows() != y.nrows() {
            return Err(Error::DimensionMismatch {
                expected: y.nrows(),
                got: x.nrows(),
            });
        }
        Some(x)
    } else {
        None
    };
    let count = y.nrows();
    if count == 0 {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    let shuffle_seed = rng::derive_seed(config.seed, 1);
    let group_seed = rng::derive_seed(config.seed, 2);
    let samples = config.loss_config.ei_samples_per_item;
    let uses_ei = config.loss_mode.uses_ei(config.loss_config.lambda);

    let mut opt = OptState::new(net.params());
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..count).collect();
    let mut step = 0usize;
    for epoch in 0..config.epochs {
        let started = Instant::now();
        order.sort_unstable();
        order.shuffle(&mut rng::stream(shuffle_seed, epoch as u64));
        let mut group_rng = rng::stream(group_seed, epoch as u64);
        let mut total = 0.0;
        for (batch_id, idx) in order.chunks(config.batch_size).enumerate() {
            let yb = y.select(Axis(0), idx);
            let xb = x.map(|x| x.select(Axis(0), idx));
            let g = if uses_ei {
                config.loss_config.group.draw(&mut group_rng, idx.len(), samples)
            } else {
                Array2::ones((idx.len(), 1))
            };
            let out = batch_loss(&net, model, config, xb.as_ref().map(|a| a.view()), yb.view(), g.view())?;
            if !out.value.is_finite() || !out.grads.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step,
                    epoch,
                    batch: batch_id,
                });
            }
            total += out.value;
            adam_step(net.params_mut(), &out.grads, &mut opt, config.learning_rate)?;
            step += 1;
        }
        let metric = match eval {
            Some(ev)
                if config.eval_every > 0
                    && ((epoch + 1) % config.eval_every == 0 || epoch + 1 == config.epochs) =>
            {
                Some(evaluate(&net, model, ev.x, ev.y)?.mean)
            }
            _ => None,
        };
        report.epochs.push(EpochRecord {
            epoch: epoch + 1,
            loss: total / count as f64,
            metric,
            wall_clock_s: started.elapsed().as_secs_f64(),
        });
    }
    Ok((net, report))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub mean: f64,
    pub std: f64,
    pub per_item: Vec<f64>,
}

impl EvalSummary {
    fn from_items(per_item: Vec<f64>) -> Result<Self> {
        let (mean, std) = metrics::mean_std(&per_item)?;
        Ok(Self { mean, std, per_item })
    }
}

/// SDR of `f(y)` (blended when the network blends) against `x`, per row.
pub fn evaluate(net: &Mlp, model: &ForwardModel, x: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<EvalSummary> {
    if y.nrows() == 0 {
        return Err(Error::InvalidInput("empty test set".into()));
    }
    let rule = net.config().skip_blend.then_some(&model.rule);
    let xhat = net.apply(y, rule)?;
    sdr_rows(x, xhat.view())
}

/// Scores the measurements themselves as reconstructions.
pub fn identity_baseline(x: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<EvalSummary> {
    if y.nrows() == 0 {
        return Err(Error::InvalidInput("empty test set".into()));
    }
    sdr_rows(x, y)
}

fn sdr_rows(x: ArrayView2<f64>, xhat: ArrayView2<f64>) -> Result<EvalSummary> {
    if x.dim() != xhat.dim() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: xhat.len(),
        });
    }
    let per_item = x
        .rows()
        .into_iter()
        .zip(xhat.rows())
        .map(|(a, b)| metrics::sdr(&a.to_vec(), &b.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    EvalSummary::from_items(per_item)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMethod {
    Identity,
    Supervised,
    SelfSupervised,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub ambient_dim: usize,
    pub count: usize,
    pub threshold: f64,
    pub train_fraction: f64,
    pub depth: usize,
    pub skip_blend: bool,
    /// Shared hyperparameters; the loss mode is set per method.
    pub train: TrainConfig,
    pub seed: u64,
}

impl SweepConfig {
    /// `n = 100`, `N = 1000`, `mu = 1`, 90/10 split, depth-5 MLP.
    pub fn synthetic_defaults(seed: u64) -> Self {
        Self {
            ambient_dim: 100,
            count: 1000,
            threshold: 1.0,
            train_fraction: 0.9,
            depth: 5,
            skip_blend: true,
            train: TrainConfig::synthetic_defaults(LossMode::SelfMcEi, seed),
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub k: usize,
    pub v: f64,
    pub method: SweepMethod,
    pub mean_sdr: f64,
    pub std_sdr: f64,
}

/// Trains supervised and self-supervised models for every `(k, v)` cell and
/// records mean test SDR together with the identity baseline.
///
/// Cells run on a pool of `workers` threads; results do not depend on it.
pub fn grid_sweep(ks: &[usize], vs: &[f64], config: &SweepConfig, workers: usize) -> Result<Vec<SweepRow>> {
    if ks.is_empty() || vs.is_empty() {
        return Err(Error::InvalidArgument("sweep needs at least one k and one v".into()));
    }
    let cells: Vec<(usize, usize, f64)> = ks
        .iter()
        .flat_map(|&k| vs.iter().map(move |&v| (k, v)))
        .enumerate()
        .map(|(i, (k, v))| (i, k, v))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot build worker pool: {e}")))?;
    let per_cell: Vec<Result<Vec<SweepRow>>> =
        pool.install(|| cells.par_iter().map(|&(i, k, v)| sweep_cell(i, k, v, config)).collect());
    let mut rows = Vec::with_capacity(3 * cells.len());
    for cell in per_cell {
        rows.extend(cell?);
    }
    // one block per method, cells in grid order
    rows.sort_by_key(|r| r.method as u8);
    Ok(rows)
}

fn sweep_cell(index: usize, k: usize, v: f64, config: &SweepConfig) -> Result<Vec<SweepRow>> {
    let cell_seed = rng::derive_seed(config.seed, index as u64);
    let spec = SubspaceSpec {
        ambient_dim: config.ambient_dim,
        subspace_dim: k,
        clip_fraction: v,
        threshold: config.threshold,
        count: config.count,
        seed: cell_seed,
    };
    let data = datasets::gen_subspace_dataset(&spec)?;
    let rule = SaturationRule::exact(ClipSpec::symmetric(config.threshold)?);
    let model = ForwardModel::clip_only(rule);
    let (train_idx, test_idx) = datasets::split_indices(config.count, config.train_fraction, cell_seed)?;
    let x_train = datasets::select_rows(data.signals.view(), &train_idx);
    let x_test = datasets::select_rows(data.signals.view(), &test_idx);
    let y_train = model.measure(x_train.view());
    let y_test = model.measure(x_test.view());

    let row = |method, s: EvalSummary| SweepRow {
        k,
        v,
        method,
        mean_sdr: s.mean,
        std_sdr: s.std,
    };
    let mut rows = vec![row(SweepMethod::Identity, identity_baseline(x_test.view(), y_test.view())?)];
    let net_cfg = MlpConfig::square(config.ambient_dim, config.depth).with_blend(config.skip_blend);
    for (method, mode) in [
        (SweepMethod::Supervised, LossMode::Supervised),
        (SweepMethod::SelfSupervised, LossMode::SelfMcEi),
    ] {
        let train_cfg = TrainConfig {
            loss_mode: mode,
            seed: cell_seed,
            ..config.train.clone()
        };
        let net = Mlp::init(net_cfg.clone(), rng::derive_seed(cell_seed, 7))?;
        let set = match mode {
            LossMode::Supervised => TrainingSet::Paired {
                x: x_train.view(),
                y: y_train.view(),
            },
            _ => TrainingSet::MeasurementsOnly { y: y_train.view() },
        };
        let (net, _) = fit(&train_cfg, net, &model, set, None)?;
        rows.push(row(method, evaluate(&net, &model, x_test.view(), y_test.view())?));
    }
    Ok(rows)
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush().map_err(|e| Error::io("<sweep>", e))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicRangeConfig {
    /// Block size applied to the 28x28 digit before building the cone.
    pub downsample: usize,
    pub count: usize,
    pub train_fraction: f64,
    pub amplitude_mean: f64,
    pub lower: f64,
    pub upper: f64,
    pub depth: usize,
    /// Shared hyperparameters; the loss mode is set per model.
    pub train: TrainConfig,
    pub seed: u64,
}

impl DynamicRangeConfig {
    /// 14x14 digit, `N = 1000`, mean-2 amplitudes, thresholds `(0, 0.4)`.
    pub fn cone_defaults(seed: u64) -> Self {
        Self {
            downsample: 2,
            count: 1000,
            train_fraction: 0.9,
            amplitude_mean: 2.0,
            lower: 0.0,
            upper: 0.4,
            depth: 3,
            train: TrainConfig::cone_defaults(LossMode::SelfMcEi, seed),
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DynamicRangeRow {
    pub amplitude: f64,
    pub dr_true: f64,
    pub dr_mc_ei: f64,
    pub dr_nmc_ei: f64,
}

impl DynamicRangeRow {
    pub fn relative_errors(&self) -> (f64, f64) {
        (
            (self.dr_mc_ei - self.dr_true).abs() / self.dr_true,
            (self.dr_nmc_ei - self.dr_true).abs() / self.dr_true,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicRangeReport {
    /// One row per test signal, sorted by amplitude.
    pub rows: Vec<DynamicRangeRow>,
    /// Smallest and largest training amplitude.
    pub train_range: (f64, f64),
}

impl DynamicRangeReport {
    /// Median relative dynamic-range error `(MC+EI, NMC+EI)` over test rows
    /// whose amplitude lies inside the training range.
    pub fn median_errors(&self) -> Result<(f64, f64)> {
        let (lo, hi) = self.train_range;
        let (mut a, mut b): (Vec<f64>, Vec<f64>) = self
            .rows
            .iter()
            .filter(|r| r.amplitude >= lo && r.amplitude <= hi)
            .map(DynamicRangeRow::relative_errors)
            .unzip();
        if a.is_empty() {
            return Err(Error::InvalidInput("no test amplitude inside the training range".into()));
        }
        Ok((median(&mut a), median(&mut b)))
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.rows {
            out.serialize(r)?;
        }
        out.flush().map_err(|e| Error::io("<dynamic range>", e))?;
        Ok(())
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_unstable_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Trains MC+EI and NMC+EI models on a scaled digit cone measured through a
/// Haar rotation and records the dynamic range of their reconstructions.
pub fn dynamic_range_experiment(config: &DynamicRangeConfig) -> Result<DynamicRangeReport> {
    let base = datasets::downsample_square(&datasets::digit_fixture(), config.downsample)?;
    let n = base.len();
    let cone = datasets::gen_cone(&ConeSpec {
        base_signal: base,
        amplitude_mean: config.amplitude_mean,
        count: config.count,
        seed: rng::derive_seed(config.seed, 4),
    })?;
    let op = datasets::haar_orthogonal(n, rng::derive_seed(config.seed, 3))?;
    let model = ForwardModel::with_operator(
        SaturationRule::exact(ClipSpec::new(config.lower, config.upper)?),
        op.matrix,
    );
    let (train_idx, test_idx) = datasets::split_indices(config.count, config.train_fraction, config.seed)?;
    let y_train = model.measure(datasets::select_rows(cone.signals.view(), &train_idx).view());
    let x_test = datasets::select_rows(cone.signals.view(), &test_idx);
    let y_test = model.measure(x_test.view());
    let train_amp = train_idx.iter().map(|&i| cone.amplitudes[i]);
    let train_range = train_amp.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), e| (lo.min(e), hi.max(e)));

    let net_cfg = MlpConfig::square(n, config.depth);
    let mut outputs = Vec::with_capacity(2);
    for mode in [LossMode::SelfMcEi, LossMode::NmcEi] {
        let train_cfg = TrainConfig {
            loss_mode: mode,
            ..config.train.clone()
        };
        let net = Mlp::init(net_cfg.clone(), rng::derive_seed(config.seed, 7))?;
        let (net, _) = fit(&train_cfg, net, &model, TrainingSet::MeasurementsOnly { y: y_train.view() }, None)?;
        outputs.push(net.apply(y_test.view(), None)?);
    }
    let mut rows = test_idx
        .iter()
        .enumerate()
        .map(|(t, &i)| {
            Ok(DynamicRangeRow {
                amplitude: cone.amplitudes[i],
                dr_true: metrics::dynamic_range(&x_test.row(t).to_vec())?,
                dr_mc_ei: metrics::dynamic_range(&outputs[0].row(t).to_vec())?,
                dr_nmc_ei: metrics::dynamic_range(&outputs[1].row(t).to_vec())?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| a.amplitude.total_cmp(&b.amplitude));
    Ok(DynamicRangeReport { rows, train_range })
}
