use std::fs;

use anyhow::{bail, Context, Result};
use declip_core::datasets::{self, ConeSpec, OperatorKind, SubspaceSpec};
use declip_core::network::{self, Mlp, MlpConfig};
use declip_core::rng;
use declip_core::trainer::{self, EvalSet, TrainConfig, TrainingSet};

use crate::config::{self, DatasetKind, GenConfig, Preset, TrainFileConfig};
use crate::data::{self, DatasetMeta};
use crate::Global;

pub fn gen(g: &Global) -> Result<()> {
    let cfg: GenConfig = config::load(g.require_config("gen")?)?;
    let seed = g.seed_or(cfg.seed);
    let (x, meta) = match cfg.kind {
        DatasetKind::Subspace => {
            let s = cfg.subspace.as_ref().context("kind = \"subspace\" needs a [subspace] section")?;
            let spec = SubspaceSpec {
                ambient_dim: s.ambient_dim,
                subspace_dim: s.subspace_dim,
                clip_fraction: s.clip_fraction,
                threshold: s.threshold,
                count: cfg.count,
                seed,
            };
            let d = datasets::gen_subspace_dataset(&spec)?;
            let meta = DatasetMeta {
                kind: "subspace".into(),
                count: cfg.count,
                signal_dim: s.ambient_dim,
                measurement_dim: s.ambient_dim,
                seed,
                lower: -s.threshold,
                upper: s.threshold,
                operator: OperatorKind::Identity,
                operator_seed: 0,
                has_ground_truth: cfg.include_ground_truth,
                subspace_dim: Some(s.subspace_dim),
                clip_fraction: Some(s.clip_fraction),
                amplitude_mean: None,
                downsample: None,
            };
            (d.signals, meta)
        }
        DatasetKind::Cone => {
            let c = cfg.cone.as_ref().context("kind = \"cone\" needs a [cone] section")?;
            let base = datasets::downsample_square(&datasets::digit_fixture(), c.downsample)?;
            let n = base.len();
            let d = datasets::gen_cone(&ConeSpec {
                base_signal: base,
                amplitude_mean: c.amplitude_mean,
                count: cfg.count,
                seed,
            })?;
            let meta = DatasetMeta {
                kind: "cone".into(),
                count: cfg.count,
                signal_dim: n,
                measurement_dim: n,
                seed,
                lower: c.lower,
                upper: c.upper,
                operator: c.operator,
                operator_seed: rng::derive_seed(seed, 3),
                has_ground_truth: cfg.include_ground_truth,
                subspace_dim: None,
                clip_fraction: None,
                amplitude_mean: Some(c.amplitude_mean),
                downsample: Some(c.downsample),
            };
            (d.signals, meta)
        }
    };
    let y = meta.forward_model()?.measure(x.view());
    let path = g.out_file(&format!("{}.csv", cfg.name))?;
    data::write_dataset(&path, cfg.include_ground_truth.then_some(&x), &y, &meta)?;
    println!(
        "wrote {} ({} rows, n={}, m={}, seed={seed})",
        path.display(),
        meta.count,
        meta.signal_dim,
        meta.measurement_dim
    );
    Ok(())
}

pub fn train(g: &Global) -> Result<()> {
    let cfg: TrainFileConfig = config::load(g.require_config("train")?)?;
    let seed = g.seed_or(cfg.seed);
    let ds = data::read_dataset(&cfg.dataset)?;
    let model = ds.meta.forward_model()?;
    let base = match cfg.preset {
        Preset::Synthetic => TrainConfig::synthetic_defaults(trainer::LossMode::SelfMcEi, seed),
        Preset::Cone => TrainConfig::cone_defaults(trainer::LossMode::SelfMcEi, seed),
    };
    let train_cfg = cfg.training.apply(base)?;

    let count = ds.y.nrows();
    let (train_idx, test_idx) = if cfg.test_fraction > 0.0 {
        datasets::split_indices(count, 1.0 - cfg.test_fraction, seed)?
    } else {
        ((0..count).collect(), Vec::new())
    };
    let y_train = datasets::select_rows(ds.y.view(), &train_idx);
    let x_train = ds.x.as_ref().map(|x| datasets::select_rows(x.view(), &train_idx));
    let test = match (&ds.x, test_idx.is_empty()) {
        (Some(x), false) => Some((
            datasets::select_rows(x.view(), &test_idx),
            datasets::select_rows(ds.y.view(), &test_idx),
        )),
        _ => None,
    };

    let (m, n) = (ds.meta.measurement_dim, ds.meta.signal_dim);
    if cfg.network.depth == 0 {
        bail!("network depth must be at least 1");
    }
    let width = cfg.network.width.unwrap_or(n);
    let mut widths = vec![m];
    widths.extend(std::iter::repeat_n(width, cfg.network.depth - 1));
    widths.push(n);
    let net_cfg = MlpConfig::bias_free(widths).with_blend(cfg.network.skip_blend);
    let net = Mlp::init(net_cfg, rng::derive_seed(seed, 7))?;

    let set = match &x_train {
        Some(x) => TrainingSet::Paired { x: x.view(), y: y_train.view() },
        None => TrainingSet::MeasurementsOnly { y: y_train.view() },
    };
    let eval = test.as_ref().map(|(x, y)| EvalSet { x: x.view(), y: y.view() });
    let (net, report) = trainer::fit(&train_cfg, net, &model, set, eval)?;

    let ckpt = g.out_file(&format!("{}.ckpt", cfg.name))?;
    network::save_checkpoint(&net, &ckpt)?;
    let report_path = g.out_file(&format!("{}.report.csv", cfg.name))?;
    let file = fs::File::create(&report_path).with_context(|| format!("cannot write {}", report_path.display()))?;
    report.write_csv(file)?;
    let gp = g.out_file(&format!("{}.gp", cfg.name))?;
    fs::write(
        &gp,
        format!(
            "set datafile separator ','\nset key autotitle columnhead\nset xlabel 'epoch'\nset ylabel 'loss per item'\nset logscale y\nplot '{}.report.csv' using 1:2 with lines\n",
            cfg.name
        ),
    )?;
    let secs: f64 = report.epochs.iter().map(|e| e.wall_clock_s).sum();
    println!(
        "trained {:?} for {} epochs in {secs:.1} s, final loss {:.6e}; wrote {}",
        train_cfg.loss_mode,
        train_cfg.epochs,
        report.final_loss().unwrap_or(f64::NAN),
        ckpt.display()
    );
    match &test {
        Some((x, y)) => {
            let s = trainer::evaluate(&net, &model, x.view(), y.view())?;
            print!("test SDR {:.2} dB (std {:.2}, {} items)", s.mean, s.std, x.nrows());
            if ds.meta.operator == OperatorKind::Identity {
                print!(", identity {:.2} dB", trainer::identity_baseline(x.view(), y.view())?.mean);
            }
            println!();
        }
        None => println!("test SDR not computed (needs x_* columns and test_fraction > 0)"),
    }
    Ok(())
}
