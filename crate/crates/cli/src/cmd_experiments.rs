use std::fs;

use anyhow::{Context, Result};
use declip_core::trainer::{self, DynamicRangeConfig, SweepConfig, SweepMethod};

use crate::config::{self, DynamicRangeFileConfig, SweepFileConfig};
use crate::Global;

pub fn sweep(g: &Global) -> Result<()> {
    let cfg: SweepFileConfig = config::load_or_default(g.config.as_deref())?;
    let seed = g.seed_or(cfg.seed);
    let d = SweepConfig::synthetic_defaults(seed);
    let sweep = SweepConfig {
        ambient_dim: cfg.ambient_dim.unwrap_or(d.ambient_dim),
        count: cfg.count.unwrap_or(d.count),
        threshold: cfg.threshold.unwrap_or(d.threshold),
        train_fraction: cfg.train_fraction.unwrap_or(d.train_fraction),
        depth: cfg.depth.unwrap_or(d.depth),
        skip_blend: cfg.skip_blend.unwrap_or(d.skip_blend),
        train: cfg.training.apply(d.train.clone())?,
        seed,
    };
    let rows = trainer::grid_sweep(&cfg.ks, &cfg.vs, &sweep, g.workers)?;
    let path = g.out_file("sweep.csv")?;
    let file = fs::File::create(&path).with_context(|| format!("cannot write {}", path.display()))?;
    trainer::write_sweep_csv(&rows, file)?;
    for k in &cfg.ks {
        for v in &cfg.vs {
            let get = |m| {
                rows.iter()
                    .find(|r| r.k == *k && r.v == *v && r.method == m)
                    .map_or(f64::NAN, |r| r.mean_sdr)
            };
            println!(
                "k={k} v={v}: identity {:.2} dB, supervised {:.2} dB, self-supervised {:.2} dB",
                get(SweepMethod::Identity),
                get(SweepMethod::Supervised),
                get(SweepMethod::SelfSupervised)
            );
        }
    }
    println!("wrote {}", path.display());
    Ok(())
}

pub fn dynamic_range(g: &Global) -> Result<()> {
    let cfg: DynamicRangeFileConfig = config::load_or_default(g.config.as_deref())?;
    let seed = g.seed_or(cfg.seed);
    let d = DynamicRangeConfig::cone_defaults(seed);
    let exp = DynamicRangeConfig {
        downsample: cfg.downsample.unwrap_or(d.downsample),
        count: cfg.count.unwrap_or(d.count),
        train_fraction: cfg.train_fraction.unwrap_or(d.train_fraction),
        amplitude_mean: cfg.amplitude_mean.unwrap_or(d.amplitude_mean),
        lower: cfg.lower.unwrap_or(d.lower),
        upper: cfg.upper.unwrap_or(d.upper),
        depth: cfg.depth.unwrap_or(d.depth),
        train: cfg.training.apply(d.train.clone())?,
        seed,
    };
    let report = trainer::dynamic_range_experiment(&exp)?;
    let path = g.out_file("dynamic_range.csv")?;
    let file = fs::File::create(&path).with_context(|| format!("cannot write {}", path.display()))?;
    report.write_csv(file)?;
    fs::write(
        g.out_file("dynamic_range.gp")?,
        "set datafile separator ','\nset key autotitle columnhead left\nset xlabel 'dynamic range of x'\nset ylabel 'dynamic range of f(y)'\nplot 'dynamic_range.csv' using 2:3 with points, '' using 2:4 with points, x with lines title 'identity'\n",
    )?;
    let (mc, nmc) = report.median_errors()?;
    println!(
        "median relative dynamic-range error: MC+EI {mc:.4}, NMC+EI {nmc:.4} (train amplitudes {:.3}..{:.3}); wrote {}",
        report.train_range.0,
        report.train_range.1,
        path.display()
    );
    Ok(())
}
