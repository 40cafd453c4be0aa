use anyhow::Result;
use clap::{Args, Subcommand};
use declip_core::datasets::OperatorKind;
use declip_core::forward_ops::{ClipSpec, SaturationRule};
use declip_core::rng;
use declip_core::theory_lab::{self, InjectivityTrialSpec, L1Spec};

use crate::config::{self, TheoryFileConfig};
use crate::Global;

#[derive(Debug, Args)]
pub struct TheoryArgs {
    #[command(subcommand)]
    pub which: Theory,
}

#[derive(Debug, Subcommand)]
pub enum Theory {
    /// Collision rate of eta(A .) on a bounded cone, per measurement count.
    Injectivity(InjectivityArgs),
    /// Empirical vs analytic fraction of saturated Gaussian measurements.
    Saturation(SaturationArgs),
    /// Violation rate of ||A z||_1 <= sqrt(m) on a random subspace.
    L1(L1Args),
    /// Recover ray directions from clipped samples.
    Identify(IdentifyArgs),
    /// Box-counting dimension estimate on a sphere sample.
    Boxdim(BoxdimArgs),
    /// Recovery radius bound per measurement count.
    Radius(RadiusArgs),
}

#[derive(Debug, Args)]
pub struct InjectivityArgs {
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    m: Vec<usize>,
    #[arg(long)]
    mu: Option<f64>,
    /// Ball radius as a fraction of the radius bound.
    #[arg(long)]
    fraction: Option<f64>,
    #[arg(long)]
    pairs: Option<usize>,
    #[arg(long, value_enum)]
    operator: Option<OperatorArg>,
    /// Use the axis cone (norms in (mu, 4 mu], m = n) instead of a random subspace.
    #[arg(long)]
    axis: bool,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum OperatorArg {
    GaussianUnit,
    GaussianScaled,
    HaarOrthogonal,
    Identity,
}

impl From<OperatorArg> for OperatorKind {
    fn from(o: OperatorArg) -> Self {
        match o {
            OperatorArg::GaussianUnit => OperatorKind::GaussianUnit,
            OperatorArg::GaussianScaled => OperatorKind::GaussianScaled,
            OperatorArg::HaarOrthogonal => OperatorKind::HaarOrthogonal,
            OperatorArg::Identity => OperatorKind::Identity,
        }
    }
}

#[derive(Debug, Args)]
pub struct SaturationArgs {
    /// Signal norms ||x||.
    #[arg(long, value_delimiter = ',')]
    norm: Vec<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
}

#[derive(Debug, Args)]
pub struct L1Args {
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    m: Vec<usize>,
    #[arg(long)]
    operators: Option<usize>,
    /// Samples per operator.
    #[arg(long)]
    samples: Option<usize>,
}

#[derive(Debug, Args)]
pub struct IdentifyArgs {
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    mu: Option<f64>,
    /// Use the two-cone counterexample with thresholds `MU1,MU2` (0 < MU1 < MU2).
    #[arg(long, value_delimiter = ',')]
    counterexample: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct BoxdimArgs {
    /// Sphere dimension.
    #[arg(long)]
    dim: Option<usize>,
    /// Ambient dimension.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    eps: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct RadiusArgs {
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    m: Vec<usize>,
    #[arg(long)]
    mu: Option<f64>,
}

fn list<T: Clone>(flag: &[T], cfg: &Option<Vec<T>>, default: &[T]) -> Vec<T> {
    if !flag.is_empty() {
        flag.to_vec()
    } else {
        cfg.clone().unwrap_or_else(|| default.to_vec())
    }
}

fn write_csv(g: &Global, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let path = g.out_file(name)?;
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    println!("wrote {}", path.display());
    Ok(())
}

pub fn run(g: &Global, args: &TheoryArgs) -> Result<()> {
    let cfg: TheoryFileConfig = config::load_or_default(g.config.as_deref())?;
    let seed = g.seed_or(cfg.seed);
    match &args.which {
        Theory::Injectivity(a) => {
            let k = a.k.or(cfg.k).unwrap_or(2);
            let mu = a.mu.or(cfg.mu).unwrap_or(1.0);
            let pairs = a.pairs.or(cfg.pairs).unwrap_or(10_000);
            let operator: Option<OperatorKind> = a.operator.map(Into::into).or(cfg.operator);
            let mut rows = Vec::new();
            let specs: Vec<InjectivityTrialSpec> = if a.axis {
                let n = a.n.or(cfg.n).unwrap_or(32);
                let op = operator.unwrap_or(OperatorKind::Identity);
                vec![InjectivityTrialSpec::axis(n, mu, op, pairs, seed)]
            } else {
                let n = a.n.or(cfg.n).unwrap_or(10);
                let fraction = a.fraction.or(cfg.fraction).unwrap_or(0.5);
                list(&a.m, &cfg.m, &[20, 40, 80, 160])
                    .into_iter()
                    .map(|m| {
                        let mut s =
                            InjectivityTrialSpec::gaussian(k, n, m, mu, fraction, pairs, rng::derive_seed(seed, m as u64))?;
                        if let Some(op) = operator {
                            s.operator = op;
                        }
                        Ok(s)
                    })
                    .collect::<Result<_>>()?
            };
            for spec in &specs {
                let r = theory_lab::injectivity_trial(spec, g.workers)?;
                println!(
                    "m={}: {} collisions in {} pairs (rate {}), mean saturated fraction {:.4}",
                    spec.measurement_m, r.collisions, r.pairs_tested, r.collision_rate, r.mean_saturated_fraction
                );
                rows.push(vec![
                    spec.measurement_m.to_string(),
                    r.pairs_tested.to_string(),
                    r.collisions.to_string(),
                    r.collision_rate.to_string(),
                    r.mean_saturated_fraction.to_string(),
                    r.min_residual.to_string(),
                ]);
            }
            write_csv(
                g,
                "injectivity.csv",
                &["m", "pairs", "collisions", "collision_rate", "mean_saturated_fraction", "min_residual"],
                &rows,
            )
        }
        Theory::Saturation(a) => {
            let mu = a.mu.or(cfg.mu).unwrap_or(1.0);
            let m = a.m.or(cfg.m.as_ref().and_then(|v| v.first().copied())).unwrap_or(1000);
            let trials = a.trials.or(cfg.trials).unwrap_or(100);
            let mut rows = Vec::new();
            for norm in list(&a.norm, &cfg.norm, &[1.0]) {
                let s = theory_lab::saturation_fraction(norm, mu, m, trials, seed)?;
                println!("norm={norm} mu={mu}: empirical {:.4}, analytic {:.4}", s.empirical, s.analytic);
                rows.push(vec![norm.to_string(), mu.to_string(), s.empirical.to_string(), s.analytic.to_string()]);
            }
            write_csv(g, "saturation.csv", &["norm", "mu", "empirical", "analytic"], &rows)
        }
        Theory::L1(a) => {
            let spec = L1Spec {
                cone_dim: a.k.or(cfg.k).unwrap_or(2),
                ambient_n: a.n.or(cfg.n).unwrap_or(50),
                operators: a.operators.or(cfg.operators).unwrap_or(100),
                samples_per_operator: a.samples.or(cfg.samples).unwrap_or(100),
                seed,
            };
            let mut rows = Vec::new();
            for r in theory_lab::l1_concentration(&spec, &list(&a.m, &cfg.m, &[100, 400]))? {
                println!(
                    "m={}: violation rate {:.4} over {} samples, mean l1 {:.3} (expected {:.3})",
                    r.m, r.violation_rate, r.samples, r.mean_l1, r.expected_mean
                );
                rows.push(vec![
                    r.m.to_string(),
                    r.samples.to_string(),
                    r.violation_rate.to_string(),
                    r.mean_l1.to_string(),
                    r.expected_mean.to_string(),
                ]);
            }
            write_csv(g, "l1.csv", &["m", "samples", "violation_rate", "mean_l1", "expected_mean"], &rows)
        }
        Theory::Identify(a) => {
            let count = a.count.or(cfg.count).unwrap_or(10_000);
            if !matches!(a.counterexample.len(), 0 | 2) {
                anyhow::bail!("--counterexample takes exactly two thresholds MU1,MU2");
            }
            let (y, rule, truth) = if let [mu1, mu2] = a.counterexample[..] {
                let rule = SaturationRule::exact(ClipSpec::new(mu1, mu2)?);
                let [x, _] = theory_lab::counterexample_rays(mu1, mu2, count, seed)?;
                (x.mapv(|v| rule.spec.clip_value(v)), rule, None)
            } else {
                let mu = a.mu.or(cfg.mu).unwrap_or(1.0);
                let rule = SaturationRule::exact(ClipSpec::symmetric(mu)?);
                let (x, truth) = theory_lab::two_ray_fixture(count, seed)?;
                (x.mapv(|v| rule.spec.clip_value(v)), rule, Some(truth))
            };
            let dirs = theory_lab::conic_extension(y.view(), &rule, 1e-3)?;
            match &truth {
                Some(t) => println!(
                    "recovered {} directions, Hausdorff distance to the true rays {:.3e}",
                    dirs.len(),
                    theory_lab::hausdorff(&dirs, t)?
                ),
                None => println!("recovered {} directions", dirs.len()),
            }
            let rows: Vec<Vec<String>> = dirs.iter().map(|d| d.iter().map(f64::to_string).collect()).collect();
            let header: Vec<String> = (0..dirs[0].len()).map(|j| format!("u_{j}")).collect();
            let header: Vec<&str> = header.iter().map(String::as_str).collect();
            write_csv(g, "identify.csv", &header, &rows)
        }
        Theory::Boxdim(a) => {
            let dim = a.dim.or(cfg.dim).unwrap_or(1);
            let n = a.n.or(cfg.n).unwrap_or(dim + 1);
            let count = a.count.or(cfg.count).unwrap_or(4000);
            let eps = list(&a.eps, &cfg.eps, &[0.05, 0.1, 0.2]);
            let pts = theory_lab::sphere_points(dim, n, count, seed)?;
            let mut rows = Vec::new();
            for &e in &eps {
                rows.push(vec![e.to_string(), theory_lab::covering_number(pts.view(), e)?.to_string()]);
            }
            let d = theory_lab::box_dim_estimate(pts.view(), &eps)?;
            println!("sphere S^{dim} in R^{n}, {count} points: box dimension estimate {d:.3}");
            write_csv(g, "boxdim.csv", &["eps", "covering_number"], &rows)
        }
        Theory::Radius(a) => {
            let k = a.k.or(cfg.k).unwrap_or(2);
            let mu = a.mu.or(cfg.mu).unwrap_or(1.0);
            let mut rows = Vec::new();
            for m in list(&a.m, &cfg.m, &[20, 40, 80, 160]) {
                let r = theory_lab::radius_bound(k, m, mu)?;
                println!("k={k} m={m} mu={mu}: radius bound {r}");
                rows.push(vec![k.to_string(), m.to_string(), mu.to_string(), r.to_string()]);
            }
            write_csv(g, "radius.csv", &["k", "m", "mu", "radius"], &rows)
        }
    }
}
