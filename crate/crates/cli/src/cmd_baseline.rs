use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Args;
use declip_core::baseline_hqs::{self, HqsConfig, ProxMode};
use declip_core::datasets::OperatorKind;
use declip_core::forward_ops::{ClipSpec, SaturationRule};
use declip_core::{metrics, rng};
use ndarray::Array2;

use crate::config::{self, BaselineFileConfig};
use crate::data;
use crate::Global;

#[derive(Debug, Args)]
pub struct BaselineArgs {
    /// Dataset CSV from `gen` (identity operator). Without it, DCT-sparse fixtures are generated.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Number of generated fixtures.
    #[arg(long)]
    fixtures: Option<usize>,
    /// Fixture length.
    #[arg(long)]
    n: Option<usize>,
    /// Active DCT coefficients per fixture.
    #[arg(long)]
    active: Option<usize>,
    /// Fraction of clipped entries per fixture.
    #[arg(long)]
    clip_fraction: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    /// First soft threshold; later ones decay by 0.8 per iteration.
    #[arg(long)]
    tau0: Option<f64>,
    #[arg(long, value_enum)]
    prox_mode: Option<ProxArg>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum ProxArg {
    Measured,
    Literal,
    Exact,
}

impl From<ProxArg> for ProxMode {
    fn from(p: ProxArg) -> Self {
        match p {
            ProxArg::Measured => ProxMode::Measured,
            ProxArg::Literal => ProxMode::Literal,
            ProxArg::Exact => ProxMode::Exact,
        }
    }
}

pub fn run(g: &Global, a: &BaselineArgs) -> Result<()> {
    let cfg: BaselineFileConfig = config::load_or_default(g.config.as_deref())?;
    let seed = g.seed_or(cfg.seed);
    let mut hqs = HqsConfig::geometric(
        a.iterations.or(cfg.iterations).unwrap_or(baseline_hqs::DEFAULT_ITERATIONS),
        a.gamma.or(cfg.gamma).unwrap_or(baseline_hqs::DEFAULT_GAMMA),
        a.tau0.or(cfg.tau0).unwrap_or(baseline_hqs::DEFAULT_TAU0),
    );
    hqs.prox_mode = a.prox_mode.map(Into::into).or(cfg.prox_mode).unwrap_or_default();
    hqs.validate()?;

    let (x, y, spec) = match a.input.clone().or(cfg.input) {
        Some(path) => {
            let ds = data::read_dataset(&path)?;
            if ds.meta.operator != OperatorKind::Identity {
                bail!("the HQS baseline needs measurements taken with the identity operator");
            }
            (ds.x, ds.y, ds.meta.clip_spec()?)
        }
        None => {
            let count = a.fixtures.or(cfg.fixtures).unwrap_or(20);
            let n = a.n.or(cfg.n).unwrap_or(256);
            let active = a.active.or(cfg.active).unwrap_or(5);
            let v = a.clip_fraction.or(cfg.clip_fraction).unwrap_or(0.2);
            let mut xs = Array2::zeros((count, n));
            let mut ys = Array2::zeros((count, n));
            for i in 0..count {
                let (x, y) = baseline_hqs::dct_sparse_fixture(n, active, v, 1.0, rng::derive_seed(seed, i as u64))?;
                xs.row_mut(i).assign(&ndarray::Array1::from(x));
                ys.row_mut(i).assign(&ndarray::Array1::from(y));
            }
            (Some(xs), ys, ClipSpec::symmetric(1.0)?)
        }
    };
    let rule = SaturationRule::exact(spec);
    let mut out = Array2::zeros(y.dim());
    for (i, row) in y.rows().into_iter().enumerate() {
        let res = baseline_hqs::hqs_declip(&row.to_vec(), &hqs, &rule)?;
        out.row_mut(i).assign(&ndarray::Array1::from(res.signal));
    }
    let declipped = g.out_file("baseline_declipped.csv")?;
    data::write_matrix(&declipped, "xhat", &out)?;
    println!("wrote {}", declipped.display());

    let Some(x) = x else {
        println!("no x_* columns in the input; SDR not computed");
        return Ok(());
    };
    let path = g.out_file("baseline.csv")?;
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["id", "sdr_identity", "sdr_method"])?;
    let (mut id_sum, mut hq_sum) = (0.0, 0.0);
    for i in 0..y.nrows() {
        let xi = x.row(i).to_vec();
        let id = metrics::sdr(&xi, &y.row(i).to_vec())?;
        let hq = metrics::sdr(&xi, &out.row(i).to_vec())?;
        id_sum += id;
        hq_sum += hq;
        w.write_record([i.to_string(), id.to_string(), hq.to_string()])?;
    }
    w.flush()?;
    let n = y.nrows() as f64;
    println!(
        "{} items: mean SDR identity {:.2} dB, HQS {:.2} dB; wrote {}",
        y.nrows(),
        id_sum / n,
        hq_sum / n,
        path.display()
    );
    Ok(())
}
