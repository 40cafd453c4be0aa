//! Dataset CSV files and their `.meta.toml` sidecars.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use declip_core::datasets::{OperatorKind, RandomOperator};
use declip_core::forward_ops::{ClipSpec, SaturationRule};
use declip_core::losses::ForwardModel;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub kind: String,
    pub count: usize,
    /// Signal dimension `n`.
    pub signal_dim: usize,
    /// Measurement dimension `m`.
    pub measurement_dim: usize,
    pub seed: u64,
    pub lower: f64,
    pub upper: f64,
    pub operator: OperatorKind,
    pub operator_seed: u64,
    pub has_ground_truth: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subspace_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude_mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub downsample: Option<usize>,
}

impl DatasetMeta {
    pub fn clip_spec(&self) -> Result<ClipSpec> {
        Ok(ClipSpec::new(self.lower, self.upper)?)
    }

    pub fn operator(&self) -> Result<RandomOperator> {
        Ok(RandomOperator::build(
            self.operator,
            self.measurement_dim,
            self.signal_dim,
            self.operator_seed,
        )?)
    }

    /// Forward model with the exact (synthetic) saturation rule.
    pub fn forward_model(&self) -> Result<ForwardModel> {
        let rule = SaturationRule::exact(self.clip_spec()?);
        Ok(match self.operator {
            OperatorKind::Identity => ForwardModel::clip_only(rule),
            _ => ForwardModel::with_operator(rule, self.operator()?.matrix),
        })
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: Option<Array2<f64>>,
    pub y: Array2<f64>,
    pub meta: DatasetMeta,
}

pub fn meta_path(csv: &Path) -> PathBuf {
    csv.with_extension("meta.toml")
}

/// Writes `x_*` columns (when present) followed by `y_*` columns, plus the sidecar.
pub fn write_dataset(path: &Path, x: Option<&Array2<f64>>, y: &Array2<f64>, meta: &DatasetMeta) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    let mut header: Vec<String> = Vec::new();
    if let Some(x) = x {
        header.extend((0..x.ncols()).map(|j| format!("x_{j}")));
    }
    header.extend((0..y.ncols()).map(|j| format!("y_{j}")));
    w.write_record(&header)?;
    for i in 0..y.nrows() {
        let mut row: Vec<String> = Vec::with_capacity(header.len());
        if let Some(x) = x {
            row.extend(x.row(i).iter().map(f64::to_string));
        }
        row.extend(y.row(i).iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    let meta_file = meta_path(path);
    fs::write(&meta_file, toml::to_string(meta)?).with_context(|| format!("cannot write {}", meta_file.display()))?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let meta_file = meta_path(path);
    let text = fs::read_to_string(&meta_file).with_context(|| format!("cannot read {}", meta_file.display()))?;
    let meta: DatasetMeta = toml::from_str(&text).with_context(|| format!("bad metadata {}", meta_file.display()))?;
    let mut r = csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
    let header = r.headers()?.clone();
    let mut x_cols = Vec::new();
    let mut y_cols = Vec::new();
    for (c, name) in header.iter().enumerate() {
        match name.split_once('_') {
            Some(("x", _)) => x_cols.push(c),
            Some(("y", _)) => y_cols.push(c),
            _ => bail!("unexpected column {name:?} in {}", path.display()),
        }
    }
    if y_cols.len() != meta.measurement_dim {
        bail!("{} has {} y columns, metadata says {}", path.display(), y_cols.len(), meta.measurement_dim);
    }
    if !x_cols.is_empty() && x_cols.len() != meta.signal_dim {
        bail!("{} has {} x columns, metadata says {}", path.display(), x_cols.len(), meta.signal_dim);
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut rows = 0;
    for rec in r.records() {
        let rec = rec?;
        let parse = |c: usize| -> Result<f64> {
            rec[c].parse::<f64>().with_context(|| format!("row {rows}: bad number {:?}", &rec[c]))
        };
        for &c in &x_cols {
            xs.push(parse(c)?);
        }
        for &c in &y_cols {
            ys.push(parse(c)?);
        }
        rows += 1;
    }
    let y = Array2::from_shape_vec((rows, y_cols.len()), ys)?;
    let x = if x_cols.is_empty() {
        None
    } else {
        Some(Array2::from_shape_vec((rows, x_cols.len()), xs)?)
    };
    Ok(Dataset { x, y, meta })
}

/// Writes a matrix with `prefix_j` column names.
pub fn write_matrix(path: &Path, prefix: &str, a: &Array2<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    w.write_record((0..a.ncols()).map(|j| format!("{prefix}_{j}")))?;
    for row in a.rows() {
        w.write_record(row.iter().map(f64::to_string))?;
    }
    w.flush()?;
    Ok(())
}
