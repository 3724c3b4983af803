//! Error metrics and experiment drivers.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cur::Sampling;
use crate::error::{Error, Result};
use crate::factorize::{factorize, FactorizeOptions};
use crate::ingest::{build_cooccurrence_tensor, synth_events, CooccurrenceOptions, SynthProfile};
use crate::model::HTuckerModel;
use crate::tensor::SparseTensor;
use crate::tree::{DimensionTree, Linkage};

/// Default sample size for [`sampled_nnz_error`].
pub const DEFAULT_EVAL_SAMPLE: usize = 50_000;

/// Default number of seeds averaged per setting.
pub const DEFAULT_SEED_RUNS: usize = 10;

/// `‖T − reconstruct(model)‖_F` over the full index space.
pub fn frobenius_error(tensor: &SparseTensor, model: &HTuckerModel, cap: u64) -> Result<f64> {
    if tensor.dims() != model.dims() {
        return Err(Error::InvalidArgument(format!(
            "tensor dims {:?} differ from model dims {:?}",
            tensor.dims(),
            model.dims()
        )));
    }
    let mut block = model.reconstruct_full(cap)?;
    for (idx, v) in tensor.iter() {
        let mut lin = 0usize;
        let mut stride = 1usize;
        for (&i, &n) in idx.iter().zip(tensor.dims()) {
            lin += (i - 1) as usize * stride;
            stride *= n as usize;
        }
        block.data[lin] -= v;
    }
    Ok(block.data.iter().map(|x| x * x).sum::<f64>().sqrt())
}

/// Error norm over a uniform sample of stored entries (the whole support
/// when `nnz <= sample_size`).
pub fn sampled_nnz_error(
    tensor: &SparseTensor,
    model: &HTuckerModel,
    sample_size: usize,
    seed: u64,
) -> Result<f64> {
    if sample_size == 0 {
        return Err(Error::InvalidArgument(
            "sample size must be at least 1".into(),
        ));
    }
    let nnz = tensor.nnz();
    let mut picks: Vec<usize> = if nnz <= sample_size {
        (0..nnz).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rand::seq::index::sample(&mut rng, nnz, sample_size).into_vec()
    };
    picks.sort_unstable();
    let mut acc = 0.0;
    for e in picks {
        let d = tensor.value(e) - model.query_element(tensor.index(e))?;
        acc += d * d;
    }
    Ok(acc.sqrt())
}

/// Peak resident set size of this process in bytes, if the platform
/// exposes it.
pub fn peak_rss_bytes() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

/// Best-effort reset of the peak RSS counter.
pub fn reset_peak_rss() -> bool {
    std::fs::write("/proc/self/clear_refs", "5").is_ok()
}

/// One measurement with the parameters that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub metric: String,
    pub value: Option<f64>,
    pub nnz: usize,
    pub order: usize,
    pub epsilon: Option<f64>,
    pub seed: u64,
    pub workers: usize,
    pub sampled_fibers: Option<usize>,
    pub storage: Option<usize>,
    pub wall_seconds: Option<f64>,
    pub peak_rss_bytes: Option<u64>,
    pub status: String,
}

/// Writes reports as CSV with a header row, in field order.
pub fn write_reports<W: std::io::Write>(reports: &[EvalReport], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in reports {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_reports<R: std::io::Read>(r: R) -> Result<Vec<EvalReport>> {
    let mut rdr = csv::Reader::from_reader(r);
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// Tensor input of a series item.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorSource {
    File(PathBuf),
    /// Synthetic events over all profile modes.
    Profile(SynthProfile),
    Tensor(SparseTensor),
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreeSpec {
    Balanced,
    DataDriven(Linkage),
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeriesItem {
    pub label: String,
    pub tensor: TensorSource,
    pub tree: TreeSpec,
    pub epsilon: f64,
}

impl SeriesItem {
    fn load_tensor(&self, seed: u64) -> Result<SparseTensor> {
        match &self.tensor {
            TensorSource::File(p) => SparseTensor::load(p),
            TensorSource::Profile(p) => {
                let ev = synth_events(p, seed)?;
                build_cooccurrence_tensor(&ev, &p.mode_names(), &CooccurrenceOptions::default())
            }
            TensorSource::Tensor(t) => Ok(t.clone()),
        }
    }

    fn build_tree(&self, tensor: &SparseTensor) -> Result<DimensionTree> {
        match &self.tree {
            TreeSpec::Balanced => DimensionTree::balanced(tensor.order()),
            TreeSpec::DataDriven(l) => DimensionTree::data_driven(tensor, *l),
            TreeSpec::File(p) => DimensionTree::load(p),
        }
    }
}

/// Parses a series file: one item per line as whitespace-separated
/// `key=value` pairs. Keys: `tensor` or `profile` (paths, relative to the
/// series file), `tree` (`balanced`, `data-driven`, or a tree file path),
/// `linkage`, `epsilon` (default 0.6) and `label`.
pub fn parse_series(text: &str, path: &Path) -> Result<Vec<SeriesItem>> {
    let base = path.parent().unwrap_or(Path::new(""));
    let mut items = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let perr = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            msg,
        };
        let line = line.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let mut tensor = None;
        let mut tree = "balanced".to_string();
        let mut linkage = Linkage::default();
        let mut epsilon = 0.6;
        let mut label = None;
        for field in line.split_whitespace() {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| perr(format!("expected key=value, got `{field}`")))?;
            match k {
                "tensor" => tensor = Some(TensorSource::File(base.join(v))),
                "profile" => {
                    tensor = Some(TensorSource::Profile(SynthProfile::load(&base.join(v))?))
                }
                "tree" => tree = v.to_string(),
                "linkage" => linkage = v.parse().map_err(|e: Error| perr(e.to_string()))?,
                "epsilon" => {
                    epsilon = v.parse().map_err(|e| perr(format!("epsilon: {e}")))?;
                    if !(epsilon > 0.0) {
                        return Err(perr("epsilon must be positive".into()));
                    }
                }
                "label" => label = Some(v.to_string()),
                _ => return Err(perr(format!("unknown key `{k}`"))),
            }
        }
        let tensor = tensor.ok_or_else(|| perr("missing tensor= or profile=".into()))?;
        let tree = match tree.as_str() {
            "balanced" => TreeSpec::Balanced,
            "data-driven" => TreeSpec::DataDriven(linkage),
            p => TreeSpec::File(base.join(p)),
        };
        items.push(SeriesItem {
            label: label.unwrap_or_else(|| format!("item{}", items.len() + 1)),
            tensor,
            tree,
            epsilon,
        });
    }
    if items.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{}: empty series",
            path.display()
        )));
    }
    Ok(items)
}

/// Factorizes every item and records wall time, peak memory and the sampled
/// nonzero error. A failing item yields a report with an `error:` status and
/// the run continues.
pub fn scaling_run(series: &[SeriesItem], seed: u64, workers: usize) -> Vec<EvalReport> {
    series
        .iter()
        .map(|item| {
            let mut report = EvalReport {
                label: item.label.clone(),
                metric: "sampled_nnz_error".into(),
                value: None,
                nnz: 0,
                order: 0,
                epsilon: Some(item.epsilon),
                seed,
                workers,
                sampled_fibers: None,
                storage: None,
                wall_seconds: None,
                peak_rss_bytes: None,
                status: "ok".into(),
            };
            if let Err(e) = run_item(item, seed, workers, &mut report) {
                log::warn!("series item {} failed: {e}", item.label);
                report.status = format!("error: {e}");
            }
            report
        })
        .collect()
}

fn run_item(item: &SeriesItem, seed: u64, workers: usize, report: &mut EvalReport) -> Result<()> {
    let tensor = item.load_tensor(seed)?;
    report.nnz = tensor.nnz();
    report.order = tensor.order();
    let tree = item.build_tree(&tensor)?;
    let opts = FactorizeOptions {
        workers,
        ..FactorizeOptions::new(Sampling::leverage(item.epsilon)?, seed)
    };
    reset_peak_rss();
    let start = Instant::now();
    let (plan, model) = factorize(&tensor, &tree, &opts)?;
    report.wall_seconds = Some(start.elapsed().as_secs_f64());
    report.peak_rss_bytes = peak_rss_bytes();
    report.sampled_fibers = Some(plan.sampled_fibers());
    report.storage = Some(model.storage_size());
    report.value = Some(sampled_nnz_error(
        &tensor,
        &model,
        DEFAULT_EVAL_SAMPLE,
        seed,
    )?);
    Ok(())
}

/// Mean full-reconstruction error over `runs` consecutive seeds starting at
/// `seed`.
pub fn mean_frobenius_error(
    tensor: &SparseTensor,
    tree: &DimensionTree,
    epsilon: f64,
    seed: u64,
    runs: usize,
    workers: usize,
    cap: u64,
) -> Result<f64> {
    if runs == 0 {
        return Err(Error::InvalidArgument("at least one run required".into()));
    }
    let mut total = 0.0;
    for s in seed..seed + runs as u64 {
        let opts = FactorizeOptions {
            workers,
            ..FactorizeOptions::new(Sampling::leverage(epsilon)?, s)
        };
        let (_, model) = factorize(tensor, tree, &opts)?;
        total += frobenius_error(tensor, &model, cap)?;
    }
    Ok(total / runs as f64)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (xs, ys): (Vec<f64>, Vec<f64>) = points.iter().map(|&(x, y)| (x.ln(), y.ln())).unzip();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}
