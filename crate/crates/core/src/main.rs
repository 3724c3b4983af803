use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sparse_htucker::eval::{
    frobenius_error, parse_series, sampled_nnz_error, scaling_run, write_reports,
};
use sparse_htucker::ingest::{
    build_cooccurrence_tensor, synth_events, CooccurrenceOptions, EventTable, SynthProfile,
    DEFAULT_COMBINATION_CAP,
};
use sparse_htucker::model::DEFAULT_CELL_CAP;
use sparse_htucker::{
    factorize, DimensionTree, Error, FactorizeOptions, HTuckerModel, Linkage, Result, Sampling,
    SparseTensor,
};

/// Sparse Hierarchical Tucker factorization of sparse high-order tensors.
#[derive(Parser)]
#[command(name = "shtucker", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// Worker threads for factorization (0 = all cores).
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    /// Increase log detail (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Build a co-occurrence tensor from a `record_id,mode_id,element_name` CSV.
    BuildTensor {
        #[arg(long)]
        events: PathBuf,
        /// Comma-separated mode ids, in tensor mode order.
        #[arg(long, value_delimiter = ',', required = true)]
        modes: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        /// Leave out the cell where every mode is null.
        #[arg(long)]
        drop_all_null: bool,
        /// Per-record cap on expanded multi-indices.
        #[arg(long, default_value_t = DEFAULT_COMBINATION_CAP)]
        max_combinations: u64,
    },
    /// Generate a synthetic event table from a `key = value` profile.
    Synth {
        #[arg(long)]
        profile: PathBuf,
        /// Event CSV output.
        #[arg(long)]
        out: PathBuf,
        /// Also write the co-occurrence tensor over all generated modes.
        #[arg(long)]
        tensor: Option<PathBuf>,
    },
    /// Build a dimension tree for a tensor.
    Tree {
        #[arg(long)]
        tensor: PathBuf,
        #[arg(
            long,
            conflicts_with = "data_driven",
            required_unless_present = "data_driven"
        )]
        balanced: bool,
        /// Cluster modes by Jaccard distance of their non-null incidence.
        #[arg(long)]
        data_driven: bool,
        #[arg(long, default_value = "complete", requires = "data_driven")]
        linkage: Linkage,
        #[arg(long)]
        out: PathBuf,
    },
    /// Factorize a tensor along a dimension tree.
    Factorize {
        #[arg(long)]
        tensor: PathBuf,
        #[arg(long)]
        tree: PathBuf,
        /// Accuracy parameter; smaller samples more fibers.
        #[arg(
            long,
            required_unless_present = "exhaustive",
            conflicts_with = "exhaustive"
        )]
        epsilon: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        /// Sample every nonzero fiber (small inputs only).
        #[arg(long)]
        exhaustive: bool,
    },
    /// Evaluate a model at one element or over a block.
    Query {
        #[arg(long)]
        model: PathBuf,
        /// 1-based multi-index, e.g. `3,1,2`.
        #[arg(
            long,
            value_delimiter = ',',
            conflicts_with = "block",
            required_unless_present = "block"
        )]
        index: Vec<u32>,
        /// Per-mode inclusive ranges `lo:hi` or single indices, e.g. `1:3,2,1:2`.
        #[arg(long, value_delimiter = ',')]
        block: Vec<String>,
        /// Maximum block cells.
        #[arg(long, default_value_t = DEFAULT_CELL_CAP)]
        cap: u64,
    },
    /// Write the concept report of a model.
    Report {
        #[arg(long)]
        model: PathBuf,
        /// Elements listed per leaf concept.
        #[arg(long, default_value_t = 10)]
        top: usize,
        /// CSV output (`node_id,concept_id,element_id,weight`).
        #[arg(long)]
        out: PathBuf,
        /// Element index to leave out of leaf concepts, e.g. the null element 1.
        #[arg(long)]
        exclude: Option<u32>,
        /// Also print the report as text.
        #[arg(long)]
        print: bool,
    },
    /// Reconstruction error of a model against a tensor.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        tensor: PathBuf,
        /// Frobenius error over the full index space.
        #[arg(long, conflicts_with = "sample", required_unless_present = "sample")]
        full: bool,
        /// Error over a uniform sample of N stored entries.
        #[arg(long)]
        sample: Option<usize>,
        #[arg(long, default_value_t = DEFAULT_CELL_CAP)]
        cap: u64,
    },
    /// Run a benchmark series and write one CSV row per item.
    Bench {
        #[arg(long)]
        series: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.common.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli.command, &cli.common) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input_error() { 2 } else { 1 })
        }
    }
}

fn workers(common: &Common) -> usize {
    if common.workers == 0 {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        common.workers
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

fn run(command: Command, common: &Common) -> Result<()> {
    match command {
        Command::BuildTensor {
            events,
            modes,
            out,
            drop_all_null,
            max_combinations,
        } => {
            let table = EventTable::load(&events)?;
            let opts = CooccurrenceOptions {
                drop_all_null,
                max_combinations,
            };
            let t = build_cooccurrence_tensor(&table, &modes, &opts)?;
            log::info!(
                "{} records, dims {:?}, nnz {}",
                table.num_records(),
                t.dims(),
                t.nnz()
            );
            t.save(&out)
        }
        Command::Synth {
            profile,
            out,
            tensor,
        } => {
            let profile = SynthProfile::load(&profile)?;
            let table = synth_events(&profile, common.seed)?;
            table.save(&out)?;
            if let Some(path) = tensor {
                let t = build_cooccurrence_tensor(
                    &table,
                    &profile.mode_names(),
                    &CooccurrenceOptions::default(),
                )?;
                log::info!("dims {:?}, nnz {}", t.dims(), t.nnz());
                t.save(&path)?;
            }
            Ok(())
        }
        Command::Tree {
            tensor,
            data_driven,
            linkage,
            out,
            ..
        } => {
            let t = SparseTensor::load(&tensor)?;
            let tree = if data_driven {
                DimensionTree::data_driven(&t, linkage)?
            } else {
                DimensionTree::balanced(t.order())?
            };
            tree.save(&out)
        }
        Command::Factorize {
            tensor,
            tree,
            epsilon,
            out,
            exhaustive,
        } => {
            let t = SparseTensor::load(&tensor)?;
            let tree = DimensionTree::load(&tree)?;
            let sampling = match epsilon {
                Some(eps) if !exhaustive => Sampling::leverage(eps)?,
                _ => Sampling::Exhaustive,
            };
            let opts = FactorizeOptions {
                workers: workers(common),
                ..FactorizeOptions::new(sampling, common.seed)
            };
            let start = std::time::Instant::now();
            let (plan, model) = factorize(&t, &tree, &opts)?;
            log::info!(
                "factorized nnz {} in {:.3}s: {} sampled fibers, {} stored scalars",
                t.nnz(),
                start.elapsed().as_secs_f64(),
                plan.sampled_fibers(),
                model.storage_size()
            );
            model.save(&out)
        }
        Command::Query {
            model,
            index,
            block,
            cap,
        } => {
            let m = HTuckerModel::load(&model)?;
            let mut out = std::io::stdout().lock();
            if !index.is_empty() {
                writeln!(out, "{}", m.query_element(&index)?)?;
            } else {
                let ranges = block
                    .iter()
                    .map(|r| parse_range(r))
                    .collect::<Result<Vec<_>>>()?;
                for (idx, v) in m.query_block(&ranges, cap)?.iter() {
                    let idx: Vec<String> = idx.iter().map(u32::to_string).collect();
                    writeln!(out, "{} {v}", idx.join(" "))?;
                }
            }
            Ok(())
        }
        Command::Report {
            model,
            top,
            out,
            exclude,
            print,
        } => {
            let m = HTuckerModel::load(&model)?;
            let report = m.concept_report(top, exclude);
            if print {
                print!("{}", report.to_text());
            }
            report.write_csv(create(&out)?)
        }
        Command::Eval {
            model,
            tensor,
            sample,
            cap,
            ..
        } => {
            let m = HTuckerModel::load(&model)?;
            let t = SparseTensor::load(&tensor)?;
            let (metric, err) = match sample {
                Some(n) => (
                    "sampled_nnz_error",
                    sampled_nnz_error(&t, &m, n, common.seed)?,
                ),
                None => ("frobenius_error", frobenius_error(&t, &m, cap)?),
            };
            let norm = t.frobenius_norm();
            println!("{metric} {err}");
            println!("relative {}", if norm > 0.0 { err / norm } else { err });
            Ok(())
        }
        Command::Bench { series, out } => {
            let text = std::fs::read_to_string(&series).map_err(|e| {
                Error::Io(std::io::Error::new(
                    e.kind(),
                    format!("{}: {e}", series.display()),
                ))
            })?;
            let items = parse_series(&text, &series)?;
            let reports = scaling_run(&items, common.seed, workers(common));
            write_reports(&reports, create(&out)?)?;
            let failed = reports.iter().filter(|r| r.status != "ok").count();
            if failed > 0 {
                log::warn!("{failed} of {} series items failed", reports.len());
            }
            Ok(())
        }
    }
}

fn parse_range(s: &str) -> Result<(u32, u32)> {
    let bad = || Error::InvalidArgument(format!("bad block range `{s}` (expected lo:hi or i)"));
    match s.split_once(':') {
        Some((a, b)) => Ok((
            a.trim().parse().map_err(|_| bad())?,
            b.trim().parse().map_err(|_| bad())?,
        )),
        None => {
            let i = s.trim().parse().map_err(|_| bad())?;
            Ok((i, i))
        }
    }
}
