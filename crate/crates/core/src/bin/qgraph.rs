use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use qgraph::eval::{self, GroundTruth, VecKind};
use qgraph::{BuildParams, Error, LutMode, Metric, QGIndex, QueryContext, SearchParams};

#[derive(Parser)]
#[command(
    name = "qgraph",
    about = "Build, query and benchmark quantized graph indices"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    L2,
    Cosine,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::L2 => Metric::Euclidean,
            MetricArg::Cosine => Metric::Cosine,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum LutArg {
    Exact,
    Quantized,
}

impl From<LutArg> for LutMode {
    fn from(m: LutArg) -> Self {
        match m {
            LutArg::Exact => LutMode::Exact,
            LutArg::Quantized => LutMode::Quantized,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build an index from an fvecs file.
    Build(BuildArgs),
    /// Exact ground truth as ivecs.
    Gt(GtArgs),
    /// Run queries against an index.
    Query(QueryArgs),
    /// Sweep beam sizes and report QPS, recall and distance ratio.
    Bench(BenchArgs),
    /// Print index statistics.
    Stats(StatsArgs),
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "l2")]
    metric: MetricArg,
    #[arg(long = "R", default_value_t = 32)]
    degree: usize,
    #[arg(long = "EF", default_value_t = 200)]
    ef: usize,
    #[arg(long, default_value_t = 3)]
    iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "quantized")]
    lut: LutArg,
}

#[derive(Args)]
struct GtArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long = "K", default_value_t = 10)]
    k: usize,
    #[arg(long, value_enum, default_value = "l2")]
    metric: MetricArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long = "K", default_value_t = 10)]
    k: usize,
    /// Beam size; only the first value is used.
    #[arg(long, value_delimiter = ',', default_value = "64")]
    beams: Vec<usize>,
    #[arg(long, value_enum)]
    lut: Option<LutArg>,
    /// Optional ivecs ground truth for a recall summary.
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Result ids as ivecs.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long = "K", default_value_t = 10)]
    k: usize,
    #[arg(long, value_delimiter = ',', default_value = "10,20,40,80,160,320")]
    beams: Vec<usize>,
    #[arg(long, value_enum)]
    lut: Option<LutArg>,
    /// CSV path; a chart is written next to it with an `.svg` extension.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    index: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    eval::configure_threads_from_env();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Format { .. } => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn run(cli: Cli) -> qgraph::Result<()> {
    match cli.cmd {
        Command::Build(a) => {
            let data = eval::read_fvecs(&a.data)?;
            let params = BuildParams {
                degree: a.degree,
                ef: a.ef,
                iterations: a.iters,
                seed: a.seed,
                metric: a.metric.into(),
                lut_mode: a.lut.into(),
                ..BuildParams::default()
            };
            let start = std::time::Instant::now();
            let (index, report) = qgraph::build_with_report(&data, &params)?;
            log::info!(
                "built {} vertices in {:.2}s; pruned mean degree per iteration {:?}; {} vertices refined",
                index.len(),
                start.elapsed().as_secs_f64(),
                report.iteration_mean_degree,
                report.refined_vertices
            );
            index.save(&a.out)?;
        }
        Command::Gt(a) => {
            let data = eval::read_fvecs(&a.data)?;
            let queries = eval::read_fvecs(&a.queries)?;
            let gt = eval::groundtruth(&data, &queries, a.k, a.metric.into())?;
            eval::write_ivecs(&a.out, &gt.ids)?;
        }
        Command::Query(a) => {
            let index = QGIndex::load(&a.index)?;
            let queries = eval::read_fvecs(&a.queries)?;
            let mut params = SearchParams::new(a.beams.first().copied().unwrap_or(64), a.k);
            params.lut_mode = a.lut.map(Into::into);
            let mut ctx = QueryContext::new();
            let mut ids = Vec::with_capacity(queries.len());
            for q in queries.rows() {
                ids.push(ctx.search(&index, q, &params)?.ids());
            }
            if let Some(gt_path) = &a.gt {
                let gt = read_gt(gt_path)?;
                let total: f64 = ids
                    .iter()
                    .zip(&gt)
                    .map(|(r, g)| eval::recall(r, g, a.k))
                    .sum();
                println!("recall@{} = {:.4}", a.k, total / ids.len().max(1) as f64);
            }
            match &a.out {
                Some(out) if ids.iter().all(|r| r.len() == a.k) => eval::write_ivecs(out, &ids)?,
                Some(_) => {
                    return Err(Error::InvalidArgument(
                        "some queries returned fewer than K results".into(),
                    ))
                }
                None => {
                    for r in &ids {
                        println!(
                            "{}",
                            r.iter().map(u32::to_string).collect::<Vec<_>>().join(" ")
                        );
                    }
                }
            }
        }
        Command::Bench(a) => {
            let index = QGIndex::load(&a.index)?;
            let queries = eval::read_fvecs(&a.queries)?;
            let gt =
                GroundTruth::from_ids(&index.vectors(), &queries, read_gt(&a.gt)?, index.metric())?;
            let mut template = SearchParams::new(0, a.k);
            template.lut_mode = a.lut.map(Into::into);
            let report = eval::bench_with(&index, &queries, &gt, &a.beams, &template)?;
            print!("{}", report.to_csv()?);
            if let Some(out) = &a.out {
                report.write_csv(out)?;
                std::fs::write(out.with_extension("svg"), report.to_svg())?;
            }
        }
        Command::Stats(a) => {
            let index = QGIndex::load(&a.index)?;
            let h = index.header();
            let s = index.stats();
            println!("vertices      {}", s.n);
            println!("dim / padded  {} / {}", h.dim, h.padded_dim);
            println!("degree        {}", h.degree);
            println!("metric        {:?}", h.metric);
            println!("entry point   {}", h.entry_point);
            println!("raw bytes     {}", s.raw_bytes);
            println!("id bytes      {}", s.neighbor_bytes);
            println!("code bytes    {}", s.code_bytes);
            println!("factor bytes  {}", s.factor_bytes);
            println!("total bytes   {}", s.total_bytes);
            println!("degrees       {:?}", s.degree_histogram);
        }
    }
    Ok(())
}

fn read_gt(path: &std::path::Path) -> qgraph::Result<Vec<Vec<u32>>> {
    let rows = eval::read_vecs(path, VecKind::Int)?.into_int_rows()?;
    Ok(rows
        .into_iter()
        .map(|r| r.into_iter().map(|x| x as u32).collect())
        .collect())
}
