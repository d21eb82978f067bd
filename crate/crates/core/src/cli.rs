//! The `covcusum` command line.
//!
//! Exit status: 0 on success, 1 for usage and argument errors, 2 for errors
//! in the data or in numerical evaluation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::config::{self, ModelSpec};
use crate::cpe::{self, LagChoice, LrvMode, SegmentationSettings, TestSettings};
use crate::cusum::{self, QuantileSource, WeightFunction};
use crate::dist::{self, QuantileTable};
use crate::error::{Error, Result};
use crate::harness::{self, GlobalStudyConfig, StudyConfig};
use crate::io;
use crate::linproc::Series;
use crate::lrv::{self, KernelKind, KernelSpec};
use crate::projections::{self, ProjectionPair};

#[derive(Debug, Parser)]
#[command(name = "covcusum", version, about = "Projected CUSUM change-point tests for covariance structure")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a series from a model file.
    Simulate(SimulateArgs),
    /// Test one projection pair for a change.
    Test(TestArgs),
    /// CUSUM transform of several pairs and the global test.
    Transform(TransformArgs),
    /// Binary segmentation for multiple changes.
    Segment(SegmentArgs),
    /// Simulate a weighted bridge supremum table.
    Quantiles(QuantilesArgs),
    /// Run a Monte Carlo power study.
    Study(StudyArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the seed in the model file and the environment.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, Args)]
#[group(multiple = false)]
pub struct WeightArgs {
    /// Weight `[t(1−t)]^B`, `0 ≤ B < 1/2`.
    #[arg(long = "weight-beta", value_name = "B")]
    pub weight_beta: Option<f64>,
    /// Unweighted statistic (default).
    #[arg(long)]
    pub unweighted: bool,
}

impl WeightArgs {
    fn weight(&self) -> Result<WeightFunction> {
        match self.weight_beta {
            Some(b) => WeightFunction::power(b),
            None => Ok(WeightFunction::None),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct EstimationArgs {
    /// Long-run variance source: `learning:FILE`, `full` or `stopped`.
    #[arg(long, default_value = "full", value_parser = parse_lrv)]
    pub lrv: LrvArg,
    #[arg(long, default_value = "bartlett", value_parser = parse_kernel)]
    pub kernel: KernelKind,
    /// Lag truncation `M` or `auto` for `⌈n^{1/3}⌉`.
    #[arg(long, default_value = "auto", value_parser = parse_lag)]
    pub lag: LagChoice,
}

#[derive(Debug, Clone, Args)]
pub struct QuantileArgs {
    /// Precomputed table from `covcusum quantiles`.
    #[arg(long = "quantile-table")]
    pub quantile_table: Option<PathBuf>,
    /// Replicates when a weighted quantile is simulated on the fly.
    #[arg(long = "quantile-reps", default_value_t = 10_000)]
    pub quantile_reps: usize,
    /// Bridge grid for on-the-fly quantiles; defaults to the sample size.
    #[arg(long = "quantile-grid")]
    pub quantile_grid: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TestArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Projection CSV; the uniform vector is used when omitted.
    #[arg(long)]
    pub proj: Option<PathBuf>,
    /// 1-based columns of the projection file, `vIdx,wIdx`.
    #[arg(long, default_value = "1,1", value_parser = parse_pair)]
    pub pair: (usize, usize),
    #[command(flatten)]
    pub weight: WeightArgs,
    #[arg(long)]
    pub centered: bool,
    #[arg(long, default_value_t = 0.05)]
    pub level: f64,
    #[command(flatten)]
    pub estimation: EstimationArgs,
    #[command(flatten)]
    pub quantile: QuantileArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long = "dump-trajectory")]
    pub dump_trajectory: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TransformArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub proj: PathBuf,
    /// Pairs `v,w;v,w;...`; defaults to `(j, j)` for every column.
    #[arg(long, value_delimiter = ';', value_parser = parse_pair)]
    pub pairs: Option<Vec<(usize, usize)>>,
    #[command(flatten)]
    pub weight: WeightArgs,
    #[arg(long, default_value_t = 0.05)]
    pub level: f64,
    /// Long-run covariance source: `learning:FILE` or `full`.
    #[arg(long, default_value = "full", value_parser = parse_lrv)]
    pub lrv: LrvArg,
    #[arg(long, default_value = "bartlett", value_parser = parse_kernel)]
    pub kernel: KernelKind,
    #[arg(long, default_value = "auto", value_parser = parse_lag)]
    pub lag: LagChoice,
    /// Replicates of the conditional null law of `Q_n` and of `μ*`.
    #[arg(long = "null-reps", default_value_t = 5000)]
    pub null_reps: usize,
    #[arg(long = "quantile-grid")]
    pub quantile_grid: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub proj: Option<PathBuf>,
    #[arg(long, default_value = "1,1", value_parser = parse_pair)]
    pub pair: (usize, usize),
    #[command(flatten)]
    pub weight: WeightArgs,
    #[arg(long, default_value_t = 0.05)]
    pub level: f64,
    #[arg(long = "min-segment", default_value_t = 50)]
    pub min_segment: usize,
    #[arg(long = "max-depth", default_value_t = 4)]
    pub max_depth: usize,
    #[arg(long, default_value = "bartlett", value_parser = parse_kernel)]
    pub kernel: KernelKind,
    #[arg(long, default_value = "auto", value_parser = parse_lag)]
    pub lag: LagChoice,
    #[command(flatten)]
    pub quantile: QuantileArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct QuantilesArgs {
    #[command(flatten)]
    pub weight: WeightArgs,
    #[arg(long, default_value_t = 1000)]
    pub grid: usize,
    #[arg(long, default_value_t = 20_000)]
    pub reps: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StudyKind {
    Table1,
    Table2,
}

#[derive(Debug, Args)]
pub struct StudyArgs {
    #[arg(value_enum)]
    pub kind: StudyKind,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LrvArg {
    Learning(PathBuf),
    Full,
    Stopped,
}

fn parse_lrv(s: &str) -> std::result::Result<LrvArg, String> {
    match s {
        "full" => Ok(LrvArg::Full),
        "stopped" => Ok(LrvArg::Stopped),
        _ => match s.strip_prefix("learning:") {
            Some(p) if !p.is_empty() => Ok(LrvArg::Learning(PathBuf::from(p))),
            _ => Err(format!("expected `learning:FILE`, `full` or `stopped`, got `{s}`")),
        },
    }
}

fn parse_kernel(s: &str) -> std::result::Result<KernelKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_lag(s: &str) -> std::result::Result<LagChoice, String> {
    if s == "auto" {
        return Ok(LagChoice::Auto);
    }
    s.parse()
        .map(LagChoice::Fixed)
        .map_err(|_| format!("expected a lag count or `auto`, got `{s}`"))
}

fn parse_pair(s: &str) -> std::result::Result<(usize, usize), String> {
    let err = || format!("expected `vIdx,wIdx`, got `{s}`");
    let (v, w) = s.split_once(',').ok_or_else(err)?;
    let v = v.trim().parse().map_err(|_| err())?;
    let w = w.trim().parse().map_err(|_| err())?;
    Ok((v, w))
}

/// Runs the command line and returns the process exit status.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidArgument(_) | Error::Config(_) => 1,
        _ => 2,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Test(a) => test(a),
        Command::Transform(a) => transform(a),
        Command::Segment(a) => segment(a),
        Command::Quantiles(a) => quantiles(a),
        Command::Study(a) => study(a),
    }
}

fn resolve_seed(flag: Option<u64>) -> Result<u64> {
    Ok(flag.or(config::env_seed()?).unwrap_or(0))
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => io::save_json(value, p),
        None => {
            print!("{}", io::to_json(value)?);
            Ok(())
        }
    }
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let spec: ModelSpec = config::load(&a.config)?;
    let seed = a.seed.or(config::env_seed()?);
    let series = spec.simulate(seed)?;
    io::save_series_csv(&series, &a.out)
}

fn load_pair(proj: Option<&Path>, pair: (usize, usize), d: usize) -> Result<ProjectionPair> {
    let vectors = match proj {
        Some(p) => io::load_projections_csv(p)?,
        None => vec![projections::uniform_projection(d)?],
    };
    let pp = io::select_pair(&vectors, pair.0, pair.1)?;
    if pp.dim() != d {
        return Err(Error::Data(format!("projections have length {}, data has d = {d}", pp.dim())));
    }
    Ok(pp)
}

/// Table loaded from disk, or the parameters for on-the-fly simulation.
fn quantile_table(q: &QuantileArgs) -> Result<Option<QuantileTable>> {
    q.quantile_table.as_ref().map(io::load_quantile_table).transpose()
}

fn quantile_source<'a>(
    g: &WeightFunction,
    table: Option<&'a QuantileTable>,
    q: &QuantileArgs,
    n: usize,
) -> Result<QuantileSource<'a>> {
    Ok(match table {
        Some(t) => QuantileSource::Table(t),
        None if g.is_unweighted() => QuantileSource::Kolmogorov,
        None => QuantileSource::Simulate {
            grid_n: q.quantile_grid.unwrap_or(n),
            reps: q.quantile_reps,
            seed: resolve_seed(q.seed)?,
        },
    })
}

fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("level {level} outside (0, 1)")))
    }
}

fn test(a: TestArgs) -> Result<()> {
    check_level(a.level)?;
    let g = a.weight.weight()?;
    let series = io::load_series_csv(&a.data)?;
    let pair = load_pair(a.proj.as_deref(), a.pair, series.dim())?;
    let learning = match &a.estimation.lrv {
        LrvArg::Learning(p) => Some(io::load_series_csv(p)?),
        _ => None,
    };
    let mode = match (&a.estimation.lrv, &learning) {
        (LrvArg::Learning(_), Some(s)) => LrvMode::Learning(s),
        (LrvArg::Stopped, _) => LrvMode::Stopped,
        _ => LrvMode::Full,
    };
    let table = quantile_table(&a.quantile)?;
    let settings = TestSettings {
        weight: g,
        centered: a.centered,
        level: a.level,
        lrv_mode: mode,
        kernel: a.estimation.kernel,
        lags: a.estimation.lag,
        quantile: quantile_source(&g, table.as_ref(), &a.quantile, series.len())?,
    };
    let mut report = cpe::change_point_test(&series, &pair, &settings)?;
    report.settings.insert("pair".into(), format!("{},{}", a.pair.0, a.pair.1));
    if let Some(path) = &a.dump_trajectory {
        let res = cusum::cusum(&series, &pair, &g, a.centered)?;
        io::save_trajectory_csv(&res.trajectory, path)?;
    }
    emit(&report, a.out.as_deref())
}

/// Output of `covcusum transform`.
#[derive(Debug, Serialize)]
pub struct TransformReport {
    pub pairs: Vec<(usize, usize)>,
    /// `C_n(v_j, w_j; g)`.
    pub cusum: Vec<f64>,
    /// `C_n / β̂(j, j)^{1/2}`.
    pub standardized: Vec<f64>,
    pub beta_hat: Vec<Vec<f64>>,
    pub correlation: Vec<Vec<f64>>,
    pub mu_star: f64,
    pub statistic: f64,
    pub quantile: f64,
    pub level: f64,
    pub decision: bool,
    pub settings: BTreeMap<String, String>,
}

fn rows_of(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn transform(a: TransformArgs) -> Result<()> {
    check_level(a.level)?;
    let g = a.weight.weight()?;
    let series = io::load_series_csv(&a.data)?;
    let vectors = io::load_projections_csv(&a.proj)?;
    let pair_idx = a.pairs.clone().unwrap_or_else(|| (1..=vectors.len()).map(|j| (j, j)).collect());
    let pairs = pair_idx
        .iter()
        .map(|&(v, w)| io::select_pair(&vectors, v, w))
        .collect::<Result<Vec<_>>>()?;
    if pairs.iter().any(|p| p.dim() != series.dim()) {
        return Err(Error::Data("projection length does not match the data".into()));
    }
    let learning: Series = match &a.lrv {
        LrvArg::Learning(p) => io::load_series_csv(p)?,
        LrvArg::Full => series.clone(),
        LrvArg::Stopped => {
            return Err(Error::InvalidArgument("the global test takes `learning:FILE` or `full`".into()))
        }
    };
    let m = a.lag.lags(learning.len());
    let kernel = KernelSpec::new(a.kernel, m);
    let beta = lrv::beta2_matrix(&learning, &pairs, 1.0, &kernel)?;
    let corr = lrv::correlation_from_beta(&beta)?;
    let c = cusum::multivariate_transform(&series, &pairs, &g)?;
    let t: Vec<f64> = c.iter().enumerate().map(|(j, c)| c / beta[(j, j)].sqrt()).collect();
    let seed = resolve_seed(a.seed)?;
    let grid = a.quantile_grid.unwrap_or(series.len());
    let mu = dist::mu_star(g, grid, a.null_reps, seed)?;
    let statistic = cusum::qn_statistic(&t, &vec![mu; t.len()], &corr)?;
    let quantile = dist::qn_null_quantile(&corr, g, grid, a.null_reps, 1.0 - a.level, seed.wrapping_add(1))?;
    let mut settings = BTreeMap::new();
    settings.insert("weight".into(), g.label());
    settings.insert("kernel".into(), format!("{:?}", a.kernel).to_lowercase());
    settings.insert("lags".into(), m.to_string());
    settings.insert("lrv_mode".into(), if matches!(a.lrv, LrvArg::Full) { "full" } else { "learning" }.into());
    settings.insert("seed".into(), seed.to_string());
    settings.insert("null_reps".into(), a.null_reps.to_string());
    settings.insert("grid_n".into(), grid.to_string());
    let report = TransformReport {
        pairs: pair_idx,
        cusum: c,
        standardized: t,
        beta_hat: rows_of(&beta),
        correlation: rows_of(&corr),
        mu_star: mu,
        statistic,
        quantile,
        level: a.level,
        decision: statistic > quantile,
        settings,
    };
    emit(&report, a.out.as_deref())
}

fn segment(a: SegmentArgs) -> Result<()> {
    check_level(a.level)?;
    let g = a.weight.weight()?;
    let series = io::load_series_csv(&a.data)?;
    let pair = load_pair(a.proj.as_deref(), a.pair, series.dim())?;
    let table = quantile_table(&a.quantile)?;
    let settings = SegmentationSettings {
        test: TestSettings {
            weight: g,
            centered: false,
            level: a.level,
            lrv_mode: LrvMode::Full,
            kernel: a.kernel,
            lags: a.lag,
            quantile: quantile_source(&g, table.as_ref(), &a.quantile, series.len())?,
        },
        min_segment: a.min_segment,
        max_depth: a.max_depth,
    };
    let result = cpe::binary_segmentation(&series, &pair, &settings)?;
    emit(&result, a.out.as_deref())
}

fn quantiles(a: QuantilesArgs) -> Result<()> {
    let g = a.weight.weight()?;
    let table = QuantileTable::simulate(g, a.grid, a.reps, resolve_seed(a.seed)?)?;
    io::save_json(&table, &a.out)
}

fn study(a: StudyArgs) -> Result<()> {
    let seed = config::env_seed()?;
    let rows = match a.kind {
        StudyKind::Table1 => {
            let mut c: StudyConfig = config::load(&a.config)?;
            if let Some(s) = seed {
                c.base_seed = s;
            }
            harness::run_power_study(&c)?
        }
        StudyKind::Table2 => {
            let mut c: GlobalStudyConfig = config::load(&a.config)?;
            if let Some(s) = seed {
                c.base_seed = s;
            }
            harness::run_global_study(&c)?
        }
    };
    match &a.out {
        Some(p) => io::write_study_rows(&rows, std::fs::File::create(p)?),
        None => io::write_study_rows(&rows, std::io::stdout().lock()),
    }
}
