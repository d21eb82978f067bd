//! Monte Carlo power studies on the AR-to-shifted-MA simulation model.
//!
//! Replicate seeds are derived from `(base_seed, d, ϑ, rep)` by hashing, so
//! every cell can be regenerated on its own and results do not depend on
//! the thread count; rejection rates are reduced in replicate order.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cpe::{self, LagChoice, LrvMode, TestSettings};
use crate::cusum::{self, QuantileSource, WeightFunction};
use crate::dist::{self, QnNullPool, QuantileTable};
use crate::error::{invalid, Error, Result};
use crate::linproc::{self, ChangePointModel, InnovationSpec};
use crate::lrv::{self, KernelKind, KernelSpec};
use crate::projections::{self, ProjectionPair};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StudyLrvMode {
    /// Separate change-free sample of the given size from the pre-change model.
    Learning { size: usize },
    Full,
    Stopped,
}

impl StudyLrvMode {
    pub fn label(&self) -> String {
        match self {
            StudyLrvMode::Learning { size } => format!("learning({size})"),
            StudyLrvMode::Full => "full".into(),
            StudyLrvMode::Stopped => "stopped".into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProjectionKind {
    FixedUniform,
    /// A fresh symmetric Dirichlet draw per replicate.
    Dirichlet { concentration: f64 },
}

/// Design of a single-pair power study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub n: usize,
    pub dims: Vec<usize>,
    /// Change fractions; `1.0` is the no-change case.
    pub thetas: Vec<f64>,
    pub reps: usize,
    pub level: f64,
    pub weight: WeightFunction,
    pub lrv_mode: StudyLrvMode,
    pub projection: ProjectionKind,
    pub base_seed: u64,
    #[serde(default = "default_kernel")]
    pub kernel: KernelKind,
    /// Lag truncation; `None` means `⌈n^{1/3}⌉` of the tested sample.
    #[serde(default)]
    pub lags: Option<usize>,
    /// Bridge grid of the weighted quantile table; `None` means `n`.
    #[serde(default)]
    pub quantile_grid: Option<usize>,
    #[serde(default = "default_quantile_reps")]
    pub quantile_reps: usize,
}

fn default_kernel() -> KernelKind {
    KernelKind::Bartlett
}

fn default_quantile_reps() -> usize {
    20_000
}

impl StudyConfig {
    /// The fixed-projection, learning-sample, unweighted design at `n = 100`.
    pub fn table1(dims: Vec<usize>, thetas: Vec<f64>, reps: usize, base_seed: u64) -> Self {
        Self {
            n: 100,
            dims,
            thetas,
            reps,
            level: 0.05,
            weight: WeightFunction::None,
            lrv_mode: StudyLrvMode::Learning { size: 500 },
            projection: ProjectionKind::FixedUniform,
            base_seed,
            kernel: KernelKind::Bartlett,
            lags: None,
            quantile_grid: None,
            quantile_reps: default_quantile_reps(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.reps < 1 {
            return fail("reps must be at least 1".into());
        }
        if self.n < 4 {
            return fail(format!("n = {} is too small", self.n));
        }
        if self.dims.is_empty() || self.dims.contains(&0) {
            return fail("dimension list must be non-empty and positive".into());
        }
        if self.thetas.is_empty() || self.thetas.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
            return fail("change fractions must lie in (0, 1]".into());
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return fail(format!("level {} outside (0, 1)", self.level));
        }
        self.weight.validate()?;
        if let StudyLrvMode::Learning { size } = self.lrv_mode {
            if size < 4 {
                return fail("learning sample too small".into());
            }
        }
        if let ProjectionKind::Dirichlet { concentration } = self.projection {
            if !(concentration > 0.0) {
                return fail("Dirichlet concentration must be positive".into());
            }
        }
        let m = self.lags.unwrap_or_else(|| lrv::default_lags(self.n));
        if m >= self.n / 4 {
            return fail(format!("lag truncation {m} too large for n = {}", self.n));
        }
        if self.quantile_grid.is_some_and(|g| g < 2) || self.quantile_reps < 1 {
            return fail("quantile table needs grid ≥ 2 and reps ≥ 1".into());
        }
        Ok(())
    }

    fn method(&self) -> String {
        match self.weight {
            WeightFunction::None => "unweighted".into(),
            WeightFunction::Power { beta } => format!("weighted({beta})"),
        }
    }
}

/// One cell of a results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub method: String,
    pub lrv_mode: String,
    pub theta: f64,
    /// Dimension `d`, or the number of projections `r` for the global test.
    pub d: usize,
    pub rejection_rate: f64,
    pub reps: usize,
    pub seed: u64,
}

/// Seed of replicate `rep` in cell `(d, ϑ)`.
pub fn cell_seed(base_seed: u64, d: usize, theta: f64, rep: usize) -> u64 {
    seed::derive(base_seed, &[d as u64, theta.to_bits(), rep as u64])
}

/// Outcome of one replicate of the single-pair study.
pub fn power_replicate(
    config: &StudyConfig,
    model: &ChangePointModel,
    source: &QuantileSource<'_>,
    rep_seed: u64,
) -> Result<bool> {
    let d = model.pre.dim();
    let series = linproc::simulate_change_model(model, &InnovationSpec::gaussian(rep_seed))?;
    let v = match config.projection {
        ProjectionKind::FixedUniform => projections::uniform_projection(d)?,
        ProjectionKind::Dirichlet { concentration } => {
            projections::dirichlet_projection(d, concentration, seed::derive(rep_seed, &[1]))?
        }
    };
    let pair = ProjectionPair::symmetric(v)?;
    let learning;
    let mode = match config.lrv_mode {
        StudyLrvMode::Learning { size } => {
            learning = linproc::simulate_linear(&model.pre, &InnovationSpec::gaussian(seed::derive(rep_seed, &[2])), size)?;
            LrvMode::Learning(&learning)
        }
        StudyLrvMode::Full => LrvMode::Full,
        StudyLrvMode::Stopped => LrvMode::Stopped,
    };
    let settings = TestSettings {
        weight: config.weight,
        centered: false,
        level: config.level,
        lrv_mode: mode,
        kernel: config.kernel,
        lags: config.lags.map_or(LagChoice::Auto, LagChoice::Fixed),
        quantile: source.clone(),
    };
    Ok(cpe::change_point_test(&series, &pair, &settings)?.decision)
}

fn weighted_table(config: &StudyConfig) -> Result<Option<QuantileTable>> {
    if config.weight.is_unweighted() {
        return Ok(None);
    }
    let grid = config.quantile_grid.unwrap_or(config.n);
    let table_seed = seed::derive(config.base_seed, &[u64::MAX]);
    QuantileTable::simulate(config.weight, grid, config.quantile_reps, table_seed).map(Some)
}

/// Rejection rate of every `(d, ϑ)` cell.
pub fn run_power_study(config: &StudyConfig) -> Result<Vec<StudyRow>> {
    config.validate()?;
    let table = weighted_table(config)?;
    let source = match &table {
        None => QuantileSource::Kolmogorov,
        Some(t) => QuantileSource::Table(t),
    };
    let mut rows = Vec::new();
    for &d in &config.dims {
        for &theta in &config.thetas {
            let tau = ChangePointModel::tau_from_fraction(config.n, theta)?;
            let model = linproc::table1_model(config.n, d, tau)?;
            let decisions = (0..config.reps)
                .into_par_iter()
                .map(|rep| power_replicate(config, &model, &source, cell_seed(config.base_seed, d, theta, rep)))
                .collect::<Result<Vec<bool>>>()?;
            let hits = decisions.iter().filter(|&&b| b).count();
            rows.push(StudyRow {
                method: config.method(),
                lrv_mode: config.lrv_mode.label(),
                theta,
                d,
                rejection_rate: hits as f64 / config.reps as f64,
                reps: config.reps,
                seed: config.base_seed,
            });
        }
    }
    Ok(rows)
}

/// Projection set fed to the global test.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GlobalProjections {
    /// Leading eigenvectors of the pre-change lag-0 covariance.
    Principal,
    /// Gram–Schmidt orthonormalized Dirichlet draws.
    Dirichlet { concentration: f64 },
}

impl GlobalProjections {
    pub fn label(&self) -> String {
        match self {
            GlobalProjections::Principal => "principal".into(),
            GlobalProjections::Dirichlet { concentration } => format!("dirichlet({concentration})"),
        }
    }
}

/// Design of the global `Q_n` study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalStudyConfig {
    pub n: usize,
    pub d: usize,
    /// Numbers of leading projections fed to the test.
    pub r_values: Vec<usize>,
    pub reps: usize,
    pub level: f64,
    pub beta: f64,
    /// Change fraction of the power run.
    pub theta: f64,
    pub learning_size: usize,
    pub projections: GlobalProjections,
    /// Replicates of the conditional null simulation of `Q_n`.
    pub null_reps: usize,
    /// Bridge grid; `None` means `n`.
    #[serde(default)]
    pub grid_n: Option<usize>,
    pub mu_reps: usize,
    pub base_seed: u64,
    #[serde(default = "default_kernel")]
    pub kernel: KernelKind,
    #[serde(default)]
    pub lags: Option<usize>,
}

impl GlobalStudyConfig {
    pub fn table2(r_values: Vec<usize>, reps: usize, base_seed: u64) -> Self {
        Self {
            n: 500,
            d: 10,
            r_values,
            reps,
            level: 0.05,
            beta: 0.3,
            theta: 0.5,
            learning_size: 500,
            projections: GlobalProjections::Principal,
            null_reps: 2000,
            grid_n: None,
            mu_reps: 20_000,
            base_seed,
            kernel: KernelKind::Bartlett,
            lags: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.reps < 1 || self.null_reps < 1 || self.mu_reps < 1 {
            return fail("replication counts must be positive".into());
        }
        if self.r_values.is_empty() || self.r_values.contains(&0) {
            return fail("need at least one positive projection count".into());
        }
        let max_r = *self.r_values.iter().max().unwrap();
        if max_r > self.d {
            return fail(format!("{max_r} orthonormal projections do not fit in dimension {}", self.d));
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return fail("power-run change fraction must lie in (0, 1)".into());
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return fail("level outside (0, 1)".into());
        }
        WeightFunction::power(self.beta)?;
        if let GlobalProjections::Dirichlet { concentration } = self.projections {
            if !(concentration > 0.0) {
                return fail("Dirichlet concentration must be positive".into());
            }
        }
        let m = self.lags.unwrap_or_else(|| lrv::default_lags(self.learning_size));
        if m >= self.learning_size {
            return fail("learning sample shorter than the lag truncation".into());
        }
        if self.n < 4 || self.grid_n.is_some_and(|g| g < 2) {
            return fail("sample size or grid too small".into());
        }
        Ok(())
    }
}

/// Level (`ϑ = 1`) and power (`ϑ = theta`) of the global test for each `r`.
pub fn run_global_study(config: &GlobalStudyConfig) -> Result<Vec<StudyRow>> {
    config.validate()?;
    let g = WeightFunction::power(config.beta)?;
    let grid = config.grid_n.unwrap_or(config.n);
    let max_r = *config.r_values.iter().max().unwrap();
    let tau = ChangePointModel::tau_from_fraction(config.n, config.theta)?;
    let change = linproc::table1_model(config.n, config.d, tau)?;
    let null = linproc::table1_model(config.n, config.d, config.n)?;
    let basis = match config.projections {
        GlobalProjections::Principal => projections::principal_directions(&null.pre.autocovariance(0, 1.0), max_r)?,
        GlobalProjections::Dirichlet { concentration } => {
            projections::orthonormal_dirichlet(config.d, max_r, concentration, seed::derive(config.base_seed, &[11]))?
        }
    };
    let pairs: Vec<ProjectionPair> = basis.into_iter().map(ProjectionPair::symmetric).collect::<Result<_>>()?;
    let mu = dist::mu_star(g, grid, config.mu_reps, seed::derive(config.base_seed, &[12]))?;
    let m = config.lags.unwrap_or_else(|| lrv::default_lags(config.learning_size));
    let kernel = KernelSpec::new(config.kernel, m);

    let mut rows = Vec::new();
    for &r in &config.r_values {
        let pairs = &pairs[..r];
        let pool = QnNullPool::simulate(r, g, grid, config.null_reps, seed::derive(config.base_seed, &[13, r as u64]))?;
        let outcomes = (0..config.reps)
            .into_par_iter()
            .map(|rep| {
                let rep_seed = cell_seed(config.base_seed, r, config.theta, rep);
                global_replicate(config, pairs, &g, mu, &kernel, &pool, &null, &change, rep_seed)
            })
            .collect::<Result<Vec<(bool, bool)>>>()?;
        let size = outcomes.iter().filter(|o| o.0).count();
        let power = outcomes.iter().filter(|o| o.1).count();
        for (theta, hits) in [(1.0, size), (config.theta, power)] {
            rows.push(StudyRow {
                method: format!("global_qn({}, {})", config.beta, config.projections.label()),
                lrv_mode: format!("learning({})", config.learning_size),
                theta,
                d: r,
                rejection_rate: hits as f64 / config.reps as f64,
                reps: config.reps,
                seed: config.base_seed,
            });
        }
    }
    Ok(rows)
}

/// `(rejects under no change, rejects under change)` for one replicate; both
/// samples share the learning sample and the conditional critical value.
#[allow(clippy::too_many_arguments)]
fn global_replicate(
    config: &GlobalStudyConfig,
    pairs: &[ProjectionPair],
    g: &WeightFunction,
    mu: f64,
    kernel: &KernelSpec,
    pool: &QnNullPool,
    null: &ChangePointModel,
    change: &ChangePointModel,
    rep_seed: u64,
) -> Result<(bool, bool)> {
    let learning = linproc::simulate_linear(&null.pre, &InnovationSpec::gaussian(seed::derive(rep_seed, &[2])), config.learning_size)?;
    let beta = lrv::beta2_matrix(&learning, pairs, 1.0, kernel)?;
    let sigma_t = lrv::correlation_from_beta(&beta)?;
    let sd: Vec<f64> = (0..pairs.len()).map(|j| beta[(j, j)].sqrt()).collect();
    let mut sample = pool.sample(&sigma_t, mu)?;
    sample.sort_by(f64::total_cmp);
    let critical = dist::empirical_quantile(&sample, 1.0 - config.level)?;
    let mu_vec = vec![mu; pairs.len()];
    let decide = |model: &ChangePointModel, s: u64| -> Result<bool> {
        let series = linproc::simulate_change_model(model, &InnovationSpec::gaussian(s))?;
        let c = cusum::multivariate_transform(&series, pairs, g)?;
        let t: Vec<f64> = c.iter().zip(&sd).map(|(c, s)| c / s).collect();
        Ok(cusum::qn_statistic(&t, &mu_vec, &sigma_t)? > critical)
    };
    Ok((decide(null, seed::derive(rep_seed, &[3]))?, decide(change, seed::derive(rep_seed, &[4]))?))
}

/// `level ± 2 SE` band of a binomial rejection rate.
pub fn binomial_band(level: f64, reps: usize) -> (f64, f64) {
    let se = (level * (1.0 - level) / reps as f64).sqrt();
    (level - 2.0 * se, level + 2.0 * se)
}

pub fn check_rows(rows: &[StudyRow]) -> Result<()> {
    if rows.iter().any(|r| !(0.0..=1.0).contains(&r.rejection_rate)) {
        return invalid("rejection rate outside [0, 1]");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        let mut c = StudyConfig::table1(vec![10], vec![0.5], 10, 1);
        assert!(c.validate().is_ok());
        c.reps = 0;
        assert!(c.validate().is_err());
        let mut c = StudyConfig::table1(vec![10], vec![1.5], 10, 1);
        assert!(c.validate().is_err());
        c.thetas = vec![0.5];
        c.level = 1.0;
        assert!(c.validate().is_err());
        let mut g = GlobalStudyConfig::table2(vec![2, 11], 1, 1);
        assert!(g.validate().is_err());
        g.r_values = vec![2];
        assert!(g.validate().is_ok());
    }

    #[test]
    fn study_is_reproducible() {
        let mut c = StudyConfig::table1(vec![5], vec![0.5, 1.0], 40, 77);
        c.projection = ProjectionKind::Dirichlet { concentration: 1.0 };
        let a = run_power_study(&c).unwrap();
        let b = run_power_study(&c).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2);
        check_rows(&a).unwrap();
    }

    #[test]
    fn thread_count_does_not_matter() {
        let c = StudyConfig {
            weight: WeightFunction::power(0.3).unwrap(),
            lrv_mode: StudyLrvMode::Stopped,
            quantile_reps: 2000,
            ..StudyConfig::table1(vec![4], vec![0.25], 30, 5)
        };
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let a = one.install(|| run_power_study(&c)).unwrap();
        let b = three.install(|| run_power_study(&c)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn global_smoke_run() {
        let mut c = GlobalStudyConfig::table2(vec![2], 1, 3);
        c.null_reps = 200;
        c.mu_reps = 500;
        let rows = run_global_study(&c).unwrap();
        assert_eq!(rows.len(), 2);
        for r in &rows {
            assert!(r.rejection_rate == 0.0 || r.rejection_rate == 1.0);
        }
    }

    #[test]
    fn band_is_symmetric() {
        let (lo, hi) = binomial_band(0.05, 1000);
        assert!((0.05 - lo - (hi - 0.05)).abs() < 1e-15);
        assert!((hi - 0.05 - 2.0 * (0.0475f64 / 1000.0).sqrt()).abs() < 1e-12);
    }
}
