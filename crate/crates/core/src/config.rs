//! Model and study configuration files.
//!
//! Files are parsed as TOML unless the extension is `.json`; a TOML parse
//! failure on another extension falls back to JSON. The environment variable
//! [`SEED_ENV`] overrides every seed read from a file.

use std::path::Path;

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linproc::{self, ChangePointModel, CoefficientArray, Innovation, InnovationSpec, Series};

pub const SEED_ENV: &str = "COVCUSUM_SEED";

/// Seed override from the environment, if set.
pub fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("{SEED_ENV}=`{s}` is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

pub fn parse_str<T: DeserializeOwned>(text: &str, json: bool) -> Result<T> {
    if json {
        return serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()));
    }
    match toml::from_str(text) {
        Ok(v) => Ok(v),
        Err(toml_err) => serde_json::from_str(text).map_err(|_| Error::Config(toml_err.to_string())),
    }
}

pub fn load<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    parse_str(&text, json)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Table1,
    Spiked,
    Varma,
    Raw,
}

/// Spiked covariance `Σ λ_j u_j u_jᵀ + σ² I`; `vectors` lists the `u_j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpikedBlock {
    pub lambdas: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
    pub sigma: f64,
}

/// VARMA(p, r) given by row-major `d × d` matrices; `max_lag` truncates the
/// MA(∞) expansion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarmaBlock {
    #[serde(default)]
    pub ar: Vec<Vec<Vec<f64>>>,
    #[serde(default)]
    pub ma: Vec<Vec<Vec<f64>>>,
    pub max_lag: usize,
}

/// One coefficient row `a_0^(ν), …, a_J^(ν)` per coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawBlock {
    pub coefficients: Vec<Vec<f64>>,
}

/// A simulation model file.
///
/// The `pre` block describes the first regime; an optional `post` block of the
/// same kind takes over after `tau` (or `⌊n · theta_frac⌋`). Without `post` the
/// series has no change. `table1` needs neither block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub n: usize,
    pub d: usize,
    #[serde(default)]
    pub tau: Option<usize>,
    #[serde(default)]
    pub theta_frac: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub distribution: Innovation,
    /// Post-change MA block spacing of `table1` models.
    #[serde(default)]
    pub spacing: Option<usize>,
    #[serde(default)]
    pub pre: Option<toml::Value>,
    #[serde(default)]
    pub post: Option<toml::Value>,
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Config(format!("{what}: ragged or empty matrix")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

fn block<T: DeserializeOwned>(value: &toml::Value, name: &str) -> Result<T> {
    value
        .clone()
        .try_into()
        .map_err(|e| Error::Config(format!("`{name}` block: {e}")))
}

impl ModelSpec {
    fn regime(&self, value: &toml::Value, name: &str) -> Result<CoefficientArray> {
        let coeffs = match self.kind {
            ModelKind::Table1 => unreachable!("table1 has fixed regimes"),
            ModelKind::Raw => CoefficientArray::from_rows(block::<RawBlock>(value, name)?.coefficients)?,
            ModelKind::Spiked => {
                let b: SpikedBlock = block(value, name)?;
                if b.vectors.iter().any(|v| v.len() != self.d) {
                    return Err(Error::Config(format!("`{name}`: spike vectors must have length d = {}", self.d)));
                }
                let u = matrix(&b.vectors, name)?.transpose();
                linproc::spiked_coefficients(&b.lambdas, &u, b.sigma)?
            }
            ModelKind::Varma => {
                let b: VarmaBlock = block(value, name)?;
                let ar = b.ar.iter().map(|m| matrix(m, name)).collect::<Result<Vec<_>>>()?;
                let ma = b.ma.iter().map(|m| matrix(m, name)).collect::<Result<Vec<_>>>()?;
                let phis = linproc::varma_ma_coefficients(&ar, &ma, b.max_lag)?;
                linproc::flatten_matrices(&phis, &linproc::disjoint_offsets(self.d, b.max_lag))?
            }
        };
        if coeffs.dim() != self.d {
            return Err(Error::Config(format!(
                "`{name}` block has dimension {}, expected d = {}",
                coeffs.dim(),
                self.d
            )));
        }
        Ok(coeffs)
    }

    /// Change location; `n` means no change.
    pub fn change_index(&self) -> Result<usize> {
        match (self.tau, self.theta_frac) {
            (Some(_), Some(_)) => Err(Error::Config("give either tau or theta_frac, not both".into())),
            (Some(t), None) if t >= 1 && t <= self.n => Ok(t),
            (Some(t), None) => Err(Error::Config(format!("tau = {t} outside 1..={}", self.n))),
            (None, Some(f)) => Ok(ChangePointModel::tau_from_fraction(self.n, f)?),
            (None, None) => Ok(self.n),
        }
    }

    pub fn build(&self) -> Result<ChangePointModel> {
        if self.n < 2 || self.d < 1 {
            return Err(Error::Config("need n ≥ 2 and d ≥ 1".into()));
        }
        self.distribution.validate()?;
        let tau = self.change_index()?;
        if self.kind == ModelKind::Table1 {
            if self.pre.is_some() || self.post.is_some() {
                return Err(Error::Config("table1 models take no coefficient blocks".into()));
            }
            let spacing = self.spacing.unwrap_or(linproc::TABLE1_SPACING);
            let pre = linproc::table1_pre(self.d, 1e-12)?;
            return ChangePointModel::new(pre, linproc::table1_post_spaced(self.d, spacing)?, tau, self.n);
        }
        if self.spacing.is_some() {
            return Err(Error::Config("`spacing` only applies to table1 models".into()));
        }
        let pre = self
            .pre
            .as_ref()
            .ok_or_else(|| Error::Config("missing `pre` coefficient block".into()))?;
        let pre = self.regime(pre, "pre")?;
        let post = match &self.post {
            Some(v) => self.regime(v, "post")?,
            None if tau < self.n => return Err(Error::Config("a change location needs a `post` block".into())),
            None => pre.clone(),
        };
        ChangePointModel::new(pre, post, tau, self.n)
    }

    /// Simulated series, honoring the seed override.
    pub fn simulate(&self, seed_override: Option<u64>) -> Result<Series> {
        let model = self.build()?;
        let innov = InnovationSpec {
            distribution: self.distribution,
            seed: seed_override.unwrap_or(self.seed),
        };
        linproc::simulate_change_model(&model, &innov)
    }
}
