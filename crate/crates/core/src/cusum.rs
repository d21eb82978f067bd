//! CUSUM statistics of projected outer products.
//!
//! For a pair `(v, w)` the partial sums `U_k = vᵀ (Σ_{i≤k} Y_i Y_iᵀ) w` are
//! accumulated from the scalar products `p_i = (vᵀY_i)(wᵀY_i)`, which costs
//! `O(nd)` instead of forming any `d × d` matrix. The (weighted) CUSUM
//! trajectory is
//!
//! ```text
//! |U_k − (k/n) U_n| / (√n g(k/n)),   k = 1, …, n−1.
//! ```

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dist::{self, QuantileTable};
use crate::error::{invalid, Error, Result};
use crate::linproc::{CoefficientArray, Series};
use crate::lrv::LrvEstimate;
use crate::projections::ProjectionPair;

/// Boundary weight `g(t)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightFunction {
    /// `g ≡ 1`.
    #[default]
    None,
    /// `g(t) = [t(1−t)]^β` with `0 ≤ β < 1/2`.
    Power { beta: f64 },
}

impl WeightFunction {
    pub fn power(beta: f64) -> Result<Self> {
        let g = WeightFunction::Power { beta };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            WeightFunction::Power { beta } if !(0.0..0.5).contains(&beta) => {
                invalid(format!("weight exponent {beta} outside [0, 1/2)"))
            }
            _ => Ok(()),
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            WeightFunction::None => 1.0,
            WeightFunction::Power { beta } => (t * (1.0 - t)).powf(beta),
        }
    }

    pub fn is_unweighted(&self) -> bool {
        matches!(self, WeightFunction::None) || matches!(self, WeightFunction::Power { beta } if *beta == 0.0)
    }

    pub fn label(&self) -> String {
        match *self {
            WeightFunction::None => "unweighted".into(),
            WeightFunction::Power { beta } => format!("power({beta})"),
        }
    }
}

/// A CUSUM trajectory with its maximum and smallest maximizer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CusumResult {
    /// Entry `k − 1` holds the value at `k = 1..n−1`.
    pub trajectory: Vec<f64>,
    pub statistic: f64,
    /// Smallest `k` attaining the maximum.
    pub argmax_k: usize,
}

impl CusumResult {
    fn from_trajectory(trajectory: Vec<f64>) -> Self {
        let (argmax_k, statistic) = smallest_argmax(&trajectory);
        Self {
            trajectory,
            statistic,
            argmax_k,
        }
    }
}

/// `(k, value)` of the first maximum, with `k` 1-based.
pub(crate) fn smallest_argmax(values: &[f64]) -> (usize, f64) {
    let mut best = (1, f64::NEG_INFINITY);
    for (i, &x) in values.iter().enumerate() {
        if x > best.1 {
            best = (i + 1, x);
        }
    }
    best
}

fn check_dims(series: &Series, v: &[f64], w: &[f64]) -> Result<()> {
    if v.len() != series.dim() || w.len() != series.dim() {
        return invalid(format!(
            "projection dimensions ({}, {}) do not match series dimension {}",
            v.len(),
            w.len(),
            series.dim()
        ));
    }
    Ok(())
}

/// `p_i = (vᵀY_i)(wᵀY_i)`.
pub fn projected_products(series: &Series, v: &[f64], w: &[f64]) -> Result<Vec<f64>> {
    check_dims(series, v, w)?;
    Ok(series
        .rows()
        .map(|y| {
            let (mut a, mut b) = (0.0, 0.0);
            for ((yi, vi), wi) in y.iter().zip(v).zip(w) {
                a += vi * yi;
                b += wi * yi;
            }
            a * b
        })
        .collect())
}

/// Weighted CUSUM trajectory of a product sequence.
pub fn cusum_of_products(products: &[f64], g: &WeightFunction) -> Result<CusumResult> {
    let n = products.len();
    if n < 2 {
        return invalid("CUSUM needs at least two observations");
    }
    g.validate()?;
    let total: f64 = products.iter().sum();
    let scale = (n as f64).sqrt();
    let mut partial = 0.0;
    let trajectory = products[..n - 1]
        .iter()
        .enumerate()
        .map(|(i, p)| {
            partial += p;
            let k = (i + 1) as f64;
            let t = k / n as f64;
            (partial - t * total).abs() / (scale * g.eval(t))
        })
        .collect();
    Ok(CusumResult::from_trajectory(trajectory))
}

/// CUSUM of the pair's projected products; `centered` subtracts the sample
/// mean vector from every row first.
pub fn cusum(series: &Series, pair: &ProjectionPair, g: &WeightFunction, centered: bool) -> Result<CusumResult> {
    if series.len() < 2 {
        return invalid("CUSUM needs at least two observations");
    }
    let products = if centered {
        projected_products(&series.centered(), pair.v(), pair.w())?
    } else {
        projected_products(series, pair.v(), pair.w())?
    };
    cusum_of_products(&products, g)
}

/// Where the critical value of a test comes from.
#[derive(Clone, Debug)]
pub enum QuantileSource<'a> {
    /// Kolmogorov law; only valid for the unweighted statistic.
    Kolmogorov,
    /// A precomputed bridge supremum table for the same weight function.
    Table(&'a QuantileTable),
    /// Simulate a table on the fly.
    Simulate { grid_n: usize, reps: usize, seed: u64 },
    Fixed(f64),
}

impl QuantileSource<'_> {
    /// Critical value at nominal `level`.
    pub fn critical_value(&self, g: &WeightFunction, level: f64) -> Result<f64> {
        if !(level > 0.0 && level < 1.0) {
            return invalid(format!("level {level} outside (0, 1)"));
        }
        match self {
            QuantileSource::Kolmogorov => {
                if !g.is_unweighted() {
                    return invalid("the Kolmogorov quantile only applies to the unweighted CUSUM");
                }
                dist::kolmogorov_quantile(1.0 - level)
            }
            QuantileSource::Table(t) => {
                if t.g != *g {
                    return invalid(format!(
                        "quantile table built for {} but test uses {}",
                        t.g.label(),
                        g.label()
                    ));
                }
                t.quantile(1.0 - level)
            }
            QuantileSource::Simulate { grid_n, reps, seed } => {
                dist::bridge_sup_quantile(*g, *grid_n, *reps, 1.0 - level, *seed)
            }
            QuantileSource::Fixed(q) => Ok(*q),
        }
    }

    pub fn label(&self) -> String {
        match self {
            QuantileSource::Kolmogorov => "kolmogorov".into(),
            QuantileSource::Table(t) => format!("table(grid_n={}, reps={}, seed={})", t.grid_n, t.reps, t.seed),
            QuantileSource::Simulate { grid_n, reps, seed } => {
                format!("simulated(grid_n={grid_n}, reps={reps}, seed={seed})")
            }
            QuantileSource::Fixed(q) => format!("fixed({q})"),
        }
    }
}

/// Outcome of a change-point test together with the settings that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    /// `T_n = C_n(g) / α̂` (or `Q_n` for the global test).
    pub statistic: f64,
    /// Unstandardized `C_n(g)`.
    pub cusum: f64,
    pub alpha_hat: f64,
    pub quantile: f64,
    pub level: f64,
    pub decision: bool,
    pub tau_hat: usize,
    pub tau_tilde: Option<usize>,
    pub lrv: Option<LrvEstimate>,
    pub settings: BTreeMap<String, String>,
    pub warnings: Vec<String>,
}

/// Standardizes `C_n(g)` by `alpha_hat` and compares with the critical value.
pub fn test(
    series: &Series,
    pair: &ProjectionPair,
    g: &WeightFunction,
    centered: bool,
    alpha_hat: f64,
    level: f64,
    source: &QuantileSource<'_>,
) -> Result<TestReport> {
    let res = cusum(series, pair, g, centered)?;
    test_from_cusum(&res, g, centered, alpha_hat, level, source)
}

/// [`test`] for an already computed trajectory.
pub fn test_from_cusum(
    res: &CusumResult,
    g: &WeightFunction,
    centered: bool,
    alpha_hat: f64,
    level: f64,
    source: &QuantileSource<'_>,
) -> Result<TestReport> {
    if !(alpha_hat > 0.0 && alpha_hat.is_finite()) {
        return Err(Error::DegenerateVariance {
            pair: None,
            msg: format!("alpha_hat = {alpha_hat}"),
        });
    }
    let quantile = source.critical_value(g, level)?;
    let statistic = res.statistic / alpha_hat;
    let mut settings = BTreeMap::new();
    settings.insert("weight".into(), g.label());
    settings.insert("centered".into(), centered.to_string());
    settings.insert("quantile_source".into(), source.label());
    Ok(TestReport {
        statistic,
        cusum: res.statistic,
        alpha_hat,
        quantile,
        level,
        decision: statistic > quantile,
        tau_hat: res.argmax_k,
        tau_tilde: None,
        lrv: None,
        settings,
        warnings: Vec::new(),
    })
}

/// `(C_n(v_j, w_j; g))_{j=1..L}`.
pub fn multivariate_transform(series: &Series, pairs: &[ProjectionPair], g: &WeightFunction) -> Result<Vec<f64>> {
    if pairs.is_empty() {
        return invalid("CUSUM transform needs at least one projection pair");
    }
    pairs
        .iter()
        .map(|p| cusum(series, p, g, false).map(|r| r.statistic))
        .collect()
}

/// `Q_n = (T − μ*)ᵀ Σ⁺ (T − μ*)` with the Moore–Penrose inverse of `sigma_t`.
pub fn qn_statistic(t: &[f64], mu_star: &[f64], sigma_t: &DMatrix<f64>) -> Result<f64> {
    let l = t.len();
    if l == 0 || mu_star.len() != l || sigma_t.shape() != (l, l) {
        return invalid(format!(
            "dimension mismatch: T has {l} entries, mu* {}, sigma {:?}",
            mu_star.len(),
            sigma_t.shape()
        ));
    }
    let pinv = dist::pseudo_inverse(sigma_t, dist::PINV_TOL)?;
    Ok(dist::quadratic_form(&pinv, t, mu_star))
}

/// Mean of `U_k − (k/n) U_n` under a single change after `tau` with
/// bilinear-form jump `delta = vᵀΣ₀w − vᵀΣ₁w`.
pub fn drift_mn(k: usize, n: usize, tau: usize, delta: f64) -> Result<f64> {
    if n == 0 || k < 1 || k > n {
        return invalid(format!("k={k} outside 1..={n}"));
    }
    if tau < 1 || tau > n {
        return invalid(format!("tau={tau} outside 1..={n}"));
    }
    let (k, n, tau) = (k as f64, n as f64, tau as f64);
    Ok(if k <= tau {
        k * (n - tau) / n * delta
    } else {
        tau * (n - k) / n * delta
    })
}

/// `vᵀ Σ w` for `Σ = σ² Σ_j a_j a_jᵀ`.
pub fn bilinear_variance(coeffs: &CoefficientArray, pair: &ProjectionPair, sigma2: f64) -> Result<f64> {
    if pair.dim() != coeffs.dim() {
        return invalid("projection and coefficient dimensions differ");
    }
    let pv = coeffs.project(pair.v());
    let pw = coeffs.project(pair.w());
    Ok(sigma2 * pv.iter().zip(&pw).map(|(a, b)| a * b).sum::<f64>())
}

/// `Δ = vᵀΣ₀w − vᵀΣ₁w` from the two regimes' coefficients.
pub fn change_delta(pre: &CoefficientArray, post: &CoefficientArray, pair: &ProjectionPair, sigma2: f64) -> Result<f64> {
    Ok(bilinear_variance(pre, pair, sigma2)? - bilinear_variance(post, pair, sigma2)?)
}
