//! Lag-window estimation of the long-run (co)variance of projected products.
//!
//! For pairs `j`, `k` and the first `⌊nu⌋` observations,
//!
//! ```text
//! Γ̂(u; h, j, k) = ⌊nu⌋⁻¹ Σ_{i=1}^{⌊nu⌋−h} (p_i^(j) − ĉ_j)(p_{i+h}^(k) − ĉ_k)
//! β̂²(j, k)      = Γ̂(u; 0, j, k) + 2 Σ_{h=1}^{m} w(h / b_m) Γ̂(u; h, j, k)
//! ```
//!
//! where `p^(j)` are the projected products of pair `j` and `ĉ_j` their mean.
//! `α̂²(u)` is the single-pair case. The closed-form long-run covariance of a
//! linear process ([`theoretical_beta2`]) serves as the reference value.

use serde::{Deserialize, Serialize};

use nalgebra::DMatrix;

use crate::cusum::projected_products;
use crate::error::{invalid, Error, Result};
use crate::linproc::{CoefficientArray, Series};
use crate::projections::ProjectionPair;

/// Estimates at or below this value are replaced by it and flagged.
pub const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    /// `w(x) = max(0, 1 − |x|)`.
    Bartlett,
    /// `w(x) = 1(|x| ≤ 1)`.
    Truncated,
}

impl std::str::FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bartlett" => Ok(KernelKind::Bartlett),
            "truncated" => Ok(KernelKind::Truncated),
            other => invalid(format!("unknown kernel '{other}'")),
        }
    }
}

/// Lag window `w_mh = w(h / b_m)` used for `h = 1..=m`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub bandwidth: f64,
    pub lags: usize,
}

impl KernelSpec {
    /// Kernel with bandwidth `b_m = m`.
    pub fn new(kind: KernelKind, lags: usize) -> Self {
        Self {
            kind,
            bandwidth: lags.max(1) as f64,
            lags,
        }
    }

    pub fn bartlett(lags: usize) -> Self {
        Self::new(KernelKind::Bartlett, lags)
    }

    pub fn truncated(lags: usize) -> Self {
        Self::new(KernelKind::Truncated, lags)
    }

    pub fn weight(&self, h: usize) -> f64 {
        let x = h as f64 / self.bandwidth;
        match self.kind {
            KernelKind::Bartlett => (1.0 - x.abs()).max(0.0),
            KernelKind::Truncated => {
                if x.abs() <= 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return invalid("kernel bandwidth must be positive");
        }
        Ok(())
    }
}

/// `m = ⌈n^{1/3}⌉`.
pub fn default_lags(n: usize) -> usize {
    let c = (n as f64).cbrt().ceil() as usize;
    // guard against cbrt rounding just above an integer
    if c > 1 && (c - 1).pow(3) >= n {
        c - 1
    } else {
        c
    }
}

/// A long-run variance or covariance estimate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrvEstimate {
    pub value: f64,
    pub raw: f64,
    /// Fraction of the sample used.
    pub u: f64,
    /// Number of observations used, `⌊nu⌋`.
    pub used: usize,
    pub m: usize,
    pub kernel: KernelKind,
    pub floor_applied: bool,
}

impl LrvEstimate {
    pub fn sd(&self) -> f64 {
        self.value.sqrt()
    }
}

/// `⌊n u⌋` for `u ∈ (0, 1]`.
pub fn prefix_len(n: usize, u: f64) -> Result<usize> {
    if !(u > 0.0 && u <= 1.0) {
        return invalid(format!("sample fraction {u} outside (0, 1]"));
    }
    Ok(((n as f64) * u + 1e-9).floor() as usize)
}

/// `Γ̂` at lag `h` over the first `len` products of two sequences.
pub fn gamma_hat_products(pj: &[f64], pk: &[f64], len: usize, h: usize) -> Result<f64> {
    if len > pj.len() || len > pk.len() {
        return invalid("prefix longer than the product sequence");
    }
    if len <= h {
        return invalid(format!("lag {h} needs more than {len} observations"));
    }
    let cj = pj[..len].iter().sum::<f64>() / len as f64;
    let ck = pk[..len].iter().sum::<f64>() / len as f64;
    let s: f64 = (0..len - h).map(|i| (pj[i] - cj) * (pk[i + h] - ck)).sum();
    Ok(s / len as f64)
}

/// Sample autocovariance at lag `h` of the projected products of two pairs
/// over the first `⌊nu⌋` observations.
pub fn gamma_hat(series: &Series, pair_j: &ProjectionPair, pair_k: &ProjectionPair, u: f64, h: usize) -> Result<f64> {
    let len = prefix_len(series.len(), u)?;
    let pj = projected_products(series, pair_j.v(), pair_j.w())?;
    let pk = projected_products(series, pair_k.v(), pair_k.w())?;
    gamma_hat_products(&pj, &pk, len, h)
}

/// Lag-window estimate over the first `len` products.
pub fn lrv_products(pj: &[f64], pk: &[f64], len: usize, kernel: &KernelSpec) -> Result<LrvEstimate> {
    kernel.validate()?;
    if kernel.lags >= len {
        return invalid(format!(
            "lag truncation m={} needs more than {} observations",
            kernel.lags, len
        ));
    }
    let sym = |h: usize| -> Result<f64> {
        // Γ̂(h, j, k) and Γ̂(h, k, j) together keep β̂²(j, k) symmetric
        Ok(0.5 * (gamma_hat_products(pj, pk, len, h)? + gamma_hat_products(pk, pj, len, h)?))
    };
    let mut raw = gamma_hat_products(pj, pk, len, 0)?;
    for h in 1..=kernel.lags {
        let w = kernel.weight(h);
        if w != 0.0 {
            raw += 2.0 * w * sym(h)?;
        }
    }
    Ok(LrvEstimate {
        value: raw,
        raw,
        u: len as f64 / pj.len() as f64,
        used: len,
        m: kernel.lags,
        kernel: kernel.kind,
        floor_applied: false,
    })
}

fn floored(mut est: LrvEstimate) -> LrvEstimate {
    if !(est.raw > VARIANCE_FLOOR) {
        est.value = VARIANCE_FLOOR;
        est.floor_applied = true;
    }
    est
}

/// `α̂²(u)` for one pair, floored at [`VARIANCE_FLOOR`].
pub fn alpha2_hat(series: &Series, pair: &ProjectionPair, u: f64, kernel: &KernelSpec) -> Result<LrvEstimate> {
    let len = prefix_len(series.len(), u)?;
    alpha2_hat_prefix(series, pair, len, kernel)
}

/// `α̂²` from the first `len` observations.
pub fn alpha2_hat_prefix(series: &Series, pair: &ProjectionPair, len: usize, kernel: &KernelSpec) -> Result<LrvEstimate> {
    if len == 0 || len > series.len() {
        return invalid(format!("cannot use {len} of {} observations", series.len()));
    }
    let p = projected_products(series, pair.v(), pair.w())?;
    Ok(floored(lrv_products(&p, &p, len, kernel)?))
}

/// `β̂²(j, k)`; off-diagonal values may be negative and are not floored.
pub fn beta2_hat(
    series: &Series,
    pair_j: &ProjectionPair,
    pair_k: &ProjectionPair,
    u: f64,
    kernel: &KernelSpec,
) -> Result<LrvEstimate> {
    let len = prefix_len(series.len(), u)?;
    let pj = projected_products(series, pair_j.v(), pair_j.w())?;
    if pair_j == pair_k {
        return Ok(floored(lrv_products(&pj, &pj, len, kernel)?));
    }
    let pk = projected_products(series, pair_k.v(), pair_k.w())?;
    let est = lrv_products(&pj, &pk, len, kernel)?;
    Ok(if est.raw.abs() <= VARIANCE_FLOOR { floored(est) } else { est })
}

/// All `β̂²(j, k)` for a list of pairs, as an `L × L` matrix.
pub fn beta2_matrix(series: &Series, pairs: &[ProjectionPair], u: f64, kernel: &KernelSpec) -> Result<DMatrix<f64>> {
    if pairs.is_empty() {
        return invalid("need at least one projection pair");
    }
    let len = prefix_len(series.len(), u)?;
    let products = pairs
        .iter()
        .map(|p| projected_products(series, p.v(), p.w()))
        .collect::<Result<Vec<_>>>()?;
    let l = pairs.len();
    let mut out = DMatrix::zeros(l, l);
    for j in 0..l {
        for k in j..l {
            let est = lrv_products(&products[j], &products[k], len, kernel)?;
            out[(j, k)] = est.raw;
            out[(k, j)] = est.raw;
        }
    }
    Ok(out)
}

/// Correlation form `β̂²(j,k) / (β̂(j,j) β̂(k,k))`, symmetrized, unit diagonal.
///
/// A diagonal estimate at or below [`VARIANCE_FLOOR`] makes the pair unusable
/// and is reported as [`Error::DegenerateVariance`] with the pair index.
pub fn sigma_t_matrix(series: &Series, pairs: &[ProjectionPair], u: f64, kernel: &KernelSpec) -> Result<DMatrix<f64>> {
    let beta = beta2_matrix(series, pairs, u, kernel)?;
    correlation_from_beta(&beta)
}

pub fn correlation_from_beta(beta: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let l = beta.nrows();
    let sd: Vec<f64> = (0..l)
        .map(|j| {
            let v = beta[(j, j)];
            if v > VARIANCE_FLOOR {
                Ok(v.sqrt())
            } else {
                Err(Error::DegenerateVariance {
                    pair: Some(j),
                    msg: format!("long-run variance {v} at or below floor; drop this pair"),
                })
            }
        })
        .collect::<Result<_>>()?;
    let m = DMatrix::from_fn(l, l, |j, k| if j == k { 1.0 } else { beta[(j, k)] / (sd[j] * sd[k]) });
    Ok((&m + m.transpose()) * 0.5)
}

/// `α̂²` from observations `1..=tau_tilde`, i.e. at `u = τ̃ / n`.
pub fn stopped_alpha2(series: &Series, pair: &ProjectionPair, tau_tilde: usize, kernel: &KernelSpec) -> Result<LrvEstimate> {
    if tau_tilde <= kernel.lags {
        return invalid(format!(
            "stopped sample of {tau_tilde} observations is too short for m={}",
            kernel.lags
        ));
    }
    alpha2_hat_prefix(series, pair, tau_tilde, kernel)
}

/// `f̃_{ℓ,0} = Σ_j f_{ℓ,j}` for `f_{0,j} = (vᵀa_j)(wᵀa_j)` and
/// `f_{ℓ,j} = (vᵀa_j)(wᵀa_{j+ℓ}) + (wᵀa_j)(vᵀa_{j+ℓ})`, `ℓ ≥ 1`.
pub fn f_tilde(coeffs: &CoefficientArray, v: &[f64], w: &[f64], ell: usize) -> Result<f64> {
    if v.len() != coeffs.dim() || w.len() != coeffs.dim() {
        return invalid("projection and coefficient dimensions differ");
    }
    let pv = coeffs.project(v);
    let pw = coeffs.project(w);
    Ok(f_tilde_projected(&pv, &pw, ell))
}

fn f_tilde_projected(pv: &[f64], pw: &[f64], ell: usize) -> f64 {
    let len = pv.len();
    if ell == 0 {
        return pv.iter().zip(pw).map(|(a, b)| a * b).sum();
    }
    if ell >= len {
        return 0.0;
    }
    (0..len - ell)
        .map(|j| pv[j] * pw[j + ell] + pw[j] * pv[j + ell])
        .sum()
}

/// Long-run covariance of the projected products of two linear processes
/// driven by the same i.i.d. innovations:
///
/// ```text
/// β² = f̃_{0,0}(b, v, w) f̃_{0,0}(c, ṽ, w̃) Var(ε²) + σ⁴ Σ_{ℓ≥1} f̃_{ℓ,0}(b, v, w) f̃_{ℓ,0}(c, ṽ, w̃)
/// ```
pub fn theoretical_beta2(
    coeffs_b: &CoefficientArray,
    pair_1: &ProjectionPair,
    coeffs_c: &CoefficientArray,
    pair_2: &ProjectionPair,
    sigma2: f64,
    var_eps2: f64,
) -> Result<f64> {
    if !(sigma2 > 0.0) {
        return invalid("innovation variance must be positive");
    }
    if !(var_eps2 >= 0.0) {
        return invalid("Var(eps^2) must be non-negative");
    }
    if coeffs_b.dim() != pair_1.dim() || coeffs_c.dim() != pair_2.dim() {
        return invalid("projection and coefficient dimensions differ");
    }
    let (bv, bw) = (coeffs_b.project(pair_1.v()), coeffs_b.project(pair_1.w()));
    let (cv, cw) = (coeffs_c.project(pair_2.v()), coeffs_c.project(pair_2.w()));
    let lead = f_tilde_projected(&bv, &bw, 0) * f_tilde_projected(&cv, &cw, 0) * var_eps2;
    let max_ell = 2 * coeffs_b.max_lag().max(coeffs_c.max_lag());
    let tail: f64 = (1..=max_ell)
        .map(|l| f_tilde_projected(&bv, &bw, l) * f_tilde_projected(&cv, &cw, l))
        .sum();
    Ok(lead + sigma2 * sigma2 * tail)
}

/// `α²` of one regime and pair.
pub fn theoretical_alpha2(coeffs: &CoefficientArray, pair: &ProjectionPair, sigma2: f64, var_eps2: f64) -> Result<f64> {
    theoretical_beta2(coeffs, pair, coeffs, pair, sigma2, var_eps2)
}
