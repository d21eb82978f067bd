//! Linear process simulation.
//!
//! Every model in this module is a `d`-dimensional linear filter of ONE
//! scalar innovation stream,
//!
//! ```text
//! Y_i^(ν) = Σ_{j=0}^{J} a_j^(ν) ε_{i−j},   ν = 1..d,
//! ```
//!
//! so cross-sectional dependence comes entirely from the coefficient array.
//! Spiked covariance and VARMA models are expressed in this form by placing
//! their components at distinct innovation lags.
//!
//! Innovation streams are drawn in the order `ε_1, …, ε_n, ε_0, ε_{−1}, …`,
//! which makes the values at a given time index independent of the
//! truncation lag. Two filters simulated with the same seed therefore see
//! the same innovations, which the change-point model relies on.

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::seed;

/// MA(∞) coefficients `a_j^(ν)` of a linear process, truncated at lag `J`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientArray {
    d: usize,
    max_lag: usize,
    // row-major, d × (max_lag + 1)
    coeffs: Vec<f64>,
    // first and last non-zero lag per coordinate
    support: Vec<Option<(usize, usize)>>,
    decay_theta: Option<f64>,
}

impl CoefficientArray {
    /// Builds an array from one coefficient row per coordinate.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return invalid("coefficient array needs at least one coordinate");
        }
        let width = rows[0].len();
        if width == 0 {
            return invalid("coefficient rows must contain lag 0");
        }
        if rows.iter().any(|r| r.len() != width) {
            return invalid("coefficient rows have different lengths");
        }
        let d = rows.len();
        let coeffs: Vec<f64> = rows.into_iter().flatten().collect();
        Self::from_flat(d, width - 1, coeffs)
    }

    /// Builds an array from row-major storage of shape `d × (max_lag + 1)`.
    pub fn from_flat(d: usize, max_lag: usize, coeffs: Vec<f64>) -> Result<Self> {
        if d == 0 {
            return invalid("coefficient array needs at least one coordinate");
        }
        if coeffs.len() != d * (max_lag + 1) {
            return invalid(format!(
                "expected {} coefficients for d={d}, J={max_lag}, got {}",
                d * (max_lag + 1),
                coeffs.len()
            ));
        }
        if let Some(pos) = coeffs.iter().position(|c| !c.is_finite()) {
            return invalid(format!(
                "non-finite coefficient at coordinate {}, lag {}",
                pos / (max_lag + 1) + 1,
                pos % (max_lag + 1)
            ));
        }
        let support = coeffs
            .chunks(max_lag + 1)
            .map(|row| {
                let first = row.iter().position(|&c| c != 0.0)?;
                let last = row.iter().rposition(|&c| c != 0.0)?;
                Some((first, last))
            })
            .collect();
        Ok(Self {
            d,
            max_lag,
            coeffs,
            support,
            decay_theta: None,
        })
    }

    pub fn with_decay_theta(mut self, theta: f64) -> Result<Self> {
        if !(theta > 0.0) {
            return invalid("decay exponent must be positive");
        }
        self.decay_theta = Some(theta);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn max_lag(&self) -> usize {
        self.max_lag
    }

    pub fn decay_theta(&self) -> Option<f64> {
        self.decay_theta
    }

    pub fn row(&self, nu: usize) -> &[f64] {
        let w = self.max_lag + 1;
        &self.coeffs[nu * w..(nu + 1) * w]
    }

    pub fn get(&self, nu: usize, lag: usize) -> f64 {
        if lag > self.max_lag {
            0.0
        } else {
            self.coeffs[nu * (self.max_lag + 1) + lag]
        }
    }

    pub(crate) fn support(&self, nu: usize) -> Option<(usize, usize)> {
        self.support[nu]
    }

    /// Projected coefficient sequence `Σ_ν v_ν a_j^(ν)`, `j = 0..=J`.
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.max_lag + 1];
        for (nu, &vn) in v.iter().enumerate().take(self.d) {
            if vn == 0.0 {
                continue;
            }
            if let Some((lo, hi)) = self.support[nu] {
                let row = self.row(nu);
                for j in lo..=hi {
                    out[j] += vn * row[j];
                }
            }
        }
        out
    }

    /// `Cov(Y_t^(ν), Y_{t+h}^(μ)) = σ² Σ_j a_j^(ν) a_{j+h}^(μ)` as a `d × d` matrix.
    pub fn autocovariance(&self, h: usize, sigma2: f64) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.d, self.d);
        if h > self.max_lag {
            return out;
        }
        for nu in 0..self.d {
            let a = self.row(nu);
            for mu in 0..self.d {
                let b = self.row(mu);
                let s: f64 = (0..=self.max_lag - h).map(|j| a[j] * b[j + h]).sum();
                out[(nu, mu)] = sigma2 * s;
            }
        }
        out
    }

    /// Smallest `K` with `max_ν |a_j^(ν)| ≤ K · max(1, j)^{−3/4−θ/2}` over the stored lags.
    ///
    /// Returns `None` when no decay exponent is attached.
    pub fn decay_constant(&self) -> Option<f64> {
        let theta = self.decay_theta?;
        let expo = 0.75 + theta / 2.0;
        let k = (0..=self.max_lag)
            .map(|j| {
                let m = (0..self.d).map(|nu| self.get(nu, j).abs()).fold(0.0, f64::max);
                m * (j.max(1) as f64).powf(expo)
            })
            .fold(0.0, f64::max);
        Some(k)
    }
}

/// Marginal law of the i.i.d. innovations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Innovation {
    Gaussian { variance: f64 },
    Rademacher,
    /// Student t with `df` degrees of freedom rescaled to the given variance.
    ScaledT { df: f64, variance: f64 },
}

impl Default for Innovation {
    fn default() -> Self {
        Innovation::Gaussian { variance: 1.0 }
    }
}

impl Innovation {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Innovation::Gaussian { variance } if !(variance > 0.0 && variance.is_finite()) => {
                invalid("innovation variance must be positive")
            }
            Innovation::ScaledT { df, variance } => {
                if !(variance > 0.0 && variance.is_finite()) {
                    invalid("innovation variance must be positive")
                } else if !(df > 4.0) {
                    invalid("scaled t innovations need df > 4 for a finite fourth moment")
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            Innovation::Gaussian { variance } | Innovation::ScaledT { variance, .. } => variance,
            Innovation::Rademacher => 1.0,
        }
    }

    /// `Var(ε²) = E ε⁴ − σ⁴`.
    pub fn var_of_square(&self) -> f64 {
        match *self {
            Innovation::Gaussian { variance } => 2.0 * variance * variance,
            Innovation::Rademacher => 0.0,
            Innovation::ScaledT { df, variance } => variance * variance * (2.0 * df - 2.0) / (df - 4.0),
        }
    }

    fn sample(&self, rng: &mut seed::Rng, count: usize) -> Vec<f64> {
        match *self {
            Innovation::Gaussian { variance } => {
                let sd = variance.sqrt();
                (0..count)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(rng);
                        sd * z
                    })
                    .collect::<Vec<f64>>()
            }
            Innovation::Rademacher => (0..count)
                .map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 })
                .collect(),
            Innovation::ScaledT { df, variance } => {
                let t = StudentT::new(df).expect("validated degrees of freedom");
                let scale = (variance * (df - 2.0) / df).sqrt();
                (0..count).map(|_| scale * t.sample(rng)).collect()
            }
        }
    }
}

/// Innovation law plus the seed of the stream.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InnovationSpec {
    pub distribution: Innovation,
    pub seed: u64,
}

impl InnovationSpec {
    pub fn gaussian(seed: u64) -> Self {
        Self {
            distribution: Innovation::Gaussian { variance: 1.0 },
            seed,
        }
    }

    /// Draws `ε_{1−presample}, …, ε_n` in time order.
    ///
    /// The values at each time index do not depend on `presample`.
    pub fn draw(&self, n: usize, presample: usize) -> Result<Vec<f64>> {
        self.distribution.validate()?;
        let mut rng = seed::rng(self.seed);
        let draws = self.distribution.sample(&mut rng, n + presample);
        let mut out = vec![0.0; n + presample];
        out[presample..].copy_from_slice(&draws[..n]);
        for k in 0..presample {
            out[presample - 1 - k] = draws[n + k];
        }
        Ok(out)
    }
}

/// An observed `n × d` series, rows indexed by time.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    n: usize,
    d: usize,
    values: Vec<f64>,
}

impl Series {
    pub fn new(n: usize, d: usize, values: Vec<f64>) -> Result<Self> {
        if n == 0 || d == 0 {
            return invalid("series needs at least one observation and one coordinate");
        }
        if values.len() != n * d {
            return invalid(format!("expected {} values, got {}", n * d, values.len()));
        }
        if values.iter().any(|x| !x.is_finite()) {
            return invalid("series contains non-finite values");
        }
        Ok(Self { n, d, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return invalid("ragged rows");
        }
        Self::new(rows.len(), d, rows.concat())
    }

    /// Univariate series.
    pub fn from_column(values: Vec<f64>) -> Result<Self> {
        Self::new(values.len(), 1, values)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.d..(t + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.d)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn column(&self, nu: usize) -> Vec<f64> {
        self.rows().map(|r| r[nu]).collect()
    }

    /// Rows `start..end` as a new series.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.n {
            return invalid(format!("bad row range {start}..{end} for n={}", self.n));
        }
        Self::new(
            end - start,
            self.d,
            self.values[start * self.d..end * self.d].to_vec(),
        )
    }

    /// Every row minus the column means.
    pub fn centered(&self) -> Self {
        let mut mean = vec![0.0; self.d];
        for r in self.rows() {
            for (m, x) in mean.iter_mut().zip(r) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= self.n as f64);
        let values = self
            .rows()
            .flat_map(|r| r.iter().zip(&mean).map(|(x, m)| x - m).collect::<Vec<_>>())
            .collect();
        Self {
            n: self.n,
            d: self.d,
            values,
        }
    }
}

// `buf[offset + t]` holds ε_{t+1}; requires offset ≥ coeffs.max_lag().
fn filter_into(coeffs: &CoefficientArray, buf: &[f64], offset: usize, t: usize, out: &mut [f64]) {
    for (nu, y) in out.iter_mut().enumerate() {
        *y = match coeffs.support(nu) {
            None => 0.0,
            Some((lo, hi)) => {
                let row = coeffs.row(nu);
                (lo..=hi).map(|j| row[j] * buf[offset + t - j]).sum()
            }
        };
    }
}

/// Applies the filter to innovations `ε_{1−J}, …, ε_n` given in time order.
pub fn filter_innovations(coeffs: &CoefficientArray, innovations: &[f64]) -> Result<Series> {
    let j = coeffs.max_lag();
    if innovations.len() <= j {
        return invalid(format!(
            "need more than J={j} innovations, got {}",
            innovations.len()
        ));
    }
    let n = innovations.len() - j;
    let d = coeffs.dim();
    let mut values = vec![0.0; n * d];
    for (t, row) in values.chunks_mut(d).enumerate() {
        filter_into(coeffs, innovations, j, t, row);
    }
    Series::new(n, d, values)
}

/// Simulates `n` observations of the linear process, exact from `t = 1`.
pub fn simulate_linear(coeffs: &CoefficientArray, innov: &InnovationSpec, n: usize) -> Result<Series> {
    if n < 1 {
        return invalid("n must be at least 1");
    }
    let eps = innov.draw(n, coeffs.max_lag())?;
    filter_innovations(coeffs, &eps)
}

/// Simulates consecutive regimes driven by one innovation stream.
///
/// `regimes[k] = (filter, end)` produces rows `previous end .. end` (0-based,
/// exclusive); the last `end` is the sample size.
pub fn simulate_regimes(regimes: &[(&CoefficientArray, usize)], innov: &InnovationSpec) -> Result<Series> {
    let Some(&(_, n)) = regimes.last() else {
        return invalid("no regimes given");
    };
    let d = regimes[0].0.dim();
    if regimes.iter().any(|(c, _)| c.dim() != d) {
        return invalid("regimes have different dimensions");
    }
    if n < 1 {
        return invalid("n must be at least 1");
    }
    let mut prev = 0;
    for &(_, end) in regimes {
        if end < prev {
            return invalid("regime ends must be non-decreasing");
        }
        prev = end;
    }
    let presample = regimes.iter().map(|(c, _)| c.max_lag()).max().unwrap_or(0);
    let eps = innov.draw(n, presample)?;
    let mut values = vec![0.0; n * d];
    let mut start = 0;
    for &(coeffs, end) in regimes {
        for t in start..end {
            filter_into(coeffs, &eps, presample, t, &mut values[t * d..(t + 1) * d]);
        }
        start = end;
    }
    Series::new(n, d, values)
}

/// Pre- and post-change filters sharing one innovation stream, switching after `tau`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChangePointModel {
    pub pre: CoefficientArray,
    pub post: CoefficientArray,
    pub tau: usize,
    pub n: usize,
}

impl ChangePointModel {
    pub fn new(pre: CoefficientArray, post: CoefficientArray, tau: usize, n: usize) -> Result<Self> {
        if pre.dim() != post.dim() {
            return invalid(format!(
                "regime dimensions differ: {} vs {}",
                pre.dim(),
                post.dim()
            ));
        }
        if tau < 1 || tau > n {
            return invalid(format!("tau={tau} outside 1..={n}"));
        }
        Ok(Self { pre, post, tau, n })
    }

    /// `τ = ⌊nϑ⌋` with `ϑ = 1` meaning no change.
    pub fn tau_from_fraction(n: usize, theta: f64) -> Result<usize> {
        if !(theta > 0.0 && theta <= 1.0) {
            return invalid(format!("change fraction {theta} outside (0, 1]"));
        }
        let tau = (n as f64 * theta + 1e-9).floor() as usize;
        Ok(tau.clamp(1, n))
    }

    pub fn change_fraction(&self) -> f64 {
        self.tau as f64 / self.n as f64
    }

    pub fn has_change(&self) -> bool {
        self.tau < self.n
    }
}

/// Rows `1..=τ` come from the pre-change filter, the rest from the post-change
/// filter, both applied to the same innovations.
pub fn simulate_change_model(model: &ChangePointModel, innov: &InnovationSpec) -> Result<Series> {
    simulate_regimes(&[(&model.pre, model.tau), (&model.post, model.n)], innov)
}

fn check_orthonormal(u: &DMatrix<f64>) -> Result<()> {
    let gram = u.transpose() * u;
    let r = u.ncols();
    for i in 0..r {
        for j in 0..r {
            let target = if i == j { 1.0 } else { 0.0 };
            if (gram[(i, j)] - target).abs() > 1e-10 {
                return invalid("spike directions are not orthonormal");
            }
        }
    }
    Ok(())
}

fn check_spikes(lambdas: &[f64], u: &DMatrix<f64>, sigma: f64) -> Result<()> {
    if lambdas.len() != u.ncols() {
        return invalid(format!(
            "{} spike strengths for {} directions",
            lambdas.len(),
            u.ncols()
        ));
    }
    if u.nrows() == 0 {
        return invalid("dimension must be positive");
    }
    if lambdas.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
        return invalid("spike strengths must be positive");
    }
    if lambdas.windows(2).any(|w| w[0] <= w[1]) {
        return invalid("spike strengths must be strictly decreasing");
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return invalid("noise level must be positive");
    }
    check_orthonormal(u)
}

/// MA(r+d−1) filter whose lag-0 covariance (unit innovation variance) is the
/// spiked matrix `Σ_j λ_j u_j u_jᵀ + σ² I`.
///
/// Lags `0..r` carry `√λ_j u_j`; coordinate `ν` (1-based) gets its own noise
/// weight `σ` at lag `r − 1 + ν`.
pub fn spiked_coefficients(lambdas: &[f64], u: &DMatrix<f64>, sigma: f64) -> Result<CoefficientArray> {
    check_spikes(lambdas, u, sigma)?;
    let d = u.nrows();
    let r = lambdas.len();
    let width = r + d;
    let mut coeffs = vec![0.0; d * width];
    for nu in 0..d {
        for (j, &lam) in lambdas.iter().enumerate() {
            coeffs[nu * width + j] = lam.sqrt() * u[(nu, j)];
        }
        coeffs[nu * width + r + nu] = sigma;
    }
    CoefficientArray::from_flat(d, width - 1, coeffs)
}

/// `Σ = Σ_j λ_j u_j u_jᵀ + σ² I`.
pub fn spiked_covariance_matrix(lambdas: &[f64], u: &DMatrix<f64>, sigma: f64) -> Result<DMatrix<f64>> {
    check_spikes(lambdas, u, sigma)?;
    let d = u.nrows();
    let mut out = DMatrix::identity(d, d) * (sigma * sigma);
    for (j, &lam) in lambdas.iter().enumerate() {
        let col = u.column(j);
        out += lam * col * col.transpose();
    }
    Ok(out)
}

/// MA(∞) coefficient matrices of a VARMA(p, r) model:
/// `Φ_0 = I`, `Φ_j = M_j + Σ_{k=1}^{j} A_k Φ_{j−k}` (with `M_j = 0` for `j > r`,
/// `A_k = 0` for `k > p`).
///
/// Stability is the caller's concern; a warning is logged when the last
/// matrix is larger than `Φ_0` in max-norm.
pub fn varma_ma_coefficients(ar: &[DMatrix<f64>], ma: &[DMatrix<f64>], max_lag: usize) -> Result<Vec<DMatrix<f64>>> {
    let Some(first) = ar.first().or(ma.first()) else {
        return invalid("at least one AR or MA matrix is needed to fix the dimension");
    };
    let d = first.nrows();
    if ar.iter().chain(ma).any(|m| m.nrows() != d || m.ncols() != d) {
        return invalid("VARMA matrices must all be square of the same dimension");
    }
    let mut phis: Vec<DMatrix<f64>> = Vec::with_capacity(max_lag + 1);
    phis.push(DMatrix::identity(d, d));
    for j in 1..=max_lag {
        let mut phi = ma.get(j - 1).cloned().unwrap_or_else(|| DMatrix::zeros(d, d));
        for k in 1..=j.min(ar.len()) {
            phi += &ar[k - 1] * &phis[j - k];
        }
        phis.push(phi);
    }
    if phis[max_lag].amax() > phis[0].amax() {
        log::warn!(
            "VARMA coefficients grow: max|Φ_{max_lag}| = {} exceeds max|Φ_0|",
            phis[max_lag].amax()
        );
    }
    Ok(phis)
}

/// Default innovation lags `r_ℓ = ℓ·(J+1)`, which give each innovation
/// component a disjoint block of the scalar stream.
pub fn disjoint_offsets(components: usize, max_lag: usize) -> Vec<usize> {
    (0..components).map(|l| l * (max_lag + 1)).collect()
}

/// Flattens `d × q` coefficient matrices into a scalar-innovation array:
/// `a_k^(ν) = Σ_ℓ 1(k ≥ r_ℓ) Φ_{k−r_ℓ}[ν, ℓ]`.
pub fn flatten_matrices(phis: &[DMatrix<f64>], offsets: &[usize]) -> Result<CoefficientArray> {
    let Some(first) = phis.first() else {
        return invalid("no coefficient matrices");
    };
    let (d, q) = first.shape();
    if offsets.len() != q {
        return invalid(format!("{} lag offsets for {q} innovation components", offsets.len()));
    }
    if phis.iter().any(|m| m.shape() != (d, q)) {
        return invalid("coefficient matrices have different shapes");
    }
    let max_lag = offsets.iter().max().copied().unwrap_or(0) + phis.len() - 1;
    let width = max_lag + 1;
    let mut coeffs = vec![0.0; d * width];
    for (j, phi) in phis.iter().enumerate() {
        for (l, &off) in offsets.iter().enumerate() {
            for nu in 0..d {
                coeffs[nu * width + off + j] += phi[(nu, l)];
            }
        }
    }
    CoefficientArray::from_flat(d, max_lag, coeffs)
}

/// Order `r` of the post-change MA blocks of the simulation model.
pub const TABLE1_MA_ORDER: usize = 4;

/// Default lag offset between consecutive post-change MA blocks. With
/// `r + 1` the blocks use disjoint innovations, so the coordinates are
/// independent at lag 0; `r` lets neighbours share one innovation.
pub const TABLE1_SPACING: usize = TABLE1_MA_ORDER + 1;

/// `ρ_ν = 0.5 ν / d`.
pub fn table1_rho(nu: usize, d: usize) -> f64 {
    0.5 * nu as f64 / d as f64
}

/// `s_θ² = Σ_{k=0}^{4} (1 − 0.1k)²`.
pub fn table1_s_theta2() -> f64 {
    (0..=TABLE1_MA_ORDER).map(|k| (1.0 - 0.1 * k as f64).powi(2)).sum()
}

/// Post-change MA weight `θ_j^(ν) = (1 − 0.1j) √((1 − ρ_ν²)^{−1} / s_θ²)`.
pub fn table1_theta(j: usize, rho: f64) -> f64 {
    (1.0 - 0.1 * j as f64) * ((1.0 / (1.0 - rho * rho)) / table1_s_theta2()).sqrt()
}

/// Pre-change regime `Y_i^(ν) = ρ_ν Y_{i−1}^(ν) + ε_{i−1}`, i.e. `a_0 = 0`,
/// `a_j = ρ_ν^{j−1}`, truncated once `ρ_max^J < tail_tol`.
pub fn table1_pre(d: usize, tail_tol: f64) -> Result<CoefficientArray> {
    if d == 0 {
        return invalid("d must be positive");
    }
    if !(tail_tol > 0.0 && tail_tol < 1.0) {
        return invalid("tail tolerance must lie in (0, 1)");
    }
    let rho_max = table1_rho(d, d);
    let mut max_lag: i32 = 1;
    while rho_max.powi(max_lag) >= tail_tol {
        max_lag += 1;
    }
    let rows = (1..=d)
        .map(|nu| {
            let rho = table1_rho(nu, d);
            (0..=max_lag)
                .map(|j| if j == 0 { 0.0 } else { rho.powi(j - 1) })
                .collect()
        })
        .collect();
    CoefficientArray::from_rows(rows)
}

/// Post-change regime `Y_i^(ν) = Σ_{j=0}^{4} θ_j^(ν) ε_{i−j−(ν−1)s}` with
/// spacing `s` = [`TABLE1_SPACING`].
pub fn table1_post(d: usize) -> Result<CoefficientArray> {
    table1_post_spaced(d, TABLE1_SPACING)
}

/// [`table1_post`] with an explicit block spacing `s ≥ 1`.
pub fn table1_post_spaced(d: usize, spacing: usize) -> Result<CoefficientArray> {
    if d == 0 {
        return invalid("d must be positive");
    }
    if spacing == 0 {
        return invalid("block spacing must be positive");
    }
    let r = TABLE1_MA_ORDER;
    let max_lag = r + (d - 1) * spacing;
    let rows = (1..=d)
        .map(|nu| {
            let rho = table1_rho(nu, d);
            let shift = (nu - 1) * spacing;
            let mut row = vec![0.0; max_lag + 1];
            for j in 0..=r {
                row[shift + j] = table1_theta(j, rho);
            }
            row
        })
        .collect();
    CoefficientArray::from_rows(rows)
}

/// The AR-to-shifted-MA simulation model with change after `tau`.
pub fn table1_model(n: usize, d: usize, tau: usize) -> Result<ChangePointModel> {
    if n < 1 {
        return invalid("n must be positive");
    }
    ChangePointModel::new(table1_pre(d, 1e-12)?, table1_post(d)?, tau, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn sample_var(x: &[f64]) -> f64 {
        let m = x.iter().sum::<f64>() / x.len() as f64;
        x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64
    }

    #[test]
    fn identity_filter_passes_innovations() {
        let a = CoefficientArray::from_rows(vec![vec![1.0]]).unwrap();
        let y = filter_innovations(&a, &[0.5, -1.0, 2.0]).unwrap();
        assert_eq!(y.values(), &[0.5, -1.0, 2.0]);
    }

    #[test]
    fn impulse_response_is_the_coefficients() {
        let a = CoefficientArray::from_rows(vec![vec![1.0, 0.5, 0.25]]).unwrap();
        // ε_{-1}, ε_0, ε_1 = 1, then zeros
        let y = filter_innovations(&a, &[0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(y.values(), &[1.0, 0.5, 0.25]);
    }

    #[test]
    fn rejects_non_finite_coefficients() {
        assert!(CoefficientArray::from_rows(vec![vec![1.0, f64::NAN]]).is_err());
        assert!(CoefficientArray::from_rows(vec![vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn simulate_rejects_empty_sample() {
        let a = CoefficientArray::from_rows(vec![vec![1.0]]).unwrap();
        assert!(simulate_linear(&a, &InnovationSpec::gaussian(1), 0).is_err());
    }

    #[test]
    fn geometric_filter_variance() {
        let a = CoefficientArray::from_rows(vec![(0..=60).map(|j| 0.5f64.powi(j)).collect()]).unwrap();
        let y = simulate_linear(&a, &InnovationSpec::gaussian(11), 100_000).unwrap();
        let v = sample_var(y.values());
        assert!((v / (4.0 / 3.0) - 1.0).abs() < 0.01, "variance {v}");
    }

    #[test]
    fn innovations_do_not_depend_on_presample() {
        let spec = InnovationSpec::gaussian(5);
        let a = spec.draw(10, 0).unwrap();
        let b = spec.draw(10, 7).unwrap();
        assert_eq!(a[..], b[7..]);
    }

    #[test]
    fn no_change_equals_pre_filter() {
        let model = table1_model(50, 4, 50).unwrap();
        let spec = InnovationSpec::gaussian(3);
        let a = simulate_change_model(&model, &spec).unwrap();
        let b = simulate_linear(&model.pre, &spec, 50).unwrap();
        assert_eq!(a, b);

        let same = ChangePointModel::new(model.pre.clone(), model.pre.clone(), 20, 50).unwrap();
        assert_eq!(simulate_change_model(&same, &spec).unwrap(), b);
    }

    #[test]
    fn splice_keeps_pre_rows() {
        let model = table1_model(60, 5, 25).unwrap();
        let spec = InnovationSpec::gaussian(8);
        let a = simulate_change_model(&model, &spec).unwrap();
        let pre = simulate_linear(&model.pre, &spec, 60).unwrap();
        let post = simulate_linear(&model.post, &spec, 60).unwrap();
        assert_eq!(a.slice(0, 25).unwrap(), pre.slice(0, 25).unwrap());
        assert_eq!(a.slice(25, 60).unwrap(), post.slice(25, 60).unwrap());
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let a = table1_pre(3, 1e-12).unwrap();
        let b = table1_post(4).unwrap();
        assert!(ChangePointModel::new(a, b, 5, 10).is_err());
    }

    #[test]
    fn table1_post_coordinates_are_uncorrelated_at_lag_zero() {
        let post = table1_post(6).unwrap();
        let cov = post.autocovariance(0, 1.0);
        for i in 0..6 {
            let rho = table1_rho(i + 1, 6);
            assert_abs_diff_eq!(cov[(i, i)], 1.0 / (1.0 - rho * rho), epsilon = 1e-12);
            for j in 0..6 {
                if i != j {
                    assert_eq!(cov[(i, j)], 0.0);
                }
            }
        }
        let literal = table1_post_spaced(6, 4).unwrap().autocovariance(0, 1.0);
        assert!(literal[(0, 1)] > 0.0);
    }

    #[test]
    fn table1_marginal_variances_are_preserved() {
        let d = 10;
        let model = table1_model(100_000, d, 50_000).unwrap();
        let y = simulate_change_model(&model, &InnovationSpec::gaussian(21)).unwrap();
        let pre = y.slice(0, 50_000).unwrap();
        let post = y.slice(50_000, 100_000).unwrap();
        for nu in 0..d {
            let rho = table1_rho(nu + 1, d);
            let target = 1.0 / (1.0 - rho * rho);
            for part in [&pre, &post] {
                let v = sample_var(&part.column(nu));
                assert!((v / target - 1.0).abs() < 0.02, "coordinate {nu}: {v} vs {target}");
            }
        }
    }

    #[test]
    fn table1_constants() {
        assert_abs_diff_eq!(table1_rho(10, 10), 0.5);
        assert_abs_diff_eq!(table1_s_theta2(), 3.30, epsilon = 1e-12);
        assert_abs_diff_eq!(table1_theta(0, 0.5), ((4.0 / 3.0) / 3.30f64).sqrt(), epsilon = 1e-12);
        assert!((table1_theta(0, 0.5) - 0.6356).abs() < 1e-4);
        let pre = table1_pre(10, 1e-12).unwrap();
        assert!(0.5f64.powi(pre.max_lag() as i32) < 1e-12);
        assert!(0.5f64.powi(pre.max_lag() as i32 - 1) >= 1e-12);
        assert_eq!(pre.get(9, 0), 0.0);
        assert_eq!(pre.get(9, 3), 0.25);
        let post = table1_post(3).unwrap();
        assert_eq!(post.max_lag(), 14);
        assert_eq!(post.support(2), Some((10, 14)));
        let literal = table1_post_spaced(3, 4).unwrap();
        assert_eq!(literal.max_lag(), 12);
        assert_eq!(literal.support(2), Some((8, 12)));
        assert!(table1_post_spaced(3, 0).is_err());
    }

    #[test]
    fn spiked_small_cases() {
        let u = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let a = spiked_coefficients(&[1.0], &u, 1.0).unwrap();
        assert_eq!(a.max_lag(), 2);
        let cov = a.autocovariance(0, 1.0);
        assert_eq!(cov, DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]));

        let empty = DMatrix::<f64>::zeros(3, 0);
        let a = spiked_coefficients(&[], &empty, 2.0).unwrap();
        assert_eq!(a.autocovariance(0, 1.0), DMatrix::identity(3, 3) * 4.0);

        let u = DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 0.0]);
        let s = spiked_covariance_matrix(&[3.0], &u, 1.0).unwrap();
        assert_eq!(s, DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 4.0, 1.0])));
    }

    #[test]
    fn spiked_rejects_non_orthonormal() {
        let u = DMatrix::from_column_slice(2, 2, &[1.0, 0.0, 1.0, 1.0]);
        assert!(spiked_coefficients(&[2.0, 1.0], &u, 1.0).is_err());
        assert!(spiked_covariance_matrix(&[2.0, 1.0], &u, 1.0).is_err());
    }

    #[test]
    fn spiked_spectrum() {
        let u = DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let s = spiked_covariance_matrix(&[5.0, 2.0], &u, 0.5).unwrap();
        let mut ev: Vec<f64> = s.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        assert_abs_diff_eq!(ev[0], 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(ev[1], 2.25, epsilon = 1e-12);
        assert_abs_diff_eq!(ev[2], 5.25, epsilon = 1e-12);
    }

    #[test]
    fn varma_recursions() {
        let rho = 0.7;
        let ar = [DMatrix::identity(2, 2) * rho];
        let phis = varma_ma_coefficients(&ar, &[], 10).unwrap();
        for (j, p) in phis.iter().enumerate() {
            let expected = DMatrix::identity(2, 2) * rho.powi(j as i32);
            assert!((p - expected).amax() < 1e-15, "lag {j}");
        }

        let m1 = DMatrix::from_row_slice(2, 2, &[0.1, 0.2, 0.3, 0.4]);
        let phis = varma_ma_coefficients(&[], std::slice::from_ref(&m1), 4).unwrap();
        assert_eq!(phis[0], DMatrix::identity(2, 2));
        assert_eq!(phis[1], m1);
        assert!(phis[2..].iter().all(|p| p.amax() == 0.0));

        let a1 = DMatrix::from_element(1, 1, 0.6);
        let m1 = DMatrix::from_element(1, 1, 0.3);
        let phis = varma_ma_coefficients(std::slice::from_ref(&a1), std::slice::from_ref(&m1), 2).unwrap();
        assert_abs_diff_eq!(phis[1][(0, 0)], 0.9, epsilon = 1e-15);
        assert_abs_diff_eq!(phis[2][(0, 0)], 0.6 * 0.9, epsilon = 1e-15);

        let bad = DMatrix::identity(3, 3);
        assert!(varma_ma_coefficients(&[DMatrix::identity(2, 2)], &[bad], 3).is_err());
    }

    #[test]
    fn flatten_places_components_at_offsets() {
        let phis = vec![DMatrix::identity(2, 2), DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.2, 0.5])];
        let a = flatten_matrices(&phis, &disjoint_offsets(2, 1)).unwrap();
        assert_eq!(a.max_lag(), 3);
        assert_eq!(a.row(0), &[1.0, 0.5, 0.0, 0.1]);
        assert_eq!(a.row(1), &[0.0, 0.2, 1.0, 0.5]);
    }

    #[test]
    fn decay_constant_reports_bound() {
        let a = CoefficientArray::from_rows(vec![vec![1.0, 0.5, 0.25]])
            .unwrap()
            .with_decay_theta(0.5)
            .unwrap();
        let k = a.decay_constant().unwrap();
        assert_abs_diff_eq!(k, 1.0f64.max(0.25 * 2f64.powf(1.0)), epsilon = 1e-12);
    }

    #[test]
    fn scaled_t_moments() {
        let inn = Innovation::ScaledT { df: 10.0, variance: 2.0 };
        assert!(inn.validate().is_ok());
        assert_abs_diff_eq!(inn.var_of_square(), 4.0 * 18.0 / 6.0, epsilon = 1e-12);
        assert!(Innovation::ScaledT { df: 4.0, variance: 1.0 }.validate().is_err());
    }
}
