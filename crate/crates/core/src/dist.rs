//! Reference distributions for the CUSUM tests.
//!
//! The unweighted statistic is compared with the Kolmogorov law of
//! `sup |B⁰(t)|`; weighted statistics and the quadratic-form global test use
//! Monte Carlo tables of discretized Brownian bridge suprema. Replicate `i`
//! of every simulation draws from its own stream seeded with `seed + i`, so
//! results do not depend on the number of worker threads.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cusum::WeightFunction;
use crate::error::{invalid, Error, Result};
use crate::seed;

/// `K(z) = 1 − Σ_{i≥1} (−1)^{i−1} exp(−2 i² z²)`, zero for `z ≤ 0`.
pub fn kolmogorov_cdf(z: f64) -> f64 {
    if z <= 0.0 {
        return 0.0;
    }
    if z < 1.0 {
        // Jacobi-dual form; the alternating series cancels badly for small z.
        let c = std::f64::consts::PI.powi(2) / (8.0 * z * z);
        let mut sum = 0.0;
        for i in 1.. {
            let k = (2 * i - 1) as f64;
            let term = (-k * k * c).exp();
            sum += term;
            if term < 1e-17 * sum.max(f64::MIN_POSITIVE) || i > 200 {
                break;
            }
        }
        return ((2.0 * std::f64::consts::PI).sqrt() / z * sum).clamp(0.0, 1.0);
    }
    let mut sum = 0.0;
    for i in 1..=1000 {
        let fi = i as f64;
        let term = (-2.0 * fi * fi * z * z).exp();
        sum += if i % 2 == 1 { term } else { -term };
        let next = (-2.0 * (fi + 1.0).powi(2) * z * z).exp();
        if next < 1e-12 {
            break;
        }
    }
    (1.0 - 2.0 * sum).clamp(0.0, 1.0)
}

/// Inverse of [`kolmogorov_cdf`] by bisection.
pub fn kolmogorov_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return invalid(format!("probability {p} outside (0, 1)"));
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while kolmogorov_cdf(hi) < p {
        hi *= 2.0;
    }
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if kolmogorov_cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn check_grid(grid_n: usize, reps: usize) -> Result<()> {
    if grid_n < 2 {
        return invalid("bridge grid needs at least two points");
    }
    if reps < 1 {
        return invalid("need at least one replicate");
    }
    Ok(())
}

// Brownian motion on k/N, k = 1..=N, from N(0, 1/N) increments.
fn brownian_path(grid_n: usize, rng: &mut seed::Rng) -> Vec<f64> {
    let sd = (1.0 / grid_n as f64).sqrt();
    let mut b = 0.0;
    (0..grid_n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            b += sd * z;
            b
        })
        .collect()
}

/// `max_{1≤k<N} |B(k/N) − (k/N) B(1)| / g(k/N)` for a path on the grid.
pub fn weighted_bridge_sup(path: &[f64], g: &WeightFunction) -> f64 {
    let n = path.len();
    let end = path[n - 1];
    (1..n)
        .map(|k| {
            let t = k as f64 / n as f64;
            (path[k - 1] - t * end).abs() / g.eval(t)
        })
        .fold(0.0, f64::max)
}

/// One replicate of the weighted bridge supremum.
pub fn bridge_sup_replicate(g: &WeightFunction, grid_n: usize, seed: u64) -> f64 {
    let mut rng = seed::rng(seed);
    weighted_bridge_sup(&brownian_path(grid_n, &mut rng), g)
}

/// Lower empirical quantile of an ascending sample: element `⌈p·len⌉` (1-based).
pub fn empirical_quantile(sorted: &[f64], p: f64) -> Result<f64> {
    if sorted.is_empty() {
        return invalid("empty sample");
    }
    if !(p > 0.0 && p < 1.0) {
        return invalid(format!("probability {p} outside (0, 1)"));
    }
    let idx = ((p * sorted.len() as f64) - 1e-9).ceil().max(1.0) as usize;
    Ok(sorted[idx.min(sorted.len()) - 1])
}

/// Sorted Monte Carlo sample of `sup |B⁰(t)| / g(t)` on a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantileTable {
    pub g: WeightFunction,
    pub grid_n: usize,
    pub reps: usize,
    pub seed: u64,
    pub sorted_sample: Vec<f64>,
}

impl QuantileTable {
    pub fn simulate(g: WeightFunction, grid_n: usize, reps: usize, seed: u64) -> Result<Self> {
        g.validate()?;
        check_grid(grid_n, reps)?;
        let mut sample: Vec<f64> = (0..reps as u64)
            .into_par_iter()
            .map(|i| bridge_sup_replicate(&g, grid_n, seed::replicate(seed, i)))
            .collect();
        sample.sort_by(f64::total_cmp);
        Ok(Self {
            g,
            grid_n,
            reps,
            seed,
            sorted_sample: sample,
        })
    }

    pub fn quantile(&self, p: f64) -> Result<f64> {
        empirical_quantile(&self.sorted_sample, p)
    }

    pub fn mean(&self) -> f64 {
        self.sorted_sample.iter().sum::<f64>() / self.sorted_sample.len() as f64
    }

    /// Standard error of [`QuantileTable::mean`].
    pub fn std_error(&self) -> f64 {
        let n = self.sorted_sample.len() as f64;
        if n < 2.0 {
            return f64::INFINITY;
        }
        let m = self.mean();
        let var = self.sorted_sample.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        self.g.validate()?;
        if self.sorted_sample.len() != self.reps || self.reps == 0 {
            return Err(Error::Data("quantile table sample size does not match reps".into()));
        }
        if self.sorted_sample.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Data("quantile table sample is not sorted".into()));
        }
        Ok(())
    }
}

/// Empirical `p`-quantile of the weighted bridge supremum.
pub fn bridge_sup_quantile(g: WeightFunction, grid_n: usize, reps: usize, p: f64, seed: u64) -> Result<f64> {
    QuantileTable::simulate(g, grid_n, reps, seed)?.quantile(p)
}

/// Monte Carlo estimate of `E max_k |B⁰(k/N)| / g(k/N)`.
pub fn mu_star(g: WeightFunction, grid_n: usize, reps: usize, seed: u64) -> Result<f64> {
    Ok(QuantileTable::simulate(g, grid_n, reps, seed)?.mean())
}

fn check_symmetric(m: &DMatrix<f64>, tol: f64) -> Result<()> {
    if !m.is_square() {
        return invalid("matrix is not square");
    }
    let scale = m.amax().max(1.0);
    for i in 0..m.nrows() {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > tol * scale {
                return invalid(format!("matrix is not symmetric at ({i}, {j})"));
            }
        }
    }
    Ok(())
}

pub(crate) fn symmetric_eigen(m: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    check_symmetric(m, 1e-8)?;
    let sym = (m + m.transpose()) * 0.5;
    Ok(SymmetricEigen::new(sym))
}

/// Moore–Penrose inverse of a symmetric matrix via its eigendecomposition;
/// eigenvalues with `|λ| ≤ tol · max|λ|` are treated as zero.
pub fn pseudo_inverse(m: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>> {
    let eig = symmetric_eigen(m)?;
    let cutoff = tol * eig.eigenvalues.amax();
    let inv = eig
        .eigenvalues
        .map(|l| if l.abs() <= cutoff || l == 0.0 { 0.0 } else { 1.0 / l });
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose())
}

pub const PINV_TOL: f64 = 1e-10;

/// Symmetric square root of a positive semi-definite matrix.
///
/// Eigenvalues in `[−1e−8, 0)` are set to zero; anything more negative is an error.
pub fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = symmetric_eigen(m)?;
    if let Some(l) = eig.eigenvalues.iter().copied().find(|&l| l < -1e-8) {
        return invalid(format!("matrix is not positive semi-definite (eigenvalue {l})"));
    }
    let root = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose())
}

/// `(x − μ)ᵀ M⁺ (x − μ)` with a precomputed pseudo-inverse.
pub(crate) fn quadratic_form(pinv: &DMatrix<f64>, x: &[f64], mu: &[f64]) -> f64 {
    let diff = DVector::from_iterator(x.len(), x.iter().zip(mu).map(|(a, b)| a - b));
    (diff.transpose() * pinv * &diff)[(0, 0)].max(0.0)
}

/// Independent Brownian paths for the null simulation of `Q_n`.
///
/// Correlated bridges are linear images `R·B` of independent paths `B`, so
/// one pool serves any correlation matrix of the same size; replicate `i`
/// is seeded with `seed + i`.
#[derive(Clone, Debug)]
pub struct QnNullPool {
    g: WeightFunction,
    grid_n: usize,
    dim: usize,
    // per replicate: dim × grid_n, row-major
    paths: Vec<Vec<f64>>,
}

impl QnNullPool {
    pub fn simulate(dim: usize, g: WeightFunction, grid_n: usize, reps: usize, seed: u64) -> Result<Self> {
        g.validate()?;
        check_grid(grid_n, reps)?;
        if dim == 0 {
            return invalid("need at least one coordinate");
        }
        let paths = (0..reps as u64)
            .into_par_iter()
            .map(|i| {
                let mut rng = seed::rng(seed::replicate(seed, i));
                let sd = (1.0 / grid_n as f64).sqrt();
                let mut level = vec![0.0; dim];
                let mut out = vec![0.0; dim * grid_n];
                for k in 0..grid_n {
                    for (j, b) in level.iter_mut().enumerate() {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        *b += sd * z;
                        out[j * grid_n + k] = *b;
                    }
                }
                out
            })
            .collect();
        Ok(Self { g, grid_n, dim, paths })
    }

    pub fn reps(&self) -> usize {
        self.paths.len()
    }

    /// `Q` for every replicate given the correlation matrix and `μ*`.
    pub fn sample(&self, sigma_t: &DMatrix<f64>, mu_star: f64) -> Result<Vec<f64>> {
        if sigma_t.shape() != (self.dim, self.dim) {
            return invalid(format!(
                "correlation matrix is {:?}, pool has dimension {}",
                sigma_t.shape(),
                self.dim
            ));
        }
        let root = psd_sqrt(sigma_t)?;
        let pinv = pseudo_inverse(sigma_t, PINV_TOL)?;
        let mu = vec![mu_star; self.dim];
        let (l, n) = (self.dim, self.grid_n);
        Ok(self
            .paths
            .par_iter()
            .map_init(
                || vec![0.0; n],
                |mixed, indep| {
                    let sups: Vec<f64> = (0..l)
                        .map(|j| {
                            mixed.iter_mut().for_each(|x| *x = 0.0);
                            for m in 0..l {
                                let c = root[(j, m)];
                                if c != 0.0 {
                                    let src = &indep[m * n..(m + 1) * n];
                                    mixed.iter_mut().zip(src).for_each(|(x, s)| *x += c * s);
                                }
                            }
                            weighted_bridge_sup(mixed, &self.g)
                        })
                        .collect();
                    quadratic_form(&pinv, &sups, &mu)
                },
            )
            .collect())
    }
}

/// Null sample of `Q = (S − μ*)ᵀ Σ⁺ (S − μ*)` where `S` holds the weighted
/// sups of `L` bridges with cross-correlation `sigma_t`.
pub fn qn_null_sample(
    sigma_t: &DMatrix<f64>,
    g: WeightFunction,
    grid_n: usize,
    reps: usize,
    mu_star: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    QnNullPool::simulate(sigma_t.nrows(), g, grid_n, reps, seed)?.sample(sigma_t, mu_star)
}

/// Empirical `p`-quantile of the null law of `Q_n` given the correlation
/// matrix, with `μ*` estimated from the same number of replicates and seed.
pub fn qn_null_quantile(
    sigma_t: &DMatrix<f64>,
    g: WeightFunction,
    grid_n: usize,
    reps: usize,
    p: f64,
    seed: u64,
) -> Result<f64> {
    check_unit_diagonal(sigma_t)?;
    let mu = mu_star(g, grid_n, reps, seed)?;
    let mut sample = qn_null_sample(sigma_t, g, grid_n, reps, mu, seed)?;
    sample.sort_by(f64::total_cmp);
    empirical_quantile(&sample, p)
}

fn check_unit_diagonal(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() || m.nrows() == 0 {
        return invalid("correlation matrix must be square and non-empty");
    }
    if m.diagonal().iter().any(|&x| (x - 1.0).abs() > 1e-8) {
        return invalid("correlation matrix must have unit diagonal");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    #[test]
    fn kolmogorov_values() {
        assert!(kolmogorov_cdf(0.1) < 1e-10);
        assert_eq!(kolmogorov_cdf(0.0), 0.0);
        assert_eq!(kolmogorov_cdf(-1.0), 0.0);
        let q = kolmogorov_quantile(0.95).unwrap();
        assert!((q - 1.35810).abs() < 1e-4, "{q}");
        for p in [0.5, 0.9, 0.99] {
            let z = kolmogorov_quantile(p).unwrap();
            assert!((kolmogorov_cdf(z) - p).abs() < 1e-7);
        }
        assert!(kolmogorov_quantile(0.0).is_err());
        assert!(kolmogorov_quantile(1.0).is_err());
    }

    #[test]
    fn both_kolmogorov_forms_agree_near_switch() {
        // the two expansions meet at z = 1
        let left = kolmogorov_cdf(1.0 - 1e-12);
        let right = kolmogorov_cdf(1.0);
        assert!((left - right).abs() < 1e-10);
    }

    #[test]
    fn empirical_quantile_convention() {
        let s: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(empirical_quantile(&s, 0.95).unwrap(), 19.0);
        assert_eq!(empirical_quantile(&s, 0.951).unwrap(), 20.0);
        assert_eq!(empirical_quantile(&s, 0.01).unwrap(), 1.0);
    }

    #[test]
    fn bridge_ends_at_zero() {
        let mut rng = seed::rng(4);
        let path = brownian_path(50, &mut rng);
        let end = path[49];
        assert_eq!(path[49] - 1.0 * end, 0.0);
    }

    #[test]
    fn table_monotone_and_persistent() {
        let t = QuantileTable::simulate(WeightFunction::None, 200, 2000, 5).unwrap();
        assert!(t.quantile(0.99).unwrap() > t.quantile(0.90).unwrap());
        assert!(t.mean() <= t.quantile(0.95).unwrap());
        let json = serde_json::to_string(&t).unwrap();
        let back: QuantileTable = serde_json::from_str(&json).unwrap();
        assert_eq!(t, back);
        assert!(back.validate().is_ok());
    }

    #[test]
    fn weighted_quantile_fixture() {
        // computed once with this seed and frozen; no closed form exists
        let g = WeightFunction::power(0.3).unwrap();
        let q = bridge_sup_quantile(g, 1000, 20_000, 0.95, 20_240_515).unwrap();
        assert!((q - 2.157_866_469_143_329_4).abs() < 1e-12, "{q}");
        assert!(q > kolmogorov_quantile(0.95).unwrap());
    }

    #[test]
    fn mu_star_se_scales() {
        let a = QuantileTable::simulate(WeightFunction::None, 200, 2000, 1).unwrap();
        let b = QuantileTable::simulate(WeightFunction::None, 200, 8000, 1).unwrap();
        // quadrupling reps halves the standard error
        let ratio = a.std_error() / b.std_error();
        assert!((ratio - 2.0).abs() < 0.2, "ratio {ratio}");
    }

    #[test]
    fn rejects_degenerate_grid() {
        assert!(bridge_sup_quantile(WeightFunction::None, 1, 100, 0.5, 0).is_err());
        assert!(bridge_sup_quantile(WeightFunction::None, 100, 0, 0.5, 0).is_err());
        assert!(bridge_sup_quantile(WeightFunction::None, 100, 100, 1.5, 0).is_err());
    }

    #[test]
    fn pinv_small_cases() {
        let i = DMatrix::<f64>::identity(3, 3);
        assert_abs_diff_eq!(pseudo_inverse(&i, PINV_TOL).unwrap(), i, epsilon = 1e-12);
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]);
        let p = pseudo_inverse(&m, PINV_TOL).unwrap();
        assert_abs_diff_eq!(p, DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.0]), epsilon = 1e-12);
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(pseudo_inverse(&asym, PINV_TOL).is_err());
    }

    fn random_psd(rank: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = seed::rng(seed);
        let x = DMatrix::from_fn(5, rank, |_, _| rng.random_range(-1.0..1.0));
        &x * x.transpose()
    }

    #[test]
    fn penrose_identities() {
        for (rank, seed) in [(2, 1), (3, 2), (5, 3), (1, 4)] {
            let m = random_psd(rank, seed);
            let p = pseudo_inverse(&m, PINV_TOL).unwrap();
            assert_abs_diff_eq!(&m * &p * &m, m.clone(), epsilon = 1e-8);
            assert_abs_diff_eq!(&p * &m * &p, p.clone(), epsilon = 1e-8);
            let mp = &m * &p;
            assert_abs_diff_eq!(mp.transpose(), mp, epsilon = 1e-8);
            let pm = &p * &m;
            assert_abs_diff_eq!(pm.transpose(), pm, epsilon = 1e-8);
        }
    }

    #[test]
    fn psd_sqrt_rejects_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(psd_sqrt(&m).is_err());
        let m = random_psd(3, 9);
        let r = psd_sqrt(&m).unwrap();
        assert_abs_diff_eq!(&r * &r, m, epsilon = 1e-10);
    }

    #[test]
    fn qn_scalar_collapse() {
        let g = WeightFunction::power(0.3).unwrap();
        let one = DMatrix::from_element(1, 1, 1.0);
        let (grid, reps, seed) = (100, 1000, 17);
        let table = QuantileTable::simulate(g, grid, reps, seed).unwrap();
        let mu = table.mean();
        let mut expected: Vec<f64> = (0..reps as u64)
            .map(|i| (bridge_sup_replicate(&g, grid, seed + i) - mu).powi(2))
            .collect();
        expected.sort_by(f64::total_cmp);
        let q = qn_null_quantile(&one, g, grid, reps, 0.95, seed).unwrap();
        assert_abs_diff_eq!(q, empirical_quantile(&expected, 0.95).unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn qn_independent_coordinates_factorize() {
        // with Σ = I each replicate is a sum of squared centred sups of two
        // independent bridges; simulate those bridges directly
        let g = WeightFunction::None;
        let (grid, reps, seed, mu) = (100, 300, 3, 0.87);
        let sample = qn_null_sample(&DMatrix::identity(2, 2), g, grid, reps, mu, seed).unwrap();
        for (i, q) in sample.iter().enumerate() {
            let mut rng = seed::rng(seed + i as u64);
            let sd = (1.0 / grid as f64).sqrt();
            let (mut a, mut b) = (vec![0.0; grid], vec![0.0; grid]);
            let (mut la, mut lb) = (0.0, 0.0);
            for k in 0..grid {
                let za: f64 = StandardNormal.sample(&mut rng);
                let zb: f64 = StandardNormal.sample(&mut rng);
                la += sd * za;
                lb += sd * zb;
                a[k] = la;
                b[k] = lb;
            }
            let expected = (weighted_bridge_sup(&a, &g) - mu).powi(2) + (weighted_bridge_sup(&b, &g) - mu).powi(2);
            assert_abs_diff_eq!(*q, expected, epsilon = 1e-10);
        }
        let again = qn_null_sample(&DMatrix::identity(2, 2), g, grid, reps, mu, seed).unwrap();
        assert_eq!(sample, again);
    }

    #[test]
    fn qn_rejects_bad_correlation() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.5, 1.5, 1.0]);
        assert!(qn_null_quantile(&m, WeightFunction::None, 100, 100, 0.9, 1).is_err());
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        assert!(qn_null_quantile(&m, WeightFunction::None, 100, 100, 0.9, 1).is_err());
    }
}
