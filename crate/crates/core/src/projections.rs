//! Projection vectors `v`, `w` defining the bilinear form `vᵀ Σ w` under test.

use nalgebra::DMatrix;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::dist;
use crate::error::{invalid, Result};
use crate::seed;

/// A validated pair of weighting vectors with cached norms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionPair {
    v: Vec<f64>,
    w: Vec<f64>,
    v_l1: f64,
    v_l2: f64,
    w_l1: f64,
    w_l2: f64,
}

fn l1(x: &[f64]) -> f64 {
    x.iter().map(|a| a.abs()).sum()
}

fn l2(x: &[f64]) -> f64 {
    x.iter().map(|a| a * a).sum::<f64>().sqrt()
}

impl ProjectionPair {
    pub fn new(v: Vec<f64>, w: Vec<f64>) -> Result<Self> {
        if v.is_empty() || v.len() != w.len() {
            return invalid(format!(
                "projection vectors must be non-empty with equal length ({} vs {})",
                v.len(),
                w.len()
            ));
        }
        if v.iter().chain(&w).any(|x| !x.is_finite()) {
            return invalid("projection vectors contain non-finite entries");
        }
        let (v_l1, v_l2, w_l1, w_l2) = (l1(&v), l2(&v), l1(&w), l2(&w));
        if v_l1 == 0.0 || w_l1 == 0.0 || v_l2 == 0.0 || w_l2 == 0.0 {
            return invalid("projection vectors must be non-zero");
        }
        Ok(Self {
            v,
            w,
            v_l1,
            v_l2,
            w_l1,
            w_l2,
        })
    }

    /// The pair `(v, v)`, testing the variance of `vᵀY`.
    pub fn symmetric(v: Vec<f64>) -> Result<Self> {
        Self::new(v.clone(), v)
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn w(&self) -> &[f64] {
        &self.w
    }

    pub fn dim(&self) -> usize {
        self.v.len()
    }

    pub fn l1_norms(&self) -> (f64, f64) {
        (self.v_l1, self.w_l1)
    }

    pub fn l2_norms(&self) -> (f64, f64) {
        (self.v_l2, self.w_l2)
    }

    /// `‖v‖₁‖w‖₁`, the quantity whose growth rate the asymptotics constrain.
    pub fn l1_product(&self) -> f64 {
        self.v_l1 * self.w_l1
    }

    /// `(a·v, b·w)`.
    pub fn scaled(&self, a: f64, b: f64) -> Result<Self> {
        Self::new(
            self.v.iter().map(|x| a * x).collect(),
            self.w.iter().map(|x| b * x).collect(),
        )
    }
}

/// `(1/d, …, 1/d)`.
pub fn uniform_projection(d: usize) -> Result<Vec<f64>> {
    if d == 0 {
        return invalid("dimension must be positive");
    }
    Ok(vec![1.0 / d as f64; d])
}

/// Group-mean vector over `index_set` (1-based coordinates).
///
/// With `decay_r`, the set is instead zeroed and the remaining coordinates get
/// the power-decay weights `(1/2)^r, (1/3)^r, …` in order.
pub fn block_projection(d: usize, index_set: &[usize], decay_r: Option<f64>) -> Result<Vec<f64>> {
    if d == 0 {
        return invalid("dimension must be positive");
    }
    if index_set.is_empty() {
        return invalid("index set is empty");
    }
    let mut in_set = vec![false; d];
    for &i in index_set {
        if i < 1 || i > d {
            return invalid(format!("index {i} outside 1..={d}"));
        }
        in_set[i - 1] = true;
    }
    let size = in_set.iter().filter(|&&b| b).count();
    match decay_r {
        None => Ok(in_set
            .iter()
            .map(|&b| if b { 1.0 / size as f64 } else { 0.0 })
            .collect()),
        Some(r) => {
            if !r.is_finite() {
                return invalid("decay exponent must be finite");
            }
            if size == d {
                return invalid("decay variant needs at least one coordinate outside the set");
            }
            let mut rank = 1;
            Ok(in_set
                .iter()
                .map(|&b| {
                    if b {
                        0.0
                    } else {
                        rank += 1;
                        (rank as f64).powf(-r)
                    }
                })
                .collect())
        }
    }
}

/// Symmetric Dirichlet(c, …, c) draw via normalized Gamma(c, 1) variables.
pub fn dirichlet_projection(d: usize, concentration: f64, seed: u64) -> Result<Vec<f64>> {
    if d == 0 {
        return invalid("dimension must be positive");
    }
    if !(concentration > 0.0 && concentration.is_finite()) {
        return invalid("Dirichlet concentration must be positive");
    }
    if d == 1 {
        return Ok(vec![1.0]);
    }
    let gamma = Gamma::new(concentration, 1.0).map_err(|e| crate::Error::InvalidArgument(e.to_string()))?;
    let mut rng = seed::rng(seed);
    loop {
        let g: Vec<f64> = (0..d).map(|_| gamma.sample(&mut rng)).collect();
        let total: f64 = g.iter().sum();
        // all-zero draws are possible for tiny concentrations
        if total > 0.0 {
            return Ok(g.into_iter().map(|x| x / total).collect());
        }
    }
}

/// `count` Dirichlet draws orthonormalized by Gram–Schmidt in draw order.
///
/// The first vector is the normalized first draw, so it stays close to the
/// uniform direction; later vectors span the remaining random directions.
pub fn orthonormal_dirichlet(d: usize, count: usize, concentration: f64, seed: u64) -> Result<Vec<Vec<f64>>> {
    if count == 0 || count > d {
        return invalid(format!("cannot draw {count} orthonormal vectors in dimension {d}"));
    }
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    let mut draw = 0u64;
    while basis.len() < count {
        let mut x = dirichlet_projection(d, concentration, seed::derive(seed, &[draw]))?;
        draw += 1;
        for b in &basis {
            let dot: f64 = x.iter().zip(b).map(|(a, c)| a * c).sum();
            x.iter_mut().zip(b).for_each(|(a, c)| *a -= dot * c);
        }
        let norm = l2(&x);
        if norm > 1e-8 {
            basis.push(x.into_iter().map(|a| a / norm).collect());
        }
        if draw > 100 * count as u64 {
            return invalid("failed to draw linearly independent directions");
        }
    }
    Ok(basis)
}

/// The `count` leading unit eigenvectors of a symmetric matrix, by
/// decreasing eigenvalue. Each is signed so its largest-magnitude entry
/// (first on ties) is positive.
pub fn principal_directions(cov: &DMatrix<f64>, count: usize) -> Result<Vec<Vec<f64>>> {
    if count == 0 || count > cov.nrows() {
        return invalid(format!("cannot take {count} principal directions in dimension {}", cov.nrows()));
    }
    let eig = dist::symmetric_eigen(cov)?;
    let mut order: Vec<usize> = (0..cov.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    Ok(order[..count]
        .iter()
        .map(|&k| {
            let mut u: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
            let pivot = u.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            if pivot < 0.0 {
                u.iter_mut().for_each(|x| *x = -*x);
            }
            u
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn uniform_vectors() {
        assert_eq!(uniform_projection(4).unwrap(), vec![0.25; 4]);
        assert_eq!(uniform_projection(1).unwrap(), vec![1.0]);
        for d in [1, 3, 7, 100] {
            assert_abs_diff_eq!(l1(&uniform_projection(d).unwrap()), 1.0, epsilon = 1e-12);
        }
        assert!(uniform_projection(0).is_err());
    }

    #[test]
    fn block_vectors() {
        assert_eq!(block_projection(5, &[4, 5], None).unwrap(), vec![0.0, 0.0, 0.0, 0.5, 0.5]);
        assert_eq!(block_projection(3, &[1, 2, 3], None).unwrap(), uniform_projection(3).unwrap());
        assert_eq!(block_projection(3, &[1], Some(2.0)).unwrap(), vec![0.0, 0.25, 1.0 / 9.0]);
        assert!(block_projection(3, &[], None).is_err());
        assert!(block_projection(3, &[4], None).is_err());
    }

    #[test]
    fn dirichlet_is_on_simplex_and_reproducible() {
        for seed in 0..20 {
            let x = dirichlet_projection(7, 1.0, seed).unwrap();
            assert!(x.iter().all(|&a| a >= 0.0));
            assert_abs_diff_eq!(x.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
            assert_eq!(x, dirichlet_projection(7, 1.0, seed).unwrap());
        }
        assert_eq!(dirichlet_projection(1, 0.3, 9).unwrap(), vec![1.0]);
        assert!(dirichlet_projection(3, 0.0, 1).is_err());
        assert!(dirichlet_projection(3, -1.0, 1).is_err());
    }

    #[test]
    fn dirichlet_mean_is_uniform() {
        let d = 5;
        let reps = 10_000;
        let draws: Vec<Vec<f64>> = (0..reps).map(|s| dirichlet_projection(d, 1.0, s).unwrap()).collect();
        for i in 0..d {
            let xs: Vec<f64> = draws.iter().map(|x| x[i]).collect();
            let mean = xs.iter().sum::<f64>() / reps as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
            let se = (var / reps as f64).sqrt();
            assert!((mean - 0.2).abs() < 3.0 * se, "coordinate {i}: {mean} ± {se}");
        }
    }

    #[test]
    fn orthonormal_set() {
        let b = orthonormal_dirichlet(6, 4, 1.0, 3).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let dot: f64 = b[i].iter().zip(&b[j]).map(|(x, y)| x * y).sum();
                assert_abs_diff_eq!(dot, if i == j { 1.0 } else { 0.0 }, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn pair_validation() {
        assert!(ProjectionPair::new(vec![0.0, 0.0], vec![1.0, 0.0]).is_err());
        assert!(ProjectionPair::new(vec![1.0], vec![1.0, 0.0]).is_err());
        assert!(ProjectionPair::new(vec![f64::INFINITY], vec![1.0]).is_err());
        let p = ProjectionPair::new(vec![3.0, -4.0], vec![1.0, 1.0]).unwrap();
        assert_eq!(p.l1_norms(), (7.0, 2.0));
        assert_abs_diff_eq!(p.l2_norms().0, 5.0);
        assert_eq!(p.l1_product(), 14.0);
    }

    #[test]
    fn principal_directions_of_diagonal_matrix() {
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 3.0, 2.0]));
        let u = principal_directions(&m, 2).unwrap();
        assert_eq!(u[0], vec![0.0, 1.0, 0.0]);
        assert_eq!(u[1], vec![0.0, 0.0, 1.0]);
        assert!(principal_directions(&m, 0).is_err());
        assert!(principal_directions(&m, 4).is_err());
    }

    #[test]
    fn principal_directions_diagonalize() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.1, 0.5, 1.0, 0.3, 0.1, 0.3, 0.7]);
        let u = principal_directions(&a, 3).unwrap();
        let mut prev = f64::INFINITY;
        for (i, ui) in u.iter().enumerate() {
            let x = nalgebra::DVector::from_column_slice(ui);
            let lam = (x.transpose() * &a * &x)[(0, 0)];
            assert!(lam <= prev);
            prev = lam;
            assert!(((&a * &x) - &x * lam).amax() < 1e-10);
            for uj in &u[i + 1..] {
                let dot: f64 = ui.iter().zip(uj).map(|(p, q)| p * q).sum();
                assert!(dot.abs() < 1e-12);
            }
        }
    }
}
