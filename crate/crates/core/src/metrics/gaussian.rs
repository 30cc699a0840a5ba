use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::MetricsError;

/// Symmetry tolerance for matrix square roots.
const SYMMETRY_TOL: f64 = 1e-10;
/// Eigenvalues above `-PSD_TOL` are treated as roundoff and clipped to zero.
const PSD_TOL: f64 = 1e-8;

/// `M x K` feature matrix, one sample per row.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub vectors: DMatrix<f64>,
}

impl EmbeddingSet {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, MetricsError> {
        let k = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != k) {
            return Err(MetricsError::DimensionMismatch {
                expected: k,
                got: bad.len(),
            });
        }
        let vectors = DMatrix::from_fn(rows.len(), k, |i, j| rows[i][j]);
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(MetricsError::NonFinite("embedding"));
        }
        Ok(Self { vectors })
    }

    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    /// Symmetric, PSD up to roundoff.
    pub cov: DMatrix<f64>,
}

impl GaussianStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Sample mean and unbiased covariance, symmetrised.
pub fn fit_gaussian(emb: &EmbeddingSet) -> Result<GaussianStats, MetricsError> {
    let m = emb.len();
    if m < 2 {
        return Err(MetricsError::TooFewSamples { needed: 2, got: m });
    }
    let mean = emb.vectors.row_mean().transpose();
    let mut centered = emb.vectors.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = centered.transpose() * &centered / (m as f64 - 1.0);
    let cov = (&cov + cov.transpose()) * 0.5;
    Ok(GaussianStats { mean, cov })
}

fn max_asymmetry(a: &DMatrix<f64>) -> f64 {
    let scale = a.amax().max(1.0);
    (a - a.transpose()).amax() / scale
}

/// Principal square root of a symmetric PSD matrix.
pub fn matrix_sqrt_psd(a: &DMatrix<f64>) -> Result<DMatrix<f64>, MetricsError> {
    if !a.is_square() {
        return Err(MetricsError::DimensionMismatch {
            expected: a.nrows(),
            got: a.ncols(),
        });
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite("matrix"));
    }
    let asym = max_asymmetry(a);
    if asym > SYMMETRY_TOL {
        return Err(MetricsError::NotSymmetric(asym));
    }
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let scale = eig.eigenvalues.amax().max(1.0);
    let mut roots = eig.eigenvalues.clone();
    for v in roots.iter_mut() {
        if *v < -PSD_TOL * scale {
            return Err(MetricsError::NotPsd(*v));
        }
        *v = v.max(0.0).sqrt();
    }
    let q = &eig.eigenvectors;
    Ok(q * DMatrix::from_diagonal(&roots) * q.transpose())
}

/// `|mu_g - mu_t|^2 + Tr(S_g + S_t) - 2 Tr((S_g^1/2 S_t S_g^1/2)^1/2)`, with
/// roundoff negatives clipped to zero.
pub fn frechet_distance(g: &GaussianStats, t: &GaussianStats) -> Result<f64, MetricsError> {
    let k = g.dim();
    for s in [g, t] {
        if s.dim() != k || s.cov.nrows() != k || s.cov.ncols() != k {
            return Err(MetricsError::DimensionMismatch {
                expected: k,
                got: s.cov.nrows().max(s.dim()),
            });
        }
    }
    if g == t {
        // A distribution is at distance exactly zero from itself; the general
        // formula would leave roundoff of order 1e-15.
        return Ok(0.0);
    }
    let mean_term = (&g.mean - &t.mean).norm_squared();
    // Tr((S_g^1/2 S_t S_g^1/2)^1/2) is the sum of singular values of
    // S_t^1/2 S_g^1/2. The SVD avoids square-rooting near-zero eigenvalues of
    // the product, which would amplify roundoff to ~1e-8.
    let root_g = matrix_sqrt_psd(&g.cov)?;
    let root_t = matrix_sqrt_psd(&t.cov)?;
    let cross: f64 = (root_t * root_g).singular_values().iter().sum();
    let fd = mean_term + g.cov.trace() + t.cov.trace() - 2.0 * cross;
    if !fd.is_finite() {
        return Err(MetricsError::NonFinite("frechet distance"));
    }
    Ok(fd.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_psd(k: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = DMatrix::from_fn(k, k, |_, _| rng.sample::<f64, _>(StandardNormal));
        &b * b.transpose()
    }

    fn stats(mean: Vec<f64>, cov: DMatrix<f64>) -> GaussianStats {
        GaussianStats {
            mean: DVector::from_vec(mean),
            cov,
        }
    }

    #[test]
    fn fit_identical_rows() {
        let e = EmbeddingSet::from_rows(&vec![vec![1.0, -2.0, 3.0]; 5]).unwrap();
        let g = fit_gaussian(&e).unwrap();
        assert_eq!(g.mean.as_slice(), &[1.0, -2.0, 3.0]);
        assert!(g.cov.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fit_two_rows_unbiased() {
        let e = EmbeddingSet::from_rows(&[vec![0.0, 0.0], vec![2.0, 0.0]]).unwrap();
        let g = fit_gaussian(&e).unwrap();
        assert_eq!(g.mean.as_slice(), &[1.0, 0.0]);
        assert_eq!(g.cov, DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]));
    }

    #[test]
    fn fit_recovers_seeded_gaussian() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mu = [1.0, -3.0];
        // x = mu + L z with L = [[2, 0], [1, 1]]: cov [[4, 2], [2, 2]].
        let rows: Vec<Vec<f64>> = (0..40_000)
            .map(|_| {
                let z0: f64 = rng.sample(StandardNormal);
                let z1: f64 = rng.sample(StandardNormal);
                vec![mu[0] + 2.0 * z0, mu[1] + z0 + z1]
            })
            .collect();
        let g = fit_gaussian(&EmbeddingSet::from_rows(&rows).unwrap()).unwrap();
        let cov = [[4.0, 2.0], [2.0, 2.0]];
        for i in 0..2 {
            assert!((g.mean[i] - mu[i]).abs() < 0.05 * mu[i].abs());
            for j in 0..2 {
                assert!(
                    (g.cov[(i, j)] - cov[i][j]).abs() < 0.05 * cov[i][j],
                    "{i}{j} {}",
                    g.cov[(i, j)]
                );
            }
        }
    }

    #[test]
    fn fit_rejects_single_row_and_ragged() {
        let e = EmbeddingSet::from_rows(&[vec![1.0]]).unwrap();
        assert!(matches!(fit_gaussian(&e), Err(MetricsError::TooFewSamples { .. })));
        assert!(EmbeddingSet::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
        assert!(EmbeddingSet::from_rows(&[vec![f64::NAN], vec![1.0]]).is_err());
    }

    #[test]
    fn sqrt_of_identity_and_diagonal() {
        let i = DMatrix::<f64>::identity(3, 3);
        assert!((matrix_sqrt_psd(&i).unwrap() - &i).amax() < 1e-15);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]));
        let s = matrix_sqrt_psd(&d).unwrap();
        assert!((s - DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0]))).amax() < 1e-14);
    }

    #[test]
    fn sqrt_reconstructs_random_psd() {
        for (k, seed) in [(1, 1), (5, 2), (16, 3), (64, 4)] {
            let a = random_psd(k, seed);
            let s = matrix_sqrt_psd(&a).unwrap();
            let rel = (&s * &s - &a).norm() / a.norm();
            assert!(rel < 1e-8, "k={k}: {rel:e}");
        }
    }

    #[test]
    fn sqrt_clips_tiny_negative_eigenvalues() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1e-10]));
        let s = matrix_sqrt_psd(&a).unwrap();
        assert_eq!(s[(1, 1)], 0.0);
    }

    #[test]
    fn sqrt_rejects_bad_input() {
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(matrix_sqrt_psd(&asym), Err(MetricsError::NotSymmetric(_))));
        let neg = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -0.5]));
        assert!(matches!(matrix_sqrt_psd(&neg), Err(MetricsError::NotPsd(_))));
        assert!(matrix_sqrt_psd(&DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn fd_hand_values() {
        let a = stats(vec![0.0, 1.0], random_psd(2, 9));
        assert_eq!(frechet_distance(&a, &a).unwrap(), 0.0);
        let b = stats(vec![3.0, -3.0], a.cov.clone());
        let fd = frechet_distance(&a, &b).unwrap();
        assert!((fd - 25.0).abs() < 1e-9, "{fd}");
        let one = stats(vec![0.0], DMatrix::from_element(1, 1, 1.0));
        let four = stats(vec![0.0], DMatrix::from_element(1, 1, 4.0));
        assert!((frechet_distance(&one, &four).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fd_rejects_dimension_mismatch() {
        let a = stats(vec![0.0], DMatrix::identity(1, 1));
        let b = stats(vec![0.0, 0.0], DMatrix::identity(2, 2));
        assert!(matches!(
            frechet_distance(&a, &b),
            Err(MetricsError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn fd_of_commuting_covariances_matches_closed_form() {
        // Diagonal covariances: sum (sqrt(a_i) - sqrt(b_i))^2.
        let a = [1.0, 2.0, 0.5];
        let b = [4.0, 0.1, 0.5];
        let ga = stats(vec![0.0; 3], DMatrix::from_diagonal(&DVector::from_row_slice(&a)));
        let gb = stats(vec![0.0; 3], DMatrix::from_diagonal(&DVector::from_row_slice(&b)));
        let expected: f64 = a.iter().zip(&b).map(|(x, y)| (x.sqrt() - y.sqrt()).powi(2)).sum();
        assert!((frechet_distance(&ga, &gb).unwrap() - expected).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn fd_is_symmetric_and_nonnegative(seed in 0u64..1000, k in 1usize..8, shift in -3.0f64..3.0) {
            let a = stats(vec![shift; k], random_psd(k, seed));
            let b = stats(vec![0.0; k], random_psd(k, seed + 1));
            let ab = frechet_distance(&a, &b).unwrap();
            let ba = frechet_distance(&b, &a).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - ba).abs() <= 1e-9 * (1.0 + ab.abs()), "{} vs {}", ab, ba);
            prop_assert_eq!(frechet_distance(&a, &a).unwrap(), 0.0);
        }

        #[test]
        fn fd_of_reordered_rows_is_roundoff(seed in 0u64..1000, k in 1usize..12) {
            // Reordering changes the summation order, so the general formula
            // runs on covariances that differ only by roundoff.
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows: Vec<Vec<f64>> = (0..3 * k + 2)
                .map(|_| (0..k).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
                .collect();
            let mut reversed = rows.clone();
            reversed.reverse();
            let a = fit_gaussian(&EmbeddingSet::from_rows(&rows).unwrap()).unwrap();
            let b = fit_gaussian(&EmbeddingSet::from_rows(&reversed).unwrap()).unwrap();
            prop_assert!(frechet_distance(&a, &b).unwrap() < 1e-9);
        }
    }
}
