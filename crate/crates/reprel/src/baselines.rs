//! Baseline reliability scores: Dist_k, Norm, Feature Variance, and
//! ensemble averaging of per-member scores.

use rayon::prelude::*;

use crate::embedding::{distance, norm2, DistanceMetric, EmbeddingMatrix, EnsembleEmbeddings};
use crate::error::{Error, Result};

/// Direction in which a score indicates reliability.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarity {
    HigherIsReliable,
    LowerIsReliable,
}

impl std::fmt::Display for Polarity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Polarity::HigherIsReliable => write!(f, "higher_is_reliable"),
            Polarity::LowerIsReliable => write!(f, "lower_is_reliable"),
        }
    }
}

/// One score per test row, tagged with its polarity.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    values: Vec<f64>,
    polarity: Polarity,
}

impl ScoreVector {
    pub fn new(values: Vec<f64>, polarity: Polarity) -> Result<Self> {
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!(
                "non-finite score {} at index {pos}",
                values[pos]
            )));
        }
        Ok(Self { values, polarity })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn polarity(&self) -> Polarity {
        self.polarity
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Values with `LowerIsReliable` negated, so that higher always means
    /// more reliable. Used before rank correlation.
    pub fn oriented_values(&self) -> Vec<f64> {
        match self.polarity {
            Polarity::HigherIsReliable => self.values.clone(),
            Polarity::LowerIsReliable => self.values.iter().map(|v| -v).collect(),
        }
    }
}

/// Mean of the k smallest distances from a test point to the reference rows.
/// Lower is more reliable.
pub fn dist_k_score(
    test: &[f64],
    refs: &EmbeddingMatrix,
    k: usize,
    metric: DistanceMetric,
) -> Result<f64> {
    if k == 0 || k > refs.rows() {
        return Err(Error::Parameter(format!(
            "k must be in [1, {}], got {k}",
            refs.rows()
        )));
    }
    let mut dists = refs
        .iter_rows()
        .map(|r| distance(test, r, metric))
        .collect::<Result<Vec<_>>>()?;
    if k < dists.len() {
        dists.select_nth_unstable_by(k - 1, f64::total_cmp);
        dists.truncate(k);
    }
    Ok(dists.iter().sum::<f64>() / k as f64)
}

/// Dist_k for every test row of one member pair.
pub fn dist_k_scores(
    refs: &EmbeddingMatrix,
    tests: &EmbeddingMatrix,
    k: usize,
    metric: DistanceMetric,
) -> Result<ScoreVector> {
    let values = (0..tests.rows())
        .into_par_iter()
        .map(|row| dist_k_score(tests.row(row), refs, k, metric))
        .collect::<Result<Vec<_>>>()?;
    ScoreVector::new(values, Polarity::LowerIsReliable)
}

/// L2 norm of the (unnormalized) representation. Higher is more reliable.
pub fn norm_score(member: &EmbeddingMatrix, test_row: usize) -> f64 {
    norm2(member.row(test_row))
}

/// Norm score for every test row of one member.
pub fn norm_scores(tests: &EmbeddingMatrix) -> Result<ScoreVector> {
    let values = tests.iter_rows().map(norm2).collect();
    ScoreVector::new(values, Polarity::HigherIsReliable)
}

/// Population variance of a test point's representations across members,
/// in the pairwise form `(1/M²) Σ_{i<j} ‖z_i − z_j‖²`. Lower is more reliable.
pub fn feature_variance(ens: &EnsembleEmbeddings, test_row: usize) -> Result<f64> {
    ens.require_pairs()?;
    let m = ens.num_members();
    let mut total = 0.0;
    for i in 0..m {
        let zi = ens.member(i).test.row(test_row);
        for j in (i + 1)..m {
            let zj = ens.member(j).test.row(test_row);
            total += crate::embedding::euclidean_sq(zi, zj);
        }
    }
    Ok(total / (m * m) as f64)
}

/// Feature variance for every test row.
pub fn feature_variance_batch(ens: &EnsembleEmbeddings) -> Result<ScoreVector> {
    ens.require_pairs()?;
    let values = (0..ens.test_rows())
        .into_par_iter()
        .map(|row| feature_variance(ens, row))
        .collect::<Result<Vec<_>>>()?;
    ScoreVector::new(values, Polarity::LowerIsReliable)
}

/// Point-wise arithmetic mean of per-member score vectors.
///
/// All inputs must share length and polarity.
pub fn ensemble_average(per_member: &[ScoreVector]) -> Result<ScoreVector> {
    let first = per_member
        .first()
        .ok_or_else(|| Error::InvalidInput("no score vectors to average".into()))?;
    let n = first.len();
    let polarity = first.polarity();
    for (i, s) in per_member.iter().enumerate() {
        if s.len() != n {
            return Err(Error::Shape(format!(
                "score vector {i} has length {}, expected {n}",
                s.len()
            )));
        }
        if s.polarity() != polarity {
            return Err(Error::Polarity(format!(
                "score vector {i} has polarity {}, expected {polarity}",
                s.polarity()
            )));
        }
    }
    let m = per_member.len() as f64;
    let values = (0..n)
        .map(|row| per_member.iter().map(|s| s.values()[row]).sum::<f64>() / m)
        .collect();
    ScoreVector::new(values, polarity)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{DistanceMetric::Euclidean, MemberPair};
    use crate::testutil::{random_ensemble, random_matrix, rng, std_normal};
    use approx::assert_abs_diff_eq;

    #[test]
    fn dist_k_small_cases() {
        // distances from 0 to {0.1, 0.3, 0.2}
        let refs = EmbeddingMatrix::from_rows(vec![vec![0.1], vec![0.3], vec![0.2]]).unwrap();
        assert_abs_diff_eq!(dist_k_score(&[0.0], &refs, 1, Euclidean).unwrap(), 0.1);
        assert_abs_diff_eq!(
            dist_k_score(&[0.0], &refs, 2, Euclidean).unwrap(),
            0.15,
            epsilon = 1e-15
        );
    }

    #[test]
    fn dist_k_matches_sort_then_average_oracle() {
        let mut r = rng(41);
        let refs = random_matrix(&mut r, 30, 5);
        let q: Vec<f64> = (0..5).map(|_| std_normal(&mut r)).collect();
        let got = dist_k_score(&q, &refs, 5, Euclidean).unwrap();
        let mut all: Vec<f64> = refs
            .iter_rows()
            .map(|row| crate::embedding::euclidean(&q, row))
            .collect();
        all.sort_by(f64::total_cmp);
        let expect = all[..5].iter().sum::<f64>() / 5.0;
        assert_abs_diff_eq!(got, expect, epsilon = 1e-12);
    }

    #[test]
    fn dist_k_rejects_k_above_n() {
        let refs = EmbeddingMatrix::from_rows(vec![vec![0.0]]).unwrap();
        assert!(matches!(
            dist_k_score(&[0.0], &refs, 2, Euclidean),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn dist_k_nondecreasing_in_k() {
        let mut r = rng(43);
        let refs = random_matrix(&mut r, 20, 3);
        let q: Vec<f64> = (0..3).map(|_| std_normal(&mut r)).collect();
        let mut prev = 0.0;
        for k in 1..=20 {
            let v = dist_k_score(&q, &refs, k, Euclidean).unwrap();
            assert!(v + 1e-12 >= prev, "dist_k decreased at k={k}");
            prev = v;
        }
    }

    #[test]
    fn norm_score_is_row_norm() {
        let tests = EmbeddingMatrix::from_rows(vec![vec![3.0, 4.0], vec![0.0, 2.0]]).unwrap();
        assert_eq!(norm_score(&tests, 0), 5.0);
        let sv = norm_scores(&tests).unwrap();
        assert_eq!(sv.values(), &[5.0, 2.0]);
        assert_eq!(sv.polarity(), Polarity::HigherIsReliable);
    }

    fn two_point_ensemble(z1: Vec<f64>, z2: Vec<f64>) -> EnsembleEmbeddings {
        let d = z1.len();
        let refs = EmbeddingMatrix::new(1, d, vec![0.0; d].iter().map(|_| 1.0).collect()).unwrap();
        let t1 = EmbeddingMatrix::new(1, d, z1).unwrap();
        let t2 = EmbeddingMatrix::new(1, d, z2).unwrap();
        EnsembleEmbeddings::new(vec![
            MemberPair::new(refs.clone(), t1).unwrap(),
            MemberPair::new(refs, t2).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn feature_variance_antipodal_pair() {
        let ens = two_point_ensemble(vec![1.0, 0.0], vec![-1.0, 0.0]);
        assert_eq!(feature_variance(&ens, 0).unwrap(), 1.0);
    }

    #[test]
    fn feature_variance_identical_members_zero() {
        let ens = two_point_ensemble(vec![0.3, -0.7], vec![0.3, -0.7]);
        assert_eq!(feature_variance(&ens, 0).unwrap(), 0.0);
    }

    #[test]
    fn feature_variance_matches_trace_covariance_oracle() {
        // The pairwise form equals the M-weighted trace of the population
        // covariance; checking the identity is the point of this test.
        let mut r = rng(47);
        let ens = random_ensemble(&mut r, 5, 4, 2, 6);
        for row in 0..ens.test_rows() {
            let got = feature_variance(&ens, row).unwrap();
            let m = ens.num_members();
            let d = ens.dim();
            let mut mean = vec![0.0; d];
            for i in 0..m {
                for (acc, &z) in mean.iter_mut().zip(ens.member(i).test.row(row)) {
                    *acc += z / m as f64;
                }
            }
            let mut trace = 0.0;
            for i in 0..m {
                for (mu, &z) in mean.iter().zip(ens.member(i).test.row(row)) {
                    trace += (z - mu) * (z - mu) / m as f64;
                }
            }
            assert_abs_diff_eq!(got, trace, epsilon = 1e-9);
        }
    }

    #[test]
    fn ensemble_average_cases() {
        let a = ScoreVector::new(vec![1.0, 3.0], Polarity::HigherIsReliable).unwrap();
        let b = ScoreVector::new(vec![3.0, 1.0], Polarity::HigherIsReliable).unwrap();
        let avg = ensemble_average(&[a.clone(), b]).unwrap();
        assert_eq!(avg.values(), &[2.0, 2.0]);

        let single = ensemble_average(&[a.clone()]).unwrap();
        assert_eq!(single.values(), a.values());
    }

    #[test]
    fn ensemble_average_matches_mean_oracle() {
        let mut r = rng(53);
        let vecs: Vec<ScoreVector> = (0..4)
            .map(|_| {
                ScoreVector::new(
                    (0..6).map(|_| std_normal(&mut r)).collect(),
                    Polarity::LowerIsReliable,
                )
                .unwrap()
            })
            .collect();
        let avg = ensemble_average(&vecs).unwrap();
        for row in 0..6 {
            let expect = vecs.iter().map(|s| s.values()[row]).sum::<f64>() / 4.0;
            assert_abs_diff_eq!(avg.values()[row], expect, epsilon = 1e-15);
        }
    }

    #[test]
    fn ensemble_average_rejects_mixed_polarity() {
        let a = ScoreVector::new(vec![1.0], Polarity::HigherIsReliable).unwrap();
        let b = ScoreVector::new(vec![1.0], Polarity::LowerIsReliable).unwrap();
        assert!(matches!(ensemble_average(&[a, b]), Err(Error::Polarity(_))));
    }
}
