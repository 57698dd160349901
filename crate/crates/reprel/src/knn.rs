//! Exact k-nearest-neighbor and ε-neighborhood queries.
//!
//! Brute force over the reference matrix: at the target scale (a few thousand
//! reference rows) exact search is cheap and removes any recall concern.
//! Ties are broken by ascending reference index so repeated runs produce
//! identical neighbor sets.

use crate::embedding::{distance, DistanceMetric, EmbeddingMatrix};
use crate::error::{Error, Result};

/// Query parameter recorded in a [`NeighborIndexSet`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QueryParam {
    K(usize),
    Eps(f64),
}

/// Ordered set of reference-row indices returned by a neighbor query.
///
/// Indices are distinct, sorted by ascending distance with ties broken by
/// ascending index. `truncated` is set when a k-NN query asked for more
/// neighbors than there are reference rows.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborIndexSet {
    pub indices: Vec<usize>,
    pub param: QueryParam,
    pub truncated: bool,
}

impl NeighborIndexSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

fn distances_to_rows(
    test: &[f64],
    refs: &EmbeddingMatrix,
    metric: DistanceMetric,
) -> Result<Vec<f64>> {
    if test.len() != refs.dim() {
        return Err(Error::Shape(format!(
            "query dim {} != reference dim {}",
            test.len(),
            refs.dim()
        )));
    }
    refs.iter_rows().map(|r| distance(test, r, metric)).collect()
}

/// Exact k nearest neighbors of `test` among the rows of `refs`.
///
/// `k > n` is allowed and returns all `n` indices with `truncated = true`.
pub fn knn_indices(
    test: &[f64],
    refs: &EmbeddingMatrix,
    k: usize,
    metric: DistanceMetric,
) -> Result<NeighborIndexSet> {
    if k == 0 {
        return Err(Error::Parameter("k must be >= 1".into()));
    }
    let dists = distances_to_rows(test, refs, metric)?;
    let n = dists.len();
    let kept = k.min(n);

    let mut order: Vec<usize> = (0..n).collect();
    let by_dist_then_index = |&a: &usize, &b: &usize| {
        dists[a].total_cmp(&dists[b]).then(a.cmp(&b))
    };
    // Partial selection: only the k smallest need full ordering.
    if kept < n {
        order.select_nth_unstable_by(kept - 1, by_dist_then_index);
        order.truncate(kept);
    }
    order.sort_unstable_by(by_dist_then_index);

    Ok(NeighborIndexSet {
        indices: order,
        param: QueryParam::K(k),
        truncated: k > n,
    })
}

/// All reference rows within distance `eps` of `test` (inclusive).
pub fn eps_neighbors(
    test: &[f64],
    refs: &EmbeddingMatrix,
    eps: f64,
    metric: DistanceMetric,
) -> Result<NeighborIndexSet> {
    if !(eps >= 0.0) {
        return Err(Error::Parameter(format!("eps must be >= 0, got {eps}")));
    }
    let dists = distances_to_rows(test, refs, metric)?;
    let mut order: Vec<usize> = (0..dists.len()).filter(|&i| dists[i] <= eps).collect();
    order.sort_unstable_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(a.cmp(&b)));
    Ok(NeighborIndexSet {
        indices: order,
        param: QueryParam::Eps(eps),
        truncated: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::DistanceMetric::Euclidean;
    use crate::testutil::{random_matrix, rng, std_normal};

    fn refs_1d(values: &[f64]) -> EmbeddingMatrix {
        EmbeddingMatrix::new(values.len(), 1, values.to_vec()).unwrap()
    }

    #[test]
    fn knn_nearest_by_inspection() {
        let refs = refs_1d(&[0.0, 1.0, 2.0, 10.0]);
        let got = knn_indices(&[0.4], &refs, 2, Euclidean).unwrap();
        assert_eq!(got.indices, vec![0, 1]);
        assert!(!got.truncated);
    }

    #[test]
    fn knn_zero_distance_wins() {
        let refs = refs_1d(&[0.0, 1.0, 2.0, 10.0]);
        let got = knn_indices(&[10.0], &refs, 1, Euclidean).unwrap();
        assert_eq!(got.indices, vec![3]);
    }

    #[test]
    fn knn_matches_full_sort_oracle() {
        let mut r = rng(11);
        let refs = random_matrix(&mut r, 50, 8);
        for _ in 0..20 {
            let q: Vec<f64> = (0..8).map(|_| std_normal(&mut r)).collect();
            let got = knn_indices(&q, &refs, 5, Euclidean).unwrap();
            // Oracle: sort all n distances, take the first k indices.
            let mut all: Vec<(f64, usize)> = refs
                .iter_rows()
                .enumerate()
                .map(|(i, row)| (crate::embedding::euclidean(&q, row), i))
                .collect();
            all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let expect: Vec<usize> = all.iter().take(5).map(|&(_, i)| i).collect();
            assert_eq!(got.indices, expect);
        }
    }

    #[test]
    fn knn_k_larger_than_n_truncates() {
        let refs = refs_1d(&[0.0, 1.0]);
        let got = knn_indices(&[0.0], &refs, 5, Euclidean).unwrap();
        assert_eq!(got.indices, vec![0, 1]);
        assert!(got.truncated);
    }

    #[test]
    fn knn_dim_mismatch() {
        let refs = refs_1d(&[0.0]);
        assert!(matches!(
            knn_indices(&[0.0, 1.0], &refs, 1, Euclidean),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn eps_zero_generic_data_empty() {
        let refs = refs_1d(&[1.0, 2.0]);
        let got = eps_neighbors(&[0.5], &refs, 0.0, Euclidean).unwrap();
        assert!(got.is_empty());
    }

    #[test]
    fn eps_saturates_at_max_distance() {
        let refs = refs_1d(&[0.0, 1.0, 2.0]);
        let got = eps_neighbors(&[0.0], &refs, 100.0, Euclidean).unwrap();
        assert_eq!(got.indices, vec![0, 1, 2]);
    }

    #[test]
    fn eps_matches_linear_scan_oracle() {
        let mut r = rng(13);
        let refs = random_matrix(&mut r, 40, 4);
        let q: Vec<f64> = (0..4).map(|_| std_normal(&mut r)).collect();
        let eps = 2.0;
        let got = eps_neighbors(&q, &refs, eps, Euclidean).unwrap();
        let mut expect: Vec<usize> = Vec::new();
        for (i, row) in refs.iter_rows().enumerate() {
            if crate::embedding::euclidean(&q, row) <= eps {
                expect.push(i);
            }
        }
        let mut got_sorted = got.indices.clone();
        got_sorted.sort_unstable();
        assert_eq!(got_sorted, expect);
    }
}
