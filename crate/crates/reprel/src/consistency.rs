//! Neighborhood-consistency scores across an ensemble.
//!
//! For a test point, each ensemble member induces a neighbor set among the
//! reference rows (k-NN or ε-ball). The score averages pairwise set
//! similarity over all member pairs with weight `1/M²`, so the saturating
//! value is `(M−1)/(2M)`, not 1. [`NcScale::MeanPairwise`] rescales by the
//! pair count for a `[0, 1]` reading.

use rayon::prelude::*;

use crate::baselines::{Polarity, ScoreVector};
use crate::embedding::{DistanceMetric, EnsembleEmbeddings};
use crate::error::Result;
use crate::knn::{eps_neighbors, knn_indices, NeighborIndexSet};

/// Set-similarity measure between two neighbor index sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SetSimilarity {
    /// `|S1 ∩ S2| / |S1 ∪ S2|`; 1 when both sets are empty.
    Jaccard,
    /// `|S1 ∩ S2| / min(|S1|, |S2|)`; 1 when both empty, 0 when exactly one is.
    Overlap,
}

impl std::fmt::Display for SetSimilarity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SetSimilarity::Jaccard => write!(f, "jaccard"),
            SetSimilarity::Overlap => write!(f, "overlap"),
        }
    }
}

/// Normalization of the pairwise-similarity sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NcScale {
    /// `1/M²` weighting; maximum `(M−1)/(2M)`.
    Standard,
    /// Mean over the `M(M−1)/2` pairs; maximum 1.
    MeanPairwise,
}

fn intersection_size(s1: &[usize], s2: &[usize]) -> usize {
    // Neighbor sets are small; sort-merge beats hashing and stays allocation-light.
    let mut a: Vec<usize> = s1.to_vec();
    let mut b: Vec<usize> = s2.to_vec();
    a.sort_unstable();
    b.sort_unstable();
    let (mut i, mut j, mut c) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                c += 1;
                i += 1;
                j += 1;
            }
        }
    }
    c
}

/// Similarity between two neighbor sets, in `[0, 1]` and symmetric.
pub fn set_similarity(
    s1: &NeighborIndexSet,
    s2: &NeighborIndexSet,
    sim: SetSimilarity,
) -> f64 {
    let (n1, n2) = (s1.len(), s2.len());
    if n1 == 0 && n2 == 0 {
        // Consistent emptiness counts as full agreement.
        return 1.0;
    }
    if n1 == 0 || n2 == 0 {
        return 0.0;
    }
    let inter = intersection_size(&s1.indices, &s2.indices) as f64;
    match sim {
        SetSimilarity::Jaccard => inter / (n1 as f64 + n2 as f64 - inter),
        SetSimilarity::Overlap => inter / n1.min(n2) as f64,
    }
}

fn nc_from_sets(sets: &[NeighborIndexSet], sim: SetSimilarity, scale: NcScale) -> f64 {
    let m = sets.len();
    let mut total = 0.0;
    for i in 0..m {
        for j in (i + 1)..m {
            total += set_similarity(&sets[i], &sets[j], sim);
        }
    }
    match scale {
        NcScale::Standard => total / (m * m) as f64,
        NcScale::MeanPairwise => total / (m * (m - 1) / 2) as f64,
    }
}

fn member_sets<F>(ens: &EnsembleEmbeddings, test_row: usize, query: F) -> Result<Vec<NeighborIndexSet>>
where
    F: Fn(&[f64], &crate::embedding::EmbeddingMatrix) -> Result<NeighborIndexSet>,
{
    ens.members()
        .iter()
        .map(|m| query(m.test.row(test_row), &m.reference))
        .collect()
}

/// Neighborhood consistency of one test point from k-NN sets.
pub fn nc_k(
    ens: &EnsembleEmbeddings,
    test_row: usize,
    k: usize,
    metric: DistanceMetric,
    sim: SetSimilarity,
) -> Result<f64> {
    nc_k_scaled(ens, test_row, k, metric, sim, NcScale::Standard)
}

pub fn nc_k_scaled(
    ens: &EnsembleEmbeddings,
    test_row: usize,
    k: usize,
    metric: DistanceMetric,
    sim: SetSimilarity,
    scale: NcScale,
) -> Result<f64> {
    ens.require_pairs()?;
    let sets = member_sets(ens, test_row, |q, refs| knn_indices(q, refs, k, metric))?;
    Ok(nc_from_sets(&sets, sim, scale))
}

/// Neighborhood consistency of one test point from ε-neighborhoods.
pub fn nc_eps(
    ens: &EnsembleEmbeddings,
    test_row: usize,
    eps: f64,
    metric: DistanceMetric,
    sim: SetSimilarity,
) -> Result<f64> {
    nc_eps_scaled(ens, test_row, eps, metric, sim, NcScale::Standard)
}

pub fn nc_eps_scaled(
    ens: &EnsembleEmbeddings,
    test_row: usize,
    eps: f64,
    metric: DistanceMetric,
    sim: SetSimilarity,
    scale: NcScale,
) -> Result<f64> {
    ens.require_pairs()?;
    let sets = member_sets(ens, test_row, |q, refs| eps_neighbors(q, refs, eps, metric))?;
    Ok(nc_from_sets(&sets, sim, scale))
}

/// k-NN consistency for every test row. Higher is more reliable.
pub fn nc_k_batch(
    ens: &EnsembleEmbeddings,
    k: usize,
    metric: DistanceMetric,
    sim: SetSimilarity,
) -> Result<ScoreVector> {
    nc_k_batch_scaled(ens, k, metric, sim, NcScale::Standard)
}

pub fn nc_k_batch_scaled(
    ens: &EnsembleEmbeddings,
    k: usize,
    metric: DistanceMetric,
    sim: SetSimilarity,
    scale: NcScale,
) -> Result<ScoreVector> {
    ens.require_pairs()?;
    let values = (0..ens.test_rows())
        .into_par_iter()
        .map(|row| nc_k_scaled(ens, row, k, metric, sim, scale))
        .collect::<Result<Vec<_>>>()?;
    ScoreVector::new(values, Polarity::HigherIsReliable)
}

/// ε-ball consistency for every test row. Higher is more reliable.
pub fn nc_eps_batch(
    ens: &EnsembleEmbeddings,
    eps: f64,
    metric: DistanceMetric,
    sim: SetSimilarity,
) -> Result<ScoreVector> {
    nc_eps_batch_scaled(ens, eps, metric, sim, NcScale::Standard)
}

pub fn nc_eps_batch_scaled(
    ens: &EnsembleEmbeddings,
    eps: f64,
    metric: DistanceMetric,
    sim: SetSimilarity,
    scale: NcScale,
) -> Result<ScoreVector> {
    ens.require_pairs()?;
    let values = (0..ens.test_rows())
        .into_par_iter()
        .map(|row| nc_eps_scaled(ens, row, eps, metric, sim, scale))
        .collect::<Result<Vec<_>>>()?;
    ScoreVector::new(values, Polarity::HigherIsReliable)
}
