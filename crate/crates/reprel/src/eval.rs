//! Rank-correlation evaluation: Kendall tau-b between reliability scores and
//! ground truth, and rankings of embedding ensembles.
//!
//! Tau-b (tie-corrected) is used throughout because Brier- and entropy-based
//! reliabilities tie at saturated predictions. The implementation counts
//! discordances with a merge sort in O(n log n); the O(n²) definitional count
//! is kept in the tests as the oracle.

use crate::baselines::ScoreVector;
use crate::downstream::{ReliabilityMetric, ReliabilityVector};
use crate::error::{Error, Result};

fn run_tie_pairs(sorted: &[f64]) -> f64 {
    let mut pairs = 0.0;
    let mut run = 1.0;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1.0;
        } else {
            pairs += run * (run - 1.0) / 2.0;
            run = 1.0;
        }
    }
    pairs + run * (run - 1.0) / 2.0
}

/// Merge sort by `y` counting the exchanges needed; after pre-sorting by
/// `(x, y)` the exchange count equals the number of discordant pairs.
fn merge_count(pairs: &mut Vec<(f64, f64)>) -> f64 {
    let n = pairs.len();
    let mut buf = pairs.clone();
    let mut swaps = 0.0;
    let mut width = 1;
    while width < n {
        let mut start = 0;
        while start < n {
            let mid = (start + width).min(n);
            let end = (start + 2 * width).min(n);
            let (mut i, mut j, mut k) = (start, mid, start);
            while i < mid || j < end {
                if i < mid && (j >= end || pairs[i].1 <= pairs[j].1) {
                    buf[k] = pairs[i];
                    i += 1;
                } else {
                    swaps += (mid - i) as f64;
                    buf[k] = pairs[j];
                    j += 1;
                }
                k += 1;
            }
            start = end;
        }
        std::mem::swap(pairs, &mut buf);
        width *= 2;
    }
    swaps
}

/// Kendall's tau-b between two equal-length samples.
///
/// `tau = (C − D) / sqrt((n0 − T_x)(n0 − T_y))` with `n0 = n(n−1)/2` and
/// `T_x`, `T_y` the tied-pair counts. Fails with
/// [`Error::UndefinedCorrelation`] when either input is constant.
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!(
            "sample lengths differ: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 samples, got {n}")));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite sample value".into()));
    }

    let mut pairs: Vec<(f64, f64)> = x.iter().cloned().zip(y.iter().cloned()).collect();
    pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    // Tied pairs in x, and tied in both, from runs of the (x, y) ordering.
    let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let tied_x = run_tie_pairs(&xs);
    let mut tied_xy = 0.0;
    let mut run = 1.0;
    for w in pairs.windows(2) {
        if w[0] == w[1] {
            run += 1.0;
        } else {
            tied_xy += run * (run - 1.0) / 2.0;
            run = 1.0;
        }
    }
    tied_xy += run * (run - 1.0) / 2.0;

    let discordant = merge_count(&mut pairs);
    let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let tied_y = run_tie_pairs(&ys);

    let n0 = (n as f64) * (n as f64 - 1.0) / 2.0;
    let denom_x = n0 - tied_x;
    let denom_y = n0 - tied_y;
    if denom_x <= 0.0 {
        return Err(Error::UndefinedCorrelation("first input is constant".into()));
    }
    if denom_y <= 0.0 {
        return Err(Error::UndefinedCorrelation("second input is constant".into()));
    }
    // C - D = n0 - T_x - T_y + T_xy - 2D
    let num = n0 - tied_x - tied_y + tied_xy - 2.0 * discordant;
    Ok((num / (denom_x * denom_y).sqrt()).clamp(-1.0, 1.0))
}

/// Correlation of a reliability score against ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationReport {
    pub method: String,
    pub tau: f64,
    pub n_points: usize,
    pub reliability_metric: ReliabilityMetric,
    pub config_digest: String,
}

/// Polarity-adjusted tau-b of a score vector against a reliability vector:
/// lower-is-reliable scores are negated before correlating.
pub fn correlate(
    score: &ScoreVector,
    reli: &ReliabilityVector,
    method: &str,
    config_digest: &str,
) -> Result<CorrelationReport> {
    if score.len() != reli.len() {
        return Err(Error::Shape(format!(
            "score has {} points, reliability has {}",
            score.len(),
            reli.len()
        )));
    }
    let tau = kendall_tau_b(&score.oriented_values(), reli.values())?;
    Ok(CorrelationReport {
        method: method.to_string(),
        tau,
        n_points: score.len(),
        reliability_metric: reli.metric(),
        config_digest: config_digest.to_string(),
    })
}

/// Agreement between score-based and ground-truth rankings of several
/// ensembles over a shared test set.
#[derive(Debug, Clone)]
pub struct ModelRanking {
    /// Mean polarity-adjusted score per model.
    pub per_model_mean_score: Vec<f64>,
    /// Mean ground-truth reliability per model.
    pub per_model_mean_reliability: Vec<f64>,
    /// Model indices from best to worst by mean score.
    pub predicted_order: Vec<usize>,
    /// Model indices from best to worst by mean reliability.
    pub true_order: Vec<usize>,
    /// Mean over test points of the per-point tau between model scores and
    /// model reliabilities (points where either side is constant are skipped).
    pub mean_per_point_tau: f64,
    /// Test points entering the mean.
    pub n_points_evaluated: usize,
    /// Tau between the two mean vectors; `None` when degenerate.
    pub aggregate_tau: Option<f64>,
}

fn order_desc(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx
}

/// Ranks models per test point by score and by true reliability.
pub fn rank_models(
    scores: &[ScoreVector],
    relis: &[ReliabilityVector],
) -> Result<ModelRanking> {
    let n_models = scores.len();
    if n_models < 2 {
        return Err(Error::Parameter(format!(
            "need at least 2 models to rank, got {n_models}"
        )));
    }
    if relis.len() != n_models {
        return Err(Error::Shape(format!(
            "{} score vectors but {} reliability vectors",
            n_models,
            relis.len()
        )));
    }
    let n_points = scores[0].len();
    for (i, (s, r)) in scores.iter().zip(relis).enumerate() {
        if s.len() != n_points || r.len() != n_points {
            return Err(Error::Shape(format!("model {i} has a mismatched point count")));
        }
    }

    let oriented: Vec<Vec<f64>> = scores.iter().map(ScoreVector::oriented_values).collect();

    let mut tau_sum = 0.0;
    let mut tau_count = 0usize;
    for p in 0..n_points {
        let xs: Vec<f64> = oriented.iter().map(|s| s[p]).collect();
        let ys: Vec<f64> = relis.iter().map(|r| r.values()[p]).collect();
        match kendall_tau_b(&xs, &ys) {
            Ok(t) => {
                tau_sum += t;
                tau_count += 1;
            }
            Err(Error::UndefinedCorrelation(_)) => {}
            Err(e) => return Err(e),
        }
    }
    if tau_count == 0 {
        return Err(Error::UndefinedCorrelation(
            "every test point has a constant model ranking".into(),
        ));
    }

    let per_model_mean_score: Vec<f64> = oriented
        .iter()
        .map(|s| s.iter().sum::<f64>() / n_points as f64)
        .collect();
    let per_model_mean_reliability: Vec<f64> = relis
        .iter()
        .map(|r| r.values().iter().sum::<f64>() / n_points as f64)
        .collect();
    let aggregate_tau = kendall_tau_b(&per_model_mean_score, &per_model_mean_reliability).ok();

    Ok(ModelRanking {
        predicted_order: order_desc(&per_model_mean_score),
        true_order: order_desc(&per_model_mean_reliability),
        per_model_mean_score,
        per_model_mean_reliability,
        mean_per_point_tau: tau_sum / tau_count as f64,
        n_points_evaluated: tau_count,
        aggregate_tau,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::Polarity;
    use crate::testutil::rng;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    /// O(n²) definitional tau-b: enumerate all pairs.
    fn tau_b_oracle(x: &[f64], y: &[f64]) -> Option<f64> {
        let n = x.len();
        let (mut con, mut dis, mut tx, mut ty) = (0.0_f64, 0.0_f64, 0.0_f64, 0.0_f64);
        for i in 0..n {
            for j in (i + 1)..n {
                let dx = x[i] - x[j];
                let dy = y[i] - y[j];
                if dx == 0.0 && dy == 0.0 {
                    continue;
                }
                if dx == 0.0 {
                    tx += 1.0;
                } else if dy == 0.0 {
                    ty += 1.0;
                } else if dx.signum() == dy.signum() {
                    con += 1.0;
                } else {
                    dis += 1.0;
                }
            }
        }
        let denom = ((con + dis + tx) * (con + dis + ty)).sqrt();
        if denom == 0.0 {
            None
        } else {
            Some((con - dis) / denom)
        }
    }

    #[test]
    fn tau_fully_concordant_and_reversed() {
        assert_eq!(kendall_tau_b(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(kendall_tau_b(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
    }

    #[test]
    fn tau_matches_pair_enumeration_oracle_with_ties() {
        let mut r = rng(113);
        for trial in 0..30 {
            let n = 200;
            // Coarse quantization forces many ties.
            let x: Vec<f64> = (0..n).map(|_| (r.random::<f64>() * 8.0).floor()).collect();
            let y: Vec<f64> = (0..n)
                .map(|i| (x[i] / 2.0).floor() + (r.random::<f64>() * 4.0).floor())
                .collect();
            let got = kendall_tau_b(&x, &y).unwrap();
            let want = tau_b_oracle(&x, &y).unwrap();
            assert_abs_diff_eq!(got, want, epsilon = 1e-12);
            let _ = trial;
        }
    }

    #[test]
    fn tau_oracle_equivalence_up_to_500() {
        let mut r = rng(127);
        for &n in &[2usize, 3, 17, 500] {
            let x: Vec<f64> = (0..n).map(|_| (r.random::<f64>() * 20.0).floor()).collect();
            let y: Vec<f64> = (0..n).map(|_| (r.random::<f64>() * 20.0).floor()).collect();
            match (kendall_tau_b(&x, &y), tau_b_oracle(&x, &y)) {
                (Ok(got), Some(want)) => assert_abs_diff_eq!(got, want, epsilon = 1e-12),
                (Err(Error::UndefinedCorrelation(_)), None) => {}
                (got, want) => panic!("mismatch: {got:?} vs {want:?}"),
            }
        }
    }

    #[test]
    fn tau_undefined_on_constant_input() {
        assert!(matches!(
            kendall_tau_b(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(Error::UndefinedCorrelation(_))
        ));
        assert!(matches!(
            kendall_tau_b(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]),
            Err(Error::UndefinedCorrelation(_))
        ));
    }

    #[test]
    fn tau_invariant_under_monotone_transforms() {
        let mut r = rng(131);
        let x: Vec<f64> = (0..100).map(|_| r.random::<f64>() * 4.0 - 2.0).collect();
        let y: Vec<f64> = (0..100).map(|_| r.random::<f64>() * 4.0 - 2.0).collect();
        let base = kendall_tau_b(&x, &y).unwrap();
        let x_exp: Vec<f64> = x.iter().map(|v| v.exp()).collect();
        let y_aff: Vec<f64> = y.iter().map(|v| 3.0 * v + 11.0).collect();
        assert_abs_diff_eq!(kendall_tau_b(&x_exp, &y).unwrap(), base, epsilon = 1e-12);
        assert_abs_diff_eq!(kendall_tau_b(&x, &y_aff).unwrap(), base, epsilon = 1e-12);
    }

    #[test]
    fn tau_symmetry_and_self_reversal() {
        let mut r = rng(137);
        let x: Vec<f64> = (0..50).map(|_| r.random::<f64>()).collect();
        let y: Vec<f64> = (0..50).map(|_| r.random::<f64>()).collect();
        assert_abs_diff_eq!(
            kendall_tau_b(&x, &y).unwrap(),
            kendall_tau_b(&y, &x).unwrap(),
            epsilon = 1e-12
        );
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_eq!(kendall_tau_b(&x, &neg).unwrap(), -1.0);
    }

    #[test]
    fn correlate_negates_lower_is_reliable() {
        let reli = ReliabilityVector::new(vec![-0.1, -0.2, -0.3], ReliabilityMetric::NegBrier)
            .unwrap();
        // Distances grow as reliability falls: perfectly anti-correlated raw,
        // perfectly correlated once negated.
        let dist = ScoreVector::new(vec![1.0, 2.0, 3.0], Polarity::LowerIsReliable).unwrap();
        let report = correlate(&dist, &reli, "dist", "").unwrap();
        assert_eq!(report.tau, 1.0);
        assert_eq!(report.n_points, 3);
    }

    #[test]
    fn rank_models_dominance_cases() {
        let s = |v: Vec<f64>| ScoreVector::new(v, Polarity::HigherIsReliable).unwrap();
        let rv =
            |v: Vec<f64>| ReliabilityVector::new(v, ReliabilityMetric::NegVariance).unwrap();

        // Model A strictly dominates in both.
        let ranking = rank_models(
            &[s(vec![2.0, 2.0]), s(vec![1.0, 1.0])],
            &[rv(vec![-0.1, -0.1]), rv(vec![-0.5, -0.5])],
        )
        .unwrap();
        assert_eq!(ranking.mean_per_point_tau, 1.0);
        assert_eq!(ranking.predicted_order, vec![0, 1]);
        assert_eq!(ranking.true_order, vec![0, 1]);

        // Score ordering reversed from reliability everywhere.
        let ranking = rank_models(
            &[s(vec![2.0, 2.0]), s(vec![1.0, 1.0])],
            &[rv(vec![-0.5, -0.5]), rv(vec![-0.1, -0.1])],
        )
        .unwrap();
        assert_eq!(ranking.mean_per_point_tau, -1.0);
        assert_eq!(ranking.aggregate_tau, Some(-1.0));
    }

    #[test]
    fn rank_models_matches_enumeration_oracle() {
        // Three synthetic models with planted quality gaps plus per-point noise.
        let mut r = rng(139);
        let n = 40;
        let quality = [0.9, 0.5, 0.1];
        let mut scores = Vec::new();
        let mut relis = Vec::new();
        for &q in &quality {
            let vals: Vec<f64> = (0..n).map(|_| q + r.random::<f64>() * 0.05).collect();
            let rvals: Vec<f64> = vals.iter().map(|v| v - 1.0 + r.random::<f64>() * 0.01).collect();
            scores.push(ScoreVector::new(vals, Polarity::HigherIsReliable).unwrap());
            relis.push(ReliabilityVector::new(rvals, ReliabilityMetric::NegBrier).unwrap());
        }
        let ranking = rank_models(&scores, &relis).unwrap();
        // Oracle: enumerate per-point taus directly.
        let mut acc = 0.0;
        for p in 0..n {
            let xs: Vec<f64> = scores.iter().map(|s| s.values()[p]).collect();
            let ys: Vec<f64> = relis.iter().map(|rr| rr.values()[p]).collect();
            acc += tau_b_oracle(&xs, &ys).unwrap();
        }
        assert_abs_diff_eq!(ranking.mean_per_point_tau, acc / n as f64, epsilon = 1e-12);
        assert_eq!(ranking.predicted_order, vec![0, 1, 2]);
        assert_eq!(ranking.true_order, vec![0, 1, 2]);
    }
}
