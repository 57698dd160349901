//! Synthetic ensembles and certification harnesses.
//!
//! Everything here is desk-scale: clustered Gaussian embeddings stand in for
//! pre-trained representations, per-member orthogonal transforms model the
//! fact that independently trained embedding functions agree only up to an
//! isometry, and a misalignment-noise knob degrades that agreement smoothly.
//!
//! Two harnesses certify the structural results the scores rely on:
//! [`gen_counterexample`] builds an ensemble whose representation variance at
//! a designated point exceeds any requested target while all downstream heads
//! predict identically, and [`theorem2_harness`] checks the
//! consistent-neighbor variance bound on randomized trials.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::downstream::{
    bound_check, train_linear_head, BoundCheckReport, HeadConfig, LabeledDataset, LinearHead,
};
use crate::embedding::{norm2, EmbeddingMatrix, EnsembleEmbeddings, MemberPair, EPS_ZERO};
use crate::error::{Error, Result};

fn std_normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample::<f64, _>(rand_distr::StandardNormal)
}

/// Haar-ish random orthogonal matrix: Householder QR of a standard-Gaussian
/// matrix with the R-diagonal sign correction.
pub fn random_orthogonal(dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    random_orthogonal_from(&mut rng, dim)
}

pub(crate) fn random_orthogonal_from<R: Rng>(rng: &mut R, d: usize) -> Vec<f64> {
    let mut a: Vec<f64> = (0..d * d).map(|_| std_normal(rng)).collect();
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(d);

    for k in 0..d {
        let mut v: Vec<f64> = (k..d).map(|i| a[i * d + k]).collect();
        let alpha = -v[0].signum() * norm2(&v);
        v[0] -= alpha;
        let vnorm = norm2(&v);
        if vnorm > EPS_ZERO {
            v.iter_mut().for_each(|x| *x /= vnorm);
            for col in k..d {
                let proj: f64 = (k..d).map(|i| v[i - k] * a[i * d + col]).sum();
                for i in k..d {
                    a[i * d + col] -= 2.0 * v[i - k] * proj;
                }
            }
        } else {
            v.iter_mut().for_each(|x| *x = 0.0);
        }
        reflectors.push(v);
    }
    let signs: Vec<f64> = (0..d)
        .map(|k| if a[k * d + k] < 0.0 { -1.0 } else { 1.0 })
        .collect();

    // Q = H_0 · H_1 ··· H_{d−1} applied to the identity.
    let mut q = vec![0.0; d * d];
    for i in 0..d {
        q[i * d + i] = 1.0;
    }
    for k in (0..d).rev() {
        let v = &reflectors[k];
        if v.iter().all(|&x| x == 0.0) {
            continue;
        }
        for col in 0..d {
            let proj: f64 = (k..d).map(|i| v[i - k] * q[i * d + col]).sum();
            for i in k..d {
                q[i * d + col] -= 2.0 * v[i - k] * proj;
            }
        }
    }
    // Column sign fix so the factorization has a positive R diagonal.
    for row in q.chunks_exact_mut(d) {
        for (x, &s) in row.iter_mut().zip(&signs) {
            *x *= s;
        }
    }
    q
}

/// Clustered-ensemble generator parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub n_ref: usize,
    pub n_test: usize,
    pub dim: usize,
    pub members: usize,
    pub num_classes: usize,
    /// Scale of the class-mean layout; unit within-cluster noise.
    pub cluster_spread: f64,
    /// Standard deviation of the independent per-member perturbation.
    pub misalignment_noise: f64,
    /// Fraction of test points placed far from every cluster.
    pub ood_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_ref: 5000,
            n_test: 500,
            dim: 32,
            members: 10,
            num_classes: 4,
            cluster_spread: 4.0,
            misalignment_noise: 0.5,
            ood_fraction: 0.2,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_ref == 0 || self.n_test == 0 || self.dim == 0 || self.members == 0 {
            return Err(Error::Parameter("sizes must be positive".into()));
        }
        if self.num_classes < 2 || self.num_classes > self.dim {
            return Err(Error::Parameter(format!(
                "num_classes must be in [2, dim]; got {} with dim {}",
                self.num_classes, self.dim
            )));
        }
        if self.n_ref < self.num_classes {
            return Err(Error::Parameter("need at least one reference point per class".into()));
        }
        if !(0.0..=1.0).contains(&self.ood_fraction) {
            return Err(Error::Parameter(format!(
                "ood_fraction must be in [0, 1], got {}",
                self.ood_fraction
            )));
        }
        if self.misalignment_noise < 0.0 || self.cluster_spread <= 0.0 {
            return Err(Error::Parameter("noise must be >= 0 and spread > 0".into()));
        }
        Ok(())
    }
}

/// Output of [`gen_clustered_ensemble`].
#[derive(Debug, Clone)]
pub struct SynthData {
    pub ensemble: EnsembleEmbeddings,
    pub ref_labels: LabeledDataset,
    pub test_labels: LabeledDataset,
    /// Which test rows were generated out-of-distribution.
    pub test_is_ood: Vec<bool>,
}

/// Generates a clustered ensemble: a shared base layout of `num_classes`
/// Gaussian blobs (orthonormal mean directions scaled by `cluster_spread`,
/// unit within-cluster noise), rotated per member by an independent random
/// orthogonal transform and perturbed with `misalignment_noise`.
///
/// Out-of-distribution test points are placed at radius `12 · cluster_spread`
/// (at least 10 spreads from every class mean) in a fresh random direction
/// *per member*: a point outside the training distribution has nothing
/// anchoring its embedding, so members disagree about it arbitrarily. Their
/// labels are drawn uniformly; no class fits them.
pub fn gen_clustered_ensemble(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let d = cfg.dim;
    let c = cfg.num_classes;

    // Class means: first `c` rows of a random orthogonal matrix, scaled.
    let mean_frame = random_orthogonal_from(&mut rng, d);
    let mean_of = |class: usize| -> Vec<f64> {
        mean_frame[class * d..(class + 1) * d]
            .iter()
            .map(|&x| x * cfg.cluster_spread)
            .collect()
    };

    let ref_labels: Vec<usize> = (0..cfg.n_ref).map(|i| i % c).collect();
    let mut base_ref = Vec::with_capacity(cfg.n_ref * d);
    for &label in &ref_labels {
        let mu = mean_of(label);
        base_ref.extend(mu.iter().map(|&m| m + std_normal(&mut rng)));
    }
    let base_ref = EmbeddingMatrix::new(cfg.n_ref, d, base_ref)?;

    let n_ood = ((cfg.n_test as f64) * cfg.ood_fraction).round() as usize;
    let n_ood = n_ood.min(cfg.n_test);
    let test_is_ood: Vec<bool> = (0..cfg.n_test).map(|i| i < n_ood).collect();
    let mut test_labels = Vec::with_capacity(cfg.n_test);
    let mut base_test = vec![0.0; cfg.n_test * d];
    for i in 0..cfg.n_test {
        if test_is_ood[i] {
            test_labels.push(rng.random_range(0..c));
            // Placeholder; OOD rows are re-drawn per member below.
        } else {
            let label = i % c;
            test_labels.push(label);
            let mu = mean_of(label);
            for (slot, &m) in base_test[i * d..(i + 1) * d].iter_mut().zip(&mu) {
                *slot = m + std_normal(&mut rng);
            }
        }
    }
    let base_test = EmbeddingMatrix::new(cfg.n_test, d, base_test)?;

    let ood_radius = 12.0 * cfg.cluster_spread;
    let mut members = Vec::with_capacity(cfg.members);
    for _ in 0..cfg.members {
        let q = random_orthogonal_from(&mut rng, d);
        let mut ref_data = base_ref.transform(&q)?.data().to_vec();
        for x in &mut ref_data {
            *x += cfg.misalignment_noise * std_normal(&mut rng);
        }
        let mut test_data = base_test.transform(&q)?.data().to_vec();
        for i in 0..cfg.n_test {
            if test_is_ood[i] {
                let dir: Vec<f64> = (0..d).map(|_| std_normal(&mut rng)).collect();
                let dn = norm2(&dir).max(EPS_ZERO);
                for (slot, &x) in test_data[i * d..(i + 1) * d].iter_mut().zip(&dir) {
                    *slot = x / dn * ood_radius;
                }
            } else {
                for slot in test_data[i * d..(i + 1) * d].iter_mut() {
                    *slot += cfg.misalignment_noise * std_normal(&mut rng);
                }
            }
        }
        members.push(MemberPair::new(
            EmbeddingMatrix::new(cfg.n_ref, d, ref_data)?,
            EmbeddingMatrix::new(cfg.n_test, d, test_data)?,
        )?);
    }

    Ok(SynthData {
        ensemble: EnsembleEmbeddings::new(members)?,
        ref_labels: LabeledDataset::new(ref_labels, c)?,
        test_labels: LabeledDataset::new(test_labels, c)?,
        test_is_ood,
    })
}

/// Materialized construction for the high-feature-variance /
/// zero-prediction-variance counterexample.
#[derive(Debug, Clone)]
pub struct CounterexampleSpec {
    pub variance_target: f64,
    /// One orthogonal transform per member (`dim x dim`, row-major).
    pub transforms: Vec<Vec<f64>>,
    pub base_reference: EmbeddingMatrix,
    pub base_test: EmbeddingMatrix,
    /// Planted labeling direction for the downstream task.
    pub task_weight: Vec<f64>,
    /// Test row placed so the representation variance target is met.
    pub designated_row: usize,
    pub dim: usize,
    pub members: usize,
}

impl CounterexampleSpec {
    /// Builds the construction: member `i` sees the base embedding rotated by
    /// `Q_i = P_i · S`, where `S` is a shared random orthogonal matrix and
    /// `P_i` swaps axes 0 and `i`. The designated test row sits at radius `R`
    /// along axis 0, so its member images are `R` times `M` distinct
    /// orthonormal vectors and the representation variance is exactly
    /// `R²(M−1)/M`, set 10% above the requested target.
    pub fn generate(
        dim: usize,
        members: usize,
        variance_target: f64,
        n_ref: usize,
        n_test: usize,
        seed: u64,
    ) -> Result<Self> {
        if members < 2 || dim < members {
            return Err(Error::Parameter(format!(
                "need 2 <= members <= dim, got members={members}, dim={dim}"
            )));
        }
        if variance_target <= 0.0 {
            return Err(Error::Parameter("variance target must be positive".into()));
        }
        if n_ref < 4 || n_test < 1 {
            return Err(Error::Parameter("need n_ref >= 4 and n_test >= 1".into()));
        }
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let shared = random_orthogonal_from(&mut rng, dim);
        let transforms: Vec<Vec<f64>> = (0..members)
            .map(|i| {
                let mut q = shared.clone();
                if i > 0 {
                    for col in 0..dim {
                        q.swap(col, i * dim + col);
                    }
                }
                q
            })
            .collect();

        let base_reference = EmbeddingMatrix::new(
            n_ref,
            dim,
            (0..n_ref * dim).map(|_| std_normal(&mut rng)).collect(),
        )?;

        let radius = (variance_target * members as f64 / (members as f64 - 1.0)).sqrt() * 1.05;
        let mut test_data: Vec<f64> = (0..n_test * dim).map(|_| std_normal(&mut rng)).collect();
        test_data[..dim].iter_mut().for_each(|x| *x = 0.0);
        test_data[0] = radius;

        let task_weight: Vec<f64> = {
            let raw: Vec<f64> = (0..dim).map(|_| std_normal(&mut rng)).collect();
            crate::embedding::l2_normalize(&raw)?
        };

        Ok(Self {
            variance_target,
            transforms,
            base_reference,
            base_test: EmbeddingMatrix::new(n_test, dim, test_data)?,
            task_weight,
            designated_row: 0,
            dim,
            members,
        })
    }
}

/// A realized counterexample: the ensemble plus per-member heads that all
/// produce identical downstream predictions.
#[derive(Debug, Clone)]
pub struct Counterexample {
    pub ensemble: EnsembleEmbeddings,
    /// One head per member; head `i` is the base head composed with `Q_i`.
    pub heads: Vec<LinearHead>,
    pub designated_row: usize,
}

/// Builds the ensemble and heads from a [`CounterexampleSpec`].
///
/// The base head is trained on the base reference embeddings against the
/// planted linear labels; member heads are constructed analytically by
/// composing with each member's transform, which preserves optimality and
/// makes every member's predictions identical up to rounding.
pub fn gen_counterexample(spec: &CounterexampleSpec) -> Result<Counterexample> {
    let labels: Vec<usize> = spec
        .base_reference
        .iter_rows()
        .map(|row| usize::from(crate::embedding::dot(row, &spec.task_weight) > 0.0))
        .collect();
    let (base_head, _) = train_linear_head(
        &spec.base_reference,
        &labels,
        2,
        &HeadConfig::default(),
        0,
    )?;

    let mut members = Vec::with_capacity(spec.members);
    let mut heads = Vec::with_capacity(spec.members);
    for (i, q) in spec.transforms.iter().enumerate() {
        members.push(MemberPair::new(
            spec.base_reference.transform(q)?,
            spec.base_test.transform(q)?,
        )?);
        heads.push(base_head.composed_with(q, i)?);
    }

    Ok(Counterexample {
        ensemble: EnsembleEmbeddings::new(members)?,
        heads,
        designated_row: spec.designated_row,
    })
}

/// Randomized-trial parameters for the consistent-neighbor bound harness.
#[derive(Debug, Clone, Copy)]
pub struct HarnessConfig {
    pub trials: usize,
    pub n_ref: usize,
    pub n_test: usize,
    pub dim: usize,
    pub members: usize,
    pub misalignment_noise: f64,
    pub cluster_spread: f64,
    pub seed: u64,
    pub head: HeadConfig,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            trials: 100,
            n_ref: 40,
            n_test: 2,
            dim: 8,
            members: 4,
            misalignment_noise: 0.4,
            cluster_spread: 3.0,
            seed: 7,
            head: HeadConfig::default(),
        }
    }
}

/// Runs randomized bound checks: per trial, a fresh clustered ensemble with a
/// binary task, per-member trained heads, and one report per test point.
pub fn theorem2_harness(cfg: &HarnessConfig) -> Result<Vec<BoundCheckReport>> {
    let mut reports = Vec::with_capacity(cfg.trials * cfg.n_test);
    for trial in 0..cfg.trials {
        let synth = gen_clustered_ensemble(&SynthConfig {
            n_ref: cfg.n_ref,
            n_test: cfg.n_test,
            dim: cfg.dim,
            members: cfg.members,
            num_classes: 2,
            cluster_spread: cfg.cluster_spread,
            misalignment_noise: cfg.misalignment_noise,
            ood_fraction: 0.0,
            seed: cfg.seed.wrapping_add(trial as u64),
        })?;
        let ens = &synth.ensemble;
        let heads: Vec<LinearHead> = (0..ens.num_members())
            .map(|i| {
                train_linear_head(
                    &ens.member(i).reference,
                    synth.ref_labels.labels(),
                    2,
                    &cfg.head,
                    i,
                )
                .map(|(h, _)| h)
            })
            .collect::<Result<Vec<_>>>()?;
        for row in 0..ens.test_rows() {
            reports.push(bound_check(ens, &heads, row)?);
        }
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::{dist_k_scores, ensemble_average, feature_variance};
    use crate::consistency::{nc_k_batch, SetSimilarity};
    use crate::downstream::pairwise_variance;
    use crate::embedding::DistanceMetric::Euclidean;
    use approx::assert_abs_diff_eq;

    fn max_abs_dev_from_identity(q: &[f64], d: usize) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..d {
            for j in 0..d {
                let mut acc = 0.0;
                for k in 0..d {
                    acc += q[k * d + i] * q[k * d + j];
                }
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((acc - target).abs());
            }
        }
        worst
    }

    #[test]
    fn orthogonal_1d_is_sign() {
        for seed in 0..8 {
            let q = random_orthogonal(1, seed);
            assert!(q[0] == 1.0 || q[0] == -1.0, "got {}", q[0]);
        }
    }

    #[test]
    fn orthogonal_defining_property() {
        for seed in 0..10 {
            let q = random_orthogonal(3, seed);
            assert!(max_abs_dev_from_identity(&q, 3) < 1e-10);
        }
        let q = random_orthogonal(32, 5);
        assert!(max_abs_dev_from_identity(&q, 32) < 1e-10);
    }

    #[test]
    fn orthogonal_determinant_is_unit_3d() {
        for seed in 0..10 {
            let q = random_orthogonal(3, seed);
            let det = q[0] * (q[4] * q[8] - q[5] * q[7]) - q[1] * (q[3] * q[8] - q[5] * q[6])
                + q[2] * (q[3] * q[7] - q[4] * q[6]);
            assert!((det.abs() - 1.0).abs() < 1e-8, "det = {det}");
        }
    }

    #[test]
    fn orthogonal_preserves_norms() {
        let mut r = crate::testutil::rng(149);
        let q = random_orthogonal(6, 9);
        for _ in 0..10 {
            let x: Vec<f64> = (0..6).map(|_| crate::testutil::std_normal(&mut r)).collect();
            let mut qx = vec![0.0; 6];
            for (i, &xi) in x.iter().enumerate() {
                for (o, &qij) in qx.iter_mut().zip(&q[i * 6..(i + 1) * 6]) {
                    *o += xi * qij;
                }
            }
            assert_abs_diff_eq!(norm2(&qx), norm2(&x), epsilon = 1e-9);
        }
    }

    fn small_cfg(noise: f64, ood: f64, seed: u64) -> SynthConfig {
        SynthConfig {
            n_ref: 120,
            n_test: 40,
            dim: 8,
            members: 3,
            num_classes: 3,
            cluster_spread: 4.0,
            misalignment_noise: noise,
            ood_fraction: ood,
            seed,
        }
    }

    #[test]
    fn zero_noise_saturates_nc_for_in_distribution_points() {
        let synth = gen_clustered_ensemble(&small_cfg(0.0, 0.25, 3)).unwrap();
        let scores = nc_k_batch(&synth.ensemble, 5, Euclidean, SetSimilarity::Jaccard).unwrap();
        let m = synth.ensemble.num_members() as f64;
        let saturating = (m - 1.0) / (2.0 * m);
        for (i, (&v, &ood)) in scores.values().iter().zip(&synth.test_is_ood).enumerate() {
            if !ood {
                assert_abs_diff_eq!(v, saturating, epsilon = 1e-12);
                let _ = i;
            }
        }
    }

    #[test]
    fn ood_points_have_larger_mean_dist1() {
        let synth = gen_clustered_ensemble(&small_cfg(0.1, 0.5, 11)).unwrap();
        let ens = &synth.ensemble;
        let per_member: Vec<_> = ens
            .members()
            .iter()
            .map(|m| dist_k_scores(&m.reference, &m.test, 1, Euclidean).unwrap())
            .collect();
        let avg = ensemble_average(&per_member).unwrap();
        let (mut ood_sum, mut ood_n, mut id_sum, mut id_n) = (0.0, 0, 0.0, 0);
        for (&v, &ood) in avg.values().iter().zip(&synth.test_is_ood) {
            if ood {
                ood_sum += v;
                ood_n += 1;
            } else {
                id_sum += v;
                id_n += 1;
            }
        }
        assert!(ood_n > 0 && id_n > 0);
        assert!(
            ood_sum / ood_n as f64 > id_sum / id_n as f64,
            "OOD mean Dist_1 not larger"
        );
    }

    #[test]
    fn mean_nc_strictly_decreases_with_noise() {
        let grid = [0.0, 0.1, 0.5, 1.0];
        let mut means = Vec::new();
        for &noise in &grid {
            let mut acc = 0.0;
            for seed in 0..5 {
                let synth = gen_clustered_ensemble(&small_cfg(noise, 0.1, seed)).unwrap();
                let scores =
                    nc_k_batch(&synth.ensemble, 5, Euclidean, SetSimilarity::Jaccard).unwrap();
                acc += scores.values().iter().sum::<f64>() / scores.len() as f64;
            }
            means.push(acc / 5.0);
        }
        for w in means.windows(2) {
            assert!(w[1] < w[0], "mean NC not strictly decreasing: {means:?}");
        }
    }

    #[test]
    fn generator_is_reproducible() {
        let a = gen_clustered_ensemble(&small_cfg(0.3, 0.2, 77)).unwrap();
        let b = gen_clustered_ensemble(&small_cfg(0.3, 0.2, 77)).unwrap();
        for (ma, mb) in a.ensemble.members().iter().zip(b.ensemble.members()) {
            assert_eq!(ma.reference.data(), mb.reference.data());
            assert_eq!(ma.test.data(), mb.test.data());
        }
        assert_eq!(a.ref_labels, b.ref_labels);
        assert_eq!(a.test_labels, b.test_labels);
    }

    #[test]
    fn counterexample_matches_construction() {
        let spec = CounterexampleSpec::generate(16, 4, 4.0, 60, 8, 21).unwrap();
        for q in &spec.transforms {
            assert!(max_abs_dev_from_identity(q, 16) < 1e-10);
        }
        let ce = gen_counterexample(&spec).unwrap();

        // Representation variance at the designated point meets the target.
        let fv = feature_variance(&ce.ensemble, ce.designated_row).unwrap();
        assert!(fv >= 4.0, "feature variance {fv} below target");

        // All member heads produce identical logits at every test point.
        for row in 0..ce.ensemble.test_rows() {
            let preds: Vec<Vec<f64>> = (0..4)
                .map(|i| ce.heads[i].logits(ce.ensemble.member(i).test.row(row)))
                .collect();
            let var = pairwise_variance(&preds);
            assert!(var <= 1e-12, "prediction variance {var} at row {row}");
        }
    }

    #[test]
    fn harness_bound_always_satisfied() {
        let cfg = HarnessConfig { trials: 10, ..Default::default() };
        let reports = theorem2_harness(&cfg).unwrap();
        assert_eq!(reports.len(), 10 * cfg.n_test);
        for r in &reports {
            assert!(
                r.satisfied,
                "bound violated at row {}: lhs {} > rhs {}",
                r.test_row, r.lhs_variance, r.rhs_bound
            );
        }
    }
}
