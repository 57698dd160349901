//! Ground-truth representation reliability via downstream linear heads.
//!
//! A C-class problem is decomposed into C(C−1)/2 one-vs-one binary tasks.
//! For each task, every ensemble member gets its own logistic-regression head
//! trained on that member's reference embeddings; a test point's performance
//! on the task is a function of the M per-member predictions (negative
//! variance, Brier, or entropy), and its reliability is the mean over the
//! C−1 tasks that include its class.
//!
//! The module also carries the certification machinery for the consistent-
//! neighbor bound: exact spectral norms of head weights via power iteration
//! and a per-point report that the ensemble prediction variance stays under
//! `(√2·L·ε_nb + σ_r)²`.

use rayon::prelude::*;

use crate::embedding::{euclidean, EmbeddingMatrix, EnsembleEmbeddings};
use crate::error::{Error, Result};
use crate::mixture::logsumexp;

/// Class labels for the rows of a reference or test matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledDataset {
    labels: Vec<usize>,
    num_classes: usize,
}

impl LabeledDataset {
    pub fn new(labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Parameter(format!(
                "need at least 2 classes, got {num_classes}"
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidData(format!(
                "label {bad} out of range [0, {num_classes})"
            )));
        }
        Ok(Self { labels, num_classes })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// A downstream classification task.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    /// Binary task between two classes `(a, b)` with `a < b`.
    OneVsOne(usize, usize),
    /// The single C-way task.
    MultiClass,
}

/// Collection of downstream tasks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskSet {
    tasks: Vec<Task>,
}

impl TaskSet {
    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }
}

/// All C(C−1)/2 one-vs-one pairs, ordered lexicographically.
pub fn ovo_tasks(num_classes: usize) -> Result<TaskSet> {
    if num_classes < 2 {
        return Err(Error::Parameter(format!(
            "OVO decomposition needs at least 2 classes, got {num_classes}"
        )));
    }
    let mut tasks = Vec::with_capacity(num_classes * (num_classes - 1) / 2);
    for a in 0..num_classes {
        for b in (a + 1)..num_classes {
            tasks.push(Task::OneVsOne(a, b));
        }
    }
    Ok(TaskSet { tasks })
}

/// The single C-way classification task.
pub fn multiclass_task() -> TaskSet {
    TaskSet { tasks: vec![Task::MultiClass] }
}

/// Gradient-descent hyperparameters for head training.
///
/// The loss is mean cross-entropy plus `(l2_penalty / 2) ‖W‖²` (bias
/// unpenalized), minimized by full-batch descent from zero initialization,
/// which makes training deterministic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadConfig {
    pub learning_rate: f64,
    pub l2_penalty: f64,
    pub epochs: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self { learning_rate: 0.1, l2_penalty: 1e-3, epochs: 500 }
    }
}

/// Affine head `z ↦ Wz + b` with a softmax readout.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    weight: Vec<f64>, // out_dim x in_dim, row-major
    bias: Vec<f64>,
    out_dim: usize,
    in_dim: usize,
    trained_on_member: usize,
}

impl LinearHead {
    pub fn new(
        weight: Vec<f64>,
        bias: Vec<f64>,
        out_dim: usize,
        in_dim: usize,
        trained_on_member: usize,
    ) -> Result<Self> {
        if weight.len() != out_dim * in_dim || bias.len() != out_dim {
            return Err(Error::Shape("head parameter shapes are inconsistent".into()));
        }
        if weight.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite head parameter".into()));
        }
        Ok(Self { weight, bias, out_dim, in_dim, trained_on_member })
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn trained_on_member(&self) -> usize {
        self.trained_on_member
    }

    /// Affine outputs `Wz + b` (no softmax).
    pub fn logits(&self, z: &[f64]) -> Vec<f64> {
        debug_assert_eq!(z.len(), self.in_dim);
        self.weight
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, &b)| crate::embedding::dot(row, z) + b)
            .collect()
    }

    /// Head with the weight right-composed with a square matrix:
    /// `z ↦ W (Q z) + b` becomes the head `W·Q`.
    pub fn composed_with(&self, square: &[f64], member: usize) -> Result<Self> {
        let d = self.in_dim;
        if square.len() != d * d {
            return Err(Error::Shape(format!("composition matrix must be {d}x{d}")));
        }
        let mut weight = vec![0.0; self.out_dim * d];
        for (wrow, out) in self.weight.chunks_exact(d).zip(weight.chunks_exact_mut(d)) {
            for (k, &w) in wrow.iter().enumerate() {
                // out += w * Q[k, :] — note Q is applied to the input from
                // the left in column convention, i.e. rows here.
                for (o, &q) in out.iter_mut().zip(&square[k * d..(k + 1) * d]) {
                    *o += w * q;
                }
            }
        }
        LinearHead::new(weight, self.bias.clone(), self.out_dim, d, member)
    }
}

/// Softmax probabilities of a head at one point; entries sum to 1.
pub fn predict_proba(head: &LinearHead, z: &[f64]) -> Vec<f64> {
    let logits = head.logits(z);
    let lse = logsumexp(&logits);
    logits.iter().map(|l| (l - lse).exp()).collect()
}

/// Trains a multinomial logistic-regression head by full-batch gradient
/// descent. Returns the head and the per-epoch loss curve.
pub fn train_linear_head(
    features: &EmbeddingMatrix,
    labels: &[usize],
    num_classes: usize,
    cfg: &HeadConfig,
    trained_on_member: usize,
) -> Result<(LinearHead, Vec<f64>)> {
    let n = features.rows();
    let d = features.dim();
    if labels.len() != n {
        return Err(Error::Shape(format!(
            "{} labels for {n} feature rows",
            labels.len()
        )));
    }
    if num_classes < 2 {
        return Err(Error::Parameter("head needs at least 2 output classes".into()));
    }
    let mut counts = vec![0usize; num_classes];
    for &l in labels {
        if l >= num_classes {
            return Err(Error::InvalidData(format!("label {l} out of range")));
        }
        counts[l] += 1;
    }
    if let Some(cls) = counts.iter().position(|&c| c == 0) {
        return Err(Error::TaskData(format!("class {cls} has no training samples")));
    }

    let mut weight = vec![0.0; num_classes * d];
    let mut bias = vec![0.0; num_classes];
    let mut losses = Vec::with_capacity(cfg.epochs);
    let inv_n = 1.0 / n as f64;

    let mut grad_w = vec![0.0; num_classes * d];
    let mut grad_b = vec![0.0; num_classes];
    for _ in 0..cfg.epochs {
        grad_w.iter_mut().for_each(|g| *g = 0.0);
        grad_b.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        for (row, &y) in features.iter_rows().zip(labels) {
            let logits: Vec<f64> = weight
                .chunks_exact(d)
                .zip(&bias)
                .map(|(wrow, &b)| crate::embedding::dot(wrow, row) + b)
                .collect();
            let lse = logsumexp(&logits);
            loss -= (logits[y] - lse) * inv_n;
            for c in 0..num_classes {
                let p = (logits[c] - lse).exp();
                let delta = (p - if c == y { 1.0 } else { 0.0 }) * inv_n;
                grad_b[c] += delta;
                for (g, &x) in grad_w[c * d..(c + 1) * d].iter_mut().zip(row) {
                    *g += delta * x;
                }
            }
        }
        let w_sq: f64 = weight.iter().map(|w| w * w).sum();
        loss += 0.5 * cfg.l2_penalty * w_sq;
        losses.push(loss);

        for (w, g) in weight.iter_mut().zip(&grad_w) {
            *w -= cfg.learning_rate * (g + cfg.l2_penalty * *w);
        }
        for (b, g) in bias.iter_mut().zip(&grad_b) {
            *b -= cfg.learning_rate * g;
        }
    }

    Ok((
        LinearHead::new(weight, bias, num_classes, d, trained_on_member)?,
        losses,
    ))
}

/// `(1/M²) Σ_{i<j} ‖p_i − p_j‖²` over per-member outputs at one point.
///
/// Shared by the reliability metric, the reference-point reliability
/// `σ_{r,t}²`, and the bound's left-hand side, so all three agree by
/// construction.
pub fn pairwise_variance(preds: &[Vec<f64>]) -> f64 {
    let m = preds.len();
    let mut total = 0.0;
    for i in 0..m {
        for j in (i + 1)..m {
            total += crate::embedding::euclidean_sq(&preds[i], &preds[j]);
        }
    }
    total / (m * m) as f64
}

/// Maximum pairwise L2 deviation across members; the strong-form reliability
/// diagnostic used by the bi-Lipschitz converse. Not a headline score.
pub fn max_prediction_deviation(preds: &[Vec<f64>]) -> f64 {
    let m = preds.len();
    let mut best: f64 = 0.0;
    for i in 0..m {
        for j in (i + 1)..m {
            best = best.max(euclidean(&preds[i], &preds[j]));
        }
    }
    best
}

fn require_members(preds: &[Vec<f64>]) -> Result<()> {
    if preds.len() < 2 {
        return Err(Error::EnsembleTooSmall(preds.len()));
    }
    let len = preds[0].len();
    if preds.iter().any(|p| p.len() != len) {
        return Err(Error::Shape("prediction vectors differ in length".into()));
    }
    Ok(())
}

/// Negative ensemble prediction variance; 0 when members agree exactly.
pub fn reli_variance(preds: &[Vec<f64>]) -> Result<f64> {
    require_members(preds)?;
    Ok(-pairwise_variance(preds))
}

/// Negative Brier score of the ensemble-mean prediction against a one-hot
/// label; in `[-2, 0]`.
pub fn reli_brier(preds: &[Vec<f64>], label: usize) -> Result<f64> {
    require_members(preds)?;
    let c = preds[0].len();
    if label >= c {
        return Err(Error::InvalidData(format!("label {label} out of range [0, {c})")));
    }
    let m = preds.len() as f64;
    let mut acc = 0.0;
    for cls in 0..c {
        let mean: f64 = preds.iter().map(|p| p[cls]).sum::<f64>() / m;
        let y = if cls == label { 1.0 } else { 0.0 };
        acc += (mean - y) * (mean - y);
    }
    Ok(-acc)
}

/// Negative entropy of the ensemble-mean prediction; in `[-log C, 0]`,
/// with `0·log 0 = 0`.
pub fn reli_entropy(preds: &[Vec<f64>]) -> Result<f64> {
    require_members(preds)?;
    let c = preds[0].len();
    let m = preds.len() as f64;
    let mut acc = 0.0;
    for cls in 0..c {
        let mean: f64 = preds.iter().map(|p| p[cls]).sum::<f64>() / m;
        if mean > 0.0 {
            acc += mean * mean.ln();
        }
    }
    Ok(acc)
}

/// Mean per-task performance over the tasks containing a point.
pub fn reli_aggregate(per_task_perf: &[f64]) -> Result<f64> {
    if per_task_perf.is_empty() {
        return Err(Error::InvalidInput("no per-task performance values".into()));
    }
    Ok(per_task_perf.iter().sum::<f64>() / per_task_perf.len() as f64)
}

/// Spectral norm of the head weight via power iteration
/// (relative tolerance 1e-8, capped at 10,000 iterations).
pub fn lipschitz_constant(head: &LinearHead) -> f64 {
    let (out, inn) = (head.out_dim, head.in_dim);
    let w = &head.weight;

    // Deterministic start vector; the integer hash avoids accidental
    // orthogonality to the leading singular direction.
    let mut v: Vec<f64> = (0..inn)
        .map(|i| 1.0 + ((i.wrapping_mul(2654435761) % 1009) as f64) / 1009.0)
        .collect();
    let nv = crate::embedding::norm2(&v);
    v.iter_mut().for_each(|x| *x /= nv);

    let mut sigma = 0.0;
    let mut u = vec![0.0; out];
    for _ in 0..10_000 {
        for (ui, wrow) in u.iter_mut().zip(w.chunks_exact(inn)) {
            *ui = crate::embedding::dot(wrow, &v);
        }
        let new_sigma = crate::embedding::norm2(&u);
        if new_sigma <= crate::embedding::EPS_ZERO {
            return 0.0;
        }
        // v <- Wᵀ u / ‖Wᵀ u‖
        v.iter_mut().for_each(|x| *x = 0.0);
        for (ui, wrow) in u.iter().zip(w.chunks_exact(inn)) {
            for (vi, &wij) in v.iter_mut().zip(wrow) {
                *vi += ui * wij;
            }
        }
        let nv = crate::embedding::norm2(&v);
        v.iter_mut().for_each(|x| *x /= nv);

        if (new_sigma - sigma).abs() <= 1e-8 * new_sigma {
            return new_sigma;
        }
        sigma = new_sigma;
    }
    sigma
}

/// Per-point certificate for the consistent-neighbor variance bound.
#[derive(Debug, Clone)]
pub struct BoundCheckReport {
    pub test_row: usize,
    /// Reference row minimizing the right-hand side.
    pub neighbor: usize,
    /// `max_i ‖h_i(x^r) − h_i(x*)‖₂` for the chosen neighbor.
    pub eps_nb: f64,
    /// `σ_{r}`: square root of the ensemble prediction variance at the neighbor.
    pub neighbor_sigma: f64,
    /// `L`: max over members of the head spectral norm.
    pub lipschitz: f64,
    /// Ensemble prediction variance at the test point.
    pub lhs_variance: f64,
    /// `(√2·L·ε_nb + σ_r)²` for the chosen neighbor.
    pub rhs_bound: f64,
    pub satisfied: bool,
}

/// Checks the consistent-neighbor bound for one test point with one head per
/// member (affine outputs), scanning every reference row and reporting the
/// neighbor that yields the tightest certificate.
pub fn bound_check(
    ens: &EnsembleEmbeddings,
    heads: &[LinearHead],
    test_row: usize,
) -> Result<BoundCheckReport> {
    ens.require_pairs()?;
    let m = ens.num_members();
    if heads.len() != m {
        return Err(Error::Shape(format!("{} heads for {m} members", heads.len())));
    }
    if ens.ref_rows() == 0 {
        return Err(Error::InvalidInput("no reference data".into()));
    }
    for h in heads {
        if h.in_dim() != ens.dim() {
            return Err(Error::Shape(format!(
                "head input dim {} != embedding dim {}",
                h.in_dim(),
                ens.dim()
            )));
        }
    }

    let test_preds: Vec<Vec<f64>> = (0..m)
        .map(|i| heads[i].logits(ens.member(i).test.row(test_row)))
        .collect();
    let lhs = pairwise_variance(&test_preds);
    let lipschitz = heads.iter().map(lipschitz_constant).fold(0.0, f64::max);

    let mut best: Option<(usize, f64, f64, f64)> = None; // (row, eps, sigma, rhs)
    for r in 0..ens.ref_rows() {
        let eps = (0..m)
            .map(|i| euclidean(ens.member(i).reference.row(r), ens.member(i).test.row(test_row)))
            .fold(0.0, f64::max);
        let ref_preds: Vec<Vec<f64>> = (0..m)
            .map(|i| heads[i].logits(ens.member(i).reference.row(r)))
            .collect();
        let sigma_sq = pairwise_variance(&ref_preds);
        let sigma = sigma_sq.sqrt();
        // (√2·L·ε + σ)², expanded so a duplicate neighbor (ε = 0) yields
        // σ² bitwise instead of sqrt(σ²)² and the exact-equality case holds.
        let le = std::f64::consts::SQRT_2 * lipschitz * eps;
        let rhs = le * le + 2.0 * le * sigma + sigma_sq;
        if best.map_or(true, |(_, _, _, b)| rhs < b) {
            best = Some((r, eps, sigma, rhs));
        }
    }
    let (neighbor, eps_nb, neighbor_sigma, rhs_bound) = best.unwrap();

    Ok(BoundCheckReport {
        test_row,
        neighbor,
        eps_nb,
        neighbor_sigma,
        lipschitz,
        lhs_variance: lhs,
        rhs_bound,
        satisfied: lhs <= rhs_bound,
    })
}

/// Which per-task performance metric backs the reliability ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReliabilityMetric {
    NegVariance,
    NegBrier,
    NegEntropy,
}

impl std::fmt::Display for ReliabilityMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ReliabilityMetric::NegVariance => write!(f, "variance"),
            ReliabilityMetric::NegBrier => write!(f, "brier"),
            ReliabilityMetric::NegEntropy => write!(f, "entropy"),
        }
    }
}

/// Per-test-point reliability ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct ReliabilityVector {
    values: Vec<f64>,
    metric: ReliabilityMetric,
}

impl ReliabilityVector {
    pub fn new(values: Vec<f64>, metric: ReliabilityMetric) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite reliability value".into()));
        }
        Ok(Self { values, metric })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn metric(&self) -> ReliabilityMetric {
        self.metric
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn matrix_subset(m: &EmbeddingMatrix, rows: &[usize]) -> EmbeddingMatrix {
    let mut data = Vec::with_capacity(rows.len() * m.dim());
    for &r in rows {
        data.extend_from_slice(m.row(r));
    }
    EmbeddingMatrix::new(rows.len(), m.dim(), data).expect("subset of valid matrix")
}

/// Trains one head per member for a task over the given reference rows and
/// binary/multiclass labels.
fn train_task_heads(
    ens: &EnsembleEmbeddings,
    rows: &[usize],
    labels: &[usize],
    num_classes: usize,
    cfg: &HeadConfig,
) -> Result<Vec<LinearHead>> {
    (0..ens.num_members())
        .map(|i| {
            let feats = matrix_subset(&ens.member(i).reference, rows);
            train_linear_head(&feats, labels, num_classes, cfg, i).map(|(h, _)| h)
        })
        .collect()
}

/// Full ground-truth pipeline: per task, per-member heads; per test point,
/// the chosen performance metric averaged over the tasks containing its
/// class.
pub fn compute_reliability(
    ens: &EnsembleEmbeddings,
    ref_labels: &LabeledDataset,
    test_labels: &LabeledDataset,
    tasks: &TaskSet,
    metric: ReliabilityMetric,
    cfg: &HeadConfig,
) -> Result<ReliabilityVector> {
    ens.require_pairs()?;
    if ref_labels.len() != ens.ref_rows() {
        return Err(Error::Shape(format!(
            "{} reference labels for {} reference rows",
            ref_labels.len(),
            ens.ref_rows()
        )));
    }
    if test_labels.len() != ens.test_rows() {
        return Err(Error::Shape(format!(
            "{} test labels for {} test rows",
            test_labels.len(),
            ens.test_rows()
        )));
    }
    if tasks.is_empty() {
        return Err(Error::InvalidInput("empty task set".into()));
    }

    let per_task: Vec<Vec<(usize, f64)>> = tasks
        .tasks()
        .par_iter()
        .map(|task| evaluate_task(ens, ref_labels, test_labels, *task, metric, cfg))
        .collect::<Result<Vec<_>>>()?;

    let mut sums = vec![0.0; ens.test_rows()];
    let mut counts = vec![0usize; ens.test_rows()];
    for task_results in per_task {
        for (row, perf) in task_results {
            sums[row] += perf;
            counts[row] += 1;
        }
    }
    if let Some(row) = counts.iter().position(|&c| c == 0) {
        return Err(Error::TaskData(format!(
            "test row {row} participates in no task"
        )));
    }
    let values = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| s / c as f64)
        .collect();
    ReliabilityVector::new(values, metric)
}

fn evaluate_task(
    ens: &EnsembleEmbeddings,
    ref_labels: &LabeledDataset,
    test_labels: &LabeledDataset,
    task: Task,
    metric: ReliabilityMetric,
    cfg: &HeadConfig,
) -> Result<Vec<(usize, f64)>> {
    let (rows, labels, test_rows, out_dim): (Vec<usize>, Vec<usize>, Vec<(usize, usize)>, usize) =
        match task {
            Task::OneVsOne(a, b) => {
                let mut rows = Vec::new();
                let mut labels = Vec::new();
                for (r, &l) in ref_labels.labels().iter().enumerate() {
                    if l == a || l == b {
                        rows.push(r);
                        labels.push(usize::from(l == b));
                    }
                }
                if labels.iter().all(|&l| l == 1) || labels.iter().all(|&l| l == 0) || rows.is_empty()
                {
                    return Err(Error::TaskData(format!(
                        "task ({a}, {b}) is missing a class in the reference set"
                    )));
                }
                let test_rows = test_labels
                    .labels()
                    .iter()
                    .enumerate()
                    .filter(|&(_, &l)| l == a || l == b)
                    .map(|(r, &l)| (r, usize::from(l == b)))
                    .collect();
                (rows, labels, test_rows, 2)
            }
            Task::MultiClass => {
                let rows: Vec<usize> = (0..ref_labels.len()).collect();
                let labels = ref_labels.labels().to_vec();
                let test_rows = test_labels.labels().iter().copied().enumerate().collect();
                (rows, labels, test_rows, ref_labels.num_classes())
            }
        };

    let heads = train_task_heads(ens, &rows, &labels, out_dim, cfg)?;
    let mut out = Vec::with_capacity(test_rows.len());
    for (row, task_label) in test_rows {
        let preds: Vec<Vec<f64>> = (0..ens.num_members())
            .map(|i| predict_proba(&heads[i], ens.member(i).test.row(row)))
            .collect();
        let perf = match metric {
            ReliabilityMetric::NegVariance => reli_variance(&preds)?,
            ReliabilityMetric::NegBrier => reli_brier(&preds, task_label)?,
            ReliabilityMetric::NegEntropy => reli_entropy(&preds)?,
        };
        out.push((row, perf));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::MemberPair;
    use crate::testutil::{random_matrix, rng, std_normal};
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    #[test]
    fn ovo_task_counts() {
        assert_eq!(ovo_tasks(2).unwrap().tasks(), &[Task::OneVsOne(0, 1)]);
        assert_eq!(ovo_tasks(4).unwrap().len(), 6);
        let t10 = ovo_tasks(10).unwrap();
        assert_eq!(t10.len(), 45);
        let class0 = t10
            .tasks()
            .iter()
            .filter(|t| matches!(t, Task::OneVsOne(0, _)))
            .count();
        assert_eq!(class0, 9);
    }

    #[test]
    fn head_trains_separable_blobs_to_perfect_accuracy() {
        let mut r = rng(61);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..40 {
            rows.push(vec![std_normal(&mut r) * 0.3 - 3.0, std_normal(&mut r) * 0.3]);
            labels.push(0);
            rows.push(vec![std_normal(&mut r) * 0.3 + 3.0, std_normal(&mut r) * 0.3]);
            labels.push(1);
        }
        let feats = EmbeddingMatrix::from_rows(rows.clone()).unwrap();
        let (head, losses) =
            train_linear_head(&feats, &labels, 2, &HeadConfig::default(), 0).unwrap();
        let correct = rows
            .iter()
            .zip(&labels)
            .filter(|(row, &y)| {
                let p = predict_proba(&head, row);
                (p[1] > p[0]) == (y == 1)
            })
            .count();
        assert_eq!(correct, rows.len());
        for w in losses.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "loss increased: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn head_on_random_labels_is_chance_level() {
        let mut r = rng(67);
        let train = random_matrix(&mut r, 300, 4);
        let train_labels: Vec<usize> = (0..300).map(|_| r.random_range(0..2)).collect();
        let test = random_matrix(&mut r, 1000, 4);
        let test_labels: Vec<usize> = (0..1000).map(|_| r.random_range(0..2)).collect();
        let (head, _) =
            train_linear_head(&train, &train_labels, 2, &HeadConfig::default(), 0).unwrap();
        let correct = (0..1000)
            .filter(|&i| {
                let p = predict_proba(&head, test.row(i));
                (p[1] > p[0]) == (test_labels[i] == 1)
            })
            .count() as f64
            / 1000.0;
        assert!((correct - 0.5).abs() < 0.1, "accuracy {correct} not near chance");
    }

    #[test]
    fn head_recovers_planted_linear_rule() {
        let mut r = rng(71);
        let d = 8;
        let w: Vec<f64> = (0..d).map(|_| std_normal(&mut r)).collect();
        let feats = random_matrix(&mut r, 2000, d);
        let labels: Vec<usize> = feats
            .iter_rows()
            .map(|row| usize::from(crate::embedding::dot(row, &w) > 0.0))
            .collect();
        let (head, _) =
            train_linear_head(&feats, &labels, 2, &HeadConfig::default(), 0).unwrap();
        let correct = feats
            .iter_rows()
            .zip(&labels)
            .filter(|(row, &y)| {
                let p = predict_proba(&head, row);
                (p[1] > p[0]) == (y == 1)
            })
            .count() as f64
            / 2000.0;
        assert!(correct >= 0.98, "accuracy {correct}");
    }

    #[test]
    fn head_rejects_missing_class() {
        let feats = EmbeddingMatrix::from_rows(vec![vec![0.0], vec![1.0]]).unwrap();
        assert!(matches!(
            train_linear_head(&feats, &[0, 0], 2, &HeadConfig::default(), 0),
            Err(Error::TaskData(_))
        ));
    }

    #[test]
    fn predict_proba_basics() {
        let zero = LinearHead::new(vec![0.0; 6], vec![0.0; 2], 2, 3, 0).unwrap();
        let p = predict_proba(&zero, &[1.0, 2.0, 3.0]);
        assert_eq!(p, vec![0.5, 0.5]);

        let gap = LinearHead::new(vec![10.0, 0.0], vec![0.0, 0.0], 2, 1, 0).unwrap();
        let p = predict_proba(&gap, &[5.0]);
        assert!(p[0] > 0.99);
    }

    #[test]
    fn predict_proba_matches_exp_lse_oracle_and_sums_to_one() {
        let mut r = rng(73);
        for _ in 0..20 {
            let head = LinearHead::new(
                (0..12).map(|_| std_normal(&mut r)).collect(),
                (0..3).map(|_| std_normal(&mut r)).collect(),
                3,
                4,
                0,
            )
            .unwrap();
            let z: Vec<f64> = (0..4).map(|_| std_normal(&mut r)).collect();
            let p = predict_proba(&head, &z);
            let logits = head.logits(&z);
            let lse = logsumexp(&logits);
            for (pc, &l) in p.iter().zip(&logits) {
                assert_abs_diff_eq!(*pc, (l - lse).exp(), epsilon = 1e-12);
            }
            assert_abs_diff_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn reli_variance_cases() {
        assert_eq!(reli_variance(&[vec![0.0], vec![2.0]]).unwrap(), -1.0);
        assert_eq!(reli_variance(&[vec![0.3, 0.7], vec![0.3, 0.7]]).unwrap(), 0.0);
    }

    #[test]
    fn reli_variance_matches_trace_covariance_oracle() {
        let mut r = rng(79);
        let preds: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..3).map(|_| std_normal(&mut r)).collect())
            .collect();
        let got = reli_variance(&preds).unwrap();
        let m = preds.len() as f64;
        let mut trace = 0.0;
        for c in 0..3 {
            let mean: f64 = preds.iter().map(|p| p[c]).sum::<f64>() / m;
            trace += preds.iter().map(|p| (p[c] - mean) * (p[c] - mean)).sum::<f64>() / m;
        }
        assert_abs_diff_eq!(got, -trace, epsilon = 1e-9);
    }

    #[test]
    fn reli_brier_cases() {
        // ensemble mean (0.8, 0.2) vs label 0
        let preds = vec![vec![0.9, 0.1], vec![0.7, 0.3]];
        assert_abs_diff_eq!(reli_brier(&preds, 0).unwrap(), -0.08, epsilon = 1e-12);
        // perfect one-hot mean
        let exact = vec![vec![1.0, 0.0], vec![1.0, 0.0]];
        assert_eq!(reli_brier(&exact, 0).unwrap(), 0.0);
        // worst case is -2
        let wrong = vec![vec![1.0, 0.0], vec![1.0, 0.0]];
        assert_eq!(reli_brier(&wrong, 1).unwrap(), -2.0);
    }

    #[test]
    fn reli_brier_matches_direct_formula() {
        let mut r = rng(83);
        let preds: Vec<Vec<f64>> = (0..4)
            .map(|_| {
                let raw: Vec<f64> = (0..3).map(|_| r.random::<f64>() + 0.01).collect();
                let s: f64 = raw.iter().sum();
                raw.iter().map(|x| x / s).collect()
            })
            .collect();
        let got = reli_brier(&preds, 1).unwrap();
        let mut expect = 0.0;
        for c in 0..3 {
            let mean = preds.iter().map(|p| p[c]).sum::<f64>() / 4.0;
            let y = if c == 1 { 1.0 } else { 0.0 };
            expect -= (mean - y) * (mean - y);
        }
        assert_abs_diff_eq!(got, expect, epsilon = 1e-12);
    }

    #[test]
    fn reli_entropy_cases() {
        let uniform = vec![vec![0.5, 0.5], vec![0.5, 0.5]];
        assert_abs_diff_eq!(reli_entropy(&uniform).unwrap(), -2.0_f64.ln(), epsilon = 1e-12);
        let onehot = vec![vec![1.0, 0.0], vec![1.0, 0.0]];
        assert_eq!(reli_entropy(&onehot).unwrap(), 0.0);
    }

    #[test]
    fn reli_entropy_bounds_and_oracle() {
        let mut r = rng(89);
        let c = 5;
        let preds: Vec<Vec<f64>> = (0..3)
            .map(|_| {
                let raw: Vec<f64> = (0..c).map(|_| r.random::<f64>() + 0.01).collect();
                let s: f64 = raw.iter().sum();
                raw.iter().map(|x| x / s).collect()
            })
            .collect();
        let got = reli_entropy(&preds).unwrap();
        let mut expect = 0.0;
        for cls in 0..c {
            let mean = preds.iter().map(|p| p[cls]).sum::<f64>() / 3.0;
            expect += mean * mean.ln();
        }
        assert_abs_diff_eq!(got, expect, epsilon = 1e-12);
        assert!(got <= 0.0 && got >= -(c as f64).ln() - 1e-12);
    }

    #[test]
    fn reli_aggregate_cases() {
        assert_eq!(reli_aggregate(&[0.4, 0.4, 0.4]).unwrap(), 0.4);
        assert_eq!(reli_aggregate(&[-1.0, 0.0, 1.0]).unwrap(), 0.0);
        let mut r = rng(97);
        let vals: Vec<f64> = (0..7).map(|_| std_normal(&mut r)).collect();
        let expect = vals.iter().sum::<f64>() / 7.0;
        assert_abs_diff_eq!(reli_aggregate(&vals).unwrap(), expect, epsilon = 1e-15);
    }

    #[test]
    fn lipschitz_diagonal_and_orthogonal() {
        let diag = LinearHead::new(vec![3.0, 0.0, 0.0, 1.0], vec![0.0; 2], 2, 2, 0).unwrap();
        assert_abs_diff_eq!(lipschitz_constant(&diag), 3.0, epsilon = 1e-8);
        // rotation by 30 degrees
        let (s, c) = (0.5_f64, 3.0_f64.sqrt() / 2.0);
        let rot = LinearHead::new(vec![c, -s, s, c], vec![0.0; 2], 2, 2, 0).unwrap();
        assert_abs_diff_eq!(lipschitz_constant(&rot), 1.0, epsilon = 1e-8);
    }

    // One-sided Jacobi SVD: rotate column pairs until mutually orthogonal;
    // singular values are the resulting column norms. Independent of the
    // power-iteration path.
    fn svd_max_jacobi(a: &[f64], rows: usize, cols: usize) -> f64 {
        let mut m: Vec<Vec<f64>> = (0..cols)
            .map(|j| (0..rows).map(|i| a[i * cols + j]).collect())
            .collect();
        for _ in 0..100 {
            let mut off = 0.0;
            for p in 0..cols {
                for q in (p + 1)..cols {
                    let app: f64 = m[p].iter().map(|x| x * x).sum();
                    let aqq: f64 = m[q].iter().map(|x| x * x).sum();
                    let apq: f64 = m[p].iter().zip(&m[q]).map(|(x, y)| x * y).sum();
                    off += apq.abs();
                    if apq.abs() < 1e-15 {
                        continue;
                    }
                    let tau = (aqq - app) / (2.0 * apq);
                    let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = c * t;
                    for i in 0..rows {
                        let (xp, xq) = (m[p][i], m[q][i]);
                        m[p][i] = c * xp - s * xq;
                        m[q][i] = s * xp + c * xq;
                    }
                }
            }
            if off < 1e-14 {
                break;
            }
        }
        m.iter()
            .map(|col| col.iter().map(|x| x * x).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    #[test]
    fn lipschitz_matches_jacobi_svd_oracle() {
        let mut r = rng(101);
        for _ in 0..10 {
            let (out, inn) = (5, 8);
            let w: Vec<f64> = (0..out * inn).map(|_| std_normal(&mut r)).collect();
            let head = LinearHead::new(w.clone(), vec![0.0; out], out, inn, 0).unwrap();
            let got = lipschitz_constant(&head);
            let want = svd_max_jacobi(&w, out, inn);
            assert_abs_diff_eq!(got, want, epsilon = 1e-6);
        }
    }

    #[test]
    fn softmax_composition_is_lipschitz() {
        let mut r = rng(103);
        for _ in 0..50 {
            let head = LinearHead::new(
                (0..8).map(|_| std_normal(&mut r) * 2.0).collect(),
                (0..2).map(|_| std_normal(&mut r)).collect(),
                2,
                4,
                0,
            )
            .unwrap();
            let lip = lipschitz_constant(&head);
            let z1: Vec<f64> = (0..4).map(|_| std_normal(&mut r)).collect();
            let z2: Vec<f64> = (0..4).map(|_| std_normal(&mut r)).collect();
            let p1 = predict_proba(&head, &z1);
            let p2 = predict_proba(&head, &z2);
            let lhs = euclidean(&p1, &p2);
            let rhs = lip * euclidean(&z1, &z2);
            assert!(lhs <= rhs + 1e-9, "softmax violated Lipschitz: {lhs} > {rhs}");
        }
    }

    fn small_labeled_ensemble(seed: u64) -> (EnsembleEmbeddings, LabeledDataset, LabeledDataset) {
        let mut r = rng(seed);
        let d = 4;
        let gen_points = |r: &mut crate::testutil::TestRng, labels: &[usize]| -> EmbeddingMatrix {
            let rows: Vec<Vec<f64>> = labels
                .iter()
                .map(|&l| {
                    (0..d)
                        .map(|k| if k == l { 4.0 } else { 0.0 } + std_normal(r) * 0.3)
                        .collect()
                })
                .collect();
            EmbeddingMatrix::from_rows(rows).unwrap()
        };
        let ref_labels: Vec<usize> = (0..60).map(|i| i % 3).collect();
        let test_labels: Vec<usize> = (0..12).map(|i| i % 3).collect();
        let members = (0..3)
            .map(|_| {
                MemberPair::new(gen_points(&mut r, &ref_labels), gen_points(&mut r, &test_labels))
                    .unwrap()
            })
            .collect();
        (
            EnsembleEmbeddings::new(members).unwrap(),
            LabeledDataset::new(ref_labels, 3).unwrap(),
            LabeledDataset::new(test_labels, 3).unwrap(),
        )
    }

    #[test]
    fn compute_reliability_runs_all_metrics() {
        let (ens, ref_l, test_l) = small_labeled_ensemble(107);
        let tasks = ovo_tasks(3).unwrap();
        let cfg = HeadConfig { epochs: 100, ..Default::default() };
        for metric in [
            ReliabilityMetric::NegVariance,
            ReliabilityMetric::NegBrier,
            ReliabilityMetric::NegEntropy,
        ] {
            let reli = compute_reliability(&ens, &ref_l, &test_l, &tasks, metric, &cfg).unwrap();
            assert_eq!(reli.len(), ens.test_rows());
            for &v in reli.values() {
                assert!(v <= 1e-12, "performance metrics are non-positive, got {v}");
            }
        }
        // Multiclass variant: single task, C outputs.
        let reli = compute_reliability(
            &ens,
            &ref_l,
            &test_l,
            &multiclass_task(),
            ReliabilityMetric::NegBrier,
            &cfg,
        )
        .unwrap();
        assert_eq!(reli.len(), ens.test_rows());
    }

    #[test]
    fn bound_check_duplicate_point_is_tight() {
        // Test point 0 duplicates reference row 0 in every member.
        let mut r = rng(109);
        let d = 3;
        let members: Vec<MemberPair> = (0..3)
            .map(|_| {
                let refs = random_matrix(&mut r, 8, d);
                let mut test_data = refs.row(0).to_vec();
                test_data.extend((0..d).map(|_| std_normal(&mut r)));
                let tests = EmbeddingMatrix::new(2, d, test_data).unwrap();
                MemberPair::new(refs, tests).unwrap()
            })
            .collect();
        let ens = EnsembleEmbeddings::new(members).unwrap();
        let heads: Vec<LinearHead> = (0..3)
            .map(|i| {
                LinearHead::new(
                    (0..2 * d).map(|_| std_normal(&mut r)).collect(),
                    vec![0.0; 2],
                    2,
                    d,
                    i,
                )
                .unwrap()
            })
            .collect();
        let report = bound_check(&ens, &heads, 0).unwrap();
        assert!(report.satisfied);
        assert_eq!(report.neighbor, 0);
        assert_eq!(report.eps_nb, 0.0);
        // ε_nb = 0 ⇒ rhs = σ², and the duplicate makes lhs = σ² exactly.
        assert_eq!(report.lhs_variance, report.rhs_bound);
    }
}
