//! File formats and run configuration.
//!
//! - embeddings: `EMB1` binary (little-endian; f32 payloads widen to f64 on
//!   read) with a headerless CSV fallback,
//! - labels: one integer per line,
//! - scores / reliabilities / reports: small fixed-header CSVs,
//! - fitted models and heads: `RRM1` versioned binary blobs,
//! - configuration: flat `key=value` files merged under
//!   defaults < config file < flags, each override logged once.
//!
//! Floats are printed with Rust's shortest round-trip formatting, so a rerun
//! with identical inputs and seeds is byte-identical.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::baselines::{Polarity, ScoreVector};
use crate::consistency::SetSimilarity;
use crate::downstream::{HeadConfig, LinearHead, ReliabilityMetric, ReliabilityVector};
use crate::embedding::{DistanceMetric, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::mixture::{GaussianMixture, MixtureModel, VmfMixture};
use crate::synth::SynthConfig;

const EMB_MAGIC: &[u8; 4] = b"EMB1";
const EMB_VERSION: u16 = 1;
const MODEL_MAGIC: &[u8; 4] = b"RRM1";
const MODEL_VERSION: u16 = 1;

const DTYPE_F32: u8 = 0;
const DTYPE_F64: u8 = 1;

// ---------------------------------------------------------------------------
// Embedding files
// ---------------------------------------------------------------------------

fn read_u16(bytes: &[u8], at: &mut usize) -> Result<u16> {
    let end = *at + 2;
    let s = bytes
        .get(*at..end)
        .ok_or_else(|| Error::Corrupt("header truncated".into()))?;
    *at = end;
    Ok(u16::from_le_bytes([s[0], s[1]]))
}

fn read_u64(bytes: &[u8], at: &mut usize) -> Result<u64> {
    let end = *at + 8;
    let s = bytes
        .get(*at..end)
        .ok_or_else(|| Error::Corrupt("header truncated".into()))?;
    *at = end;
    Ok(u64::from_le_bytes(s.try_into().unwrap()))
}

fn read_f64(bytes: &[u8], at: &mut usize) -> Result<f64> {
    let end = *at + 8;
    let s = bytes
        .get(*at..end)
        .ok_or_else(|| Error::Corrupt("payload truncated".into()))?;
    *at = end;
    Ok(f64::from_le_bytes(s.try_into().unwrap()))
}

fn parse_emb_binary(bytes: &[u8]) -> Result<EmbeddingMatrix> {
    let mut at = 4;
    let version = read_u16(bytes, &mut at)?;
    if version != EMB_VERSION {
        return Err(Error::Format(format!(
            "unsupported embedding file version {version}"
        )));
    }
    let dtype = *bytes
        .get(at)
        .ok_or_else(|| Error::Corrupt("header truncated".into()))?;
    at += 1;
    if dtype != DTYPE_F32 && dtype != DTYPE_F64 {
        return Err(Error::Format(format!("unknown dtype tag {dtype}")));
    }
    let rows = read_u64(bytes, &mut at)? as usize;
    let cols = read_u64(bytes, &mut at)? as usize;
    let count = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Format("rows*cols overflows".into()))?;
    let elem = if dtype == DTYPE_F32 { 4 } else { 8 };
    let expect = at + count * elem;
    if bytes.len() != expect {
        return Err(Error::Corrupt(format!(
            "payload is {} bytes, expected {}",
            bytes.len() - at,
            count * elem
        )));
    }
    let mut data = Vec::with_capacity(count);
    if dtype == DTYPE_F64 {
        for _ in 0..count {
            data.push(read_f64(bytes, &mut at)?);
        }
    } else {
        for _ in 0..count {
            let s = &bytes[at..at + 4];
            at += 4;
            data.push(f32::from_le_bytes(s.try_into().unwrap()) as f64);
        }
    }
    EmbeddingMatrix::new(rows, cols, data)
}

fn parse_emb_csv(text: &str) -> Result<EmbeddingMatrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|field| {
                field.trim().parse::<f64>().map_err(|_| {
                    Error::Format(format!(
                        "line {}: cannot parse '{}' as a number",
                        lineno + 1,
                        field.trim()
                    ))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::Format(format!(
                    "line {}: {} fields, expected {}",
                    lineno + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Format("no data rows".into()));
    }
    EmbeddingMatrix::from_rows(rows)
}

/// Reads an embedding matrix: `EMB1` binary, or headerless CSV fallback.
pub fn read_embeddings(path: &Path) -> Result<EmbeddingMatrix> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() >= 4 && &bytes[..4] == EMB_MAGIC {
        return parse_emb_binary(&bytes);
    }
    match std::str::from_utf8(&bytes) {
        Ok(text) => parse_emb_csv(text),
        Err(_) => Err(Error::Format(format!(
            "{}: not an EMB1 file and not text",
            path.display()
        ))),
    }
}

/// Writes an embedding matrix as `EMB1` with a 64-bit payload. Bit-exact
/// round trip through [`read_embeddings`].
pub fn write_embeddings(m: &EmbeddingMatrix, path: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(23 + m.data().len() * 8);
    out.extend_from_slice(EMB_MAGIC);
    out.extend_from_slice(&EMB_VERSION.to_le_bytes());
    out.push(DTYPE_F64);
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.dim() as u64).to_le_bytes());
    for v in m.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Writes an `EMB1` file with a 32-bit payload (values are narrowed).
pub fn write_embeddings_f32(m: &EmbeddingMatrix, path: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(23 + m.data().len() * 4);
    out.extend_from_slice(EMB_MAGIC);
    out.extend_from_slice(&EMB_VERSION.to_le_bytes());
    out.push(DTYPE_F32);
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.dim() as u64).to_le_bytes());
    for v in m.data() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    std::fs::write(path, out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Labels
// ---------------------------------------------------------------------------

/// Reads labels: one non-negative integer per line.
pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let text = std::fs::read_to_string(path)?;
    let mut labels = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        labels.push(line.parse::<usize>().map_err(|_| {
            Error::Format(format!("line {}: '{}' is not a label", lineno + 1, line))
        })?);
    }
    if labels.is_empty() {
        return Err(Error::Format("label file has no entries".into()));
    }
    Ok(labels)
}

pub fn write_labels(labels: &[usize], path: &Path) -> Result<()> {
    let mut out = String::new();
    for l in labels {
        out.push_str(&l.to_string());
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Score / reliability / report CSVs
// ---------------------------------------------------------------------------

const SCORE_HEADER: &str = "point_index,score,polarity";
const RELI_HEADER: &str = "point_index,reliability,metric";
const REPORT_HEADER: &str = "method,reliability_metric,n_points,tau,config_digest";
const RANK_HEADER: &str =
    "model_index,mean_score,mean_reliability,predicted_rank,true_rank,mean_per_point_tau,rank_agreement_tau";

pub fn write_score_csv(scores: &ScoreVector, path: &Path) -> Result<()> {
    let mut out = String::from(SCORE_HEADER);
    out.push('\n');
    for (i, v) in scores.values().iter().enumerate() {
        out.push_str(&format!("{i},{v},{}\n", scores.polarity()));
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn parse_polarity(s: &str) -> Result<Polarity> {
    match s {
        "higher_is_reliable" => Ok(Polarity::HigherIsReliable),
        "lower_is_reliable" => Ok(Polarity::LowerIsReliable),
        other => Err(Error::Format(format!("unknown polarity '{other}'"))),
    }
}

pub fn read_score_csv(path: &Path) -> Result<ScoreVector> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(SCORE_HEADER) {
        return Err(Error::Format(format!(
            "{}: expected header '{SCORE_HEADER}'",
            path.display()
        )));
    }
    let mut values = Vec::new();
    let mut polarity: Option<Polarity> = None;
    for (lineno, line) in lines.enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::Format(format!("line {}: expected 3 fields", lineno + 2)));
        }
        let idx: usize = fields[0]
            .parse()
            .map_err(|_| Error::Format(format!("line {}: bad index", lineno + 2)))?;
        if idx != values.len() {
            return Err(Error::Corrupt(format!(
                "line {}: point index {idx} out of order",
                lineno + 2
            )));
        }
        values.push(
            fields[1]
                .parse::<f64>()
                .map_err(|_| Error::Format(format!("line {}: bad score", lineno + 2)))?,
        );
        let p = parse_polarity(fields[2])?;
        if *polarity.get_or_insert(p) != p {
            return Err(Error::Corrupt(format!("line {}: mixed polarity", lineno + 2)));
        }
    }
    let polarity = polarity.ok_or_else(|| Error::Format("score file has no rows".into()))?;
    ScoreVector::new(values, polarity)
}

fn parse_reli_metric(s: &str) -> Result<ReliabilityMetric> {
    match s {
        "variance" => Ok(ReliabilityMetric::NegVariance),
        "brier" => Ok(ReliabilityMetric::NegBrier),
        "entropy" => Ok(ReliabilityMetric::NegEntropy),
        other => Err(Error::Format(format!("unknown reliability metric '{other}'"))),
    }
}

pub fn write_reli_csv(reli: &ReliabilityVector, path: &Path) -> Result<()> {
    let mut out = String::from(RELI_HEADER);
    out.push('\n');
    for (i, v) in reli.values().iter().enumerate() {
        out.push_str(&format!("{i},{v},{}\n", reli.metric()));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_reli_csv(path: &Path) -> Result<ReliabilityVector> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(RELI_HEADER) {
        return Err(Error::Format(format!(
            "{}: expected header '{RELI_HEADER}'",
            path.display()
        )));
    }
    let mut values = Vec::new();
    let mut metric: Option<ReliabilityMetric> = None;
    for (lineno, line) in lines.enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::Format(format!("line {}: expected 3 fields", lineno + 2)));
        }
        let idx: usize = fields[0]
            .parse()
            .map_err(|_| Error::Format(format!("line {}: bad index", lineno + 2)))?;
        if idx != values.len() {
            return Err(Error::Corrupt(format!(
                "line {}: point index {idx} out of order",
                lineno + 2
            )));
        }
        values.push(
            fields[1]
                .parse::<f64>()
                .map_err(|_| Error::Format(format!("line {}: bad value", lineno + 2)))?,
        );
        let m = parse_reli_metric(fields[2])?;
        if *metric.get_or_insert(m) != m {
            return Err(Error::Corrupt(format!("line {}: mixed metrics", lineno + 2)));
        }
    }
    let metric = metric.ok_or_else(|| Error::Format("reliability file has no rows".into()))?;
    ReliabilityVector::new(values, metric)
}

pub fn write_report_csv(reports: &[crate::eval::CorrelationReport], path: &Path) -> Result<()> {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.method, r.reliability_metric, r.n_points, r.tau, r.config_digest
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_rank_csv(ranking: &crate::eval::ModelRanking, path: &Path) -> Result<()> {
    let mut out = String::from(RANK_HEADER);
    out.push('\n');
    let n = ranking.per_model_mean_score.len();
    let mut predicted_rank = vec![0usize; n];
    let mut true_rank = vec![0usize; n];
    for (rank, &model) in ranking.predicted_order.iter().enumerate() {
        predicted_rank[model] = rank;
    }
    for (rank, &model) in ranking.true_order.iter().enumerate() {
        true_rank[model] = rank;
    }
    let agg = ranking
        .aggregate_tau
        .map(|t| t.to_string())
        .unwrap_or_else(|| "undefined".to_string());
    for model in 0..n {
        out.push_str(&format!(
            "{model},{},{},{},{},{},{agg}\n",
            ranking.per_model_mean_score[model],
            ranking.per_model_mean_reliability[model],
            predicted_rank[model],
            true_rank[model],
            ranking.mean_per_point_tau,
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Model blobs
// ---------------------------------------------------------------------------

/// Anything the CLI persists as a fitted model.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelBlob {
    Gaussian(GaussianMixture),
    Vmf(VmfMixture),
    Head(LinearHead),
}

fn push_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn take_f64s(bytes: &[u8], at: &mut usize, count: usize) -> Result<Vec<f64>> {
    let mut v = Vec::with_capacity(count);
    for _ in 0..count {
        v.push(read_f64(bytes, at)?);
    }
    Ok(v)
}

pub fn write_model_blob(model: &ModelBlob, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    match model {
        ModelBlob::Gaussian(g) => {
            out.push(0);
            out.extend_from_slice(&(g.num_components() as u64).to_le_bytes());
            out.extend_from_slice(&(g.dim() as u64).to_le_bytes());
            push_f64s(&mut out, g.weights());
            for c in 0..g.num_components() {
                push_f64s(&mut out, g.mean(c));
            }
            for c in 0..g.num_components() {
                push_f64s(&mut out, g.variance(c));
            }
        }
        ModelBlob::Vmf(v) => {
            out.push(1);
            out.extend_from_slice(&(v.num_components() as u64).to_le_bytes());
            out.extend_from_slice(&(v.dim() as u64).to_le_bytes());
            push_f64s(&mut out, v.weights());
            for c in 0..v.num_components() {
                push_f64s(&mut out, v.direction(c));
            }
            push_f64s(&mut out, v.concentrations());
        }
        ModelBlob::Head(h) => {
            out.push(2);
            out.extend_from_slice(&(h.out_dim() as u64).to_le_bytes());
            out.extend_from_slice(&(h.in_dim() as u64).to_le_bytes());
            out.extend_from_slice(&(h.trained_on_member() as u64).to_le_bytes());
            push_f64s(&mut out, h.weight());
            push_f64s(&mut out, h.bias());
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_model_blob(path: &Path) -> Result<ModelBlob> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 7 || &bytes[..4] != MODEL_MAGIC {
        return Err(Error::Format("not a model blob (bad magic)".into()));
    }
    let mut at = 4;
    let version = read_u16(&bytes, &mut at)?;
    if version != MODEL_VERSION {
        return Err(Error::Format(format!("unsupported model version {version}")));
    }
    let kind = bytes[at];
    at += 1;
    let model = match kind {
        0 => {
            let c = read_u64(&bytes, &mut at)? as usize;
            let d = read_u64(&bytes, &mut at)? as usize;
            let weights = take_f64s(&bytes, &mut at, c)?;
            let means = take_f64s(&bytes, &mut at, c * d)?;
            let variances = take_f64s(&bytes, &mut at, c * d)?;
            ModelBlob::Gaussian(GaussianMixture::new(d, weights, means, variances)?)
        }
        1 => {
            let c = read_u64(&bytes, &mut at)? as usize;
            let d = read_u64(&bytes, &mut at)? as usize;
            let weights = take_f64s(&bytes, &mut at, c)?;
            let directions = take_f64s(&bytes, &mut at, c * d)?;
            let concentrations = take_f64s(&bytes, &mut at, c)?;
            ModelBlob::Vmf(VmfMixture::new(d, weights, directions, concentrations)?)
        }
        2 => {
            let out_dim = read_u64(&bytes, &mut at)? as usize;
            let in_dim = read_u64(&bytes, &mut at)? as usize;
            let member = read_u64(&bytes, &mut at)? as usize;
            let weight = take_f64s(&bytes, &mut at, out_dim * in_dim)?;
            let bias = take_f64s(&bytes, &mut at, out_dim)?;
            ModelBlob::Head(LinearHead::new(weight, bias, out_dim, in_dim, member)?)
        }
        other => return Err(Error::Format(format!("unknown model kind {other}"))),
    };
    if at != bytes.len() {
        return Err(Error::Corrupt(format!(
            "{} trailing bytes after model payload",
            bytes.len() - at
        )));
    }
    Ok(model)
}

impl From<MixtureModel> for ModelBlob {
    fn from(m: MixtureModel) -> Self {
        match m {
            MixtureModel::Gaussian(g) => ModelBlob::Gaussian(g),
            MixtureModel::Vmf(v) => ModelBlob::Vmf(v),
        }
    }
}

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

/// Resolved options for the scoring and reliability pipelines.
///
/// Defaults follow the reference experimental setup where it pins one:
/// `k = 100` for neighborhood consistency, `dist_k = 1` for the distance
/// baseline, a reference subsample cap of 5,000 rows, 10 mixture components.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub metric: DistanceMetric,
    pub normalize: bool,
    pub k: usize,
    pub dist_k: usize,
    pub eps: f64,
    pub sim: SetSimilarity,
    pub nc_normalized: bool,
    pub components: usize,
    pub seed: u64,
    /// Reference rows are subsampled down to this cap at load time
    /// (0 disables).
    pub n_ref_limit: usize,
    pub head: HeadConfig,
    pub reliability_metric: ReliabilityMetric,
    pub multiclass: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            metric: DistanceMetric::Euclidean,
            normalize: false,
            k: 100,
            dist_k: 1,
            eps: 0.5,
            sim: SetSimilarity::Jaccard,
            nc_normalized: false,
            components: 10,
            seed: 42,
            n_ref_limit: 5000,
            head: HeadConfig::default(),
            reliability_metric: ReliabilityMetric::NegBrier,
            multiclass: false,
        }
    }
}

pub fn parse_metric(s: &str) -> Result<DistanceMetric> {
    match s {
        "euclidean" => Ok(DistanceMetric::Euclidean),
        "cosine" => Ok(DistanceMetric::Cosine),
        other => Err(Error::Format(format!("unknown metric '{other}'"))),
    }
}

pub fn parse_sim(s: &str) -> Result<SetSimilarity> {
    match s {
        "jaccard" => Ok(SetSimilarity::Jaccard),
        "overlap" => Ok(SetSimilarity::Overlap),
        other => Err(Error::Format(format!("unknown set similarity '{other}'"))),
    }
}

pub fn parse_reliability_metric(s: &str) -> Result<ReliabilityMetric> {
    parse_reli_metric(s)
}

fn parse_bool(key: &str, s: &str) -> Result<bool> {
    match s {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(Error::Format(format!("{key}: '{other}' is not a boolean"))),
    }
}

/// Key=value file contents; insertion-order independent.
pub type ConfigMap = BTreeMap<String, String>;

/// Parses a flat `key=value` config file. `#` starts a comment line.
pub fn parse_config_file(path: &Path) -> Result<ConfigMap> {
    let text = std::fs::read_to_string(path)?;
    let mut map = ConfigMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Format(format!("line {}: expected key=value", lineno + 1))
        })?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

macro_rules! apply_key {
    ($map:expr, $taken:expr, $key:literal, $slot:expr, $parse:expr) => {
        if let Some(raw) = $map.get($key) {
            $taken.push($key);
            let parsed = $parse(raw.as_str())?;
            if $slot != parsed {
                log::info!("config file overrides {}: {:?} -> {:?}", $key, $slot, parsed);
                $slot = parsed;
            }
        }
    };
}

impl RunConfig {
    /// Applies config-file overrides on top of the defaults, logging each
    /// change. Keys belonging to [`SynthConfig`] are tolerated so one file
    /// can drive a whole pipeline.
    pub fn apply_file(&mut self, map: &ConfigMap) -> Result<()> {
        let mut taken: Vec<&str> = Vec::new();
        apply_key!(map, taken, "metric", self.metric, parse_metric);
        apply_key!(map, taken, "normalize", self.normalize, |s| parse_bool("normalize", s));
        apply_key!(map, taken, "k", self.k, |s: &str| s
            .parse::<usize>()
            .map_err(|_| Error::Format("k must be an integer".into())));
        apply_key!(map, taken, "dist_k", self.dist_k, |s: &str| s
            .parse::<usize>()
            .map_err(|_| Error::Format("dist_k must be an integer".into())));
        apply_key!(map, taken, "eps", self.eps, |s: &str| s
            .parse::<f64>()
            .map_err(|_| Error::Format("eps must be a number".into())));
        apply_key!(map, taken, "sim", self.sim, parse_sim);
        apply_key!(map, taken, "nc_normalized", self.nc_normalized, |s| parse_bool(
            "nc_normalized",
            s
        ));
        apply_key!(map, taken, "components", self.components, |s: &str| s
            .parse::<usize>()
            .map_err(|_| Error::Format("components must be an integer".into())));
        apply_key!(map, taken, "seed", self.seed, |s: &str| s
            .parse::<u64>()
            .map_err(|_| Error::Format("seed must be an integer".into())));
        apply_key!(map, taken, "n_ref_limit", self.n_ref_limit, |s: &str| s
            .parse::<usize>()
            .map_err(|_| Error::Format("n_ref_limit must be an integer".into())));
        apply_key!(map, taken, "learning_rate", self.head.learning_rate, |s: &str| s
            .parse::<f64>()
            .map_err(|_| Error::Format("learning_rate must be a number".into())));
        apply_key!(map, taken, "l2_penalty", self.head.l2_penalty, |s: &str| s
            .parse::<f64>()
            .map_err(|_| Error::Format("l2_penalty must be a number".into())));
        apply_key!(map, taken, "epochs", self.head.epochs, |s: &str| s
            .parse::<usize>()
            .map_err(|_| Error::Format("epochs must be an integer".into())));
        apply_key!(
            map,
            taken,
            "reliability_metric",
            self.reliability_metric,
            parse_reli_metric
        );
        apply_key!(map, taken, "multiclass", self.multiclass, |s| parse_bool("multiclass", s));

        for key in map.keys() {
            if !taken.contains(&key.as_str()) && !SYNTH_KEYS.contains(&key.as_str()) {
                return Err(Error::Format(format!("unknown config key '{key}'")));
            }
        }
        Ok(())
    }

    /// Canonical one-line-per-field rendering; input to the digest.
    pub fn canonical_string(&self) -> String {
        format!(
            "components={}\ndist_k={}\neps={}\nepochs={}\nk={}\nl2_penalty={}\nlearning_rate={}\nmetric={}\nmulticlass={}\nn_ref_limit={}\nnc_normalized={}\nnormalize={}\nreliability_metric={}\nseed={}\nsim={}\n",
            self.components,
            self.dist_k,
            self.eps,
            self.head.epochs,
            self.head.l2_penalty,
            self.head.learning_rate,
            self.k,
            self.metric,
            self.multiclass,
            self.n_ref_limit,
            self.nc_normalized,
            self.normalize,
            self.reliability_metric,
            self.seed,
            self.sim,
        )
    }

    /// FNV-1a digest of the canonical string, for report provenance.
    pub fn digest(&self) -> String {
        let mut hash: u64 = 0xcbf29ce484222325;
        for b in self.canonical_string().bytes() {
            hash ^= b as u64;
            hash = hash.wrapping_mul(0x100000001b3);
        }
        format!("{hash:016x}")
    }
}

const SYNTH_KEYS: &[&str] = &[
    "n_ref",
    "n_test",
    "dim",
    "members",
    "num_classes",
    "cluster_spread",
    "misalignment_noise",
    "ood_fraction",
];

/// Builds a [`SynthConfig`] from defaults plus config-file overrides.
pub fn synth_config_from_map(map: &ConfigMap) -> Result<SynthConfig> {
    let mut cfg = SynthConfig::default();
    let mut taken: Vec<&str> = Vec::new();
    apply_key!(map, taken, "n_ref", cfg.n_ref, |s: &str| s
        .parse::<usize>()
        .map_err(|_| Error::Format("n_ref must be an integer".into())));
    apply_key!(map, taken, "n_test", cfg.n_test, |s: &str| s
        .parse::<usize>()
        .map_err(|_| Error::Format("n_test must be an integer".into())));
    apply_key!(map, taken, "dim", cfg.dim, |s: &str| s
        .parse::<usize>()
        .map_err(|_| Error::Format("dim must be an integer".into())));
    apply_key!(map, taken, "members", cfg.members, |s: &str| s
        .parse::<usize>()
        .map_err(|_| Error::Format("members must be an integer".into())));
    apply_key!(map, taken, "num_classes", cfg.num_classes, |s: &str| s
        .parse::<usize>()
        .map_err(|_| Error::Format("num_classes must be an integer".into())));
    apply_key!(map, taken, "cluster_spread", cfg.cluster_spread, |s: &str| s
        .parse::<f64>()
        .map_err(|_| Error::Format("cluster_spread must be a number".into())));
    apply_key!(map, taken, "misalignment_noise", cfg.misalignment_noise, |s: &str| s
        .parse::<f64>()
        .map_err(|_| Error::Format("misalignment_noise must be a number".into())));
    apply_key!(map, taken, "ood_fraction", cfg.ood_fraction, |s: &str| s
        .parse::<f64>()
        .map_err(|_| Error::Format("ood_fraction must be a number".into())));
    apply_key!(map, taken, "seed", cfg.seed, |s: &str| s
        .parse::<u64>()
        .map_err(|_| Error::Format("seed must be an integer".into())));
    cfg.validate()?;
    Ok(cfg)
}

/// Deterministically subsamples shared reference-row indices down to `limit`
/// (sorted ascending). Returns `None` when no subsampling is needed.
pub fn subsample_indices(rows: usize, limit: usize, seed: u64) -> Option<Vec<usize>> {
    if limit == 0 || rows <= limit {
        return None;
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..rows).collect();
    // Partial Fisher-Yates: the first `limit` entries become the sample.
    for i in 0..limit {
        let j = rng.random_range(i..rows);
        idx.swap(i, j);
    }
    idx.truncate(limit);
    idx.sort_unstable();
    Some(idx)
}

/// Builds a row-subset matrix.
pub fn select_rows(m: &EmbeddingMatrix, rows: &[usize]) -> Result<EmbeddingMatrix> {
    let mut data = Vec::with_capacity(rows.len() * m.dim());
    for &r in rows {
        if r >= m.rows() {
            return Err(Error::Parameter(format!("row {r} out of range")));
        }
        data.extend_from_slice(m.row(r));
    }
    EmbeddingMatrix::new(rows.len(), m.dim(), data)
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{random_matrix, rng};
    use tempfile::tempdir;

    #[test]
    fn emb_round_trip_is_bit_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.emb");
        let m = EmbeddingMatrix::from_rows(vec![
            vec![1.5, -2.25, 1.0e-17],
            vec![0.1 + 0.2, 4.0, -0.0],
        ])
        .unwrap();
        write_embeddings(&m, &path).unwrap();
        let back = read_embeddings(&path).unwrap();
        assert_eq!(m.data(), back.data());
        assert_eq!((m.rows(), m.dim()), (back.rows(), back.dim()));
    }

    #[test]
    fn emb_bad_magic_is_format_error() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.emb");
        let mut bytes = b"XXXX".to_vec();
        bytes.extend_from_slice(&[0u8, 1, 2, 3, 200, 220, 255]);
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(read_embeddings(&path), Err(Error::Format(_))));
    }

    #[test]
    fn emb_truncated_payload_is_corrupt() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("t.emb");
        let m = EmbeddingMatrix::from_rows(vec![vec![1.0, 2.0]]).unwrap();
        write_embeddings(&m, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(read_embeddings(&path), Err(Error::Corrupt(_))));
    }

    #[test]
    fn emb_nan_payload_is_invalid_data() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("n.emb");
        let mut out = Vec::new();
        out.extend_from_slice(EMB_MAGIC);
        out.extend_from_slice(&EMB_VERSION.to_le_bytes());
        out.push(DTYPE_F64);
        out.extend_from_slice(&1u64.to_le_bytes());
        out.extend_from_slice(&2u64.to_le_bytes());
        out.extend_from_slice(&1.0f64.to_le_bytes());
        out.extend_from_slice(&f64::NAN.to_le_bytes());
        std::fs::write(&path, out).unwrap();
        assert!(matches!(read_embeddings(&path), Err(Error::InvalidData(_))));
    }

    #[test]
    fn emb_csv_fallback_parses_same_matrix() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.csv");
        std::fs::write(&path, "1.5, -2.25, 3\n4,5.5,6\n").unwrap();
        let m = read_embeddings(&path).unwrap();
        assert_eq!(m.rows(), 2);
        assert_eq!(m.dim(), 3);
        assert_eq!(m.row(0), &[1.5, -2.25, 3.0]);
        assert_eq!(m.row(1), &[4.0, 5.5, 6.0]);
    }

    #[test]
    fn emb_f32_payload_widens() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("f32.emb");
        let m = EmbeddingMatrix::from_rows(vec![vec![1.5, -0.25], vec![2.0, 8.0]]).unwrap();
        write_embeddings_f32(&m, &path).unwrap();
        let back = read_embeddings(&path).unwrap();
        // Values representable in f32 survive exactly.
        assert_eq!(m.data(), back.data());
    }

    #[test]
    fn labels_round_trip_and_rejects_junk() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("labels.txt");
        write_labels(&[0, 2, 1, 2], &path).unwrap();
        assert_eq!(read_labels(&path).unwrap(), vec![0, 2, 1, 2]);
        std::fs::write(&path, "0\nx\n").unwrap();
        assert!(matches!(read_labels(&path), Err(Error::Format(_))));
    }

    #[test]
    fn score_csv_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let s = ScoreVector::new(vec![0.25, -1.5, 3.0], Polarity::LowerIsReliable).unwrap();
        write_score_csv(&s, &path).unwrap();
        let back = read_score_csv(&path).unwrap();
        assert_eq!(back.values(), s.values());
        assert_eq!(back.polarity(), s.polarity());
    }

    #[test]
    fn reli_csv_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let r = ReliabilityVector::new(vec![-0.5, 0.0], ReliabilityMetric::NegEntropy).unwrap();
        write_reli_csv(&r, &path).unwrap();
        let back = read_reli_csv(&path).unwrap();
        assert_eq!(back.values(), r.values());
        assert_eq!(back.metric(), r.metric());
    }

    #[test]
    fn model_blob_round_trips_all_kinds() {
        let dir = tempdir().unwrap();
        let g = GaussianMixture::new(2, vec![0.5, 0.5], vec![0.0, 1.0, 2.0, 3.0], vec![1.0; 4])
            .unwrap();
        let v = VmfMixture::new(2, vec![1.0], vec![0.6, 0.8], vec![3.0]).unwrap();
        let h = LinearHead::new(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], vec![0.5, -0.5], 2, 3, 4)
            .unwrap();
        for (name, blob) in [
            ("g.rrm", ModelBlob::Gaussian(g)),
            ("v.rrm", ModelBlob::Vmf(v)),
            ("h.rrm", ModelBlob::Head(h)),
        ] {
            let path = dir.path().join(name);
            write_model_blob(&blob, &path).unwrap();
            assert_eq!(read_model_blob(&path).unwrap(), blob);
        }
    }

    #[test]
    fn model_blob_bad_magic() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("x.rrm");
        std::fs::write(&path, b"NOPE123").unwrap();
        assert!(matches!(read_model_blob(&path), Err(Error::Format(_))));
    }

    #[test]
    fn config_file_overrides_and_rejects_unknown_keys() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "# comment\nk = 20\nmetric = cosine\nnormalize = true\n").unwrap();
        let map = parse_config_file(&path).unwrap();
        let mut cfg = RunConfig::default();
        cfg.apply_file(&map).unwrap();
        assert_eq!(cfg.k, 20);
        assert_eq!(cfg.metric, DistanceMetric::Cosine);
        assert!(cfg.normalize);

        std::fs::write(&path, "bogus_key = 1\n").unwrap();
        let map = parse_config_file(&path).unwrap();
        let mut cfg = RunConfig::default();
        assert!(matches!(cfg.apply_file(&map), Err(Error::Format(_))));
    }

    #[test]
    fn config_digest_tracks_content() {
        let a = RunConfig::default();
        let mut b = RunConfig::default();
        assert_eq!(a.digest(), b.digest());
        b.k = 7;
        assert_ne!(a.digest(), b.digest());
    }

    #[test]
    fn subsample_is_deterministic_and_sorted() {
        let a = subsample_indices(100, 10, 5).unwrap();
        let b = subsample_indices(100, 10, 5).unwrap();
        assert_eq!(a, b);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(a.len(), 10);
        assert!(subsample_indices(10, 10, 5).is_none());
        assert!(subsample_indices(10, 0, 5).is_none());
    }

    #[test]
    fn select_rows_extracts_subset() {
        let mut r = rng(7);
        let m = random_matrix(&mut r, 6, 3);
        let sub = select_rows(&m, &[1, 4]).unwrap();
        assert_eq!(sub.row(0), m.row(1));
        assert_eq!(sub.row(1), m.row(4));
    }
}
