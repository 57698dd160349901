//! Dense embedding matrices, ensembles, and distance metrics.
//!
//! An [`EmbeddingMatrix`] stores one representation per row in row-major
//! `f64`. An [`EnsembleEmbeddings`] aligns M such matrices (one reference and
//! one test matrix per ensemble member) over shared row indices: row `l` of
//! every reference matrix is the same underlying point, and likewise for test
//! rows. All scoring modules are built on these two types.

use crate::error::{Error, Result};

/// Norm threshold below which a vector is treated as zero.
///
/// Well below any meaningful embedding norm in 64-bit arithmetic.
pub const EPS_ZERO: f64 = 1e-12;

/// Distance metric used for neighbor queries and distance-based scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistanceMetric {
    /// `‖u − v‖₂`
    Euclidean,
    /// `1 − ⟨u,v⟩ / (‖u‖‖v‖)`, in `[0, 2]`.
    Cosine,
}

impl std::fmt::Display for DistanceMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DistanceMetric::Euclidean => write!(f, "euclidean"),
            DistanceMetric::Cosine => write!(f, "cosine"),
        }
    }
}

/// Row-major matrix of `rows` embeddings in `dim` dimensions.
///
/// Invariants enforced at construction: `rows ≥ 1`, `dim ≥ 1`,
/// `data.len() == rows * dim`, and every entry finite.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || dim == 0 {
            return Err(Error::InvalidData(format!(
                "embedding matrix must be non-empty, got {rows}x{dim}"
            )));
        }
        if data.len() != rows * dim {
            return Err(Error::Shape(format!(
                "data length {} does not match {rows}x{dim}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!(
                "non-finite value {} at flat index {pos}",
                data[pos]
            )));
        }
        Ok(Self { rows, dim, data })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Self::new(n, dim, rows.into_iter().flatten().collect())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Matrix with every row L2-normalized.
    ///
    /// Fails with [`Error::DegenerateVector`] if any row is (near-)zero.
    pub fn normalized(&self) -> Result<Self> {
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.iter_rows() {
            data.extend_from_slice(&l2_normalize(row)?);
        }
        Ok(Self { rows: self.rows, dim: self.dim, data })
    }

    /// Right-multiplies every row by a `dim x dim` matrix (row-major).
    pub fn transform(&self, square: &[f64]) -> Result<Self> {
        let d = self.dim;
        if square.len() != d * d {
            return Err(Error::Shape(format!(
                "transform must be {d}x{d}, got {} entries",
                square.len()
            )));
        }
        let mut data = vec![0.0; self.data.len()];
        for (out, row) in data.chunks_exact_mut(d).zip(self.iter_rows()) {
            for (i, &x) in row.iter().enumerate() {
                let qrow = &square[i * d..(i + 1) * d];
                for (o, &q) in out.iter_mut().zip(qrow) {
                    *o += x * q;
                }
            }
        }
        Ok(Self { rows: self.rows, dim: d, data })
    }
}

/// One ensemble member: a reference matrix and a test matrix that share `dim`.
#[derive(Debug, Clone)]
pub struct MemberPair {
    pub reference: EmbeddingMatrix,
    pub test: EmbeddingMatrix,
}

impl MemberPair {
    pub fn new(reference: EmbeddingMatrix, test: EmbeddingMatrix) -> Result<Self> {
        if reference.dim() != test.dim() {
            return Err(Error::Shape(format!(
                "reference dim {} != test dim {}",
                reference.dim(),
                test.dim()
            )));
        }
        Ok(Self { reference, test })
    }
}

/// M aligned (reference, test) matrix pairs over shared row indices.
#[derive(Debug, Clone)]
pub struct EnsembleEmbeddings {
    members: Vec<MemberPair>,
}

impl EnsembleEmbeddings {
    /// Builds an ensemble, checking that every member has identical
    /// `(rows, dim)` for each role. A single member is accepted here;
    /// consistency and variance scores reject `M < 2` at call time.
    pub fn new(members: Vec<MemberPair>) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::InvalidInput("ensemble needs at least one member".into()))?;
        let shape = (
            first.reference.rows(),
            first.test.rows(),
            first.reference.dim(),
        );
        for (i, m) in members.iter().enumerate() {
            let got = (m.reference.rows(), m.test.rows(), m.reference.dim());
            if got != shape {
                return Err(Error::Shape(format!(
                    "member {i} has shape (ref_rows, test_rows, dim) = {got:?}, expected {shape:?}"
                )));
            }
        }
        Ok(Self { members })
    }

    pub fn num_members(&self) -> usize {
        self.members.len()
    }

    pub fn members(&self) -> &[MemberPair] {
        &self.members
    }

    pub fn member(&self, i: usize) -> &MemberPair {
        &self.members[i]
    }

    pub fn ref_rows(&self) -> usize {
        self.members[0].reference.rows()
    }

    pub fn test_rows(&self) -> usize {
        self.members[0].test.rows()
    }

    pub fn dim(&self) -> usize {
        self.members[0].reference.dim()
    }

    /// Ensemble with every row of every matrix L2-normalized.
    pub fn normalized(&self) -> Result<Self> {
        let members = self
            .members
            .iter()
            .map(|m| {
                Ok(MemberPair {
                    reference: m.reference.normalized()?,
                    test: m.test.normalized()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { members })
    }

    /// Requires `M ≥ 2`; shared guard for consistency/variance scores.
    pub fn require_pairs(&self) -> Result<()> {
        if self.num_members() < 2 {
            return Err(Error::EnsembleTooSmall(self.num_members()));
        }
        Ok(())
    }
}

/// `‖v‖₂`. Rejects non-finite inputs.
pub fn l2_norm(v: &[f64]) -> Result<f64> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("non-finite entry in vector".into()));
    }
    Ok(norm2(v))
}

/// `v / ‖v‖₂`. Fails if the norm is below [`EPS_ZERO`].
pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let n = l2_norm(v)?;
    if n <= EPS_ZERO {
        return Err(Error::DegenerateVector { norm: n, threshold: EPS_ZERO });
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Distance between two vectors under the chosen metric.
///
/// Cosine distance is clamped to `[0, 2]` against floating-point overshoot
/// and fails on (near-)zero vectors.
pub fn distance(u: &[f64], v: &[f64], metric: DistanceMetric) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Shape(format!(
            "vector lengths differ: {} vs {}",
            u.len(),
            v.len()
        )));
    }
    match metric {
        DistanceMetric::Euclidean => Ok(euclidean(u, v)),
        DistanceMetric::Cosine => {
            let nu = norm2(u);
            let nv = norm2(v);
            if nu <= EPS_ZERO {
                return Err(Error::DegenerateVector { norm: nu, threshold: EPS_ZERO });
            }
            if nv <= EPS_ZERO {
                return Err(Error::DegenerateVector { norm: nv, threshold: EPS_ZERO });
            }
            Ok((1.0 - dot(u, v) / (nu * nv)).clamp(0.0, 2.0))
        }
    }
}

// Unchecked kernels for rows of already-validated matrices.

pub(crate) fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub(crate) fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub(crate) fn euclidean(u: &[f64], v: &[f64]) -> f64 {
    u.iter()
        .zip(v)
        .map(|(a, b)| {
            let d = a - b;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Squared Euclidean distance; avoids the sqrt where only comparisons or
/// variance accumulations are needed.
pub(crate) fn euclidean_sq(u: &[f64], v: &[f64]) -> f64 {
    u.iter()
        .zip(v)
        .map(|(a, b)| {
            let d = a - b;
            d * d
        })
        .sum()
}
