//! Deterministic task-text encoder.
//!
//! Text is split on whitespace and lowercased. Each token is hashed with
//! 64-bit FNV-1a; the hash modulo `dim` picks the bucket and bit 63 picks the
//! sign (+1 when clear). The signed counts are L2-normalized. A text whose
//! counts cancel to zero maps to the first basis vector.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_DIM: usize = 64;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    fnv1a64_extend(FNV_OFFSET, bytes)
}

/// Continues an FNV-1a hash from `state`.
pub fn fnv1a64_extend(mut state: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        state ^= u64::from(b);
        state = state.wrapping_mul(FNV_PRIME);
    }
    state
}

/// Unit-norm task embedding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaskEmbedding {
    values: Vec<f64>,
}

impl TaskEmbedding {
    /// Wraps raw values, normalizing them. Fails on a zero or non-finite vector.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if values.is_empty() || !norm.is_finite() || norm == 0.0 {
            return Err(Error::InvalidConfig("embedding must be a finite non-zero vector".into()));
        }
        Ok(Self {
            values: values.into_iter().map(|v| v / norm).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Locality-sensitive bucket used as the policy's task feature: the sign
    /// pattern of `ceil(log2 n)` fixed pseudo-random projections, reduced
    /// modulo `n`. Texts with similar embeddings tend to share a bucket.
    pub fn bucket(&self, n_buckets: usize) -> usize {
        if n_buckets <= 1 {
            return 0;
        }
        let bits = usize::BITS - (n_buckets - 1).leading_zeros();
        let mut code = 0usize;
        for b in 0..bits {
            let mut proj = 0.0;
            for (i, v) in self.values.iter().enumerate() {
                proj += v * hyperplane(b as u64, i as u64);
            }
            code = (code << 1) | usize::from(proj >= 0.0);
        }
        code % n_buckets
    }
}

/// SplitMix64 finalizer.
pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Component `i` of projection `b`, uniform in [-1, 1).
// Plain FNV over `i` is affine in `i` for small indices, which makes sums
// like h(12) + h(47) - h(19) - h(24) cancel exactly; the finalizer breaks that.
fn hyperplane(b: u64, i: u64) -> f64 {
    let h = splitmix64(fnv1a64_extend(fnv1a64(&b.to_le_bytes()), &i.to_le_bytes()));
    (h >> 11) as f64 / (1u64 << 52) as f64 - 1.0
}

pub fn encode(text: &str, dim: usize) -> Result<TaskEmbedding> {
    if text.trim().is_empty() {
        return Err(Error::EmptyTaskText);
    }
    if dim == 0 {
        return Err(Error::InvalidConfig("embedding dimension must be positive".into()));
    }
    let mut raw = vec![0.0f64; dim];
    for token in text.split_whitespace() {
        let h = fnv1a64(token.to_lowercase().as_bytes());
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        raw[(h % dim as u64) as usize] += sign;
    }
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        raw[0] = 1.0;
        return Ok(TaskEmbedding { values: raw });
    }
    Ok(TaskEmbedding {
        values: raw.into_iter().map(|v| v / norm).collect(),
    })
}

/// Cosine similarity of two unit vectors, clamped to [-1, 1].
pub fn cosine(a: &TaskEmbedding, b: &TaskEmbedding) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(a.dim(), b.dim()));
    }
    Ok(dot(&a.values, &b.values).clamp(-1.0, 1.0))
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
