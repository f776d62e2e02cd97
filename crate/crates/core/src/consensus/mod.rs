//! Fusion of the per-model verdicts for a task: rating selection, the
//! ordinal consensus statistic and motivation similarity over embeddings.

mod embedding;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm_gateway::ModelVerdict;

pub use embedding::{EmbedError, EmbeddingClient, HashingEmbedder};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConsensusError {
    #[error("rating {rating} outside scale [{min}, {max}]")]
    OutOfScale { rating: i64, min: i64, max: i64 },
    #[error("need at least 2 ratings, got {0}")]
    TooFewRatings(usize),
    #[error("invalid rating scale: min {min} must be below max {max}")]
    InvalidScale { min: i64, max: i64 },
    #[error("deviation {deviation} reaches scale width {width}")]
    InvariantViolation { deviation: f64, width: f64 },
    #[error("need at least 2 embeddings, got {0}")]
    TooFewEmbeddings(usize),
    #[error("embedding dimensions differ ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("embedding centroid is zero; similarity undefined")]
    ZeroCentroid,
    #[error("cannot normalize a zero or non-finite vector")]
    DegenerateVector,
}

/// Ordinal rating scale. The width `max - min` is the normalizing distance in
/// the consensus statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingScale {
    pub min: i64,
    pub max: i64,
}

impl Default for RatingScale {
    fn default() -> Self {
        Self { min: 1, max: 5 }
    }
}

impl RatingScale {
    pub fn new(min: i64, max: i64) -> Result<Self, ConsensusError> {
        if max <= min {
            return Err(ConsensusError::InvalidScale { min, max });
        }
        Ok(Self { min, max })
    }

    pub fn width(&self) -> i64 {
        self.max - self.min
    }

    pub fn contains(&self, rating: i64) -> bool {
        (self.min..=self.max).contains(&rating)
    }

    fn check(&self, ratings: &[i64]) -> Result<(), ConsensusError> {
        if ratings.len() < 2 {
            return Err(ConsensusError::TooFewRatings(ratings.len()));
        }
        match ratings.iter().find(|r| !self.contains(**r)) {
            Some(&rating) => Err(ConsensusError::OutOfScale {
                rating,
                min: self.min,
                max: self.max,
            }),
            None => Ok(()),
        }
    }
}

/// Picks the most frequent rating; when there is no unique mode the lowest
/// among the most frequent wins. With all ratings distinct this is the minimum.
pub fn select_rating(ratings: &[i64], scale: RatingScale) -> Result<i64, ConsensusError> {
    scale.check(ratings)?;
    let counts = frequencies(ratings);
    let best = counts.iter().map(|(_, c)| *c).max().unwrap_or(0);
    // `counts` is sorted ascending by value, so the first hit is the lowest.
    Ok(counts
        .iter()
        .find(|(_, c)| *c == best)
        .map(|(v, _)| *v)
        .expect("non-empty ratings"))
}

/// Distinct values with their counts, sorted by value.
fn frequencies(ratings: &[i64]) -> Vec<(i64, usize)> {
    let mut sorted = ratings.to_vec();
    sorted.sort_unstable();
    let mut out: Vec<(i64, usize)> = Vec::new();
    for r in sorted {
        match out.last_mut() {
            Some((v, c)) if *v == r => *c += 1,
            _ => out.push((r, 1)),
        }
    }
    out
}

/// Consensus over ordinal ratings:
/// `1 + Σ p_k · log2(1 − |LV_k − μ| / d)`, where `p_k` are the relative
/// frequencies of the distinct values `LV_k`, `μ` their p-weighted mean and
/// `d` the scale width (override with `width`).
pub fn consensus_metric(ratings: &[i64], scale: RatingScale, width: Option<f64>) -> Result<f64, ConsensusError> {
    scale.check(ratings)?;
    let d = width.unwrap_or(scale.width() as f64);
    let n = ratings.len() as f64;
    let freqs: Vec<(f64, f64)> = frequencies(ratings)
        .into_iter()
        .map(|(v, c)| (v as f64, c as f64 / n))
        .collect();
    let mean: f64 = freqs.iter().map(|(v, p)| v * p).sum();
    let mut acc = 0.0;
    for (v, p) in &freqs {
        let deviation = (v - mean).abs();
        if deviation >= d {
            return Err(ConsensusError::InvariantViolation { deviation, width: d });
        }
        acc += p * (1.0 - deviation / d).log2();
    }
    Ok(1.0 + acc)
}

/// Unit-length embedding of a text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
    /// Norm of the vector as returned by the endpoint, before normalization.
    norm: f64,
}

impl EmbeddingVector {
    pub fn from_raw(raw: Vec<f64>) -> Result<Self, ConsensusError> {
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return Err(ConsensusError::DegenerateVector);
        }
        Ok(Self {
            values: raw.into_iter().map(|v| v / norm).collect(),
            norm,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityVariant {
    /// Mean cosine between each embedding and the centroid.
    #[default]
    Centroid,
    /// Mean cosine over all unordered pairs.
    Pairwise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityResult {
    pub similarity: f64,
    pub embedding_model_id: String,
}

fn check_embeddings(embeddings: &[EmbeddingVector]) -> Result<usize, ConsensusError> {
    if embeddings.len() < 2 {
        return Err(ConsensusError::TooFewEmbeddings(embeddings.len()));
    }
    let dim = embeddings[0].dim();
    if let Some(e) = embeddings.iter().find(|e| e.dim() != dim) {
        return Err(ConsensusError::DimensionMismatch(dim, e.dim()));
    }
    Ok(dim)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn centroid_similarity(embeddings: &[EmbeddingVector]) -> Result<f64, ConsensusError> {
    let dim = check_embeddings(embeddings)?;
    let k = embeddings.len() as f64;
    let mut centroid = vec![0.0; dim];
    for e in embeddings {
        for (c, v) in centroid.iter_mut().zip(e.values()) {
            *c += v / k;
        }
    }
    let norm = dot(&centroid, &centroid).sqrt();
    // Opposed inputs can leave rounding noise instead of an exact zero.
    if norm <= 1e-12 {
        return Err(ConsensusError::ZeroCentroid);
    }
    let total: f64 = embeddings.iter().map(|e| dot(e.values(), &centroid) / norm).sum();
    Ok((total / k).min(1.0))
}

pub fn pairwise_similarity(embeddings: &[EmbeddingVector]) -> Result<f64, ConsensusError> {
    check_embeddings(embeddings)?;
    let mut total = 0.0;
    let mut pairs = 0usize;
    for (i, a) in embeddings.iter().enumerate() {
        for b in &embeddings[i + 1..] {
            total += dot(a.values(), b.values());
            pairs += 1;
        }
    }
    Ok((total / pairs as f64).min(1.0))
}

pub fn similarity(embeddings: &[EmbeddingVector], variant: SimilarityVariant) -> Result<f64, ConsensusError> {
    match variant {
        SimilarityVariant::Centroid => centroid_similarity(embeddings),
        SimilarityVariant::Pairwise => pairwise_similarity(embeddings),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusResult {
    pub selected_rating: i64,
    pub consensus: f64,
    pub used_ratings: Vec<i64>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ConsensusOptions {
    pub scale: RatingScale,
    pub width_override: Option<f64>,
    pub similarity: SimilarityVariant,
}

pub fn consensus_result(ratings: &[i64], opts: &ConsensusOptions) -> Result<ConsensusResult, ConsensusError> {
    Ok(ConsensusResult {
        selected_rating: select_rating(ratings, opts.scale)?,
        consensus: consensus_metric(ratings, opts.scale, opts.width_override)?,
        used_ratings: ratings.to_vec(),
    })
}

/// Ensemble outcome for one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskAssessment {
    pub te: i64,
    pub consensus: f64,
    pub similarity: Option<SimilarityResult>,
    /// Slot per configured model, `None` where the model gave no usable verdict.
    pub verdicts: Vec<Option<ModelVerdict>>,
}

/// Fuses the usable verdicts of a task. `embeddings` are the motivation
/// embeddings of the usable verdicts in slot order, or `None` when embedding
/// failed; similarity is then absent while the consensus is still computed.
pub fn fuse(
    verdicts: Vec<Option<ModelVerdict>>,
    embeddings: Option<(&[EmbeddingVector], &str)>,
    opts: &ConsensusOptions,
) -> Result<TaskAssessment, ConsensusError> {
    let ratings: Vec<i64> = verdicts.iter().flatten().map(|v| v.rating).collect();
    let result = consensus_result(&ratings, opts)?;
    let similarity = match embeddings {
        Some((vectors, model)) => match similarity(vectors, opts.similarity) {
            Ok(s) => Some(SimilarityResult {
                similarity: s,
                embedding_model_id: model.to_string(),
            }),
            Err(e) => {
                tracing::warn!("similarity unavailable: {e}");
                None
            }
        },
        None => None,
    };
    Ok(TaskAssessment {
        te: result.selected_rating,
        consensus: result.consensus,
        similarity,
        verdicts,
    })
}
