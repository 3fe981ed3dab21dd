//! Informativeness scores over candidates and the feature similarity used
//! to build and score regions.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{self, Domain};
use crate::scene::{CandidateId, CandidateObject, SIMPLEX_TOLERANCE};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScoreError {
    #[error("probability vector is not on the simplex (sum {sum})")]
    NotOnSimplex { sum: f64 },
    #[error("feature vectors have different dimensions ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("zero or non-finite feature vector")]
    ZeroFeature,
    #[error("candidate {0} has no labeledness score; DMAL needs a score file or synthesized scores")]
    MissingLabeledness(CandidateId),
    #[error("method random has no per-object score; it only selects whole images")]
    NoObjectScore,
}

/// Acquisition method: how candidates are scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodKind {
    /// Highest class-probability entropy.
    MaxEnt,
    /// Uniform random score over detector outputs.
    ModelRand,
    /// Model-free uniform choice of whole images.
    Random,
    /// Labeledness plus normalised entropy.
    Dmal,
}

impl MethodKind {
    pub const ALL: [MethodKind; 4] = [
        MethodKind::MaxEnt,
        MethodKind::ModelRand,
        MethodKind::Random,
        MethodKind::Dmal,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            MethodKind::MaxEnt => "maxent",
            MethodKind::ModelRand => "modelrand",
            MethodKind::Random => "random",
            MethodKind::Dmal => "dmal",
        }
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MethodKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "maxent" | "entropy" => Ok(MethodKind::MaxEnt),
            "modelrand" => Ok(MethodKind::ModelRand),
            "random" => Ok(MethodKind::Random),
            "dmal" => Ok(MethodKind::Dmal),
            other => Err(format!(
                "unknown method `{other}` (expected maxent, modelrand, random or dmal)"
            )),
        }
    }
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(probs: &[f64]) -> Result<f64, ScoreError> {
    let sum: f64 = probs.iter().sum();
    if probs.is_empty()
        || probs.iter().any(|p| !p.is_finite() || *p < 0.0)
        || (sum - 1.0).abs() > SIMPLEX_TOLERANCE + 1e-12
    {
        return Err(ScoreError::NotOnSimplex { sum });
    }
    let h: f64 = probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum();
    Ok(h.max(0.0))
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, ScoreError> {
    if a.len() != b.len() {
        return Err(ScoreError::DimensionMismatch(a.len(), b.len()));
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if !(na > 0.0 && nb > 0.0) || !dot.is_finite() {
        return Err(ScoreError::ZeroFeature);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// Entropy divided by `ln C`, so it lies in `[0, 1]`. Zero for one class.
pub fn normalized_entropy(probs: &[f64]) -> Result<f64, ScoreError> {
    let h = entropy(probs)?;
    let max = (probs.len() as f64).ln();
    Ok(if max > 0.0 { h / max } else { 0.0 })
}

/// Scores one candidate. `rng` is only drawn from for [`MethodKind::ModelRand`].
pub fn score<R: Rng + ?Sized>(
    candidate: &CandidateObject,
    method: MethodKind,
    rng: &mut R,
) -> Result<f64, ScoreError> {
    match method {
        MethodKind::MaxEnt => entropy(&candidate.class_probs),
        MethodKind::Dmal => {
            let l = candidate
                .labeledness
                .ok_or(ScoreError::MissingLabeledness(candidate.id))?;
            Ok(l + normalized_entropy(&candidate.class_probs)?)
        }
        MethodKind::ModelRand => Ok(rng.random::<f64>()),
        MethodKind::Random => Err(ScoreError::NoObjectScore),
    }
}

/// Scores every candidate. ModelRand draws come from a substream keyed by
/// `(seed, split, candidate id)`, so the result does not depend on order.
pub fn score_all(
    candidates: &[CandidateObject],
    method: MethodKind,
    seed: u64,
    split: u64,
) -> Result<Vec<f64>, ScoreError> {
    candidates
        .iter()
        .map(|c| {
            let mut r = rng::substream(seed, Domain::ModelRandScore, &[split, c.id.0]);
            score(c, method, &mut r)
        })
        .collect()
}
