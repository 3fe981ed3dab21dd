//! Acquisition strategies: Image-level, Object-level and Region-level
//! (ReAL) selection, plus the greedy loop that drives each one against the
//! oracle until a split's budget is spent.

mod greedy;
mod region;
mod strategies;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::informativeness::{MethodKind, ScoreError};
use crate::oracle::OracleError;
use crate::scene::{CandidateId, CandidateObject, ImageId, SceneError};

pub use greedy::{run_split, QueryRecord, SplitContext, SplitOutcome};
pub use region::{build_region, region_score, select_region_level, Region, RegionQueue};
pub use strategies::{image_mean_scores, select_image_level, select_object_level, ObjectQueue};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SelectionError {
    #[error("{approach} cannot be paired with {method}; allowed pairs: {}", allowed_pairs_text())]
    InvalidPairing {
        approach: Approach,
        method: MethodKind,
    },
    #[error("no eligible candidates or images remain")]
    Exhausted,
    #[error("duplicate candidate id {0}")]
    DuplicateCandidate(CandidateId),
    #[error("unknown candidate id {0}")]
    UnknownCandidate(CandidateId),
    #[error("candidate refers to image {0}, which is not in the dataset")]
    UnknownImage(ImageId),
    #[error("{scores} scores supplied for {candidates} candidates")]
    ScoreCount { scores: usize, candidates: usize },
    #[error("invalid selection parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Scene(#[from] SceneError),
}

/// Granularity of an oracle query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Approach {
    /// Whole images, exhaustively labeled.
    #[serde(rename = "image")]
    ImageLevel,
    /// Single predicted boxes.
    #[serde(rename = "object")]
    ObjectLevel,
    /// Regions enclosing a query and its dissimilar neighbours.
    Real,
}

impl Approach {
    pub const ALL: [Approach; 3] = [Approach::ImageLevel, Approach::ObjectLevel, Approach::Real];

    pub fn name(&self) -> &'static str {
        match self {
            Approach::ImageLevel => "image",
            Approach::ObjectLevel => "object",
            Approach::Real => "real",
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Approach::ImageLevel => "Image-level",
            Approach::ObjectLevel => "Object-level",
            Approach::Real => "ReAL",
        }
    }

    /// Methods this approach accepts.
    pub fn allowed_methods(&self) -> &'static [MethodKind] {
        match self {
            Approach::ImageLevel => &[MethodKind::MaxEnt, MethodKind::Random],
            Approach::ObjectLevel => &[MethodKind::MaxEnt, MethodKind::ModelRand, MethodKind::Dmal],
            Approach::Real => &[MethodKind::MaxEnt, MethodKind::ModelRand, MethodKind::Dmal],
        }
    }
}

impl fmt::Display for Approach {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Approach {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "image" | "imagelevel" => Ok(Approach::ImageLevel),
            "object" | "objectlevel" => Ok(Approach::ObjectLevel),
            "real" | "region" | "regionlevel" => Ok(Approach::Real),
            other => Err(format!("unknown approach `{other}` (expected image, object or real)")),
        }
    }
}

fn allowed_pairs_text() -> String {
    Approach::ALL
        .iter()
        .map(|a| {
            let methods: Vec<_> = a.allowed_methods().iter().map(|m| m.name()).collect();
            format!("{} with {}", a.name(), methods.join("/"))
        })
        .collect::<Vec<_>>()
        .join("; ")
}

pub fn validate_pairing(approach: Approach, method: MethodKind) -> Result<(), SelectionError> {
    if approach.allowed_methods().contains(&method) {
        Ok(())
    } else {
        Err(SelectionError::InvalidPairing { approach, method })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionParams {
    /// Neighbours with cosine similarity strictly below this join a region.
    pub alpha: f64,
    /// Context-window multiplier and exponent.
    pub beta: f64,
    /// Budget per split: labels plus background queries.
    pub budget: u64,
    pub approach: Approach,
    pub method: MethodKind,
}

impl SelectionParams {
    pub fn validate(&self) -> Result<(), SelectionError> {
        validate_pairing(self.approach, self.method)?;
        // Anything above 1 admits every neighbour, so a little headroom past
        // the cosine range is meaningful.
        if !(-1.0..=2.0).contains(&self.alpha) {
            return Err(SelectionError::InvalidParameter(format!(
                "alpha {} outside [-1, 2]",
                self.alpha
            )));
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(SelectionError::InvalidParameter(format!(
                "beta must be positive, got {}",
                self.beta
            )));
        }
        if self.budget == 0 {
            return Err(SelectionError::InvalidParameter("budget must be at least 1".into()));
        }
        Ok(())
    }
}

/// Candidates of one split, indexed by id and by image.
#[derive(Debug, Clone)]
pub struct CandidateTable {
    items: Vec<CandidateObject>,
    by_id: HashMap<CandidateId, usize>,
    by_image: BTreeMap<ImageId, Vec<usize>>,
}

impl CandidateTable {
    pub fn new(items: Vec<CandidateObject>) -> Result<Self, SelectionError> {
        let mut by_id = HashMap::with_capacity(items.len());
        let mut by_image: BTreeMap<ImageId, Vec<usize>> = BTreeMap::new();
        for (i, c) in items.iter().enumerate() {
            if by_id.insert(c.id, i).is_some() {
                return Err(SelectionError::DuplicateCandidate(c.id));
            }
            by_image.entry(c.image_id).or_default().push(i);
        }
        for members in by_image.values_mut() {
            members.sort_by_key(|&i| items[i].id);
        }
        Ok(Self {
            items,
            by_id,
            by_image,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[CandidateObject] {
        &self.items
    }

    pub fn into_items(self) -> Vec<CandidateObject> {
        self.items
    }

    pub fn get(&self, id: CandidateId) -> Option<&CandidateObject> {
        self.by_id.get(&id).map(|&i| &self.items[i])
    }

    pub fn position(&self, id: CandidateId) -> Option<usize> {
        self.by_id.get(&id).copied()
    }

    /// Positions of the candidates in `image`, ascending by id.
    pub fn image_members(&self, image: ImageId) -> &[usize] {
        self.by_image.get(&image).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn images(&self) -> impl Iterator<Item = ImageId> + '_ {
        self.by_image.keys().copied()
    }

    pub fn consume(&mut self, position: usize) {
        self.items[position].consumed = true;
    }

    pub fn is_consumed(&self, position: usize) -> bool {
        self.items[position].consumed
    }

    pub fn unconsumed(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.items.len()).filter(|&i| !self.items[i].consumed)
    }
}

/// Orders scores so that higher wins and, on equal scores, the lower id
/// wins. `NaN` never wins.
pub(crate) fn better(score: f64, id: u64, best_score: f64, best_id: u64) -> bool {
    match score.total_cmp(&best_score) {
        std::cmp::Ordering::Greater => !score.is_nan(),
        std::cmp::Ordering::Equal => id < best_id,
        std::cmp::Ordering::Less => best_score.is_nan(),
    }
}
