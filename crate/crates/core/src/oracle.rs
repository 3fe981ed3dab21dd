//! Simulated oracle and the budget ledger.
//!
//! The oracle is perfect: it answers from ground truth and only ever returns
//! annotations that are not yet labeled. Every interaction is charged to a
//! [`BudgetLedger`], including object and region queries that come back
//! empty.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{coverage_fraction, iou, Box};
use crate::scene::{CategoryId, GtId, ImageId, ImageStatus, PoolState, SceneDataset, SceneImage};

/// Minimum IoU between an object query and the returned annotation.
pub const OBJECT_IOU_THRESHOLD: f64 = 0.25;
/// Minimum fraction of an annotation a region query must cover.
pub const REGION_COVERAGE_THRESHOLD: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("image {0} is already fully labeled")]
    ImageFullyLabeled(ImageId),
    #[error("ledger is already complete")]
    LedgerComplete,
    #[error("annotation {0} returned twice")]
    DuplicateLabel(GtId),
    #[error("annotation {0} not in dataset")]
    UnknownAnnotation(GtId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryKind {
    Image,
    Object,
    Region,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResponse {
    pub query_kind: QueryKind,
    pub image_id: ImageId,
    pub query_box: Box,
    /// Newly labeled annotations, ascending.
    pub returned_gt_ids: Vec<GtId>,
    /// Area the labeler inspected, in pixels squared.
    pub query_area: f64,
    pub budget_consumed: u64,
}

impl OracleResponse {
    fn new(kind: QueryKind, image: &SceneImage, query_box: Box, mut ids: Vec<GtId>, empty_charge: u64) -> Self {
        ids.sort_unstable();
        let budget_consumed = if ids.is_empty() {
            empty_charge
        } else {
            ids.len() as u64
        };
        Self {
            query_kind: kind,
            image_id: image.id,
            query_box,
            query_area: query_box.area(),
            returned_gt_ids: ids,
            budget_consumed,
        }
    }

    pub fn is_background(&self) -> bool {
        self.returned_gt_ids.is_empty()
    }
}

/// Returns the single unlabeled annotation with the highest IoU against
/// `query_box`, if it reaches [`OBJECT_IOU_THRESHOLD`]. The query's
/// predicted category plays no part. IoU ties go to the lowest id.
pub fn oracle_object_query(
    query_box: &Box,
    image: &SceneImage,
    dataset: &SceneDataset,
    pool: &PoolState,
) -> OracleResponse {
    let mut best: Option<(f64, GtId)> = None;
    for gt in dataset.image_annotations(image) {
        if pool.is_labeled(gt.id) {
            continue;
        }
        let overlap = iou(query_box, &gt.bbox);
        if overlap >= OBJECT_IOU_THRESHOLD && best.is_none_or(|(b, _)| overlap > b) {
            best = Some((overlap, gt.id));
        }
    }
    OracleResponse::new(
        QueryKind::Object,
        image,
        *query_box,
        best.map(|(_, id)| id).into_iter().collect(),
        1,
    )
}

/// Returns every unlabeled annotation at least
/// [`REGION_COVERAGE_THRESHOLD`] covered by `bounds`.
pub fn oracle_region_query(
    bounds: &Box,
    image: &SceneImage,
    dataset: &SceneDataset,
    pool: &PoolState,
) -> OracleResponse {
    let ids = dataset
        .image_annotations(image)
        .filter(|gt| !pool.is_labeled(gt.id))
        .filter(|gt| {
            coverage_fraction(&gt.bbox, bounds).expect("validated annotation")
                >= REGION_COVERAGE_THRESHOLD
        })
        .map(|gt| gt.id)
        .collect();
    OracleResponse::new(QueryKind::Region, image, *bounds, ids, 1)
}

/// Exhaustively labels an image. An image with nothing left to label costs
/// `empty_charge`.
pub fn oracle_image_query(
    image: &SceneImage,
    dataset: &SceneDataset,
    pool: &PoolState,
    empty_charge: u64,
) -> Result<OracleResponse, OracleError> {
    if pool.status(image.id) == Some(ImageStatus::Full) {
        return Err(OracleError::ImageFullyLabeled(image.id));
    }
    let ids = dataset
        .image_annotations(image)
        .filter(|gt| !pool.is_labeled(gt.id))
        .map(|gt| gt.id)
        .collect();
    Ok(OracleResponse::new(
        QueryKind::Image,
        image,
        image.extent.as_box(),
        ids,
        empty_charge,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChargeStatus {
    Open,
    /// Budget reached or exceeded; the split is over.
    Complete,
}

/// Append-only record of oracle interactions for one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetLedger {
    pub budget: u64,
    pub labels_applied: u64,
    pub background_queries: u64,
    pub interactions: Vec<OracleResponse>,
    pub per_category_labels: BTreeMap<CategoryId, u64>,
    #[serde(skip)]
    seen: BTreeSet<GtId>,
}

impl BudgetLedger {
    pub fn new(budget: u64) -> Self {
        Self {
            budget,
            labels_applied: 0,
            background_queries: 0,
            interactions: Vec::new(),
            per_category_labels: BTreeMap::new(),
            seen: BTreeSet::new(),
        }
    }

    pub fn spent(&self) -> u64 {
        self.labels_applied + self.background_queries
    }

    pub fn is_complete(&self) -> bool {
        self.spent() >= self.budget
    }

    /// Records a response. A multi-label response that crosses the budget
    /// is kept whole; the ledger then reports [`ChargeStatus::Complete`].
    pub fn charge(
        &mut self,
        response: OracleResponse,
        dataset: &SceneDataset,
    ) -> Result<ChargeStatus, OracleError> {
        if self.is_complete() {
            return Err(OracleError::LedgerComplete);
        }
        let mut cats = Vec::with_capacity(response.returned_gt_ids.len());
        for id in &response.returned_gt_ids {
            if self.seen.contains(id) {
                return Err(OracleError::DuplicateLabel(*id));
            }
            let ann = dataset
                .annotation(*id)
                .ok_or(OracleError::UnknownAnnotation(*id))?;
            cats.push(ann.category_id);
        }
        for cat in cats {
            *self.per_category_labels.entry(cat).or_insert(0) += 1;
        }
        self.seen.extend(response.returned_gt_ids.iter().copied());
        let labels = response.returned_gt_ids.len() as u64;
        self.labels_applied += labels;
        self.background_queries += response.budget_consumed - labels.min(response.budget_consumed);
        self.interactions.push(response);
        Ok(if self.is_complete() {
            ChargeStatus::Complete
        } else {
            ChargeStatus::Open
        })
    }

    /// `labels_applied + background_queries` equals the sum of per-interaction
    /// charges, and the category tallies add up.
    pub fn is_conserved(&self) -> bool {
        let charged: u64 = self.interactions.iter().map(|r| r.budget_consumed).sum();
        let per_cat: u64 = self.per_category_labels.values().sum();
        charged == self.spent() && per_cat == self.labels_applied
    }
}
