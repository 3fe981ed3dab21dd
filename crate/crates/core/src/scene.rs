//! Dataset, candidate and label-state model.
//!
//! A [`SceneDataset`] is immutable ground truth. Everything that changes over
//! an experiment (which annotations are labeled, which images are fully
//! labeled) lives in [`PoolState`].

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use rand::seq::index;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Box, ImageExtent};
use crate::rng::{self, Domain};

/// Tolerance on `sum(class_probs) == 1`.
pub const SIMPLEX_TOLERANCE: f64 = 1e-6;

macro_rules! id_newtype {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub u64);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                self.0.fmt(f)
            }
        }
    };
}

id_newtype!(ImageId);
id_newtype!(
    /// Ground-truth annotation id.
    GtId
);
id_newtype!(CategoryId);
id_newtype!(
    /// Detector prediction id, unique within one split.
    CandidateId
);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SceneError {
    #[error("duplicate image id {0}")]
    DuplicateImage(ImageId),
    #[error("duplicate annotation id {0}")]
    DuplicateAnnotation(GtId),
    #[error("duplicate category id {0}")]
    DuplicateCategory(CategoryId),
    #[error("annotation {annotation} references missing image {image}")]
    MissingImage { annotation: GtId, image: ImageId },
    #[error("annotation {annotation} references missing category {category}")]
    MissingCategory {
        annotation: GtId,
        category: CategoryId,
    },
    #[error("annotation {0} has a box with nonpositive width or height")]
    DegenerateAnnotation(GtId),
    #[error("unknown annotation id {0}")]
    UnknownAnnotation(GtId),
    #[error("unknown image id {0}")]
    UnknownImage(ImageId),
    #[error("dataset has no annotations")]
    EmptyDataset,
    #[error("initial pool percent must lie in (0, 100], got {0}")]
    InvalidPercent(f64),
    #[error("initial pool cap must be at least 1")]
    InvalidCap,
    #[error("class probabilities sum to {sum}, outside 1 +/- {SIMPLEX_TOLERANCE}")]
    NotOnSimplex { sum: f64 },
    #[error("class probabilities contain a negative or non-finite entry")]
    InvalidProbability,
    #[error("feature vector is empty, zero or non-finite")]
    InvalidFeature,
    #[error("labeledness {0} outside [0, 1]")]
    InvalidLabeledness(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Category {
    pub id: CategoryId,
    pub name: String,
    /// Dataset-wide number of annotations of this category.
    pub instance_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthObject {
    pub id: GtId,
    pub image_id: ImageId,
    pub category_id: CategoryId,
    pub bbox: Box,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneImage {
    pub id: ImageId,
    pub extent: ImageExtent,
    /// Sorted ascending.
    pub gt_ids: Vec<GtId>,
}

/// Images, annotations and categories, each sorted by id.
///
/// Categories also have a dense index (their position in id order); class
/// probability vectors are laid out in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneDataset {
    images: Vec<SceneImage>,
    annotations: Vec<GroundTruthObject>,
    categories: Vec<Category>,
    image_index: HashMap<ImageId, usize>,
    annotation_index: HashMap<GtId, usize>,
    category_index: HashMap<CategoryId, usize>,
}

impl SceneDataset {
    /// Validates referential integrity and canonicalises ordering.
    ///
    /// `images[i].gt_ids` and `categories[i].instance_count` are recomputed
    /// from the annotations, so callers may leave them empty.
    pub fn new(
        mut images: Vec<SceneImage>,
        mut annotations: Vec<GroundTruthObject>,
        mut categories: Vec<Category>,
    ) -> Result<Self, SceneError> {
        images.sort_by_key(|i| i.id);
        annotations.sort_by_key(|a| a.id);
        categories.sort_by_key(|c| c.id);

        let mut image_index = HashMap::with_capacity(images.len());
        for (i, img) in images.iter_mut().enumerate() {
            if image_index.insert(img.id, i).is_some() {
                return Err(SceneError::DuplicateImage(img.id));
            }
            img.gt_ids.clear();
        }
        let mut category_index = HashMap::with_capacity(categories.len());
        for (i, cat) in categories.iter_mut().enumerate() {
            if category_index.insert(cat.id, i).is_some() {
                return Err(SceneError::DuplicateCategory(cat.id));
            }
            cat.instance_count = 0;
        }
        let mut annotation_index = HashMap::with_capacity(annotations.len());
        for (i, ann) in annotations.iter().enumerate() {
            if annotation_index.insert(ann.id, i).is_some() {
                return Err(SceneError::DuplicateAnnotation(ann.id));
            }
            let Some(&img) = image_index.get(&ann.image_id) else {
                return Err(SceneError::MissingImage {
                    annotation: ann.id,
                    image: ann.image_id,
                });
            };
            let Some(&cat) = category_index.get(&ann.category_id) else {
                return Err(SceneError::MissingCategory {
                    annotation: ann.id,
                    category: ann.category_id,
                });
            };
            if ann.bbox.width() <= 0.0 || ann.bbox.height() <= 0.0 {
                return Err(SceneError::DegenerateAnnotation(ann.id));
            }
            images[img].gt_ids.push(ann.id);
            categories[cat].instance_count += 1;
        }
        Ok(Self {
            images,
            annotations,
            categories,
            image_index,
            annotation_index,
            category_index,
        })
    }

    pub fn images(&self) -> &[SceneImage] {
        &self.images
    }

    pub fn annotations(&self) -> &[GroundTruthObject] {
        &self.annotations
    }

    pub fn categories(&self) -> &[Category] {
        &self.categories
    }

    pub fn num_categories(&self) -> usize {
        self.categories.len()
    }

    pub fn image(&self, id: ImageId) -> Option<&SceneImage> {
        self.image_index.get(&id).map(|&i| &self.images[i])
    }

    pub fn annotation(&self, id: GtId) -> Option<&GroundTruthObject> {
        self.annotation_index.get(&id).map(|&i| &self.annotations[i])
    }

    /// Position of a category in id order.
    pub fn category_index(&self, id: CategoryId) -> Option<usize> {
        self.category_index.get(&id).copied()
    }

    pub fn image_annotations<'a>(
        &'a self,
        image: &'a SceneImage,
    ) -> impl Iterator<Item = &'a GroundTruthObject> + 'a {
        image
            .gt_ids
            .iter()
            .map(move |id| &self.annotations[self.annotation_index[id]])
    }
}

/// A detector prediction treated as a potential query.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateObject {
    pub id: CandidateId,
    pub image_id: ImageId,
    pub bbox: Box,
    /// Probability per category, in dataset category order.
    pub class_probs: Vec<f64>,
    pub feature: Vec<f64>,
    /// Probability that the object is still unlabeled, when a score head is
    /// available.
    pub labeledness: Option<f64>,
    /// Set once an oracle interaction has resolved this candidate's area.
    pub consumed: bool,
}

impl CandidateObject {
    /// Validates the invariants and renormalises `class_probs` to sum to 1.
    pub fn new(
        id: CandidateId,
        image_id: ImageId,
        bbox: Box,
        mut class_probs: Vec<f64>,
        feature: Vec<f64>,
        labeledness: Option<f64>,
    ) -> Result<Self, SceneError> {
        normalize_simplex(&mut class_probs)?;
        if feature.is_empty()
            || feature.iter().any(|v| !v.is_finite())
            || feature.iter().all(|&v| v == 0.0)
        {
            return Err(SceneError::InvalidFeature);
        }
        if let Some(l) = labeledness {
            if !(0.0..=1.0).contains(&l) {
                return Err(SceneError::InvalidLabeledness(l));
            }
        }
        Ok(Self {
            id,
            image_id,
            bbox,
            class_probs,
            feature,
            labeledness,
            consumed: false,
        })
    }

    /// Index of the most probable category; ties go to the lowest index.
    pub fn argmax_class(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.class_probs.iter().enumerate() {
            if p > self.class_probs[best] {
                best = i;
            }
        }
        best
    }
}

/// Checks that `probs` lies on the simplex within [`SIMPLEX_TOLERANCE`] and
/// rescales it to sum to exactly one.
pub fn normalize_simplex(probs: &mut [f64]) -> Result<(), SceneError> {
    if probs.is_empty() || probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(SceneError::InvalidProbability);
    }
    let sum: f64 = probs.iter().sum();
    // Allow for the decimal representation of values like 1.000001.
    if (sum - 1.0).abs() > SIMPLEX_TOLERANCE + 1e-12 {
        return Err(SceneError::NotOnSimplex { sum });
    }
    probs.iter_mut().for_each(|p| *p /= sum);
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageStatus {
    Unlabeled,
    Partial,
    Full,
}

/// Label state: which annotations are labeled and how that partitions the
/// images.
///
/// An image is `Full` when it has annotations and all are labeled, or when
/// it has none and an exhaustive image query has confirmed that. Images
/// without annotations are otherwise `Unlabeled`: nothing distinguishes them
/// from an unseen image until someone looks.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolState {
    unlabeled_image_ids: BTreeSet<ImageId>,
    partial_image_ids: BTreeSet<ImageId>,
    full_image_ids: BTreeSet<ImageId>,
    labeled_gt_ids: BTreeSet<GtId>,
    verified_empty: BTreeSet<ImageId>,
    labeled_per_category: Vec<usize>,
}

impl PoolState {
    /// Everything unlabeled.
    pub fn new(dataset: &SceneDataset) -> Self {
        Self {
            unlabeled_image_ids: dataset.images().iter().map(|i| i.id).collect(),
            partial_image_ids: BTreeSet::new(),
            full_image_ids: BTreeSet::new(),
            labeled_gt_ids: BTreeSet::new(),
            verified_empty: BTreeSet::new(),
            labeled_per_category: vec![0; dataset.num_categories()],
        }
    }

    pub fn unlabeled_image_ids(&self) -> &BTreeSet<ImageId> {
        &self.unlabeled_image_ids
    }

    pub fn partial_image_ids(&self) -> &BTreeSet<ImageId> {
        &self.partial_image_ids
    }

    pub fn full_image_ids(&self) -> &BTreeSet<ImageId> {
        &self.full_image_ids
    }

    pub fn labeled_gt_ids(&self) -> &BTreeSet<GtId> {
        &self.labeled_gt_ids
    }

    pub fn is_labeled(&self, id: GtId) -> bool {
        self.labeled_gt_ids.contains(&id)
    }

    /// Labeled annotation counts in dataset category order.
    pub fn labeled_per_category(&self) -> &[usize] {
        &self.labeled_per_category
    }

    pub fn status(&self, image: ImageId) -> Option<ImageStatus> {
        if self.unlabeled_image_ids.contains(&image) {
            Some(ImageStatus::Unlabeled)
        } else if self.partial_image_ids.contains(&image) {
            Some(ImageStatus::Partial)
        } else if self.full_image_ids.contains(&image) {
            Some(ImageStatus::Full)
        } else {
            None
        }
    }

    /// Marks annotations as labeled and moves the touched images between
    /// partitions. Already-labeled ids are ignored. Nothing changes if any
    /// id is unknown.
    pub fn apply_labels<'a, I>(&mut self, gt_ids: I, dataset: &SceneDataset) -> Result<(), SceneError>
    where
        I: IntoIterator<Item = &'a GtId>,
    {
        let ids: Vec<GtId> = gt_ids.into_iter().copied().collect();
        let mut resolved = Vec::with_capacity(ids.len());
        for id in ids {
            let ann = dataset
                .annotation(id)
                .ok_or(SceneError::UnknownAnnotation(id))?;
            resolved.push(ann);
        }
        let mut touched = BTreeSet::new();
        for ann in resolved {
            if self.labeled_gt_ids.insert(ann.id) {
                let cat = dataset
                    .category_index(ann.category_id)
                    .expect("validated dataset");
                self.labeled_per_category[cat] += 1;
                touched.insert(ann.image_id);
            }
        }
        for image in touched {
            self.reclassify(image, dataset)?;
        }
        Ok(())
    }

    /// Records that an exhaustive query found no annotations in an image.
    pub fn mark_verified_empty(&mut self, image: ImageId, dataset: &SceneDataset) -> Result<(), SceneError> {
        let img = dataset.image(image).ok_or(SceneError::UnknownImage(image))?;
        if img.gt_ids.is_empty() {
            self.verified_empty.insert(image);
            self.reclassify(image, dataset)?;
        }
        Ok(())
    }

    fn classify(&self, image: &SceneImage) -> ImageStatus {
        if image.gt_ids.is_empty() {
            return if self.verified_empty.contains(&image.id) {
                ImageStatus::Full
            } else {
                ImageStatus::Unlabeled
            };
        }
        let labeled = image
            .gt_ids
            .iter()
            .filter(|id| self.labeled_gt_ids.contains(id))
            .count();
        if labeled == 0 {
            ImageStatus::Unlabeled
        } else if labeled == image.gt_ids.len() {
            ImageStatus::Full
        } else {
            ImageStatus::Partial
        }
    }

    fn reclassify(&mut self, image: ImageId, dataset: &SceneDataset) -> Result<(), SceneError> {
        let img = dataset.image(image).ok_or(SceneError::UnknownImage(image))?;
        let status = self.classify(img);
        self.unlabeled_image_ids.remove(&image);
        self.partial_image_ids.remove(&image);
        self.full_image_ids.remove(&image);
        match status {
            ImageStatus::Unlabeled => self.unlabeled_image_ids.insert(image),
            ImageStatus::Partial => self.partial_image_ids.insert(image),
            ImageStatus::Full => self.full_image_ids.insert(image),
        };
        Ok(())
    }

    /// Recomputes the partition from scratch and compares it with the
    /// incrementally maintained one.
    pub fn check_consistency(&self, dataset: &SceneDataset) -> Result<(), String> {
        let mut seen = 0usize;
        for img in dataset.images() {
            let expected = self.classify(img);
            let actual = self.status(img.id);
            if actual != Some(expected) {
                return Err(format!(
                    "image {} is {:?} but recount says {:?}",
                    img.id, actual, expected
                ));
            }
            seen += 1;
        }
        let total = self.unlabeled_image_ids.len() + self.partial_image_ids.len() + self.full_image_ids.len();
        if total != seen {
            return Err(format!("partition holds {total} images, dataset has {seen}"));
        }
        let mut per_cat = vec![0usize; dataset.num_categories()];
        for id in &self.labeled_gt_ids {
            let ann = dataset
                .annotation(*id)
                .ok_or_else(|| format!("labeled id {id} not in dataset"))?;
            per_cat[dataset.category_index(ann.category_id).unwrap()] += 1;
        }
        if per_cat != self.labeled_per_category {
            return Err("per-category labeled counts drifted".into());
        }
        Ok(())
    }
}

/// How the initial labeled pool is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialPoolConfig {
    /// Percent of each category's annotations to label, in (0, 100].
    pub percent: f64,
    /// Hard cap per category.
    pub cap: usize,
    /// Lift a zero target to one so every category starts with an exemplar.
    #[serde(default = "default_true")]
    pub floor_at_one: bool,
}

fn default_true() -> bool {
    true
}

impl Default for InitialPoolConfig {
    fn default() -> Self {
        Self {
            percent: 1.0,
            cap: 50,
            floor_at_one: true,
        }
    }
}

impl InitialPoolConfig {
    pub fn validate(&self) -> Result<(), SceneError> {
        if !(self.percent > 0.0 && self.percent <= 100.0) {
            return Err(SceneError::InvalidPercent(self.percent));
        }
        if self.cap == 0 {
            return Err(SceneError::InvalidCap);
        }
        Ok(())
    }

    /// Number of annotations labeled for a category with `instances`
    /// annotations: `min(max(round(p * n / 100), 1), k)`, rounding half up.
    pub fn target_count(&self, instances: usize) -> usize {
        if instances == 0 {
            return 0;
        }
        let mut n = (self.percent * instances as f64 / 100.0 + 0.5).floor() as usize;
        if self.floor_at_one {
            n = n.max(1);
        }
        n.min(self.cap).min(instances)
    }
}

/// Labels a per-category uniform sample of annotations.
pub fn sample_initial_pool(
    dataset: &SceneDataset,
    config: &InitialPoolConfig,
    seed: u64,
) -> Result<PoolState, SceneError> {
    config.validate()?;
    if dataset.annotations().is_empty() {
        return Err(SceneError::EmptyDataset);
    }
    let mut by_category: Vec<Vec<GtId>> = vec![Vec::new(); dataset.num_categories()];
    for ann in dataset.annotations() {
        by_category[dataset.category_index(ann.category_id).unwrap()].push(ann.id);
    }
    let mut chosen = Vec::new();
    for (cat, ids) in dataset.categories().iter().zip(&by_category) {
        let target = config.target_count(ids.len());
        let mut rng = rng::substream(seed, Domain::InitialPool, &[cat.id.0]);
        chosen.extend(index::sample(&mut rng, ids.len(), target).iter().map(|i| ids[i]));
    }
    let mut pool = PoolState::new(dataset);
    pool.apply_labels(&chosen, dataset)?;
    Ok(pool)
}
