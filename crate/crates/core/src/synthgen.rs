//! Synthetic long-tail scenes and a noise-model detector standing in for a
//! trained network.

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{iou, Box, ImageExtent};
use crate::rng::{self, Domain};
use crate::scene::{
    CandidateId, CandidateObject, Category, CategoryId, GroundTruthObject, GtId, ImageId, ImageStatus, PoolState,
    SceneDataset, SceneError, SceneImage,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("invalid synthetic configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid detector configuration: {0}")]
    InvalidDetector(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
}

fn bad(msg: impl Into<String>) -> SynthError {
    SynthError::InvalidConfig(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n_images: usize,
    /// Side length of the square images, in pixels.
    pub image_size: f64,
    pub n_categories: usize,
    /// Category `r` (0-based rank) has weight `(r + 1)^-zipf_exponent`.
    pub zipf_exponent: f64,
    /// Mean objects per image.
    pub clutter_mean: f64,
    /// Negative-binomial shape; smaller means heavier clutter tails.
    pub clutter_dispersion: f64,
    /// Box side lengths as fractions of `image_size`.
    pub box_scale_range: (f64, f64),
    pub feature_dim: usize,
    /// Norm of the isotropic noise added to prototype features.
    pub prototype_noise_sigma: f64,
    pub seed: u64,
}

impl SynthConfig {
    /// Satellite-tile regime: many small objects, steep long tail, heavy
    /// clutter tail.
    pub fn xview_like(seed: u64) -> Self {
        Self {
            n_images: 4000,
            image_size: 512.0,
            n_categories: 35,
            zipf_exponent: 2.0,
            clutter_mean: 20.6,
            clutter_dispersion: 0.6,
            box_scale_range: (0.02, 0.08),
            feature_dim: 64,
            prototype_noise_sigma: 0.35,
            seed,
        }
    }

    /// Curated-benchmark regime: fewer, larger objects and a mild tail.
    pub fn coco_like(seed: u64) -> Self {
        Self {
            n_images: 4000,
            image_size: 640.0,
            n_categories: 35,
            zipf_exponent: 0.5,
            clutter_mean: 7.7,
            clutter_dispersion: 3.0,
            box_scale_range: (0.08, 0.3),
            feature_dim: 64,
            prototype_noise_sigma: 0.35,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n_images == 0 {
            return Err(bad("n_images must be at least 1"));
        }
        if !(self.image_size.is_finite() && self.image_size >= 1.0) {
            return Err(bad(format!("image_size must be at least 1 pixel, got {}", self.image_size)));
        }
        if self.n_categories == 0 {
            return Err(bad("n_categories must be at least 1"));
        }
        if !(self.zipf_exponent.is_finite() && self.zipf_exponent >= 0.0) {
            return Err(bad(format!("zipf_exponent must be >= 0, got {}", self.zipf_exponent)));
        }
        if !(self.clutter_mean.is_finite() && self.clutter_mean > 0.0) {
            return Err(bad(format!("clutter_mean must be > 0, got {}", self.clutter_mean)));
        }
        if !(self.clutter_dispersion.is_finite() && self.clutter_dispersion > 0.0) {
            return Err(bad(format!("clutter_dispersion must be > 0, got {}", self.clutter_dispersion)));
        }
        let (lo, hi) = self.box_scale_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(bad(format!("box_scale_range ({lo}, {hi}) must satisfy 0 < min <= max <= 1")));
        }
        if self.feature_dim < self.n_categories + 1 {
            return Err(bad(format!(
                "feature_dim {} too small for {} category prototypes plus background",
                self.feature_dim, self.n_categories
            )));
        }
        if !(self.prototype_noise_sigma.is_finite() && self.prototype_noise_sigma >= 0.0) {
            return Err(bad("prototype_noise_sigma must be >= 0"));
        }
        // Overlap is allowed, but an expected box area beyond the whole
        // image cannot be what anyone meant.
        let mean_side = 0.5 * (lo + hi);
        let fill = self.clutter_mean * mean_side * mean_side;
        if fill > 1.0 {
            return Err(bad(format!(
                "expected boxes cover {:.0}% of each image; lower clutter_mean or box_scale_range",
                fill * 100.0
            )));
        }
        Ok(())
    }

    /// Normalised Zipf category probabilities, most common first.
    pub fn category_probabilities(&self) -> Vec<f64> {
        let w: Vec<f64> = (1..=self.n_categories)
            .map(|r| (r as f64).powf(-self.zipf_exponent))
            .collect();
        let total: f64 = w.iter().sum();
        w.into_iter().map(|x| x / total).collect()
    }
}

/// Draws a dataset. Category `i` has id `i`, image `i` has id `i`, and
/// annotation ids run in image order.
pub fn generate_dataset(cfg: &SynthConfig) -> Result<SceneDataset, SynthError> {
    cfg.validate()?;
    let extent = ImageExtent::new(cfg.image_size, cfg.image_size).expect("validated size");
    let cat_dist = WeightedIndex::new(cfg.category_probabilities()).expect("positive weights");
    let gamma = Gamma::new(cfg.clutter_dispersion, cfg.clutter_mean / cfg.clutter_dispersion)
        .map_err(|e| bad(e.to_string()))?;
    let (lo, hi) = cfg.box_scale_range;

    let mut images = Vec::with_capacity(cfg.n_images);
    let mut annotations = Vec::new();
    let mut next_gt = 0u64;
    for i in 0..cfg.n_images as u64 {
        let mut r = rng::substream(cfg.seed, Domain::ImageLayout, &[i]);
        let lambda = gamma.sample(&mut r);
        let count = poisson(&mut r, lambda);
        for _ in 0..count {
            let category = cat_dist.sample(&mut r) as u64;
            let w = snap(r.random_range(lo..=hi) * cfg.image_size).max(GRID);
            let h = snap(r.random_range(lo..=hi) * cfg.image_size).max(GRID);
            let x = snap(r.random_range(0.0..=cfg.image_size - w));
            let y = snap(r.random_range(0.0..=cfg.image_size - h));
            annotations.push(GroundTruthObject {
                id: GtId(next_gt),
                image_id: ImageId(i),
                category_id: CategoryId(category),
                bbox: Box::new(x, y, x + w, y + h).expect("positive size"),
            });
            next_gt += 1;
        }
        images.push(SceneImage {
            id: ImageId(i),
            extent,
            gt_ids: Vec::new(),
        });
    }
    let categories = (0..cfg.n_categories as u64)
        .map(|c| Category {
            id: CategoryId(c),
            name: format!("category_{c:02}"),
            instance_count: 0,
        })
        .collect();
    Ok(SceneDataset::new(images, annotations, categories)?)
}

// Coordinates sit on a 1/256 pixel grid so that converting to and from
// `[x, y, width, height]` is exact.
const GRID: f64 = 1.0 / 256.0;

fn snap(v: f64) -> f64 {
    (v / GRID).floor() * GRID
}

fn poisson<R: Rng + ?Sized>(r: &mut R, lambda: f64) -> usize {
    if lambda <= 0.0 {
        return 0;
    }
    Poisson::new(lambda).expect("positive rate").sample(r) as usize
}

/// Orthonormal unit prototypes, one per category plus one for background.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototypes {
    categories: Vec<Vec<f64>>,
    background: Vec<f64>,
    noise_sigma: f64,
}

impl Prototypes {
    /// Gram-Schmidt over seeded Gaussian draws. Needs
    /// `dim >= n_categories + 1`.
    pub fn new(n_categories: usize, dim: usize, noise_sigma: f64, seed: u64) -> Result<Self, SynthError> {
        if dim < n_categories + 1 {
            return Err(bad(format!("feature_dim {dim} too small for {n_categories} categories")));
        }
        if !(noise_sigma.is_finite() && noise_sigma >= 0.0) {
            return Err(bad("prototype_noise_sigma must be >= 0"));
        }
        let mut r = rng::substream(seed, Domain::Prototypes, &[n_categories as u64, dim as u64]);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n_categories + 1);
        while basis.len() < n_categories + 1 {
            let mut v: Vec<f64> = (0..dim).map(|_| normal.sample(&mut r)).collect();
            for b in &basis {
                let d = dot(&v, b);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
            }
            if normalize(&mut v) > 1e-6 {
                basis.push(v);
            }
        }
        let background = basis.pop().expect("at least one vector");
        Ok(Self {
            categories: basis,
            background,
            noise_sigma,
        })
    }

    pub fn from_config(cfg: &SynthConfig) -> Result<Self, SynthError> {
        Self::new(cfg.n_categories, cfg.feature_dim, cfg.prototype_noise_sigma, cfg.seed)
    }

    pub fn category(&self, index: usize) -> &[f64] {
        &self.categories[index]
    }

    pub fn background(&self) -> &[f64] {
        &self.background
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.background.len()
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    /// `center` plus isotropic noise of expected norm `noise_sigma`,
    /// renormalised.
    pub fn noisy_feature<R: Rng + ?Sized>(&self, center: &[f64], r: &mut R) -> Vec<f64> {
        let mut v = center.to_vec();
        if self.noise_sigma > 0.0 {
            let per_dim = self.noise_sigma / (self.dim() as f64).sqrt();
            let n = Normal::new(0.0, per_dim).expect("finite sigma");
            v.iter_mut().for_each(|x| *x += n.sample(r));
        }
        if normalize(&mut v) == 0.0 {
            v = center.to_vec();
        }
        v
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    /// Detection probability of a category with no labels.
    pub recall_base: f64,
    /// Added detection probability per labeled instance of the category.
    pub recall_per_label_gain: f64,
    /// Target fraction of candidates that are true detections.
    pub precision_base: f64,
    /// Per-edge jitter as a fraction of the box side.
    pub box_jitter_sigma: f64,
    pub confusion_temperature: f64,
    pub labeledness_noise: f64,
    pub seed: u64,
    /// Distance of the labeledness head's clean outputs from 0 and 1.
    #[serde(default = "default_epsilon")]
    pub labeledness_epsilon: f64,
    /// Extra jitter for categories with few labels: the per-edge sigma is
    /// scaled by `1 + localization_penalty / (1 + labeled)`.
    #[serde(default)]
    pub localization_penalty: f64,
    /// Weight of the category a false positive resembles, relative to the
    /// background prototype.
    #[serde(default = "default_fp_confusion")]
    pub fp_confusion: f64,
}

fn default_epsilon() -> f64 {
    0.05
}

fn default_fp_confusion() -> f64 {
    0.5
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            recall_base: 0.5,
            recall_per_label_gain: 0.005,
            precision_base: 0.7,
            box_jitter_sigma: 0.05,
            confusion_temperature: 1.0,
            labeledness_noise: 0.05,
            seed: 0,
            labeledness_epsilon: default_epsilon(),
            localization_penalty: 0.0,
            fp_confusion: default_fp_confusion(),
        }
    }
}

impl DetectorConfig {
    /// Detector for cluttered overhead tiles: many false alarms that look
    /// like background more than any category.
    pub fn xview_like(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    /// Detector for a curated benchmark: fewer false alarms, and the ones it
    /// makes look like a real category.
    pub fn coco_like(seed: u64) -> Self {
        Self {
            precision_base: 0.9,
            fp_confusion: 4.0,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let err = |m: String| Err(SynthError::InvalidDetector(m));
        for (name, v) in [
            ("recall_base", self.recall_base),
            ("labeledness_epsilon", self.labeledness_epsilon),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return err(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        // Zero precision would need infinitely many false positives.
        if !(self.precision_base > 0.0 && self.precision_base <= 1.0) {
            return err(format!("precision_base must lie in (0, 1], got {}", self.precision_base));
        }
        for (name, v) in [
            ("recall_per_label_gain", self.recall_per_label_gain),
            ("box_jitter_sigma", self.box_jitter_sigma),
            ("labeledness_noise", self.labeledness_noise),
            ("localization_penalty", self.localization_penalty),
            ("fp_confusion", self.fp_confusion),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return err(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if self.confusion_temperature.is_nan() || self.confusion_temperature <= 0.0 {
            return err(format!(
                "confusion_temperature must be > 0, got {}",
                self.confusion_temperature
            ));
        }
        Ok(())
    }

    /// Detection probability for a category with `labeled` labels.
    pub fn recall(&self, labeled: usize) -> f64 {
        (self.recall_base + self.recall_per_label_gain * labeled as f64).min(1.0)
    }
}

/// Softmax of `scale_j * sim_j / temperature`, where `scale_j = 1 +
/// ln(1 + labeled_j)` grows with the labels seen for category `j`.
pub fn class_probabilities(feature: &[f64], prototypes: &Prototypes, labeled: &[usize], temperature: f64) -> Vec<f64> {
    let logits: Vec<f64> = (0..prototypes.len())
        .map(|j| {
            let sharpen = 1.0 + (labeled[j] as f64).ln_1p();
            sharpen * dot(feature, prototypes.category(j)) / temperature
        })
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= total);
    p
}

/// Predictions for every image that is not fully labeled.
///
/// Whether an object is found is fixed per object by a persistent difficulty
/// draw, so an object missed at one recall level stays missed until recall
/// for its category rises. Everything else is drawn from streams keyed by
/// `(seed, split, image)`. Candidate ids are unique within the returned list.
pub fn simulate_detections(
    dataset: &SceneDataset,
    pool: &PoolState,
    cfg: &DetectorConfig,
    prototypes: &Prototypes,
    split: u64,
) -> Result<Vec<CandidateObject>, SynthError> {
    cfg.validate()?;
    if prototypes.len() != dataset.num_categories() {
        return Err(SynthError::InvalidDetector(format!(
            "{} prototypes for {} categories",
            prototypes.len(),
            dataset.num_categories()
        )));
    }
    let labeled = pool.labeled_per_category();
    let fp_weights: Vec<f64> = dataset
        .categories()
        .iter()
        .map(|c| c.instance_count as f64 + 1.0)
        .collect();
    let fp_category = WeightedIndex::new(&fp_weights).expect("positive weights");
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let eps = cfg.labeledness_epsilon;

    let mut out = Vec::new();
    let mut next_id = 0u64;
    for image in dataset.images() {
        if pool.status(image.id) == Some(ImageStatus::Full) {
            continue;
        }
        let mut r = rng::substream(cfg.seed, Domain::Detection, &[split, image.id.0]);
        let mut true_positives = 0usize;
        let mut sizes = Vec::new();
        for gt in dataset.image_annotations(image) {
            let cat = dataset.category_index(gt.category_id).expect("validated dataset");
            let difficulty: f64 = rng::substream(cfg.seed, Domain::Difficulty, &[gt.id.0]).random();
            if difficulty >= cfg.recall(labeled[cat]) {
                continue;
            }
            true_positives += 1;
            sizes.push((gt.bbox.width(), gt.bbox.height()));
            let sigma = cfg.box_jitter_sigma * (1.0 + cfg.localization_penalty / (1.0 + labeled[cat] as f64));
            let bbox = jitter(&gt.bbox, sigma, image.extent, &mut r, &unit);
            let feature = prototypes.noisy_feature(prototypes.category(cat), &mut r);
            let probs = class_probabilities(&feature, prototypes, labeled, cfg.confusion_temperature);
            let base = if pool.is_labeled(gt.id) { eps } else { 1.0 - eps };
            let labeledness = (base + cfg.labeledness_noise * unit.sample(&mut r)).clamp(0.0, 1.0);
            out.push(CandidateObject::new(
                CandidateId(next_id),
                image.id,
                bbox,
                probs,
                feature,
                Some(labeledness),
            )?);
            next_id += 1;
        }

        let mut r = rng::substream(cfg.seed, Domain::FalsePositives, &[split, image.id.0]);
        let rate = true_positives as f64 * (1.0 - cfg.precision_base) / cfg.precision_base;
        for _ in 0..poisson(&mut r, rate) {
            let (w, h) = sizes[r.random_range(0..sizes.len())];
            let x = r.random_range(0.0..=(image.extent.width() - w).max(0.0));
            let y = r.random_range(0.0..=(image.extent.height() - h).max(0.0));
            let bbox = Box::new(x, y, x + w, y + h).expect("finite").clip_to(image.extent);
            let confuser = prototypes.category(fp_category.sample(&mut r));
            let center: Vec<f64> = prototypes
                .background()
                .iter()
                .zip(confuser)
                .map(|(b, c)| b + cfg.fp_confusion * c)
                .collect();
            let feature = prototypes.noisy_feature(&center, &mut r);
            let probs = class_probabilities(&feature, prototypes, labeled, cfg.confusion_temperature);
            let labeledness = (1.0 - eps + cfg.labeledness_noise * unit.sample(&mut r)).clamp(0.0, 1.0);
            out.push(CandidateObject::new(
                CandidateId(next_id),
                image.id,
                bbox,
                probs,
                feature,
                Some(labeledness),
            )?);
            next_id += 1;
        }
    }
    Ok(out)
}

fn jitter<R: Rng + ?Sized>(b: &Box, sigma: f64, extent: ImageExtent, r: &mut R, unit: &Normal<f64>) -> Box {
    if sigma == 0.0 {
        return b.clip_to(extent);
    }
    let (w, h) = (b.width(), b.height());
    let mut e = [b.x_min(), b.y_min(), b.x_max(), b.y_max()];
    for (i, v) in e.iter_mut().enumerate() {
        let side = if i % 2 == 0 { w } else { h };
        *v += sigma * side * unit.sample(r);
    }
    let (x0, x1) = (e[0].min(e[2]), e[0].max(e[2]));
    let (y0, y1) = (e[1].min(e[3]), e[1].max(e[3]));
    Box::new(x0, y0, x1, y1).expect("finite").clip_to(extent)
}

/// Best IoU of `candidate` against the annotations of its image, for
/// diagnostics.
pub fn best_match_iou(candidate: &CandidateObject, dataset: &SceneDataset) -> Option<(GtId, f64)> {
    let image = dataset.image(candidate.image_id)?;
    dataset
        .image_annotations(image)
        .map(|gt| (gt.id, iou(&candidate.bbox, &gt.bbox)))
        .fold(None, |best: Option<(GtId, f64)>, (id, v)| match best {
            Some((_, b)) if b >= v => best,
            _ => Some((id, v)),
        })
}
