//! Annotation files, detection dumps and interaction logs.
//!
//! Boxes on disk are `[x, y, width, height]` anchored at the top-left
//! corner. Features are stored as 32-bit floats.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Box, ImageExtent};
use crate::oracle::BudgetLedger;
use crate::scene::{
    CandidateId, CandidateObject, Category, CategoryId, GroundTruthObject, GtId, ImageId, SceneDataset, SceneError,
    SceneImage,
};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed document: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Invalid {
        path: PathBuf,
        #[source]
        source: SceneError,
    },
    #[error("{path}: image {image}: width and height must be positive")]
    BadImage { path: PathBuf, image: ImageId },
    #[error("{path}:{line}: {message}")]
    Record { path: PathBuf, line: usize, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct GtFile {
    images: Vec<GtImage>,
    #[serde(default)]
    annotations: Vec<GtAnnotation>,
    categories: Vec<GtCategory>,
}

#[derive(Debug, Serialize, Deserialize)]
struct GtImage {
    id: u64,
    width: f64,
    height: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct GtAnnotation {
    id: u64,
    image_id: u64,
    category_id: u64,
    bbox: [f64; 4],
}

#[derive(Debug, Serialize, Deserialize)]
struct GtCategory {
    id: u64,
    name: String,
}

pub fn load_ground_truth(path: impl AsRef<Path>) -> Result<SceneDataset, IngestError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let doc: GtFile = serde_json::from_str(&text).map_err(|e| IngestError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let invalid = |source| IngestError::Invalid {
        path: path.to_path_buf(),
        source,
    };
    let mut images = Vec::with_capacity(doc.images.len());
    for img in doc.images {
        let extent = ImageExtent::new(img.width, img.height).map_err(|_| IngestError::BadImage {
            path: path.to_path_buf(),
            image: ImageId(img.id),
        })?;
        images.push(SceneImage {
            id: ImageId(img.id),
            extent,
            gt_ids: Vec::new(),
        });
    }
    let mut annotations = Vec::with_capacity(doc.annotations.len());
    for ann in doc.annotations {
        let [x, y, w, h] = ann.bbox;
        let id = GtId(ann.id);
        if !(w > 0.0 && h > 0.0) {
            return Err(invalid(SceneError::DegenerateAnnotation(id)));
        }
        let bbox = Box::from_xywh(x, y, w, h).map_err(|_| invalid(SceneError::DegenerateAnnotation(id)))?;
        annotations.push(GroundTruthObject {
            id,
            image_id: ImageId(ann.image_id),
            category_id: CategoryId(ann.category_id),
            bbox,
        });
    }
    let categories = doc
        .categories
        .into_iter()
        .map(|c| Category {
            id: CategoryId(c.id),
            name: c.name,
            instance_count: 0,
        })
        .collect();
    SceneDataset::new(images, annotations, categories).map_err(invalid)
}

pub fn write_dataset(dataset: &SceneDataset, path: impl AsRef<Path>) -> Result<(), IngestError> {
    let path = path.as_ref();
    let doc = GtFile {
        images: dataset
            .images()
            .iter()
            .map(|i| GtImage {
                id: i.id.0,
                width: i.extent.width(),
                height: i.extent.height(),
            })
            .collect(),
        annotations: dataset
            .annotations()
            .iter()
            .map(|a| GtAnnotation {
                id: a.id.0,
                image_id: a.image_id.0,
                category_id: a.category_id.0,
                bbox: a.bbox.to_xywh(),
            })
            .collect(),
        categories: dataset
            .categories()
            .iter()
            .map(|c| GtCategory {
                id: c.id.0,
                name: c.name.clone(),
            })
            .collect(),
    };
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer(&mut w, &doc).map_err(|e| IngestError::Io {
        path: path.to_path_buf(),
        source: e.into(),
    })?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(io_err(path))
}

#[derive(Debug, Serialize, Deserialize)]
struct DetectionRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<u64>,
    image_id: u64,
    bbox: [f64; 4],
    class_probs: Vec<f64>,
    feature: Vec<f32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labeledness: Option<f64>,
}

/// Reads a line-delimited detection dump. Records without an `id` are
/// numbered by their position among the non-blank lines.
pub fn load_detections(path: impl AsRef<Path>, dataset: &SceneDataset) -> Result<Vec<CandidateObject>, IngestError> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path).map_err(io_err(path))?);
    let mut out = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let mut feature_len = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let line_no = i + 1;
        let fail = |message: String| IngestError::Record {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        let rec: DetectionRecord = serde_json::from_str(&line).map_err(|e| fail(e.to_string()))?;
        let id = CandidateId(rec.id.unwrap_or(out.len() as u64));
        if !seen.insert(id) {
            return Err(fail(format!("duplicate candidate id {id}")));
        }
        let image = ImageId(rec.image_id);
        if dataset.image(image).is_none() {
            return Err(fail(format!("unknown image {image}")));
        }
        if rec.class_probs.len() != dataset.num_categories() {
            return Err(fail(format!(
                "class_probs has {} entries, dataset has {} categories",
                rec.class_probs.len(),
                dataset.num_categories()
            )));
        }
        match feature_len {
            None => feature_len = Some(rec.feature.len()),
            Some(n) if n != rec.feature.len() => {
                return Err(fail(format!(
                    "feature has {} entries, earlier records have {n}",
                    rec.feature.len()
                )))
            }
            Some(_) => {}
        }
        let [x, y, w, h] = rec.bbox;
        let bbox = Box::from_xywh(x, y, w, h).map_err(|e| fail(e.to_string()))?;
        let feature = rec.feature.iter().map(|&v| f64::from(v)).collect();
        let cand = CandidateObject::new(id, image, bbox, rec.class_probs, feature, rec.labeledness)
            .map_err(|e| fail(e.to_string()))?;
        out.push(cand);
    }
    Ok(out)
}

pub fn write_detections(candidates: &[CandidateObject], path: impl AsRef<Path>) -> Result<(), IngestError> {
    let records = candidates.iter().map(|c| DetectionRecord {
        id: Some(c.id.0),
        image_id: c.image_id.0,
        bbox: c.bbox.to_xywh(),
        class_probs: c.class_probs.clone(),
        feature: c.feature.iter().map(|&v| v as f32).collect(),
        labeledness: c.labeledness,
    });
    write_jsonl(path.as_ref(), records)
}

#[derive(Debug, Serialize)]
struct InteractionRecord<'a> {
    index: usize,
    query_kind: crate::oracle::QueryKind,
    image_id: u64,
    query_box: [f64; 4],
    returned_gt_ids: &'a [GtId],
    query_area: f64,
    budget_consumed: u64,
}

#[derive(Debug, Serialize)]
struct LedgerSummary<'a> {
    budget: u64,
    spent: u64,
    labels_applied: u64,
    background_queries: u64,
    interactions: usize,
    per_category_labels: &'a std::collections::BTreeMap<CategoryId, u64>,
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "lowercase")]
enum LogLine<'a> {
    Interaction(InteractionRecord<'a>),
    Summary(LedgerSummary<'a>),
}

/// One line per interaction, then one summary line.
pub fn write_interactions(ledger: &BudgetLedger, path: impl AsRef<Path>) -> Result<(), IngestError> {
    let lines = ledger
        .interactions
        .iter()
        .enumerate()
        .map(|(index, r)| {
            LogLine::Interaction(InteractionRecord {
                index,
                query_kind: r.query_kind,
                image_id: r.image_id.0,
                query_box: r.query_box.to_xywh(),
                returned_gt_ids: &r.returned_gt_ids,
                query_area: r.query_area,
                budget_consumed: r.budget_consumed,
            })
        })
        .chain(std::iter::once(LogLine::Summary(LedgerSummary {
            budget: ledger.budget,
            spent: ledger.spent(),
            labels_applied: ledger.labels_applied,
            background_queries: ledger.background_queries,
            interactions: ledger.interactions.len(),
            per_category_labels: &ledger.per_category_labels,
        })));
    write_jsonl(path.as_ref(), lines)
}

fn write_jsonl<T: Serialize>(path: &Path, records: impl Iterator<Item = T>) -> Result<(), IngestError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for rec in records {
        serde_json::to_writer(&mut w, &rec).map_err(|e| IngestError::Io {
            path: path.to_path_buf(),
            source: e.into(),
        })?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}
