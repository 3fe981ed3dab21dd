//! Experiment driver: configuration, the multi-split loop, per-split
//! metrics and report files.

mod metrics;
mod output;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::informativeness::MethodKind;
use crate::ingest::{self, IngestError};
use crate::oracle::BudgetLedger;
use crate::rng::{self, Domain};
use crate::scene::{sample_initial_pool, CandidateObject, ImageStatus, InitialPoolConfig, PoolState, SceneDataset, SceneError};
use crate::selection::{run_split, Approach, QueryRecord, SelectionError, SelectionParams, SplitContext};
use crate::synthgen::{generate_dataset, simulate_detections, DetectorConfig, Prototypes, SynthConfig, SynthError};

pub use metrics::{
    category_ranking, compute_group_breakdown, mean_std, percent, rare_categories, GroupBreakdown, GroupRule,
    GroupStat,
};
pub use output::{
    build_report, display_label, read_run, splits_csv, write_report, write_run, Cell, ComparisonReport, ReportEntry,
    RunMetadata, SplitRow, RUN_METADATA_FILE, SPLITS_FILE,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("{path}: {message}")]
    Output { path: PathBuf, message: String },
}

/// Where the scenes come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetSource {
    Synthetic(SynthConfig),
    Files(FileSource),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileSource {
    pub ground_truth: PathBuf,
    /// One detection dump per active split. Empty means simulate.
    #[serde(default)]
    pub detections: Vec<PathBuf>,
    /// Prototype settings for simulated detections.
    #[serde(default = "default_feature_dim")]
    pub feature_dim: usize,
    #[serde(default = "default_noise")]
    pub prototype_noise_sigma: f64,
    #[serde(default)]
    pub prototype_seed: u64,
}

fn default_feature_dim() -> usize {
    64
}

fn default_noise() -> f64 {
    0.35
}

fn default_alpha() -> f64 {
    0.5
}

fn default_beta() -> f64 {
    3.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub approach: Approach,
    pub method: MethodKind,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Labels (plus background charges) per active split.
    pub budget: u64,
    /// Active splits after the initial pool.
    pub n_splits: usize,
    pub seeds: Vec<u64>,
    /// Charge for an image query that finds an image with nothing to label.
    #[serde(default)]
    pub empty_image_charge: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub initial_pool: InitialPoolConfig,
    #[serde(default)]
    pub detector: DetectorConfig,
    pub dataset: DatasetSource,
}

/// Ready-made experiment settings for the two synthetic regimes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// Cluttered tiles with a steep long tail.
    XviewLike,
    /// Curated scenes: fewer, larger objects, mild imbalance.
    CocoLike,
}

impl Regime {
    pub fn synth(self, seed: u64) -> SynthConfig {
        match self {
            Regime::XviewLike => SynthConfig::xview_like(seed),
            Regime::CocoLike => SynthConfig::coco_like(seed),
        }
    }

    pub fn detector(self, seed: u64) -> DetectorConfig {
        match self {
            Regime::XviewLike => DetectorConfig::xview_like(seed),
            Regime::CocoLike => DetectorConfig::coco_like(seed),
        }
    }

    /// 20% of each category, capped at 50: about 1500 initial labels on the
    /// cluttered regime.
    pub fn initial_pool(self) -> InitialPoolConfig {
        InitialPoolConfig {
            percent: 20.0,
            cap: 50,
            floor_at_one: true,
        }
    }

    /// Budget 1500 over four active splits.
    pub fn experiment(self, approach: Approach, method: MethodKind, seeds: Vec<u64>) -> ExperimentConfig {
        ExperimentConfig {
            approach,
            method,
            alpha: default_alpha(),
            beta: default_beta(),
            budget: 1500,
            n_splits: 4,
            seeds,
            empty_image_charge: 0,
            output_dir: None,
            initial_pool: self.initial_pool(),
            detector: self.detector(0),
            dataset: DatasetSource::Synthetic(self.synth(7)),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn selection_params(&self) -> SelectionParams {
        SelectionParams {
            alpha: self.alpha,
            beta: self.beta,
            budget: self.budget,
            approach: self.approach,
            method: self.method,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.selection_params().validate()?;
        if self.n_splits == 0 {
            return Err(HarnessError::Config("n_splits must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(HarnessError::Config("seeds must not be empty".into()));
        }
        let mut uniq = BTreeSet::new();
        if let Some(s) = self.seeds.iter().find(|s| !uniq.insert(**s)) {
            return Err(HarnessError::Config(format!("seed {s} listed twice")));
        }
        self.initial_pool.validate()?;
        self.detector.validate()?;
        match &self.dataset {
            DatasetSource::Synthetic(s) => s.validate()?,
            DatasetSource::Files(f) => {
                if !f.detections.is_empty() && f.detections.len() != self.n_splits {
                    return Err(HarnessError::Config(format!(
                        "{} detection files for {} splits",
                        f.detections.len(),
                        self.n_splits
                    )));
                }
            }
        }
        Ok(())
    }

    /// Makes relative file paths relative to `base` instead of the working
    /// directory.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(dir) = &mut self.output_dir {
            fix(dir);
        }
        if let DatasetSource::Files(f) = &mut self.dataset {
            fix(&mut f.ground_truth);
            f.detections.iter_mut().for_each(fix);
        }
    }
}

/// Dataset and prototypes shared by every seed of an experiment.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub dataset: SceneDataset,
    pub prototypes: Prototypes,
}

impl PreparedData {
    pub fn load(source: &DatasetSource) -> Result<Self, HarnessError> {
        match source {
            DatasetSource::Synthetic(cfg) => Ok(Self {
                dataset: generate_dataset(cfg)?,
                prototypes: Prototypes::from_config(cfg)?,
            }),
            DatasetSource::Files(f) => {
                let dataset = ingest::load_ground_truth(&f.ground_truth)?;
                let prototypes = Prototypes::new(
                    dataset.num_categories(),
                    f.feature_dim,
                    f.prototype_noise_sigma,
                    f.prototype_seed,
                )?;
                Ok(Self { dataset, prototypes })
            }
        }
    }
}

/// Metrics after one split. Split 0 is the initial pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub seed: u64,
    pub split: usize,
    /// Candidates or images ran out before the budget was spent.
    pub truncated: bool,
    pub candidates: usize,
    pub labels_applied: u64,
    pub background_queries: u64,
    pub interactions: usize,
    /// Labels gained in this split, dense category order.
    pub new_labels_per_category: Vec<u64>,
    /// Cumulative labels, dense category order.
    pub labeled_per_category: Vec<u64>,
    pub labeled_pct_per_category: Vec<f64>,
    pub total_labeled: u64,
    pub total_labeled_pct: f64,
    pub groups: GroupBreakdown,
    pub rare_labeled: u64,
    pub rare_labeled_pct: f64,
    /// Summed area of this split's queries, pixels squared.
    pub query_area: f64,
    /// Distinct images queried in this split.
    pub images_touched: usize,
}

#[derive(Debug, Clone)]
pub struct SplitRecord {
    pub report: SplitReport,
    /// `None` for split 0.
    pub ledger: Option<BudgetLedger>,
    pub queries: Vec<QueryRecord>,
}

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub splits: Vec<SplitRecord>,
}

impl SeedRun {
    pub fn reports(&self) -> impl Iterator<Item = &SplitReport> {
        self.splits.iter().map(|s| &s.report)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub split: usize,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub n_seeds: usize,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub runs: Vec<SeedRun>,
    pub aggregate: Vec<AggregateRow>,
    pub group_rule: GroupRule,
    pub rare_categories: Vec<usize>,
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult, HarnessError> {
    config.validate()?;
    let data = PreparedData::load(&config.dataset)?;
    run_experiment_with(config, &data)
}

/// Runs every seed against already prepared data. Seeds run in parallel;
/// results come back in seed-list order.
pub fn run_experiment_with(config: &ExperimentConfig, data: &PreparedData) -> Result<ExperimentResult, HarnessError> {
    config.validate()?;
    let runs = config
        .seeds
        .par_iter()
        .map(|&seed| run_seed(config, data, seed))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ExperimentResult {
        config: config.clone(),
        aggregate: aggregate(&runs),
        group_rule: GroupRule::for_categories(data.dataset.num_categories()),
        rare_categories: rare_categories(&data.dataset),
        runs,
    })
}

fn detections_for(
    config: &ExperimentConfig,
    data: &PreparedData,
    pool: &PoolState,
    seed: u64,
    split: usize,
) -> Result<Vec<CandidateObject>, HarnessError> {
    if let DatasetSource::Files(f) = &config.dataset {
        if let Some(path) = f.detections.get(split - 1) {
            // The detector only runs on images that still need labels.
            let mut cands = ingest::load_detections(path, &data.dataset)?;
            cands.retain(|c| pool.status(c.image_id) != Some(ImageStatus::Full));
            cands.iter_mut().for_each(|c| c.consumed = false);
            return Ok(cands);
        }
    }
    let detector = DetectorConfig {
        seed: rng::mix(config.detector.seed, Domain::Detection, &[seed]),
        ..config.detector.clone()
    };
    Ok(simulate_detections(&data.dataset, pool, &detector, &data.prototypes, split as u64)?)
}

/// One seed: initial pool, then `n_splits` rounds of detect, score, query.
pub fn run_seed(config: &ExperimentConfig, data: &PreparedData, seed: u64) -> Result<SeedRun, HarnessError> {
    let dataset = &data.dataset;
    let rare = rare_categories(dataset);
    let mut pool = sample_initial_pool(dataset, &config.initial_pool, seed)?;
    let zero = vec![0u64; dataset.num_categories()];
    let initial = labeled_counts(&pool);
    let touched = dataset
        .images()
        .iter()
        .filter(|i| pool.status(i.id) != Some(ImageStatus::Unlabeled))
        .count();
    let mut splits = vec![SplitRecord {
        report: make_report(dataset, &rare, seed, 0, &zero, &initial, false, 0, None, touched),
        ledger: None,
        queries: Vec::new(),
    }];
    for split in 1..=config.n_splits {
        let before = labeled_counts(&pool);
        let candidates = detections_for(config, data, &pool, seed, split)?;
        let n_candidates = candidates.len();
        let ctx = SplitContext {
            dataset,
            params: config.selection_params(),
            empty_image_charge: config.empty_image_charge,
            seed,
            split: split as u64,
        };
        let outcome = run_split(ctx, &mut pool, candidates)?;
        let after = labeled_counts(&pool);
        let images: BTreeSet<_> = outcome.ledger.interactions.iter().map(|r| r.image_id).collect();
        let report = make_report(
            dataset,
            &rare,
            seed,
            split,
            &before,
            &after,
            outcome.truncated,
            n_candidates,
            Some(&outcome.ledger),
            images.len(),
        );
        splits.push(SplitRecord {
            report,
            ledger: Some(outcome.ledger),
            queries: outcome.queries,
        });
    }
    Ok(SeedRun { seed, splits })
}

fn labeled_counts(pool: &PoolState) -> Vec<u64> {
    pool.labeled_per_category().iter().map(|&c| c as u64).collect()
}

#[allow(clippy::too_many_arguments)]
fn make_report(
    dataset: &SceneDataset,
    rare: &[usize],
    seed: u64,
    split: usize,
    before: &[u64],
    after: &[u64],
    truncated: bool,
    candidates: usize,
    ledger: Option<&BudgetLedger>,
    images_touched: usize,
) -> SplitReport {
    let totals: Vec<u64> = dataset.categories().iter().map(|c| c.instance_count as u64).collect();
    let new: Vec<u64> = after.iter().zip(before).map(|(a, b)| a - b).collect();
    let total_labeled: u64 = after.iter().sum();
    let rare_labeled: u64 = rare.iter().map(|&i| after[i]).sum();
    let rare_total: u64 = rare.iter().map(|&i| totals[i]).sum();
    SplitReport {
        seed,
        split,
        truncated,
        candidates,
        labels_applied: ledger.map_or(new.iter().sum(), |l| l.labels_applied),
        background_queries: ledger.map_or(0, |l| l.background_queries),
        interactions: ledger.map_or(0, |l| l.interactions.len()),
        labeled_pct_per_category: after.iter().zip(&totals).map(|(&l, &t)| percent(l, t)).collect(),
        new_labels_per_category: new,
        labeled_per_category: after.to_vec(),
        total_labeled,
        total_labeled_pct: percent(total_labeled, totals.iter().sum()),
        groups: compute_group_breakdown(dataset, after),
        rare_labeled,
        rare_labeled_pct: percent(rare_labeled, rare_total),
        query_area: ledger.map_or(0.0, |l| l.interactions.iter().map(|r| r.query_area).sum()),
        images_touched,
    }
}

/// Metrics aggregated across seeds, in a fixed order.
pub const AGGREGATE_METRICS: [&str; 10] = [
    "labels_applied",
    "background_queries",
    "total_labeled_pct",
    "top_labeled_pct",
    "middle_labeled_pct",
    "bottom_labeled_pct",
    "rare_labeled",
    "rare_labeled_pct",
    "query_area",
    "images_touched",
];

pub fn metric_value(r: &SplitReport, metric: &str) -> Option<f64> {
    Some(match metric {
        "labels_applied" => r.labels_applied as f64,
        "background_queries" => r.background_queries as f64,
        "total_labeled_pct" => r.total_labeled_pct,
        "top_labeled_pct" => r.groups.top.labeled_pct,
        "middle_labeled_pct" => r.groups.middle.labeled_pct,
        "bottom_labeled_pct" => r.groups.bottom.labeled_pct,
        "rare_labeled" => r.rare_labeled as f64,
        "rare_labeled_pct" => r.rare_labeled_pct,
        "query_area" => r.query_area,
        "images_touched" => r.images_touched as f64,
        _ => return None,
    })
}

pub fn aggregate(runs: &[SeedRun]) -> Vec<AggregateRow> {
    let n_splits = runs.iter().map(|r| r.splits.len()).min().unwrap_or(0);
    let mut rows = Vec::new();
    for split in 0..n_splits {
        for metric in AGGREGATE_METRICS {
            let vals: Vec<f64> = runs
                .iter()
                .map(|r| metric_value(&r.splits[split].report, metric).expect("known metric"))
                .collect();
            let (mean, std) = mean_std(&vals);
            rows.push(AggregateRow {
                split,
                metric: metric.to_string(),
                mean,
                std,
                n_seeds: vals.len(),
            });
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_config() -> ExperimentConfig {
        ExperimentConfig {
            approach: Approach::Real,
            method: MethodKind::MaxEnt,
            alpha: 0.5,
            beta: 3.0,
            budget: 60,
            n_splits: 2,
            seeds: vec![1, 2],
            empty_image_charge: 0,
            output_dir: None,
            initial_pool: InitialPoolConfig {
                percent: 5.0,
                cap: 20,
                floor_at_one: true,
            },
            detector: DetectorConfig::default(),
            dataset: DatasetSource::Synthetic(SynthConfig {
                n_images: 60,
                n_categories: 12,
                feature_dim: 16,
                ..SynthConfig::xview_like(4)
            }),
        }
    }

    #[test]
    fn toml_round_trip() {
        let cfg = tiny_config();
        let text = cfg.to_toml();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
        let bad = text.replace("n_splits = 2", "n_splits = 2\nbogus = 1");
        assert!(ExperimentConfig::from_toml(&bad).is_err());
    }

    #[test]
    fn minimal_toml_uses_defaults() {
        let text = r#"
            approach = "object"
            method = "maxent"
            budget = 10
            n_splits = 1
            seeds = [0]
            [dataset]
            kind = "files"
            ground_truth = "gt.json"
        "#;
        let mut cfg = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(cfg.alpha, 0.5);
        assert_eq!(cfg.initial_pool, InitialPoolConfig::default());
        cfg.resolve_paths(Path::new("/data"));
        let DatasetSource::Files(f) = &cfg.dataset else { panic!() };
        assert_eq!(f.ground_truth, PathBuf::from("/data/gt.json"));
    }

    #[test]
    fn config_validation() {
        let ok = tiny_config();
        assert!(ok.validate().is_ok());
        assert!(ExperimentConfig { n_splits: 0, ..ok.clone() }.validate().is_err());
        assert!(ExperimentConfig { budget: 0, ..ok.clone() }.validate().is_err());
        assert!(ExperimentConfig { seeds: vec![], ..ok.clone() }.validate().is_err());
        assert!(ExperimentConfig { seeds: vec![1, 1], ..ok.clone() }.validate().is_err());
        let err = ExperimentConfig {
            approach: Approach::ImageLevel,
            method: MethodKind::ModelRand,
            ..ok
        }
        .validate()
        .unwrap_err();
        assert!(err.to_string().contains("allowed pairs"));
    }

    #[test]
    fn reports_are_monotone_and_conserved() {
        for approach in Approach::ALL {
            let cfg = ExperimentConfig {
                approach,
                ..tiny_config()
            };
            let res = run_experiment(&cfg).unwrap();
            assert_eq!(res.runs.len(), 2);
            for run in &res.runs {
                assert_eq!(run.splits.len(), 3);
                for w in run.splits.windows(2) {
                    let (a, b) = (&w[0].report, &w[1].report);
                    assert!(a.labeled_per_category.iter().zip(&b.labeled_per_category).all(|(x, y)| x <= y));
                    assert!(a.labeled_pct_per_category.iter().all(|p| (0.0..=100.0).contains(p)));
                }
                for s in &run.splits {
                    let r = &s.report;
                    assert_eq!(r.new_labels_per_category.iter().sum::<u64>(), r.labels_applied);
                    if let Some(l) = &s.ledger {
                        assert!(l.is_conserved());
                        assert!(r.truncated || l.is_complete());
                    }
                }
            }
        }
    }

    #[test]
    fn split_zero_matches_across_approaches() {
        let a = run_experiment(&tiny_config()).unwrap();
        let b = run_experiment(&ExperimentConfig {
            approach: Approach::ImageLevel,
            method: MethodKind::Random,
            ..tiny_config()
        })
        .unwrap();
        for (x, y) in a.runs.iter().zip(&b.runs) {
            assert_eq!(x.splits[0].report, y.splits[0].report);
        }
    }

    #[test]
    fn exhaustive_random_labels_everything() {
        let cfg = ExperimentConfig {
            approach: Approach::ImageLevel,
            method: MethodKind::Random,
            budget: 1_000_000,
            n_splits: 1,
            seeds: vec![3],
            ..tiny_config()
        };
        let res = run_experiment(&cfg).unwrap();
        let last = &res.runs[0].splits[1].report;
        assert!(last.truncated);
        assert_eq!(last.total_labeled_pct, 100.0);
        let d = PreparedData::load(&cfg.dataset).unwrap().dataset;
        for (c, &p) in d.categories().iter().zip(&last.labeled_pct_per_category) {
            assert!(c.instance_count == 0 || p == 100.0);
        }
    }

    #[test]
    fn aggregate_layout() {
        let res = run_experiment(&tiny_config()).unwrap();
        assert_eq!(res.aggregate.len(), 3 * AGGREGATE_METRICS.len());
        assert!(res.aggregate.iter().all(|r| r.n_seeds == 2));
    }

    #[test]
    fn regime_presets_are_valid() {
        for regime in [Regime::XviewLike, Regime::CocoLike] {
            let cfg = regime.experiment(Approach::Real, MethodKind::MaxEnt, vec![0, 1, 2, 3, 4]);
            cfg.validate().unwrap();
            assert_eq!((cfg.budget, cfg.n_splits), (1500, 4));
            assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        }
        let coco = Regime::CocoLike.detector(0);
        let xview = Regime::XviewLike.detector(0);
        assert!(coco.precision_base > xview.precision_base);
        assert!(coco.fp_confusion > xview.fp_confusion);
    }

    #[test]
    fn relative_paths_resolve_against_base() {
        let mut cfg = tiny_config();
        cfg.output_dir = Some("out".into());
        cfg.dataset = DatasetSource::Files(FileSource {
            ground_truth: "gt.json".into(),
            detections: vec!["d1.json".into(), "/abs/d2.json".into()],
            feature_dim: 16,
            prototype_noise_sigma: 0.1,
            prototype_seed: 0,
        });
        cfg.resolve_paths(Path::new("/base"));
        assert_eq!(cfg.output_dir, Some(PathBuf::from("/base/out")));
        let DatasetSource::Files(f) = &cfg.dataset else { unreachable!() };
        assert_eq!(f.ground_truth, PathBuf::from("/base/gt.json"));
        assert_eq!(f.detections, vec![PathBuf::from("/base/d1.json"), PathBuf::from("/abs/d2.json")]);
    }
}
