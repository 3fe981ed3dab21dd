use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{mean_std, AggregateRow, ExperimentResult, HarnessError, PreparedData};
use crate::informativeness::MethodKind;
use crate::ingest;
use crate::scene::{CategoryId, SceneDataset};
use crate::selection::Approach;

/// A group name and how to read its labeled-% from a row.
type GroupColumn = (&'static str, fn(&SplitRow) -> f64);

pub const SPLITS_FILE: &str = "splits.csv";
pub const CATEGORIES_FILE: &str = "categories.csv";
pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const RUN_METADATA_FILE: &str = "run.json";
pub const CONFIG_FILE: &str = "config.toml";

fn out_err(path: &Path, e: impl ToString) -> HarnessError {
    HarnessError::Output {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Writes through a temporary sibling so readers never see half a file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| out_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| out_err(path, e))
}

fn csv_bytes<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<Vec<u8>, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(|e| out_err(path, e))?;
    }
    w.into_inner().map_err(|e| out_err(path, e))
}

fn method_label(m: MethodKind) -> &'static str {
    match m {
        MethodKind::MaxEnt => "MaxEnt",
        MethodKind::ModelRand => "ModelRand",
        MethodKind::Random => "Random",
        MethodKind::Dmal => "D-MAL",
    }
}

pub fn display_label(approach: Approach, method: MethodKind) -> String {
    format!("{} ({})", approach.label(), method_label(method))
}

/// One row of `splits.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRow {
    pub approach: Approach,
    pub method: MethodKind,
    pub seed: u64,
    pub split: usize,
    pub truncated: bool,
    pub candidates: usize,
    pub labels_applied: u64,
    pub background_queries: u64,
    pub interactions: usize,
    pub total_labeled: u64,
    pub total_labeled_pct: f64,
    pub top_labeled_pct: f64,
    pub middle_labeled_pct: f64,
    pub bottom_labeled_pct: f64,
    pub rare_labeled: u64,
    pub rare_labeled_pct: f64,
    pub query_area: f64,
    pub images_touched: usize,
}

#[derive(Debug, Serialize)]
struct CategoryRow<'a> {
    approach: Approach,
    method: MethodKind,
    seed: u64,
    split: usize,
    category_id: CategoryId,
    category_name: &'a str,
    instances: usize,
    new_labels: u64,
    labeled: u64,
    labeled_pct: f64,
}

#[derive(Debug, Serialize)]
struct AggregateCsvRow<'a> {
    approach: Approach,
    method: MethodKind,
    split: usize,
    metric: &'a str,
    mean: f64,
    std: f64,
    n_seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMembers {
    pub top: Vec<CategoryId>,
    pub middle: Vec<CategoryId>,
    pub bottom: Vec<CategoryId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub approach: Approach,
    pub method: MethodKind,
    pub label: String,
    pub alpha: f64,
    pub beta: f64,
    pub budget: u64,
    pub n_splits: usize,
    pub seeds: Vec<u64>,
    pub images: usize,
    pub annotations: usize,
    pub categories: usize,
    pub group_rule: String,
    pub groups: GroupMembers,
    pub rare_rule: String,
    pub rare_categories: Vec<CategoryId>,
    pub files: Vec<String>,
}

fn split_rows(result: &ExperimentResult) -> Vec<SplitRow> {
    let cfg = &result.config;
    result
        .runs
        .iter()
        .flat_map(|run| run.reports())
        .map(|r| SplitRow {
            approach: cfg.approach,
            method: cfg.method,
            seed: r.seed,
            split: r.split,
            truncated: r.truncated,
            candidates: r.candidates,
            labels_applied: r.labels_applied,
            background_queries: r.background_queries,
            interactions: r.interactions,
            total_labeled: r.total_labeled,
            total_labeled_pct: r.total_labeled_pct,
            top_labeled_pct: r.groups.top.labeled_pct,
            middle_labeled_pct: r.groups.middle.labeled_pct,
            bottom_labeled_pct: r.groups.bottom.labeled_pct,
            rare_labeled: r.rare_labeled,
            rare_labeled_pct: r.rare_labeled_pct,
            query_area: r.query_area,
            images_touched: r.images_touched,
        })
        .collect()
}

/// Per-split metrics as CSV text, one row per split per seed.
pub fn splits_csv(result: &ExperimentResult) -> Result<Vec<u8>, HarnessError> {
    csv_bytes(Path::new(SPLITS_FILE), split_rows(result))
}

fn metadata(result: &ExperimentResult, dataset: &SceneDataset) -> RunMetadata {
    let cfg = &result.config;
    let first = result.runs[0].splits[0].report.groups.clone();
    let cats = dataset.categories();
    RunMetadata {
        approach: cfg.approach,
        method: cfg.method,
        label: display_label(cfg.approach, cfg.method),
        alpha: cfg.alpha,
        beta: cfg.beta,
        budget: cfg.budget,
        n_splits: cfg.n_splits,
        seeds: cfg.seeds.clone(),
        images: dataset.images().len(),
        annotations: dataset.annotations().len(),
        categories: cats.len(),
        group_rule: result.group_rule.describe(),
        groups: GroupMembers {
            top: first.top.categories,
            middle: first.middle.categories,
            bottom: first.bottom.categories,
        },
        rare_rule: "rarest tenth of categories by instance count, rounded up".into(),
        rare_categories: result.rare_categories.iter().map(|&i| cats[i].id).collect(),
        files: vec![],
    }
}

/// Writes `splits.csv`, `categories.csv`, `aggregate.csv`, `run.json`,
/// `config.toml` and one interaction log per seed and split under
/// `interactions/`. Returns the files written, relative to `dir`.
pub fn write_run(result: &ExperimentResult, data: &PreparedData, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let dataset = &data.dataset;
    let cfg = &result.config;
    let logs = dir.join("interactions");
    fs::create_dir_all(&logs).map_err(|e| out_err(&logs, e))?;
    let mut written = Vec::new();

    let path = dir.join(SPLITS_FILE);
    write_atomic(&path, &splits_csv(result)?)?;
    written.push(PathBuf::from(SPLITS_FILE));

    let cats = dataset.categories();
    let rows = result.runs.iter().flat_map(|run| run.reports()).flat_map(|r| {
        cats.iter().enumerate().map(move |(i, c)| CategoryRow {
            approach: cfg.approach,
            method: cfg.method,
            seed: r.seed,
            split: r.split,
            category_id: c.id,
            category_name: &c.name,
            instances: c.instance_count,
            new_labels: r.new_labels_per_category[i],
            labeled: r.labeled_per_category[i],
            labeled_pct: r.labeled_pct_per_category[i],
        })
    });
    let path = dir.join(CATEGORIES_FILE);
    write_atomic(&path, &csv_bytes(&path, rows)?)?;
    written.push(PathBuf::from(CATEGORIES_FILE));

    let rows = result.aggregate.iter().map(|row: &AggregateRow| AggregateCsvRow {
        approach: cfg.approach,
        method: cfg.method,
        split: row.split,
        metric: &row.metric,
        mean: row.mean,
        std: row.std,
        n_seeds: row.n_seeds,
    });
    let path = dir.join(AGGREGATE_FILE);
    write_atomic(&path, &csv_bytes(&path, rows)?)?;
    written.push(PathBuf::from(AGGREGATE_FILE));

    for run in &result.runs {
        for s in &run.splits {
            if let Some(ledger) = &s.ledger {
                let name = format!("seed{}_split{}.jsonl", run.seed, s.report.split);
                let tmp = logs.join(format!("{name}.tmp"));
                ingest::write_interactions(ledger, &tmp)?;
                let dest = logs.join(&name);
                fs::rename(&tmp, &dest).map_err(|e| out_err(&dest, e))?;
                written.push(Path::new("interactions").join(name));
            }
        }
    }

    let path = dir.join(CONFIG_FILE);
    write_atomic(&path, cfg.to_toml().as_bytes())?;
    written.push(PathBuf::from(CONFIG_FILE));

    let mut meta = metadata(result, dataset);
    written.push(PathBuf::from(RUN_METADATA_FILE));
    meta.files = written.iter().map(|p| p.to_string_lossy().into_owned()).collect();
    let path = dir.join(RUN_METADATA_FILE);
    let mut text = serde_json::to_string_pretty(&meta).map_err(|e| out_err(&path, e))?;
    text.push('\n');
    write_atomic(&path, text.as_bytes())?;
    Ok(written)
}

/// Reads the metadata and split rows of a run directory.
pub fn read_run(dir: &Path) -> Result<(RunMetadata, Vec<SplitRow>), HarnessError> {
    let path = dir.join(RUN_METADATA_FILE);
    let text = fs::read_to_string(&path).map_err(|e| out_err(&path, e))?;
    let meta: RunMetadata = serde_json::from_str(&text).map_err(|e| out_err(&path, e))?;
    let path = dir.join(SPLITS_FILE);
    let mut reader = csv::Reader::from_path(&path).map_err(|e| out_err(&path, e))?;
    let rows = reader
        .deserialize()
        .collect::<Result<Vec<SplitRow>, _>>()
        .map_err(|e| out_err(&path, e))?;
    Ok((meta, rows))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub mean: f64,
    pub std: f64,
}

impl Cell {
    fn of(values: &[f64]) -> Self {
        let (mean, std) = mean_std(values);
        Self { mean, std }
    }

    pub fn text(&self) -> String {
        format!("{:.2} ({:.2})", self.mean, self.std)
    }
}

/// Runs sharing an approach and method, merged across directories.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportEntry {
    pub approach: Approach,
    pub method: MethodKind,
    pub seeds: Vec<u64>,
    /// Rows indexed by split, each holding one row per seed.
    pub splits: Vec<Vec<SplitRow>>,
}

impl ReportEntry {
    pub fn label(&self) -> String {
        display_label(self.approach, self.method)
    }

    pub fn cell(&self, split: usize, metric: impl Fn(&SplitRow) -> f64) -> Cell {
        let vals: Vec<f64> = self.splits[split].iter().map(metric).collect();
        Cell::of(&vals)
    }

    /// Mean budget spent up to and including `split`.
    fn cumulative_spent(&self, split: usize) -> f64 {
        let by_seed: Vec<f64> = self
            .seeds
            .iter()
            .map(|seed| {
                self.splits[..=split]
                    .iter()
                    .flat_map(|rows| rows.iter().filter(|r| r.seed == *seed))
                    .map(|r| (r.labels_applied + r.background_queries) as f64)
                    .sum()
            })
            .collect();
        mean_std(&by_seed).0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub entries: Vec<ReportEntry>,
    pub n_splits: usize,
}

/// Merges run directories into one comparison. Directories with the same
/// approach and method contribute seeds to the same row; a seed appearing
/// twice for one row is an error.
pub fn build_report(dirs: &[PathBuf]) -> Result<ComparisonReport, HarnessError> {
    if dirs.is_empty() {
        return Err(HarnessError::Config("report needs at least one run directory".into()));
    }
    let mut merged: BTreeMap<(Approach, MethodKind), BTreeMap<u64, Vec<SplitRow>>> = BTreeMap::new();
    for dir in dirs {
        let (meta, rows) = read_run(dir)?;
        let entry = merged.entry((meta.approach, meta.method)).or_default();
        let mut by_seed: BTreeMap<u64, Vec<SplitRow>> = BTreeMap::new();
        for row in rows {
            by_seed.entry(row.seed).or_default().push(row);
        }
        for (seed, mut rows) in by_seed {
            if entry.contains_key(&seed) {
                return Err(out_err(
                    dir,
                    format!("seed {seed} of {} already read from another directory", meta.label),
                ));
            }
            rows.sort_by_key(|r| r.split);
            entry.insert(seed, rows);
        }
    }
    let n_splits = merged
        .values()
        .flat_map(|m| m.values())
        .map(|rows| rows.len())
        .min()
        .unwrap_or(0);
    let entries = merged
        .into_iter()
        .map(|((approach, method), by_seed)| ReportEntry {
            approach,
            method,
            seeds: by_seed.keys().copied().collect(),
            splits: (0..n_splits)
                .map(|s| by_seed.values().map(|rows| rows[s].clone()).collect())
                .collect(),
        })
        .collect();
    Ok(ComparisonReport { entries, n_splits })
}

impl ComparisonReport {
    fn split_headers(&self) -> Vec<String> {
        (0..self.n_splits).map(|s| format!("split_{s}")).collect()
    }

    /// Total labeled-% per split, one row per approach and method.
    pub fn comparison_csv(&self) -> Result<Vec<u8>, HarnessError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["approach_method".to_string(), "seeds".into(), "metric".into()];
        header.extend(self.split_headers());
        w.write_record(&header).map_err(|e| out_err(Path::new("comparison.csv"), e))?;
        for e in &self.entries {
            let mut rec = vec![e.label(), e.seeds.len().to_string(), "total_labeled_pct".into()];
            rec.extend((0..self.n_splits).map(|s| e.cell(s, |r| r.total_labeled_pct).text()));
            w.write_record(&rec).map_err(|e| out_err(Path::new("comparison.csv"), e))?;
        }
        w.into_inner().map_err(|e| out_err(Path::new("comparison.csv"), e))
    }

    /// Labeled-% of the top, middle and bottom category groups.
    pub fn groups_csv(&self) -> Result<Vec<u8>, HarnessError> {
        let p = Path::new("groups.csv");
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["group".to_string(), "approach_method".into()];
        header.extend(self.split_headers());
        w.write_record(&header).map_err(|e| out_err(p, e))?;
        let groups: [GroupColumn; 3] = [
            ("top", |r| r.top_labeled_pct),
            ("middle", |r| r.middle_labeled_pct),
            ("bottom", |r| r.bottom_labeled_pct),
        ];
        for (name, f) in groups {
            for e in &self.entries {
                let mut rec = vec![name.to_string(), e.label()];
                rec.extend((0..self.n_splits).map(|s| e.cell(s, f).text()));
                w.write_record(&rec).map_err(|e| out_err(p, e))?;
            }
        }
        w.into_inner().map_err(|e| out_err(p, e))
    }

    /// Series of cumulative budget against labeled-% and rare-object
    /// counts, one row per approach, method and split.
    pub fn series_csv(&self) -> Result<Vec<u8>, HarnessError> {
        #[derive(Serialize)]
        struct Row {
            approach_method: String,
            split: usize,
            cumulative_spent: f64,
            total_labeled_pct_mean: f64,
            total_labeled_pct_std: f64,
            rare_labeled_mean: f64,
            rare_labeled_std: f64,
            rare_labeled_pct_mean: f64,
            rare_labeled_pct_std: f64,
        }
        let rows = self.entries.iter().flat_map(|e| {
            (0..self.n_splits).map(move |s| {
                let total = e.cell(s, |r| r.total_labeled_pct);
                let rare = e.cell(s, |r| r.rare_labeled as f64);
                let rare_pct = e.cell(s, |r| r.rare_labeled_pct);
                Row {
                    approach_method: e.label(),
                    split: s,
                    cumulative_spent: e.cumulative_spent(s),
                    total_labeled_pct_mean: total.mean,
                    total_labeled_pct_std: total.std,
                    rare_labeled_mean: rare.mean,
                    rare_labeled_std: rare.std,
                    rare_labeled_pct_mean: rare_pct.mean,
                    rare_labeled_pct_std: rare_pct.std,
                }
            })
        });
        csv_bytes(Path::new("series.csv"), rows)
    }

    /// Markdown rendering of the comparison and group tables.
    pub fn markdown(&self) -> String {
        let mut s = String::new();
        let header = |s: &mut String, first: &str| {
            s.push_str(&format!("| {first} |"));
            for k in 0..self.n_splits {
                s.push_str(&format!(" Split {k} |"));
            }
            s.push('\n');
            s.push_str("|---|");
            s.push_str(&"---|".repeat(self.n_splits));
            s.push('\n');
        };
        s.push_str("Total labeled-%, mean (std) across seeds\n\n");
        header(&mut s, "Approach (Method)");
        for e in &self.entries {
            s.push_str(&format!("| {} |", e.label()));
            for k in 0..self.n_splits {
                s.push_str(&format!(" {} |", e.cell(k, |r| r.total_labeled_pct).text()));
            }
            s.push('\n');
        }
        let groups: [GroupColumn; 3] = [
            ("Top", |r| r.top_labeled_pct),
            ("Middle", |r| r.middle_labeled_pct),
            ("Bottom", |r| r.bottom_labeled_pct),
        ];
        for (name, f) in groups {
            s.push_str(&format!("\n{name} categories, labeled-%\n\n"));
            header(&mut s, "Approach (Method)");
            for e in &self.entries {
                s.push_str(&format!("| {} |", e.label()));
                for k in 0..self.n_splits {
                    s.push_str(&format!(" {} |", e.cell(k, f).text()));
                }
                s.push('\n');
            }
        }
        s
    }
}

/// Writes `comparison.csv`, `comparison.md`, `groups.csv` and `series.csv`.
pub fn write_report(report: &ComparisonReport, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    fs::create_dir_all(dir).map_err(|e| out_err(dir, e))?;
    let files: [(&str, Vec<u8>); 4] = [
        ("comparison.csv", report.comparison_csv()?),
        ("comparison.md", report.markdown().into_bytes()),
        ("groups.csv", report.groups_csv()?),
        ("series.csv", report.series_csv()?),
    ];
    let mut written = Vec::new();
    for (name, bytes) in files {
        let path = dir.join(name);
        write_atomic(&path, &bytes)?;
        written.push(path);
    }
    Ok(written)
}
