use serde::{Deserialize, Serialize};

use crate::scene::{CategoryId, SceneDataset};

/// How many categories each of the top, middle and bottom groups holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupRule {
    pub n_categories: usize,
    pub group_size: usize,
}

impl GroupRule {
    /// Ten per group when there are at least 30 categories. Otherwise each
    /// group takes the same share that ten of 35 categories would, rounded,
    /// at least one and at most a third of the categories.
    pub fn for_categories(n: usize) -> Self {
        let group_size = if n >= 30 {
            10
        } else {
            ((n as f64 * 10.0 / 35.0).round() as usize).clamp(1, (n / 3).max(1))
        };
        Self {
            n_categories: n,
            group_size: group_size.min(n),
        }
    }

    /// First rank (0-based) of the middle group: centred, rounding down.
    pub fn middle_start(&self) -> usize {
        (self.n_categories - self.group_size) / 2
    }

    pub fn describe(&self) -> String {
        let g = self.group_size;
        let n = self.n_categories;
        let m = self.middle_start();
        format!(
            "categories ranked by instance count (descending, ties by id); top = ranks 1-{g}, middle = ranks {}-{}, bottom = ranks {}-{n} of {n}",
            m + 1,
            m + g,
            n - g + 1
        )
    }
}

/// Dense category indices ordered by instance count, most common first;
/// ties go to the lower category id.
pub fn category_ranking(dataset: &SceneDataset) -> Vec<usize> {
    let cats = dataset.categories();
    let mut order: Vec<usize> = (0..cats.len()).collect();
    order.sort_by(|&a, &b| {
        cats[b]
            .instance_count
            .cmp(&cats[a].instance_count)
            .then(cats[a].id.cmp(&cats[b].id))
    });
    order
}

/// The rarest tenth of the categories (rounded up).
pub fn rare_categories(dataset: &SceneDataset) -> Vec<usize> {
    let ranking = category_ranking(dataset);
    let n = ranking.len().div_ceil(10);
    ranking[ranking.len() - n..].to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStat {
    pub categories: Vec<CategoryId>,
    pub labeled: u64,
    pub total: u64,
    pub labeled_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupBreakdown {
    pub top: GroupStat,
    pub middle: GroupStat,
    pub bottom: GroupStat,
}

pub fn percent(labeled: u64, total: u64) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * labeled as f64 / total as f64
    }
}

fn group_stat(dataset: &SceneDataset, members: &[usize], labeled: &[u64]) -> GroupStat {
    let cats = dataset.categories();
    let lab: u64 = members.iter().map(|&i| labeled[i]).sum();
    let total: u64 = members.iter().map(|&i| cats[i].instance_count as u64).sum();
    GroupStat {
        categories: members.iter().map(|&i| cats[i].id).collect(),
        labeled: lab,
        total,
        labeled_pct: percent(lab, total),
    }
}

/// Labeled-% of the top, middle and bottom category groups.
/// `labeled_per_category` is in dense category order.
pub fn compute_group_breakdown(dataset: &SceneDataset, labeled_per_category: &[u64]) -> GroupBreakdown {
    let ranking = category_ranking(dataset);
    let rule = GroupRule::for_categories(ranking.len());
    let g = rule.group_size;
    let m = rule.middle_start();
    GroupBreakdown {
        top: group_stat(dataset, &ranking[..g], labeled_per_category),
        middle: group_stat(dataset, &ranking[m..m + g], labeled_per_category),
        bottom: group_stat(dataset, &ranking[ranking.len() - g..], labeled_per_category),
    }
}

/// Mean and sample standard deviation; a single value has deviation zero.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}
