use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use super::{better, CandidateTable, SelectionError};
use crate::geometry::{contained_in, context_window, enclosing_box, Box, ImageExtent};
use crate::informativeness::cosine_similarity;
use crate::scene::{CandidateId, ImageId};

/// A query candidate plus the dissimilar neighbours inside its context
/// window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub query_id: CandidateId,
    pub image_id: ImageId,
    /// All members including the query, ascending.
    pub member_ids: Vec<CandidateId>,
    /// Minimum box enclosing every member box.
    pub bounds: Box,
    pub score: f64,
}

/// Neighbours of the query at `query_pos` that join its region, ascending by
/// id, with their similarity to the query.
fn admitted_neighbours(
    query_pos: usize,
    table: &CandidateTable,
    extent: ImageExtent,
    alpha: f64,
    beta: f64,
) -> Result<Vec<(usize, f64)>, SelectionError> {
    let query = &table.items()[query_pos];
    let window = context_window(&query.bbox, extent, beta);
    let mut out = Vec::new();
    for &pos in table.image_members(query.image_id) {
        if pos == query_pos || table.is_consumed(pos) {
            continue;
        }
        let other = &table.items()[pos];
        if !contained_in(&other.bbox, &window) {
            continue;
        }
        let sim = cosine_similarity(&query.feature, &other.feature)?;
        if sim < alpha {
            out.push((pos, sim));
        }
    }
    Ok(out)
}

fn make_region(
    query_pos: usize,
    neighbours: &[usize],
    table: &CandidateTable,
    score: f64,
) -> Region {
    let items = table.items();
    let query = &items[query_pos];
    let mut member_ids: Vec<CandidateId> = neighbours.iter().map(|&p| items[p].id).collect();
    member_ids.push(query.id);
    member_ids.sort_unstable();
    let bounds = enclosing_box(
        std::iter::once(&query.bbox).chain(neighbours.iter().map(|&p| &items[p].bbox)),
    )
    .expect("region always holds its query");
    Region {
        query_id: query.id,
        image_id: query.image_id,
        member_ids,
        bounds,
        score,
    }
}

/// Builds the region around the candidate at `query_pos`: unconsumed
/// candidates of the same image that lie fully inside the query's context
/// window and whose feature similarity to the query is below `alpha`.
///
/// The returned region's `score` is zero; see [`region_score`].
pub fn build_region(
    query_pos: usize,
    table: &CandidateTable,
    extent: ImageExtent,
    alpha: f64,
    beta: f64,
) -> Result<Region, SelectionError> {
    let neighbours: Vec<usize> = admitted_neighbours(query_pos, table, extent, alpha, beta)?
        .into_iter()
        .map(|(p, _)| p)
        .collect();
    Ok(make_region(query_pos, &neighbours, table, 0.0))
}

/// `psi(query) + sum over other members of psi(n) * (1 - sim(query, n))`,
/// summed in ascending member id. `psi` is indexed by table position.
pub fn region_score(region: &Region, table: &CandidateTable, psi: &[f64]) -> Result<f64, SelectionError> {
    let qpos = table
        .position(region.query_id)
        .ok_or(SelectionError::UnknownCandidate(region.query_id))?;
    let query = &table.items()[qpos];
    let mut score = psi[qpos];
    for &id in &region.member_ids {
        if id == region.query_id {
            continue;
        }
        let pos = table.position(id).ok_or(SelectionError::UnknownCandidate(id))?;
        let sim = cosine_similarity(&query.feature, &table.items()[pos].feature)?;
        score += psi[pos] * (1.0 - sim);
    }
    Ok(score)
}

fn accumulate(query_psi: f64, neighbours: &[(usize, f64)], psi: &[f64]) -> f64 {
    neighbours
        .iter()
        .fold(query_psi, |acc, &(pos, sim)| acc + psi[pos] * (1.0 - sim))
}

fn check_psi(table: &CandidateTable, psi: &[f64]) -> Result<(), SelectionError> {
    if psi.len() != table.len() {
        return Err(SelectionError::ScoreCount {
            scores: psi.len(),
            candidates: table.len(),
        });
    }
    Ok(())
}

/// Builds a region for every unconsumed candidate, scores each and returns
/// the best. Ties go to the lowest query id.
pub fn select_region_level<E>(
    table: &CandidateTable,
    psi: &[f64],
    extent_of: E,
    alpha: f64,
    beta: f64,
) -> Result<Region, SelectionError>
where
    E: Fn(ImageId) -> Option<ImageExtent>,
{
    check_psi(table, psi)?;
    type Best = (f64, usize, Vec<(usize, f64)>);
    let mut best: Option<Best> = None;
    for qpos in table.unconsumed() {
        let query = &table.items()[qpos];
        let extent = extent_of(query.image_id).ok_or(SelectionError::UnknownImage(query.image_id))?;
        let neighbours = admitted_neighbours(qpos, table, extent, alpha, beta)?;
        let score = accumulate(psi[qpos], &neighbours, psi);
        let wins = match &best {
            None => true,
            Some((bs, bpos, _)) => better(score, query.id.0, *bs, table.items()[*bpos].id.0),
        };
        if wins {
            best = Some((score, qpos, neighbours));
        }
    }
    let (score, qpos, neighbours) = best.ok_or(SelectionError::Exhausted)?;
    let positions: Vec<usize> = neighbours.iter().map(|&(p, _)| p).collect();
    Ok(make_region(qpos, &positions, table, score))
}

struct Entry {
    query: usize,
    neighbours: Vec<(usize, f64)>,
}

#[derive(Debug, PartialEq)]
struct Key {
    score: f64,
    query_id: u64,
    entry: usize,
}

impl Eq for Key {}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.query_id.cmp(&self.query_id))
    }
}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Regions built once per split, then repeatedly selected as candidates get
/// consumed.
///
/// After a query, regions whose query is consumed disappear and consumed
/// members are dropped from the rest, lowering their scores. Scores can only
/// fall (informativeness is nonnegative and similarity at most one), so a
/// lazily re-scored max-heap returns the same region an exhaustive rescan
/// would.
pub struct RegionQueue {
    entries: Vec<Entry>,
    heap: BinaryHeap<Key>,
}

impl RegionQueue {
    pub fn build<E>(
        table: &CandidateTable,
        psi: &[f64],
        extent_of: E,
        alpha: f64,
        beta: f64,
    ) -> Result<Self, SelectionError>
    where
        E: Fn(ImageId) -> Option<ImageExtent>,
    {
        check_psi(table, psi)?;
        if let Some(bad) = psi.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
            return Err(SelectionError::InvalidParameter(format!(
                "region scoring needs finite nonnegative informativeness, got {bad}"
            )));
        }
        let mut entries = Vec::new();
        let mut heap = BinaryHeap::new();
        for qpos in table.unconsumed() {
            let query = &table.items()[qpos];
            let extent =
                extent_of(query.image_id).ok_or(SelectionError::UnknownImage(query.image_id))?;
            let neighbours = admitted_neighbours(qpos, table, extent, alpha, beta)?;
            heap.push(Key {
                score: accumulate(psi[qpos], &neighbours, psi),
                query_id: query.id.0,
                entry: entries.len(),
            });
            entries.push(Entry {
                query: qpos,
                neighbours,
            });
        }
        Ok(Self { entries, heap })
    }

    /// Number of regions whose query has not been consumed (upper bound).
    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Removes and returns the best region under the current consumption
    /// state, or `None` when every query is consumed.
    pub fn pop_best(&mut self, table: &CandidateTable, psi: &[f64]) -> Option<Region> {
        while let Some(key) = self.heap.pop() {
            let entry = &mut self.entries[key.entry];
            if table.is_consumed(entry.query) {
                continue;
            }
            if entry.neighbours.iter().any(|&(p, _)| table.is_consumed(p)) {
                entry.neighbours.retain(|&(p, _)| !table.is_consumed(p));
                self.heap.push(Key {
                    score: accumulate(psi[entry.query], &entry.neighbours, psi),
                    ..key
                });
                continue;
            }
            let positions: Vec<usize> = entry.neighbours.iter().map(|&(p, _)| p).collect();
            return Some(make_region(entry.query, &positions, table, key.score));
        }
        None
    }
}
