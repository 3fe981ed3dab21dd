use std::collections::BTreeMap;

use rand::Rng;

use super::{better, CandidateTable, SelectionError};
use crate::informativeness::MethodKind;
use crate::scene::{CandidateId, ImageId, PoolState};

/// Highest-scoring unconsumed candidate; ties go to the lowest id.
pub fn select_object_level(table: &CandidateTable, psi: &[f64]) -> Result<CandidateId, SelectionError> {
    if psi.len() != table.len() {
        return Err(SelectionError::ScoreCount {
            scores: psi.len(),
            candidates: table.len(),
        });
    }
    let mut best: Option<usize> = None;
    for pos in table.unconsumed() {
        let id = table.items()[pos].id.0;
        if best.is_none_or(|b| better(psi[pos], id, psi[b], table.items()[b].id.0)) {
            best = Some(pos);
        }
    }
    best.map(|p| table.items()[p].id).ok_or(SelectionError::Exhausted)
}

/// Candidates in descending score order (ties by id), walked once per split
/// while skipping anything consumed along the way. Yields the same sequence
/// as calling [`select_object_level`] after every consumption.
pub struct ObjectQueue {
    order: Vec<usize>,
    cursor: usize,
}

impl ObjectQueue {
    pub fn new(table: &CandidateTable, psi: &[f64]) -> Self {
        let mut order: Vec<usize> = table.unconsumed().collect();
        order.sort_by(|&a, &b| {
            psi[b]
                .total_cmp(&psi[a])
                .then_with(|| table.items()[a].id.cmp(&table.items()[b].id))
        });
        Self { order, cursor: 0 }
    }

    pub fn next(&mut self, table: &CandidateTable) -> Option<usize> {
        while let Some(&pos) = self.order.get(self.cursor) {
            self.cursor += 1;
            if !table.is_consumed(pos) {
                return Some(pos);
            }
        }
        None
    }
}

/// Mean candidate score per image.
pub fn image_mean_scores(table: &CandidateTable, psi: &[f64]) -> BTreeMap<ImageId, f64> {
    table
        .images()
        .map(|img| {
            let members = table.image_members(img);
            let sum: f64 = members.iter().map(|&p| psi[p]).sum();
            (img, sum / members.len() as f64)
        })
        .collect()
}

/// Chooses the next image to label exhaustively from the unlabeled images.
/// Once none are left, partially labeled images become eligible so the pool
/// can still be exhausted.
///
/// MaxEnt takes the highest mean score; images without candidates rank below
/// every scored image. Random draws uniformly from `rng`. Ties go to the
/// lowest image id.
pub fn select_image_level<R: Rng + ?Sized>(
    pool: &PoolState,
    mean_scores: &BTreeMap<ImageId, f64>,
    method: MethodKind,
    rng: &mut R,
) -> Result<ImageId, SelectionError> {
    let eligible = if pool.unlabeled_image_ids().is_empty() {
        pool.partial_image_ids()
    } else {
        pool.unlabeled_image_ids()
    };
    if eligible.is_empty() {
        return Err(SelectionError::Exhausted);
    }
    match method {
        MethodKind::Random => {
            let k = rng.random_range(0..eligible.len());
            Ok(*eligible.iter().nth(k).expect("index within set"))
        }
        MethodKind::MaxEnt => {
            let mut best: Option<(f64, ImageId)> = None;
            for &img in eligible {
                let s = mean_scores.get(&img).copied().unwrap_or(f64::NEG_INFINITY);
                if best.is_none_or(|(bs, bid)| better(s, img.0, bs, bid.0)) {
                    best = Some((s, img));
                }
            }
            Ok(best.expect("eligible is nonempty").1)
        }
        other => Err(SelectionError::InvalidPairing {
            approach: super::Approach::ImageLevel,
            method: other,
        }),
    }
}
