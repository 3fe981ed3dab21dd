use serde::{Deserialize, Serialize};

use super::region::RegionQueue;
use super::strategies::{image_mean_scores, select_image_level, ObjectQueue};
use super::{Approach, CandidateTable, SelectionError, SelectionParams};
use crate::geometry::iou;
use crate::informativeness::{score_all, MethodKind};
use crate::oracle::{
    oracle_image_query, oracle_object_query, oracle_region_query, BudgetLedger, ChargeStatus,
    OracleResponse, QueryKind, OBJECT_IOU_THRESHOLD,
};
use crate::rng::{self, Domain};
use crate::scene::{CandidateId, CandidateObject, ImageId, ImageStatus, PoolState, SceneDataset};

/// Fixed inputs of one split's query loop.
#[derive(Debug, Clone, Copy)]
pub struct SplitContext<'a> {
    pub dataset: &'a SceneDataset,
    pub params: SelectionParams,
    /// Charge for an image query that finds nothing to label.
    pub empty_image_charge: u64,
    pub seed: u64,
    pub split: u64,
}

/// One query sent to the oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub kind: QueryKind,
    pub image_id: ImageId,
    /// Query candidate for object and region queries.
    pub query_id: Option<CandidateId>,
    pub member_ids: Vec<CandidateId>,
}

#[derive(Debug, Clone)]
pub struct SplitOutcome {
    pub ledger: BudgetLedger,
    pub queries: Vec<QueryRecord>,
    /// The loop ran out of candidates or images before spending the budget.
    pub truncated: bool,
    /// Candidates with their final consumption flags.
    pub candidates: Vec<CandidateObject>,
}

/// Runs one split: score the candidates, then query greedily until the
/// budget is spent or nothing selectable is left. Labels are applied to
/// `pool` after every interaction.
///
/// After an object or region query, the queried candidates and every
/// candidate of the same image overlapping a newly labeled box with IoU at
/// least [`OBJECT_IOU_THRESHOLD`] are consumed. Candidates in images that
/// have become fully labeled are skipped.
pub fn run_split(
    ctx: SplitContext<'_>,
    pool: &mut PoolState,
    candidates: Vec<CandidateObject>,
) -> Result<SplitOutcome, SelectionError> {
    ctx.params.validate()?;
    for c in &candidates {
        if ctx.dataset.image(c.image_id).is_none() {
            return Err(SelectionError::UnknownImage(c.image_id));
        }
    }
    let mut table = CandidateTable::new(candidates)?;
    let psi = match ctx.params.method {
        MethodKind::Random => vec![0.0; table.len()],
        m => score_all(table.items(), m, ctx.seed, ctx.split)?,
    };
    let mut run = Loop {
        ctx,
        ledger: BudgetLedger::new(ctx.params.budget),
        queries: Vec::new(),
    };
    let truncated = match ctx.params.approach {
        Approach::ImageLevel => run.image_level(pool, &table, &psi)?,
        Approach::ObjectLevel => run.object_level(pool, &mut table, &psi)?,
        Approach::Real => run.region_level(pool, &mut table, &psi)?,
    };
    Ok(SplitOutcome {
        ledger: run.ledger,
        queries: run.queries,
        truncated,
        candidates: table.into_items(),
    })
}

struct Loop<'a> {
    ctx: SplitContext<'a>,
    ledger: BudgetLedger,
    queries: Vec<QueryRecord>,
}

impl Loop<'_> {
    fn record(
        &mut self,
        pool: &mut PoolState,
        response: OracleResponse,
        query: QueryRecord,
    ) -> Result<ChargeStatus, SelectionError> {
        let dataset = self.ctx.dataset;
        if response.query_kind == QueryKind::Image && response.is_background() {
            pool.mark_verified_empty(response.image_id, dataset)?;
        }
        pool.apply_labels(&response.returned_gt_ids, dataset)?;
        self.queries.push(query);
        Ok(self.ledger.charge(response, dataset)?)
    }

    fn image_level(
        &mut self,
        pool: &mut PoolState,
        table: &CandidateTable,
        psi: &[f64],
    ) -> Result<bool, SelectionError> {
        let means = image_mean_scores(table, psi);
        let mut rng = rng::substream(self.ctx.seed, Domain::ImageRandom, &[self.ctx.split]);
        while !self.ledger.is_complete() {
            let image_id = match select_image_level(pool, &means, self.ctx.params.method, &mut rng) {
                Ok(id) => id,
                Err(SelectionError::Exhausted) => return Ok(true),
                Err(e) => return Err(e),
            };
            let image = self
                .ctx
                .dataset
                .image(image_id)
                .ok_or(SelectionError::UnknownImage(image_id))?;
            let response = oracle_image_query(image, self.ctx.dataset, pool, self.ctx.empty_image_charge)?;
            let query = QueryRecord {
                kind: QueryKind::Image,
                image_id,
                query_id: None,
                member_ids: Vec::new(),
            };
            self.record(pool, response, query)?;
        }
        Ok(false)
    }

    fn object_level(
        &mut self,
        pool: &mut PoolState,
        table: &mut CandidateTable,
        psi: &[f64],
    ) -> Result<bool, SelectionError> {
        let mut queue = ObjectQueue::new(table, psi);
        while !self.ledger.is_complete() {
            let Some(pos) = queue.next(table) else {
                return Ok(true);
            };
            let cand = &table.items()[pos];
            let (id, image_id, bbox) = (cand.id, cand.image_id, cand.bbox);
            if pool.status(image_id) == Some(ImageStatus::Full) {
                table.consume(pos);
                continue;
            }
            let image = self.ctx.dataset.image(image_id).expect("checked in run_split");
            let response = oracle_object_query(&bbox, image, self.ctx.dataset, pool);
            table.consume(pos);
            consume_overlapping(table, self.ctx.dataset, &response);
            let query = QueryRecord {
                kind: QueryKind::Object,
                image_id,
                query_id: Some(id),
                member_ids: vec![id],
            };
            self.record(pool, response, query)?;
        }
        Ok(false)
    }

    fn region_level(
        &mut self,
        pool: &mut PoolState,
        table: &mut CandidateTable,
        psi: &[f64],
    ) -> Result<bool, SelectionError> {
        let dataset = self.ctx.dataset;
        let params = self.ctx.params;
        let mut queue = RegionQueue::build(
            table,
            psi,
            |img| dataset.image(img).map(|i| i.extent),
            params.alpha,
            params.beta,
        )?;
        while !self.ledger.is_complete() {
            let Some(region) = queue.pop_best(table, psi) else {
                return Ok(true);
            };
            let positions: Vec<usize> = region
                .member_ids
                .iter()
                .map(|id| table.position(*id).expect("region members come from the table"))
                .collect();
            if pool.status(region.image_id) == Some(ImageStatus::Full) {
                positions.iter().for_each(|&p| table.consume(p));
                continue;
            }
            let image = dataset.image(region.image_id).expect("checked in run_split");
            let response = oracle_region_query(&region.bounds, image, dataset, pool);
            positions.iter().for_each(|&p| table.consume(p));
            consume_overlapping(table, dataset, &response);
            let query = QueryRecord {
                kind: QueryKind::Region,
                image_id: region.image_id,
                query_id: Some(region.query_id),
                member_ids: region.member_ids,
            };
            self.record(pool, response, query)?;
        }
        Ok(false)
    }
}

fn consume_overlapping(table: &mut CandidateTable, dataset: &SceneDataset, response: &OracleResponse) {
    if response.returned_gt_ids.is_empty() {
        return;
    }
    let boxes: Vec<_> = response
        .returned_gt_ids
        .iter()
        .filter_map(|id| dataset.annotation(*id).map(|a| a.bbox))
        .collect();
    let members: Vec<usize> = table.image_members(response.image_id).to_vec();
    for pos in members {
        if table.is_consumed(pos) {
            continue;
        }
        let b = table.items()[pos].bbox;
        if boxes.iter().any(|g| iou(&b, g) >= OBJECT_IOU_THRESHOLD) {
            table.consume(pos);
        }
    }
}
