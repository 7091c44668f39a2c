//! HR@k / NDCG@k metrics and the two experimental protocols: the offline
//! leave-one-out scan and the online stream with per-event incremental
//! updates and a history-length breakdown.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::ingest::SplitPair;
use crate::model::{FactorModel, RankedList};
use crate::online::{OnlineConfig, OnlineUpdater};
use crate::weighting::ConfidenceWeights;

/// One scored test interaction. `rank` is the 1-based position of the
/// ground-truth item in the full ranking (None when it was filtered out),
/// `history_len` the user's observed interaction count at scoring time.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EventRecord {
    pub user: u32,
    pub item: u32,
    pub rank: Option<u32>,
    pub hit: bool,
    pub ndcg: f64,
    pub history_len: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub cutoff: usize,
    pub events: Vec<EventRecord>,
    pub mean_hr: f64,
    pub mean_ndcg: f64,
    /// Test events whose user or item is unknown to the model, skipped
    /// (cannot occur under leave-one-out).
    pub skipped_unknown: usize,
}

/// Aggregates over events grouped by user history length at scoring time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BreakdownBucket {
    pub history_len: u32,
    pub events: usize,
    pub mean_hr: f64,
    pub mean_ndcg: f64,
}

impl EvalReport {
    fn from_events(events: Vec<EventRecord>, cutoff: usize, skipped: usize) -> Self {
        let n = events.len().max(1) as f64;
        let mean_hr = events.iter().filter(|e| e.hit).count() as f64 / n;
        let mean_ndcg = events.iter().map(|e| e.ndcg).sum::<f64>() / n;
        EvalReport {
            cutoff,
            events,
            mean_hr,
            mean_ndcg,
            skipped_unknown: skipped,
        }
    }

    /// Per-history-length aggregates, sorted by history length.
    pub fn history_breakdown(&self) -> Vec<BreakdownBucket> {
        let mut buckets: std::collections::BTreeMap<u32, (usize, usize, f64)> =
            std::collections::BTreeMap::new();
        for e in &self.events {
            let b = buckets.entry(e.history_len).or_insert((0, 0, 0.0));
            b.0 += 1;
            if e.hit {
                b.1 += 1;
            }
            b.2 += e.ndcg;
        }
        buckets
            .into_iter()
            .map(|(len, (n, hits, ndcg))| BreakdownBucket {
                history_len: len,
                events: n,
                mean_hr: hits as f64 / n as f64,
                mean_ndcg: ndcg / n as f64,
            })
            .collect()
    }
}

/// 1 iff the ground-truth item appears within the first `cutoff` entries.
pub fn hit_ratio(ranked: &RankedList, gt: u32, cutoff: usize) -> u8 {
    ranked
        .items
        .iter()
        .take(cutoff)
        .any(|&(i, _)| i == gt) as u8
}

/// Single-relevant-item NDCG: `1 / log2(pos + 1)` for a hit at 1-based
/// position `pos` within the cutoff, else 0 (the ideal DCG is 1).
pub fn ndcg(ranked: &RankedList, gt: u32, cutoff: usize) -> f64 {
    match ranked.items.iter().take(cutoff).position(|&(i, _)| i == gt) {
        Some(zero_based) => ndcg_at_rank(zero_based + 1),
        None => 0.0,
    }
}

fn ndcg_at_rank(pos: usize) -> f64 {
    1.0 / ((pos as f64) + 1.0).log2()
}

fn score_rank(rank: Option<usize>, cutoff: usize) -> (bool, f64) {
    match rank {
        Some(pos) if pos <= cutoff => (true, ndcg_at_rank(pos)),
        _ => (false, 0.0),
    }
}

/// Offline protocol: score each held-out interaction against the full item
/// ranking. By default training items are not excluded from the ranked list.
pub fn evaluate_offline(
    model: &FactorModel,
    split: &SplitPair,
    cutoff: usize,
    exclude_train: bool,
) -> Result<EvalReport> {
    let mut events = Vec::with_capacity(split.test.len());
    let mut skipped = 0usize;
    for held in &split.test {
        let u = held.user as usize;
        if u >= model.num_users() || held.item as usize >= model.num_items() {
            skipped += 1;
            continue;
        }
        let exclude = exclude_train.then_some(&split.train);
        let rank = model.rank_of(u, held.item, exclude)?;
        let (hit, nd) = score_rank(rank, cutoff);
        events.push(EventRecord {
            user: held.user,
            item: held.item,
            rank: rank.map(|r| r as u32),
            hit,
            ndcg: nd,
            history_len: split.train.user_row(u).len() as u32,
        });
    }
    Ok(EvalReport::from_events(events, cutoff, skipped))
}

/// Online protocol: for each chronological test event, rows for unseen
/// users/items are appended first (so a first event is scored with a random
/// row), the event is scored, then fed to the incremental updater. Mutates
/// the split's training data, the weights, and the model.
pub fn evaluate_online(
    model: &mut FactorModel,
    split: &mut SplitPair,
    weights: &mut ConfidenceWeights,
    cfg: &OnlineConfig,
    cutoff: usize,
) -> Result<EvalReport> {
    let mut updater = OnlineUpdater::new(cfg.clone());
    let mut events = Vec::with_capacity(split.test.len());
    let test = std::mem::take(&mut split.test);
    for held in &test {
        let u = updater.ensure_user(model, &mut split.train, &split.user_keys[held.user as usize]);
        let i = updater.ensure_item(
            model,
            &mut split.train,
            weights,
            &split.item_keys[held.item as usize],
        );
        debug_assert_eq!(u, held.user);
        debug_assert_eq!(i, held.item);
        let history_len = split.train.user_row(u as usize).len() as u32;
        let rank = model.rank_of(u as usize, i, None)?;
        let (hit, nd) = score_rank(rank, cutoff);
        events.push(EventRecord {
            user: u,
            item: i,
            rank: rank.map(|r| r as u32),
            hit,
            ndcg: nd,
            history_len,
        });
        if cfg.online_iters > 0 {
            updater.ingest_ids(model, &mut split.train, weights, u, i, held.ts);
        } else {
            // updates disabled: the protocol degenerates to a pure scan
            updater.ingest_ids(model, &mut split.train, weights, u, i, held.ts);
        }
    }
    split.test = test;
    Ok(EvalReport::from_events(events, cutoff, 0))
}
