//! Incremental model refresh on streamed interactions.
//!
//! Each ingested (u, i) pair inserts the interaction at weight `w_new`,
//! re-optimizes only `p_u` and `q_i` with the element-wise rules, and keeps
//! the Gram caches in sync through rank-one updates, so an event costs
//! `O(K^2 + (|R_u| + |R_i|) K)` regardless of the total interaction count.
//! The offline confidence vector is frozen: items first seen online carry
//! zero missing-data confidence until caches are rebuilt offline.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ingest::InteractionDataset;
use crate::linalg::dot;
use crate::model::{fill_uniform, FactorModel};
use crate::weighting::ConfidenceWeights;

/// Full cache rebuild cadence, a safety net against rank-one drift.
const RECOMPUTE_INTERVAL: u64 = 100_000;

#[derive(Debug, Clone)]
pub struct OnlineConfig {
    /// Weight assigned to a freshly streamed interaction.
    pub w_new: f64,
    /// Local optimization passes per event.
    pub online_iters: usize,
    pub seed: u64,
    /// Upper bound of the uniform init range for rows of brand-new users and
    /// items. Zero disables randomization (useful for cold-start analysis).
    pub init_scale: f64,
    pub lambda: f64,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        OnlineConfig {
            w_new: 4.0,
            online_iters: 1,
            seed: 0,
            init_scale: 0.01,
            lambda: 0.01,
        }
    }
}

/// What happens to a streamed interaction whose (u, i) pair is already
/// observed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RepeatPolicy {
    Insert,
    Reweight,
}

/// Decides whether a streamed (u, i) inserts a fresh entry or reweights an
/// existing one.
pub fn repeat_interaction_policy(train: &InteractionDataset, u: u32, i: u32) -> RepeatPolicy {
    if (u as usize) < train.num_users() && (i as usize) < train.num_items() && train.is_observed(u as usize, i)
    {
        RepeatPolicy::Reweight
    } else {
        RepeatPolicy::Insert
    }
}

/// Serialized single-writer online updater. Owns the RNG used for new-row
/// initialization and the ingest counter that drives periodic full cache
/// rebuilds.
pub struct OnlineUpdater {
    pub cfg: OnlineConfig,
    rng: ChaCha8Rng,
    ingests: u64,
}

impl OnlineUpdater {
    pub fn new(cfg: OnlineConfig) -> Self {
        assert!(cfg.w_new > 0.0, "w_new must be positive");
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        OnlineUpdater { cfg, rng, ingests: 0 }
    }

    /// Resolves `key` to a dense user id, appending a randomly initialized
    /// row (and an empty dataset row) for unseen users. A new row
    /// contributes a rank-one term to `sp`.
    pub fn ensure_user(
        &mut self,
        model: &mut FactorModel,
        train: &mut InteractionDataset,
        key: &str,
    ) -> u32 {
        if let Some(id) = train.user_id(key) {
            return id;
        }
        let id = train.append_user(key);
        let k = model.factors;
        let mut row = vec![0.0; k];
        fill_uniform(&mut row, &mut self.rng, self.cfg.init_scale);
        for a in 0..k {
            for b in 0..k {
                model.sp[a * k + b] += row[a] * row[b];
            }
        }
        model.user_factors.extend_from_slice(&row);
        model.pred.push(Vec::new());
        id
    }

    /// Item-side counterpart of [`OnlineUpdater::ensure_user`]. The new item
    /// gets zero confidence, so `sq` is unchanged.
    pub fn ensure_item(
        &mut self,
        model: &mut FactorModel,
        train: &mut InteractionDataset,
        weights: &mut ConfidenceWeights,
        key: &str,
    ) -> u32 {
        if let Some(id) = train.item_id(key) {
            return id;
        }
        let id = train.append_item(key);
        let k = model.factors;
        let mut row = vec![0.0; k];
        fill_uniform(&mut row, &mut self.rng, self.cfg.init_scale);
        model.item_factors.extend_from_slice(&row);
        weights.push_new_item();
        id
    }

    /// Ingests one streamed interaction by opaque keys.
    pub fn ingest(
        &mut self,
        model: &mut FactorModel,
        train: &mut InteractionDataset,
        weights: &mut ConfidenceWeights,
        user_key: &str,
        item_key: &str,
        ts: i64,
    ) {
        let u = self.ensure_user(model, train, user_key);
        let i = self.ensure_item(model, train, weights, item_key);
        self.ingest_ids(model, train, weights, u, i, ts);
    }

    /// Ingests one streamed interaction with already-resolved dense ids
    /// (rows must exist).
    pub fn ingest_ids(
        &mut self,
        model: &mut FactorModel,
        train: &mut InteractionDataset,
        weights: &mut ConfidenceWeights,
        u: u32,
        i: u32,
        ts: i64,
    ) {
        let k = model.factors;
        match repeat_interaction_policy(train, u, i) {
            RepeatPolicy::Reweight => {
                let pos = train.find_in_row(u as usize, i).expect("observed pair");
                let old_w = train.user_row(u as usize)[pos].weight;
                train.reweight(u, i, old_w.max(self.cfg.w_new), ts);
            }
            RepeatPolicy::Insert => {
                let pos = train.insert(u, i, self.cfg.w_new, ts);
                let rhat = dot(model.user_vec(u as usize), model.item_vec(i as usize));
                model.pred[u as usize].insert(pos, rhat);
            }
        }

        for _ in 0..self.cfg.online_iters {
            // user step + rank-one sp maintenance
            let old_pu = model.user_vec(u as usize).to_vec();
            for f in 0..k {
                crate::eals::update_user_factor(model, u as usize, f, train, weights, self.cfg.lambda);
            }
            let new_pu = model.user_vec(u as usize).to_vec();
            rank_one_swap(&mut model.sp, &old_pu, &new_pu, 1.0, k);

            // item step + rank-one sq maintenance at confidence c_i
            let old_qi = model.item_vec(i as usize).to_vec();
            for f in 0..k {
                crate::eals::update_item_factor(model, i as usize, f, train, weights, self.cfg.lambda);
            }
            let ci = weights.c[i as usize];
            if ci != 0.0 {
                let new_qi = model.item_vec(i as usize).to_vec();
                rank_one_swap(&mut model.sq, &old_qi, &new_qi, ci, k);
            }
        }

        self.ingests += 1;
        if self.ingests % RECOMPUTE_INTERVAL == 0 {
            model.recompute_caches(weights);
            model.refresh_prediction_cache(train);
        }
    }
}

/// `s += coef * (new new^T - old old^T)`, fused per element to limit drift.
fn rank_one_swap(s: &mut [f64], old: &[f64], new: &[f64], coef: f64, k: usize) {
    for a in 0..k {
        for b in 0..k {
            s[a * k + b] += coef * (new[a] * new[b] - old[a] * old[b]);
        }
    }
}
