//! Fast element-wise ALS: exact coordinate descent over single latent
//! coordinates, accelerated by the K x K Gram caches and the observed-entry
//! prediction cache, plus the slow reference oracles used to verify it.
//!
//! The fast update for `p_uf` is
//!
//! ```text
//! p_uf = [ sum_{i in R_u} (w r - (w - c_i) rf) q_if - sum_{k != f} p_uk sq[k][f] ]
//!        / [ sum_{i in R_u} (w - c_i) q_if^2 + sq[f][f] + lambda ]
//! ```
//!
//! with `rf = rhat - p_uf q_if` read from the prediction cache in O(1); the
//! item rule is symmetric with the confidence `c_i` scaling the cache terms.
//! The naive oracles evaluate the same minimizers by direct sums over the
//! full item (user) axis and exist purely for verification.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Entry, InteractionDataset};
use crate::linalg::dot;
use crate::model::{compute_item_gram, compute_user_gram, FactorModel};
use crate::parallel::{for_each_row, with_threads};
use crate::weighting::ConfidenceWeights;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub factors: usize,
    pub lambda: f64,
    pub max_iters: usize,
    /// Stop when the relative objective change drops below this.
    pub rel_tol: f64,
    pub seed: u64,
    pub threads: usize,
    /// Upper bound of the uniform initialization range.
    pub init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            factors: 64,
            lambda: 0.01,
            max_iters: 500,
            rel_tol: 1e-5,
            seed: 0,
            threads: 1,
            init_scale: 0.01,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.factors < 1 {
            return Err(Error::invalid("factor count must be >= 1"));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::invalid("lambda must be strictly positive"));
        }
        if self.threads < 1 {
            return Err(Error::invalid("thread count must be >= 1"));
        }
        if self.init_scale <= 0.0 {
            return Err(Error::invalid("init_scale must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct IterRecord {
    pub iter: usize,
    pub objective: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainTrace {
    pub records: Vec<IterRecord>,
}

/// One exact coordinate update of `p_uf`, maintaining the prediction cache
/// for row `u` (entries drop to `rf` during the update and are restored with
/// the new coordinate).
fn user_coordinate_update(
    p_row: &mut [f64],
    pred_row: &mut [f64],
    row: &[Entry],
    item_factors: &[f64],
    sq: &[f64],
    c: &[f64],
    lambda: f64,
    k: usize,
    f: usize,
) -> f64 {
    let puf = p_row[f];
    let mut numer = 0.0;
    let mut denom = 0.0;
    for (e, rhat) in row.iter().zip(pred_row.iter_mut()) {
        let i = e.id as usize;
        let qif = item_factors[i * k + f];
        let w = e.weight;
        let ci = c[i];
        let rf = *rhat - puf * qif;
        *rhat = rf;
        numer += (w - (w - ci) * rf) * qif; // w * r_ui with r_ui = 1
        denom += (w - ci) * qif * qif;
    }
    let mut cross = 0.0;
    for kk in 0..k {
        if kk != f {
            cross += p_row[kk] * sq[kk * k + f];
        }
    }
    // denominator stays >= lambda because sq[f][f] >= sum_{i in R_u} c_i q_if^2
    assert!(
        denom + sq[f * k + f] >= -1e-9,
        "negative eALS denominator: observed weights below confidences beyond cache bound"
    );
    let new = (numer - cross) / (denom + sq[f * k + f] + lambda);
    for (e, rhat) in row.iter().zip(pred_row.iter_mut()) {
        *rhat += new * item_factors[e.id as usize * k + f];
    }
    p_row[f] = new;
    new
}

/// One exact coordinate update of `q_if` over the gathered column
/// predictions (aligned with the item's column entries).
fn item_coordinate_update(
    q_row: &mut [f64],
    col_pred: &mut [f64],
    col: &[Entry],
    user_factors: &[f64],
    sp: &[f64],
    ci: f64,
    lambda: f64,
    k: usize,
    f: usize,
) -> f64 {
    let qif = q_row[f];
    let mut numer = 0.0;
    let mut denom = 0.0;
    for (e, rhat) in col.iter().zip(col_pred.iter_mut()) {
        let u = e.id as usize;
        let puf = user_factors[u * k + f];
        let w = e.weight;
        let rf = *rhat - qif * puf;
        *rhat = rf;
        numer += (w - (w - ci) * rf) * puf;
        denom += (w - ci) * puf * puf;
    }
    let mut cross = 0.0;
    for kk in 0..k {
        if kk != f {
            cross += q_row[kk] * sp[kk * k + f];
        }
    }
    assert!(
        denom + ci * sp[f * k + f] >= -1e-9,
        "negative eALS denominator in item update"
    );
    let new = (numer - cross * ci) / (denom + ci * sp[f * k + f] + lambda);
    for (e, rhat) in col.iter().zip(col_pred.iter_mut()) {
        *rhat += new * user_factors[e.id as usize * k + f];
    }
    q_row[f] = new;
    new
}

/// Applies the fast single-coordinate update for `(u, f)` on the model,
/// returning the new `p_uf`. Requires a current prediction cache for row `u`
/// and a current `sq` cache.
pub fn update_user_factor(
    model: &mut FactorModel,
    u: usize,
    f: usize,
    train: &InteractionDataset,
    weights: &ConfidenceWeights,
    lambda: f64,
) -> f64 {
    let k = model.factors;
    let row = train.user_row(u);
    let FactorModel { user_factors, item_factors, sq, pred, .. } = model;
    user_coordinate_update(
        &mut user_factors[u * k..(u + 1) * k],
        &mut pred[u],
        row,
        item_factors,
        sq,
        &weights.c,
        lambda,
        k,
        f,
    )
}

/// Applies the fast single-coordinate update for `(i, f)`, returning the new
/// `q_if`. Requires current predictions for column `i` and a current `sp`
/// cache. Prediction-cache entries for the column are updated in place.
pub fn update_item_factor(
    model: &mut FactorModel,
    i: usize,
    f: usize,
    train: &InteractionDataset,
    weights: &ConfidenceWeights,
    lambda: f64,
) -> f64 {
    let k = model.factors;
    let col = train.item_col(i);
    // gather column predictions out of the user-major cache
    let positions: Vec<usize> = col
        .iter()
        .map(|e| train.find_in_row(e.id as usize, i as u32).expect("transpose entry"))
        .collect();
    let mut col_pred: Vec<f64> = col
        .iter()
        .zip(&positions)
        .map(|(e, &pos)| model.pred[e.id as usize][pos])
        .collect();
    let FactorModel { user_factors, item_factors, sp, .. } = model;
    let new = item_coordinate_update(
        &mut item_factors[i * k..(i + 1) * k],
        &mut col_pred,
        col,
        user_factors,
        sp,
        weights.c[i],
        lambda,
        k,
        f,
    );
    for ((e, &pos), &v) in col.iter().zip(&positions).zip(&col_pred) {
        model.pred[e.id as usize][pos] = v;
    }
    new
}

/// One full eALS pass: rebuild `sq`, update all user coordinates (users then
/// factors ascending), rebuild `sp`, update all item coordinates. User and
/// item phases are partitioned across workers by row; results are
/// bit-identical for any thread count.
pub fn sweep(
    model: &mut FactorModel,
    train: &InteractionDataset,
    weights: &ConfidenceWeights,
    lambda: f64,
    threads: usize,
) {
    with_threads(threads, || sweep_in_pool(model, train, weights, lambda, threads > 1));
}

fn sweep_in_pool(
    model: &mut FactorModel,
    train: &InteractionDataset,
    weights: &ConfidenceWeights,
    lambda: f64,
    parallel: bool,
) {
    let k = model.factors;
    debug_assert_eq!(model.pred.len(), train.num_users());

    model.sq = compute_item_gram(&model.item_factors, &weights.c, k, parallel);
    {
        let FactorModel { user_factors, item_factors, sq, pred, .. } = model;
        let c = &weights.c;
        for_each_row(user_factors, pred, k, parallel, |u, p_row, pred_row| {
            let row = train.user_row(u);
            for f in 0..k {
                user_coordinate_update(p_row, pred_row, row, item_factors, sq, c, lambda, k, f);
            }
        });
    }

    model.sp = compute_user_gram(&model.user_factors, k, parallel);
    // column-major view of the prediction cache for the item phase
    let positions: Vec<Vec<usize>> = (0..train.num_items())
        .map(|i| {
            train
                .item_col(i)
                .iter()
                .map(|e| train.find_in_row(e.id as usize, i as u32).expect("transpose entry"))
                .collect()
        })
        .collect();
    let mut col_pred: Vec<Vec<f64>> = (0..train.num_items())
        .map(|i| {
            train
                .item_col(i)
                .iter()
                .zip(&positions[i])
                .map(|(e, &pos)| model.pred[e.id as usize][pos])
                .collect()
        })
        .collect();
    {
        let FactorModel { user_factors, item_factors, sp, .. } = model;
        let c = &weights.c;
        for_each_row(item_factors, &mut col_pred, k, parallel, |i, q_row, cp| {
            let col = train.item_col(i);
            for f in 0..k {
                item_coordinate_update(q_row, cp, col, user_factors, sp, c[i], lambda, k, f);
            }
        });
    }
    for i in 0..train.num_items() {
        for ((e, &pos), &v) in train.item_col(i).iter().zip(&positions[i]).zip(&col_pred[i]) {
            model.pred[e.id as usize][pos] = v;
        }
    }
}

/// Full eALS training: random init, sweeps until the relative objective
/// change drops below `rel_tol` or `max_iters` is reached.
pub fn train(
    train_data: &InteractionDataset,
    weights: &ConfidenceWeights,
    cfg: &TrainConfig,
) -> Result<(FactorModel, TrainTrace)> {
    cfg.validate()?;
    let mut model = FactorModel::init(
        train_data.num_users(),
        train_data.num_items(),
        cfg.factors,
        cfg.seed,
        cfg.init_scale,
    );
    model.refresh_prediction_cache(train_data);
    model.recompute_caches(weights);

    let mut trace = TrainTrace::default();
    let mut prev = objective_fast(&model, train_data, weights, cfg.lambda);
    for iter in 1..=cfg.max_iters {
        let t0 = Instant::now();
        sweep(&mut model, train_data, weights, cfg.lambda, cfg.threads);
        model.recompute_caches(weights);
        let objective = objective_fast(&model, train_data, weights, cfg.lambda);
        trace.records.push(IterRecord {
            iter,
            objective,
            seconds: t0.elapsed().as_secs_f64(),
        });
        if prev > 0.0 && ((objective - prev).abs() / prev) < cfg.rel_tol {
            break;
        }
        prev = objective;
    }
    Ok((model, trace))
}

/// Weighted objective via the cache identity
/// `sum_u sum_{i not in R_u} c_i rhat^2 = sum_u p_u^T sq p_u - sum_{(u,i) in R} c_i rhat^2`,
/// in O(|R| + M K^2). Requires current `sq` and prediction caches.
pub fn objective_fast(
    model: &FactorModel,
    train: &InteractionDataset,
    weights: &ConfidenceWeights,
    lambda: f64,
) -> f64 {
    let k = model.factors;
    let mut loss = 0.0;
    for u in 0..train.num_users() {
        let pu = model.user_vec(u);
        // p_u^T sq p_u
        let mut quad = 0.0;
        for a in 0..k {
            let mut row = 0.0;
            for b in 0..k {
                row += model.sq[a * k + b] * pu[b];
            }
            quad += pu[a] * row;
        }
        loss += quad;
        for (e, &rhat) in train.user_row(u).iter().zip(&model.pred[u]) {
            let err = 1.0 - rhat;
            loss += e.weight * err * err - weights.c[e.id as usize] * rhat * rhat;
        }
    }
    loss + lambda * (sum_sq(&model.user_factors) + sum_sq(&model.item_factors))
}

/// Direct O(M N K) evaluation of the weighted objective; reference oracle.
pub fn objective_naive(
    model: &FactorModel,
    train: &InteractionDataset,
    weights: &ConfidenceWeights,
    lambda: f64,
) -> f64 {
    let mut loss = 0.0;
    for u in 0..train.num_users() {
        let pu = model.user_vec(u);
        let row = train.user_row(u);
        let mut next = 0usize;
        for i in 0..train.num_items() {
            let rhat = dot(pu, model.item_vec(i));
            let observed = next < row.len() && row[next].id as usize == i;
            if observed {
                let err = 1.0 - rhat;
                loss += row[next].weight * err * err;
                next += 1;
            } else {
                loss += weights.c[i] * rhat * rhat;
            }
        }
    }
    loss + lambda * (sum_sq(&model.user_factors) + sum_sq(&model.item_factors))
}

fn sum_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Direct evaluation of the generic element-wise solution for `p_uf` over
/// the full item axis (weight `c_i`, target 0 on missing cells). Does not
/// mutate the model; O(N K).
pub fn naive_update_user_factor(
    model: &FactorModel,
    u: usize,
    f: usize,
    train: &InteractionDataset,
    weights: &ConfidenceWeights,
    lambda: f64,
) -> Result<f64> {
    let pu = model.user_vec(u);
    let row = train.user_row(u);
    let mut next = 0usize;
    let mut numer = 0.0;
    let mut denom = lambda;
    for i in 0..train.num_items() {
        let qi = model.item_vec(i);
        let observed = next < row.len() && row[next].id as usize == i;
        let (w, r) = if observed {
            let w = row[next].weight;
            next += 1;
            (w, 1.0)
        } else {
            (weights.c[i], 0.0)
        };
        let rf = dot(pu, qi) - pu[f] * qi[f];
        numer += (r - rf) * w * qi[f];
        denom += w * qi[f] * qi[f];
    }
    if denom == 0.0 {
        return Err(Error::Numerical("singular coordinate update (zero denominator)".into()));
    }
    Ok(numer / denom)
}

/// Item-side counterpart of [`naive_update_user_factor`]; O(M K).
pub fn naive_update_item_factor(
    model: &FactorModel,
    i: usize,
    f: usize,
    train: &InteractionDataset,
    weights: &ConfidenceWeights,
    lambda: f64,
) -> Result<f64> {
    let qi = model.item_vec(i);
    let col = train.item_col(i);
    let mut next = 0usize;
    let mut numer = 0.0;
    let mut denom = lambda;
    for u in 0..train.num_users() {
        let pu = model.user_vec(u);
        let observed = next < col.len() && col[next].id as usize == u;
        let (w, r) = if observed {
            let w = col[next].weight;
            next += 1;
            (w, 1.0)
        } else {
            (weights.c[i], 0.0)
        };
        let rf = dot(pu, qi) - pu[f] * qi[f];
        numer += (r - rf) * w * pu[f];
        denom += w * pu[f] * pu[f];
    }
    if denom == 0.0 {
        return Err(Error::Numerical("singular coordinate update (zero denominator)".into()));
    }
    Ok(numer / denom)
}
