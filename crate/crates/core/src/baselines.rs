//! Reference learners sharing the model and evaluation stack: vector-wise
//! ALS with a uniform missing weight, and BPR with sequential SGD.

use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::eals::{objective_fast, IterRecord, TrainTrace};
use crate::error::{Error, Result};
use crate::ingest::InteractionDataset;
use crate::linalg::spd_solve;
use crate::model::{compute_item_gram, compute_user_gram, FactorModel};
use crate::parallel::with_threads;
use crate::weighting::ConfidenceWeights;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlsConfig {
    pub factors: usize,
    pub lambda: f64,
    /// Uniform weight of all missing entries.
    pub w0: f64,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub seed: u64,
    pub threads: usize,
    pub init_scale: f64,
}

impl Default for AlsConfig {
    fn default() -> Self {
        AlsConfig {
            factors: 64,
            lambda: 0.01,
            w0: 0.01,
            max_iters: 500,
            rel_tol: 1e-5,
            seed: 0,
            threads: 1,
            init_scale: 0.01,
        }
    }
}

impl AlsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.factors < 1 {
            return Err(Error::invalid("factor count must be >= 1"));
        }
        if !(self.w0 > 0.0) {
            return Err(Error::invalid("w0 must be positive"));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::invalid("lambda must be strictly positive"));
        }
        Ok(())
    }

    /// The equivalent uniform confidence weighting (`c_i = w0` for every
    /// item), under which the eALS objective coincides with the ALS one.
    pub fn uniform_weights(&self, num_items: usize) -> ConfidenceWeights {
        ConfidenceWeights::uniform(num_items, self.w0 * num_items as f64)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BprConfig {
    pub factors: usize,
    pub lambda: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Triples sampled per epoch; defaults to the number of observed
    /// interactions.
    pub samples_per_epoch: Option<usize>,
    pub seed: u64,
    pub init_scale: f64,
}

impl Default for BprConfig {
    fn default() -> Self {
        BprConfig {
            factors: 64,
            lambda: 0.01,
            learning_rate: 0.05,
            epochs: 100,
            samples_per_epoch: None,
            seed: 0,
            init_scale: 0.01,
        }
    }
}

impl BprConfig {
    pub fn validate(&self) -> Result<()> {
        if self.factors < 1 {
            return Err(Error::invalid("factor count must be >= 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        Ok(())
    }
}

/// Ridge-regression solve for one user row:
/// `p_u = (Q^T W^u Q + lambda I)^{-1} Q^T W^u r_u`. The dense system is
/// assembled from the shared `w0 * Q^T Q` Gram plus `|R_u|` rank-one
/// corrections for observed entries, then solved by Cholesky.
pub fn als_update_user(
    model: &FactorModel,
    u: usize,
    train: &InteractionDataset,
    gram: &[f64],
    w0: f64,
    lambda: f64,
) -> Result<Vec<f64>> {
    let k = model.factors;
    let mut a = vec![0.0; k * k];
    for idx in 0..k * k {
        a[idx] = w0 * gram[idx];
    }
    for d in 0..k {
        a[d * k + d] += lambda;
    }
    let mut b = vec![0.0; k];
    for e in train.user_row(u) {
        let qi = model.item_vec(e.id as usize);
        let dw = e.weight - w0;
        for x in 0..k {
            let qx = qi[x];
            b[x] += e.weight * qx; // r_ui = 1
            for y in 0..k {
                a[x * k + y] += dw * qx * qi[y];
            }
        }
    }
    spd_solve(&a, &b, k)
}

/// Item-side ridge solve against `w0 * P^T P`.
pub fn als_update_item(
    model: &FactorModel,
    i: usize,
    train: &InteractionDataset,
    gram: &[f64],
    w0: f64,
    lambda: f64,
) -> Result<Vec<f64>> {
    let k = model.factors;
    let mut a = vec![0.0; k * k];
    for idx in 0..k * k {
        a[idx] = w0 * gram[idx];
    }
    for d in 0..k {
        a[d * k + d] += lambda;
    }
    let mut b = vec![0.0; k];
    for e in train.item_col(i) {
        let pu = model.user_vec(e.id as usize);
        let dw = e.weight - w0;
        for x in 0..k {
            let px = pu[x];
            b[x] += e.weight * px;
            for y in 0..k {
                a[x * k + y] += dw * px * pu[y];
            }
        }
    }
    spd_solve(&a, &b, k)
}

/// One alternating pass: solve every user row against the item Gram, then
/// every item row against the user Gram. Rows are independent and may be
/// solved in parallel.
pub fn als_sweep(
    model: &mut FactorModel,
    train: &InteractionDataset,
    w0: f64,
    lambda: f64,
    threads: usize,
) -> Result<()> {
    with_threads(threads, || als_sweep_in_pool(model, train, w0, lambda, threads > 1))
}

fn als_sweep_in_pool(
    model: &mut FactorModel,
    train: &InteractionDataset,
    w0: f64,
    lambda: f64,
    parallel: bool,
) -> Result<()> {
    let k = model.factors;
    let item_gram = compute_user_gram(&model.item_factors, k, parallel);
    let users: Vec<Vec<f64>> = solve_rows(train.num_users(), parallel, |u| {
        als_update_user(model, u, train, &item_gram, w0, lambda)
    })?;
    for (u, row) in users.into_iter().enumerate() {
        model.user_vec_mut(u).copy_from_slice(&row);
    }
    let user_gram = compute_user_gram(&model.user_factors, k, parallel);
    let items: Vec<Vec<f64>> = solve_rows(train.num_items(), parallel, |i| {
        als_update_item(model, i, train, &user_gram, w0, lambda)
    })?;
    for (i, row) in items.into_iter().enumerate() {
        model.item_vec_mut(i).copy_from_slice(&row);
    }
    Ok(())
}

fn solve_rows<F>(n: usize, parallel: bool, f: F) -> Result<Vec<Vec<f64>>>
where
    F: Fn(usize) -> Result<Vec<f64>> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if parallel {
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    let _ = parallel;
    (0..n).map(f).collect()
}

/// Vector-wise ALS training with uniform missing weight `w0`.
pub fn als_train(
    train: &InteractionDataset,
    cfg: &AlsConfig,
) -> Result<(FactorModel, TrainTrace)> {
    cfg.validate()?;
    let mut model = FactorModel::init(
        train.num_users(),
        train.num_items(),
        cfg.factors,
        cfg.seed,
        cfg.init_scale,
    );
    let weights = cfg.uniform_weights(train.num_items());
    let mut trace = TrainTrace::default();
    let mut prev = als_objective(&mut model, train, &weights, cfg.lambda);
    for iter in 1..=cfg.max_iters {
        let t0 = Instant::now();
        als_sweep(&mut model, train, cfg.w0, cfg.lambda, cfg.threads)?;
        let objective = als_objective(&mut model, train, &weights, cfg.lambda);
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

/// Weighted objective of the ALS model under its uniform confidence
/// equivalent, evaluated through the fast cache identity.
pub fn als_objective(
    model: &mut FactorModel,
    train: &InteractionDataset,
    weights: &ConfidenceWeights,
    lambda: f64,
) -> f64 {
    model.sq = compute_item_gram(&model.item_factors, &weights.c, model.factors, false);
    model.refresh_prediction_cache(train);
    objective_fast(model, train, weights, lambda)
}

/// BPR training: per sample, draw an observed (u, i) uniformly and a
/// negative j uniformly from the items outside `R_u`, then take one SGD
/// ascent step on the pairwise ranking objective. Strictly sequential; the
/// sample order is part of the contract.
pub fn bpr_train(train: &InteractionDataset, cfg: &BprConfig) -> Result<(FactorModel, TrainTrace)> {
    cfg.validate()?;
    if train.nnz() == 0 {
        return Err(Error::invalid("BPR needs a nonempty training set"));
    }
    if (0..train.num_users())
        .any(|u| !train.user_row(u).is_empty() && train.user_row(u).len() >= train.num_items())
    {
        return Err(Error::invalid("BPR needs at least one unobserved item per active user"));
    }
    let k = cfg.factors;
    let mut model = FactorModel::init(
        train.num_users(),
        train.num_items(),
        k,
        cfg.seed,
        cfg.init_scale,
    );
    let positives: Vec<(u32, u32)> = train.entries().map(|(u, i, _, _, _)| (u, i)).collect();
    let samples = cfg.samples_per_epoch.unwrap_or(train.nnz());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = train.num_items();
    let lr = cfg.learning_rate;
    let mut trace = TrainTrace::default();
    for epoch in 1..=cfg.epochs {
        let t0 = Instant::now();
        let mut loss_sum = 0.0;
        for _ in 0..samples {
            let &(u, i) = &positives[rng.random_range(0..positives.len())];
            let j = loop {
                let cand = rng.random_range(0..n) as u32;
                if !train.is_observed(u as usize, cand) {
                    break cand;
                }
            };
            let (u, i, j) = (u as usize, i as usize, j as usize);
            let x = model.predict(u, i)? - model.predict(u, j)?;
            let sigma = 1.0 / (1.0 + x.exp());
            loss_sum += (1.0 + (-x).exp()).ln(); // -ln sigmoid(x)
            let pu_old: Vec<f64> = model.user_vec(u).to_vec();
            {
                let qi_minus_qj: Vec<f64> = model
                    .item_vec(i)
                    .iter()
                    .zip(model.item_vec(j))
                    .map(|(a, b)| a - b)
                    .collect();
                let pu = model.user_vec_mut(u);
                for f in 0..k {
                    pu[f] += lr * (sigma * qi_minus_qj[f] - cfg.lambda * pu[f]);
                }
            }
            {
                let qi = model.item_vec_mut(i);
                for f in 0..k {
                    qi[f] += lr * (sigma * pu_old[f] - cfg.lambda * qi[f]);
                }
            }
            {
                let qj = model.item_vec_mut(j);
                for f in 0..k {
                    qj[f] += lr * (-sigma * pu_old[f] - cfg.lambda * qj[f]);
                }
            }
        }
        trace.records.push(IterRecord {
            iter: epoch,
            objective: loss_sum / samples as f64,
            seconds: t0.elapsed().as_secs_f64(),
        });
    }
    Ok((model, trace))
}
