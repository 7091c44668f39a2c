//! Factorization state: the latent matrices P and Q, the K x K Gram-style
//! caches, and the prediction cache over observed entries.
//!
//! `sp = P^T P` and `sq = sum_i c_i q_i q_i^T` factor the missing-data sums
//! out of the per-coordinate updates; `pred[u][j]` caches `p_u . q_i` for the
//! j-th observed item of user u, aligned with the dataset's user rows.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ingest::InteractionDataset;
use crate::linalg::dot;
use crate::parallel::chunked_gram;
use crate::weighting::ConfidenceWeights;

#[derive(Debug, Clone)]
pub struct FactorModel {
    pub factors: usize,
    /// M x K row-major user factors.
    pub user_factors: Vec<f64>,
    /// N x K row-major item factors.
    pub item_factors: Vec<f64>,
    /// K x K cache P^T P.
    pub sp: Vec<f64>,
    /// K x K cache sum_i c_i q_i q_i^T.
    pub sq: Vec<f64>,
    /// Cached predictions for observed entries, aligned with the dataset's
    /// user rows.
    pub pred: Vec<Vec<f64>>,
}

/// Descending-score ranking with ties broken by ascending item id.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub items: Vec<(u32, f64)>,
}

/// Fills `buf` with i.i.d. uniform draws on `[0, scale)`. A non-positive
/// scale zero-fills, used for cold-start experiments.
pub fn fill_uniform(buf: &mut [f64], rng: &mut ChaCha8Rng, scale: f64) {
    if scale > 0.0 {
        for v in buf.iter_mut() {
            *v = rng.random_range(0.0..scale);
        }
    } else {
        buf.fill(0.0);
    }
}

impl FactorModel {
    /// Random initialization: entries uniform on `[0, scale)` from a
    /// ChaCha stream seeded by `seed`, P filled first then Q, row-major.
    /// Caches start consistent (empty prediction cache, sp = P^T P,
    /// sq = 0 pending a weight binding).
    pub fn init(num_users: usize, num_items: usize, factors: usize, seed: u64, scale: f64) -> Self {
        assert!(factors >= 1, "factor count must be >= 1");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut user_factors = vec![0.0; num_users * factors];
        let mut item_factors = vec![0.0; num_items * factors];
        fill_uniform(&mut user_factors, &mut rng, scale);
        fill_uniform(&mut item_factors, &mut rng, scale);
        let sp = compute_user_gram(&user_factors, factors, false);
        let sq = vec![0.0; factors * factors];
        FactorModel {
            factors,
            user_factors,
            item_factors,
            sp,
            sq,
            pred: Vec::new(),
        }
    }

    pub fn num_users(&self) -> usize {
        self.user_factors.len() / self.factors
    }

    pub fn num_items(&self) -> usize {
        self.item_factors.len() / self.factors
    }

    pub fn user_vec(&self, u: usize) -> &[f64] {
        &self.user_factors[u * self.factors..(u + 1) * self.factors]
    }

    pub fn item_vec(&self, i: usize) -> &[f64] {
        &self.item_factors[i * self.factors..(i + 1) * self.factors]
    }

    pub fn user_vec_mut(&mut self, u: usize) -> &mut [f64] {
        &mut self.user_factors[u * self.factors..(u + 1) * self.factors]
    }

    pub fn item_vec_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.item_factors[i * self.factors..(i + 1) * self.factors]
    }

    /// Predicted score `p_u . q_i`.
    pub fn predict(&self, u: usize, i: usize) -> Result<f64> {
        if u >= self.num_users() || i >= self.num_items() {
            return Err(Error::invalid(format!(
                "id out of range: user {u} of {}, item {i} of {}",
                self.num_users(),
                self.num_items()
            )));
        }
        Ok(dot(self.user_vec(u), self.item_vec(i)))
    }

    /// Top-k items for user `u` by score, ties broken by ascending item id.
    /// With `exclude_train` set, items observed in the user's training row
    /// are skipped.
    pub fn recommend_topk(
        &self,
        u: usize,
        k: usize,
        exclude_train: Option<&InteractionDataset>,
    ) -> Result<RankedList> {
        if u >= self.num_users() {
            return Err(Error::invalid(format!("user {u} out of range")));
        }
        assert!(k >= 1);
        let pu = self.user_vec(u);
        let mut scored: Vec<(u32, f64)> = match exclude_train {
            Some(train) => (0..self.num_items() as u32)
                .filter(|&i| !train.is_observed(u, i))
                .map(|i| (i, dot(pu, self.item_vec(i as usize))))
                .collect(),
            None => (0..self.num_items() as u32)
                .map(|i| (i, dot(pu, self.item_vec(i as usize))))
                .collect(),
        };
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        scored.truncate(k);
        Ok(RankedList { items: scored })
    }

    /// 1-based rank of `gt` in the full descending ordering, equivalent to
    /// its position in `recommend_topk(u, N)`. Returns None when `gt` is
    /// excluded by the training filter.
    pub fn rank_of(
        &self,
        u: usize,
        gt: u32,
        exclude_train: Option<&InteractionDataset>,
    ) -> Result<Option<usize>> {
        if u >= self.num_users() || gt as usize >= self.num_items() {
            return Err(Error::invalid("id out of range"));
        }
        if let Some(train) = exclude_train {
            if train.is_observed(u, gt) {
                return Ok(None);
            }
        }
        let pu = self.user_vec(u);
        let s_gt = dot(pu, self.item_vec(gt as usize));
        let mut ahead = 0usize;
        for i in 0..self.num_items() as u32 {
            if i == gt {
                continue;
            }
            if let Some(train) = exclude_train {
                if train.is_observed(u, i) {
                    continue;
                }
            }
            let s = dot(pu, self.item_vec(i as usize));
            if s > s_gt || (s == s_gt && i < gt) {
                ahead += 1;
            }
        }
        Ok(Some(ahead + 1))
    }

    /// Rebuilds both caches from scratch: `sp = P^T P`,
    /// `sq = sum_i c_i q_i q_i^T`.
    pub fn recompute_caches(&mut self, weights: &ConfidenceWeights) {
        assert_eq!(weights.num_items(), self.num_items());
        self.sp = compute_user_gram(&self.user_factors, self.factors, false);
        self.sq = compute_item_gram(&self.item_factors, &weights.c, self.factors, false);
    }

    /// Recomputes every observed-entry prediction from the current factors.
    pub fn refresh_prediction_cache(&mut self, train: &InteractionDataset) {
        assert_eq!(train.num_users(), self.num_users());
        self.pred = (0..train.num_users())
            .map(|u| {
                let pu = self.user_vec(u);
                train
                    .user_row(u)
                    .iter()
                    .map(|e| dot(pu, self.item_vec(e.id as usize)))
                    .collect()
            })
            .collect();
    }

    /// Max-norm deviations of the maintained caches from full recomputation:
    /// `(|sp - P^T P|_max, |sq - sum c_i q_i q_i^T|_max)`.
    pub fn cache_drift(&self, weights: &ConfidenceWeights) -> (f64, f64) {
        let sp = compute_user_gram(&self.user_factors, self.factors, false);
        let sq = compute_item_gram(&self.item_factors, &weights.c, self.factors, false);
        let dp = self
            .sp
            .iter()
            .zip(&sp)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        let dq = self
            .sq
            .iter()
            .zip(&sq)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        (dp, dq)
    }

    /// Max absolute deviation of the prediction cache from `p_u . q_i`.
    pub fn prediction_drift(&self, train: &InteractionDataset) -> f64 {
        let mut worst = 0.0f64;
        for u in 0..train.num_users() {
            let pu = self.user_vec(u);
            for (e, &cached) in train.user_row(u).iter().zip(&self.pred[u]) {
                worst = worst.max((cached - dot(pu, self.item_vec(e.id as usize))).abs());
            }
        }
        worst
    }

    /// Writes the snapshot: header `M N K`, then M rows of P and N rows of Q
    /// as space-separated round-trip decimals.
    pub fn write_snapshot<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{} {} {}", self.num_users(), self.num_items(), self.factors)?;
        for u in 0..self.num_users() {
            write_row(&mut out, self.user_vec(u))?;
        }
        for i in 0..self.num_items() {
            write_row(&mut out, self.item_vec(i))?;
        }
        Ok(())
    }

    pub fn save_snapshot(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::Io {
            path: path.to_owned(),
            source: e,
        })?;
        let mut w = std::io::BufWriter::new(file);
        self.write_snapshot(&mut w).map_err(|e| Error::Io {
            path: path.to_owned(),
            source: e,
        })
    }

    /// Reads a snapshot back. Caches and the prediction cache are left
    /// empty; call [`FactorModel::recompute_caches`] and
    /// [`FactorModel::refresh_prediction_cache`] to rebind them.
    pub fn read_snapshot<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse { line: 1, msg: "missing header".into() })?
            .map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?;
        if dims.len() != 3 {
            return Err(Error::Parse { line: 1, msg: "header must be `M N K`".into() });
        }
        let (m, n, k) = (dims[0], dims[1], dims[2]);
        let mut read_matrix = |rows: usize, what: &str| -> Result<Vec<f64>> {
            let mut out = Vec::with_capacity(rows * k);
            for r in 0..rows {
                let lineno = 2 + r;
                let line = lines
                    .next()
                    .ok_or_else(|| Error::Parse {
                        line: lineno,
                        msg: format!("missing {what} row {r}"),
                    })?
                    .map_err(|e| Error::Parse { line: lineno, msg: e.to_string() })?;
                let vals: Vec<f64> = line
                    .split_whitespace()
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::Parse { line: lineno, msg: e.to_string() })?;
                if vals.len() != k {
                    return Err(Error::Parse {
                        line: lineno,
                        msg: format!("expected {k} factors, found {}", vals.len()),
                    });
                }
                out.extend(vals);
            }
            Ok(out)
        };
        let user_factors = read_matrix(m, "user")?;
        let item_factors = read_matrix(n, "item")?;
        Ok(FactorModel {
            factors: k,
            user_factors,
            item_factors,
            sp: vec![0.0; k * k],
            sq: vec![0.0; k * k],
            pred: Vec::new(),
        })
    }

    pub fn load_snapshot(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::Io {
            path: path.to_owned(),
            source: e,
        })?;
        Self::read_snapshot(BufReader::new(file))
    }
}

fn write_row<W: Write>(out: &mut W, row: &[f64]) -> std::io::Result<()> {
    let mut line = String::new();
    for (idx, v) in row.iter().enumerate() {
        if idx > 0 {
            line.push(' ');
        }
        // {:?} prints the shortest decimal that round-trips the f64
        line.push_str(&format!("{v:?}"));
    }
    line.push('\n');
    out.write_all(line.as_bytes())
}

/// `P^T P` as a row-major K x K matrix, chunk-reduced for determinism.
pub fn compute_user_gram(factors: &[f64], k: usize, parallel: bool) -> Vec<f64> {
    let rows = factors.len() / k.max(1);
    chunked_gram(rows, k, parallel, |range, acc| {
        for r in range {
            let row = &factors[r * k..(r + 1) * k];
            for a in 0..k {
                let ra = row[a];
                for b in 0..k {
                    acc[a * k + b] += ra * row[b];
                }
            }
        }
    })
}

/// `sum_i c_i q_i q_i^T` as a row-major K x K matrix.
pub fn compute_item_gram(factors: &[f64], c: &[f64], k: usize, parallel: bool) -> Vec<f64> {
    let rows = factors.len() / k.max(1);
    debug_assert_eq!(rows, c.len());
    chunked_gram(rows, k, parallel, |range, acc| {
        for r in range {
            let ci = c[r];
            if ci == 0.0 {
                continue;
            }
            let row = &factors[r * k..(r + 1) * k];
            for a in 0..k {
                let ra = ci * row[a];
                for b in 0..k {
                    acc[a * k + b] += ra * row[b];
                }
            }
        }
    })
}
