//! Popularity-aware confidence weighting of missing data.
//!
//! Each item gets a missing-data confidence `c_i = c0 * f_i^alpha / sum_j f_j^alpha`
//! where `f_i` is the item's share of all interactions. `alpha = 0` recovers
//! uniform weighting with `w0 = c0 / N`. The convention `0^0 = 0` is used, so
//! items that never occur in the training data always get `c_i = 0`.

use crate::error::{Error, Result};
use crate::ingest::InteractionDataset;

/// Per-item interaction frequencies, normalized to sum to one.
#[derive(Debug, Clone)]
pub struct PopularityVector {
    pub f: Vec<f64>,
}

/// Missing-data confidences `c_i` plus the observed-entry default weight.
#[derive(Debug, Clone)]
pub struct ConfidenceWeights {
    pub c: Vec<f64>,
    pub c0: f64,
    pub alpha: f64,
    pub observed_default: f64,
}

impl ConfidenceWeights {
    /// Uniform weighting: every item gets `c_i = c0 / N`.
    pub fn uniform(num_items: usize, c0: f64) -> Self {
        assert!(c0 > 0.0);
        let w = if num_items == 0 { 0.0 } else { c0 / num_items as f64 };
        ConfidenceWeights {
            c: vec![w; num_items],
            c0,
            alpha: 0.0,
            observed_default: 1.0,
        }
    }

    /// Appends a zero-confidence slot for a freshly appeared item. The
    /// offline popularity vector is frozen, so new items contribute nothing
    /// to the missing-data term until confidences are recomputed offline.
    pub fn push_new_item(&mut self) {
        self.c.push(0.0);
    }

    pub fn num_items(&self) -> usize {
        self.c.len()
    }
}

/// Item popularity `f_i = |R_i| / sum_j |R_j|` over the training data.
pub fn item_popularity(train: &InteractionDataset) -> Result<PopularityVector> {
    if train.nnz() == 0 {
        return Err(Error::invalid("cannot compute popularity of an empty dataset"));
    }
    let total = train.nnz() as f64;
    let f = (0..train.num_items())
        .map(|i| train.item_col(i).len() as f64 / total)
        .collect();
    Ok(PopularityVector { f })
}

/// Confidence vector `c_i = c0 * f_i^alpha / sum_j f_j^alpha`, with
/// `0^0 = 0` so zero-frequency items stay at zero for every alpha.
pub fn confidence_vector(f: &PopularityVector, c0: f64, alpha: f64) -> Result<ConfidenceWeights> {
    if c0 <= 0.0 {
        return Err(Error::invalid(format!("c0 must be positive, got {c0}")));
    }
    if alpha < 0.0 {
        return Err(Error::invalid(format!("alpha must be non-negative, got {alpha}")));
    }
    let powered: Vec<f64> = f
        .f
        .iter()
        .map(|&fi| if fi > 0.0 { fi.powf(alpha) } else { 0.0 })
        .collect();
    let norm: f64 = powered.iter().sum();
    if norm <= 0.0 {
        return Err(Error::invalid("all item frequencies are zero"));
    }
    let c = powered.iter().map(|&p| c0 * p / norm).collect();
    Ok(ConfidenceWeights { c, c0, alpha, observed_default: 1.0 })
}
