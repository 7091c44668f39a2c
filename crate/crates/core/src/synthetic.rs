//! Seeded synthetic datasets for benchmarks and property checks.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ingest::{build_dataset, InteractionDataset, RawInteractions, RawRecord};

/// Draws indices from a power-law (Zipf-like) distribution with the given
/// exponent via inverse-CDF sampling on precomputed cumulative weights.
struct PowerLawSampler {
    cumulative: Vec<f64>,
}

impl PowerLawSampler {
    fn new(n: usize, exponent: f64) -> Self {
        let mut cumulative = Vec::with_capacity(n);
        let mut acc = 0.0;
        for rank in 1..=n {
            acc += 1.0 / (rank as f64).powf(exponent);
            cumulative.push(acc);
        }
        PowerLawSampler { cumulative }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> usize {
        let total = *self.cumulative.last().expect("empty sampler");
        let x = rng.random_range(0.0..total);
        self.cumulative.partition_point(|&c| c <= x)
    }
}

/// Synthetic implicit-feedback dataset with power-law user activity and item
/// popularity (exponent 1.0). Interactions arrive with increasing timestamps;
/// sampling continues until `target_nnz` distinct pairs exist or the attempt
/// budget runs out.
pub fn power_law_dataset(
    num_users: usize,
    num_items: usize,
    target_nnz: usize,
    seed: u64,
) -> InteractionDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let users = PowerLawSampler::new(num_users, 1.0);
    let items = PowerLawSampler::new(num_items, 1.0);
    let mut seen = std::collections::HashSet::new();
    let mut records = Vec::with_capacity(target_nnz);
    let max_attempts = target_nnz.saturating_mul(50).max(1000);
    let mut ts = 0i64;
    for _ in 0..max_attempts {
        if seen.len() >= target_nnz {
            break;
        }
        let u = users.sample(&mut rng);
        let i = items.sample(&mut rng);
        if seen.insert((u, i)) {
            records.push(RawRecord {
                user: format!("u{u}"),
                item: format!("i{i}"),
                ts,
            });
            ts += 1;
        }
    }
    build_dataset(&RawInteractions { records })
}

/// Small random instance for oracle and property checks: every user gets at
/// least one interaction and each (u, i) cell is observed with probability
/// `density`.
pub fn random_instance(
    num_users: usize,
    num_items: usize,
    density: f64,
    seed: u64,
) -> InteractionDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    let mut ts = 0i64;
    for u in 0..num_users {
        let mut any = false;
        for i in 0..num_items {
            if rng.random_range(0.0..1.0) < density {
                records.push(RawRecord {
                    user: format!("u{u}"),
                    item: format!("i{i}"),
                    ts,
                });
                ts += 1;
                any = true;
            }
        }
        if !any {
            let i = rng.random_range(0..num_items);
            records.push(RawRecord {
                user: format!("u{u}"),
                item: format!("i{i}"),
                ts,
            });
            ts += 1;
        }
    }
    build_dataset(&RawInteractions { records })
}
