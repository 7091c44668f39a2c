//! Deterministic parallelism helpers.
//!
//! All reductions are chunked with a fixed chunk size and combined in chunk
//! order, so the parallel path is bit-identical to the sequential fallback.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Chunk size for tree-shaped K x K reductions.
pub const REDUCE_CHUNK: usize = 256;

/// Runs `body` inside a rayon pool with `threads` workers. With `threads <= 1`
/// or without the `parallel` feature the body runs on the current thread.
pub fn with_threads<R: Send>(threads: usize, body: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    {
        if threads > 1 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .expect("failed to build thread pool");
            return pool.install(body);
        }
    }
    let _ = threads;
    body()
}

/// Sums `k * k` accumulators produced per index chunk, folding partials in
/// chunk order. `per_chunk(range, acc)` must add its contribution into `acc`.
pub fn chunked_gram<F>(len: usize, k: usize, parallel: bool, per_chunk: F) -> Vec<f64>
where
    F: Fn(std::ops::Range<usize>, &mut [f64]) + Sync,
{
    let ranges: Vec<std::ops::Range<usize>> = (0..len)
        .step_by(REDUCE_CHUNK)
        .map(|start| start..(start + REDUCE_CHUNK).min(len))
        .collect();
    let partials: Vec<Vec<f64>> = map_ranges(ranges, parallel, |range| {
        let mut acc = vec![0.0; k * k];
        per_chunk(range, &mut acc);
        acc
    });
    let mut total = vec![0.0; k * k];
    for part in &partials {
        for (t, p) in total.iter_mut().zip(part) {
            *t += p;
        }
    }
    total
}

fn map_ranges<F>(ranges: Vec<std::ops::Range<usize>>, parallel: bool, f: F) -> Vec<Vec<f64>>
where
    F: Fn(std::ops::Range<usize>) -> Vec<f64> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if parallel {
            return ranges.into_par_iter().map(f).collect();
        }
    }
    let _ = parallel;
    ranges.into_iter().map(f).collect()
}

/// Applies `body(row_index, factor_row, companion_row)` to every row pair,
/// in parallel when requested. Rows are disjoint, so results do not depend
/// on scheduling.
pub fn for_each_row<T: Send>(
    factors: &mut [f64],
    companions: &mut [T],
    k: usize,
    parallel: bool,
    body: impl Fn(usize, &mut [f64], &mut T) + Sync,
) {
    debug_assert_eq!(factors.len(), companions.len() * k.max(1));
    #[cfg(feature = "parallel")]
    {
        if parallel {
            factors
                .par_chunks_mut(k)
                .zip(companions.par_iter_mut())
                .enumerate()
                .for_each(|(idx, (row, companion))| body(idx, row, companion));
            return;
        }
    }
    let _ = parallel;
    for (idx, (row, companion)) in factors.chunks_mut(k).zip(companions.iter_mut()).enumerate() {
        body(idx, row, companion);
    }
}
