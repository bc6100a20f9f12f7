/// Fixed-chunk pairwise summation.
///
/// Loss terms and image statistics are reduced with this instead of a plain
/// left fold so that results do not depend on how work was split across
/// threads: callers store per-element values into an indexed buffer (order
/// fixed by construction) and this reduction is deterministic in that order.
/// The pairwise tree also keeps rounding error near sqrt(n) ulps instead of n.
pub fn deterministic_sum(values: &[f64]) -> f64 {
    const CHUNK: usize = 256;
    if values.len() <= CHUNK {
        return values.iter().sum();
    }
    // Split on a chunk boundary; the tree shape is a function of length only.
    let n_chunks = values.len().div_ceil(CHUNK);
    let mid = (n_chunks / 2) * CHUNK;
    deterministic_sum(&values[..mid]) + deterministic_sum(&values[mid..])
}

pub fn deterministic_mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    deterministic_sum(values) / values.len() as f64
}
