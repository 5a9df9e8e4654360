//! Deterministic per-replica random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::Result;

pub type Rng = ChaCha8Rng;

/// Stream `replica` of the master seed. Streams are independent and the
/// mapping does not depend on thread scheduling.
pub fn replica_rng(master: u64, replica: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(replica);
    rng
}

/// Runs `f(replica)` for `0..count` in parallel. Results come back in
/// replica order, so reductions do not depend on the thread count.
pub fn par_replicas<T: Send>(count: usize, f: impl Fn(u64) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    (0..count as u64).into_par_iter().map(f).collect()
}
