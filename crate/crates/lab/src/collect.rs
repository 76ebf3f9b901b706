//! Parallel data collection. Every `(pair, batch)` cell draws from its own
//! stream, so the buffer does not depend on the thread count.

use cmdp_lab_core::sampling::{check_request, fill_cell, Buffer};
use cmdp_lab_core::{GenerativeModel, Pair};
use rayon::prelude::*;

use crate::error::{LabError, LabResult};

/// Environment variable capping the worker count.
pub const THREADS_VAR: &str = "CMDP_LAB_THREADS";

/// `CMDP_LAB_THREADS` if set to a positive integer, else the machine's
/// available parallelism.
pub fn thread_count() -> LabResult<usize> {
    match std::env::var(THREADS_VAR) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(LabError::Usage(format!("{THREADS_VAR} must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

pub fn pool(threads: usize) -> LabResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| LabError::Usage(format!("cannot start {threads} worker threads: {e}")))
}

pub fn collect_parallel<G: GenerativeModel + Sync + ?Sized>(
    gen: &G,
    coreset: &[Pair],
    num_batches: usize,
    batch_size: usize,
    master_seed: u64,
    threads: usize,
) -> LabResult<Buffer> {
    let pairs = check_request(gen.num_states(), gen.num_actions(), coreset, num_batches, batch_size)?;
    let mut samples = vec![0u32; num_batches * pairs.len() * batch_size];
    pool(threads)?.install(|| {
        samples.par_chunks_mut(batch_size).enumerate().try_for_each(|(cell, out)| {
            let (t, c) = (cell / pairs.len(), cell % pairs.len());
            fill_cell(gen, pairs[c], t, master_seed, out)
        })
    })?;
    Ok(Buffer::from_samples(
        gen.num_states(),
        gen.num_actions(),
        coreset.to_vec(),
        num_batches,
        batch_size,
        master_seed,
        samples,
    )?)
}
