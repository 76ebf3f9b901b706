//! Data collection: `T` disjoint batches of `M` next-state samples for every
//! coreset pair, each `(pair, batch)` cell drawn from its own stream.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{GenerativeModel, Pair};

/// Largest `T * M * |C|` a buffer may hold.
pub const MAX_SAMPLES: u64 = 10_000_000;

/// Stream for one cell: pair-major, batch-minor, independent of `T`.
pub fn stream_id(pair_index: usize, batch: usize) -> u64 {
    ((pair_index as u64) << 32) | batch as u64
}

pub fn cell_rng(master_seed: u64, pair_index: usize, batch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream_id(pair_index, batch));
    rng
}

/// Fills one cell with `out.len()` draws for `pair_index`.
pub fn fill_cell<G: GenerativeModel + ?Sized>(
    gen: &G,
    pair_index: usize,
    batch: usize,
    master_seed: u64,
    out: &mut [u32],
) -> Result<()> {
    let na = gen.num_actions();
    let (s, a) = (pair_index / na, pair_index % na);
    let mut rng = cell_rng(master_seed, pair_index, batch);
    for slot in out.iter_mut() {
        *slot = gen.sample(s, a, &mut rng)? as u32;
    }
    Ok(())
}

/// Sparse next-state counts of one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellCounts<'a> {
    pub next: &'a [u32],
    pub count: &'a [u32],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Buffer {
    pub num_states: usize,
    pub num_actions: usize,
    pub num_batches: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub coreset: Vec<Pair>,
    pub pair_indices: Vec<usize>,
    /// Layout `[batch][coreset position][m]`.
    pub samples: Vec<u32>,
    next: Vec<u32>,
    count: Vec<u32>,
    offsets: Vec<usize>,
}

/// Validates the shape and returns the flat pair indices.
pub fn check_request(
    num_states: usize,
    num_actions: usize,
    coreset: &[Pair],
    num_batches: usize,
    batch_size: usize,
) -> Result<Vec<usize>> {
    if num_batches == 0 || batch_size == 0 {
        return Err(Error::Input("T and M must both be at least 1".into()));
    }
    if coreset.is_empty() {
        return Err(Error::Input("coreset must be nonempty".into()));
    }
    if num_states > u32::MAX as usize {
        return Err(Error::Input("too many states for the sample encoding".into()));
    }
    let total = (num_batches as u64).saturating_mul(batch_size as u64).saturating_mul(coreset.len() as u64);
    if total > MAX_SAMPLES {
        return Err(Error::TooLarge { samples: total, cap: MAX_SAMPLES });
    }
    coreset
        .iter()
        .map(|&(s, a)| {
            if s >= num_states {
                Err(Error::Index { what: "state", index: s, bound: num_states })
            } else if a >= num_actions {
                Err(Error::Index { what: "action", index: a, bound: num_actions })
            } else {
                Ok(s * num_actions + a)
            }
        })
        .collect()
}

impl Buffer {
    /// Assembles a buffer from raw samples in `[batch][pair][m]` layout.
    #[allow(clippy::too_many_arguments)]
    pub fn from_samples(
        num_states: usize,
        num_actions: usize,
        coreset: Vec<Pair>,
        num_batches: usize,
        batch_size: usize,
        seed: u64,
        samples: Vec<u32>,
    ) -> Result<Buffer> {
        let pair_indices = check_request(num_states, num_actions, &coreset, num_batches, batch_size)?;
        let cells = num_batches * coreset.len();
        if samples.len() != cells * batch_size {
            return Err(Error::Input(format!(
                "buffer holds {} samples, expected {}",
                samples.len(),
                cells * batch_size
            )));
        }
        if let Some(&bad) = samples.iter().find(|&&x| x as usize >= num_states) {
            return Err(Error::Index { what: "next state", index: bad as usize, bound: num_states });
        }
        let mut next = Vec::new();
        let mut count = Vec::new();
        let mut offsets = Vec::with_capacity(cells + 1);
        offsets.push(0);
        let mut scratch = vec![0u32; batch_size];
        for cell in samples.chunks(batch_size) {
            scratch.copy_from_slice(cell);
            scratch.sort_unstable();
            let mut i = 0;
            while i < scratch.len() {
                let mut j = i;
                while j < scratch.len() && scratch[j] == scratch[i] {
                    j += 1;
                }
                next.push(scratch[i]);
                count.push((j - i) as u32);
                i = j;
            }
            offsets.push(next.len());
        }
        Ok(Buffer {
            num_states,
            num_actions,
            num_batches,
            batch_size,
            seed,
            coreset,
            pair_indices,
            samples,
            next,
            count,
            offsets,
        })
    }

    pub fn num_pairs(&self) -> usize {
        self.coreset.len()
    }

    /// `T * M * |C|`.
    pub fn total_samples(&self) -> usize {
        self.samples.len()
    }

    /// The `M` raw draws of coreset position `c` in batch `t`.
    pub fn cell(&self, t: usize, c: usize) -> &[u32] {
        let start = (t * self.num_pairs() + c) * self.batch_size;
        &self.samples[start..start + self.batch_size]
    }

    /// The same draws as sorted distinct states with multiplicities.
    pub fn counts(&self, t: usize, c: usize) -> CellCounts<'_> {
        let cell = t * self.num_pairs() + c;
        let (lo, hi) = (self.offsets[cell], self.offsets[cell + 1]);
        CellCounts { next: &self.next[lo..hi], count: &self.count[lo..hi] }
    }

    /// `(1/M) sum_m v(s'_m)` over batch `t` of position `c`.
    pub fn sample_mean(&self, t: usize, c: usize, v: &[f64]) -> f64 {
        let counts = self.counts(t, c);
        let mut acc = 0.0;
        for (&s, &n) in counts.next.iter().zip(counts.count) {
            acc += n as f64 * v[s as usize];
        }
        acc / self.batch_size as f64
    }

    /// True when the coreset is all of `S x A` in pair order.
    pub fn covers_all_pairs(&self) -> bool {
        self.pair_indices.len() == self.num_states * self.num_actions
            && self.pair_indices.iter().enumerate().all(|(i, &k)| i == k)
    }
}

/// Sequential collection; a parallel collector filling cells with
/// [`fill_cell`] in any order produces the same buffer.
pub fn data_collection<G: GenerativeModel + ?Sized>(
    gen: &G,
    coreset: &[Pair],
    num_batches: usize,
    batch_size: usize,
    master_seed: u64,
) -> Result<Buffer> {
    let pairs = check_request(gen.num_states(), gen.num_actions(), coreset, num_batches, batch_size)?;
    let mut samples = vec![0u32; num_batches * pairs.len() * batch_size];
    for (cell, out) in samples.chunks_mut(batch_size).enumerate() {
        let (t, c) = (cell / pairs.len(), cell % pairs.len());
        fill_cell(gen, pairs[c], t, master_seed, out)?;
    }
    Buffer::from_samples(
        gen.num_states(),
        gen.num_actions(),
        coreset.to_vec(),
        num_batches,
        batch_size,
        master_seed,
        samples,
    )
}

/// Every pair of an `S x A` space in flat order.
pub fn all_pairs(num_states: usize, num_actions: usize) -> Vec<Pair> {
    (0..num_states).flat_map(|s| (0..num_actions).map(move |a| (s, a))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TabularCmdp;
    use proptest::prelude::*;

    fn chain(n: usize) -> TabularCmdp {
        let mut p = vec![0.0; n * n];
        for s in 0..n {
            p[s * n + (s + 1) % n] = 1.0;
        }
        TabularCmdp::new(n, 1, p, vec![0.0; n], vec![0.0; n], 0.0, vec![1.0 / n as f64; n], 0.5).unwrap()
    }

    #[test]
    fn deterministic_chain_samples_successor() {
        let m = chain(4);
        let buf = data_collection(&m, &all_pairs(4, 1), 3, 5, 9).unwrap();
        for t in 0..3 {
            for c in 0..4 {
                assert!(buf.cell(t, c).iter().all(|&x| x as usize == (c + 1) % 4));
            }
        }
        assert_eq!(buf.total_samples(), 60);
    }

    #[test]
    fn counts_match_raw_cells() {
        let m = chain(3);
        let mut r = m.clone();
        r.transition = vec![1.0 / 3.0; 9];
        r.transition[2] = 1.0 - 2.0 / 3.0;
        let buf = data_collection(&r, &all_pairs(3, 1), 4, 17, 1).unwrap();
        let v = [0.25, -1.5, 3.0];
        for t in 0..4 {
            for c in 0..3 {
                let counts = buf.counts(t, c);
                assert_eq!(counts.count.iter().sum::<u32>(), 17);
                let direct: f64 = buf.cell(t, c).iter().map(|&s| v[s as usize]).sum::<f64>() / 17.0;
                assert!((buf.sample_mean(t, c, &v) - direct).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cells_are_independent_of_t_and_coreset() {
        let mut m = chain(3);
        m.transition = vec![1.0 / 3.0; 9];
        let a = data_collection(&m, &[(0, 0), (2, 0)], 2, 8, 5).unwrap();
        let b = data_collection(&m, &[(2, 0)], 5, 8, 5).unwrap();
        assert_eq!(a.cell(1, 1), b.cell(1, 0));
    }

    #[test]
    fn oversized_buffer_is_rejected() {
        let m = chain(2);
        let err = data_collection(&m, &all_pairs(2, 1), 10_000, 1_000, 0).unwrap_err();
        assert!(matches!(err, Error::TooLarge { samples: 20_000_000, .. }));
    }

    #[test]
    fn bad_requests() {
        let m = chain(2);
        assert!(data_collection(&m, &[], 1, 1, 0).is_err());
        assert!(data_collection(&m, &[(0, 0)], 0, 1, 0).is_err());
        assert!(matches!(data_collection(&m, &[(5, 0)], 1, 1, 0), Err(Error::Index { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn empirical_distribution_converges(seed in 0u64..1000, n in 2usize..8) {
            // Dirichlet-like row from a fixed pattern of positive weights.
            let mut row: Vec<f64> = (0..n).map(|i| 1.0 + ((seed as usize + 3 * i) % 5) as f64).collect();
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|x| *x /= total);
            let mut p = Vec::new();
            for _ in 0..n {
                p.extend_from_slice(&row);
            }
            let fix: f64 = 1.0 - row[..n - 1].iter().sum::<f64>();
            for s in 0..n {
                p[s * n + n - 1] = fix;
            }
            let m = TabularCmdp::new(n, 1, p, vec![0.0; n], vec![0.0; n], 0.0, vec![1.0 / n as f64; n], 0.5).unwrap();
            let buf = data_collection(&m, &[(0, 0)], 100, 100, seed).unwrap();
            let mut freq = vec![0.0; n];
            for &x in &buf.samples {
                freq[x as usize] += 1.0 / 10_000.0;
            }
            let tv: f64 = 0.5 * freq.iter().zip(m.row(0, 0)).map(|(a, b)| (a - b).abs()).sum::<f64>();
            prop_assert!(tv <= 4.0 * libm::sqrt(n as f64 / 10_000.0), "tv {}", tv);
        }
    }
}
