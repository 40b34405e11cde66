use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, Manifest, Split};

/// Train/val/test1/test2 proportions of the reference dataset
/// (2900/438/257/362 images).
pub const TABLE1_FRACTIONS: [f64; 4] = [
    2900.0 / 3957.0,
    438.0 / 3957.0,
    257.0 / 3957.0,
    362.0 / 3957.0,
];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Splits {
    pub train: Manifest,
    pub val: Manifest,
    pub test1: Manifest,
    pub test2: Manifest,
}

impl Splits {
    pub fn get(&self, split: Split) -> &Manifest {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test1 => &self.test1,
            Split::Test2 => &self.test2,
        }
    }

    pub fn get_mut(&mut self, split: Split) -> &mut Manifest {
        match split {
            Split::Train => &mut self.train,
            Split::Val => &mut self.val,
            Split::Test1 => &mut self.test1,
            Split::Test2 => &mut self.test2,
        }
    }
}

/// Per-split sizes for `n` items. When the fractions sum to one, rounding
/// slack goes to the training split so every item is used.
pub fn split_counts(n: usize, fractions: [f64; 4]) -> Result<[usize; 4], DataError> {
    let total: f64 = fractions.iter().sum();
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || total > 1.0 + 1e-9 {
        return Err(DataError::Spec(format!(
            "split fractions {fractions:?} must be in [0, 1] and sum to at most 1"
        )));
    }
    let needed = fractions.iter().filter(|&&f| f > 0.0).count();
    if n < needed {
        return Err(DataError::TooFew(format!(
            "{n} images cannot fill {needed} non-empty splits"
        )));
    }
    let mut counts = fractions.map(|f| (f * n as f64).round() as usize);
    if (total - 1.0).abs() < 1e-9 {
        let rest: usize = counts[1..].iter().sum();
        counts[0] = n.saturating_sub(rest);
    }
    if counts.iter().sum::<usize>() > n {
        return Err(DataError::TooFew(format!("{n} images for split sizes {counts:?}")));
    }
    Ok(counts)
}

/// Seeded shuffled partition of `0..n`; each split is sorted ascending.
pub(crate) fn split_indices(n: usize, fractions: [f64; 4], seed: u64) -> Result<[Vec<usize>; 4], DataError> {
    let counts = split_counts(n, fractions)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out: [Vec<usize>; 4] = Default::default();
    let mut start = 0;
    for (slot, count) in out.iter_mut().zip(counts) {
        *slot = order[start..start + count].to_vec();
        slot.sort_unstable();
        start += count;
    }
    Ok(out)
}

/// Deterministic shuffled partition of a manifest into the four splits.
pub fn make_splits(manifest: &Manifest, fractions: [f64; 4], seed: u64) -> Result<Splits, DataError> {
    let idx = split_indices(manifest.len(), fractions, seed)?;
    let mut splits = Splits::default();
    for (split, ids) in Split::ALL.into_iter().zip(idx) {
        splits.get_mut(split).samples = ids.into_iter().map(|i| manifest.samples[i].clone()).collect();
    }
    Ok(splits)
}
