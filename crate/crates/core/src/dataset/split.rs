use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Splits videos by subject so no subject lands on both sides.
///
/// `subjects[i]` is the subject of video `i`. Subjects are shuffled with
/// `seed` and the first `round(ratio · n_subjects)` (at least one, at most
/// all but one) go to the first side. Returns `(train, test)` video indices
/// in ascending order.
pub fn train_test_split(subjects: &[&str], ratio: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Invalid(format!("split ratio {ratio} outside (0, 1)")));
    }
    let unique: BTreeSet<&str> = subjects.iter().copied().collect();
    if unique.len() < 2 {
        return Err(Error::Invalid(format!("need at least 2 subjects to split, found {}", unique.len())));
    }
    let mut order: Vec<&str> = unique.into_iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((ratio * order.len() as f64).round() as usize).clamp(1, order.len() - 1);
    let train_subjects: BTreeSet<&str> = order[..n_train].iter().copied().collect();
    let (train, test): (Vec<usize>, Vec<usize>) =
        (0..subjects.len()).partition(|&i| train_subjects.contains(subjects[i]));
    Ok((train, test))
}
