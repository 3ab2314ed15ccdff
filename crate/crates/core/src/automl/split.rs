use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::AutomlError;

/// Stratified k-fold test-index sets.
///
/// Each class is shuffled independently, then the classes are dealt
/// round-robin across folds in one continuous sequence, so fold sizes differ
/// by at most one overall and per class. Without labels every row is one class.
pub fn kfold_split(
    n_rows: usize,
    k: usize,
    seed: u64,
    labels: Option<&[u8]>,
) -> Result<Vec<Vec<usize>>, AutomlError> {
    if k < 2 || k > n_rows {
        return Err(AutomlError::TooFewRows { rows: n_rows, folds: k });
    }
    if let Some(l) = labels {
        if l.len() != n_rows {
            return Err(AutomlError::InvalidArgument(format!(
                "{} labels for {n_rows} rows",
                l.len()
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sequence = Vec::with_capacity(n_rows);
    for class in 0..=1u8 {
        let mut members: Vec<usize> = (0..n_rows)
            .filter(|&i| labels.map_or(class == 0, |l| l[i] == class))
            .collect();
        members.shuffle(&mut rng);
        sequence.extend(members);
    }
    let mut folds = vec![Vec::with_capacity(n_rows / k + 1); k];
    for (pos, idx) in sequence.into_iter().enumerate() {
        folds[pos % k].push(idx);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Complement of fold `i`: the training indices, ascending.
pub fn training_indices(folds: &[Vec<usize>], i: usize) -> Vec<usize> {
    let mut train: Vec<usize> = folds
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != i)
        .flat_map(|(_, f)| f.iter().copied())
        .collect();
    train.sort_unstable();
    train
}
