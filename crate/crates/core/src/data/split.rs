use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, ManifestEntry};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: Vec<ManifestEntry>,
    pub val: Vec<ManifestEntry>,
    /// Manifest positions of `train`, ascending.
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

/// Shuffle indices with a seeded ChaCha8 stream and cut after
/// `round(train_fraction * N)`. Both halves keep manifest order.
pub fn split_dataset(entries: &[ManifestEntry], spec: &SplitSpec) -> Result<Split, DataError> {
    if entries.is_empty() {
        return Err(DataError::EmptyManifest);
    }
    let f = spec.train_fraction;
    if !(f > 0.0 && f < 1.0) {
        return Err(DataError::InvalidFraction(f));
    }
    let n = entries.len();
    let n_train = (f * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let mut train_indices = order[..n_train].to_vec();
    let mut val_indices = order[n_train..].to_vec();
    train_indices.sort_unstable();
    val_indices.sort_unstable();
    let pick = |idx: &[usize]| idx.iter().map(|&i| entries[i].clone()).collect();
    Ok(Split {
        train: pick(&train_indices),
        val: pick(&val_indices),
        train_indices,
        val_indices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn entries(n: usize) -> Vec<ManifestEntry> {
        (0..n)
            .map(|i| ManifestEntry {
                image_id: format!("img{i}"),
                path: format!("{i}.png").into(),
                mos: i as f64,
            })
            .collect()
    }

    #[test]
    fn eighty_twenty_and_deterministic() {
        let e = entries(10);
        let spec = SplitSpec { train_fraction: 0.8, seed: 7 };
        let s = split_dataset(&e, &spec).unwrap();
        assert_eq!((s.train.len(), s.val.len()), (8, 2));
        assert_eq!(split_dataset(&e, &spec).unwrap(), s);
        let other = split_dataset(&e, &SplitSpec { seed: 8, ..spec }).unwrap();
        assert_eq!((other.train.len(), other.val.len()), (8, 2));
        assert_ne!(other.val_indices, s.val_indices);
    }

    #[test]
    fn rejects_empty_and_bad_fraction() {
        assert!(matches!(
            split_dataset(&[], &SplitSpec::default()),
            Err(DataError::EmptyManifest)
        ));
        for f in [0.0, 1.0, -0.5, f64::NAN] {
            let spec = SplitSpec { train_fraction: f, seed: 0 };
            assert!(matches!(split_dataset(&entries(3), &spec), Err(DataError::InvalidFraction(_))));
        }
    }

    proptest! {
        #[test]
        fn partition_covers_input(n in 1usize..300, f in 0.01f64..0.99, seed in any::<u64>()) {
            let e = entries(n);
            let s = split_dataset(&e, &SplitSpec { train_fraction: f, seed }).unwrap();
            prop_assert_eq!(s.train.len() + s.val.len(), n);
            prop_assert_eq!(s.train.len(), (f * n as f64).round() as usize);
            let mut all: Vec<usize> = s.train_indices.iter().chain(&s.val_indices).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }
}
