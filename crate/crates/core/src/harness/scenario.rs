use rand::seq::{index, SliceRandom};

use crate::embedding::LabeledEmbeddingSet;
use crate::error::{Error, Result};
use crate::rng;

/// Which classes are minority in a training split, and how large each class is.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioSpec {
    /// Sorted ascending.
    pub minority_classes: Vec<usize>,
    pub n_small: usize,
    pub n_large: usize,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn is_minority(&self, class: usize) -> bool {
        self.minority_classes.binary_search(&class).is_ok()
    }

    pub fn class_size(&self, class: usize) -> usize {
        if self.is_minority(class) {
            self.n_small
        } else {
            self.n_large
        }
    }
}

/// Draws `floor(K/2)` minority classes and subsamples every class of `pool`.
pub fn make_scenario(
    pool: &LabeledEmbeddingSet,
    n_small: usize,
    n_large: usize,
    seed: u64,
) -> Result<(LabeledEmbeddingSet, ScenarioSpec)> {
    make_scenario_with(pool, n_small, n_large, seed, None)
}

/// Like [`make_scenario`], optionally pinning the minority classes.
pub fn make_scenario_with(
    pool: &LabeledEmbeddingSet,
    n_small: usize,
    n_large: usize,
    seed: u64,
    minority: Option<&[usize]>,
) -> Result<(LabeledEmbeddingSet, ScenarioSpec)> {
    if n_small > n_large {
        return Err(Error::Config(format!(
            "n_small ({n_small}) exceeds n_large ({n_large})"
        )));
    }
    let k = pool.num_classes();
    let want = k / 2;
    let mut minority_classes: Vec<usize> = match minority {
        Some(m) => {
            let mut m = m.to_vec();
            m.sort_unstable();
            m.dedup();
            if m.len() != want || m.iter().any(|&c| c >= k) {
                return Err(Error::Config(format!(
                    "pinned minority set {m:?} must hold {want} distinct classes below {k}"
                )));
            }
            m
        }
        None => {
            let mut classes: Vec<usize> = (0..k).collect();
            classes.shuffle(&mut rng::stream(seed, &[rng::tag("minority")]));
            classes.truncate(want);
            classes
        }
    };
    minority_classes.sort_unstable();
    let spec = ScenarioSpec {
        minority_classes,
        n_small,
        n_large,
        seed,
    };

    let mut keep = vec![false; pool.len()];
    for class in 0..k {
        let members = pool.class_indices(class);
        let required = spec.class_size(class);
        if members.len() < required {
            return Err(Error::Pool {
                class,
                name: pool.vocab().name(class).to_owned(),
                available: members.len(),
                required,
            });
        }
        let mut rng = rng::stream(seed, &[rng::tag("subsample"), class as u64]);
        for i in index::sample(&mut rng, members.len(), required) {
            keep[members[i]] = true;
        }
    }

    let mut train = LabeledEmbeddingSet::empty(pool.dim(), pool.vocab().clone());
    for (i, (label, v)) in pool.iter().enumerate() {
        if keep[i] {
            train.push(label, v)?;
        }
    }
    Ok((train, spec))
}
