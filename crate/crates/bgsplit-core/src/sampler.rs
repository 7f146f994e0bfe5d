//! Batch composition: seeded uniform epochs and class-balanced sampling.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Example, Split};
use crate::error::{Error, Result};

/// Shuffle `indices` in place with the given rng (Fisher-Yates).
pub(crate) fn shuffle_indices(indices: &mut [usize], rng: &mut ChaCha8Rng) {
    indices.shuffle(rng);
}

/// Class-balanced batch stream: every slot first draws a class uniformly
/// from the classes present in the training split, then an example uniformly
/// within that class, with replacement.
#[derive(Debug)]
pub struct ClassBalancedSampler {
    /// Class labels in ascending order, parallel to `per_class`.
    classes: Vec<usize>,
    per_class: Vec<Vec<usize>>,
    rng: ChaCha8Rng,
}

impl ClassBalancedSampler {
    pub fn new(examples: &[Example], n_foreground: usize, seed: u64) -> Result<Self> {
        let mut per_label: Vec<Vec<usize>> = alloc::vec![Vec::new(); n_foreground + 1];
        for (i, ex) in examples.iter().enumerate() {
            if ex.split == Split::Train {
                let slot = per_label.get_mut(ex.main_label).ok_or_else(|| {
                    Error::Config(format!(
                        "example {} has label {} beyond {n_foreground} foreground classes",
                        ex.id, ex.main_label
                    ))
                })?;
                slot.push(i);
            }
        }
        let mut classes = Vec::new();
        let mut per_class = Vec::new();
        for (label, members) in per_label.into_iter().enumerate() {
            if !members.is_empty() {
                classes.push(label);
                per_class.push(members);
            }
        }
        if classes.is_empty() {
            return Err(Error::Config(String::from(
                "class-balanced sampling needs at least one class with training examples",
            )));
        }
        Ok(Self {
            classes,
            per_class,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Class labels that participate in sampling.
    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    pub fn next_batch(&mut self, batch_size: usize) -> Vec<usize> {
        let mut batch = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            let c = self.rng.random_range(0..self.classes.len());
            let members = &self.per_class[c];
            let j = self.rng.random_range(0..members.len());
            batch.push(members[j]);
        }
        batch
    }
}

/// Build the full stream of class-balanced batches for one pass of
/// `num_batches` batches.
pub fn class_balanced_batches(
    examples: &[Example],
    n_foreground: usize,
    batch_size: usize,
    num_batches: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Config(String::from("batch size must be positive")));
    }
    let mut sampler = ClassBalancedSampler::new(examples, n_foreground, seed)?;
    Ok((0..num_batches).map(|_| sampler.next_batch(batch_size)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example(id: usize, y: usize, split: Split) -> Example {
        Example {
            id: format!("e{id:04}"),
            features: alloc::vec![0.0],
            original_label: "src".into(),
            main_label: y,
            aux_label: None,
            split,
        }
    }

    #[test]
    fn single_class_reduces_to_uniform_over_that_class() {
        let examples: Vec<Example> = (0..10).map(|i| example(i, 0, Split::Train)).collect();
        let mut s = ClassBalancedSampler::new(&examples, 2, 3).unwrap();
        assert_eq!(s.classes(), &[0]);
        let batch = s.next_batch(100);
        assert!(batch.iter().all(|&i| i < 10));
    }

    #[test]
    fn heavily_skewed_classes_draw_evenly() {
        // 99:1 ratio; draws per class should be close to 50/50.
        let mut examples: Vec<Example> = (0..9900).map(|i| example(i, 0, Split::Train)).collect();
        examples.extend((9900..10000).map(|i| example(i, 1, Split::Train)));
        let mut s = ClassBalancedSampler::new(&examples, 1, 11).unwrap();
        let batch = s.next_batch(10_000);
        let minority = batch.iter().filter(|&&i| i >= 9900).count();
        // Binomial(10000, 0.5): 3 sigma is 150.
        assert!((minority as f64 - 5000.0).abs() < 150.0, "minority draws: {minority}");
    }

    #[test]
    fn fixed_seed_reproduces_batches() {
        let examples: Vec<Example> = (0..50)
            .map(|i| example(i, i % 3, Split::Train))
            .collect();
        let a = class_balanced_batches(&examples, 2, 8, 5, 21).unwrap();
        let b = class_balanced_batches(&examples, 2, 8, 5, 21).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn test_split_examples_are_ignored() {
        let mut examples: Vec<Example> = (0..5).map(|i| example(i, 0, Split::Train)).collect();
        examples.push(example(5, 1, Split::Test));
        // Class 1 exists only in the test split, so it never participates.
        let s = ClassBalancedSampler::new(&examples, 1, 0).unwrap();
        assert_eq!(s.classes(), &[0]);
    }

    #[test]
    fn empty_training_split_is_an_error() {
        let examples = [example(0, 0, Split::Test)];
        assert!(ClassBalancedSampler::new(&examples, 1, 0).is_err());
    }
}
