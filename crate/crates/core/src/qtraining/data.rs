//! Synthetic sequence-to-sequence tasks.
//!
//! Each sample starts with a marker token (0 = copy, 1 = reverse) followed by
//! content tokens drawn uniformly from `2..vocab`. The target at position `i`
//! is the marker itself at `i = 0`, and otherwise the content token that the
//! variant maps to `i`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const COPY_MARKER: usize = 0;
pub const REVERSE_MARKER: usize = 1;
const FIRST_CONTENT: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskVariant {
    Copy,
    Reverse,
    /// Each sample is copy or reverse with equal probability.
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSpec {
    pub variant: TaskVariant,
    pub n_samples: usize,
    pub valid_fraction: f64,
}

impl Default for TaskSpec {
    fn default() -> Self {
        TaskSpec {
            variant: TaskVariant::Reverse,
            n_samples: 4096,
            valid_fraction: 0.125,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub source: Vec<usize>,
    pub target: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub train: Vec<Sample>,
    pub valid: Vec<Sample>,
}

/// The copy task with mixed variants and a 1/8 validation split.
pub fn make_copy_task(
    vocab: usize,
    seq_len: usize,
    n_samples: usize,
    seed: u64,
) -> Result<Dataset> {
    make_task(
        vocab,
        seq_len,
        &TaskSpec {
            variant: TaskVariant::Mixed,
            n_samples,
            ..TaskSpec::default()
        },
        seed,
    )
}

pub fn make_task(vocab: usize, seq_len: usize, task: &TaskSpec, seed: u64) -> Result<Dataset> {
    if vocab < 4 {
        return Err(Error::Config(format!(
            "copy task needs vocab ≥ 4, got {vocab}"
        )));
    }
    if seq_len < 2 {
        return Err(Error::Config(format!(
            "copy task needs seq_len ≥ 2, got {seq_len}"
        )));
    }
    if !(0.0..1.0).contains(&task.valid_fraction) {
        return Err(Error::Config(format!(
            "valid_fraction must be in [0, 1), got {}",
            task.valid_fraction
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples: Vec<Sample> = (0..task.n_samples)
        .map(|_| {
            let reverse = match task.variant {
                TaskVariant::Copy => false,
                TaskVariant::Reverse => true,
                TaskVariant::Mixed => rng.random_bool(0.5),
            };
            let content: Vec<usize> = (1..seq_len)
                .map(|_| rng.random_range(FIRST_CONTENT..vocab))
                .collect();
            let marker = if reverse { REVERSE_MARKER } else { COPY_MARKER };
            let mut source = vec![marker];
            source.extend(&content);
            let mut target = vec![marker];
            if reverse {
                target.extend(content.iter().rev());
            } else {
                target.extend(&content);
            }
            Sample { source, target }
        })
        .collect();
    let n_valid = (task.n_samples as f64 * task.valid_fraction).round() as usize;
    let mut train = samples;
    let valid = train.split_off(task.n_samples - n_valid);
    Ok(Dataset { train, valid })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_well_formed() {
        let a = make_copy_task(16, 8, 200, 7).unwrap();
        assert_eq!(a, make_copy_task(16, 8, 200, 7).unwrap());
        assert_ne!(a, make_copy_task(16, 8, 200, 8).unwrap());
        assert_eq!((a.train.len(), a.valid.len()), (175, 25));
        for s in a.train.iter().chain(&a.valid) {
            assert_eq!(s.source.len(), 8);
            if s.source[0] == COPY_MARKER {
                assert_eq!(s.source, s.target);
            } else {
                let mut rev = s.source[1..].to_vec();
                rev.reverse();
                assert_eq!(&s.target[1..], &rev[..]);
            }
        }
        assert!(make_copy_task(3, 8, 10, 0).is_err());
    }

    #[test]
    fn content_is_balanced() {
        let d = make_copy_task(12, 11, 10_000, 3).unwrap();
        let mut counts = [0usize; 12];
        for s in d.train.iter().chain(&d.valid) {
            for &t in &s.source[1..] {
                counts[t] += 1;
            }
        }
        // 10k samples of 10 content tokens spread over 10 classes.
        let expect = 10_000.0;
        for &c in &counts[2..] {
            assert!(((c as f64) - expect).abs() / expect < 0.05, "{counts:?}");
        }
        let copies = d
            .train
            .iter()
            .chain(&d.valid)
            .filter(|s| s.source[0] == COPY_MARKER)
            .count();
        assert!((copies as f64 / 10_000.0 - 0.5).abs() < 0.05);
    }
}
