//! Deterministic named randomness streams.
//!
//! Every sampling site in the crate draws from a stream addressed by
//! (seed, label) or (seed, label, index). Streams are independent ChaCha12
//! generators keyed by SHA-256 of the address, so:
//!
//! - identical [`RngSpec`] ⇒ bit-identical sampled data;
//! - enlarging one source (say, the number of tasks) never shifts the draws
//!   of another (say, the ground-truth matrix);
//! - per-task substreams allow order-independent task generation.
//!
//! Determinism is per seed on one platform; the Gaussian layer uses the
//! ziggurat sampler, which is fixed by the byte stream but not guaranteed
//! bit-identical across architectures or library versions.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Names of the crate's randomness sources.
///
/// The defaults are used everywhere in practice; the fields exist so that a
/// deliberately disjoint namespace can be created (e.g. for a second batch
/// drawn from the same seed).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StreamLabels {
    /// Ground-truth structure: B★ first, then μ★ when it is random.
    pub b_star: String,
    /// Task parameters w★,i (one substream per task index).
    pub tasks: String,
    /// Design matrices X (one substream per task index).
    pub features: String,
    /// Label noise z (one substream per task index).
    pub noise: String,
    /// Learner initialisation (B₀, then w₀).
    pub init: String,
}

impl Default for StreamLabels {
    fn default() -> Self {
        Self {
            b_star: "b_star".into(),
            tasks: "tasks".into(),
            features: "features".into(),
            noise: "noise".into(),
            init: "init".into(),
        }
    }
}

/// Seed plus stream labels; the single source of randomness for a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngSpec {
    pub seed: u64,
    #[serde(default)]
    pub labels: StreamLabels,
}

impl RngSpec {
    pub fn new(seed: u64) -> Self {
        Self { seed, labels: StreamLabels::default() }
    }

    fn digest(&self, label: &str, idx: Option<u64>) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update([0u8]);
        h.update(label.as_bytes());
        if let Some(i) = idx {
            h.update([1u8]);
            h.update(i.to_le_bytes());
        }
        h.finalize().into()
    }

    /// Generator for a flat named stream.
    pub fn stream(&self, label: &str) -> ChaCha12Rng {
        ChaCha12Rng::from_seed(self.digest(label, None))
    }

    /// Generator for the `idx`-th substream of a named stream.
    pub fn indexed(&self, label: &str, idx: u64) -> ChaCha12Rng {
        ChaCha12Rng::from_seed(self.digest(label, Some(idx)))
    }

    /// Derived spec with an independent seed; labels are inherited.
    ///
    /// Used to namespace whole sampling contexts: validation vs. test task
    /// populations, per-run seeds of a multi-run experiment, fresh Monte-Carlo
    /// batches.
    pub fn child(&self, label: &str) -> RngSpec {
        let d = self.digest(label, None);
        RngSpec { seed: u64::from_le_bytes(d[8..16].try_into().unwrap()), labels: self.labels.clone() }
    }

    /// Derived spec addressed by label and index (e.g. run number).
    pub fn child_indexed(&self, label: &str, idx: u64) -> RngSpec {
        let d = self.digest(label, Some(idx));
        RngSpec { seed: u64::from_le_bytes(d[8..16].try_into().unwrap()), labels: self.labels.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn identical_specs_reproduce_identical_draws() {
        let a = RngSpec::new(7);
        let b = RngSpec::new(7);
        let xs: Vec<u64> = a.stream("tasks").random_iter().take(32).collect();
        let ys: Vec<u64> = b.stream("tasks").random_iter().take(32).collect();
        assert_eq!(xs, ys);
    }

    #[test]
    fn streams_are_pairwise_distinct() {
        let spec = RngSpec::new(7);
        let labels = ["b_star", "tasks", "features", "noise", "init"];
        let firsts: Vec<u64> = labels.iter().map(|l| spec.stream(l).random()).collect();
        for i in 0..firsts.len() {
            for j in i + 1..firsts.len() {
                assert_ne!(firsts[i], firsts[j], "streams {} and {} collide", labels[i], labels[j]);
            }
        }
    }

    #[test]
    fn indexed_substreams_differ_from_flat_stream_and_each_other() {
        let spec = RngSpec::new(7);
        let flat: u64 = spec.stream("features").random();
        let s0: u64 = spec.indexed("features", 0).random();
        let s1: u64 = spec.indexed("features", 1).random();
        assert_ne!(flat, s0);
        assert_ne!(s0, s1);
    }

    #[test]
    fn children_are_independent_of_parent_and_indexed_children_distinct() {
        let spec = RngSpec::new(7);
        assert_ne!(spec.child("eval").seed, spec.seed);
        assert_ne!(spec.child_indexed("run", 0).seed, spec.child_indexed("run", 1).seed);
        // Same derivation twice is stable.
        assert_eq!(spec.child("eval"), spec.child("eval"));
    }
}
