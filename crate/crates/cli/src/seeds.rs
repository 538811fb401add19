//! Seed derivation tree.
//!
//! Every stage seed is the first output of ChaCha8 seeded with the parent
//! seed on a stage-specific stream:
//!
//! ```text
//! root ─┬─ state     (stream 1)
//!       ├─ sampling  (stream 2)
//!       ├─ noise     (stream 3)
//!       ├─ init      (stream 4)
//!       ├─ holdout   (stream 5)
//!       └─ repeat r  (stream 1000 + r) ─ same children again
//! ```
//!
//! The target state is always drawn from the root, so repeats of a sweep
//! point share the target and differ in sampling and initialisation.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeedTree {
    pub root: u64,
}

impl SeedTree {
    pub fn new(root: u64) -> Self {
        Self { root }
    }

    fn child(&self, stream: u64) -> u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.root);
        rng.set_stream(stream);
        rng.next_u64()
    }

    pub fn state(&self) -> u64 {
        self.child(1)
    }

    pub fn sampling(&self) -> u64 {
        self.child(2)
    }

    pub fn noise(&self) -> u64 {
        self.child(3)
    }

    pub fn init(&self) -> u64 {
        self.child(4)
    }

    pub fn holdout(&self) -> u64 {
        self.child(5)
    }

    pub fn repeat(&self, r: usize) -> SeedTree {
        SeedTree::new(self.child(1000 + r as u64))
    }
}
