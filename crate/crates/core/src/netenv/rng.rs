//! Named, seekable random substreams.
//!
//! One master seed fans out to independent streams keyed by a label and an
//! index, so that e.g. drawing more training samples never shifts the test
//! channels.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub const DEPLOYMENT: &str = "deployment";
pub const CHANNEL: &str = "channel";
pub const ERROR: &str = "error";
pub const TRAINING: &str = "training";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedTree {
    master: u64,
}

impl SeedTree {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    /// Seed for `(label, index)`.
    pub fn seed(&self, label: &str, index: u64) -> u64 {
        let mut s = splitmix64(self.master ^ fnv1a(label.as_bytes()));
        s = splitmix64(s ^ index.wrapping_mul(0xA24B_AED4_963E_E407));
        s
    }

    pub fn stream(&self, label: &str, index: u64) -> StreamRng {
        StreamRng::seed_from_u64(self.seed(label, index))
    }

    /// A child tree, for nesting (e.g. one tree per experiment stage).
    pub fn child(&self, label: &str) -> SeedTree {
        SeedTree::new(self.seed(label, u64::MAX))
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}
