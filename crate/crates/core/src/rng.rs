//! Keyed random streams: every (seed, sample, domain, index) gets its own ChaCha stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const DOMAIN_BRIDGE: u64 = 1;
pub const DOMAIN_BLACK: u64 = 2;
pub const DOMAIN_LABEL: u64 = 3;
pub const DOMAIN_MARKS: u64 = 4;
pub const DOMAIN_LOOP: u64 = 5;
pub const DOMAIN_MISC: u64 = 6;

pub fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Base generator for one (seed, sample, domain) triple; use [`Streams::at`] for per-item streams.
#[derive(Clone)]
pub struct Streams {
    base: ChaCha8Rng,
}

impl Streams {
    pub fn new(seed: u64, sample: u64, domain: u64) -> Self {
        let key = splitmix(splitmix(seed) ^ splitmix(sample.wrapping_mul(0x2545_f491_4f6c_dd1d)) ^ domain);
        Streams { base: ChaCha8Rng::seed_from_u64(key) }
    }

    pub fn at(&self, index: u64) -> ChaCha8Rng {
        let mut r = self.base.clone();
        r.set_stream(index);
        r.set_word_pos(0);
        r
    }
}

pub fn stream(seed: u64, sample: u64, domain: u64, index: u64) -> ChaCha8Rng {
    Streams::new(seed, sample, domain).at(index)
}
