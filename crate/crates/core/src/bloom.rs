//! Per-page Bloom filters on the sort key.
//!
//! Every probe position is derived from a single 64-bit digest of the key by
//! double hashing: `probe_i = (h1 + i * h2) mod bits`.

use xxhash_rust::xxh3::xxh3_64_with_seed;

const DIGEST_SEED: u64 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Probe {
    MaybePresent,
    DefinitelyAbsent,
}

/// Digest shared by every filter probe for `key`.
#[inline]
pub fn key_digest(key: u64) -> u64 {
    xxh3_64_with_seed(&key.to_le_bytes(), DIGEST_SEED)
}

/// `round(bits_per_entry * ln 2)`, at least one.
pub fn probe_count(bits_per_entry: f64) -> u32 {
    ((bits_per_entry * std::f64::consts::LN_2).round() as u32).max(1)
}

/// Closed-form false positive rate `e^(-(m/N) (ln 2)^2)`.
pub fn expected_fpr(bits_per_entry: f64) -> f64 {
    (-bits_per_entry * std::f64::consts::LN_2 * std::f64::consts::LN_2).exp()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PageBloomFilter {
    words: Vec<u64>,
    num_bits: u32,
    num_probes: u32,
}

impl PageBloomFilter {
    pub fn with_bits(num_bits: u32, num_probes: u32) -> Self {
        PageBloomFilter { words: vec![0; (num_bits as usize).div_ceil(64)], num_bits, num_probes: num_probes.max(1) }
    }

    /// Filter sized `ceil(bits_per_entry * keys.len())` holding `keys`.
    pub fn build(keys: impl ExactSizeIterator<Item = u64>, bits_per_entry: f64) -> Self {
        let num_bits = (bits_per_entry * keys.len() as f64).ceil() as u32;
        let mut filter = Self::with_bits(num_bits, probe_count(bits_per_entry));
        for k in keys {
            filter.insert(k);
        }
        filter
    }

    /// Clears the filter and re-inserts `keys`, keeping the bit budget.
    pub fn rebuild(&mut self, keys: impl Iterator<Item = u64>) {
        self.words.iter_mut().for_each(|w| *w = 0);
        for k in keys {
            self.insert(k);
        }
    }

    #[inline]
    fn positions(&self, digest: u64) -> impl Iterator<Item = u32> + '_ {
        let h1 = digest & 0xffff_ffff;
        let h2 = (digest >> 32) | 1;
        let bits = self.num_bits as u64;
        (0..self.num_probes as u64).map(move |i| (h1.wrapping_add(i.wrapping_mul(h2)) % bits) as u32)
    }

    pub fn insert(&mut self, key: u64) {
        if self.num_bits == 0 {
            return;
        }
        let digest = key_digest(key);
        let positions: Vec<u32> = self.positions(digest).collect();
        for p in positions {
            self.words[(p / 64) as usize] |= 1 << (p % 64);
        }
    }

    pub fn query(&self, key: u64) -> Probe {
        self.query_digest(key_digest(key)).0
    }

    /// Probes with a precomputed digest. Also returns how many probe
    /// positions were computed before the answer was known.
    pub fn query_digest(&self, digest: u64) -> (Probe, u32) {
        if self.num_bits == 0 {
            return (Probe::DefinitelyAbsent, 0);
        }
        let mut computed = 0;
        for p in self.positions(digest) {
            computed += 1;
            if self.words[(p / 64) as usize] & (1 << (p % 64)) == 0 {
                return (Probe::DefinitelyAbsent, computed);
            }
        }
        (Probe::MaybePresent, computed)
    }

    pub fn num_bits(&self) -> u32 {
        self.num_bits
    }

    pub fn num_probes(&self) -> u32 {
        self.num_probes
    }

    pub fn memory_bytes(&self) -> usize {
        (self.num_bits as usize).div_ceil(8)
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|w| *w == 0)
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.num_bits.to_le_bytes());
        out.extend_from_slice(&self.num_probes.to_le_bytes());
        for w in &self.words {
            out.extend_from_slice(&w.to_le_bytes());
        }
    }

    pub fn decode(buf: &[u8]) -> Option<(Self, usize)> {
        let num_bits = u32::from_le_bytes(buf.get(0..4)?.try_into().ok()?);
        let num_probes = u32::from_le_bytes(buf.get(4..8)?.try_into().ok()?);
        let n_words = (num_bits as usize).div_ceil(64);
        let mut words = Vec::with_capacity(n_words);
        for i in 0..n_words {
            let o = 8 + i * 8;
            words.push(u64::from_le_bytes(buf.get(o..o + 8)?.try_into().ok()?));
        }
        Some((PageBloomFilter { words, num_bits, num_probes }, 8 + n_words * 8))
    }
}
