//! Equi-width key-distribution histogram over the sort-key domain.

pub const BUCKETS: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    key_space: u64,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// Histogram over `[0, key_space]`.
    pub fn new(key_space: u64) -> Self {
        Histogram { key_space: key_space.max(1), counts: vec![0; BUCKETS] }
    }

    fn width(&self) -> u128 {
        (self.key_space as u128 + 1).div_ceil(BUCKETS as u128)
    }

    pub fn bucket_of(&self, key: u64) -> usize {
        ((key as u128 / self.width()) as usize).min(BUCKETS - 1)
    }

    pub fn add_key(&mut self, key: u64) {
        let b = self.bucket_of(key);
        self.counts[b] += 1;
    }

    pub fn add(&mut self, other: &[u64]) {
        for (c, o) in self.counts.iter_mut().zip(other) {
            *c += o;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Estimated entries with sort key in `[lo, hi)`, assuming keys are
    /// uniform within each bucket.
    pub fn estimate_range(&self, lo: u64, hi: u64) -> f64 {
        if lo >= hi {
            return 0.0;
        }
        let width = self.width();
        let (lo, hi) = (lo as u128, hi as u128);
        let mut total = 0.0;
        for (b, &count) in self.counts.iter().enumerate() {
            if count == 0 {
                continue;
            }
            let start = b as u128 * width;
            let end = if b == BUCKETS - 1 { u128::MAX } else { start + width };
            let overlap_lo = lo.max(start);
            let overlap_hi = hi.min(end);
            if overlap_lo < overlap_hi {
                let span =
                    if b == BUCKETS - 1 { (self.key_space as u128 + 1).saturating_sub(start).max(1) } else { width };
                let frac = ((overlap_hi - overlap_lo) as f64 / span as f64).min(1.0);
                total += count as f64 * frac;
            }
        }
        total
    }
}
