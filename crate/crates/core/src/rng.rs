//! Small self-contained PRNG so manifests, splits, weight init and
//! dropout stay bit-stable across dependency upgrades.
//!
//! The generator is xoshiro256** seeded through splitmix64. Streams for
//! unrelated purposes (undersampling, splitting, init, dropout, batch
//! shuffling) are decorrelated by mixing a stream tag into the seed.

/// Stream tags keep independent uses of the same user seed apart.
#[derive(Debug, Clone, Copy)]
pub enum Stream {
    Undersample,
    Split,
    WeightInit,
    Dropout,
    BatchShuffle,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Undersample => 0x5u64,
            Stream::Split => 0x1dead,
            Stream::WeightInit => 0x2beef,
            Stream::Dropout => 0x3f00d,
            Stream::BatchShuffle => 0x4cafe,
        }
    }
}

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Mix a seed with a stream tag and an arbitrary key (family index,
/// epoch number, sample index...) into a fresh generator seed.
pub fn mix(seed: u64, stream: Stream, key: u64) -> u64 {
    let mut s = seed ^ stream.tag().rotate_left(17);
    let a = splitmix64(&mut s);
    let mut s2 = a ^ key.wrapping_mul(0xd1342543de82ef95);
    splitmix64(&mut s2)
}

/// xoshiro256** generator.
#[derive(Debug, Clone)]
pub struct Rng {
    s: [u64; 4],
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        let mut sm = seed;
        let s = [
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
        ];
        Rng { s }
    }

    pub fn from_stream(seed: u64, stream: Stream, key: u64) -> Self {
        Rng::new(mix(seed, stream, key))
    }

    pub fn next_u64(&mut self) -> u64 {
        let result = self.s[1]
            .wrapping_mul(5)
            .rotate_left(7)
            .wrapping_mul(9);
        let t = self.s[1] << 17;
        self.s[2] ^= self.s[0];
        self.s[3] ^= self.s[1];
        self.s[1] ^= self.s[2];
        self.s[0] ^= self.s[3];
        self.s[2] ^= t;
        self.s[3] = self.s[3].rotate_left(45);
        result
    }

    /// Uniform integer in `[0, bound)` via rejection sampling (no modulo bias).
    pub fn next_below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "bound must be positive");
        let zone = u64::MAX - (u64::MAX % bound);
        loop {
            let v = self.next_u64();
            if v < zone {
                return v % bound;
            }
        }
    }

    /// Uniform f32 in `[0, 1)`.
    pub fn next_f32(&mut self) -> f32 {
        // 24 high bits -> exactly representable in f32.
        (self.next_u64() >> 40) as f32 * (1.0 / (1u64 << 24) as f32)
    }

    /// Uniform f32 in `[-limit, limit]`.
    pub fn next_symmetric(&mut self, limit: f32) -> f32 {
        (self.next_f32() * 2.0 - 1.0) * limit
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, data: &mut [T]) {
        for i in (1..data.len()).rev() {
            let j = self.next_below(i as u64 + 1) as usize;
            data.swap(i, j);
        }
    }

    /// Choose `k` distinct indices from `0..n`, returned in increasing order.
    pub fn choose_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n);
        let mut idx: Vec<usize> = (0..n).collect();
        // Partial Fisher-Yates: the first k slots end up uniform without replacement.
        for i in 0..k {
            let j = i + self.next_below((n - i) as u64) as usize;
            idx.swap(i, j);
        }
        let mut chosen = idx[..k].to_vec();
        chosen.sort_unstable();
        chosen
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_for_seed() {
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn streams_diverge() {
        assert_ne!(
            mix(7, Stream::Undersample, 0),
            mix(7, Stream::Split, 0)
        );
        assert_ne!(mix(7, Stream::Split, 0), mix(7, Stream::Split, 1));
    }

    #[test]
    fn next_below_in_range() {
        let mut rng = Rng::new(1);
        for bound in [1u64, 2, 3, 10, 1000] {
            for _ in 0..200 {
                assert!(rng.next_below(bound) < bound);
            }
        }
    }

    #[test]
    fn choose_indices_distinct_sorted() {
        let mut rng = Rng::new(3);
        let chosen = rng.choose_indices(100, 40);
        assert_eq!(chosen.len(), 40);
        for w in chosen.windows(2) {
            assert!(w[0] < w[1]);
        }
    }

    #[test]
    fn shuffle_is_permutation() {
        let mut rng = Rng::new(9);
        let mut v: Vec<usize> = (0..50).collect();
        rng.shuffle(&mut v);
        let mut sorted = v.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
    }
}
