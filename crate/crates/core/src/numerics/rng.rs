use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Splits one `u64` run seed into independent streams named by purpose.
///
/// The stream for `(seed, label)` is a ChaCha8 generator keyed by
/// `splitmix64(seed ^ fnv1a64(label))`, so adding a new consumer never shifts the
/// numbers an existing one sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStream {
    seed: u64,
}

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn child(&self, label: &str) -> SeedStream {
        SeedStream { seed: derive_seed(self.seed, label) }
    }

    pub fn rng(&self, label: &str) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(derive_seed(self.seed, label))
    }
}

pub fn derive_seed(seed: u64, label: &str) -> u64 {
    splitmix64(seed ^ fnv1a64(label.as_bytes()))
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn normal_vec<R: rand::Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn hash_test_vectors() {
        assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a64(b"a"), 0xaf63_dc4c_8601_ec8c);
        // first SplitMix64 output from state 0
        assert_eq!(splitmix64(0), 0xe220_a839_7b1d_cdaf);
        assert_eq!(derive_seed(0xcbf2_9ce4_8422_2325, ""), 0xe220_a839_7b1d_cdaf);
    }

    #[test]
    fn streams_are_reproducible_and_separate() {
        let s = SeedStream::new(42);
        let a: Vec<u64> = (0..4).map(|_| 0).scan(s.rng("a"), |r, _: u64| Some(r.random())).collect();
        let a2: Vec<u64> = (0..4).map(|_| 0).scan(s.rng("a"), |r, _: u64| Some(r.random())).collect();
        let b: Vec<u64> = (0..4).map(|_| 0).scan(s.rng("b"), |r, _: u64| Some(r.random())).collect();
        assert_eq!(a, a2);
        assert_ne!(a, b);
        assert_eq!(s.child("x").seed(), derive_seed(42, "x"));
        assert_ne!(s.child("x").rng("y").random::<u64>(), s.rng("y").random::<u64>());
    }

    #[test]
    fn normals_have_unit_moments() {
        let v = normal_vec(&mut SeedStream::new(3).rng("n"), 20_000);
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
        // 4 standard errors
        assert!(m.abs() < 4.0 / (20_000f64).sqrt(), "{m}");
        assert!((var - 1.0).abs() < 4.0 * (2.0 / 20_000f64).sqrt(), "{var}");
    }
}
