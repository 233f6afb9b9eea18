//! Fixed-algorithm PRNG for reproducible scene generation.
//!
//! PCG XSH-RR 64/32 (O'Neill): 64-bit LCG state, 32-bit permuted output.
//! Multiplier 6364136223846793005 and the seeding sequence follow the
//! reference implementation, so streams are identical across platforms
//! and releases — scene directories must be bitwise reproducible from
//! a seed alone.

const MULTIPLIER: u64 = 6364136223846793005;
const DEFAULT_STREAM: u64 = 1442695040888963407;

#[derive(Debug, Clone)]
pub struct Pcg32 {
    state: u64,
    inc: u64,
}

impl Pcg32 {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, DEFAULT_STREAM >> 1)
    }

    /// Independent stream per `stream` value (sequence selector).
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut rng = Pcg32 {
            state: 0,
            inc: (stream << 1) | 1,
        };
        rng.next_u32();
        rng.state = rng.state.wrapping_add(seed);
        rng.next_u32();
        rng
    }

    pub fn next_u32(&mut self) -> u32 {
        let old = self.state;
        self.state = old.wrapping_mul(MULTIPLIER).wrapping_add(self.inc);
        let xorshifted = (((old >> 18) ^ old) >> 27) as u32;
        let rot = (old >> 59) as u32;
        xorshifted.rotate_right(rot)
    }

    pub fn next_u64(&mut self) -> u64 {
        let hi = self.next_u32() as u64;
        let lo = self.next_u32() as u64;
        (hi << 32) | lo
    }

    /// Uniform in [0, 1) with 53 bits of mantissa.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn range_f64(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform in [0, n) without modulo bias (Lemire rejection).
    pub fn below(&mut self, n: u32) -> u32 {
        assert!(n > 0);
        let threshold = n.wrapping_neg() % n;
        loop {
            let x = self.next_u32();
            if x >= threshold {
                return x % n;
            }
        }
    }

    /// Uniform unit 3-vector via rejection sampling in the cube.
    pub fn unit_vector(&mut self) -> [f64; 3] {
        loop {
            let v = [
                self.range_f64(-1.0, 1.0),
                self.range_f64(-1.0, 1.0),
                self.range_f64(-1.0, 1.0),
            ];
            let n2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
            if n2 > 1e-6 && n2 <= 1.0 {
                let n = n2.sqrt();
                return [v[0] / n, v[1] / n, v[2] / n];
            }
        }
    }

    /// Pick `k` distinct indices from `0..n` (partial Fisher-Yates), sorted.
    pub fn choose_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n);
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below((n - i) as u32) as usize;
            pool.swap(i, j);
        }
        let mut picked = pool[..k].to_vec();
        picked.sort_unstable();
        picked
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_sequence() {
        // First outputs of the PCG32 reference implementation for
        // seed=42, stream=54.
        let mut rng = Pcg32::with_stream(42, 54);
        let expected: [u32; 6] = [
            0xa15c02b7, 0x7b47f409, 0xba1d3330, 0x83d2f293, 0xbfa4784b, 0xcbed606e,
        ];
        for &e in &expected {
            assert_eq!(rng.next_u32(), e);
        }
    }

    #[test]
    fn deterministic_across_instances() {
        let a: Vec<u32> = {
            let mut r = Pcg32::new(7);
            (0..32).map(|_| r.next_u32()).collect()
        };
        let b: Vec<u32> = {
            let mut r = Pcg32::new(7);
            (0..32).map(|_| r.next_u32()).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn f64_in_unit_interval() {
        let mut r = Pcg32::new(1);
        for _ in 0..1000 {
            let x = r.next_f64();
            assert!((0.0..1.0).contains(&x));
        }
    }

    #[test]
    fn unit_vectors_are_unit() {
        let mut r = Pcg32::new(3);
        for _ in 0..100 {
            let v = r.unit_vector();
            let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn choose_indices_distinct_and_in_range() {
        let mut r = Pcg32::new(9);
        let picked = r.choose_indices(500, 100);
        assert_eq!(picked.len(), 100);
        let mut dedup = picked.clone();
        dedup.dedup();
        assert_eq!(dedup.len(), 100);
        assert!(picked.iter().all(|&i| i < 500));
    }
}
