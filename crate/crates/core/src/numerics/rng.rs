//! Deterministic pseudo-random numbers.
//!
//! xoshiro256++ seeded through SplitMix64, so the same seed yields the
//! same stream on every platform. Constants follow the published
//! reference implementations of both generators.

use super::NumericsError;

#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    state: [u64; 4],
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

impl Rng {
    pub fn seed_from_u64(seed: u64) -> Rng {
        let mut s = seed;
        let state = [
            splitmix64(&mut s),
            splitmix64(&mut s),
            splitmix64(&mut s),
            splitmix64(&mut s),
        ];
        Rng { seed, state }
    }

    /// Independent stream for a named sub-task, stable in the label and
    /// base seed only (safe to compute in any order, e.g. per video).
    pub fn derive(base_seed: u64, label: &str) -> Rng {
        // FNV-1a over the label.
        let mut h: u64 = 0xcbf29ce484222325;
        for b in label.as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x100000001b3);
        }
        Rng::seed_from_u64(base_seed ^ h)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Child generator seeded from this stream.
    pub fn fork(&mut self) -> Rng {
        Rng::seed_from_u64(self.next_u64())
    }

    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.state;
        let result = s[0].wrapping_add(s[3]).rotate_left(23).wrapping_add(s[0]);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }

    /// Uniform in [0, 1) with 53 random mantissa bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in [0, n). Uses the widening-multiply reduction;
    /// the bias is below n / 2^64.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (((self.next_u64() as u128) * (n as u128)) >> 64) as usize
    }

    /// Standard normal via Box-Muller (two uniform draws per call).
    pub fn normal(&mut self) -> f64 {
        let u1 = loop {
            let u = self.next_f64();
            if u > 0.0 {
                break u;
            }
        };
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }
}

/// Draw an index proportionally to `weights` (renormalized internally).
pub fn sample_categorical(weights: &[f64], rng: &mut Rng) -> Result<usize, NumericsError> {
    if weights.is_empty() {
        return Err(NumericsError::Empty {
            context: "sample_categorical",
        });
    }
    let mut sum = 0.0;
    for &w in weights {
        if !w.is_finite() {
            return Err(NumericsError::NonFinite {
                context: "sample_categorical",
            });
        }
        if w < 0.0 {
            return Err(NumericsError::NegativeWeight { value: w });
        }
        sum += w;
    }
    if sum <= 0.0 {
        return Err(NumericsError::ZeroMass);
    }
    let target = rng.next_f64() * sum;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last_positive = i;
            if target < acc {
                return Ok(i);
            }
        }
    }
    // Rounding spill: fall back to the last index with positive weight.
    Ok(last_positive)
}
