//! Deterministic random numbers for dataset generation and probe directions.
//!
//! Benchmark trials must be byte-reproducible from a seed alone, so the generators are
//! pinned here rather than left to an external crate's (potentially version-dependent)
//! sampler. Two independent streams exist because they serve different contracts:
//!
//! * **Dataset stream** ([`Lehmer64`]): defines the benchmark data and therefore every
//!   seeded result the crate reports. PRNG: the 128-bit multiplicative congruential
//!   generator `state *= 0xDA942042E4DD58B5` returning the high 64 bits (Lehmer/MCG128,
//!   the `lehmer64` parameterization); the `u64` seed is expanded to the odd 128-bit
//!   initial state by two SplitMix64 outputs. Uniforms take the top 53 bits of each
//!   output, scaled to [0, 1). Normals use the Box–Muller cosine branch:
//!   `sqrt(-2 ln u1) * cos(2 pi u2)`, with `u1` redrawn while zero, so every normal
//!   consumes exactly two uniforms and is a pure function of the stream position.
//! * **Probe stream** ([`SplitMix64`]): seeds the random directions used by spectral
//!   and diagnostic probes (quadratic checks, contraction-radius sampling). It only
//!   needs to be deterministic, not part of the data identity. PRNG: SplitMix64
//!   (Steele, Lea & Flood 2014) — state advances by the 64-bit golden ratio constant,
//!   output is the standard xor-shift/multiply finalizer. Normals use the Marsaglia
//!   polar method (first coordinate only, nothing cached between calls).

/// SplitMix64 stream seeded directly from a `u64`.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1) with 53-bit resolution.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via the Marsaglia polar method (first coordinate only).
    pub fn next_normal(&mut self) -> f64 {
        loop {
            let v1 = 2.0 * self.next_f64() - 1.0;
            let v2 = 2.0 * self.next_f64() - 1.0;
            let s = v1 * v1 + v2 * v2;
            if s > 0.0 && s < 1.0 {
                return v1 * (-2.0 * s.ln() / s).sqrt();
            }
        }
    }

    /// A vector of independent standard normals.
    pub fn normal_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.next_normal()).collect()
    }
}

/// 128-bit multiplicative congruential generator (`lehmer64`); the dataset stream.
#[derive(Debug, Clone)]
pub struct Lehmer64 {
    state: u128,
}

impl Lehmer64 {
    /// Expand a 64-bit seed into the 128-bit initial state via two SplitMix64
    /// outputs; the low bit is forced on so the multiplicative state is never zero.
    pub fn new(seed: u64) -> Self {
        let mut sm = SplitMix64::new(seed);
        let hi = sm.next_u64() as u128;
        let lo = sm.next_u64() as u128;
        Lehmer64 {
            state: ((hi << 64) | lo) | 1,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_mul(0xDA942042E4DD58B5);
        (self.state >> 64) as u64
    }

    /// Uniform in [0, 1) with 53-bit resolution.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via the Box–Muller cosine branch: exactly two uniforms per
    /// draw (`u1` redrawn while zero, probability 2^-53 per draw).
    pub fn next_normal(&mut self) -> f64 {
        let mut u1 = self.next_f64();
        while u1 == 0.0 {
            u1 = self.next_f64();
        }
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}
