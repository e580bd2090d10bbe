//! Deterministic pseudo-random streams.
//!
//! Every stochastic component of the engine (weight initialization, simulated
//! noise) draws from a 64-bit xorshift* generator with the constants below.
//! Independent streams are derived from a `(seed, purpose tag)` pair so that,
//! for example, changing the noise draw count never perturbs weight init.
//!
//! Generator: `xorshift64*` — state update `s ^= s >> 12; s ^= s << 25;
//! s ^= s >> 27` followed by multiplication with `0x2545F4914F6CDD1D`.
//! Stream derivation: FNV-1a over the tag bytes, XORed into the seed, then
//! scrambled once with the SplitMix64 finalizer so that nearby seeds do not
//! produce correlated streams.

const XORSHIFT_MULT: u64 = 0x2545_F491_4F6C_DD1D;
const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

#[derive(Debug, Clone)]
pub struct Stream {
    state: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

impl Stream {
    /// Derive the stream for `(seed, tag)`.
    pub fn new(seed: u64, tag: &str) -> Self {
        let mixed = splitmix64(seed ^ fnv1a(tag.as_bytes()));
        // xorshift state must be nonzero
        Stream {
            state: if mixed == 0 { XORSHIFT_MULT } else { mixed },
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut s = self.state;
        s ^= s >> 12;
        s ^= s << 25;
        s ^= s >> 27;
        self.state = s;
        s.wrapping_mul(XORSHIFT_MULT)
    }

    /// Uniform in [0, 1) with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Standard normal via Box-Muller (one draw per call, pairs cached).
    pub fn normal(&mut self) -> f64 {
        // Box-Muller without caching keeps the stream position a pure
        // function of the call count.
        let u1 = loop {
            let u = self.next_f64();
            if u > 0.0 {
                break u;
            }
        };
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Poisson draw. Knuth's product method for small rates; larger rates are
    /// split in halves (a Poisson sum is Poisson), which keeps the method
    /// exact and avoids exp underflow.
    pub fn poisson(&mut self, lambda: f64) -> u64 {
        assert!(lambda >= 0.0 && lambda.is_finite());
        let mut remaining = lambda;
        let mut total = 0u64;
        while remaining > 64.0 {
            let half = remaining / 2.0;
            total += self.poisson_knuth(half);
            remaining -= half;
        }
        total + self.poisson_knuth(remaining)
    }

    fn poisson_knuth(&mut self, lambda: f64) -> u64 {
        let limit = (-lambda).exp();
        let mut k = 0u64;
        let mut p = 1.0;
        loop {
            p *= self.next_f64();
            if p <= limit {
                return k;
            }
            k += 1;
        }
    }
}
