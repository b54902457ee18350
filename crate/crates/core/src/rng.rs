//! Pinned deterministic random streams.
//!
//! Reproducibility across runs (and across language ports) is a contract of
//! the experiment outputs, so the generator is fixed here rather than
//! delegated to an external crate whose stream may change between versions:
//!
//! - base generator: SplitMix64 (64-bit counter state, Steele et al. mixing
//!   constants);
//! - uniforms: the top 53 bits mapped to (0, 1];
//! - normals: Box-Muller on consecutive uniform pairs (no rejection, so the
//!   number of raw draws per sample is fixed);
//! - substreams: the sample used at iteration `k` of trial `t` of solver `s`
//!   is produced by a fresh SplitMix64 seeded with
//!   `mix(mix(mix(base ^ M*(s+1)) ^ M*(t+1)) ^ M*(k+1))`, `M` the golden
//!   ratio increment, `mix` the SplitMix64 finalizer.
//!
//! Seeding by `(solver, trial, iteration)` makes every sample a pure function
//! of those indices: trials parallelize without shared state, and two solvers
//! given the same seed consume identical noise streams (common random
//! numbers).

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer: bijective 64-bit mixing.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for trial `trial` of the solver at position `solver_index`.
#[inline]
pub fn trial_seed(base: u64, solver_index: u64, trial: u64) -> u64 {
    let s = mix64(base ^ GOLDEN.wrapping_mul(solver_index.wrapping_add(1)));
    mix64(s ^ GOLDEN.wrapping_mul(trial.wrapping_add(1)))
}

/// Seed for the sample drawn at 1-based iteration `k` within a trial.
#[inline]
pub fn step_seed(trial_seed: u64, k: u64) -> u64 {
    mix64(trial_seed ^ GOLDEN.wrapping_mul(k.wrapping_add(1)))
}

/// 64-bit-state counter generator.
#[derive(Clone, Debug)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix64(self.state)
    }

    /// Uniform draw in (0, 1] from the top 53 bits.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (((self.next_u64() >> 11) + 1) as f64) * (1.0 / 9_007_199_254_740_992.0)
    }

    /// One standard normal pair via Box-Muller.
    #[inline]
    pub fn next_normal_pair(&mut self) -> (f64, f64) {
        let u1 = self.next_f64();
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        (r * theta.cos(), r * theta.sin())
    }

    /// Fill `out` with standard normals, consuming ceil(len/2) pairs.
    pub fn fill_standard_normal(&mut self, out: &mut [f64]) {
        let mut i = 0;
        while i + 1 < out.len() {
            let (a, b) = self.next_normal_pair();
            out[i] = a;
            out[i + 1] = b;
            i += 2;
        }
        if i < out.len() {
            out[i] = self.next_normal_pair().0;
        }
    }
}
