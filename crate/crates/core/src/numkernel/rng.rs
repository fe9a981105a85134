//! Counter-based pseudo-randomness.
//!
//! Every draw is a pure function of `(seed, position)`: the `i`-th 64-bit
//! word is the SplitMix64 finalizer applied to `seed + (i + 1) * GAMMA`.
//! Nothing depends on platform word size or floating-point library calls
//! other than `ln`, `sqrt`, `cos`, `sin` in the normal transform.

use super::Tensor;

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RngState {
    pub seed: u64,
    pub position: u64,
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self { seed, position: 0 }
    }

    /// An independent stream keyed by `tag`, e.g. one per training stage.
    pub fn derive(&self, tag: u64) -> Self {
        Self::new(mix(self.seed ^ mix(tag.wrapping_add(GAMMA))))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.position = self.position.wrapping_add(1);
        mix(self.seed.wrapping_add(self.position.wrapping_mul(GAMMA)))
    }

    /// Uniform in the open interval (0, 1).
    pub fn next_uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)`; `n` must be positive.
    pub fn next_below(&mut self, n: usize) -> usize {
        assert!(n > 0, "next_below(0)");
        // Lemire's multiply-shift; the bias is < n / 2^64, irrelevant here.
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Box-Muller pair from two uniforms.
    pub fn next_normal_pair(&mut self) -> (f64, f64) {
        let u1 = self.next_uniform();
        let u2 = self.next_uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        (r * theta.cos(), r * theta.sin())
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_below(i + 1);
            items.swap(i, j);
        }
    }
}

/// I.i.d. standard normal tensor of the given shape; advances `rng`.
pub fn sample_standard_normal(rng: &mut RngState, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    while data.len() < n {
        let (a, b) = rng.next_normal_pair();
        data.push(a);
        if data.len() < n {
            data.push(b);
        }
    }
    Tensor::from_parts(shape.to_vec(), data)
}

/// Normal entries with the given standard deviation.
pub fn sample_normal(rng: &mut RngState, shape: &[usize], std: f64) -> Tensor {
    sample_standard_normal(rng, shape).map(|v| v * std)
}
