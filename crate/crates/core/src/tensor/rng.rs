use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Tensor, TensorError};

/// Deterministic random source: ChaCha8 keyed by a 64-bit seed.
///
/// ChaCha8 output is defined bit-for-bit independently of platform, so the
/// same seed reproduces the same draws everywhere. Independent streams for
/// different purposes (initialisation, shuffling, dropout) share a seed
/// and differ in the ChaCha stream id.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub const ALGORITHM: &'static str = "chacha8";

    pub fn new(seed: u64) -> Self {
        Rng::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Rng { seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `0..n`. Panics if `n == 0`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.gen()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    pub fn choose<'a, T>(&mut self, items: &'a [T]) -> &'a T {
        &items[self.below(items.len())]
    }

    pub fn uniform_tensor(&mut self, shape: &[usize], lo: f64, hi: f64) -> Tensor {
        let mut t = Tensor::zeros(shape);
        for x in t.data_mut() {
            *x = self.uniform(lo, hi);
        }
        t
    }
}

/// Inverted-dropout mask: each entry is `1 / (1 - rate)` with probability
/// `1 - rate` and 0 otherwise. Outside training the mask is all ones.
pub fn dropout_mask(
    shape: &[usize],
    rate: f64,
    rng: &mut Rng,
    training: bool,
) -> Result<Tensor, TensorError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(TensorError::invalid(
            "dropout",
            format!("rate must lie in [0, 1), got {rate}"),
        ));
    }
    let mut mask = Tensor::ones(shape);
    if !training || rate == 0.0 {
        return Ok(mask);
    }
    let keep = 1.0 - rate;
    for x in mask.data_mut() {
        *x = if rng.bernoulli(keep) { 1.0 / keep } else { 0.0 };
    }
    Ok(mask)
}
