use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Matrix, Real};

/// Seeded generator. All stochastic draws in a run flow through one of these.
///
/// Backed by ChaCha8 keyed from the 64-bit seed, so a given seed yields the
/// same stream on every platform. Normal deviates come from the ziggurat
/// sampler in `rand_distr`.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

/// SplitMix64 finalizer, used to derive independent substream seeds.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Substream keyed by `(seed, id)`. Does not advance `self`.
    pub fn substream(seed: u64, id: u64) -> Self {
        Self::new(mix64(seed ^ mix64(id)))
    }

    /// Fresh generator seeded from the next draw of this one.
    pub fn fork(&mut self) -> Self {
        Self::new(self.inner.next_u64())
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// `rows × cols` matrix of i.i.d. standard normals, filled row-major.
    pub fn gaussian<T: Real>(&mut self, rows: usize, cols: usize) -> Matrix<T> {
        Matrix::from_fn(rows, cols, |_, _| T::of(self.normal()))
    }

    pub fn shuffle<E>(&mut self, items: &mut [E]) {
        items.shuffle(&mut self.inner);
    }
}

/// One generator per matrix row, so row-wise draws do not depend on how rows
/// are grouped into batches.
#[derive(Debug, Clone)]
pub struct RowStreams {
    streams: Vec<Rng>,
}

impl RowStreams {
    /// Streams keyed by `(seed, id)` for each row id, typically user ids.
    pub fn for_ids(seed: u64, ids: &[usize]) -> Self {
        Self {
            streams: ids
                .iter()
                .map(|&id| Rng::substream(seed, id as u64))
                .collect(),
        }
    }

    /// `rows` streams forked from `rng`.
    pub fn forked(rng: &mut Rng, rows: usize) -> Self {
        Self {
            streams: (0..rows).map(|_| rng.fork()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.streams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.streams.is_empty()
    }

    /// Row `r` is drawn from stream `r`.
    pub fn gaussian<T: Real>(&mut self, cols: usize) -> Matrix<T> {
        let rows = self.streams.len();
        let mut out = Matrix::zeros(rows, cols);
        for (r, rng) in self.streams.iter_mut().enumerate() {
            for v in out.row_mut(r) {
                *v = T::of(rng.normal());
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_matrix() {
        let a: Matrix<f64> = Rng::new(42).gaussian(7, 3);
        let b: Matrix<f64> = Rng::new(42).gaussian(7, 3);
        assert_eq!(a, b);
        let c: Matrix<f64> = Rng::new(43).gaussian(7, 3);
        assert_ne!(a, c);
    }

    #[test]
    fn single_entry_is_finite() {
        let m: Matrix<f64> = Rng::new(0).gaussian(1, 1);
        assert_eq!(m.shape(), (1, 1));
        assert!(m.get(0, 0).is_finite());
    }

    #[test]
    fn gaussian_moments() {
        let mut rng = Rng::new(42);
        let m: Matrix<f64> = rng.gaussian(1000, 1000);
        let n = m.as_slice().len() as f64;
        let mean = m.as_slice().iter().sum::<f64>() / n;
        let var = m.as_slice().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() <= 0.01, "mean {mean}");
        assert!((0.99..=1.01).contains(&var), "var {var}");
    }

    #[test]
    fn substreams_ignore_batch_partition() {
        let ids = [3usize, 9, 27, 4];
        let whole: Matrix<f64> = RowStreams::for_ids(5, &ids).gaussian(6);
        let head: Matrix<f64> = RowStreams::for_ids(5, &ids[..2]).gaussian(6);
        let tail: Matrix<f64> = RowStreams::for_ids(5, &ids[2..]).gaussian(6);
        assert_eq!(whole.row(0), head.row(0));
        assert_eq!(whole.row(1), head.row(1));
        assert_eq!(whole.row(2), tail.row(0));
        assert_eq!(whole.row(3), tail.row(1));
    }

    #[test]
    fn bernoulli_extremes() {
        let mut rng = Rng::new(1);
        assert!((0..1000).all(|_| !rng.bernoulli(0.0)));
        assert!((0..1000).all(|_| rng.bernoulli(1.0)));
    }
}
