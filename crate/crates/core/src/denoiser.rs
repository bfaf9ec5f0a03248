//! Conditional noise-prediction network.
//!
//! One hidden layer over the concatenation `[guidance ‖ x_t ‖ time]`:
//!
//! ```text
//! g     = l2_normalize(guidance)          (zero rows stay zero)
//! z     = [g ‖ x_t ‖ emb(t)]              B × (2N + d_t)
//! h     = tanh(z · W1 + b1)               B × H
//! ε̂     = h · W2 + b2                     B × N
//! ```
//!
//! Forward and backward passes are written out by hand; there is no autodiff.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_shape, Error, Result};
use crate::math::{Matrix, Real, Rng};

/// Base of the sinusoidal time features.
pub const TIME_BASE: f64 = 10_000.0;
pub const DEFAULT_HIDDEN: usize = 1000;
pub const DEFAULT_TIME_DIM: usize = 16;

/// Anything that predicts the noise in `x_t` given guidance and a timestep.
pub trait NoisePredictor<T: Real> {
    fn n_items(&self) -> usize;

    /// Predicted noise for every row; `t` is shared by the whole batch.
    fn predict(&self, x_t: &Matrix<T>, guidance: &Matrix<T>, t: usize) -> Result<Matrix<T>>;
}

/// Sinusoidal features of `t`: `(sin(t/ρ^(2i/d)), cos(t/ρ^(2i/d)))` for `i < d/2`,
/// interleaved.
pub fn time_embedding(t: usize, dim: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(dim);
    for i in 0..dim / 2 {
        let freq = libm::pow(TIME_BASE, (2 * i) as f64 / dim as f64);
        let arg = t as f64 / freq;
        out.push(libm::sin(arg));
        out.push(libm::cos(arg));
    }
    out
}

/// Rescales each row to unit L2 norm. All-zero rows are returned unchanged.
///
/// Rows are first divided by their largest magnitude, which makes the result
/// independent of any positive scaling of a binary row, bit for bit.
pub fn normalize_rows<T: Real>(m: &Matrix<T>) -> Matrix<T> {
    let mut out = m.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let peak = row.iter().fold(T::zero(), |acc, v| acc.max(v.abs()));
        if peak == T::zero() {
            continue;
        }
        for v in row.iter_mut() {
            *v = *v / peak;
        }
        let norm = row.iter().fold(T::zero(), |acc, &v| acc + v * v).sqrt();
        for v in row.iter_mut() {
            *v = *v / norm;
        }
    }
    out
}

/// Weights of the denoiser.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams<T> {
    /// `(2N + d_t) × H`
    pub w1: Matrix<T>,
    pub b1: Vec<T>,
    /// `H × N`
    pub w2: Matrix<T>,
    pub b2: Vec<T>,
    n_items: usize,
    hidden: usize,
    time_dim: usize,
    steps: usize,
}

/// Gradients, shaped like [`DenoiserParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserGrads<T> {
    pub w1: Matrix<T>,
    pub b1: Vec<T>,
    pub w2: Matrix<T>,
    pub b2: Vec<T>,
}

impl<T: Real> DenoiserGrads<T> {
    pub fn tensors(&self) -> [&[T]; 4] {
        [
            self.w1.as_slice(),
            &self.b1,
            self.w2.as_slice(),
            &self.b2,
        ]
    }
}

/// Intermediates of a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    input: Matrix<T>,
    hidden: Matrix<T>,
}

impl<T: Real> DenoiserParams<T> {
    fn check_dims(n_items: usize, hidden: usize, time_dim: usize, steps: usize) -> Result<()> {
        if n_items == 0 || hidden == 0 || steps == 0 {
            return Err(Error::Config("item count, hidden width and T must be positive".into()));
        }
        if time_dim < 2 || !time_dim.is_multiple_of(2) {
            return Err(Error::Config(alloc::format!(
                "time embedding width must be even and >= 2, got {time_dim}"
            )));
        }
        Ok(())
    }

    pub fn zeros(n_items: usize, hidden: usize, time_dim: usize, steps: usize) -> Result<Self> {
        Self::check_dims(n_items, hidden, time_dim, steps)?;
        Ok(Self {
            w1: Matrix::zeros(2 * n_items + time_dim, hidden),
            b1: vec![T::zero(); hidden],
            w2: Matrix::zeros(hidden, n_items),
            b2: vec![T::zero(); n_items],
            n_items,
            hidden,
            time_dim,
            steps,
        })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(
        rng: &mut Rng,
        n_items: usize,
        hidden: usize,
        time_dim: usize,
        steps: usize,
    ) -> Result<Self> {
        let mut p = Self::zeros(n_items, hidden, time_dim, steps)?;
        let (lim1, lim2) = p.glorot_limits();
        for v in p.w1.as_mut_slice() {
            *v = T::of(rng.uniform_range(-lim1, lim1));
        }
        for v in p.w2.as_mut_slice() {
            *v = T::of(rng.uniform_range(-lim2, lim2));
        }
        Ok(p)
    }

    /// Glorot bounds `√(6 / (fan_in + fan_out))` for `W1` and `W2`.
    pub fn glorot_limits(&self) -> (f64, f64) {
        let fan_in1 = (2 * self.n_items + self.time_dim) as f64;
        let lim1 = libm::sqrt(6.0 / (fan_in1 + self.hidden as f64));
        let lim2 = libm::sqrt(6.0 / (self.hidden + self.n_items) as f64);
        (lim1, lim2)
    }

    /// Reassembles parameters from raw arrays, e.g. when loading a checkpoint.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        n_items: usize,
        hidden: usize,
        time_dim: usize,
        steps: usize,
        w1: Vec<T>,
        b1: Vec<T>,
        w2: Vec<T>,
        b2: Vec<T>,
    ) -> Result<Self> {
        Self::check_dims(n_items, hidden, time_dim, steps)?;
        check_shape("DenoiserParams::b1", (1, hidden), (1, b1.len()))?;
        check_shape("DenoiserParams::b2", (1, n_items), (1, b2.len()))?;
        let p = Self {
            w1: Matrix::from_vec(2 * n_items + time_dim, hidden, w1)?,
            b1,
            w2: Matrix::from_vec(hidden, n_items, w2)?,
            b2,
            n_items,
            hidden,
            time_dim,
            steps,
        };
        if !p.tensors().iter().all(|t| t.iter().all(|v| v.is_finite())) {
            return Err(Error::NonFinite("denoiser parameters"));
        }
        Ok(p)
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn time_dim(&self) -> usize {
        self.time_dim
    }

    /// Largest timestep the network accepts.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn tensor_sizes(&self) -> [usize; 4] {
        self.tensors().map(<[T]>::len)
    }

    pub fn tensors(&self) -> [&[T]; 4] {
        [
            self.w1.as_slice(),
            &self.b1,
            self.w2.as_slice(),
            &self.b2,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [T]; 4] {
        [
            self.w1.as_mut_slice(),
            &mut self.b1,
            self.w2.as_mut_slice(),
            &mut self.b2,
        ]
    }

    fn embed_times(&self, ts: &[usize]) -> Result<Matrix<T>> {
        let mut out = Matrix::zeros(ts.len(), self.time_dim);
        for (r, &t) in ts.iter().enumerate() {
            if t == 0 || t > self.steps {
                return Err(Error::Timestep { t, max: self.steps });
            }
            for (o, v) in out.row_mut(r).iter_mut().zip(time_embedding(t, self.time_dim)) {
                *o = T::of(v);
            }
        }
        Ok(out)
    }

    /// Forward pass with a timestep per row.
    pub fn forward(
        &self,
        x_t: &Matrix<T>,
        guidance: &Matrix<T>,
        ts: &[usize],
    ) -> Result<(Matrix<T>, ForwardCache<T>)> {
        let b = x_t.rows();
        check_shape("denoiser x_t", (b, self.n_items), x_t.shape())?;
        check_shape("denoiser guidance", (b, self.n_items), guidance.shape())?;
        check_shape("denoiser timesteps", (b, 1), (ts.len(), 1))?;
        if !x_t.is_finite() {
            return Err(Error::NonFinite("denoiser input x_t"));
        }
        if !guidance.is_finite() {
            return Err(Error::NonFinite("denoiser guidance"));
        }

        let g = normalize_rows(guidance);
        let emb = self.embed_times(ts)?;
        let input = Matrix::hconcat(&[&g, x_t, &emb])?;
        let mut hidden = input.matmul(&self.w1)?;
        hidden.add_row(&self.b1)?;
        let hidden = hidden.map(|v| v.tanh());
        let mut out = hidden.matmul(&self.w2)?;
        out.add_row(&self.b2)?;
        Ok((out, ForwardCache { input, hidden }))
    }

    /// Gradients of `⟨d_out, ε̂⟩` with respect to every parameter.
    pub fn backward(&self, cache: &ForwardCache<T>, d_out: &Matrix<T>) -> Result<DenoiserGrads<T>> {
        let b = cache.hidden.rows();
        if cache.input.shape() != (b, self.w1.rows()) || cache.hidden.cols() != self.hidden {
            return Err(Error::Contract("forward cache does not match these parameters"));
        }
        check_shape("denoiser backward", (b, self.n_items), d_out.shape())?;

        let w2 = cache.hidden.t_matmul(d_out)?;
        let b2 = d_out.col_sums();
        let d_hidden = d_out.matmul_t(&self.w2)?;
        let d_pre = d_hidden.zip_map(&cache.hidden, |d, h| d * (T::one() - h * h))?;
        let w1 = cache.input.t_matmul(&d_pre)?;
        let b1 = d_pre.col_sums();
        Ok(DenoiserGrads { w1, b1, w2, b2 })
    }
}

impl<T: Real> NoisePredictor<T> for DenoiserParams<T> {
    fn n_items(&self) -> usize {
        self.n_items
    }

    fn predict(&self, x_t: &Matrix<T>, guidance: &Matrix<T>, t: usize) -> Result<Matrix<T>> {
        let ts = vec![t; x_t.rows()];
        self.forward(x_t, guidance, &ts).map(|(out, _)| out)
    }
}

/// Mean squared error over all elements and its gradient.
pub fn mse_loss<T: Real>(eps_hat: &Matrix<T>, eps_true: &Matrix<T>) -> Result<(f64, Matrix<T>)> {
    check_shape("mse_loss", eps_true.shape(), eps_hat.shape())?;
    let n = eps_hat.as_slice().len();
    let mut sum = 0.0;
    for (&a, &b) in eps_hat.as_slice().iter().zip(eps_true.as_slice()) {
        let d = (a - b).as_f64();
        sum += d * d;
    }
    let scale = T::of(2.0 / n as f64);
    let grad = eps_hat.zip_map(eps_true, |a, b| scale * (a - b))?;
    Ok((sum / n as f64, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Rng;
    use proptest::prelude::*;

    fn small(seed: u64) -> (DenoiserParams<f64>, Matrix<f64>, Matrix<f64>, Vec<usize>) {
        let mut rng = Rng::new(seed);
        let p = DenoiserParams::init(&mut rng, 7, 11, 4, 10).unwrap();
        let x: Matrix<f64> = rng.gaussian(3, 7);
        let g = Matrix::from_fn(3, 7, |r, c| if (r + c) % 3 == 0 { 1.0 } else { 0.0 });
        (p, x, g, vec![1, 5, 10])
    }

    /// Per-element re-implementation with explicit loops.
    fn naive_forward(p: &DenoiserParams<f64>, x: &Matrix<f64>, g: &Matrix<f64>, ts: &[usize]) -> Vec<Vec<f64>> {
        let n = x.cols();
        let d = p.time_dim();
        let mut out = Vec::new();
        for r in 0..x.rows() {
            let norm: f64 = (0..n).map(|c| g.get(r, c) * g.get(r, c)).sum::<f64>().sqrt();
            let mut z = Vec::new();
            for c in 0..n {
                z.push(if norm > 0.0 { g.get(r, c) / norm } else { 0.0 });
            }
            for c in 0..n {
                z.push(x.get(r, c));
            }
            for i in 0..d / 2 {
                let w = (ts[r] as f64) / 10_000f64.powf(2.0 * i as f64 / d as f64);
                z.push(w.sin());
                z.push(w.cos());
            }
            let mut h = Vec::new();
            for j in 0..p.hidden() {
                let mut a = p.b1[j];
                for (k, zk) in z.iter().enumerate() {
                    a += zk * p.w1.get(k, j);
                }
                h.push(a.tanh());
            }
            let mut row = Vec::new();
            for c in 0..n {
                let mut o = p.b2[c];
                for (j, hj) in h.iter().enumerate() {
                    o += hj * p.w2.get(j, c);
                }
                row.push(o);
            }
            out.push(row);
        }
        out
    }

    #[test]
    fn forward_matches_naive_loops() {
        let (p, x, g, ts) = small(9);
        let (out, _) = p.forward(&x, &g, &ts).unwrap();
        let oracle = naive_forward(&p, &x, &g, &ts);
        for r in 0..3 {
            for c in 0..7 {
                assert!((out.get(r, c) - oracle[r][c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_params_predict_zero() {
        let (_, x, g, ts) = small(1);
        let p = DenoiserParams::<f64>::zeros(7, 11, 4, 10).unwrap();
        let (out, _) = p.forward(&x, &g, &ts).unwrap();
        assert!(out.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_guidance_row_is_null_token() {
        let (p, x, mut g, ts) = small(2);
        g.row_mut(1).iter_mut().for_each(|v| *v = 0.0);
        let null = Matrix::zeros(3, 7);
        let (a, _) = p.forward(&x, &g, &ts).unwrap();
        let (b, _) = p.forward(&x, &null, &ts).unwrap();
        assert_eq!(a.row(1), b.row(1));
        assert_ne!(a.row(0), b.row(0));
    }

    #[test]
    fn rejects_bad_inputs() {
        let (p, x, g, ts) = small(3);
        assert!(p.forward(&x, &g, &[0, 1, 2]).is_err());
        assert!(p.forward(&x, &g, &[1, 2, 11]).is_err());
        assert!(p.forward(&x, &g, &ts[..2]).is_err());
        let mut bad = x.clone();
        bad.set(0, 0, f64::NAN);
        assert_eq!(
            p.forward(&bad, &g, &ts).unwrap_err(),
            Error::NonFinite("denoiser input x_t")
        );
        assert!(p.forward(&Matrix::zeros(3, 6), &g, &ts).is_err());
        assert!(DenoiserParams::<f64>::zeros(5, 4, 3, 10).is_err());
        assert!(DenoiserParams::<f64>::zeros(5, 4, 0, 10).is_err());
    }

    #[test]
    fn backward_rejects_foreign_cache() {
        let (p, x, g, ts) = small(4);
        let (_, cache) = p.forward(&x, &g, &ts).unwrap();
        let other = DenoiserParams::<f64>::zeros(7, 5, 4, 10).unwrap();
        assert!(other.backward(&cache, &Matrix::zeros(3, 7)).is_err());
        assert!(p.backward(&cache, &Matrix::zeros(2, 7)).is_err());
    }

    #[test]
    fn zero_output_gradient_gives_zero_gradients() {
        let (p, x, g, ts) = small(5);
        let (_, cache) = p.forward(&x, &g, &ts).unwrap();
        let grads = p.backward(&cache, &Matrix::zeros(3, 7)).unwrap();
        assert!(grads.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn gradients_are_linear_in_output_gradient() {
        let (p, x, g, ts) = small(6);
        let (_, cache) = p.forward(&x, &g, &ts).unwrap();
        let d: Matrix<f64> = Rng::new(60).gaussian(3, 7);
        let once = p.backward(&cache, &d).unwrap();
        let twice = p.backward(&cache, &d.scale(2.0)).unwrap();
        for (a, b) in once.tensors().iter().zip(twice.tensors()) {
            for (x, y) in a.iter().zip(b) {
                assert_eq!(2.0 * x, *y);
            }
        }
    }

    #[test]
    fn finite_differences_agree() {
        for seed in 0..20u64 {
            let mut rng = Rng::new(100 + seed);
            let n = 2 + rng.below(7);
            let h = 1 + rng.below(12);
            let b = 1 + rng.below(4);
            let mut p = DenoiserParams::<f64>::init(&mut rng, n, h, 4, 8).unwrap();
            for v in p.b1.iter_mut().chain(p.b2.iter_mut()) {
                *v = rng.uniform_range(-0.5, 0.5);
            }
            let x: Matrix<f64> = rng.gaussian(b, n);
            let g = Matrix::from_fn(b, n, |_, _| if rng.bernoulli(0.4) { 1.0 } else { 0.0 });
            let ts: Vec<usize> = (0..b).map(|_| 1 + rng.below(8)).collect();
            let probe: Matrix<f64> = rng.gaussian(b, n);
            let objective = |q: &DenoiserParams<f64>| -> f64 {
                let (out, _) = q.forward(&x, &g, &ts).unwrap();
                out.as_slice().iter().zip(probe.as_slice()).map(|(a, b)| a * b).sum()
            };
            let (_, cache) = p.forward(&x, &g, &ts).unwrap();
            let grads = p.backward(&cache, &probe).unwrap();
            let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();
            for (ti, tensor) in analytic.iter().enumerate() {
                for (j, &a) in tensor.iter().enumerate() {
                    let orig = p.tensors()[ti][j];
                    p.tensors_mut()[ti][j] = orig + 1e-5;
                    let up = objective(&p);
                    p.tensors_mut()[ti][j] = orig - 1e-5;
                    let down = objective(&p);
                    p.tensors_mut()[ti][j] = orig;
                    let numeric = (up - down) / 2e-5;
                    let denom = a.abs().max(numeric.abs()).max(1e-8);
                    assert!((a - numeric).abs() / denom < 1e-5, "seed {seed} tensor {ti} idx {j}: {a} vs {numeric}");
                }
            }
        }
    }

    #[test]
    fn glorot_bounds_and_variance() {
        let mut rng = Rng::new(77);
        let p = DenoiserParams::<f64>::init(&mut rng, 200, 64, 16, 10).unwrap();
        let (l1, l2) = p.glorot_limits();
        assert!(p.w1.as_slice().iter().all(|v| v.abs() <= l1));
        assert!(p.w2.as_slice().iter().all(|v| v.abs() <= l2));
        assert!(p.b1.iter().chain(&p.b2).all(|&v| v == 0.0));
        // Var(U(-l, l)) = l²/3
        let w = p.w2.as_slice();
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (w.len() - 1) as f64;
        let expected = l2 * l2 / 3.0;
        assert!((var / expected - 1.0).abs() < 0.1, "{var} vs {expected}");
        let again = DenoiserParams::<f64>::init(&mut Rng::new(77), 200, 64, 16, 10).unwrap();
        assert_eq!(p, again);
    }

    #[test]
    fn parameter_count_is_two_layers() {
        let p = DenoiserParams::<f32>::zeros(40, 32, 16, 20).unwrap();
        assert_eq!(p.param_count(), (2 * 40 + 16) * 32 + 32 + 32 * 40 + 40);
    }

    #[test]
    fn mse_by_hand() {
        let a = Matrix::from_vec(1, 2, vec![1.0f64, 1.0]).unwrap();
        let b = Matrix::zeros(1, 2);
        let (loss, grad) = mse_loss(&a, &b).unwrap();
        assert_eq!(loss, 1.0);
        assert_eq!(grad.as_slice(), &[1.0, 1.0]);
        let (loss, grad) = mse_loss(&a, &a).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.as_slice().iter().all(|&v| v == 0.0));
        assert!(mse_loss(&a, &Matrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn time_features_are_bounded_and_distinct() {
        let embs: Vec<Vec<f64>> = (1..=1000).map(|t| time_embedding(t, 16)).collect();
        assert!(embs.iter().flatten().all(|v| (-1.0..=1.0).contains(v)));
        for i in 0..embs.len() {
            for j in i + 1..embs.len() {
                assert_ne!(embs[i], embs[j]);
            }
        }
    }

    proptest! {
        #[test]
        fn guidance_scale_invariance(seed in 0u64..1000, c in 1e-3f64..1e3) {
            let (p, x, g, ts) = small(seed);
            let (a, _) = p.forward(&x, &g, &ts).unwrap();
            let (b, _) = p.forward(&x, &g.scale(c), &ts).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn mse_permutation_symmetry(vals in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..30), rot in 0usize..30) {
            let n = vals.len();
            let a = Matrix::from_vec(1, n, vals.iter().map(|v| v.0).collect()).unwrap();
            let b = Matrix::from_vec(1, n, vals.iter().map(|v| v.1).collect()).unwrap();
            let k = rot % n;
            let perm = |m: &Matrix<f64>| {
                let mut v = m.as_slice().to_vec();
                v.rotate_left(k);
                Matrix::from_vec(1, n, v).unwrap()
            };
            let (l1, _) = mse_loss(&a, &b).unwrap();
            let (l2, _) = mse_loss(&perm(&a), &perm(&b)).unwrap();
            prop_assert!((l1 - l2).abs() <= 1e-12 * l1.max(1.0));
        }
    }
}
