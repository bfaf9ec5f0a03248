//! Forward noising, the reverse denoising step, guided noise mixing and the
//! full reverse chain.

use alloc::vec::Vec;

use crate::denoiser::NoisePredictor;
use crate::error::{check_shape, Error, Result};
use crate::math::{Matrix, Real, RowStreams};
use crate::schedule::NoiseSchedule;

/// How the reverse chain is initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum SampleStart {
    /// `x ~ N(0, I)`.
    PureNoise,
    /// `x = q_sample(guidance, start_step, ε)`.
    #[default]
    NoisedGuidance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionConfig {
    pub schedule: NoiseSchedule,
    pub guidance_weight: f64,
    pub sample_start: SampleStart,
    pub start_step: usize,
}

impl DiffusionConfig {
    /// Conditional sampling from the corrupted history at `t = T`.
    pub fn new(schedule: NoiseSchedule) -> Self {
        let start_step = schedule.steps();
        Self {
            schedule,
            guidance_weight: 0.0,
            sample_start: SampleStart::NoisedGuidance,
            start_step,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.check(self.start_step)?;
        if !self.guidance_weight.is_finite() || self.guidance_weight < 0.0 {
            return Err(Error::Config(alloc::format!(
                "guidance weight must be finite and >= 0, got {}",
                self.guidance_weight
            )));
        }
        Ok(())
    }
}

/// `√ᾱ_t · x0 + √(1 − ᾱ_t) · ε`.
pub fn q_sample<T: Real>(
    x0: &Matrix<T>,
    t: usize,
    eps: &Matrix<T>,
    sched: &NoiseSchedule,
) -> Result<Matrix<T>> {
    sched.check(t)?;
    check_shape("q_sample", x0.shape(), eps.shape())?;
    let ab = sched.alpha_bar(t);
    let a = T::of(libm::sqrt(ab));
    let b = T::of(libm::sqrt(1.0 - ab));
    x0.zip_map(eps, |x, e| a * x + b * e)
}

/// [`q_sample`] with a timestep per row.
pub fn q_sample_rows<T: Real>(
    x0: &Matrix<T>,
    ts: &[usize],
    eps: &Matrix<T>,
    sched: &NoiseSchedule,
) -> Result<Matrix<T>> {
    check_shape("q_sample_rows", x0.shape(), eps.shape())?;
    check_shape("q_sample_rows timesteps", (x0.rows(), 1), (ts.len(), 1))?;
    let mut out = Matrix::zeros(x0.rows(), x0.cols());
    for (r, &t) in ts.iter().enumerate() {
        sched.check(t)?;
        let ab = sched.alpha_bar(t);
        let a = T::of(libm::sqrt(ab));
        let b = T::of(libm::sqrt(1.0 - ab));
        for ((o, &x), &e) in out.row_mut(r).iter_mut().zip(x0.row(r)).zip(eps.row(r)) {
            *o = a * x + b * e;
        }
    }
    Ok(out)
}

/// One reverse step:
/// `x_{t−1} = (x_t − β_t/√(1−ᾱ_t) · ε̂) / √α_t + √β_t · z`.
///
/// `z` must be all zeros at `t = 1`.
pub fn p_step<T: Real>(
    x_t: &Matrix<T>,
    t: usize,
    eps_hat: &Matrix<T>,
    z: &Matrix<T>,
    sched: &NoiseSchedule,
) -> Result<Matrix<T>> {
    sched.check(t)?;
    check_shape("p_step eps_hat", x_t.shape(), eps_hat.shape())?;
    check_shape("p_step z", x_t.shape(), z.shape())?;
    if t == 1 && z.as_slice().iter().any(|&v| v != T::zero()) {
        return Err(Error::Contract("noise must be zero on the final reverse step"));
    }
    let beta = sched.beta(t);
    let inv_sqrt_alpha = T::of(1.0 / libm::sqrt(sched.alpha(t)));
    let eps_coef = T::of(beta / libm::sqrt(1.0 - sched.alpha_bar(t)));
    let sigma = T::of(libm::sqrt(beta));
    let mut out = Matrix::zeros(x_t.rows(), x_t.cols());
    for (((o, &x), &e), &n) in out
        .as_mut_slice()
        .iter_mut()
        .zip(x_t.as_slice())
        .zip(eps_hat.as_slice())
        .zip(z.as_slice())
    {
        *o = inv_sqrt_alpha * (x - eps_coef * e) + sigma * n;
    }
    Ok(out)
}

/// Classifier-free guidance mix `(1 + w)·ε_cond − w·ε_uncond`.
pub fn guided_eps<T: Real>(eps_cond: &Matrix<T>, eps_uncond: &Matrix<T>, w: f64) -> Result<Matrix<T>> {
    check_shape("guided_eps", eps_cond.shape(), eps_uncond.shape())?;
    if w == 0.0 {
        return Ok(eps_cond.clone());
    }
    let wc = T::of(1.0 + w);
    let wu = T::of(w);
    eps_cond.zip_map(eps_uncond, |c, u| wc * c - wu * u)
}

/// Runs the reverse chain from `cfg.start_step` down to `t = 1` and returns the
/// final `x_0` estimate, one score per item.
///
/// Row `r` draws all of its noise from `streams[r]`, so a user's sample does not
/// depend on which other users share the batch.
pub fn sample<T: Real, P: NoisePredictor<T> + ?Sized>(
    denoiser: &P,
    guidance: &Matrix<T>,
    cfg: &DiffusionConfig,
    streams: &mut RowStreams,
) -> Result<Matrix<T>> {
    cfg.validate()?;
    let n = denoiser.n_items();
    check_shape("sample guidance", (guidance.rows(), n), guidance.shape())?;
    check_shape("sample streams", (guidance.rows(), 1), (streams.len(), 1))?;

    let start: Matrix<T> = streams.gaussian(n);
    let mut x = match cfg.sample_start {
        SampleStart::PureNoise => start,
        SampleStart::NoisedGuidance => q_sample(guidance, cfg.start_step, &start, &cfg.schedule)?,
    };
    let null = Matrix::zeros(guidance.rows(), n);
    let steps: Vec<usize> = (1..=cfg.start_step).rev().collect();
    for t in steps {
        let eps_cond = denoiser.predict(&x, guidance, t)?;
        let eps = if cfg.guidance_weight > 0.0 {
            let eps_uncond = denoiser.predict(&x, &null, t)?;
            guided_eps(&eps_cond, &eps_uncond, cfg.guidance_weight)?
        } else {
            eps_cond
        };
        let z = if t > 1 {
            streams.gaussian(n)
        } else {
            Matrix::zeros(x.rows(), n)
        };
        x = p_step(&x, t, &eps, &z, &cfg.schedule)?;
        if !x.is_finite() {
            return Err(Error::NonFinite("reverse chain state"));
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Rng;
    use approx::assert_relative_eq;
    use core::cell::Cell;
    use proptest::prelude::*;

    fn three() -> NoiseSchedule {
        NoiseSchedule::linear(3, 0.1, 0.3).unwrap()
    }

    fn scalar(v: f64) -> Matrix<f64> {
        Matrix::from_vec(1, 1, alloc::vec![v]).unwrap()
    }

    #[test]
    fn q_sample_by_hand() {
        let out = q_sample(&scalar(1.0), 2, &scalar(1.0), &three()).unwrap();
        assert_relative_eq!(out.get(0, 0), 0.72f64.sqrt() + 0.28f64.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(out.get(0, 0), 1.37768, epsilon = 1e-5);
    }

    #[test]
    fn q_sample_degenerate_inputs() {
        let s = three();
        let x0: Matrix<f64> = Rng::new(1).gaussian(2, 4);
        let eps: Matrix<f64> = Rng::new(2).gaussian(2, 4);
        let zero = Matrix::zeros(2, 4);
        let a = q_sample(&x0, 3, &zero, &s).unwrap();
        assert_eq!(a, x0.scale(s.alpha_bar(3).sqrt()));
        let b = q_sample(&zero, 3, &eps, &s).unwrap();
        assert_eq!(b, eps.scale((1.0 - s.alpha_bar(3)).sqrt()));
        assert!(q_sample(&x0, 0, &eps, &s).is_err());
        assert!(q_sample(&x0, 4, &eps, &s).is_err());
        assert!(q_sample(&x0, 1, &Matrix::zeros(4, 2), &s).is_err());
    }

    #[test]
    fn p_step_by_hand() {
        let out = p_step(&scalar(1.0), 2, &scalar(0.5), &scalar(0.0), &three()).unwrap();
        let want = (1.0 / 0.8f64.sqrt()) * (1.0 - (0.2 / 0.28f64.sqrt()) * 0.5);
        assert_relative_eq!(out.get(0, 0), want, epsilon = 1e-12);
        assert_relative_eq!(out.get(0, 0), 0.90675, epsilon = 1e-5);
    }

    #[test]
    fn p_step_without_noise_prediction_rescales() {
        let s = three();
        let x: Matrix<f64> = Rng::new(5).gaussian(2, 3);
        let zero = Matrix::zeros(2, 3);
        let out = p_step(&x, 2, &zero, &zero, &s).unwrap();
        for (o, v) in out.as_slice().iter().zip(x.as_slice()) {
            assert_relative_eq!(*o, v / 0.8f64.sqrt(), epsilon = 1e-15);
        }
    }

    #[test]
    fn p_step_tiny_beta_is_near_identity() {
        // with T = 1 the noise coefficient is √β, so the step deviates from x by O(√β)
        let s = NoiseSchedule::linear(1, 1e-14, 1e-14).unwrap();
        let x: Matrix<f64> = Rng::new(6).gaussian(1, 5);
        let eps: Matrix<f64> = Rng::new(7).gaussian(1, 5);
        let out = p_step(&x, 1, &eps, &Matrix::zeros(1, 5), &s).unwrap();
        for (o, v) in out.as_slice().iter().zip(x.as_slice()) {
            assert_relative_eq!(*o, *v, epsilon = 1e-6);
        }
    }

    #[test]
    fn p_step_rejects_noise_at_final_step() {
        let s = three();
        let err = p_step(&scalar(1.0), 1, &scalar(0.0), &scalar(0.3), &s).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
        assert!(p_step(&scalar(1.0), 2, &scalar(0.0), &scalar(0.3), &s).is_ok());
    }

    #[test]
    fn guided_eps_cases() {
        let c: Matrix<f64> = Rng::new(8).gaussian(2, 3);
        let u: Matrix<f64> = Rng::new(9).gaussian(2, 3);
        assert_eq!(guided_eps(&c, &u, 0.0).unwrap(), c);
        let same = guided_eps(&c, &c, 2.5).unwrap();
        for (a, b) in same.as_slice().iter().zip(c.as_slice()) {
            assert_relative_eq!(*a, *b, epsilon = 1e-12);
        }
        assert_eq!(guided_eps(&scalar(1.0), &scalar(0.0), 1.0).unwrap().get(0, 0), 2.0);
        assert!(guided_eps(&c, &Matrix::zeros(3, 2), 1.0).is_err());
    }

    proptest! {
        #[test]
        fn single_step_chain_inverts_noising(seed in 0u64..500, beta in 1e-4f64..0.9) {
            let s = NoiseSchedule::linear(1, beta, beta).unwrap();
            let mut rng = Rng::new(seed);
            let x0: Matrix<f64> = rng.gaussian(3, 4);
            let eps: Matrix<f64> = rng.gaussian(3, 4);
            let xt = q_sample(&x0, 1, &eps, &s).unwrap();
            let back = p_step(&xt, 1, &eps, &Matrix::zeros(3, 4), &s).unwrap();
            for (a, b) in back.as_slice().iter().zip(x0.as_slice()) {
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()) / beta.sqrt());
            }
        }

        #[test]
        fn q_sample_is_linear(seed in 0u64..500, a in -3.0f64..3.0, b in -3.0f64..3.0, t in 1usize..=3) {
            let s = three();
            let mut rng = Rng::new(seed);
            let x1: Matrix<f64> = rng.gaussian(2, 3);
            let x2: Matrix<f64> = rng.gaussian(2, 3);
            let e1: Matrix<f64> = rng.gaussian(2, 3);
            let e2: Matrix<f64> = rng.gaussian(2, 3);
            let comb = |p: &Matrix<f64>, q: &Matrix<f64>| p.zip_map(q, |u, v| a * u + b * v).unwrap();
            let lhs = q_sample(&comb(&x1, &x2), t, &comb(&e1, &e2), &s).unwrap();
            let rhs = comb(&q_sample(&x1, t, &e1, &s).unwrap(), &q_sample(&x2, t, &e2, &s).unwrap());
            for (u, v) in lhs.as_slice().iter().zip(rhs.as_slice()) {
                prop_assert!((u - v).abs() < 1e-12);
            }
        }
    }

    /// Returns zeros and counts calls.
    struct Silent {
        n: usize,
        calls: Cell<usize>,
    }

    impl NoisePredictor<f64> for Silent {
        fn n_items(&self) -> usize {
            self.n
        }
        fn predict(&self, x_t: &Matrix<f64>, _: &Matrix<f64>, _: usize) -> Result<Matrix<f64>> {
            self.calls.set(self.calls.get() + 1);
            Ok(Matrix::zeros(x_t.rows(), self.n))
        }
    }

    #[test]
    fn one_step_chain_with_silent_denoiser() {
        let s = three();
        let g = Matrix::from_vec(2, 3, alloc::vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0]).unwrap();
        let mut cfg = DiffusionConfig::new(s.clone());
        cfg.start_step = 1;
        let den = Silent { n: 3, calls: Cell::new(0) };
        let out = sample(&den, &g, &cfg, &mut RowStreams::for_ids(4, &[0, 1])).unwrap();
        let noise: Matrix<f64> = RowStreams::for_ids(4, &[0, 1]).gaussian(3);
        let start = q_sample(&g, 1, &noise, &s).unwrap();
        for (o, x) in out.as_slice().iter().zip(start.as_slice()) {
            assert_relative_eq!(*o, x / s.alpha(1).sqrt(), epsilon = 1e-15);
        }
    }

    #[test]
    fn unguided_sampling_calls_denoiser_once_per_step() {
        let g = Matrix::zeros(2, 3);
        let mut cfg = DiffusionConfig::new(three());
        let den = Silent { n: 3, calls: Cell::new(0) };
        sample(&den, &g, &cfg, &mut RowStreams::for_ids(4, &[0, 1])).unwrap();
        assert_eq!(den.calls.get(), 3);
        den.calls.set(0);
        cfg.guidance_weight = 1.5;
        sample(&den, &g, &cfg, &mut RowStreams::for_ids(4, &[0, 1])).unwrap();
        assert_eq!(den.calls.get(), 6);
    }

    #[test]
    fn sampling_is_deterministic_and_batch_independent() {
        let mut rng = Rng::new(10);
        let p = crate::denoiser::DenoiserParams::<f64>::init(&mut rng, 6, 8, 4, 3).unwrap();
        let g = Matrix::from_fn(4, 6, |r, c| if (r * 7 + c) % 3 == 0 { 1.0 } else { 0.0 });
        let mut cfg = DiffusionConfig::new(three());
        cfg.guidance_weight = 0.7;
        let ids = [10, 11, 12, 13];
        let a = sample(&p, &g, &cfg, &mut RowStreams::for_ids(1, &ids)).unwrap();
        let b = sample(&p, &g, &cfg, &mut RowStreams::for_ids(1, &ids)).unwrap();
        assert_eq!(a, b);
        let part = sample(&p, &g.select_rows(&[2, 3]), &cfg, &mut RowStreams::for_ids(1, &ids[2..])).unwrap();
        assert_eq!(part.row(0), a.row(2));
        assert_eq!(part.row(1), a.row(3));
    }

    #[test]
    fn rejects_bad_config() {
        let den = Silent { n: 3, calls: Cell::new(0) };
        let g = Matrix::zeros(1, 3);
        let mut cfg = DiffusionConfig::new(three());
        cfg.start_step = 4;
        assert!(sample(&den, &g, &cfg, &mut RowStreams::for_ids(0, &[0])).is_err());
        cfg.start_step = 3;
        cfg.guidance_weight = f64::NAN;
        assert!(sample(&den, &g, &cfg, &mut RowStreams::for_ids(0, &[0])).is_err());
    }
}
