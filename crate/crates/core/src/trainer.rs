//! Classifier-free-guidance training: noise a batch, drop guidance rows to the
//! null token with probability `p_uncond`, regress the injected noise.

use alloc::vec::Vec;

use crate::data::MultiHotMatrix;
use crate::denoiser::{mse_loss, DenoiserGrads, DenoiserParams, DEFAULT_HIDDEN, DEFAULT_TIME_DIM};
use crate::diffusion::{q_sample_rows, sample, DiffusionConfig, SampleStart};
use crate::error::{Error, Result};
use crate::eval::{evaluate_with, MetricsReport, DEFAULT_KS};
use crate::math::{adam_step, AdamConfig, AdamState, Matrix, Real, Rng, RowStreams};
use crate::schedule::{NoiseSchedule, DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_STEPS};

/// Validation sampling noise is keyed by `seed ^ EVAL_SALT`, so every
/// evaluation of a run sees the same draws.
pub const EVAL_SALT: u64 = 0x5eed_e7a1_0000_0001;

/// Linear schedule endpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: DEFAULT_STEPS,
            beta_start: DEFAULT_BETA_START,
            beta_end: DEFAULT_BETA_END,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.steps, self.beta_start, self.beta_end)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub p_uncond: f64,
    pub batch_size: usize,
    pub max_steps: u64,
    pub eval_every: u64,
    pub seed: u64,
    pub schedule: ScheduleConfig,
    pub adam: AdamConfig,
    pub hidden: usize,
    pub time_dim: usize,
    /// Reverse-chain start used for validation; `None` means `T`.
    pub eval_start_step: Option<usize>,
    /// Users sampled together during validation.
    pub eval_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            p_uncond: 0.2,
            batch_size: 400,
            max_steps: 10_000,
            eval_every: 500,
            seed: 2024,
            schedule: ScheduleConfig::default(),
            adam: AdamConfig::default(),
            hidden: DEFAULT_HIDDEN,
            time_dim: DEFAULT_TIME_DIM,
            eval_start_step: None,
            eval_batch: 512,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: alloc::string::String| Err(Error::Config(msg));
        if !(0.0..=1.0).contains(&self.p_uncond) {
            return bad(alloc::format!("p_uncond must lie in [0, 1], got {}", self.p_uncond));
        }
        if self.batch_size == 0 || self.eval_batch == 0 {
            return bad("batch sizes must be at least 1".into());
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1".into());
        }
        if !(self.adam.lr >= 0.0 && self.adam.lr.is_finite()) {
            return bad(alloc::format!("learning rate must be finite and >= 0, got {}", self.adam.lr));
        }
        let sched = self.schedule.build()?;
        if let Some(s) = self.eval_start_step {
            sched.check(s)?;
        }
        DenoiserParams::<f32>::zeros(1, self.hidden, self.time_dim, self.schedule.steps)?;
        Ok(())
    }

    /// Sampler settings used for model selection: unguided, started from the
    /// noised training history.
    pub fn selection_sampler(&self, schedule: NoiseSchedule) -> DiffusionConfig {
        let mut cfg = DiffusionConfig::new(schedule);
        cfg.guidance_weight = 0.0;
        cfg.sample_start = SampleStart::NoisedGuidance;
        if let Some(s) = self.eval_start_step {
            cfg.start_step = s;
        }
        cfg
    }
}

/// Replaces each row by the all-zero null token with probability `p_uncond`.
/// Returns the masked matrix and the masked row indices.
pub fn mask_guidance<T: Real>(
    guidance: &Matrix<T>,
    p_uncond: f64,
    rng: &mut Rng,
) -> Result<(Matrix<T>, Vec<usize>)> {
    if !(0.0..=1.0).contains(&p_uncond) {
        return Err(Error::Config(alloc::format!(
            "p_uncond must lie in [0, 1], got {p_uncond}"
        )));
    }
    let mut out = guidance.clone();
    let mut masked = Vec::new();
    for r in 0..guidance.rows() {
        if rng.bernoulli(p_uncond) {
            out.row_mut(r).iter_mut().for_each(|v| *v = T::zero());
            masked.push(r);
        }
    }
    Ok((out, masked))
}

/// Loss and gradients of one noised batch.
#[derive(Debug, Clone)]
pub struct StepGradients<T> {
    pub loss: f64,
    pub grads: DenoiserGrads<T>,
    pub masked: Vec<usize>,
}

/// Draws `t` per row, noise and the guidance mask (in that order), then
/// back-propagates the noise-matching loss.
pub fn step_gradients<T: Real>(
    params: &DenoiserParams<T>,
    x0: &Matrix<T>,
    guidance: &Matrix<T>,
    p_uncond: f64,
    sched: &NoiseSchedule,
    rng: &mut Rng,
) -> Result<StepGradients<T>> {
    let b = x0.rows();
    let ts: Vec<usize> = (0..b).map(|_| 1 + rng.below(sched.steps())).collect();
    let eps: Matrix<T> = rng.gaussian(b, x0.cols());
    let x_t = q_sample_rows(x0, &ts, &eps, sched)?;
    let (guidance, masked) = mask_guidance(guidance, p_uncond, rng)?;
    let (eps_hat, cache) = params.forward(&x_t, &guidance, &ts)?;
    let (loss, d_eps) = mse_loss(&eps_hat, &eps)?;
    let grads = params.backward(&cache, &d_eps)?;
    Ok(StepGradients { loss, grads, masked })
}

/// One optimizer step on a batch of clean train rows, which also serve as guidance.
pub fn train_step<T: Real>(
    params: &mut DenoiserParams<T>,
    adam: &mut AdamState<T>,
    batch_x0: &Matrix<T>,
    p_uncond: f64,
    sched: &NoiseSchedule,
    rng: &mut Rng,
) -> Result<f64> {
    let out = step_gradients(params, batch_x0, batch_x0, p_uncond, sched, rng)?;
    if !out.loss.is_finite() {
        return Err(Error::NonFiniteLoss {
            step: adam.step() + 1,
            loss: out.loss,
        });
    }
    adam_step(&mut params.tensors_mut(), &out.grads.tensors(), adam)?;
    Ok(out.loss)
}

/// Rows used for training and model selection.
#[derive(Debug, Clone, Copy)]
pub struct FitData<'a> {
    pub train: &'a MultiHotMatrix,
    /// History fed as guidance when scoring the selection split.
    pub selection_guidance: &'a MultiHotMatrix,
    pub selection_truth: &'a MultiHotMatrix,
}

/// Hooks called while fitting.
pub trait FitObserver<T> {
    fn on_step(&mut self, _step: u64, _loss: f64) -> Result<()> {
        Ok(())
    }

    fn on_eval(&mut self, _step: u64, _report: &MetricsReport) -> Result<()> {
        Ok(())
    }

    /// A new best nDCG@10; called for the step-0 evaluation too.
    fn on_best(&mut self, _step: u64, _params: &DenoiserParams<T>, _report: &MetricsReport) -> Result<()> {
        Ok(())
    }
}

impl<T> FitObserver<T> for () {}

#[derive(Debug, Clone)]
pub struct FitOutcome<T> {
    pub params: DenoiserParams<T>,
    pub best_step: u64,
    pub best_report: MetricsReport,
    /// `(step, nDCG@10)` of every evaluation.
    pub evals: Vec<(u64, f64)>,
    pub losses: Vec<f64>,
}

impl<T> FitOutcome<T> {
    pub fn best_ndcg10(&self) -> f64 {
        self.best_report.ndcg(10)
    }
}

/// Scores the selection split with the reverse chain.
pub fn selection_report<T: Real>(
    params: &DenoiserParams<T>,
    data: &FitData<'_>,
    sampler: &DiffusionConfig,
    seed: u64,
    batch: usize,
) -> Result<MetricsReport> {
    evaluate_with(data.selection_truth, data.selection_guidance, &DEFAULT_KS, batch, |users| {
        let guidance = data.selection_guidance.dense::<T>(users);
        let mut streams = RowStreams::for_ids(seed, users);
        sample(params, &guidance, sampler, &mut streams)
    })
}

/// Trains for `cfg.max_steps` steps over shuffled train rows, evaluating every
/// `cfg.eval_every` steps and keeping the parameters with the best nDCG@10.
pub fn fit<T: Real>(
    cfg: &TrainConfig,
    data: FitData<'_>,
    observer: &mut impl FitObserver<T>,
) -> Result<FitOutcome<T>> {
    cfg.validate()?;
    let sched = cfg.schedule.build()?;
    let n = data.train.n_cols();
    if data.selection_guidance.n_cols() != n || data.selection_truth.n_cols() != n {
        return Err(Error::Data("train and selection matrices disagree on item count".into()));
    }
    let mut rng = Rng::new(cfg.seed);
    let mut params = DenoiserParams::<T>::init(&mut rng, n, cfg.hidden, cfg.time_dim, sched.steps())?;
    let mut adam = AdamState::new(cfg.adam, &params.tensor_sizes());
    let sampler = cfg.selection_sampler(sched.clone());
    let eval_seed = cfg.seed ^ EVAL_SALT;

    let report = selection_report(&params, &data, &sampler, eval_seed, cfg.eval_batch)?;
    observer.on_eval(0, &report)?;
    observer.on_best(0, &params, &report)?;
    let mut best = FitOutcome {
        params: params.clone(),
        best_step: 0,
        evals: alloc::vec![(0, report.ndcg(10))],
        best_report: report,
        losses: Vec::new(),
    };

    let rows: Vec<usize> = (0..data.train.n_rows())
        .filter(|&u| !data.train.row(u).is_empty())
        .collect();
    if rows.is_empty() && cfg.max_steps > 0 {
        return Err(Error::Data("no user has training interactions".into()));
    }
    let mut order = rows.clone();
    let mut cursor = order.len();
    for step in 1..=cfg.max_steps {
        if cursor >= order.len() {
            order.copy_from_slice(&rows);
            rng.shuffle(&mut order);
            cursor = 0;
        }
        let end = (cursor + cfg.batch_size).min(order.len());
        let batch = data.train.dense::<T>(&order[cursor..end]);
        cursor = end;

        let loss = train_step(&mut params, &mut adam, &batch, cfg.p_uncond, &sched, &mut rng)
            .map_err(|e| match e {
                Error::NonFiniteLoss { loss, .. } => Error::NonFiniteLoss { step, loss },
                other => other,
            })?;
        best.losses.push(loss);
        observer.on_step(step, loss)?;

        if step % cfg.eval_every == 0 || step == cfg.max_steps {
            let report = selection_report(&params, &data, &sampler, eval_seed, cfg.eval_batch)?;
            observer.on_eval(step, &report)?;
            best.evals.push((step, report.ndcg(10)));
            if report.ndcg(10) > best.best_report.ndcg(10) {
                observer.on_best(step, &params, &report)?;
                best.params = params.clone();
                best.best_step = step;
                best.best_report = report;
            }
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_extremes() {
        let g: Matrix<f64> = Rng::new(1).gaussian(20, 5);
        let (same, masked) = mask_guidance(&g, 0.0, &mut Rng::new(2)).unwrap();
        assert_eq!(same, g);
        assert!(masked.is_empty());
        let (zero, masked) = mask_guidance(&g, 1.0, &mut Rng::new(2)).unwrap();
        assert!(zero.as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(masked.len(), 20);
        assert!(mask_guidance(&g, 1.5, &mut Rng::new(2)).is_err());
    }

    #[test]
    fn mask_rate_concentrates() {
        let g = Matrix::<f32>::from_fn(10_000, 2, |_, _| 1.0);
        let (out, masked) = mask_guidance(&g, 0.2, &mut Rng::new(3)).unwrap();
        let frac = masked.len() as f64 / 10_000.0;
        assert!((0.18..=0.22).contains(&frac), "{frac}");
        for &r in &masked {
            assert_eq!(out.row(r), &[0.0, 0.0]);
        }
    }

    #[test]
    fn first_loss_of_zero_model_is_noise_energy() {
        let sched = NoiseSchedule::linear(10, 1e-4, 0.02).unwrap();
        let mut params = DenoiserParams::<f64>::zeros(100, 8, 4, 10).unwrap();
        let mut adam = AdamState::new(AdamConfig::default(), &params.tensor_sizes());
        let x0 = Matrix::from_fn(200, 100, |r, c| if (r + c) % 7 == 0 { 1.0 } else { 0.0 });
        let loss = train_step(&mut params, &mut adam, &x0, 0.2, &sched, &mut Rng::new(4)).unwrap();
        assert!((loss - 1.0).abs() < 0.05, "{loss}");
    }

    #[test]
    fn zero_learning_rate_freezes_params() {
        let sched = NoiseSchedule::linear(10, 1e-4, 0.02).unwrap();
        let mut rng = Rng::new(5);
        let mut params = DenoiserParams::<f64>::init(&mut rng, 12, 8, 4, 10).unwrap();
        let before = params.clone();
        let mut adam = AdamState::new(AdamConfig { lr: 0.0, ..Default::default() }, &params.tensor_sizes());
        let x0 = Matrix::from_fn(6, 12, |r, c| if (r + c) % 3 == 0 { 1.0 } else { 0.0 });
        for _ in 0..5 {
            train_step(&mut params, &mut adam, &x0, 0.2, &sched, &mut rng).unwrap();
        }
        assert_eq!(params, before);
    }

    #[test]
    fn masked_rows_carry_no_guidance() {
        let sched = NoiseSchedule::linear(10, 1e-4, 0.02).unwrap();
        let params = DenoiserParams::<f64>::init(&mut Rng::new(6), 9, 7, 4, 10).unwrap();
        let x0 = Matrix::from_fn(16, 9, |r, c| if (r * 3 + c) % 4 == 0 { 1.0 } else { 0.0 });
        let a = step_gradients(&params, &x0, &x0, 0.5, &sched, &mut Rng::new(7)).unwrap();
        assert!(!a.masked.is_empty());
        let mut other = x0.clone();
        for &r in &a.masked {
            other.row_mut(r).iter_mut().enumerate().for_each(|(c, v)| *v = c as f64 - 2.5);
        }
        let b = step_gradients(&params, &x0, &other, 0.5, &sched, &mut Rng::new(7)).unwrap();
        assert_eq!(a.grads, b.grads);
        assert_eq!(a.loss, b.loss);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = [
            TrainConfig { p_uncond: -0.1, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { eval_every: 0, ..Default::default() },
            TrainConfig { time_dim: 3, ..Default::default() },
            TrainConfig { eval_start_step: Some(101), ..Default::default() },
            TrainConfig {
                schedule: ScheduleConfig { steps: 10, beta_start: 0.5, beta_end: 0.1 },
                ..Default::default()
            },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }
}
