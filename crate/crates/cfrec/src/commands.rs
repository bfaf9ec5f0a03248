//! The operator commands: preprocess, train, evaluate, recommend.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use cfrec_core::data::{preprocess, split, to_multihot, MultiHotMatrix};
use cfrec_core::diffusion::{sample, DiffusionConfig};
use cfrec_core::eval::{evaluate_with, popularity_scores, random_scores, rank};
use cfrec_core::math::RowStreams;
use cfrec_core::trainer::{fit, FitData, FitObserver, ScheduleConfig, EVAL_SALT};
use cfrec_core::{DenoiserParams, InteractionSet, Matrix, MetricsReport, NoisePredictor, Rng, SplitTag};
use serde_json::json;

use crate::cache::{read_cache, sha256_hex, write_cache, CacheMeta, CacheSource};
use crate::checkpoint::{self, Manifest, INPUT_LAYOUT};
use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::ingest::ingest;
use crate::report::{render_table, write_report};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::io(path, e)
}

/// Reads, filters, splits and caches the raw file named in the config.
pub fn cmd_preprocess(cfg: &RunConfig, out: &mut impl Write) -> Result<CacheMeta> {
    cfg.validate()?;
    let raw = cfg
        .data
        .raw
        .as_deref()
        .ok_or_else(|| CliError::Config("data.raw is not set".into()))?;
    let ratios = cfg.ratios()?;
    let bytes = fs::read(raw).map_err(io_err(raw))?;
    let ingested = ingest(raw, cfg.data.format, &cfg.data.delimiter)?;
    let iset = preprocess(&ingested.reviews, cfg.data.mode)
        .map_err(|e| CliError::Data(format!("{}: {e}", raw.display())))?;
    let (iset, report) = split(&iset, ratios);
    let meta = write_cache(
        &cfg.data.cache,
        &iset,
        CacheSource {
            mode: cfg.data.mode,
            ratios,
            report: &report,
            malformed_rows: ingested.malformed.len(),
            source_checksum: sha256_hex(&bytes),
        },
    )?;

    let w = |out: &mut dyn Write, s: String| writeln!(out, "{s}").map_err(|e| CliError::io("stdout", e));
    w(out, format!("source        {}", raw.display()))?;
    w(out, format!("mode          {:?}", cfg.data.mode).to_lowercase())?;
    w(out, format!("rows read     {}  (malformed {})", ingested.rows(), ingested.malformed.len()))?;
    w(out, format!("users         {}", meta.n_users))?;
    w(out, format!("items         {}", meta.n_items))?;
    w(out, format!("interactions  {}", meta.interactions))?;
    w(out, format!(
        "split {:<8}train {}  valid {}  test {}",
        meta.ratios, meta.counts.train, meta.counts.valid, meta.counts.test
    ))?;
    w(out, format!("short users   {}  (all interactions kept in train)", meta.report.short_users))?;
    w(out, format!("items absent from train  {}", meta.report.unseen_in_train))?;
    w(out, format!("cache         {}", cfg.data.cache.display()))?;
    Ok(meta)
}

/// Dense-id dataset with its multi-hot views.
pub struct Dataset {
    pub iset: InteractionSet,
    pub meta: CacheMeta,
    pub train: MultiHotMatrix,
    pub valid: MultiHotMatrix,
    pub test: MultiHotMatrix,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self> {
        let (iset, meta) = read_cache(dir)?;
        Ok(Self {
            train: to_multihot(&iset, &[SplitTag::Train]),
            valid: to_multihot(&iset, &[SplitTag::Valid]),
            test: to_multihot(&iset, &[SplitTag::Test]),
            iset,
            meta,
        })
    }

    /// Everything before the test segment.
    pub fn history(&self) -> MultiHotMatrix {
        to_multihot(&self.iset, &[SplitTag::Train, SplitTag::Valid])
    }

    pub fn n_items(&self) -> usize {
        self.meta.n_items
    }
}

struct TrainLogger<'a, W: Write> {
    out: &'a mut W,
    log: BufWriter<File>,
    log_path: PathBuf,
    checkpoint: PathBuf,
    manifest: Manifest,
    started: Instant,
    loss_sum: f64,
    loss_n: u64,
}

impl<W: Write> TrainLogger<'_, W> {
    fn line(&mut self, value: serde_json::Value) -> cfrec_core::Result<()> {
        writeln!(self.log, "{value}").map_err(|_| cfrec_core::Error::Data(format!("cannot write {}", self.log_path.display())))
    }

    fn say(&mut self, s: String) -> cfrec_core::Result<()> {
        writeln!(self.out, "{s}").map_err(|_| cfrec_core::Error::Data("cannot write to stdout".into()))
    }
}

impl<W: Write> FitObserver<f32> for TrainLogger<'_, W> {
    fn on_step(&mut self, step: u64, loss: f64) -> cfrec_core::Result<()> {
        self.loss_sum += loss;
        self.loss_n += 1;
        self.line(json!({ "step": step, "loss": loss }))
    }

    fn on_eval(&mut self, step: u64, report: &MetricsReport) -> cfrec_core::Result<()> {
        let agg: Vec<_> = report
            .aggregate
            .iter()
            .map(|m| json!({"k": m.k, "precision": m.precision, "recall": m.recall, "ndcg": m.ndcg, "mrr": m.mrr}))
            .collect();
        self.line(json!({ "step": step, "eval": agg, "users": report.evaluated }))?;
        let mean_loss = if self.loss_n > 0 {
            format!("{:>9.5}", self.loss_sum / self.loss_n as f64)
        } else {
            format!("{:>9}", "-")
        };
        self.loss_sum = 0.0;
        self.loss_n = 0;
        let recall = report.at(10).map_or(0.0, |m| m.recall);
        self.say(format!(
            "step {step:>7}  loss {mean_loss}  recall@10 {:>6.2}%  ndcg@10 {:>6.2}%",
            100.0 * recall,
            100.0 * report.ndcg(10)
        ))
    }

    fn on_best(&mut self, step: u64, params: &DenoiserParams<f32>, report: &MetricsReport) -> cfrec_core::Result<()> {
        self.manifest.best_step = step;
        self.manifest.validation_ndcg10 = report.ndcg(10);
        self.manifest.history.push((step, report.ndcg(10)));
        self.manifest.wall_clock_secs = self.started.elapsed().as_secs_f64();
        checkpoint::save(&self.checkpoint, params, &self.manifest)
            .map_err(|e| cfrec_core::Error::Data(e.to_string()))?;
        self.log.flush().ok();
        Ok(())
    }
}

/// Outcome of a training run.
#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub manifest: Manifest,
}

/// Fits the denoiser and keeps the checkpoint with the best selection nDCG@10.
pub fn cmd_train(cfg: &RunConfig, out: &mut impl Write) -> Result<TrainSummary> {
    let mut cfg = cfg.clone();
    let seed = cfg.resolve_seed();
    cfg.validate()?;
    let data = Dataset::load(&cfg.data.cache)?;
    let (selection_truth, selection_split) = if data.meta.has_valid {
        (&data.valid, "valid")
    } else {
        writeln!(out, "warning: no validation split; selecting the model on the test split")
            .map_err(io_err(Path::new("stdout")))?;
        (&data.test, "test")
    };

    let run_dir = cfg.output.dir.clone();
    fs::create_dir_all(&run_dir).map_err(io_err(&run_dir))?;
    let log_path = run_dir.join(TRAIN_LOG_FILE);
    let log = BufWriter::new(File::create(&log_path).map_err(io_err(&log_path))?);
    let checkpoint = run_dir.join(CHECKPOINT_FILE);
    let manifest = Manifest {
        format: "DRCFG1".into(),
        input_layout: INPUT_LAYOUT.into(),
        n_items: data.n_items(),
        hidden: cfg.model.hidden,
        time_dim: cfg.model.time_dim,
        steps: cfg.schedule.steps,
        beta_start: cfg.schedule.beta_start,
        beta_end: cfg.schedule.beta_end,
        p_uncond: cfg.train.p_uncond,
        seed,
        dataset_fingerprint: data.meta.fingerprint.clone(),
        selection_split: selection_split.into(),
        validation_ndcg10: 0.0,
        best_step: 0,
        history: Vec::new(),
        config: cfg.clone(),
        wall_clock_secs: 0.0,
    };
    writeln!(
        out,
        "training on {} users x {} items, seed {seed}, {} steps",
        data.meta.n_users, data.meta.n_items, cfg.train.max_steps
    )
    .map_err(io_err(Path::new("stdout")))?;

    let mut logger = TrainLogger {
        out,
        log,
        log_path,
        checkpoint: checkpoint.clone(),
        manifest,
        started: Instant::now(),
        loss_sum: 0.0,
        loss_n: 0,
    };
    let fit_data = FitData {
        train: &data.train,
        selection_guidance: &data.train,
        selection_truth,
    };
    let outcome = fit::<f32>(&cfg.train_config(seed), fit_data, &mut logger)?;
    logger.log.flush().map_err(io_err(&logger.log_path))?;
    let manifest = logger.manifest;
    writeln!(
        logger.out,
        "best ndcg@10 {:.2}% at step {}  ->  {}",
        100.0 * outcome.best_ndcg10(),
        outcome.best_step,
        checkpoint.display()
    )
    .map_err(io_err(Path::new("stdout")))?;
    Ok(TrainSummary { checkpoint, manifest })
}

fn sampler_for(cfg: &RunConfig, manifest: &Manifest, w: f64) -> Result<DiffusionConfig> {
    let sched = ScheduleConfig {
        steps: manifest.steps,
        beta_start: manifest.beta_start,
        beta_end: manifest.beta_end,
    }
    .build()?;
    let mut d = DiffusionConfig::new(sched);
    d.guidance_weight = w;
    d.sample_start = cfg.sampling.start;
    if let Some(s) = cfg.sampling.start_step {
        d.start_step = s;
    }
    d.validate()?;
    Ok(d)
}

fn check_compatible(params: &DenoiserParams<f32>, manifest: &Manifest, data: &Dataset, force: bool) -> Result<()> {
    if params.n_items() != data.n_items() {
        return Err(CliError::Data(format!(
            "checkpoint has N={} items but the dataset cache has N={}",
            params.n_items(),
            data.n_items()
        )));
    }
    if manifest.dataset_fingerprint != data.meta.fingerprint && !force {
        return Err(CliError::Data(format!(
            "checkpoint was trained on dataset {} but the cache is {} (use --force to override)",
            manifest.dataset_fingerprint, data.meta.fingerprint
        )));
    }
    Ok(())
}

fn weight_label(w: f64) -> String {
    format!("{w}")
}

/// Test-split metrics for each guidance weight. Reports go to
/// `<output.dir>/reports/`.
pub fn cmd_evaluate(
    cfg: &RunConfig,
    checkpoint_path: &Path,
    weights: &[f64],
    force: bool,
    baselines: bool,
    out: &mut impl Write,
) -> Result<Vec<(f64, MetricsReport)>> {
    cfg.validate()?;
    let (params, manifest) = checkpoint::load(checkpoint_path)?;
    let data = Dataset::load(&cfg.data.cache)?;
    check_compatible(&params, &manifest, &data, force)?;
    let seed = cfg.train.seed.unwrap_or(manifest.seed) ^ EVAL_SALT;
    let history = data.history();
    let report_dir = cfg.output.dir.join("reports");
    let weights = if weights.is_empty() { vec![cfg.sampling.guidance_weight] } else { weights.to_vec() };
    let say = |out: &mut dyn Write, s: &str| write!(out, "{s}").map_err(|e| CliError::io("stdout", e));

    let mut reports = Vec::new();
    for &w in &weights {
        let sampler = sampler_for(cfg, &manifest, w)?;
        let report = evaluate_with(&data.test, &history, &cfg.eval.ks, cfg.train.eval_batch, |users| {
            let guidance = history.dense::<f32>(users);
            sample(&params, &guidance, &sampler, &mut RowStreams::for_ids(seed, users))
        })?;
        let title = format!("test metrics, guidance weight {}", weight_label(w));
        write_report(&report_dir, &format!("eval_w{}", weight_label(w)), &title, &report)?;
        say(out, &render_table(&title, &report))?;
        reports.push((w, report));
    }

    if baselines {
        let pop = evaluate_with(&data.test, &history, &cfg.eval.ks, cfg.train.eval_batch, |users| {
            Ok(popularity_scores(&data.train, users))
        })?;
        write_report(&report_dir, "baseline_popularity", "popularity baseline", &pop)?;
        say(out, &render_table("popularity baseline", &pop))?;
        let mut rng = Rng::new(seed);
        let rnd = evaluate_with(&data.test, &history, &cfg.eval.ks, cfg.train.eval_batch, |users| {
            Ok(random_scores(&mut rng, users.len(), data.n_items()))
        })?;
        write_report(&report_dir, "baseline_random", "random baseline", &rnd)?;
        say(out, &render_table("random baseline", &rnd))?;
    }
    Ok(reports)
}

/// Top-`k` items for an ad-hoc history, excluding the history itself.
pub fn cmd_recommend(
    cfg: &RunConfig,
    checkpoint_path: &Path,
    history: &[usize],
    k: usize,
    out: &mut impl Write,
) -> Result<Vec<(usize, f32)>> {
    cfg.validate()?;
    let (params, manifest) = checkpoint::load(checkpoint_path)?;
    let n = params.n_items();
    if let Some(&bad) = history.iter().find(|&&i| i >= n) {
        return Err(CliError::Data(format!("unknown item id {bad}; the model knows items 0..{n}")));
    }
    let known = MultiHotMatrix::from_rows(n, vec![history.to_vec()])?;
    if known.row(0).len() == n {
        return Err(CliError::Data("history covers every item; nothing left to recommend".into()));
    }
    let guidance: Matrix<f32> = known.dense(&[0]);
    let sampler = sampler_for(cfg, &manifest, cfg.sampling.guidance_weight)?;
    let seed = cfg.train.seed.unwrap_or(manifest.seed) ^ EVAL_SALT;
    let scores = sample(&params, &guidance, &sampler, &mut RowStreams::for_ids(seed, &[0]))?;
    let ranked = rank(&scores, &known, k)?;
    let picks: Vec<(usize, f32)> = ranked.user(0).iter().map(|&i| (i, scores.get(0, i))).collect();
    writeln!(out, "{:>4}  {:>8}  {:>10}", "rank", "item", "score").map_err(io_err(Path::new("stdout")))?;
    for (r, (item, score)) in picks.iter().enumerate() {
        writeln!(out, "{:>4}  {item:>8}  {score:>10.5}", r + 1).map_err(io_err(Path::new("stdout")))?;
    }
    Ok(picks)
}
