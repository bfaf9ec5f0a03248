use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cfrec::commands::{cmd_evaluate, cmd_preprocess, cmd_recommend, cmd_train};
use cfrec::config::RunConfig;
use cfrec::ingest::InputFormat;
use cfrec::synthetic::TwoBlockSpec;
use cfrec::{CliError, Result};
use cfrec_core::{Mode, SampleStart};

#[derive(Parser)]
#[command(name = "cfrec", version, about = "Diffusion recommender with classifier-free guidance")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse, filter and split a raw review file into the cache.
    Preprocess,
    /// Train the denoiser and keep the best checkpoint.
    Train,
    /// Score the test split with a trained checkpoint.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated guidance weights, one report each.
        #[arg(long = "guidance-weights", value_delimiter = ',')]
        weights: Vec<f64>,
        /// Skip the dataset fingerprint check.
        #[arg(long)]
        force: bool,
        /// Also report popularity and random rankings.
        #[arg(long)]
        baselines: bool,
    },
    /// Recommend items for a list of already-seen item ids.
    Recommend {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated item ids; empty means no history.
        #[arg(long, value_delimiter = ',')]
        history: Vec<usize>,
        #[arg(long, short, default_value_t = 10)]
        k: usize,
    },
    /// Write the two-block synthetic fixture as CSV.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Print the effective configuration.
    ShowConfig,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Clean,
    Noisy,
}

#[derive(Clone, Copy, ValueEnum)]
enum StartArg {
    PureNoise,
    NoisedGuidance,
}

#[derive(Args, Default)]
struct Overrides {
    /// Raw review file.
    #[arg(long, global = true)]
    raw: Option<PathBuf>,
    /// csv_rated (user, item, rating, timestamp) or csv_unrated (user, item, timestamp).
    #[arg(long, global = true)]
    format: Option<InputFormat>,
    /// Field separator; may be several characters, e.g. "::".
    #[arg(long, global = true)]
    delimiter: Option<String>,
    #[arg(long, global = true, value_enum)]
    mode: Option<ModeArg>,
    /// Split ratios such as 80:20 or 70:20:10.
    #[arg(long, global = true)]
    split: Option<String>,
    /// Preprocessed cache directory.
    #[arg(long, global = true)]
    cache: Option<PathBuf>,
    /// Diffusion steps T.
    #[arg(long, global = true)]
    steps: Option<usize>,
    #[arg(long, global = true)]
    beta_start: Option<f64>,
    #[arg(long, global = true)]
    beta_end: Option<f64>,
    #[arg(long, global = true)]
    hidden: Option<usize>,
    #[arg(long, global = true)]
    time_dim: Option<usize>,
    #[arg(long, global = true)]
    p_uncond: Option<f64>,
    #[arg(long, global = true)]
    lr: Option<f64>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    #[arg(long, global = true)]
    max_steps: Option<u64>,
    #[arg(long, global = true)]
    eval_every: Option<u64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Guidance weight for `recommend`, and for `evaluate` when no list is given.
    #[arg(long, global = true)]
    guidance_weight: Option<f64>,
    #[arg(long, global = true, value_enum)]
    sample_start: Option<StartArg>,
    /// Step the reverse chain starts from (default T).
    #[arg(long, global = true)]
    start_step: Option<usize>,
    /// Metric cutoffs, e.g. 1,5,10,20.
    #[arg(long, global = true, value_delimiter = ',')]
    ks: Option<Vec<usize>>,
    /// Directory for checkpoints, logs and reports.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
}

impl Overrides {
    fn apply(self, c: &mut RunConfig) {
        macro_rules! set {
            ($src:expr => $dst:expr) => {
                if let Some(v) = $src {
                    $dst = v;
                }
            };
        }
        if self.raw.is_some() {
            c.data.raw = self.raw;
        }
        set!(self.format => c.data.format);
        set!(self.delimiter => c.data.delimiter);
        set!(self.mode.map(|m| match m { ModeArg::Clean => Mode::Clean, ModeArg::Noisy => Mode::Noisy }) => c.data.mode);
        set!(self.split => c.data.split);
        set!(self.cache => c.data.cache);
        set!(self.steps => c.schedule.steps);
        set!(self.beta_start => c.schedule.beta_start);
        set!(self.beta_end => c.schedule.beta_end);
        set!(self.hidden => c.model.hidden);
        set!(self.time_dim => c.model.time_dim);
        set!(self.p_uncond => c.train.p_uncond);
        set!(self.lr => c.train.lr);
        set!(self.batch_size => c.train.batch_size);
        set!(self.max_steps => c.train.max_steps);
        set!(self.eval_every => c.train.eval_every);
        if self.seed.is_some() {
            c.train.seed = self.seed;
        }
        set!(self.guidance_weight => c.sampling.guidance_weight);
        set!(self.sample_start.map(|s| match s {
            StartArg::PureNoise => SampleStart::PureNoise,
            StartArg::NoisedGuidance => SampleStart::NoisedGuidance,
        }) => c.sampling.start);
        if self.start_step.is_some() {
            c.sampling.start_step = self.start_step;
        }
        set!(self.ks => c.eval.ks);
        set!(self.out_dir => c.output.dir);
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cli.overrides.apply(&mut cfg);
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::Preprocess => cmd_preprocess(&cfg, &mut out).map(drop),
        Command::Train => cmd_train(&cfg, &mut out).map(drop),
        Command::Evaluate { checkpoint, weights, force, baselines } => {
            cmd_evaluate(&cfg, &checkpoint, &weights, force, baselines, &mut out).map(drop)
        }
        Command::Recommend { checkpoint, history, k } => cmd_recommend(&cfg, &checkpoint, &history, k, &mut out).map(drop),
        Command::Synth { out: path, seed } => {
            let spec = TwoBlockSpec { seed, ..TwoBlockSpec::default() };
            std::fs::write(&path, spec.to_csv()).map_err(|e| CliError::io(&path, e))
        }
        Command::ShowConfig => {
            cfg.validate()?;
            write!(out, "{}", cfg.to_toml()).map_err(|e| CliError::io("stdout", e))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
