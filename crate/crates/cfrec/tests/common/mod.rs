#![allow(dead_code)]

use std::path::Path;

use cfrec::config::RunConfig;
use cfrec::ingest::InputFormat;
use cfrec::synthetic::TwoBlockSpec;
use cfrec_core::SampleStart;

/// Writes the two-block fixture and returns a config that runs it end to end
/// inside `dir`.
pub fn synthetic_config(dir: &Path, seed: u64) -> RunConfig {
    let raw = dir.join("synthetic.csv");
    std::fs::write(&raw, TwoBlockSpec::default().to_csv()).unwrap();
    let mut cfg = RunConfig::default();
    cfg.data.raw = Some(raw);
    cfg.data.format = InputFormat::CsvUnrated;
    cfg.data.split = "80:20".into();
    cfg.data.cache = dir.join("cache");
    cfg.schedule.steps = 20;
    cfg.schedule.beta_start = 0.1;
    cfg.schedule.beta_end = 0.1;
    cfg.model.hidden = 32;
    cfg.model.time_dim = 16;
    cfg.train.lr = 1e-3;
    cfg.train.batch_size = 64;
    cfg.train.max_steps = 2000;
    cfg.train.eval_every = 100;
    cfg.train.seed = Some(seed);
    cfg.sampling.start = SampleStart::NoisedGuidance;
    cfg.sampling.start_step = Some(1);
    cfg.sampling.guidance_weight = 4.0;
    cfg.output.dir = dir.join("run");
    cfg
}

/// Small rated CSV: `users` users with `per_user` distinct items each.
pub fn rated_csv(users: usize, per_user: usize, items: usize) -> String {
    let mut s = String::from("user,item,rating,timestamp\n");
    for u in 0..users {
        for k in 0..per_user {
            let item = (u * 7 + k * 3) % items;
            s.push_str(&format!("user{u},item{item},{},{}\n", 4 + (k % 2), 100 * u + k));
        }
    }
    s
}
