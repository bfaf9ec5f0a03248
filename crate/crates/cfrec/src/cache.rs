//! Preprocessed-dataset cache: `meta.json` plus one `user\titem\ttime` file per split.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use cfrec_core::data::{Interaction, SplitReport};
use cfrec_core::{InteractionSet, Mode, SplitTag};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const META_FILE: &str = "meta.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheMeta {
    pub n_users: usize,
    pub n_items: usize,
    pub interactions: usize,
    pub mode: Mode,
    pub ratios: String,
    pub has_valid: bool,
    pub counts: SplitCounts,
    pub report: SplitReport,
    pub malformed_rows: usize,
    /// SHA-256 of the raw input file.
    pub source_checksum: String,
    /// SHA-256 over the split files; identifies the dataset in checkpoints.
    pub fingerprint: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

fn split_files(has_valid: bool) -> Vec<SplitTag> {
    if has_valid {
        vec![SplitTag::Train, SplitTag::Valid, SplitTag::Test]
    } else {
        vec![SplitTag::Train, SplitTag::Test]
    }
}

fn file_name(tag: SplitTag) -> String {
    format!("{}.tsv", tag.name())
}

fn render_split(iset: &InteractionSet, tag: SplitTag) -> String {
    let mut out = String::new();
    for it in iset.iter_split(tag) {
        writeln!(out, "{}\t{}\t{}", it.user, it.item, it.time).expect("string write");
    }
    out
}

fn fingerprint(files: &[(SplitTag, String)]) -> String {
    let mut h = Sha256::new();
    for (tag, body) in files {
        h.update(tag.name().as_bytes());
        h.update(b"\n");
        h.update(body.as_bytes());
    }
    format!("{:x}", h.finalize())
}

/// What `write_cache` needs beyond the interactions themselves.
#[derive(Debug, Clone)]
pub struct CacheSource<'a> {
    pub mode: Mode,
    pub ratios: cfrec_core::SplitRatios,
    pub report: &'a SplitReport,
    pub malformed_rows: usize,
    pub source_checksum: String,
}

/// Writes the cache into a sibling temp directory, then renames it over `dir`.
pub fn write_cache(dir: &Path, iset: &InteractionSet, src: CacheSource<'_>) -> Result<CacheMeta> {
    let has_valid = src.ratios.has_valid();
    let files: Vec<(SplitTag, String)> = split_files(has_valid)
        .into_iter()
        .map(|tag| (tag, render_split(iset, tag)))
        .collect();
    let meta = CacheMeta {
        n_users: iset.n_users(),
        n_items: iset.n_items(),
        interactions: iset.len(),
        mode: src.mode,
        ratios: src.ratios.to_string(),
        has_valid,
        counts: SplitCounts {
            train: iset.count(SplitTag::Train),
            valid: iset.count(SplitTag::Valid),
            test: iset.count(SplitTag::Test),
        },
        report: src.report.clone(),
        malformed_rows: src.malformed_rows,
        source_checksum: src.source_checksum,
        fingerprint: fingerprint(&files),
    };

    let parent = dir.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    let name = dir
        .file_name()
        .ok_or_else(|| CliError::Config(format!("cache path {} has no name", dir.display())))?;
    let staging: PathBuf = parent.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(|e| CliError::io(&staging, e))?;
    }
    fs::create_dir(&staging).map_err(|e| CliError::io(&staging, e))?;
    for (tag, body) in &files {
        let p = staging.join(file_name(*tag));
        fs::write(&p, body).map_err(|e| CliError::io(&p, e))?;
    }
    let meta_json = serde_json::to_string_pretty(&meta).expect("meta serializes") + "\n";
    let p = staging.join(META_FILE);
    fs::write(&p, meta_json).map_err(|e| CliError::io(&p, e))?;

    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::rename(&staging, dir).map_err(|e| CliError::io(dir, e))?;
    Ok(meta)
}

fn parse_split(body: &str, tag: SplitTag, path: &Path, out: &mut Vec<(Interaction, SplitTag, usize)>) -> Result<()> {
    for (idx, line) in body.lines().enumerate() {
        let bad = || CliError::Data(format!("{}:{}: expected user<TAB>item<TAB>time", path.display(), idx + 1));
        let mut f = line.split('\t');
        let (Some(u), Some(i), Some(t), None) = (f.next(), f.next(), f.next(), f.next()) else {
            return Err(bad());
        };
        let it = Interaction {
            user: u.parse().map_err(|_| bad())?,
            item: i.parse().map_err(|_| bad())?,
            time: t.parse().map_err(|_| bad())?,
        };
        out.push((it, tag, out.len()));
    }
    Ok(())
}

/// Loads and validates a cache directory.
pub fn read_cache(dir: &Path) -> Result<(InteractionSet, CacheMeta)> {
    let meta_path = dir.join(META_FILE);
    let raw = fs::read_to_string(&meta_path).map_err(|e| CliError::io(&meta_path, e))?;
    let meta: CacheMeta = serde_json::from_str(&raw)
        .map_err(|e| CliError::Data(format!("{}: {e}", meta_path.display())))?;

    let mut files = Vec::new();
    let mut rows = Vec::new();
    for tag in split_files(meta.has_valid) {
        let p = dir.join(file_name(tag));
        let body = fs::read_to_string(&p).map_err(|e| CliError::io(&p, e))?;
        parse_split(&body, tag, &p, &mut rows)?;
        files.push((tag, body));
    }
    if fingerprint(&files) != meta.fingerprint {
        return Err(CliError::Data(format!(
            "{}: split files do not match the recorded fingerprint",
            dir.display()
        )));
    }
    // segments are contiguous per user in train, valid, test order
    rows.sort_by_key(|(it, tag, line)| (it.user, *tag, *line));
    let (interactions, tags): (Vec<_>, Vec<_>) = rows.into_iter().map(|(it, tag, _)| (it, tag)).unzip();
    let iset = InteractionSet::from_parts(meta.n_users, meta.n_items, interactions, tags)?;
    Ok((iset, meta))
}
