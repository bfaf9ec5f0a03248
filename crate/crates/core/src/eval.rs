//! Top-K ranking and implicit-feedback metrics.

use alloc::vec::Vec;

use crate::data::MultiHotMatrix;
use crate::error::{check_shape, Error, Result};
use crate::math::{Matrix, Real, Rng};

pub const DEFAULT_KS: [usize; 4] = [1, 5, 10, 20];

/// Per-user item rankings with known items removed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankedList {
    lists: Vec<Vec<usize>>,
    /// Users with fewer than `k_max` rankable items.
    pub truncated: usize,
}

impl RankedList {
    pub fn new(lists: Vec<Vec<usize>>) -> Self {
        Self { lists, truncated: 0 }
    }

    pub fn len(&self) -> usize {
        self.lists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lists.is_empty()
    }

    pub fn user(&self, r: usize) -> &[usize] {
        &self.lists[r]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[usize]> + '_ {
        self.lists.iter().map(Vec::as_slice)
    }
}

/// Orders items by descending score, ties by ascending item id, skipping
/// items in the corresponding `exclude` row, and keeps the first `k_max`.
pub fn rank<T: Real>(scores: &Matrix<T>, exclude: &MultiHotMatrix, k_max: usize) -> Result<RankedList> {
    check_shape(
        "rank",
        (exclude.n_rows(), exclude.n_cols()),
        scores.shape(),
    )?;
    if !scores.is_finite() {
        return Err(Error::NonFinite("ranking scores"));
    }
    let mut truncated = 0;
    let mut lists = Vec::with_capacity(scores.rows());
    for r in 0..scores.rows() {
        let row = scores.row(r);
        let known = exclude.row(r);
        let mut cand: Vec<usize> = (0..row.len()).filter(|i| known.binary_search(i).is_err()).collect();
        cand.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).expect("finite").then(a.cmp(&b)));
        if cand.len() < k_max {
            truncated += 1;
        }
        cand.truncate(k_max);
        lists.push(cand);
    }
    Ok(RankedList { lists, truncated })
}

/// Metrics at one cutoff.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AtK {
    pub k: usize,
    pub precision: f64,
    pub recall: f64,
    pub ndcg: f64,
    pub mrr: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct UserMetrics {
    /// Row index into the evaluated batch.
    pub user: usize,
    pub at: Vec<AtK>,
}

/// Unweighted user means plus per-user values.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricsReport {
    pub ks: Vec<usize>,
    pub aggregate: Vec<AtK>,
    pub evaluated: usize,
    /// Users without any ground-truth item.
    pub skipped: usize,
    pub per_user: Vec<UserMetrics>,
}

impl MetricsReport {
    pub fn at(&self, k: usize) -> Option<&AtK> {
        self.aggregate.iter().find(|m| m.k == k)
    }

    /// nDCG at `k`, or 0 when `k` was not computed.
    pub fn ndcg(&self, k: usize) -> f64 {
        self.at(k).map_or(0.0, |m| m.ndcg)
    }
}

/// `1 / log2(rank + 1)` for 1-based ranks up to `k`.
fn discounts(k: usize) -> Vec<f64> {
    (1..=k).map(|i| 1.0 / libm::log2((i + 1) as f64)).collect()
}

/// Precision, recall, nDCG and MRR at each cutoff for every user with a
/// nonempty row in `truth`.
pub fn metrics(ranked: &RankedList, truth: &MultiHotMatrix, ks: &[usize]) -> Result<MetricsReport> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::Config("metric cutoffs must be a nonempty list of positive K".into()));
    }
    if ranked.len() != truth.n_rows() {
        return Err(Error::Shape {
            op: "metrics",
            expected: (truth.n_rows(), 1),
            actual: (ranked.len(), 1),
        });
    }
    let k_max = *ks.iter().max().expect("nonempty");
    let disc = discounts(k_max);

    let mut per_user = Vec::new();
    let mut skipped = 0;
    for (u, list) in ranked.iter().enumerate() {
        let relevant = truth.row(u);
        if relevant.is_empty() {
            skipped += 1;
            continue;
        }
        let at = ks
            .iter()
            .map(|&k| {
                let mut hits = 0usize;
                let mut dcg = 0.0;
                let mut first = None;
                for (pos, item) in list.iter().take(k).enumerate() {
                    if relevant.binary_search(item).is_ok() {
                        hits += 1;
                        dcg += disc[pos];
                        first.get_or_insert(pos + 1);
                    }
                }
                let idcg: f64 = disc[..relevant.len().min(k)].iter().sum();
                AtK {
                    k,
                    precision: hits as f64 / k as f64,
                    recall: hits as f64 / relevant.len() as f64,
                    ndcg: dcg / idcg,
                    mrr: first.map_or(0.0, |r| 1.0 / r as f64),
                }
            })
            .collect();
        per_user.push(UserMetrics { user: u, at });
    }

    let evaluated = per_user.len();
    let aggregate = ks
        .iter()
        .enumerate()
        .map(|(j, &k)| {
            let mut sum = AtK {
                k,
                ..Default::default()
            };
            for um in &per_user {
                sum.precision += um.at[j].precision;
                sum.recall += um.at[j].recall;
                sum.ndcg += um.at[j].ndcg;
                sum.mrr += um.at[j].mrr;
            }
            if evaluated > 0 {
                let n = evaluated as f64;
                sum.precision /= n;
                sum.recall /= n;
                sum.ndcg /= n;
                sum.mrr /= n;
            }
            sum
        })
        .collect();

    Ok(MetricsReport {
        ks: ks.to_vec(),
        aggregate,
        evaluated,
        skipped,
        per_user,
    })
}

/// Training-set item frequency as a score, identical for every user.
pub fn popularity_scores(train: &MultiHotMatrix, users: &[usize]) -> Matrix<f64> {
    let counts = train.item_counts();
    Matrix::from_fn(users.len(), train.n_cols(), |_, c| counts[c] as f64)
}

/// Uniform random scores.
pub fn random_scores(rng: &mut Rng, rows: usize, cols: usize) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| rng.uniform())
}

/// Scores users in batches of `batch`, ranks with `exclude` removed and
/// computes metrics against `truth`. Users without truth items are skipped
/// without being scored. Per-user records carry global row ids.
pub fn evaluate_with<T: Real>(
    truth: &MultiHotMatrix,
    exclude: &MultiHotMatrix,
    ks: &[usize],
    batch: usize,
    mut score: impl FnMut(&[usize]) -> Result<Matrix<T>>,
) -> Result<MetricsReport> {
    if truth.n_rows() != exclude.n_rows() || truth.n_cols() != exclude.n_cols() {
        return Err(Error::Shape {
            op: "evaluate_with",
            expected: (truth.n_rows(), truth.n_cols()),
            actual: (exclude.n_rows(), exclude.n_cols()),
        });
    }
    let users: Vec<usize> = (0..truth.n_rows()).filter(|&u| !truth.row(u).is_empty()).collect();
    let k_max = ks.iter().copied().max().unwrap_or(0);
    let mut lists = Vec::with_capacity(users.len());
    let mut truncated = 0;
    for chunk in users.chunks(batch.max(1)) {
        let scores = score(chunk)?;
        let ranked = rank(&scores, &exclude.select(chunk), k_max)?;
        truncated += ranked.truncated;
        lists.extend(ranked.lists);
    }
    let ranked = RankedList { lists, truncated };
    let mut report = metrics(&ranked, &truth.select(&users), ks)?;
    for um in &mut report.per_user {
        um.user = users[um.user];
    }
    report.skipped = truth.n_rows() - users.len();
    Ok(report)
}
