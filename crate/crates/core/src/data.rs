//! Interaction filtering, ID renumbering, temporal splits and multi-hot rows.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{Matrix, Real};

/// One raw review as read from a source file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawReview {
    pub user: String,
    pub item: String,
    /// 1–5 when the source carries ratings.
    pub rating: Option<u8>,
    pub timestamp: i64,
}

/// Which reviews count as hits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Mode {
    /// Ratings of 4 and 5 only. Unrated reviews are kept.
    Clean,
    /// Every review.
    Noisy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum SplitTag {
    Train,
    Valid,
    Test,
}

impl SplitTag {
    pub fn name(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Valid => "valid",
            SplitTag::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Interaction {
    pub user: usize,
    pub item: usize,
    pub time: i64,
}

/// Interactions with dense ids, sorted by `(user, time)`, each tagged with a split.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionSet {
    n_users: usize,
    n_items: usize,
    interactions: Vec<Interaction>,
    tags: Vec<SplitTag>,
    user_names: Vec<String>,
    item_names: Vec<String>,
}

impl InteractionSet {
    /// Validates and wraps already-renumbered interactions.
    pub fn from_parts(
        n_users: usize,
        n_items: usize,
        interactions: Vec<Interaction>,
        tags: Vec<SplitTag>,
    ) -> Result<Self> {
        if interactions.len() != tags.len() {
            return Err(Error::Data(format!(
                "{} interactions but {} split tags",
                interactions.len(),
                tags.len()
            )));
        }
        let mut seen_user = vec![false; n_users];
        let mut seen_item = vec![false; n_items];
        for (i, it) in interactions.iter().enumerate() {
            if it.user >= n_users || it.item >= n_items {
                return Err(Error::Data(format!(
                    "interaction {i} ({}, {}) outside {n_users} users x {n_items} items",
                    it.user, it.item
                )));
            }
            if i > 0 {
                let prev = interactions[i - 1];
                if (prev.user, prev.time) > (it.user, it.time) {
                    return Err(Error::Data(format!("interaction {i} breaks (user, time) order")));
                }
                if prev.user == it.user && tags[i - 1] > tags[i] {
                    return Err(Error::Data(format!(
                        "user {} has a {} interaction after a {} one",
                        it.user,
                        tags[i].name(),
                        tags[i - 1].name()
                    )));
                }
            }
            seen_user[it.user] = true;
            seen_item[it.item] = true;
        }
        if let Some(u) = seen_user.iter().position(|s| !s) {
            return Err(Error::Data(format!("user id {u} has no interactions")));
        }
        if let Some(i) = seen_item.iter().position(|s| !s) {
            return Err(Error::Data(format!("item id {i} has no interactions")));
        }
        Ok(Self {
            n_users,
            n_items,
            interactions,
            tags,
            user_names: Vec::new(),
            item_names: Vec::new(),
        })
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    pub fn interactions(&self) -> &[Interaction] {
        &self.interactions
    }

    pub fn tags(&self) -> &[SplitTag] {
        &self.tags
    }

    /// Original id of each dense user id, when built by [`preprocess`].
    pub fn user_names(&self) -> &[String] {
        &self.user_names
    }

    pub fn item_names(&self) -> &[String] {
        &self.item_names
    }

    /// Interactions carrying `tag`, in stored order.
    pub fn iter_split(&self, tag: SplitTag) -> impl Iterator<Item = &Interaction> + '_ {
        self.interactions
            .iter()
            .zip(&self.tags)
            .filter(move |(_, t)| **t == tag)
            .map(|(i, _)| i)
    }

    pub fn count(&self, tag: SplitTag) -> usize {
        self.tags.iter().filter(|t| **t == tag).count()
    }

    /// Start offset of each user's run, plus a final sentinel.
    fn user_offsets(&self) -> Vec<usize> {
        let mut offsets = vec![0; self.n_users + 1];
        for it in &self.interactions {
            offsets[it.user + 1] += 1;
        }
        for u in 0..self.n_users {
            offsets[u + 1] += offsets[u];
        }
        offsets
    }

    /// Converts back to reviews using the dense ids as names.
    pub fn to_reviews(&self) -> Vec<RawReview> {
        self.interactions
            .iter()
            .map(|it| RawReview {
                user: format!("{}", it.user),
                item: format!("{}", it.item),
                rating: None,
                timestamp: it.time,
            })
            .collect()
    }
}

/// Filters, deduplicates, sorts and renumbers raw reviews.
///
/// * clean mode drops reviews rated 3 or lower; unrated reviews are hits in both modes
/// * repeated `(user, item)` pairs keep the earliest review
/// * user ids are renumbered in order of first appearance in `reviews`
/// * interactions are sorted by `(user, time)`, stable on input order
/// * item ids are renumbered in order of first appearance in that sorted stream
///
/// All interactions start tagged as train.
pub fn preprocess(reviews: &[RawReview], mode: Mode) -> Result<InteractionSet> {
    if reviews.is_empty() {
        return Err(Error::Data("no reviews to preprocess".into()));
    }
    let kept = reviews.iter().enumerate().filter(|(_, r)| match (mode, r.rating) {
        (Mode::Clean, Some(rating)) => rating >= 4,
        _ => true,
    });

    let mut earliest: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    for (idx, r) in kept {
        earliest
            .entry((r.user.as_str(), r.item.as_str()))
            .and_modify(|e| {
                if r.timestamp < reviews[*e].timestamp {
                    *e = idx;
                }
            })
            .or_insert(idx);
    }
    if earliest.is_empty() {
        return Err(Error::Data(format!(
            "all {} reviews were filtered out",
            reviews.len()
        )));
    }
    let mut survivors: Vec<usize> = earliest.into_values().collect();
    survivors.sort_unstable();

    let mut user_ids: BTreeMap<&str, usize> = BTreeMap::new();
    let mut user_names = Vec::new();
    for &idx in &survivors {
        let name = reviews[idx].user.as_str();
        user_ids.entry(name).or_insert_with(|| {
            user_names.push(String::from(name));
            user_names.len() - 1
        });
    }

    let mut rows: Vec<(usize, i64, usize)> = survivors
        .iter()
        .map(|&idx| (user_ids[reviews[idx].user.as_str()], reviews[idx].timestamp, idx))
        .collect();
    rows.sort_unstable();

    let mut item_ids: BTreeMap<&str, usize> = BTreeMap::new();
    let mut item_names = Vec::new();
    let mut interactions = Vec::with_capacity(rows.len());
    for (user, time, idx) in rows {
        let name = reviews[idx].item.as_str();
        let item = *item_ids.entry(name).or_insert_with(|| {
            item_names.push(String::from(name));
            item_names.len() - 1
        });
        interactions.push(Interaction { user, item, time });
    }

    let tags = vec![SplitTag::Train; interactions.len()];
    Ok(InteractionSet {
        n_users: user_names.len(),
        n_items: item_names.len(),
        interactions,
        tags,
        user_names,
        item_names,
    })
}

/// Per-user temporal split proportions, e.g. `80:20` or `70:20:10`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    parts: [u32; 3],
    three_way: bool,
}

impl SplitRatios {
    pub const EIGHTY_TWENTY: Self = Self {
        parts: [80, 0, 20],
        three_way: false,
    };
    pub const SEVENTY_TWENTY_TEN: Self = Self {
        parts: [70, 20, 10],
        three_way: true,
    };

    pub fn two_way(train: u32, test: u32) -> Result<Self> {
        if train == 0 || test == 0 {
            return Err(Error::Config(format!("invalid split {train}:{test}")));
        }
        Ok(Self {
            parts: [train, 0, test],
            three_way: false,
        })
    }

    pub fn three_way(train: u32, valid: u32, test: u32) -> Result<Self> {
        if train == 0 || valid == 0 || test == 0 {
            return Err(Error::Config(format!("invalid split {train}:{valid}:{test}")));
        }
        Ok(Self {
            parts: [train, valid, test],
            three_way: true,
        })
    }

    /// Parses `"a:b"` or `"a:b:c"` with positive integer parts.
    pub fn parse(spec: &str) -> Result<Self> {
        let parts: Vec<u32> = spec
            .split(':')
            .map(|p| p.trim().parse::<u32>())
            .collect::<core::result::Result<_, _>>()
            .map_err(|_| Error::Config(format!("invalid split ratio {spec:?}")))?;
        match parts[..] {
            [a, b] => Self::two_way(a, b),
            [a, b, c] => Self::three_way(a, b, c),
            _ => Err(Error::Config(format!("invalid split ratio {spec:?}"))),
        }
    }

    pub fn has_valid(&self) -> bool {
        self.three_way
    }

    fn total(&self) -> u32 {
        self.parts.iter().sum()
    }

    /// Minimum history length for a user to be split at all.
    pub fn min_len(&self) -> usize {
        if self.three_way {
            3
        } else {
            2
        }
    }

    /// `(train, valid, test)` sizes for a history of `len` interactions.
    ///
    /// Train takes the ceiling of its share; valid the rounded share; test the
    /// rest. Each segment keeps at least one interaction.
    pub fn segment_sizes(&self, len: usize) -> (usize, usize, usize) {
        if len < self.min_len() {
            return (len, 0, 0);
        }
        let total = self.total() as usize;
        let later = if self.three_way { 2 } else { 1 };
        let train = (self.parts[0] as usize * len).div_ceil(total).clamp(1, len - later);
        if !self.three_way {
            return (train, 0, len - train);
        }
        let valid = ((self.parts[1] as usize * len * 2 + total) / (2 * total)).clamp(1, len - train - 1);
        (train, valid, len - train - valid)
    }
}

impl core::fmt::Display for SplitRatios {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        if self.three_way {
            write!(f, "{}:{}:{}", self.parts[0], self.parts[1], self.parts[2])
        } else {
            write!(f, "{}:{}", self.parts[0], self.parts[2])
        }
    }
}

/// What the splitter had to work around.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SplitReport {
    /// Users too short to split; all their interactions went to train.
    pub short_users: usize,
    /// Items that occur only in valid/test segments.
    pub unseen_in_train: usize,
}

/// Tags each user's interactions train, then valid, then test in time order.
pub fn split(iset: &InteractionSet, ratios: SplitRatios) -> (InteractionSet, SplitReport) {
    let mut out = iset.clone();
    let offsets = iset.user_offsets();
    let mut report = SplitReport::default();
    for u in 0..iset.n_users {
        let (lo, hi) = (offsets[u], offsets[u + 1]);
        let len = hi - lo;
        if len < ratios.min_len() {
            report.short_users += 1;
        }
        let (train, valid, _) = ratios.segment_sizes(len);
        for (k, tag) in out.tags[lo..hi].iter_mut().enumerate() {
            *tag = if k < train {
                SplitTag::Train
            } else if k < train + valid {
                SplitTag::Valid
            } else {
                SplitTag::Test
            };
        }
    }
    let mut in_train = vec![false; iset.n_items];
    for it in out.iter_split(SplitTag::Train) {
        in_train[it.item] = true;
    }
    report.unseen_in_train = in_train.iter().filter(|s| !**s).count();
    (out, report)
}

/// Sparse binary user × item matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiHotMatrix {
    n_cols: usize,
    rows: Vec<Vec<usize>>,
}

impl MultiHotMatrix {
    /// Sorts and deduplicates each row; rejects indices `>= n_cols`.
    pub fn from_rows(n_cols: usize, rows: Vec<Vec<usize>>) -> Result<Self> {
        let mut rows = rows;
        for (r, row) in rows.iter_mut().enumerate() {
            row.sort_unstable();
            row.dedup();
            if let Some(&last) = row.last() {
                if last >= n_cols {
                    return Err(Error::Data(format!(
                        "row {r} has item {last} but only {n_cols} items exist"
                    )));
                }
            }
        }
        Ok(Self { n_cols, rows })
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    /// Sorted item indices of row `r`.
    pub fn row(&self, r: usize) -> &[usize] {
        &self.rows[r]
    }

    pub fn contains(&self, r: usize, item: usize) -> bool {
        self.rows[r].binary_search(&item).is_ok()
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn dense_row<T: Real>(&self, r: usize) -> Vec<T> {
        let mut out = vec![T::zero(); self.n_cols];
        for &i in &self.rows[r] {
            out[i] = T::one();
        }
        out
    }

    /// Dense 0/1 matrix of the selected rows, in order.
    pub fn dense<T: Real>(&self, rows: &[usize]) -> Matrix<T> {
        let mut out = Matrix::zeros(rows.len(), self.n_cols);
        for (k, &r) in rows.iter().enumerate() {
            let dst = out.row_mut(k);
            for &i in &self.rows[r] {
                dst[i] = T::one();
            }
        }
        out
    }

    /// Rows restricted to `rows`, in order.
    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            n_cols: self.n_cols,
            rows: rows.iter().map(|&r| self.rows[r].clone()).collect(),
        }
    }

    /// How many rows contain each item.
    pub fn item_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_cols];
        for row in &self.rows {
            for &i in row {
                counts[i] += 1;
            }
        }
        counts
    }

    /// Row-wise union with another matrix of the same shape.
    pub fn union(&self, other: &Self) -> Result<Self> {
        if self.n_cols != other.n_cols || self.rows.len() != other.rows.len() {
            return Err(Error::Data("multi-hot union of differently shaped matrices".into()));
        }
        let rows = self
            .rows
            .iter()
            .zip(&other.rows)
            .map(|(a, b)| a.iter().chain(b).copied().collect())
            .collect();
        Self::from_rows(self.n_cols, rows)
    }
}

/// Multi-hot rows for every user from interactions carrying one of `tags`.
pub fn to_multihot(iset: &InteractionSet, tags: &[SplitTag]) -> MultiHotMatrix {
    let mut rows = vec![Vec::new(); iset.n_users];
    for (it, tag) in iset.interactions.iter().zip(&iset.tags) {
        if tags.contains(tag) {
            rows[it.user].push(it.item);
        }
    }
    MultiHotMatrix::from_rows(iset.n_items, rows).expect("interaction ids are in range")
}
