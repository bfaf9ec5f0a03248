//! Two-block synthetic interaction data with a known answer.
//!
//! Items form two disjoint blocks. Each block is cut into equal groups; a user
//! belongs to one block, likes a few of its groups and interacts with every
//! item in them, in random order. Holding out the latest interactions leaves
//! test items whose group-mates sit in the user's history, so a model that
//! learns co-occurrence can find them while global popularity cannot.

use cfrec_core::{RawReview, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TwoBlockSpec {
    pub users: usize,
    pub items: usize,
    pub groups_per_block: usize,
    pub liked_groups: usize,
    pub seed: u64,
}

impl Default for TwoBlockSpec {
    /// 200 users over 40 items; 3 liked groups of 4 give 12 interactions per user.
    fn default() -> Self {
        Self {
            users: 200,
            items: 40,
            groups_per_block: 5,
            liked_groups: 3,
            seed: 7,
        }
    }
}

impl TwoBlockSpec {
    pub fn group_size(&self) -> usize {
        self.items / 2 / self.groups_per_block
    }

    pub fn per_user(&self) -> usize {
        self.liked_groups * self.group_size()
    }

    /// Unrated reviews; user `u` lives in block `u % 2`.
    pub fn generate(&self) -> Vec<RawReview> {
        assert!(self.items.is_multiple_of(2 * self.groups_per_block), "items must split evenly into groups");
        assert!(self.liked_groups <= self.groups_per_block);
        let mut rng = Rng::new(self.seed);
        let block_size = self.items / 2;
        let gs = self.group_size();
        let mut out = Vec::with_capacity(self.users * self.per_user());
        for u in 0..self.users {
            let block = u % 2;
            let mut groups: Vec<usize> = (0..self.groups_per_block).collect();
            rng.shuffle(&mut groups);
            let mut items: Vec<usize> = groups[..self.liked_groups]
                .iter()
                .flat_map(|g| (0..gs).map(move |k| block * block_size + g * gs + k))
                .collect();
            rng.shuffle(&mut items);
            for (pos, item) in items.into_iter().enumerate() {
                out.push(RawReview {
                    user: format!("u{u}"),
                    item: format!("i{item}"),
                    rating: None,
                    timestamp: 1_000 + pos as i64,
                });
            }
        }
        out
    }

    /// Same data as an unrated CSV with a header.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("user,item,timestamp\n");
        for r in self.generate() {
            s.push_str(&format!("{},{},{}\n", r.user, r.item, r.timestamp));
        }
        s
    }
}
