use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::WorkflowError;
use crate::model::GoldRecord;

pub const DEFAULT_REFINEMENT_FRACTION: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitSide {
    Refinement,
    Holdout,
}

/// Partition of gold-labeled samples into refinement and holdout sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub refinement_fraction: f64,
    pub seed: u64,
    pub assignment: BTreeMap<String, SplitSide>,
}

impl SplitSpec {
    pub fn side(&self, sample_id: &str) -> Option<SplitSide> {
        self.assignment.get(sample_id).copied()
    }

    pub fn ids(&self, side: SplitSide) -> BTreeSet<&str> {
        self.assignment
            .iter()
            .filter(|(_, s)| **s == side)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    pub fn refinement_ids(&self) -> BTreeSet<&str> {
        self.ids(SplitSide::Refinement)
    }

    pub fn holdout_ids(&self) -> BTreeSet<&str> {
        self.ids(SplitSide::Holdout)
    }

    /// Gold records added after the split was drawn. They stay out of both
    /// sides until the researcher re-splits.
    pub fn unassigned<'a>(&self, gold: &'a [GoldRecord]) -> Vec<&'a str> {
        gold.iter()
            .map(|g| g.sample_id.as_str())
            .filter(|id| !self.assignment.contains_key(*id))
            .collect()
    }

    /// Gold records on one side, in input order.
    pub fn gold_for(&self, gold: &[GoldRecord], side: SplitSide) -> Vec<GoldRecord> {
        gold.iter()
            .filter(|g| self.side(&g.sample_id) == Some(side))
            .cloned()
            .collect()
    }
}

fn rank_key(seed: u64, id: &str) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(id.as_bytes());
    hasher.finalize().into()
}

/// Seeded partition: ids are ranked by `sha256(seed || id)` and the first
/// `round(n * fraction)` go to refinement. The result depends only on the
/// id set, the seed and the fraction, never on input order.
pub fn split(gold: &[GoldRecord], fraction: f64, seed: u64) -> Result<SplitSpec, WorkflowError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(WorkflowError::InvalidFraction(fraction));
    }
    let ids: BTreeSet<&str> = gold.iter().map(|g| g.sample_id.as_str()).collect();
    let n = ids.len();
    if n < 2 {
        return Err(WorkflowError::TooFewGold(n));
    }
    let take = (n as f64 * fraction).round() as usize;
    if take == 0 || take == n {
        return Err(WorkflowError::DegenerateSplit {
            gold: n,
            refinement: take,
        });
    }
    let mut ranked: Vec<([u8; 32], &str)> =
        ids.iter().map(|id| (rank_key(seed, id), *id)).collect();
    ranked.sort();
    let assignment = ranked
        .iter()
        .enumerate()
        .map(|(i, (_, id))| {
            let side = if i < take {
                SplitSide::Refinement
            } else {
                SplitSide::Holdout
            };
            (id.to_string(), side)
        })
        .collect();
    Ok(SplitSpec {
        refinement_fraction: fraction,
        seed,
        assignment,
    })
}
