use serde::{Deserialize, Serialize};

use crate::model::{AggregatedAnnotation, Consistency, Label, VoteSet};

/// How an exact tie between positive and negative votes is settled.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TiePolicy {
    #[default]
    Negative,
    Positive,
    Fail,
}

impl std::str::FromStr for TiePolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "negative" => Ok(TiePolicy::Negative),
            "positive" => Ok(TiePolicy::Positive),
            "fail" => Ok(TiePolicy::Fail),
            other => Err(format!("unknown tie policy {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AggregateError {
    #[error("no valid votes for {sample_id}/{dimension_key}")]
    NoValidVotes {
        sample_id: String,
        dimension_key: String,
    },
    #[error("tied votes for {sample_id}/{dimension_key} under the `fail` tie policy")]
    TieUnresolved {
        sample_id: String,
        dimension_key: String,
    },
}

/// Modal label over the valid votes, with consistency = modal count / valid
/// count. Invalid votes count toward neither side.
pub fn aggregate(
    votes: &VoteSet,
    tie_policy: TiePolicy,
) -> Result<AggregatedAnnotation, AggregateError> {
    let (positive, negative) =
        votes
            .valid_labels()
            .fold((0u32, 0u32), |(p, n), label| match label {
                Label::Positive => (p + 1, n),
                Label::Negative => (p, n + 1),
            });
    let valid = positive + negative;
    if valid == 0 {
        return Err(AggregateError::NoValidVotes {
            sample_id: votes.sample_id.clone(),
            dimension_key: votes.dimension_key.clone(),
        });
    }

    let tie = positive == negative;
    let label = if positive > negative {
        Label::Positive
    } else if negative > positive {
        Label::Negative
    } else {
        match tie_policy {
            TiePolicy::Negative => Label::Negative,
            TiePolicy::Positive => Label::Positive,
            TiePolicy::Fail => {
                return Err(AggregateError::TieUnresolved {
                    sample_id: votes.sample_id.clone(),
                    dimension_key: votes.dimension_key.clone(),
                })
            }
        }
    };
    let agreeing = positive.max(negative);

    Ok(AggregatedAnnotation {
        sample_id: votes.sample_id.clone(),
        dimension_key: votes.dimension_key.clone(),
        label,
        consistency: Consistency::new(agreeing, valid),
        tie,
        valid_votes: valid,
    })
}
