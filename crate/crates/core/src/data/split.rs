use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::ParticipantRecord;

/// One leave-one-participant-out fold. Ids are participant ids.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub held_out_participant: String,
    pub train_ids: BTreeSet<String>,
    pub test_ids: BTreeSet<String>,
}

/// One fold per participant, in dataset order.
pub fn lopo_splits(dataset: &[ParticipantRecord]) -> Result<Vec<FoldSplit>> {
    if dataset.len() < 2 {
        return Err(Error::Data(format!(
            "leave-one-participant-out needs at least 2 participants, got {}",
            dataset.len()
        )));
    }
    let all: BTreeSet<String> = dataset.iter().map(|p| p.participant_id.clone()).collect();
    if all.len() != dataset.len() {
        return Err(Error::Data("participant ids are not unique".into()));
    }
    Ok(dataset
        .iter()
        .map(|p| {
            let held = p.participant_id.clone();
            let mut train_ids = all.clone();
            train_ids.remove(&held);
            FoldSplit {
                test_ids: BTreeSet::from([held.clone()]),
                held_out_participant: held,
                train_ids,
            }
        })
        .collect())
}
