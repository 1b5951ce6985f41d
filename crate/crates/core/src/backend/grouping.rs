//! Partition of the keyframe sequence into groups of keyframes that keep
//! tracking a common set of features.

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

use crate::sim::camera::FeatureObservation;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyframeGroup {
    pub id: usize,
    /// First keyframe of the group.
    pub start: usize,
    /// Contiguous member keyframes, starting with `start`.
    pub members: Vec<usize>,
    /// For each member `k`, the number of tracks seen in every keyframe
    /// from `start` through `k`.
    pub shared_tracks: Vec<usize>,
}

impl KeyframeGroup {
    pub fn contains(&self, keyframe: usize) -> bool {
        self.members.first().is_some_and(|&a| keyframe >= a) && self.members.last().is_some_and(|&b| keyframe <= b)
    }
}

/// Track ids observed in each keyframe.
pub fn track_sets(observations: &[Vec<FeatureObservation>]) -> Vec<BTreeSet<usize>> {
    observations
        .iter()
        .map(|f| f.iter().map(|o| o.feature_id).collect())
        .collect()
}

/// Greedy partition: a group opens at keyframe `i` and absorbs the following
/// keyframes while at least `alpha` tracks have been observed continuously
/// since `i`. The first keyframe that breaks the condition opens the next
/// group. The opening keyframe always belongs to its group, even if it sees
/// fewer than `alpha` tracks.
pub fn group_keyframes(tracks: &[BTreeSet<usize>], alpha: usize) -> Vec<KeyframeGroup> {
    let alpha = alpha.max(1);
    let mut groups: Vec<KeyframeGroup> = Vec::new();
    let mut running: BTreeSet<usize> = BTreeSet::new();
    for (k, set) in tracks.iter().enumerate() {
        let extended: BTreeSet<usize> = running.intersection(set).copied().collect();
        match groups.last_mut() {
            Some(g) if extended.len() >= alpha => {
                g.members.push(k);
                g.shared_tracks.push(extended.len());
                running = extended;
            }
            _ => {
                groups.push(KeyframeGroup {
                    id: groups.len(),
                    start: k,
                    members: vec![k],
                    shared_tracks: vec![set.len()],
                });
                running = set.clone();
            }
        }
    }
    groups
}

/// Group id of every keyframe.
pub fn group_index(groups: &[KeyframeGroup], keyframes: usize) -> Vec<Option<usize>> {
    let mut idx = vec![None; keyframes];
    for g in groups {
        for &k in &g.members {
            if k < keyframes {
                idx[k] = Some(g.id);
            }
        }
    }
    idx
}
