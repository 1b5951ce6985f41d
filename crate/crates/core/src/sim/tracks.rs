use std::collections::BTreeMap;

use crate::sim::camera::FeatureObservation;

/// A landmark followed through consecutive keyframes.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTrack {
    pub track_id: usize,
    pub landmark_id: usize,
    /// Observations in frame order; `feature_id` holds the track id.
    pub observations: Vec<FeatureObservation>,
}

impl SimTrack {
    pub fn first_frame(&self) -> usize {
        self.observations[0].frame_id
    }

    pub fn last_frame(&self) -> usize {
        self.observations.last().unwrap().frame_id
    }
}

/// Split per-frame landmark observations into tracks. A landmark missing
/// from one keyframe ends its track; a later sighting opens a new track.
/// Track ids are assigned in order of (first frame, landmark id).
pub fn track_features(frames: &[Vec<FeatureObservation>]) -> Vec<SimTrack> {
    let mut open: BTreeMap<usize, SimTrack> = BTreeMap::new();
    let mut done = Vec::new();
    let mut next_id = 0;
    for (f, obs) in frames.iter().enumerate() {
        let mut still_open = BTreeMap::new();
        for o in obs {
            let o = FeatureObservation { frame_id: f, ..*o };
            let lm = o.feature_id;
            let mut track = open.remove(&lm).unwrap_or_else(|| {
                let t = SimTrack {
                    track_id: next_id,
                    landmark_id: lm,
                    observations: Vec::new(),
                };
                next_id += 1;
                t
            });
            track.observations.push(FeatureObservation {
                feature_id: track.track_id,
                ..o
            });
            still_open.insert(lm, track);
        }
        done.extend(std::mem::replace(&mut open, still_open).into_values());
    }
    done.extend(open.into_values());
    done.sort_by_key(|t| t.track_id);
    done
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frames(mask: &[&[usize]]) -> Vec<Vec<FeatureObservation>> {
        mask.iter()
            .enumerate()
            .map(|(f, ids)| {
                ids.iter()
                    .map(|&id| FeatureObservation {
                        frame_id: f,
                        feature_id: id,
                        x: 0.0,
                        y: 0.0,
                        right: None,
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn continuous_visibility_is_one_track() {
        let t = track_features(&frames(&[&[7], &[7], &[7], &[7], &[7], &[7]]));
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].observations.len(), 6);
        assert_eq!(t[0].landmark_id, 7);
    }

    #[test]
    fn gap_starts_new_track() {
        let t = track_features(&frames(&[&[1], &[1], &[1], &[], &[1], &[1], &[1]]));
        assert_eq!(t.len(), 2);
        assert_eq!((t[0].first_frame(), t[0].last_frame()), (0, 2));
        assert_eq!((t[1].first_frame(), t[1].last_frame()), (4, 6));
        assert_ne!(t[0].track_id, t[1].track_id);
    }
}
