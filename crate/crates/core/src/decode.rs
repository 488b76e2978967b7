//! Per-frame probability tracks and event decoding.

use crate::error::{Error, Result};

/// Row `t` is `[p_no_sound, p_sound]` for frame `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTrack {
    pub probs: Vec<[f64; 2]>,
    pub events: Vec<usize>,
}

const ROW_TOL: f64 = 1e-5;

impl PredictionTrack {
    pub fn new(probs: Vec<[f64; 2]>, threshold: f64, min_separation: usize) -> Result<Self> {
        for (t, row) in probs.iter().enumerate() {
            if row.iter().any(|p| !(0.0..=1.0).contains(p))
                || (row[0] + row[1] - 1.0).abs() > ROW_TOL
            {
                return Err(Error::contract(format!(
                    "probability row {t} = {row:?} is not a distribution"
                )));
            }
        }
        let sound: Vec<f64> = probs.iter().map(|r| r[1]).collect();
        let events = decode_events(&sound, threshold, min_separation);
        Ok(Self { probs, events })
    }

    pub fn sound(&self) -> Vec<f64> {
        self.probs.iter().map(|r| r[1]).collect()
    }
}

/// Picks local maxima of `p_sound` at or above `threshold`, greedily in
/// descending probability (ties: lower frame first), suppressing candidates
/// closer than `min_separation` frames to an already selected event.
pub fn decode_events(p_sound: &[f64], threshold: f64, min_separation: usize) -> Vec<usize> {
    let n = p_sound.len();
    let mut candidates: Vec<usize> = (0..n)
        .filter(|&t| {
            let p = p_sound[t];
            p >= threshold
                && (t == 0 || p >= p_sound[t - 1])
                && (t + 1 == n || p >= p_sound[t + 1])
        })
        .collect();
    candidates.sort_by(|&a, &b| p_sound[b].total_cmp(&p_sound[a]).then(a.cmp(&b)));
    let mut selected: Vec<usize> = Vec::new();
    for c in candidates {
        if selected.iter().all(|&s| s.abs_diff(c) >= min_separation) {
            selected.push(c);
        }
    }
    selected.sort_unstable();
    selected
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_peak() {
        assert_eq!(decode_events(&[0.1, 0.9, 0.1, 0.1], 0.5, 2), vec![1]);
    }

    #[test]
    fn below_threshold_is_empty() {
        assert!(decode_events(&[0.1, 0.4, 0.49, 0.2], 0.5, 2).is_empty());
    }

    #[test]
    fn greedy_suppression_trace() {
        assert_eq!(decode_events(&[0.6, 0.9, 0.7, 0.1, 0.8], 0.5, 2), vec![1, 4]);
    }

    #[test]
    fn plateau_keeps_first_frame() {
        assert_eq!(decode_events(&[0.1, 0.8, 0.8, 0.1], 0.5, 2), vec![1]);
        assert_eq!(decode_events(&[0.1, 0.8, 0.8, 0.1], 0.5, 1), vec![1, 2]);
    }

    #[test]
    fn track_validates_rows() {
        assert!(PredictionTrack::new(vec![[0.3, 0.6]], 0.5, 2).is_err());
        let t = PredictionTrack::new(vec![[0.9, 0.1], [0.2, 0.8], [0.7, 0.3]], 0.5, 2).unwrap();
        assert_eq!(t.events, vec![1]);
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn events_sorted_and_separated(
            p in proptest::collection::vec(0.0f64..1.0, 0..120),
            sep in 1usize..6,
            thr in 0.0f64..1.0,
        ) {
            let ev = decode_events(&p, thr, sep);
            for w in ev.windows(2) {
                prop_assert!(w[0] < w[1]);
                prop_assert!(w[1] - w[0] >= sep);
            }
            for &e in &ev {
                prop_assert!(e < p.len() && p[e] >= thr);
            }
        }
    }
}
