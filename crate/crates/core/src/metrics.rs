//! Event-level evaluation: matching, Recall/Precision/F1, NME, PME, MAE, OBO.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_MATCH_WINDOW: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EventMatching {
    /// `(pred_frame, gt_frame)` in increasing order.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_pred: Vec<usize>,
    pub unmatched_gt: Vec<usize>,
}

impl EventMatching {
    pub fn total_distance(&self) -> usize {
        self.pairs.iter().map(|&(p, g)| p.abs_diff(g)).sum()
    }
}

fn check_sorted(name: &str, frames: &[usize]) -> Result<()> {
    if frames.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::contract(format!("{name} frames must be strictly increasing")));
    }
    Ok(())
}

/// Maximum-cardinality matching with `|pred - gt| <= window`, breaking ties by
/// minimum total distance. Dynamic programming over the two sorted lists.
pub fn match_events(pred: &[usize], gt: &[usize], window: usize) -> Result<EventMatching> {
    check_sorted("predicted", pred)?;
    check_sorted("ground-truth", gt)?;
    let (n, m) = (pred.len(), gt.len());
    // best[i][j]: (pairs, -distance) over pred[i..], gt[j..].
    let mut best = vec![vec![(0usize, 0i64); m + 1]; n + 1];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            let mut b = best[i + 1][j].max(best[i][j + 1]);
            let d = pred[i].abs_diff(gt[j]);
            if d <= window {
                let (c, neg) = best[i + 1][j + 1];
                b = b.max((c + 1, neg - d as i64));
            }
            best[i][j] = b;
        }
    }
    let mut out = EventMatching::default();
    let (mut i, mut j) = (0, 0);
    while i < n && j < m {
        let d = pred[i].abs_diff(gt[j]);
        let here = best[i][j];
        if d <= window {
            let (c, neg) = best[i + 1][j + 1];
            if (c + 1, neg - d as i64) == here {
                out.pairs.push((pred[i], gt[j]));
                i += 1;
                j += 1;
                continue;
            }
        }
        if best[i + 1][j] == here {
            out.unmatched_pred.push(pred[i]);
            i += 1;
        } else {
            out.unmatched_gt.push(gt[j]);
            j += 1;
        }
    }
    out.unmatched_pred.extend_from_slice(&pred[i..]);
    out.unmatched_gt.extend_from_slice(&gt[j..]);
    Ok(out)
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Pooled `(recall, precision, f1)` over all videos.
pub fn frame_prf(matchings: &[EventMatching]) -> (f64, f64, f64) {
    let tp: usize = matchings.iter().map(|m| m.pairs.len()).sum();
    let gt: usize = matchings.iter().map(|m| m.pairs.len() + m.unmatched_gt.len()).sum();
    let pred: usize = matchings.iter().map(|m| m.pairs.len() + m.unmatched_pred.len()).sum();
    let (r, p) = (ratio(tp, gt), ratio(tp, pred));
    let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (r, p, f1)
}

/// `(predicted, ground_truth)` event counts of one video.
pub type Counts = (usize, usize);

pub fn nme(counts: &[Counts]) -> Result<f64> {
    if counts.is_empty() {
        return Err(Error::contract("NME needs at least one video"));
    }
    let sum: usize = counts.iter().map(|&(c, g)| c.abs_diff(g)).sum();
    Ok(sum as f64 / counts.len() as f64)
}

/// Mean position error over videos with at least one matched pair, and the
/// number of videos left out because they had none. `None` when every video
/// is zero-match.
pub fn pme(matchings: &[EventMatching]) -> (Option<f64>, usize) {
    let per: Vec<f64> = matchings.iter().filter_map(video_pme).collect();
    let zero = matchings.len() - per.len();
    if per.is_empty() {
        (None, zero)
    } else {
        (Some(per.iter().sum::<f64>() / per.len() as f64), zero)
    }
}

fn video_pme(m: &EventMatching) -> Option<f64> {
    (!m.pairs.is_empty()).then(|| m.total_distance() as f64 / m.pairs.len() as f64)
}

/// `(mae, obo)`. Videos without ground-truth events are left out of MAE; MAE is
/// 0 when no video qualifies.
pub fn mae_obo(counts: &[Counts]) -> (f64, f64) {
    let terms: Vec<f64> = counts
        .iter()
        .filter(|&&(_, g)| g > 0)
        .map(|&(c, g)| c.abs_diff(g) as f64 / g as f64)
        .collect();
    let mae = if terms.is_empty() { 0.0 } else { terms.iter().sum::<f64>() / terms.len() as f64 };
    let hits = counts.iter().filter(|&&(c, g)| c.abs_diff(g) <= 1).count();
    (mae, ratio(hits, counts.len()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoMetrics {
    pub id: String,
    pub pred_count: usize,
    pub gt_count: usize,
    pub matched: usize,
    pub pme: Option<f64>,
    pub pairs: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub nme: f64,
    /// `null` when no video has a matched pair.
    pub pme: Option<f64>,
    pub pme_zero_match_videos: usize,
    pub mae: f64,
    pub obo: f64,
    pub match_window: usize,
    pub per_video: Vec<VideoMetrics>,
}

/// Predicted and ground-truth event frames of one video.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VideoEvents {
    pub id: String,
    pub pred: Vec<usize>,
    pub gt: Vec<usize>,
}

pub fn evaluate(videos: &[VideoEvents], window: usize) -> Result<MetricsReport> {
    if videos.is_empty() {
        return Err(Error::contract("evaluation needs at least one video"));
    }
    let matchings = videos
        .iter()
        .map(|v| {
            match_events(&v.pred, &v.gt, window).map_err(|e| Error::contract(format!("video {}: {e}", v.id)))
        })
        .collect::<Result<Vec<_>>>()?;
    let counts: Vec<Counts> = videos.iter().map(|v| (v.pred.len(), v.gt.len())).collect();
    let (recall, precision, f1) = frame_prf(&matchings);
    let (pme, zero) = pme(&matchings);
    let (mae, obo) = mae_obo(&counts);
    let per_video = videos
        .iter()
        .zip(&matchings)
        .map(|(v, m)| VideoMetrics {
            id: v.id.clone(),
            pred_count: v.pred.len(),
            gt_count: v.gt.len(),
            matched: m.pairs.len(),
            pme: video_pme(m),
            pairs: m.pairs.clone(),
        })
        .collect();
    Ok(MetricsReport {
        recall,
        precision,
        f1,
        nme: nme(&counts)?,
        pme,
        pme_zero_match_videos: zero,
        mae,
        obo,
        match_window: window,
        per_video,
    })
}
