//! Sliding-window inference and evaluation.

use audible_core::decode::decode_events;
use audible_core::metrics::{evaluate as score, MetricsReport, VideoEvents};
use audible_core::sampling::{reassemble, window_spans, WindowSpan};
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::data::{assemble, ClipRef, PreparedVideo};
use crate::error::Result;
use crate::graph::Graph;
use crate::model::Network;
use crate::params::ParamStore;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoPrediction {
    pub id: String,
    /// `(p_no_sound, p_sound)` for every frame.
    pub probs: Vec<[f64; 2]>,
    pub events: Vec<usize>,
    /// Ground-truth keyframes when the video was labeled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keyframes: Option<Vec<usize>>,
    /// Per-frame discriminative maps, `map_side x map_side` row-major.
    #[serde(skip)]
    pub maps: Option<Vec<Vec<f32>>>,
    #[serde(skip)]
    pub map_side: usize,
}

/// Predictions in the shape the CLI writes to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionReport {
    pub videos: Vec<VideoPrediction>,
}

/// Frame probabilities for one video: windows of `clip_len` frames every
/// `window_step` frames, the last window padded, frames covered by several
/// windows taking the earliest window's value.
pub fn predict(net: &Network, store: &ParamStore, config: &TrainConfig, video: &PreparedVideo, with_maps: bool) -> Result<VideoPrediction> {
    let clip_len = config.clip_len;
    let spans = window_spans(video.num_frames, clip_len, config.window_step());
    let mut prob_windows: Vec<(WindowSpan, Vec<[f64; 2]>)> = Vec::with_capacity(spans.len());
    let mut map_windows: Vec<(WindowSpan, Vec<Vec<f32>>)> = Vec::new();
    let mut map_side = 0;
    for chunk in spans.chunks(config.batch_size.max(1)) {
        let clips: Vec<ClipRef> = chunk
            .iter()
            .map(|s| ClipRef {
                video: 0,
                start: s.start,
                real_len: s.real_len,
            })
            .collect();
        let asm = assemble(std::slice::from_ref(video), &clips, clip_len);
        let mut g = Graph::new(store, false);
        let out = net.forward(&mut g, &asm.batch);
        let probs = &g.value(out.probs).data;
        let maps = g.value(out.maps);
        map_side = maps.shape[2];
        let plane = maps.shape[2] * maps.shape[3];
        for (ci, span) in chunk.iter().enumerate() {
            let rows = (0..span.real_len).map(|i| ci * clip_len + i);
            let p: Vec<[f64; 2]> = rows
                .clone()
                .map(|r| [f64::from(probs[2 * r]), f64::from(probs[2 * r + 1])])
                .collect();
            prob_windows.push((*span, p));
            if with_maps {
                let m = rows.map(|r| maps.data[r * plane..][..plane].to_vec()).collect();
                map_windows.push((*span, m));
            }
        }
    }
    let probs = reassemble(video.num_frames, &prob_windows);
    let sound: Vec<f64> = probs.iter().map(|p| p[1]).collect();
    let events = decode_events(&sound, config.decode_threshold, config.min_separation);
    Ok(VideoPrediction {
        id: video.id.clone(),
        probs,
        events,
        keyframes: video.labeled.then(|| video.keyframes()),
        maps: with_maps.then(|| reassemble(video.num_frames, &map_windows)),
        map_side,
    })
}

/// Scores decoded events against the videos' keyframes.
pub fn score_predictions(videos: &[PreparedVideo], preds: &[VideoPrediction], window: usize) -> Result<MetricsReport> {
    let events: Vec<VideoEvents> = videos
        .iter()
        .zip(preds)
        .map(|(v, p)| VideoEvents {
            id: v.id.clone(),
            pred: p.events.clone(),
            gt: v.keyframes(),
        })
        .collect();
    Ok(score(&events, window)?)
}

pub fn evaluate(net: &Network, store: &ParamStore, config: &TrainConfig, videos: &[PreparedVideo]) -> Result<(MetricsReport, Vec<VideoPrediction>)> {
    let preds = videos
        .iter()
        .map(|v| predict(net, store, config, v, false))
        .collect::<Result<Vec<_>>>()?;
    let report = score_predictions(videos, &preds, config.match_window)?;
    Ok((report, preds))
}
