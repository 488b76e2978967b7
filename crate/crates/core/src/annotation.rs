//! Keyframe annotations, the annotation file, and Gaussian soft labels.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-frame binary labels for one video; `1` marks an audible-action keyframe.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationTrack {
    pub video_id: String,
    pub fps: f64,
    labels: Vec<u8>,
}

impl AnnotationTrack {
    pub fn from_keyframes(
        video_id: impl Into<String>,
        num_frames: usize,
        fps: f64,
        keyframes: &[usize],
    ) -> Result<Self> {
        let video_id = video_id.into();
        let mut labels = vec![0u8; num_frames];
        for &k in keyframes {
            if k >= num_frames {
                return Err(Error::validation(format!(
                    "video {video_id}: keyframe {k} out of range for {num_frames} frames"
                )));
            }
            labels[k] = 1;
        }
        Ok(Self {
            video_id,
            fps,
            labels,
        })
    }

    pub fn from_labels(video_id: impl Into<String>, fps: f64, labels: Vec<u8>) -> Result<Self> {
        let video_id = video_id.into();
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::validation(format!(
                "video {video_id}: labels must be 0 or 1"
            )));
        }
        Ok(Self {
            video_id,
            fps,
            labels,
        })
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn num_frames(&self) -> usize {
        self.labels.len()
    }

    pub fn keyframes(&self) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, &l)| (l == 1).then_some(i))
            .collect()
    }
}

/// Gaussian-softened training targets, one per frame, in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabelTrack {
    pub targets: Vec<f64>,
}

/// Places a Gaussian of width `sigma` (truncated at `radius` frames) on each
/// keyframe; overlapping kernels combine by max.
pub fn gaussian_soft_labels(track: &AnnotationTrack, sigma: f64, radius: usize) -> SoftLabelTrack {
    assert!(sigma > 0.0, "sigma must be positive");
    let n = track.num_frames();
    let mut targets = vec![0.0f64; n];
    for k in track.keyframes() {
        let lo = k.saturating_sub(radius);
        let hi = (k + radius).min(n.saturating_sub(1));
        for (t, target) in targets.iter_mut().enumerate().take(hi + 1).skip(lo) {
            let d = t as f64 - k as f64;
            let g = (-(d * d) / (2.0 * sigma * sigma)).exp();
            if g > *target {
                *target = g;
            }
        }
    }
    SoftLabelTrack { targets }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationEntry {
    pub id: String,
    pub num_frames: usize,
    pub fps: f64,
    pub keyframes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationFile {
    pub videos: Vec<AnnotationEntry>,
}

impl AnnotationFile {
    pub fn from_tracks(tracks: &[AnnotationTrack]) -> Self {
        AnnotationFile {
            videos: tracks
                .iter()
                .map(|t| AnnotationEntry {
                    id: t.video_id.clone(),
                    num_frames: t.num_frames(),
                    fps: t.fps,
                    keyframes: t.keyframes(),
                })
                .collect(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let root: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Parse {
            record: "document".into(),
            message: e.to_string(),
        })?;
        let videos = root
            .get("videos")
            .and_then(|v| v.as_array())
            .ok_or_else(|| Error::Parse {
                record: "document".into(),
                message: "missing array field `videos`".into(),
            })?;
        let mut entries = Vec::with_capacity(videos.len());
        for (i, v) in videos.iter().enumerate() {
            let entry: AnnotationEntry =
                serde_json::from_value(v.clone()).map_err(|e| Error::Parse {
                    record: match v.get("id").and_then(|id| id.as_str()) {
                        Some(id) => format!("videos[{i}] (id {id})"),
                        None => format!("videos[{i}]"),
                    },
                    message: e.to_string(),
                })?;
            entries.push(entry);
        }
        Ok(AnnotationFile { videos: entries })
    }

    pub fn to_tracks(&self) -> Result<Vec<AnnotationTrack>> {
        self.videos
            .iter()
            .map(|e| {
                if !(e.fps > 0.0 && e.fps.is_finite()) {
                    return Err(Error::validation(format!("video {}: fps must be positive", e.id)));
                }
                AnnotationTrack::from_keyframes(&e.id, e.num_frames, e.fps, &e.keyframes)
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("annotation file serializes");
        s.push('\n');
        s
    }
}

pub fn load_annotations(path: &Path) -> Result<Vec<AnnotationTrack>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    AnnotationFile::parse(&text)?.to_tracks()
}

pub fn save_annotations(tracks: &[AnnotationTrack], path: &Path) -> Result<()> {
    let text = AnnotationFile::from_tracks(tracks).to_json();
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
