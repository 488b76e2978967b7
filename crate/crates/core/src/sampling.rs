//! Training-clip sampling and sliding-window segmentation for inference.

use ndarray::{s, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::annotation::AnnotationTrack;
use crate::resize::area_resize;
use crate::video::VideoSequence;

#[derive(Debug, Clone)]
pub struct TrainingClip {
    /// First source frame of the clip.
    pub start: usize,
    /// Source frames actually present; positions past this repeat the last frame.
    pub real_len: usize,
    pub frames: Array4<f32>,
    pub labels: Vec<u8>,
}

impl TrainingClip {
    /// Source frame index for each clip position (tail positions repeat the last frame).
    pub fn source_indices(&self) -> Vec<usize> {
        let len = self.labels.len();
        (0..len)
            .map(|i| self.start + i.min(self.real_len - 1))
            .collect()
    }
}

/// Index-only form of [`sample_training_clip`]: the clip start and real length.
pub fn draw_clip_start(num_frames: usize, clip_len: usize, rng_seed: u64) -> (usize, usize) {
    if clip_len >= num_frames {
        return (0, num_frames);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    (rng.random_range(0..=num_frames - clip_len), clip_len)
}

/// Draws a contiguous clip of `clip_len` frames and resizes it to `size x size`.
/// Short videos are taken whole and padded by repeating the last frame with label 0.
pub fn sample_training_clip(
    video: &VideoSequence,
    track: &AnnotationTrack,
    clip_len: usize,
    size: usize,
    rng_seed: u64,
) -> TrainingClip {
    assert!(clip_len >= 1, "clip_len must be positive");
    let t = video.num_frames();
    let (start, real_len) = draw_clip_start(t, clip_len, rng_seed);
    let mut frames = Array4::<f32>::zeros((clip_len, size, size, 3));
    let mut labels = vec![0u8; clip_len];
    let mut last = None;
    for i in 0..clip_len {
        if i < real_len {
            let src = start + i;
            let f = area_resize(video.frame(src), size, size);
            frames.slice_mut(s![i, .., .., ..]).assign(&f);
            labels[i] = track.labels()[src];
            last = Some(f);
        } else {
            frames
                .slice_mut(s![i, .., .., ..])
                .assign(last.as_ref().expect("video has at least one frame"));
        }
    }
    TrainingClip {
        start,
        real_len,
        frames,
        labels,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSpan {
    pub start: usize,
    /// Number of real frames; `window - real_len` trailing positions are padding.
    pub real_len: usize,
}

impl WindowSpan {
    /// Source frame index for each of the `window` positions.
    pub fn source_indices(&self, window: usize) -> Vec<usize> {
        (0..window)
            .map(|i| self.start + i.min(self.real_len - 1))
            .collect()
    }
}

/// Window placements covering `[0, num_frames)` with the given step.
pub fn window_spans(num_frames: usize, window: usize, step: usize) -> Vec<WindowSpan> {
    assert!(window >= 1 && step >= 1 && step <= window, "need 1 <= step <= window");
    let mut spans = Vec::new();
    let mut start = 0;
    while start < num_frames {
        spans.push(WindowSpan {
            start,
            real_len: window.min(num_frames - start),
        });
        if start + window >= num_frames {
            break;
        }
        start += step;
    }
    spans
}

/// Segments a video into fixed-length windows; the final window is padded by
/// repeating the last frame.
pub fn sliding_windows(video: &VideoSequence, window: usize, step: usize) -> Vec<(usize, Array4<f32>)> {
    assert!(window >= 3, "window must be at least 3 frames");
    let (h, w) = (video.height(), video.width());
    window_spans(video.num_frames(), window, step)
        .into_iter()
        .map(|span| {
            let mut frames = Array4::<f32>::zeros((window, h, w, 3));
            for (i, src) in span.source_indices(window).into_iter().enumerate() {
                frames.slice_mut(s![i, .., .., ..]).assign(&video.frame(src));
            }
            (span.start, frames)
        })
        .collect()
}

/// Stitches per-window predictions back into one row per source frame.
/// Padded positions are dropped; where windows overlap the earliest window wins.
pub fn reassemble<T: Clone>(num_frames: usize, windows: &[(WindowSpan, Vec<T>)]) -> Vec<T> {
    let mut out: Vec<Option<T>> = vec![None; num_frames];
    for (span, rows) in windows {
        for (i, row) in rows.iter().take(span.real_len).enumerate() {
            let slot = &mut out[span.start + i];
            if slot.is_none() {
                *slot = Some(row.clone());
            }
        }
    }
    out.into_iter()
        .enumerate()
        .map(|(i, r)| r.unwrap_or_else(|| panic!("frame {i} not covered by any window")))
        .collect()
}
