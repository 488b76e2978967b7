//! Videos resized for the network, with kinematic priors and targets.

use std::path::Path;

use audible_core::annotation::{gaussian_soft_labels, load_annotations, AnnotationTrack};
use audible_core::kinematics::{estimate_flow, ClassicalParams, FlowBackend, FlowField, FlowPair};
use audible_core::resize::resize_flow;
use audible_core::synth::{load_scenes, simulate, DatasetLayout, SynthVideo};
use audible_core::video::{read_frame_dir, VideoSequence};
use ndarray::Array3;

use crate::config::{FlowSource, TrainConfig};
use crate::error::{NnError, Result};
use crate::model::FrameBatch;
use crate::tensor::Tensor;

/// One video at network resolution, channel-first.
#[derive(Debug, Clone)]
pub struct PreparedVideo {
    pub id: String,
    pub size: usize,
    pub num_frames: usize,
    /// `[T, 3, S, S]`
    frames: Vec<f32>,
    /// `[T-1, 2, S, S]`, pair `t -> t+1`.
    fwd: Vec<f32>,
    /// `[T-1, 2, S, S]`, pair `t+1 -> t`.
    bwd: Vec<f32>,
    /// False for videos without annotations; labels are then all zero.
    pub labeled: bool,
    pub labels: Vec<u8>,
    pub targets: Vec<f64>,
}

fn flow_channels_first(field: &FlowField, size: usize) -> Vec<f32> {
    let src: Array3<f32> = field.flow.mapv(|v| v as f32);
    let r = resize_flow(src.view(), size, size);
    let mut out = vec![0.0; 2 * size * size];
    for y in 0..size {
        for x in 0..size {
            out[y * size + x] = r[[y, x, 0]];
            out[size * size + y * size + x] = r[[y, x, 1]];
        }
    }
    out
}

impl PreparedVideo {
    /// Resizes frames and flow to `size`. Without a track the video is
    /// unlabeled (all-zero labels and targets).
    pub fn new(
        video: &VideoSequence,
        flows: &FlowPair,
        track: Option<&AnnotationTrack>,
        size: usize,
        sigma: f64,
        radius: usize,
    ) -> Result<Self> {
        let t = video.num_frames();
        if flows.num_frames() != t || flows.backward.len() != t - 1 {
            return Err(NnError::Data(format!("video {}: flow count does not match {t} frames", video.id())));
        }
        let resized = video.resized(size);
        let plane = size * size;
        let mut frames = vec![0.0; t * 3 * plane];
        for i in 0..t {
            let f = resized.frame(i);
            for c in 0..3 {
                for y in 0..size {
                    for x in 0..size {
                        frames[(i * 3 + c) * plane + y * size + x] = f[[y, x, c]];
                    }
                }
            }
        }
        let fwd = flows.forward.iter().flat_map(|f| flow_channels_first(f, size)).collect();
        let bwd = flows.backward.iter().flat_map(|f| flow_channels_first(f, size)).collect();
        let (labels, targets) = match track {
            Some(tr) => {
                if tr.num_frames() != t {
                    return Err(NnError::Data(format!(
                        "video {}: {} labels for {t} frames",
                        video.id(),
                        tr.num_frames()
                    )));
                }
                (tr.labels().to_vec(), gaussian_soft_labels(tr, sigma, radius).targets)
            }
            None => (vec![0; t], vec![0.0; t]),
        };
        Ok(Self {
            id: video.id().to_string(),
            size,
            num_frames: t,
            frames,
            fwd,
            bwd,
            labeled: track.is_some(),
            labels,
            targets,
        })
    }

    pub fn keyframes(&self) -> Vec<usize> {
        (0..self.num_frames).filter(|&t| self.labels[t] == 1).collect()
    }

    fn plane(&self) -> usize {
        self.size * self.size
    }

    fn fwd_at(&self, t: usize) -> &[f32] {
        &self.fwd[t * 2 * self.plane()..][..2 * self.plane()]
    }

    fn bwd_at(&self, t: usize) -> &[f32] {
        &self.bwd[t * 2 * self.plane()..][..2 * self.plane()]
    }

    /// Appends frame `t` and its prior to `b`. End frames carry zero priors.
    fn push_frame(&self, t: usize, b: &mut BatchBuilder) {
        let p = self.plane();
        b.frames.extend_from_slice(&self.frames[t * 3 * p..][..3 * p]);
        if t >= 1 && t + 1 < self.num_frames {
            b.v_fwd.extend_from_slice(self.fwd_at(t));
            b.v_bwd.extend_from_slice(self.bwd_at(t - 1));
            b.a_fwd.extend(self.fwd_at(t).iter().zip(self.fwd_at(t - 1)).map(|(a, c)| a - c));
            b.a_bwd.extend(self.bwd_at(t).iter().zip(self.bwd_at(t - 1)).map(|(a, c)| a - c));
        } else {
            for buf in [&mut b.v_fwd, &mut b.v_bwd, &mut b.a_fwd, &mut b.a_bwd] {
                buf.extend(std::iter::repeat_n(0.0, 2 * p));
            }
        }
    }
}

/// A clip of `real_len` source frames starting at `start`, padded to the clip
/// length by repeating the last frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClipRef {
    pub video: usize,
    pub start: usize,
    pub real_len: usize,
}

#[derive(Default)]
struct BatchBuilder {
    frames: Vec<f32>,
    v_fwd: Vec<f32>,
    v_bwd: Vec<f32>,
    a_fwd: Vec<f32>,
    a_bwd: Vec<f32>,
}

/// Network inputs for `clips`, plus the batch rows that hold real frames and
/// their soft targets.
#[derive(Debug, Clone)]
pub struct Assembled {
    pub batch: FrameBatch,
    pub real_rows: Vec<usize>,
    pub targets: Vec<f64>,
    /// Real frames per clip, in batch order.
    pub clip_real: Vec<usize>,
}

pub fn assemble(videos: &[PreparedVideo], clips: &[ClipRef], clip_len: usize) -> Assembled {
    let size = videos[clips[0].video].size;
    let mut b = BatchBuilder::default();
    let mut real_rows = Vec::new();
    let mut targets = Vec::new();
    for (ci, c) in clips.iter().enumerate() {
        let v = &videos[c.video];
        assert!(c.real_len >= 1 && c.real_len <= clip_len && c.start + c.real_len <= v.num_frames);
        for i in 0..clip_len {
            let real = i < c.real_len;
            v.push_frame(c.start + i.min(c.real_len - 1), &mut b);
            if real {
                real_rows.push(ci * clip_len + i);
                targets.push(v.targets[c.start + i]);
            } else {
                // Padding carries the last frame's pixels and no motion.
                let p = 2 * size * size;
                for buf in [&mut b.v_fwd, &mut b.v_bwd, &mut b.a_fwd, &mut b.a_bwd] {
                    let n = buf.len();
                    buf[n - p..].iter_mut().for_each(|x| *x = 0.0);
                }
            }
        }
    }
    let n = clips.len() * clip_len;
    let shape3 = [n, 3, size, size];
    let shape2 = [n, 2, size, size];
    Assembled {
        batch: FrameBatch {
            frames: Tensor::from_vec(&shape3, b.frames),
            v_bwd: Tensor::from_vec(&shape2, b.v_bwd),
            v_fwd: Tensor::from_vec(&shape2, b.v_fwd),
            a_fwd: Tensor::from_vec(&shape2, b.a_fwd),
            a_bwd: Tensor::from_vec(&shape2, b.a_bwd),
            clip_len,
        },
        real_rows,
        targets,
        clip_real: clips.iter().map(|c| c.real_len).collect(),
    }
}

/// Flow for `sv`'s frames from the configured source.
pub fn synth_flows(sv: &SynthVideo, source: FlowSource, flow_dir: Option<&Path>) -> Result<FlowPair> {
    let backend = match source {
        FlowSource::Analytic => FlowBackend::Analytic {
            trajectory: &sv.trajectory,
            spec: &sv.spec,
        },
        FlowSource::Classical => FlowBackend::Classical(ClassicalParams::default()),
        FlowSource::File => FlowBackend::File {
            dir: flow_dir
                .ok_or_else(|| NnError::Data("file flow source needs a flow directory".into()))?
                .to_path_buf(),
        },
    };
    Ok(estimate_flow(&sv.video, &backend)?)
}

/// Prepares in-memory synthetic videos.
pub fn prepare_synthetic(videos: &[SynthVideo], config: &TrainConfig) -> Result<Vec<PreparedVideo>> {
    videos
        .iter()
        .map(|sv| {
            let flows = synth_flows(sv, config.flow_backend, None)?;
            PreparedVideo::new(
                &sv.video,
                &flows,
                Some(&sv.track),
                config.input_size,
                config.soft_label_sigma,
                config.soft_label_radius,
            )
        })
        .collect()
}

/// Flow for one video read from disk.
pub fn load_flows(
    video: &VideoSequence,
    source: FlowSource,
    flow_dir: &Path,
    scene: Option<&audible_core::synth::SceneSpec>,
) -> Result<FlowPair> {
    match source {
        FlowSource::Analytic => {
            let spec = scene.ok_or_else(|| {
                NnError::Data(format!(
                    "video {}: analytic flow needs the generating scene (scenes.json)",
                    video.id()
                ))
            })?;
            let trajectory = simulate(spec)?;
            Ok(estimate_flow(video, &FlowBackend::Analytic { trajectory: &trajectory, spec })?)
        }
        FlowSource::File => Ok(estimate_flow(
            video,
            &FlowBackend::File {
                dir: flow_dir.to_path_buf(),
            },
        )?),
        FlowSource::Classical => Ok(estimate_flow(video, &FlowBackend::Classical(ClassicalParams::default()))?),
    }
}

/// Loads a dataset directory written by `synth-gen` (or laid out the same way).
pub fn load_dataset(root: &Path, config: &TrainConfig) -> Result<Vec<PreparedVideo>> {
    let layout = DatasetLayout::new(root);
    let tracks = load_annotations(&layout.annotations())?;
    let scenes = if config.flow_backend == FlowSource::Analytic {
        Some(load_scenes(&layout.scenes())?)
    } else {
        None
    };
    if let Some(s) = &scenes {
        if s.len() != tracks.len() {
            return Err(NnError::Data(format!(
                "{}: {} scenes for {} annotated videos",
                root.display(),
                s.len(),
                tracks.len()
            )));
        }
    }
    tracks
        .iter()
        .enumerate()
        .map(|(i, tr)| {
            let video = read_frame_dir(&layout.frames_dir(&tr.video_id), &tr.video_id, tr.fps)?;
            let scene = scenes.as_ref().map(|s| &s[i]);
            let flows = load_flows(&video, config.flow_backend, &layout.flow_dir(&tr.video_id), scene)?;
            PreparedVideo::new(
                &video,
                &flows,
                Some(tr),
                config.input_size,
                config.soft_label_sigma,
                config.soft_label_radius,
            )
        })
        .collect()
}
