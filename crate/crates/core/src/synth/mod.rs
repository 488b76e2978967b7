//! Bouncing-ball scenes with analytically known collision frames and flow.

mod export;
mod flow;
mod render;
mod scene;
mod simulate;

pub use export::{export_dataset, load_scenes, video_id, DatasetLayout, ExportSummary, ANNOTATION_FILE};
pub use flow::{analytic_backward_flow, analytic_flow, exclusive_overlap, in_disk};
pub use render::{background, coverage, render, DEFAULT_FPS};
pub use scene::{random_scene, Preset, SceneShape, SceneSpec};
pub use simulate::{simulate, CollisionEvent, CollisionKind, Trajectory};

use crate::annotation::AnnotationTrack;
use crate::error::Result;
use crate::video::VideoSequence;

/// A simulated scene with its rendering and keyframe labels.
#[derive(Debug, Clone)]
pub struct SynthVideo {
    pub spec: SceneSpec,
    pub trajectory: Trajectory,
    pub video: VideoSequence,
    pub track: AnnotationTrack,
}

impl SynthVideo {
    pub fn generate(spec: &SceneSpec, id: &str) -> Result<Self> {
        let trajectory = simulate(spec)?;
        let video = render(&trajectory, spec, id)?;
        let track = AnnotationTrack::from_keyframes(id, spec.num_frames, DEFAULT_FPS, &trajectory.collision_frames)?;
        Ok(Self {
            spec: spec.clone(),
            trajectory,
            video,
            track,
        })
    }
}
