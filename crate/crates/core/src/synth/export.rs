use std::path::{Path, PathBuf};

use super::flow::{analytic_backward_flow, analytic_flow};
use super::scene::SceneSpec;
use super::SynthVideo;
use crate::annotation::{save_annotations, AnnotationTrack};
use crate::error::{Error, Result};
use crate::kinematics::io::{backward_file_name, forward_file_name, write_flow_file};
use crate::video::write_frame_dir;

pub const ANNOTATION_FILE: &str = "annotations.json";
pub const SCENES_FILE: &str = "scenes.json";
pub const VIDEOS_DIR: &str = "videos";
pub const FLOWS_DIR: &str = "flows";

pub fn video_id(index: usize) -> String {
    format!("synth_{index:04}")
}

/// Paths of one exported dataset rooted at `root`.
#[derive(Debug, Clone)]
pub struct DatasetLayout {
    pub root: PathBuf,
}

impl DatasetLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn annotations(&self) -> PathBuf {
        self.root.join(ANNOTATION_FILE)
    }

    pub fn scenes(&self) -> PathBuf {
        self.root.join(SCENES_FILE)
    }

    pub fn frames_dir(&self, id: &str) -> PathBuf {
        self.root.join(VIDEOS_DIR).join(id)
    }

    pub fn flow_dir(&self, id: &str) -> PathBuf {
        self.root.join(FLOWS_DIR).join(id)
    }
}

#[derive(Debug, Clone)]
pub struct ExportSummary {
    pub tracks: Vec<AnnotationTrack>,
}

/// Simulates and renders every scene, then writes the annotation file, one
/// frame directory per video and, when `write_flows` is set, the analytic
/// forward/backward flow files. Collision frames become the keyframes.
pub fn export_dataset(specs: &[SceneSpec], out_dir: &Path, write_flows: bool) -> Result<ExportSummary> {
    let layout = DatasetLayout::new(out_dir);
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut tracks = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        let id = video_id(i);
        let sv = SynthVideo::generate(spec, &id)?;
        write_frame_dir(&sv.video, &layout.frames_dir(&id))?;
        if write_flows {
            let dir = layout.flow_dir(&id);
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            for f in analytic_flow(&sv.trajectory, spec) {
                write_flow_file(&dir.join(forward_file_name(f.src_frame)), &f.flow)?;
            }
            for f in analytic_backward_flow(&sv.trajectory, spec) {
                write_flow_file(&dir.join(backward_file_name(f.dst_frame)), &f.flow)?;
            }
        }
        tracks.push(sv.track);
    }
    save_annotations(&tracks, &layout.annotations())?;
    let scenes = serde_json::to_string_pretty(specs).expect("scene specs serialize") + "\n";
    std::fs::write(layout.scenes(), scenes).map_err(|e| Error::io(layout.scenes(), e))?;
    Ok(ExportSummary { tracks })
}

pub fn load_scenes(path: &Path) -> Result<Vec<SceneSpec>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        record: path.display().to_string(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::load_annotations;
    use crate::synth::scene::{random_scene, Preset, SceneShape};
    use crate::synth::simulate::simulate;

    fn small_specs(n: usize) -> Vec<SceneSpec> {
        let shape = SceneShape {
            num_frames: 20,
            height: 24,
            width: 24,
        };
        (0..n).map(|i| random_scene(Preset::Bounce, shape, i as u64)).collect()
    }

    fn read_tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
        let mut out = Vec::new();
        let mut stack = vec![root.to_path_buf()];
        while let Some(dir) = stack.pop() {
            for entry in std::fs::read_dir(&dir).unwrap() {
                let p = entry.unwrap().path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    out.push((p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
                }
            }
        }
        out.sort();
        out
    }

    #[test]
    fn three_scenes_give_three_entries() {
        let dir = tempfile::tempdir().unwrap();
        let specs = small_specs(3);
        export_dataset(&specs, dir.path(), true).unwrap();
        let tracks = load_annotations(&dir.path().join(ANNOTATION_FILE)).unwrap();
        assert_eq!(tracks.len(), 3);
        for (tr, spec) in tracks.iter().zip(&specs) {
            assert_eq!(tr.num_frames(), spec.num_frames);
            let traj = simulate(spec).unwrap();
            assert_eq!(tr.keyframes(), traj.collision_frames);
        }
        let layout = DatasetLayout::new(dir.path());
        assert!(layout.frames_dir("synth_0002").join("frame_000019.png").exists());
        assert!(layout.flow_dir("synth_0000").join("flow_fwd_000018.bin").exists());
        assert!(layout.flow_dir("synth_0000").join("flow_bwd_000000.bin").exists());
        assert_eq!(load_scenes(&layout.scenes()).unwrap(), specs);
    }

    #[test]
    fn re_export_is_byte_identical() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let specs = small_specs(2);
        export_dataset(&specs, a.path(), true).unwrap();
        export_dataset(&specs, b.path(), true).unwrap();
        assert_eq!(read_tree(a.path()), read_tree(b.path()));
    }

    #[test]
    fn unwritable_target_reports_path() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, b"x").unwrap();
        let err = export_dataset(&small_specs(1), &blocker.join("sub"), false).unwrap_err();
        assert!(err.to_string().contains("file"));
    }
}
