//! Motion flow, inflectional flow, and the bidirectional kinematic prior.
//!
//! Index conventions for a video of `T` frames:
//! - `forward[t]` carries frame `t` onto `t+1`;
//! - `backward[t]` carries frame `t+1` onto `t`.
//!
//! For an interior frame `i` (1 ..= T-2) the prior holds
//! `v_fwd = forward[i]`, `v_bwd = backward[i-1]` (frame `i` onto `i-1`),
//! `a_fwd = forward[i] - forward[i-1]` (anchored at `i-1`) and
//! `a_bwd = backward[i] - backward[i-1]` (anchored at `i`).

pub mod classical;
mod field;
pub mod io;

use std::path::PathBuf;

pub use classical::{estimate_pair, ClassicalParams, EnergyTrace};
pub use field::{inflectional_flow, Direction, FlowField, InflectionField};

use crate::error::{Error, Result};
use crate::synth::{analytic_backward_flow, analytic_flow, SceneSpec, Trajectory};
use crate::video::VideoSequence;

/// Where motion flow comes from.
#[derive(Debug, Clone)]
pub enum FlowBackend<'a> {
    /// Exact flow of a synthetic scene.
    Analytic { trajectory: &'a Trajectory, spec: &'a SceneSpec },
    /// Built-in coarse-to-fine estimator.
    Classical(ClassicalParams),
    /// Binary flow files (`flow_fwd_%06d.bin`, `flow_bwd_%06d.bin`) in a directory.
    File { dir: PathBuf },
}

/// Forward and backward flow lists, `T-1` fields each.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowPair {
    pub forward: Vec<FlowField>,
    pub backward: Vec<FlowField>,
}

impl FlowPair {
    pub fn num_frames(&self) -> usize {
        self.forward.len() + 1
    }
}

pub fn estimate_flow(video: &VideoSequence, backend: &FlowBackend<'_>) -> Result<FlowPair> {
    let t = video.num_frames();
    if t < 2 {
        return Err(Error::contract("flow needs at least two frames"));
    }
    let (h, w) = (video.height(), video.width());
    let pair = match backend {
        FlowBackend::Analytic { trajectory, spec } => {
            if trajectory.num_frames() != t || spec.height != h || spec.width != w {
                return Err(Error::contract("analytic flow source does not match the video"));
            }
            FlowPair {
                forward: analytic_flow(trajectory, spec),
                backward: analytic_backward_flow(trajectory, spec),
            }
        }
        FlowBackend::Classical(params) => {
            let gray: Vec<_> = (0..t).map(|i| video.gray(i).mapv(f64::from)).collect();
            let mut forward = Vec::with_capacity(t - 1);
            let mut backward = Vec::with_capacity(t - 1);
            for i in 0..t - 1 {
                let (f, trace) = estimate_pair(&gray[i], &gray[i + 1], params);
                debug_assert!(trace.is_non_increasing(1e-9), "classical energy rose on pair {i}");
                forward.push(FlowField::forward(f, i)?);
                let (b, trace) = estimate_pair(&gray[i + 1], &gray[i], params);
                debug_assert!(trace.is_non_increasing(1e-9), "classical energy rose on pair {i}");
                backward.push(FlowField::backward(b, i)?);
            }
            FlowPair { forward, backward }
        }
        FlowBackend::File { dir } => {
            let mut forward = Vec::with_capacity(t - 1);
            let mut backward = Vec::with_capacity(t - 1);
            for i in 0..t - 1 {
                for (name, is_fwd) in [(io::forward_file_name(i), true), (io::backward_file_name(i), false)] {
                    let path = dir.join(&name);
                    let flow = io::read_flow_file(&path)?;
                    if flow.dim() != (h, w, 2) {
                        return Err(Error::FlowFile {
                            path,
                            message: format!("shape {:?} does not match video {h}x{w}", flow.dim()),
                        });
                    }
                    if is_fwd {
                        forward.push(FlowField::forward(flow, i)?);
                    } else {
                        backward.push(FlowField::backward(flow, i)?);
                    }
                }
            }
            FlowPair { forward, backward }
        }
    };
    Ok(pair)
}

/// The four kinematic fields attached to one interior frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorFrame {
    pub frame: usize,
    pub v_fwd: FlowField,
    pub v_bwd: FlowField,
    pub a_fwd: InflectionField,
    pub a_bwd: InflectionField,
}

/// Kinematic prior for frames `1 ..= T-2`; the first and last frames are trimmed.
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicPrior {
    pub frames: Vec<PriorFrame>,
}

impl KinematicPrior {
    pub fn from_flows(flows: &FlowPair) -> Result<Self> {
        let t = flows.num_frames();
        if t < 3 || flows.backward.len() != flows.forward.len() {
            return Err(Error::contract(format!(
                "kinematic prior needs at least 3 frames and matching flow lists (got T={t})"
            )));
        }
        let frames = (1..t - 1)
            .map(|i| {
                Ok(PriorFrame {
                    frame: i,
                    v_fwd: flows.forward[i].clone(),
                    v_bwd: flows.backward[i - 1].clone(),
                    a_fwd: inflectional_flow(&flows.forward[i - 1], &flows.forward[i])?,
                    a_bwd: inflectional_flow(&flows.backward[i - 1], &flows.backward[i])?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { frames })
    }

    pub fn get(&self, frame: usize) -> Option<&PriorFrame> {
        frame.checked_sub(1).and_then(|i| self.frames.get(i))
    }
}

pub fn build_kinematic_prior(video: &VideoSequence, backend: &FlowBackend<'_>) -> Result<KinematicPrior> {
    if video.num_frames() < 3 {
        return Err(Error::contract("kinematic prior needs at least 3 frames"));
    }
    KinematicPrior::from_flows(&estimate_flow(video, backend)?)
}
