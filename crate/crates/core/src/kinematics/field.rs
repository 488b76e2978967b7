use ndarray::{Array3, Zip};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Forward,
    Backward,
}

/// A dense displacement field `[H, W, 2]` (dx, dy in pixels) between two adjacent frames.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub flow: Array3<f64>,
    pub direction: Direction,
    pub src_frame: usize,
    pub dst_frame: usize,
}

impl FlowField {
    pub fn new(flow: Array3<f64>, direction: Direction, src_frame: usize, dst_frame: usize) -> Result<Self> {
        if flow.dim().2 != 2 {
            return Err(Error::contract("flow field must have 2 channels"));
        }
        let ok = match direction {
            Direction::Forward => dst_frame == src_frame + 1,
            Direction::Backward => src_frame == dst_frame + 1,
        };
        if !ok {
            return Err(Error::contract(format!(
                "{direction:?} flow cannot map frame {src_frame} to {dst_frame}"
            )));
        }
        if flow.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("flow field has non-finite entries"));
        }
        Ok(Self {
            flow,
            direction,
            src_frame,
            dst_frame,
        })
    }

    /// Forward field for the pair `t -> t+1`.
    pub fn forward(flow: Array3<f64>, t: usize) -> Result<Self> {
        Self::new(flow, Direction::Forward, t, t + 1)
    }

    /// Backward field for the pair `t+1 -> t`.
    pub fn backward(flow: Array3<f64>, t: usize) -> Result<Self> {
        Self::new(flow, Direction::Backward, t + 1, t)
    }

    pub fn zeros(h: usize, w: usize, direction: Direction, src_frame: usize) -> Self {
        let dst_frame = match direction {
            Direction::Forward => src_frame + 1,
            Direction::Backward => src_frame - 1,
        };
        Self {
            flow: Array3::zeros((h, w, 2)),
            direction,
            src_frame,
            dst_frame,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        let (h, w, _) = self.flow.dim();
        (h, w)
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            flow: &self.flow * alpha,
            ..self.clone()
        }
    }

    pub fn max_magnitude(&self) -> f64 {
        max_magnitude(&self.flow)
    }
}

/// Per-pixel change of flow between consecutive frame pairs, `[H, W, 2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct InflectionField {
    pub inflect: Array3<f64>,
    pub direction: Direction,
    pub anchor_frame: usize,
}

impl InflectionField {
    pub fn max_magnitude(&self) -> f64 {
        max_magnitude(&self.inflect)
    }

    pub fn magnitude_at(&self, y: usize, x: usize) -> f64 {
        self.inflect[[y, x, 0]].hypot(self.inflect[[y, x, 1]])
    }
}

pub(crate) fn max_magnitude(field: &Array3<f64>) -> f64 {
    let (h, w, _) = field.dim();
    let mut best = 0.0f64;
    for y in 0..h {
        for x in 0..w {
            best = best.max(field[[y, x, 0]].hypot(field[[y, x, 1]]));
        }
    }
    best
}

/// Second difference of position along one direction: `v_next - v_prev`,
/// anchored at `v_prev`'s source frame.
pub fn inflectional_flow(v_prev: &FlowField, v_next: &FlowField) -> Result<InflectionField> {
    if v_prev.direction != v_next.direction {
        return Err(Error::contract("inflection needs two flows of the same direction"));
    }
    if v_prev.flow.dim() != v_next.flow.dim() {
        return Err(Error::contract(format!(
            "flow shapes differ: {:?} vs {:?}",
            v_prev.flow.dim(),
            v_next.flow.dim()
        )));
    }
    if v_next.src_frame != v_prev.src_frame + 1 {
        return Err(Error::contract(format!(
            "flows are not consecutive: sources {} and {}",
            v_prev.src_frame, v_next.src_frame
        )));
    }
    let mut inflect = Array3::<f64>::zeros(v_prev.flow.dim());
    Zip::from(&mut inflect)
        .and(&v_next.flow)
        .and(&v_prev.flow)
        .for_each(|o, &n, &p| *o = n - p);
    Ok(InflectionField {
        inflect,
        direction: v_prev.direction,
        anchor_frame: v_prev.src_frame,
    })
}
