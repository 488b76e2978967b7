use ndarray::Array3;

use super::scene::SceneSpec;
use super::simulate::Trajectory;
use crate::kinematics::FlowField;

/// Whether the center of pixel `(x, y)` lies inside the disk.
pub fn in_disk(center: [f64; 2], radius: f64, x: usize, y: usize) -> bool {
    let dx = x as f64 + 0.5 - center[0];
    let dy = y as f64 + 0.5 - center[1];
    dx * dx + dy * dy <= radius * radius
}

fn paint(spec: &SceneSpec, footprint: &[[f64; 2]], disp: impl Fn(usize) -> [f64; 2]) -> Array3<f64> {
    let (h, w) = (spec.height, spec.width);
    let r = spec.radius_px;
    let mut flow = Array3::<f64>::zeros((h, w, 2));
    for (b, c) in footprint.iter().enumerate() {
        let d = disp(b);
        let y0 = (c[1] - r - 1.0).floor().max(0.0) as usize;
        let x0 = (c[0] - r - 1.0).floor().max(0.0) as usize;
        let y1 = ((c[1] + r + 1.0).ceil().max(0.0) as usize).min(h);
        let x1 = ((c[0] + r + 1.0).ceil().max(0.0) as usize).min(w);
        for y in y0..y1 {
            for x in x0..x1 {
                if in_disk(*c, r, x, y) {
                    flow[[y, x, 0]] = d[0];
                    flow[[y, x, 1]] = d[1];
                }
            }
        }
    }
    flow
}

/// Exact forward flow for each pair `t -> t+1`: the ball displacement on the
/// ball's footprint at frame `t`, zero on the background. Later balls paint
/// over earlier ones where footprints overlap.
pub fn analytic_flow(traj: &Trajectory, spec: &SceneSpec) -> Vec<FlowField> {
    (0..traj.num_frames() - 1)
        .map(|t| {
            let p0 = &traj.positions[t];
            let p1 = &traj.positions[t + 1];
            let flow = paint(spec, p0, |b| [p1[b][0] - p0[b][0], p1[b][1] - p0[b][1]]);
            FlowField::forward(flow, t).expect("analytic flow is finite")
        })
        .collect()
}

/// Exact backward flow for each pair `t+1 -> t`, on the footprint at frame `t+1`.
pub fn analytic_backward_flow(traj: &Trajectory, spec: &SceneSpec) -> Vec<FlowField> {
    (0..traj.num_frames() - 1)
        .map(|t| {
            let p0 = &traj.positions[t];
            let p1 = &traj.positions[t + 1];
            let flow = paint(spec, p1, |b| [p0[b][0] - p1[b][0], p0[b][1] - p1[b][1]]);
            FlowField::backward(flow, t).expect("analytic flow is finite")
        })
        .collect()
}

/// Pixels covered by `ball` at both frames `ta` and `tb` and by no other ball
/// at either frame. On these pixels a per-pixel flow difference reads the
/// ball's own velocity change.
pub fn exclusive_overlap(traj: &Trajectory, spec: &SceneSpec, ball: usize, ta: usize, tb: usize) -> Vec<(usize, usize)> {
    let r = spec.radius_px;
    let ca = traj.positions[ta][ball];
    let cb = traj.positions[tb][ball];
    let mut out = Vec::new();
    for y in 0..spec.height {
        for x in 0..spec.width {
            if !(in_disk(ca, r, x, y) && in_disk(cb, r, x, y)) {
                continue;
            }
            let clash = (0..traj.num_balls()).any(|o| {
                o != ball && (in_disk(traj.positions[ta][o], r, x, y) || in_disk(traj.positions[tb][o], r, x, y))
            });
            if !clash {
                out.push((y, x));
            }
        }
    }
    out
}
