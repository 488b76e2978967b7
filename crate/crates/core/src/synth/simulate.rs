use serde::{Deserialize, Serialize};

use super::scene::SceneSpec;
use crate::error::Result;

/// Approach speeds below this are treated as resting contact, not a collision.
const MIN_APPROACH: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CollisionKind {
    Wall,
    Ball,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionEvent {
    pub frame: usize,
    pub kind: CollisionKind,
    /// One ball for wall hits, two for ball-ball exchanges.
    pub balls: Vec<usize>,
    pub location: [f64; 2],
    /// Speed along the contact normal just before the response.
    pub incoming_normal_speed: f64,
}

/// Per-frame ball states. `velocities[t]` is the displacement applied after
/// frame `t` is shown, so `positions[t+1] = positions[t] + velocities[t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub positions: Vec<Vec<[f64; 2]>>,
    pub velocities: Vec<Vec<[f64; 2]>>,
    pub collision_frames: Vec<usize>,
    pub collision_locations: Vec<[f64; 2]>,
    pub events: Vec<CollisionEvent>,
}

impl Trajectory {
    pub fn num_frames(&self) -> usize {
        self.positions.len()
    }

    pub fn num_balls(&self) -> usize {
        self.positions.first().map_or(0, Vec::len)
    }

    pub fn kinetic_energy(&self, t: usize) -> f64 {
        self.velocities[t].iter().map(|v| v[0] * v[0] + v[1] * v[1]).sum()
    }
}

/// Steps the scene one frame at a time. At frame `t` each ball's candidate
/// velocity is the previous velocity plus gravity; a ball touching or past a
/// wall while moving into it has its normal component reflected and scaled by
/// the restitution; touching balls that approach each other exchange their
/// normal components. Every response is recorded at frame `t`.
pub fn simulate(spec: &SceneSpec) -> Result<Trajectory> {
    spec.validate()?;
    let n = spec.num_balls;
    let r = spec.radius_px;
    let (w, h) = (spec.width as f64, spec.height as f64);
    let mut positions: Vec<Vec<[f64; 2]>> = Vec::with_capacity(spec.num_frames);
    let mut velocities: Vec<Vec<[f64; 2]>> = Vec::with_capacity(spec.num_frames);
    let mut events = Vec::new();
    positions.push(spec.init_positions.clone());

    for t in 0..spec.num_frames {
        let pos = positions[t].clone();
        let mut vel: Vec<[f64; 2]> = if t == 0 {
            spec.init_velocities.clone()
        } else {
            velocities[t - 1].iter().map(|v| [v[0], v[1] + spec.gravity]).collect()
        };

        for b in 0..n {
            let p = pos[b];
            let v = &mut vel[b];
            let mut hit: Option<([f64; 2], f64)> = None;
            let mut record = |loc: [f64; 2], speed: f64| {
                if hit.map_or(true, |(_, s)| speed > s) {
                    hit = Some((loc, speed));
                }
            };
            if p[0] - r <= 0.0 && v[0] < -MIN_APPROACH {
                record([0.0, p[1]], -v[0]);
                v[0] = -spec.restitution * v[0];
            } else if p[0] + r >= w && v[0] > MIN_APPROACH {
                record([w, p[1]], v[0]);
                v[0] = -spec.restitution * v[0];
            }
            if p[1] - r <= 0.0 && v[1] < -MIN_APPROACH {
                record([p[0], 0.0], -v[1]);
                v[1] = -spec.restitution * v[1];
            } else if p[1] + r >= h && v[1] > MIN_APPROACH {
                record([p[0], h], v[1]);
                v[1] = -spec.restitution * v[1];
            }
            if let Some((location, speed)) = hit {
                events.push(CollisionEvent {
                    frame: t,
                    kind: CollisionKind::Wall,
                    balls: vec![b],
                    location,
                    incoming_normal_speed: speed,
                });
            }
        }

        for i in 0..n {
            for j in i + 1..n {
                let d = [pos[j][0] - pos[i][0], pos[j][1] - pos[i][1]];
                let dist = d[0].hypot(d[1]);
                if dist > 2.0 * r || dist == 0.0 {
                    continue;
                }
                let nrm = [d[0] / dist, d[1] / dist];
                let vi_n = vel[i][0] * nrm[0] + vel[i][1] * nrm[1];
                let vj_n = vel[j][0] * nrm[0] + vel[j][1] * nrm[1];
                let closing = vi_n - vj_n;
                if closing <= MIN_APPROACH {
                    continue;
                }
                let dv = vj_n - vi_n;
                vel[i] = [vel[i][0] + dv * nrm[0], vel[i][1] + dv * nrm[1]];
                vel[j] = [vel[j][0] - dv * nrm[0], vel[j][1] - dv * nrm[1]];
                events.push(CollisionEvent {
                    frame: t,
                    kind: CollisionKind::Ball,
                    balls: vec![i, j],
                    location: [(pos[i][0] + pos[j][0]) / 2.0, (pos[i][1] + pos[j][1]) / 2.0],
                    incoming_normal_speed: closing,
                });
            }
        }

        if t + 1 < spec.num_frames {
            positions.push(pos.iter().zip(&vel).map(|(p, v)| [p[0] + v[0], p[1] + v[1]]).collect());
        }
        velocities.push(vel);
    }

    let mut collision_frames = Vec::new();
    let mut collision_locations = Vec::new();
    for e in &events {
        if collision_frames.last() != Some(&e.frame) {
            collision_frames.push(e.frame);
            collision_locations.push(e.location);
        }
    }
    Ok(Trajectory {
        positions,
        velocities,
        collision_frames,
        collision_locations,
        events,
    })
}
