use ndarray::{Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::scene::SceneSpec;
use super::simulate::Trajectory;
use crate::error::{Error, Result};
use crate::video::VideoSequence;

pub const DEFAULT_FPS: f64 = 30.0;

/// Sub-samples per axis used for disk coverage near the rim.
const SUPERSAMPLE: usize = 4;

fn value_noise(rng: &mut ChaCha8Rng, h: usize, w: usize, cell: usize) -> Vec<f32> {
    let gh = h / cell + 2;
    let gw = w / cell + 2;
    let grid: Vec<f32> = (0..gh * gw).map(|_| rng.random::<f32>()).collect();
    let smooth = |t: f32| t * t * (3.0 - 2.0 * t);
    let mut out = vec![0.0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            let gy = y as f32 / cell as f32;
            let gx = x as f32 / cell as f32;
            let (y0, x0) = (gy.floor() as usize, gx.floor() as usize);
            let (fy, fx) = (smooth(gy - y0 as f32), smooth(gx - x0 as f32));
            let at = |yy: usize, xx: usize| grid[yy * gw + xx];
            let top = at(y0, x0) * (1.0 - fx) + at(y0, x0 + 1) * fx;
            let bot = at(y0 + 1, x0) * (1.0 - fx) + at(y0 + 1, x0 + 1) * fx;
            out[y * w + x] = top * (1.0 - fy) + bot * fy;
        }
    }
    out
}

/// Static textured background, `[H, W, 3]` in [0.15, 0.85].
pub fn background(spec: &SceneSpec) -> Array3<f32> {
    let (h, w) = (spec.height, spec.width);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed ^ 0xB6_0000_0000);
    let coarse = value_noise(&mut rng, h, w, 8);
    let fine = value_noise(&mut rng, h, w, 3);
    let tint: [f32; 3] = [rng.random_range(0.7..1.0), rng.random_range(0.7..1.0), rng.random_range(0.7..1.0)];
    Array3::from_shape_fn((h, w, 3), |(y, x, c)| {
        let v = 0.6 * coarse[y * w + x] + 0.4 * fine[y * w + x];
        (0.15 + 0.7 * v * tint[c]).clamp(0.0, 1.0)
    })
}

pub fn ball_colors(spec: &SceneSpec) -> Vec<[f32; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed ^ 0xC0_1000_0000);
    (0..spec.num_balls)
        .map(|_| {
            let mut c = [0.0f32; 3];
            let strong = rng.random_range(0..3);
            for (i, v) in c.iter_mut().enumerate() {
                *v = if i == strong { rng.random_range(0.85..1.0) } else { rng.random_range(0.0..0.35) };
            }
            c
        })
        .collect()
}

/// Fraction of pixel `(x, y)` covered by a disk at `center`.
pub fn coverage(center: [f64; 2], radius: f64, x: usize, y: usize) -> f64 {
    let cx = x as f64 + 0.5 - center[0];
    let cy = y as f64 + 0.5 - center[1];
    let d = cx.hypot(cy);
    if d <= radius - 0.75 {
        return 1.0;
    }
    if d >= radius + 0.75 {
        return 0.0;
    }
    let mut inside = 0usize;
    for sy in 0..SUPERSAMPLE {
        for sx in 0..SUPERSAMPLE {
            let px = x as f64 + (sx as f64 + 0.5) / SUPERSAMPLE as f64 - center[0];
            let py = y as f64 + (sy as f64 + 0.5) / SUPERSAMPLE as f64 - center[1];
            if px * px + py * py <= radius * radius {
                inside += 1;
            }
        }
    }
    inside as f64 / (SUPERSAMPLE * SUPERSAMPLE) as f64
}

/// Sphere-like shading factor for a point at offset `(dx, dy)` from the center.
fn shade(dx: f64, dy: f64, radius: f64) -> f32 {
    let (nx, ny) = (dx / radius, dy / radius);
    let nz = (1.0 - nx * nx - ny * ny).max(0.0).sqrt();
    // Light from the upper left.
    let l = [-0.45, -0.55, 0.70];
    let lambert = (nx * l[0] + ny * l[1] + nz * l[2]).max(0.0);
    (0.35 + 0.65 * lambert) as f32
}

pub fn render_frame(spec: &SceneSpec, bg: &Array3<f32>, colors: &[[f32; 3]], balls: &[[f64; 2]]) -> Array3<f32> {
    let mut frame = bg.clone();
    let r = spec.radius_px;
    for (b, p) in balls.iter().enumerate() {
        let x0 = ((p[0] - r - 1.0).floor().max(0.0)) as usize;
        let y0 = ((p[1] - r - 1.0).floor().max(0.0)) as usize;
        let x1 = ((p[0] + r + 1.0).ceil().max(0.0) as usize).min(spec.width);
        let y1 = ((p[1] + r + 1.0).ceil().max(0.0) as usize).min(spec.height);
        for y in y0..y1 {
            for x in x0..x1 {
                let a = coverage(*p, r, x, y) as f32;
                if a == 0.0 {
                    continue;
                }
                let s = shade(x as f64 + 0.5 - p[0], y as f64 + 0.5 - p[1], r);
                for c in 0..3 {
                    let fg = (colors[b][c] * s).clamp(0.0, 1.0);
                    frame[[y, x, c]] = (1.0 - a) * frame[[y, x, c]] + a * fg;
                }
            }
        }
    }
    frame
}

/// Draws shaded, anti-aliased disks over the scene's static background.
pub fn render(traj: &Trajectory, spec: &SceneSpec, id: &str) -> Result<VideoSequence> {
    if !(spec.radius_px > 0.0) || spec.num_balls == 0 {
        return Err(Error::validation("render: scene needs at least one ball of positive radius"));
    }
    let bg = background(spec);
    let colors = ball_colors(spec);
    let t = traj.num_frames();
    let mut frames = Array4::<f32>::zeros((t, spec.height, spec.width, 3));
    for i in 0..t {
        let f = render_frame(spec, &bg, &colors, &traj.positions[i]);
        frames.slice_mut(ndarray::s![i, .., .., ..]).assign(&f);
    }
    VideoSequence::new(id, frames, DEFAULT_FPS)
}
