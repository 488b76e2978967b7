//! Coarse-to-fine gradient-based flow estimation.
//!
//! At each pyramid level the second image is warped by the current flow, the
//! brightness-constancy residual is linearized, and the quadratic energy
//!
//! ```text
//! E(u, v) = sum_p (Ix du + Iy dv + It)^2 + smoothness * sum_edges |grad u|^2 + |grad v|^2
//! ```
//!
//! is minimized by over-relaxed Gauss-Seidel sweeps. Each per-pixel update
//! moves toward the exact block minimizer with a factor in (0, 2), so the
//! energy of a level never increases across sweeps.

use ndarray::{Array2, Array3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassicalParams {
    pub levels: usize,
    pub iterations: usize,
    pub smoothness: f64,
    /// Over-relaxation factor, strictly inside (0, 2).
    pub relaxation: f64,
    /// Multiplier applied to [0, 1] intensities before differentiation.
    pub intensity_scale: f64,
}

impl Default for ClassicalParams {
    fn default() -> Self {
        Self {
            levels: 3,
            iterations: 30,
            smoothness: 0.1,
            relaxation: 1.8,
            intensity_scale: 255.0,
        }
    }
}

/// Energies recorded after each sweep, one trace per pyramid level (coarsest first).
#[derive(Debug, Clone, Default)]
pub struct EnergyTrace {
    pub levels: Vec<Vec<f64>>,
}

impl EnergyTrace {
    pub fn is_non_increasing(&self, rel_tol: f64) -> bool {
        self.levels.iter().all(|trace| {
            trace
                .windows(2)
                .all(|w| w[1] <= w[0] + rel_tol * w[0].abs().max(1e-12))
        })
    }
}

fn downsample(img: &Array2<f64>) -> Array2<f64> {
    let (h, w) = img.dim();
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    Array2::from_shape_fn((oh, ow), |(y, x)| {
        let mut sum = 0.0;
        let mut n = 0.0;
        for yy in 2 * y..(2 * y + 2).min(h) {
            for xx in 2 * x..(2 * x + 2).min(w) {
                sum += img[[yy, xx]];
                n += 1.0;
            }
        }
        sum / n
    })
}

fn sample_bilinear(img: &Array2<f64>, y: f64, x: f64) -> f64 {
    let (h, w) = img.dim();
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let y0 = y.floor() as usize;
    let x0 = x.floor() as usize;
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let fy = y - y0 as f64;
    let fx = x - x0 as f64;
    let top = img[[y0, x0]] * (1.0 - fx) + img[[y0, x1]] * fx;
    let bot = img[[y1, x0]] * (1.0 - fx) + img[[y1, x1]] * fx;
    top * (1.0 - fy) + bot * fy
}

/// Bilinear upsampling of a flow field to `(h, w)` with vectors rescaled.
fn upsample_flow(flow: &Array3<f64>, h: usize, w: usize) -> Array3<f64> {
    let (fh, fw, _) = flow.dim();
    let sy = fh as f64 / h as f64;
    let sx = fw as f64 / w as f64;
    let mut u = Array2::<f64>::zeros((fh, fw));
    let mut v = Array2::<f64>::zeros((fh, fw));
    for y in 0..fh {
        for x in 0..fw {
            u[[y, x]] = flow[[y, x, 0]];
            v[[y, x]] = flow[[y, x, 1]];
        }
    }
    Array3::from_shape_fn((h, w, 2), |(y, x, c)| {
        let cy = (y as f64 + 0.5) * sy - 0.5;
        let cx = (x as f64 + 0.5) * sx - 0.5;
        if c == 0 {
            sample_bilinear(&u, cy, cx) / sx
        } else {
            sample_bilinear(&v, cy, cx) / sy
        }
    })
}

fn gradient(img: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let (h, w) = img.dim();
    let gx = Array2::from_shape_fn((h, w), |(y, x)| {
        let l = img[[y, x.saturating_sub(1)]];
        let r = img[[y, (x + 1).min(w - 1)]];
        let span = ((x + 1).min(w - 1) - x.saturating_sub(1)).max(1) as f64;
        (r - l) / span
    });
    let gy = Array2::from_shape_fn((h, w), |(y, x)| {
        let t = img[[y.saturating_sub(1), x]];
        let b = img[[(y + 1).min(h - 1), x]];
        let span = ((y + 1).min(h - 1) - y.saturating_sub(1)).max(1) as f64;
        (b - t) / span
    });
    (gx, gy)
}

struct Linearized {
    ix: Array2<f64>,
    iy: Array2<f64>,
    /// Residual constant at zero flow: `It - Ix u0 - Iy v0`.
    c: Array2<f64>,
}

fn linearize(i1: &Array2<f64>, i2: &Array2<f64>, u: &Array2<f64>, v: &Array2<f64>) -> Linearized {
    let (h, w) = i1.dim();
    let warped = Array2::from_shape_fn((h, w), |(y, x)| {
        sample_bilinear(i2, y as f64 + v[[y, x]], x as f64 + u[[y, x]])
    });
    let (gx1, gy1) = gradient(i1);
    let (gx2, gy2) = gradient(&warped);
    let ix = (&gx1 + &gx2) * 0.5;
    let iy = (&gy1 + &gy2) * 0.5;
    let c = Array2::from_shape_fn((h, w), |(y, x)| {
        warped[[y, x]] - i1[[y, x]] - ix[[y, x]] * u[[y, x]] - iy[[y, x]] * v[[y, x]]
    });
    Linearized { ix, iy, c }
}

fn energy(lin: &Linearized, u: &Array2<f64>, v: &Array2<f64>, alpha: f64) -> f64 {
    let (h, w) = u.dim();
    let mut e = 0.0;
    for y in 0..h {
        for x in 0..w {
            let r = lin.ix[[y, x]] * u[[y, x]] + lin.iy[[y, x]] * v[[y, x]] + lin.c[[y, x]];
            e += r * r;
            if x + 1 < w {
                let du = u[[y, x + 1]] - u[[y, x]];
                let dv = v[[y, x + 1]] - v[[y, x]];
                e += alpha * (du * du + dv * dv);
            }
            if y + 1 < h {
                let du = u[[y + 1, x]] - u[[y, x]];
                let dv = v[[y + 1, x]] - v[[y, x]];
                e += alpha * (du * du + dv * dv);
            }
        }
    }
    e
}

fn sweep(lin: &Linearized, u: &mut Array2<f64>, v: &mut Array2<f64>, alpha: f64, omega: f64) {
    let (h, w) = u.dim();
    for y in 0..h {
        for x in 0..w {
            let mut su = 0.0;
            let mut sv = 0.0;
            let mut n = 0.0;
            let mut visit = |yy: usize, xx: usize| {
                su += u[[yy, xx]];
                sv += v[[yy, xx]];
                n += 1.0;
            };
            if x > 0 {
                visit(y, x - 1);
            }
            if x + 1 < w {
                visit(y, x + 1);
            }
            if y > 0 {
                visit(y - 1, x);
            }
            if y + 1 < h {
                visit(y + 1, x);
            }
            if n == 0.0 {
                continue;
            }
            let (ub, vb) = (su / n, sv / n);
            let (gx, gy, c) = (lin.ix[[y, x]], lin.iy[[y, x]], lin.c[[y, x]]);
            let lambda = alpha * n;
            let k = (gx * ub + gy * vb + c) / (lambda + gx * gx + gy * gy);
            let u_star = ub - gx * k;
            let v_star = vb - gy * k;
            let uo = u[[y, x]];
            let vo = v[[y, x]];
            u[[y, x]] = uo + omega * (u_star - uo);
            v[[y, x]] = vo + omega * (v_star - vo);
        }
    }
}

/// Estimates the flow carrying `i1` onto `i2` (both grayscale in [0, 1]).
/// Returns `[H, W, 2]` displacements and the per-level energy trace.
pub fn estimate_pair(i1: &Array2<f64>, i2: &Array2<f64>, params: &ClassicalParams) -> (Array3<f64>, EnergyTrace) {
    assert_eq!(i1.dim(), i2.dim(), "frames must share a shape");
    assert!(
        params.relaxation > 0.0 && params.relaxation < 2.0,
        "relaxation must lie in (0, 2)"
    );
    let s = params.intensity_scale;
    let mut pyr1 = vec![i1 * s];
    let mut pyr2 = vec![i2 * s];
    for _ in 1..params.levels.max(1) {
        let (h, w) = pyr1.last().unwrap().dim();
        if h < 8 || w < 8 {
            break;
        }
        pyr1.push(downsample(pyr1.last().unwrap()));
        pyr2.push(downsample(pyr2.last().unwrap()));
    }
    let mut trace = EnergyTrace::default();
    let (ch, cw) = pyr1.last().unwrap().dim();
    let mut flow = Array3::<f64>::zeros((ch, cw, 2));
    for level in (0..pyr1.len()).rev() {
        let (h, w) = pyr1[level].dim();
        if flow.dim().0 != h || flow.dim().1 != w {
            flow = upsample_flow(&flow, h, w);
        }
        let mut u = Array2::from_shape_fn((h, w), |(y, x)| flow[[y, x, 0]]);
        let mut v = Array2::from_shape_fn((h, w), |(y, x)| flow[[y, x, 1]]);
        let lin = linearize(&pyr1[level], &pyr2[level], &u, &v);
        let mut energies = vec![energy(&lin, &u, &v, params.smoothness)];
        for _ in 0..params.iterations {
            sweep(&lin, &mut u, &mut v, params.smoothness, params.relaxation);
            energies.push(energy(&lin, &u, &v, params.smoothness));
        }
        trace.levels.push(energies);
        flow = Array3::from_shape_fn((h, w, 2), |(y, x, c)| if c == 0 { u[[y, x]] } else { v[[y, x]] });
    }
    (flow, trace)
}
